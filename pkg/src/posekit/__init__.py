"""Person-crop keypoint regression toolkit.

Pipeline pieces: box geometry and square-crop construction, IoU-driven crop
augmentation, a small convolutional regression network trained with a masked
weighted L2 loss, flip-averaged inference behind pluggable person detectors,
and PCK@alpha evaluation. Includes a procedural stick-figure generator so the
whole pipeline can be exercised end to end on a laptop.
"""

__version__ = "0.1.0"
