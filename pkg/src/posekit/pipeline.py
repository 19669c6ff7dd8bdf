"""Glue between data, network, and metrics for whole-dataset experiments.

Builds stacked training arrays from annotations, materializes reusable
evaluation sets (person crops from ground-truth boxes), and scores
checkpoints with flip-averaged predictions mapped back to frame space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import (
    expanded_gt_box,
    make_crops,
    normalize_pixels,
    stack_crops,
    targets_and_weights,
)
from .evaluation import PckReport, pck
from .geometry import CropSpec, crop_zero_pad, from_crop_coords, squarify
from .imageio import read_image
from .inference import predict_crops
from .network import Parameters
from .skeleton import JOINT_NAMES, Skeleton


def load_images(annotations, cache=None):
    """{path: array} for every image referenced by the annotations."""
    images = dict(cache) if cache else {}
    for ann in annotations:
        if ann.image not in images:
            images[ann.image] = read_image(ann.image)
    return images


def build_training_set(annotations, detections=None, side: int = 64, images=None):
    """Run crop augmentation over a dataset; returns stacked training arrays.

    detections maps image path to DetectionBox lists (missing entries mean
    no detections for that frame). Output order follows the annotation
    order, detector-box crops before ground-truth crops, each immediately
    followed by its mirror.
    """
    detections = detections or {}
    images = load_images(annotations, images)
    crops = []
    for ann in annotations:
        crops.extend(make_crops(ann, detections.get(ann.image, []), side,
                                image=images[ann.image]))
    return stack_crops(crops)


@dataclass
class EvalSet:
    """Person crops from ground-truth boxes, frozen for repeated scoring."""

    pixels: np.ndarray      # (N, side, side, 3) float32 in [-1, 1]
    specs: list             # CropSpec per sample
    gt_skeletons: list      # frame-space ground truth per sample
    gt_vectors: np.ndarray  # (N, 26) normalized targets
    gt_weights: np.ndarray  # (N, 26) masks

    def __len__(self):
        return len(self.specs)


def build_eval_set(annotations, side: int = 64, images=None) -> EvalSet:
    """One unflipped ground-truth-box crop per annotation."""
    images = load_images(annotations, images)
    pixels, specs, skeletons, vectors, masks = [], [], [], [], []
    for ann in annotations:
        square = squarify(expanded_gt_box(ann))
        spec = CropSpec(square, side)
        pixels.append(normalize_pixels(crop_zero_pad(images[ann.image], square, side)))
        specs.append(spec)
        skeletons.append(ann.skeleton)
        vec, w = targets_and_weights(ann.skeleton, spec)
        vectors.append(vec)
        masks.append(w)
    return EvalSet(
        pixels=np.stack(pixels).astype(np.float32),
        specs=specs,
        gt_skeletons=skeletons,
        gt_vectors=np.stack(vectors),
        gt_weights=np.stack(masks),
    )


def predict_eval_set(params: Parameters, eval_set: EvalSet, batch_size: int = 64):
    """Flip-averaged normalized predictions for every crop, (N, 26)."""
    outputs = []
    for start in range(0, len(eval_set), batch_size):
        outputs.append(predict_crops(params, eval_set.pixels[start:start + batch_size]))
    return np.concatenate(outputs) if outputs else np.zeros((0, eval_set.gt_vectors.shape[1]))


def predicted_skeletons(vectors, specs):
    """Map normalized prediction vectors back to frame-space skeletons."""
    skeletons = []
    for vec, spec in zip(vectors, specs):
        joints = {}
        for i, name in enumerate(JOINT_NAMES):
            joints[name] = from_crop_coords((vec[2 * i], vec[2 * i + 1]), spec)
        skeletons.append(Skeleton(joints))
    return skeletons


def evaluate_pck(params: Parameters, eval_set: EvalSet, alpha: float = 0.2,
                 batch_size: int = 64) -> PckReport:
    """Full-pipeline PCK of a parameter set on an evaluation set."""
    vectors = predict_eval_set(params, eval_set, batch_size)
    preds = predicted_skeletons(vectors, eval_set.specs)
    return pck(preds, eval_set.gt_skeletons, alpha)
