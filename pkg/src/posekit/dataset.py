"""Annotation ingestion and person-crop production for training.

A person sample yields two or four training crops: one square crop per box
the overlap rule selects (detector box, ground-truth box, or both), each
paired with its horizontal mirror. Targets are joint coordinates normalized
to the crop square; absent joints carry weight 0 so they drop out of the
loss.

Annotation files are JSONL, one person per line:

    {"image": "imgs/0001.png", "joints": {"head": [x, y], ...},
     "gt_box": [x0, y0, x1, y1]}          # gt_box optional

Detection files are JSONL keyed the same way:

    {"image": "imgs/0001.png", "boxes": [{"box": [x0, y0, x1, y1], "score": s}]}

Relative image paths resolve against the JSONL file's directory.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .geometry import (
    BBox,
    CropSpec,
    crop_zero_pad,
    expand_about_center,
    hflip_image,
    hflip_skeleton,
    iou,
    squarify,
    to_crop_coords,
    tight_box,
)
from .imageio import read_image
from .skeleton import JOINT_INDEX, VECTOR_SIZE, Skeleton

# Ground-truth person boxes are the tight box around the joints grown by this
# factor before any cropping decision.
GT_BOX_EXPANSION = 1.2

# Overlap thresholds deciding which boxes feed augmentation: above the upper
# bound only the detector box is used, below the lower bound only the
# ground-truth box, and inside the closed interval both are.
IOU_DETECTOR_ONLY = 0.7
IOU_GT_ONLY = 0.5

BOX_ORIGIN_DETECTOR = "detector"
BOX_ORIGIN_GT = "ground-truth"


@dataclass(frozen=True)
class PersonAnnotation:
    """One annotated person: image path, skeleton, optional person box."""

    image: str
    skeleton: Skeleton
    gt_box: BBox | None = None
    sample_id: str = ""


@dataclass(frozen=True)
class DetectionBox:
    """A detector-proposed person box with a confidence score in [0, 1]."""

    box: BBox
    score: float

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"detection score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class CropProvenance:
    sample_id: str
    box_origin: str  # BOX_ORIGIN_DETECTOR or BOX_ORIGIN_GT
    flipped: bool


@dataclass(frozen=True)
class TrainCrop:
    """A network-ready training example.

    pixels: (side, side, 3) float32 in [-1, 1]
    target: (26,) normalized joint coordinates (0 where absent)
    weights: (26,) {0, 1} mask, zero wherever the joint is absent
    """

    pixels: np.ndarray
    target: np.ndarray
    weights: np.ndarray
    provenance: CropProvenance
    crop: CropSpec


@dataclass(frozen=True)
class AugmentationPlan:
    """The boxes a sample will be cropped from, tagged with their origin."""

    boxes: tuple
    best_iou: float | None

    def __post_init__(self):
        if len(self.boxes) not in (1, 2):
            raise ValueError(f"augmentation plan must hold 1 or 2 boxes, got {len(self.boxes)}")


def head_from_neck_and_top(neck, head_top):
    """Single head point from separate neck and head-top annotations: their midpoint."""
    return ((neck[0] + head_top[0]) / 2.0, (neck[1] + head_top[1]) / 2.0)


def expanded_gt_box(ann: PersonAnnotation) -> BBox:
    """The ground-truth person box: tight joints box grown by GT_BOX_EXPANSION."""
    return expand_about_center(tight_box(ann.skeleton), GT_BOX_EXPANSION)


def choose_boxes(gt_expanded: BBox, detections) -> AugmentationPlan:
    """Pick the crop boxes for one sample from the detector/ground-truth overlap.

    The detection with the largest IoU against the expanded ground-truth box
    decides: good overlap keeps only the detector box, poor overlap falls
    back to the ground-truth box, the middle band keeps both. No detections
    at all behaves like poor overlap.
    """
    if not detections:
        return AugmentationPlan(((gt_expanded, BOX_ORIGIN_GT),), None)
    best = None
    best_iou = -1.0
    for det in detections:
        ratio = iou(det.box, gt_expanded)
        if ratio > best_iou:
            best, best_iou = det, ratio
    if best_iou > IOU_DETECTOR_ONLY:
        boxes = ((best.box, BOX_ORIGIN_DETECTOR),)
    elif best_iou < IOU_GT_ONLY:
        boxes = ((gt_expanded, BOX_ORIGIN_GT),)
    else:
        boxes = ((best.box, BOX_ORIGIN_DETECTOR), (gt_expanded, BOX_ORIGIN_GT))
    return AugmentationPlan(boxes, best_iou)


def normalize_pixels(img) -> np.ndarray:
    """Map 8-bit intensities into [-1, 1]: v -> (v - 127) / 128."""
    return ((np.asarray(img, dtype=np.float32) - 127.0) / 128.0).astype(np.float32)


def targets_and_weights(sk: Skeleton, crop: CropSpec):
    """Normalized target vector and {0,1} weight mask for a skeleton in a crop.

    Present joints land at their canonical slots with weight 1; joints
    outside the crop square keep weight 1 with out-of-range values. Absent
    joints get target 0 and weight 0.
    """
    norm = Skeleton({name: to_crop_coords(p, crop) for name, p in sk.items()})
    return norm.to_vector()


def make_crops(ann: PersonAnnotation, detections, target_side: int, image=None):
    """Produce the 2 or 4 training crops for one annotated person.

    The image is loaded from ann.image unless given. Each chosen box is
    squarified, cropped with zero padding, resized, and normalized; the crop
    and its horizontal mirror are both emitted.
    """
    if len(ann.skeleton) == 0:
        raise ValueError(f"sample {ann.sample_id or ann.image!r} has no annotated joints")
    if image is None:
        image = read_image(ann.image)
    plan = choose_boxes(expanded_gt_box(ann), detections)

    crops = []
    for box, origin in plan.boxes:
        square = squarify(box)
        spec = CropSpec(square, target_side)
        raw = crop_zero_pad(image, square, target_side)
        norm_sk = Skeleton({name: to_crop_coords(p, spec) for name, p in ann.skeleton.items()})
        target, weights = norm_sk.to_vector()
        crops.append(TrainCrop(
            pixels=normalize_pixels(raw),
            target=target,
            weights=weights,
            provenance=CropProvenance(ann.sample_id, origin, False),
            crop=spec,
        ))
        flip_target, flip_weights = hflip_skeleton(norm_sk).to_vector()
        crops.append(TrainCrop(
            pixels=normalize_pixels(hflip_image(raw)),
            target=flip_target,
            weights=flip_weights,
            provenance=CropProvenance(ann.sample_id, origin, True),
            crop=spec,
        ))
    return crops


def stack_crops(crops):
    """Stack TrainCrops into (pixels, targets, weights) training arrays."""
    if not crops:
        raise ValueError("cannot stack an empty crop list")
    pixels = np.stack([c.pixels for c in crops]).astype(np.float32)
    targets = np.stack([c.target for c in crops]).astype(np.float32)
    weights = np.stack([c.weights for c in crops]).astype(np.float32)
    return pixels, targets, weights


def _resolve(base_dir, path):
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base_dir, path))


def _parse_point(value, where):
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or not all(isinstance(v, (int, float)) for v in value)
            or not all(math.isfinite(float(v)) for v in value)):
        raise DataError(f"{where}: expected a finite [x, y] pair, got {value!r}")
    return (float(value[0]), float(value[1]))


def _parse_box(value, where):
    if (not isinstance(value, (list, tuple)) or len(value) != 4
            or not all(isinstance(v, (int, float)) for v in value)):
        raise DataError(f"{where}: expected [x0, y0, x1, y1], got {value!r}")
    try:
        return BBox(*(float(v) for v in value))
    except ValueError as exc:
        raise DataError(f"{where}: {exc}")


def _iter_jsonl(path):
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}")
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})")
            if not isinstance(record, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, record


def load_annotations(path, check_images=True):
    """Parse an annotation JSONL file into PersonAnnotations.

    Image paths are resolved against the file's directory and, by default,
    must exist. Errors name the offending line.
    """
    base = os.path.dirname(os.path.abspath(path))
    annotations = []
    for lineno, record in _iter_jsonl(path):
        where = f"{path}:{lineno}"
        image = record.get("image")
        if not isinstance(image, str) or not image:
            raise DataError(f"{where}: missing or invalid 'image' field")
        image = _resolve(base, image)
        if check_images and not os.path.isfile(image):
            raise DataError(f"{where}: referenced image does not exist: {image}")
        joints_field = record.get("joints")
        if not isinstance(joints_field, dict):
            raise DataError(f"{where}: missing or invalid 'joints' object")
        joints = {}
        for name, value in joints_field.items():
            if name not in JOINT_INDEX:
                raise DataError(f"{where}: unknown joint name {name!r}")
            joints[name] = _parse_point(value, f"{where}: joint {name!r}")
        gt_box = None
        if "gt_box" in record and record["gt_box"] is not None:
            gt_box = _parse_box(record["gt_box"], f"{where}: gt_box")
        unknown = set(record) - {"image", "joints", "gt_box"}
        if unknown:
            raise DataError(f"{where}: unknown fields {sorted(unknown)}")
        annotations.append(PersonAnnotation(
            image=image,
            skeleton=Skeleton(joints),
            gt_box=gt_box,
            sample_id=f"{os.path.basename(str(path))}:{lineno}",
        ))
    return annotations


def load_detections(path):
    """Parse a detection JSONL file into {resolved image path: [DetectionBox]}."""
    base = os.path.dirname(os.path.abspath(path))
    detections = {}
    for lineno, record in _iter_jsonl(path):
        where = f"{path}:{lineno}"
        image = record.get("image")
        if not isinstance(image, str) or not image:
            raise DataError(f"{where}: missing or invalid 'image' field")
        boxes_field = record.get("boxes")
        if not isinstance(boxes_field, list):
            raise DataError(f"{where}: missing or invalid 'boxes' list")
        boxes = []
        for k, entry in enumerate(boxes_field):
            if not isinstance(entry, dict) or "box" not in entry or "score" not in entry:
                raise DataError(f"{where}: boxes[{k}] must be an object with 'box' and 'score'")
            box = _parse_box(entry["box"], f"{where}: boxes[{k}]")
            score = entry["score"]
            if not isinstance(score, (int, float)) or not 0.0 <= float(score) <= 1.0:
                raise DataError(f"{where}: boxes[{k}] score must be in [0, 1], got {score!r}")
            boxes.append(DetectionBox(box, float(score)))
        detections[_resolve(base, image)] = boxes
    return detections
