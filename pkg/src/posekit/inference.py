"""Per-person and per-frame prediction behind pluggable person detectors.

A person crop is predicted twice, once as-is and once horizontally mirrored;
the mirrored prediction is un-flipped (x -> 1 - x plus the left/right slot
swap) and the two are averaged in normalized crop space before mapping back
to frame pixels. Detectors share one interface: detect(image, ref) returns
scored boxes. Three implementations stand in for a learned detector:
ground-truth oracle, detection-file playback, and a connected-component
blob finder for synthetic scenes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .dataset import DetectionBox, expanded_gt_box, normalize_pixels
from .errors import DataError
from .geometry import (
    BBox,
    CropSpec,
    crop_zero_pad,
    from_crop_coords,
    hflip_image,
    iou,
    squarify,
)
from .network import Parameters, forward
from .skeleton import JOINT_NAMES, Skeleton, hflip_pose_vector

# a detection matching ground truth with IoU of 0.5 or less counts as false
DETECTION_CORRECT_IOU = 0.5


@dataclass(frozen=True)
class PersonPrediction:
    box: BBox
    score: float
    skeleton: Skeleton


@dataclass(frozen=True)
class FramePrediction:
    image: str
    people: tuple


class OracleDetector:
    """Returns the expanded ground-truth person box for every annotated person."""

    def __init__(self, annotations):
        self._by_image = {}
        for ann in annotations:
            box = ann.gt_box if ann.gt_box is not None else expanded_gt_box(ann)
            self._by_image.setdefault(ann.image, []).append(DetectionBox(box, 1.0))

    def detect(self, image, ref):
        if ref not in self._by_image:
            raise DataError(f"oracle detector has no annotation for image {ref!r}")
        return list(self._by_image[ref])


class FileDetector:
    """Plays back a detection JSONL file verbatim."""

    def __init__(self, detections_by_image):
        self._by_image = dict(detections_by_image)

    def detect(self, image, ref):
        if ref not in self._by_image:
            raise DataError(f"detection file has no entry for image {ref!r}")
        return list(self._by_image[ref])


@dataclass
class BlobDetector:
    """Thresholded connected components over background distance.

    The background color is estimated from the image border (median per
    channel) unless given. Pixels whose max-channel distance from the
    background exceeds `threshold` are foreground; 4-connected components
    of at least `min_area` pixels become detections. The score is the
    component's fill ratio inside its own tight box.
    """

    threshold: float = 45.0
    min_area: int = 30
    background: tuple | None = None

    def detect(self, image, ref=None):
        img = np.asarray(image, dtype=np.float64)
        if self.background is None:
            border = np.concatenate([
                img[0].reshape(-1, 3), img[-1].reshape(-1, 3),
                img[:, 0].reshape(-1, 3), img[:, -1].reshape(-1, 3),
            ])
            background = np.median(border, axis=0)
        else:
            background = np.asarray(self.background, dtype=np.float64)
        distance = np.abs(img - background).max(axis=2)
        mask = distance > self.threshold
        detections = []
        for ys, xs in _connected_components(mask):
            area = len(ys)
            if area < self.min_area:
                continue
            y0, y1 = int(ys.min()), int(ys.max()) + 1
            x0, x1 = int(xs.min()), int(xs.max()) + 1
            fill = area / float((y1 - y0) * (x1 - x0))
            detections.append(DetectionBox(BBox(x0, y0, x1, y1), fill))
        detections.sort(key=lambda d: -d.score)
        return detections


def _connected_components(mask):
    """Yield (ys, xs) index arrays of 4-connected true regions."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    ys_all, xs_all = np.nonzero(mask)
    for y_seed, x_seed in zip(ys_all.tolist(), xs_all.tolist()):
        if seen[y_seed, x_seed]:
            continue
        stack = [(y_seed, x_seed)]
        seen[y_seed, x_seed] = True
        component = []
        while stack:
            y, x = stack.pop()
            component.append((y, x))
            for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                    seen[ny, nx] = True
                    stack.append((ny, nx))
        component = np.asarray(component)
        yield component[:, 0], component[:, 1]


def predict_person(params: Parameters, crop_pixels) -> np.ndarray:
    """Flip-averaged joint prediction for one normalized crop.

    Returns the 26-element normalized coordinate vector: the mean of the
    direct prediction and the un-flipped prediction on the mirrored crop.
    """
    crop = np.asarray(crop_pixels)
    batch = np.stack([crop, hflip_image(crop)])
    out, _ = forward(params, batch)
    return (out[0] + hflip_pose_vector(out[1])) / 2.0


def predict_crops(params: Parameters, crops) -> np.ndarray:
    """Batched flip-averaged prediction: (N, S, S, 3) -> (N, 26)."""
    crops = np.asarray(crops)
    both = np.concatenate([crops, crops[:, :, ::-1, :]])
    out, _ = forward(params, both)
    n = crops.shape[0]
    return (out[:n] + hflip_pose_vector(out[n:])) / 2.0


def predict_frame(params: Parameters, detector, image, ref="") -> FramePrediction:
    """Detect people in a frame and predict each one's skeleton.

    Every detection box is squarified, cropped with zero padding, resized to
    the network input, and predicted with flip averaging; normalized joints
    are then mapped back to frame pixels through the crop transform.
    """
    detections = detector.detect(image, ref)
    side = params.config.input_side
    people = []
    for det in detections:
        square = squarify(det.box)
        spec = CropSpec(square, side)
        pixels = normalize_pixels(crop_zero_pad(image, square, side))
        vec = predict_person(params, pixels)
        joints = {}
        for i, name in enumerate(JOINT_NAMES):
            joints[name] = from_crop_coords((vec[2 * i], vec[2 * i + 1]), spec)
        people.append(PersonPrediction(det.box, det.score, Skeleton(joints)))
    return FramePrediction(image=ref, people=tuple(people))


@dataclass
class DetectorEvalReport:
    false_positive_rate: float
    false_negative_rate: float
    detections: int = 0
    ground_truths: int = 0
    false_positives: int = 0
    false_negatives: int = 0


def detector_eval(detections_by_image, annotations) -> DetectorEvalReport:
    """Score detections against expanded ground-truth boxes.

    Pairs are matched greedily by descending IoU, one-to-one per frame; a
    detection is correct only when its matched IoU strictly exceeds
    DETECTION_CORRECT_IOU. Rates are false detections over all detections
    and unmatched ground truths over all ground truths.
    """
    gt_by_image = {}
    for ann in annotations:
        box = ann.gt_box if ann.gt_box is not None else expanded_gt_box(ann)
        gt_by_image.setdefault(ann.image, []).append(box)

    total_dets = total_gts = false_pos = false_neg = 0
    images = set(gt_by_image) | set(detections_by_image)
    for image in images:
        dets = detections_by_image.get(image, [])
        gts = gt_by_image.get(image, [])
        total_dets += len(dets)
        total_gts += len(gts)
        pairs = []
        for di, det in enumerate(dets):
            for gi, gt in enumerate(gts):
                ratio = iou(det.box, gt)
                if ratio > DETECTION_CORRECT_IOU:
                    pairs.append((ratio, di, gi))
        pairs.sort(key=lambda t: -t[0])
        used_d, used_g = set(), set()
        for ratio, di, gi in pairs:
            if di in used_d or gi in used_g:
                continue
            used_d.add(di)
            used_g.add(gi)
        false_pos += len(dets) - len(used_d)
        false_neg += len(gts) - len(used_g)

    return DetectorEvalReport(
        false_positive_rate=false_pos / total_dets if total_dets else 0.0,
        false_negative_rate=false_neg / total_gts if total_gts else 0.0,
        detections=total_dets,
        ground_truths=total_gts,
        false_positives=false_pos,
        false_negatives=false_neg,
    )


def align_predictions(frames, annotations):
    """Pair each annotation with its best predicted person, by box overlap.

    Returns a skeleton list aligned with `annotations`; an annotation with
    no prediction in its frame gets an empty skeleton (every joint scored
    incorrect downstream).
    """
    by_image = {}
    for frame in frames:
        by_image.setdefault(frame.image, []).extend(frame.people)
    aligned = []
    for ann in annotations:
        candidates = by_image.get(ann.image, [])
        best, best_iou = None, -1.0
        if candidates:
            gt_box = ann.gt_box if ann.gt_box is not None else expanded_gt_box(ann)
            for person in candidates:
                try:
                    ratio = iou(person.box, gt_box)
                except ValueError:
                    continue
                if ratio > best_iou:
                    best, best_iou = person, ratio
        aligned.append(best.skeleton if best is not None else Skeleton({}))
    return aligned


def write_predictions(frames, path) -> None:
    """Serialize FramePredictions as JSONL, one frame per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for frame in frames:
            record = {
                "image": frame.image,
                "people": [
                    {
                        "box": list(p.box.as_tuple()),
                        "score": p.score,
                        "joints": {n: [x, y] for n, (x, y) in p.skeleton.items()},
                    }
                    for p in frame.people
                ],
            }
            fh.write(json.dumps(record) + "\n")


def load_predictions(path):
    """Parse a prediction JSONL file back into FramePredictions."""
    base = os.path.dirname(os.path.abspath(path))
    frames = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}")
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{where}: malformed JSON ({exc.msg})")
            image = record.get("image")
            if not isinstance(image, str):
                raise DataError(f"{where}: missing or invalid 'image' field")
            if not os.path.isabs(image):
                image = os.path.normpath(os.path.join(base, image))
            people = []
            for k, entry in enumerate(record.get("people", [])):
                try:
                    box = BBox(*(float(v) for v in entry["box"]))
                    score = float(entry["score"])
                    skeleton = Skeleton({n: tuple(p) for n, p in entry["joints"].items()})
                except (KeyError, TypeError, ValueError) as exc:
                    raise DataError(f"{where}: people[{k}]: {exc}")
                people.append(PersonPrediction(box, score, skeleton))
            frames.append(FramePrediction(image=image, people=tuple(people)))
    return frames
