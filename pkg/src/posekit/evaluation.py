"""PCK@alpha with torso-length normalization, baselines, and pixel error.

A predicted joint is correct when its distance to the ground truth is at
most alpha times the torso length (right shoulder to left hip, measured on
the ground truth). Left/right joints pool into one report group per body
part; samples whose torso length is undefined are excluded and counted.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .skeleton import JOINT_INDEX, NUM_JOINTS, REPORT_GROUPS, VECTOR_SIZE, Skeleton

TORSO_JOINTS = ("r_shoulder", "l_hip")
DEFAULT_ALPHA = 0.2


class TorsoUndefined(ValueError):
    """The PCK normalizer cannot be computed for this sample."""


class TorsoJointMissing(TorsoUndefined):
    pass


class TorsoDegenerate(TorsoUndefined):
    pass


def torso_length(gt: Skeleton) -> float:
    """Distance between the right shoulder and the left hip of the ground truth."""
    for name in TORSO_JOINTS:
        if name not in gt:
            raise TorsoJointMissing(f"ground truth lacks {name}; sample excluded from PCK")
    (x0, y0), (x1, y1) = gt[TORSO_JOINTS[0]], gt[TORSO_JOINTS[1]]
    length = math.hypot(x1 - x0, y1 - y0)
    if length == 0.0:
        raise TorsoDegenerate("torso joints coincide; sample excluded from PCK")
    return length


@dataclass(frozen=True)
class GroupScore:
    correct: int
    evaluated: int

    @property
    def pck(self):
        return 100.0 * self.correct / self.evaluated if self.evaluated else float("nan")


@dataclass(frozen=True)
class PckReport:
    alpha: float
    groups: dict  # group name -> GroupScore, in REPORT_GROUPS order
    excluded: int

    @property
    def correct(self):
        return sum(g.correct for g in self.groups.values())

    @property
    def evaluated(self):
        return sum(g.evaluated for g in self.groups.values())

    @property
    def overall(self):
        return 100.0 * self.correct / self.evaluated if self.evaluated else float("nan")

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "overall_pck": self.overall,
            "excluded_samples": self.excluded,
            "groups": {
                name: {"correct": g.correct, "evaluated": g.evaluated, "pck": g.pck}
                for name, g in self.groups.items()
            },
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_header(self):
        return ",".join([name for name, _ in REPORT_GROUPS] + ["all"])

    def to_csv_row(self):
        cells = [f"{self.groups[name].pck:.1f}" for name, _ in REPORT_GROUPS]
        cells.append(f"{self.overall:.1f}")
        return ",".join(cells)


def pck(preds, gts, alpha: float = DEFAULT_ALPHA) -> PckReport:
    """Score aligned prediction/ground-truth skeleton lists.

    Only joints annotated in the ground truth are evaluated; the distance
    threshold alpha * torso is inclusive. A predicted joint missing for an
    annotated ground-truth joint counts as incorrect.
    """
    if len(preds) != len(gts):
        raise ValueError(f"got {len(preds)} predictions for {len(gts)} ground truths")
    correct = {name: 0 for name, _ in REPORT_GROUPS}
    evaluated = {name: 0 for name, _ in REPORT_GROUPS}
    group_of = {joint: name for name, joints in REPORT_GROUPS for joint in joints}
    excluded = 0
    for pred, gt in zip(preds, gts):
        try:
            threshold = alpha * torso_length(gt)
        except TorsoUndefined:
            excluded += 1
            continue
        for name, (gx, gy) in gt.items():
            group = group_of[name]
            evaluated[group] += 1
            p = pred.get(name)
            if p is not None and math.hypot(p[0] - gx, p[1] - gy) <= threshold:
                correct[group] += 1
    groups = {name: GroupScore(correct[name], evaluated[name]) for name, _ in REPORT_GROUPS}
    return PckReport(alpha=alpha, groups=groups, excluded=excluded)


@dataclass(frozen=True)
class PckCurve:
    points: tuple  # ordered (alpha, overall pck) pairs

    def to_csv(self):
        lines = ["alpha,pck"]
        lines.extend(f"{a:g},{p:.4f}" for a, p in self.points)
        return "\n".join(lines) + "\n"


def pck_curve(preds, gts, alphas) -> PckCurve:
    """Overall PCK at each threshold; alphas must be positive and increasing."""
    alphas = list(alphas)
    if not alphas:
        raise ValueError("alpha list is empty")
    if any(a <= 0 for a in alphas):
        raise ValueError(f"alphas must be positive, got {alphas}")
    if any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError(f"alphas must be strictly increasing, got {alphas}")
    return PckCurve(tuple((a, pck(preds, gts, a).overall) for a in alphas))


@dataclass(frozen=True)
class MeanPose:
    """Constant predictor: per-coordinate mean over samples with the joint present.

    `defined[i]` is False when joint i never appeared in training, leaving
    that coordinate unpredictable.
    """

    values: np.ndarray  # (26,)
    defined: np.ndarray  # (26,) bool

    def predict(self) -> np.ndarray:
        return self.values.copy()

    def skeleton(self) -> Skeleton:
        joints = {}
        for name, i in JOINT_INDEX.items():
            if self.defined[2 * i]:
                joints[name] = (self.values[2 * i], self.values[2 * i + 1])
        return Skeleton(joints)


def mean_pose(targets, weights) -> MeanPose:
    """Average normalized pose over a training set.

    targets/weights are the stacked (N, 26) crop-space arrays; slots with
    weight 0 do not contribute.
    """
    targets = np.asarray(targets, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if targets.ndim != 2 or targets.shape != weights.shape or targets.shape[1] != VECTOR_SIZE:
        raise ValueError(f"expected matching (N, {VECTOR_SIZE}) arrays, got {targets.shape}")
    if targets.shape[0] == 0:
        raise ValueError("cannot take the mean pose of an empty training set")
    counts = weights.sum(axis=0)
    defined = counts > 0
    values = np.zeros(VECTOR_SIZE)
    np.divide((weights * targets).sum(axis=0), counts, out=values, where=defined)
    return MeanPose(values=values, defined=defined)


def pixel_error(preds, gts, weights, reference_side: int = 224) -> float:
    """Mean per-joint Euclidean error in pixels at a reference resolution.

    preds/gts are (N, 26) normalized coordinate arrays; weights mask absent
    joints (both slots of a joint share one flag). Errors are normalized
    distances scaled by reference_side, averaged over annotated joints.
    """
    preds = np.asarray(preds, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if preds.shape != gts.shape or preds.shape != weights.shape:
        raise ValueError(f"shape mismatch: {preds.shape} vs {gts.shape} vs {weights.shape}")
    if preds.ndim == 1:
        preds, gts, weights = preds[None], gts[None], weights[None]
    dx = (preds[:, 0::2] - gts[:, 0::2]) * reference_side
    dy = (preds[:, 1::2] - gts[:, 1::2]) * reference_side
    present = weights[:, 0::2] > 0
    if not present.any():
        return 0.0
    dist = np.hypot(dx, dy)
    return float(dist[present].mean())
