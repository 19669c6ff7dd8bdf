"""Canonical 13-joint skeleton: names, target-vector layout, left/right flips.

The joint ordering below is the single source of truth for the layout of the
26-element target vectors used everywhere else: joint i occupies slots 2*i
(x) and 2*i+1 (y).
"""

from __future__ import annotations

import math

import numpy as np

# Head first, then arms, then legs. This order fixes the (x1, y1, ..., x13, y13)
# vector layout and must never be reordered once checkpoints exist.
JOINT_NAMES = (
    "head",
    "l_shoulder",
    "r_shoulder",
    "l_elbow",
    "r_elbow",
    "l_wrist",
    "r_wrist",
    "l_hip",
    "r_hip",
    "l_knee",
    "r_knee",
    "l_ankle",
    "r_ankle",
)

NUM_JOINTS = len(JOINT_NAMES)
VECTOR_SIZE = 2 * NUM_JOINTS

JOINT_INDEX = {name: i for i, name in enumerate(JOINT_NAMES)}

# Horizontal mirror swaps body sides; the head pairs with itself.
FLIP_MAP = {"head": "head"}
for _part in ("shoulder", "elbow", "wrist", "hip", "knee", "ankle"):
    FLIP_MAP[f"l_{_part}"] = f"r_{_part}"
    FLIP_MAP[f"r_{_part}"] = f"l_{_part}"

# Joint-index permutation induced by FLIP_MAP.
FLIP_PERMUTATION = tuple(JOINT_INDEX[FLIP_MAP[name]] for name in JOINT_NAMES)

# Joints pooled per report group (left/right merged).
REPORT_GROUPS = (
    ("head", ("head",)),
    ("wrist", ("l_wrist", "r_wrist")),
    ("elbow", ("l_elbow", "r_elbow")),
    ("shoulder", ("l_shoulder", "r_shoulder")),
    ("hip", ("l_hip", "r_hip")),
    ("knee", ("l_knee", "r_knee")),
    ("ankle", ("l_ankle", "r_ankle")),
)


class Skeleton:
    """A pose: mapping from joint name to an (x, y) point.

    Joints may be absent; an absent joint simply has no entry. Coordinates
    must be finite.
    """

    __slots__ = ("joints",)

    def __init__(self, joints):
        cleaned = {}
        for name, point in dict(joints).items():
            if name not in JOINT_INDEX:
                raise ValueError(f"unknown joint name: {name!r}")
            x, y = float(point[0]), float(point[1])
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValueError(f"non-finite coordinate for joint {name!r}: {point!r}")
            cleaned[name] = (x, y)
        self.joints = cleaned

    def __contains__(self, name):
        return name in self.joints

    def __len__(self):
        return len(self.joints)

    def __getitem__(self, name):
        return self.joints[name]

    def get(self, name, default=None):
        return self.joints.get(name, default)

    def items(self):
        """Present joints in canonical order."""
        for name in JOINT_NAMES:
            if name in self.joints:
                yield name, self.joints[name]

    def __eq__(self, other):
        return isinstance(other, Skeleton) and self.joints == other.joints

    def __repr__(self):
        parts = ", ".join(f"{n}=({x:g},{y:g})" for n, (x, y) in self.items())
        return f"Skeleton({parts})"

    def to_vector(self):
        """(values, weights): 26-element coordinate vector plus a {0,1} mask.

        Absent joints get value 0 at both slots and weight 0.
        """
        values = np.zeros(VECTOR_SIZE, dtype=np.float64)
        weights = np.zeros(VECTOR_SIZE, dtype=np.float64)
        for name, (x, y) in self.joints.items():
            i = JOINT_INDEX[name]
            values[2 * i] = x
            values[2 * i + 1] = y
            weights[2 * i] = 1.0
            weights[2 * i + 1] = 1.0
        return values, weights

    @classmethod
    def from_vector(cls, values, weights=None):
        """Inverse of to_vector; slots with weight 0 become absent joints."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (VECTOR_SIZE,):
            raise ValueError(f"expected a {VECTOR_SIZE}-element vector, got shape {values.shape}")
        joints = {}
        for name, i in JOINT_INDEX.items():
            if weights is not None and not (weights[2 * i] and weights[2 * i + 1]):
                continue
            joints[name] = (values[2 * i], values[2 * i + 1])
        return cls(joints)


def flip_slot_order():
    """Slot permutation on 26-vectors induced by the left/right joint swap."""
    order = np.empty(VECTOR_SIZE, dtype=np.intp)
    for i, j in enumerate(FLIP_PERMUTATION):
        order[2 * i] = 2 * j
        order[2 * i + 1] = 2 * j + 1
    return order


_FLIP_SLOTS = flip_slot_order()
_X_SLOTS = np.arange(0, VECTOR_SIZE, 2)


def hflip_pose_vector(values):
    """Mirror a pose vector of normalized coordinates: swap sides, x -> 1 - x.

    Operates on (26,) or (..., 26) arrays; every slot is assumed populated
    (use Skeleton-level flipping when presence masks are in play).
    """
    values = np.asarray(values)
    flipped = values[..., _FLIP_SLOTS].copy()
    flipped[..., _X_SLOTS] = 1.0 - flipped[..., _X_SLOTS]
    return flipped


def hflip_weight_vector(weights):
    """Permute a 26-element weight mask with the left/right swap."""
    return np.asarray(weights)[..., _FLIP_SLOTS].copy()
