"""Procedural stick-figure scenes with exact joint ground truth.

Each sample renders one articulated 13-joint figure: anti-aliased limb
segments of configurable thickness, per-figure part colors, and a flat or
noisy background. Joint positions are recorded exactly as drawn, so the
generator doubles as the ground-truth source for end-to-end experiments.
Generation is deterministic given (config, seed).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .errors import ConfigError
from .imageio import write_image
from .skeleton import Skeleton

# Body proportions relative to the torso height s (shoulder line to hip line).
SHOULDER_HALF = 0.33
HIP_HALF = 0.22
HEAD_RISE = 0.32      # shoulder-line center to head point
HEAD_RADIUS = 0.17
UPPER_ARM = 0.52
FOREARM = 0.48
THIGH = 0.56
SHIN = 0.52


@dataclass(frozen=True)
class SynthConfig:
    """Scene and pose ranges for the generator.

    Angle ranges are in degrees. Limb swing angles measure outward rotation
    from straight down on the joint's own body side, so limbs never cross
    the body midline and left/right identity stays visually resolvable.
    """

    width: int = 96
    height: int = 96
    count: int = 100
    # figure placement: anchor (hip midpoint) as fractions of image size
    center_x: tuple = (0.32, 0.68)
    center_y: tuple = (0.40, 0.62)
    margin: float = 2.0
    # torso height range in pixels
    scale: tuple = (15.0, 27.0)
    lean: tuple = (-8.0, 8.0)
    arm_swing: tuple = (8.0, 66.0)
    elbow_bend: tuple = (-25.0, 70.0)
    leg_swing: tuple = (2.0, 24.0)
    knee_bend: tuple = (0.0, 40.0)
    # appearance
    line_width: float = 2.0
    figure_value: tuple = (15.0, 150.0)
    background_color: tuple = (205.0, 205.0, 210.0)
    background_jitter: float = 18.0
    noise: float = 7.0

    def validate(self):
        if self.width < 8 or self.height < 8:
            raise ConfigError(f"image size must be at least 8x8, got {self.width}x{self.height}")
        if self.count < 0:
            raise ConfigError(f"count must be non-negative, got {self.count}")
        if self.margin < 0:
            raise ConfigError(f"margin must be >= 0, got {self.margin}")
        if self.line_width <= 0:
            raise ConfigError(f"line width must be positive, got {self.line_width}")
        for name in ("center_x", "center_y", "scale", "lean", "arm_swing",
                     "elbow_bend", "leg_swing", "knee_bend", "figure_value"):
            rng = getattr(self, name)
            if len(rng) != 2 or not all(math.isfinite(float(v)) for v in rng) or rng[0] > rng[1]:
                raise ConfigError(f"{name} must be a (low, high) range, got {rng!r}")
        if self.scale[0] <= 0:
            raise ConfigError(f"scale must be positive, got {self.scale!r}")
        if len(self.background_color) != 3:
            raise ConfigError(f"background_color must be RGB, got {self.background_color!r}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown generator config fields: {sorted(unknown)}")
        kwargs = {}
        for key, value in data.items():
            kwargs[key] = tuple(value) if isinstance(value, list) else value
        return cls(**kwargs).validate()


# Named configurations used throughout the test experiments: "wide" covers a
# broad range of placements, scales, and poses; "narrow" is a constrained
# use case with different lighting and clothing values.
SYNTH_PRESETS = {
    "wide": SynthConfig(),
    "narrow": SynthConfig(
        center_x=(0.42, 0.58),
        center_y=(0.46, 0.58),
        scale=(17.0, 21.0),
        lean=(-2.0, 2.0),
        arm_swing=(30.0, 52.0),
        elbow_bend=(5.0, 30.0),
        leg_swing=(5.0, 13.0),
        knee_bend=(3.0, 18.0),
        figure_value=(18.0, 70.0),
        background_color=(238.0, 234.0, 224.0),
        background_jitter=4.0,
        noise=3.0,
    ),
}


def _uniform(rng, lo_hi):
    return rng.uniform(lo_hi[0], lo_hi[1])


def _sample_pose(cfg: SynthConfig, rng):
    """Joint offsets relative to the hip midpoint, plus part draw segments."""
    s = _uniform(rng, cfg.scale)
    rad = math.radians

    def arm(side):
        # side: -1 viewer-left, +1 viewer-right; swing rotates outward
        swing = rad(_uniform(rng, cfg.arm_swing))
        bend = rad(_uniform(rng, cfg.elbow_bend))
        shoulder = np.array([side * SHOULDER_HALF * s, -s])
        elbow = shoulder + UPPER_ARM * s * np.array([side * math.sin(swing), math.cos(swing)])
        wrist = elbow + FOREARM * s * np.array([side * math.sin(swing + bend), math.cos(swing + bend)])
        return shoulder, elbow, wrist

    def leg(side):
        swing = rad(_uniform(rng, cfg.leg_swing))
        bend = rad(_uniform(rng, cfg.knee_bend))
        hip = np.array([side * HIP_HALF * s, 0.0])
        knee = hip + THIGH * s * np.array([side * math.sin(swing), math.cos(swing)])
        ankle = knee + SHIN * s * np.array([side * math.sin(swing - bend), math.cos(swing - bend)])
        return hip, knee, ankle

    l_shoulder, l_elbow, l_wrist = arm(-1)
    r_shoulder, r_elbow, r_wrist = arm(+1)
    l_hip, l_knee, l_ankle = leg(-1)
    r_hip, r_knee, r_ankle = leg(+1)
    head = np.array([0.0, -s - HEAD_RISE * s])

    joints = {
        "head": head,
        "l_shoulder": l_shoulder, "r_shoulder": r_shoulder,
        "l_elbow": l_elbow, "r_elbow": r_elbow,
        "l_wrist": l_wrist, "r_wrist": r_wrist,
        "l_hip": l_hip, "r_hip": r_hip,
        "l_knee": l_knee, "r_knee": r_knee,
        "l_ankle": l_ankle, "r_ankle": r_ankle,
    }

    lam = rad(_uniform(rng, cfg.lean))
    rot = np.array([[math.cos(lam), -math.sin(lam)], [math.sin(lam), math.cos(lam)]])
    joints = {name: rot @ p for name, p in joints.items()}

    segments = [
        ("torso", "l_shoulder", "r_shoulder"),
        ("torso", "l_hip", "r_hip"),
        ("torso_mid", "shoulder_mid", "hip_mid"),
        ("torso_mid", "shoulder_mid", "head"),
        ("l_arm", "l_shoulder", "l_elbow"), ("l_arm", "l_elbow", "l_wrist"),
        ("r_arm", "r_shoulder", "r_elbow"), ("r_arm", "r_elbow", "r_wrist"),
        ("l_leg", "l_hip", "l_knee"), ("l_leg", "l_knee", "l_ankle"),
        ("r_leg", "r_hip", "r_knee"), ("r_leg", "r_knee", "r_ankle"),
    ]
    anchors = dict(joints)
    anchors["shoulder_mid"] = (joints["l_shoulder"] + joints["r_shoulder"]) / 2.0
    anchors["hip_mid"] = (joints["l_hip"] + joints["r_hip"]) / 2.0
    return joints, anchors, segments, s


def _draw_segment(img, p0, p1, color, half_width):
    """Alpha-composite an anti-aliased thick segment onto a float image."""
    h, w = img.shape[:2]
    x_lo = max(0, int(math.floor(min(p0[0], p1[0]) - half_width - 1)))
    x_hi = min(w, int(math.ceil(max(p0[0], p1[0]) + half_width + 2)))
    y_lo = max(0, int(math.floor(min(p0[1], p1[1]) - half_width - 1)))
    y_hi = min(h, int(math.ceil(max(p0[1], p1[1]) + half_width + 2)))
    if x_lo >= x_hi or y_lo >= y_hi:
        return
    ys, xs = np.mgrid[y_lo:y_hi, x_lo:x_hi]
    px = xs + 0.5 - p0[0]
    py = ys + 0.5 - p0[1]
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    seg_len2 = dx * dx + dy * dy
    if seg_len2 == 0.0:
        dist = np.hypot(px, py)
    else:
        t = np.clip((px * dx + py * dy) / seg_len2, 0.0, 1.0)
        dist = np.hypot(px - t * dx, py - t * dy)
    cov = np.clip(half_width + 0.5 - dist, 0.0, 1.0)[..., None]
    img[y_lo:y_hi, x_lo:x_hi] = img[y_lo:y_hi, x_lo:x_hi] * (1.0 - cov) + np.asarray(color) * cov


def _draw_disk(img, center, radius, color):
    h, w = img.shape[:2]
    x_lo = max(0, int(math.floor(center[0] - radius - 1)))
    x_hi = min(w, int(math.ceil(center[0] + radius + 2)))
    y_lo = max(0, int(math.floor(center[1] - radius - 1)))
    y_hi = min(h, int(math.ceil(center[1] + radius + 2)))
    if x_lo >= x_hi or y_lo >= y_hi:
        return
    ys, xs = np.mgrid[y_lo:y_hi, x_lo:x_hi]
    dist = np.hypot(xs + 0.5 - center[0], ys + 0.5 - center[1])
    cov = np.clip(radius + 0.5 - dist, 0.0, 1.0)[..., None]
    img[y_lo:y_hi, x_lo:x_hi] = img[y_lo:y_hi, x_lo:x_hi] * (1.0 - cov) + np.asarray(color) * cov


def synth_generate(config: SynthConfig, seed: int):
    """Render `config.count` scenes; returns (images, skeletons).

    Raises ConfigError when the placement ranges cannot keep a sampled
    figure's joints inside the image margins.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    w, h = config.width, config.height
    images, skeletons = [], []

    for index in range(config.count):
        joints, anchors, segments, s = _sample_pose(config, rng)
        offsets = np.stack(list(joints.values()))
        lo = offsets.min(axis=0)
        hi = offsets.max(axis=0)
        # anchor interval keeping every joint inside [margin, size-1-margin]
        ax_lo, ax_hi = config.margin - lo[0], (w - 1 - config.margin) - hi[0]
        ay_lo, ay_hi = config.margin - lo[1], (h - 1 - config.margin) - hi[1]
        cx_lo = max(ax_lo, config.center_x[0] * w)
        cx_hi = min(ax_hi, config.center_x[1] * w)
        cy_lo = max(ay_lo, config.center_y[0] * h)
        cy_hi = min(ay_hi, config.center_y[1] * h)
        if cx_lo > cx_hi or cy_lo > cy_hi:
            raise ConfigError(
                f"sample {index}: figure of torso {s:.1f}px cannot be placed inside "
                f"{w}x{h} with margin {config.margin} and the configured center ranges")
        anchor = np.array([rng.uniform(cx_lo, cx_hi), rng.uniform(cy_lo, cy_hi)])

        base = np.asarray(config.background_color, dtype=np.float64)
        jitter = rng.uniform(-config.background_jitter, config.background_jitter, size=3)
        img = np.empty((h, w, 3), dtype=np.float64)
        img[:] = np.clip(base + jitter, 0.0, 255.0)

        vr = config.figure_value
        colors = {part: rng.uniform(vr[0], vr[1], size=3)
                  for part in ("torso", "torso_mid", "head", "l_arm", "r_arm", "l_leg", "r_leg")}
        half = config.line_width / 2.0
        for part, a, b in segments:
            _draw_segment(img, anchors[a] + anchor, anchors[b] + anchor, colors[part], half)
        _draw_disk(img, joints["head"] + anchor, HEAD_RADIUS * s, colors["head"])

        if config.noise > 0:
            img += rng.uniform(-config.noise, config.noise, size=img.shape)
        images.append(np.clip(np.rint(img), 0, 255).astype(np.uint8))
        skeletons.append(Skeleton({n: tuple(p + anchor) for n, p in joints.items()}))

    return images, skeletons


def write_dataset(config: SynthConfig, seed: int, out_dir, image_format="png"):
    """Generate a dataset on disk: imgs/NNNNNN.<ext> plus annotations.jsonl.

    Returns the annotation file path.
    """
    if image_format not in ("png", "ppm"):
        raise ConfigError(f"image format must be png or ppm, got {image_format!r}")
    images, skeletons = synth_generate(config, seed)
    img_dir = os.path.join(out_dir, "imgs")
    os.makedirs(img_dir, exist_ok=True)
    ann_path = os.path.join(out_dir, "annotations.jsonl")
    with open(ann_path, "w", encoding="utf-8") as fh:
        for i, (img, sk) in enumerate(zip(images, skeletons)):
            name = f"imgs/{i:06d}.{image_format}"
            write_image(os.path.join(out_dir, name), img)
            record = {"image": name, "joints": {n: [x, y] for n, (x, y) in sk.items()}}
            fh.write(json.dumps(record) + "\n")
    with open(os.path.join(out_dir, "synth_config.json"), "w", encoding="utf-8") as fh:
        json.dump({"seed": seed, "config": config.to_dict()}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ann_path


def preset_config(name: str, **overrides) -> SynthConfig:
    """Look up a named preset, optionally overriding fields."""
    if name not in SYNTH_PRESETS:
        raise ConfigError(f"unknown synth preset {name!r}; available: {sorted(SYNTH_PRESETS)}")
    cfg = SYNTH_PRESETS[name]
    return replace(cfg, **overrides).validate() if overrides else cfg
