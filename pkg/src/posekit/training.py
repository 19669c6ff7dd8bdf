"""Masked weighted L2 loss, SGD with momentum, and the training loop.

The loss over one sample's 26-element prediction is

    E = 1/(2N) * sum_i w_i * (gt_i - pred_i)^2,   N = 26

with w_i in {0, 1} zeroing every coordinate whose ground truth is missing,
so unannotated joints contribute neither loss nor gradient. Batch loss is
the mean of per-sample E.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ConfigError, TrainingDivergedError
from .network import Checkpoint, Parameters, backward, forward
from .skeleton import VECTOR_SIZE


@dataclass(frozen=True)
class LossTerms:
    mean: float
    per_sample: np.ndarray


def _as_batch(pred, gt, weights):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    weights = np.asarray(weights)
    if pred.shape != gt.shape or pred.shape != weights.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, w {weights.shape}")
    if pred.shape[-1] != VECTOR_SIZE:
        raise ValueError(f"expected {VECTOR_SIZE}-element coordinate vectors, got {pred.shape}")
    single = pred.ndim == 1
    if single:
        pred, gt, weights = pred[None], gt[None], weights[None]
    elif pred.ndim != 2:
        raise ValueError(f"expected (26,) or (B, 26) arrays, got {pred.shape}")
    return pred, gt, weights, single


def loss_terms(pred, gt, weights) -> LossTerms:
    """Per-sample losses plus their batch mean."""
    pred, gt, weights, _ = _as_batch(pred, gt, weights)
    diff = gt - pred
    per_sample = (weights * diff * diff).sum(axis=1) / (2.0 * VECTOR_SIZE)
    return LossTerms(mean=float(per_sample.mean()), per_sample=per_sample)


def weighted_l2_loss(pred, gt, weights) -> float:
    """The masked loss: on a batch, the mean of the per-sample values."""
    return loss_terms(pred, gt, weights).mean


def loss_grad(pred, gt, weights):
    """dE/dpred: w_i * (pred_i - gt_i) / N, averaged over the batch.

    Shape follows pred; masked slots are exactly zero.
    """
    pred_b, gt_b, weights_b, single = _as_batch(pred, gt, weights)
    grad = weights_b * (pred_b - gt_b) / VECTOR_SIZE / pred_b.shape[0]
    return grad[0] if single else grad


@dataclass
class OptimizerState:
    """Per-tensor velocities for momentum SGD."""

    lr: float
    momentum: float = 0.9
    velocities: list = field(default_factory=list)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")

    @classmethod
    def for_params(cls, params: Parameters, lr: float, momentum: float = 0.9):
        state = cls(lr=lr, momentum=momentum)
        state.velocities = [{k: np.zeros_like(v) for k, v in e.items()} for e in params.layers]
        return state


def sgd_momentum_step(params: Parameters, grads, state: OptimizerState):
    """One classic momentum update: v <- mu*v - lr*g; p <- p + v.

    Parameters and velocities are updated in place; (params, state) is
    returned for chaining. With momentum 0 this is exactly vanilla SGD.
    """
    if len(grads) != len(params.layers):
        raise ValueError(f"got {len(grads)} gradient entries for {len(params.layers)} layers")
    for entry, gentry, ventry in zip(params.layers, grads, state.velocities):
        for key, p in entry.items():
            g = gentry[key]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
            v = ventry[key]
            v *= state.momentum
            v -= state.lr * g.astype(p.dtype, copy=False)
            p += v
    return params, state


def sample_batch(dataset_size: int, batch_size: int, rng) -> np.ndarray:
    """Uniform-with-replacement index draw; deterministic under the rng's seed."""
    if dataset_size < 1:
        raise ValueError("cannot sample from an empty dataset")
    return rng.integers(0, dataset_size, size=batch_size)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    lr: float = 1e-2
    iterations: int = 0
    seed: int = 0
    momentum: float = 0.9
    eval_every: int = 0  # 0 disables periodic validation

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.eval_every < 0:
            raise ConfigError(f"eval cadence must be >= 0, got {self.eval_every}")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data, **overrides):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown training config fields: {sorted(unknown)}")
        merged = dict(data)
        merged.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(**merged)
        except TypeError as exc:
            raise ConfigError(f"invalid training config: {exc}")


# finetuning defaults to a 10x smaller step than training from scratch
PRETRAIN_LR = 1e-2
FINETUNE_LR = 1e-3


@dataclass(frozen=True)
class LogRow:
    iteration: int
    loss: float
    lr: float
    wall_ms: float
    val_metric: float | None = None


def write_log_csv(rows, path):
    """Append-only CSV: iteration,loss,lr,wall_ms[,val_pck]."""
    with_val = any(r.val_metric is not None for r in rows)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["iteration", "loss", "lr", "wall_ms"]
        if with_val:
            header.append("val_pck")
        writer.writerow(header)
        for r in rows:
            row = [r.iteration, f"{r.loss:.8g}", f"{r.lr:g}", f"{r.wall_ms:.3f}"]
            if with_val:
                row.append("" if r.val_metric is None else f"{r.val_metric:.4f}")
            writer.writerow(row)


def train(config: TrainConfig, dataset, init_params: Parameters,
          val_fn=None, start_iteration: int = 0, log_every: int = 1):
    """Run the optimization loop; returns (Checkpoint, list of LogRows).

    `dataset` is a (pixels, targets, weights) triple of stacked arrays.
    `val_fn(params) -> float` is called every `eval_every` iterations when
    provided. A non-finite loss aborts with TrainingDivergedError. The run
    is bit-reproducible for a fixed (config, dataset, initial parameters)
    in single-threaded mode.
    """
    pixels, targets, weights = dataset
    n = pixels.shape[0]
    if config.iterations > 0 and n < 1:
        raise ValueError("cannot train on an empty dataset")
    params = init_params.copy()
    state = OptimizerState.for_params(params, lr=config.lr, momentum=config.momentum)
    rng = np.random.default_rng(config.seed)
    rows = []

    for step in range(config.iterations):
        t0 = time.perf_counter()
        idx = sample_batch(n, config.batch_size, rng)
        batch = pixels[idx]
        out, cache = forward(params, batch)
        terms = loss_terms(out, targets[idx], weights[idx])
        if not np.isfinite(terms.mean):
            raise TrainingDivergedError(
                f"non-finite loss {terms.mean} at iteration {start_iteration + step}; "
                f"check learning rate and data scaling")
        dout = loss_grad(out, targets[idx], weights[idx])
        grads, _ = backward(params, cache, dout)
        sgd_momentum_step(params, grads, state)
        wall_ms = (time.perf_counter() - t0) * 1000.0

        iteration = start_iteration + step + 1
        val = None
        if val_fn is not None and config.eval_every and iteration % config.eval_every == 0:
            val = float(val_fn(params))
        if val is not None or step % log_every == 0 or step == config.iterations - 1:
            rows.append(LogRow(iteration, terms.mean, config.lr, wall_ms, val))

    checkpoint = Checkpoint(params=params,
                            iteration=start_iteration + config.iterations,
                            seed=config.seed)
    return checkpoint, rows
