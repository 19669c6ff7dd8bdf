"""Finite-difference verification of the network's parameter gradients.

Central differences of the training loss are compared against backprop for
every learnable scalar. Layers upstream of the perturbed one are unaffected
by the perturbation, so their activations are computed once and cached;
each probe then re-runs only the network suffix. That keeps a full sweep
over ~10^5 parameters in the tens of seconds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import NetworkConfig, Parameters, _layer_forward, backward, forward, init
from .skeleton import NUM_JOINTS
from .training import loss_grad, weighted_l2_loss

DEFAULT_EPSILON = 1e-5


def relative_error(a, b, floor=1e-6):
    """|a - b| / max(|a|, |b|, floor); the floor guards near-zero gradients."""
    return abs(a - b) / max(abs(a), abs(b), floor)


def make_gradcheck_problem(config: NetworkConfig, seed: int, batch_size: int = 2):
    """Random float64 parameters plus a random batch with a random joint mask."""
    params = init(config, seed, dtype=np.float64)
    rng = np.random.default_rng((seed, 1))
    side, channels = config.input_side, config.input_channels
    batch = rng.uniform(-1.0, 1.0, size=(batch_size, side, side, channels))
    gt = rng.uniform(0.0, 1.0, size=(batch_size, config.output_dim))
    joint_mask = rng.integers(0, 2, size=(batch_size, NUM_JOINTS)).astype(np.float64)
    weights = np.repeat(joint_mask, 2, axis=1)
    return params, batch, gt, weights


def analytic_param_grads(params: Parameters, batch, gt, weights):
    """Backprop gradients of the batch loss w.r.t. every parameter tensor."""
    out, cache = forward(params, batch)
    grads, _ = backward(params, cache, loss_grad(out, gt, weights))
    return grads


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_err: float
    checked: int
    worst: str  # human-readable location of the worst parameter

    @property
    def passed(self):
        return self.max_rel_err < 1e-4


def check_param_grads(params: Parameters, batch, gt, weights,
                      eps: float = DEFAULT_EPSILON, limit_per_tensor=None,
                      rng=None) -> GradCheckResult:
    """Compare backprop against central differences for each parameter.

    With limit_per_tensor set, a random subset of each tensor is probed
    (rng required); otherwise every scalar is. Parameters should be float64
    for the stated tolerances to be meaningful.
    """
    analytic = analytic_param_grads(params, batch, gt, weights)

    # activations entering each layer, computed once with clean parameters
    acts = [np.asarray(batch).astype(params.dtype, copy=False)]
    for layer_idx in range(len(params.config.layers)):
        x, _ = _layer_forward(params.config.layers[layer_idx], params.layers[layer_idx],
                              acts[-1])
        acts.append(x)

    max_rel = 0.0
    worst = "none"
    checked = 0
    for layer_idx, entry in enumerate(params.layers):
        for key, tensor in entry.items():
            flat = tensor.reshape(-1)
            gflat = analytic[layer_idx][key].reshape(-1)
            if limit_per_tensor is not None and flat.size > limit_per_tensor:
                if rng is None:
                    raise ValueError("limit_per_tensor requires an rng")
                indices = rng.choice(flat.size, size=limit_per_tensor, replace=False)
            else:
                indices = range(flat.size)
            for i in indices:
                old = flat[i]
                flat[i] = old + eps
                out, _ = forward(params, acts[layer_idx], start_layer=layer_idx)
                loss_plus = weighted_l2_loss(out, gt, weights)
                flat[i] = old - eps
                out, _ = forward(params, acts[layer_idx], start_layer=layer_idx)
                loss_minus = weighted_l2_loss(out, gt, weights)
                flat[i] = old
                fd = (loss_plus - loss_minus) / (2.0 * eps)
                rel = relative_error(gflat[i], fd)
                checked += 1
                if rel > max_rel:
                    max_rel = rel
                    worst = (f"layer{layer_idx:02d}.{key}[{i}] "
                             f"analytic={gflat[i]:.6e} fd={fd:.6e}")
    return GradCheckResult(max_rel_err=max_rel, checked=checked, worst=worst)


def run_gradcheck(config: NetworkConfig, seed: int, eps: float = DEFAULT_EPSILON,
                  batch_size: int = 2, limit_per_tensor=None) -> GradCheckResult:
    """Build a random problem for `config` and sweep its parameter gradients."""
    params, batch, gt, weights = make_gradcheck_problem(config, seed, batch_size)
    rng = np.random.default_rng((seed, 2)) if limit_per_tensor is not None else None
    return check_param_grads(params, batch, gt, weights, eps=eps,
                             limit_per_tensor=limit_per_tensor, rng=rng)
