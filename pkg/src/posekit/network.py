"""Minimal convolutional network engine: config, init, forward, backward.

Layers operate on NHWC float tensors. Forward returns a cache holding every
intermediate needed by the exact backward pass; parameters are plain numpy
arrays grouped per layer. Training runs in float32; float64 parameters are
supported for finite-difference verification.

Checkpoint byte layout (little-endian throughout):

    bytes 0-7   magic "POSECKPT"
    u32         format version (currently 1)
    u32         length of the canonical JSON header, then that many bytes:
                {"iteration": int, "network": <config dict>, "seed": int}
                serialized with sorted keys and compact separators
    u32         tensor count
    per tensor  u16 name length + UTF-8 name ("layer03.w", "layer03.b"),
                u8 ndim, ndim x u32 dims, then float32 data in C order

The file ends exactly after the last tensor; anything shorter or longer is
rejected as corrupt.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CheckpointError, ConfigError

CHECKPOINT_MAGIC = b"POSECKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if self.out_channels < 1 or self.kernel < 1 or self.stride < 1 or self.pad < 0:
            raise ValueError(f"invalid conv spec: {self!r}")


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    kernel: int
    stride: int

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1:
            raise ValueError(f"invalid maxpool spec: {self!r}")


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class FullyConnected:
    out_features: int

    def __post_init__(self):
        if self.out_features < 1:
            raise ValueError(f"invalid fully-connected spec: {self!r}")


_KINDS = {"conv": Conv, "relu": ReLU, "maxpool": MaxPool, "flatten": Flatten, "fc": FullyConnected}
_KIND_OF = {cls: kind for kind, cls in _KINDS.items()}


def conv_output_side(side, kernel, stride, pad):
    return (side + 2 * pad - kernel) // stride + 1


@dataclass(frozen=True)
class NetworkConfig:
    """Ordered layer stack plus the input/output contract."""

    input_side: int
    input_channels: int
    layers: tuple
    output_dim: int = 26

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    def layer_shapes(self):
        """Per-layer output shapes, starting from the input shape.

        Raises ConfigError when any layer cannot be applied to its input.
        """
        if self.input_side < 1 or self.input_channels < 1 or self.output_dim < 1:
            raise ConfigError(f"invalid input/output contract in {self!r}")
        shape = (self.input_side, self.input_side, self.input_channels)
        shapes = []
        for i, spec in enumerate(self.layers):
            where = f"layer {i} ({type(spec).__name__})"
            if isinstance(spec, (Conv, MaxPool)):
                if len(shape) != 3:
                    raise ConfigError(f"{where}: needs a spatial input, got shape {shape}")
                pad = spec.pad if isinstance(spec, Conv) else 0
                out_h = conv_output_side(shape[0], spec.kernel, spec.stride, pad)
                out_w = conv_output_side(shape[1], spec.kernel, spec.stride, pad)
                if out_h < 1 or out_w < 1:
                    raise ConfigError(f"{where}: kernel {spec.kernel} does not fit input {shape}")
                channels = spec.out_channels if isinstance(spec, Conv) else shape[2]
                shape = (out_h, out_w, channels)
            elif isinstance(spec, ReLU):
                pass
            elif isinstance(spec, Flatten):
                if len(shape) != 3:
                    raise ConfigError(f"{where}: needs a spatial input, got shape {shape}")
                shape = (shape[0] * shape[1] * shape[2],)
            elif isinstance(spec, FullyConnected):
                if len(shape) != 1:
                    raise ConfigError(f"{where}: needs a flat input, got shape {shape}")
                shape = (spec.out_features,)
            else:
                raise ConfigError(f"{where}: unknown layer spec")
            shapes.append(shape)
        if shapes and shapes[-1] != (self.output_dim,):
            raise ConfigError(
                f"network emits shape {shapes[-1]} but output_dim is {self.output_dim}")
        if not shapes:
            raise ConfigError("network has no layers")
        return shapes

    def to_dict(self):
        layers = []
        for spec in self.layers:
            entry = {"kind": _KIND_OF[type(spec)]}
            entry.update(asdict(spec))
            layers.append(entry)
        return {
            "input_side": self.input_side,
            "input_channels": self.input_channels,
            "output_dim": self.output_dim,
            "layers": layers,
        }

    @classmethod
    def from_dict(cls, data):
        try:
            layers = []
            for entry in data["layers"]:
                entry = dict(entry)
                kind = entry.pop("kind")
                if kind not in _KINDS:
                    raise ConfigError(f"unknown layer kind {kind!r}")
                layers.append(_KINDS[kind](**entry))
            config = cls(
                input_side=int(data["input_side"]),
                input_channels=int(data["input_channels"]),
                layers=tuple(layers),
                output_dim=int(data["output_dim"]),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid network config: {exc}")
        config.layer_shapes()
        return config


# Named architectures. Kernel/stride/depth values are engineering choices for
# this codebase, picked to balance accuracy against CPU training time.
NETWORK_PRESETS = {
    # full-size stack: five conv layers with pooling after conv 1, 2, and 5,
    # then three fully connected layers ending in the 26-way regression
    "paper-224": NetworkConfig(
        input_side=224,
        input_channels=3,
        layers=(
            Conv(96, kernel=11, stride=4, pad=2), ReLU(), MaxPool(2, 2),
            Conv(256, kernel=5, stride=1, pad=2), ReLU(), MaxPool(2, 2),
            Conv(384, kernel=3, stride=1, pad=1), ReLU(),
            Conv(384, kernel=3, stride=1, pad=1), ReLU(),
            Conv(256, kernel=3, stride=1, pad=1), ReLU(), MaxPool(2, 2),
            Flatten(), FullyConnected(4096), ReLU(),
            FullyConnected(4096), ReLU(), FullyConnected(26),
        ),
    ),
    # desk-scale stack for CPU experiments: 3 conv + 2 fc, ~90k parameters
    "desk-64": NetworkConfig(
        input_side=64,
        input_channels=3,
        layers=(
            Conv(12, kernel=3, stride=2, pad=1), ReLU(), MaxPool(2, 2),
            Conv(24, kernel=3, stride=1, pad=1), ReLU(), MaxPool(2, 2),
            Conv(48, kernel=3, stride=1, pad=1), ReLU(), MaxPool(2, 2),
            Flatten(), FullyConnected(96), ReLU(), FullyConnected(26),
        ),
    ),
}


def preset_network(name: str) -> NetworkConfig:
    if name not in NETWORK_PRESETS:
        raise ConfigError(f"unknown network preset {name!r}; available: {sorted(NETWORK_PRESETS)}")
    return NETWORK_PRESETS[name]


@dataclass
class Parameters:
    """Learnable tensors for every layer of a config.

    `layers[i]` is a dict with keys "w" and "b" for parameterized layers and
    an empty dict otherwise.
    """

    config: NetworkConfig
    layers: list = field(default_factory=list)

    @property
    def dtype(self):
        for entry in self.layers:
            if "w" in entry:
                return entry["w"].dtype
        return np.dtype(np.float32)

    def copy(self):
        return Parameters(self.config, [{k: v.copy() for k, v in e.items()} for e in self.layers])

    def astype(self, dtype):
        return Parameters(self.config,
                          [{k: v.astype(dtype) for k, v in e.items()} for e in self.layers])

    def num_params(self):
        return int(sum(v.size for e in self.layers for v in e.values()))

    def iter_tensors(self):
        """(name, array) pairs in a stable order: layer index, then w, then b."""
        for i, entry in enumerate(self.layers):
            for key in ("w", "b"):
                if key in entry:
                    yield f"layer{i:02d}.{key}", entry[key]

    def expected_shapes(self):
        """Tensor name -> shape implied by the config; the load-time contract."""
        shapes = {}
        in_shape = (self.config.input_side, self.config.input_side, self.config.input_channels)
        for i, (spec, out_shape) in enumerate(zip(self.config.layers, self.config.layer_shapes())):
            if isinstance(spec, Conv):
                shapes[f"layer{i:02d}.w"] = (spec.kernel, spec.kernel, in_shape[2], spec.out_channels)
                shapes[f"layer{i:02d}.b"] = (spec.out_channels,)
            elif isinstance(spec, FullyConnected):
                shapes[f"layer{i:02d}.w"] = (in_shape[0], spec.out_features)
                shapes[f"layer{i:02d}.b"] = (spec.out_features,)
            in_shape = out_shape
        return shapes


def init(config: NetworkConfig, seed: int, dtype=np.float32) -> Parameters:
    """Xavier-uniform weights (limit sqrt(6 / (fan_in + fan_out))), zero biases.

    Deterministic for a given seed: draws happen in layer order.
    """
    shapes = config.layer_shapes()
    rng = np.random.default_rng(seed)
    layers = []
    in_shape = (config.input_side, config.input_side, config.input_channels)
    for spec, out_shape in zip(config.layers, shapes):
        if isinstance(spec, Conv):
            fan_in = spec.kernel * spec.kernel * in_shape[2]
            fan_out = spec.kernel * spec.kernel * spec.out_channels
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit,
                            size=(spec.kernel, spec.kernel, in_shape[2], spec.out_channels))
            layers.append({"w": w.astype(dtype), "b": np.zeros(spec.out_channels, dtype=dtype)})
        elif isinstance(spec, FullyConnected):
            fan_in, fan_out = in_shape[0], spec.out_features
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            layers.append({"w": w.astype(dtype), "b": np.zeros(spec.out_features, dtype=dtype)})
        else:
            layers.append({})
        in_shape = out_shape
    return Parameters(config, layers)


def _gather_windows(x, kernel, stride, out_h, out_w):
    """(B, OH, OW, k, k, C) view-copies of each sliding window."""
    b, _, _, c = x.shape
    cols = np.empty((b, out_h, out_w, kernel, kernel, c), dtype=x.dtype)
    for ki in range(kernel):
        for kj in range(kernel):
            cols[:, :, :, ki, kj, :] = x[:, ki:ki + stride * out_h:stride,
                                         kj:kj + stride * out_w:stride, :]
    return cols


def _conv_forward(spec: Conv, entry, x):
    b, h, w, c = x.shape
    k, s, p = spec.kernel, spec.stride, spec.pad
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
    out_h = conv_output_side(h, k, s, p)
    out_w = conv_output_side(w, k, s, p)
    cols = _gather_windows(xp, k, s, out_h, out_w).reshape(b * out_h * out_w, k * k * c)
    out = cols @ entry["w"].reshape(k * k * c, -1) + entry["b"]
    return out.reshape(b, out_h, out_w, spec.out_channels), (x.shape, cols)


def _conv_backward(spec: Conv, entry, cache, dout):
    x_shape, cols = cache
    b, h, w, c = x_shape
    k, s, p = spec.kernel, spec.stride, spec.pad
    _, out_h, out_w, f = dout.shape
    dflat = dout.reshape(b * out_h * out_w, f)
    dw = (cols.T @ dflat).reshape(k, k, c, f)
    db = dflat.sum(axis=0)
    dcols = (dflat @ entry["w"].reshape(k * k * c, f).T).reshape(b, out_h, out_w, k, k, c)
    dxp = np.zeros((b, h + 2 * p, w + 2 * p, c), dtype=dout.dtype)
    for ki in range(k):
        for kj in range(k):
            dxp[:, ki:ki + s * out_h:s, kj:kj + s * out_w:s, :] += dcols[:, :, :, ki, kj, :]
    dx = dxp[:, p:p + h, p:p + w, :] if p else dxp
    return {"w": dw, "b": db}, dx


def _maxpool_forward(spec: MaxPool, x):
    b, h, w, c = x.shape
    k, s = spec.kernel, spec.stride
    out_h = conv_output_side(h, k, s, 0)
    out_w = conv_output_side(w, k, s, 0)
    windows = _gather_windows(x, k, s, out_h, out_w).reshape(b, out_h, out_w, k * k, c)
    # argmax returns the first maximal element, i.e. row-major within the window
    amax = windows.argmax(axis=3)
    out = np.take_along_axis(windows, amax[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return out, (x.shape, amax)


def _maxpool_backward(spec: MaxPool, cache, dout):
    x_shape, amax = cache
    k, s = spec.kernel, spec.stride
    _, out_h, out_w, _ = dout.shape
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for idx in range(k * k):
        contrib = dout * (amax == idx)
        ki, kj = divmod(idx, k)
        dx[:, ki:ki + s * out_h:s, kj:kj + s * out_w:s, :] += contrib
    return dx


def _layer_forward(spec, entry, x):
    if isinstance(spec, Conv):
        return _conv_forward(spec, entry, x)
    if isinstance(spec, ReLU):
        mask = x > 0
        return x * mask, mask
    if isinstance(spec, MaxPool):
        return _maxpool_forward(spec, x)
    if isinstance(spec, Flatten):
        return x.reshape(x.shape[0], -1), x.shape
    if isinstance(spec, FullyConnected):
        return x @ entry["w"] + entry["b"], x
    raise ConfigError(f"unknown layer spec {spec!r}")


def _layer_backward(spec, entry, cache, dout):
    if isinstance(spec, Conv):
        return _conv_backward(spec, entry, cache, dout)
    if isinstance(spec, ReLU):
        return {}, dout * cache
    if isinstance(spec, MaxPool):
        return {}, _maxpool_backward(spec, cache, dout)
    if isinstance(spec, Flatten):
        return {}, dout.reshape(cache)
    if isinstance(spec, FullyConnected):
        x = cache
        return {"w": x.T @ dout, "b": dout.sum(axis=0)}, dout @ entry["w"].T
    raise ConfigError(f"unknown layer spec {spec!r}")


def forward(params: Parameters, batch, start_layer: int = 0):
    """Run the network on a batch; returns (outputs, cache).

    The batch must be (B, side, side, channels) when starting from layer 0;
    `start_layer` lets callers resume from a cached intermediate activation.
    The cache holds one entry per executed layer, consumed by backward.
    """
    config = params.config
    x = np.asarray(batch)
    if start_layer == 0:
        expected = (config.input_side, config.input_side, config.input_channels)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ValueError(f"batch shape {x.shape} does not match input {expected}")
    x = x.astype(params.dtype, copy=False)
    cache = []
    for spec, entry in list(zip(config.layers, params.layers))[start_layer:]:
        x, c = _layer_forward(spec, entry, x)
        cache.append(c)
    return x, cache


def backward(params: Parameters, cache, out_grad):
    """Exact gradients of sum(outputs * out_grad) w.r.t. parameters and input.

    Returns (param_grads, input_grad) where param_grads mirrors
    params.layers. The cache must come from a matching forward call.
    """
    config = params.config
    if len(cache) != len(config.layers):
        raise ValueError(f"cache holds {len(cache)} entries for {len(config.layers)} layers")
    dout = np.asarray(out_grad, dtype=params.dtype)
    grads = [None] * len(config.layers)
    for i in range(len(config.layers) - 1, -1, -1):
        grads[i], dout = _layer_backward(config.layers[i], params.layers[i], cache[i], dout)
    return grads, dout


@dataclass
class Checkpoint:
    """A persisted snapshot: parameters plus minimal training metadata."""

    params: Parameters
    iteration: int = 0
    seed: int = 0

    @property
    def config(self):
        return self.params.config


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    header = {
        "iteration": int(checkpoint.iteration),
        "network": checkpoint.config.to_dict(),
        "seed": int(checkpoint.seed),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tensors = list(checkpoint.params.iter_tensors())
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(np.uint32(CHECKPOINT_VERSION).tobytes())
        fh.write(np.uint32(len(header_bytes)).tobytes())
        fh.write(header_bytes)
        fh.write(np.uint32(len(tensors)).tobytes())
        for name, tensor in tensors:
            data = np.ascontiguousarray(tensor, dtype="<f4")
            name_bytes = name.encode("utf-8")
            fh.write(np.uint16(len(name_bytes)).tobytes())
            fh.write(name_bytes)
            fh.write(np.uint8(data.ndim).tobytes())
            fh.write(np.asarray(data.shape, dtype="<u4").tobytes())
            fh.write(data.tobytes())


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"corrupt checkpoint: truncated while reading {what}")
    return data


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint, validating magic, version, layout, and shapes."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"cannot open checkpoint: {exc}")
    with fh:
        magic = _read_exact(fh, len(CHECKPOINT_MAGIC), "magic")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"not a checkpoint file (bad magic {magic!r})")
        version = int(np.frombuffer(_read_exact(fh, 4, "version"), "<u4")[0])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {version}; this build reads "
                f"version {CHECKPOINT_VERSION}")
        header_len = int(np.frombuffer(_read_exact(fh, 4, "header length"), "<u4")[0])
        try:
            header = json.loads(_read_exact(fh, header_len, "header").decode("utf-8"))
            config = NetworkConfig.from_dict(header["network"])
            iteration = int(header["iteration"])
            seed = int(header["seed"])
        except (ValueError, KeyError, ConfigError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}")
        tensor_count = int(np.frombuffer(_read_exact(fh, 4, "tensor count"), "<u4")[0])
        tensors = {}
        for _ in range(tensor_count):
            name_len = int(np.frombuffer(_read_exact(fh, 2, "tensor name length"), "<u2")[0])
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            ndim = int(np.frombuffer(_read_exact(fh, 1, "tensor rank"), "u1")[0])
            shape = tuple(np.frombuffer(_read_exact(fh, 4 * ndim, "tensor shape"), "<u4").tolist())
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            data = np.frombuffer(_read_exact(fh, 4 * count, f"tensor {name}"), "<f4")
            tensors[name] = data.reshape(shape).astype(np.float32)
        if fh.read(1):
            raise CheckpointError("corrupt checkpoint: trailing bytes after last tensor")

    params = Parameters(config, [{} for _ in config.layers])
    expected = params.expected_shapes()
    if set(expected) != set(tensors):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise CheckpointError(
            f"checkpoint tensors disagree with config (missing {missing}, unexpected {extra})")
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise CheckpointError(
                f"tensor {name} has shape {tensors[name].shape}, config implies {shape}")
        idx = int(name[len("layer"):name.index(".")])
        params.layers[idx][name.split(".")[1]] = tensors[name]
    return Checkpoint(params=params, iteration=iteration, seed=seed)
