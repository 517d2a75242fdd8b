"""Pseudo-spectrum network: layers, reverse-mode gradients, Adam, training.

The network maps ``n`` complex samples, flattened to ``2n`` reals
``(Re y_1, Im y_1, ..., Re y_n, Im y_n)``, to ``g`` pseudo-spectrum bins::

    Dense(2n -> h) -> BatchNorm -> ReLU -> reshape (1, h)
    [CircConv1D(-> c, size k) -> BatchNorm -> ReLU] x depth
    flatten (c * h) -> Dense(-> g) [-> ReLU]

Arrays are numpy; float64 for gradient checks, float32 for training speed.
"""
from __future__ import annotations

import copy
import json
import math
import struct
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import kernels
from .errors import ConfigError, FormatError, NumericError, TrainingError
from .pseudospec import KernelSpec, rasterize_many

MODEL_MAGIC = b"PSNET1"
MODEL_VERSION = 1


def _glorot(rng, shape, fan_in, fan_out, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self._cache = None

    def spec(self):
        return {"kind": self.kind}

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{self.kind}: backward called without a train-mode forward")
        return self._cache

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Dense(Layer):
    """Affine map on the flattened trailing dimensions."""

    kind = "dense"

    def __init__(self, in_dim, out_dim, bias=True, rng=None, dtype=np.float64):
        super().__init__()
        self.in_dim, self.out_dim, self.bias = in_dim, out_dim, bias
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = _glorot(rng, (in_dim, out_dim), in_dim, out_dim, dtype)
        if bias:
            self.params["b"] = np.zeros(out_dim, dtype=dtype)

    def spec(self):
        return {"kind": self.kind, "in_dim": self.in_dim, "out_dim": self.out_dim, "bias": self.bias}

    def forward(self, x, train=False):
        x2 = x.reshape(x.shape[0], -1)
        if x2.shape[1] != self.in_dim:
            raise ValueError(f"dense: expected width {self.in_dim}, got {x2.shape[1]}")
        self._cache = (x2, x.shape) if train else None
        y = x2 @ self.params["W"]
        if self.bias:
            y += self.params["b"]
        return y

    def backward(self, dy):
        x2, shape = self._need_cache()
        self.grads["W"] = x2.T @ dy
        if self.bias:
            self.grads["b"] = dy.sum(axis=0)
        return (dy @ self.params["W"].T).reshape(shape)


class CircConv1D(Layer):
    """Convolution with circular padding; output width equals input width."""

    kind = "circconv"

    def __init__(self, in_ch, out_ch, filter_size=3, rng=None, dtype=np.float64):
        super().__init__()
        if filter_size % 2 == 0:
            raise ConfigError("filter_size must be odd")
        self.in_ch, self.out_ch, self.filter_size = in_ch, out_ch, filter_size
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = _glorot(rng, (out_ch, in_ch, filter_size),
                                   in_ch * filter_size, out_ch * filter_size, dtype)
        self.params["b"] = np.zeros(out_ch, dtype=dtype)

    def spec(self):
        return {"kind": self.kind, "in_ch": self.in_ch, "out_ch": self.out_ch,
                "filter_size": self.filter_size}

    def forward(self, x, train=False):
        if x.ndim != 3 or x.shape[1] != self.in_ch:
            raise ValueError(f"circconv: expected (batch, {self.in_ch}, width), got {x.shape}")
        x = np.ascontiguousarray(x)
        self._cache = x if train else None
        return kernels.circconv_forward(x, self.params["W"], self.params["b"])

    def backward(self, dy):
        x = self._need_cache()
        dx, self.grads["W"], self.grads["b"] = kernels.circconv_backward(
            x, self.params["W"], np.ascontiguousarray(dy))
        return dx


class BatchNorm(Layer):
    """Per-channel normalization over the batch (and width, for 3-D input)."""

    kind = "batchnorm"

    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=np.float64):
        super().__init__()
        if not eps > 0:
            raise ConfigError("batch-norm eps must be positive")
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)

    def spec(self):
        return {"kind": self.kind, "channels": self.channels, "eps": self.eps,
                "momentum": self.momentum}

    def _shape(self, x):
        if x.ndim == 2:
            return (0,), (1, -1)
        return (0, 2), (1, -1, 1)

    def forward(self, x, train=False):
        axes, bshape = self._shape(x)
        gamma = self.params["gamma"].reshape(bshape)
        beta = self.params["beta"].reshape(bshape)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
            mom = self.momentum
            self.buffers["running_mean"] = ((1 - mom) * self.buffers["running_mean"] + mom * mean).astype(x.dtype)
            self.buffers["running_var"] = ((1 - mom) * self.buffers["running_var"] + mom * var).astype(x.dtype)
            self._cache = (xhat, inv_std, axes, bshape)
        else:
            inv_std = 1.0 / np.sqrt(self.buffers["running_var"] + self.eps)
            xhat = (x - self.buffers["running_mean"].reshape(bshape)) * inv_std.reshape(bshape)
            self._cache = None
        return gamma * xhat + beta

    def backward(self, dy):
        xhat, inv_std, axes, bshape = self._need_cache()
        count = dy.size // self.channels
        self.grads["gamma"] = (dy * xhat).sum(axis=axes)
        self.grads["beta"] = dy.sum(axis=axes)
        scale = (self.params["gamma"] * inv_std / count).reshape(bshape)
        return scale * (count * dy - self.grads["beta"].reshape(bshape)
                        - xhat * self.grads["gamma"].reshape(bshape))


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        mask = x > 0
        self._cache = mask if train else None
        return x * mask

    def backward(self, dy):
        return dy * self._need_cache()


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(shape)

    def spec(self):
        return {"kind": self.kind, "shape": list(self.shape)}

    def forward(self, x, train=False):
        self._cache = x.shape if train else None
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, dy):
        return dy.reshape(self._need_cache())


def layer_from_spec(spec, dtype=np.float64):
    kind = spec["kind"]
    if kind == "dense":
        return Dense(spec["in_dim"], spec["out_dim"], spec["bias"], dtype=dtype)
    if kind == "circconv":
        return CircConv1D(spec["in_ch"], spec["out_ch"], spec["filter_size"], dtype=dtype)
    if kind == "batchnorm":
        return BatchNorm(spec["channels"], spec["eps"], spec["momentum"], dtype=dtype)
    if kind == "relu":
        return ReLU()
    if kind == "reshape":
        return Reshape(spec["shape"])
    raise FormatError(f"unknown layer kind {kind!r}")


@dataclass(frozen=True)
class ArchConfig:
    n: int = 50
    g: int = 1000
    depth: int = 20
    channels: int = 8
    hidden: int = 100
    filter_size: int = 3
    relu_head: bool = False
    normalize_input: bool = True
    dense_activation: bool = False  # batch-norm and ReLU between the first dense layer and the convs
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.n < 1 or self.g < 2 or self.depth < 0 or self.channels < 1 or self.hidden < 1:
            raise ConfigError(f"invalid architecture {self}")
        if self.filter_size % 2 == 0:
            raise ConfigError("filter_size must be odd")

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigError(f"unknown arch fields: {sorted(extra)}")
        return cls(**d)


def to_input(samples):
    """Complex ``(B, n)`` samples to interleaved real ``(B, 2n)``."""
    samples = np.atleast_2d(samples)
    out = np.empty((samples.shape[0], 2 * samples.shape[1]))
    out[:, 0::2] = samples.real
    out[:, 1::2] = samples.imag
    return out


class Psnet:
    def __init__(self, arch, layers, dtype=np.float32):
        self.arch = arch
        self.layers = layers
        self.dtype = np.dtype(dtype)

    @classmethod
    def build(cls, arch=ArchConfig(), seed=0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        h, c, k = arch.hidden, arch.channels, arch.filter_size
        bn = dict(eps=arch.bn_eps, momentum=arch.bn_momentum, dtype=dtype)
        layers = [Dense(2 * arch.n, h, rng=rng, dtype=dtype)]
        if arch.dense_activation:
            layers += [BatchNorm(h, **bn), ReLU()]
        layers.append(Reshape((1, h)))
        cin = 1
        for _ in range(arch.depth):
            layers += [CircConv1D(cin, c, k, rng=rng, dtype=dtype), BatchNorm(c, **bn), ReLU()]
            cin = c
        layers.append(Dense(cin * h, arch.g, rng=rng, dtype=dtype))
        if arch.relu_head:
            layers.append(ReLU())
        return cls(arch, layers, dtype)

    def prepare(self, X):
        X = np.asarray(X, dtype=self.dtype)
        if X.ndim != 2 or X.shape[1] != 2 * self.arch.n:
            raise ValueError(f"expected input of shape (batch, {2 * self.arch.n}), got {X.shape}")
        if self.arch.normalize_input:
            rms = np.sqrt(np.mean(X * X, axis=1, keepdims=True))
            X = X / np.where(rms > 0, rms, 1).astype(self.dtype)
        return X

    def forward(self, X, mode="eval"):
        if mode not in ("train", "eval"):
            raise ValueError("mode must be 'train' or 'eval'")
        out = self.prepare(X)
        for layer in self.layers:
            out = layer.forward(out, train=(mode == "train"))
        return out

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def loss_and_grad(self, X, T):
        """Train-mode forward plus backward for ``(1/B) sum ||T - out||^2``."""
        out = self.forward(X, mode="train")
        diff = out - np.asarray(T, dtype=self.dtype)
        loss = float(np.sum(diff.astype(np.float64) ** 2)) / X.shape[0]
        self.backward((2.0 / X.shape[0]) * diff)
        return loss

    def predict(self, X, batch_size=1024):
        X = np.asarray(X)
        out = np.empty((X.shape[0], self.arch.g), dtype=self.dtype)
        for s in range(0, X.shape[0], batch_size):
            out[s:s + batch_size] = self.forward(X[s:s + batch_size], mode="eval")
        return out

    def named_params(self):
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params.items()}

    def named_grads(self):
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.grads.items()}

    def named_buffers(self):
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.buffers.items()}

    def state(self):
        """Copies of all parameters and buffers, keyed by qualified name."""
        d = {k: v.copy() for k, v in self.named_params().items()}
        d.update({k: v.copy() for k, v in self.named_buffers().items()})
        return d

    def load_state(self, state):
        for i, layer in enumerate(self.layers):
            for store in (layer.params, layer.buffers):
                for k in store:
                    store[k] = np.array(state[f"{i}.{k}"], dtype=self.dtype)

    def clone(self):
        return copy.deepcopy(self)


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("adam betas must lie in (0, 1)")


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params):
        return cls(0, {k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params, grads, state, config):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {k} at step {state.t + 1}")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, p in params.items():
        m, v = state.m[k], state.v[k]
        if m.shape != p.shape or v.shape != p.shape:
            raise ValueError(f"adam state shape mismatch for {k}")
        g = np.ascontiguousarray(grads[k], dtype=p.dtype)
        kernels.adam_update(p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
                            config.learning_rate, b1, b2, config.eps, c1, c2)
    return params, state


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 50
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    dtype: str = "float32"
    half_width: float | None = None  # target kernel; 1/n when unset
    final_learning_rate: float | None = None  # cosine decay target; constant when unset

    def __post_init__(self):
        if self.batch_size < 2 or self.epochs < 0:
            raise ConfigError("need batch_size >= 2 and epochs >= 0")
        if self.final_learning_rate is not None and not self.final_learning_rate > 0:
            raise ConfigError("final_learning_rate must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        self.adam  # validates

    @property
    def adam(self):
        return AdamConfig(self.learning_rate, self.beta1, self.beta2, self.eps)

    def learning_rate_at(self, epoch):
        """Rate used throughout ``epoch`` (1-based)."""
        lo = self.final_learning_rate
        if lo is None or self.epochs <= 1:
            return self.learning_rate
        frac = (epoch - 1) / (self.epochs - 1)
        return lo + 0.5 * (self.learning_rate - lo) * (1 + math.cos(math.pi * frac))

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigError(f"unknown train fields: {sorted(extra)}")
        return cls(**d)


@dataclass
class EpochStats:
    epoch: int
    train_mse: float
    val_mse: float


@dataclass
class TrainResult:
    model: Psnet  # best validation epoch
    last: Psnet
    curve: list
    adam: AdamState
    best_epoch: int


def training_arrays(dataset, g, half_width=None, dtype=np.float32):
    """Inputs and rasterized targets for a dataset."""
    kernel = KernelSpec(half_width if half_width is not None else 1.0 / dataset.config.n)
    X = to_input(dataset.samples).astype(dtype)
    T = rasterize_many(dataset.freq_lists, kernel, g, dtype=dtype)
    return X, T


def evaluate_mse(model, X, T, batch_size=1024):
    """Mean squared error per bin, eval mode."""
    total = 0.0
    for s in range(0, X.shape[0], batch_size):
        out = model.forward(X[s:s + batch_size], mode="eval")
        total += float(np.sum((out - T[s:s + batch_size]).astype(np.float64) ** 2))
    return total / T.size


def train(model, cfg, train_data, val_data, resume=None, on_epoch=None):
    """Fit ``model`` with Adam on ``(X, T)`` arrays.

    ``train_data`` and ``val_data`` are ``(X, T)`` pairs from
    ``training_arrays``. ``resume`` is a ``Checkpoint``; training then picks
    up after its last completed epoch and reproduces the uninterrupted run.
    ``on_epoch(stats, model, adam, best)`` is called after every epoch.
    """
    Xtr, Ttr = train_data
    Xva, Tva = val_data
    if resume is not None:
        model = resume.model
    if len(Xtr) == 0 or len(Xva) == 0:
        raise ConfigError("training and validation sets must be nonempty")
    if Ttr.shape[1] != model.arch.g or Xtr.shape[1] != 2 * model.arch.n:
        raise ConfigError("dataset shape does not match the model architecture")
    if resume is not None:
        adam = resume.adam
        curve = list(resume.curve)
        best_state, best_val, best_epoch = resume.best_state, resume.best_val, resume.best_epoch
        start = resume.epoch + 1
    else:
        adam = AdamState.zeros_like(model.named_params())
        curve, best_state, best_val, best_epoch, start = [], None, math.inf, 0, 1
    N = Xtr.shape[0]
    bs = cfg.batch_size
    for epoch in range(start, cfg.epochs + 1):
        perm = np.random.default_rng([cfg.seed, epoch]).permutation(N)
        adam_cfg = replace(cfg.adam, learning_rate=cfg.learning_rate_at(epoch))
        total, seen = 0.0, 0
        for bi, s in enumerate(range(0, N, bs)):
            idx = perm[s:s + bs]
            if idx.size < 2:
                break
            loss = model.loss_and_grad(Xtr[idx], Ttr[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            try:
                adam_step(model.named_params(), model.named_grads(), adam, adam_cfg)
            except NumericError as exc:
                raise TrainingError(f"epoch {epoch}, batch {bi}: {exc}") from exc
            total += loss * idx.size
            seen += idx.size
        val = evaluate_mse(model, Xva, Tva)
        if not math.isfinite(val):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        stats = EpochStats(epoch, total / seen / model.arch.g, val)
        curve.append(stats)
        if val < best_val:
            best_val, best_state, best_epoch = val, model.state(), epoch
        if on_epoch is not None:
            on_epoch(stats, model, adam, Checkpoint(model, adam, epoch, curve, best_state,
                                                    best_val, best_epoch))
    best = model.clone()
    if best_state is not None:
        best.load_state(best_state)
    return TrainResult(best, model, curve, adam, best_epoch)


@dataclass
class Checkpoint:
    model: Psnet
    adam: AdamState
    epoch: int
    curve: list
    best_state: dict | None
    best_val: float
    best_epoch: int


def _write(path, header, tensors):
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC + bytes([MODEL_VERSION]) + struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _model_header(model):
    return {"arch": asdict(model.arch), "dtype": model.dtype.name,
            "layers": [layer.spec() for layer in model.layers]}


def save_model(path, model):
    tensors = list(model.state().items())
    header = _model_header(model)
    header["tensors"] = [{"name": k, "shape": list(v.shape)} for k, v in tensors]
    _write(path, header, tensors)


def save_checkpoint(path, ckpt):
    tensors = list(ckpt.model.state().items())
    tensors += [(f"adam.m.{k}", v) for k, v in ckpt.adam.m.items()]
    tensors += [(f"adam.v.{k}", v) for k, v in ckpt.adam.v.items()]
    if ckpt.best_state is not None:
        tensors += [(f"best.{k}", v) for k, v in ckpt.best_state.items()]
    header = _model_header(ckpt.model)
    header["tensors"] = [{"name": k, "shape": list(v.shape)} for k, v in tensors]
    header["train_state"] = {
        "epoch": ckpt.epoch, "adam_t": ckpt.adam.t, "best_val": ckpt.best_val,
        "best_epoch": ckpt.best_epoch, "curve": [asdict(s) for s in ckpt.curve],
    }
    _write(path, header, tensors)


def _read(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:6] != MODEL_MAGIC:
        raise FormatError(f"{path}: not a model file (bad magic)")
    if len(raw) < 11:
        raise FormatError(f"{path}: truncated header")
    if raw[6] != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported model version {raw[6]}")
    (hlen,) = struct.unpack("<I", raw[7:11])
    if len(raw) < 11 + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[11:11 + hlen])
    except ValueError as exc:
        raise FormatError(f"{path}: bad header: {exc}") from exc
    body = raw[11 + hlen:]
    expected = sum(8 * math.prod(t["shape"]) for t in header["tensors"])
    if len(body) != expected:
        raise FormatError(f"{path}: body is {len(body)} bytes, expected {expected}")
    tensors, pos = {}, 0
    for t in header["tensors"]:
        size = math.prod(t["shape"])
        tensors[t["name"]] = np.frombuffer(body, dtype="<f8", count=size,
                                           offset=pos).reshape(t["shape"])
        pos += 8 * size
    dtype = np.dtype(header["dtype"])
    model = Psnet(ArchConfig.from_dict(header["arch"]),
                  [layer_from_spec(s, dtype) for s in header["layers"]], dtype)
    try:
        model.load_state(tensors)
    except KeyError as exc:
        raise FormatError(f"{path}: missing tensor {exc}") from exc
    return header, tensors, model


def load_model(path, g=None):
    """Load a model; ``g`` (if given) must match the model's output grid."""
    _, _, model = _read(path)
    if g is not None and model.arch.g != g:
        raise ConfigError(f"model outputs g={model.arch.g} bins but evaluation grid is g={g}")
    return model


def load_checkpoint(path):
    header, tensors, model = _read(path)
    st = header.get("train_state")
    if st is None:
        raise FormatError(f"{path}: model file carries no training state")
    dt = model.dtype
    names = list(model.named_params())
    adam = AdamState(st["adam_t"],
                     {k: np.array(tensors[f"adam.m.{k}"], dtype=dt) for k in names},
                     {k: np.array(tensors[f"adam.v.{k}"], dtype=dt) for k in names})
    best = {k[5:]: np.array(v, dtype=dt) for k, v in tensors.items() if k.startswith("best.")}
    return Checkpoint(model, adam, st["epoch"], [EpochStats(**c) for c in st["curve"]],
                      best or None, st["best_val"], st["best_epoch"])
