"""Patch scorer, momentum SGD and checkpoint I/O.

The built-in :class:`ConvScorer` is a small stack of unpadded stride-2
convolutions with ReLU, global average pooling and an affine head producing
one logit per rating class. Because of the global pooling it accepts square
inputs of any side >= ``input_min_side``, so local and global patches of
different sizes go through the same network.

Anything with a ``forward(batch) -> logits`` method can stand in for it at
evaluation time (see :class:`Scorer`).
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Protocol

import numpy as np

from .errors import DimensionMismatch, InputTooSmall, StateError

MAGIC = b"MPAK"
FORMAT_VERSION = 1


class Scorer(Protocol):
    def forward(self, x) -> np.ndarray:
        """Map a ``(B, H, W, 3)`` batch (or one ``(H, W, 3)`` patch) to logits."""


@dataclass(frozen=True)
class ScorerConfig:
    conv_channels: tuple[int, ...] = (8, 16, 32)
    kernel: int = 3
    stride: int = 2
    n_classes: int = 10
    input_min_side: int = 32
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        if not self.conv_channels:
            raise ValueError("need at least one conv layer")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")
        side = self.input_min_side
        for _ in self.conv_channels:
            side = (side - self.kernel) // self.stride + 1
        if side < 1:
            raise ValueError(f"input_min_side {self.input_min_side} too small for the conv stack")

    def to_json(self) -> str:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScorerConfig":
        return cls(**json.loads(text))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def _param_names(cfg: ScorerConfig) -> list[str]:
    names = []
    for i in range(len(cfg.conv_channels)):
        names += [f"conv{i}.weight", f"conv{i}.bias"]
    return names + ["head.weight", "head.bias"]


def _conv_forward(x, w, b, stride):
    """``x``: (B, H, W, C); ``w``: (O, C, K, K). Returns output and im2col columns."""
    B, H, W, C = x.shape
    O, _, K, _ = w.shape
    Ho = (H - K) // stride + 1
    Wo = (W - K) // stride + 1
    cols = np.concatenate(
        [x[:, di : di + stride * (Ho - 1) + 1 : stride, dj : dj + stride * (Wo - 1) + 1 : stride, :]
         for di in range(K) for dj in range(K)],
        axis=-1,
    )
    wmat = w.transpose(2, 3, 1, 0).reshape(K * K * C, O)
    return cols @ wmat + b, cols


def _conv_backward(dout, cols, x_shape, w, stride):
    B, H, W, C = x_shape
    O, _, K, _ = w.shape
    Ho, Wo = dout.shape[1:3]
    flat = dout.reshape(-1, O)
    dw = (cols.reshape(-1, K * K * C).T @ flat).reshape(K, K, C, O).transpose(3, 2, 0, 1)
    db = flat.sum(axis=0, dtype=np.float64).astype(dout.dtype)
    wmat = w.transpose(2, 3, 1, 0).reshape(K * K * C, O)
    dcols = dout @ wmat.T
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for n, (di, dj) in enumerate((di, dj) for di in range(K) for dj in range(K)):
        dx[:, di : di + stride * (Ho - 1) + 1 : stride, dj : dj + stride * (Wo - 1) + 1 : stride, :] += \
            dcols[..., n * C : (n + 1) * C]
    return dx, dw, db


class ConvScorer:
    """Tiny convolutional rating-distribution predictor.

    ``forward`` caches the activations needed by ``backward``; the cache is
    invalidated whenever parameters change, so one forward/backward pair may
    be in flight per instance.
    """

    def __init__(self, config: ScorerConfig, params: dict[str, np.ndarray]):
        self.config = config
        missing = set(_param_names(config)) - set(params)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")
        dtype = np.dtype(config.dtype)
        self.params = {n: np.ascontiguousarray(params[n], dtype=dtype) for n in _param_names(config)}
        self._cache = None
        self._version = 0

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def copy(self) -> "ConvScorer":
        return ConvScorer(self.config, {n: p.copy() for n, p in self.params.items()})

    def touch(self):
        """Mark parameters as modified (drops any cached activations)."""
        self._version += 1
        self._cache = None

    def _as_batch(self, x):
        pixels = getattr(x, "pixels", x)
        a = np.asarray(pixels, dtype=self.dtype)
        if a.ndim == 3:
            a = a[None]
        if a.ndim != 4 or a.shape[-1] != 3:
            raise ValueError(f"expected (B, H, W, 3) input, got {a.shape}")
        side = min(a.shape[1:3])
        if side < self.config.input_min_side:
            raise InputTooSmall(f"patch side {side} below minimum {self.config.input_min_side}")
        return a

    def forward(self, x) -> np.ndarray:
        """Logits for a patch, an ``(H, W, 3)`` array or a ``(B, H, W, 3)`` batch."""
        single = np.ndim(getattr(x, "pixels", x)) == 3
        h = self._as_batch(x)
        stride = self.config.stride
        layers = []
        for i in range(len(self.config.conv_channels)):
            z, cols = _conv_forward(h, self.params[f"conv{i}.weight"], self.params[f"conv{i}.bias"], stride)
            layers.append((h.shape, cols, z > 0))
            h = np.maximum(z, 0)
        feat = h.mean(axis=(1, 2), dtype=np.float64).astype(self.dtype)
        logits = feat @ self.params["head.weight"].T + self.params["head.bias"]
        self._cache = {
            "version": self._version,
            "layers": layers,
            "pool_shape": h.shape,
            "feat": feat,
            "batch": len(feat),
            "input": getattr(x, "pixels", x),
        }
        return logits[0] if single else logits

    def backward(self, grad_logits) -> dict[str, np.ndarray]:
        """Parameter gradients for the most recent ``forward`` call."""
        cache = self._cache
        if cache is None or cache["version"] != self._version:
            raise StateError("backward called without a matching forward pass")
        g = np.asarray(grad_logits, dtype=self.dtype)
        if g.ndim == 1:
            g = g[None]
        if g.shape != (cache["batch"], self.config.n_classes):
            raise DimensionMismatch(f"gradient shape {g.shape} does not match logits")
        grads = {
            "head.weight": g.T @ cache["feat"],
            "head.bias": g.sum(axis=0, dtype=np.float64).astype(self.dtype),
        }
        B, Hl, Wl, C = cache["pool_shape"]
        dfeat = g @ self.params["head.weight"]
        dh = np.broadcast_to((dfeat / (Hl * Wl))[:, None, None, :], cache["pool_shape"])
        stride = self.config.stride
        for i in reversed(range(len(self.config.conv_channels))):
            x_shape, cols, active = cache["layers"][i]
            dz = np.where(active, dh, 0).astype(self.dtype, copy=False)
            w = self.params[f"conv{i}.weight"]
            dh, grads[f"conv{i}.weight"], grads[f"conv{i}.bias"] = _conv_backward(dz, cols, x_shape, w, stride)
        return {n: grads[n] for n in self.params}


def init_scorer(config: ScorerConfig = ScorerConfig(), seed: int = 0) -> ConvScorer:
    """Weights uniform in ``[-b, b]`` with ``b`` scaled by fan-in; biases zero."""
    rng = np.random.default_rng(seed)
    params = {}
    c_in, K = 3, config.kernel
    for i, c_out in enumerate(config.conv_channels):
        bound = np.sqrt(6.0 / (c_in * K * K))
        params[f"conv{i}.weight"] = rng.uniform(-bound, bound, size=(c_out, c_in, K, K))
        params[f"conv{i}.bias"] = np.zeros(c_out)
        c_in = c_out
    bound = np.sqrt(3.0 / c_in)
    params["head.weight"] = rng.uniform(-bound, bound, size=(config.n_classes, c_in))
    params["head.bias"] = np.zeros(config.n_classes)
    return ConvScorer(config, params)


def forward(scorer, patch) -> np.ndarray:
    return scorer.forward(patch)


def backward(scorer: ConvScorer, patch, grad_logits) -> dict[str, np.ndarray]:
    """Gradients for ``patch``; it must be the input of the last ``forward``."""
    cache = scorer._cache
    if cache is None:
        raise StateError("no cached forward pass")
    cached = cache["input"]
    given = getattr(patch, "pixels", patch)
    if cached is not given and not np.array_equal(cached, given):
        raise StateError("cached activations belong to a different input")
    return scorer.backward(grad_logits)


# ---------------------------------------------------------------- optimizer


@dataclass(frozen=True)
class OptimizerConfig:
    init_lr: float = 1e-2
    decay_factor: float = 1.0
    decay_interval_epochs: int = 10
    momentum: float = 0.9
    weight_decay: float = 1e-4

    def __post_init__(self):
        if not self.init_lr >= 0:
            raise ValueError("init_lr must be non-negative")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        if self.decay_interval_epochs < 1:
            raise ValueError("decay_interval_epochs must be >= 1")


@dataclass
class OptimizerState:
    config: OptimizerConfig = field(default_factory=OptimizerConfig)
    velocities: dict[str, np.ndarray] = field(default_factory=dict)


def lr_at_epoch(opt: OptimizerConfig, epoch: int) -> float:
    """Step decay: ``init_lr * decay_factor ** (epoch // decay_interval_epochs)``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return opt.init_lr * opt.decay_factor ** (epoch // opt.decay_interval_epochs)


def sgd_step(scorer: ConvScorer, grads: dict, state: OptimizerState, lr: float):
    """Classical momentum with coupled weight decay, applied in place.

    ``v <- momentum * v + (g + weight_decay * w)``; ``w <- w - lr * v``.
    """
    mom, wd = state.config.momentum, state.config.weight_decay
    for name, w in scorer.params.items():
        g = np.asarray(grads[name])
        if g.shape != w.shape:
            raise DimensionMismatch(f"{name}: gradient {g.shape} vs parameter {w.shape}")
        v = state.velocities.get(name)
        if v is None:
            v = np.zeros_like(w)
        elif v.shape != w.shape:
            raise DimensionMismatch(f"{name}: velocity {v.shape} vs parameter {w.shape}")
        v = (mom * v + (g + wd * w)).astype(w.dtype, copy=False)
        state.velocities[name] = v
        scorer.params[name] = (w - lr * v).astype(w.dtype, copy=False)
    scorer.touch()
    return scorer, state


# --------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    config: ScorerConfig
    params: dict[str, np.ndarray]
    velocities: dict[str, np.ndarray] = field(default_factory=dict)
    epoch: int = 0
    rng_state: dict | None = None
    extra: dict = field(default_factory=dict)

    def scorer(self) -> ConvScorer:
        return ConvScorer(self.config, self.params)


def _write_records(buf, tensors: dict[str, np.ndarray]):
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        a = np.ascontiguousarray(arr, dtype="<f4")
        buf.write(struct.pack("<I", len(raw)) + raw)
        buf.write(struct.pack("<I", a.ndim))
        buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
        buf.write(a.tobytes())


def _read_exact(buf, n):
    data = buf.read(n)
    if len(data) != n:
        raise ValueError("truncated checkpoint")
    return data


def _read_records(buf) -> dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", _read_exact(buf, 4))
    out = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", _read_exact(buf, 4))
        name = _read_exact(buf, n).decode("utf-8")
        (rank,) = struct.unpack("<I", _read_exact(buf, 4))
        shape = struct.unpack(f"<{rank}I", _read_exact(buf, 4 * rank))
        size = int(np.prod(shape, dtype=np.int64))
        out[name] = np.frombuffer(_read_exact(buf, 4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    return out


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    """Serialize: magic, version, parameter records, velocity records, JSON trailer."""
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<I", FORMAT_VERSION))
    _write_records(buf, ckpt.params)
    _write_records(buf, ckpt.velocities)
    trailer = json.dumps(
        {"epoch": int(ckpt.epoch), "rng": ckpt.rng_state, "config": json.loads(ckpt.config.to_json()),
         "fingerprint": ckpt.config.fingerprint(), "extra": ckpt.extra},
        sort_keys=True,
    ).encode("utf-8")
    buf.write(struct.pack("<I", len(trailer)) + trailer)
    return buf.getvalue()


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    buf = io.BytesIO(data)
    if _read_exact(buf, 4) != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", _read_exact(buf, 4))
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    params = _read_records(buf)
    velocities = _read_records(buf)
    (n,) = struct.unpack("<I", _read_exact(buf, 4))
    trailer = json.loads(_read_exact(buf, n).decode("utf-8"))
    config = ScorerConfig(**trailer["config"])
    if config.fingerprint() != trailer["fingerprint"]:
        raise ValueError("config fingerprint mismatch")
    return Checkpoint(config, params, velocities, trailer["epoch"], trailer["rng"], trailer.get("extra", {}))


def save_checkpoint(path, ckpt: Checkpoint):
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        return checkpoint_from_bytes(f.read())


def snapshot(scorer: ConvScorer, state: OptimizerState | None = None, epoch: int = 0,
             rng: np.random.Generator | None = None, **extra) -> Checkpoint:
    return Checkpoint(
        scorer.config,
        {n: p.copy() for n, p in scorer.params.items()},
        {n: v.copy() for n, v in (state.velocities if state else {}).items()},
        epoch,
        rng.bit_generator.state if rng is not None else None,
        extra,
    )
