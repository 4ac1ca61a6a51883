"""Dense-residual 3D convolutional network mapping an interpolated LR frame to HR.

Graph (all convolutions 3x3x3, stride 1, zero same-padding)::

    h   = head(x)                                  1 -> base
    d_i = lrelu(dense_i(cat(h, d_0, ..., d_{i-1})))  base + i*growth -> growth
    f   = fusion(cat(h, d_0, ..., d_{L-1}))        base + L*growth -> base
    y   = x + tail(h + beta * f)                   base -> 1

The tail starts at zero, so a fresh model is exactly the identity.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ConsistencyError, FormatError, NumericError, ShapeError
from .volume import VoxelGrid

CHECKPOINT_MAGIC = b"SRFM"
CHECKPOINT_VERSION = 1
KERNEL = 3


@dataclass
class ModelConfig:
    base_channels: int = 32
    growth_channels: int = 16
    num_dense_layers: int = 10
    local_residual_scale: float = 0.2
    leaky_slope: float = 0.2

    def validate(self) -> "ModelConfig":
        if self.num_dense_layers < 1:
            raise ConfigError("num_dense_layers must be >= 1")
        if self.base_channels < 1 or self.growth_channels < 1:
            raise ConfigError("channel counts must be >= 1")
        if not 0 < self.local_residual_scale <= 1:
            raise ConfigError("local_residual_scale must lie in (0, 1]")
        return self

    @property
    def receptive_field_radius(self) -> int:
        # head + dense layers + fusion + tail, one voxel each
        return self.num_dense_layers + 3

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        fields = cls.__dataclass_fields__
        try:
            kwargs = {k: int(v) if fields[k].type == "int" else float(v) for k, v in d.items() if k in fields}
            return cls(**kwargs).validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad model config: {exc}") from exc


class SRModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config.validate()
        base, growth, n = config.base_channels, config.growth_channels, config.num_dense_layers
        self.head = nn.Conv3d(1, base, KERNEL, padding=KERNEL // 2)
        self.dense = nn.ModuleList(
            nn.Conv3d(base + i * growth, growth, KERNEL, padding=KERNEL // 2) for i in range(n)
        )
        self.fusion = nn.Conv3d(base + n * growth, base, KERNEL, padding=KERNEL // 2)
        self.tail = nn.Conv3d(base, 1, KERNEL, padding=KERNEL // 2)

    def residual(self, x: torch.Tensor, check_finite: bool = True) -> torch.Tensor:
        """The learned correction ``y - x`` for a batch ``(N, 1, X, Y, Z)``."""
        slope = self.config.leaky_slope

        def checked(t, layer):
            if check_finite and not torch.isfinite(t).all():
                raise NumericError(f"non-finite activation at layer {layer}")
            return t

        h = checked(self.head(x), 0)
        feats = [h]
        for i, conv in enumerate(self.dense, start=1):
            feats.append(checked(F.leaky_relu(conv(torch.cat(feats, 1)), slope), i))
        f = checked(self.fusion(torch.cat(feats, 1)), len(self.dense) + 1)
        return checked(self.tail(h + self.config.local_residual_scale * f), len(self.dense) + 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.residual(x)

    @property
    def dtype(self) -> torch.dtype:
        return self.head.weight.dtype

    def weight_arrays(self) -> list[np.ndarray]:
        return [p.detach().cpu().numpy() for p in self.parameters()]

    def fingerprint(self) -> str:
        h = hashlib.sha256(json.dumps(self.config.to_dict(), sort_keys=True).encode())
        for w in self.weight_arrays():
            h.update(np.asarray(w, dtype="<f4").tobytes())
        return h.hexdigest()[:16]


def init_model(config: ModelConfig, rng: np.random.Generator) -> SRModel:
    """He-normal hidden convolutions, zero biases, zero tail."""
    model = SRModel(config)
    with torch.no_grad():
        for conv in [model.head, *model.dense, model.fusion]:
            fan_in = conv.in_channels * KERNEL**3
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), tuple(conv.weight.shape))
            conv.weight.copy_(torch.from_numpy(w))
            conv.bias.zero_()
        model.tail.weight.zero_()
        model.tail.bias.zero_()
    return model


def conv3d(x, kernel, bias=None):
    """Same-padded stride-1 cross-correlation of a ``(C, X, Y, Z)`` feature volume."""
    as_numpy = isinstance(x, np.ndarray)
    x_t = torch.as_tensor(x)
    k_t = torch.as_tensor(kernel, dtype=x_t.dtype)
    if x_t.ndim != 4 or k_t.ndim != 5:
        raise ShapeError(f"expected (C,X,Y,Z) input and (O,C,k,k,k) kernel, got {tuple(x_t.shape)}, {tuple(k_t.shape)}")
    if k_t.shape[1] != x_t.shape[0]:
        raise ShapeError(f"kernel expects {k_t.shape[1]} input channels, input has {x_t.shape[0]}")
    b_t = None if bias is None else torch.as_tensor(bias, dtype=x_t.dtype)
    out = F.conv3d(x_t[None], k_t, b_t, padding=k_t.shape[-1] // 2)[0]
    return out.numpy() if as_numpy else out


def _batch(model: SRModel, x) -> torch.Tensor:
    data = np.asarray(getattr(x, "data", x))
    if data.ndim != 3:
        raise ShapeError(f"expected a 3D volume, got shape {data.shape}")
    return torch.tensor(data, dtype=model.dtype)[None, None]


def predict_residual(model: SRModel, x) -> np.ndarray:
    with torch.no_grad():
        return model.residual(_batch(model, x))[0, 0].double().numpy()


def forward(model: SRModel, x: VoxelGrid) -> VoxelGrid:
    """``x + correction``; the global residual is added at the input's own precision."""
    corr = predict_residual(model, x)
    return x.with_data(x.data + corr)


@dataclass
class GradientSet:
    names: list[str]
    arrays: list[np.ndarray]

    def __iter__(self):
        return iter(self.arrays)

    def __len__(self) -> int:
        return len(self.arrays)

    def as_dict(self) -> dict[str, np.ndarray]:
        return dict(zip(self.names, self.arrays))


def backward(model: SRModel, x, upstream_grad) -> tuple[GradientSet, np.ndarray]:
    """Reverse-mode gradients of ``<upstream_grad, forward(x)>`` w.r.t. every weight and ``x``."""
    xt = _batch(model, x).requires_grad_(True)
    g = np.asarray(upstream_grad)
    if g.shape != tuple(xt.shape[2:]):
        raise ShapeError(f"upstream gradient shape {g.shape} does not match input {tuple(xt.shape[2:])}")
    y = model(xt)
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(y, [xt, *params], torch.from_numpy(np.ascontiguousarray(g)).to(y.dtype)[None, None])
    arrays = [t.detach().numpy() for t in grads[1:]]
    return GradientSet(list(names), arrays), grads[0][0, 0].detach().numpy()


# ---------------------------------------------------------------------------
# checkpoint

def save_checkpoint(model: SRModel, path) -> None:
    config = json.dumps(model.config.to_dict(), sort_keys=True).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(config)), config]
    parts += [np.ascontiguousarray(w, dtype="<f4").tobytes() for w in model.weight_arrays()]
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> SRModel:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: file too short for a checkpoint header ({len(raw)} bytes)")
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    version, n_config = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    if len(raw) < 12 + n_config:
        raise FormatError(f"{path}: config truncated, need {n_config} bytes, have {len(raw) - 12}")
    try:
        config = ModelConfig.from_dict(json.loads(raw[12 : 12 + n_config]))
    except (ValueError, ConfigError) as exc:
        raise FormatError(f"{path}: unreadable config JSON ({exc})") from exc
    model = SRModel(config)
    params = list(model.parameters())
    expected = 4 * sum(p.numel() for p in params)
    payload = raw[12 + n_config :]
    if len(payload) != expected:
        missing = expected - len(payload)
        detail = f"missing {missing} bytes" if missing > 0 else f"{-missing} unexpected trailing bytes"
        raise ConsistencyError(
            f"{path}: config implies {expected} weight bytes but file holds {len(payload)} ({detail})"
        )
    offset = 0
    with torch.no_grad():
        for p in params:
            n = p.numel()
            w = np.frombuffer(payload, dtype="<f4", count=n, offset=offset).reshape(tuple(p.shape))
            p.copy_(torch.from_numpy(w.copy()))
            offset += 4 * n
    return model
