"""Conv backbone shared by the VAE and AAE, plus training plumbing."""

from __future__ import annotations

import csv
import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F


class TrainingDivergedError(RuntimeError):
    """Raised when a loss turns non-finite during training."""


@dataclass
class BackboneConfig:
    """Layer sizes of the patch encoder/decoder."""

    conv3d_channels: tuple[int, ...] = (8, 16, 32)
    conv3d_kernels: tuple[tuple[int, int, int], ...] = ((7, 3, 3), (5, 3, 3), (3, 3, 3))
    conv2d_channels: int = 64
    pool_size: int = 4
    hidden_dim: int = 512
    latent_dim: int = 128
    batch_norm: bool = True

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        if "conv3d_kernels" in d:
            d["conv3d_kernels"] = tuple(tuple(k) for k in d["conv3d_kernels"])
        if "conv3d_channels" in d:
            d["conv3d_channels"] = tuple(d["conv3d_channels"])
        return cls(**d)


def _same_pad(kernel):
    return tuple(k // 2 for k in kernel)


def _bn(kind, n, enabled):
    if not enabled:
        return nn.Identity()
    return {2: nn.BatchNorm2d, 3: nn.BatchNorm3d}[kind](n)


class PatchEncoder(nn.Module):
    """3-D convs over (band, row, col), fold bands into feature maps, one 2-D
    conv, adaptive pool, then a hidden affine layer.

    Input is a batch of patches shaped (B, s, s, C); output is (B, hidden).
    """

    def __init__(self, in_channels: int, cfg: BackboneConfig):
        super().__init__()
        self.in_channels = in_channels
        layers = []
        prev = 1
        for ch, k in zip(cfg.conv3d_channels, cfg.conv3d_kernels):
            layers += [nn.Conv3d(prev, ch, k, padding=_same_pad(k)),
                       _bn(3, ch, cfg.batch_norm), nn.ReLU()]
            prev = ch
        self.conv3d = nn.Sequential(*layers)
        self.conv2d = nn.Sequential(
            nn.Conv2d(prev * in_channels, cfg.conv2d_channels, 3, padding=1),
            _bn(2, cfg.conv2d_channels, cfg.batch_norm),
            nn.ReLU(),
            nn.AdaptiveAvgPool2d(cfg.pool_size),
        )
        self.fc = nn.Sequential(
            nn.Linear(cfg.conv2d_channels * cfg.pool_size**2, cfg.hidden_dim), nn.ReLU()
        )

    def forward(self, x):
        if x.ndim != 4 or x.shape[-1] != self.in_channels:
            raise ValueError(
                f"expected patches shaped (B, s, s, {self.in_channels}), got {tuple(x.shape)}"
            )
        b, s = x.shape[0], x.shape[1]
        h = self.conv3d(x.permute(0, 3, 1, 2).unsqueeze(1))  # (B, F, C, s, s)
        h = self.conv2d(h.reshape(b, -1, s, s))
        return self.fc(h.flatten(1))


class PatchDecoder(nn.Module):
    """Mirror of :class:`PatchEncoder`: latent code -> (B, s, s, C) patch.

    The last transposed conv has no activation so outputs stay real-valued.
    """

    def __init__(self, out_channels: int, patch_size: int, cfg: BackboneConfig):
        super().__init__()
        self.out_channels = out_channels
        self.patch_size = patch_size
        self.cfg = cfg
        c2 = cfg.conv2d_channels
        self.fc = nn.Sequential(
            nn.Linear(cfg.latent_dim, cfg.hidden_dim), nn.ReLU(),
            nn.Linear(cfg.hidden_dim, c2 * cfg.pool_size**2), nn.ReLU(),
        )
        top = cfg.conv3d_channels[-1]
        self.deconv2d = nn.Sequential(
            nn.ConvTranspose2d(c2, top * out_channels, 3, padding=1),
            _bn(2, top * out_channels, cfg.batch_norm),
            nn.ReLU(),
        )
        chans = list(cfg.conv3d_channels[::-1]) + [1]
        kernels = list(cfg.conv3d_kernels[::-1])
        layers = []
        for i, k in enumerate(kernels):
            layers.append(nn.ConvTranspose3d(chans[i], chans[i + 1], k, padding=_same_pad(k)))
            if i < len(kernels) - 1:
                layers += [_bn(3, chans[i + 1], cfg.batch_norm), nn.ReLU()]
        self.deconv3d = nn.Sequential(*layers)

    def forward(self, z):
        b, s, p = z.shape[0], self.patch_size, self.cfg.pool_size
        h = self.fc(z).reshape(b, self.cfg.conv2d_channels, p, p)
        h = F.interpolate(h, size=(s, s), mode="nearest")
        h = self.deconv2d(h).reshape(b, self.cfg.conv3d_channels[-1], self.out_channels, s, s)
        return self.deconv3d(h).squeeze(1).permute(0, 2, 3, 1)


def init_weights(module: nn.Module):
    """Fan-in scaled uniform weights, zero biases, unit BN scale."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Conv3d, nn.ConvTranspose2d, nn.ConvTranspose3d, nn.Linear)):
            nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.BatchNorm1d, nn.BatchNorm2d, nn.BatchNorm3d)):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


@contextmanager
def seeded(seed: int):
    """Scope torch's global RNG to ``seed`` without leaking state."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


def resolve_dtype(name) -> torch.dtype:
    if isinstance(name, torch.dtype):
        return name
    return {"float32": torch.float32, "float64": torch.float64}[name]


def batches(n: int, batch_size: int, rng: np.random.Generator | None):
    """Index batches of nearly equal size (never a lone trailing sample when
    n > 1, which batch norm cannot handle)."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    if n == 0:
        return []
    return np.array_split(order, math.ceil(n / batch_size))


def _scalar(v):
    return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)


def check_finite(step: int, **terms):
    terms = {k: _scalar(v) for k, v in terms.items()}
    bad = {k: v for k, v in terms.items() if not math.isfinite(v)}
    if bad:
        parts = ", ".join(f"{k}={v:.6g}" for k, v in terms.items())
        raise TrainingDivergedError(f"non-finite loss at iteration {step}: {parts}")


@dataclass
class LossHistory:
    """Per-epoch mean losses."""

    columns: tuple[str, ...]
    rows: list[dict] = field(default_factory=list)

    def append(self, **values):
        self.rows.append(values)

    def column(self, name):
        return [r[name] for r in self.rows]

    def __len__(self):
        return len(self.rows)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("epoch",) + self.columns)
            for r in self.rows:
                writer.writerow([r["epoch"]] + [repr(float(r[c])) for c in self.columns])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            hist = cls(tuple(header[1:]))
            for row in reader:
                hist.append(epoch=int(row[0]), **{c: float(v) for c, v in zip(header[1:], row[1:])})
        return hist


class EpochMeter:
    """Sample-weighted running means of named losses within one epoch."""

    def __init__(self):
        self.sums = {}
        self.count = 0

    def add(self, n, **values):
        for k, v in values.items():
            self.sums[k] = self.sums.get(k, 0.0) + _scalar(v) * n
        self.count += n

    def means(self):
        return {k: v / self.count for k, v in self.sums.items()}
