"""Online/target contrastive refinement of the VAE and AAE code views.

The online branch is trained on a weighted sum of a mutual-information loss
(between the two views' encoder outputs) and a cosine prediction loss; the
target branch follows it by exponential moving average and never receives
gradients.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .layers import (
    EpochMeter,
    LossHistory,
    batches,
    check_finite,
    init_weights,
    resolve_dtype,
    seeded,
)

LOG_FLOOR = 1e-12


@dataclass
class ContrastConfig:
    alpha: float = 9.0
    lam: float = 100.0
    tau: float = 0.99
    lr: float = 3e-4
    weight_decay: float = 1e-3
    epochs: int = 200
    batch_size: int = 256
    seed: int = 0
    pairing_mode: str = "cross_view"  # or "same_view"
    hidden_dim: int = 512
    conv_channels: tuple[int, ...] = (32, 64, 64, 64, 32)
    keep_snapshots: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.alpha < 0 or self.lam < 0:
            raise ValueError("alpha and lambda must be non-negative")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.pairing_mode not in ("cross_view", "same_view"):
            raise ValueError(f"unknown pairing mode {self.pairing_mode!r}")


# ---------------------------------------------------------------------------
# losses


@dataclass
class JointDistribution:
    P: torch.Tensor
    Pi: torch.Tensor
    Pj: torch.Tensor

    @classmethod
    def from_matrix(cls, P):
        P = torch.as_tensor(np.asarray(P), dtype=torch.float64) if not isinstance(P, torch.Tensor) else P
        return cls(P, P.sum(dim=1), P.sum(dim=0))


def joint_probability(z1, z2) -> JointDistribution:
    """Batch-averaged outer product of per-sample feature softmaxes,
    symmetrized and renormalized to a d x d joint distribution."""
    if z1.shape != z2.shape or z1.ndim != 2:
        raise ValueError(f"expected equal (n, d) batches, got {tuple(z1.shape)} and {tuple(z2.shape)}")
    n, d = z1.shape
    if n < 1:
        raise ValueError("empty batch")
    if d < 2:
        raise ValueError("need at least 2 feature dimensions")
    s1 = torch.softmax(z1, dim=1)
    s2 = torch.softmax(z2, dim=1)
    P = s1.T @ s2 / n
    P = (P + P.T) / 2
    P = P / P.sum()
    return JointDistribution(P, P.sum(dim=1), P.sum(dim=0))


def mutual_info_loss(joint, alpha: float):
    """-(I(Z1; Z2) + alpha * (H(Z1) + H(Z2))) for a joint distribution.

    Zero cells contribute nothing; logarithms see values floored at 1e-12.
    """
    if not isinstance(joint, JointDistribution):
        joint = JointDistribution.from_matrix(joint)
    P = joint.P
    log_p = torch.log(P.clamp(min=LOG_FLOOR))
    log_pi = torch.log(joint.Pi.clamp(min=LOG_FLOOR)).unsqueeze(1)
    log_pj = torch.log(joint.Pj.clamp(min=LOG_FLOOR)).unsqueeze(0)
    return -(P * (log_p - (alpha + 1.0) * (log_pi + log_pj))).sum()


def _cosine(a, b):
    if a.ndim == 1:
        a, b = a.unsqueeze(0), b.unsqueeze(0)
    na, nb = a.norm(dim=1), b.norm(dim=1)
    if torch.any(na == 0) or torch.any(nb == 0):
        raise ValueError("cosine similarity undefined for zero-norm vectors")
    return (a * b).sum(dim=1) / (na * nb)


def conditional_loss(q1, t1, q2, t2):
    """2 - 2 * (cos(q1, t1) + cos(q2, t2)), averaged over the batch."""
    q1, t1, q2, t2 = (torch.as_tensor(np.asarray(v), dtype=torch.float64)
                      if not isinstance(v, torch.Tensor) else v for v in (q1, t1, q2, t2))
    return (2.0 - 2.0 * (_cosine(q1, t1) + _cosine(q2, t2))).mean()


def total_loss(l_m, l_c, lam: float):
    return lam * l_m + l_c


@torch.no_grad()
def ema_update(target, online, tau: float):
    """target <- tau * target + (1 - tau) * online, elementwise.

    Accepts two modules (parameters are updated in place), two sequences of
    tensors (in place) or numpy arrays (new arrays returned).
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if isinstance(target, nn.Module):
        t_params, o_params = list(target.parameters()), list(online.parameters())
    elif isinstance(target, (torch.Tensor, np.ndarray)):
        t_params, o_params = [target], [online]
    else:
        t_params, o_params = list(target), list(online)
    if len(t_params) != len(o_params):
        raise ValueError("parameter lists differ in length")
    out = []
    for t, o in zip(t_params, o_params):
        if tuple(t.shape) != tuple(o.shape):
            raise ValueError(f"shape mismatch {tuple(t.shape)} vs {tuple(o.shape)}")
        if isinstance(t, torch.Tensor):
            t.copy_(tau * t + (1.0 - tau) * o)
            out.append(t)
        else:
            out.append(tau * np.asarray(t) + (1.0 - tau) * np.asarray(o))
    if isinstance(target, nn.Module):
        return target
    if isinstance(target, (torch.Tensor, np.ndarray)):
        return out[0]
    return out


# ---------------------------------------------------------------------------
# networks


def code_grid(d: int) -> int:
    """Side of the square map a d-dim code is folded into."""
    for g in (4, 2):
        if d % (g * g) == 0:
            return g
    return 1


class CodeEncoder(nn.Module):
    """Fold a code into a (d / g^2, g, g) map, grow it with two transposed
    convs, shrink it with three convs, flatten and project back to d."""

    def __init__(self, d: int, channels=(32, 64, 64, 64, 32)):
        super().__init__()
        self.d = d
        self.grid = g = code_grid(d)
        self.c0 = d // (g * g)
        up1, up2, dn1, dn2, dn3 = channels
        layers, size, prev = [], g, self.c0
        for ch in (up1, up2):
            layers += [nn.ConvTranspose2d(prev, ch, 3), nn.BatchNorm2d(ch), nn.ReLU()]
            prev, size = ch, size + 2
        for ch in (dn1, dn2, dn3):
            pad = 0 if size >= 3 else 1
            layers += [nn.Conv2d(prev, ch, 3, padding=pad), nn.BatchNorm2d(ch), nn.ReLU()]
            prev, size = ch, size - 2 + 2 * pad
        self.body = nn.Sequential(*layers)
        self.fc = nn.Linear(prev * size * size, d)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.d:
            raise ValueError(f"expected codes shaped (n, {self.d}), got {tuple(x.shape)}")
        h = self.body(x.reshape(-1, self.c0, self.grid, self.grid))
        return self.fc(h.flatten(1))


class MLPHead(nn.Module):
    def __init__(self, d, hidden):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d, hidden), nn.BatchNorm1d(hidden), nn.ReLU(), nn.Linear(hidden, d)
        )

    def forward(self, x):
        return self.net(x)


class ContrastNets(nn.Module):
    def __init__(self, feature_dim=128, hidden_dim=512, conv_channels=(32, 64, 64, 64, 32)):
        super().__init__()
        self.feature_dim = feature_dim
        self.online_encoder = CodeEncoder(feature_dim, conv_channels)
        self.online_projector = MLPHead(feature_dim, hidden_dim)
        self.predictor = MLPHead(feature_dim, hidden_dim)
        self.target_encoder = copy.deepcopy(self.online_encoder)
        self.target_projector = copy.deepcopy(self.online_projector)
        for p in self.target_parameters():
            p.requires_grad_(False)

    def online_parameters(self):
        return (list(self.online_encoder.parameters()) + list(self.online_projector.parameters())
                + list(self.predictor.parameters()))

    def target_parameters(self):
        return list(self.target_encoder.parameters()) + list(self.target_projector.parameters())

    def online_pair(self):
        return nn.ModuleList([self.online_encoder, self.online_projector])

    def target_pair(self):
        return nn.ModuleList([self.target_encoder, self.target_projector])


def build_contrast(feature_dim=128, config: ContrastConfig | None = None, seed=None):
    cfg = config or ContrastConfig()
    with seeded(cfg.seed if seed is None else seed):
        nets = ContrastNets(feature_dim, cfg.hidden_dim, cfg.conv_channels)
        init_weights(nets.online_encoder)
        init_weights(nets.online_projector)
        init_weights(nets.predictor)
    nets.target_encoder.load_state_dict(nets.online_encoder.state_dict())
    nets.target_projector.load_state_dict(nets.online_projector.state_dict())
    return nets.to(resolve_dtype(cfg.dtype))


def contrast_step_losses(nets: ContrastNets, v1, v2, cfg: ContrastConfig):
    """Loss terms for one batch of paired codes (v1: VAE view, v2: AAE view)."""
    f1, f2 = nets.online_encoder(v1), nets.online_encoder(v2)
    l_m = mutual_info_loss(joint_probability(f1, f2), cfg.alpha)
    q1 = nets.predictor(nets.online_projector(f1))
    q2 = nets.predictor(nets.online_projector(f2))
    with torch.no_grad():
        t1 = nets.target_projector(nets.target_encoder(v1))
        t2 = nets.target_projector(nets.target_encoder(v2))
    if cfg.pairing_mode == "cross_view":
        l_c = conditional_loss(q1, t2, q2, t1)
    else:
        l_c = conditional_loss(q1, t1, q2, t2)
    return total_loss(l_m, l_c, cfg.lam), l_m, l_c


@dataclass
class ContrastResult:
    nets: ContrastNets
    history: LossHistory
    snapshots: list[dict] = field(default_factory=list)

    def select_epoch(self, epoch: int = -1) -> ContrastNets:
        """Copy of the nets whose online encoder is the snapshot after
        ``epoch`` (negative indexes from the end)."""
        if not self.snapshots:
            return self.nets
        chosen = copy.deepcopy(self.nets)
        chosen.online_encoder.load_state_dict(self.snapshots[epoch])
        return chosen


def train_contrast(nets: ContrastNets, vae_codes, aae_codes, config: ContrastConfig,
                   step_hook=None) -> ContrastResult:
    """Train the online branch on lambda * L_m + L_c, then EMA the target.

    ``step_hook(nets, step)``, if given, runs after each optimizer step and
    before the EMA update.
    """
    cfg = config
    vae_codes, aae_codes = np.asarray(vae_codes), np.asarray(aae_codes)
    if vae_codes.shape != aae_codes.shape:
        raise ValueError(
            f"code sets are not row-aligned: {vae_codes.shape} vs {aae_codes.shape}"
        )
    history = LossHistory(("L_m", "L_c", "total"))
    result = ContrastResult(nets, history)
    if cfg.epochs <= 0:
        return result
    dtype = next(nets.parameters()).dtype
    v1_all = torch.as_tensor(vae_codes, dtype=dtype)
    v2_all = torch.as_tensor(aae_codes, dtype=dtype)
    rng = np.random.default_rng(cfg.seed)
    opt = torch.optim.Adam(nets.online_parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    nets.train()
    step = 0
    for epoch in range(cfg.epochs):
        meter = EpochMeter()
        for idx in batches(len(v1_all), cfg.batch_size, rng):
            if len(idx) < 2:
                continue
            idx = torch.as_tensor(idx)
            loss, l_m, l_c = contrast_step_losses(nets, v1_all[idx], v2_all[idx], cfg)
            check_finite(step, L_m=l_m, L_c=l_c, total=loss)
            opt.zero_grad()
            loss.backward()
            opt.step()
            if step_hook is not None:
                step_hook(nets, step)
            ema_update(nets.target_pair(), nets.online_pair(), cfg.tau)
            meter.add(len(idx), L_m=l_m, L_c=l_c, total=loss)
            step += 1
        if meter.count:
            history.append(epoch=epoch, **meter.means())
        if cfg.keep_snapshots:
            result.snapshots.append(copy.deepcopy(nets.online_encoder.state_dict()))
    nets.eval()
    return result


@torch.no_grad()
def extract_features(nets, codes, batch_size=1024):
    """Online-encoder features of ``codes`` as an (n, d) float64 array."""
    encoder = nets.online_encoder if isinstance(nets, ContrastNets) else nets
    codes = np.asarray(codes)
    params = list(encoder.parameters())
    dtype = params[0].dtype if params else torch.float64
    d = getattr(encoder, "d", codes.shape[1] if codes.ndim == 2 else None)
    if codes.ndim != 2 or (d is not None and codes.shape[1] != d):
        raise ValueError(f"expected codes shaped (n, {d}), got {codes.shape}")
    if len(codes) == 0:
        return np.zeros((0, codes.shape[1]))
    was_training = encoder.training
    encoder.eval()
    out = [encoder(torch.as_tensor(codes[i : i + batch_size], dtype=dtype))
           for i in range(0, len(codes), batch_size)]
    encoder.train(was_training)
    return torch.cat(out).double().numpy()
