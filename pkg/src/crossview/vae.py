"""Cross-channel VAE: encode view X1, decode a prediction of view X2."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .channelsplit import ChannelSplit, random_split
from .layers import (
    BackboneConfig,
    EpochMeter,
    LossHistory,
    PatchDecoder,
    PatchEncoder,
    check_finite,
    batches,
    init_weights,
    resolve_dtype,
    seeded,
)

LOGVAR_CLAMP = 10.0


@dataclass
class VaeConfig:
    epochs: int = 40
    batch_size: int = 256
    lr: float = 1e-3
    weight_decay: float = 5e-4
    seed: int = 0
    self_reconstruction: bool = False
    # "epoch" redraws a random channel split every epoch, "run" keeps one
    random_resample: str = "epoch"
    dtype: str = "float32"
    backbone: BackboneConfig = field(default_factory=BackboneConfig)


class CrossVAE(nn.Module):
    def __init__(self, in_channels, out_channels, patch_size, backbone=None):
        super().__init__()
        cfg = backbone or BackboneConfig()
        self.backbone = cfg
        self.encoder = PatchEncoder(in_channels, cfg)
        self.mu_head = nn.Linear(cfg.hidden_dim, cfg.latent_dim)
        self.logvar_head = nn.Linear(cfg.hidden_dim, cfg.latent_dim)
        self.decoder = PatchDecoder(out_channels, patch_size, cfg)

    @property
    def latent_dim(self):
        return self.backbone.latent_dim

    def encode(self, x):
        h = self.encoder(x)
        logvar = self.logvar_head(h).clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)
        return self.mu_head(h), logvar

    def decode(self, z):
        return self.decoder(z)

    def forward(self, x, noise):
        mu, logvar = self.encode(x)
        sigma = torch.exp(0.5 * logvar)
        return self.decode(reparameterize(mu, sigma, noise)), mu, sigma


def build_vae(in_channels, out_channels, patch_size, backbone=None, seed=0, dtype="float32"):
    with seeded(seed):
        model = CrossVAE(in_channels, out_channels, patch_size, backbone)
        init_weights(model)
    return model.to(resolve_dtype(dtype))


def _as_tensor(x, like=None):
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if like is not None else torch.float64
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def vae_encode(model: CrossVAE, x1):
    """Deterministic posterior parameters (mu, sigma) for a batch of X1 views."""
    x1 = _as_tensor(x1, next(model.parameters()))
    mu, logvar = model.encode(x1)
    return mu, torch.exp(0.5 * logvar)


def reparameterize(mu, sigma, noise):
    """z = mu + sigma * noise; all randomness lives in ``noise``."""
    return mu + sigma * noise


def kl_loss(mu, sigma):
    """KL(N(mu, sigma^2) || N(0, 1)) summed over latent dims, averaged over
    the batch. 1-D inputs are treated as a single sample."""
    mu, sigma = _as_tensor(mu), _as_tensor(sigma)
    if torch.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    var = sigma * sigma
    kl = 0.5 * (mu * mu + var - torch.log(var) - 1.0)
    if kl.ndim <= 1:
        return kl.sum()
    return kl.sum(dim=-1).mean()


def mse_loss(x, y):
    x, y = _as_tensor(x), _as_tensor(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    return ((x - y) ** 2).mean()


def vae_loss(model, x1, target, noise):
    recon, mu, sigma = model(x1, noise)
    mse = mse_loss(recon, target)
    kl = kl_loss(mu, sigma)
    return mse + kl, mse, kl


def _epoch_split(split: ChannelSplit, cfg, epoch):
    if split.name == "random" and cfg.random_resample == "epoch":
        return random_split(split.total_channels, (split.seed or 0) * 100003 + epoch + 1)
    return split


def train_vae(model: CrossVAE, patches: np.ndarray, split: ChannelSplit, config: VaeConfig):
    """Minimize MSE(decode(z), X2) + KL over mini-batches with Adam.

    ``patches`` is an (N, s, s, C) array. In self-reconstruction mode the
    target is X1 itself (the plain autoencoder baseline).
    """
    cfg = config
    history = LossHistory(("mse", "kl", "total"))
    if cfg.epochs <= 0:
        return model, history
    dtype = next(model.parameters()).dtype
    data = torch.as_tensor(np.asarray(patches), dtype=dtype)
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.9, 0.999),
                           eps=1e-8, weight_decay=cfg.weight_decay)
    model.train()
    step = 0
    for epoch in range(cfg.epochs):
        sp = _epoch_split(split, cfg, epoch)
        i1 = torch.as_tensor(sp.indices1)
        i2 = torch.as_tensor(sp.indices1 if cfg.self_reconstruction else sp.indices2)
        meter = EpochMeter()
        for idx in batches(len(data), cfg.batch_size, rng):
            xb = data[torch.as_tensor(idx)]
            x1, target = xb[..., i1], xb[..., i2]
            noise = torch.randn(len(idx), model.latent_dim, generator=gen, dtype=dtype)
            total, mse, kl = vae_loss(model, x1, target, noise)
            check_finite(step, mse=mse, kl=kl, total=total)
            opt.zero_grad()
            total.backward()
            opt.step()
            meter.add(len(idx), mse=mse, kl=kl, total=total)
            step += 1
        history.append(epoch=epoch, **meter.means())
    model.eval()
    return model, history


@torch.no_grad()
def encode_patches(model: CrossVAE, patches, split: ChannelSplit, batch_size=256):
    """Posterior means of every patch's X1 view, as an (N, latent) array."""
    model.eval()
    dtype = next(model.parameters()).dtype
    i1 = list(split.indices1)
    out = []
    for idx in batches(len(patches), batch_size, None):
        x1 = torch.as_tensor(np.asarray(patches[idx])[..., i1], dtype=dtype)
        out.append(model.encode(x1)[0])
    if not out:
        return np.zeros((0, model.latent_dim))
    return torch.cat(out).double().numpy()
