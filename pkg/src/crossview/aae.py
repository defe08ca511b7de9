"""Cross-channel adversarial autoencoder: encode X2, decode a prediction of
X1, and push the codes toward N(0, I) with a Wasserstein critic."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .channelsplit import ChannelSplit
from .layers import (
    BackboneConfig,
    EpochMeter,
    LossHistory,
    PatchDecoder,
    PatchEncoder,
    batches,
    check_finite,
    init_weights,
    resolve_dtype,
    seeded,
)
from .vae import _epoch_split, mse_loss


@dataclass
class AaeConfig:
    epochs: int = 30
    batch_size: int = 256
    lr: float = 1e-3
    weight_decay: float = 5e-4
    generator_lr: float = 1e-4
    discriminator_lr: float = 5e-5
    clip: float = 0.01
    seed: int = 0
    self_reconstruction: bool = False
    random_resample: str = "epoch"
    dtype: str = "float32"
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    discriminator_hidden: tuple[int, ...] = (64, 32)


@dataclass
class WganBatchStats:
    d_real_mean: float
    d_fake_mean: float
    d_loss: float
    g_loss: float


class Discriminator(nn.Module):
    def __init__(self, latent_dim, hidden=(64, 32)):
        super().__init__()
        layers, prev = [], latent_dim
        for h in hidden:
            layers += [nn.Linear(prev, h), nn.LeakyReLU(0.2)]
            prev = h
        layers.append(nn.Linear(prev, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, z):
        return self.net(z).squeeze(-1)


class CrossAAE(nn.Module):
    def __init__(self, in_channels, out_channels, patch_size, backbone=None,
                 discriminator_hidden=(64, 32)):
        super().__init__()
        cfg = backbone or BackboneConfig()
        self.backbone = cfg
        self.encoder = PatchEncoder(in_channels, cfg)
        self.head = nn.Linear(cfg.hidden_dim, cfg.latent_dim)
        self.decoder = PatchDecoder(out_channels, patch_size, cfg)
        self.discriminator = Discriminator(cfg.latent_dim, discriminator_hidden)

    @property
    def latent_dim(self):
        return self.backbone.latent_dim

    def encode(self, x):
        return self.head(self.encoder(x))

    def decode(self, z):
        return self.decoder(z)

    def forward(self, x):
        return self.decode(self.encode(x))

    def generator_parameters(self):
        return list(self.encoder.parameters()) + list(self.head.parameters())

    def autoencoder_parameters(self):
        return self.generator_parameters() + list(self.decoder.parameters())


def build_aae(in_channels, out_channels, patch_size, backbone=None, seed=0,
              dtype="float32", discriminator_hidden=(64, 32)):
    with seeded(seed):
        model = CrossAAE(in_channels, out_channels, patch_size, backbone, discriminator_hidden)
        init_weights(model)
    return model.to(resolve_dtype(dtype))


def aae_encode(model: CrossAAE, x2):
    if not isinstance(x2, torch.Tensor):
        x2 = torch.as_tensor(np.asarray(x2), dtype=next(model.parameters()).dtype)
    return model.encode(x2)


def wgan_objectives(d_real, d_fake):
    """Differentiable (critic, generator) objectives.

    The critic minimizes mean(D(fake)) - mean(D(real)); the generator
    minimizes -mean(D(fake)).
    """
    if d_real.numel() == 0 or d_fake.numel() == 0:
        raise ValueError("critic outputs must be non-empty")
    fake = d_fake.mean()
    return fake - d_real.mean(), -fake


def wgan_losses(d_real, d_fake) -> WganBatchStats:
    d_real = torch.as_tensor(np.asarray(d_real, dtype=np.float64)) if not isinstance(d_real, torch.Tensor) else d_real
    d_fake = torch.as_tensor(np.asarray(d_fake, dtype=np.float64)) if not isinstance(d_fake, torch.Tensor) else d_fake
    d_loss, g_loss = wgan_objectives(d_real, d_fake)
    return WganBatchStats(
        d_real_mean=float(d_real.mean()),
        d_fake_mean=float(d_fake.mean()),
        d_loss=float(d_loss),
        g_loss=float(g_loss),
    )


@torch.no_grad()
def clip_discriminator(model, c: float):
    """Clamp every critic parameter into [-c, c] (in place)."""
    if c <= 0:
        raise ValueError("clip bound must be positive")
    disc = model.discriminator if isinstance(model, CrossAAE) else model
    for p in disc.parameters():
        p.clamp_(-c, c)
    return model


def train_aae(model: CrossAAE, patches: np.ndarray, split: ChannelSplit, config: AaeConfig):
    """Per batch: reconstruction step (Adam on encoder+decoder), critic step
    (SGD + weight clipping), generator step (SGD on the encoder only)."""
    cfg = config
    history = LossHistory(("mse", "d_loss", "g_loss"))
    if cfg.epochs <= 0:
        return model, history
    dtype = next(model.parameters()).dtype
    data = torch.as_tensor(np.asarray(patches), dtype=dtype)
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    recon_opt = torch.optim.Adam(model.autoencoder_parameters(), lr=cfg.lr,
                                 betas=(0.9, 0.999), eps=1e-8, weight_decay=cfg.weight_decay)
    disc_opt = torch.optim.SGD(model.discriminator.parameters(), lr=cfg.discriminator_lr)
    gen_opt = torch.optim.SGD(model.generator_parameters(), lr=cfg.generator_lr)
    clip_discriminator(model, cfg.clip)
    model.train()
    step = 0
    for epoch in range(cfg.epochs):
        sp = _epoch_split(split, cfg, epoch)
        i2 = torch.as_tensor(sp.indices2)
        i1 = torch.as_tensor(sp.indices2 if cfg.self_reconstruction else sp.indices1)
        meter = EpochMeter()
        for idx in batches(len(data), cfg.batch_size, rng):
            xb = data[torch.as_tensor(idx)]
            x2, target = xb[..., i2], xb[..., i1]

            mse = mse_loss(model(x2), target)
            check_finite(step, mse=mse)
            recon_opt.zero_grad()
            mse.backward()
            recon_opt.step()

            real = torch.randn(len(idx), model.latent_dim, generator=gen, dtype=dtype)
            fake = model.encode(x2).detach()
            d_loss, _ = wgan_objectives(model.discriminator(real), model.discriminator(fake))
            disc_opt.zero_grad()
            d_loss.backward()
            disc_opt.step()
            clip_discriminator(model, cfg.clip)

            _, g_loss = wgan_objectives(real.new_zeros(1), model.discriminator(model.encode(x2)))
            gen_opt.zero_grad()
            g_loss.backward()
            gen_opt.step()

            check_finite(step, d_loss=d_loss, g_loss=g_loss)
            meter.add(len(idx), mse=mse, d_loss=d_loss, g_loss=g_loss)
            step += 1
        history.append(epoch=epoch, **meter.means())
    model.eval()
    return model, history


@torch.no_grad()
def encode_patches(model: CrossAAE, patches, split: ChannelSplit, batch_size=256):
    """Codes of every patch's X2 view, as an (N, latent) array."""
    model.eval()
    dtype = next(model.parameters()).dtype
    i2 = list(split.indices2)
    out = []
    for idx in batches(len(patches), batch_size, None):
        x2 = torch.as_tensor(np.asarray(patches[idx])[..., i2], dtype=dtype)
        out.append(model.encode(x2))
    if not out:
        return np.zeros((0, model.latent_dim))
    return torch.cat(out).double().numpy()
