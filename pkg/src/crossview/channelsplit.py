"""Channel-subset augmentations that turn one patch into two views.

All fractional channel counts (C/2, C/3, C/6, 2C/3) are floored, so every
C that meets a strategy's minimum is valid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STRATEGIES = ("parity", "sequential", "random", "overlap")


@dataclass(frozen=True)
class ChannelSplit:
    name: str
    indices1: tuple[int, ...]
    indices2: tuple[int, ...]
    total_channels: int
    seed: int | None = None

    def __post_init__(self):
        for idx in (self.indices1, self.indices2):
            if any(i < 0 or i >= self.total_channels for i in idx):
                raise ValueError("channel index out of range")
            if any(a >= b for a, b in zip(idx, idx[1:])):
                raise ValueError("channel indices must be strictly increasing")

    @property
    def overlap(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.indices1) & set(self.indices2)))

    def describe(self) -> str:
        head = f"{self.name} split, C={self.total_channels}"
        if self.seed is not None:
            head += f", seed={self.seed}"
        return (
            f"{head}\n"
            f"X1 ({len(self.indices1)}): {list(self.indices1)}\n"
            f"X2 ({len(self.indices2)}): {list(self.indices2)}"
        )


def _check(c, minimum, name):
    if c < minimum:
        raise ValueError(f"{name} split needs at least {minimum} channels, got {c}")


def parity_split(c: int) -> ChannelSplit:
    # X[..., 0::2] / X[..., 1::2]
    _check(c, 2, "parity")
    return ChannelSplit("parity", tuple(range(0, c, 2)), tuple(range(1, c, 2)), c)


def sequential_split(c: int) -> ChannelSplit:
    _check(c, 2, "sequential")
    half = c // 2
    return ChannelSplit("sequential", tuple(range(half)), tuple(range(half, c)), c)


def random_split(c: int, seed: int) -> ChannelSplit:
    """First half of the channels plus floor(C/6) channels sampled from the
    second half form X1; X2 is the fixed last two-thirds."""
    _check(c, 6, "random")
    half, third, sixth = c // 2, c // 3, c // 6
    rng = np.random.default_rng(seed)
    extra = rng.choice(np.arange(half, c), size=sixth, replace=False)
    first = tuple(range(half)) + tuple(sorted(int(i) for i in extra))
    return ChannelSplit("random", first, tuple(range(third, c)), c, seed=seed)


def overlap_split(c: int) -> ChannelSplit:
    _check(c, 3, "overlap")
    return ChannelSplit(
        "overlap", tuple(range(2 * c // 3)), tuple(range(c // 3, c)), c
    )


def make_split(name: str, c: int, seed: int = 0) -> ChannelSplit:
    if name == "parity":
        return parity_split(c)
    if name == "sequential":
        return sequential_split(c)
    if name == "random":
        return random_split(c, seed)
    if name == "overlap":
        return overlap_split(c)
    raise ValueError(f"unknown split strategy {name!r}; expected one of {STRATEGIES}")


def apply_split(patch: np.ndarray, split: ChannelSplit):
    """Gather the two channel views from ``patch`` (channels on the last axis).

    Works on a single s x s x C patch or a stacked batch.
    """
    if patch.shape[-1] != split.total_channels:
        raise ValueError(
            f"patch has {patch.shape[-1]} channels, split expects {split.total_channels}"
        )
    return (
        np.take(patch, split.indices1, axis=-1),
        np.take(patch, split.indices2, axis=-1),
    )
