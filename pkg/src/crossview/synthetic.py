"""Small synthetic hyperspectral scenes for smoke tests and demos."""

from __future__ import annotations

import numpy as np

from .datacube import GroundTruth, HyperCube


def class_signatures(num_classes: int, channels: int, rng) -> np.ndarray:
    """Smooth, well-separated reflectance curves, one row per class."""
    bands = np.linspace(0.0, 1.0, channels)
    sigs = []
    for k in range(num_classes):
        freq = 1.0 + k
        phase = rng.uniform(0, 2 * np.pi)
        sigs.append(0.5 + 0.25 * np.sin(2 * np.pi * freq * bands / 2 + phase) + 0.1 * k * bands)
    return np.array(sigs)


def signature_gap(signatures: np.ndarray) -> float:
    """Smallest pairwise RMS distance between class signatures."""
    k = len(signatures)
    gaps = [np.sqrt(np.mean((signatures[i] - signatures[j]) ** 2))
            for i in range(k) for j in range(i + 1, k)]
    return float(min(gaps))


def quadrant_labels(height: int, width: int, num_classes: int = 4) -> np.ndarray:
    """Label map tiling the image into a 2 x ceil(K/2) grid of class blocks."""
    cols = -(-num_classes // 2)
    rows = 2 if num_classes > 1 else 1
    r = np.minimum(np.arange(height) * rows // height, rows - 1)
    c = np.minimum(np.arange(width) * cols // width, cols - 1)
    labels = r[:, None] * cols + c[None, :] + 1
    return np.where(labels <= num_classes, labels, num_classes)


def make_scene(height=32, width=32, channels=30, num_classes=4, noise_ratio=0.1, seed=0):
    """Cube whose pixels are their class signature plus Gaussian noise with
    std ``noise_ratio`` times the signature gap. Every pixel is labeled."""
    rng = np.random.default_rng(seed)
    sigs = class_signatures(num_classes, channels, rng)
    labels = quadrant_labels(height, width, num_classes)
    sigma = noise_ratio * signature_gap(sigs)
    data = sigs[labels - 1] + rng.normal(0.0, sigma, size=(height, width, channels))
    cube = HyperCube(data.astype(np.float32), wavelength_note="synthetic")
    gt = GroundTruth(labels, [f"class_{k}" for k in range(1, num_classes + 1)])
    return cube, gt
