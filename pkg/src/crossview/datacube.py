"""Hyperspectral cube ingestion, PCA reduction, patch extraction and
stratified train/test splitting.

Containers on disk are a raw little-endian payload plus a JSON sidecar that
lives next to it at ``<payload>.json``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "FormatError",
    "HyperCube",
    "GroundTruth",
    "PcaModel",
    "PatchSet",
    "IndexSplit",
    "sidecar_path",
    "load_cube",
    "save_cube",
    "load_ground_truth",
    "save_ground_truth",
    "fit_pca",
    "apply_pca",
    "extract_patches",
    "stratified_split",
]


class FormatError(ValueError):
    """A container file or its sidecar is missing, corrupt or inconsistent."""


@dataclass
class HyperCube:
    data: np.ndarray  # (height, width, channels)
    wavelength_note: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"cube data must be 3-D, got shape {self.data.shape}")
        h, w, c = self.data.shape
        if h < 1 or w < 1 or c < 1:
            raise ValueError(f"degenerate cube shape {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class GroundTruth:
    labels: np.ndarray  # (height, width), 0 = unlabeled
    class_names: list[str]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 2:
            raise ValueError("label map must be 2-D")
        k = len(self.class_names)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > k):
            raise ValueError(f"labels must lie in [0, {k}]")

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def class_counts(self) -> list[int]:
        counts = np.bincount(self.labels.ravel(), minlength=self.num_classes + 1)
        return [int(c) for c in counts[1:]]


@dataclass
class PcaModel:
    mean: np.ndarray  # (C,)
    components: np.ndarray  # (k, C), rows orthonormal
    explained_variance: np.ndarray  # (k,), descending
    scale: np.ndarray | None = None  # (C,) per-band std when standardized

    @property
    def k(self) -> int:
        return self.components.shape[0]


@dataclass
class PatchSet:
    patches: np.ndarray  # (N, s, s, k)
    labels: np.ndarray  # (N,), values in 1..K
    coords: np.ndarray  # (N, 2) row, col

    @property
    def patch_size(self) -> int:
        return self.patches.shape[1]

    @property
    def reduced_channels(self) -> int:
        return self.patches.shape[3]

    def __len__(self) -> int:
        return self.patches.shape[0]


@dataclass
class IndexSplit:
    train_indices: np.ndarray
    test_indices: np.ndarray
    fraction: float
    seed: int
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# containers


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _read_sidecar(path, required):
    side = sidecar_path(path)
    try:
        meta = json.loads(side.read_text())
    except FileNotFoundError:
        raise FormatError(f"missing sidecar {side}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"corrupt sidecar {side}: {exc}") from None
    if not isinstance(meta, dict):
        raise FormatError(f"sidecar {side} must hold a JSON object")
    for key in required:
        if key not in meta:
            raise FormatError(f"sidecar {side} lacks field {key!r}")
    return meta


def _read_payload(path, dtype, expected):
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError:
        raise FormatError(f"missing payload {path}") from None
    itemsize = np.dtype(dtype).itemsize
    if len(raw) != expected * itemsize:
        raise FormatError(
            f"payload {path} holds {len(raw)} bytes, sidecar implies "
            f"{expected * itemsize} ({expected} values)"
        )
    return np.frombuffer(raw, dtype=dtype)


def load_cube(path) -> HyperCube:
    meta = _read_sidecar(path, ("height", "width", "channels"))
    try:
        h, w, c = (int(meta[k]) for k in ("height", "width", "channels"))
    except (TypeError, ValueError):
        raise FormatError("cube dimensions must be integers") from None
    if h < 1 or w < 1 or c < 1:
        raise FormatError(f"invalid cube dimensions {(h, w, c)}")
    flat = _read_payload(path, "<f4", h * w * c)
    return HyperCube(flat.reshape(h, w, c).copy(), meta.get("wavelength_note", ""))


def save_cube(cube: HyperCube, path) -> None:
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(cube.data, dtype="<f4").tobytes())
    meta = {"height": cube.height, "width": cube.width, "channels": cube.channels}
    if cube.wavelength_note:
        meta["wavelength_note"] = cube.wavelength_note
    sidecar_path(path).write_text(json.dumps(meta))


def load_ground_truth(path) -> GroundTruth:
    meta = _read_sidecar(path, ("height", "width", "num_classes"))
    h, w, k = int(meta["height"]), int(meta["width"]), int(meta["num_classes"])
    names = meta.get("class_names") or [f"class_{i}" for i in range(1, k + 1)]
    if len(names) != k:
        raise FormatError(f"{len(names)} class names for {k} classes")
    labels = _read_payload(path, "<u2", h * w).reshape(h, w).astype(np.int64)
    if labels.size and labels.max() > k:
        raise FormatError(f"label {int(labels.max())} exceeds num_classes={k}")
    return GroundTruth(labels, list(names))


def save_ground_truth(gt: GroundTruth, path) -> None:
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(gt.labels, dtype="<u2").tobytes())
    meta = {
        "height": gt.height,
        "width": gt.width,
        "num_classes": gt.num_classes,
        "class_names": list(gt.class_names),
    }
    sidecar_path(path).write_text(json.dumps(meta))


# ---------------------------------------------------------------------------
# PCA


def fit_pca(cube: HyperCube, k: int, standardize: bool = False) -> PcaModel:
    """Fit PCA on every pixel of ``cube`` by eigendecomposition of the
    channel covariance (double precision).

    Each component is sign-normalized so that its largest-magnitude entry is
    positive, which makes the projection reproducible across LAPACK builds.
    """
    c = cube.channels
    if not 1 <= k <= c:
        raise ValueError(f"k must be in [1, {c}], got {k}")
    x = cube.data.reshape(-1, c).astype(np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cube contains non-finite values")
    mean = x.mean(axis=0)
    x = x - mean
    scale = None
    if standardize:
        scale = np.maximum(x.std(axis=0), 1e-12)
        x = x / scale
    cov = x.T @ x / x.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order].T
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), pivot])
    signs[signs == 0] = 1.0
    comps = comps * signs[:, None]
    return PcaModel(mean=mean, components=comps, explained_variance=evals, scale=scale)


def apply_pca(cube: HyperCube, model: PcaModel) -> HyperCube:
    if model.mean.shape[0] != cube.channels:
        raise ValueError(
            f"PCA model expects {model.mean.shape[0]} channels, cube has {cube.channels}"
        )
    x = cube.data.reshape(-1, cube.channels).astype(np.float64) - model.mean
    if model.scale is not None:
        x = x / model.scale
    out = x @ model.components.T
    return HyperCube(out.reshape(cube.height, cube.width, model.k), cube.wavelength_note)


def reconstruct(reduced: HyperCube, model: PcaModel) -> HyperCube:
    """Back-project a reduced cube into the original channel space."""
    x = reduced.data.reshape(-1, model.k) @ model.components
    if model.scale is not None:
        x = x * model.scale
    x = x + model.mean
    return HyperCube(x.reshape(reduced.height, reduced.width, -1))


# ---------------------------------------------------------------------------
# patches and splits


def extract_patches(cube: HyperCube, gt: GroundTruth, s: int) -> PatchSet:
    """One s x s patch per labeled pixel, in row-major pixel order.

    Windows that leave the image are filled by mirror reflection that does
    not repeat the edge pixel (``numpy.pad(mode="reflect")``).
    """
    if s < 1 or s % 2 == 0:
        raise ValueError(f"patch size must be a positive odd integer, got {s}")
    if (cube.height, cube.width) != (gt.height, gt.width):
        raise ValueError("cube and ground truth dimensions differ")
    r = s // 2
    if r >= min(cube.height, cube.width) and r > 0:
        # reflect padding needs pad < axis length
        raise ValueError(
            f"patch size {s} too large for a {cube.height}x{cube.width} image"
        )
    padded = np.pad(cube.data, ((r, r), (r, r), (0, 0)), mode="reflect")
    rows, cols = np.nonzero(gt.labels)
    patches = np.empty((rows.size, s, s, cube.channels), dtype=cube.data.dtype)
    for i, (y, x) in enumerate(zip(rows, cols)):
        patches[i] = padded[y : y + s, x : x + s]
    return PatchSet(
        patches=patches,
        labels=gt.labels[rows, cols].copy(),
        coords=np.stack([rows, cols], axis=1),
    )


def stratified_split(labels, fraction: float, seed: int) -> IndexSplit:
    """Per class, draw max(1, floor(fraction * n_c)) training indices
    uniformly without replacement; the rest are test indices.

    ``labels`` may be a PatchSet or a label array.
    """
    if isinstance(labels, PatchSet):
        labels = labels.labels
    labels = np.asarray(labels)
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    train = []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        n_train = max(1, int(np.floor(fraction * idx.size + 1e-9)))
        train.append(rng.choice(idx, size=n_train, replace=False))
    train = np.sort(np.concatenate(train)) if train else np.empty(0, dtype=np.int64)
    test = np.setdiff1d(np.arange(labels.size), train)
    return IndexSplit(train.astype(np.int64), test.astype(np.int64), fraction, seed)
