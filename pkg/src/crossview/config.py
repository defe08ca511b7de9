"""Run configuration: JSON schema, defaults, per-stage seeds and cache keys.

A run config is a JSON object; every block is optional and falls back to
the defaults below. Paths are resolved relative to the config file.

    {
      "dataset":   {"cube": "ip_cube.f32", "ground_truth": "ip_gt.u16", "name": "IP"},
      "seed": 0,
      "output": "runs/ip",
      "pca":       {"k": 30, "standardize": false},
      "patches":   {"size": 27, "scale": "global_std"},
      "split":     {"strategy": "parity", "seed": null, "random_resample": "epoch"},
      "backbone":  {"latent_dim": 128, ...},
      "vae":       {"epochs": 40, "batch_size": 256, "lr": 0.001, "weight_decay": 0.0005},
      "aae":       {"epochs": 30, ..., "generator_lr": 0.0001, "discriminator_lr": 5e-05, "clip": 0.01},
      "contrast":  {"epochs": 200, "lr": 0.0003, "weight_decay": 0.001, "alpha": 9, "lam": 100,
                    "tau": 0.99, "select_epoch": -1, "input": "mean"},
      "svm":       {"reg": 0.0001, "epochs": 100},
      "train_fraction": 0.1,
      "ablation":  {"self_reconstruction": false, "feature_source": "contrast",
                    "pairing_mode": "cross_view"}
    }

A ``seed`` of null in any block means "derive from the master seed".
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .aae import AaeConfig
from .channelsplit import STRATEGIES
from .contrast import ContrastConfig
from .evaluate import SvmConfig
from .layers import BackboneConfig
from .vae import VaeConfig


class ConfigError(ValueError):
    """The run configuration is malformed or out of range."""


DEFAULTS = {
    "dataset": {"cube": None, "ground_truth": None, "name": ""},
    "seed": 0,
    "output": "runs/default",
    "pca": {"k": 30, "standardize": False},
    "patches": {"size": 27, "scale": "global_std"},
    "split": {"strategy": "parity", "seed": None, "random_resample": "epoch"},
    "backbone": {
        "conv3d_channels": [8, 16, 32],
        "conv3d_kernels": [[7, 3, 3], [5, 3, 3], [3, 3, 3]],
        "conv2d_channels": 64,
        "pool_size": 4,
        "hidden_dim": 512,
        "latent_dim": 128,
        "batch_norm": True,
    },
    "vae": {"epochs": 40, "batch_size": 256, "lr": 1e-3, "weight_decay": 5e-4,
            "seed": None, "dtype": "float32"},
    "aae": {"epochs": 30, "batch_size": 256, "lr": 1e-3, "weight_decay": 5e-4,
            "generator_lr": 1e-4, "discriminator_lr": 5e-5, "clip": 0.01,
            "discriminator_hidden": [64, 32], "seed": None, "dtype": "float32"},
    "contrast": {"epochs": 200, "batch_size": 256, "lr": 3e-4, "weight_decay": 1e-3,
                 "alpha": 9.0, "lam": 100.0, "tau": 0.99, "hidden_dim": 512,
                 "conv_channels": [32, 64, 64, 64, 32], "select_epoch": -1,
                 "input": "mean", "seed": None, "dtype": "float32"},
    "svm": {"reg": 1e-4, "epochs": 100, "seed": None},
    "train_fraction": 0.1,
    "ablation": {"self_reconstruction": False, "feature_source": "contrast",
                 "pairing_mode": "cross_view"},
}

# training fractions per dataset protocol
PROTOCOL_FRACTIONS = {"IP": 0.10, "PU": 0.10, "SA": 0.05}

FEATURE_SOURCES = ("vae", "aae", "contrast")
CONTRAST_INPUTS = ("vae", "aae", "mean")


def _merge(base, override, where=""):
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if key not in base:
            raise ConfigError(f"unknown config field {where}{key!r}")
        if isinstance(base[key], dict) and key != "dataset":
            if not isinstance(value, dict):
                raise ConfigError(f"config field {where}{key!r} must be an object")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        elif key == "dataset":
            if not isinstance(value, dict):
                raise ConfigError("config field 'dataset' must be an object")
            out[key] = {**base[key], **value}
        else:
            out[key] = value
    return out


def stage_seed(master: int, stage: str) -> int:
    """32-bit seed for ``stage``: sha256 of "<master>/<stage>"."""
    digest = hashlib.sha256(f"{int(master)}/{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


class RunConfig:
    """Validated, defaults-filled run configuration."""

    def __init__(self, data: dict | None = None, base_dir=None):
        data = dict(data or {})
        if "train_fraction" not in data:
            name = (data.get("dataset") or {}).get("name", "")
            if name in PROTOCOL_FRACTIONS:
                data["train_fraction"] = PROTOCOL_FRACTIONS[name]
        self.data = _merge(DEFAULTS, data)
        self.base_dir = Path(base_dir) if base_dir else Path.cwd()
        self.validate()

    @classmethod
    def load(cls, path, overrides: dict | None = None):
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        cfg = cls(data, base_dir=path.parent)
        if overrides:
            cfg = cfg.with_overrides(overrides)
        return cfg

    def with_overrides(self, overrides: dict) -> "RunConfig":
        data = copy.deepcopy(self.data)
        for dotted, value in overrides.items():
            node = data
            *parents, leaf = dotted.split(".")
            for p in parents:
                node = node[p]
            node[leaf] = value
        return RunConfig(data, self.base_dir)

    def __getitem__(self, key):
        return self.data[key]

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)

    # -- validation ---------------------------------------------------------

    def validate(self):
        d = self.data

        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(isinstance(d["seed"], int), "seed must be an integer")
        need(isinstance(d["pca"]["k"], int) and d["pca"]["k"] >= 1, "pca.k must be a positive integer")
        s = d["patches"]["size"]
        need(isinstance(s, int) and s >= 1 and s % 2 == 1, "patches.size must be a positive odd integer")
        need(d["patches"]["scale"] in ("none", "global_std"), "patches.scale must be 'none' or 'global_std'")
        need(d["split"]["strategy"] in STRATEGIES, f"split.strategy must be one of {STRATEGIES}")
        need(d["split"]["random_resample"] in ("epoch", "run"), "split.random_resample must be 'epoch' or 'run'")
        need(0.0 < float(d["train_fraction"]) <= 1.0, "train_fraction must lie in (0, 1]")
        for block in ("vae", "aae", "contrast", "svm"):
            need(int(d[block]["epochs"]) >= 0, f"{block}.epochs must be >= 0")
        for block in ("vae", "aae", "contrast"):
            need(int(d[block]["batch_size"]) >= 1, f"{block}.batch_size must be >= 1")
            need(d[block]["dtype"] in ("float32", "float64"), f"{block}.dtype must be float32 or float64")
        c = d["contrast"]
        need(float(c["alpha"]) >= 0 and float(c["lam"]) >= 0, "contrast.alpha and contrast.lam must be >= 0")
        need(0.0 <= float(c["tau"]) <= 1.0, "contrast.tau must lie in [0, 1]")
        need(c["input"] in CONTRAST_INPUTS, f"contrast.input must be one of {CONTRAST_INPUTS}")
        need(float(d["svm"]["reg"]) > 0, "svm.reg must be positive")
        a = d["ablation"]
        need(a["feature_source"] in FEATURE_SOURCES, f"ablation.feature_source must be one of {FEATURE_SOURCES}")
        need(a["pairing_mode"] in ("cross_view", "same_view"), "ablation.pairing_mode must be cross_view or same_view")
        need(d["backbone"]["latent_dim"] >= 2, "backbone.latent_dim must be >= 2")
        try:
            BackboneConfig.from_dict(d["backbone"])
        except TypeError as exc:
            raise ConfigError(f"bad backbone block: {exc}") from None

    # -- paths --------------------------------------------------------------

    def dataset_path(self, key) -> Path:
        value = self.data["dataset"].get(key)
        if not value:
            raise ConfigError(f"dataset.{key} is not set")
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        p = Path(self.data["output"])
        return p if p.is_absolute() else self.base_dir / p

    # -- per-stage objects --------------------------------------------------

    def seed_for(self, block: str, stage: str) -> int:
        explicit = self.data[block].get("seed") if isinstance(self.data.get(block), dict) else None
        return int(explicit) if explicit is not None else stage_seed(self.data["seed"], stage)

    def backbone(self) -> BackboneConfig:
        return BackboneConfig.from_dict(self.data["backbone"])

    def vae_config(self) -> VaeConfig:
        v = self.data["vae"]
        return VaeConfig(
            epochs=int(v["epochs"]), batch_size=int(v["batch_size"]), lr=float(v["lr"]),
            weight_decay=float(v["weight_decay"]), seed=self.seed_for("vae", "train-vae"),
            self_reconstruction=bool(self.data["ablation"]["self_reconstruction"]),
            random_resample=self.data["split"]["random_resample"], dtype=v["dtype"],
            backbone=self.backbone(),
        )

    def aae_config(self) -> AaeConfig:
        a = self.data["aae"]
        return AaeConfig(
            epochs=int(a["epochs"]), batch_size=int(a["batch_size"]), lr=float(a["lr"]),
            weight_decay=float(a["weight_decay"]), generator_lr=float(a["generator_lr"]),
            discriminator_lr=float(a["discriminator_lr"]), clip=float(a["clip"]),
            seed=self.seed_for("aae", "train-aae"),
            self_reconstruction=bool(self.data["ablation"]["self_reconstruction"]),
            random_resample=self.data["split"]["random_resample"], dtype=a["dtype"],
            backbone=self.backbone(), discriminator_hidden=tuple(a["discriminator_hidden"]),
        )

    def contrast_config(self) -> ContrastConfig:
        c = self.data["contrast"]
        return ContrastConfig(
            alpha=float(c["alpha"]), lam=float(c["lam"]), tau=float(c["tau"]), lr=float(c["lr"]),
            weight_decay=float(c["weight_decay"]), epochs=int(c["epochs"]),
            batch_size=int(c["batch_size"]), seed=self.seed_for("contrast", "train-contrast"),
            pairing_mode=self.data["ablation"]["pairing_mode"], hidden_dim=int(c["hidden_dim"]),
            conv_channels=tuple(c["conv_channels"]), dtype=c["dtype"],
        )

    def svm_config(self) -> SvmConfig:
        s = self.data["svm"]
        return SvmConfig(reg=float(s["reg"]), epochs=int(s["epochs"]), seed=self.seed_for("svm", "svm"))

    def channel_split_seed(self) -> int:
        return self.seed_for("split", "channel-split")

    def train_split_seed(self) -> int:
        return stage_seed(self.data["seed"], "train-split")


def fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()
