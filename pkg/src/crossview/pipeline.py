"""Two-stage pipeline with content-addressed stage artifacts.

Stages run in this order::

    pca -> patches -> train-vae -> train-aae -> train-contrast
        -> extract -> classify -> evaluate

Each stage writes into ``<output>/<stage>-<key>/`` where ``key`` hashes the
stage's own config subtree together with the keys of its upstream stages,
so changing a block invalidates that stage and everything downstream of it
and nothing else. A ``done.json`` marker is written last; directories
without it are treated as absent.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
from pathlib import Path

import numpy as np
import torch

from . import aae as aae_mod
from . import contrast as con_mod
from . import vae as vae_mod
from .channelsplit import make_split
from .config import RunConfig, fingerprint
from .datacube import (
    FormatError,
    HyperCube,
    PatchSet,
    apply_pca,
    extract_patches,
    fit_pca,
    load_cube,
    load_ground_truth,
    save_cube,
    stratified_split,
)
from .evaluate import MetricsReport, classify, compute_metrics, train_svm
from .io import (
    AAE_BLOCKS,
    CONTRAST_BLOCKS,
    VAE_BLOCKS,
    load_features,
    load_params,
    save_features,
    save_params,
)

log = logging.getLogger(__name__)

STAGES = ("pca", "patches", "train-vae", "train-aae", "train-contrast",
          "extract", "classify", "evaluate")

ARTIFACT_NAMES = {
    "pca": "PCA",
    "patches": "patches",
    "train-vae": "VAE",
    "train-aae": "AAE",
    "train-contrast": "contrastive model",
    "extract": "features",
    "classify": "predictions",
    "evaluate": "metrics",
}


class MissingArtifactError(RuntimeError):
    """An upstream stage has not been run for this configuration."""

    def __init__(self, stage):
        self.stage = stage
        super().__init__(f"missing {ARTIFACT_NAMES[stage]} artifact (run stage '{stage}' first)")


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    for p in (path, path.with_name(path.name + ".json")):
        with open(p, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()


def configure_threads():
    n = os.environ.get("CROSSVIEW_THREADS")
    if n:
        torch.set_num_threads(max(1, int(n)))


class Pipeline:
    def __init__(self, config: RunConfig):
        self.cfg = config
        self.out = config.output_dir
        self._keys = None
        self._memo = {}

    # -- keys and directories ----------------------------------------------

    def upstream(self, stage):
        c = self.cfg
        src = c["ablation"]["feature_source"]
        return {
            "pca": (),
            "patches": ("pca",),
            "train-vae": ("patches",),
            "train-aae": ("patches",),
            "train-contrast": ("train-vae", "train-aae"),
            "extract": {"vae": ("train-vae",), "aae": ("train-aae",),
                        "contrast": ("train-contrast",)}[src],
            "classify": ("patches", "extract"),
            "evaluate": ("patches", "classify"),
        }[stage]

    def stage_params(self, stage):
        c = self.cfg
        split = {"strategy": c["split"]["strategy"], "seed": c.channel_split_seed(),
                 "random_resample": c["split"]["random_resample"]}
        selfrec = c["ablation"]["self_reconstruction"]
        if stage == "pca":
            return {"cube": _file_digest(c.dataset_path("cube")), **c["pca"]}
        if stage == "patches":
            return {"ground_truth": _file_digest(c.dataset_path("ground_truth")), **c["patches"]}
        if stage == "train-vae":
            return {"vae": c["vae"], "seed": c.vae_config().seed, "backbone": c["backbone"],
                    "split": split, "self_reconstruction": selfrec}
        if stage == "train-aae":
            return {"aae": c["aae"], "seed": c.aae_config().seed, "backbone": c["backbone"],
                    "split": split, "self_reconstruction": selfrec}
        if stage == "train-contrast":
            block = {k: v for k, v in c["contrast"].items() if k not in ("select_epoch", "input")}
            return {"contrast": block, "seed": c.contrast_config().seed,
                    "pairing_mode": c["ablation"]["pairing_mode"]}
        if stage == "extract":
            src = c["ablation"]["feature_source"]
            if src != "contrast":
                return {"source": src}
            return {"source": src, "select_epoch": c["contrast"]["select_epoch"],
                    "input": c["contrast"]["input"]}
        if stage == "classify":
            return {"svm": c["svm"], "seed": c.svm_config().seed,
                    "train_fraction": c["train_fraction"], "split_seed": c.train_split_seed()}
        if stage == "evaluate":
            return {}
        raise KeyError(stage)

    def keys(self):
        if self._keys is None:
            keys = {}
            for stage in STAGES:
                keys[stage] = fingerprint({
                    "stage": stage,
                    "params": self.stage_params(stage),
                    "upstream": {u: keys[u] for u in self.upstream(stage)},
                })[:16]
            self._keys = keys
        return self._keys

    def stage_dir(self, stage) -> Path:
        return self.out / f"{stage}-{self.keys()[stage]}"

    def is_done(self, stage) -> bool:
        return (self.stage_dir(stage) / "done.json").exists()

    def required(self, stage):
        """All transitive upstream stages in pipeline order."""
        need, todo = set(), list(self.upstream(stage))
        while todo:
            s = todo.pop()
            if s not in need:
                need.add(s)
                todo.extend(self.upstream(s))
        return [s for s in STAGES if s in need]

    # -- running -------------------------------------------------------------

    def run_stage(self, stage, force=False):
        """Run one stage; upstream artifacts must already exist."""
        for s in self.required(stage):
            if not self.is_done(s):
                raise MissingArtifactError(s)
        if self.is_done(stage) and not force:
            log.info("stage %s: cached at %s", stage, self.stage_dir(stage))
            return self.stage_dir(stage)
        d = self.stage_dir(stage)
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)
        log.info("stage %s: running -> %s", stage, d)
        try:
            getattr(self, "_run_" + stage.replace("-", "_"))(d)
        except (MissingArtifactError, FormatError):
            raise
        except Exception as exc:
            raise StageError(stage, exc) from exc
        (d / "done.json").write_text(json.dumps(
            {"stage": stage, "key": self.keys()[stage], "params": self.stage_params(stage)},
            sort_keys=True, indent=2, default=str))
        return d

    def run_all(self) -> MetricsReport:
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "config.json").write_text(self.cfg.to_json())
        for stage in self.required("evaluate") + ["evaluate"]:
            self.run_stage(stage)
        return self.metrics()

    # -- loaders -------------------------------------------------------------

    def reduced_cube(self) -> HyperCube:
        if "cube" not in self._memo:
            self._memo["cube"] = load_cube(self.stage_dir("pca") / "reduced.f32")
        return self._memo["cube"]

    def patch_set(self) -> PatchSet:
        if "patches" not in self._memo:
            d = self.stage_dir("patches")
            meta = json.loads((d / "patches.json").read_text())
            gt = load_ground_truth(self.cfg.dataset_path("ground_truth"))
            cube = self.reduced_cube()
            scaled = HyperCube((cube.data / meta["scale"]).astype(np.float32))
            ps = extract_patches(scaled, gt, meta["size"])
            self._memo["patches"] = ps
            self._memo["num_classes"] = gt.num_classes
        return self._memo["patches"]

    def num_classes(self) -> int:
        self.patch_set()
        return self._memo["num_classes"]

    def channel_split(self, channels=None):
        c = self.cfg
        k = channels if channels is not None else c["pca"]["k"]
        return make_split(c["split"]["strategy"], k, c.channel_split_seed())

    def codes(self, which) -> np.ndarray:
        stage = {"vae": "train-vae", "aae": "train-aae"}[which]
        return load_features(self.stage_dir(stage) / "codes.f32")

    def features(self) -> np.ndarray:
        return load_features(self.stage_dir("extract") / "features.f32")

    def metrics(self) -> MetricsReport:
        data = json.loads((self.stage_dir("evaluate") / "metrics.json").read_text())
        per = np.array([np.nan if a is None else a for a in data["per_class"]])
        return MetricsReport(per, data["oa"], data["aa"], np.array(data["confusion"]))

    # -- stage bodies ------------------------------------------------------

    def _run_pca(self, d: Path):
        c = self.cfg
        cube = load_cube(c.dataset_path("cube"))
        model = fit_pca(cube, c["pca"]["k"], standardize=c["pca"]["standardize"])
        np.savez(d / "pca.npz", mean=model.mean, components=model.components,
                 explained_variance=model.explained_variance,
                 scale=model.scale if model.scale is not None else np.zeros(0))
        save_cube(apply_pca(cube, model), d / "reduced.f32")

    def _run_patches(self, d: Path):
        c = self.cfg
        gt = load_ground_truth(c.dataset_path("ground_truth"))
        cube = self.reduced_cube()
        scale = 1.0
        if c["patches"]["scale"] == "global_std":
            scale = float(np.asarray(cube.data, dtype=np.float64).std()) or 1.0
        size = c["patches"]["size"]
        ps = extract_patches(cube, gt, size)  # validates geometry
        np.save(d / "labels.npy", ps.labels)
        np.save(d / "coords.npy", ps.coords)
        (d / "patches.json").write_text(json.dumps(
            {"size": size, "scale": scale, "count": len(ps), "num_classes": gt.num_classes,
             "class_counts": gt.class_counts}, indent=2))

    def _run_train_vae(self, d: Path):
        c = self.cfg
        ps = self.patch_set()
        split = self.channel_split(ps.reduced_channels)
        vcfg = c.vae_config()
        target = split.indices1 if vcfg.self_reconstruction else split.indices2
        model = vae_mod.build_vae(len(split.indices1), len(target), ps.patch_size,
                                  vcfg.backbone, seed=vcfg.seed, dtype=vcfg.dtype)
        model, hist = vae_mod.train_vae(model, ps.patches, split, vcfg)
        save_params(d / "vae.params", model, VAE_BLOCKS, self._header("vae", vcfg.seed, split))
        hist.to_csv(d / "history.csv")
        save_features(d / "codes.f32", vae_mod.encode_patches(model, ps.patches, split))

    def _run_train_aae(self, d: Path):
        c = self.cfg
        ps = self.patch_set()
        split = self.channel_split(ps.reduced_channels)
        acfg = c.aae_config()
        target = split.indices2 if acfg.self_reconstruction else split.indices1
        model = aae_mod.build_aae(len(split.indices2), len(target), ps.patch_size,
                                  acfg.backbone, seed=acfg.seed, dtype=acfg.dtype,
                                  discriminator_hidden=acfg.discriminator_hidden)
        model, hist = aae_mod.train_aae(model, ps.patches, split, acfg)
        save_params(d / "aae.params", model, AAE_BLOCKS, self._header("aae", acfg.seed, split))
        hist.to_csv(d / "history.csv")
        save_features(d / "codes.f32", aae_mod.encode_patches(model, ps.patches, split))

    def _run_train_contrast(self, d: Path):
        ccfg = self.cfg.contrast_config()
        v, a = self.codes("vae"), self.codes("aae")
        nets = con_mod.build_contrast(v.shape[1], ccfg)
        result = con_mod.train_contrast(nets, v, a, ccfg)
        save_params(d / "contrast.params", result.nets, CONTRAST_BLOCKS,
                    {"architecture": {"feature_dim": v.shape[1], "hidden_dim": ccfg.hidden_dim,
                                      "conv_channels": list(ccfg.conv_channels)},
                     "seeds": {"contrast": ccfg.seed}})
        result.history.to_csv(d / "history.csv")
        if result.snapshots:
            flat = {f"{e}/{k}": t.numpy() for e, snap in enumerate(result.snapshots)
                    for k, t in snap.items()}
            np.savez_compressed(d / "snapshots.npz", **flat)

    def _load_contrast(self, select_epoch):
        ccfg = self.cfg.contrast_config()
        d = self.stage_dir("train-contrast")
        dim = self.codes("vae").shape[1]
        nets = con_mod.build_contrast(dim, ccfg)
        load_params(d / "contrast.params", nets)
        if select_epoch != -1 and (d / "snapshots.npz").exists():
            snaps = np.load(d / "snapshots.npz")
            n_epochs = 1 + max(int(k.split("/")[0]) for k in snaps.files)
            e = select_epoch % n_epochs
            state = nets.online_encoder.state_dict()
            nets.online_encoder.load_state_dict(
                {k: torch.as_tensor(snaps[f"{e}/{k}"]).to(state[k].dtype) for k in state})
        nets.eval()
        return nets

    def _run_extract(self, d: Path):
        c = self.cfg
        src = c["ablation"]["feature_source"]
        if src in ("vae", "aae"):
            feats = self.codes(src)
        else:
            nets = self._load_contrast(int(c["contrast"]["select_epoch"]))
            how = c["contrast"]["input"]
            if how == "mean":
                feats = 0.5 * (con_mod.extract_features(nets, self.codes("vae"))
                               + con_mod.extract_features(nets, self.codes("aae")))
            else:
                feats = con_mod.extract_features(nets, self.codes(how))
        save_features(d / "features.f32", feats)

    def _run_classify(self, d: Path):
        c = self.cfg
        ps = self.patch_set()
        feats = self.features()
        split = stratified_split(ps.labels, float(c["train_fraction"]), c.train_split_seed())
        model = train_svm(feats, ps.labels, split, c.svm_config())
        pred = classify(model, feats)
        np.savez(d / "classify.npz", train=split.train_indices, test=split.test_indices,
                 predicted=pred, weights=model.weights, biases=model.biases,
                 mean=model.mean, std=model.std, classes=model.classes)

    def _run_evaluate(self, d: Path):
        ps = self.patch_set()
        res = np.load(self.stage_dir("classify") / "classify.npz")
        test = res["test"]
        if test.size == 0:
            raise ValueError("empty test set (train_fraction = 1)")
        report = compute_metrics(res["predicted"][test], ps.labels[test], self.num_classes())
        report.to_json(d / "metrics.json")
        report.to_csv(d / "metrics.csv")

    def _header(self, kind, seed, split):
        return {
            "kind": kind,
            "architecture": {"backbone": self.cfg["backbone"],
                             "in_channels": len(split.indices1 if kind == "vae" else split.indices2)},
            "seeds": {kind: seed, "channel_split": split.seed},
            "split": {"name": split.name, "indices1": list(split.indices1),
                      "indices2": list(split.indices2)},
        }
