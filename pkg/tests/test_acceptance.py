"""The eight acceptance criteria, each at its stated tolerance.

Every test records a one-line verdict that is printed in the terminal
summary (see conftest.py). Criterion 6 needs the Indian Pines containers
under $CROSSVIEW_DATA and is skipped otherwise.
"""

import json
import math
import statistics
import time
from contextlib import contextmanager

import numpy as np
import pytest
import torch

from acceptance_log import record
from crossview.aae import build_aae, wgan_objectives
from crossview.channelsplit import make_split, overlap_split, parity_split, random_split, sequential_split
from crossview.cli import main as cli_main
from crossview.config import RunConfig
from crossview.contrast import (
    ContrastConfig,
    build_contrast,
    conditional_loss,
    contrast_step_losses,
    ema_update,
    joint_probability,
    mutual_info_loss,
    train_contrast,
)
from crossview.datacube import save_cube, save_ground_truth
from crossview.evaluate import compute_metrics
from crossview.pipeline import Pipeline
from crossview.synthetic import make_scene
from crossview.vae import build_vae, kl_loss, mse_loss, vae_encode
from fd import fd_max_rel_error, jitter_biases, mini_backbone
from scene import write_config, write_scene

EPS = np.finfo(np.float64).eps


@contextmanager
def criterion(number, detail):
    """Record PASS/FAIL/SKIP for ``number``; ``detail`` is a mutable list
    the test can append measurements to."""
    t0 = time.perf_counter()
    try:
        yield detail
    except pytest.skip.Exception as exc:
        record(number, None, str(exc))
        raise
    except BaseException as exc:
        record(number, False, "; ".join(detail + [f"{type(exc).__name__}: {exc}".splitlines()[0]]))
        raise
    else:
        detail.append(f"{time.perf_counter() - t0:.1f}s")
        record(number, True, "; ".join(detail))


def test_criterion_1_loss_oracles():
    with criterion(1, []) as notes:
        t0 = time.perf_counter()
        ln2 = math.log(2)
        diag = np.diag([0.5, 0.5])
        assert abs(float(mutual_info_loss(diag, 0.0)) + ln2) <= 1e-9
        assert abs(float(mutual_info_loss(np.full((2, 2), 0.25), 0.0))) <= 1e-9
        assert abs(float(mutual_info_loss(diag, 9.0)) + 19 * ln2) <= 1e-9
        f64 = dict(dtype=torch.float64)
        assert abs(float(kl_loss(torch.zeros(1, **f64), torch.ones(1, **f64)))) <= 1e-12
        assert abs(float(kl_loss(torch.ones(1, **f64), torch.ones(1, **f64))) - 0.5) <= 1e-12
        e1, e2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
        assert float(conditional_loss(e1, e1, e2, e2)) == -2.0
        assert float(conditional_loss(e1, e2, e2, e1)) == 2.0
        assert float(conditional_loss(e1, -e1, e2, -e2)) == 6.0
        elapsed = time.perf_counter() - t0
        notes.append(f"oracles exact, {elapsed * 1e3:.1f} ms")
        assert elapsed < 1.0


def test_criterion_2_gradient_verification():
    with criterion(2, []) as notes:
        t0 = time.perf_counter()
        rng = np.random.default_rng(2)
        x = torch.as_tensor(rng.normal(size=(8, 5, 5, 4)))
        x1, x2 = x[..., [0, 2]], x[..., [1, 3]]
        noise = torch.as_tensor(rng.normal(size=(8, 4)))
        real = torch.as_tensor(rng.normal(size=(8, 4)))
        errors = {}

        vae = jitter_biases(build_vae(2, 2, 5, mini_backbone(), seed=0, dtype="float64")).train()
        errors["mse"] = fd_max_rel_error(lambda: mse_loss(vae(x1, noise)[0], x2), vae.parameters())
        errors["kl"] = fd_max_rel_error(
            lambda: kl_loss(*vae_encode(vae, x1)),
            [p for n, p in vae.named_parameters() if not n.startswith("decoder")])

        aae = jitter_biases(build_aae(2, 2, 5, mini_backbone(), seed=0, dtype="float64",
                                      discriminator_hidden=(6, 5))).train()
        with torch.no_grad():
            fake = aae.encode(x2)
        errors["wgan_critic"] = fd_max_rel_error(
            lambda: wgan_objectives(aae.discriminator(real), aae.discriminator(fake))[0],
            aae.discriminator.parameters())

        def g_loss():
            out = aae.discriminator(aae.encode(x2))
            return wgan_objectives(out.new_zeros(1), out)[1]

        errors["wgan_generator"] = fd_max_rel_error(g_loss, aae.generator_parameters())

        cfg = ContrastConfig(hidden_dim=6, conv_channels=(2, 3, 3, 3, 2), dtype="float64")
        nets = jitter_biases(build_contrast(4, cfg, seed=0))
        v1, v2 = torch.as_tensor(rng.normal(size=(8, 4))), torch.as_tensor(rng.normal(size=(8, 4)))
        errors["L_m"] = fd_max_rel_error(
            lambda: mutual_info_loss(joint_probability(nets.online_encoder(v1), nets.online_encoder(v2)),
                                     cfg.alpha),
            nets.online_encoder.parameters())
        errors["L_c"] = fd_max_rel_error(lambda: contrast_step_losses(nets, v1, v2, cfg)[2],
                                         nets.online_parameters())

        notes.append("max rel err " + ", ".join(f"{k}={v:.1e}" for k, v in errors.items()))
        assert max(errors.values()) < 1e-4, errors
        assert time.perf_counter() - t0 < 60


def test_criterion_3_split_properties():
    with criterion(3, []) as notes:
        t0 = time.perf_counter()
        for c in range(3, 65):
            p, s, o = parity_split(c), sequential_split(c), overlap_split(c)
            for sp in (p, s, o):
                assert set(sp.indices1) | set(sp.indices2) == set(range(c))
            assert not set(p.indices1) & set(p.indices2)
            assert not set(s.indices1) & set(s.indices2)
            if c < 6:
                # the random strategy is defined only from six channels up
                with pytest.raises(ValueError):
                    random_split(c, 0)
                continue
            for seed in range(100):
                r = random_split(c, seed)
                assert set(r.indices1) | set(r.indices2) == set(range(c))
        counts = np.zeros(30)
        for seed in range(1000):
            counts[list(make_split("random", 30, seed).indices1)] += 1
        freq = counts[15:] / 1000
        expected = (30 / 6) / (30 - 15)
        dev = float(np.abs(freq - expected).max())
        notes.append(f"C=3..64 x 100 seeds ok, random freq max dev {dev:.3f} from {expected:.3f}")
        assert dev <= 0.05
        assert time.perf_counter() - t0 < 10


def test_criterion_4_ema_and_stop_gradient():
    with criterion(4, []) as notes:
        rng = np.random.default_rng(4)
        xi = torch.as_tensor(rng.normal(size=50))
        theta = torch.as_tensor(rng.normal(size=50))
        gap0 = xi - theta
        scale = float(torch.maximum(xi.abs(), theta.abs()).max())
        tau, worst = 0.99, 0.0
        for n in range(1, 201):
            ema_update(xi, theta, tau)
            err = float((xi - theta - tau**n * gap0).abs().max()) / (scale * EPS)
            worst = max(worst, err / n)
            # a few roundings per update, so the error may grow linearly in n
            assert err <= 4 * n
        notes.append(f"tau^n contraction within {worst:.2f} ulp per step")

        cfg = ContrastConfig(hidden_dim=8, conv_channels=(2, 3, 3, 3, 2), dtype="float64",
                             epochs=3, batch_size=8, tau=0.9, seed=0)
        nets = jitter_biases(build_contrast(4, cfg))
        trace = []

        def hook(n, step):
            trace.append(([p.detach().clone() for p in n.target_pair().parameters()],
                          [p.detach().clone() for p in n.online_pair().parameters()]))

        init = [p.detach().clone() for p in nets.target_pair().parameters()]
        train_contrast(nets, rng.normal(size=(24, 4)), rng.normal(size=(24, 4)), cfg, step_hook=hook)
        for a, b in zip(trace[0][0], init):
            assert torch.equal(a, b)
        for (t_prev, o_prev), (t_next, _) in zip(trace, trace[1:]):
            for t, o, nxt in zip(t_prev, o_prev, t_next):
                assert torch.equal(nxt, 0.9 * t + (1 - 0.9) * o)
        notes.append(f"{len(trace)} logged steps, target moved only by EMA")


E2E = {
    "pca": {"k": 30}, "patches": {"size": 9}, "split": {"strategy": "parity"},
    "backbone": {"latent_dim": 32}, "vae": {"epochs": 10}, "aae": {"epochs": 10},
    "contrast": {"epochs": 30}, "train_fraction": 0.1,
}


def e2e_seed(root, seed):
    cube, gt = make_scene(seed=seed)
    save_cube(cube, root / f"cube{seed}.f32")
    save_ground_truth(gt, root / f"gt{seed}.u16")
    oa = {}
    for source in ("vae", "aae", "contrast"):
        data = json.loads(json.dumps(E2E))
        data.update(seed=seed, output=str(root / f"out{seed}"),
                    dataset={"cube": f"cube{seed}.f32", "ground_truth": f"gt{seed}.u16"},
                    ablation={"feature_source": source})
        oa[source] = Pipeline(RunConfig(data, base_dir=root)).run_all().oa
    ok = oa["contrast"] >= 95.0 and oa["contrast"] >= max(oa["vae"], oa["aae"]) - 2.0
    return ok, oa


@pytest.mark.slow
def test_criterion_5_end_to_end(tmp_path):
    with criterion(5, []) as notes:
        t0 = time.perf_counter()
        verdicts = []
        for seed in range(3):
            ok, oa = e2e_seed(tmp_path, seed)
            verdicts.append(ok)
            notes.append(f"seed {seed}: " + " ".join(f"{k} {v:.2f}" for k, v in oa.items())
                         + (" ok" if ok else " miss"))
            # majority of three is settled once two seeds agree
            if verdicts.count(True) >= 2 or verdicts.count(False) >= 2:
                break
        elapsed = time.perf_counter() - t0
        notes.append(f"runtime {elapsed / 60:.1f} min, torch threads {torch.get_num_threads()}")
        assert verdicts.count(True) >= 2
        assert elapsed < 600


@pytest.mark.slow
def test_criterion_6_indian_pines_direction(tmp_path):
    from conftest import public_dataset

    with criterion(6, []) as notes:
        cube = public_dataset("ip_cube.f32")
        gt = public_dataset("ip_gt.u16")
        oa = {k: [] for k in ("vae_cross", "vae_self", "aae_cross", "aae_self", "contrast")}
        for seed in range(3):
            base = {"dataset": {"cube": str(cube), "ground_truth": str(gt), "name": "IP"},
                    "seed": seed, "output": str(tmp_path / f"ip{seed}")}
            runs = {
                "vae_cross": {"ablation": {"feature_source": "vae"}},
                "vae_self": {"ablation": {"feature_source": "vae", "self_reconstruction": True}},
                "aae_cross": {"ablation": {"feature_source": "aae"}},
                "aae_self": {"ablation": {"feature_source": "aae", "self_reconstruction": True}},
                "contrast": {"ablation": {"feature_source": "contrast"}},
            }
            for name, extra in runs.items():
                oa[name].append(Pipeline(RunConfig({**base, **extra})).run_all().oa)
        med = {k: statistics.median(v) for k, v in oa.items()}
        notes.append("median OA " + " ".join(f"{k} {v:.2f}" for k, v in med.items()))
        assert med["vae_cross"] > med["vae_self"]
        assert med["aae_cross"] > med["aae_self"]
        assert med["contrast"] > max(med["vae_cross"], med["aae_cross"])


def test_criterion_7_metrics():
    with criterion(7, []) as notes:
        pred = [1] * 90 + [2] * 10 + [1, 2]
        act = [1] * 100 + [2] * 2
        r = compute_metrics(pred, act, 2)
        assert abs(r.oa - 100 * 91 / 102) <= 1e-10
        assert abs(r.aa - 70.0) <= 1e-10
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(100):
            k = int(rng.integers(2, 10))
            n = int(rng.integers(1, 50))
            conf = np.stack([rng.multinomial(n, rng.dirichlet(np.ones(k))) for _ in range(k)])
            p, a = [], []
            for i in range(k):
                for j in range(k):
                    p += [j + 1] * int(conf[i, j])
                    a += [i + 1] * int(conf[i, j])
            rep = compute_metrics(p, a, k)
            worst = max(worst, abs(rep.oa - rep.aa))
        notes.append(f"OA {r.oa:.4f} AA {r.aa:.1f}; balanced |OA-AA| max {worst:.1e}")
        assert worst <= 1e-10


def test_criterion_8_determinism(tmp_path):
    with criterion(8, []) as notes:
        blobs = []
        for name in ("first", "second"):
            root = tmp_path / name
            root.mkdir()
            write_scene(root)
            cfg = write_config(root, vae={"epochs": 2}, aae={"epochs": 2}, contrast={"epochs": 3})
            assert cli_main(["run-all", "--config", str(cfg)]) == 0
            out = root / "out"
            feats = sorted(out.glob("extract-*/features.f32"))
            metrics = sorted(out.glob("evaluate-*/metrics.json"))
            assert len(feats) == len(metrics) == 1
            blobs.append((feats[0].read_bytes(), metrics[0].read_bytes()))
        assert blobs[0][0] == blobs[1][0]
        assert blobs[0][1] == blobs[1][1]
        notes.append(f"features ({len(blobs[0][0])} bytes) and metrics JSON byte-identical")
