import json

import numpy as np
import pytest
import torch

from crossview.aae import build_aae
from crossview.contrast import ContrastConfig, build_contrast
from crossview.datacube import FormatError
from crossview.io import (
    AAE_BLOCKS,
    CONTRAST_BLOCKS,
    VAE_BLOCKS,
    load_features,
    load_params,
    read_params,
    save_features,
    save_params,
)
from crossview.vae import build_vae
from fd import mini_backbone


def same_state(a, b):
    sa, sb = a.state_dict(), b.state_dict()
    assert sa.keys() == sb.keys()
    for k in sa:
        torch.testing.assert_close(sa[k], sb[k], rtol=0, atol=0)


class TestParams:
    def test_vae_round_trip(self, tmp_path):
        src = build_vae(2, 2, 5, mini_backbone(), seed=1)
        save_params(tmp_path / "v.params", src, VAE_BLOCKS, {"kind": "vae"})
        dst = build_vae(2, 2, 5, mini_backbone(), seed=2)
        header = load_params(tmp_path / "v.params", dst)
        same_state(src, dst)
        assert header["kind"] == "vae"
        assert [b["name"] for b in header["blocks"]] == ["encoder", "decoder"]

    def test_aae_and_contrast_blocks(self, tmp_path):
        aae = build_aae(2, 2, 5, mini_backbone(), seed=0, discriminator_hidden=(4, 3))
        save_params(tmp_path / "a.params", aae, AAE_BLOCKS)
        header, _ = read_params(tmp_path / "a.params")
        assert [b["name"] for b in header["blocks"]] == ["encoder", "decoder", "discriminator"]

        cfg = ContrastConfig(hidden_dim=6, conv_channels=(2, 2, 2, 2, 2))
        nets = build_contrast(8, cfg)
        save_params(tmp_path / "c.params", nets, CONTRAST_BLOCKS)
        other = build_contrast(8, cfg, seed=99)
        load_params(tmp_path / "c.params", other)
        same_state(nets, other)

    def test_layout_is_header_line_then_f8(self, tmp_path):
        model = build_vae(2, 2, 5, mini_backbone(), seed=0)
        path = tmp_path / "v.params"
        save_params(path, model, VAE_BLOCKS)
        raw = path.read_bytes()
        header = json.loads(raw[: raw.index(b"\n")])
        n = sum(int(np.prod(t["shape"])) for b in header["blocks"] for t in b["tensors"])
        assert len(raw) == raw.index(b"\n") + 1 + 8 * n
        assert n == sum(v.numel() for v in model.state_dict().values())

    def test_truncated(self, tmp_path):
        path = tmp_path / "v.params"
        save_params(path, build_vae(2, 2, 5, mini_backbone()), VAE_BLOCKS)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FormatError, match="truncated"):
            read_params(path)

    def test_wrong_architecture(self, tmp_path):
        path = tmp_path / "v.params"
        save_params(path, build_vae(2, 2, 5, mini_backbone()), VAE_BLOCKS)
        with pytest.raises(FormatError):
            load_params(path, build_aae(2, 2, 5, mini_backbone()))

    def test_garbage_header(self, tmp_path):
        path = tmp_path / "x.params"
        path.write_bytes(b"not json\n")
        with pytest.raises(FormatError):
            read_params(path)


class TestFeatures:
    def test_round_trip(self, tmp_path, rng):
        f = rng.normal(size=(7, 5))
        save_features(tmp_path / "f.f32", f)
        back = load_features(tmp_path / "f.f32")
        np.testing.assert_array_equal(back, f.astype(np.float32))
        assert json.loads((tmp_path / "f.f32.json").read_text()) == {"count": 7, "dim": 5}
        assert (tmp_path / "f.f32").stat().st_size == 7 * 5 * 4

    def test_little_endian(self, tmp_path):
        save_features(tmp_path / "f.f32", np.array([[1.0]]))
        assert (tmp_path / "f.f32").read_bytes() == np.float32(1.0).astype("<f4").tobytes()

    def test_size_mismatch(self, tmp_path, rng):
        save_features(tmp_path / "f.f32", rng.normal(size=(3, 2)))
        (tmp_path / "f.f32.json").write_text(json.dumps({"count": 4, "dim": 2}))
        with pytest.raises(FormatError):
            load_features(tmp_path / "f.f32")

    def test_missing_sidecar(self, tmp_path):
        (tmp_path / "f.f32").write_bytes(b"\0" * 8)
        with pytest.raises(FormatError):
            load_features(tmp_path / "f.f32")
