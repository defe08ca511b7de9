import json

import numpy as np
import pytest

from crossview.cli import main
from crossview.datacube import load_cube, load_ground_truth
from scene import write_config, write_scene


class TestConvert:
    def test_cube_round_trip(self, tmp_path, rng):
        data = rng.normal(size=(2, 3, 4)).astype(np.float32)
        csv = tmp_path / "pixels.csv"
        csv.write_text("\n".join(",".join(repr(float(v)) for v in px) for px in data.reshape(6, 4)))
        code = main(["convert", "cube", str(csv), str(tmp_path / "c.f32"),
                     "--height", "2", "--width", "3", "--note", "400-2500nm"])
        assert code == 0
        cube = load_cube(tmp_path / "c.f32")
        np.testing.assert_array_equal(cube.data, data)
        assert cube.wavelength_note == "400-2500nm"

    def test_gt_round_trip(self, tmp_path):
        (tmp_path / "gt.csv").write_text("0,1,2\n2,2,0\n")
        (tmp_path / "names.txt").write_text("corn\nwoods\n")
        code = main(["convert", "gt", str(tmp_path / "gt.csv"), str(tmp_path / "g.u16"),
                     "--class-names", str(tmp_path / "names.txt")])
        assert code == 0
        gt = load_ground_truth(tmp_path / "g.u16")
        np.testing.assert_array_equal(gt.labels, [[0, 1, 2], [2, 2, 0]])
        assert gt.class_names == ["corn", "woods"]

    def test_ragged_row_reports_line(self, tmp_path, capsys):
        (tmp_path / "p.csv").write_text("1,2\n3,4\n5\n")
        code = main(["convert", "cube", str(tmp_path / "p.csv"), str(tmp_path / "c.f32"),
                     "--height", "1", "--width", "3"])
        assert code == 3
        assert "row 3" in capsys.readouterr().err

    def test_unparseable_value(self, tmp_path, capsys):
        (tmp_path / "p.csv").write_text("1,2\n3,x\n")
        assert main(["convert", "cube", str(tmp_path / "p.csv"), str(tmp_path / "c.f32"),
                     "--height", "1", "--width", "2"]) == 3
        assert "row 2" in capsys.readouterr().err

    def test_cube_needs_geometry(self, tmp_path):
        (tmp_path / "p.csv").write_text("1,2\n")
        assert main(["convert", "cube", str(tmp_path / "p.csv"), str(tmp_path / "c.f32")]) == 2


class TestDescribeSplit:
    def test_parity(self, capsys):
        assert main(["describe-split", "--strategy", "parity", "--channels", "6"]) == 0
        out = capsys.readouterr().out
        assert "X1 (3): [0, 2, 4]" in out and "X2 (3): [1, 3, 5]" in out

    def test_random_respects_seed(self, capsys):
        main(["describe-split", "--strategy", "random", "--channels", "30", "--split-seed", "4"])
        a = capsys.readouterr().out
        main(["describe-split", "--strategy", "random", "--channels", "30", "--split-seed", "4"])
        assert capsys.readouterr().out == a
        assert "X1 (20)" in a and "X2 (20)" in a

    def test_from_config(self, tmp_path, capsys):
        cfg = write_config(tmp_path, split={"strategy": "overlap"})
        assert main(["describe-split", "--config", str(cfg)]) == 0
        assert "X1 (4): [0, 1, 2, 3]" in capsys.readouterr().out


class TestPipelineCommands:
    def test_run_all_and_flags(self, tmp_path, capsys):
        write_scene(tmp_path)
        cfg = write_config(tmp_path)
        assert main(["run-all", "--config", str(cfg), "--feature-source", "aae",
                     "--output", str(tmp_path / "o")]) == 0
        out = capsys.readouterr().out
        assert out.startswith("OA ")
        saved = json.loads((tmp_path / "o" / "config.json").read_text())
        assert saved["ablation"]["feature_source"] == "aae"

    def test_missing_features_artifact(self, tmp_path, capsys):
        write_scene(tmp_path)
        cfg = str(write_config(tmp_path))
        for stage in ("pca", "patches", "train-vae", "train-aae", "train-contrast"):
            assert main([stage, "--config", cfg]) == 0
        assert main(["classify", "--config", cfg]) == 3
        assert "missing features artifact (run stage 'extract' first)" in capsys.readouterr().err

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = write_config(tmp_path, pca={"k": -1})
        assert main(["pca", "--config", str(cfg)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_dataset_exit_code(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["pca", "--config", str(cfg)]) == 3

    def test_diverged_training_exit_code(self, tmp_path):
        write_scene(tmp_path)
        cfg = str(write_config(tmp_path, vae={"lr": 1e30}))
        for stage in ("pca", "patches"):
            assert main([stage, "--config", cfg]) == 0
        assert main(["train-vae", "--config", cfg]) == 4

    def test_threads_env(self, tmp_path, monkeypatch):
        import torch

        before = torch.get_num_threads()
        monkeypatch.setenv("CROSSVIEW_THREADS", "1")
        try:
            assert main(["describe-split", "--channels", "4"]) == 0
            assert torch.get_num_threads() == 1
        finally:
            torch.set_num_threads(before)

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            main(["train-everything"])
