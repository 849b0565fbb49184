"""Command-line surface: subcommands, config files, exit codes."""

import json
from pathlib import Path

import numpy as np
import pytest

from gsx import cli, dataset
from gsx.cli import (EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, EXIT_SERVICE,
                     EXIT_USAGE, load_pipeline_config, parse_config_file)
from gsx.ply import load_gaussian_ply, save_gaussian_ply
from gsx.types import ValidationError

from conftest import random_cloud


@pytest.fixture(scope="module")
def cli_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("clids")
    spec = {"object_count": 5, "train_views": 3, "test_views": 2,
            "width": 32, "height": 32, "gaussians_per_object": 120,
            "seed": 9}
    spec_path = root / "spec.json"
    spec_path.write_text(json.dumps(spec))
    out = root / "ds"
    assert cli.main(["gen", "--spec", str(spec_path),
                     "--out", str(out)]) == EXIT_OK
    return out


class TestConfigParsing:
    def test_flat_key_value(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("pretrain_iters = 5\n"
                       "# a comment\n"
                       "lambda_dssim = 0.3  # trailing comment\n"
                       "knn_eps = none\n"
                       "\n")
        values = parse_config_file(cfg)
        assert values == {"pretrain_iters": 5, "lambda_dssim": 0.3,
                          "knn_eps": None}

    def test_bool_and_string_values(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("flag = true\nname = 'hello'\n")
        values = parse_config_file(cfg)
        assert values == {"flag": True, "name": "hello"}

    def test_malformed_line_rejected(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("this is not a pair\n")
        with pytest.raises(ValidationError):
            parse_config_file(cfg)

    def test_overrides_beat_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("rng_seed = 1\npretrain_iters = 9\n")
        config = load_pipeline_config(cfg, {"rng_seed": 5,
                                            "pretrain_iters": None})
        assert config.rng_seed == 5
        assert config.pretrain_iters == 9


class TestDispatch:
    def test_no_args_prints_usage(self, capsys):
        assert cli.main([]) == EXIT_OK
        assert "subcommands" in capsys.readouterr().out

    def test_unknown_subcommand(self, capsys):
        assert cli.main(["frobnicate"]) == EXIT_USAGE
        assert "unknown subcommand" in capsys.readouterr().err

    def test_missing_file_is_invalid_input(self, tmp_path, capsys):
        rc = cli.main(["prune", "--ply", str(tmp_path / "nope.ply"),
                       "--out", str(tmp_path / "o.ply")])
        assert rc == EXIT_RUNTIME  # OSError: file not found

    def test_unreachable_endpoint_is_service_error(self, tmp_path, rng):
        img_path = tmp_path / "img.png"
        mask_path = tmp_path / "mask.png"
        dataset.save_image(img_path, rng.random((8, 8, 3)))
        mask = np.zeros((8, 8), dtype=bool)
        mask[2:4, 2:4] = True
        dataset.save_image(mask_path,
                           mask.astype(np.float64)[:, :, None].repeat(3, 2))
        rc = cli.main(["inpaint", "--image", str(img_path),
                       "--mask", str(mask_path),
                       "--out", str(tmp_path / "out.png"),
                       "--inpainter", "remote",
                       "--endpoint", "http://127.0.0.1:1"])
        assert rc == EXIT_SERVICE


class TestGen:
    def test_dataset_layout(self, cli_dataset):
        assert (cli_dataset / "scene.ply").exists()
        assert (cli_dataset / "cameras.json").exists()
        assert len(list((cli_dataset / "train").glob("*.png"))) == 3
        assert len(list((cli_dataset / "masks").glob("*.png"))) == 3


class TestPruneCommand:
    def test_prunes_planted_outlier(self, tmp_path, rng, capsys):
        cloud = random_cloud(rng, 60)
        pts = np.random.default_rng(2).normal(0, 0.1, (60, 3))
        pts[10] = [50.0, 0, 0]
        save_gaussian_ply(cloud.replace_arrays(positions=pts),
                          tmp_path / "in.ply")
        rc = cli.main(["prune", "--ply", str(tmp_path / "in.ply"),
                       "--out", str(tmp_path / "out.ply"), "--k", "5",
                       "--eps", "2.0"])
        assert rc == EXIT_OK
        assert load_gaussian_ply(tmp_path / "out.ply").count == 59
        assert "kept 59/60" in capsys.readouterr().out


class TestInpaintCommand:
    def test_fallback_round_trip(self, tmp_path, rng):
        img = rng.random((16, 16, 3))
        mask = np.zeros((16, 16), dtype=bool)
        mask[5:10, 5:10] = True
        dataset.save_image(tmp_path / "i.png", img)
        dataset.save_image(tmp_path / "m.png",
                           mask.astype(np.float64)[:, :, None].repeat(3, 2))
        rc = cli.main(["inpaint", "--image", str(tmp_path / "i.png"),
                       "--mask", str(tmp_path / "m.png"),
                       "--out", str(tmp_path / "o.png")])
        assert rc == EXIT_OK
        out = dataset.load_image(tmp_path / "o.png")
        loaded = dataset.load_image(tmp_path / "i.png")
        assert np.abs(out[~mask] - loaded[~mask]).max() <= 2.0 / 255.0


class TestRenderEvalExtract:
    def test_render_then_eval(self, cli_dataset, tmp_path, capsys):
        out = tmp_path / "renders"
        rc = cli.main(["render", "--ply", str(cli_dataset / "object_1.ply"),
                       "--cameras", str(cli_dataset / "test_cameras.json"),
                       "--out", str(out)])
        assert rc == EXIT_OK
        assert len(list(out.glob("*.png"))) == 2
        rc = cli.main(["eval", "--pred", str(out),
                       "--gt", str(cli_dataset / "gt" / "object_1"),
                       "--out", str(tmp_path / "rows.csv")])
        assert rc == EXIT_OK
        table = capsys.readouterr().out
        assert "psnr" in table.lower()
        # A render of the exact GT model evaluated against its own
        # images scores essentially perfectly.
        rows = (tmp_path / "rows.csv").read_text().strip().splitlines()
        assert len(rows) == 3
        assert float(rows[1].split(",")[3]) > 45.0

    def test_extract_end_to_end(self, cli_dataset, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("pretrain_iters = 0\ndistill_iters = 60\n"
                       "finetune_iters = 2\nclass_count = 6\n")
        run_dir = tmp_path / "run"
        rc = cli.main(["extract", "--data", str(cli_dataset),
                       "--object", "1", "--config", str(cfg),
                       "--out", str(run_dir)])
        assert rc == EXIT_OK
        assert (run_dir / "object_1_final.ply").exists()
        assert "final model" in capsys.readouterr().out

    def test_extract_invalid_object_id(self, cli_dataset, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("pretrain_iters = 0\nclass_count = 6\n")
        rc = cli.main(["extract", "--data", str(cli_dataset),
                       "--object", "77", "--config", str(cfg),
                       "--out", str(tmp_path / "r2")])
        assert rc == EXIT_INVALID
