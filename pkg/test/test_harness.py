import json

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose, assert_array_equal

import cfg
from align import cli_main, trace_path_for
from experiment_runner import RESULT_COLUMNS, run_experiment
from functions import AlignOptions
from utils import (ExperimentConfig, PointSet, generate_test_pair, load_flat_config,
                   load_prototype, occlude, read_point_file, write_point_file)


SQUARE_PLUS = np.array([[0.0, 0.0], [1.0, 0.1], [0.2, 1.3], [1.4, 1.1]])


@pytest.fixture
def shape_dir(tmp_path):
    """Directorio con un prototipo pequeño 'tiny' de 5 puntos."""
    pts = np.array([[0.0, 0.0], [1.0, 0.2], [0.3, 1.1], [1.5, 1.4], [-0.6, 0.8]])
    write_point_file(tmp_path / "tiny.txt", pts, header="prototipo de prueba")
    return tmp_path


class TestPointFiles:
    def test_round_trip_is_exact(self, tmp_path, rng):
        pts = rng.normal(size=(12, 3)) * 1e3
        path = tmp_path / "pts.txt"
        write_point_file(path, PointSet(pts), header="doce puntos")
        assert_array_equal(read_point_file(path, dim=3).points, pts)

    def test_comments_are_ignored(self, tmp_path):
        path = tmp_path / "pts.txt"
        path.write_text("# cabecera\n1 2\n3 4\n")
        assert_allclose(read_point_file(path).points, [[1.0, 2.0], [3.0, 4.0]])

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_point_file(tmp_path / "nada.txt")

    def test_dimension_mismatch(self, tmp_path):
        path = tmp_path / "pts.txt"
        path.write_text("1 2\n3 4\n")
        with pytest.raises(ValueError):
            read_point_file(path, dim=3)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "pts.txt"
        path.write_text("# solo comentarios\n")
        with pytest.raises(ValueError):
            read_point_file(path)

    def test_bundled_shapes_load(self, data_dir):
        for name in ("fish", "heart", "star"):
            proto = load_prototype(name, data_dir, dim=2)
            assert proto.n >= 3
            assert_allclose(proto.points.mean(axis=0), 0.0, atol=1e-12)
            assert np.linalg.norm(proto.points, axis=1).max() == pytest.approx(1.0)


class TestExperimentConfig:
    def test_flat_config(self, tmp_path):
        path = tmp_path / "exp.env"
        path.write_text("# comentario\nTEST_KIND=outlier\nNP_RATIOS=0.5,1.0\n")
        raw = load_flat_config(path)
        assert raw == {"test_kind": "outlier", "np_ratios": "0.5,1.0"}
        exp = ExperimentConfig.from_dict(raw)
        assert exp.np_ratios == (0.5, 1.0)
        assert exp.dim == 2

    def test_bundled_configs(self, data_dir):
        configs = data_dir.parent / "configs"
        exp = ExperimentConfig.from_dict(load_flat_config(configs / "outlier_similarity.env"))
        assert exp.levels == (0.0, 10.0, 20.0)
        exp = ExperimentConfig.from_dict(load_flat_config(configs / "occlusion_rigid.env"))
        assert exp.dim == 3
        assert exp.levels == (0.0, 0.2)

    def test_missing_config(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_flat_config(tmp_path / "nada.env")

    @pytest.mark.parametrize("raw", [
        {"colour": "red"},
        {"trials": "tres"},
        {"transform": "projective2d"},
        {"np_ratios": "0.0"},
        {"occlusions": "1.0", "test_kind": "occlusion_outlier"},
        {"scale_range": "0.5"},
        {"outliers": "-1"},
    ])
    def test_invalid_values(self, raw):
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict(raw)

    def test_optional_max_depth(self):
        assert ExperimentConfig.from_dict({"max_depth": ""}).max_depth is None
        assert ExperimentConfig.from_dict({"max_depth": "7"}).max_depth == 7


class TestGenerator:
    def test_clean_pair_matches_truth(self, shape_dir):
        exp = ExperimentConfig(prototype="tiny", data_dir=shape_dir)
        pair = generate_test_pair(exp, trial=0)
        assert pair.n_inliers == pair.model.n == pair.scene.n
        mapped = pair.truth.apply(pair.model.points[pair.inlier_map[:, 0]])
        assert_allclose(mapped, pair.scene.points[pair.inlier_map[:, 1]], atol=1e-12)

    def test_outliers_are_added(self, shape_dir):
        exp = ExperimentConfig(prototype="tiny", data_dir=shape_dir, outliers=(0, 4))
        pair = generate_test_pair(exp, trial=1, level_index=1)
        assert pair.scene.n == pair.n_inliers + 4
        assert pair.level == 4.0
        assert pair.extras["n_outliers"] == 4
        assert len(set(pair.inlier_map[:, 1].tolist())) == pair.n_inliers

    def test_same_seed_same_pair(self, shape_dir):
        exp = ExperimentConfig(prototype="tiny", data_dir=shape_dir, outliers=(3,), seed=5)
        a = generate_test_pair(exp, trial=2)
        b = generate_test_pair(exp, trial=2)
        c = generate_test_pair(exp, trial=3)
        assert_array_equal(a.scene.points, b.scene.points)
        assert_array_equal(a.inlier_map, b.inlier_map)
        assert not np.array_equal(a.scene.points, c.scene.points)

    def test_occlusion_removes_neighbourhood(self, rng):
        pts = rng.normal(size=(20, 2))
        keep = occlude(pts, 0.25, rng)
        assert keep.size == 15
        assert np.all(np.diff(keep) > 0)
        assert_array_equal(occlude(pts, 0.0, rng), np.arange(20))

    def test_occlusion_too_strong(self, shape_dir):
        exp = ExperimentConfig(test_kind="occlusion_outlier", prototype="tiny",
                               data_dir=shape_dir, occlusions=(0.8,))
        with pytest.raises(ValueError):
            generate_test_pair(exp, trial=0)

    def test_rigid_truth_is_rotation(self, data_dir):
        exp = ExperimentConfig(transform="rigid3d", prototype="blob", data_dir=data_dir)
        R = generate_test_pair(exp, trial=0).truth.linear
        assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0)

    def test_level_index_out_of_range(self, shape_dir):
        exp = ExperimentConfig(prototype="tiny", data_dir=shape_dir)
        with pytest.raises(ValueError):
            generate_test_pair(exp, trial=0, level_index=3)


class TestAlignOptions:
    def test_default_np(self):
        assert AlignOptions("similarity2d").resolve_np(20, 31) == 18
        assert AlignOptions("similarity2d", n_p=4).resolve_np(20, 31) == 4
        assert AlignOptions("affine2d").resolve_np(1, 1) == 1

    def test_heuristic(self):
        opts = AlignOptions("rigid3d", eps0=8.0).heuristic()
        assert opts.eps0 == cfg.HEURISTIC_EPS0
        assert opts.max_depth == cfg.HEURISTIC_MAX_DEPTH
        assert opts.dim == 3

    def test_invalid(self):
        with pytest.raises(ValueError):
            AlignOptions("projective2d")
        with pytest.raises(ValueError):
            AlignOptions("similarity2d", n_p=0)
        with pytest.raises(ValueError):
            AlignOptions("similarity2d", eps0=-1.0)


def _write_pair(tmp_path, model, scene):
    write_point_file(tmp_path / "model.txt", model)
    write_point_file(tmp_path / "scene.txt", scene)
    return ["--model", str(tmp_path / "model.txt"), "--scene", str(tmp_path / "scene.txt")]


class TestCli:
    SOLVER = ["--transform", "similarity2d", "--np", "4", "--eps0", "0.05", "--max-nodes", "1000"]

    def test_align_writes_result_and_trace(self, tmp_path):
        files = _write_pair(tmp_path, SQUARE_PLUS, SQUARE_PLUS[::-1])
        out = tmp_path / "res.json"
        assert cli_main(["align", *files, *self.SOLVER, "--out", str(out)]) == cfg.RC_OK
        doc = json.loads(out.read_text())
        assert doc["n_p"] == 4
        assert doc["lower_bound"] <= doc["upper_bound"] + 1e-12
        assert doc["status"] in ("converged", "depth_limited", "node_budget", "resolution")
        if doc["status"] == "converged":
            assert doc["upper_bound"] <= doc["epsilon"] + 1e-9
        trace = pd.read_csv(trace_path_for(out))
        assert list(trace.columns[:4]) == ["iter", "best_upper", "best_lower", "n_active"]
        assert len(trace) == doc["iterations"]

    def test_align_is_deterministic(self, tmp_path):
        files = _write_pair(tmp_path, SQUARE_PLUS, SQUARE_PLUS[[2, 0, 3, 1]] * 2.0 + 0.5)
        docs = []
        for name in ("a.json", "b.json"):
            out = tmp_path / name
            assert cli_main(["align", *files, *self.SOLVER, "--out", str(out)]) == cfg.RC_OK
            doc = json.loads(out.read_text())
            doc.pop("wall_time_s")
            docs.append(doc)
        assert docs[0] == docs[1]

    def test_missing_np_is_usage_error(self, tmp_path):
        files = _write_pair(tmp_path, SQUARE_PLUS, SQUARE_PLUS)
        argv = ["align", *files, "--transform", "similarity2d", "--out", str(tmp_path / "r.json")]
        assert cli_main(argv) == cfg.RC_USAGE

    def test_wrong_dimension_is_error(self, tmp_path):
        files = _write_pair(tmp_path, SQUARE_PLUS, SQUARE_PLUS)
        argv = ["align", *files, "--transform", "rigid3d", "--np", "3",
                "--out", str(tmp_path / "r.json")]
        assert cli_main(argv) == cfg.RC_ERROR

    def test_oracle_agrees(self, tmp_path, rng, capsys):
        scene = SQUARE_PLUS @ np.array([[0.8, -0.6], [0.6, 0.8]]).T + rng.normal(scale=0.05, size=(4, 2))
        files = _write_pair(tmp_path, SQUARE_PLUS, rng.permutation(scene))
        argv = ["oracle", *files, "--transform", "similarity2d", "--np", "3",
                "--eps0", "0.05", "--max-nodes", "1000"]
        assert cli_main(argv) == cfg.RC_OK
        report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert report["agrees"] is True
        assert report["bnb_value"] >= report["exhaustive_value"] - 1e-9


class TestExperiment:
    def test_row_count_and_outputs(self, shape_dir, tmp_path):
        exp = ExperimentConfig(prototype="tiny", data_dir=shape_dir, outliers=(0, 2),
                               np_ratios=(0.6, 1.0), trials=2, max_nodes=200)
        out_dir = tmp_path / "out"
        results, summary = run_experiment(exp, out_dir)
        assert len(results) == 2 * 2 * 2
        assert list(results.columns) == RESULT_COLUMNS
        assert np.all(np.isfinite(results["rms_error"]))
        assert np.all(results["n_p"] <= results["n_inliers"])
        assert len(summary) == 4
        assert (out_dir / "results.csv").is_file()
        assert len(pd.read_csv(out_dir / "summary.csv")) == 4

    def test_workers_keep_order(self, shape_dir):
        base = dict(prototype="tiny", data_dir=shape_dir, outliers=(1,),
                    np_ratios=(1.0,), trials=3, max_nodes=100)
        serial, _ = run_experiment(ExperimentConfig(**base, workers=1))
        pooled, _ = run_experiment(ExperimentConfig(**base, workers=3))
        cols = ["trial", "level", "n_p", "upper_bound", "status"]
        pd.testing.assert_frame_equal(serial[cols], pooled[cols])
