"""Experiment harness: convergence metric, run artifacts, CLI surface."""

import numpy as np
import pytest
import yaml

from spotfocus.cli import main
from spotfocus.config import config_from_dict
from spotfocus.experiments import (
    convergence_iteration,
    matrix_from_csv,
    run_experiment,
    write_csv,
)
from spotfocus.geometry import ConfigError
from spotfocus.library import PolicyLibrary
from spotfocus.pdi import save_phase_csv


class TestConvergenceIteration:
    def test_step_trace_hand_values(self):
        trace = [0, 0, 0, 0, 1, 1, 1, 1]
        assert convergence_iteration(trace, 1.0, window=4) == 8
        assert convergence_iteration(trace, 0.5, window=4) == 6

    def test_constant_trace_converges_at_first_full_window(self):
        assert convergence_iteration(np.ones(100), 0.9, window=30) == 30

    def test_reference_overrides_the_final_plateau(self):
        trace = [0, 0, 0, 0, 1, 1, 1, 1]
        assert convergence_iteration(trace, 0.5, window=4, reference=2.0) == 8
        assert convergence_iteration(np.zeros(50), 0.9, window=10, reference=1.0) == -1

    def test_short_trace_never_converges(self):
        assert convergence_iteration([1.0, 1.0], 0.9, window=5) == -1

    def test_validation(self):
        with pytest.raises(ValueError):
            convergence_iteration([1.0], 0.0, window=1)
        with pytest.raises(ValueError):
            convergence_iteration([1.0], 1.1, window=1)
        with pytest.raises(ValueError):
            convergence_iteration([1.0], 0.9, window=0)


def test_write_csv_renders_full_precision(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, ("a", "b", "c"), [(1, 0.1, "x"), (np.int64(2), np.float64(0.25), "y")])
    lines = path.read_text().splitlines()
    assert lines == ["a,b,c", "1,0.1,x", "2,0.25,y"]
    assert float(lines[1].split(",")[1]) == 0.1


def micro_config(outdir, kind="train-baseline", seed=5, budget=80, figures=False,
                 **options):
    return config_from_dict({
        "experiment": {"kind": kind, "seed": seed, "budget_iterations": budget,
                       "figures": figures, "output_dir": str(outdir)},
        "scene": {
            "aperture": {"sub_rows": 2, "sub_cols": 2, "modules_rows": 1,
                         "modules_cols": 2, "corner_m": [2.0, 0.0, 1.5],
                         "element_spacing_m": 0.005, "plane_normal": "y"},
            "room": None,
            "focal_point_m": [2.01, 0.3, 1.5025],
        },
        "agent": {"minibatch": 8, "replay_capacity": 64,
                  "exploration_noise_decay": 1e-3},
        "plane": {"half_extent_m": 0.1, "resolution": 11},
        "options": {"conv_window": 20, **options},
    })


class TestRunTrainBaseline:
    def test_run_writes_manifest_results_and_library(self, tmp_path):
        cfg = micro_config(tmp_path / "run")
        outdir = run_experiment(cfg)
        manifest = yaml.safe_load((outdir / "manifest.yaml").read_text())
        assert manifest["format"] == "spotfocus-run/1"
        assert manifest["status"] == "completed"
        assert manifest["error"] is None
        assert manifest["kind"] == "train-baseline"
        for name in ("summary.csv", "panel_power.csv", "matrix.csv", "matrix.pgm",
                     "traces/sub_00.csv", "traces/sub_01.csv",
                     "pdis/sub_00.csv", "pdis/sub_00.pgm", "library"):
            assert name in manifest["outputs"]
            assert (outdir / name).exists()
        assert (outdir / "library" / "library.yaml").exists()
        assert manifest["seeds"]["master"] == 5
        assert "train:0" in manifest["seeds"] and "train:1" in manifest["seeds"]
        # the stored config re-parses to the exact config that ran
        assert config_from_dict(manifest["config"]) == cfg
        # trained policies are reloadable for later blending
        lib = PolicyLibrary.load(outdir / "library")
        assert len(lib) == 1 and lib.entries[0].num_subarrays == 2

    def test_reruns_are_byte_identical(self, tmp_path):
        out1 = run_experiment(micro_config(tmp_path / "a", seed=6))
        out2 = run_experiment(micro_config(tmp_path / "b", seed=6))
        for name in ("summary.csv", "traces/sub_00.csv", "traces/sub_01.csv",
                     "matrix.csv", "panel_power.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
        m1 = yaml.safe_load((out1 / "manifest.yaml").read_text())
        m2 = yaml.safe_load((out2 / "manifest.yaml").read_text())
        for m in (m1, m2):
            m.pop("started"), m.pop("finished")
            m["config"]["experiment"].pop("output_dir")
        assert m1 == m2

    def test_existing_manifest_refuses_rerun(self, tmp_path):
        cfg = micro_config(tmp_path / "run")
        run_experiment(cfg)
        with pytest.raises(ConfigError):
            run_experiment(cfg)

    def test_subarray_subset_skips_panel_outputs(self, tmp_path):
        cfg = micro_config(tmp_path / "run", subarrays=[1])
        outdir = run_experiment(cfg)
        assert (outdir / "traces/sub_01.csv").exists()
        assert not (outdir / "traces/sub_00.csv").exists()
        assert not (outdir / "panel_power.csv").exists()
        assert not (outdir / "library").exists()

    def test_figures_render_when_enabled(self, tmp_path):
        cfg = micro_config(tmp_path / "run", budget=60, figures=True)
        outdir = run_experiment(cfg)
        assert (outdir / "traces.png").stat().st_size > 0
        assert (outdir / "matrix.png").stat().st_size > 0

    def test_failed_run_leaves_failure_manifest(self, tmp_path):
        cfg = micro_config(tmp_path / "run", kind="blend")  # no library_dir
        with pytest.raises(ConfigError):
            run_experiment(cfg)
        manifest = yaml.safe_load((tmp_path / "run" / "manifest.yaml").read_text())
        assert manifest["status"] == "failed"
        assert "library_dir" in manifest["error"]

    def test_normalized_power_column_is_bounded(self, tmp_path):
        outdir = run_experiment(micro_config(tmp_path / "run", seed=8))
        body = np.loadtxt(outdir / "traces/sub_00.csv", delimiter=",", skiprows=1)
        assert body[:, 2].max() <= 1.0 + 1e-12
        assert body[:, 0].tolist() == list(range(1, 81))


class TestRunBlendAndMaps:
    def test_blend_consumes_and_extends_a_library(self, tmp_path):
        base = run_experiment(micro_config(tmp_path / "base", seed=9))
        stored = yaml.safe_load((base / "manifest.yaml").read_text())["config"]
        stored["scene"]["focal_point_m"] = [2.005, 0.35, 1.5]  # new target point
        cfg = config_from_dict({**stored,
                                "experiment": {"kind": "blend", "seed": 10,
                                               "budget_iterations": 60,
                                               "output_dir": str(tmp_path / "blend"),
                                               "figures": False},
                                "blending": {"components": 1},
                                "options": {"library_dir": str(base / "library"),
                                            "conv_window": 20}})
        outdir = run_experiment(cfg)
        weights = (outdir / "weights.csv").read_text().splitlines()
        assert weights[0] == "component,focal_x_m,focal_y_m,focal_z_m,distance_m,probe_power,weight"
        assert len(weights) == 2
        assert float(weights[1].split(",")[-1]) == 1.0
        assert len(PolicyLibrary.load(base / "library")) == 2  # appended back

    def test_similarity_map_over_run_pdis(self, tmp_path):
        base = run_experiment(micro_config(tmp_path / "base", seed=11))
        cfg = micro_config(tmp_path / "sim", kind="similarity-map", seed=12,
                           pdi_dir=str(base / "pdis"), theta_step_deg=90.0)
        outdir = run_experiment(cfg)
        sim = (outdir / "similarity.csv").read_text().splitlines()
        assert sim[0] == "theta_deg,subarray,correlation"
        assert len(sim) == 1 + 4 * 2  # four angles, two images
        ecc_lines = (outdir / "ecc.csv").read_text().splitlines()
        assert len(ecc_lines) == 3
        first = ecc_lines[1].split(",")
        assert first[0] == "0"
        # self-similarity of the reference is perfect unless degenerate
        assert first[3] == "1" or float(first[1]) == pytest.approx(1.0, rel=1e-9)

    def test_power_map_run_and_bfr_monotonicity(self, tmp_path):
        phases = tmp_path / "matrix.csv"
        rng = np.random.default_rng(3)
        save_phase_csv(rng.uniform(0, 2 * np.pi, size=(2, 4)), phases)
        cfg = micro_config(tmp_path / "pm", kind="power-map", seed=13,
                           matrix_csv=str(phases))
        outdir = run_experiment(cfg)
        rows = [line.split(",") for line
                in (outdir / "bfr.csv").read_text().splitlines()[1:]]
        fractions = [float(r[0]) for r in rows]
        radii = [float(r[1]) for r in rows]
        assert fractions == [0.5, 0.7, 0.9, 0.95]
        assert all(r1 >= r0 for r0, r1 in zip(radii, radii[1:]))
        n_map = len((outdir / "map.csv").read_text().splitlines())
        assert n_map == 1 + 11 * 11

    def test_matrix_from_csv_rejects_wrong_grid(self, tmp_path):
        path = tmp_path / "bad.csv"
        save_phase_csv(np.zeros((3, 3)), path)
        aperture = micro_config(tmp_path).scene.aperture
        with pytest.raises(ConfigError):
            matrix_from_csv(path, aperture)

    def test_orthogonality_probe_outputs(self, tmp_path):
        cfg = micro_config(tmp_path / "orth", kind="orthogonality-probe", seed=14,
                           element_grids=[[2, 2], [3, 3]], num_matrices=5)
        outdir = run_experiment(cfg)
        lines = (outdir / "orthogonality.csv").read_text().splitlines()
        assert lines[0] == "elements,rows,cols,median_correlation"
        assert [line.split(",")[0] for line in lines[1:]] == ["4", "9"]
        for line in lines[1:]:
            assert 0.0 <= float(line.split(",")[3]) <= 1.0

    def mc_config(self, outdir, **options):
        return config_from_dict({
            "experiment": {"kind": "monte-carlo-blend", "seed": 17,
                           "budget_iterations": 60, "figures": False,
                           "output_dir": str(outdir)},
            "scene": {
                "aperture": {"sub_rows": 2, "sub_cols": 2, "modules_rows": 1,
                             "modules_cols": 2, "corner_m": [2.0, 0.0, 1.5],
                             "element_spacing_m": 0.005, "plane_normal": "y"},
                "room": None,
                "focal_point_m": [2.01, 0.3, 1.5025],
            },
            "agent": {"minibatch": 8, "replay_capacity": 64,
                      "exploration_noise_decay": 1e-3},
            "propagation": {"probe_budget": 25, "seed_count": 1},
            "blending": {"probe_budget": 25},
            "plane": {"half_extent_m": 0.05, "resolution": 5},
            "options": {"conv_window": 20, "library_size": 1, "eval_count": 1,
                        "components_list": [1], "distance_range_m": [0.25, 0.35],
                        "cone_half_angle_deg": 10.0, "cone_min_half_angle_deg": 5.0,
                        "budget_library": 60, "budget_eval": 60, **options},
        })

    def test_monte_carlo_blend_outputs(self, tmp_path):
        outdir = run_experiment(self.mc_config(tmp_path / "mc"))
        summary = (outdir / "mc_summary.csv").read_text().splitlines()
        assert summary[0] == "scenario,mean_convergence_iteration,mean_greedy_normalized"
        assert [line.split(",")[0] for line in summary[1:]] == ["no-transfer", "blend-k1"]
        mc = (outdir / "mc.csv").read_text().splitlines()
        assert len(mc) == 3  # header + no-transfer + blend-k1 for the one snapshot
        lib = PolicyLibrary.load(outdir / "library")
        assert len(lib.entries) == 1
        # sampled points respect both the distance range and the annular cone
        center = np.array([2.005, 0.0, 1.5])
        for line in (outdir / "library_points.csv").read_text().splitlines()[1:]:
            _, x, y, z, dist = (float(v) for v in line.split(","))
            assert 0.25 <= dist <= 0.35
            offset = np.array([x, y, z]) - center
            tilt = np.degrees(np.arccos(offset[1] / np.linalg.norm(offset)))
            assert 5.0 - 1e-9 <= tilt <= 10.0 + 1e-9

    def test_monte_carlo_chained_library(self, tmp_path):
        cfg = self.mc_config(tmp_path / "mc", library_size=3, library_mode="chained")
        outdir = run_experiment(cfg)
        lib = PolicyLibrary.load(outdir / "library")
        assert len(lib.entries) == 3
        # later entries are blend snapshots carrying their component weights
        assert "weights" in lib.entries[1].metadata
        points = (outdir / "library_points.csv").read_text().splitlines()
        assert len(points) == 4

    def test_monte_carlo_rejects_bad_library_mode(self, tmp_path):
        cfg = self.mc_config(tmp_path / "mc", library_mode="incremental")
        with pytest.raises(ConfigError):
            run_experiment(cfg)


class TestCli:
    def write_config(self, tmp_path, **kwargs):
        cfg = {
            "experiment": {"kind": "train-baseline", "seed": 21,
                           "budget_iterations": 60, "figures": False,
                           "output_dir": str(tmp_path / "out")},
            "scene": {
                "aperture": {"sub_rows": 2, "sub_cols": 2, "modules_rows": 1,
                             "modules_cols": 2, "corner_m": [2.0, 0.0, 1.5],
                             "element_spacing_m": 0.005, "plane_normal": "y"},
                "room": None,
                "focal_point_m": [2.01, 0.3, 1.5025],
            },
            "agent": {"minibatch": 8, "replay_capacity": 64},
            "plane": {"half_extent_m": 0.05, "resolution": 5},
        }
        cfg.update(kwargs)
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump(cfg))
        return path

    def test_run_prints_outdir_and_notes_the_zone(self, tmp_path, capsys):
        path = self.write_config(tmp_path)
        assert main(["run", str(path)]) == 0
        captured = capsys.readouterr()
        assert captured.out.strip() == str(tmp_path / "out")
        assert "far-field" in captured.err  # tiny panel, 0.3 m is beyond Fresnel

    def test_run_missing_config_exits_2(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "absent.yaml")]) == 2
        assert "error:" in capsys.readouterr().err

    def test_rerun_refusal_exits_2(self, tmp_path, capsys):
        path = self.write_config(tmp_path)
        assert main(["run", str(path)]) == 0
        assert main(["run", str(path)]) == 2

    def test_similarity_command(self, tmp_path, capsys):
        rng = np.random.default_rng(1)
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        img = rng.uniform(0, 2 * np.pi, size=(4, 4))
        save_phase_csv(img, a)
        save_phase_csv(np.rot90(img), b)
        assert main(["similarity", str(a), str(b), "--theta-step", "90"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "ecc,angle_deg,degenerate"
        value, angle, degenerate = out[1].split(",")
        assert float(value) == pytest.approx(1.0, rel=1e-9)
        assert float(angle) == pytest.approx(270.0)
        assert degenerate == "0"

    def test_power_map_and_bfr_commands(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        phases = tmp_path / "phases.csv"
        save_phase_csv(np.zeros((2, 4)), phases)
        outdir = tmp_path / "pm"
        assert main(["power-map", str(phases), str(cfg),
                     "--output-dir", str(outdir), "--no-figures"]) == 0
        assert (outdir / "map.csv").exists() and (outdir / "bfr.csv").exists()
        assert capsys.readouterr().out.startswith("fraction,radius_m")
        assert main(["bfr", str(phases), str(cfg), "--fraction", "0.5"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[1].startswith("0.5,")

    def test_library_commands(self, tmp_path, capsys):
        path = self.write_config(tmp_path)
        assert main(["run", str(path)]) == 0
        capsys.readouterr()
        lib = str(tmp_path / "out" / "library")
        assert main(["library", "ls", lib]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "entry,focal_x_m,focal_y_m,focal_z_m,subarrays,phase_bits"
        assert out[1].startswith("0,") and out[1].endswith(",2,3")
        assert main(["library", "inspect", lib]) == 0
        text = capsys.readouterr().out
        assert "focal_point_m:" in text and "actor_weight_shapes:" in text
        assert main(["library", "inspect", lib, "--entry", "5"]) == 2

    def test_corrupt_library_exits_3(self, tmp_path, capsys):
        bad = tmp_path / "lib"
        bad.mkdir()
        (bad / "library.yaml").write_text("format: wrong/1\n")
        assert main(["library", "ls", str(bad)]) == 3
        assert "error:" in capsys.readouterr().err
