"""Experiment runners: reproducible runs with CSV outputs and figures.

Every run writes a manifest before any result, one or more CSV tables
with header rows, phase images as CSV grids plus PGM renderings, and
(unless disabled) PNG report figures of the same data.  Reruns with the
same config and seed produce byte-identical CSV bodies.
"""

from __future__ import annotations

import datetime
import re
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .beams import (
    BeamMatrix,
    assemble_matrix,
    bfr_from_map,
    oracle_power,
    power_density_map,
    quantize_phases,
    received_power,
    response_correlation,
    subarray_channel,
)
from .config import ExperimentConfig, SceneConfig, config_to_dict, scene_channel
from .figures import (
    save_bars_figure,
    save_grid_figure,
    save_line_figure,
    save_phase_figure,
    save_power_map_figure,
    save_traces_figure,
)
from .geometry import ApertureConfig, ConfigError, aperture_center, panel_normal
from .library import PolicyLibrary, snapshot_entry
from .pdi import ecc, load_phase_csv, phase_image, rotation_grid, save_phase_csv, save_phase_pgm, similarity_map
from .seeding import child_seed, spawn
from .td3 import SubarrayEnv, TrainResult, train_subarray
from .transfer import policy_blending, policy_propagation

RUN_FORMAT = "spotfocus-run"
RUN_VERSION = 1

DEFAULT_BFR_FRACTIONS = (0.5, 0.7, 0.9, 0.95)


def convergence_iteration(trace, target_fraction: float = 0.9, window: int = 500,
                          reference: float | None = None) -> int:
    """First iteration whose trailing moving average reaches the target.

    The target is ``target_fraction`` times the trace's final plateau
    (its last full-window average) unless an explicit ``reference`` level
    is supplied.  Iterations are 1-based; -1 means never reached.
    """
    values = np.asarray(trace, dtype=np.float64)
    if not 0.0 < target_fraction <= 1.0:
        raise ValueError("target_fraction must lie in (0, 1]")
    if window < 1:
        raise ValueError("window must be >= 1")
    if values.size < window:
        return -1
    sums = np.cumsum(values)
    ma = (sums[window - 1:] - np.concatenate(([0.0], sums[:-window]))) / window
    plateau = reference if reference is not None else ma[-1]
    target = target_fraction * plateau
    hits = np.nonzero(ma >= target)[0]
    if hits.size == 0:
        return -1
    return int(hits[0]) + window


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows) -> None:
    """Header row plus data rows; floats rendered with full round-trip
    precision so identical runs are byte-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _write_manifest(outdir: Path, cfg: ExperimentConfig, status: str, started: str,
                    seeds: dict, outputs=None, error: str | None = None,
                    finished: str | None = None) -> None:
    doc = {
        "format": f"{RUN_FORMAT}/{RUN_VERSION}",
        "package_version": __version__,
        "kind": cfg.kind,
        "status": status,
        "started": started,
        "finished": finished,
        "config": config_to_dict(cfg),
        "seeds": seeds,
        "outputs": sorted(outputs or []),
        "error": error,
    }
    with open(outdir / "manifest.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


class _Recorder:
    """Collects output paths and seed labels as a runner works."""

    def __init__(self, outdir: Path, master_seed: int, figures: bool):
        self.outdir = outdir
        self.master = master_seed
        self.figures = figures
        self.outputs: list[str] = []
        self.seeds: dict[str, int] = {"master": master_seed}

    def path(self, relative: str) -> Path:
        p = self.outdir / relative
        p.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(relative)
        return p

    def stream(self, *labels) -> np.random.Generator:
        label = ":".join(str(l) for l in labels)
        seed = child_seed(self.master, *labels)
        self.seeds[label] = seed
        return np.random.default_rng(seed)


def _conv_params(cfg: ExperimentConfig) -> tuple[float, int]:
    fraction = float(cfg.options.get("conv_target_fraction", 0.9))
    window = int(cfg.options.get("conv_window", 500))
    return fraction, window


def _write_trace(rec: _Recorder, name: str, result: TrainResult) -> None:
    rows = (
        (i + 1, result.powers[i], result.powers[i] / result.oracle_power,
         result.rewards[i], result.noise_stds[i])
        for i in range(result.powers.size)
    )
    write_csv(rec.path(name), ("iteration", "power", "power_normalized", "reward", "noise_std"), rows)


def _write_pdi(rec: _Recorder, stem: str, image: np.ndarray) -> None:
    save_phase_csv(image, rec.path(stem + ".csv"))
    save_phase_pgm(image, rec.path(stem + ".pgm"))


def _write_matrix_outputs(rec: _Recorder, cfg: ExperimentConfig, matrix: BeamMatrix, h) -> None:
    _write_pdi(rec, "matrix", phase_image(matrix))
    scene = cfg.scene
    panel = received_power(matrix, h, scene.signal_variance, scene.noise_variance)
    bound = oracle_power(h, scene.signal_variance)
    write_csv(rec.path("panel_power.csv"),
              ("power", "oracle_power", "power_normalized"),
              [(panel.power, bound, panel.power / bound)])
    if rec.figures:
        save_phase_figure(phase_image(matrix), rec.path("matrix.png"), title="panel phase pattern")


def _summary_row(m: int, mode: str, result: TrainResult, fraction: float, window: int):
    conv = convergence_iteration(result.normalized_powers, fraction, window)
    return (m, mode, result.final_greedy_power, result.oracle_power,
            result.final_greedy_power / result.oracle_power, conv)


_SUMMARY_HEADER = ("subarray", "mode", "final_greedy_power", "oracle_power",
                   "greedy_normalized", "convergence_iteration")


def _save_run_library(rec: _Recorder, cfg: ExperimentConfig,
                      results: dict[int, TrainResult]) -> None:
    """Store the run's trained policies as a one-entry library so later
    runs at other focal points can blend from them."""
    scene = cfg.scene
    entry = snapshot_entry(
        scene.focal_point,
        [results[m].policy for m in sorted(results)],
        [results[m].final_pdi for m in sorted(results)],
        scene.aperture.phase_bits,
        metadata={"kind": cfg.kind, "seed": cfg.seed},
    )
    PolicyLibrary([entry]).save(rec.path("library"))


def _run_train_baseline(cfg: ExperimentConfig, rec: _Recorder) -> None:
    scene = cfg.scene
    h = scene_channel(scene)
    chosen = cfg.options.get("subarrays", "all")
    if chosen == "all":
        subarrays = list(range(scene.aperture.num_subarrays))
    else:
        subarrays = [int(m) for m in chosen]
    fraction, window = _conv_params(cfg)
    results: dict[int, TrainResult] = {}
    summary = []
    for m in subarrays:
        env = SubarrayEnv(subarray_channel(h, scene.aperture, m), subarray=m,
                          signal_variance=scene.signal_variance,
                          noise_variance=scene.noise_variance,
                          phase_bits=scene.aperture.phase_bits)
        result = train_subarray(env, cfg.agent, cfg.budget_iterations, rec.stream("train", m))
        results[m] = result
        _write_trace(rec, f"traces/sub_{m:02d}.csv", result)
        _write_pdi(rec, f"pdis/sub_{m:02d}", phase_image(result.final_pdi))
        summary.append(_summary_row(m, "scratch", result, fraction, window))
    write_csv(rec.path("summary.csv"), _SUMMARY_HEADER, summary)
    if rec.figures:
        save_traces_figure({m: results[m].normalized_powers for m in subarrays},
                           rec.path("traces.png"))
    if len(subarrays) == scene.aperture.num_subarrays:
        matrix = assemble_matrix([results[m].final_pdi for m in sorted(results)],
                                 scene.aperture.modules_rows, scene.aperture.modules_cols)
        _write_matrix_outputs(rec, cfg, matrix, h)
        _save_run_library(rec, cfg, results)


def _run_train_pp(cfg: ExperimentConfig, rec: _Recorder) -> None:
    scene = cfg.scene
    h = scene_channel(scene)
    prop = policy_propagation(scene.aperture, h, cfg.agent, cfg.propagation,
                              cfg.budget_iterations, cfg.seed,
                              scene.signal_variance, scene.noise_variance)
    fraction, window = _conv_params(cfg)
    modes = {a.subarray: a for a in prop.assignments}
    summary = []
    probe_rows = []
    assign_rows = []
    for m in sorted(prop.results):
        result = prop.results[m]
        record = modes[m]
        _write_trace(rec, f"traces/sub_{m:02d}.csv", result)
        _write_pdi(rec, f"pdis/sub_{m:02d}", phase_image(result.final_pdi))
        summary.append(_summary_row(m, record.mode, result, fraction, window))
        assign_rows.append((m, record.mode,
                            -1 if record.teacher is None else record.teacher,
                            record.ecc, np.rad2deg(record.angle)))
        for probe in record.probes:
            probe_rows.append((m, probe.teacher, probe.ecc, np.rad2deg(probe.angle),
                               probe.greedy_power))
    write_csv(rec.path("summary.csv"), _SUMMARY_HEADER, summary)
    write_csv(rec.path("assignments.csv"),
              ("subarray", "mode", "teacher", "ecc", "angle_deg"), assign_rows)
    write_csv(rec.path("probes.csv"),
              ("student", "teacher", "ecc", "angle_deg", "probe_greedy_power"), probe_rows)
    if rec.figures:
        labels = {f"{m} ({modes[m].mode})": prop.results[m].normalized_powers
                  for m in sorted(prop.results)}
        save_traces_figure(labels, rec.path("traces.png"))
        grid = np.full((scene.aperture.modules_rows, scene.aperture.modules_cols), np.nan)
        for a in prop.assignments:
            r, c = divmod(a.subarray, scene.aperture.modules_cols)
            grid[r, c] = a.ecc
        save_grid_figure(grid, rec.path("ecc_grid.png"),
                         "probe correlation of chosen teacher", "correlation", vmin=0.0, vmax=1.0)
    _write_matrix_outputs(rec, cfg, prop.matrix, h)
    _save_run_library(rec, cfg, prop.results)


def _run_blend(cfg: ExperimentConfig, rec: _Recorder) -> None:
    scene = cfg.scene
    library_dir = cfg.options.get("library_dir")
    if not library_dir:
        raise ConfigError("blend experiment needs options.library_dir")
    library = PolicyLibrary.load(library_dir)
    h = scene_channel(scene)
    append = bool(cfg.options.get("append", True))
    blend = policy_blending(library, scene.aperture, h, cfg.agent, cfg.blending,
                            cfg.budget_iterations, cfg.seed,
                            scene.signal_variance, scene.noise_variance, append=append)
    fraction, window = _conv_params(cfg)
    summary = []
    for m in sorted(blend.results):
        result = blend.results[m]
        _write_trace(rec, f"traces/sub_{m:02d}.csv", result)
        _write_pdi(rec, f"pdis/sub_{m:02d}", phase_image(result.final_pdi))
        summary.append(_summary_row(m, "blend", result, fraction, window))
    write_csv(rec.path("summary.csv"), _SUMMARY_HEADER, summary)
    weight_rows = [
        (i, blend.component_focal_points[i][0], blend.component_focal_points[i][1],
         blend.component_focal_points[i][2], blend.component_distances[i],
         blend.probe_powers[i], blend.weights[i])
        for i in range(blend.weights.size)
    ]
    write_csv(rec.path("weights.csv"),
              ("component", "focal_x_m", "focal_y_m", "focal_z_m", "distance_m",
               "probe_power", "weight"), weight_rows)
    if rec.figures:
        save_traces_figure({m: blend.results[m].normalized_powers for m in sorted(blend.results)},
                           rec.path("traces.png"))
    _write_matrix_outputs(rec, cfg, blend.matrix, h)
    if append:
        library.save(library_dir)


def _load_pdi_dir(pdi_dir: Path) -> dict[int, np.ndarray]:
    images = {}
    for path in sorted(pdi_dir.glob("sub_*.csv")):
        match = re.fullmatch(r"sub_(\d+)", path.stem)
        if match:
            images[int(match.group(1))] = load_phase_csv(path)
    if not images:
        raise ConfigError(f"no sub_*.csv phase images found in {pdi_dir}")
    return images


def _run_similarity_map(cfg: ExperimentConfig, rec: _Recorder) -> None:
    scene = cfg.scene
    pdi_dir = cfg.options.get("pdi_dir")
    if not pdi_dir:
        raise ConfigError("similarity-map experiment needs options.pdi_dir")
    images = _load_pdi_dir(Path(pdi_dir))
    indices = sorted(images)
    reference = int(cfg.options.get("reference", indices[0]))
    if reference not in images:
        raise ConfigError(f"reference subarray {reference} not among loaded images")
    step = float(cfg.options.get("theta_step_deg", cfg.propagation.rotation_step_deg))
    angles = rotation_grid(step)
    low = cfg.propagation.accept_threshold
    high = cfg.propagation.transfer_threshold

    ref = images[reference]
    ordered = [images[i] for i in indices]
    sim_rows = []
    cand_rows = []
    for theta in angles:
        values = similarity_map(ref, ordered, float(theta))
        for i, v in zip(indices, values):
            sim_rows.append((np.rad2deg(theta), i, v))
        cand_rows.append((np.rad2deg(theta),
                          int(np.sum(values > low)), int(np.sum(values > high))))
    write_csv(rec.path("similarity.csv"), ("theta_deg", "subarray", "correlation"), sim_rows)
    write_csv(rec.path("candidates.csv"),
              ("theta_deg", f"count_above_{low}", f"count_above_{high}"), cand_rows)
    ecc_rows = []
    grid = np.full((scene.aperture.modules_rows, scene.aperture.modules_cols), np.nan)
    for i in indices:
        score = ecc(ref, images[i], angles)
        ecc_rows.append((i, score.value, np.rad2deg(score.angle), int(score.degenerate)))
        if i < scene.aperture.num_subarrays:
            r, c = divmod(i, scene.aperture.modules_cols)
            grid[r, c] = score.value
    write_csv(rec.path("ecc.csv"), ("subarray", "ecc", "angle_deg", "degenerate"), ecc_rows)
    if rec.figures:
        save_grid_figure(grid, rec.path("ecc_grid.png"),
                         f"rotation-max correlation vs subarray {reference}",
                         "correlation", vmin=-1.0, vmax=1.0)
        cand = np.array([[r[0], r[1], r[2]] for r in cand_rows], dtype=np.float64)
        save_line_figure(cand[:, 0], cand[:, 1], rec.path("candidates.png"),
                         "rotation (deg)", f"images above {low}",
                         "transfer candidates vs rotation")


def matrix_from_csv(path, aperture: ApertureConfig) -> BeamMatrix:
    """Full-panel beamfocusing matrix from a phase CSV, quantized to the
    aperture's phase resolution."""
    phases = load_phase_csv(path)
    if phases.shape != (aperture.rows, aperture.cols):
        raise ConfigError(
            f"{path}: phase grid {phases.shape} does not match the "
            f"{aperture.rows}x{aperture.cols} panel")
    return BeamMatrix(quantize_phases(phases, aperture.phase_bits), aperture.phase_bits)


def power_map_rows(pm):
    """Long-format (u, v, power) rows of a power map, row-major."""
    return (
        (pm.u_offsets[j], pm.v_offsets[i], pm.values[i, j])
        for i in range(pm.values.shape[0])
        for j in range(pm.values.shape[1])
    )


def _run_power_map(cfg: ExperimentConfig, rec: _Recorder) -> None:
    scene = cfg.scene
    matrix_csv = cfg.options.get("matrix_csv")
    if not matrix_csv:
        raise ConfigError("power-map experiment needs options.matrix_csv")
    matrix = matrix_from_csv(matrix_csv, scene.aperture)
    pm = power_density_map(matrix, scene.focal_point, scene.aperture, scene.channel,
                           scene.room, cfg.plane, scene.signal_variance)
    write_csv(rec.path("map.csv"), ("u_offset_m", "v_offset_m", "power"), power_map_rows(pm))
    fractions = [float(f) for f in cfg.options.get("bfr_fractions", DEFAULT_BFR_FRACTIONS)]
    radii = [(f, bfr_from_map(pm, f)) for f in fractions]
    write_csv(rec.path("bfr.csv"), ("fraction", "radius_m"), radii)
    if rec.figures:
        ring = dict(radii).get(0.9)
        save_power_map_figure(pm.values, pm.u_offsets, pm.v_offsets,
                              rec.path("map.png"), radius=ring)


def _sample_focal_points(scene: SceneConfig, count: int, rng: np.random.Generator,
                         distance_range: tuple[float, float],
                         cone_half_angle_deg: float,
                         cone_min_half_angle_deg: float = 0.0) -> np.ndarray:
    """Random focal points in front of the panel: distance uniform in the
    range, direction uniform within a cone (or annular cone) about the
    panel normal."""
    normal = panel_normal(scene.aperture, scene.room)
    u_axis, v_axis = scene.aperture.plane_axes
    center = aperture_center(scene.aperture)
    min_tilt = np.deg2rad(cone_min_half_angle_deg)
    max_tilt = np.deg2rad(cone_half_angle_deg)
    points = np.empty((count, 3))
    for i in range(count):
        d = rng.uniform(distance_range[0], distance_range[1])
        tilt = rng.uniform(min_tilt, max_tilt)
        azimuth = rng.uniform(0.0, 2.0 * np.pi)
        direction = (np.cos(tilt) * normal
                     + np.sin(tilt) * (np.cos(azimuth) * u_axis + np.sin(azimuth) * v_axis))
        points[i] = center + d * direction
    return points


def _train_all(scene: SceneConfig, h, agent_cfg, budget: int, seed: int, label: str):
    results = {}
    for m in range(scene.aperture.num_subarrays):
        env = SubarrayEnv(subarray_channel(h, scene.aperture, m), subarray=m,
                          signal_variance=scene.signal_variance,
                          noise_variance=scene.noise_variance,
                          phase_bits=scene.aperture.phase_bits)
        results[m] = train_subarray(env, agent_cfg, budget, spawn(seed, label, m))
    return results


def _mean_convergence(results: dict[int, TrainResult], fraction: float, window: int) -> float:
    values = [convergence_iteration(r.normalized_powers, fraction, window)
              for r in results.values()]
    usable = [v for v in values if v > 0]
    return float(np.mean(usable)) if usable else float("nan")


def _mean_greedy(results: dict[int, TrainResult]) -> float:
    return float(np.mean([r.final_greedy_power / r.oracle_power for r in results.values()]))


def _run_monte_carlo_blend(cfg: ExperimentConfig, rec: _Recorder) -> None:
    scene = cfg.scene
    opts = cfg.options
    library_size = int(opts.get("library_size", cfg.blending.library_floor))
    eval_count = int(opts.get("eval_count", 10))
    components_list = [int(k) for k in opts.get("components_list", [1, cfg.blending.components])]
    distance_range = tuple(float(v) for v in opts.get("distance_range_m", (1.0, 2.0)))
    cone = float(opts.get("cone_half_angle_deg", 40.0))
    cone_min = float(opts.get("cone_min_half_angle_deg", 0.0))
    budget_library = int(opts.get("budget_library", cfg.budget_iterations))
    budget_eval = int(opts.get("budget_eval", cfg.budget_iterations))
    library_mode = str(opts.get("library_mode", "independent"))
    if library_mode not in ("independent", "chained"):
        raise ConfigError("library_mode must be 'independent' or 'chained'")
    fraction, window = _conv_params(cfg)

    lib_points = _sample_focal_points(scene, library_size, rec.stream("library-points"),
                                      distance_range, cone, cone_min)
    library = PolicyLibrary()
    lib_rows = []
    for i, fp in enumerate(lib_points):
        h = scene_channel(scene, fp)
        if library_mode == "chained" and len(library):
            # grow the library by blending from what it already holds, so
            # every entry descends from the same weights and stays blendable
            blend_cfg = replace(cfg.blending,
                                components=min(len(library), cfg.blending.components))
            policy_blending(library, scene.aperture, h, cfg.agent, blend_cfg,
                            budget_library, child_seed(cfg.seed, "library", i),
                            scene.signal_variance, scene.noise_variance)
        else:
            prop = policy_propagation(scene.aperture, h, cfg.agent, cfg.propagation,
                                      budget_library, child_seed(cfg.seed, "library", i),
                                      scene.signal_variance, scene.noise_variance)
            entry = snapshot_entry(
                fp,
                [prop.results[m].policy for m in sorted(prop.results)],
                [prop.results[m].final_pdi for m in sorted(prop.results)],
                scene.aperture.phase_bits,
                metadata={"index": i, "budget": budget_library},
            )
            library.add(entry)
        lib_rows.append((i, fp[0], fp[1], fp[2],
                         float(np.linalg.norm(fp - aperture_center(scene.aperture)))))
    write_csv(rec.path("library_points.csv"),
              ("entry", "focal_x_m", "focal_y_m", "focal_z_m", "distance_m"), lib_rows)
    library.save(rec.path("library"))

    eval_points = _sample_focal_points(scene, eval_count, rec.stream("eval-points"),
                                       distance_range, cone, cone_min)
    mc_rows = []
    for e, fp in enumerate(eval_points):
        h = scene_channel(scene, fp)
        center_dist = float(np.linalg.norm(fp - aperture_center(scene.aperture)))
        baseline = _train_all(scene, h, cfg.agent, budget_eval,
                              child_seed(cfg.seed, "eval", e), "no-transfer")
        mc_rows.append((e, fp[0], fp[1], fp[2], center_dist, "no-transfer",
                        _mean_convergence(baseline, fraction, window), _mean_greedy(baseline)))
        for k in components_list:
            blend_cfg = replace(cfg.blending, components=k)
            blend = policy_blending(library, scene.aperture, h, cfg.agent, blend_cfg,
                                    budget_eval, child_seed(cfg.seed, "eval", e, "blend", k),
                                    scene.signal_variance, scene.noise_variance, append=False)
            mc_rows.append((e, fp[0], fp[1], fp[2], center_dist, f"blend-k{k}",
                            _mean_convergence(blend.results, fraction, window),
                            _mean_greedy(blend.results)))
    write_csv(rec.path("mc.csv"),
              ("snapshot", "focal_x_m", "focal_y_m", "focal_z_m", "distance_m",
               "scenario", "mean_convergence_iteration", "mean_greedy_normalized"), mc_rows)

    scenarios = ["no-transfer"] + [f"blend-k{k}" for k in components_list]
    summary = []
    for scenario in scenarios:
        conv = [r[6] for r in mc_rows if r[5] == scenario and np.isfinite(r[6])]
        greedy = [r[7] for r in mc_rows if r[5] == scenario]
        summary.append((scenario,
                        float(np.mean(conv)) if conv else float("nan"),
                        float(np.mean(greedy))))
    write_csv(rec.path("mc_summary.csv"),
              ("scenario", "mean_convergence_iteration", "mean_greedy_normalized"), summary)
    if rec.figures:
        save_bars_figure([s[0] for s in summary], [s[1] for s in summary],
                         rec.path("mc_summary.png"), "mean convergence iteration",
                         "warm-started vs scratch training")


def _run_orthogonality_probe(cfg: ExperimentConfig, rec: _Recorder) -> None:
    scene = cfg.scene
    opts = cfg.options
    grids = [tuple(int(v) for v in g) for g in opts.get("element_grids",
                                                        [(4, 4), (8, 8), (16, 16)])]
    separation = float(opts.get("separation_m", 0.1))
    distance = float(opts.get("distance_m", 0.25))
    num_matrices = int(opts.get("num_matrices", 50))
    use_room = bool(opts.get("use_room", False))
    room = scene.room if use_room else None

    base = scene.aperture
    center = aperture_center(base)
    u_axis, v_axis = base.plane_axes
    normal = panel_normal(base, scene.room)
    point_a = center + distance * normal
    point_b = point_a + separation * u_axis

    rows = []
    for rows_n, cols_n in grids:
        half_u = (cols_n - 1) / 2.0 * base.spacing
        half_v = (rows_n - 1) / 2.0 * base.spacing
        corner = center - half_u * u_axis - half_v * v_axis
        aperture = ApertureConfig(
            sub_rows=rows_n, sub_cols=cols_n, modules_rows=1, modules_cols=1,
            frequency_hz=base.frequency_hz, element_spacing_m=base.element_spacing_m,
            corner_m=tuple(corner), plane_normal=base.plane_normal,
            phase_bits=base.phase_bits)
        rng = rec.stream("matrices", rows_n, cols_n)
        values = np.empty(num_matrices)
        for i in range(num_matrices):
            idx = rng.integers(0, 1 << aperture.phase_bits, size=(rows_n, cols_n))
            w = BeamMatrix(idx, aperture.phase_bits)
            values[i] = response_correlation(point_a, point_b, w, aperture,
                                             scene.channel, room)
        rows.append((rows_n * cols_n, rows_n, cols_n, float(np.median(values))))
    write_csv(rec.path("orthogonality.csv"),
              ("elements", "rows", "cols", "median_correlation"), rows)
    if rec.figures:
        save_line_figure([r[0] for r in rows], [r[3] for r in rows],
                         rec.path("orthogonality.png"), "panel elements",
                         "median response correlation",
                         f"responses {separation} m apart decorrelate with panel size",
                         logx=True)


_RUNNERS = {
    "train-baseline": _run_train_baseline,
    "train-pp": _run_train_pp,
    "blend": _run_blend,
    "similarity-map": _run_similarity_map,
    "power-map": _run_power_map,
    "monte-carlo-blend": _run_monte_carlo_blend,
    "orthogonality-probe": _run_orthogonality_probe,
}


def run_experiment(cfg: ExperimentConfig, output_dir=None) -> Path:
    """Execute one experiment; returns its output directory.

    The manifest is written before any result and finalized with the
    output index on success or the failure record on error.  An existing
    manifest in the target directory aborts the run (no silent overwrite).
    """
    outdir = Path(output_dir) if output_dir is not None else cfg.resolved_output_dir()
    outdir.mkdir(parents=True, exist_ok=True)
    if (outdir / "manifest.yaml").exists():
        raise ConfigError(f"{outdir} already holds a run manifest; refusing to overwrite")
    started = _now()
    rec = _Recorder(outdir, cfg.seed, cfg.figures)
    _write_manifest(outdir, cfg, "running", started, rec.seeds)
    try:
        _RUNNERS[cfg.kind](cfg, rec)
    except Exception as exc:
        _write_manifest(outdir, cfg, "failed", started, rec.seeds, rec.outputs,
                        error=f"{type(exc).__name__}: {exc}", finished=_now())
        raise
    _write_manifest(outdir, cfg, "completed", started, rec.seeds, rec.outputs,
                    finished=_now())
    return outdir
