"""Command line front end.

Exit codes: 0 on success, 2 for configuration or usage errors, 3 for
runtime failures.  Quick-look commands print small CSV tables to stdout;
``run`` writes a full result directory.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .beams import beamfocusing_radius, bfr_from_map, power_density_map
from .config import load_config, load_scene
from .experiments import DEFAULT_BFR_FRACTIONS, matrix_from_csv, power_map_rows, run_experiment, write_csv
from .figures import save_power_map_figure
from .geometry import ConfigError, classify_zone
from .library import PolicyLibrary
from .pdi import ecc, load_phase_csv, rotation_grid


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spotfocus",
        description="Near-field beamfocusing lab: train per-subarray phase "
                    "policies on a modular panel, transfer them between "
                    "subarrays and focal points, and inspect the results.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute an experiment config")
    run.add_argument("config", help="experiment YAML file")
    run.add_argument("--output-dir", help="override the configured output directory")
    run.add_argument("--no-figures", action="store_true", help="skip PNG reports")

    sim = sub.add_parser("similarity",
                         help="rotation-maximized correlation of two phase images")
    sim.add_argument("image_a", help="reference phase CSV (radians)")
    sim.add_argument("image_b", help="candidate phase CSV (radians)")
    sim.add_argument("--theta-step", type=float, default=10.0,
                     help="rotation grid step in degrees (default 10)")

    pmap = sub.add_parser("power-map",
                          help="received power over the focal plane of a stored matrix")
    pmap.add_argument("phases", help="panel phase CSV (radians)")
    pmap.add_argument("config", help="YAML with scene (and optional plane) sections")
    pmap.add_argument("--output-dir", default=".",
                      help="where map.csv, bfr.csv, map.png go (default: .)")
    pmap.add_argument("--no-figures", action="store_true", help="skip the PNG report")

    bfr = sub.add_parser("bfr",
                         help="spot radius capturing a fraction of the radiated power")
    bfr.add_argument("phases", help="panel phase CSV (radians)")
    bfr.add_argument("config", help="YAML with scene (and optional plane) sections")
    bfr.add_argument("--fraction", type=float, default=0.9,
                     help="captured power fraction (default 0.9)")

    lib = sub.add_parser("library", help="inspect a stored policy library")
    lib_sub = lib.add_subparsers(dest="library_command", required=True)
    ls = lib_sub.add_parser("ls", help="list entries")
    ls.add_argument("path", help="library directory")
    ins = lib_sub.add_parser("inspect", help="describe one entry")
    ins.add_argument("path", help="library directory")
    ins.add_argument("--entry", type=int, default=0, help="entry index (default 0)")

    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.no_figures:
        cfg = replace(cfg, figures=False)
    zone = classify_zone(cfg.scene.aperture, cfg.scene.focal_point)
    if zone.zone != "radiating-near-field":
        print(f"note: focal point at {zone.distance:.3f} m lies in the {zone.zone} "
              f"(radiating near field spans {zone.lower:.3f}-{zone.upper:.3f} m)",
              file=sys.stderr)
    outdir = run_experiment(cfg, args.output_dir)
    print(outdir)
    return 0


def _cmd_similarity(args) -> int:
    a = load_phase_csv(args.image_a)
    b = load_phase_csv(args.image_b)
    score = ecc(a, b, rotation_grid(args.theta_step))
    print("ecc,angle_deg,degenerate")
    print(f"{float(score.value)!r},{float(np.rad2deg(score.angle))!r},{int(score.degenerate)}")
    return 0


def _cmd_power_map(args) -> int:
    scene, plane = load_scene(args.config)
    matrix = matrix_from_csv(args.phases, scene.aperture)
    pm = power_density_map(matrix, scene.focal_point, scene.aperture, scene.channel,
                           scene.room, plane, scene.signal_variance)
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_csv(outdir / "map.csv", ("u_offset_m", "v_offset_m", "power"), power_map_rows(pm))
    radii = [(f, bfr_from_map(pm, f)) for f in DEFAULT_BFR_FRACTIONS]
    write_csv(outdir / "bfr.csv", ("fraction", "radius_m"), radii)
    if not args.no_figures:
        save_power_map_figure(pm.values, pm.u_offsets, pm.v_offsets, outdir / "map.png",
                              radius=dict(radii).get(0.9))
    print("fraction,radius_m")
    for f, r in radii:
        print(f"{float(f)!r},{float(r)!r}")
    return 0


def _cmd_bfr(args) -> int:
    scene, plane = load_scene(args.config)
    matrix = matrix_from_csv(args.phases, scene.aperture)
    radius = beamfocusing_radius(matrix, scene.focal_point, args.fraction,
                                 scene.aperture, scene.channel, scene.room, plane)
    print("fraction,radius_m")
    print(f"{float(args.fraction)!r},{float(radius)!r}")
    return 0


def _cmd_library(args) -> int:
    lib = PolicyLibrary.load(args.path)
    if args.library_command == "ls":
        print("entry,focal_x_m,focal_y_m,focal_z_m,subarrays,phase_bits")
        for i, e in enumerate(lib):
            fp = e.focal_point
            print(f"{i},{float(fp[0])!r},{float(fp[1])!r},{float(fp[2])!r},"
                  f"{e.num_subarrays},{e.phase_bits}")
        return 0
    if not 0 <= args.entry < len(lib):
        raise ConfigError(f"entry {args.entry} out of range; library holds {len(lib)}")
    e = lib.entries[args.entry]
    actor = e.policies[0].actor
    shapes = " ".join("x".join(str(d) for d in w.shape) for w in actor.weights)
    print(f"focal_point_m: {[float(v) for v in e.focal_point]}")
    print(f"phase_bits: {e.phase_bits}")
    print(f"subarrays: {e.num_subarrays}")
    print(f"actor_weight_shapes: {shapes}")
    print(f"metadata: {e.metadata}")
    return 0


_HANDLERS = {
    "run": _cmd_run,
    "similarity": _cmd_similarity,
    "power-map": _cmd_power_map,
    "bfr": _cmd_bfr,
    "library": _cmd_library,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
