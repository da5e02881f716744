"""Command-line entry point.

Subcommands: gen-world, render, build-bev, localize, evaluate, bench.
All randomness flows from explicit seeds; outputs never overwrite
existing files unless --force is given. Angles on the CLI are degrees.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import _kernels, formats
from .bev import BevGrid, BevSpec, build_bev
from .evaluation import ExperimentConfig, run_experiment
from .formats import FormatError
from .geometry import CameraRig, EgoPose, surround_rig
from .localizer import LocalizeConfig, localize
from .semantic_map import SemanticMap, crop_tile
from .synthworld import SurroundObservation, World, WorldSpec, generate_world, render_surround

logger = logging.getLogger("bevloc")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_FORMAT = 4
EXIT_DIMS = 5
EXIT_EXISTS = 6


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


def _check_out(path: Path, force: bool) -> Path:
    if path.exists() and not force:
        raise CliError(EXIT_EXISTS, "exists", f"{path} exists; pass --force to overwrite")
    return path


def _load_json(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_MISSING, "missing-file", f"{p} not found")
    try:
        with open(p) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise CliError(EXIT_FORMAT, "malformed-json", f"{p}: {e}") from e


def _parse_pose(text: str) -> EgoPose:
    parts = text.split(",")
    if len(parts) != 3:
        raise CliError(EXIT_USAGE, "bad-pose", "pose must be 'x,y,yaw_deg'")
    x, y, deg = (float(v) for v in parts)
    return EgoPose(x, y, math.radians(deg))


def _load_rig(arg: str) -> CameraRig:
    if arg == "default":
        return surround_rig()
    doc = _load_json(arg)
    try:
        return CameraRig.from_dict(doc)
    except (KeyError, ValueError) as e:
        raise CliError(EXIT_FORMAT, "bad-rig", f"{arg}: {e}") from e


def _cmd_gen_world(args) -> int:
    spec = WorldSpec(
        seed=args.seed,
        extent=args.extent,
        road_density=args.road_density,
        walkway_elevation=args.walkway_elevation,
        building_height_range=tuple(args.building_height),
        crossing_frequency=args.crossing_frequency,
    )
    world = generate_world(spec)
    out = _check_out(Path(args.out), args.force)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(world.to_dict(), sort_keys=True) + "\n")
    logger.info("wrote world %s (seed=%d)", out, args.seed)
    return EXIT_OK


def _cmd_render(args) -> int:
    world = World.from_dict(_load_json(args.world))
    rig = _load_rig(args.rig)
    pose = _parse_pose(args.pose)
    obs = render_surround(world, rig, pose)
    out = Path(args.out)
    if (out / "observation.json").exists() and not args.force:
        raise CliError(EXIT_EXISTS, "exists", f"{out}/observation.json exists; pass --force")
    obs.save(out)
    rig.to_json(out / "rig.json")
    (out / "pose.json").write_text(
        json.dumps({"x": pose.x, "y": pose.y, "yaw_rad": pose.yaw}) + "\n"
    )
    logger.info("rendered %d cameras to %s", len(rig), out)
    return EXIT_OK


def _bev_spec_from_args(args) -> BevSpec:
    bins = tuple(float(b) for b in args.bins.split(",")) if args.bins else BevSpec().bins
    return BevSpec(side=args.bev_side, resolution=args.bev_res, bins=bins)


def save_bev(bev: BevGrid, base: Path, lossless: bool = False) -> None:
    """BEV serialization: quantized .smr (+ mask raster, + optional .smf)."""
    res = bev.spec.resolution
    origin = (bev.spec.origin, bev.spec.origin)
    q = np.round(255.0 * np.clip(bev.scores, 0.0, 1.0)).astype(np.uint8)
    formats.write_u8_raster(str(base) + ".smr", np.moveaxis(q, 2, 0), res, origin)
    formats.write_bool_raster(str(base) + ".mask.smr", bev.mask[None], res, origin)
    if lossless:
        formats.write_float_raster(str(base) + ".smf", np.moveaxis(bev.scores, 2, 0), res, origin)


def load_bev(base: Path, spec: BevSpec | None = None) -> BevGrid:
    p = Path(str(base) + ".smf")
    if p.exists():
        ch, res, origin = formats.read_float_raster(p)
        scores = np.moveaxis(ch.astype(np.float64), 0, 2)
    else:
        ch, res, origin = formats.read_u8_raster(str(base) + ".smr")
        scores = np.moveaxis(ch.astype(np.float64) / 255.0, 0, 2)
    mask, _, _ = formats.read_bool_raster(str(base) + ".mask.smr")
    if spec is None:
        spec = BevSpec(side=scores.shape[0] * res, resolution=res)
    return BevGrid(scores, mask[0], spec)


def _cmd_build_bev(args) -> int:
    obs_dir = Path(args.obs)
    if not (obs_dir / "observation.json").exists():
        raise CliError(EXIT_MISSING, "missing-file", f"{obs_dir}/observation.json not found")
    obs = SurroundObservation.load(obs_dir)
    rig = _load_rig(args.rig)
    for cam, sem in zip(rig, obs.semantic):
        if sem.shape != (cam.intrinsics.height, cam.intrinsics.width):
            raise CliError(
                EXIT_DIMS,
                "dim-mismatch",
                f"{cam.name}: observation {sem.shape} does not match rig "
                f"({cam.intrinsics.height}, {cam.intrinsics.width})",
            )
    spec = _bev_spec_from_args(args)
    bev = build_bev(obs, rig, spec)
    base = Path(args.out)
    _check_out(base.with_suffix(".smr"), args.force)
    base.parent.mkdir(parents=True, exist_ok=True)
    save_bev(bev, base, lossless=args.lossless)
    formats.write_pgm16(str(base) + ".pgm", bev.scores.max(axis=2))
    logger.info("wrote BEV %s.smr (S=%d)", base, spec.size)
    return EXIT_OK


def _cmd_localize(args) -> int:
    world_doc = _load_json(args.map)
    smap = (
        World.from_dict(world_doc).smap
        if "surface_heights" in world_doc
        else SemanticMap.from_dict(world_doc)
    )
    prior = _parse_pose(args.prior)
    cfg_doc = _load_json(args.config) if args.config else {}
    try:
        cfg = LocalizeConfig.from_dict(cfg_doc)
    except (TypeError, ValueError) as e:
        raise CliError(EXIT_USAGE, "bad-config", str(e)) from e
    overrides = {}
    if args.encoder:
        overrides["encoder"] = args.encoder
    if args.tau is not None:
        overrides["temperature"] = args.tau
    if args.tile_side is not None:
        overrides["tile_side"] = args.tile_side
    if args.tile_res is not None:
        overrides["tile_resolution"] = args.tile_res
    cfg = replace(cfg, keep_probability_map=True, **overrides)

    if args.bev:
        observation = load_bev(Path(args.bev))
        rig = None
    else:
        observation = SurroundObservation.load(Path(args.obs))
        rig = _load_rig(args.rig)

    t0 = time.perf_counter()
    try:
        res = localize(observation, smap, prior, cfg, rig=rig)
    except (ValueError, KeyError) as e:
        raise CliError(EXIT_DIMS, "localize", str(e)) from e
    wall_ms = (time.perf_counter() - t0) * 1e3

    base = Path(args.out)
    _check_out(base.with_suffix(".json"), args.force)
    base.parent.mkdir(parents=True, exist_ok=True)
    # timing goes to the log, not the artifact, so reruns are byte-identical
    doc = {
        "estimate": {"x": res.pose.x, "y": res.pose.y, "yaw_rad": res.pose.yaw},
        "prior": {"x": prior.x, "y": prior.y, "yaw_rad": prior.yaw},
        "peak": list(res.peak),
        "peak_probability": res.peak_probability,
        "argmax": list(res.argmax),
        "argmax_xy": list(res.argmax_xy),
        "config": {"encoder": cfg.encoder, "temperature": cfg.temperature,
                   "tile_side": cfg.tile_side, "tile_resolution": cfg.tile_resolution},
    }
    base.with_suffix(".json").write_text(json.dumps(doc, indent=2) + "\n")
    formats.write_pgm16(str(base) + ".pgm", res.probability_map.probs)
    logger.info(
        "estimate (%.2f, %.2f), peak prob %.3g, %.0f ms",
        res.pose.x, res.pose.y, res.peak_probability, wall_ms,
    )
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    doc = _load_json(args.config)
    try:
        cfg = ExperimentConfig.from_dict(doc)
    except (TypeError, ValueError) as e:
        raise CliError(EXIT_USAGE, "bad-config", str(e)) from e
    out = Path(args.out)
    if (out / "trials.csv").exists() and not args.force:
        raise CliError(EXIT_EXISTS, "exists", f"{out}/trials.csv exists; pass --force")
    result = run_experiment(cfg, out_dir=out, threads=args.threads)
    print(json.dumps(result.summary(), indent=2))
    return EXIT_OK


def _time(fn, repeat=3):
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def _cmd_bench(args) -> int:
    """Stage timings for every available kernel backend (compiled core
    vs numpy fallback), the FFT vs direct matcher, and an end-to-end
    localize."""
    from .bev import oracle_bev, observation_features, project_to_volume
    from .localizer import match_template

    backends = _kernels.available_backends()
    if args.quick:
        spec = BevSpec(side=30.0)
        world = generate_world(WorldSpec(seed=3, extent=120.0))
        rig = surround_rig(width=136, height=56, fx=60.0)
        tile_side, corr_win, corr_tile = 60.0, 24, 60
        grid_n = 200
    else:
        spec = BevSpec()
        world = generate_world(WorldSpec(seed=3))
        rig = surround_rig()
        tile_side, corr_win, corr_tile = 150.0, 80, 200
        grid_n = 1000
    pose = EgoPose(5.0, 2.0, 0.4)
    obs = render_surround(world, rig, pose)
    feats, hds = observation_features(obs, spec.bins)
    tile = crop_tile(world.smap, pose, tile_side, 0.5)
    bev = oracle_bev(world, pose, spec)
    tmpl = np.moveaxis(bev.scores, 2, 0)
    mask = bev.mask.astype(np.float64)
    tile_f = tile.raster.channels.astype(np.float64)
    poly = world.smap.polygons["drivable"][0]

    rows = []
    for name, mod in sorted(backends.items()):
        grid = np.zeros((grid_n, grid_n), dtype=np.uint8)
        rows.append(
            ("rasterize-fill", name,
             _time(lambda: mod.fill_polygon(grid, poly, -150.0, -150.0, 0.3)))
        )
        rows.append(
            ("bev-projection", name,
             _time(lambda: project_to_volume(feats, hds, rig, spec, kernels=mod), repeat=1))
        )
    small_tile = np.ascontiguousarray(tile_f[:, :corr_tile, :corr_tile])
    small_tmpl = np.ascontiguousarray(tmpl[:, :corr_win, :corr_win])
    small_mask = np.ascontiguousarray(mask[:corr_win, :corr_win])
    for name, mod in sorted(backends.items()):
        label = "fft" if name == "numpy" else "direct"
        rows.append(
            (f"matching-{label}", name,
             _time(lambda: mod.masked_corr(small_tile, small_tmpl, small_mask), repeat=1))
        )
    rows.append(
        ("matching-full-tile", "fft",
         _time(lambda: match_template(tmpl, bev.mask, tile_f), repeat=1))
    )
    cfg = LocalizeConfig(temperature=0.01, tile_side=tile_side, tile_resolution=0.5,
                         bev=spec)
    rows.append(
        ("localize-end-to-end", "default",
         _time(lambda: localize(bev, world.smap, pose, cfg), repeat=1))
    )

    print(f"{'stage':<22}{'backend':<10}{'ms':>10}")
    for stage, name, ms in rows:
        print(f"{stage:<22}{name:<10}{ms:>10.2f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bevloc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-world", help="generate a procedural world JSON")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--extent", type=float, default=240.0)
    g.add_argument("--road-density", type=float, default=1.0)
    g.add_argument("--walkway-elevation", type=float, default=0.15)
    g.add_argument("--building-height", type=float, nargs=2, default=(3.0, 10.0),
                   metavar=("LO", "HI"))
    g.add_argument("--crossing-frequency", type=float, default=0.6)
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true")
    g.set_defaults(fn=_cmd_gen_world)

    r = sub.add_parser("render", help="raycast surround-view oracle images")
    r.add_argument("--world", required=True)
    r.add_argument("--rig", default="default", help="rig JSON path or 'default'")
    r.add_argument("--pose", required=True, help="x,y,yaw_deg in the map frame")
    r.add_argument("--out", required=True)
    r.add_argument("--force", action="store_true")
    r.set_defaults(fn=_cmd_render)

    b = sub.add_parser("build-bev", help="project an observation into a BEV grid")
    b.add_argument("--obs", required=True, help="observation directory")
    b.add_argument("--rig", default="default")
    b.add_argument("--bev-res", type=float, default=0.5)
    b.add_argument("--bev-side", type=float, default=100.0)
    b.add_argument("--bins", default=None, help="comma-separated bin heights")
    b.add_argument("--lossless", action="store_true", help="also write the f32 sidecar")
    b.add_argument("--out", required=True, help="output path base (no extension)")
    b.add_argument("--force", action="store_true")
    b.set_defaults(fn=_cmd_build_bev)

    l = sub.add_parser("localize", help="relocalize a BEV against a map")
    src = l.add_mutually_exclusive_group(required=True)
    src.add_argument("--bev", help="BEV path base written by build-bev")
    src.add_argument("--obs", help="observation directory (renders the BEV first)")
    l.add_argument("--rig", default="default")
    l.add_argument("--map", required=True, help="world or semantic-map JSON")
    l.add_argument("--prior", required=True, help="x,y,yaw_deg")
    l.add_argument("--encoder", default=None, choices=["identity", "pyramid", "distance"])
    l.add_argument("--tau", type=float, default=None, help="softmax temperature")
    l.add_argument("--tile-side", type=float, default=None)
    l.add_argument("--tile-res", type=float, default=None)
    l.add_argument("--config", default=None, help="localizer config JSON")
    l.add_argument("--out", required=True, help="output path base (no extension)")
    l.add_argument("--force", action="store_true")
    l.set_defaults(fn=_cmd_localize)

    e = sub.add_parser("evaluate", help="run a Monte Carlo relocalization experiment")
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--threads", type=int, default=1)
    e.add_argument("--force", action="store_true")
    e.set_defaults(fn=_cmd_evaluate)

    k = sub.add_parser("bench", help="kernel/backend timing table")
    k.add_argument("--quick", action="store_true", help="small sizes (CI smoke)")
    k.set_defaults(fn=_cmd_bench)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error code={e.code} kind={e.kind}: {e}", file=sys.stderr)
        return e.code
    except FormatError as e:
        print(f"error code={EXIT_FORMAT} kind=raster-format: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except FileNotFoundError as e:
        print(f"error code={EXIT_MISSING} kind=missing-file: {e}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as e:  # pragma: no cover - last resort
        logger.exception("unexpected failure")
        print(f"error code={EXIT_RUNTIME} kind=internal: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
