"""``polyforge`` command-line interface.

Exit status: 0 on success, 2 when inputs or arguments are invalid, 3 when
processing fails.  Every error is reported as a single line on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import cv2
import numpy as np
import yaml
from PIL import UnidentifiedImageError

from . import __version__
from . import io as pio
from .geometry import PolygonSet, PolygonWithHoles, Ring
from .metrics import EvalConfig, EvalReport, SfParams, evaluate, fit_lognormal
from .polygonize import PolygonizeConfig, polygonize, polygonize_stitched, polygonize_with_vertices
from .raster import rasterize, render_heatmap, stitch_masks, tile
from .synth import Degradation, SceneSpec, synth_scene
from .vertices import VertexSet, nms_peaks, polygon_vertices

log = logging.getLogger("polyforge")

EXIT_OK, EXIT_INPUT, EXIT_FAILURE = 0, 2, 3
INPUT_ERRORS = (ValueError, FileNotFoundError, IsADirectoryError, NotADirectoryError, UnidentifiedImageError, KeyError)


class InputError(ValueError):
    """Raised for bad arguments or unreadable inputs."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 1024x1024, got {text!r}") from None
    if w <= 0 or h <= 0:
        raise argparse.ArgumentTypeError("size must be positive")
    return w, h


def parse_range(text: str) -> tuple[float, float]:
    parts = [float(v) for v in str(text).split(",")]
    if len(parts) == 1:
        parts *= 2
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}")
    return tuple(parts)


def default_jobs() -> int:
    env = os.environ.get("POLYFORGE_JOBS")
    if not env:
        return 1
    try:
        jobs = int(env)
    except ValueError:
        raise InputError(f"POLYFORGE_JOBS must be an integer, got {env!r}") from None
    if jobs < 1:
        raise InputError("POLYFORGE_JOBS must be >= 1")
    return jobs


def run_parallel(func, tasks: list, jobs: int) -> list:
    """Map ``func`` over ``tasks`` with a process pool; results keep task order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        return list(pool.map(func, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


# -- inputs ----------------------------------------------------------------------


def _pngs(directory: Path) -> list[Path]:
    files = sorted(directory.glob("*.png"))
    if not files:
        raise InputError(f"{directory}: no .png files")
    return files


def _sibling(directory: Path, stem: str, suffix: str) -> Path:
    path = directory / f"{stem}{suffix}"
    if not path.exists():
        raise InputError(f"{path}: missing counterpart for {stem!r}")
    return path


def _read_any_vertices(path) -> VertexSet:
    """Vertex GeoJSON with Point features, or polygon GeoJSON (all ring vertices)."""
    with open(path) as fh:
        obj = json.load(fh)
    kinds = {(f.get("geometry") or {}).get("type") for f in obj.get("features", [])}
    if kinds & {"Polygon", "MultiPolygon"}:
        return polygon_vertices(pio.polygons_from_geojson(obj))
    return pio.vertices_from_geojson(obj)


def _grid_dims(arg, polys: PolygonSet, what: str) -> tuple[int, int]:
    dims = tuple(arg) if arg else tuple(polys.grid_dims)
    if not dims or min(dims) <= 0:
        raise InputError(f"{what}: no grid_dims in file, pass --size WxH")
    return dims


def polygonize_config(args) -> PolygonizeConfig:
    return PolygonizeConfig(
        d_th=args.dth, epsilon=args.eps, tau=args.tau, nms_threshold=args.nms_threshold, nms_window=args.nms_window
    )


# -- subcommands --------------------------------------------------------------------


def cmd_rasterize(args) -> None:
    polys = pio.read_polygons(args.input)
    w, h = _grid_dims(args.size, polys, str(args.input))
    pio.write_mask_png(args.out, rasterize(polys, w, h))


def cmd_heatmap(args) -> None:
    vs = _read_any_vertices(args.input)
    if args.size:
        w, h = args.size
    else:
        with open(args.input) as fh:
            dims = json.load(fh).get("grid_dims")
        if not dims:
            raise InputError(f"{args.input}: no grid_dims in file, pass --size WxH")
        w, h = dims
    pio.write_heatmap_png(args.out, render_heatmap(vs, w, h, args.sigma))


def _polygonize_one(task) -> str:
    mask_path, heat_path, vert_path, out_path, cfg = task
    mask = pio.read_mask_png(mask_path)
    if vert_path is not None:
        polys = polygonize_with_vertices(mask, pio.read_vertices(vert_path), cfg)
    else:
        polys = polygonize(mask, pio.read_heatmap_png(heat_path), cfg)
    pio.write_polygons(out_path, polys)
    return str(out_path)


def cmd_polygonize(args) -> None:
    if (args.heatmap is None) == (args.vertices is None):
        raise InputError("pass exactly one of --heatmap or --vertices")
    cfg = polygonize_config(args)
    mask, out = Path(args.mask), Path(args.out)
    guide = Path(args.heatmap or args.vertices)
    if mask.is_dir():
        if not guide.is_dir():
            raise InputError("--mask is a directory, so --heatmap/--vertices must be one too")
        out.mkdir(parents=True, exist_ok=True)
        tasks = []
        for m in _pngs(mask):
            if args.heatmap:
                tasks.append((m, _sibling(guide, m.stem, ".png"), None, out / f"{m.stem}.geojson", cfg))
            else:
                tasks.append((m, None, _sibling(guide, m.stem, ".geojson"), out / f"{m.stem}.geojson", cfg))
        run_parallel(_polygonize_one, tasks, args.jobs)
        log.info("polygonized %d masks into %s", len(tasks), out)
        return
    if args.heatmap:
        _polygonize_one((mask, guide, None, out, cfg))
    else:
        _polygonize_one((mask, None, guide, out, cfg))


def _evaluate_one(task):
    pred_path, truth_path, size, cfg = task
    truth = pio.read_polygons(truth_path)
    dims = _grid_dims(size, truth, str(truth_path))
    pred = pio.read_polygons(pred_path, dims)
    return evaluate(pred, truth, dims, cfg, image=Path(pred_path).stem)


def cmd_evaluate(args) -> None:
    sf = pio.read_sf_params(args.sf_params) if args.sf_params else None
    cfg = EvalConfig(
        band_width=args.band_width,
        theta_turn=args.theta_turn,
        snap_radius=args.snap_radius,
        symmetric_apls=args.symmetric,
        sf_params=sf,
    )
    pred, truth = Path(args.pred), Path(args.truth)
    if pred.is_dir():
        if not truth.is_dir():
            raise InputError("--pred is a directory, so --truth must be one too")
        files = sorted(pred.glob("*.geojson"))
        if not files:
            raise InputError(f"{pred}: no .geojson files")
        tasks = [(p, _sibling(truth, p.stem, ".geojson"), args.size, cfg) for p in files]
    else:
        tasks = [(pred, truth, args.size, cfg)]
    report = EvalReport(run_parallel(_evaluate_one, tasks, args.jobs))
    pio.write_report(args.out, report)
    if args.out.suffix not in (".json", ".csv"):
        log.warning("unrecognised report extension %r, wrote JSON", args.out.suffix)


def _truth_files(paths) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(p.glob("*.geojson")))
        elif p.exists():
            out.append(p)
        else:
            raise InputError(f"{p}: no such file or directory")
    if not out:
        raise InputError("no ground-truth GeoJSON files found")
    return out


def cmd_fit_sf(args) -> None:
    counts = [poly.num_vertices for f in _truth_files(args.truth) for poly in pio.read_polygons(f)]
    fit = fit_lognormal(counts)
    params = SfParams.from_fit(fit, args.k)
    log.info("log-normal fit over %d polygons: mu=%.4f sigma=%.4f", len(counts), fit.mu, fit.sigma)
    pio.write_sf_params(args.out, params)


def _resize_mask(mask: np.ndarray, size) -> np.ndarray:
    # area averaging, then re-threshold at one half
    small = cv2.resize(mask.astype(np.float32), tuple(size), interpolation=cv2.INTER_AREA)
    return small >= 0.5


def _resize_heatmap(h: np.ndarray, size) -> np.ndarray:
    return np.clip(cv2.resize(h.astype(np.float32), tuple(size), interpolation=cv2.INTER_AREA), 0, 1).astype(np.float64)


def _scale_polygons(polys: PolygonSet, src, dst) -> PolygonSet:
    sx, sy = dst[0] / src[0], dst[1] / src[1]

    def ring(r: Ring) -> Ring:
        p = r.points
        # pixel centre c maps to (c + 0.5) * s - 0.5, kept inside the grid
        x = np.clip((p[:, 0] + 0.5) * sx - 0.5, 0, dst[0])
        y = np.clip((p[:, 1] + 0.5) * sy - 0.5, 0, dst[1])
        return Ring(np.column_stack([x, y]))

    out = []
    for poly in polys:
        try:
            out.append(PolygonWithHoles(ring(poly.exterior), tuple(ring(h) for h in poly.holes)))
        except ValueError:
            log.warning("dropped a polygon that collapsed while downsampling")
    return PolygonSet(tuple(out), tuple(dst))


def _write_patches(directory: Path, patches, layout, patch: int, writer) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for k, p in enumerate(patches):
        writer(directory / f"{k:03d}.png", p)
    with pio.atomic_write(directory / "layout.json") as fh:
        json.dump({"rows": layout[0], "cols": layout[1], "patch_size": patch}, fh, sort_keys=True)
        fh.write("\n")


def cmd_prep(args) -> None:
    if not (args.mask or args.heatmap or args.truth):
        raise InputError("pass at least one of --mask, --heatmap or --truth")
    out = Path(args.out_dir)
    size = args.size
    if args.mask:
        m = _resize_mask(pio.read_mask_png(args.mask), size)
        pio.write_mask_png(out / "mask.png", m)
        patches, layout = tile(m, args.patch)
        _write_patches(out / "mask_patches", patches, layout, args.patch, pio.write_mask_png)
    if args.heatmap:
        h = _resize_heatmap(pio.read_heatmap_png(args.heatmap), size)
        pio.write_heatmap_png(out / "heatmap.png", h)
        patches, layout = tile(h, args.patch)
        _write_patches(out / "heatmap_patches", patches, layout, args.patch, pio.write_heatmap_png)
    if args.truth:
        polys = pio.read_polygons(args.truth)
        src = _grid_dims(args.truth_size, polys, str(args.truth))
        pio.write_polygons(out / "truth.geojson", _scale_polygons(polys, src, size))


def _layout(arg, directory: Path) -> tuple[int, int]:
    if arg:
        return arg
    meta = directory / "layout.json"
    if not meta.exists():
        raise InputError(f"pass --layout RxC (no {meta})")
    with open(meta) as fh:
        d = json.load(fh)
    return int(d["rows"]), int(d["cols"])


def cmd_stitch(args) -> None:
    directory = Path(args.patches)
    files = _pngs(directory)
    layout = _layout(args.layout, directory)
    masks = [pio.read_mask_png(f) for f in files]
    if args.out_mask:
        pio.write_mask_png(args.out_mask, stitch_masks(masks, layout))
    if args.out_polygons:
        cfg = polygonize_config(args)
        if args.heatmaps:
            heat = _pngs(Path(args.heatmaps))
            if len(heat) != len(files):
                raise InputError(f"{len(files)} mask patches but {len(heat)} heatmap patches")
            verts = [nms_peaks(pio.read_heatmap_png(f), cfg.nms_threshold, cfg.nms_window) for f in heat]
        elif args.vertices:
            verts = [pio.read_vertices(f) for f in sorted(Path(args.vertices).glob("*.geojson"))]
        else:
            raise InputError("--out-polygons needs --heatmaps or --vertices")
        pio.write_polygons(args.out_polygons, polygonize_stitched(masks, verts, layout, cfg, args.seam_radius))
    if not (args.out_mask or args.out_polygons):
        raise InputError("pass --out-mask and/or --out-polygons")


def _synth_one(task) -> str:
    spec, out, name = task
    scene = synth_scene(spec)
    pio.write_polygons(out / "truth" / f"{name}.geojson", scene.truth)
    pio.write_mask_png(out / "mask" / f"{name}.png", scene.mask)
    pio.write_heatmap_png(out / "heatmap" / f"{name}.png", scene.heatmap)
    pio.write_mask_png(out / "degraded_mask" / f"{name}.png", scene.degraded_mask)
    pio.write_heatmap_png(out / "degraded_heatmap" / f"{name}.png", scene.degraded_heatmap)
    return name


def cmd_synth(args) -> None:
    if args.count < 1:
        raise InputError("--count must be >= 1")
    deg = Degradation(
        boundary_noise_px=args.boundary_noise,
        vertex_dropout_prob=args.dropout,
        vertex_jitter_px=args.jitter,
        blur_sigma=args.blur,
        peak_scale=args.peak_scale,
    )
    specs = [
        SceneSpec(
            seed=args.seed + i,
            grid=tuple(args.size),
            road_width=tuple(args.road_width),
            branches=args.branches,
            curvature=args.curvature,
            holes=args.holes,
            degradation=deg,
            min_vertex_spacing=args.min_spacing,
        )
        for i in range(args.count)
    ]
    out = Path(args.out_dir)
    run_parallel(_synth_one, [(s, out, f"scene_{s.seed:04d}") for s in specs], args.jobs)


# -- parser ------------------------------------------------------------------------


def _add_polygonize_flags(p) -> None:
    g = p.add_argument_group("polygonization")
    g.add_argument("--dth", type=float, default=5.0, help="keypoint distance threshold in px (default 5)")
    g.add_argument("--eps", type=float, default=1.0, help="Douglas-Peucker tolerance for inflection recovery")
    g.add_argument("--tau", type=float, default=30.0, help="half-width of the 90 degree inflection band")
    g.add_argument("--nms-threshold", type=float, default=0.3)
    g.add_argument("--nms-window", type=int, default=5)


def _add_jobs(p) -> None:
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default $POLYFORGE_JOBS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="polyforge", description="Road mask polygonization and polygon evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", type=Path, help="YAML or JSON file of option defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prep", help="downsample rasters/polygons and tile them into patches")
    p.add_argument("--mask", type=Path)
    p.add_argument("--heatmap", type=Path)
    p.add_argument("--truth", type=Path, help="polygon GeoJSON to rescale")
    p.add_argument("--truth-size", type=parse_size, help="source grid of --truth if not in the file")
    p.add_argument("--size", type=parse_size, default=(1024, 1024), help="target size WxH (default 1024x1024)")
    p.add_argument("--patch", type=int, default=256, help="patch edge in px (default 256)")
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("rasterize", help="polygon GeoJSON to 8-bit mask PNG")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--size", type=parse_size)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("heatmap", help="vertices (or polygon vertices) to 16-bit heatmap PNG")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--size", type=parse_size)
    p.add_argument("--sigma", type=float, default=5.0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("polygonize", help="mask plus heatmap or vertices to polygon GeoJSON")
    p.add_argument("--mask", type=Path, required=True, help="mask PNG, or a directory of them")
    p.add_argument("--heatmap", type=Path)
    p.add_argument("--vertices", type=Path)
    p.add_argument("--out", type=Path, required=True)
    _add_polygonize_flags(p)
    _add_jobs(p)
    p.set_defaults(func=cmd_polygonize)

    p = sub.add_parser("evaluate", help="score predicted polygons against ground truth")
    p.add_argument("--pred", type=Path, required=True, help="GeoJSON file or directory")
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--sf-params", type=Path)
    p.add_argument("--size", type=parse_size)
    p.add_argument("--band-width", type=float, help="B-IoU band in px (default 2%% of the diagonal)")
    p.add_argument("--theta-turn", type=float, default=30.0)
    p.add_argument("--snap-radius", type=float, default=25.0)
    p.add_argument("--symmetric", action="store_true", help="average APLS over both directions")
    p.add_argument("--out", type=Path, required=True, help=".json or .csv report")
    _add_jobs(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("fit-sf", help="fit simplicity-factor thresholds to ground-truth vertex counts")
    p.add_argument("--truth", nargs="+", required=True, help="GeoJSON files or directories")
    p.add_argument("--k", type=float, default=0.1)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_fit_sf)

    p = sub.add_parser("stitch", help="reassemble patch masks, optionally polygonizing the result")
    p.add_argument("--patches", type=Path, required=True, help="directory of row-major mask patches")
    p.add_argument("--layout", type=lambda s: tuple(parse_size(s)[::-1]), help="ROWSxCOLS")
    p.add_argument("--heatmaps", type=Path)
    p.add_argument("--vertices", type=Path)
    p.add_argument("--seam-radius", type=float)
    p.add_argument("--out-mask", type=Path)
    p.add_argument("--out-polygons", type=Path)
    _add_polygonize_flags(p)
    p.set_defaults(func=cmd_stitch)

    p = sub.add_parser("synth", help="write synthetic road scenes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--size", type=parse_size, default=(256, 256))
    p.add_argument("--road-width", type=parse_range, default=(10.0, 18.0))
    p.add_argument("--branches", type=int, default=2)
    p.add_argument("--curvature", type=float, default=0.3)
    p.add_argument("--holes", type=int, default=0)
    p.add_argument("--min-spacing", type=float, default=10.0)
    p.add_argument("--boundary-noise", type=float, default=0.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--blur", type=float, default=0.0)
    p.add_argument("--peak-scale", type=float, default=1.0)
    p.add_argument("--out-dir", type=Path, required=True)
    _add_jobs(p)
    p.set_defaults(func=cmd_synth)
    return parser


def load_config(path: Path) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh) if path.suffix in (".yaml", ".yml") else json.load(fh)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise InputError(f"{path}: config must be a mapping")
    return data


def _apply_config(parser: argparse.ArgumentParser, argv, config: dict) -> None:
    """Install config values as subcommand defaults so explicit flags still win.

    Keys may sit at the top level (shared) or under a section named after
    the subcommand; dashes and underscores are interchangeable.
    """
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    command = next((tok for tok in argv if tok in sub_action.choices), None)
    if command is None:
        return
    sub = sub_action.choices[command]
    dests = {a.dest: a for a in sub._actions}
    section = dict(config.get(command) or {})
    shared = {k: v for k, v in config.items() if not isinstance(v, dict)}
    values = {}
    for key, val in {**shared, **section}.items():
        dest = key.replace("-", "_")
        if dest == "in":
            dest = "input"
        if dest not in dests:
            if key in section:
                raise InputError(f"unknown option {key!r} in config section {command!r}")
            continue
        action = dests[dest]
        if action.type is not None and val is not None:
            val = action.type(",".join(map(str, val)) if isinstance(val, list) and action.type is parse_range else val)
        if isinstance(val, list) and action.nargs is None:
            val = tuple(val)
        values[dest] = val
    if values:
        # required-ness is satisfied by the config file
        for dest in values:
            dests[dest].required = False
        sub.set_defaults(**values)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        cfg_ns, _ = _config_probe().parse_known_args(argv)
        if cfg_ns.config is not None:
            _apply_config(parser, argv, load_config(cfg_ns.config))
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="polyforge: %(message)s")
        if hasattr(args, "jobs"):
            args.jobs = default_jobs() if args.jobs is None else args.jobs
            if args.jobs < 1:
                raise InputError("--jobs must be >= 1")
        args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except INPUT_ERRORS as exc:
        print(f"polyforge: error: {_one_line(exc)}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - any processing failure maps to one exit code
        print(f"polyforge: failed: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def _config_probe() -> argparse.ArgumentParser:
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config", type=Path)
    return probe


def _one_line(exc: BaseException) -> str:
    text = str(exc) or type(exc).__name__
    return " ".join(text.split())


if __name__ == "__main__":
    sys.exit(main())
