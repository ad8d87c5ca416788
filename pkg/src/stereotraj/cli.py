"""``stereo-traj`` command line interface.

Subcommands mirror the pipeline stages (``track``, ``refine``,
``trajectory``), chain them (``run``), and drive synthetic experiments
(``synth``, ``eval``). Settings come from an optional INI config file whose
``[pipeline]`` section may hold any long flag name (dashes or underscores);
flags given on the command line win. Relative paths in a config file are
resolved against the file's directory.

Exit codes: 0 success, 2 parse/usage, 3 numerical, 4 infeasible, 5 I/O.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import re
import sys
import time
from contextlib import contextmanager, nullcontext
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import recon as recon_io
from .exceptions import IoError, ParseError, StereoTrajError
from .refine import HUBER_WIDTH, Y_TOLERANCE, SolverConfig, refine_reconstruction
from .synth import (
    NoiseConfig,
    SceneConfig,
    generate_scene,
    load_config_file,
    load_scene,
    render_observations,
    save_scene,
    score_trajectory,
)
from .tracking import load_flow, masks_from_label_image, read_pgm, track_sequence, write_flo, write_pgm
from .trajectory import Trajectory, compose_trajectory, export_trajectory

logger = logging.getLogger("stereotraj")

USAGE_EXIT = 2

_MASK_RE = re.compile(r"^(left|right)_(\d+)\.pgm$")


@dataclass
class PipelineConfig:
    masks: str | None = None
    flow: str | None = None
    object: str | None = None
    background: str | None = None
    output: str = "results"
    scene: str | None = None
    min_overlap: float = 0.3
    max_lost: int = 2
    overlap_mode: str = "iou"
    nominal_baseline: float = 1.0
    y_tolerance: float = Y_TOLERANCE
    huber_width: float = HUBER_WIDTH
    max_iterations: int = 100
    format: str = "both"
    target: int = 0


_PATH_KEYS = ("masks", "flow", "object", "background", "output", "scene")


# logging


class JsonFormatter(logging.Formatter):
    """One JSON object per record; ``extra=`` fields are merged in."""

    _skip = set(vars(logging.makeLogRecord({}))) | {"message", "asctime"}

    def format(self, record: logging.LogRecord) -> str:
        doc = {"level": record.levelname.lower(), "logger": record.name, "message": record.getMessage()}
        for k, v in vars(record).items():
            if k not in self._skip:
                doc[k] = v
        return json.dumps(doc, default=_json_default)


def _setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter())
    root = logging.getLogger("stereotraj")
    root.handlers[:] = [handler]
    root.setLevel(level.upper())
    root.propagate = False


@contextmanager
def _stage(name: str):
    t0 = time.perf_counter()
    yield
    logger.info("stage finished", extra={"stage": name, "seconds": round(time.perf_counter() - t0, 6)})


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _write_json(path: Path, doc) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=_json_default) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _mkdir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create directory {path}: {exc}") from exc
    return path


# configuration


def _read_pipeline_section(path) -> dict:
    parser = configparser.ConfigParser()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    if not text.lstrip().startswith("["):
        text = "[pipeline]\n" + text
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not parser.has_section("pipeline"):
        return {}
    return {k.replace("-", "_"): v for k, v in parser["pipeline"].items()}


def resolve_config(args) -> PipelineConfig:
    """Merge defaults, the config file and explicit flags (in increasing priority)."""
    values = {}
    known = {f.name: f for f in fields(PipelineConfig)}
    defaults = PipelineConfig()
    if getattr(args, "config", None):
        base = Path(args.config).parent
        for key, raw in _read_pipeline_section(args.config).items():
            if key not in known:
                continue
            if key in _PATH_KEYS:
                values[key] = str(base / raw)
                continue
            default = getattr(defaults, key)
            try:
                values[key] = type(default)(raw) if not isinstance(default, str) else raw
            except ValueError:
                raise ParseError(f"{args.config}: bad value for {key}: {raw!r}") from None
    for key in known:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    cfg = PipelineConfig(**values)
    _check_ranges(cfg)
    return cfg


def _check_ranges(cfg: PipelineConfig) -> None:
    problems = []
    if not 0.0 <= cfg.min_overlap <= 1.0:
        problems.append(f"min_overlap must lie in [0, 1], got {cfg.min_overlap}")
    if cfg.max_lost < 0:
        problems.append(f"max_lost must be >= 0, got {cfg.max_lost}")
    if cfg.overlap_mode not in ("iou", "iop"):
        problems.append(f"overlap_mode must be iou or iop, got {cfg.overlap_mode}")
    for name in ("nominal_baseline", "y_tolerance", "huber_width"):
        if not getattr(cfg, name) > 0:
            problems.append(f"{name} must be positive, got {getattr(cfg, name)}")
    if cfg.max_iterations < 0:
        problems.append(f"max_iterations must be >= 0, got {cfg.max_iterations}")
    if cfg.format not in ("csv", "ply", "both"):
        problems.append(f"format must be csv, ply or both, got {cfg.format}")
    if problems:
        raise ParseError("; ".join(problems))


def _require(cfg: PipelineConfig, *names) -> None:
    missing = [n for n in names if getattr(cfg, n) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise ParseError(f"missing required setting(s): {flags} (flag or [pipeline] config key)")


# stages


def mask_path(masks_dir, side: str, frame: int) -> Path:
    return Path(masks_dir) / f"{side}_{frame:04d}.pgm"


def flow_path(flow_dir, kind: str, frame: int) -> Path:
    return Path(flow_dir) / f"{kind}_{frame:04d}.flo"


def _discover_frames(masks_dir: Path) -> list:
    if not masks_dir.is_dir():
        raise IoError(f"mask directory not found: {masks_dir}")
    frames = sorted(int(m.group(2)) for m in map(_MASK_RE.match, os.listdir(masks_dir)) if m and m.group(1) == "left")
    if not frames:
        raise IoError(f"no left_NNNN.pgm masks in {masks_dir}")
    if frames != list(range(frames[0], frames[0] + len(frames))):
        raise ParseError(f"left mask frames in {masks_dir} are not consecutive: {frames}")
    return frames


def stage_track(cfg: PipelineConfig, out_dir: Path) -> list:
    """Track masks over the sequence; writes ``tracks/tracks_NNNN.json`` and returns the paths."""
    _require(cfg, "masks", "flow")
    masks_dir, flow_dir = Path(cfg.masks), Path(cfg.flow)
    frames = _discover_frames(masks_dir)
    dets_left, dets_right, flows_ln, flows_lr = [], [], [], []
    for k, f in enumerate(frames):
        dets_left.append(masks_from_label_image(read_pgm(mask_path(masks_dir, "left", f)), f, "left"))
        dets_right.append(masks_from_label_image(read_pgm(mask_path(masks_dir, "right", f)), f, "right"))
        flows_lr.append(load_flow(flow_path(flow_dir, "lr", f), f, "left", f, "right"))
        if k + 1 < len(frames):
            flows_ln.append(load_flow(flow_path(flow_dir, "ln", f), f, "left", f + 1, "left"))
    state = track_sequence(
        dets_left,
        dets_right,
        flows_ln,
        flows_lr,
        min_overlap=cfg.min_overlap,
        max_lost=cfg.max_lost,
        mode=cfg.overlap_mode,
        first_frame=frames[0],
    )
    tracks = state.all_tracks()
    tracks_dir = _mkdir(out_dir / "tracks")
    written = []
    for f in frames:
        doc = {"frame": f, "tracks": {}}
        for tid in sorted(tracks):
            t = tracks[tid]
            if f not in t.left_masks:
                continue
            entry = {"left": _mask_ref(masks_dir, tracks_dir, t.left_masks[f])}
            if f in t.right_masks:
                entry["right"] = _mask_ref(masks_dir, tracks_dir, t.right_masks[f])
            doc["tracks"][str(tid)] = entry
        path = tracks_dir / f"tracks_{f:04d}.json"
        _write_json(path, doc)
        written.append(path)
    logger.info("tracking done", extra={"frames": len(frames), "tracks": len(tracks)})
    return written


def _mask_ref(masks_dir: Path, tracks_dir: Path, mask) -> str:
    rel = os.path.relpath(mask_path(masks_dir, mask.side, mask.frame_index), tracks_dir)
    return f"{Path(rel).as_posix()}#{mask.instance_label}"


def stage_refine(cfg: PipelineConfig, source, out_path: Path, report_path: Path):
    recon = recon_io.load_reconstruction(source)
    refined, report = refine_reconstruction(
        recon,
        cfg.nominal_baseline,
        y_tolerance=cfg.y_tolerance,
        huber_width=cfg.huber_width,
        solver=SolverConfig(max_iterations=cfg.max_iterations),
    )
    _mkdir(out_path.parent)
    recon_io.save_reconstruction(refined, out_path)
    _write_json(report_path, report.to_dict())
    logger.info(
        "refinement done",
        extra={
            "kind": recon.kind,
            "scale_factor": report.scale_factor,
            "initial_cost": report.initial_cost,
            "final_cost": report.final_cost,
            "iterations": report.iterations,
            "termination": report.termination,
            "stereo_rms": report.stereo_rms,
            "mono_rms": report.mono_rms,
            "excluded_blocks": len(report.excluded_blocks),
        },
    )
    return refined, report


def stage_trajectory(cfg: PipelineConfig, obj_path, bg_path, out_dir: Path) -> list:
    obj = recon_io.load_reconstruction(obj_path)
    bg = recon_io.load_reconstruction(bg_path)
    traj = compose_trajectory(obj, bg, recon_io.pair_frames(obj, bg))
    _mkdir(out_dir)
    written = export_trajectory(traj, out_dir / "trajectory.csv", cfg.format)
    _write_json(out_dir / "trajectory.json", traj.to_dict())
    logger.info("trajectory done", extra={"frames": len(traj), "points": len(traj.point_ids)})
    return written + [out_dir / "trajectory.json"]


# commands


def cmd_synth(args) -> int:
    scene_cfg = load_config_file(args.config, SceneConfig, "scene") if args.config else SceneConfig()
    noise_cfg = load_config_file(args.config, NoiseConfig, "noise") if args.config else NoiseConfig()
    overrides = {
        "n_frames": args.frames,
        "n_objects": args.objects,
        "motion": args.motion,
        "crossing": args.crossing or None,
    }
    try:
        for k, v in overrides.items():
            if v is not None:
                setattr(scene_cfg, k, v)
        scene_cfg.__post_init__()
        for k in ("pixel_sigma", "pose_rot_sigma", "pose_trans_sigma", "scale_perturbation", "outlier_camera_count", "flow_sigma"):
            v = getattr(args, k)
            if v is not None:
                setattr(noise_cfg, k, v)
        noise_cfg.__post_init__()
    except ValueError as exc:
        raise ParseError(str(exc)) from exc

    out = _mkdir(Path(args.output))
    with _stage("synth.generate"):
        scene = generate_scene(scene_cfg, args.seed)
    with _stage("synth.render"):
        obs = render_observations(scene, noise_cfg, args.seed)
    save_scene(scene, out / "scene.json")
    recon_io.save_reconstruction(obs.object_recon, out / "object.json")
    recon_io.save_reconstruction(obs.background_recon, out / "background.json")
    masks_dir, flow_dir = _mkdir(out / "masks"), _mkdir(out / "flow")
    for i in range(scene.n_frames):
        write_pgm(mask_path(masks_dir, "left", i), obs.labels_left[i])
        write_pgm(mask_path(masks_dir, "right", i), obs.labels_right[i])
        write_flo(flow_path(flow_dir, "lr", i), obs.flows_lr[i].data)
        if i + 1 < scene.n_frames:
            write_flo(flow_path(flow_dir, "ln", i), obs.flows_ln[i].data)
    cfg_text = (
        "[pipeline]\n"
        "masks = masks\n"
        "flow = flow\n"
        "object = object.json\n"
        "background = background.json\n"
        "scene = scene.json\n"
        "output = results\n"
        f"nominal_baseline = {scene.baseline!r}\n"
    )
    try:
        (out / "pipeline.cfg").write_text(cfg_text)
    except OSError as exc:
        raise IoError(f"cannot write {out / 'pipeline.cfg'}: {exc}") from exc
    return 0


def cmd_track(args) -> int:
    cfg = resolve_config(args)
    with _stage("track"):
        stage_track(cfg, Path(cfg.output))
    return 0


def cmd_refine(args) -> int:
    cfg = resolve_config(args)
    source = args.input
    if source is None:
        if args.kind is None:
            raise ParseError("give --input, or --kind object|background to refine the configured reconstruction")
        source = getattr(cfg, args.kind)
        _require(cfg, args.kind)
    out = Path(args.out) if args.out else Path(cfg.output) / f"{recon_io.load_reconstruction(source).kind}_refined.json"
    report = Path(args.report) if args.report else out.with_name(out.stem.replace("_refined", "") + "_report.json")
    with _stage("refine"):
        stage_refine(cfg, source, out, report)
    return 0


def cmd_trajectory(args) -> int:
    cfg = resolve_config(args)
    _require(cfg, "object", "background")
    with _stage("trajectory"):
        stage_trajectory(cfg, cfg.object, cfg.background, Path(cfg.output))
    return 0


def cmd_run(args) -> int:
    """Tracking, both refinements and trajectory composition into one output directory."""
    cfg = resolve_config(args)
    _require(cfg, "masks", "flow", "object", "background")
    out = Path(cfg.output)
    with _stage("track"):
        stage_track(cfg, out)
    refined = {}
    for kind in ("object", "background"):
        with _stage(f"refine.{kind}"):
            path = out / f"{kind}_refined.json"
            stage_refine(cfg, getattr(cfg, kind), path, out / f"{kind}_report.json")
            refined[kind] = path
    with _stage("trajectory"):
        stage_trajectory(cfg, refined["object"], refined["background"], out)
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    _require(cfg, "scene")
    traj_path = Path(args.trajectory) if args.trajectory else Path(cfg.output) / "trajectory.json"
    try:
        text = traj_path.read_text()
    except OSError as exc:
        raise IoError(f"cannot read {traj_path}: {exc}") from exc
    try:
        traj = Trajectory.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{traj_path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    scene = load_scene(cfg.scene)
    score = score_trajectory(traj, scene, cfg.target)
    out = Path(args.out) if args.out else traj_path.with_name("score.json")
    _write_json(out, score.to_dict())
    if not args.quiet:
        print(f"rmse {score.rmse:.6g}  relative {score.relative_rmse:.6g}  path length {score.path_length:.6g}")
    return 0


# argument parsing


def _pipeline_flags(p: argparse.ArgumentParser, *groups) -> None:
    d = PipelineConfig()
    p.add_argument("--config", help="INI file with a [pipeline] section; flags override its keys")
    p.add_argument("--output", "-o", help=f"output directory (default: {d.output})")
    if "inputs" in groups:
        p.add_argument("--masks", help="directory of left_NNNN.pgm / right_NNNN.pgm label rasters")
        p.add_argument("--flow", help="directory of ln_NNNN.flo (left N -> left N+1) and lr_NNNN.flo (left N -> right N)")
    if "recons" in groups:
        p.add_argument("--object", help="object reconstruction JSON")
        p.add_argument("--background", help="background reconstruction JSON")
    if "track" in groups:
        p.add_argument("--min-overlap", type=float, help=f"minimum overlap to accept a match (default: {d.min_overlap})")
        p.add_argument("--max-lost", type=int, help=f"frames a track may stay unmatched (default: {d.max_lost})")
        p.add_argument("--overlap-mode", choices=("iou", "iop"), help=f"overlap measure (default: {d.overlap_mode})")
    if "refine" in groups:
        p.add_argument(
            "--nominal-baseline", type=float, help=f"stereo baseline in output units (default: {d.nominal_baseline})"
        )
        p.add_argument(
            "--y-tolerance", type=float, help=f"max row difference of a stereo pair, px (default: {d.y_tolerance})"
        )
        p.add_argument("--huber-width", type=float, help=f"robust loss width, px (default: {d.huber_width})")
        p.add_argument("--max-iterations", type=int, help=f"solver iteration cap (default: {d.max_iterations})")
    if "export" in groups:
        p.add_argument("--format", choices=("csv", "ply", "both"), help=f"trajectory export (default: {d.format})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stereo-traj",
        description="Reconstruct rigid object trajectories from stereo video inputs.",
    )
    parser.add_argument(
        "--log-level",
        default="warning",
        choices=("debug", "info", "warning", "error"),
        help="JSON log verbosity on stderr (default: warning)",
    )
    parser.add_argument("--threads", type=int, help="cap on BLAS/OpenMP threads (default: library default)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene and its rendered inputs")
    p.add_argument("--config", help="INI file with [scene] and [noise] sections")
    p.add_argument("--output", "-o", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("--frames", type=int, help=f"number of frames (default: {SceneConfig.n_frames})")
    p.add_argument("--objects", type=int, help=f"number of objects (default: {SceneConfig.n_objects})")
    p.add_argument("--motion", choices=("linear", "arc", "piecewise", "static"), help="object motion family")
    p.add_argument("--crossing", action="store_true", help="two objects crossing at different depths")
    p.add_argument("--pixel-sigma", dest="pixel_sigma", type=float, help="observation noise, px (default: 0)")
    p.add_argument("--pose-rot-sigma", dest="pose_rot_sigma", type=float, help="camera rotation noise, degrees")
    p.add_argument("--pose-trans-sigma", dest="pose_trans_sigma", type=float, help="camera center noise, fraction of extent")
    p.add_argument("--scale-perturbation", dest="scale_perturbation", type=float, help="object reconstruction scale")
    p.add_argument("--outliers", dest="outlier_camera_count", type=int, help="grossly misregistered object cameras")
    p.add_argument("--flow-sigma", dest="flow_sigma", type=float, help="flow noise, px (default: 0)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("track", help="associate masks over time and across the stereo pair")
    _pipeline_flags(p, "inputs", "track")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("refine", help="rescale and refine one reconstruction under the rig constraint")
    _pipeline_flags(p, "recons", "refine")
    p.add_argument("--input", "-i", help="reconstruction JSON to refine")
    p.add_argument("--kind", choices=("object", "background"), help="refine the configured object/background input")
    p.add_argument("--out", help="refined reconstruction path (default: OUTPUT/<kind>_refined.json)")
    p.add_argument("--report", help="report path (default: next to --out, <kind>_report.json)")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("trajectory", help="compose the object trajectory from two refined reconstructions")
    _pipeline_flags(p, "recons", "export")
    p.set_defaults(func=cmd_trajectory)

    p = sub.add_parser("run", help="track, refine both reconstructions and compose the trajectory")
    _pipeline_flags(p, "inputs", "recons", "track", "refine", "export")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score a trajectory against a synthetic ground-truth scene")
    _pipeline_flags(p)
    p.add_argument("--scene", help="ground-truth scene JSON")
    p.add_argument("--target", type=int, help="index of the scored object (default: 0)")
    p.add_argument("--trajectory", help="trajectory JSON (default: OUTPUT/trajectory.json)")
    p.add_argument("--out", help="score JSON path (default: next to the trajectory, score.json)")
    p.add_argument("--quiet", "-q", action="store_true", help="do not print the summary line")
    p.set_defaults(func=cmd_eval)
    return parser


def _thread_limit(n):
    if n is None:
        return nullcontext()
    if n < 1:
        raise ParseError(f"--threads must be >= 1, got {n}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.log_level)
    try:
        with _thread_limit(args.threads):
            return args.func(args)
    except StereoTrajError as exc:
        print(f"stereo-traj {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"stereo-traj {args.command}: error: {exc}", file=sys.stderr)
        return IoError.exit_code
    except ValueError as exc:
        print(f"stereo-traj {args.command}: error: {exc}", file=sys.stderr)
        return USAGE_EXIT


if __name__ == "__main__":
    sys.exit(main())
