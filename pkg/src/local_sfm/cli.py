"""Command line entry point: ``local-sfm {synth,pose,triangulate,verify,run-all}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numba
import numpy as np
import torch

from . import fileio
from .config import PipelineConfig
from .errors import LocalSfMError
from .pipeline import estimate_poses, evaluate, triangulate, verify
from .synthetic import GEOMETRIES, SceneSpec, generate_scene

logger = logging.getLogger("local_sfm")

POSES_JSON = "poses.json"
SCORE_TRACE = "score_trace.csv"
FIELD_BIN = "field.bin"
LOSS_TRACE = "loss_trace.csv"
CLOUD_PLY = "cloud.ply"
SPARSE_DEPTH = "sparse_depth.bin"
METRICS_JSON = "metrics.json"


def _config(args) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "mode", None):
        overrides["mode"] = args.mode
    if overrides:
        config = PipelineConfig.from_dict({**config.to_dict(), **overrides})
    if getattr(args, "desk_scale", False):
        config = config.desk_scale()
    return config


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args, config):
    frames = fileio.load_window(args.manifest)
    frames.mode = config.mode
    return frames


def _poses_path(args, out: Path) -> Path:
    return Path(args.poses) if getattr(args, "poses", None) else out / POSES_JSON


def cmd_pose(args) -> int:
    config = _config(args)
    out = _out_dir(args)
    frames = _load(args, config)
    est = estimate_poses(frames, config)
    res = est.result
    fileio.save_poses(out / POSES_JSON, frames, res.poses, est.adjustments, res.state.score, config.mode)
    fileio.save_trace(out / SCORE_TRACE, ["epoch", "score"], enumerate(res.score_trace))
    logger.info("pose search finished with certified score %d", res.state.score)
    return 0


def cmd_triangulate(args) -> int:
    config = _config(args)
    out = _out_dir(args)
    frames = _load(args, config)
    poses, adjustments, _ = fileio.load_poses(_poses_path(args, out), frames.n_frames)
    field, trace = triangulate(frames, poses, adjustments, config)
    fileio.save_field(out / FIELD_BIN, field)
    rows = zip(range(len(trace.loss)), trace.loss, trace.depth, trace.correspondence)
    fileio.save_trace(out / LOSS_TRACE, ["iter", "loss", "depth_loss", "correspondence_loss"], rows)
    return 0


def cmd_verify(args) -> int:
    config = _config(args)
    out = _out_dir(args)
    frames = _load(args, config)
    poses, _, _ = fileio.load_poses(_poses_path(args, out), frames.n_frames)
    field_path = Path(args.field) if args.field else out / FIELD_BIN
    field = fileio.load_field(field_path, frames.intrinsics[frames.root])
    cloud = verify(field, frames, poses, config)
    fileio.save_ply(out / CLOUD_PLY, cloud)
    fileio.save_depth(out / SPARSE_DEPTH, cloud.sparse_depth())
    gt = fileio.load_gt_depths(args.manifest)
    metrics = {"density": cloud.density, "points": len(cloud.depths)}
    if gt is not None:
        metrics = evaluate(cloud, frames, gt)
        metrics["points"] = len(cloud.depths)
    (out / METRICS_JSON).write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_run_all(args) -> int:
    for stage in (cmd_pose, cmd_triangulate, cmd_verify):
        stage(args)
    return 0


def cmd_synth(args) -> int:
    spec = SceneSpec(
        n_frames=args.n_frames,
        geometry=args.geometry,
        noise_px=args.noise_px,
        outlier_frac=args.outlier_frac,
        depth_scale_corruption=tuple(args.corruption) if args.corruption else None,
        depth_noise=args.depth_noise,
        seed=0 if args.seed is None else args.seed,
    )
    scene = generate_scene(spec)
    frames = scene.to_frameset()
    out = _out_dir(args)
    fileio.save_window(frames, out, gt_depths=scene.gt_depths)
    adjustments = np.array([scene.gt_adjustment(f) for f in range(scene.n_frames)])
    fileio.save_poses(out / "gt_poses.json", frames, dict(enumerate(scene.gt_poses)), adjustments)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="local-sfm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=True):
        if manifest:
            p.add_argument("--manifest", required=True, help="window manifest JSON")
        p.add_argument("--config", help="pipeline configuration JSON")
        p.add_argument("--out-dir", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help="cap on worker threads")
        p.add_argument("--mode", choices=("rgb", "rgbd"))
        p.add_argument("--desk-scale", action="store_true", help="small radiance-field preset")

    p = sub.add_parser("pose", help="candidate pool and consensus pose search")
    common(p)
    p.set_defaults(func=cmd_pose)

    p = sub.add_parser("triangulate", help="optimize the frustum radiance field")
    common(p)
    p.add_argument("--poses", help="pose JSON (default: OUT_DIR/poses.json)")
    p.set_defaults(func=cmd_triangulate)

    p = sub.add_parser("verify", help="multi-view verification and metrics")
    common(p)
    p.add_argument("--poses", help="pose JSON (default: OUT_DIR/poses.json)")
    p.add_argument("--field", help="field checkpoint (default: OUT_DIR/field.bin)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("run-all", help="pose, triangulate and verify in sequence")
    common(p)
    p.set_defaults(func=cmd_run_all, poses=None, field=None)

    p = sub.add_parser("synth", help="write a synthetic window in ingest format")
    common(p, manifest=False)
    p.add_argument("--n-frames", type=int, default=5)
    p.add_argument("--geometry", choices=GEOMETRIES, default=GEOMETRIES[0])
    p.add_argument("--noise-px", type=float, default=0.0)
    p.add_argument("--outlier-frac", type=float, default=0.0)
    p.add_argument("--corruption", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--depth-noise", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)
    return parser


def _error_exit(exc: Exception, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("LOCAL_SFM_LOG", "WARNING").upper(),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    args = build_parser().parse_args(argv)
    if args.threads:
        torch.set_num_threads(args.threads)
        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    try:
        return args.func(args)
    except LocalSfMError as exc:
        return _error_exit(exc, exc.exit_code)


if __name__ == "__main__":
    sys.exit(main())
