"""Command-line entry points: the pipeline runner and the scene generator."""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .errors import EngineError, FormatError
from .geometry import Intrinsics
from .pipeline import run
from .session import PipelineConfig
from .synth import (
    NoiseSpec,
    SceneObject,
    SceneSpec,
    SessionGenerator,
    arc_trajectory,
    line_trajectory,
)


def load_config_file(path) -> dict[str, str]:
    overrides = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"bad config line: {line!r}")
        key, value = line.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="semnav", description="Run a recorded session through the mapping engine."
    )
    parser.add_argument("--session", required=True, help="session directory")
    parser.add_argument("--out", help="output directory for exports")
    parser.add_argument("--config", help="key=value config override file")
    parser.add_argument("--max-frames", type=int, default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--goal-class", type=int, default=None,
                        help="semantic class id to navigate toward")
    parser.add_argument("--serve", type=int, default=None, metavar="PORT",
                        help="serve the session interactively instead of batch-running")
    parser.add_argument("--eval", dest="eval_gt", default=None, metavar="GT_SESSION",
                        help="session or ground-truth directory to evaluate against")
    args = parser.parse_args(argv)

    eval_dir = None
    if args.eval_gt:
        candidate = Path(args.eval_gt)
        eval_dir = candidate if (candidate / "trajectory.txt").is_file() else candidate / "gt"

    config = PipelineConfig()
    if args.config:
        config = config.with_overrides(load_config_file(args.config))

    try:
        if args.serve is not None:
            from .service import SessionService

            service = SessionService(
                args.session, config=config, seed=args.seed,
                max_frames=args.max_frames, port=args.serve,
            )
            service.serve_forever()
            return 0
        report = run(
            args.session,
            out_dir=args.out,
            config=config,
            max_frames=args.max_frames,
            seed=args.seed,
            target_class=args.goal_class,
            gt_dir=eval_dir,
        )
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for line in report.lines():
        print(line)
    return 0


def parse_scene_spec(path) -> tuple[SceneSpec, PipelineConfig]:
    """Scene description in the manifest's key=value convention.

    Repeated ``object=`` lines add boxes; ``traj=line ...`` or ``traj=arc ...``
    defines the camera path. Engine config keys may be mixed in.
    """
    entries: list[tuple[str, str]] = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"bad scene line: {line!r}")
        key, value = line.split("=", 1)
        entries.append((key.strip(), value.strip()))
    kv = dict(entries)

    width = int(kv.get("width", 64))
    height = int(kv.get("height", 48))
    if "fx" in kv:
        fx = float(kv["fx"])
        fy = float(kv.get("fy", fx))
    else:
        fov = math.radians(float(kv.get("fov", 60.0)))
        fx = fy = width / (2.0 * math.tan(fov / 2.0))
    intr = Intrinsics(fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0,
                      width=width, height=height)

    frames = int(kv.get("frames", 30))
    traj_spec = kv.get("traj", "line 1 1 1.5 4 1 1.5 3 3 1.0").split()
    kind, params = traj_spec[0], [float(x) for x in traj_spec[1:]]
    if kind == "line":
        trajectory = line_trajectory(params[0:3], params[3:6], params[6:9], frames)
    elif kind == "arc":
        trajectory = arc_trajectory(params[0:2], params[2], params[3], params[4],
                                    params[5], params[6:9], frames)
    else:
        raise FormatError(f"unknown trajectory kind {kind!r}")

    objects = []
    for key, value in entries:
        if key != "object":
            continue
        parts = value.split()
        cls = int(parts[0])
        nums = [float(x) for x in parts[1:7]]
        insert = remove = None
        for extra in parts[7:]:
            name, _, val = extra.partition("=")
            if name == "insert":
                insert = int(val)
            elif name == "remove":
                remove = int(val)
            else:
                raise FormatError(f"unknown object option {extra!r}")
        objects.append(SceneObject(
            class_id=cls, box_min=np.array(nums[0:3]), box_max=np.array(nums[3:6]),
            insertion_frame=insert, removal_frame=remove,
        ))

    noise = NoiseSpec(
        scale_factor=float(kv.get("scale", 1.0)),
        depth_sigma=float(kv.get("depth_sigma", 0.0)),
        pose_rot_deg=float(kv.get("pose_rot_deg", 0.0)),
        pose_trans=float(kv.get("pose_trans", 0.0)),
    )
    spec = SceneSpec(
        room=np.array([float(x) for x in kv.get("room", "6 5 3").split()]),
        trajectory=trajectory,
        intrinsics=intr,
        objects=objects,
        noise=noise,
        seed=int(kv.get("seed", 0)),
    )

    scene_keys = {"width", "height", "fx", "fy", "fov", "frames", "traj", "object",
                  "scale", "depth_sigma", "pose_rot_deg", "pose_trans", "room", "seed"}
    config_overrides = {k: v for k, v in kv.items() if k not in scene_keys}
    config = PipelineConfig().with_overrides(config_overrides)
    return spec, config


def synthgen_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="synthgen", description="Generate a synthetic session with ground truth."
    )
    parser.add_argument("--spec", required=True, help="scene spec file")
    parser.add_argument("--out", required=True, help="session output directory")
    parser.add_argument("--no-gt", action="store_true", help="skip ground-truth export")
    args = parser.parse_args(argv)
    try:
        spec, config = parse_scene_spec(args.spec)
        SessionGenerator(spec, config).write(args.out, write_gt=not args.no_gt)
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {spec.frame_count} frames to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
