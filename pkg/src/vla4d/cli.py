"""Command-line entry point.

JSON results go to stdout (or ``--out``), diagnostics to stderr.  Exit codes:
0 success, 1 usage error, 2 data error.
"""

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import actions, chaos, geometry, sampling, tensorio, toyexp
from .errors import DataError, TrajectoryRejected
from .rng import Prng, derive_seed


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _floats(text, n=None):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} numbers, got {len(vals)}")
    return vals


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _emit(args, obj):
    text = tensorio.dump_json(obj)
    if getattr(args, "out", None):
        tensorio.atomic_write(args.out, text)
    else:
        sys.stdout.write(text)


def _map(jobs, fn, items):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _out_paths(args):
    if len(args.manifest) == 1 and args.out:
        return [Path(args.out)]
    if not args.out_dir:
        raise UsageError("multiple manifests need --out-dir")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [out_dir / Path(m).name for m in args.manifest]


# --- subcommands ---------------------------------------------------------------


def cmd_sample(args):
    path = Path(args.manifest)
    m = tensorio.load_manifest(path)
    stamps = [f.timestamp for f in m.frames]
    times = list(range(len(stamps))) if args.index_time else stamps
    t = times[-1] if args.t is None else args.t
    if t not in times:
        raise DataError(f"t={t} is not a frame of the manifest")
    fspec = sampling.FeatureSpec.parse(args.feature)
    lo = t - args.n + 1
    feats = {}
    for tm, fr in zip(times, m.frames):
        if lo <= tm <= t:
            img = tensorio.load_image(path.parent / fr.image_path)
            feats[tm] = sampling.extract_feature(img, fspec)
    if args.method == "uniform":
        selected = sampling.uniform_sample(t, args.n, args.k, earliest=min(feats))
    else:
        selected = sampling.memory_bank_sample(
            t, feats, args.n, args.k, sampling.SimilaritySpec(args.sim)
        )
    if args.index_time:
        t, selected = stamps[t], [stamps[i] for i in selected]
    _emit(args, {"t": t, "selected": selected})


def _load_camera(path):
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(obj, dict) and "camera" in obj:
        obj = obj["camera"]
    return tensorio.parse_camera(obj)


def cmd_backproject(args):
    depth = tensorio.load_tensor(args.depth)
    if depth.ndim != 2:
        raise DataError("depth tensor must be [h, w]")
    cam = _load_camera(args.camera)
    grid = geometry.patch_mean_depth(depth, args.patch)
    pg = geometry.backproject(grid, cam, args.mask_threshold)
    pts, mask = tensorio.point_grid_to_tensors(pg)
    prefix = Path(args.out)
    p_path = prefix.with_name(prefix.name + ".points.4dtn")
    m_path = prefix.with_name(prefix.name + ".mask.4dtn")
    tensorio.save_tensor(p_path, pts)
    tensorio.save_tensor(m_path, mask)
    sys.stdout.write(
        tensorio.dump_json(
            {
                "rows": pg.rows,
                "cols": pg.cols,
                "valid_cells": int(pg.mask.sum()),
                "points": p_path.name,
                "mask": m_path.name,
            }
        )
    )


def cmd_chaos(args):
    outs = _out_paths(args)

    def work(item):
        i, src = item
        m = tensorio.load_manifest(src)
        rng = Prng(derive_seed(args.seed, i))
        c = chaos.sample_chaos_so3(rng) if args.so3 else chaos.sample_chaos(args.level, rng, args.t_dist)
        tensorio.atomic_write(outs[i], tensorio.manifest_to_json(chaos.apply_chaos_manifest(c, m)))
        return {"trajectory_id": m.trajectory_id, "out": outs[i].name, "chaos": c.to_json()}

    report = _map(args.jobs, work, list(enumerate(args.manifest)))
    sys.stdout.write(tensorio.dump_json({"seed": args.seed, "items": report}))


def cmd_preprocess(args):
    outs = _out_paths(args)

    def work(item):
        i, src = item
        m = tensorio.load_manifest(src)
        try:
            p = actions.preprocess_trajectory(m, args.target_len, args.max_len, args.stationary_eps)
        except TrajectoryRejected as exc:
            return {"trajectory_id": m.trajectory_id, "rejected": str(exc)}, []
        tensorio.atomic_write(outs[i], tensorio.manifest_to_json(p))
        acts = [
            actions.scale_action(f.action, args.scale_t, args.scale_r, args.scale_mode == "divide")
            for f in p.frames
        ]
        return {"trajectory_id": m.trajectory_id, "out": outs[i].name, "frames": len(p.frames)}, acts

    results = _map(args.jobs, work, list(enumerate(args.manifest)))
    summary = {"items": [r for r, _ in results]}
    if args.stats:
        stats = actions.compute_percentile_stats([a for _, acts in results for a in acts])
        obj = stats.to_json()
        obj.update(scale_t=args.scale_t, scale_r=args.scale_r, scale_mode=args.scale_mode)
        tensorio.atomic_write(args.stats, tensorio.dump_json(obj))
        summary["stats"] = obj
    sys.stdout.write(tensorio.dump_json(summary))


def cmd_viewgen(args):
    if args.angles is not None:
        angles, name = args.angles, "custom"
    else:
        angles, name = geometry.MVBENCH_PRESETS[args.preset], args.preset
    cams = geometry.ring_cameras(angles, args.radius, args.height, args.target, args.fx, args.fy, args.cx, args.cy)
    views = []
    for a, cam in zip(angles, cams):
        u, v = geometry.project(args.target, cam)
        views.append({"angle_deg": a, "camera": tensorio.camera_to_obj(cam), "target_pixel": [u, v]})
    _emit(args, {"preset": name, "views": views})


def cmd_toyexp(args):
    train = replace(toyexp.TrainConfig(), steps=args.steps)
    cfg = toyexp.ExperimentConfig(levels=tuple(args.levels), n_train=args.n_train, n_test=args.n_test, train=train)
    rows = []
    for s in range(args.n_seeds):
        res = toyexp.run_experiment(toyexp.SceneSpec(), cfg, seed=args.seed + s)
        rows.extend(res.rows())
        print(f"seed {args.seed + s}: {res.seconds:.1f}s", file=sys.stderr)
    if args.out:
        prefix = Path(args.out)
        tensorio.atomic_write(prefix.with_name(prefix.name + ".json"), tensorio.dump_json(rows))
        tensorio.atomic_write(prefix.with_name(prefix.name + ".csv"), toyexp.rows_to_csv(rows))
    sys.stdout.write(tensorio.dump_json(rows))


def cmd_selfcheck(args):
    from .selfcheck import run_selfcheck

    results = run_selfcheck(seed=args.seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}", file=sys.stderr)
    failed = [name for name, ok, _ in results if not ok]
    sys.stdout.write(tensorio.dump_json({"passed": len(results) - len(failed), "failed": failed}))
    return 2 if failed else 0


# --- parser --------------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="vla4d", description="Spatiotemporal VLA data-side toolkit.")
    parser.add_argument("--seed", type=int, default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
        p.set_defaults(func=fn)
        return p

    p = add("sample", cmd_sample, "select history frames of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--t", type=int, default=None)
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--feature", default="pooled:16")
    p.add_argument("--sim", choices=("neg_l2", "cosine"), default="neg_l2")
    p.add_argument("--method", choices=("memory_bank", "uniform"), default="memory_bank")
    p.add_argument("--index-time", action="store_true", help="use frame position as the time axis")
    p.add_argument("--out")

    p = add("backproject", cmd_backproject, "lift a depth map to world coordinates")
    p.add_argument("--depth", required=True, help="4DTN [h, w] depth in meters, 0 = missing")
    p.add_argument("--camera", required=True, help="camera JSON")
    p.add_argument("--patch", type=int, default=14)
    p.add_argument("--mask-threshold", type=float, default=geometry.DEFAULT_MASK_THRESHOLD)
    p.add_argument("--out", required=True, help="output prefix")

    for name, fn, text in (
        ("chaos", cmd_chaos, "apply a random frame perturbation to manifests"),
        ("preprocess", cmd_preprocess, "filter, downsample and relabel manifests"),
    ):
        p = add(name, fn, text)
        p.add_argument("--manifest", action="append", required=True)
        p.add_argument("--out")
        p.add_argument("--out-dir")
        p.add_argument("--jobs", type=int, default=1)
        if name == "chaos":
            p.add_argument("--level", type=int, choices=(0, 1, 2, 3), default=3)
            p.add_argument("--t-dist", choices=("cube", "ball"), default="cube")
            p.add_argument("--so3", action="store_true")
        else:
            p.add_argument("--target-len", type=int, default=actions.TARGET_LEN)
            p.add_argument("--max-len", type=int, default=actions.MAX_LEN)
            p.add_argument("--stationary-eps", type=float, default=actions.STATIONARY_EPS)
            p.add_argument("--scale-t", type=float, default=actions.SCALE_T)
            p.add_argument("--scale-r", type=float, default=actions.SCALE_R)
            p.add_argument("--scale-mode", choices=("multiply", "divide"), default="multiply")
            p.add_argument("--stats")

    p = add("viewgen", cmd_viewgen, "look-at camera rings")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--preset", choices=sorted(geometry.MVBENCH_PRESETS), default="mvbench-train")
    g.add_argument("--angles", type=_floats, help="comma-separated degrees")
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--height", type=float, default=0.5)
    p.add_argument("--target", type=lambda s: _floats(s, 3), default=[0.0, 0.0, 0.0])
    p.add_argument("--fx", type=float, default=224.0)
    p.add_argument("--fy", type=float, default=224.0)
    p.add_argument("--cx", type=float, default=112.0)
    p.add_argument("--cy", type=float, default=112.0)
    p.add_argument("--out")

    p = add("toyexp", cmd_toyexp, "coordinate-chaos toy experiment")
    p.add_argument("--levels", type=_ints, default=[0, 1, 2, 3])
    p.add_argument("--n-train", type=int, default=4096)
    p.add_argument("--n-test", type=int, default=1024)
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--n-seeds", type=int, default=1)
    p.add_argument("--out", help="output prefix for .json and .csv")

    add("selfcheck", cmd_selfcheck, "run the embedded invariant checks")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        code = args.func(args)
        return 0 if code is None else code
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (ValueError, OSError, KeyError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
