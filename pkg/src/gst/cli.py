"""``gst`` command line: ingest, encode, gen, bev, align, eval, make-fixture.

Exit codes: 0 success, 1 runtime failure, 2 usage or input-format error.
Option values resolve as command-line flag, then ``GST_<NAME>`` environment
variable, then the ``--config`` JSON file, then the built-in default.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from gst import align as al
from gst import evalkit
from gst.bundle import read_bundle, write_bundle, write_ppm
from gst.errors import FormatError, GstError, InputError
from gst.gcot import bev as bevmod
from gst.gcot.dataset import GenConfig, dumps_jsonl, generate_scene, read_jsonl, to_records
from gst.gcot.llm import BACKENDS, ENV_KEY, ENV_URL, LlmConfig
from gst.gcot.metadata import DEFAULT_AREA_THRESHOLD, scene_meta_from_bundle
from gst.gcot.tasks import STRAIGHT_THRESHOLD_DEG, TASKS
from gst.patch.pipeline import ModelConfig, build_hybrid_features, init_weights, write_gsr1
from gst.patch.weights import WeightStore
from gst.scene import DEFAULT_ALPHA, aggregate_points
from gst.synth import make_fixture

log = logging.getLogger("gst")

# option name -> (default, type); these participate in flag > env > config resolution
SETTINGS = {
    "seed": (None, int),
    "alpha": (DEFAULT_ALPHA, float),
    "patch_size": (16, int),
    "samples": (64, int),
    "dim": (96, int),
    "mpp": (bevmod.DEFAULT_MPP, float),
    "per_task": (2, int),
    "tasks": (",".join(TASKS), str),
    "straight_thresh": (STRAIGHT_THRESHOLD_DEG, float),
    "area_thresh": (DEFAULT_AREA_THRESHOLD, float),
    "llm": ("mock", str),
    "llm_url": (None, str),
    "llm_key": (None, str),
    "llm_model": ("gpt-4o", str),
    "jobs": (1, int),
    "trim": (0.0, float),
}
_ENV_ALIASES = {"llm_url": ENV_URL, "llm_key": ENV_KEY}


class UsageError(Exception):
    pass


def resolve(args, name, env=None, config=None):
    """Value of setting ``name``: flag, then environment, then config file, then default."""
    default, cast = SETTINGS[name]
    env = os.environ if env is None else env
    config = {} if config is None else config
    flag = getattr(args, name, None)
    if flag is not None:
        return flag
    env_name = _ENV_ALIASES.get(name, "GST_" + name.upper())
    try:
        if env.get(env_name) not in (None, ""):
            return cast(env[env_name])
        if config.get(name) is not None:
            return cast(config[name])
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad value for {name}: {exc}") from None
    return default


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    except ValueError as exc:
        raise FormatError(path, f"invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise FormatError(path, "config must be a JSON object", 0)
    unknown = sorted(set(data) - set(SETTINGS))
    if unknown:
        raise FormatError(path, f"unknown setting(s): {', '.join(unknown)}")
    return data


def _scene_points(bundle) -> np.ndarray:
    return aggregate_points(bundle.point_maps()).points


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_ingest(args, get) -> int:
    bundle = read_bundle(args.bundle)
    cloud = aggregate_points(bundle.point_maps())
    if bundle.axis_align_applied:
        status = "applied"
    elif bundle.axis_align is not None:
        status = "stored, not applied"
    else:
        status = "absent (estimated on demand)"
    print(f"scene: {bundle.scene_id}")
    print(f"frames: {len(bundle.frames)} ({bundle.width}x{bundle.height})")
    print(f"objects: {len(bundle.objects)}")
    print(f"points: {len(cloud)}")
    print(f"trajectories: {len(bundle.trajectories)}")
    print(f"axis_align: {status}")
    return 0


def _model_config(get) -> ModelConfig:
    return ModelConfig(patch_size=get("patch_size"), samples_per_patch=get("samples"), hidden_dim=get("dim"))


def cmd_encode(args, get) -> int:
    if (args.weights is None) == (args.seed_weights is None):
        raise UsageError("encode needs exactly one of --weights or --seed-weights")
    cfg = _model_config(get)
    bundle = read_bundle(args.bundle)
    weights = WeightStore.load(args.weights) if args.weights else init_weights(cfg, args.seed_weights)
    if args.save_weights:
        weights.save(args.save_weights)
    seed = get("seed")
    feats = build_hybrid_features(bundle, weights, cfg, seed=0 if seed is None else seed)
    write_gsr1(args.output, feats.features, feats.centers)
    n, h, w, d = feats.features.shape
    print(f"tokens: {feats.token_count} ({n} frames x {h} x {w}), dim {d}")
    print(f"wrote {args.output}")
    return 0


def _gen_one(path: str, cfg: GenConfig, area_thresh: float, alpha: float) -> list:
    bundle = read_bundle(path)
    meta = scene_meta_from_bundle(bundle, area_thresh=area_thresh, alpha=alpha)
    return to_records(generate_scene(meta, cfg, _scene_points(bundle)))


def cmd_gen(args, get) -> int:
    seed = get("seed")
    if seed is None:
        raise UsageError("gen requires --seed (or GST_SEED / config 'seed')")
    tasks = tuple(t.strip() for t in get("tasks").split(",") if t.strip())
    llm = LlmConfig(backend=get("llm"), url=get("llm_url"), key=get("llm_key"), model=get("llm_model"))
    cfg = GenConfig(
        seed=seed, tasks=tasks, per_task=get("per_task"), straight_thresh=get("straight_thresh"),
        mpp=get("mpp"), llm=llm,
    )
    jobs = max(1, get("jobs"))
    area, alpha = get("area_thresh"), get("alpha")
    if jobs == 1 or len(args.bundles) == 1:
        per_scene = [_gen_one(p, cfg, area, alpha) for p in args.bundles]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_scene = list(pool.map(_gen_one, args.bundles, [cfg] * len(args.bundles),
                                      [area] * len(args.bundles), [alpha] * len(args.bundles)))
    records = [r for scene in per_scene for r in scene]
    Path(args.output).write_text(dumps_jsonl(records), encoding="utf-8")
    failed = sum(r["cot_status"] == "failed" for r in records)
    print(f"records: {len(records)} ({failed} CoT failures)")
    print(f"wrote {args.output}")
    return 0


def cmd_bev(args, get) -> int:
    bundle = read_bundle(args.bundle)
    img = bevmod.render_scene_bev(_scene_points(bundle), bundle.objects, get("mpp"))
    write_ppm(args.output, img.raster)
    print(f"{img.width}x{img.height} px at {img.mpp} m/px")
    for cat, color in img.color_key.items():
        print(f"  {cat}: rgb{color}")
    return 0


def cmd_align(args, get) -> int:
    pairs = al.pairs_from_bundles(read_bundle(args.source), read_bundle(args.reference))
    s = al.solve_scale(pairs, trim=get("trim"))
    residual = al.scale_residual(pairs, s)
    report = {"scale": s, "residual": residual, "rms": float(np.sqrt(residual / len(pairs))), "pairs": len(pairs)}
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text + "\n")
    print(text)
    return 0


def _predictions(path) -> dict:
    out, fallback = {}, 0
    for i, rec in enumerate(read_jsonl(path)):
        if "id" not in rec:
            raise FormatError(path, f"record {i} has no 'id'")
        text = rec.get("prediction")
        if text is None:
            text = rec.get("response")
            fallback += text is not None
        if text is not None:
            out[rec["id"]] = text
    if fallback:
        log.warning("%d record(s) lack 'prediction'; scored their 'response' field instead", fallback)
    return out


def cmd_eval(args, get) -> int:
    gt = read_jsonl(args.gt)
    report = evalkit.evaluate_records(gt, _predictions(args.pred or args.gt))
    if args.output:
        Path(args.output).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(evalkit.format_report(report))
    return 0


def cmd_make_fixture(args, get) -> int:
    seed = get("seed")
    bundle = make_fixture(
        seed=0 if seed is None else seed, n_frames=args.frames, size=args.size,
        depth_step=args.depth_step, depth_scale=args.depth_scale,
    )
    write_bundle(bundle, args.output)
    print(f"wrote {args.output} ({len(bundle.frames)} frames, {len(bundle.objects)} objects)")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of default settings (see docs/cli.md)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="gst", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_, parents=[common])
        sp.set_defaults(fn=fn)
        return sp

    sp = add("ingest", cmd_ingest, "validate a scene bundle and print a summary")
    sp.add_argument("bundle")

    sp = add("encode", cmd_encode, "compute hybrid patch features and write a GSR1 file")
    sp.add_argument("bundle")
    sp.add_argument("-o", "--output", required=True, help="GSR1 output path")
    sp.add_argument("--weights", help="GSW1 weight file")
    sp.add_argument("--seed-weights", type=int, help="initialize random weights from this seed")
    sp.add_argument("--save-weights", help="also write the weights used to this GSW1 path")
    sp.add_argument("--seed", type=int, help="point sampling seed (default 0)")
    sp.add_argument("--patch-size", dest="patch_size", type=int, help="patch side p in pixels (default 16)")
    sp.add_argument("--samples", type=int, help="points sampled per patch (default 64)")
    sp.add_argument("--dim", type=int, help="hybrid feature width, multiple of 6 (default 96)")

    sp = add("gen", cmd_gen, "generate the grounded QA dataset (JSONL)")
    sp.add_argument("bundles", nargs="+", help="one or more bundle directories")
    sp.add_argument("-o", "--output", required=True, help="JSONL output path")
    sp.add_argument("--seed", type=int, help="generation seed (required)")
    sp.add_argument("--tasks", help="comma-separated task subset (default: all eight)")
    sp.add_argument("--per-task", dest="per_task", type=int, help="samples drawn per task and scene (default 2)")
    sp.add_argument("--straight-thresh", dest="straight_thresh", type=float,
                    help="route heading change below which a step is 'go straight', degrees (default 15)")
    sp.add_argument("--area-thresh", dest="area_thresh", type=float,
                    help="mask pixels for an object to count as visible (default 500)")
    sp.add_argument("--alpha", type=float, help="alpha-shape radius for room area, meters (default 0.5)")
    sp.add_argument("--mpp", type=float, help="BEV meters per pixel for CoT prompts (default 0.02)")
    sp.add_argument("--llm", choices=BACKENDS, help="CoT backend (default mock)")
    sp.add_argument("--llm-url", dest="llm_url", help=f"chat endpoint base URL (env {ENV_URL})")
    sp.add_argument("--llm-key", dest="llm_key", help=f"API key (env {ENV_KEY})")
    sp.add_argument("--llm-model", dest="llm_model", help="model name sent to the endpoint (default gpt-4o)")
    sp.add_argument("--jobs", type=int, help="scenes processed in parallel (default 1)")

    sp = add("bev", cmd_bev, "render a bird's-eye view PPM with outlined objects")
    sp.add_argument("bundle")
    sp.add_argument("-o", "--output", required=True, help="PPM output path")
    sp.add_argument("--mpp", type=float, help="meters per pixel (default 0.02)")

    sp = add("align", cmd_align, "solve the metric scale between two bundles' depths")
    sp.add_argument("source", help="scale-free bundle")
    sp.add_argument("reference", help="metric bundle with the same frames")
    sp.add_argument("--trim", type=float, help="fraction of worst pairs dropped before the final solve")
    sp.add_argument("-o", "--output", help="also write the JSON report here")

    sp = add("eval", cmd_eval, "score predictions against generated ground truth")
    sp.add_argument("--gt", required=True, help="ground-truth dataset JSONL")
    sp.add_argument("--pred", help="predictions JSONL with 'id' and 'prediction' (default: --gt itself)")
    sp.add_argument("-o", "--output", help="JSON report path")

    sp = add("make-fixture", cmd_make_fixture, "write the synthetic twelve-object fixture bundle")
    sp.add_argument("output")
    sp.add_argument("--seed", type=int, help="color noise seed (default 0)")
    sp.add_argument("--frames", type=int, default=8)
    sp.add_argument("--size", type=int, default=64, help="image side in pixels")
    sp.add_argument("--depth-step", dest="depth_step", type=float, default=0.001, help="depth quantum, meters")
    sp.add_argument("--depth-scale", dest="depth_scale", type=float, default=1.0,
                    help="multiply rendered depths (planted scale for align)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)

        def get(name):
            return resolve(args, name, config=config)

        return args.fn(args, get)
    except UsageError as exc:
        print(f"gst {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, InputError) as exc:
        print(f"gst {args.command}: {exc}", file=sys.stderr)
        return 2
    except (GstError, OSError) as exc:
        print(f"gst {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
