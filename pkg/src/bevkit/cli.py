"""Command-line pipeline driver.

Subcommands cover the full flow: synth -> annotate -> render -> (perturb) ->
genqa -> balance -> split -> stats, plus rollout/eval-traj, eval-qa, and
export-cond. Every stochastic step takes an explicit --seed; reruns with the
same flags produce byte-identical artifacts, with or without --jobs.

Exit codes: 0 success, 1 validation error, 2 I/O error, 64 usage error.
Logs go to stderr; data goes to files or stdout.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .annotator import (
    AnnotatorConfig,
    annotate_scene,
    read_annotations_jsonl,
    record_from_dict,
    record_to_dict,
)
from .bevrender import (
    RenderConfig,
    load_sidecar,
    perturb_combined,
    perturb_lanes,
    perturb_vehicles,
    render_bev,
    save_raster,
)
from .errors import BevkitError, ConfigError
from .metrics import (
    DisplacementMetrics,
    displacement_metrics,
    qa_accuracy,
    read_predictions_jsonl,
    scenario_collision_rate,
)
from .motion import (
    NavigationReasoning,
    StateSeq,
    assemble_condition,
    export_condition,
    extract_map_understanding_gt,
    lane_follow_plan,
    rollout as rollout_actions,
)
from .scenemodel import Scene, load_scene, save_scene
from .synth import LAYOUTS, SynthSpec, save_ground_truth, synth_scene
from .vqagen import (
    balance_dataset,
    dataset_stats,
    gen_questions,
    item_to_dict,
    read_qa_jsonl,
    split_dataset,
    write_qa_jsonl,
)

log = logging.getLogger("bevkit")

USAGE_EXIT = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(USAGE_EXIT)


def _env_config() -> dict:
    path = os.environ.get("BEVKIT_CONFIG")
    if not path:
        return {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"BEVKIT_CONFIG={path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"BEVKIT_CONFIG={path}: expected a JSON object")
    return raw


def _fallback(value, env: dict, key: str, default):
    if value is not None:
        return value
    if key in env:
        return type(default)(env[key])
    return default


def _annotator_config(env: dict, path: str | None) -> AnnotatorConfig:
    cfg: dict = dict(env.get("annotator", {}))
    if path:
        cfg.update(json.loads(Path(path).read_text(encoding="utf-8")))
    valid = {f.name for f in dataclasses.fields(AnnotatorConfig)}
    unknown = set(cfg) - valid
    if unknown:
        raise ConfigError(f"unknown annotator config keys: {sorted(unknown)}")
    return AnnotatorConfig(**cfg)


def _scene_paths(spec: str) -> list[Path]:
    p = Path(spec)
    if p.is_dir():
        return sorted(q for q in p.glob("*.json") if not q.name.endswith(".gt.json"))
    if not p.exists():
        raise FileNotFoundError(f"no such file or directory: {spec}")
    return [p]


def _child_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(max(n, 1))][:n]


def _run_pool(jobs: int, fn, tasks: list[tuple]):
    """Map fn over tasks, preserving task order in the returned list."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, *t) for t in tasks]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# synth


def _cmd_synth(args) -> int:
    rng_seeds = _child_seeds(args.seed, args.count)
    out = Path(args.output)
    single_file = args.count == 1 and out.suffix == ".json"
    if not single_file:
        out.mkdir(parents=True, exist_ok=True)
    layouts = list(LAYOUTS) if args.layout == "mixed" else [args.layout]
    for i in range(args.count):
        layout = layouts[i % len(layouts)]
        spec = SynthSpec(layout=layout, n_vehicles=args.n, horizon=args.horizon, dt=args.dt)
        scene, gt = synth_scene(spec, seed=rng_seeds[i])
        if single_file:
            scene_path = out
        else:
            scene_path = out / f"scene_{i:05d}_{scene.scene_id}.json"
        save_scene(scene, scene_path)
        if args.ground_truth:
            save_ground_truth(gt, scene_path.with_suffix("").as_posix() + ".gt.json")
    log.info("synth: wrote %d scene(s) to %s", args.count, out)
    return 0


# ---------------------------------------------------------------------------
# annotate


def _annotate_worker(scene_path: str, cfg_kwargs: dict) -> tuple[str, list[str]]:
    scene = load_scene(scene_path)
    records = annotate_scene(scene, AnnotatorConfig(**cfg_kwargs))
    lines = [json.dumps(record_to_dict(r), sort_keys=True, separators=(",", ":")) for r in records]
    return scene.scene_id, lines


def _cmd_annotate(args) -> int:
    env = _env_config()
    cfg = _annotator_config(env, args.thresholds)
    paths = _scene_paths(args.input)
    results = _run_pool(args.jobs, _annotate_worker, [(str(p), dataclasses.asdict(cfg)) for p in paths])
    n = 0
    with Path(args.output).open("w", encoding="utf-8") as fh:
        # merge in stable scene-id order so --jobs never changes bytes
        for _, lines in sorted(results, key=lambda r: r[0]):
            for line in lines:
                fh.write(line + "\n")
                n += 1
    log.info("annotate: %d records from %d scene(s) -> %s", n, len(paths), args.output)
    return 0


# ---------------------------------------------------------------------------
# render


def _render_timesteps(scene: Scene, stride: int, min_future: int) -> list[int]:
    ts = scene.timesteps
    return [t for t in range(ts.start, ts.stop, stride) if ts.stop - 1 - t >= min_future]


def _render_worker(scene_path: str, out_dir: str, extent: float, resolution: float, stride: int, egos: str, min_future: int) -> int:
    scene = load_scene(scene_path)
    cfg = RenderConfig(extent=extent, resolution=resolution)
    vehicles = [scene.ego_id] if egos == "ego" else [tr.vehicle_id for tr in scene.tracks]
    count = 0
    for vid in sorted(vehicles):
        for t in _render_timesteps(scene, stride, min_future):
            raster = render_bev(scene, vid, t, cfg)
            name = f"{scene.scene_id}__{vid}__t{t:04d}.png"
            save_raster(raster, Path(out_dir) / name)
            count += 1
    return count


def _cmd_render(args) -> int:
    env = _env_config()
    extent = _fallback(args.extent, env, "extent", 50.0)
    resolution = _fallback(args.resolution, env, "resolution", 0.25)
    RenderConfig(extent=extent, resolution=resolution).side()  # validate early
    paths = _scene_paths(args.input)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(str(p), str(out), extent, resolution, args.stride, args.vehicles, args.min_future) for p in paths]
    counts = _run_pool(args.jobs, _render_worker, tasks)
    log.info("render: %d image(s) from %d scene(s) -> %s", sum(counts), len(paths), out)
    return 0


# ---------------------------------------------------------------------------
# perturb


def _cmd_perturb(args) -> int:
    paths = _scene_paths(args.input)
    out = Path(args.output)
    multi = len(paths) > 1
    if multi:
        out.mkdir(parents=True, exist_ok=True)
    seeds = _child_seeds(args.seed, len(paths))
    for p, seed in zip(paths, seeds):
        scene = load_scene(p)
        if args.mode == "vehicle":
            scene = perturb_vehicles(scene, rate=args.rate, max_shift=args.max_shift, seed=seed)
        elif args.mode == "lane":
            scene = perturb_lanes(scene, rate=args.rate, seed=seed)
        else:
            scene = perturb_combined(scene, rate=args.rate, seed=seed)
        save_scene(scene, out / p.name if multi else out)
    log.info("perturb(%s): %d scene(s) -> %s", args.mode, len(paths), out)
    return 0


# ---------------------------------------------------------------------------
# genqa


def _genqa_worker(
    scene_path: str,
    sidecar_paths: list[str],
    record_dicts: list[dict] | None,
    cfg_kwargs: dict,
    rate: float,
    seed: int,
) -> list[str]:
    scene = load_scene(scene_path)
    # image refs are stored as bare filenames so datasets are portable and
    # reruns into different directories stay byte-identical
    refs = [
        dataclasses.replace(ref, image=Path(ref.image).name)
        for ref in (load_sidecar(p) for p in sidecar_paths)
    ]
    if record_dicts is None:
        records = annotate_scene(scene, AnnotatorConfig(**cfg_kwargs))
    else:
        records = [record_from_dict(d) for d in record_dicts]
    items = gen_questions(scene, records, refs, rate=rate, seed=seed)
    return [json.dumps(item_to_dict(it), sort_keys=True, separators=(",", ":")) for it in items]


def _cmd_genqa(args) -> int:
    env = _env_config()
    rate = _fallback(args.rate, env, "rate", 5.44)
    cfg = _annotator_config(env, args.thresholds)
    paths = _scene_paths(args.input)
    by_scene_id = {}
    for p in paths:
        # scene_id is embedded in render filenames; map via the loaded scene
        by_scene_id[load_scene(p).scene_id] = p

    sidecars: dict[str, list[str]] = {sid: [] for sid in by_scene_id}
    for sc in sorted(Path(args.renders).glob("*.json")):
        sid = sc.name.split("__")[0]
        if sid in sidecars:
            sidecars[sid].append(str(sc))

    records_by_scene: dict[str, list[dict] | None] = {sid: None for sid in by_scene_id}
    if args.annotations:
        for rec in read_annotations_jsonl(args.annotations):
            if rec.scene_id in records_by_scene:
                if records_by_scene[rec.scene_id] is None:
                    records_by_scene[rec.scene_id] = []
                records_by_scene[rec.scene_id].append(record_to_dict(rec))

    scene_ids = sorted(by_scene_id)
    seeds = _child_seeds(args.seed, len(scene_ids))
    tasks = [
        (
            str(by_scene_id[sid]),
            sidecars[sid],
            records_by_scene[sid],
            dataclasses.asdict(cfg),
            rate,
            seeds[i],
        )
        for i, sid in enumerate(scene_ids)
    ]
    results = _run_pool(args.jobs, _genqa_worker, tasks)
    n = 0
    with Path(args.output).open("w", encoding="utf-8") as fh:
        for lines in results:
            for line in lines:
                fh.write(line + "\n")
                n += 1
    log.info("genqa: %d questions from %d scene(s) -> %s", n, len(scene_ids), args.output)
    return 0


# ---------------------------------------------------------------------------
# balance / split / stats


def _cmd_balance(args) -> int:
    env = _env_config()
    factor = _fallback(args.factor, env, "factor", 3.0)
    items = read_qa_jsonl(args.input)
    kept = balance_dataset(items, factor=factor, seed=args.seed)
    write_qa_jsonl(kept, args.output)
    log.info("balance: kept %d of %d items -> %s", len(kept), len(items), args.output)
    return 0


def _cmd_split(args) -> int:
    env = _env_config()
    fraction = _fallback(args.test_fraction, env, "test_fraction", 0.157)
    items = read_qa_jsonl(args.input)
    train, test = split_dataset(items, test_fraction=fraction, seed=args.seed)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_qa_jsonl(train, out / "train.jsonl")
    write_qa_jsonl(test, out / "test.jsonl")
    log.info("split: %d train / %d test -> %s", len(train), len(test), out)
    return 0


def _cmd_stats(args) -> int:
    items = read_qa_jsonl(args.input)
    report = dataset_stats(items).to_dict()
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# rollout / eval


def _state_row(s) -> list[float]:
    return [s.x, s.y, s.speed, s.yaw]


def _cmd_rollout(args) -> int:
    paths = _scene_paths(args.input)
    scenarios = []
    for p in paths:
        scene = load_scene(p)
        t0 = args.t0
        vehicles = []
        for tr in sorted(scene.tracks, key=lambda tr: tr.vehicle_id):
            if not tr.has(t0):
                continue
            horizon = min(args.horizon, tr.t1 - t0)
            if horizon < 1:
                continue
            s0 = tr.state_at(t0)
            if args.nav == "gt":
                _, nav = extract_map_understanding_gt(scene, tr.vehicle_id, t0, horizon=args.horizon)
            else:
                nav = NavigationReasoning.empty()
            plan = lane_follow_plan(s0, nav, target_speed=s0.speed, horizon=horizon, dt=scene.dt)
            planned = rollout_actions(s0, plan)
            gt_states = [tr.state_at(t) for t in range(t0, t0 + horizon + 1)]
            vehicles.append(
                {
                    "vehicle_id": tr.vehicle_id,
                    "t0": t0,
                    "gt": [_state_row(s) for s in gt_states],
                    "samples": [[_state_row(s) for s in planned.states]],
                }
            )
        # bare filename: rollout files stay byte-identical across run roots;
        # eval-traj resolves it against its --scenes directory
        scenarios.append({"scene_id": scene.scene_id, "scene_file": p.name, "dt": scene.dt, "vehicles": vehicles})
    payload = {"horizon": args.horizon, "scenarios": scenarios}
    Path(args.output).write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8")
    log.info("rollout: %d scenario(s) -> %s", len(scenarios), args.output)
    return 0


def _seq_from_rows(rows, dt) -> StateSeq:
    from .scenemodel import Vec2, VehicleState

    return StateSeq(
        states=tuple(VehicleState(position=Vec2(r[0], r[1]), speed=r[2], yaw=r[3]) for r in rows),
        dt=dt,
    )


def _cmd_eval_traj(args) -> int:
    payload = json.loads(Path(args.input).read_text(encoding="utf-8"))
    per_vehicle = []
    collision_inputs = []
    skipped_scenes = 0
    for sc in payload["scenarios"]:
        dt = sc["dt"]
        rollouts = {}
        for veh in sc["vehicles"]:
            gt = _seq_from_rows(veh["gt"], dt)
            samples = [_seq_from_rows(rows, dt) for rows in veh["samples"]]
            per_vehicle.append(displacement_metrics(gt, samples))
            rollouts[veh["vehicle_id"]] = samples[0]
        scene_path = Path(args.scenes) / sc["scene_file"] if args.scenes else None
        if rollouts and scene_path is not None and scene_path.exists():
            collision_inputs.append((load_scene(scene_path), rollouts))
        elif rollouts:
            skipped_scenes += 1
    if skipped_scenes:
        log.warning("eval-traj: SCR %s (%d scene files unresolved; pass --scenes)",
                    "partial" if collision_inputs else "skipped", skipped_scenes)
    if not per_vehicle:
        log.error("eval-traj: no vehicles found in %s", args.input)
        return 1
    agg = DisplacementMetrics(
        mADE=float(np.mean([m.mADE for m in per_vehicle])),
        minADE=float(np.mean([m.minADE for m in per_vehicle])),
        mFDE=float(np.mean([m.mFDE for m in per_vehicle])),
        minFDE=float(np.mean([m.minFDE for m in per_vehicle])),
    )
    report = agg.to_dict()
    if collision_inputs:
        report["SCR"] = scenario_collision_rate(collision_inputs)
    report["n"] = len(per_vehicle)
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_eval_qa(args) -> int:
    dataset = read_qa_jsonl(args.dataset)
    preds = read_predictions_jsonl(args.predictions)
    report = qa_accuracy(dataset, preds).to_dict()
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_export_cond(args) -> int:
    scene = load_scene(args.input)
    bundle = assemble_condition(scene, t0=args.t0, history_len=args.history, horizon=args.horizon)
    export_condition(bundle, args.output)
    log.info("export-cond: %d vehicle(s) -> %s", len(bundle.vehicle_ids), args.output)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    p = _Parser(prog="bevkit", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"bevkit {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate synthetic scenes + ground truth")
    sp.add_argument("--layout", required=True, choices=list(LAYOUTS) + ["mixed"])
    sp.add_argument("--n", type=int, required=True, help="vehicles per scene")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--count", type=int, default=1, help="number of scenes")
    sp.add_argument("--horizon", type=int, default=60, help="timestep transitions per scene")
    sp.add_argument("--dt", type=float, default=0.1)
    sp.add_argument("--no-ground-truth", dest="ground_truth", action="store_false")
    sp.add_argument("-o", "--output", required=True, help="scene file (count=1) or directory")
    sp.set_defaults(func=_cmd_synth)

    ap = sub.add_parser("annotate", help="scenes -> annotation JSONL")
    ap.add_argument("-i", "--input", required=True, help="scene file or directory")
    ap.add_argument("-o", "--output", required=True)
    ap.add_argument("--thresholds", help="JSON file overriding annotator thresholds")
    ap.add_argument("--jobs", type=int, default=1)
    ap.set_defaults(func=_cmd_annotate)

    rp = sub.add_parser("render", help="scenes -> BEV PNGs + sidecars")
    rp.add_argument("-i", "--input", required=True)
    rp.add_argument("-o", "--output", required=True, help="output directory")
    rp.add_argument("--extent", type=float, default=None)
    rp.add_argument("--resolution", type=float, default=None)
    rp.add_argument("--stride", type=int, default=25, help="timestep stride between keyframes")
    rp.add_argument("--vehicles", choices=["all", "ego"], default="all")
    rp.add_argument("--min-future", type=int, default=10, help="skip timesteps with fewer future steps")
    rp.add_argument("--jobs", type=int, default=1)
    rp.set_defaults(func=_cmd_render)

    pp = sub.add_parser("perturb", help="apply a noise regime to scenes")
    pp.add_argument("-i", "--input", required=True)
    pp.add_argument("-o", "--output", required=True)
    pp.add_argument("--mode", required=True, choices=["vehicle", "lane", "combined"])
    pp.add_argument("--rate", type=float, default=0.10)
    pp.add_argument("--max-shift", type=float, default=0.20)
    pp.add_argument("--seed", type=int, required=True)
    pp.set_defaults(func=_cmd_perturb)

    gp = sub.add_parser("genqa", help="scenes + renders -> QA JSONL")
    gp.add_argument("-i", "--input", required=True, help="scene file or directory")
    gp.add_argument("-r", "--renders", required=True, help="render output directory")
    gp.add_argument("-a", "--annotations", help="annotation JSONL (recomputed when omitted)")
    gp.add_argument("-o", "--output", required=True)
    gp.add_argument("--rate", type=float, default=None, help="questions per image (default 5.44)")
    gp.add_argument("--seed", type=int, required=True)
    gp.add_argument("--thresholds")
    gp.add_argument("--jobs", type=int, default=1)
    gp.set_defaults(func=_cmd_genqa)

    bp = sub.add_parser("balance", help="undersample majority answer classes")
    bp.add_argument("-i", "--input", required=True)
    bp.add_argument("-o", "--output", required=True)
    bp.add_argument("--factor", type=float, default=None, help="max class ratio (default 3.0)")
    bp.add_argument("--seed", type=int, required=True)
    bp.set_defaults(func=_cmd_balance)

    spl = sub.add_parser("split", help="image-grouped train/test split")
    spl.add_argument("-i", "--input", required=True)
    spl.add_argument("-o", "--output", required=True, help="directory for train.jsonl/test.jsonl")
    spl.add_argument("--test-fraction", type=float, default=None)
    spl.add_argument("--seed", type=int, required=True)
    spl.set_defaults(func=_cmd_split)

    st = sub.add_parser("stats", help="dataset statistics report")
    st.add_argument("-i", "--input", required=True)
    st.add_argument("-o", "--output")
    st.set_defaults(func=_cmd_stats)

    ro = sub.add_parser("rollout", help="plan with the lane follower and integrate")
    ro.add_argument("-i", "--input", required=True)
    ro.add_argument("-o", "--output", required=True)
    ro.add_argument("--t0", type=int, default=5)
    ro.add_argument("--horizon", type=int, default=50)
    ro.add_argument("--nav", choices=["gt", "empty"], default="gt")
    ro.set_defaults(func=_cmd_rollout)

    eq = sub.add_parser("eval-qa", help="top-1 accuracy of predictions")
    eq.add_argument("-d", "--dataset", required=True)
    eq.add_argument("-p", "--predictions", required=True)
    eq.add_argument("-o", "--output")
    eq.set_defaults(func=_cmd_eval_qa)

    et = sub.add_parser("eval-traj", help="displacement metrics + SCR of rollouts")
    et.add_argument("-i", "--input", required=True)
    et.add_argument("--scenes", help="scene directory, needed to compute SCR")
    et.add_argument("-o", "--output")
    et.set_defaults(func=_cmd_eval_traj)

    ec = sub.add_parser("export-cond", help="export condition tensors for one scene")
    ec.add_argument("-i", "--input", required=True)
    ec.add_argument("-o", "--output", required=True)
    ec.add_argument("--t0", type=int, default=10)
    ec.add_argument("--history", type=int, default=10)
    ec.add_argument("--horizon", type=int, default=50)
    ec.set_defaults(func=_cmd_export_cond)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except OSError as exc:
        log.error("%s", exc)
        return 2
    except BevkitError as exc:
        log.error("%s", exc)
        return 1
    except ValueError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
