"""Command-line entry points.

Subcommands: seed, evolve, metrics, train-reward, serve. Outputs default to
--out, then the manifest's out_dir, then $EVOGRASP_OUT/<run_id>. All commands
are deterministic under a fixed seed and a single worker.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import threading

import numpy as np

from . import records
from .evaluator import EvalConfig, evaluate
from .evolution import (
    EvolutionError,
    initial_state,
    run_evolution,
    seed_population,
)
from .geometry import SceneError, load_scene
from .hand import load_hand
from .metrics import MetricsError, compute_report
from .preference import (
    ModelHolder,
    PreferencePair,
    fit_reward_model,
    fitness_hook,
    save_model,
)
from .records import RecordError
from .service import AnnotationServer, AnnotationSession

OUT_ROOT_ENV = "EVOGRASP_OUT"
CHECKPOINT_NAME = "checkpoint.jsonl"
SUCCESS_NAME = "success_set.jsonl"
TRACE_NAME = "trace.tsv"
MANIFEST_NAME = "manifest.json"


class CliError(SystemExit):
    def __init__(self, message: str):
        print(f"error: {message}", file=sys.stderr)
        super().__init__(1)


def _load_scene(path: str):
    if not os.path.exists(path):
        raise CliError(f"scene-not-found: {path}")
    try:
        return load_scene(path)
    except (SceneError, json.JSONDecodeError) as exc:
        raise CliError(f"bad scene file: {exc}")


def _load_hand(path_or_name: str):
    try:
        return load_hand(path_or_name)
    except FileNotFoundError:
        raise CliError(f"hand-not-found: {path_or_name}")


def _out_dir(explicit: str | None, run_id: str) -> str:
    if explicit:
        return explicit
    root = os.environ.get(OUT_ROOT_ENV, "runs")
    return os.path.join(root, run_id)


# ---------------------------------------------------------------------------
# seed
# ---------------------------------------------------------------------------

def cmd_seed(args) -> int:
    scene = _load_scene(args.scene)
    hand = _load_hand(args.hand)
    eval_cfg = EvalConfig(category=scene.category)
    rng = np.random.default_rng(args.seed)
    seeds = seed_population(scene, hand, args.mode, args.count, rng, eval_cfg)
    rows = []
    for grasp in seeds:
        result = evaluate(scene, hand, grasp, eval_cfg)
        rows.append(records.record_to_dict(grasp, result.fitness, result.success,
                                           {"kind": "seed"}))
    records.write_grasp_file(args.out, rows)
    n_success = sum(r["success"] for r in rows)
    print(f"wrote {len(rows)} seeds to {args.out} ({n_success} successful)")
    return 0


# ---------------------------------------------------------------------------
# evolve
# ---------------------------------------------------------------------------

def _prepare_run(args):
    try:
        manifest = records.load_manifest(args.config)
    except FileNotFoundError:
        raise CliError(f"config-not-found: {args.config}")
    except (RecordError, EvolutionError, ValueError) as exc:
        raise CliError(str(exc))
    if args.seed is not None:
        manifest.run.rng_seed = args.seed
    if args.workers is not None:
        manifest.run.workers = args.workers
    out_dir = _out_dir(args.out or manifest.out_dir or None, manifest.run_id)
    manifest.out_dir = out_dir
    os.makedirs(out_dir, exist_ok=True)
    scene = _load_scene(manifest.scene)
    hand = _load_hand(manifest.hand)
    manifest.eval.category = scene.category
    return manifest, scene, hand, out_dir


def cmd_evolve(args) -> int:
    manifest, scene, hand, out_dir = _prepare_run(args)
    ckpt_path = os.path.join(out_dir, CHECKPOINT_NAME)

    state = None
    if args.resume:
        if not os.path.exists(ckpt_path):
            raise CliError(f"bad-checkpoint: nothing to resume at {ckpt_path}")
        try:
            state, ckpt_run_id = records.load_checkpoint(ckpt_path)
        except RecordError:
            raise CliError(f"bad-checkpoint: refusing to resume from {ckpt_path}")
        if ckpt_run_id != manifest.run_id:
            raise CliError(f"bad-checkpoint: run_id mismatch ({ckpt_run_id})")
        print(f"resuming {manifest.run_id} at {state.completed} evaluations")
    else:
        rng = np.random.default_rng(manifest.run.rng_seed)
        seeds = seed_population(scene, hand, manifest.run.seed_mode,
                                manifest.run.population_size, rng, manifest.eval)
        state = initial_state(seeds, manifest.run, rng)

    manifest.status = "running"
    records.save_manifest(manifest, os.path.join(out_dir, MANIFEST_NAME))

    def checkpoint_cb(st):
        records.save_checkpoint(ckpt_path, st, manifest.run_id)

    try:
        result = run_evolution(scene, hand, [], manifest.archive, manifest.selection,
                               manifest.variation, manifest.run, manifest.eval,
                               state=state, checkpoint_cb=checkpoint_cb)
    except EvolutionError as exc:
        manifest.status = "failed"
        records.save_manifest(manifest, os.path.join(out_dir, MANIFEST_NAME))
        raise CliError(str(exc))

    records.save_checkpoint(ckpt_path, state, manifest.run_id)
    records.write_grasp_file(os.path.join(out_dir, SUCCESS_NAME),
                             records.success_set_records(result.success_set))
    records.write_trace(os.path.join(out_dir, TRACE_NAME), result.trace)
    manifest.status = "finished"
    records.save_manifest(manifest, os.path.join(out_dir, MANIFEST_NAME))
    print(f"run {manifest.run_id}: {result.completed} evaluations, "
          f"archive {len(result.archive)}, success set {len(result.success_set)} "
          f"(seed successes {result.seed_successes})")
    return 0


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def cmd_metrics(args) -> int:
    scene = _load_scene(args.scene)
    hand = _load_hand(args.hand)
    if not os.path.exists(args.grasps):
        raise CliError(f"grasp-file-not-found: {args.grasps}")
    rows = records.read_grasp_file(args.grasps)
    if not rows:
        raise CliError("no-grasps")
    eval_cfg = EvalConfig(category=scene.category)
    grasps, flags = [], []
    for row in rows:
        grasp = records.grasp_from_dict(row)
        result = evaluate(scene, hand, grasp, eval_cfg)
        grasps.append(grasp)
        flags.append(result.success)
    try:
        report = compute_report(grasps, flags, scene, hand)
    except MetricsError as exc:
        raise CliError(str(exc))
    payload = report.to_dict()
    text = json.dumps(payload, indent=2, ensure_ascii=False)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return 0


# ---------------------------------------------------------------------------
# train-reward
# ---------------------------------------------------------------------------

def _load_pairs(pairs_path: str, labels_path: str | None):
    labels = {}
    if labels_path:
        for rec in records.read_grasp_file(labels_path):
            labels[rec["pair_id"]] = rec["label"]
    pairs = []
    for rec in records.read_grasp_file(pairs_path):
        label = rec.get("label") or labels.get(rec["pair_id"], "unlabeled")
        pairs.append(PreferencePair(
            rec["pair_id"],
            records.grasp_from_dict(rec["grasp_a"]),
            records.grasp_from_dict(rec["grasp_b"]),
            rec["scene_id"],
            label,
        ))
    return pairs


def cmd_train_reward(args) -> int:
    scene = _load_scene(args.scene)
    hand = _load_hand(args.hand)
    pairs = [p for p in _load_pairs(args.pairs, args.labels) if p.label != "unlabeled"]
    if not pairs:
        raise CliError("no labeled pairs")
    rng = np.random.default_rng(args.seed)
    order = rng.permutation(len(pairs))
    n_holdout = int(len(pairs) * args.holdout_fraction)
    holdout = [pairs[i] for i in order[:n_holdout]]
    train_pairs = [pairs[i] for i in order[n_holdout:]]
    result = fit_reward_model(train_pairs, scene, hand, epochs=args.epochs,
                              learning_rate=args.lr, seed=args.seed, holdout=holdout)
    save_model(result.model, args.out)
    acc = "n/a" if result.holdout_accuracy is None else f"{result.holdout_accuracy:.3f}"
    print(f"trained on {len(train_pairs)} pairs (loss {result.final_loss:.4f}, "
          f"holdout accuracy {acc}); model -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------

def cmd_serve(args) -> int:
    if bool(args.checkpoint) == bool(args.config):
        raise CliError("serve needs exactly one of --checkpoint (static) or --config (live)")
    holder = ModelHolder()

    if args.checkpoint:
        if not args.scene:
            raise CliError("serve --checkpoint requires --scene")
        scene = _load_scene(args.scene)
        hand = _load_hand(args.hand)
        try:
            state, run_id = records.load_checkpoint(args.checkpoint)
        except RecordError:
            raise CliError(f"bad-checkpoint: {args.checkpoint}")
        out_dir = _out_dir(args.out, f"{run_id}-annotation")
        session = AnnotationSession(scene, hand, out_dir, holder,
                                    rng_seed=args.seed or 0, mode="static")
        session.update_archive(state.archive, state.completed)
        runner = None
    else:
        manifest, scene, hand, out_dir = _prepare_run(args)
        session = AnnotationSession(scene, hand, out_dir, holder,
                                    rng_seed=manifest.run.rng_seed, mode="live")
        rng = np.random.default_rng(manifest.run.rng_seed)
        seeds = seed_population(scene, hand, manifest.run.seed_mode,
                                manifest.run.population_size, rng, manifest.eval)
        state = initial_state(seeds, manifest.run, rng)

        def trace_cb(st):
            session.update_archive(st.archive, st.completed)

        def checkpoint_cb(st):
            records.save_checkpoint(os.path.join(out_dir, CHECKPOINT_NAME),
                                    st, manifest.run_id)

        def run():
            run_evolution(scene, hand, [], manifest.archive, manifest.selection,
                          manifest.variation, manifest.run, manifest.eval,
                          reward_fn=fitness_hook(holder, scene), state=state,
                          checkpoint_cb=checkpoint_cb, trace_cb=trace_cb)
            session.update_archive(state.archive, state.completed)

        runner = threading.Thread(target=run, daemon=True)

    static_dir = args.ui if args.ui and os.path.isdir(args.ui) else None
    server = AnnotationServer(session, port=args.port, static_dir=static_dir)
    if runner is not None:
        runner.start()
    print(f"annotation service on http://127.0.0.1:{server.port} "
          f"({session.mode} mode); labels -> {session.labels_path}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evograsp",
                                     description="evolutionary grasp synthesis")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("seed", help="write an evaluated seed population")
    p.add_argument("--scene", required=True)
    p.add_argument("--hand", default="parametric-12dof")
    p.add_argument("--mode", choices=["random", "approach-heuristic"], default="random")
    p.add_argument("--count", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_seed)

    p = sub.add_parser("evolve", help="run the evolutionary refinement")
    p.add_argument("--config", required=True, help="run manifest (JSON)")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--seed", type=int, default=None, help="override manifest rng_seed")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("metrics", help="re-evaluate a grasp file and report metrics")
    p.add_argument("--grasps", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--hand", default="parametric-12dof")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("train-reward", help="train the preference reward model")
    p.add_argument("--pairs", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument("--scene", required=True)
    p.add_argument("--hand", default="parametric-12dof")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--holdout-fraction", type=float, default=0.2)
    p.set_defaults(func=cmd_train_reward)

    p = sub.add_parser("serve", help="serve the annotation endpoints")
    p.add_argument("--checkpoint", default=None, help="static archive checkpoint")
    p.add_argument("--config", default=None, help="run manifest for a live steered run")
    p.add_argument("--scene", default=None)
    p.add_argument("--hand", default="parametric-12dof")
    p.add_argument("--port", type=int, default=8732)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--ui", default=None, help="directory of built UI assets")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
