"""Command-line entry point.

Subcommands: gen-data, train, ablate, animate, eval, gradcheck.  Every run
writes a run.json echoing the fully resolved configuration and seeds.  Exit
codes: 0 success, 2 input/contract error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .mesh import (
    MeshError,
    add_uniform_noise,
    load_obj,
    load_sequence,
    permute_vertices,
    save_obj,
    save_sequence,
)
from .losses import pmd_sequences
from .model import (
    CheckpointError,
    ModelConfig,
    MotionTransferModel,
    load_checkpoint,
    sliding_window_animate,
)
from .synth import DatasetManifest, WindowSpec, make_default_manifest, make_pair
from .tensor import GraphError, ShapeError
from .training import (
    NonFiniteGradient,
    TrainingConfig,
    TrainingDiverged,
    run_ablation,
    train,
)
from .verification import op_gradcheck_suite, toy_objective_gradcheck

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

_INPUT_ERRORS = (MeshError, ShapeError, CheckpointError, ValueError, KeyError, FileNotFoundError, NotADirectoryError)


class CliError(SystemExit):
    pass


def _load_config(path):
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _resolve_manifest(config):
    dataset = config.get("dataset", {})
    if "train_shape_seeds" in dataset:
        return DatasetManifest.from_dict(dataset)
    return make_default_manifest(**dataset)


def _resolve_model_config(config, **overrides):
    d = dict(config.get("model", {}))
    d.update(overrides)
    return ModelConfig.from_dict(d) if d else ModelConfig(**overrides)


def _resolve_training_config(config):
    return TrainingConfig.from_dict(config.get("training", {}))


def _write_run_json(out_dir, command, resolved_config, seeds, artifact_paths):
    os.makedirs(out_dir, exist_ok=True)
    record = {
        "command": command,
        "resolved_config": resolved_config,
        "seeds": seeds,
        "artifact_paths": artifact_paths,
        "tool_version": __version__,
    }
    path = os.path.join(out_dir, "run.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# -- subcommands --------------------------------------------------------------------


def cmd_gen_data(args):
    config = _load_config(args.config)
    manifest = _resolve_manifest(config)
    per_split = int(config.get("materialized_pairs", 2))
    os.makedirs(args.out, exist_ok=True)

    pairs_meta = []
    for split, motions in (("seen", manifest.seen_motion_seeds), ("unseen", manifest.unseen_motion_seeds)):
        for i in range(per_split):
            spec = WindowSpec(
                motion_seed=motions[i % len(motions)],
                driving_shape_seed=manifest.train_shape_seeds[i % len(manifest.train_shape_seeds)],
                target_shape_seed=manifest.test_shape_seeds[i % len(manifest.test_shape_seeds)],
                start_frame=0,
            )
            pair = make_pair(manifest, spec, frames=(0, manifest.frames_per_motion))
            pair_dir = os.path.join(args.out, "pairs", f"{split}_{i:04d}")
            save_sequence(pair.driving, os.path.join(pair_dir, "driving"), role="driving")
            save_sequence(pair.ground_truth, os.path.join(pair_dir, "ground_truth"), role="ground_truth")
            save_obj(pair.target, os.path.join(pair_dir, "target.obj"))
            pairs_meta.append(
                {
                    "split": split,
                    "path": os.path.relpath(pair_dir, args.out),
                    "motion_seed": spec.motion_seed,
                    "driving_shape_seed": spec.driving_shape_seed,
                    "target_shape_seed": spec.target_shape_seed,
                    "permutation": pair.permutation.tolist(),
                }
            )

    dataset_json = {"manifest": manifest.to_dict(), "pairs": pairs_meta}
    with open(os.path.join(args.out, "dataset.json"), "w", encoding="utf-8") as fh:
        json.dump(dataset_json, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_run_json(
        args.out,
        "gen-data",
        {"dataset": manifest.to_dict(), "materialized_pairs": per_split},
        {"shape_seeds": manifest.train_shape_seeds + manifest.test_shape_seeds,
         "motion_seeds": manifest.seen_motion_seeds + manifest.unseen_motion_seeds},
        {"dataset": os.path.join(args.out, "dataset.json")},
    )
    print(f"dataset written to {args.out}")
    return EXIT_OK


def _manifest_from_data_dir(path):
    with open(os.path.join(path, "dataset.json"), "r", encoding="utf-8") as fh:
        return DatasetManifest.from_dict(json.load(fh)["manifest"])


def cmd_train(args):
    config = _load_config(args.config)
    manifest = _manifest_from_data_dir(args.data)
    training = _resolve_training_config(config)
    model_config = _resolve_model_config(config, dtype=config.get("model", {}).get("dtype", "float32"))
    model = MotionTransferModel(model_config, seed=training.seed)
    results = train(model, manifest, training, args.out, resume_from=args.resume)
    with open(os.path.join(args.out, "model_config.json"), "w", encoding="utf-8") as fh:
        json.dump(model_config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_run_json(
        args.out,
        "train",
        {"training": training.to_dict(), "model": model_config.to_dict(), "dataset": manifest.to_dict()},
        {"training_seed": training.seed},
        {
            "checkpoint": os.path.join(args.out, "checkpoint.bin"),
            "log": os.path.join(args.out, "train_log.jsonl"),
            "results": os.path.join(args.out, "results.json"),
        },
    )
    print(json.dumps(results, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_ablate(args):
    config = _load_config(args.config)
    manifest = _manifest_from_data_dir(args.data)
    training = _resolve_training_config(config)
    model_config = _resolve_model_config(config, dtype=config.get("model", {}).get("dtype", "float32"))
    seeds = tuple(config.get("ablation_seeds", (0, 1, 2)))
    rows = run_ablation(manifest, training, model_config, args.out, seeds=seeds)
    _write_run_json(
        args.out,
        "ablate",
        {"training": training.to_dict(), "model": model_config.to_dict(), "dataset": manifest.to_dict()},
        {"ablation_seeds": list(seeds)},
        {"csv": os.path.join(args.out, "ablation.csv"), "table": os.path.join(args.out, "ablation.txt")},
    )
    with open(os.path.join(args.out, "ablation.txt"), "r", encoding="utf-8") as fh:
        print(fh.read(), end="")
    return EXIT_OK


def cmd_animate(args):
    state = load_checkpoint(args.checkpoint)
    config_path = os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), "model_config.json")
    if not os.path.exists(config_path):
        raise FileNotFoundError(f"model_config.json not found next to checkpoint at {config_path}")
    with open(config_path, "r", encoding="utf-8") as fh:
        model_config = ModelConfig.from_dict(json.load(fh))
    model = MotionTransferModel(model_config, seed=0)
    model.load_state({k: v for k, v in state.items() if not k.startswith(("adam.", "meta."))})

    driving, _ = load_sequence(args.driving)
    target = load_obj(args.target)
    if args.shuffle_seed is not None:
        perm = np.random.default_rng(args.shuffle_seed).permutation(target.vertex_count)
        target = permute_vertices(target, perm)
        if driving.vertex_count == target.vertex_count:
            frames = np.empty_like(driving.vertex_frames)
            frames[:, perm, :] = driving.vertex_frames
            driving = type(driving)(frames, perm[np.asarray(driving.faces)])
    if args.noise:
        driving = add_uniform_noise(driving, args.noise, seed=args.noise_seed)

    start = time.perf_counter()
    generated = sliding_window_animate(model, driving, target)
    elapsed = time.perf_counter() - start
    per_frame_ms = 1000.0 * elapsed / generated.frame_count
    save_sequence(generated, os.path.join(args.out, "generated"), role="generated")
    _write_run_json(
        args.out,
        "animate",
        {"checkpoint": args.checkpoint, "driving": args.driving, "target": args.target,
         "noise": args.noise, "model": model_config.to_dict()},
        {"noise_seed": args.noise_seed, "shuffle_seed": args.shuffle_seed},
        {"generated": os.path.join(args.out, "generated")},
    )
    print(f"{generated.frame_count} frames generated ({per_frame_ms:.1f} ms/frame)")
    return EXIT_OK


def cmd_eval(args):
    generated, _ = load_sequence(args.generated)
    truth, _ = load_sequence(args.ground_truth)
    mean, per_frame = pmd_sequences(generated, truth)
    print(json.dumps({"pmd_mean": mean, "pmd_per_frame": per_frame.tolist()}, indent=2))
    return EXIT_OK


def cmd_gradcheck(args):
    ok = True
    for name, report in op_gradcheck_suite():
        print(f"op {name}: {report}")
        ok = ok and report.passed
    full = toy_objective_gradcheck()
    print(f"full objective (toy model): {full}")
    ok = ok and full.passed
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser():
    parser = argparse.ArgumentParser(prog="meshmotion", description="Mesh motion transfer toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="train the ablation variants and tabulate PMD")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("animate", help="animate a target mesh with a driving sequence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--driving", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--shuffle-seed", type=int, default=None)
    p.set_defaults(func=cmd_animate)

    p = sub.add_parser("eval", help="PMD between a generated and ground-truth sequence")
    p.add_argument("--generated", required=True)
    p.add_argument("--ground-truth", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference verification suite")
    p.add_argument("--size", choices=["toy"], default="toy")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TrainingDiverged, NonFiniteGradient, GraphError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
