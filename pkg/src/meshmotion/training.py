"""Optimizer, schedule, training loop, evaluation, and the ablation runner."""

from __future__ import annotations

import csv
import json
import os
import statistics
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .losses import (
    LossOptions,
    LossWeights,
    appearance_loss,
    motion_loss,
    pmd,
    pmd_sequences,
    reconstruction_loss,
)
from .mesh import add_uniform_noise, build_neighborhood
from .tensor import Tensor
from .model import (
    ModelConfig,
    MotionTransferModel,
    load_checkpoint,
    save_checkpoint,
    sliding_window_animate,
    window_regression_frames,
)
from .synth import WindowSpec, make_pair, sample_epoch

__all__ = [
    "TrainingConfig",
    "Adam",
    "NonFiniteGradient",
    "TrainingDiverged",
    "lr_at",
    "train",
    "evaluate_pmd",
    "evaluation_pairs",
    "run_ablation",
    "ABLATION_VARIANTS",
]


class NonFiniteGradient(RuntimeError):
    """A parameter gradient contains NaN/Inf; names the parameter."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; the last good checkpoint is preserved."""


@dataclass
class TrainingConfig:
    learning_rate: float = 5e-5
    milestones: tuple = (80, 120, 160)
    schedule_gamma: float = 0.1
    epochs: int = 200
    batch_size: int = 2
    window: int = 3
    weights: LossWeights = field(default_factory=LossWeights)
    loss_options: LossOptions = field(default_factory=LossOptions)
    seed: int = 0
    pairs_per_epoch: int = 500
    checkpoint_every: int = 10
    eval_pairs: int = 4

    def __post_init__(self):
        ms = tuple(self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError("milestones must be strictly increasing")
        if self.learning_rate <= 0 or self.schedule_gamma <= 0:
            raise ValueError("rates must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        self.milestones = ms

    def to_dict(self):
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        d["weights"] = asdict(self.weights)
        d["loss_options"] = asdict(self.loss_options)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["milestones"] = tuple(d.get("milestones", (80, 120, 160)))
        if "weights" in d:
            d["weights"] = LossWeights(**d["weights"])
        if "loss_options" in d:
            d["loss_options"] = LossOptions(**d["loss_options"])
        return cls(**d)


def lr_at(epoch, config):
    """Base rate times gamma per milestone already reached."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    drops = sum(1 for m in config.milestones if m <= epoch)
    return config.learning_rate * config.schedule_gamma**drops


class Adam:
    """Standard Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr):
        self.step_count += 1
        t = self.step_count
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise NonFiniteGradient(f"non-finite gradient for parameter {name!r}")
            dt = p.data.dtype
            b1 = dt.type(self.beta1)
            b2 = dt.type(self.beta2)
            self.m[name] = b1 * self.m[name] + (1 - b1) * g.astype(dt)
            self.v[name] = b2 * self.v[name] + (1 - b2) * (g.astype(dt) ** 2)
            m_hat = self.m[name] / (1 - self.beta1**t)
            v_hat = self.v[name] / (1 - self.beta2**t)
            # np.asarray keeps 0-d parameters (attention gains) as ndarrays;
            # numpy binary ops on 0-d arrays return scalars otherwise
            p.data = np.asarray(p.data - dt.type(lr) * m_hat / (np.sqrt(v_hat) + dt.type(self.eps)))

    def state(self):
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        out["adam.step"] = np.asarray(float(self.step_count))
        return out

    def load_state(self, state):
        for k in self.m:
            self.m[k] = np.asarray(state[f"adam.m.{k}"], dtype=self.m[k].dtype).reshape(self.m[k].shape)
            self.v[k] = np.asarray(state[f"adam.v.{k}"], dtype=self.v[k].dtype).reshape(self.v[k].shape)
        self.step_count = int(round(float(state["adam.step"])))


# -- evaluation ---------------------------------------------------------------------


def evaluation_pairs(manifest, split, count):
    """Deterministic held-out pairs: test-shape targets driven by seen or
    unseen motions (driving identities from the train shapes)."""
    motions = manifest.seen_motion_seeds if split == "seen" else manifest.unseen_motion_seeds
    specs = []
    for i in range(count):
        specs.append(
            WindowSpec(
                motion_seed=motions[i % len(motions)],
                driving_shape_seed=manifest.train_shape_seeds[i % len(manifest.train_shape_seeds)],
                target_shape_seed=manifest.test_shape_seeds[i % len(manifest.test_shape_seeds)],
                start_frame=0,
            )
        )
    return [make_pair(manifest, s, frames=(0, manifest.frames_per_motion)) for s in specs]


def evaluate_pmd(model, pairs, noise=None):
    """Mean PMD of the model over full driving sequences (sliding window).

    For the regression-head variant the metric uses the one frame each
    window produces, compared against the matching ground-truth frames.
    """
    values = []
    for k, pair in enumerate(pairs):
        driving = pair.driving
        if noise:
            driving = add_uniform_noise(driving, noise, seed=k)
        if model.config.output_head == "sequence":
            generated = sliding_window_animate(model, driving, pair.target)
            value, _ = pmd_sequences(generated, pair.ground_truth)
        else:
            frames, idx = window_regression_frames(model, driving, pair.target)
            value = pmd(frames, pair.ground_truth.vertex_frames[idx])
        values.append(value)
    return float(np.mean(values))


# -- training loop ------------------------------------------------------------------


def _batch_arrays(manifest, specs):
    drive, target, truth, edge_list = [], [], [], []
    for spec in specs:
        pair = make_pair(manifest, spec)
        drive.append(pair.driving.vertex_frames.transpose(0, 2, 1))
        target.append(pair.target.vertices.T)
        truth.append(pair.ground_truth.vertex_frames.transpose(0, 2, 1))
        edge_list.append(build_neighborhood(pair.target).directed_edges())
    return np.stack(drive), np.stack(target), np.stack(truth), edge_list


def _batched_objective(model, drive, target, truth, edge_list, weights, options):
    """Forward + full objective for one batch; appearance edges differ per
    sample (independent shuffles), so that term is averaged sample-wise."""
    gen = model.forward_batch(drive, target)
    dt = gen.dtype
    l_r = reconstruction_loss(gen, truth)
    ref = drive if options.motion_reference == "driving" else truth
    l_m = motion_loss(gen, ref, options)
    n = gen.shape[0]
    l_a = None
    for i, edges in enumerate(edge_list):
        gen_i = T.slice_axis(gen, 0, i, i + 1)
        term = appearance_loss(gen_i, target[i : i + 1], edges, options)
        l_a = term if l_a is None else T.add(l_a, term)
    l_a = T.mul(l_a, Tensor(np.asarray(1.0 / n, dtype=dt)))
    total = T.add(
        T.add(
            T.mul(Tensor(np.asarray(weights.reconstruction, dtype=dt)), l_r),
            T.mul(Tensor(np.asarray(weights.motion, dtype=dt)), l_m),
        ),
        T.mul(Tensor(np.asarray(weights.appearance, dtype=dt)), l_a),
    )
    components = {"loss_r": l_r.item(), "loss_m": l_m.item(), "loss_a": l_a.item(), "loss_total": total.item()}
    return total, components


def _regression_objective(model, drive, target, truth):
    gen = model.forward_regression_batch(drive, target)  # (N, 3, V)
    last = truth[:, -1:, :, :]
    gen4 = gen.reshape((gen.shape[0], 1, 3, gen.shape[-1]))
    l_r = reconstruction_loss(gen4, last)
    return l_r, {"loss_r": l_r.item(), "loss_m": 0.0, "loss_a": 0.0, "loss_total": l_r.item()}


def _save_training_checkpoint(model, optimizer, epoch, path):
    state = model.state()
    state.update(optimizer.state())
    state["meta.epoch"] = np.asarray(float(epoch))
    save_checkpoint(state, path)


def _load_training_checkpoint(model, optimizer, path):
    state = load_checkpoint(path)
    model.load_state({k: v for k, v in state.items() if not k.startswith(("adam.", "meta."))})
    optimizer.load_state(state)
    return int(round(float(state["meta.epoch"])))


def train(model, manifest, config, out_dir, resume_from=None, log_name="train_log.jsonl"):
    """Run the training loop; writes line-delimited JSON logs, periodic
    checkpoints, and a results.json with held-out PMD before/after.

    Fully deterministic: (seed, config, manifest) fix the whole trajectory,
    and resuming from a checkpoint at an epoch boundary reproduces the
    unresumed run bit-exactly.
    """
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, log_name)
    ckpt_path = os.path.join(out_dir, "checkpoint.bin")
    optimizer = Adam(model.params)

    start_epoch = 0
    log_mode = "w"
    if resume_from is not None:
        start_epoch = _load_training_checkpoint(model, optimizer, resume_from)
        log_mode = "a"

    seen_eval = evaluation_pairs(manifest, "seen", config.eval_pairs)
    unseen_eval = evaluation_pairs(manifest, "unseen", config.eval_pairs)
    baseline_seen = evaluate_pmd(model, seen_eval) if start_epoch == 0 else None
    baseline_unseen = evaluate_pmd(model, unseen_eval) if start_epoch == 0 else None

    step = optimizer.step_count
    with open(log_path, log_mode, encoding="utf-8") as log:
        for epoch in range(start_epoch, config.epochs):
            lr = lr_at(epoch, config)
            windows = sample_epoch(manifest, [config.seed, epoch], config.pairs_per_epoch)
            for lo in range(0, len(windows), config.batch_size):
                specs = windows[lo : lo + config.batch_size]
                drive, target, truth, edge_list = _batch_arrays(manifest, specs)
                model.zero_grad()
                if model.config.output_head == "sequence":
                    total, components = _batched_objective(
                        model, drive, target, truth, edge_list, config.weights, config.loss_options
                    )
                else:
                    total, components = _regression_objective(model, drive, target, truth)
                if not np.isfinite(components["loss_total"]):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, step {step}; last checkpoint kept at {ckpt_path}"
                    )
                total.backward()
                optimizer.step(lr)
                step += 1
                record = {"epoch": epoch, "step": step}
                record.update(components)
                log.write(json.dumps(record, sort_keys=True) + "\n")
            if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                _save_training_checkpoint(model, optimizer, epoch + 1, ckpt_path)
    _save_training_checkpoint(model, optimizer, config.epochs, ckpt_path)

    results = {
        "pmd_seen": evaluate_pmd(model, seen_eval),
        "pmd_unseen": evaluate_pmd(model, unseen_eval),
        "pmd_seen_untrained": baseline_seen,
        "pmd_unseen_untrained": baseline_unseen,
        "epochs": config.epochs,
        "steps": step,
        "parameters": model.parameter_count(),
    }
    with open(os.path.join(out_dir, "results.json"), "w", encoding="utf-8") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return results


# -- ablation -------------------------------------------------------------------------

ABLATION_VARIANTS = ("regression_head", "without_head", "motion_only", "appearance_only", "full")


def _variant_setup(variant, model_config, config):
    w = config.weights
    if variant == "regression_head":
        mc = ModelConfig(**{**model_config.to_dict(), "output_head": "regression"})
        return mc, LossWeights(w.reconstruction, 0.0, 0.0)
    mc = ModelConfig(**{**model_config.to_dict(), "output_head": "sequence"})
    if variant == "without_head":
        return mc, LossWeights(w.reconstruction, 0.0, 0.0)
    if variant == "motion_only":
        return mc, LossWeights(w.reconstruction, w.motion, 0.0)
    if variant == "appearance_only":
        return mc, LossWeights(w.reconstruction, 0.0, w.appearance)
    if variant == "full":
        return mc, w
    raise ValueError(f"unknown ablation variant {variant!r}")


def run_ablation(manifest, config, model_config, out_dir, seeds=(0, 1, 2), variants=ABLATION_VARIANTS):
    """Train each variant under identical seeds and budget; report per-seed
    and median seen-motion PMD as CSV plus an aligned text table."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for variant in variants:
        mc, weights = _variant_setup(variant, model_config, config)
        pmds = []
        for seed in seeds:
            run_cfg = TrainingConfig.from_dict({**config.to_dict(), "seed": int(seed), "weights": asdict(weights)})
            model = MotionTransferModel(mc, seed=int(seed))
            run_dir = os.path.join(out_dir, f"{variant}_seed{seed}")
            results = train(model, manifest, run_cfg, run_dir)
            pmds.append(results["pmd_seen"])
        rows.append({"variant": variant, "pmd_per_seed": pmds, "pmd_median": statistics.median(pmds)})

    csv_path = os.path.join(out_dir, "ablation.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant"] + [f"pmd_seed{s}" for s in seeds] + ["pmd_median"])
        for row in rows:
            writer.writerow([row["variant"]] + [f"{v:.8e}" for v in row["pmd_per_seed"]] + [f"{row['pmd_median']:.8e}"])

    txt_path = os.path.join(out_dir, "ablation.txt")
    with open(txt_path, "w", encoding="utf-8") as fh:
        name_w = max(len(r["variant"]) for r in rows)
        fh.write(f"{'variant'.ljust(name_w)}  median seen-motion PMD\n")
        for row in sorted(rows, key=lambda r: -r["pmd_median"]):
            fh.write(f"{row['variant'].ljust(name_w)}  {row['pmd_median']:.8e}\n")
    return rows
