"""Optimizer, schedule, training-loop determinism, resume, logging."""

import json
import os

import numpy as np
import pytest

from meshmotion.model import ModelConfig, MotionTransferModel, load_checkpoint
from meshmotion.synth import make_default_manifest, sample_epoch
from meshmotion.tensor import Tensor
from meshmotion.training import (
    ABLATION_VARIANTS,
    Adam,
    NonFiniteGradient,
    TrainingConfig,
    _batch_arrays,
    _batched_objective,
    _variant_setup,
    evaluate_pmd,
    evaluation_pairs,
    lr_at,
    train,
)


def tiny_manifest():
    """Small split so training-loop tests stay fast."""
    return make_default_manifest(seen_motions=4, unseen_motions=2, train_shapes=2, test_shapes=2)


def tiny_model_config(**overrides):
    base = dict(
        channels=8,
        extractor_widths=(4, 8),
        encoder_widths=(8, 8, 4, 4),
        window=3,
        dtype="float32",
    )
    base.update(overrides)
    return ModelConfig(**base)


def tiny_training_config(**overrides):
    base = dict(
        learning_rate=1e-3,
        milestones=(80, 120, 160),
        epochs=2,
        pairs_per_epoch=4,
        batch_size=2,
        eval_pairs=2,
        checkpoint_every=1,
        seed=0,
    )
    base.update(overrides)
    return TrainingConfig(**base)


class TestConfig:
    def test_defaults_match_paper_recipe(self):
        cfg = TrainingConfig()
        assert cfg.learning_rate == 5e-5
        assert cfg.milestones == (80, 120, 160)
        assert cfg.schedule_gamma == 0.1
        assert cfg.epochs == 200
        assert cfg.batch_size == 2

    def test_milestones_must_increase(self):
        with pytest.raises(ValueError):
            TrainingConfig(milestones=(80, 80, 160))

    def test_dict_round_trip(self):
        cfg = tiny_training_config()
        assert TrainingConfig.from_dict(cfg.to_dict()) == cfg


class TestSchedule:
    def test_multistep_decay(self):
        cfg = TrainingConfig(learning_rate=1e-2, milestones=(5, 10), schedule_gamma=0.1)
        assert lr_at(0, cfg) == 1e-2
        assert lr_at(4, cfg) == 1e-2
        assert lr_at(5, cfg) == pytest.approx(1e-3)
        assert lr_at(10, cfg) == pytest.approx(1e-4)
        assert lr_at(100, cfg) == pytest.approx(1e-4)

    def test_negative_epoch_rejected(self):
        with pytest.raises(ValueError):
            lr_at(-1, TrainingConfig())


class TestAdam:
    def test_first_step_magnitude(self):
        # with bias correction, step 1 moves by ~lr in the gradient direction
        p = Tensor(np.zeros(3), requires_grad=True)
        p.grad = np.array([1.0, -1.0, 2.0])
        opt = Adam({"p": p})
        opt.step(0.1)
        np.testing.assert_allclose(p.data, [-0.1, 0.1, -0.1], atol=1e-6)

    def test_converges_on_quadratic(self):
        p = Tensor(np.array([5.0, -3.0]), requires_grad=True)
        opt = Adam({"p": p})
        for _ in range(500):
            p.grad = 2 * p.data
            opt.step(0.05)
        np.testing.assert_allclose(p.data, 0.0, atol=1e-3)

    def test_non_finite_gradient_raises(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        p.grad = np.array([np.nan, 0.0])
        with pytest.raises(NonFiniteGradient, match="'p'"):
            Adam({"p": p}).step(0.1)

    def test_scalar_parameter_stays_ndarray(self):
        p = Tensor(np.zeros(()), requires_grad=True)
        opt = Adam({"g": p})
        p.grad = np.asarray(1.0)
        opt.step(0.1)
        assert isinstance(p.data, np.ndarray)

    def test_state_round_trip(self):
        p = Tensor(np.ones(3), requires_grad=True)
        opt = Adam({"p": p})
        p.grad = np.ones(3)
        opt.step(0.1)
        state = opt.state()
        clone = Adam({"p": Tensor(np.ones(3), requires_grad=True)})
        clone.load_state(state)
        assert clone.step_count == 1
        np.testing.assert_array_equal(clone.m["p"], opt.m["p"])
        np.testing.assert_array_equal(clone.v["p"], opt.v["p"])


class TestObjective:
    def test_overfit_single_batch(self):
        # loss strictly decreases over the first 20 steps on one fixed pair
        manifest = tiny_manifest()
        model = MotionTransferModel(tiny_model_config(), seed=0)
        specs = sample_epoch(manifest, 0, 1)
        drive, target, truth, edges = _batch_arrays(manifest, specs)
        opt = Adam(model.params)
        cfg = tiny_training_config()
        losses = []
        for _ in range(20):
            model.zero_grad()
            total, parts = _batched_objective(model, drive, target, truth, edges, cfg.weights, cfg.loss_options)
            total.backward()
            opt.step(1e-3)
            losses.append(parts["loss_total"])
        assert all(b < a for a, b in zip(losses, losses[1:]))


class TestTrainLoop:
    @pytest.fixture(scope="class")
    @staticmethod
    def run(tmp_path_factory):
        out = tmp_path_factory.mktemp("run")
        manifest = tiny_manifest()
        model = MotionTransferModel(tiny_model_config(), seed=0)
        results = train(model, manifest, tiny_training_config(), str(out))
        return out, manifest, model, results

    def test_results_recorded(self, run):
        _, _, _, results = run
        assert results["epochs"] == 2
        assert np.isfinite(results["pmd_seen"])
        assert results["pmd_seen_untrained"] > 0

    def test_log_is_line_delimited_json(self, run):
        out, _, _, _ = run
        with open(out / "train_log.jsonl") as fh:
            records = [json.loads(line) for line in fh]
        assert len(records) == 2 * 2  # epochs * steps per epoch
        for r in records:
            assert set(r) == {"epoch", "step", "loss_r", "loss_m", "loss_a", "loss_total"}

    def test_checkpoint_contains_optimizer_state(self, run):
        out, _, _, _ = run
        state = load_checkpoint(out / "checkpoint.bin")
        assert "meta.epoch" in state
        assert any(k.startswith("adam.m.") for k in state)

    def test_identical_seeds_identical_artifacts(self, run, tmp_path):
        out, manifest, _, results = run
        model = MotionTransferModel(tiny_model_config(), seed=0)
        again = train(model, manifest, tiny_training_config(), str(tmp_path))
        assert again == results
        assert (tmp_path / "checkpoint.bin").read_bytes() == (out / "checkpoint.bin").read_bytes()
        assert (tmp_path / "train_log.jsonl").read_text() == (out / "train_log.jsonl").read_text()

    def test_resume_reproduces_unresumed_run(self, run, tmp_path):
        out, manifest, _, _ = run
        # train 1 epoch, checkpoint, then resume for the second
        cfg1 = tiny_training_config(epochs=1)
        model = MotionTransferModel(tiny_model_config(), seed=0)
        train(model, manifest, cfg1, str(tmp_path))
        cfg2 = tiny_training_config(epochs=2)
        resumed = MotionTransferModel(tiny_model_config(), seed=0)
        train(resumed, manifest, cfg2, str(tmp_path), resume_from=str(tmp_path / "checkpoint.bin"))
        assert (tmp_path / "checkpoint.bin").read_bytes() == (out / "checkpoint.bin").read_bytes()

    def test_zero_epochs_gives_baseline_only(self, tmp_path):
        manifest = tiny_manifest()
        model = MotionTransferModel(tiny_model_config(), seed=0)
        results = train(model, manifest, tiny_training_config(epochs=0, checkpoint_every=0), str(tmp_path))
        assert results["pmd_seen"] == results["pmd_seen_untrained"]
        assert os.path.exists(tmp_path / "checkpoint.bin")


class TestEvaluation:
    def test_evaluation_pairs_use_test_shapes(self):
        manifest = tiny_manifest()
        for pair in evaluation_pairs(manifest, "seen", 3):
            assert pair.spec.target_shape_seed in manifest.test_shape_seeds
            assert pair.spec.motion_seed in manifest.seen_motion_seeds

    def test_unseen_split(self):
        manifest = tiny_manifest()
        for pair in evaluation_pairs(manifest, "unseen", 2):
            assert pair.spec.motion_seed in manifest.unseen_motion_seeds

    def test_evaluate_pmd_finite(self):
        manifest = tiny_manifest()
        model = MotionTransferModel(tiny_model_config(), seed=0)
        pairs = evaluation_pairs(manifest, "seen", 2)
        value = evaluate_pmd(model, pairs)
        assert np.isfinite(value) and value > 0

    def test_noise_option_changes_result(self):
        manifest = tiny_manifest()
        model = MotionTransferModel(tiny_model_config(), seed=0)
        pairs = evaluation_pairs(manifest, "seen", 1)
        assert evaluate_pmd(model, pairs, noise=0.05) != evaluate_pmd(model, pairs)


class TestVariants:
    def test_five_variants(self):
        assert ABLATION_VARIANTS == ("regression_head", "without_head", "motion_only", "appearance_only", "full")

    def test_variant_weight_wiring(self):
        cfg = tiny_training_config()
        mc = tiny_model_config()
        _, w = _variant_setup("without_head", mc, cfg)
        assert w.motion == 0.0 and w.appearance == 0.0
        _, w = _variant_setup("motion_only", mc, cfg)
        assert w.motion > 0 and w.appearance == 0.0
        _, w = _variant_setup("appearance_only", mc, cfg)
        assert w.motion == 0.0 and w.appearance > 0
        vc, _ = _variant_setup("regression_head", mc, cfg)
        assert vc.output_head == "regression"

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            _variant_setup("bogus", tiny_model_config(), tiny_training_config())
