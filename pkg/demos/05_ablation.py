"""Miniature version of the loss-ablation experiment.

Trains three model variants under identical seeds and budget — the
single-frame regression head, the multi-frame model with auxiliary losses
disabled, and the full objective — then prints their seen-motion PMDs.
The acceptance-scale version (30 epochs, 3 seeds) lives in the test suite
and the `meshmotion ablate` subcommand; this demo uses a tiny budget so it
finishes in about a minute.

Run:  python3 demos/05_ablation.py
"""

from meshmotion.model import ModelConfig
from meshmotion.synth import DatasetManifest, GeometryConfig, MotionConfig
from meshmotion.training import TrainingConfig, run_ablation

manifest = DatasetManifest(
    geometry=GeometryConfig(),
    motion=MotionConfig(),
    train_shape_seeds=tuple(range(1000, 1004)),
    test_shape_seeds=tuple(range(2000, 2002)),
    seen_motion_seeds=tuple(range(3000, 3008)),
    unseen_motion_seeds=tuple(range(4000, 4002)),
    frames_per_motion=12,
)
model_config = ModelConfig(
    channels=16, extractor_widths=(8, 16), encoder_widths=(16, 8, 8, 8), window=3, dtype="float32"
)
training = TrainingConfig(
    learning_rate=1e-3, milestones=(6, 9), epochs=8, pairs_per_epoch=24,
    checkpoint_every=0, eval_pairs=4,
)

rows = run_ablation(
    manifest, training, model_config, "/tmp/meshmotion_demo_ablation",
    seeds=(0,), variants=("regression_head", "without_head", "full"),
)
print(f"{'variant':<18} {'median seen PMD':>16}")
for row in rows:
    print(f"{row['variant']:<18} {row['pmd_median']:>16.6f}")
print("\n(full table with per-seed columns: /tmp/meshmotion_demo_ablation/ablation.csv)")
