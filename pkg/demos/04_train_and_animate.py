"""Train a small model on the synthetic dataset, then animate a held-out
target shape with a held-out driving sequence and measure PMD.

Run:  python3 demos/04_train_and_animate.py [out_dir]
(takes a couple of minutes on a laptop CPU)
"""

import sys

from meshmotion.mesh import save_sequence
from meshmotion.model import ModelConfig, MotionTransferModel, sliding_window_animate
from meshmotion.losses import pmd_sequences
from meshmotion.synth import make_default_manifest
from meshmotion.training import TrainingConfig, evaluation_pairs, train

out_dir = sys.argv[1] if len(sys.argv) > 1 else "/tmp/meshmotion_demo_run"

manifest = make_default_manifest()
model_config = ModelConfig(
    channels=64, extractor_widths=(16, 32), encoder_widths=(64, 32, 32, 16), window=3, dtype="float32"
)
training = TrainingConfig(
    learning_rate=1e-3, milestones=(12, 18, 24), epochs=15, pairs_per_epoch=60, eval_pairs=4, seed=0
)

model = MotionTransferModel(model_config, seed=0)
results = train(model, manifest, training, out_dir)
print(f"seen-motion PMD: {results['pmd_seen']:.5f} (untrained {results['pmd_seen_untrained']:.5f})")
print(f"unseen-motion PMD: {results['pmd_unseen']:.5f}")

# Animate one evaluation pair end to end and compare against ground truth.
pair = evaluation_pairs(manifest, "seen", 1)[0]
generated = sliding_window_animate(model, pair.driving, pair.target)
value, per_frame = pmd_sequences(generated, pair.ground_truth)
print(f"animated {generated.frame_count} frames, PMD {value:.5f} (worst frame {per_frame.max():.5f})")
save_sequence(generated, f"{out_dir}/generated", role="generated")
print(f"generated sequence written to {out_dir}/generated")
