"""The synthetic limb-chain dataset: shapes, motions, skinning, and the
pairing protocol (driving sequence, static target, ground truth).

Run:  python3 demos/02_synthetic_dataset.py [out_dir]
"""

import sys

import numpy as np

from meshmotion.mesh import save_sequence, save_obj
from meshmotion.synth import (
    WindowSpec,
    generate_motion,
    generate_shape,
    make_default_manifest,
    make_pair,
    rest_mesh,
    skin_sequence,
)

out_dir = sys.argv[1] if len(sys.argv) > 1 else "/tmp/meshmotion_demo_data"

# A shape is a chain of tube "bones" with random lengths/radii.
shape = generate_shape(seed=1000)
mesh = rest_mesh(shape)
print(f"shape {shape.seed}: {mesh} lengths={np.round(shape.lengths, 2)}")

# A motion is a smooth sum of sinusoids over the joint angles.
motion = generate_motion(seed=3000, frame_count=30, bone_count=shape.bone_count)
seq = skin_sequence(shape, motion)
step = np.abs(np.diff(seq.vertex_frames, axis=0)).mean()
print(f"30-frame motion, mean per-frame displacement {step:.4f}")

# The training protocol pairs one motion with two identities: the driving
# shape performs it, the target shape is what we want re-animated, and the
# ground truth is the target shape performing the same motion.  All three
# share one random vertex permutation per sample.
manifest = make_default_manifest()
spec = WindowSpec(motion_seed=3000, driving_shape_seed=1000, target_shape_seed=2000, start_frame=0)
pair = make_pair(manifest, spec, frames=(0, manifest.frames_per_motion))
print(f"driving {pair.driving}, target {pair.target}, gt {pair.ground_truth}")

save_sequence(pair.driving, f"{out_dir}/driving", role="driving")
save_sequence(pair.ground_truth, f"{out_dir}/ground_truth", role="ground_truth")
save_obj(pair.target, f"{out_dir}/target.obj")
print(f"OBJ files written under {out_dir}")
