"""Structural identities of the motion-transfer network, checked numerically:
the zero-gamma residual identity, softmax row sums, output bounds, and joint
permutation equivariance.

Run:  python3 demos/03_model_identities.py
"""

import numpy as np

from meshmotion import tensor as T
from meshmotion.mesh import Mesh, MeshSequence, permute_vertices
from meshmotion.model import MotionTransferModel
from meshmotion.tensor import Tensor
from meshmotion.verification import grid_mesh, toy_model_config

rng = np.random.default_rng(0)
model = MotionTransferModel(toy_model_config(), seed=0)
mesh = grid_mesh(4, 6)
v = mesh.vertex_count
drive = mesh.vertices.T[None, None] + rng.uniform(-0.2, 0.2, size=(1, 3, 3, v))
target_arr = mesh.vertices.T[None] + rng.uniform(-0.1, 0.1, size=(1, 3, v))

# 1. Residual identity: gamma starts at 0, so attention contributes nothing.
z = model.extract_features(Tensor(drive))
print("attention == identity at init:", np.array_equal(model.attention(z, 0).data, z.data))

# 2. Attention rows are a probability distribution over vertices.
q = model._linear("enc.0.q", z)
k = model._linear("enc.0.k", z)
w = T.softmax(T.matmul(T.transpose_last2(q), k), axis=-1)
print("max |row sum - 1| =", np.abs(w.data.sum(axis=-1) - 1).max())

# 3. The tanh head keeps every coordinate strictly inside (-s, s).
out = model.forward_batch(drive, target_arr)
print("output bound:", np.abs(out.data).max(), "< s =", model.config.tanh_scale)

# 4. Permuting the vertices of both inputs permutes the output the same way.
for p in model.params.values():  # move gamma off 0 so attention participates
    p.data = np.asarray(p.data + rng.uniform(-0.05, 0.05, size=p.data.shape))
driving = MeshSequence(drive[0].transpose(0, 2, 1), mesh.faces)
target = Mesh(target_arr[0].T, mesh.faces)
base = model.forward(driving, target)

perm = rng.permutation(v)
p_frames = np.empty_like(driving.vertex_frames)
p_frames[:, perm, :] = driving.vertex_frames
p_out = model.forward(
    MeshSequence(p_frames, perm[np.asarray(driving.faces)]), permute_vertices(target, perm)
)
gap = np.abs(p_out.vertex_frames[:, perm, :] - base.vertex_frames).max()
print("permutation equivariance gap:", gap)
