"""Training objectives and the evaluation metric.

All losses take the generated sequence as a (N, T, 3, V) tensor (so they can
sit on the autodiff record) and reference data as plain arrays.  Mesh-level
convenience wrappers accept MeshSequence / Mesh values.

The per-term differences of the motion and appearance penalties are passed
through |.| by default ("abs"); a squared form is available via `term`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "LossWeights",
    "LossOptions",
    "reconstruction_loss",
    "motion_loss",
    "appearance_loss",
    "full_objective",
    "pmd",
    "pmd_sequences",
    "seq_to_batch",
    "mesh_to_batch",
]


@dataclass(frozen=True)
class LossWeights:
    reconstruction: float = 1.0
    motion: float = 0.0005
    appearance: float = 0.0005

    def __post_init__(self):
        if min(self.reconstruction, self.motion, self.appearance) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class LossOptions:
    term: str = "abs"                     # "abs" | "square" per-term penalty
    motion_eps: float = 1e-8              # guards frozen driving frames
    motion_reference: str = "driving"     # "driving" | "ground_truth"

    def __post_init__(self):
        if self.term not in ("abs", "square"):
            raise ValueError("term must be 'abs' or 'square'")
        if self.motion_reference not in ("driving", "ground_truth"):
            raise ValueError("motion_reference must be 'driving' or 'ground_truth'")


def seq_to_batch(seq):
    """MeshSequence -> (1, T, 3, V) array."""
    return seq.vertex_frames.transpose(0, 2, 1)[None]


def mesh_to_batch(mesh):
    """Mesh -> (1, 3, V) array."""
    return mesh.vertices.T[None]


def _as_tensor(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _check_batch(gen, ref, opname):
    if tuple(gen.shape) != tuple(ref.shape):
        raise T.ShapeError(f"{opname}: shape mismatch {tuple(gen.shape)} vs {tuple(ref.shape)}")


def _term(x, options):
    return T.absval(x) if options.term == "abs" else T.mul(x, x)


def reconstruction_loss(gen, truth):
    """Mean over frames and vertices of the squared vertex distance."""
    truth = np.asarray(truth, dtype=gen.dtype)
    _check_batch(gen, truth, "reconstruction_loss")
    n, t, _, v = gen.shape
    diff = T.sub(gen, Tensor(truth))
    return T.mul(T.tsum(T.mul(diff, diff)), Tensor(np.asarray(1.0 / (n * t * v), dtype=gen.dtype)))


def motion_loss(gen, driving, options=LossOptions()):
    """Consistency of per-step kinetic ratios.

    r_t = |gen_t - gen_{t-1}|_F^2 / (|drive_t - drive_{t-1}|_F^2 + eps);
    the loss averages the per-step penalty on r_{t-1} - r_t, so it vanishes
    when the generated motion is any uniform rescaling of the driving one.
    """
    driving = np.asarray(driving, dtype=gen.dtype)
    _check_batch(gen, driving, "motion_loss")
    n, t = gen.shape[0], gen.shape[1]
    if t < 3:
        raise T.ShapeError(f"motion_loss needs at least 3 frames, got {t}")
    head = T.slice_axis(gen, 1, 1, t)
    tail = T.slice_axis(gen, 1, 0, t - 1)
    gen_sq = T.tsum(T.mul(T.sub(head, tail), T.sub(head, tail)), axis=(2, 3))  # (N, T-1)
    drv = driving[:, 1:] - driving[:, :-1]
    drv_sq = (drv * drv).sum(axis=(2, 3)) + options.motion_eps
    ratios = T.div(gen_sq, Tensor(drv_sq.astype(gen.dtype)))
    step = T.sub(T.slice_axis(ratios, 1, 0, t - 2), T.slice_axis(ratios, 1, 1, t - 1))
    total = T.tsum(_term(step, options))
    return T.mul(total, Tensor(np.asarray(1.0 / ((t - 2) * n), dtype=gen.dtype)))


def appearance_loss(gen, target, edges, options=LossOptions()):
    """Local distortion between generated frames and the target mesh.

    For each directed edge (p, u) of the target topology and each frame, the
    penalty on |p - u|^2 (generated) minus |p - u|^2 (target), averaged over
    frames and vertices.  `edges` is the (p, u) index pair from
    Neighborhood.directed_edges(), so every undirected edge counts twice.
    """
    target = np.asarray(target, dtype=gen.dtype)
    p_idx, u_idx = edges
    n, t, _, v = gen.shape
    if target.shape != (n, 3, v):
        raise T.ShapeError(f"appearance_loss: target shape {target.shape} does not match generated {tuple(gen.shape)}")
    dp = T.sub(T.gather_last(gen, p_idx), T.gather_last(gen, u_idx))
    gen_sq = T.tsum(T.mul(dp, dp), axis=2)  # (N, T, E)
    tdiff = target[:, :, p_idx] - target[:, :, u_idx]
    t_sq = (tdiff * tdiff).sum(axis=1)[:, None, :]  # (N, 1, E)
    penalty = _term(T.sub(gen_sq, Tensor(np.broadcast_to(t_sq, (n, t, t_sq.shape[-1])).astype(gen.dtype).copy())), options)
    return T.mul(T.tsum(penalty), Tensor(np.asarray(1.0 / (n * t * v), dtype=gen.dtype)))


def full_objective(gen, truth, driving, target, edges, weights=LossWeights(), options=LossOptions()):
    """Weighted sum of the three losses.

    Returns (total tensor, components dict of floats for logging).
    """
    dt = gen.dtype
    l_r = reconstruction_loss(gen, truth)
    l_m = motion_loss(gen, driving if options.motion_reference == "driving" else truth, options)
    l_a = appearance_loss(gen, target, edges, options)
    total = T.add(
        T.add(
            T.mul(Tensor(np.asarray(weights.reconstruction, dtype=dt)), l_r),
            T.mul(Tensor(np.asarray(weights.motion, dtype=dt)), l_m),
        ),
        T.mul(Tensor(np.asarray(weights.appearance, dtype=dt)), l_a),
    )
    components = {"loss_r": l_r.item(), "loss_m": l_m.item(), "loss_a": l_a.item(), "loss_total": total.item()}
    return total, components


def pmd(generated, truth):
    """Point-wise mesh Euclidean distance: mean squared vertex-correspondence
    error over frames and vertices (evaluation only, no gradient)."""
    generated = np.asarray(generated, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if generated.shape != truth.shape:
        raise T.ShapeError(f"pmd: shape mismatch {generated.shape} vs {truth.shape}")
    if generated.ndim == 3:  # (T, V, 3) mesh-frame layout
        diff = generated - truth
        return float((diff * diff).sum(axis=2).mean())
    if generated.ndim == 4:  # (N, T, 3, V) batch layout
        diff = generated - truth
        return float((diff * diff).sum(axis=2).mean())
    raise T.ShapeError(f"pmd expects (T, V, 3) or (N, T, 3, V), got {generated.shape}")


def pmd_sequences(generated, truth):
    """PMD between two MeshSequence values, plus per-frame values."""
    if generated.frame_count != truth.frame_count or generated.vertex_count != truth.vertex_count:
        raise T.ShapeError("pmd: sequences must have matching frame and vertex counts")
    diff = generated.vertex_frames - truth.vertex_frames
    per_frame = (diff * diff).sum(axis=2).mean(axis=1)
    return float(per_frame.mean()), per_frame
