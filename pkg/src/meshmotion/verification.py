"""Finite-difference verification suites for the operator set and the model.

Everything here runs in float64.  Random inputs are bounded in [-2, 2];
inputs for kinked ops (relu, abs, max pooling) are resampled away from the
kink so central differences stay meaningful.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .losses import LossOptions, LossWeights, full_objective
from .mesh import Mesh, build_neighborhood
from .model import ModelConfig, MotionTransferModel
from .tensor import GradCheckReport, Tensor, gradcheck

__all__ = [
    "toy_model_config",
    "op_gradcheck_suite",
    "model_gradcheck",
    "toy_objective_gradcheck",
    "grid_mesh",
]


def toy_model_config(dtype="float64", output_head="sequence"):
    """Smallest configuration that still exercises every code path."""
    return ModelConfig(
        channels=8,
        extractor_widths=(4, 8),
        encoder_widths=(8, 8, 4, 4),
        window=3,
        dtype=dtype,
        output_head=output_head,
    )


def grid_mesh(rings, ring_size, radius=0.5, height=1.0):
    """Open tube of rings x ring_size vertices; handy for tiny topologies."""
    angles = 2 * np.pi * np.arange(ring_size) / ring_size
    vertices = []
    for i in range(rings):
        y = height * i / max(rings - 1, 1)
        for a in angles:
            vertices.append((radius * np.cos(a), y, radius * np.sin(a)))
    faces = []
    for i in range(rings - 1):
        for k in range(ring_size):
            k2 = (k + 1) % ring_size
            a0, a1 = i * ring_size + k, i * ring_size + k2
            b0, b1 = (i + 1) * ring_size + k, (i + 1) * ring_size + k2
            faces.append((a0, a1, b1))
            faces.append((a0, b1, b0))
    return Mesh(np.asarray(vertices), faces)


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.uniform(-2, 2, size=shape)
    sign = np.where(x >= 0, 1.0, -1.0)
    return np.where(np.abs(x) < margin, sign * margin, x)


def op_gradcheck_suite(seed=0, h=1e-5):
    """Central-difference checks for every differentiable operation.

    Returns a list of (name, GradCheckReport); tolerance 1e-6 except
    instance_norm (1e-5, conditioning of the variance denominator).
    """
    rng = np.random.default_rng(seed)
    checks = []

    x = Tensor(rng.uniform(-2, 2, size=(2, 3, 5)))
    w = Tensor(rng.uniform(-2, 2, size=(4, 3)))
    b = Tensor(rng.uniform(-2, 2, size=(4,)))
    checks.append(("pointwise_linear", lambda x, w, b: T.tsum(T.tanh(T.pointwise_linear(x, w, b))), [x, w, b], 1e-6))

    a = Tensor(rng.uniform(-2, 2, size=(2, 3, 4)))
    c = Tensor(rng.uniform(-2, 2, size=(2, 4, 3)))
    checks.append(("batch_matmul", lambda a, c: T.tsum(T.tanh(T.matmul(a, c))), [a, c], 1e-6))

    s = Tensor(rng.uniform(-2, 2, size=(3, 6)))
    weightsum = Tensor(rng.uniform(-2, 2, size=(3, 6)))
    checks.append(("softmax", lambda s, m: T.tsum(T.mul(T.softmax(s, axis=-1), m)), [s, weightsum], 1e-6))

    z = Tensor(rng.uniform(-2, 2, size=(1, 2, 3, 7)))
    checks.append(("instance_norm", lambda z: T.tsum(T.mul(T.instance_norm(z), T.instance_norm(z))), [z], 1e-5))

    e1 = Tensor(rng.uniform(-2, 2, size=(2, 5)))
    e2 = Tensor(rng.uniform(-2, 2, size=(2, 5)))
    checks.append(
        ("elementwise", lambda a, b: T.tsum(T.add(T.mul(a, b), T.tanh(T.mul(a, a)))), [e1, e2], 1e-6)
    )
    r = Tensor(_away_from_zero(rng, (3, 4)))
    checks.append(("relu", lambda r: T.tsum(T.mul(T.relu(r), r)), [r], 1e-6))

    # distinct chunk values keep the argmax stable under the h-perturbation
    p = Tensor(rng.permutation(24).reshape(2, 1, 12) * 0.1)
    checks.append(("max_pool_vertices", lambda p: T.tsum(T.tanh(T.max_pool_vertices(p, 5))), [p], 1e-6))

    g = Tensor(rng.uniform(-2, 2, size=(2, 3, 6)))
    idx = rng.integers(0, 6, size=9)
    checks.append(("gather_last", lambda g: T.tsum(T.tanh(T.gather_last(g, idx))), [g], 1e-6))

    d1 = Tensor(rng.uniform(-2, 2, size=(3, 3)))
    d2 = Tensor(_away_from_zero(rng, (3, 3), margin=0.5))
    checks.append(("div", lambda a, b: T.tsum(T.tanh(T.div(a, b))), [d1, d2], 1e-6))

    return [(name, gradcheck(f, inputs, h=h, tol=tol)) for name, f, inputs, tol in checks]


def model_gradcheck(model, objective_fn, h=1e-5, tol=1e-4):
    """Check analytic gradients of objective_fn() w.r.t. every model
    parameter against central differences (perturbing parameters in place)."""
    if model.config.np_dtype != np.float64:
        raise ValueError("model gradcheck requires a float64 model")
    model.zero_grad()
    objective_fn().backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in model.params.items()}

    report = GradCheckReport(tol=tol)
    for name, p in model.params.items():
        # 0-d parameters (the attention gains) must stay ndarrays: numpy
        # scalars silently copy on reshape and the perturbation is lost
        p.data = np.asarray(p.data)
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = objective_fn().item()
            flat[i] = orig - h
            lo = objective_fn().item()
            flat[i] = orig
            nflat[i] = (hi - lo) / (2 * h)
        a = analytic[name]
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(numeric)))
        report.max_rel_err.append(float((np.abs(a - numeric) / denom).max(initial=0.0)))
    return report


def toy_objective_gradcheck(seed=0, h=1e-5, tol=1e-4, vertex_count=24):
    """Full-objective gradient check on the toy model (T=3, V=24, C=8)."""
    config = toy_model_config()
    model = MotionTransferModel(config, seed=seed)
    # seed a plausible operating point: zero gamma hides the attention path,
    # so nudge every parameter off its initialization
    rng = np.random.default_rng(seed + 1)
    for p in model.params.values():
        p.data = np.asarray(p.data + rng.uniform(-0.05, 0.05, size=p.data.shape))

    ring_size = 6
    mesh = grid_mesh(vertex_count // ring_size, ring_size)
    edges = build_neighborhood(mesh).directed_edges()
    v = mesh.vertex_count
    t = config.window
    base = mesh.vertices.T[None]  # (1, 3, V)
    drive = base[:, None] + rng.uniform(-0.2, 0.2, size=(1, t, 3, v))
    truth = base[:, None] + rng.uniform(-0.2, 0.2, size=(1, t, 3, v))
    target = base + rng.uniform(-0.1, 0.1, size=(1, 3, v))

    def objective():
        gen = model.forward_batch(drive, target)
        total, _ = full_objective(gen, truth, drive, target, edges, LossWeights(), LossOptions())
        return total

    return model_gradcheck(model, objective, h=h, tol=tol)
