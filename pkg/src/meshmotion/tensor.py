"""Dense tensors with reverse-mode automatic differentiation.

The op set is exactly what the mesh animation model and its losses need:
per-vertex linear maps, batched matrix products, softmax, instance
normalization over the vertex axis, a handful of pointwise ops, vertex
max-pooling, gathering/slicing, and reductions.  Everything is backed by
numpy arrays; float64 is the default so finite-difference oracles are
meaningful, float32 is available for training speed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "GraphError",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "relu",
    "tanh",
    "absval",
    "tsum",
    "tmean",
    "reshape",
    "expand",
    "transpose_last2",
    "matmul",
    "softmax",
    "instance_norm",
    "pointwise_linear",
    "max_pool_vertices",
    "gather_last",
    "slice_axis",
    "gradcheck",
    "GradCheckReport",
    "dump",
]

_ALLOWED_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class GraphError(RuntimeError):
    """Misuse of the computation record (non-scalar backward, double backward, ...)."""


def _as_array(data, dtype):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in _ALLOWED_DTYPES:
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """N-dimensional real array, optionally tracked for reverse-mode gradients.

    A Tensor produced by a tracked operation remembers its parents and a
    backward rule; calling :meth:`backward` on a scalar result walks the
    record once in reverse topological order, accumulating gradients
    additively at fan-out.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_backward_done")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None
        self._backward_done = False

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def assert_finite(self, name="tensor"):
        """Explicit NaN/Inf check; raises ValueError naming the offender."""
        if not np.isfinite(self.data).all():
            raise ValueError(f"non-finite values in {name}")
        return self

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other, self.dtype))

    def __radd__(self, other):
        return add(_coerce(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _coerce(other, self.dtype))

    def __rsub__(self, other):
        return sub(_coerce(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self.dtype))

    def __rmul__(self, other):
        return mul(_coerce(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _coerce(other, self.dtype))

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    # -- backward ------------------------------------------------------------

    def backward(self, accumulate=False):
        """Populate .grad on every tracked tensor reachable from this scalar.

        A second call on the same result raises unless accumulate=True
        (gradients then add on top of the previous pass).
        """
        if self.data.size != 1:
            raise GraphError(f"backward requires a scalar loss, got shape {self.data.shape}")
        if self._backward_done and not accumulate:
            raise GraphError("backward already ran for this result; pass accumulate=True to add gradients")
        self._backward_done = True

        order = self._toposort()
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node.grad is None:
                continue
            grads = node._backward_fn(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None:
                    continue
                if parent.requires_grad or parent._backward_fn is not None:
                    parent.grad = g if parent.grad is None else parent.grad + g
        # leaf gradients persist (and add up under accumulate=True); grads on
        # interior nodes are working storage and would double-count on a
        # second pass, so they are dropped
        for node in order:
            if node is not self and node._backward_fn is not None:
                node.grad = None

    def _toposort(self):
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p._backward_fn is not None and id(p) not in visited:
                    stack.append((p, False))
        return order


def _coerce(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _tracked(parents):
    return any(p.requires_grad or p._backward_fn is not None for p in parents)


def _result(data, parents, backward_fn):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._backward_done = False
    if _tracked(parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward_fn = None
    return out


# -- broadcasting (leading-1 extents only) ------------------------------------


def _check_leading_broadcast(sa, sb, opname):
    """Shapes must be equal after left-padding with 1s, except for a leading
    run of 1-extents in either operand.  Anything richer is rejected so every
    backward reduction stays a plain sum over leading axes."""
    rank = max(len(sa), len(sb))
    pa = (1,) * (rank - len(sa)) + tuple(sa)
    pb = (1,) * (rank - len(sb)) + tuple(sb)
    lead_a = True
    lead_b = True
    for da, db in zip(pa, pb):
        if da != 1:
            lead_a = False
        if db != 1:
            lead_b = False
        if da == db:
            continue
        if da == 1 and lead_a:
            continue
        if db == 1 and lead_b:
            continue
        raise ShapeError(f"{opname}: shapes {tuple(sa)} and {tuple(sb)} are not broadcastable by leading-1 extents")


def _reduce_to(g, shape):
    """Sum a gradient back down to an operand's shape after broadcasting."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_same_dtype(a, b, opname):
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{opname}: mixed dtypes {a.data.dtype} and {b.data.dtype}")


# -- pointwise ops -------------------------------------------------------------


def add(a, b):
    _check_same_dtype(a, b, "add")
    _check_leading_broadcast(a.shape, b.shape, "add")
    data = a.data + b.data

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _result(data, (a, b), backward)


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,))


def sub(a, b):
    return add(a, neg(b))


def mul(a, b):
    _check_same_dtype(a, b, "mul")
    _check_leading_broadcast(a.shape, b.shape, "mul")
    data = a.data * b.data

    def backward(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _result(data, (a, b), backward)


def div(a, b):
    _check_same_dtype(a, b, "div")
    _check_leading_broadcast(a.shape, b.shape, "div")
    data = a.data / b.data

    def backward(g):
        ga = _reduce_to(g / b.data, a.shape)
        gb = _reduce_to(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _result(data, (a, b), backward)


def relu(a):
    mask = a.data > 0  # subgradient 0 at exactly 0
    data = np.where(mask, a.data, 0)
    return _result(data, (a,), lambda g: (g * mask,))


def tanh(a):
    data = np.tanh(a.data)
    return _result(data, (a,), lambda g: (g * (1 - data * data),))


def absval(a):
    s = np.sign(a.data)
    return _result(np.abs(a.data), (a,), lambda g: (g * s,))


# -- reductions and shape ops ---------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)
    in_shape = a.shape

    def backward(g):
        g = np.asarray(g)
        if axis is None:
            return (np.broadcast_to(g, in_shape).copy(),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            for ax in sorted(ax % len(in_shape) for ax in axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, in_shape).copy(),)

    return _result(np.asarray(data), (a,), backward)


def tmean(a, axis=None, keepdims=False):
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.shape[ax]
    return mul(tsum(a, axis=axis, keepdims=keepdims), Tensor(np.asarray(1.0 / n, dtype=a.dtype)))


def reshape(a, shape):
    data = a.data.reshape(shape)
    in_shape = a.shape
    return _result(data, (a,), lambda g: (g.reshape(in_shape),))


def expand(a, shape):
    """Explicit broadcast to a larger shape (numpy rules); backward sums back."""
    try:
        data = np.broadcast_to(a.data, shape).copy()
    except ValueError as exc:
        raise ShapeError(f"expand: cannot broadcast {a.shape} to {tuple(shape)}") from exc
    in_shape = a.shape
    return _result(data, (a,), lambda g: (_reduce_to(g, in_shape),))


def transpose_last2(a):
    if a.data.ndim < 2:
        raise ShapeError(f"transpose_last2 needs rank >= 2, got shape {a.shape}")
    data = np.swapaxes(a.data, -1, -2)
    return _result(data, (a,), lambda g: (np.swapaxes(g, -1, -2),))


def slice_axis(a, axis, start, stop):
    """Contiguous slice along one axis; backward scatters into zeros."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    data = a.data[idx]
    in_shape = a.shape

    def backward(g):
        out = np.zeros(in_shape, dtype=g.dtype)
        out[idx] = g
        return (out,)

    return _result(data.copy(), (a,), backward)


def gather_last(a, indices):
    """out[..., e] = a[..., indices[e]]; backward scatter-adds (fan-out safe)."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 1:
        raise ShapeError("gather_last expects a 1-D index array")
    v = a.shape[-1]
    if indices.size and (indices.min() < 0 or indices.max() >= v):
        raise ShapeError(f"gather_last: index out of range for extent {v}")
    data = a.data[..., indices]
    in_shape = a.shape

    def backward(g):
        out = np.zeros(in_shape, dtype=g.dtype)
        np.add.at(out, (Ellipsis, indices), g)
        return (out,)

    return _result(data, (a,), backward)


# -- linear algebra -------------------------------------------------------------


def matmul(a, b):
    """Batched matrix product: (..., m, k) x (..., k, n); leading extents equal."""
    _check_same_dtype(a, b, "batch_matmul")
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"batch_matmul needs rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"batch_matmul: non-conforming shapes {a.shape} and {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    return _result(data, (a, b), backward)


def pointwise_linear(x, weight, bias):
    """Per-vertex affine map: out[..., :, v] = W @ x[..., :, v] + b.

    x: (..., C_in, V), weight: (C_out, C_in), bias: (C_out,).
    """
    if weight.data.ndim != 2 or bias.data.ndim != 1:
        raise ShapeError(f"pointwise_linear: weight must be 2-D and bias 1-D, got {weight.shape}, {bias.shape}")
    if x.data.ndim < 2:
        raise ShapeError(f"pointwise_linear: input must have a channel and vertex axis, got {x.shape}")
    c_out, c_in = weight.shape
    if x.shape[-2] != c_in:
        raise ShapeError(f"pointwise_linear: input channels {x.shape[-2]} != weight C_in {c_in} (input {x.shape}, weight {weight.shape})")
    if bias.shape[0] != c_out:
        raise ShapeError(f"pointwise_linear: bias extent {bias.shape[0]} != C_out {c_out}")
    _check_same_dtype(x, weight, "pointwise_linear")
    _check_same_dtype(x, bias, "pointwise_linear")
    data = np.matmul(weight.data, x.data) + bias.data.reshape(c_out, 1)

    def backward(g):
        gx = np.matmul(weight.data.T, g)
        v = g.shape[-1]
        gw = np.einsum("bov,biv->oi", g.reshape(-1, c_out, v), x.data.reshape(-1, c_in, v))
        gb = g.sum(axis=tuple(i for i in range(g.ndim) if i != g.ndim - 2))
        return gx, gw, gb

    return _result(data, (x, weight, bias), backward)


def softmax(a, axis=-1):
    """Overflow-safe softmax along one axis."""
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - inner),)

    return _result(data, (a,), backward)


def instance_norm(a, eps=1e-5):
    """Standardize over the last (vertex) axis per leading index.

    Population variance (divisor V), denominator sqrt(var + eps).
    """
    v = a.shape[-1] if a.data.ndim else 0
    if v < 2:
        raise ShapeError(f"instance_norm: vertex axis must have extent >= 2, got shape {a.shape}")
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=a.dtype))
    y = centered * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _result(y, (a,), backward)


def max_pool_vertices(x, v_out):
    """Adaptive max pooling over the last axis into contiguous chunks.

    Chunk i covers [floor(i*V1/V2), floor((i+1)*V1/V2)); gradient routes to
    the argmax of each chunk, ties to the lowest index.
    """
    v_in = x.shape[-1]
    if v_in < v_out:
        raise ShapeError(f"max_pool_vertices: cannot upsample {v_in} -> {v_out} vertices")
    if v_out < 1:
        raise ShapeError("max_pool_vertices: output extent must be positive")
    if v_in == v_out:
        return _result(x.data.copy(), (x,), lambda g: (g,))
    bounds = [(i * v_in) // v_out for i in range(v_out + 1)]
    data = np.empty(x.shape[:-1] + (v_out,), dtype=x.dtype)
    argmax = np.empty(x.shape[:-1] + (v_out,), dtype=np.int64)
    for i in range(v_out):
        lo, hi = bounds[i], bounds[i + 1]
        chunk = x.data[..., lo:hi]
        data[..., i] = chunk.max(axis=-1)
        argmax[..., i] = chunk.argmax(axis=-1) + lo
    in_shape = x.shape

    def backward(g):
        out = np.zeros(in_shape, dtype=g.dtype)
        np.put_along_axis(out, argmax, g, axis=-1)
        return (out,)

    return _result(data, (x,), backward)


# -- verification harness --------------------------------------------------------


@dataclass
class GradCheckReport:
    """Per-input comparison of analytic vs central-difference gradients."""

    max_rel_err: list = field(default_factory=list)
    tol: float = 1e-6

    @property
    def worst(self):
        return max(self.max_rel_err) if self.max_rel_err else 0.0

    @property
    def passed(self):
        return self.worst < self.tol

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        per = ", ".join(f"{e:.3e}" for e in self.max_rel_err)
        return f"gradcheck {status} (tol {self.tol:g}): worst {self.worst:.3e}; per-input [{per}]"


def gradcheck(f, inputs, h=1e-5, tol=1e-6):
    """Compare analytic gradients of a scalar-valued tensor function against
    central finite differences.

    Relative error is |a - n| / max(1, |a|, |n|) per component.  Requires
    float64 inputs; float32 round-off would drown the comparison.
    """
    tracked = []
    for x in inputs:
        t = Tensor(x.data.copy(), requires_grad=True)
        tracked.append(t)
    for t in tracked:
        if t.dtype != np.float64:
            raise ValueError("gradcheck requires float64 inputs")
    out = f(*tracked)
    if out.size != 1:
        raise GraphError("gradcheck target function must be scalar-valued")
    out.backward()

    report = GradCheckReport(tol=tol)
    for t in tracked:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = f(*[Tensor(u.data) for u in tracked]).item()
            flat[i] = orig - h
            lo = f(*[Tensor(u.data) for u in tracked]).item()
            flat[i] = orig
            nflat[i] = (hi - lo) / (2 * h)
        denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
        report.max_rel_err.append(float((np.abs(analytic - numeric) / denom).max(initial=0.0)))
    return report


def dump(t):
    """Flat text listing for oracle comparison: shape line, then one value
    per line at 17 significant digits."""
    lines = [" ".join(str(d) for d in t.shape)]
    for v in t.data.reshape(-1):
        lines.append(f"{v:.17g}")
    return "\n".join(lines) + "\n"
