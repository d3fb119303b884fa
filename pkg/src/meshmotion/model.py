"""Style-modulated attention network for mesh motion transfer.

A shared-weight per-vertex feature extractor with a learned temporal
embedding feeds four attention encoders.  Each encoder mixes vertices with
a residual attention map scaled by a trainable gamma (initialized to 0, so
the attention path starts as an identity) and then modulates instance-
normalized features with per-vertex scale/shift maps computed from the raw
target mesh coordinates.  The output head is either the per-frame sequence
head (a 1x1 map to 3 channels followed by a bounded tanh) or a single-frame
regression head used by the ablation study.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .mesh import Mesh, MeshSequence
from .tensor import Tensor

__all__ = [
    "ModelConfig",
    "MotionTransferModel",
    "insnorm_modulate",
    "sliding_window_animate",
    "window_regression_frames",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]

_MAGIC = b"MMCP"
_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 64                     # extractor output width C
    extractor_widths: tuple = (16, 32)     # 3 -> c1 -> c2 -> C
    encoder_widths: tuple = (64, 32, 32, 16)
    window: int = 3                        # driving frames per forward pass (also T_max)
    heads: int = 1
    attention_axis: str = "keys"           # softmax over keys (default) or queries
    tanh_scale: float = 1.0
    eps: float = 1e-5
    dtype: str = "float64"
    output_head: str = "sequence"          # "sequence" | "regression"

    def __post_init__(self):
        if len(self.encoder_widths) != 4:
            raise ValueError("the model stacks exactly 4 encoders")
        if self.encoder_widths[0] != self.channels:
            raise ValueError("first encoder width must equal the extractor output width")
        if self.attention_axis not in ("keys", "queries"):
            raise ValueError("attention_axis must be 'keys' or 'queries'")
        if self.output_head not in ("sequence", "regression"):
            raise ValueError("output_head must be 'sequence' or 'regression'")
        for w in self.encoder_widths:
            if w % self.heads:
                raise ValueError(f"encoder width {w} not divisible by heads={self.heads}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_dict(self):
        return {
            "channels": self.channels,
            "extractor_widths": list(self.extractor_widths),
            "encoder_widths": list(self.encoder_widths),
            "window": self.window,
            "heads": self.heads,
            "attention_axis": self.attention_axis,
            "tanh_scale": self.tanh_scale,
            "eps": self.eps,
            "dtype": self.dtype,
            "output_head": self.output_head,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["extractor_widths"] = tuple(d.get("extractor_widths", (16, 32)))
        d["encoder_widths"] = tuple(d.get("encoder_widths", (64, 32, 32, 16)))
        return cls(**d)


def insnorm_modulate(z, target, scale_w, scale_b, shift_w, shift_b, eps=1e-5):
    """scale(target) * instance_norm(z) + shift(target).

    z: (N, T, C, V); target: (N, 3, V); scale/shift maps are per-vertex
    linear layers on the raw target coordinates, broadcast over T.
    """
    if z.shape[-1] != target.shape[-1]:
        raise T.ShapeError(f"vertex-count mismatch: features {z.shape} vs target {target.shape} (pool the driving features first)")
    norm = T.instance_norm(z, eps)
    n = target.shape[0]
    c = scale_w.shape[0]
    v = target.shape[-1]
    scale = T.reshape(T.pointwise_linear(target, scale_w, scale_b), (n, 1, c, v))
    shift = T.reshape(T.pointwise_linear(target, shift_w, shift_b), (n, 1, c, v))
    return T.add(T.mul(T.expand(scale, norm.shape), norm), T.expand(shift, norm.shape))


class MotionTransferModel:
    """All learnable parameters plus the forward pass."""

    def __init__(self, config=ModelConfig(), seed=0):
        self.config = config
        self.params = {}
        self._rng = np.random.default_rng(seed)
        dt = config.np_dtype

        widths = (3,) + tuple(config.extractor_widths) + (config.channels,)
        for i in range(3):
            self._add_linear(f"extractor.{i}", widths[i], widths[i + 1])
        self.params["temporal_embedding"] = Tensor(
            self._uniform((config.window, config.channels), config.channels).astype(dt), requires_grad=True
        )
        prev = config.channels
        for i, w in enumerate(config.encoder_widths):
            self._add_linear(f"pre.{i}", prev, w)
            self._add_encoder(f"enc.{i}", w)
            prev = w
        if config.output_head == "sequence":
            self._add_linear("out", prev, 3)
        else:
            self._add_linear("head.0", prev, prev)
            self._add_linear("head.1", prev, 3)
        del self._rng

    # -- parameter construction ----------------------------------------------

    def _uniform(self, shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return self._rng.uniform(-bound, bound, size=shape)

    def _add_linear(self, name, c_in, c_out):
        dt = self.config.np_dtype
        self.params[f"{name}.weight"] = Tensor(self._uniform((c_out, c_in), c_in).astype(dt), requires_grad=True)
        self.params[f"{name}.bias"] = Tensor(np.zeros(c_out, dtype=dt), requires_grad=True)

    def _add_encoder(self, name, width):
        dt = self.config.np_dtype
        for part in ("q", "k", "v"):
            self._add_linear(f"{name}.{part}", width, width)
        self.params[f"{name}.gamma"] = Tensor(np.zeros((), dtype=dt), requires_grad=True)
        for b in range(3):
            self._add_linear(f"{name}.block{b}.scale", 3, width)
            self._add_linear(f"{name}.block{b}.shift", 3, width)
            self._add_linear(f"{name}.post{b}", width, width)

    def parameters(self):
        return self.params

    def parameter_count(self):
        return sum(p.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state(self):
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state(self, state):
        dt = self.config.np_dtype
        for name, p in self.params.items():
            if name not in state:
                raise CheckpointError(f"missing parameter {name!r}")
            arr = np.asarray(state[name], dtype=dt)
            if arr.shape != p.data.shape:
                raise CheckpointError(f"shape mismatch for {name!r}: {arr.shape} vs {p.data.shape}")
            p.data = arr

    # -- forward pieces --------------------------------------------------------

    def _linear(self, name, x):
        return T.pointwise_linear(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"])

    def extract_features(self, x, v_out=None):
        """Shared-weight per-frame stack, optional vertex pooling, temporal
        embedding broadcast over vertices.  x: (N, T, 3, V1) tensor."""
        n, t = x.shape[0], x.shape[1]
        if t > self.config.window:
            raise T.ShapeError(f"sequence of {t} frames exceeds the configured window {self.config.window}")
        for i in range(3):
            x = T.relu(T.instance_norm(self._linear(f"extractor.{i}", x), self.config.eps))
        if v_out is not None and v_out != x.shape[-1]:
            x = T.max_pool_vertices(x, v_out)
        emb = T.slice_axis(self.params["temporal_embedding"], 0, 0, t)
        emb = T.reshape(emb, (1, t, self.config.channels, 1))
        return T.add(x, T.expand(emb, x.shape))

    def attention(self, z, index):
        """Residual vertex-mixing attention for encoder `index`."""
        h = self.config.heads
        q = self._linear(f"enc.{index}.q", z)
        k = self._linear(f"enc.{index}.k", z)
        v = self._linear(f"enc.{index}.v", z)
        n, t, c, vx = z.shape
        if h > 1:
            q = T.reshape(q, (n, t, h, c // h, vx))
            k = T.reshape(k, (n, t, h, c // h, vx))
            v = T.reshape(v, (n, t, h, c // h, vx))
        scores = T.matmul(T.transpose_last2(q), k)  # S[i, j] = q_i . k_j over channels
        axis = -1 if self.config.attention_axis == "keys" else -2
        weights = T.softmax(scores, axis=axis)
        mixed = T.matmul(v, T.transpose_last2(weights))  # out[:, i] = sum_j A[i, j] v[:, j]
        if h > 1:
            mixed = T.reshape(mixed, (n, t, c, vx))
        return T.add(T.mul(self.params[f"enc.{index}.gamma"], mixed), z)

    def _block(self, index, b, z, target):
        return insnorm_modulate(
            z,
            target,
            self.params[f"enc.{index}.block{b}.scale.weight"],
            self.params[f"enc.{index}.block{b}.scale.bias"],
            self.params[f"enc.{index}.block{b}.shift.weight"],
            self.params[f"enc.{index}.block{b}.shift.bias"],
            self.config.eps,
        )

    def encoder(self, index, z, target):
        z = self.attention(z, index)
        main = T.relu(self._linear(f"enc.{index}.post0", self._block(index, 0, z, target)))
        main = T.relu(self._linear(f"enc.{index}.post1", self._block(index, 1, main, target)))
        skip = T.relu(self._linear(f"enc.{index}.post2", self._block(index, 2, z, target)))
        return T.add(main, skip)

    def trunk(self, driving, target):
        """Everything up to (and including) encoder 4.

        driving: (N, T, 3, V1) array-like; target: (N, 3, V2) array-like.
        """
        dt = self.config.np_dtype
        x = Tensor(np.asarray(driving, dtype=dt))
        tgt = Tensor(np.asarray(target, dtype=dt))
        if x.data.ndim != 4 or x.shape[2] != 3:
            raise T.ShapeError(f"driving batch must be (N, T, 3, V), got {x.shape}")
        if tgt.data.ndim != 3 or tgt.shape[1] != 3:
            raise T.ShapeError(f"target batch must be (N, 3, V), got {tgt.shape}")
        z = self.extract_features(x, v_out=tgt.shape[-1])
        for i in range(4):
            z = self._linear(f"pre.{i}", z)
            z = self.encoder(i, z, tgt)
        return z, tgt

    def forward_batch(self, driving, target):
        """Sequence head: (N, T, 3, V1) + (N, 3, V2) -> (N, T, 3, V2) tensor."""
        if self.config.output_head != "sequence":
            raise T.ShapeError("model was built with the regression head; use forward_regression_batch")
        if np.asarray(driving).shape[1] != self.config.window:
            raise T.ShapeError(f"driving window must have exactly {self.config.window} frames")
        z, _ = self.trunk(driving, target)
        s = Tensor(np.asarray(self.config.tanh_scale, dtype=self.config.np_dtype))
        return T.mul(s, T.tanh(self._linear("out", z)))

    def forward_regression_batch(self, driving, target):
        """Regression-head ablation variant: one (N, 3, V2) frame per window."""
        if self.config.output_head != "regression":
            raise T.ShapeError("model was built with the sequence head; use forward_batch")
        if np.asarray(driving).shape[1] != self.config.window:
            raise T.ShapeError(f"driving window must have exactly {self.config.window} frames")
        z, _ = self.trunk(driving, target)
        z = T.tmean(z, axis=1)
        z = T.relu(self._linear("head.0", z))
        s = Tensor(np.asarray(self.config.tanh_scale, dtype=self.config.np_dtype))
        return T.mul(s, T.tanh(self._linear("head.1", z)))

    def forward(self, driving, target):
        """Mesh-level forward: MeshSequence + Mesh -> MeshSequence (target topology)."""
        drive = driving.vertex_frames.transpose(0, 2, 1)[None]  # (1, T, 3, V)
        tgt = target.vertices.T[None]
        if self.config.output_head == "sequence":
            out = self.forward_batch(drive, tgt)
            frames = out.data[0].transpose(0, 2, 1).astype(np.float64)
            return MeshSequence(frames, target.faces)
        out = self.forward_regression_batch(drive, tgt)
        return Mesh(out.data[0].T.astype(np.float64), target.faces)


def sliding_window_animate(model, driving, target):
    """Animate a driving sequence of any length L >= 1 with stride-T windows;
    the final partial window repeats the last frame and the padded outputs
    are discarded, so exactly L frames come back."""
    t = model.config.window
    length = driving.frame_count
    frames = driving.vertex_frames
    out_frames = []
    for start in range(0, length, t):
        window = frames[start : start + t]
        if window.shape[0] < t:
            pad = np.repeat(window[-1:], t - window.shape[0], axis=0)
            window = np.concatenate([window, pad], axis=0)
        result = model.forward(MeshSequence(window, driving.faces), target)
        out_frames.append(result.vertex_frames[: min(t, length - start)])
    return MeshSequence(np.concatenate(out_frames, axis=0), target.faces)


def window_regression_frames(model, driving, target):
    """Run the regression-head variant over stride-T windows.

    Returns (generated frames as (K, V, 3), indices of the driving frames each
    one corresponds to — the last frame of each full window)."""
    t = model.config.window
    length = driving.frame_count
    frames = driving.vertex_frames
    outs = []
    idx = []
    for start in range(0, length - t + 1, t):
        window = MeshSequence(frames[start : start + t], driving.faces)
        outs.append(model.forward(window, target).vertices)
        idx.append(start + t - 1)
    return np.stack(outs), np.asarray(idx)


# -- checkpoint format -------------------------------------------------------------


class CheckpointError(ValueError):
    """Corrupt or mismatched checkpoint file."""


def save_checkpoint(state, path):
    """Binary named-tensor container.

    Layout: magic, version(u32), count(u64), then per entry: name length(u32),
    utf-8 name, rank(u32), extents(u64 each), raw little-endian float32 values;
    finally a 64-bit checksum of all entry bytes.  float32 on the wire, so a
    float32 model round-trips bit-exactly.
    """
    payload = bytearray()
    items = sorted(state.items())
    for name, value in items:
        # ascontiguousarray would promote rank-0 entries (the attention gains)
        # to shape (1,), silently changing the stored rank
        arr = np.asarray(value, dtype=np.float32)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        encoded = name.encode("utf-8")
        payload += struct.pack("<I", len(encoded))
        payload += encoded
        payload += struct.pack("<I", arr.ndim)
        payload += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
        payload += arr.astype("<f4").tobytes()
    checksum = hashlib.blake2b(bytes(payload), digest_size=8).digest()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(items)))
        fh.write(payload)
        fh.write(checksum)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (count,) = struct.unpack_from("<Q", blob, 8)
    payload = blob[16:-8]
    checksum = blob[-8:]
    if hashlib.blake2b(payload, digest_size=8).digest() != checksum:
        raise CheckpointError(f"{path}: checksum mismatch")
    state = {}
    off = 0
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", payload, off)
        off += 4
        name = payload[off : off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", payload, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}Q", payload, off) if rank else ()
        off += 8 * rank
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
        state[name] = arr.copy()
    if off != len(payload):
        raise CheckpointError(f"{path}: trailing bytes in payload")
    return state
