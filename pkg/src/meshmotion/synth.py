"""Procedural articulated tube ("limb chain") dataset.

Stands in for a parametric body model: a chain of capsule-like bones with
controllable lengths/radii is skinned by forward kinematics with linear
blending, so the same pose applied to two different shapes yields exactly
index-corresponded ground truth.  Motions are smooth low-frequency sinusoid
sums over joint angles.  Everything is a pure function of seeds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from functools import lru_cache

import numpy as np

from .mesh import Mesh, MeshSequence, permute_vertices

__all__ = [
    "GeometryConfig",
    "MotionConfig",
    "ShapeParams",
    "SkeletonPose",
    "DatasetManifest",
    "WindowSpec",
    "PairSample",
    "generate_shape",
    "rest_mesh",
    "skin",
    "skin_sequence",
    "generate_motion",
    "static_pose",
    "make_pair",
    "sample_epoch",
    "build_window",
    "make_default_manifest",
]

_SHUFFLE_TAG = 0x5F7
_TARGET_POSE_TAG = 0x7A9


@dataclass(frozen=True)
class GeometryConfig:
    bone_count: int = 4
    rings_per_bone: int = 4
    ring_resolution: int = 18  # V = B*S*R + 2 caps = 290 with the defaults

    def __post_init__(self):
        if self.bone_count < 2:
            raise ValueError("bone_count must be >= 2")
        if self.ring_resolution < 6:
            raise ValueError("ring_resolution must be >= 6")
        if self.rings_per_bone < 2:
            raise ValueError("rings_per_bone must be >= 2")


@dataclass(frozen=True)
class MotionConfig:
    # total cumulative joint-angle budget (radians) across the chain; kept
    # small enough that posed vertices stay within the tanh-representable box
    angle_budget: float = 0.45
    max_harmonics: int = 3
    max_frequency: int = 3


@dataclass(frozen=True)
class ShapeParams:
    """One limb-chain identity: per-bone lengths and radii plus mesh resolution."""

    lengths: tuple
    radii: tuple
    rings_per_bone: int
    ring_resolution: int
    seed: int

    def __post_init__(self):
        if len(self.lengths) != len(self.radii):
            raise ValueError("lengths and radii must have one entry per bone")
        if len(self.lengths) < 2:
            raise ValueError("need at least 2 bones")
        if any(l <= 0 for l in self.lengths) or any(r <= 0 for r in self.radii):
            raise ValueError("bone lengths and radii must be positive")

    @property
    def bone_count(self):
        return len(self.lengths)

    @property
    def vertex_count(self):
        return self.bone_count * self.rings_per_bone * self.ring_resolution + 2


@dataclass(frozen=True)
class SkeletonPose:
    """Per-frame, per-bone joint angles (radians) about alternating z/x axes."""

    angles: np.ndarray  # (T, B)

    def __post_init__(self):
        a = np.asarray(self.angles, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError(f"angles must be T x B, got {a.shape}")
        if np.abs(a).max(initial=0.0) > np.pi / 2:
            raise ValueError("joint angles must stay within [-pi/2, pi/2]")
        object.__setattr__(self, "angles", a)

    @property
    def frame_count(self):
        return self.angles.shape[0]


def generate_shape(seed, geometry=GeometryConfig()):
    rng = np.random.default_rng(seed)
    b = geometry.bone_count
    lengths = rng.uniform(0.8, 1.2, size=b)
    radii = rng.uniform(0.12, 0.22, size=b)
    return ShapeParams(
        lengths=tuple(lengths),
        radii=tuple(radii),
        rings_per_bone=geometry.rings_per_bone,
        ring_resolution=geometry.ring_resolution,
        seed=seed,
    )


@lru_cache(maxsize=64)
def _rest_geometry(shape):
    """Rest vertices, faces, joints, and per-vertex blend weights.

    Vertex order: all rings bottom-up (B*S rings of R), then bottom cap,
    then top cap.  The first ring of each non-root bone is blended 0.5/0.5
    between its bone and the parent.
    """
    b, s, r = shape.bone_count, shape.rings_per_bone, shape.ring_resolution
    starts = np.concatenate([[0.0], np.cumsum(shape.lengths)])
    angles = 2 * np.pi * np.arange(r) / r
    circle = np.stack([np.cos(angles), np.zeros(r), np.sin(angles)], axis=1)

    vertices = []
    bone_a = []
    bone_b = []
    weight_a = []
    for i in range(b):
        for j in range(s):
            h = starts[i] + (j + 0.5) / s * shape.lengths[i]
            ring = circle * shape.radii[i]
            ring[:, 1] = h
            vertices.append(ring)
            if j == 0 and i > 0:
                bone_a.extend([i - 1] * r)
                bone_b.extend([i] * r)
                weight_a.extend([0.5] * r)
            else:
                bone_a.extend([i] * r)
                bone_b.extend([i] * r)
                weight_a.extend([1.0] * r)
    vertices = np.concatenate(vertices, axis=0)
    caps = np.array([[0.0, 0.0, 0.0], [0.0, starts[-1], 0.0]])
    vertices = np.concatenate([vertices, caps], axis=0)
    bone_a.extend([0, b - 1])
    bone_b.extend([0, b - 1])
    weight_a.extend([1.0, 1.0])

    faces = []
    n_rings = b * s
    for g in range(n_rings - 1):
        for k in range(r):
            k2 = (k + 1) % r
            a0, a1 = g * r + k, g * r + k2
            b0, b1 = (g + 1) * r + k, (g + 1) * r + k2
            faces.append((a0, a1, b1))
            faces.append((a0, b1, b0))
    bottom, top = n_rings * r, n_rings * r + 1
    for k in range(r):
        k2 = (k + 1) % r
        faces.append((bottom, k2, k))
        faces.append((top, (n_rings - 1) * r + k, (n_rings - 1) * r + k2))

    joints = np.zeros((b, 3))
    joints[:, 1] = starts[:-1]
    weights = (
        np.asarray(bone_a, dtype=np.int64),
        np.asarray(bone_b, dtype=np.int64),
        np.asarray(weight_a, dtype=np.float64),
    )
    return vertices, np.asarray(faces, dtype=np.int64), joints, weights


def _axis_rotation(axis, angle):
    c, s = np.cos(angle), np.sin(angle)
    if axis == "z":
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _bone_axis(i):
    return "z" if i % 2 == 0 else "x"


@lru_cache(maxsize=64)
def _normalization(shape, extent):
    """Center/scale transform computed from the rest mesh so it fits in
    [-extent, extent]^3; applied unchanged to every frame of a sequence."""
    vertices, _, _, _ = _rest_geometry(shape)
    lo, hi = vertices.min(axis=0), vertices.max(axis=0)
    center = (lo + hi) / 2
    scale = extent / np.max((hi - lo) / 2)
    return center, scale


def _pose_vertices(shape, angles):
    """Forward-kinematic linear blend skinning of one pose frame (unnormalized)."""
    vertices, _, joints, (bone_a, bone_b, w_a) = _rest_geometry(shape)
    b = shape.bone_count
    rs = np.empty((b, 3, 3))
    ts = np.empty((b, 3))
    prev_r, prev_t = np.eye(3), np.zeros(3)
    for i in range(b):
        r_local = _axis_rotation(_bone_axis(i), angles[i])
        t_local = joints[i] - r_local @ joints[i]
        rs[i] = prev_r @ r_local
        ts[i] = prev_r @ t_local + prev_t
        prev_r, prev_t = rs[i], ts[i]
    pa = np.einsum("vij,vj->vi", rs[bone_a], vertices) + ts[bone_a]
    pb = np.einsum("vij,vj->vi", rs[bone_b], vertices) + ts[bone_b]
    w = w_a[:, None]
    return w * pa + (1 - w) * pb


def rest_mesh(shape, extent=0.95):
    vertices, faces, _, _ = _rest_geometry(shape)
    center, scale = _normalization(shape, extent)
    return Mesh((vertices - center) * scale, faces)


def skin(shape, angles, extent=0.95):
    """Pose one frame: per-bone rigid rotations blended linearly, then the
    rest-mesh normalization transform."""
    angles = np.asarray(angles, dtype=np.float64)
    if angles.shape != (shape.bone_count,):
        raise ValueError(f"expected {shape.bone_count} joint angles, got shape {angles.shape}")
    _, faces, _, _ = _rest_geometry(shape)
    center, scale = _normalization(shape, extent)
    return Mesh((_pose_vertices(shape, angles) - center) * scale, faces)


def skin_sequence(shape, pose, extent=0.95):
    _, faces, _, _ = _rest_geometry(shape)
    center, scale = _normalization(shape, extent)
    frames = np.stack([(_pose_vertices(shape, a) - center) * scale for a in pose.angles])
    return MeshSequence(frames, faces)


def generate_motion(seed, frame_count, bone_count, motion=MotionConfig()):
    """Smooth joint trajectories: per joint, a sum of <= max_harmonics
    sinusoids whose amplitudes share the chain-wide angle budget."""
    if frame_count < 3:
        raise ValueError("frame_count must be >= 3")
    rng = np.random.default_rng(seed)
    per_joint = motion.angle_budget / bone_count
    t = np.arange(frame_count) / frame_count
    angles = np.zeros((frame_count, bone_count))
    for b in range(bone_count):
        n_h = int(rng.integers(1, motion.max_harmonics + 1))
        freqs = rng.integers(1, motion.max_frequency + 1, size=n_h)
        phases = rng.uniform(0, 2 * np.pi, size=n_h)
        amps = rng.uniform(0.3, 1.0, size=n_h)
        amps *= per_joint * rng.uniform(0.6, 1.0) / amps.sum()
        for a, f, p in zip(amps, freqs, phases):
            angles[:, b] += a * np.sin(2 * np.pi * f * t + p)
    return SkeletonPose(angles)


def static_pose(seed, bone_count, motion=MotionConfig()):
    rng = np.random.default_rng(seed)
    per_joint = motion.angle_budget / bone_count
    return rng.uniform(-per_joint, per_joint, size=bone_count)


# -- pairing protocol -------------------------------------------------------------


@dataclass(frozen=True)
class WindowSpec:
    """One training sample: a T-frame slice of one (motion, shapes) pair."""

    motion_seed: int
    driving_shape_seed: int
    target_shape_seed: int
    start_frame: int


@dataclass
class PairSample:
    driving: MeshSequence
    target: Mesh
    ground_truth: MeshSequence
    permutation: np.ndarray
    spec: WindowSpec


@dataclass
class DatasetManifest:
    """Seeds and knobs that fully determine the synthetic dataset."""

    train_shape_seeds: list
    test_shape_seeds: list
    seen_motion_seeds: list
    unseen_motion_seeds: list
    frames_per_motion: int = 30
    window: int = 3
    normalization_extent: float = 0.95
    pairs_per_epoch: int = 500
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)
    shuffle_vertices: bool = True

    def __post_init__(self):
        if set(self.train_shape_seeds) & set(self.test_shape_seeds):
            raise ValueError("train and test shape seeds must be disjoint")
        if set(self.seen_motion_seeds) & set(self.unseen_motion_seeds):
            raise ValueError("seen and unseen motion seeds must be disjoint")
        if self.frames_per_motion < self.window:
            raise ValueError("frames_per_motion must be >= window")

    def to_dict(self):
        d = asdict(self)
        d["geometry"] = asdict(self.geometry)
        d["motion"] = asdict(self.motion)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["geometry"] = GeometryConfig(**d.get("geometry", {}))
        d["motion"] = MotionConfig(**d.get("motion", {}))
        return cls(**d)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def make_default_manifest(seen_motions=40, unseen_motions=10, train_shapes=8, test_shapes=4, **kwargs):
    """Toy split proportional to the 80/20 motion and 16/8 shape protocol."""
    return DatasetManifest(
        train_shape_seeds=list(range(1000, 1000 + train_shapes)),
        test_shape_seeds=list(range(2000, 2000 + test_shapes)),
        seen_motion_seeds=list(range(3000, 3000 + seen_motions)),
        unseen_motion_seeds=list(range(4000, 4000 + unseen_motions)),
        **kwargs,
    )


def _shuffle_permutation(spec, vertex_count):
    rng = np.random.default_rng(
        [_SHUFFLE_TAG, spec.motion_seed, spec.driving_shape_seed, spec.target_shape_seed, spec.start_frame]
    )
    return rng.permutation(vertex_count)


def _shuffle_sequence(seq, perm):
    frames = np.empty_like(seq.vertex_frames)
    frames[:, perm, :] = seq.vertex_frames
    return MeshSequence(frames, perm[np.asarray(seq.faces)])


def make_pair(manifest, spec, frames=None):
    """Build (driving, target, ground truth) for one window.

    driving = driving shape posed by the motion slice; ground truth = target
    shape posed by the same slice; target = target shape in an independent
    static pose.  All three share one shuffle permutation so vertex
    correspondence survives.
    """
    drive_shape = generate_shape(spec.driving_shape_seed, manifest.geometry)
    target_shape = generate_shape(spec.target_shape_seed, manifest.geometry)
    pose = generate_motion(spec.motion_seed, manifest.frames_per_motion, manifest.geometry.bone_count, manifest.motion)
    if frames is None:
        lo, hi = spec.start_frame, spec.start_frame + manifest.window
    else:
        lo, hi = frames
    window_pose = SkeletonPose(pose.angles[lo:hi])
    ext = manifest.normalization_extent
    driving = skin_sequence(drive_shape, window_pose, ext)
    gt = skin_sequence(target_shape, window_pose, ext)
    tpose = static_pose([_TARGET_POSE_TAG, spec.target_shape_seed, spec.motion_seed], manifest.geometry.bone_count, manifest.motion)
    target = skin(target_shape, tpose, ext)

    if manifest.shuffle_vertices:
        perm = _shuffle_permutation(spec, target.vertex_count)
        driving = _shuffle_sequence(driving, perm)
        gt = _shuffle_sequence(gt, perm)
        target = permute_vertices(target, perm)
    else:
        perm = np.arange(target.vertex_count)
    return PairSample(driving=driving, target=target, ground_truth=gt, permutation=perm, spec=spec)


def sample_epoch(manifest, epoch_seed, n_pairs):
    """Draw n_pairs training windows: random seen motion, random train shapes,
    random window start.  Pure function of (manifest, epoch_seed)."""
    seed = [epoch_seed] if isinstance(epoch_seed, (int, np.integer)) else list(epoch_seed)
    rng = np.random.default_rng([0xE70C, *[int(s) for s in seed]])
    max_start = manifest.frames_per_motion - manifest.window
    windows = []
    for _ in range(n_pairs):
        windows.append(
            WindowSpec(
                motion_seed=int(rng.choice(manifest.seen_motion_seeds)),
                driving_shape_seed=int(rng.choice(manifest.train_shape_seeds)),
                target_shape_seed=int(rng.choice(manifest.train_shape_seeds)),
                start_frame=int(rng.integers(0, max_start + 1)),
            )
        )
    return windows


def build_window(manifest, spec):
    """Materialize one training window as arrays: driving (T,V,3),
    target (V,3), ground truth (T,V,3), and the shared faces."""
    pair = make_pair(manifest, spec)
    return pair.driving.vertex_frames, pair.target.vertices, pair.ground_truth.vertex_frames, pair.target.faces
