"""Triangle meshes, mesh sequences, OBJ I/O, adjacency, shuffling, noise.

Meshes are immutable after construction: vertex and face arrays are stored
as non-writeable copies, so values can be shared freely between threads.
"""

from __future__ import annotations

import json
import os
import re

import numpy as np

__all__ = [
    "Mesh",
    "MeshSequence",
    "Neighborhood",
    "MeshError",
    "ObjParseError",
    "load_obj",
    "save_obj",
    "load_sequence",
    "save_sequence",
    "build_neighborhood",
    "permute_vertices",
    "add_uniform_noise",
]


class MeshError(ValueError):
    """Invalid mesh data (bad indices, non-finite coordinates, degenerate faces)."""


class ObjParseError(MeshError):
    """Malformed OBJ record; carries the 1-based line number."""

    def __init__(self, message, line_number):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


def _freeze(arr):
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


class Mesh:
    """V x 3 vertex coordinates plus triangle faces (0-based index triples)."""

    __slots__ = ("vertices", "faces")

    def __init__(self, vertices, faces):
        vertices = np.asarray(vertices, dtype=np.float64)
        faces = np.asarray(faces, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshError(f"vertices must be V x 3, got {vertices.shape}")
        if faces.size == 0:
            faces = faces.reshape(0, 3)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise MeshError(f"faces must be F x 3, got {faces.shape}")
        if not np.isfinite(vertices).all():
            raise MeshError("non-finite vertex coordinate")
        v = vertices.shape[0]
        if faces.size and (faces.min() < 0 or faces.max() >= v):
            raise MeshError(f"face index out of range [0, {v})")
        if faces.size:
            a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
            if ((a == b) | (b == c) | (a == c)).any():
                raise MeshError("degenerate face with repeated vertex index")
        self.vertices = _freeze(vertices)
        self.faces = _freeze(faces)

    @property
    def vertex_count(self):
        return self.vertices.shape[0]

    @property
    def face_count(self):
        return self.faces.shape[0]

    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def __repr__(self):
        return f"Mesh(V={self.vertex_count}, F={self.face_count})"


class MeshSequence:
    """T frames of vertex positions over one shared triangle topology."""

    __slots__ = ("vertex_frames", "faces")

    def __init__(self, vertex_frames, faces):
        vertex_frames = np.asarray(vertex_frames, dtype=np.float64)
        if vertex_frames.ndim != 3 or vertex_frames.shape[2] != 3 or vertex_frames.shape[0] < 1:
            raise MeshError(f"vertex_frames must be T x V x 3 with T >= 1, got {vertex_frames.shape}")
        if not np.isfinite(vertex_frames).all():
            raise MeshError("non-finite vertex coordinate in sequence")
        # reuse Mesh validation for the shared topology
        probe = Mesh(vertex_frames[0], faces)
        self.vertex_frames = _freeze(vertex_frames)
        self.faces = probe.faces

    @classmethod
    def from_meshes(cls, meshes):
        if not meshes:
            raise MeshError("empty mesh list")
        v = meshes[0].vertex_count
        for m in meshes[1:]:
            if m.vertex_count != v or not np.array_equal(m.faces, meshes[0].faces):
                raise MeshError("all frames must share vertex count and topology")
        return cls(np.stack([m.vertices for m in meshes]), meshes[0].faces)

    @property
    def frame_count(self):
        return self.vertex_frames.shape[0]

    @property
    def vertex_count(self):
        return self.vertex_frames.shape[1]

    def frame(self, t):
        return Mesh(self.vertex_frames[t], self.faces)

    def frames(self):
        return [self.frame(t) for t in range(self.frame_count)]

    def bounding_box(self):
        flat = self.vertex_frames.reshape(-1, 3)
        return flat.min(axis=0), flat.max(axis=0)

    def __repr__(self):
        return f"MeshSequence(T={self.frame_count}, V={self.vertex_count})"


class Neighborhood:
    """Per-vertex sorted adjacency derived from the undirected face edge set."""

    __slots__ = ("neighbors", "_edges")

    def __init__(self, neighbors):
        self.neighbors = [np.asarray(n, dtype=np.int64) for n in neighbors]
        for i, n in enumerate(self.neighbors):
            if (n == i).any():
                raise MeshError(f"self-adjacency at vertex {i}")
        p = np.concatenate([np.full(len(n), i, dtype=np.int64) for i, n in enumerate(self.neighbors)]) \
            if self.neighbors else np.zeros(0, dtype=np.int64)
        u = np.concatenate(self.neighbors) if self.neighbors else np.zeros(0, dtype=np.int64)
        self._edges = (p, u)

    @property
    def vertex_count(self):
        return len(self.neighbors)

    def directed_edges(self):
        """(p, u) index arrays with each undirected edge appearing twice,
        once per direction — matching the double sum over p and N(p)."""
        return self._edges


def build_neighborhood(mesh):
    adj = [set() for _ in range(mesh.vertex_count)]
    for a, b, c in mesh.faces:
        adj[a].update((b, c))
        adj[b].update((a, c))
        adj[c].update((a, b))
    return Neighborhood([sorted(s) for s in adj])


def permute_vertices(mesh, perm):
    """Relabel vertices: new index of old vertex i is perm[i]; faces remapped
    so geometry is unchanged."""
    perm = np.asarray(perm, dtype=np.int64)
    v = mesh.vertex_count
    if perm.shape != (v,) or not np.array_equal(np.sort(perm), np.arange(v)):
        raise MeshError(f"permutation must be a bijection on [0, {v})")
    new_vertices = np.empty_like(mesh.vertices)
    new_vertices[perm] = mesh.vertices
    return Mesh(new_vertices, perm[mesh.faces])


def add_uniform_noise(seq, amplitude, seed):
    """Perturb each coordinate by U[-a, a], a = amplitude x sequence-wide
    bounding-box diagonal; deterministic per seed."""
    if amplitude < 0:
        raise MeshError(f"noise amplitude must be >= 0, got {amplitude}")
    lo, hi = seq.bounding_box()
    a = amplitude * float(np.linalg.norm(hi - lo))
    rng = np.random.default_rng(seed)
    noise = rng.uniform(-a, a, size=seq.vertex_frames.shape)
    return MeshSequence(seq.vertex_frames + noise, seq.faces)


# -- Wavefront OBJ (v / f subset) ------------------------------------------------

_FLOAT = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?$")


def load_obj(path):
    vertices = []
    faces = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            tokens = raw.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            tag = tokens[0]
            if tag == "v":
                if len(tokens) < 4:
                    raise ObjParseError("vertex record needs 3 coordinates", lineno)
                try:
                    xyz = [float(t) for t in tokens[1:4]]  # extra attrs (color, w) ignored
                except ValueError:
                    raise ObjParseError(f"bad vertex coordinate in {raw.strip()!r}", lineno) from None
                if not all(np.isfinite(xyz)):
                    raise ObjParseError("non-finite vertex coordinate", lineno)
                vertices.append(xyz)
            elif tag == "f":
                if len(tokens) < 4:
                    raise ObjParseError("face record needs at least 3 vertices", lineno)
                idx = []
                for t in tokens[1:]:
                    head = t.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise ObjParseError(f"bad face index {t!r}", lineno) from None
                    if i < 1:
                        raise ObjParseError(f"face index must be positive (1-based), got {i}", lineno)
                    idx.append(i - 1)
                for k in range(1, len(idx) - 1):  # fan triangulation for polygons
                    faces.append((idx[0], idx[k], idx[k + 1]))
            # other record types (vn, vt, o, g, s, mtllib, usemtl, ...) ignored
    try:
        return Mesh(np.asarray(vertices, dtype=np.float64).reshape(-1, 3), faces)
    except MeshError as exc:
        raise MeshError(f"{path}: {exc}") from exc


def save_obj(mesh, path):
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
        for a, b, c in mesh.faces:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


# -- mesh-sequence directory format ----------------------------------------------

_ROLES = ("driving", "target", "generated", "ground_truth")


def save_sequence(seq, directory, role, fps=None):
    """Write frame_0000.obj ... plus manifest.json."""
    if role not in _ROLES:
        raise MeshError(f"role must be one of {_ROLES}, got {role!r}")
    os.makedirs(directory, exist_ok=True)
    for t in range(seq.frame_count):
        save_obj(seq.frame(t), os.path.join(directory, f"frame_{t:04d}.obj"))
    manifest = {"frame_count": seq.frame_count, "vertex_count": seq.vertex_count, "role": role}
    if fps is not None:
        manifest["fps"] = fps
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_sequence(directory):
    manifest_path = os.path.join(directory, "manifest.json")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    frames = []
    for t in range(manifest["frame_count"]):
        frames.append(load_obj(os.path.join(directory, f"frame_{t:04d}.obj")))
    seq = MeshSequence.from_meshes(frames)
    if seq.vertex_count != manifest["vertex_count"]:
        raise MeshError(f"{directory}: manifest vertex_count {manifest['vertex_count']} != {seq.vertex_count}")
    return seq, manifest
