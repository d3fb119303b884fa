"""Mesh motion transfer toolkit.

Animate a target triangle mesh with the motion of a raw driving mesh
sequence: a numpy-backed autodiff engine, a style-modulated attention
model, geometric consistency losses, a procedural skinned-limb dataset,
and training/evaluation tooling, all deterministic per seed.
"""

__version__ = "0.1.0"

from .mesh import Mesh, MeshSequence, Neighborhood  # noqa: F401
from .model import ModelConfig, MotionTransferModel  # noqa: F401
from .tensor import Tensor  # noqa: F401
