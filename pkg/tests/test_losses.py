"""Loss identities, invariances, and hand-computed oracle cases."""

import numpy as np
import pytest

from meshmotion.losses import (
    LossOptions,
    LossWeights,
    appearance_loss,
    full_objective,
    mesh_to_batch,
    motion_loss,
    pmd,
    pmd_sequences,
    reconstruction_loss,
    seq_to_batch,
)
from meshmotion.mesh import Mesh, MeshSequence, build_neighborhood
from meshmotion.tensor import ShapeError, Tensor


def random_batch(seed=0, n=1, t=3, v=10):
    rng = np.random.default_rng(seed)
    return rng.uniform(-0.8, 0.8, size=(n, t, 3, v))


@pytest.fixture
def line_edges():
    # path graph 0-1-2-...-9: undirected edges doubled
    mesh = Mesh(np.c_[np.arange(10), np.zeros(10), np.zeros(10)], [[i, i + 1, (i + 2) % 10] for i in range(8)])
    return build_neighborhood(mesh).directed_edges()


class TestWeightsOptions:
    def test_defaults_match_training_recipe(self):
        w = LossWeights()
        assert w.reconstruction == 1.0
        assert w.motion == w.appearance == 0.0005

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(-1.0, 0.0, 0.0)

    def test_bad_term_rejected(self):
        with pytest.raises(ValueError):
            LossOptions(term="cube")


class TestReconstruction:
    def test_zero_on_identical(self):
        g = random_batch()
        assert reconstruction_loss(Tensor(g), g).item() == 0.0

    def test_hand_value(self):
        # one frame, one vertex, displacement (1, 2, 2): squared distance 9
        gen = np.zeros((1, 1, 3, 1))
        truth = np.array([1.0, 2.0, 2.0]).reshape(1, 1, 3, 1)
        assert reconstruction_loss(Tensor(gen), truth).item() == pytest.approx(9.0)

    def test_normalization_by_frames_and_vertices(self):
        gen = np.zeros((2, 3, 3, 5))
        truth = np.ones_like(gen)
        # every vertex offset by (1,1,1): squared distance 3 everywhere
        assert reconstruction_loss(Tensor(gen), truth).item() == pytest.approx(3.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            reconstruction_loss(Tensor(np.zeros((1, 3, 3, 4))), np.zeros((1, 3, 3, 5)))


class TestMotion:
    def test_zero_on_driving_itself(self):
        g = random_batch(1)
        assert motion_loss(Tensor(g), g).item() == pytest.approx(0.0, abs=1e-9)

    def test_uniform_scaling_invariance(self):
        # scaling the generated sequence scales every ratio by c^2; the
        # difference of consecutive ratios is penalized, not their size
        g = random_batch(2, t=5)
        drive = random_batch(3, t=5)
        a = motion_loss(Tensor(g), drive).item()
        b = motion_loss(Tensor(3.7 * g), drive).item()
        assert b == pytest.approx(3.7**2 * a, rel=1e-9)
        center = g.mean()
        c = motion_loss(Tensor(center + 2.0 * (g - center)), drive).item()
        assert c == pytest.approx(4.0 * a, rel=1e-9)

    def test_zero_when_ratios_match(self):
        g = random_batch(4, t=4)
        assert motion_loss(Tensor(0.5 * g), g).item() == pytest.approx(0.0, abs=1e-9)

    def test_needs_three_frames(self):
        with pytest.raises(ShapeError):
            motion_loss(Tensor(random_batch(t=2)), random_batch(t=2))

    def test_eps_guards_frozen_driving(self):
        g = random_batch(5)
        frozen = np.repeat(random_batch(6, t=1), 3, axis=1)
        assert np.isfinite(motion_loss(Tensor(g), frozen).item())

    def test_hand_value(self):
        # single vertex on a line, T=3: driving step squared norms in ratio
        # 1 then 4, generated 2 then 4 -> |2/1 - 4/4| = 1; magnitudes large
        # enough that the eps guard stays below the 1e-9 tolerance
        drive = np.zeros((1, 3, 3, 1))
        drive[0, 1, 0, 0] = 10.0
        drive[0, 2, 0, 0] = 30.0
        gen = np.zeros((1, 3, 3, 1))
        gen[0, 1, 0, 0] = np.sqrt(200.0)
        gen[0, 2, 0, 0] = np.sqrt(200.0) + 20.0
        assert motion_loss(Tensor(gen), drive).item() == pytest.approx(1.0, abs=1e-9)


class TestAppearance:
    def test_zero_on_repeated_target(self, line_edges):
        target = random_batch(7, t=1)[:, 0]  # (1, 3, 10)
        gen = np.repeat(target[:, None], 3, axis=1)
        assert appearance_loss(Tensor(gen), target, line_edges).item() == 0.0

    def test_translation_invariance(self, line_edges):
        gen = random_batch(8)
        target = random_batch(9, t=1)[:, 0]
        a = appearance_loss(Tensor(gen), target, line_edges).item()
        shifted = gen + np.arange(1, 4).reshape(1, 1, 3, 1) * np.arange(1, 4).reshape(1, 3, 1, 1)
        b = appearance_loss(Tensor(shifted), target, line_edges).item()
        assert b == pytest.approx(a, rel=1e-9, abs=1e-12)

    def test_hand_built_stretched_edge(self):
        # V=3 triangle, T=2: edge (0,1) of rest length 1 stretched to 2 in
        # frame 1 without touching the other edges (vertex 2 sits on the
        # perpendicular bisector) -> |4-1| * 2 directed copies / (2*3) = 1
        a, b, b2, c = [0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [1.5, 1.0, 0]
        target = np.array([a, b, c]).T[None]  # (1, 3, 3)
        mesh = Mesh([a, b, c], [[0, 1, 2]])
        edges = build_neighborhood(mesh).directed_edges()
        frame0 = np.array([a, b, c]).T
        frame1 = np.array([a, b2, c]).T
        assert np.linalg.norm(np.array(c) - np.array(b)) == pytest.approx(
            np.linalg.norm(np.array(c) - np.array(b2))
        )
        gen = np.stack([frame0, frame1])[None]  # (1, 2, 3, 3)
        value = appearance_loss(Tensor(gen), target, edges).item()
        assert value == pytest.approx(1.0, rel=1e-9)

    def test_permutation_invariance(self, line_edges):
        gen = random_batch(10)
        target = random_batch(11, t=1)[:, 0]
        p, u = line_edges
        perm = np.random.default_rng(0).permutation(10)
        inv = np.argsort(perm)
        a = appearance_loss(Tensor(gen), target, (p, u)).item()
        b = appearance_loss(Tensor(gen[..., inv]), target[..., inv], (perm[p], perm[u])).item()
        assert b == pytest.approx(a, rel=1e-12)

    def test_target_shape_checked(self, line_edges):
        with pytest.raises(ShapeError):
            appearance_loss(Tensor(random_batch()), np.zeros((1, 3, 4)), line_edges)


class TestFullObjective:
    def test_components_and_total(self, line_edges):
        gen = Tensor(random_batch(12), requires_grad=True)
        truth = random_batch(13)
        drive = random_batch(14)
        target = random_batch(15, t=1)[:, 0]
        w = LossWeights()
        total, parts = full_objective(gen, truth, drive, target, line_edges, w)
        expect = w.reconstruction * parts["loss_r"] + w.motion * parts["loss_m"] + w.appearance * parts["loss_a"]
        assert parts["loss_total"] == pytest.approx(expect, rel=1e-12)
        total.backward()
        assert gen.grad is not None and np.isfinite(gen.grad).all()

    def test_zero_at_perfect_output(self, line_edges):
        drive = random_batch(16)
        target = drive[:, 0]
        gen = np.repeat(target[:, None], 3, axis=1)
        total, parts = full_objective(Tensor(gen), gen, np.repeat(target[:, None], 3, axis=1), target, line_edges)
        assert parts["loss_r"] == 0.0 and parts["loss_a"] == 0.0
        assert total.item() == pytest.approx(0.0, abs=1e-9)


class TestPmd:
    def test_zero_on_identical(self):
        g = random_batch(17)
        assert pmd(g, g) == 0.0

    def test_matches_reconstruction_formula(self):
        gen = random_batch(18)
        truth = random_batch(19)
        assert pmd(gen, truth) == pytest.approx(reconstruction_loss(Tensor(gen), truth).item(), rel=1e-12)

    def test_mesh_frame_layout(self):
        rng = np.random.default_rng(20)
        a = rng.normal(size=(4, 7, 3))
        b = rng.normal(size=(4, 7, 3))
        d = a - b
        assert pmd(a, b) == pytest.approx((d * d).sum(axis=2).mean())

    def test_sequences_helper(self):
        faces = [[0, 1, 2]]
        a = MeshSequence(np.random.default_rng(0).normal(size=(3, 3, 3)), faces)
        mean, per_frame = pmd_sequences(a, a)
        assert mean == 0.0 and per_frame.shape == (3,)

    def test_layout_helpers(self):
        faces = [[0, 1, 2]]
        seq = MeshSequence(np.random.default_rng(1).normal(size=(2, 3, 3)), faces)
        assert seq_to_batch(seq).shape == (1, 2, 3, 3)
        assert mesh_to_batch(seq.frame(0)).shape == (1, 3, 3)
