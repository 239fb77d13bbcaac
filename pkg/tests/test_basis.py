import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from conftest import deformed_assembly, random_spd, spd_assembly
from coordcond.basis import (
    BasisError, PerturbationBasis, RotationField, basis_residuals, build_basis, cache_key, corotate_basis,
    estimate_rotations, inject_noise, load_basis, restart_basis, save_basis,
)
from coordcond.energy import assemble, make_state
from coordcond.mesh import make_grid


def _rot(t):
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


class TestConstruction:
    def test_rod_closed_form(self, stretched_rod):
        """Pinned-pinned chain: moving vertex i drags the rest linearly toward the pins."""
        B = build_basis(assemble(make_state(stretched_rod), stretched_rod))
        free = stretched_rod.bc.free_vertices
        last = stretched_rod.mesh.n_vertices - 1
        for i, vi in enumerate(free):
            expected = np.where(free < vi, free / vi, (last - free) / (last - vi))
            expected[i] = 0.0
            np.testing.assert_allclose(B.U[i, :, 0], expected, atol=1e-12)

    def test_residual_and_own_block(self, stretched_grid, rng):
        _, asm = deformed_assembly(stretched_grid, rng)
        B = build_basis(asm)
        assert basis_residuals(B, asm.hessian).max() < 1e-10
        idx = np.arange(B.n_vertices)
        assert not B.blocks()[idx, idx].any()

    @pytest.mark.parametrize("dim", [1, 2, 3])
    def test_inverse_matches_schur(self, dim, rng):
        H = random_spd(rng, 6 * dim)
        asm = spd_assembly(H, np.zeros(6 * dim), dim)
        a = build_basis(asm)
        b = build_basis(asm, method="schur")
        np.testing.assert_allclose(a.U, b.U, atol=1e-10)

    def test_definition(self, rng):
        H = random_spd(rng, 8)
        B = build_basis(spd_assembly(H, np.zeros(8), 2))
        comp = np.r_[0:4, 6:8]
        Ui = B.complementary(2)
        np.testing.assert_allclose(H[np.ix_(comp, comp)] @ Ui, -H[np.ix_(comp, [4, 5])], atol=1e-10)

    def test_stacked_layout(self, rng):
        B = build_basis(spd_assembly(random_spd(rng, 6), np.zeros(6), 2))
        W = B.stacked()
        np.testing.assert_array_equal(W[:, 2:4], B.U[1])
        assert B.block(0, 2).shape == (2, 2)

    def test_singular_hessian(self, rng):
        H = np.zeros((4, 4))
        with pytest.raises(BasisError):
            build_basis(spd_assembly(H, np.zeros(4), 2))

    def test_unknown_method(self, rng):
        with pytest.raises(ValueError):
            build_basis(spd_assembly(random_spd(rng, 4), np.zeros(4), 2), method="qr")


class TestRotations:
    @settings(max_examples=30, deadline=None)
    @given(st.floats(-3.1, 3.1))
    def test_rigid_rotation_recovered(self, t):
        mesh, _ = make_grid(4, 3, 1.0, 0.5)
        x = mesh.rest_positions @ _rot(t).T + np.array([0.3, -1.0])
        rf = estimate_rotations(x, mesh)
        assert not rf.degenerate.any()
        np.testing.assert_allclose(rf.R, np.broadcast_to(_rot(t), rf.R.shape), atol=1e-10)

    def test_matches_polar_decomposition(self, rng):
        mesh, _ = make_grid(4, 4, 1.0, 1.0)
        x = mesh.rest_positions + 0.08 * rng.standard_normal((16, 2))
        rf = estimate_rotations(x, mesh)
        X = mesh.rest_positions
        for v, nbrs in enumerate(mesh.neighbors()):
            er, ec = X[nbrs] - X[v], x[nbrs] - x[v]
            A = np.linalg.lstsq(er, ec, rcond=None)[0].T
            R, _ = sla.polar(A)
            if np.linalg.det(R) > 0:
                np.testing.assert_allclose(rf.R[v], R, atol=1e-10)

    def test_collapsed_one_ring_is_identity(self):
        mesh, _ = make_grid(3, 3, 1.0, 1.0)
        rf = estimate_rotations(np.zeros((9, 2)), mesh)
        assert rf.degenerate.all()
        np.testing.assert_array_equal(rf.R, np.broadcast_to(np.eye(2), (9, 2, 2)))

    def test_rod_rotations_trivial(self, stretched_rod):
        rf = estimate_rotations(stretched_rod.mesh.rest_positions, stretched_rod.mesh)
        assert rf.R.shape == (12, 1, 1) and np.all(rf.R == 1)

    def test_corotation(self, stretched_grid, rng):
        _, asm = deformed_assembly(stretched_grid, rng)
        B = build_basis(asm)
        n = stretched_grid.mesh.n_vertices
        ident = corotate_basis(B, RotationField(np.broadcast_to(np.eye(2), (n, 2, 2)).copy(), np.zeros(n, bool)))
        np.testing.assert_allclose(ident.U, B.U)
        R = np.stack([_rot(0.1 * k) for k in range(n)])
        rot = corotate_basis(B, RotationField(R, np.zeros(n, bool)))
        j = 4
        np.testing.assert_allclose(rot.block(1, j), R[B.free_vertices[j]] @ B.block(1, j))
        assert rot.U is not B.U


class TestRestart:
    def test_rebuild_after_period(self, stretched_rod):
        asm = assemble(make_state(stretched_rod), stretched_rod)
        B = build_basis(asm, step=0)
        same, rebuilt = restart_basis(B, asm, step=4, period=5)
        assert same is B and not rebuilt
        new, rebuilt = restart_basis(B, asm, step=5, period=5)
        assert rebuilt and new.built_step == 5

    def test_bad_period(self, stretched_rod):
        asm = assemble(make_state(stretched_rod), stretched_rod)
        with pytest.raises(ValueError):
            restart_basis(build_basis(asm), asm, 1, 0)


class TestNoise:
    @pytest.fixture
    def basis(self, stretched_rod):
        return build_basis(assemble(make_state(stretched_rod), stretched_rod))

    def test_seeded_and_bounded(self, basis):
        a = inject_noise(basis, 0.1, seed=3)
        b = inject_noise(basis, 0.1, seed=3)
        c = inject_noise(basis, 0.1, seed=4)
        np.testing.assert_array_equal(a.U, b.U)
        assert not np.array_equal(a.U, c.U)
        assert np.abs(a.U - basis.U).max() <= 0.1

    def test_own_block_stays_zero(self, basis):
        idx = np.arange(basis.n_vertices)
        assert not inject_noise(basis, 1.0, 0).blocks()[idx, idx].any()
        assert not inject_noise(basis, 1.0, 0, law="constant").blocks()[idx, idx].any()

    def test_constant_law(self, basis):
        d = inject_noise(basis, 0.2, law="constant").U - basis.U
        assert set(np.round(np.unique(d), 12)) == {0.0, 0.2}

    def test_zero_sigma_copies(self, basis):
        z = inject_noise(basis, 0.0)
        np.testing.assert_array_equal(z.U, basis.U)
        assert z.U is not basis.U

    @pytest.mark.parametrize("sigma, law", [(-1.0, "uniform"), (0.1, "gaussian")])
    def test_invalid(self, basis, sigma, law):
        with pytest.raises(ValueError):
            inject_noise(basis, sigma, law=law)


class TestCache:
    def test_roundtrip_and_key(self, tmp_path, stretched_rod):
        x = stretched_rod.mesh.rest_positions
        B = build_basis(assemble(make_state(stretched_rod), stretched_rod), x=x)
        key = cache_key({"a": 1}, x, ("elastic",))
        p = tmp_path / "basis.npz"
        save_basis(p, B, key)
        got = load_basis(p, key)
        assert isinstance(got, PerturbationBasis)
        np.testing.assert_array_equal(got.U, B.U)
        np.testing.assert_array_equal(got.built_x, x)
        assert load_basis(p, cache_key({"a": 2}, x, ("elastic",))) is None
        assert load_basis(tmp_path / "missing.npz") is None

    def test_key_depends_on_configuration(self):
        x = np.zeros((3, 1))
        assert cache_key({}, x) != cache_key({}, x + 1e-9)
        assert cache_key({}, x, ("elastic",)) != cache_key({}, x, ("elastic", "springs"))
