"""Linearized operator blocks, zero-mode geometry, complement solver."""

import numpy as np
import pytest

from phonheat.collision import kinetic_collision
from phonheat.errors import ConditioningError, ConfigError
from phonheat.lattice import Dispersion, build_grid
from phonheat.linear_ops import (
    ComplementFactor,
    complement_solve,
    linearize,
    project_complement,
    solve_on_complement,
    weighted_inner,
    zero_mode_basis,
)


@pytest.fixture(scope="module")
def op(d1_cfg):
    return linearize(d1_cfg, 1.0, 0.0)


class TestWeightedGeometry:
    def test_inner_product_properties(self, d1_disp, rng):
        f = rng.normal(size=d1_disp.grid.n_points)
        g = rng.normal(size=d1_disp.grid.n_points)
        h = rng.normal(size=d1_disp.grid.n_points)
        assert weighted_inner(d1_disp, f, g) == pytest.approx(
            weighted_inner(d1_disp, g, f))
        assert weighted_inner(d1_disp, f, g + 2 * h) == pytest.approx(
            weighted_inner(d1_disp, f, g) + 2 * weighted_inner(d1_disp, f, h))
        assert weighted_inner(d1_disp, f, f) > 0

    def test_zero_mode_basis(self, d1_disp):
        z = zero_mode_basis(d1_disp)
        assert np.allclose(z[0], d1_disp.omega**-2)
        assert np.allclose(z[1], d1_disp.omega**-3)

    def test_modes_dual_to_conservation_weights(self, d1_disp):
        # the w^3 weight turns <z_i, f> into plain number/energy sums
        z = zero_mode_basis(d1_disp)
        f = np.sin(np.arange(d1_disp.grid.n_points))
        w = d1_disp.grid.weight
        assert weighted_inner(d1_disp, z[0], f) == pytest.approx(
            np.sum(d1_disp.omega * f) * w)
        assert weighted_inner(d1_disp, z[1], f) == pytest.approx(
            np.sum(f) * w)

    def test_projection_properties(self, d1_disp, rng):
        f = rng.normal(size=d1_disp.grid.n_points)
        pf = project_complement(d1_disp, f)
        ppf = project_complement(d1_disp, pf)
        assert np.allclose(pf, ppf, atol=1e-12)
        for mode in zero_mode_basis(d1_disp):
            assert abs(weighted_inner(d1_disp, mode, pf)) <= 1e-12
            assert np.abs(project_complement(d1_disp, mode)).max() <= 1e-12


class TestLinearization:
    def test_action_matches_finite_differences(self, d1_cfg, op, rng):
        from phonheat.collision import equilibrium_v
        v0 = equilibrium_v(d1_cfg.dispersion, 1.0, 0.0)
        h = 1e-6
        for _ in range(5):
            u = rng.normal(size=op.n)
            u /= np.abs(u).max()
            # l22 acts on occupation-sector data through one power of w
            du = d1_cfg.dispersion.omega * u
            fd = (kinetic_collision(d1_cfg, v0 + h * du)
                  - kinetic_collision(d1_cfg, v0 - h * du)) / (2 * h)
            err = np.abs(op.l22 @ u - fd).max() / np.abs(fd).max()
            assert err <= 1e-6

    def test_block_structure_at_p_zero(self, op):
        assert op.parity_defect() == 0.0
        assert np.all(op.l12 == 0) and np.all(op.l21 == 0)
        assert op.full_matrix().shape == (2 * op.n, 2 * op.n)

    def test_nonzero_slow_momentum_unsupported(self, d1_cfg):
        with pytest.raises(NotImplementedError):
            linearize(d1_cfg, 1.0, 0.0, p=0.3)

    def test_left_null_exact(self, op):
        number, energy = op.left_null_defect()
        assert number <= 1e-12
        assert energy <= 1e-12

    def test_right_null_shrinks_with_epsilon(self, d1_cfg):
        eps0 = d1_cfg.regularization.epsilon
        defects = []
        for lvl in range(1, 5):
            o = linearize(d1_cfg.with_epsilon(eps0 / 2**lvl), 1.0, 0.0)
            defects.append(o.right_null_defect())
        for j in (0, 1):
            ladder = [d[j] for d in defects]
            ratios = [ladder[i] / ladder[i + 1] for i in range(3)]
            assert all(r >= 1.4 for r in ratios)

    def test_symmetry_defect_is_broadening_artifact(self, d1_cfg, op):
        sym = op.symmetry_defect()
        assert sym <= 0.05
        half = linearize(d1_cfg.with_epsilon(
            d1_cfg.regularization.epsilon / 2), 1.0, 0.0)
        assert half.symmetry_defect() <= 0.7 * sym

    def test_sigma_min_split(self, op):
        s_full, s_restricted = op.sigma_min_l11()
        assert s_full <= 1e-12 * np.abs(op.l11).max()
        assert s_restricted > 0.1

    def test_spectrum_dissipative(self, op):
        ev = op.spectrum_l22(restricted=True)
        scale = np.abs(ev).max()
        assert ev.real.max() <= 1e-12 * scale
        assert op.dissipativity_report() < 0.0
        # unrestricted spectrum keeps the two near-zero directions
        ev_full = op.spectrum_l22(restricted=False)
        near_zero = np.sum(np.abs(ev_full) < 1e-2 * scale)
        assert near_zero >= 2


class TestComplementSolver:
    def test_defining_properties(self, d1_disp, op, rng):
        factor = ComplementFactor(d1_disp, op.l22)
        rhs = rng.normal(size=op.n)
        sol = factor.solve(rhs)
        h = sol.solution
        # orthogonal to both zero modes
        for mode in zero_mode_basis(d1_disp):
            assert abs(weighted_inner(d1_disp, mode, h)) <= 1e-9
        # residual L h - rhs_perp lies in span{1, w} with the reported
        # multipliers
        rhs_perp = project_complement(d1_disp, rhs)
        cols = np.stack([np.ones(op.n), d1_disp.omega], axis=1)
        gap = op.l22 @ h + cols @ sol.multipliers - rhs_perp
        assert np.abs(gap).max() <= 1e-9 * np.abs(rhs_perp).max()
        assert sol.residual <= 1e-10
        assert sol.condition >= 1.0
        assert sol.refinement_steps >= 1

    def test_matches_dense_bordered_oracle(self, d1_disp, op, rng):
        factor = ComplementFactor(d1_disp, op.l22)
        rhs = project_complement(d1_disp, rng.normal(size=op.n))
        got = factor.solve(rhs).solution
        om = d1_disp.omega
        om3w = om**3 * d1_disp.grid.weight
        bordered = np.zeros((op.n + 2, op.n + 2))
        bordered[:op.n, :op.n] = op.l22
        bordered[:op.n, op.n] = 1.0
        bordered[:op.n, op.n + 1] = om
        bordered[op.n, :op.n] = om**-2 * om3w
        bordered[op.n + 1, :op.n] = om**-3 * om3w
        ref = np.linalg.solve(bordered, np.concatenate([rhs, [0, 0]]))[:op.n]
        assert np.abs(got - ref).max() <= 1e-8 * np.abs(ref).max()

    def test_factor_reuse_matches_one_shot(self, d1_disp, op, rng):
        factor = ComplementFactor(d1_disp, op.l22)
        for _ in range(3):
            rhs = rng.normal(size=op.n)
            a = factor.solve(rhs).solution
            b = complement_solve(d1_disp, op.l22, rhs).solution
            c = solve_on_complement(d1_disp, op.l22, rhs)
            assert np.allclose(a, b, atol=1e-12)
            assert np.array_equal(b, c)

    def test_scaled_operator_identity(self, d1_disp, op, rng):
        # h(cL, rhs) = h(L, rhs/c): the identity the transport cache uses
        factor1 = ComplementFactor(d1_disp, op.l22)
        factor2 = ComplementFactor(d1_disp, 4.0 * op.l22)
        rhs = rng.normal(size=op.n)
        h1 = factor1.solve(rhs / 4.0).solution
        h2 = factor2.solve(rhs).solution
        assert np.abs(h1 - h2).max() <= 1e-10 * np.abs(h2).max()

    def test_condition_refusal(self, d1_disp, op):
        with pytest.raises(ConditioningError, match="refusing"):
            ComplementFactor(d1_disp, op.l22, condition_limit=1.0)

    def test_shape_validation(self, d1_disp, op):
        with pytest.raises(ConfigError):
            ComplementFactor(d1_disp, op.l22[:4, :4])
        factor = ComplementFactor(d1_disp, op.l22)
        with pytest.raises(ConfigError):
            factor.solve(np.zeros(3))
