"""Diffusion matrix, tabulation, and the two steady-state solvers (d=1)."""

import numpy as np
import pytest

from phonheat.collision import kinetic_collision
from phonheat.errors import ConfigError
from phonheat.transport import (
    A_BUCKET,
    BoundaryConditions,
    DiffusionTable,
    LocalEquilibriumProfile,
    diffusion_matrix,
    family_tangents,
    solve_hydro,
    solve_kinetic_bvp,
)


@pytest.fixture(scope="module")
def D0(d1_cfg):
    return diffusion_matrix(d1_cfg, 1.0, 0.0)


class TestFamilyTangents:
    def test_finite_differences(self, d1_disp):
        g_T, g_A = family_tangents(d1_disp, 1.3, 0.2)
        h = 1e-6
        om = d1_disp.omega
        fd_T = ((1.3 + h) / (om - 0.2) - (1.3 - h) / (om - 0.2)) / (2 * h)
        fd_A = (1.3 / (om - 0.2 - h) - 1.3 / (om - 0.2 + h)) / (2 * h)
        assert np.allclose(g_T, fd_T, rtol=1e-8)
        assert np.allclose(g_A, fd_A, rtol=1e-8)

    def test_validation(self, d1_disp):
        with pytest.raises(ConfigError):
            family_tangents(d1_disp, 1.0, d1_disp.m_sq)


class TestBoundaryData:
    def test_boundary_validation(self):
        with pytest.raises(ConfigError):
            BoundaryConditions(T1=0.0, T2=1.0).validate(1.0)
        with pytest.raises(ConfigError):
            BoundaryConditions(T1=1.0, T2=1.0, A2=1.5).validate(1.0)
        BoundaryConditions(T1=1.0, T2=2.0).validate(1.0)

    def test_profile_validation(self):
        bc = BoundaryConditions(T1=1.0, T2=2.0)
        x = np.linspace(0, 1, 5)
        good = LocalEquilibriumProfile(
            x=x, T=np.linspace(1, 2, 5), A=np.zeros(5), boundary=bc)
        good.validate(1.0)
        assert np.allclose(good.beta, 1.0 / good.T)
        bad = LocalEquilibriumProfile(
            x=x, T=np.linspace(1.1, 2, 5), A=np.zeros(5), boundary=bc)
        with pytest.raises(ConfigError, match="boundary"):
            bad.validate(1.0)


class TestDiffusionMatrix:
    def test_reports(self, D0):
        assert D0.positive_definite
        assert D0.kappa == D0.matrix[0, 0] > 0
        assert D0.onsager_defect <= 0.2
        assert D0.solve_residual <= 1e-10
        assert np.isfinite(D0.condition)

    def test_rejects_bad_scale(self, d1_cfg):
        with pytest.raises(ConfigError):
            diffusion_matrix(d1_cfg, 1.0, 0.0, R=0.0)

    def test_exact_temperature_homogeneity(self, d1_cfg, D0):
        D2 = diffusion_matrix(d1_cfg, 2.0, 0.0)
        assert np.abs(D2.matrix[:, 0] - D0.matrix[:, 0] / 4.0).max() <= 1e-12
        assert np.abs(D2.matrix[:, 1] - D0.matrix[:, 1] / 2.0).max() <= 1e-12
        assert D2.kappa / D0.kappa == pytest.approx(0.25, abs=1e-14)

    def test_exact_R_scaling(self, d1_cfg, D0):
        D4 = diffusion_matrix(d1_cfg, 1.0, 0.0, R=4.0)
        assert np.abs(D4.matrix - D0.matrix / 4.0).max() <= 1e-13

    def test_cached_path_lossless_on_buckets(self, d1_cfg):
        a = 20 * A_BUCKET
        exact = diffusion_matrix(d1_cfg, 1.7, a, exact=True).matrix
        cached = diffusion_matrix(d1_cfg, 1.7, a, exact=False).matrix
        assert np.abs(cached - exact).max() <= 1e-10 * np.abs(exact).max()


class TestDiffusionTable:
    def test_node_exactness(self, d1_cfg):
        tab = DiffusionTable(d1_cfg)
        a = 2 * A_BUCKET
        ref = diffusion_matrix(d1_cfg, 1.0, a).matrix
        assert np.abs(tab.evaluate(1.0, a) - ref).max() <= \
            1e-10 * np.abs(ref).max()

    def test_interpolation_error_small(self, d1_cfg):
        tab = DiffusionTable(d1_cfg)
        a = 2.46 * A_BUCKET
        ref = diffusion_matrix(d1_cfg, 1.0, a).matrix
        err = np.abs(tab.evaluate(1.0, a) - ref).max() / np.abs(ref).max()
        assert err <= 1e-4

    def test_temperature_scaling_matches_exact(self, d1_cfg):
        tab = DiffusionTable(d1_cfg)
        a = 3 * A_BUCKET
        ref = diffusion_matrix(d1_cfg, 2.5, a).matrix
        assert np.abs(tab.evaluate(2.5, a) - ref).max() <= \
            1e-10 * np.abs(ref).max()

    def test_nodes_fill_lazily(self, d1_cfg):
        tab = DiffusionTable(d1_cfg)
        assert len(tab._nodes) == 0
        tab.evaluate(1.0, 0.5 * A_BUCKET)
        assert sorted(tab._nodes) == [0, 1]


class TestHydro:
    def test_equal_boundaries_exact(self, d1_cfg):
        r = solve_hydro(d1_cfg, BoundaryConditions(T1=1.3, T2=1.3))
        assert r.J_heat == 0.0 and r.J_number == 0.0
        assert r.iterations == 0
        assert np.abs(r.profile.T - 1.3).max() == 0.0

    def test_temperature_drive(self, d1_cfg):
        r = solve_hydro(d1_cfg, BoundaryConditions(T1=1.0, T2=1.25))
        assert r.J_heat < 0  # heat flows down the gradient
        assert r.kappa > 0
        assert r.residuals["flux_newton"] <= 1e-10
        assert r.residuals["exact_D_flux_defect"] <= 1e-10
        # profile is monotone between the boundary values
        assert np.all(np.diff(r.profile.T) > 0)

    def test_beta_profile_nearly_linear(self, d1_cfg):
        r = solve_hydro(d1_cfg, BoundaryConditions(T1=1.0, T2=1.25))
        beta = r.beta
        line = beta[0] + (beta[-1] - beta[0]) * r.profile.x
        assert np.abs(beta - line).max() / np.abs(beta).max() <= 1e-4

    def test_beta_deviation_shrinks_with_dT(self, d1_cfg):
        devs = []
        mids = []
        for dT in (0.25, 0.125, 0.0625):
            r = solve_hydro(d1_cfg, BoundaryConditions(T1=1.0, T2=1.0 + dT))
            beta = r.beta
            line = beta[0] + (beta[-1] - beta[0]) * r.profile.x
            devs.append(np.abs(beta - line).max() / np.abs(beta).max())
            harmonic = 2.0 / (beta[0] + beta[-1])
            arith = 1.0 + dT / 2
            t_mid = r.profile.T[r.profile.x.size // 2]
            mids.append(abs(t_mid - harmonic) < abs(t_mid - arith))
        assert devs[0] / devs[1] >= 1.4
        assert devs[1] / devs[2] >= 1.4
        assert all(mids)

    def test_exact_flux_R_scaling(self, d1_cfg):
        bc = BoundaryConditions(T1=1.0, T2=1.25)
        r1 = solve_hydro(d1_cfg, bc)
        r4 = solve_hydro(d1_cfg, bc, R=4.0)
        assert r4.J_heat / r1.J_heat == pytest.approx(0.25, abs=1e-12)
        assert np.abs(r4.profile.T - r1.profile.T).max() <= 1e-12

    def test_reversal_mirror(self, d1_cfg):
        fwd = solve_hydro(d1_cfg, BoundaryConditions(T1=1.0, T2=1.25))
        rev = solve_hydro(d1_cfg, BoundaryConditions(T1=1.25, T2=1.0))
        assert rev.J_heat == pytest.approx(-fwd.J_heat, rel=1e-12)
        assert np.abs(rev.profile.T - fwd.profile.T[::-1]).max() <= 1e-12

    def test_A_drive_converges(self, d1_cfg):
        r = solve_hydro(d1_cfg, BoundaryConditions(T1=1.0, T2=1.0,
                                                   A1=0.0, A2=0.1))
        assert r.residuals["flux_newton"] <= 1e-10
        assert r.J_number != 0.0
        assert np.abs(r.profile.A[0]) == 0.0
        assert r.profile.A[-1] == pytest.approx(0.1)


class TestKineticBVP:
    def test_equal_boundaries_short_circuit(self, d1_cfg):
        r = solve_kinetic_bvp(d1_cfg, BoundaryConditions(T1=1.0, T2=1.0),
                              R=2.0)
        assert r.J_heat == 0.0 and r.J_number == 0.0
        assert r.iterations == 0
        assert r.kinetic_state is not None
        # nodal fields are the bare local equilibrium
        veq = 1.0 / d1_cfg.dispersion.omega
        assert np.abs(r.kinetic_state.V - veq).max() == 0.0
        # the floor is the raw collision residual of equilibrium itself
        floor = 2.0 * np.abs(kinetic_collision(d1_cfg, veq)).max()
        assert r.residual_floor == pytest.approx(floor, rel=1e-12)

    def test_current_constancy(self, d1_cfg):
        r = solve_kinetic_bvp(d1_cfg, BoundaryConditions(T1=1.0, T2=1.25),
                              R=4.0)
        assert r.residuals["current_constancy"] <= 1e-9
        assert r.J_heat < 0

    def test_approaches_hydro_at_large_R(self, d1_cfg):
        bc = BoundaryConditions(T1=1.0, T2=1.25)
        discs = []
        for R in (2.0, 4.0, 16.0):
            rk = solve_kinetic_bvp(d1_cfg, bc, R=R)
            rh = solve_hydro(d1_cfg, bc, R=R)
            discs.append(np.abs(rk.profile.T - rh.profile.T).max()
                         / np.abs(rh.profile.T).max())
        assert discs[0] > discs[1] > discs[2]
        assert discs[2] <= 1e-4

    def test_deviation_scale(self, d1_cfg):
        # the residual floor grows linearly in R (it is R times the
        # broadening-limited equilibrium residual)
        bc = BoundaryConditions(T1=1.0, T2=1.25)
        r4 = solve_kinetic_bvp(d1_cfg, bc, R=4.0)
        r16 = solve_kinetic_bvp(d1_cfg, bc, R=16.0)
        assert r16.residual_floor / r4.residual_floor == \
            pytest.approx(4.0, rel=0.05)
