"""Tests for the stochastic strip simulations and their exact oracle."""

import numpy as np
import pytest

from phonheat.errors import ConfigError, DivergenceError
from phonheat.langevin import (
    DT_SAFETY,
    ChainConfig,
    ChainState,
    bond_current,
    cut_currents,
    frequency_bound,
    gamma_preset,
    initial_state,
    lyapunov_oracle,
    run_experiment,
    step,
)


def reference_w2(N, d, transverse, m_sq):
    """Squared pinned Laplacian built site by site, Dirichlet in x1."""
    shape = (N + 1,) + (transverse,) * (d - 1)
    sites = list(np.ndindex(shape))
    pos = {s: i for i, s in enumerate(sites)}
    n = len(sites)
    K = np.zeros((n, n))
    for s in sites:
        i = pos[s]
        K[i, i] = 2.0 * d + m_sq
        for ax in range(d):
            for sgn in (-1, 1):
                t = list(s)
                t[ax] += sgn
                if ax == 0:
                    if not 0 <= t[0] <= N:
                        continue  # wall: q vanishes outside
                else:
                    t[ax] %= transverse
                K[i, pos[tuple(t)]] -= 1.0
    return K @ K, K


def total_energy(cfg, state):
    m = cfg._model
    return (0.5 * state.p @ state.p + 0.5 * state.q @ (m.W2 @ state.q)
            + 0.25 * cfg.lam * np.sum(state.q ** 4))


class TestConfig:
    @pytest.mark.parametrize("kw", [
        dict(N=1),
        dict(N=4, d=4),
        dict(N=4, transverse=0),
        dict(N=4, m_sq=0.0),
        dict(N=4, lam=-0.1),
        dict(N=4, gamma=-1.0),
        dict(N=4, T1=0.0),
        dict(N=4, T2=-2.0),
        dict(N=4, dt=0.05),          # dt * frequency bound over the margin
        dict(N=4, burn_in=300_000),
        dict(N=4, n_batches=8),
        dict(N=4, total_steps=50_000, burn_in=49_990),
    ])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            ChainConfig(**kw)

    def test_default_dt(self):
        cfg = ChainConfig(N=2)
        assert cfg.dt == DT_SAFETY / frequency_bound(1, 1.0)
        cfg3 = ChainConfig(N=2, d=3, transverse=2, m_sq=0.5)
        assert cfg3.dt == pytest.approx(0.02 / 12.5)

    def test_gamma_zero_allowed(self):
        assert ChainConfig(N=4, gamma=0.0).gamma == 0.0

    def test_frequency_bound(self):
        assert frequency_bound(1, 1.0) == 5.0
        assert frequency_bound(3, 0.5) == 12.5

    def test_gamma_preset(self):
        assert gamma_preset(16) == pytest.approx(16.0 ** (-0.9))
        assert gamma_preset(16, alpha=1.0) == 1.0
        with pytest.raises(ConfigError):
            gamma_preset(1)


class TestModel:
    def test_w2_matches_reference_1d(self):
        cfg = ChainConfig(N=7, m_sq=0.8)
        W2, _ = reference_w2(7, 1, 1, 0.8)
        assert np.abs(cfg._model.W2 - W2).max() == 0.0

    def test_w2_matches_reference_3d(self):
        cfg = ChainConfig(N=3, d=3, transverse=2, m_sq=0.5)
        W2, _ = reference_w2(3, 3, 2, 0.5)
        assert np.abs(cfg._model.W2 - W2).max() == 0.0

    def test_dirichlet_spectrum_1d(self):
        # K has the closed-form Dirichlet eigenvalues; W2 their squares
        N, m_sq = 9, 1.0
        cfg = ChainConfig(N=N, m_sq=m_sq)
        j = np.arange(1, N + 2)
        lam_k = m_sq + 2.0 - 2.0 * np.cos(np.pi * j / (N + 2))
        got = np.sort(np.linalg.eigvalsh(cfg._model.W2))
        assert np.abs(got - np.sort(lam_k ** 2)).max() < 1e-10

    def test_frequencies_within_bound(self):
        cfg = ChainConfig(N=4, d=3, transverse=2, m_sq=0.5)
        top = np.linalg.eigvalsh(cfg._model.W2).max()
        assert top <= frequency_bound(3, 0.5) ** 2 + 1e-9

    def test_ou_substep_is_stationary(self):
        # the discrete bath update preserves <p^2> = T exactly
        cfg = ChainConfig(N=4, gamma=0.8, T1=1.5, T2=0.5)
        m = cfg._model
        T_bath = np.where(m.x1[m.bath_idx] == 0, 1.5, 0.5)
        assert np.allclose(m.ou_sigma ** 2,
                           T_bath * (1.0 - m.ou_decay ** 2), atol=1e-15)

    def test_bath_layers(self):
        cfg = ChainConfig(N=5, d=2, transverse=3)
        m = cfg._model
        assert sorted(m.x1[m.bath_idx]) == [0, 0, 0, 5, 5, 5]


class TestCurrents:
    def test_sitewise_continuity_1d(self):
        """Net bond inflow equals the local energy derivative, site by site."""
        cfg = ChainConfig(N=9, lam=0.3)
        m = cfg._model
        rng = np.random.default_rng(7)
        st = ChainState(q=rng.standard_normal(m.n_sites),
                        p=rng.standard_normal(m.n_sites))
        # dH_x/dt under the bulk flow; the quartic term cancels identically
        dh = 0.5 * (st.q * (m.W2 @ st.p) - st.p * (m.W2 @ st.q))
        j = bond_current(st, cfg)
        div = np.zeros(m.n_sites)
        np.add.at(div, m.bond_to, j)
        np.add.at(div, m.bond_from, -j)
        assert np.abs(div - dh).max() < 1e-12

    def test_layerwise_continuity_3d(self):
        # intra-layer bonds drop out of the layer sums, so cut current
        # differences must balance the per-layer energy derivative
        cfg = ChainConfig(N=4, d=3, transverse=2)
        m = cfg._model
        rng = np.random.default_rng(8)
        st = ChainState(q=rng.standard_normal(m.n_sites),
                        p=rng.standard_normal(m.n_sites))
        dh = 0.5 * (st.q * (m.W2 @ st.p) - st.p * (m.W2 @ st.q))
        lay = m.layer_mean(dh) * m.n_columns
        cut = cut_currents(st, cfg) * m.n_columns
        pad = np.concatenate([[0.0], cut, [0.0]])
        assert np.abs(lay - (pad[:-1] - pad[1:])).max() < 1e-11

    def test_time_reversal_flips_current(self):
        cfg = ChainConfig(N=6)
        m = cfg._model
        rng = np.random.default_rng(9)
        st = ChainState(q=rng.standard_normal(m.n_sites),
                        p=rng.standard_normal(m.n_sites))
        rev = ChainState(q=st.q.copy(), p=-st.p)
        assert np.array_equal(bond_current(rev, cfg), -bond_current(st, cfg))
        assert np.array_equal(cut_currents(rev, cfg), -cut_currents(st, cfg))


class TestOracle:
    def test_equilibrium_covariance(self):
        """Equal baths reproduce the Gibbs covariance blocks exactly."""
        cfg = ChainConfig(N=6, T1=1.3, T2=1.3, gamma=0.7)
        res = lyapunov_oracle(cfg)
        n = res.n_sites
        sig = res.covariance
        W2 = cfg._model.W2
        assert np.abs(sig[:n, :n] - 1.3 * np.linalg.inv(W2)).max() < 1e-11
        assert np.abs(sig[n:, n:] - 1.3 * np.eye(n)).max() < 1e-11
        assert np.abs(sig[:n, n:]).max() < 1e-11
        assert np.abs(res.T - 1.3).max() < 1e-11
        assert np.abs(res.j).max() < 1e-11
        assert np.abs(res.cut_j).max() < 1e-11

    def test_rejects_anharmonic(self):
        with pytest.raises(ConfigError, match="lam"):
            lyapunov_oracle(ChainConfig(N=4, lam=0.1))

    def test_rejects_undamped(self):
        with pytest.raises(ConfigError, match="stationary"):
            lyapunov_oracle(ChainConfig(N=4, gamma=0.0))

    def test_noneq_profile(self):
        cfg = ChainConfig(N=16, T1=1.0, T2=2.0)
        res = lyapunov_oracle(cfg)
        # boundary jumps pull the end layers into the interior range
        assert 1.0 < res.T[0] < res.T[-1] < 2.0
        # ballistic transport: flat bulk plateau
        bulk = res.T[4:-4]
        assert bulk.max() - bulk.min() < 1e-3
        # stationarity: the cut currents agree to solver precision
        assert res.cut_j.max() - res.cut_j.min() < 1e-10
        # heat flows from the hot wall at x1 = N toward x1 = 0
        assert res.cut_j.mean() < -0.1

    def test_site_current_view(self):
        res = lyapunov_oracle(ChainConfig(N=8, T1=1.0, T2=2.0))
        assert res.j[0] == res.cut_j[0]
        assert res.j[-1] == res.cut_j[-1]
        assert np.allclose(res.j[1:-1],
                           0.5 * (res.cut_j[1:] + res.cut_j[:-1]))

    def test_mirror_symmetry(self):
        a = lyapunov_oracle(ChainConfig(N=16, T1=1.0, T2=2.0))
        b = lyapunov_oracle(ChainConfig(N=16, T1=2.0, T2=1.0))
        assert np.abs(b.T - a.T[::-1]).max() < 1e-10
        assert np.abs(b.cut_j + a.cut_j[::-1]).max() < 1e-10

    def test_current_independent_of_length(self):
        j16 = lyapunov_oracle(ChainConfig(N=16, T1=1.0, T2=2.0)).cut_j.mean()
        j32 = lyapunov_oracle(ChainConfig(N=32, T1=1.0, T2=2.0)).cut_j.mean()
        assert abs(j32 / j16 - 1.0) < 1e-8

    def test_weaker_coupling_carries_less(self):
        strong = lyapunov_oracle(ChainConfig(N=16, T1=1.0, T2=2.0, gamma=1.0))
        weak = lyapunov_oracle(ChainConfig(N=16, T1=1.0, T2=2.0, gamma=0.25))
        assert abs(weak.cut_j.mean()) < abs(strong.cut_j.mean())


class TestIntegrator:
    def test_energy_conservation_order(self):
        """gamma = 0 runs conserve H with O(dt^2) fluctuation."""
        drifts = []
        for dt in (0.004, 0.002):
            cfg = ChainConfig(N=6, lam=0.5, gamma=0.0, T1=2.0, T2=2.0, dt=dt)
            rng = np.random.default_rng(3)
            st = initial_state(cfg, rng)
            e0 = total_energy(cfg, st)
            worst = 0.0
            for _ in range(4000):
                step(st, cfg, rng)
                worst = max(worst, abs(total_energy(cfg, st) - e0))
            drifts.append(worst)
        assert drifts[0] < 2e-3
        assert drifts[1] < 0.32 * drifts[0]

    def test_initial_state_equipartition(self):
        # <H> = n * T for the harmonic Gibbs draw (T/2 per quadratic mode)
        cfg = ChainConfig(N=2, T1=1.4, T2=1.4)
        rng = np.random.default_rng(12)
        vals = [total_energy(cfg, initial_state(cfg, rng))
                for _ in range(3000)]
        n = cfg._model.n_sites
        assert np.mean(vals) == pytest.approx(n * 1.4, rel=0.1)

    def test_check_finite(self):
        st = ChainState(q=np.array([0.0, np.nan]), p=np.zeros(2))
        with pytest.raises(DivergenceError, match="non-finite"):
            st.check_finite(17)
        ChainState(q=np.zeros(2), p=np.zeros(2)).check_finite(0)


class TestRuns:
    def test_reproducible(self):
        kw = dict(N=4, T1=1.0, T2=2.0, total_steps=8000, burn_in=1000,
                  n_batches=16, seed=42)
        a = run_experiment(ChainConfig(**kw))
        b = run_experiment(ChainConfig(**kw))
        assert np.array_equal(a.T_hat, b.T_hat)
        assert np.array_equal(a.cut_j_hat, b.cut_j_hat)
        c = run_experiment(ChainConfig(**dict(kw, seed=43)))
        assert np.abs(a.T_hat - c.T_hat).max() > 1e-3

    def test_stats_layout(self):
        cfg = ChainConfig(N=5, total_steps=9000, burn_in=1000, n_batches=16,
                          seed=1)
        s = run_experiment(cfg)
        assert s.valid
        assert s.x.shape == s.T_hat.shape == s.j_hat.shape == (6,)
        assert s.cut_j_hat.shape == (5,)
        assert s.n_batches == 16
        assert s.n_samples == 16 * (8000 // 16)
        assert (s.T_se > 0).all()

    def test_matches_oracle(self):
        """Calibration: a medium run lands on the exact profile."""
        cfg = ChainConfig(N=8, T1=1.0, T2=2.0, total_steps=120_000,
                          burn_in=20_000, seed=11)
        stats = run_experiment(cfg)
        res = lyapunov_oracle(cfg)
        assert (np.abs(stats.T_hat - res.T) / stats.T_se).max() < 3.0
        assert (np.abs(stats.j_hat - res.j) / stats.j_se).max() < 3.0

    def test_anharmonic_equilibrium(self):
        cfg = ChainConfig(N=4, lam=0.1, T1=1.0, T2=1.0, total_steps=80_000,
                          burn_in=16_000, seed=5)
        stats = run_experiment(cfg)
        assert (np.abs(stats.T_hat - 1.0) / stats.T_se).max() < 3.0

    def test_slab_matches_oracle(self):
        cfg = ChainConfig(N=4, d=3, transverse=2, T1=1.0, T2=2.0,
                          total_steps=60_000, burn_in=12_000, seed=9)
        stats = run_experiment(cfg)
        res = lyapunov_oracle(cfg)
        assert (np.abs(stats.T_hat - res.T) / stats.T_se).max() < 3.5
        assert (np.abs(stats.j_hat - res.j) / stats.j_se).max() < 3.0

    def test_divergence_raises(self):
        cfg = ChainConfig(N=4, lam=1e4, T1=1e4, T2=1e4, dt=0.02,
                          total_steps=4000, burn_in=500, n_batches=16, seed=0)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(DivergenceError, match="non-finite"):
                run_experiment(cfg)

    def test_divergence_soft_mode(self):
        cfg = ChainConfig(N=4, lam=1e4, T1=1e4, T2=1e4, dt=0.02,
                          total_steps=4000, burn_in=500, n_batches=16, seed=0)
        with np.errstate(over="ignore", invalid="ignore"):
            stats = run_experiment(cfg, raise_on_divergence=False)
        assert not stats.valid
        assert np.isnan(stats.T_hat).all()
