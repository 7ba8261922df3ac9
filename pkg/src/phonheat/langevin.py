"""Stochastic simulation of the pinned oscillator strip with end baths.

Sites live on a strip x = (x1, x_t) with 0 <= x1 <= N and periodic
transverse coordinates.  The Hamiltonian is

    H = 1/2 sum p^2 + 1/2 (q, W2 q) + lam/4 sum q^4

with W2 = (-Delta + m^2)^2, the square of the pinned lattice Laplacian
with Dirichlet walls in x1 (q = 0 outside the strip) and periodic wrap
transversally.  The squared stencil has range 2, so the phonon
frequencies are exactly the omega(k) of the kinetic branch.  Layers
x1 = 0 and x1 = N feel Ornstein-Uhlenbeck baths at T1 and T2.

Temperature convention: T(x) = <p_x^2>, so the exact OU substep uses
sigma^2 = T (1 - exp(-2 gamma tau)) and an equilibrium run returns
T_hat = T with no factor of two.  This is a relabeling of the covariance
normalization that carries 4*gamma*T; documented here once.

Currents: with the local energy split H_x = p_x^2/2 + lam q_x^4/4
+ q_x (W2 q)_x / 2, the bulk dynamics gives dH_x/dt = sum_y j_{y->x}
with j_{x->y} = W2[x,y] (p_x q_y - p_y q_x) / 2, an exact (any lam)
discrete continuity statement used as a test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import exp, sqrt

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .errors import ConfigError, DivergenceError, NumericsError

#: default time step as a fraction of the top phonon frequency
DT_SAFETY = 0.02

#: hard stability margin for dt * max_frequency
DT_LIMIT = 0.1


def frequency_bound(d: int, m_sq: float) -> float:
    """Upper bound 4d + m^2 on the phonon frequencies of the strip."""
    return 4.0 * d + m_sq


def gamma_preset(N: int, alpha: float = 0.1) -> float:
    """Weak-coupling rate N^(alpha - 1) used in scaling discussions."""
    if N < 2:
        raise ConfigError("preset needs N >= 2")
    return float(N) ** (alpha - 1.0)


@dataclass
class ChainConfig:
    """Geometry, couplings and sampling budget of one simulation."""

    N: int
    d: int = 1
    transverse: int = 1
    m_sq: float = 1.0
    lam: float = 0.0
    gamma: float = 1.0
    T1: float = 1.0
    T2: float = 1.0
    dt: float | None = None
    total_steps: int = 200_000
    burn_in: int = 40_000
    n_batches: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.N < 2:
            raise ConfigError(f"strip length N must be >= 2, got {self.N}")
        if self.d not in (1, 2, 3):
            raise ConfigError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.transverse < 1:
            raise ConfigError("transverse extent must be >= 1")
        if self.m_sq <= 0:
            raise ConfigError("m_sq must be positive (pinned model)")
        if self.lam < 0:
            raise ConfigError(f"lam must be nonnegative, got {self.lam}")
        if self.gamma < 0:
            # gamma = 0 is allowed (pure Hamiltonian runs for integrator
            # tests); the Lyapunov oracle rejects it separately
            raise ConfigError(f"gamma must be nonnegative, got {self.gamma}")
        if self.T1 <= 0 or self.T2 <= 0:
            raise ConfigError("bath temperatures must be positive")
        if self.dt is None:
            self.dt = DT_SAFETY / frequency_bound(self.d, self.m_sq)
        if self.dt * frequency_bound(self.d, self.m_sq) > DT_LIMIT * (1 + 1e-12):
            raise ConfigError(
                f"dt={self.dt} violates dt*max_frequency <= {DT_LIMIT}")
        if not 0 <= self.burn_in < self.total_steps:
            raise ConfigError("need 0 <= burn_in < total_steps")
        if self.n_batches < 16:
            raise ConfigError("batch-means estimator needs >= 16 batches")
        if (self.total_steps - self.burn_in) < self.n_batches:
            raise ConfigError("fewer sampling steps than batches")

    @property
    def _model(self) -> "_StripModel":
        cached = self.__dict__.get("_model_cache")
        if cached is None:
            cached = _StripModel(self)
            self.__dict__["_model_cache"] = cached
        return cached


@dataclass
class ChainState:
    """Phase-space point; arrays run over flattened strip sites."""

    q: np.ndarray
    p: np.ndarray

    def check_finite(self, step_index: int):
        for name, arr in (("q", self.q), ("p", self.p)):
            bad = np.flatnonzero(~np.isfinite(arr))
            if bad.size:
                raise DivergenceError(
                    f"non-finite {name} at site {int(bad[0])} "
                    f"after step {step_index}")


@dataclass
class TrajectoryStats:
    """Stationary estimators with batch-means error bars.

    Per-layer temperature T_hat and per-site current j_hat (mean of the
    currents across the cuts adjacent to the layer; end layers use their
    single cut).  cut_j_hat keeps the raw per-cut values for constancy
    diagnostics.  valid is False when the run diverged and the averages
    cover only the surviving prefix.
    """

    x: np.ndarray
    T_hat: np.ndarray
    T_se: np.ndarray
    j_hat: np.ndarray
    j_se: np.ndarray
    cut_j_hat: np.ndarray
    cut_j_se: np.ndarray
    n_samples: int
    n_batches: int
    valid: bool = True


@dataclass
class OracleResult:
    """Exact harmonic stationary data in the estimator layout."""

    x: np.ndarray
    T: np.ndarray
    j: np.ndarray
    cut_j: np.ndarray
    covariance: np.ndarray
    n_sites: int


class _StripModel:
    """Dense coupling matrix, bath bookkeeping and current geometry."""

    def __init__(self, cfg: ChainConfig):
        shape = (cfg.N + 1,) + (cfg.transverse,) * (cfg.d - 1)
        n = int(np.prod(shape))
        idx = np.arange(n).reshape(shape)
        K = np.zeros((n, n))
        np.fill_diagonal(K, 2.0 * cfg.d + cfg.m_sq)
        flat = idx.ravel()
        # longitudinal bonds, Dirichlet: outside sites dropped
        a = idx[:-1].ravel()
        b = idx[1:].ravel()
        K[a, b] -= 1.0
        K[b, a] -= 1.0
        # transverse bonds, periodic wrap (doubles for extent 2, cancels
        # the diagonal for extent 1)
        for ax in range(1, cfg.d):
            nb = np.roll(idx, -1, axis=ax).ravel()
            np.add.at(K, (flat, nb), -1.0)
            np.add.at(K, (nb, flat), -1.0)
        self.W2 = K @ K
        self.n_sites = n
        self.shape = shape
        self.x1 = np.repeat(np.arange(cfg.N + 1),
                            cfg.transverse ** (cfg.d - 1))
        self.n_columns = cfg.transverse ** (cfg.d - 1)

        self.bath_idx = np.flatnonzero((self.x1 == 0) | (self.x1 == cfg.N))
        bath_T = np.where(self.x1[self.bath_idx] == 0, cfg.T1, cfg.T2)
        half = cfg.gamma * cfg.dt / 2.0
        self.ou_decay = exp(-half)
        self.ou_sigma = np.sqrt(bath_T * (1.0 - exp(-2.0 * half)))

        # directed bonds x -> y with x1(x) < x1(y), from the squared stencil
        rows, cols = np.nonzero(np.abs(self.W2) > 1e-12)
        keep = self.x1[rows] < self.x1[cols]
        self.bond_from = rows[keep]
        self.bond_to = cols[keep]
        self.bond_w = self.W2[self.bond_from, self.bond_to]
        # COO membership: bond crosses every cut c with x1_from <= c < x1_to
        cut_ids = []
        bond_ids = []
        for i, (r, c) in enumerate(zip(self.bond_from, self.bond_to)):
            for cut in range(self.x1[r], self.x1[c]):
                cut_ids.append(cut)
                bond_ids.append(i)
        self.cut_ids = np.asarray(cut_ids, dtype=np.intp)
        self.bond_ids = np.asarray(bond_ids, dtype=np.intp)
        self.n_cuts = cfg.N

    def force(self, cfg: ChainConfig, q: np.ndarray) -> np.ndarray:
        f = -(self.W2 @ q)
        if cfg.lam != 0.0:
            f -= cfg.lam * q**3
        return f

    def layer_mean(self, values: np.ndarray) -> np.ndarray:
        return np.bincount(self.x1, weights=values,
                           minlength=self.shape[0]) / self.n_columns


def bond_current(state: ChainState, cfg: ChainConfig) -> np.ndarray:
    """Directed currents j_{x->y} over the increasing-x1 bond list."""
    m = cfg._model
    qf, qt = state.q[m.bond_from], state.q[m.bond_to]
    pf, pt = state.p[m.bond_from], state.p[m.bond_to]
    return 0.5 * m.bond_w * (pf * qt - pt * qf)


def cut_currents(state: ChainState, cfg: ChainConfig) -> np.ndarray:
    """Total rightward current across each of the N layer cuts, per column."""
    m = cfg._model
    j = bond_current(state, cfg)
    return np.bincount(m.cut_ids, weights=j[m.bond_ids],
                       minlength=m.n_cuts) / m.n_columns


def step(state: ChainState, cfg: ChainConfig,
         rng: np.random.Generator) -> ChainState:
    """One time step: half OU, Strang-split Hamiltonian step, half OU.

    The OU substeps are exact in law on the bath layers, so gamma does
    not constrain dt; only the phonon frequencies do.
    """
    m = cfg._model
    dt = cfg.dt
    p, q = state.p, state.q
    p[m.bath_idx] = (m.ou_decay * p[m.bath_idx]
                     + m.ou_sigma * rng.standard_normal(m.bath_idx.size))
    p += (0.5 * dt) * m.force(cfg, q)
    q += dt * p
    p += (0.5 * dt) * m.force(cfg, q)
    p[m.bath_idx] = (m.ou_decay * p[m.bath_idx]
                     + m.ou_sigma * rng.standard_normal(m.bath_idx.size))
    return state


def initial_state(cfg: ChainConfig, rng: np.random.Generator) -> ChainState:
    """Harmonic Gibbs draw at the mean bath temperature.

    Cov(q) = T W2^{-1} via a Cholesky back-solve; near-stationary for
    small lam, which keeps burn-in requirements mild.
    """
    m = cfg._model
    t_bar = 0.5 * (cfg.T1 + cfg.T2)
    chol = np.linalg.cholesky(m.W2)
    xi = rng.standard_normal(m.n_sites)
    q = sqrt(t_bar) * np.linalg.solve(chol.T, xi)
    return ChainState(q=q, p=sqrt(t_bar) * rng.standard_normal(m.n_sites))


def run_experiment(cfg: ChainConfig,
                   raise_on_divergence: bool = True) -> TrajectoryStats:
    """Burn in, then sample T_hat and currents with batch-means errors.

    Sampling accumulates every step.  On divergence either raises
    DivergenceError (default; the CLI maps it to its own exit code) or
    returns the prefix statistics flagged invalid.
    """
    m = cfg._model
    rng = np.random.default_rng(cfg.seed)
    state = initial_state(cfg, rng)

    sample_steps = cfg.total_steps - cfg.burn_in
    batch_len = sample_steps // cfg.n_batches
    n_layers = cfg.N + 1

    t_batches = []
    j_batches = []
    t_acc = np.zeros(n_layers)
    j_acc = np.zeros(m.n_cuts)
    in_batch = 0
    samples = 0
    check_every = 1000

    try:
        for i in range(cfg.burn_in):
            step(state, cfg, rng)
            if (i + 1) % check_every == 0:
                state.check_finite(i + 1)
        state.check_finite(cfg.burn_in)
        for i in range(cfg.n_batches * batch_len):
            step(state, cfg, rng)
            t_acc += m.layer_mean(state.p**2)
            j_acc += cut_currents(state, cfg)
            in_batch += 1
            samples += 1
            if (i + 1) % check_every == 0:
                state.check_finite(cfg.burn_in + i + 1)
            if in_batch == batch_len:
                t_batches.append(t_acc / batch_len)
                j_batches.append(j_acc / batch_len)
                t_acc = np.zeros(n_layers)
                j_acc = np.zeros(m.n_cuts)
                in_batch = 0
        valid = True
    except DivergenceError:
        if raise_on_divergence:
            raise
        valid = False

    if len(t_batches) < 2:
        if valid:
            raise NumericsError("run too short to form batch means")
        t_batches = [np.full(n_layers, np.nan)] * 2
        j_batches = [np.full(m.n_cuts, np.nan)] * 2

    tb = np.asarray(t_batches)
    jb = np.asarray(j_batches)
    nb = tb.shape[0]
    # per-layer current view: mean of the adjacent cut currents
    site_jb = _site_currents(jb)
    return TrajectoryStats(
        x=np.arange(n_layers),
        T_hat=tb.mean(axis=0),
        T_se=tb.std(axis=0, ddof=1) / sqrt(nb),
        j_hat=site_jb.mean(axis=0),
        j_se=site_jb.std(axis=0, ddof=1) / sqrt(nb),
        cut_j_hat=jb.mean(axis=0),
        cut_j_se=jb.std(axis=0, ddof=1) / sqrt(nb),
        n_samples=samples,
        n_batches=nb,
        valid=valid,
    )


def _site_currents(cut_values: np.ndarray) -> np.ndarray:
    """Map per-cut currents to per-layer ones (adjacent-cut means)."""
    cv = np.atleast_2d(cut_values)
    out = np.empty(cv.shape[:-1] + (cv.shape[-1] + 1,))
    out[..., 0] = cv[..., 0]
    out[..., -1] = cv[..., -1]
    out[..., 1:-1] = 0.5 * (cv[..., 1:] + cv[..., :-1])
    return out if cut_values.ndim > 1 else out[0]


def lyapunov_oracle(cfg: ChainConfig) -> OracleResult:
    """Exact stationary covariance of the harmonic strip.

    Solves M Sigma + Sigma M^T + S = 0 for the drift of z = (q, p) with
    noise rate S = 2 gamma T_bath on bath momenta, then reads off
    T(x) = <p_x^2> and the mean bond currents, which are linear in the
    qp block of Sigma.
    """
    if cfg.lam != 0.0:
        raise ConfigError("the Lyapunov oracle requires lam = 0")
    if cfg.gamma == 0.0:
        raise ConfigError("gamma = 0 leaves undamped modes; no stationary "
                          "covariance to solve for")
    m = cfg._model
    n = m.n_sites
    if 2 * n > 4000:
        raise ConfigError(f"dense Lyapunov solve capped at 2000 sites, got {n}")

    gamma_diag = np.zeros(n)
    gamma_diag[m.bath_idx] = cfg.gamma
    drift = np.zeros((2 * n, 2 * n))
    drift[:n, n:] = np.eye(n)
    drift[n:, :n] = -m.W2
    drift[n:, n:] = -np.diag(gamma_diag)
    noise = np.zeros((2 * n, 2 * n))
    bath_T = np.where(m.x1[m.bath_idx] == 0, cfg.T1, cfg.T2)
    noise[n + m.bath_idx, n + m.bath_idx] = 2.0 * cfg.gamma * bath_T

    sigma = solve_continuous_lyapunov(drift, -noise)
    resid = drift @ sigma + sigma @ drift.T + noise
    if not np.isfinite(sigma).all() or \
            np.abs(resid).max() > 1e-8 * max(1.0, np.abs(noise).max()):
        raise NumericsError(
            f"Lyapunov residual {np.abs(resid).max():.3e} too large")
    sigma = 0.5 * (sigma + sigma.T)

    t_site = np.diag(sigma[n:, n:])
    qp = sigma[:n, n:]  # qp[x, y] = <q_x p_y>
    # <j_{x->y}> = W2[x,y] (<p_x q_y> - <p_y q_x>) / 2
    mean_bond = 0.5 * m.bond_w * (qp[m.bond_to, m.bond_from]
                                  - qp[m.bond_from, m.bond_to])
    cut_j = np.bincount(m.cut_ids, weights=mean_bond[m.bond_ids],
                        minlength=m.n_cuts) / m.n_columns
    return OracleResult(
        x=np.arange(cfg.N + 1),
        T=m.layer_mean(t_site),
        j=_site_currents(cut_j),
        cut_j=cut_j,
        covariance=sigma,
        n_sites=n,
    )
