"""Two-point correlator data model in the joint slow/fast representation.

States store complex arrays over (slow index m, fast index i): slow
momenta p_m = m*2pi/M on the half window [0, pi) (the representation is
degenerate under the joint shift p -> p+pi, k1 -> k1+pi, and the half
window picks one member per orbit), fast momenta on the full grid.

Invariants come from position space: Q and P are real symmetric there,
J is real, and stationarity makes the J matrix antisymmetric.  In the
(p,k) representation these read

    Q(p,k) = conj(Q(-p,-k))        (reality; same for P)
    J(p,k) = conj(J(-p,-k))        (reality)
    J(p,-k) = -J(p,k)              (antisymmetry)

so J(0,k) is purely imaginary.  Negation acts on the half window through
the quotient: -(m, i) = (0, -i) for m = 0 and (2N-m, -i + 2N*e1) else.

Position-space transforms are provided for d = 1, where the change of
variables a = p+k, b = p-k maps the (m, i) index set bijectively onto
the even-sum pairs of a full MxM Fourier square, making the transform an
exact 2-D FFT round trip.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .lattice import TWO_PI, BrillouinGrid, Dispersion


def _require_slow(grid: BrillouinGrid):
    if grid.N is None:
        raise ConfigError("this operation needs a grid built with a slow lattice N")


def negation_maps(grid: BrillouinGrid) -> tuple[np.ndarray, np.ndarray]:
    """Index maps of (p,k) -> (-p,-k) on the half-window representation.

    Returns (slow_map, fast_map) with slow_map shape (n_slow,) and
    fast_map shape (n_slow, n_points): the partner of (m, i) is
    (slow_map[m], fast_map[m, i]).
    """
    _require_slow(grid)
    n_slow = grid.n_slow
    slow_map = np.empty(n_slow, dtype=np.int64)
    fast_map = np.empty((n_slow, grid.n_points), dtype=np.int64)
    idx = np.arange(grid.n_points)
    slow_map[0] = 0
    fast_map[0] = grid.neg[idx]
    for m in range(1, n_slow):
        slow_map[m] = n_slow - m
        fast_map[m] = grid.shift_axis1(grid.neg[idx], n_slow)
    return slow_map, fast_map


@dataclass
class PairCorrelators:
    """Q, J and optionally P over the (slow, fast) index set."""

    grid: BrillouinGrid
    dispersion: Dispersion
    Q: np.ndarray
    J: np.ndarray
    P: np.ndarray | None = None

    def __post_init__(self):
        _require_slow(self.grid)
        shape = (self.grid.n_slow, self.grid.n_points)
        self.Q = np.asarray(self.Q, dtype=complex)
        self.J = np.asarray(self.J, dtype=complex)
        for name, arr in (("Q", self.Q), ("J", self.J)):
            if arr.shape != shape:
                raise ConfigError(f"{name} must have shape {shape}, got {arr.shape}")
        if self.P is not None:
            self.P = np.asarray(self.P, dtype=complex)
            if self.P.shape != shape:
                raise ConfigError(f"P must have shape {shape}, got {self.P.shape}")

    @property
    def N(self) -> int:
        return self.grid.N

    def invariant_defects(self) -> dict[str, float]:
        """Sup-norm violations of the reality/antisymmetry relations."""
        slow_map, fast_map = negation_maps(self.grid)
        out = {}
        for name in ("Q", "J", "P"):
            arr = getattr(self, name)
            if arr is None:
                continue
            partner = arr[slow_map[:, None], fast_map]
            scale = max(np.abs(arr).max(), 1e-300)
            out[f"{name}_reality"] = float(np.abs(arr - partner.conj()).max() / scale)
        scale = max(np.abs(self.J).max(), 1e-300)
        out["J_antisymmetry"] = float(
            np.abs(self.J[:, self.grid.neg] + self.J).max() / scale
        )
        return out

    def validate(self, tol: float = 1e-10):
        defects = self.invariant_defects()
        bad = {k: v for k, v in defects.items() if v > tol}
        if bad:
            detail = ", ".join(f"{k}={v:.2e}" for k, v in bad.items())
            raise ConfigError(f"correlator invariants violated: {detail}")


@dataclass
class KineticState:
    """Space-resolved kinetic field V(x, k) with its coupling scale R."""

    x: np.ndarray
    V: np.ndarray
    R: float

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim != 1 or self.x.size < 2:
            raise ConfigError("x must be a 1-D grid with at least two points")
        if self.x.min() < 0.0 or self.x.max() > 1.0 or np.any(np.diff(self.x) <= 0):
            raise ConfigError("x must increase within [0, 1]")
        self.V = np.asarray(self.V)
        if self.V.ndim != 2 or self.V.shape[0] != self.x.size:
            raise ConfigError(
                f"V must have shape (n_x, n_points) with n_x={self.x.size}"
            )
        if self.R < 0:
            raise ConfigError(f"coupling scale R must be nonnegative, got {self.R}")


def equilibrium_pair_state(grid: BrillouinGrid, disp: Dispersion,
                           T: float) -> PairCorrelators:
    """Gibbs state of the harmonic part: Q = T/w^2 kernel, J = 0, P = T*identity.

    Amplitudes carry the representation measure (slow spacing h and the
    plain Riemann momentum sums), so the position-space P matrix is
    exactly T on the diagonal.
    """
    if T <= 0:
        raise ConfigError(f"temperature must be positive, got {T}")
    _require_slow(grid)
    shape = (grid.n_slow, grid.n_points)
    amp = T / (grid.spacing * TWO_PI**grid.d)
    Q = np.zeros(shape, dtype=complex)
    P = np.zeros(shape, dtype=complex)
    Q[0] = amp / disp.omega**2
    P[0] = amp
    return PairCorrelators(grid=grid, dispersion=disp, Q=Q, J=J_zero(grid), P=P)


def J_zero(grid: BrillouinGrid) -> np.ndarray:
    _require_slow(grid)
    return np.zeros((grid.n_slow, grid.n_points), dtype=complex)


# ---------------------------------------------------------------------------
# W combination and P reconstruction


def w_combination(corr: PairCorrelators, s: int, p_index: int,
                  k_index: int) -> complex:
    """Q(p,k) + i*s*J(p,k)/w(p+k) at one point; s = +-1."""
    if s not in (1, -1):
        raise ConfigError(f"sign must be +-1, got {s}")
    om = corr.dispersion.omega_shifted(corr.grid.slow_p[p_index])[k_index]
    return complex(corr.Q[p_index, k_index] + 1j * s * corr.J[p_index, k_index] / om)


def w_table(corr: PairCorrelators, s: int) -> np.ndarray:
    """The W_s combination over every (slow, fast) index at once."""
    if s not in (1, -1):
        raise ConfigError(f"sign must be +-1, got {s}")
    om = np.array([
        corr.dispersion.omega_shifted(p) for p in corr.grid.slow_p
    ])
    return corr.Q + 1j * s * corr.J / om


def reconstruct_P(corr: PairCorrelators, n12_plus: np.ndarray,
                  n12_minus: np.ndarray,
                  friction_commutator: np.ndarray | None = None) -> np.ndarray:
    """P from the stationarity of the mixed correlator block.

        P(p,k) = wbar(p,k)^2 Q(p,k)
                 + (1/2) [ (J G - G J)(p,k) - n12(p,k) - n12(p,-k) ]

    where wbar^2 is the mean-square pair frequency and n12_plus/minus are
    the (1,2) closure components at (p, k) and (p, -k).  The friction
    commutator defaults to zero (kinetic-limit branch).
    """
    grid, disp = corr.grid, corr.dispersion
    shape = (grid.n_slow, grid.n_points)
    n12_plus = np.asarray(n12_plus, dtype=complex)
    n12_minus = np.asarray(n12_minus, dtype=complex)
    if n12_plus.shape != shape or n12_minus.shape != shape:
        raise ConfigError(f"closure components must have shape {shape}")
    if friction_commutator is None:
        friction_commutator = np.zeros(shape, dtype=complex)
    elif np.asarray(friction_commutator).shape != shape:
        raise ConfigError(f"friction commutator must have shape {shape}")

    mean_sq = np.empty(shape)
    for m, p in enumerate(grid.slow_p):
        mean_sq[m] = disp.omega_pair(p, grid.k)[0]
    return (mean_sq * corr.Q
            + 0.5 * (friction_commutator - n12_plus - n12_minus))


# ---------------------------------------------------------------------------
# currents


def current_finite(corr: PairCorrelators, alpha: int, p_index: int = 0) -> complex:
    """Mode-summed current at slow momentum p: -i e^{-ip/2} sum of
    wbar(p/2,k)^alpha sin(k1) J(p/2,k) with the Riemann weight.

    The half-argument convention places the current on half-integer
    bonds; at p = 0 the phase drops out and the value is real for
    admissible states.
    """
    if alpha not in (0, 1):
        raise ConfigError(f"current exponent must be 0 or 1, got {alpha}")
    grid, disp = corr.grid, corr.dispersion
    p = grid.slow_p[p_index]
    if alpha == 1:
        mean_sq, _ = disp.omega_pair(p / 2.0, grid.k)
        weight_om = np.sqrt(mean_sq)
    else:
        weight_om = np.ones(grid.n_points)
    sin_k1 = np.sin(grid.k[:, 0])
    total = np.sum(weight_om * sin_k1 * corr.J[p_index]) * grid.weight
    return complex(-1j * np.exp(-1j * p / 2.0) * total)


def current_kinetic(disp: Dispersion, h_field: np.ndarray, alpha: int) -> np.ndarray:
    """Kinetic-branch currents: sum_k v1(k) w(k)^alpha h(x,k) * weight.

    h_field may be a single k-slice or an (n_x, n_points) stack; returns
    a scalar or per-x array accordingly.
    """
    if alpha not in (0, 1):
        raise ConfigError(f"current exponent must be 0 or 1, got {alpha}")
    h_field = np.asarray(h_field)
    factor = disp.v1 * disp.omega**alpha * disp.grid.weight
    return h_field @ factor


# ---------------------------------------------------------------------------
# position-space transforms (d = 1)


def _fourier_pairs(grid: BrillouinGrid):
    """Index arrays of a = m+j, b = m-j (mod M) for the d=1 transform."""
    if grid.d != 1:
        raise NotImplementedError("position-space transforms are implemented for d=1")
    _require_slow(grid)
    m = np.arange(grid.n_slow)[:, None]
    j = np.arange(grid.n_points)[None, :]
    a = (m + j) % grid.M
    b = (m - j) % grid.M
    return a, b


def to_position_space(corr: PairCorrelators, validate: bool = True,
                      tol: float = 1e-10):
    """Dense position-space matrices (Q, J, P or None) on the M-site lattice.

    G(x,y) = sum over (m,j) of exp(i p(x+y) + i k(x-y)) G[m,j] h^2; in
    the (a,b) variables this is an inverse 2-D DFT over the even-sum
    frequency pairs.  Reality/antisymmetry invariants of the input become
    realness and (anti)symmetry of the output matrices.
    """
    if validate:
        corr.validate(tol)
    grid = corr.grid
    a, b = _fourier_pairs(grid)
    M = grid.M
    h = grid.spacing

    def transform(rep, anti=False):
        F = np.zeros((M, M), dtype=complex)
        np.add.at(F, (a, b), rep)
        mat = np.fft.ifft2(F) * M * M * h * h
        defect = np.abs(mat.imag).max() / max(np.abs(mat).max(), 1e-300)
        if validate and defect > tol:
            raise ConfigError(
                f"position-space matrix not real (defect {defect:.2e})"
            )
        out = mat.real
        sym_defect = np.abs(out + out.T if anti else out - out.T).max()
        if validate and sym_defect > tol * max(np.abs(out).max(), 1e-300):
            kind = "antisymmetric" if anti else "symmetric"
            raise ConfigError(f"position-space matrix not {kind}")
        return out

    q_mat = transform(corr.Q)
    j_mat = transform(corr.J, anti=True)
    p_mat = transform(corr.P) if corr.P is not None else None
    return q_mat, j_mat, p_mat


def from_position_space(grid: BrillouinGrid, disp: Dispersion,
                        q_mat: np.ndarray, j_mat: np.ndarray,
                        p_mat: np.ndarray | None = None,
                        tol: float = 1e-10) -> PairCorrelators:
    """Inverse of to_position_space; rejects matrices whose spectrum
    leaks onto odd-sum Fourier pairs (not representable)."""
    a, b = _fourier_pairs(grid)
    M = grid.M
    h = grid.spacing
    odd = ((np.arange(M)[:, None] + np.arange(M)[None, :]) % 2) == 1

    def invert(mat, name):
        mat = np.asarray(mat, dtype=float)
        if mat.shape != (M, M):
            raise ConfigError(f"{name} must be {M}x{M}, got {mat.shape}")
        F = np.fft.fft2(mat) / (M * M * h * h)
        leak = np.abs(F[odd]).max() / max(np.abs(F).max(), 1e-300)
        if leak > tol:
            raise ConfigError(
                f"{name} has odd-sum Fourier content {leak:.2e}; "
                "not representable on the half-window lattice"
            )
        return F[a, b]

    corr = PairCorrelators(
        grid=grid, dispersion=disp,
        Q=invert(q_mat, "Q"), J=invert(j_mat, "J"),
        P=invert(p_mat, "P") if p_mat is not None else None,
    )
    return corr
