"""Momentum grids, the pinned lattice dispersion, and resolvent broadening.

Everything downstream (collision sums, linearized operators, transport
solves) works on a uniform M-point grid per axis, k_i = 2*pi*j_i/M.  Grid
points are tracked by integer multi-indices so that momentum addition and
negation are exact modular arithmetic; summed momentum constraints then
resolve on-grid with no floating-point tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

TWO_PI = 2.0 * np.pi


class BrillouinGrid:
    """Uniform periodic momentum grid on [0, 2*pi)^d with M points per axis.

    M must be even so the grid is closed under negation.  An optional slow
    lattice of size N rides along axis 1: slow momenta p = pi*m/(2N) for
    m = 0..2N-1 (a half window; p and p+pi label the same pair state, see
    correlators).  Slow and fast spacing must agree, which forces M = 4N.

    Immutable after construction; safe to share between threads.
    """

    def __init__(self, d: int, M: int, N: int | None = None):
        if d < 1:
            raise ConfigError(f"dimension must be >= 1, got {d}")
        if M < 4 or M % 2 != 0:
            raise ConfigError(f"points per axis must be even and >= 4, got {M}")
        if N is not None:
            if N < 1:
                raise ConfigError(f"slow lattice size must be >= 1, got {N}")
            if M != 4 * N:
                raise ConfigError(
                    f"slow lattice needs matching spacing: M = 4N required, got M={M}, N={N}"
                )
        self.d = d
        self.M = M
        self.N = N
        self.n_points = M**d
        self.spacing = TWO_PI / M
        # per-point quadrature weight for Riemann sums over the zone
        self.weight = (TWO_PI / M) ** d

        # multi[i] is the integer coordinate vector of point i; axis d-1 varies fastest
        idx = np.arange(self.n_points)
        self.multi = np.empty((self.n_points, d), dtype=np.int64)
        rem = idx
        for axis in range(d - 1, -1, -1):
            self.multi[:, axis] = rem % M
            rem = rem // M
        self.k = self.multi * self.spacing  # (n_points, d) floats

        self._strides = M ** np.arange(d - 1, -1, -1, dtype=np.int64)
        self.neg = self.index_of(-self.multi)  # index of -k for each point

        if N is not None:
            self.n_slow = 2 * N
            # slow momenta in the half window [0, pi); integer index m maps to p = m * spacing
            self.slow_p = np.arange(self.n_slow) * self.spacing
        else:
            self.n_slow = 0
            self.slow_p = np.empty(0)

        self._add_table: np.ndarray | None = None

    def index_of(self, multi: np.ndarray) -> np.ndarray:
        """Linear index of integer coordinates, wrapped mod M per axis."""
        m = np.asarray(multi, dtype=np.int64) % self.M
        return m @ self._strides

    def shift_axis1(self, idx: np.ndarray, steps) -> np.ndarray:
        """Index of k + (steps * spacing) * e1 for grid points idx."""
        m = self.multi[idx].copy()
        m[..., 0] = m[..., 0] + steps
        return self.index_of(m)

    @property
    def add_table(self) -> np.ndarray:
        """add_table[a, b] = index of k_a + k_b.  Built lazily, cached."""
        if self._add_table is None:
            if self.n_points > 4096:
                raise ConfigError(
                    f"index table for {self.n_points} points exceeds the supported size"
                )
            summed = self.multi[:, None, :] + self.multi[None, :, :]
            self._add_table = self.index_of(summed).astype(np.int32)
        return self._add_table

    def add(self, a, b):
        return self.add_table[a, b]

    def sub(self, a, b):
        return self.add_table[a, self.neg[b]]


def build_grid(d: int, M: int, N: int | None = None) -> BrillouinGrid:
    """Construct a momentum grid; see BrillouinGrid for the conventions."""
    return BrillouinGrid(d, M, N)


class Dispersion:
    """Pinned nearest-neighbour dispersion w(k) = 2*sum_i(1 - cos k_i) + m2.

    m2 > 0 keeps w bounded away from zero, so resolvent denominators and
    the w^(-2), w^(-3) mode profiles are well defined.  Group velocity
    component i is 2*sin(k_i).
    """

    def __init__(self, grid: BrillouinGrid, m_sq: float):
        if m_sq <= 0:
            raise ConfigError(f"pinning m2 must be positive, got {m_sq}")
        self.grid = grid
        self.m_sq = float(m_sq)
        self.omega = self.omega_at(grid.k)  # (n_points,)
        self.v1 = 2.0 * np.sin(grid.k[:, 0])  # axis-1 group velocity on the grid

    def omega_at(self, k: np.ndarray) -> np.ndarray:
        """Dispersion at arbitrary momenta; k has shape (..., d)."""
        k = np.asarray(k, dtype=float)
        return 2.0 * np.sum(1.0 - np.cos(k), axis=-1) + self.m_sq

    def velocity_at(self, k: np.ndarray) -> np.ndarray:
        """Group velocity (gradient of the dispersion) at arbitrary momenta."""
        return 2.0 * np.sin(np.asarray(k, dtype=float))

    @property
    def omega_min(self) -> float:
        return self.m_sq

    @property
    def omega_max(self) -> float:
        return 4.0 * self.grid.d + self.m_sq

    def omega_shifted(self, p: float) -> np.ndarray:
        """w(p*e1 + k) tabulated over the grid, for a scalar slow momentum p."""
        k = self.grid.k.copy()
        k[:, 0] += p
        return self.omega_at(k)

    def omega_pair(self, p, k) -> tuple[np.ndarray, np.ndarray]:
        """Mean-square and difference-square frequencies of the pair (p, k).

        Returns (mean_sq, diff_sq) with
            mean_sq = (w(p*e1 + k)^2 + w(p*e1 - k)^2) / 2
            diff_sq =  w(p*e1 + k)^2 - w(p*e1 - k)^2
        where p rides on axis 1 and k has shape (..., d).
        """
        k = np.asarray(k, dtype=float)
        p_vec = np.zeros_like(k)
        p_vec[..., 0] = p
        w_plus = self.omega_at(p_vec + k)
        w_minus = self.omega_at(p_vec - k)
        return 0.5 * (w_plus**2 + w_minus**2), w_plus**2 - w_minus**2


@dataclass(frozen=True)
class Regularization:
    """Broadening scale and rule for on-shell denominators.

    delta(x) is the Lorentzian eps/(pi*(x^2 + eps^2)); principal values are
    evaluated as x/(x^2 + eps^2).  The default eps follows the spectral
    resolution of the grid: c_eps times the mean nearest-neighbour spacing
    of the sorted dispersion values.
    """

    epsilon: float
    rule: str = "lorentzian"

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError(f"broadening must be positive, got {self.epsilon}")
        if self.rule not in ("lorentzian", "principal-value"):
            raise ConfigError(f"unknown broadening rule {self.rule!r}")

    @classmethod
    def from_dispersion(cls, disp: Dispersion, c_eps: float = 2.0,
                        rule: str = "lorentzian") -> "Regularization":
        """Default broadening: c_eps * mean gap of the sorted frequency table."""
        w = np.sort(disp.omega)
        gaps = np.diff(w)
        if gaps.size == 0 or w[-1] == w[0]:
            raise ConfigError("dispersion table is degenerate; cannot set broadening")
        return cls(epsilon=c_eps * float(np.mean(gaps)), rule=rule)

    def delta(self, x: np.ndarray) -> np.ndarray:
        """Broadened delta at offset x (always the Lorentzian profile)."""
        e = self.epsilon
        return (e / np.pi) / (x * x + e * e)

    def principal_value(self, x: np.ndarray) -> np.ndarray:
        """Regularized 1/x."""
        e = self.epsilon
        return x / (x * x + e * e)

    def halved(self) -> "Regularization":
        """Same rule at half the broadening (for convergence sweeps)."""
        return Regularization(epsilon=0.5 * self.epsilon, rule=self.rule)
