"""Linearized collision operator and the zero-mode complement solver.

The linearization at a local-equilibrium base state acts blockwise on
stacked perturbations (dJ, dQ) of the pair data.  At slow momentum zero
the off-diagonal blocks vanish by parity, the dQ block is the kinetic
Jacobian composed with multiplication by w (occupation and coordinate
correlator differ by one power of w), and the dJ block is the kinetic
Jacobian itself.  Everything is assembled by differentiating the
implemented discrete collision sum, so finite differences of the
nonlinear operator reproduce the matrix action to truncation error.

Inner product: <f, g> = sum_k f g w(k)^3 * weight.  With this weight the
right zero modes {w^-2, w^-3} pair diagonally with the left conservation
modes {w, 1}; orthogonality to the right modes is then the same linear
condition as vanishing number/energy quadrature sums, which the
conservation-projected Jacobian satisfies exactly on its range.  The
weight is a choice (nothing deeper than making that duality diagonal)
and every orthogonality statement below is relative to it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .collision import CollisionConfig, collision_jacobian, equilibrium_v
from .errors import ConditioningError, ConfigError, NumericsError
from .lattice import Dispersion, Regularization

#: default refusal threshold for the bordered-system condition estimate
CONDITION_LIMIT = 1e10

WEIGHT_EXPONENT = 3


def weighted_inner(disp: Dispersion, f: np.ndarray, g: np.ndarray) -> complex:
    """Bilinear form sum f*g*w^3*weight (no conjugation, symmetric)."""
    om3 = disp.omega**WEIGHT_EXPONENT
    return np.sum(np.asarray(f) * np.asarray(g) * om3) * disp.grid.weight


def zero_mode_basis(disp: Dispersion) -> np.ndarray:
    """Rows w^-2 and w^-3: the stationary-family tangents in correlator form."""
    om = disp.omega
    return np.vstack([om**-2.0, om**-3.0])


def project_complement(disp: Dispersion, f: np.ndarray) -> np.ndarray:
    """Remove the span{w^-2, w^-3} component of f in the weighted inner product."""
    z = zero_mode_basis(disp)
    gram = np.array([[weighted_inner(disp, zi, zj) for zj in z] for zi in z])
    rhs = np.array([weighted_inner(disp, zi, f) for zi in z])
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericsError(f"zero-mode Gram matrix is degenerate (cond {cond:.2e})")
    coef = np.linalg.solve(gram, rhs)
    return np.asarray(f) - z.T @ coef


@dataclass
class CollisionOperatorMatrix:
    """Block linearization at slow momentum p and base state (T, A).

    Blocks l11, l12, l21, l22 act on the stacked perturbation (dJ, dQ);
    l22 carries the occupation-sector scattering and is the matrix all
    transport solves use.
    """

    l11: np.ndarray
    l12: np.ndarray
    l21: np.ndarray
    l22: np.ndarray
    p: float
    base_T: float
    base_A: float
    dispersion: Dispersion
    regularization: Regularization
    weight_exponent: int = WEIGHT_EXPONENT

    @property
    def n(self) -> int:
        return self.l22.shape[0]

    def full_matrix(self) -> np.ndarray:
        top = np.hstack([self.l11, self.l12])
        bottom = np.hstack([self.l21, self.l22])
        return np.vstack([top, bottom])

    # -- diagnostic reports -------------------------------------------------

    def parity_defect(self) -> float:
        """Relative size of the off-diagonal blocks (zero at p=0)."""
        scale = max(np.abs(self.l11).max(), np.abs(self.l22).max())
        off = max(np.abs(self.l12).max(), np.abs(self.l21).max())
        return float(off / scale)

    def left_null_defect(self) -> tuple[float, float]:
        """Max row-sum of l22 against the weights 1 and w, relative."""
        w = self.dispersion.grid.weight
        om = self.dispersion.omega
        scale = np.abs(self.l22).max() * w * self.n
        number = np.abs(w * self.l22.sum(axis=0)).max() / scale
        energy = np.abs(w * (om @ self.l22)).max() / (scale * om.max())
        return float(number), float(energy)

    def right_null_defect(self) -> tuple[float, float]:
        """Relative residuals of l22 on the modes w^-2 and w^-3."""
        z = zero_mode_basis(self.dispersion)
        out = []
        op_norm = np.abs(self.l22).max()
        for mode in z:
            r = self.l22 @ mode
            out.append(float(np.linalg.norm(r) / (op_norm * np.linalg.norm(mode))))
        return out[0], out[1]

    def symmetry_defect(self) -> float:
        """Asymmetry of l22 in the weighted space, measured not assumed."""
        om3 = self.dispersion.omega**self.weight_exponent
        a = om3[:, None] * self.l22
        return float(np.abs(a - a.T).max() / np.abs(a).max())

    def sigma_min_l11(self) -> tuple[float, float]:
        """(full, complement-restricted) smallest singular values of l11.

        With the conservation projection active the full matrix has an
        exact two-dimensional left null space, so the first number is
        zero at roundoff; the restricted value is the meaningful one and
        is reported, not asserted, since it shrinks with epsilon.
        """
        s_full = np.linalg.svd(self.l11, compute_uv=False)[-1]
        pc = _complement_projector(self.dispersion)
        restricted = pc @ self.l11 @ pc
        s = np.linalg.svd(restricted, compute_uv=False)
        s_restricted = s[s > s[0] * 1e-13][-1] if s[0] > 0 else 0.0
        return float(s_full), float(s_restricted)

    def spectrum_l22(self, restricted: bool = True) -> np.ndarray:
        """Eigenvalues of l22, by default restricted to the complement."""
        a = self.l22
        if restricted:
            pc = _complement_projector(self.dispersion)
            a = pc @ a @ pc
        return np.linalg.eigvals(a)

    def dissipativity_report(self) -> float:
        """Largest real part among complement eigenvalues of meaningful size."""
        ev = self.spectrum_l22(restricted=True)
        scale = np.abs(ev).max()
        live = ev[np.abs(ev) > 1e-10 * scale]
        return float(live.real.max()) if live.size else 0.0


def _complement_projector(disp: Dispersion) -> np.ndarray:
    """Dense matrix of project_complement (small grids only)."""
    n = disp.grid.n_points
    z = zero_mode_basis(disp)
    om3w = disp.omega**WEIGHT_EXPONENT * disp.grid.weight
    gram = (z * om3w) @ z.T
    coef = np.linalg.solve(gram, z * om3w)
    return np.eye(n) - z.T @ coef


def linearize(cfg: CollisionConfig, T: float, A: float = 0.0,
              p: float = 0.0) -> CollisionOperatorMatrix:
    """Block linearization of the collision operator at V = T/(w - A).

    Only the slow-momentum-zero member is implemented; the transport
    solvers work in deviation form cell by cell and never need p != 0.
    """
    if p != 0.0:
        raise NotImplementedError("only the p = 0 linearization is implemented")
    v0 = equilibrium_v(cfg.dispersion, T, A)  # validates T > 0, A < m2
    jac = collision_jacobian(cfg, v0)
    n = cfg.grid.n_points
    zero = np.zeros((n, n))
    l22 = jac * cfg.dispersion.omega[None, :]
    return CollisionOperatorMatrix(
        l11=jac, l12=zero, l21=zero.copy(), l22=l22,
        p=0.0, base_T=T, base_A=A,
        dispersion=cfg.dispersion, regularization=cfg.regularization,
    )


@dataclass
class ComplementSolve:
    """Solution of L h = rhs_perp with h orthogonal to the zero modes."""

    solution: np.ndarray
    residual: float
    condition: float
    multipliers: np.ndarray
    refinement_steps: int


class ComplementFactor:
    """Reusable LU factorization of the bordered complement system.

    The square system is augmented with the left conservation directions
    {1, w} as extra columns (absorbing any rhs component off the range)
    and the weighted orthogonality constraints <w^-2, h> = <w^-3, h> = 0
    as extra rows.  One LU factorization serves many right-hand sides;
    a one-norm condition estimate guards it, and past the limit the
    construction refuses rather than returning digits it cannot back.
    """

    def __init__(self, disp: Dispersion, L: np.ndarray,
                 condition_limit: float = CONDITION_LIMIT):
        n = disp.grid.n_points
        L = np.asarray(L)
        if L.shape != (n, n):
            raise ConfigError(f"operator must be {n}x{n}, got {L.shape}")
        self.disp = disp
        self.n = n
        om = disp.omega
        cols = np.stack([np.ones(n), om], axis=1)  # left-null directions
        om3w = om**WEIGHT_EXPONENT * disp.grid.weight
        rows = zero_mode_basis(disp) * om3w  # constraint rows <z_i, .>

        bordered = np.zeros((n + 2, n + 2))
        bordered[:n, :n] = L
        bordered[:n, n:] = cols
        bordered[n:, :n] = rows
        self.bordered = bordered

        try:
            self._lu = scipy.linalg.lu_factor(bordered)
        except scipy.linalg.LinAlgError as exc:
            raise NumericsError(f"bordered factorization failed: {exc}") from None

        norm1 = np.abs(bordered).sum(axis=0).max()
        inv_op = scipy.sparse.linalg.LinearOperator(
            bordered.shape,
            matvec=lambda x: scipy.linalg.lu_solve(self._lu, x),
            rmatvec=lambda x: scipy.linalg.lu_solve(self._lu, x, trans=1),
        )
        self.condition = float(norm1 * scipy.sparse.linalg.onenormest(inv_op))
        if not np.isfinite(self.condition) or self.condition > condition_limit:
            raise ConditioningError(
                f"complement system condition estimate {self.condition:.3e} "
                f"exceeds {condition_limit:.1e}; refusing to solve"
            )

    def solve(self, rhs: np.ndarray) -> ComplementSolve:
        """Project rhs, solve, refine until the residual stops improving."""
        n = self.n
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != (n,):
            raise ConfigError(f"rhs must have shape ({n},), got {rhs.shape}")
        rhs_perp = project_complement(self.disp, rhs)
        b = np.concatenate([rhs_perp, [0.0, 0.0]])

        x = scipy.linalg.lu_solve(self._lu, b)
        rhs_scale = max(np.linalg.norm(b), 1e-300)
        best = None
        steps = 0
        for _ in range(4):
            r = b - self.bordered @ x
            res = np.linalg.norm(r) / rhs_scale
            if best is not None and res >= best[1] * 0.5:
                break
            best = (x.copy(), res)
            steps += 1
            x = x + scipy.linalg.lu_solve(self._lu, r)
        r = b - self.bordered @ x
        res = np.linalg.norm(r) / rhs_scale
        if best is None or res < best[1]:
            best = (x, res)
        x, res = best

        h = project_complement(self.disp, x[:n])  # polish the constraint
        if res > 1e-10:
            raise NumericsError(
                f"complement solve residual {res:.3e} above 1e-10 "
                f"(condition estimate {self.condition:.3e})"
            )
        return ComplementSolve(
            solution=h, residual=float(res), condition=self.condition,
            multipliers=x[n:].copy(), refinement_steps=steps,
        )


def solve_on_complement(disp: Dispersion, L: np.ndarray, rhs: np.ndarray,
                        condition_limit: float = CONDITION_LIMIT) -> np.ndarray:
    """Solve L h = rhs on the zero-mode complement; see ComplementFactor."""
    return complement_solve(disp, L, rhs, condition_limit).solution


def complement_solve(disp: Dispersion, L: np.ndarray, rhs: np.ndarray,
                     condition_limit: float = CONDITION_LIMIT) -> ComplementSolve:
    """One-shot factor-and-solve of the bordered complement system."""
    return ComplementFactor(disp, L, condition_limit).solve(rhs)
