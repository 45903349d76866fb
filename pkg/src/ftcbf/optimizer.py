"""Per-step quadratic program and Farkas infeasibility certificates.

Solves   minimize u^T R u   subject to   row_i . u >= bound_i
with a dense primal active-set method, warm-started from a phase-one simplex
that either produces a feasible vertex or a Farkas certificate y >= 0 with
A^T y = 0 and Xi^T y < 0 proving A u <= Xi empty. Everything is hand-rolled
and deterministic (Bland's rule on both pivots); the problems here never
exceed a handful of rows and inputs, so dense is the right tool.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .barriers import ConstraintRow
from .errors import ContractError, SolverError

_PIVOT_TOL = 1e-10
_FEAS_TOL = 1e-9


@dataclass
class QpProblem:
    """Cost matrix R (symmetric PD) and linear rows row.u >= bound."""

    R: np.ndarray
    rows: Sequence[ConstraintRow] = field(default_factory=list)

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float)
        if self.R.ndim != 2 or self.R.shape[0] != self.R.shape[1]:
            raise ContractError("R must be square")
        if np.max(np.abs(self.R - self.R.T)) > 1e-10:
            raise ContractError("R must be symmetric")
        if np.min(np.linalg.eigvalsh((self.R + self.R.T) / 2)) <= 1e-12:
            raise ContractError("R must be positive definite")

    @property
    def p(self) -> int:
        return self.R.shape[0]


@dataclass
class QpResult:
    status: str  # "optimal" | "infeasible"
    u: Optional[np.ndarray] = None
    active: tuple = ()
    multipliers: Optional[np.ndarray] = None
    certificate: Optional[np.ndarray] = None

    @property
    def is_feasible(self) -> bool:
        return self.status == "optimal"


def _phase_one(A: np.ndarray, b: np.ndarray):
    """Phase-one simplex for A u <= b.

    Returns (u, None) with a feasible vertex, or (None, y) with the Farkas
    multipliers recovered from the phase-one duals. Bland's rule throughout.
    """
    m, p = A.shape
    if m == 0:
        return np.zeros(p), None

    sign = np.where(b >= 0.0, 1.0, -1.0)
    ncols = 2 * p + 2 * m
    T = np.zeros((m, ncols))
    T[:, :p] = sign[:, None] * A
    T[:, p:2 * p] = -T[:, :p]
    T[np.arange(m), 2 * p + np.arange(m)] = sign           # slacks
    T[np.arange(m), 2 * p + m + np.arange(m)] = 1.0        # artificials
    rhs = sign * b

    cost = np.zeros(ncols)
    cost[2 * p + m:] = 1.0
    basis = np.where(sign > 0, 2 * p + np.arange(m), 2 * p + m + np.arange(m))

    # Canonical cost row: subtract artificial-basic rows from the cost.
    obj = cost.copy()
    for i in range(m):
        if basis[i] >= 2 * p + m:
            obj -= T[i]

    max_iter = 50 * (m + p + 4)
    for _ in range(max_iter):
        entering = -1
        for j in range(ncols):
            if obj[j] < -_PIVOT_TOL:
                entering = j
                break
        if entering < 0:
            break
        ratios = np.full(m, np.inf)
        col = T[:, entering]
        ok = col > _PIVOT_TOL
        ratios[ok] = rhs[ok] / col[ok]
        best = np.min(ratios)
        if not np.isfinite(best):
            raise SolverError("phase-one simplex unbounded (numerical failure)")
        cand = np.where(ratios <= best + 1e-12)[0]
        leave = cand[np.argmin(basis[cand])]
        piv = T[leave, entering]
        T[leave] /= piv
        rhs[leave] /= piv
        for i in range(m):
            if i != leave and abs(T[i, entering]) > 1e-14:
                f = T[i, entering]
                T[i] -= f * T[leave]
                rhs[i] -= f * rhs[leave]
        obj -= obj[entering] * T[leave]
        basis[leave] = entering
        rhs[(rhs < 0.0) & (rhs > -1e-12)] = 0.0
    else:
        raise SolverError("phase-one simplex exceeded iteration cap")

    art = basis >= 2 * p + m
    obj_val = float(np.sum(rhs[art])) if np.any(art) else 0.0
    if obj_val <= _FEAS_TOL:
        vals = np.zeros(ncols)
        vals[basis] = rhs
        return vals[:p] - vals[p:2 * p], None
    # Duals from the artificial reduced costs: pi_i = 1 - rc(z_i), y = -sign*pi.
    pi = 1.0 - obj[2 * p + m:]
    y = -sign * pi
    y[y < 0.0] = 0.0
    return None, y


def farkas_certificate(A: np.ndarray, Xi: np.ndarray) -> Optional[np.ndarray]:
    """Farkas certificate for A u <= Xi, or None when the system is feasible.

    The returned y satisfies y >= 0, ||A^T y||_inf <= 1e-9 and Xi^T y = -1
    (scaled); validity is re-checked before returning.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Xi = np.atleast_1d(np.asarray(Xi, dtype=float))
    if A.shape[0] != Xi.shape[0]:
        raise ContractError("A and Xi row counts differ")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(Xi))):
        raise ContractError("non-finite entries in Farkas system")
    _, y = _phase_one(A, Xi)
    if y is None:
        return None
    slope = float(Xi @ y)
    if slope >= -1e-14:
        raise SolverError("phase-one reported infeasible but Xi^T y >= 0")
    y = y / (-slope)
    _validate_certificate(A, Xi, y)
    return y


def _validate_certificate(A, Xi, y):
    if np.min(y) < -1e-12:
        raise SolverError("certificate has negative multipliers")
    if np.max(np.abs(A.T @ y)) > 1e-9 * max(1.0, np.max(np.abs(y))):
        raise SolverError("certificate fails A^T y = 0")
    if Xi @ y >= 0.0:
        raise SolverError("certificate fails Xi^T y < 0")


def _kkt_step(R2, Aw, u):
    """Equality-constrained step: min (u+d)^T R (u+d) s.t. Aw d = 0."""
    p = R2.shape[0]
    k = Aw.shape[0]
    if k == 0:
        return -u.copy(), np.zeros(0)
    M = np.zeros((p + k, p + k))
    M[:p, :p] = R2
    M[:p, p:] = -Aw.T
    M[p:, :p] = Aw
    rhs = np.concatenate([-R2 @ u, np.zeros(k)])
    sol = np.linalg.solve(M, rhs)
    return sol[:p], sol[p:]


def solve_qp(prob: QpProblem, max_iter: int = 200) -> QpResult:
    """Solve min u^T R u s.t. row_i.u >= bound_i.

    Returns the optimum with its active set, or an infeasibility result
    carrying the Farkas certificate for the equivalent system A u <= Xi
    (A = -rows, Xi = -bounds). Degenerate all-zero rows are dropped when
    their bound is nonpositive and certify infeasibility otherwise.
    """
    p = prob.p
    n_rows = len(prob.rows)
    if n_rows == 0:
        return QpResult("optimal", u=np.zeros(p), multipliers=np.zeros(0))

    rows = np.array([np.asarray(r.row, dtype=float) for r in prob.rows])
    bounds = np.array([float(r.bound) for r in prob.rows])
    if rows.shape[1] != p:
        raise ContractError("row length does not match R")
    if not (np.all(np.isfinite(rows)) and np.all(np.isfinite(bounds))):
        raise ContractError("non-finite constraint data")

    keep = []
    for i in range(n_rows):
        if np.max(np.abs(rows[i])) <= 1e-14:
            if bounds[i] > 0.0:
                y = np.zeros(n_rows)
                y[i] = 1.0 / bounds[i]
                return QpResult("infeasible", certificate=y)
        else:
            keep.append(i)
    if not keep:
        return QpResult("optimal", u=np.zeros(p), multipliers=np.zeros(n_rows))
    keep = np.asarray(keep)
    Ak, bk = rows[keep], bounds[keep]

    if np.all(bk <= 0.0):
        u = np.zeros(p)
    else:
        u, y = _phase_one(-Ak, -bk)
        if u is None:
            slope = float(-bk @ y)
            if slope >= -1e-14:
                raise SolverError("inconsistent phase-one outcome")
            full = np.zeros(n_rows)
            full[keep] = y / (-slope)
            _validate_certificate(-rows, -bounds, full)
            return QpResult("infeasible", certificate=full)

    R2 = 2.0 * prob.R
    mW: list[int] = []
    for i in range(len(keep)):
        if abs(Ak[i] @ u - bk[i]) <= _FEAS_TOL:
            trial = mW + [i]
            if np.linalg.matrix_rank(Ak[trial], tol=1e-10) == len(trial):
                mW = trial

    lam_w = np.zeros(0)
    for _ in range(max_iter):
        d, lam_w = _kkt_step(R2, Ak[mW], u)
        # Threshold sits above KKT solve noise for ill-conditioned (near
        # parallel) working sets; the stationarity residual check below still
        # guards the accepted point.
        if np.max(np.abs(d)) <= 1e-9 * max(1.0, np.max(np.abs(u))):
            if lam_w.size == 0 or np.min(lam_w) >= -_FEAS_TOL:
                break
            worst = [mW[j] for j in range(len(mW)) if lam_w[j] < -_FEAS_TOL]
            mW.remove(min(worst))
            continue
        cand = []
        for i in range(len(keep)):
            if i in mW:
                continue
            denom = float(Ak[i] @ d)
            if denom < -1e-13:
                cand.append((max(0.0, (bk[i] - float(Ak[i] @ u)) / denom), i))
        alpha = 1.0
        blocking = -1
        if cand:
            a_min = min(a for a, _ in cand)
            if a_min < 1.0:
                alpha = a_min
                blocking = min(i for a, i in cand if a <= a_min + 1e-12)
        u = u + alpha * d
        if blocking >= 0:
            trial = mW + [blocking]
            if np.linalg.matrix_rank(Ak[trial], tol=1e-10) < len(trial):
                raise SolverError("active-set cycling: dependent blocking row")
            mW = trial
    else:
        raise SolverError("active set exceeded iteration cap")

    viol = bk - Ak @ u
    if np.max(viol) > _FEAS_TOL:
        raise SolverError(f"active-set solution violates a row by {np.max(viol):.2e}")
    grad = R2 @ u
    resid = grad - (Ak[mW].T @ lam_w if mW else 0.0)
    if np.max(np.abs(resid)) > 1e-7 * max(1.0, np.max(np.abs(grad))):
        raise SolverError("KKT stationarity residual out of tolerance")

    multipliers = np.zeros(n_rows)
    for j, i in enumerate(mW):
        multipliers[keep[i]] = max(0.0, lam_w[j])
    active = tuple(int(keep[i]) for i in range(len(keep)) if abs(Ak[i] @ u - bk[i]) <= _FEAS_TOL)
    return QpResult("optimal", u=u, active=active, multipliers=multipliers)
