"""Dense bounded-variable primal simplex with Bland's anti-cycling rule.

Problem form accepted by :func:`lp_solve`::

    minimise (or maximise)  c . x
    subject to              A_ub x <= b_ub
                            A_eq x == b_eq
                            lo <= x <= hi

Variables with an infinite lower bound are handled by substitution.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .._accel import njit

FEAS_TOL = 1e-7
_PIVOT_TOL = 1e-9
_COST_TOL = 1e-9

# kernel exit codes
_OPTIMAL, _UNBOUNDED, _ITER_LIMIT = 0, 1, 2


class DegenerateLP(RuntimeError):
    """Numerical breakdown: iteration limit reached or final point inconsistent."""


@dataclass
class LPResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: Optional[np.ndarray] = None
    value: Optional[float] = None
    iterations: int = 0


@njit(cache=True)
def _simplex_phase(T, d, x, basis, is_basic, at_upper, lo, hi, max_iter):
    """Run primal simplex iterations on tableau ``T`` in place.

    ``d`` is the reduced-cost row and ``x`` holds every variable's value.
    Entering variable: lowest index with an improving reduced cost.
    Leaving variable: minimum ratio, ties broken by lowest variable index.
    """
    m, n = T.shape
    it = 0
    while it < max_iter:
        # entering variable (Bland)
        j = -1
        direction = 0.0
        for k in range(n):
            if is_basic[k] or hi[k] - lo[k] <= 0.0:
                continue
            if d[k] < -_COST_TOL and not at_upper[k]:
                j = k
                direction = 1.0
                break
            if d[k] > _COST_TOL and at_upper[k]:
                j = k
                direction = -1.0
                break
        if j < 0:
            return _OPTIMAL, it
        col = T[:, j]
        delta = -direction * col
        theta = hi[j] - lo[j]
        leave_row = -1
        leave_var = n + 1
        for i in range(m):
            b = basis[i]
            if delta[i] < -_PIVOT_TOL:
                t = (x[b] - lo[b]) / (-delta[i])
            elif delta[i] > _PIVOT_TOL and hi[b] < np.inf:
                t = (hi[b] - x[b]) / delta[i]
            else:
                continue
            if t < 0.0:
                t = 0.0
            if t < theta - 1e-12 or (leave_row >= 0 and abs(t - theta) <= 1e-12 and b < leave_var):
                theta = t
                leave_row = i
                leave_var = b
        if theta == np.inf:
            return _UNBOUNDED, it
        # move along the edge
        x[j] += direction * theta
        for i in range(m):
            x[basis[i]] += delta[i] * theta
        if leave_row < 0:
            # bound flip of the entering variable, no basis change
            at_upper[j] = direction > 0.0
            x[j] = hi[j] if at_upper[j] else lo[j]
        else:
            p = basis[leave_row]
            if delta[leave_row] < 0.0:
                x[p] = lo[p]
                at_upper[p] = False
            else:
                x[p] = hi[p]
                at_upper[p] = True
            piv = T[leave_row, j]
            T[leave_row, :] /= piv
            prow = T[leave_row, :].copy()
            pcol = T[:, j].copy()
            pcol[leave_row] = 0.0
            T -= np.outer(pcol, prow)
            d -= d[j] * prow
            is_basic[p] = False
            is_basic[j] = True
            at_upper[j] = False
            basis[leave_row] = j
        it += 1
    return _ITER_LIMIT, it


def _refresh_basics(T, A, b, x, basis, basis0):
    # x_B += B^-1 (b - A x): removes accumulated drift
    binv = T[:, basis0]
    x[basis] += binv @ (b - A @ x)


def lp_solve(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None,
             maximize: bool = False, tol: float = FEAS_TOL, max_iter: Optional[int] = None) -> LPResult:
    """Solve a small dense LP.

    ``bounds`` is an ``(n, 2)`` array-like of ``(lo, hi)`` pairs, ``None``
    meaning ``[0, inf)`` for every variable. Raises :class:`DegenerateLP`
    when the simplex breaks down numerically.
    """
    c = np.asarray(c, dtype=np.float64).ravel()
    n0 = c.shape[0]
    A_ub = np.zeros((0, n0)) if A_ub is None else np.asarray(A_ub, dtype=np.float64).reshape(-1, n0)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=np.float64).ravel()
    A_eq = np.zeros((0, n0)) if A_eq is None else np.asarray(A_eq, dtype=np.float64).reshape(-1, n0)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=np.float64).ravel()
    if bounds is None:
        bnd = np.column_stack([np.zeros(n0), np.full(n0, np.inf)])
    else:
        pairs = list(bounds)
        if len(pairs) != n0:
            raise ValueError("one (lo, hi) pair per variable is required")
        bnd = np.array([(-np.inf if lo is None else lo, np.inf if hi is None else hi) for lo, hi in pairs],
                       dtype=np.float64)
    if np.isnan(bnd).any():
        raise ValueError("bounds must not be NaN")
    if np.any(bnd[:, 0] > bnd[:, 1]):
        return LPResult("infeasible")
    sign = -1.0 if maximize else 1.0

    # substitutions for infinite lower bounds: x = -w (upper finite) or x = p - q (free)
    cols, lo_l, hi_l = [], [], []
    for k in range(n0):
        lo_k, hi_k = bnd[k]
        if np.isfinite(lo_k):
            cols.append((k, 1.0))
            lo_l.append(lo_k)
            hi_l.append(hi_k)
        elif np.isfinite(hi_k):
            cols.append((k, -1.0))
            lo_l.append(-hi_k)
            hi_l.append(np.inf)
        else:
            cols.append((k, 1.0))
            lo_l.append(0.0)
            hi_l.append(np.inf)
            cols.append((k, -1.0))
            lo_l.append(0.0)
            hi_l.append(np.inf)
    ns = len(cols)
    M = np.zeros((n0, ns))
    for j, (k, coef) in enumerate(cols):
        M[k, j] = coef
    cs = sign * (c @ M)
    Aub = A_ub @ M
    Aeq = A_eq @ M
    m_ub, m_eq = Aub.shape[0], Aeq.shape[0]
    m = m_ub + m_eq

    lo = np.array(lo_l + [0.0] * m_ub)
    hi = np.array(hi_l + [np.inf] * m_ub)
    A = np.zeros((m, ns + m_ub))
    A[:m_ub, :ns] = Aub
    A[:m_ub, ns:] = np.eye(m_ub)
    A[m_ub:, :ns] = Aeq
    b = np.concatenate([b_ub, b_eq])

    x = lo.copy()
    resid = b - A @ x
    row_sign = np.where(resid < 0.0, -1.0, 1.0)
    # a slack can start basic when its row is already satisfied
    needs_art = np.ones(m, dtype=np.bool_)
    needs_art[:m_ub] = resid[:m_ub] < 0.0
    n_art = int(needs_art.sum())
    N = ns + m_ub + n_art
    As = np.zeros((m, N))
    As[:, :ns + m_ub] = A * row_sign[:, None]
    art_rows = np.flatnonzero(needs_art)
    As[art_rows, ns + m_ub + np.arange(n_art)] = 1.0
    bs = b * row_sign
    lo = np.concatenate([lo, np.zeros(n_art)])
    hi = np.concatenate([hi, np.full(n_art, np.inf)])
    x = np.concatenate([x, np.zeros(n_art)])
    basis = np.empty(m, dtype=np.int64)
    a = 0
    for i in range(m):
        if needs_art[i]:
            basis[i] = ns + m_ub + a
            a += 1
        else:
            basis[i] = ns + i
    basis0 = basis.copy()
    x[basis] = 0.0
    x[basis] = bs - As @ x
    is_basic = np.zeros(N, dtype=np.bool_)
    is_basic[basis] = True
    at_upper = np.zeros(N, dtype=np.bool_)
    T = As.copy()
    if max_iter is None:
        max_iter = 50 * (m + N) + 1000
    total_it = 0

    if n_art:
        c1 = np.zeros(N)
        c1[ns + m_ub:] = 1.0
        d = c1 - c1[basis] @ T
        code, it = _simplex_phase(T, d, x, basis, is_basic, at_upper, lo, hi, max_iter)
        total_it += it
        if code == _ITER_LIMIT:
            raise DegenerateLP("phase 1 iteration limit")
        _refresh_basics(T, As, bs, x, basis, basis0)
        infeas = x[ns + m_ub:].sum()
        if infeas > tol * max(1.0, np.abs(bs).max(initial=0.0)):
            return LPResult("infeasible", iterations=total_it)
        hi[ns + m_ub:] = 0.0
        x[ns + m_ub:] = np.clip(x[ns + m_ub:], 0.0, 0.0)

    c2 = np.zeros(N)
    c2[:ns] = cs
    d = c2 - c2[basis] @ T
    code, it = _simplex_phase(T, d, x, basis, is_basic, at_upper, lo, hi, max_iter)
    total_it += it
    if code == _ITER_LIMIT:
        raise DegenerateLP("phase 2 iteration limit")
    if code == _UNBOUNDED:
        return LPResult("unbounded", iterations=total_it)
    _refresh_basics(T, As, bs, x, basis, basis0)

    xs = np.clip(x[:ns], lo[:ns], hi[:ns])
    sol = M @ xs
    scale = 1.0 + np.abs(b).max(initial=0.0)
    if m_ub and np.any(A_ub @ sol - b_ub > 1e-6 * scale):
        raise DegenerateLP("final point violates an inequality")
    if m_eq and np.any(np.abs(A_eq @ sol - b_eq) > 1e-6 * scale):
        raise DegenerateLP("final point violates an equality")
    return LPResult("optimal", sol, float(c @ sol), total_it)
