"""Dense two-phase simplex and best-first branch-and-bound.

Every optimization problem in the package is expressed as an :class:`LpProblem`
or :class:`MilpProblem` and solved here. Problems are small (a few hundred
rows), so the simplex keeps a dense tableau and favours reproducibility over
speed: Dantzig pricing with lowest-index tie breaks, switching to Bland's rule
once the objective stalls.
"""
from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

FEAS_TOL = 1e-7
PIVOT_TOL = 1e-9
INT_TOL = 1e-6
COMP_TOL = 1e-6
OPT_TOL = 1e-9

# dense tableau cap (entries); beyond this the problem is refused
MAX_TABLEAU_ENTRIES = 30_000_000

SENSES = ("<=", "=", ">=")


class SolverError(Exception):
    """Base class for solver failures."""


class InputError(SolverError, ValueError):
    """Malformed problem data."""


class NumericalError(SolverError):
    """Pivoting broke down; carries diagnostics."""

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class ResourceLimit(SolverError):
    """A node, iteration, time or size budget was exhausted.

    ``incumbent`` is the best integral solution known (or ``None``) and
    ``bound`` the best proven bound on the optimum.
    """

    def __init__(self, message: str, incumbent: "MilpSolution | None" = None,
                 bound: float | None = None, nodes: int = 0):
        super().__init__(message)
        self.incumbent = incumbent
        self.bound = bound
        self.nodes = nodes

    @property
    def gap(self) -> float:
        if self.incumbent is None or self.bound is None:
            return math.inf
        return abs(self.incumbent.objective - self.bound)


@dataclass(frozen=True, eq=False)
class LpProblem:
    """``sense`` c^T x subject to rows ``A x (<=|=|>=) b`` and ``lower <= x <= upper``."""

    c: np.ndarray
    A: np.ndarray
    senses: tuple
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    sense: str = "min"

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        n = c.size
        A = np.asarray(self.A, dtype=float)
        if A.size == 0:
            A = A.reshape(0, n)
        if A.ndim != 2 or A.shape[1] != n:
            raise InputError(f"constraint matrix has shape {A.shape}, expected (m, {n})")
        b = np.asarray(self.b, dtype=float).reshape(-1)
        senses = tuple(self.senses)
        if b.size != A.shape[0] or len(senses) != A.shape[0]:
            raise InputError("row count mismatch between A, senses and b")
        bad = [s for s in senses if s not in SENSES]
        if bad:
            raise InputError(f"unknown relation {bad[0]!r}")
        lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy()
        upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (n,)).copy()
        if np.any(lower > upper):
            j = int(np.argmax(lower > upper))
            raise InputError(f"variable {j} has lower bound {lower[j]} > upper bound {upper[j]}")
        if np.any(np.isnan(A)) or np.any(np.isnan(b)) or np.any(np.isnan(c)):
            raise InputError("NaN in problem data")
        if self.sense not in ("min", "max"):
            raise InputError(f"unknown objective sense {self.sense!r}")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "senses", senses)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.b.size

    @classmethod
    def from_rows(cls, cost: Sequence[float], rows: Iterable[tuple], bounds=None,
                  sense: str = "min") -> "LpProblem":
        """Build from ``(coeffs, relation, rhs)`` triples; bounds default to ``x >= 0``."""
        cost = np.asarray(cost, dtype=float)
        n = cost.size
        rows = list(rows)
        for coeffs, _, _ in rows:
            if len(coeffs) != n:
                raise InputError(f"row of length {len(coeffs)} in a problem with {n} variables")
        A = np.array([r[0] for r in rows], dtype=float).reshape(len(rows), n)
        senses = tuple(r[1] for r in rows)
        b = np.array([r[2] for r in rows], dtype=float)
        if bounds is None:
            lower, upper = np.zeros(n), np.full(n, np.inf)
        else:
            lower = np.array([-np.inf if lo is None else lo for lo, _ in bounds], dtype=float)
            upper = np.array([np.inf if hi is None else hi for _, hi in bounds], dtype=float)
        return cls(cost, A, senses, b, lower, upper, sense)

    def with_bounds(self, lower: np.ndarray, upper: np.ndarray) -> "LpProblem":
        return LpProblem(self.c, self.A, self.senses, self.b, lower, upper, self.sense)

    def violation(self, x: np.ndarray) -> float:
        """Largest constraint or bound violation at ``x``."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        if self.m:
            ax = self.A @ x
            for rel, mask in (("<=", ax - self.b), ("=", np.abs(ax - self.b)), (">=", self.b - ax)):
                sel = np.array([s == rel for s in self.senses])
                if sel.any():
                    worst = max(worst, float(np.max(mask[sel])))
        with np.errstate(invalid="ignore"):
            worst = max(worst, float(np.max(np.nan_to_num(self.lower - x, nan=0.0, neginf=0.0), initial=0.0)))
            worst = max(worst, float(np.max(np.nan_to_num(x - self.upper, nan=0.0, neginf=0.0), initial=0.0)))
        return worst


@dataclass(frozen=True, eq=False)
class LpSolution:
    status: str
    x: np.ndarray | None = None
    objective: float | None = None
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    basis: tuple = ()
    degenerate: bool = False
    iterations: int = 0
    ray: np.ndarray | None = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def dual_objective(self, p: LpProblem) -> float:
        """b^T y plus the bound terms contributed by the reduced costs."""
        total = float(p.b @ self.duals) if p.m else 0.0
        for r, lo, hi in zip(self.reduced_costs, p.lower, p.upper):
            if abs(r) <= OPT_TOL:
                continue
            bound = lo if (r > 0) == (p.sense == "min") else hi
            if np.isfinite(bound):
                total += r * bound
        return total


@dataclass(frozen=True, eq=False)
class MilpProblem:
    lp: LpProblem
    binaries: tuple

    def __post_init__(self):
        binaries = tuple(sorted(int(i) for i in self.binaries))
        if len(set(binaries)) != len(binaries):
            raise InputError("duplicate binary index")
        for i in binaries:
            if not 0 <= i < self.lp.n:
                raise InputError(f"binary index {i} out of range")
        lower, upper = self.lp.lower.copy(), self.lp.upper.copy()
        idx = list(binaries)
        lower[idx] = np.maximum(lower[idx], 0.0)
        upper[idx] = np.minimum(upper[idx], 1.0)
        if np.any(lower > upper):
            raise InputError("binary variable with empty domain")
        object.__setattr__(self, "lp", self.lp.with_bounds(lower, upper))
        object.__setattr__(self, "binaries", binaries)


@dataclass(frozen=True, eq=False)
class MilpSolution:
    status: str
    x: np.ndarray | None = None
    objective: float | None = None
    nodes: int = 0
    bound: float | None = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    @property
    def gap(self) -> float:
        if self.objective is None or self.bound is None:
            return math.inf
        return abs(self.objective - self.bound)


# ---------------------------------------------------------------------------
# standard form


@dataclass
class _StandardForm:
    A: np.ndarray          # rows after slack insertion and sign flip, b >= 0
    b: np.ndarray
    c: np.ndarray
    n_struct: int          # columns that stand for original variables
    col_var: list          # original variable of each structural column
    col_sign: np.ndarray   # x_var += sign * y_col
    offset: np.ndarray     # x = offset + sum(sign * y)
    row_flip: np.ndarray   # +1 / -1 per standard row
    row_origin: list       # ("row", i) or ("ub", var)
    slack_col: dict        # standard row -> slack column index (coefficient +1 or -1)


def _standard_form(p: LpProblem, c: np.ndarray) -> _StandardForm:
    n = p.n
    offset = np.zeros(n)
    cols = []  # (var, sign)
    ub_rows = []  # (column, width)
    for j in range(n):
        lo, hi = p.lower[j], p.upper[j]
        if np.isfinite(lo) and np.isfinite(hi) and hi - lo <= 0.0:
            offset[j] = lo
            continue
        if np.isfinite(lo):
            offset[j] = lo
            cols.append((j, 1.0))
            if np.isfinite(hi):
                ub_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            offset[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    ny = len(cols)
    col_var = [v for v, _ in cols]
    col_sign = np.array([s for _, s in cols], dtype=float)

    T = np.zeros((n, ny))
    if ny:
        T[col_var, np.arange(ny)] = col_sign
    A_y = p.A @ T if p.m else np.zeros((0, ny))
    b_y = p.b - (p.A @ offset if p.m else 0.0)
    senses = list(p.senses)
    origin = [("row", i) for i in range(p.m)]
    if ub_rows:
        extra = np.zeros((len(ub_rows), ny))
        for r, (col, width) in enumerate(ub_rows):
            extra[r, col] = 1.0
        A_y = np.vstack([A_y, extra])
        b_y = np.concatenate([b_y, [w for _, w in ub_rows]])
        senses += ["<="] * len(ub_rows)
        origin += [("ub", col_var[col]) for col, _ in ub_rows]

    m = len(senses)
    n_slack = sum(1 for s in senses if s != "=")
    A = np.zeros((m, ny + n_slack))
    A[:, :ny] = A_y
    slack_col = {}
    k = ny
    for i, s in enumerate(senses):
        if s == "<=":
            A[i, k] = 1.0
        elif s == ">=":
            A[i, k] = -1.0
        else:
            continue
        slack_col[i] = k
        k += 1
    flip = np.where(b_y < 0, -1.0, 1.0)
    A *= flip[:, None]
    b = b_y * flip
    c_std = np.zeros(ny + n_slack)
    c_std[:ny] = c[col_var] * col_sign if ny else 0.0
    return _StandardForm(A, b, c_std, ny, col_var, col_sign, offset, flip, origin, slack_col)


# ---------------------------------------------------------------------------
# tableau simplex


class _Tableau:
    """Dense tableau over [standard columns | artificials | rhs] with two cost rows."""

    def __init__(self, sf: _StandardForm, deadline: float | None):
        m, n = sf.A.shape
        self.m, self.n = m, n
        basis = []
        art_rows = []
        for i in range(m):
            k = sf.slack_col.get(i)
            if k is not None and sf.A[i, k] > 0:
                basis.append(k)
            else:
                basis.append(None)
                art_rows.append(i)
        n_art = len(art_rows)
        if (m + 2) * (n + n_art + 1) > MAX_TABLEAU_ENTRIES:
            raise ResourceLimit(f"LP too large for the dense tableau ({m} rows, {n + n_art} columns)")
        self.n_art = n_art
        self.art_rows = art_rows
        width = n + n_art + 1
        T = np.zeros((m + 2, width))
        T[:m, :n] = sf.A
        T[:m, -1] = sf.b
        for a, i in enumerate(art_rows):
            T[i, n + a] = 1.0
            basis[i] = n + a
        # row m: phase-2 reduced costs, row m+1: phase-1 reduced costs
        T[m, :n] = sf.c
        T[m + 1, n:n + n_art] = 1.0
        for i, k in enumerate(basis):
            for r in (m, m + 1):
                coef = T[r, k]
                if coef != 0.0:
                    T[r] -= coef * T[i]
        self.T = T
        self.basis = basis
        self.iterations = 0
        self.deadline = deadline
        self.max_iter = 50 * (m + n + n_art) + 1000

    def pivot(self, row: int, col: int) -> None:
        T = self.T
        piv = T[row, col]
        if abs(piv) < PIVOT_TOL:
            raise NumericalError("pivot below tolerance", row=row, col=col, pivot=float(piv),
                                 iteration=self.iterations)
        T[row] /= piv
        colv = T[:, col].copy()
        colv[row] = 0.0
        T -= np.outer(colv, T[row])
        T[:, col] = 0.0
        T[row, col] = 1.0
        rhs = T[: self.m, -1]
        np.maximum(rhs, 0.0, out=rhs, where=rhs > -FEAS_TOL)
        self.basis[row] = col
        self.iterations += 1

    def run(self, cost_row: int, allowed: np.ndarray) -> str:
        """Iterate to optimality of ``cost_row``; ``allowed`` masks candidate columns."""
        m = self.m
        T = self.T
        stall = 0
        best = math.inf
        bland = False
        stall_limit = 3 * (m + self.n)
        while True:
            if self.iterations >= self.max_iter:
                raise NumericalError("iteration limit reached", iterations=self.iterations)
            if self.deadline is not None and time.monotonic() > self.deadline:
                raise ResourceLimit("LP time budget exhausted")
            d = T[cost_row, :-1]
            cand = np.flatnonzero(allowed & (d < -OPT_TOL))
            if cand.size == 0:
                return "optimal"
            if bland:
                col = int(cand[0])
            else:
                col = int(cand[np.argmin(d[cand])])
            colv = T[:m, col]
            rows = np.flatnonzero(colv > PIVOT_TOL)
            if rows.size == 0:
                self.unbounded_col = col
                return "unbounded"
            ratios = T[rows, -1] / colv[rows]
            rmin = ratios.min()
            ties = rows[ratios <= rmin + 1e-12 * max(1.0, abs(rmin))]
            if bland or ties.size == 1:
                row = int(min(ties, key=lambda r: self.basis[r]))
            else:
                row = int(ties[np.argmax(colv[ties])])
            self.pivot(row, col)
            value = -T[cost_row, -1]
            if value < best - 1e-12 * max(1.0, abs(best) if np.isfinite(best) else 1.0):
                best = value
                stall = 0
            else:
                stall += 1
                if stall > stall_limit:
                    bland = True


def solve_lp(p: LpProblem, time_limit: float | None = None) -> LpSolution:
    """Two-phase dense simplex.

    Returns status ``optimal``, ``infeasible`` or ``unbounded``. For an
    optimal solve the duals ``y`` satisfy ``c = A^T y + r`` with reduced
    costs ``r``; for a minimisation ``>=`` rows carry ``y >= 0``.
    """
    if not isinstance(p, LpProblem):
        raise InputError("solve_lp expects an LpProblem")
    deadline = None if time_limit is None else time.monotonic() + time_limit
    c = p.c if p.sense == "min" else -p.c
    sf = _standard_form(p, c)
    tab = _Tableau(sf, deadline)
    m, n = tab.m, tab.n
    total = n + tab.n_art
    art_mask = np.zeros(total, dtype=bool)
    art_mask[n:] = True

    if tab.n_art:
        tab.run(m + 1, np.ones(total, dtype=bool))
        infeas = -tab.T[m + 1, -1]
        scale = max(1.0, float(np.max(np.abs(sf.b), initial=0.0)))
        if infeas > FEAS_TOL * scale:
            return LpSolution("infeasible", iterations=tab.iterations)
        # drive remaining artificials out of the basis
        keep = np.ones(m, dtype=bool)
        keep_orig = np.ones(m, dtype=bool)
        for i in range(m):
            if tab.basis[i] is not None and tab.basis[i] >= n:
                row = tab.T[i, :n]
                j = int(np.argmax(np.abs(row))) if n else 0
                if n and abs(row[j]) > PIVOT_TOL:
                    tab.pivot(i, j)
                else:
                    # a redundant constraint: the one that owns this artificial,
                    # which need not be original row i after pivoting
                    keep[i] = False
                    keep_orig[tab.art_rows[tab.basis[i] - n]] = False
        if not keep.all():
            tab.T = np.vstack([tab.T[:m][keep], tab.T[m:]])
            tab.basis = [k for k, kp in zip(tab.basis, keep) if kp]
            sf.A = sf.A[keep_orig]
            sf.b = sf.b[keep_orig]
            sf.row_flip = sf.row_flip[keep_orig]
            sf.row_origin = [o for o, kp in zip(sf.row_origin, keep_orig) if kp]
            tab.m = m = int(keep.sum())
    status = tab.run(m, ~art_mask)
    if status == "unbounded":
        return LpSolution("unbounded", iterations=tab.iterations,
                          ray=_ray(tab, sf, p))
    return _extract(p, sf, tab)


def _ray(tab: _Tableau, sf: _StandardForm, p: LpProblem) -> np.ndarray:
    col = tab.unbounded_col
    d = np.zeros(tab.n)
    d[col] = 1.0
    for i, k in enumerate(tab.basis):
        if k < tab.n:
            d[k] = -tab.T[i, col]
    ray = np.zeros(p.n)
    for j in range(sf.n_struct):
        ray[sf.col_var[j]] += sf.col_sign[j] * d[j]
    return ray


def _extract(p: LpProblem, sf: _StandardForm, tab: _Tableau) -> LpSolution:
    m, n = tab.m, tab.n
    basis = list(tab.basis)
    B = sf.A[:, basis] if m else np.zeros((0, 0))
    try:
        yb = np.linalg.solve(B, sf.b) if m else np.zeros(0)
        pi = np.linalg.solve(B.T, sf.c[basis]) if m else np.zeros(0)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular optimal basis", iterations=tab.iterations) from exc
    # refinement drifted: fall back to the tableau values
    if m and np.max(np.abs(B @ yb - sf.b), initial=0.0) > FEAS_TOL:
        yb = tab.T[:m, -1].copy()
    y = np.zeros(n)
    y[basis] = yb
    y[np.abs(y) < 1e-13] = 0.0
    if np.any(y < -FEAS_TOL * 10):
        raise NumericalError("negative basic variable after refinement",
                             value=float(y.min()), iterations=tab.iterations)
    y = np.maximum(y, 0.0)
    x = sf.offset.copy()
    for j in range(sf.n_struct):
        x[sf.col_var[j]] += sf.col_sign[j] * y[j]
    # clamp tiny bound overshoot
    x = np.clip(x, p.lower, p.upper)

    sign = 1.0 if p.sense == "min" else -1.0
    # standard-row duals back to original rows / bounds
    row_dual = np.zeros(p.m)
    ub_dual = {}
    for i, (kind, idx) in enumerate(sf.row_origin):
        val = pi[i] * sf.row_flip[i]
        if kind == "row":
            row_dual[idx] = val
        else:
            ub_dual[idx] = ub_dual.get(idx, 0.0) + val
    duals = sign * row_dual
    reduced = p.c - (p.A.T @ duals if p.m else 0.0)
    objective = float(p.c @ x)
    degenerate = bool(np.any(yb <= FEAS_TOL)) if m else False
    return LpSolution("optimal", x, objective, duals, reduced,
                      tuple(sorted(int(k) for k in basis)), degenerate, tab.iterations)


# ---------------------------------------------------------------------------
# brute force oracle


def brute_force_lp(p: LpProblem) -> LpSolution:
    """Enumerate every active set of ``n`` rows/bounds; tests only.

    Refuses problems with more than 8 variables or an unbounded feasible set.
    """
    n = p.n
    if n > 8:
        raise InputError("brute_force_lp supports at most 8 variables")
    if not (np.all(np.isfinite(p.lower)) and np.all(np.isfinite(p.upper))):
        raise InputError("brute_force_lp needs finite variable bounds")
    rows = [p.A[i] for i in range(p.m)]
    rhs = list(p.b)
    eye = np.eye(n)
    for j in range(n):
        rows += [eye[j], eye[j]]
        rhs += [p.lower[j], p.upper[j]]
    G = np.array(rows)
    h = np.array(rhs)
    sgn = 1.0 if p.sense == "min" else -1.0
    best_x, best_val = None, math.inf
    combos = itertools.combinations(range(len(rows)), n)
    while True:
        chunk = np.array(list(itertools.islice(combos, 20000)), dtype=int)
        if chunk.size == 0:
            break
        M = G[chunk]
        ok = np.abs(np.linalg.det(M)) > 1e-12
        if not ok.any():
            continue
        xs = np.linalg.solve(M[ok], h[chunk[ok]][..., None])[..., 0]
        tol = 1e-9 * np.maximum(1.0, np.max(np.abs(xs), axis=1))
        feas = np.all(xs >= p.lower - tol[:, None], axis=1) & np.all(xs <= p.upper + tol[:, None], axis=1)
        if p.m:
            ax = xs @ p.A.T
            for i, rel in enumerate(p.senses):
                if rel == "<=":
                    feas &= ax[:, i] <= p.b[i] + tol
                elif rel == ">=":
                    feas &= ax[:, i] >= p.b[i] - tol
                else:
                    feas &= np.abs(ax[:, i] - p.b[i]) <= tol
        if not feas.any():
            continue
        vals = sgn * (xs[feas] @ p.c)
        k = int(np.argmin(vals))
        if vals[k] < best_val - 1e-12:
            best_val, best_x = float(vals[k]), xs[feas][k]
    if best_x is None:
        return LpSolution("infeasible")
    return LpSolution("optimal", best_x, float(p.c @ best_x))


# ---------------------------------------------------------------------------
# branch and bound


def _polish(lp: LpProblem, sol: LpSolution, bins: np.ndarray, lower, upper, sgn: float,
            time_limit: float | None):
    """Re-solve a near-integral node with its binaries fixed at the rounded values.

    Returns ``(x, value, [])`` on success and ``(None, None, loose)`` when the
    exactly rounded point is infeasible, ``loose`` listing binaries that were
    not already exact.
    """
    xb = sol.x[bins]
    rounded = np.round(xb)
    loose = [int(j) for j, v, r in zip(bins, xb, rounded) if v != r]
    if not loose:
        return sol.x.copy(), sgn * sol.objective, []
    lo, hi = lower.copy(), upper.copy()
    lo[bins] = hi[bins] = rounded
    fixed = solve_lp(lp.with_bounds(lo, hi), time_limit=time_limit)
    if not fixed.optimal:
        return None, None, loose
    x = fixed.x.copy()
    x[bins] = rounded
    return x, sgn * fixed.objective, []


@dataclass(order=True)
class _Node:
    key: tuple
    fixes: dict = field(compare=False)
    depth: int = field(compare=False)


def _objective_floor(p: LpProblem) -> float:
    """Weakest bound on min c^T x implied by the variable box alone."""
    c = p.c if p.sense == "min" else -p.c
    lo = np.where(c >= 0, c * p.lower, c * p.upper)
    lo = np.where(c == 0, 0.0, lo)
    return float(np.sum(lo))


def solve_milp(p: MilpProblem, *, incumbent: np.ndarray | None = None,
               max_nodes: int = 100_000, time_limit: float | None = None,
               cutoff: float | None = None, target: float | None = None) -> MilpSolution:
    """Best-first branch and bound over the binary variables of ``p``.

    Nodes are ordered by LP bound, then depth (deeper first), then creation
    order; the lowest-index fractional binary is branched with the 0-branch
    first. ``incumbent`` seeds the upper bound after a feasibility check.
    ``cutoff`` prunes nodes whose bound cannot beat it; ``target`` stops the
    search as soon as the incumbent beats it (status ``feasible``).
    Exceeding ``max_nodes`` or ``time_limit`` raises :class:`ResourceLimit`.
    """
    lp = p.lp
    sgn = 1.0 if lp.sense == "min" else -1.0
    deadline = None if time_limit is None else time.monotonic() + time_limit
    bins = np.array(p.binaries, dtype=int)

    if bins.size == 0:
        sol = solve_lp(lp, time_limit=time_limit)
        if sol.status == "unbounded":
            raise InputError("MILP relaxation is unbounded")
        if not sol.optimal:
            return MilpSolution("infeasible")
        return MilpSolution("optimal", sol.x, sol.objective, 0, sol.objective)

    best_x, best_val = None, math.inf  # in minimisation units
    if incumbent is not None:
        x0 = np.asarray(incumbent, dtype=float).copy()
        x0[bins] = np.round(x0[bins])
        scale = max(1.0, float(np.max(np.abs(x0), initial=0.0)))
        if lp.violation(x0) <= FEAS_TOL * scale:
            best_x, best_val = x0, sgn * float(lp.c @ x0)

    def finish(status: str, nodes: int, bound: float) -> MilpSolution:
        return MilpSolution(status, best_x, None if best_x is None else float(lp.c @ best_x),
                            nodes, sgn * bound)

    floor = _objective_floor(lp)
    if best_x is not None and best_val <= floor + 1e-9:
        return finish("optimal", 0, best_val)
    if target is not None and best_x is not None and best_val < sgn * target:
        return finish("feasible", 0, floor)
    prune_at = math.inf if cutoff is None else sgn * cutoff

    counter = itertools.count()
    heap: list[_Node] = [_Node((-math.inf, 0, next(counter)), {}, 0)]
    nodes = 0
    while heap:
        node = heapq.heappop(heap)
        limit = min(best_val - 1e-9 * max(1.0, abs(best_val)), prune_at)
        if node.key[0] >= limit:
            continue
        if nodes >= max_nodes or (deadline is not None and time.monotonic() > deadline):
            bound = min([node.key[0]] + [h.key[0] for h in heap])
            inc = None if best_x is None else finish("feasible", nodes, bound)
            raise ResourceLimit("branch-and-bound budget exhausted", inc, sgn * bound, nodes)
        nodes += 1
        lower, upper = lp.lower.copy(), lp.upper.copy()
        for j, v in node.fixes.items():
            lower[j] = upper[j] = v
        remaining = None if deadline is None else max(deadline - time.monotonic(), 1e-3)
        try:
            sol = solve_lp(lp.with_bounds(lower, upper), time_limit=remaining)
        except ResourceLimit as exc:
            inc = None if best_x is None else finish("feasible", nodes, node.key[0])
            raise ResourceLimit(str(exc), inc, sgn * node.key[0], nodes) from exc
        if sol.status == "infeasible":
            continue
        if sol.status == "unbounded":
            raise InputError("MILP relaxation is unbounded")
        val = sgn * sol.objective
        if val >= limit:
            continue
        xb = sol.x[bins]
        frac = np.flatnonzero(np.abs(xb - np.round(xb)) > INT_TOL)
        if frac.size == 0:
            x, val, loose = _polish(lp, sol, bins, lower, upper, sgn, remaining)
            if x is None:
                # integral only within tolerance; big-M rows can hide real slack there
                cand = [j for j in loose if j not in node.fixes]
                if not cand:
                    continue
                j = cand[0]
                for v in (0.0, 1.0):
                    fixes = dict(node.fixes)
                    fixes[j] = v
                    heapq.heappush(heap, _Node((sgn * sol.objective, -(node.depth + 1),
                                                next(counter)), fixes, node.depth + 1))
                continue
            if val >= limit:
                continue
            best_x, best_val = x, val
            if target is not None and best_val < sgn * target:
                bound = min([val] + [h.key[0] for h in heap])
                return finish("feasible", nodes, bound)
            continue
        j = int(bins[frac[0]])
        for v in (0.0, 1.0):
            fixes = dict(node.fixes)
            fixes[j] = v
            heapq.heappush(heap, _Node((val, -(node.depth + 1), next(counter)), fixes, node.depth + 1))
    if best_x is None:
        return MilpSolution("infeasible", nodes=nodes)
    return finish("optimal", nodes, best_val)
