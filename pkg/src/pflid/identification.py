"""Fitting component bounds of a prescribed model structure to price/power data.

Each adjustable component is written as ``R x + Th theta >= r`` where ``x`` is
its power profile and ``theta`` stacks every unknown bound. Optimality of the
response to price ``lam`` is ``R^T v = lam`` with ``v >= 0`` complementary to
the row slacks. Replacing every response by these conditions, with one binary
per complementarity pair, gives a single mixed-integer LP whose objective is
the mean l1 misfit between measured and modelled aggregate power.

Branch and bound over that MILP is only practical for small datasets, so the
solver is always seeded with a KKT-consistent incumbent built from a
heuristic ``theta``. On noise-free data the heuristic usually reaches zero
misfit, which the objective floor proves optimal without branching.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .flex_model import (
    BatteryParams, FixedLoadParams, FlexModel, ModelError, TdLoadParams, respond, upsilon,
)
from .identifiability import Certificate, IdentGeometry, build_geometry, certify_candidate
from .polyhedra import InputError, is_bounded
from .solver import (
    LpProblem, MilpProblem, ResourceLimit, SolverError, solve_lp, solve_milp,
)

SCHEMA_VERSION = 1
DUAL_TOL = 1e-9
ZERO_LOSS = 1e-9
MAX_ESCALATIONS = 3
# dense KKT matrices above this many entries are not built
MAX_MILP_ENTRIES = 40_000_000
# the pattern refinement LP is skipped above this tableau size
MAX_REFINE_ENTRIES = 8_000_000


class StructureError(ValueError):
    """Invalid structure, or a structure that admits no region for the data."""


@dataclass(frozen=True)
class StructureSpec:
    """Component counts plus everything that is prescribed rather than fitted."""

    n_vb: int
    n_td: int = 0
    n_fix: int = 0
    sigma: tuple = ()
    e0: tuple | None = None
    fixed_profiles: tuple = ()
    dt: float = 1.0

    def __post_init__(self):
        for name in ("n_vb", "n_td", "n_fix"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise StructureError(f"{name} must be a nonnegative integer")
        if self.n_vb + self.n_td + self.n_fix == 0:
            raise StructureError("structure has no components")
        sigma = tuple(float(s) for s in self.sigma)
        if len(sigma) != self.n_vb:
            raise StructureError(f"{len(sigma)} retention values for {self.n_vb} batteries")
        if any(not 0.0 < s <= 1.0 for s in sigma):
            raise StructureError("retention values must lie in (0, 1]")
        e0 = (0.0,) * self.n_vb if self.e0 is None else tuple(float(e) for e in self.e0)
        if len(e0) != self.n_vb:
            raise StructureError(f"{len(e0)} initial energies for {self.n_vb} batteries")
        profiles = tuple(tuple(float(v) for v in p) for p in self.fixed_profiles)
        if len(profiles) != self.n_fix:
            raise StructureError(f"{len(profiles)} fixed profiles for {self.n_fix} fixed loads")
        if not self.dt > 0:
            raise StructureError("dt must be positive")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "e0", e0)
        object.__setattr__(self, "fixed_profiles", profiles)
        object.__setattr__(self, "dt", float(self.dt))

    @classmethod
    def from_model(cls, m: FlexModel) -> "StructureSpec":
        """The structure of ``m``: its retentions, initial energies and fixed profiles."""
        return cls(len(m.batteries), len(m.td_loads), len(m.fixed_loads),
                   tuple(b.sigma for b in m.batteries), tuple(b.e0 for b in m.batteries),
                   tuple(tuple(f.profile) for f in m.fixed_loads), m.dt)

    def with_battery(self, sigma: float, e0: float = 0.0) -> "StructureSpec":
        return StructureSpec(self.n_vb + 1, self.n_td, self.n_fix, self.sigma + (sigma,),
                             self.e0 + (e0,), self.fixed_profiles, self.dt)

    def to_json(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "n_vb": self.n_vb, "n_td": self.n_td,
                "n_fix": self.n_fix, "sigma": list(self.sigma), "e0": list(self.e0),
                "fixed_profiles": [list(p) for p in self.fixed_profiles], "dt": self.dt}

    @classmethod
    def from_json(cls, doc) -> "StructureSpec":
        if not isinstance(doc, dict):
            raise StructureError("structure document must be a JSON object")
        try:
            return cls(int(doc.get("n_vb", 0)), int(doc.get("n_td", 0)), int(doc.get("n_fix", 0)),
                       tuple(doc.get("sigma", ())), doc.get("e0"),
                       tuple(doc.get("fixed_profiles", ())), float(doc.get("dt", 1.0)))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, StructureError):
                raise
            raise StructureError(f"bad structure field ({exc})") from None

    @classmethod
    def load(cls, path) -> "StructureSpec":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise StructureError(f"invalid JSON ({exc})") from None
        return cls.from_json(doc)


# ---------------------------------------------------------------------------
# parameter layout and component rows


@dataclass(frozen=True, eq=False)
class _Comp:
    """One adjustable component: rows ``R x + Th theta >= r``; ``kinds[i]`` names row i."""

    label: str
    R: np.ndarray
    Th: np.ndarray
    r: np.ndarray
    kinds: tuple


@dataclass(frozen=True, eq=False)
class _Layout:
    T: int
    spec: StructureSpec
    comps: tuple
    fixed: np.ndarray

    @property
    def n_theta(self) -> int:
        return 4 * self.T * self.spec.n_vb + 2 * self.T * self.spec.n_td

    def blocks(self, theta) -> tuple[list, list]:
        theta = np.asarray(theta, dtype=float)
        T = self.T
        bats, tds = [], []
        at = 0
        for _ in range(self.spec.n_vb):
            bats.append([theta[at + i * T:at + (i + 1) * T] for i in range(4)])
            at += 4 * T
        for _ in range(self.spec.n_td):
            tds.append([theta[at:at + T], theta[at + T:at + 2 * T]])
            at += 2 * T
        return bats, tds

    def model(self, theta) -> FlexModel:
        """Flex model with the bounds in ``theta``; crossings below 1e-9 are closed."""
        bats, tds = self.blocks(theta)
        spec = self.spec
        bat_params, td_params = [], []
        for n, (pl, pu, el, eu) in enumerate(bats):
            bat_params.append(BatteryParams(np.minimum(pl, pu), pu, np.minimum(el, eu), eu,
                                            spec.e0[n], spec.sigma[n], spec.dt))
        for ql, qu in tds:
            td_params.append(TdLoadParams(np.minimum(ql, qu), qu))
        fixed = [FixedLoadParams(p) for p in spec.fixed_profiles]
        return FlexModel(self.T, bat_params, td_params, fixed, spec.dt)

    def theta_of(self, m: FlexModel) -> np.ndarray:
        parts = []
        for b in m.batteries:
            parts += [b.p_min, b.p_max, b.e_min, b.e_max]
        for t in m.td_loads:
            parts += [t.p_min, t.p_max]
        return np.concatenate(parts) if parts else np.zeros(0)

    def widths(self) -> np.ndarray:
        """Cost vector summing ``upper - lower`` over every fitted bound."""
        w = np.zeros(self.n_theta)
        T = self.T
        at = 0
        for _ in range(self.spec.n_vb):
            for i, s in enumerate((-1.0, 1.0, -1.0, 1.0)):
                w[at + i * T:at + (i + 1) * T] = s
            at += 4 * T
        for _ in range(self.spec.n_td):
            w[at:at + T] = -1.0
            w[at + T:at + 2 * T] = 1.0
            at += 2 * T
        return w


def _layout(spec: StructureSpec, T: int) -> _Layout:
    for i, p in enumerate(spec.fixed_profiles):
        if len(p) != T:
            raise StructureError(f"fixed profile {i} has length {len(p)}, data has T={T}")
    n_theta = 4 * T * spec.n_vb + 2 * T * spec.n_td
    eye = np.eye(T)
    comps = []
    at = 0
    for n in range(spec.n_vb):
        U1, U2 = upsilon(spec.sigma[n], T)
        G = U1 * spec.dt
        base = spec.e0[n] * U2
        pl, pu, el, eu = (slice(at + i * T, at + (i + 1) * T) for i in range(4))
        R = np.vstack([G, -G, eye, -eye])
        Th = np.zeros((4 * T, n_theta))
        Th[0:T, el] = -eye
        Th[T:2 * T, eu] = eye
        Th[2 * T:3 * T, pl] = -eye
        Th[3 * T:4 * T, pu] = eye
        r = np.concatenate([-base, base, np.zeros(2 * T)])
        kinds = ("e_min",) * T + ("e_max",) * T + ("p_min",) * T + ("p_max",) * T
        comps.append(_Comp(f"batteries[{n}]", R, Th, r, kinds))
        at += 4 * T
    for n in range(spec.n_td):
        ql, qu = slice(at, at + T), slice(at + T, at + 2 * T)
        Th = np.zeros((2 * T, n_theta))
        Th[0:T, ql] = -eye
        Th[T:2 * T, qu] = eye
        comps.append(_Comp(f"td_loads[{n}]", np.vstack([eye, -eye]), Th, np.zeros(2 * T),
                           ("p_min",) * T + ("p_max",) * T))
        at += 2 * T
    fixed = np.zeros(T)
    for p in spec.fixed_profiles:
        fixed = fixed + np.asarray(p)
    return _Layout(T, spec, tuple(comps), fixed)


def _component_optimum(c: _Comp, theta, lam) -> tuple[np.ndarray, np.ndarray]:
    """An optimal point and multipliers ``v >= 0`` with ``R^T v = lam`` for one component."""
    rhs = c.r - c.Th @ theta
    T = c.R.shape[1]
    if c.kinds[0] == "p_min" and c.R.shape[0] == 2 * T:
        v = np.concatenate([np.maximum(lam, 0.0), np.maximum(-lam, 0.0)])
        x = np.where(lam < 0, -rhs[T:], rhs[:T])
        return x, v
    sol = solve_lp(LpProblem(lam, c.R, (">=",) * c.R.shape[0], rhs, -np.inf, np.inf))
    if not sol.optimal:
        raise ModelError("bounds admit no power profile", c.label)
    v = np.maximum(sol.duals, 0.0)
    v[v <= DUAL_TOL] = 0.0
    return sol.x, v


# ---------------------------------------------------------------------------
# misfit of a given parameter vector


@dataclass(frozen=True, eq=False)
class _SampleFit:
    xs: list
    vs: list
    misfit: np.ndarray  # modelled minus measured aggregate power


def _fit_sample(lay: _Layout, theta, lam, P) -> _SampleFit:
    """Point of the optimal face closest in l1 to ``P`` (the optimistic response).

    Complementary slackness with one optimal multiplier vector describes the
    whole optimal face: rows with positive multiplier hold with equality.
    """
    T = lay.T
    xs, vs, rows, senses, rhs = [], [], [], [], []
    n_x = T * len(lay.comps)
    for i, c in enumerate(lay.comps):
        _, v = _component_optimum(c, theta, lam)
        vs.append(v)
        block = np.zeros((c.R.shape[0], n_x + 2 * T))
        block[:, i * T:(i + 1) * T] = c.R
        rows.append(block)
        rhs.append(c.r - c.Th @ theta)
        senses += ["=" if vi > 0 else ">=" for vi in v]
    agg = np.zeros((T, n_x + 2 * T))
    for i in range(len(lay.comps)):
        agg[:, i * T:(i + 1) * T] = np.eye(T)
    agg[:, n_x:n_x + T] = -np.eye(T)
    agg[:, n_x + T:] = np.eye(T)
    rows.append(agg)
    rhs.append(P - lay.fixed)
    senses += ["="] * T
    cost = np.concatenate([np.zeros(n_x), np.ones(2 * T)])
    lower = np.concatenate([np.full(n_x, -np.inf), np.zeros(2 * T)])
    sol = solve_lp(LpProblem(cost, np.vstack(rows), tuple(senses), np.concatenate(rhs),
                             lower, np.inf))
    if not sol.optimal:
        raise SolverError(f"optimal-face projection failed ({sol.status})")
    x = sol.x
    xs = [x[i * T:(i + 1) * T] for i in range(len(lay.comps))]
    total = lay.fixed + (np.sum(xs, axis=0) if xs else 0.0)
    return _SampleFit(xs, vs, total - P)


def _optimistic_loss(lay: _Layout, theta, ds: Dataset) -> tuple[float, list]:
    fits = [_fit_sample(lay, theta, lam, P) for lam, P in zip(ds.lambdas, ds.powers)]
    return float(np.mean([np.abs(f.misfit).sum() for f in fits])), fits


def evaluate_loss(model: FlexModel, ds: Dataset, norm: str = "l1",
                  tie_break: str = "lexicographic") -> float:
    """Mean per-sample distance between measured and modelled power.

    ``norm`` is ``l1`` (sum of absolute deviations) or ``l2`` (squared
    Euclidean). With ``tie_break="lexicographic"`` the modelled power is
    :func:`respond`; ``"optimistic"`` picks the optimal-face point closest in
    l1 to the measurement, which is how the identification MILP scores ties.
    """
    if norm not in ("l1", "l2"):
        raise InputError(f"unknown norm {norm!r}")
    if tie_break not in ("lexicographic", "optimistic"):
        raise InputError(f"unknown tie break {tie_break!r}")
    if model.T != ds.T:
        raise InputError(f"model has T={model.T}, data has T={ds.T}")
    if ds.K == 0:
        return 0.0
    if tie_break == "optimistic":
        lay = _layout(StructureSpec.from_model(model), model.T)
        theta = lay.theta_of(model)
        diffs = [_fit_sample(lay, theta, lam, P).misfit for lam, P in zip(ds.lambdas, ds.powers)]
    else:
        diffs = [respond(model, lam).p_star - P for lam, P in zip(ds.lambdas, ds.powers)]
    D = np.array(diffs)
    if norm == "l1":
        return float(np.mean(np.abs(D).sum(axis=1)))
    return float(np.mean((D ** 2).sum(axis=1)))


# ---------------------------------------------------------------------------
# heuristic parameter search


def _scale(ds: Dataset) -> float:
    return max(1.0, float(np.max(np.abs(ds.lambdas))), float(np.max(np.abs(ds.powers))),
               float(np.max(np.ptp(ds.powers, axis=0))))


def _containment_lp(lay: _Layout, V: np.ndarray, bound: float, cuts=None,
                    cost_theta=None) -> LpProblem:
    """LP over ``theta`` keeping every point of ``V`` inside the modelled region.

    ``cuts`` is ``(C, d)``: rows ``C theta + s >= d`` with a penalised slack
    ``s >= 0`` per row.
    """
    T, nt = lay.T, lay.n_theta
    nc = len(lay.comps)
    nx = nc * T
    n_cut = 0 if cuts is None else cuts[0].shape[0]
    n = nt + len(V) * nx + n_cut
    rows, senses, rhs = [], [], []
    for j, P in enumerate(V):
        off = nt + j * nx
        for i, c in enumerate(lay.comps):
            block = np.zeros((c.R.shape[0], n))
            block[:, :nt] = c.Th
            block[:, off + i * T:off + (i + 1) * T] = c.R
            rows.append(block)
            rhs.append(c.r)
            senses += [">="] * c.R.shape[0]
        agg = np.zeros((T, n))
        for i in range(nc):
            agg[:, off + i * T:off + (i + 1) * T] = np.eye(T)
        rows.append(agg)
        rhs.append(P - lay.fixed)
        senses += ["="] * T
    cost = np.zeros(n)
    if cuts is not None:
        C, d = cuts
        block = np.zeros((n_cut, n))
        block[:, :nt] = C
        block[:, n - n_cut:] = np.eye(n_cut)
        rows.append(block)
        rhs.append(d)
        senses += [">="] * n_cut
        cost[n - n_cut:] = 1.0
    if cost_theta is not None:
        cost[:nt] = cost_theta
    lower = np.concatenate([np.full(nt + len(V) * nx, -bound), np.zeros(n_cut)])
    upper = np.concatenate([np.full(nt + len(V) * nx, bound), np.full(n_cut, np.inf)])
    A = np.vstack(rows) if rows else np.zeros((0, n))
    return LpProblem(cost, A, tuple(senses), np.concatenate(rhs) if rhs else np.zeros(0),
                     lower, upper)


def _support_cuts(lay: _Layout, theta, g: IdentGeometry) -> tuple[np.ndarray, np.ndarray, float]:
    """Linear lower bounds on the support function at each sample price.

    With multipliers ``v`` optimal at the current ``theta``, the dual objective
    ``sum v^T (r - Th theta) + lam^T F`` bounds the support value from below for
    every ``theta`` and is exact at the current one. Requiring it to reach
    ``Xi_k`` keeps the region inside the optimality halfspaces.
    """
    K = g.K
    C = np.zeros((K, lay.n_theta))
    d = np.empty(K)
    violation = 0.0
    for k in range(K):
        lam = g.Lambda[k]
        const = float(lam @ lay.fixed)
        coef = np.zeros(lay.n_theta)
        for c in lay.comps:
            _, v = _component_optimum(c, theta, lam)
            const += float(v @ c.r)
            coef -= v @ c.Th
        C[k] = coef
        d[k] = g.Xi[k] - const
        violation += max(0.0, d[k] - float(coef @ theta))
    return C, d, violation


def _containment_search(lay: _Layout, g: IdentGeometry, starts: list, bound: float,
                        max_iter: int = 60, deadline: float | None = None
                        ) -> tuple[np.ndarray | None, float]:
    """Alternate between multipliers and ``theta`` to push the region inside Pi.

    Each LP keeps the observed hull inside the region and minimises the summed
    shortfall of the linearised support bounds; the previous ``theta`` stays
    feasible, so the shortfall never increases.
    """
    V = g.conv.vertices
    tol = 1e-9 * max(1.0, float(np.max(np.abs(g.Xi), initial=0.0)))
    best, best_v = None, np.inf
    for theta in starts:
        if theta is None:
            continue
        for _ in range(max_iter):
            C, d, viol = _support_cuts(lay, theta, g)
            if viol < best_v:
                best, best_v = theta, viol
            if viol <= tol:
                return theta, viol
            left = _remaining(deadline)
            if left is not None and left <= 0:
                return best, best_v
            try:
                sol = solve_lp(_containment_lp(lay, V, bound, (C, d)), time_limit=left)
            except ResourceLimit:
                return best, best_v
            if not sol.optimal:
                break
            new = sol.x[:lay.n_theta]
            if sol.objective >= viol - 1e-12 * max(1.0, viol):
                break
            theta = new
    return best, best_v


def _min_width_theta(lay: _Layout, g: IdentGeometry, bound: float) -> np.ndarray | None:
    sol = solve_lp(_containment_lp(lay, g.conv.vertices, bound, cost_theta=lay.widths()))
    return sol.x[:lay.n_theta] if sol.optimal else None


def _max_width_theta(lay: _Layout, g: IdentGeometry, bound: float) -> np.ndarray | None:
    sol = solve_lp(_containment_lp(lay, g.conv.vertices, bound, cost_theta=-lay.widths()))
    return sol.x[:lay.n_theta] if sol.optimal else None


def _pattern_lp(lay: _Layout, theta, ds: Dataset, bound: float,
                time_limit: float | None = None) -> np.ndarray | None:
    """Best ``theta`` that keeps every sample's active rows active.

    Multipliers do not depend on ``theta``, so with the active rows frozen
    every feasible point is still optimal for its price and the LP objective
    is the exact l1 misfit.
    """
    T, nt = lay.T, lay.n_theta
    nc = len(lay.comps)
    per = nc * T + 2 * T
    K = ds.K
    n = nt + K * per
    m = K * (sum(c.R.shape[0] for c in lay.comps) + T)
    if m * (n + m) > MAX_REFINE_ENTRIES:
        return None
    A = np.zeros((m, n))
    senses, rhs = [], []
    row = 0
    for k, (lam, P) in enumerate(zip(ds.lambdas, ds.powers)):
        off = nt + k * per
        for i, c in enumerate(lay.comps):
            _, v = _component_optimum(c, theta, lam)
            mc = c.R.shape[0]
            A[row:row + mc, :nt] = c.Th
            A[row:row + mc, off + i * T:off + (i + 1) * T] = c.R
            rhs.append(c.r)
            senses += ["=" if vi > 0 else ">=" for vi in v]
            row += mc
        for i in range(nc):
            A[row:row + T, off + i * T:off + (i + 1) * T] = np.eye(T)
        A[row:row + T, off + nc * T:off + nc * T + T] = -np.eye(T)
        A[row:row + T, off + nc * T + T:off + per] = np.eye(T)
        rhs.append(P - lay.fixed)
        senses += ["="] * T
        row += T
    cost = np.zeros(n)
    lower = np.full(n, -bound)
    upper = np.full(n, bound)
    for k in range(K):
        off = nt + k * per + nc * T
        cost[off:off + 2 * T] = 1.0 / K
        lower[off:off + 2 * T] = 0.0
        upper[off:off + 2 * T] = np.inf
    try:
        sol = solve_lp(LpProblem(cost, A, tuple(senses), np.concatenate(rhs), lower, upper),
                       time_limit=time_limit)
    except ResourceLimit:
        return None
    return sol.x[:nt] if sol.optimal else None


def _descend(lay: _Layout, theta, ds: Dataset, bound: float, loss: float,
             max_iter: int = 20, deadline: float | None = None) -> tuple[np.ndarray, float]:
    for _ in range(max_iter):
        left = _remaining(deadline)
        if loss <= ZERO_LOSS or (left is not None and left <= 0):
            break
        new = _pattern_lp(lay, theta, ds, bound, left)
        if new is None:
            break
        new_loss, _ = _optimistic_loss(lay, new, ds)
        if new_loss >= loss - 1e-12:
            break
        theta, loss = new, new_loss
    return theta, loss


# ---------------------------------------------------------------------------
# KKT system


@dataclass(frozen=True, eq=False)
class KktSystem:
    """The single-level MILP and the column map needed to read it back.

    Columns are laid out as ``theta`` followed by one block per sample
    holding ``omega`` (T), then for every component ``x`` (T), ``v`` (rows)
    and ``z`` (rows), then ``d+`` and ``d-`` (T each).
    """

    milp: MilpProblem
    big_m: float
    bound: float
    n_theta: int
    sample_width: int
    comp_offsets: tuple  # (x, v, z) column offsets inside a sample block
    comp_rows: tuple
    T: int

    def sample(self, k: int) -> int:
        return self.n_theta + k * self.sample_width

    def theta(self, x) -> np.ndarray:
        return np.asarray(x)[:self.n_theta]


def _kkt_shape(lay: _Layout, K: int) -> tuple[int, int]:
    T = lay.T
    mrows = [c.R.shape[0] for c in lay.comps]
    width = T + sum(T + 2 * mc for mc in mrows) + 2 * T
    n = lay.n_theta + K * width
    m = K * (T + sum(3 * mc + T for mc in mrows) + T)
    return m, n


def build_kkt(lay: _Layout, ds: Dataset, big_m: float, bound: float | None = None) -> KktSystem:
    """Assemble the big-M MILP for every sample of ``ds``."""
    T, nt, K = lay.T, lay.n_theta, ds.K
    bound = big_m if bound is None else bound
    m, n = _kkt_shape(lay, K)
    if m * n > MAX_MILP_ENTRIES:
        raise ResourceLimit(f"KKT matrix would have {m * n} entries")
    mrows = [c.R.shape[0] for c in lay.comps]
    offsets = []
    at = T
    for mc in mrows:
        offsets.append((at, at + T, at + T + mc))
        at += T + 2 * mc
    width = at + 2 * T
    A = np.zeros((m, n))
    b = np.zeros(m)
    senses = []
    lower = np.full(n, -bound)
    upper = np.full(n, bound)
    cost = np.zeros(n)
    binaries = []
    eye = np.eye(T)
    row = 0
    for k, (lam, P) in enumerate(zip(ds.lambdas, ds.powers)):
        base = nt + k * width
        om = slice(base, base + T)
        # price-multiplier identity lam + omega = 0
        A[row:row + T, om] = eye
        b[row:row + T] = -lam
        senses += ["="] * T
        row += T
        lower[om] = -big_m
        upper[om] = big_m
        for c, mc, (ox, ov, oz) in zip(lay.comps, mrows, offsets):
            xs = slice(base + ox, base + ox + T)
            vs = slice(base + ov, base + ov + mc)
            zs = slice(base + oz, base + oz + mc)
            # primal feasibility
            A[row:row + mc, :nt] = c.Th
            A[row:row + mc, xs] = c.R
            b[row:row + mc] = c.r
            senses += [">="] * mc
            row += mc
            # slack <= M (1 - z)
            A[row:row + mc, :nt] = c.Th
            A[row:row + mc, xs] = c.R
            A[row:row + mc, zs] = big_m * np.eye(mc)
            b[row:row + mc] = c.r + big_m
            senses += ["<="] * mc
            row += mc
            # v <= M z
            A[row:row + mc, vs] = np.eye(mc)
            A[row:row + mc, zs] = -big_m * np.eye(mc)
            senses += ["<="] * mc
            row += mc
            # stationarity R^T v + omega = 0
            A[row:row + T, vs] = c.R.T
            A[row:row + T, om] = eye
            senses += ["="] * T
            row += T
            lower[vs] = 0.0
            upper[vs] = big_m
            lower[zs] = 0.0
            upper[zs] = 1.0
            binaries += range(zs.start, zs.stop)
            if c.kinds[0] == "p_min" and mc == 2 * T:
                # a box component must sit on the bound its price pushes it to
                for t in range(T):
                    if lam[t] > 0:
                        lower[zs.start + t] = 1.0
                    elif lam[t] < 0:
                        lower[zs.start + T + t] = 1.0
        ds_ = slice(base + width - 2 * T, base + width)
        for i, (ox, _, _) in enumerate(offsets):
            A[row:row + T, base + ox:base + ox + T] = eye
        A[row:row + T, ds_.start:ds_.start + T] = -eye
        A[row:row + T, ds_.start + T:ds_.stop] = eye
        b[row:row + T] = P - lay.fixed
        senses += ["="] * T
        row += T
        cost[ds_] = 1.0 / K
        lower[ds_] = 0.0
        upper[ds_] = np.inf
    assert row == m
    lp = LpProblem(cost, A, tuple(senses), b, lower, upper)
    return KktSystem(MilpProblem(lp, tuple(binaries)), big_m, bound, nt, width,
                     tuple(offsets), tuple(mrows), T)


def _kkt_point(kkt: KktSystem, lay: _Layout, theta, fits: list, ds: Dataset) -> np.ndarray:
    """MILP point reproducing ``theta`` and the per-sample optimistic responses."""
    T = lay.T
    x = np.zeros(kkt.milp.lp.n)
    x[:kkt.n_theta] = theta
    for k, (fit, lam) in enumerate(zip(fits, ds.lambdas)):
        base = kkt.sample(k)
        x[base:base + T] = -lam
        for c, xc, v, (ox, ov, oz) in zip(lay.comps, fit.xs, fit.vs, kkt.comp_offsets):
            mc = c.R.shape[0]
            x[base + ox:base + ox + T] = xc
            x[base + ov:base + ov + mc] = v
            x[base + oz:base + oz + mc] = (v > 0).astype(float)
        dd = base + kkt.sample_width - 2 * T
        x[dd:dd + T] = np.maximum(fit.misfit, 0.0)
        x[dd + T:dd + 2 * T] = np.maximum(-fit.misfit, 0.0)
    return x


def _audit(kkt: KktSystem, lay: _Layout, x: np.ndarray, K: int) -> list:
    """Names of variable groups sitting at the big-M limits."""
    hits = []
    lim = 0.999
    th = x[:kkt.n_theta]
    if np.any(np.abs(th) >= lim * kkt.bound):
        hits.append("theta")
    for k in range(K):
        base = kkt.sample(k)
        for c, (ox, ov, oz) in zip(lay.comps, kkt.comp_offsets):
            mc = c.R.shape[0]
            xc = x[base + ox:base + ox + lay.T]
            v = x[base + ov:base + ov + mc]
            slack = c.R @ xc + c.Th @ th - c.r
            if np.any(v >= lim * kkt.big_m):
                hits.append(f"v[{k}].{c.label}")
            if np.any(slack >= lim * kkt.big_m):
                hits.append(f"slack[{k}].{c.label}")
            if np.any(np.abs(xc) >= lim * kkt.bound):
                hits.append(f"x[{k}].{c.label}")
    return hits



# ---------------------------------------------------------------------------
# identification driver


@dataclass(frozen=True, eq=False)
class IdentResult:
    """Outcome of :func:`identify`.

    ``status`` is ``optimal`` when the misfit is proven minimal and
    ``budget_exceeded`` when branch and bound stopped early (or the MILP was
    too large to build); ``bound`` is then the best proven lower bound.
    """

    theta_hat: FlexModel
    f_value: float
    norm: str
    certificate: Certificate | None
    status: str
    bound: float
    stats: dict = field(default_factory=dict)
    audit: tuple = ()
    f_l2: float | None = None

    @property
    def gap(self) -> float:
        return max(self.f_value - self.bound, 0.0)

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "status": self.status,
            "theta_hat": self.theta_hat.to_json(),
            "f_value": {self.norm: self.f_value, "l2": self.f_l2},
            "norm": self.norm,
            "bound": self.bound,
            "gap": self.gap,
            "certificate": None if self.certificate is None else self.certificate.to_json(),
            # wall-clock entries stay on the object; files must not depend on timing
            "solver": {k: v for k, v in self.stats.items() if not k.endswith("seconds")},
            "big_m_audit": list(self.audit),
        }


def identify(ds: Dataset, spec: StructureSpec, norm: str = "l1", *, max_nodes: int = 2000,
             time_limit: float | None = 60.0, warm_start=None, minimize_area: bool = False,
             certify: bool = True, big_m: float | None = None) -> IdentResult:
    """Fit the bounds of ``spec`` to ``ds`` by minimising the mean l1 misfit.

    ``warm_start`` is an optional :class:`FlexModel` (or list of them) whose
    bounds seed the search; a model with fewer batteries than ``spec`` is
    padded with zero-width batteries, which leaves its misfit unchanged.
    ``minimize_area`` breaks ties among zero-misfit parameters by the
    smallest summed bound widths. ``time_limit`` bounds the whole call: the
    heuristic search may use half of it and branch and bound gets the rest.
    Running out of time or ``max_nodes`` yields status ``budget_exceeded``.
    ``big_m`` overrides the initial complementarity constant, which defaults
    to ten times the largest price, power or power range in the data.
    """
    if norm != "l1":
        raise InputError("identification optimises the l1 misfit; use evaluate_loss for l2")
    if ds.K < 1:
        raise InputError("identification needs at least one sample")
    t0 = time.monotonic()
    deadline = None if time_limit is None else t0 + float(time_limit)
    search_end = None if time_limit is None else t0 + 0.5 * float(time_limit)
    lay = _layout(spec, ds.T)
    g = build_geometry(ds)
    scale = _scale(ds)
    big_m = 10.0 * scale if big_m is None else float(big_m)
    bound = _theta_box(spec, ds, 10.0 * scale)
    stats = {"K": ds.K, "T": ds.T, "n_theta": lay.n_theta}

    if lay.n_theta == 0:
        theta = np.zeros(0)
        loss, fits = _optimistic_loss(lay, theta, ds)
    else:
        starts = [_pad_warm(lay, w) for w in _as_list(warm_start)]
        starts += [_min_width_theta(lay, g, bound), _max_width_theta(lay, g, bound)]
        theta, viol = _containment_search(lay, g, starts, bound, deadline=search_end)
        if theta is None:
            raise StructureError("no parameters of this structure contain the observed hull")
        candidates = [theta] + [s for s in starts if s is not None]
        scored = []
        for cand in candidates:
            loss_c, _ = _optimistic_loss(lay, cand, ds)
            scored.append((loss_c, cand))
        loss, theta = min(scored, key=lambda t: t[0])
        stats["containment_shortfall"] = viol
        theta, loss = _descend(lay, theta, ds, bound, loss, deadline=search_end)
        if minimize_area and loss <= ZERO_LOSS:
            theta = _area_tiebreak(lay, g, theta, bound)
        loss, fits = _optimistic_loss(lay, theta, ds)
    stats["heuristic_f"] = loss
    stats["heuristic_seconds"] = time.monotonic() - t0

    audit = []
    status, theta, loss, bound, nodes = _solve_kkt(
        lay, ds, theta, loss, fits, big_m, audit, max_nodes, deadline, stats)
    stats["nodes"] = nodes
    stats["seconds"] = time.monotonic() - t0
    model = lay.model(theta)
    cert = certify_candidate(model, g) if certify else None
    f_l2 = evaluate_loss(model, ds, "l2", "optimistic")
    return IdentResult(model, float(loss), norm, cert, status, float(bound), stats,
                       tuple(audit), f_l2)


def _remaining(deadline: float | None) -> float | None:
    return None if deadline is None else deadline - time.monotonic()


def _theta_box(spec: StructureSpec, ds: Dataset, big_m: float) -> float:
    # fitted bounds stay well inside the big-M range so that row slacks cannot reach M
    e0 = max((abs(e) for e in spec.e0), default=0.0)
    return big_m / (2.0 * (1.0 + ds.T * spec.dt)) + e0


def _as_list(w):
    if w is None:
        return []
    return list(w) if isinstance(w, (list, tuple)) else [w]


def _pad_warm(lay: _Layout, m: FlexModel) -> np.ndarray | None:
    """Bounds of ``m`` in this layout; missing batteries get zero width at the initial energy."""
    if m.T != lay.T or len(m.td_loads) != lay.spec.n_td or len(m.batteries) > lay.spec.n_vb:
        return None
    T = lay.T
    parts = []
    for n in range(lay.spec.n_vb):
        if n < len(m.batteries):
            b = m.batteries[n]
            parts += [b.p_min, b.p_max, b.e_min, b.e_max]
        else:
            _, U2 = upsilon(lay.spec.sigma[n], T)
            e = lay.spec.e0[n] * U2
            parts += [np.zeros(T), np.zeros(T), e, e]
    for t in m.td_loads:
        parts += [t.p_min, t.p_max]
    return np.concatenate(parts)


def _area_tiebreak(lay: _Layout, g: IdentGeometry, theta, bound: float) -> np.ndarray:
    """Narrowest bounds that keep the current support bounds and the observed hull."""
    C, d, _ = _support_cuts(lay, theta, g)
    p = _containment_lp(lay, g.conv.vertices, bound, (C, d))
    cost = p.c.copy()
    cost[:lay.n_theta] = 1e-3 * lay.widths()
    cost[lay.n_theta + len(g.conv.vertices) * lay.T * len(lay.comps):] = 1.0
    sol = solve_lp(LpProblem(cost, p.A, p.senses, p.b, p.lower, p.upper))
    if not sol.optimal:
        return theta
    new = sol.x[:lay.n_theta]
    return new if _support_cuts(lay, new, g)[2] <= 1e-9 * max(1.0, float(np.abs(g.Xi).max())) else theta


def _solve_kkt(lay, ds, theta, loss, fits, big_m, audit, max_nodes, deadline, stats):
    """Build, seed and solve the big-M MILP; double M while the audit finds binding limits.

    The audit runs on the seed point first: if its multipliers or slacks
    already reach M the seed would be cut off, so M grows before solving.
    """
    status, bound, nodes = "budget_exceeded", 0.0, 0
    stats["milp_built"] = False
    for esc in range(MAX_ESCALATIONS + 1):
        last = esc == MAX_ESCALATIONS
        try:
            kkt = build_kkt(lay, ds, big_m)
        except ResourceLimit as exc:
            stats["milp_skipped"] = str(exc)
            # the misfit is nonnegative, so zero misfit is optimal without the MILP
            if loss <= ZERO_LOSS:
                status = "optimal"
            return status, theta, loss, bound, nodes
        stats["milp_built"] = True
        stats["milp_shape"] = [kkt.milp.lp.m, kkt.milp.lp.n, len(kkt.milp.binaries)]
        x0 = _kkt_point(kkt, lay, theta, fits, ds)
        seed_hits = _audit(kkt, lay, x0, ds.K)
        if seed_hits:
            audit.append({"big_m": big_m, "stage": "seed", "binding": seed_hits[:10],
                          "n_binding": len(seed_hits)})
            if last:
                # M never covered the seed; keep the heuristic answer unproven
                status = "optimal" if loss <= ZERO_LOSS else "budget_exceeded"
                break
            big_m *= 2.0
            continue
        inc_ok = kkt.milp.lp.violation(x0) <= 1e-7 * max(1.0, float(np.abs(x0).max()))
        try:
            sol = solve_milp(kkt.milp, incumbent=x0 if inc_ok else None,
                             max_nodes=max_nodes,
                             time_limit=None if deadline is None else max(_remaining(deadline), 1e-3))
            nodes = sol.nodes
            if sol.status == "infeasible":
                raise StructureError("KKT system infeasible for a structure with a nonempty region")
            x, status, bound = sol.x, "optimal", float(sol.bound)
        except ResourceLimit as exc:
            nodes = exc.nodes
            bound = max(0.0, float(exc.bound)) if exc.bound is not None else 0.0
            status = "budget_exceeded"
            x = exc.incumbent.x if exc.incumbent is not None else (x0 if inc_ok else None)
        if x is None:
            break
        hits = _audit(kkt, lay, x, ds.K)
        audit.append({"big_m": big_m, "stage": "solution", "incumbent_seeded": bool(inc_ok),
                      "binding": hits[:10], "n_binding": len(hits)})
        new_theta = kkt.theta(x).copy()
        new_loss, new_fits = _optimistic_loss(lay, new_theta, ds)
        if new_loss <= loss:
            theta, loss, fits = new_theta, new_loss, new_fits
        if not hits or last:
            break
        big_m *= 2.0
    stats["big_m"] = big_m
    return status, theta, loss, min(bound, loss), nodes


# ---------------------------------------------------------------------------
# canonical solutions


def canonical_solutions(ds: Dataset) -> dict:
    """The smallest and largest regions consistent with noise-free data.

    ``omega_min`` is the observed hull and ``omega_max`` the optimality
    halfspace intersection (``None`` when it is unbounded). Certificates are
    included for each available region.
    """
    g = build_geometry(ds)
    out = {"omega_min": g.conv, "omega_max": None,
           "omega_min_certificate": certify_candidate(g.conv, g),
           "omega_max_certificate": None}
    if is_bounded(g.pi):
        out["omega_max"] = g.pi
        out["omega_max_certificate"] = certify_candidate(g.pi, g)
    return out
