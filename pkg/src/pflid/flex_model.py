"""Storage-like flexible-load model and its price-response oracle.

A model is a sum of virtual batteries (energy-coupled over time), time-decoupled
adjustable loads (boxes) and fixed profiles. Battery ``n`` with power ``p`` has
energy trajectory ``E = U1 p dt + e0 U2`` where ``U1[i, j] = sigma**(i-j)`` for
``i >= j`` and ``U2[i] = sigma**(i+1)`` (periods counted from one), and must
keep ``e_min <= E <= e_max`` for every period ``t = 1..T``.

The response to a price vector minimises total cost over the aggregate region.
Because the region is a Minkowski sum of the component sets, the minimisation
separates by component, and so does the lexicographic tie-break used when the
optimum is not unique.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .polyhedra import HPolyhedron, VPolytope, convex_hull_2d, vertex_enumerate_2d
from .solver import FEAS_TOL, LpProblem, LpSolution, solve_lp

SCHEMA_VERSION = 1


class ModelError(ValueError):
    """Invalid or empty model; ``component`` names the offending part."""

    def __init__(self, message: str, component: str | None = None):
        super().__init__(message if component is None else f"{component}: {message}")
        self.component = component


def _vec(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ModelError("non-finite entry", name)
    v.setflags(write=False)
    return v


def upsilon(sigma: float, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Energy-propagation matrices (U1, U2) for retention ``sigma``."""
    i = np.arange(T)
    lag = i[:, None] - i[None, :]
    U1 = np.where(lag >= 0, float(sigma) ** np.maximum(lag, 0), 0.0)
    U2 = float(sigma) ** (i + 1.0)
    return U1, U2


@dataclass(frozen=True, eq=False)
class BatteryParams:
    p_min: np.ndarray
    p_max: np.ndarray
    e_min: np.ndarray
    e_max: np.ndarray
    e0: float
    sigma: float
    dt: float = 1.0

    def __post_init__(self):
        for name in ("p_min", "p_max", "e_min", "e_max"):
            object.__setattr__(self, name, _vec(getattr(self, name), name))
        T = self.p_min.size
        if any(getattr(self, k).size != T for k in ("p_max", "e_min", "e_max")):
            raise ModelError("battery vectors differ in length")
        if np.any(self.p_min > self.p_max):
            raise ModelError("p_min exceeds p_max")
        if np.any(self.e_min > self.e_max):
            raise ModelError("e_min exceeds e_max")
        if not 0.0 < self.sigma <= 1.0:
            raise ModelError(f"sigma must lie in (0, 1], got {self.sigma}")
        if not self.dt > 0.0:
            raise ModelError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "e0", float(self.e0))
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def T(self) -> int:
        return self.p_min.size

    def energy_rows(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(G, lo, hi)`` such that the energy limits read ``lo <= G p <= hi``."""
        U1, U2 = upsilon(self.sigma, self.T)
        return U1 * self.dt, self.e_min - self.e0 * U2, self.e_max - self.e0 * U2

    def lp(self, lam) -> LpProblem:
        G, lo, hi = self.energy_rows()
        T = self.T
        return LpProblem(np.asarray(lam, dtype=float), np.vstack([G, G]),
                         (">=",) * T + ("<=",) * T, np.concatenate([lo, hi]),
                         self.p_min, self.p_max)


@dataclass(frozen=True, eq=False)
class TdLoadParams:
    p_min: np.ndarray
    p_max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p_min", _vec(self.p_min, "p_min"))
        object.__setattr__(self, "p_max", _vec(self.p_max, "p_max"))
        if self.p_min.size != self.p_max.size:
            raise ModelError("p_min and p_max differ in length")
        if np.any(self.p_min > self.p_max):
            raise ModelError("p_min exceeds p_max")

    @property
    def T(self) -> int:
        return self.p_min.size


@dataclass(frozen=True, eq=False)
class FixedLoadParams:
    profile: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "profile", _vec(self.profile, "profile"))

    @property
    def T(self) -> int:
        return self.profile.size


@dataclass(frozen=True, eq=False)
class FlexModel:
    T: int
    batteries: tuple = ()
    td_loads: tuple = ()
    fixed_loads: tuple = ()
    dt: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "batteries", tuple(self.batteries))
        object.__setattr__(self, "td_loads", tuple(self.td_loads))
        object.__setattr__(self, "fixed_loads", tuple(self.fixed_loads))
        if int(self.T) != self.T or self.T < 1:
            raise ModelError(f"T must be a positive integer, got {self.T}")
        object.__setattr__(self, "T", int(self.T))
        for name, comp in self.components():
            if comp.T != self.T:
                raise ModelError(f"length {comp.T} differs from T={self.T}", name)

    def components(self):
        """``(label, params)`` pairs in canonical order: batteries, td loads, fixed loads."""
        out = [(f"batteries[{i}]", b) for i, b in enumerate(self.batteries)]
        out += [(f"td_loads[{i}]", t) for i, t in enumerate(self.td_loads)]
        out += [(f"fixed_loads[{i}]", f) for i, f in enumerate(self.fixed_loads)]
        return out

    @property
    def fixed_total(self) -> np.ndarray:
        total = np.zeros(self.T)
        for f in self.fixed_loads:
            total = total + f.profile
        return total

    @property
    def n_adjustable(self) -> int:
        return len(self.batteries) + len(self.td_loads)

    # -- serialisation ------------------------------------------------------

    def to_json(self) -> dict:
        def arr(v):
            return [float(x) for x in v]

        bats = []
        for b in self.batteries:
            entry = {"p_min": arr(b.p_min), "p_max": arr(b.p_max), "e_min": arr(b.e_min),
                     "e_max": arr(b.e_max), "e0": b.e0, "sigma": b.sigma}
            if b.dt != self.dt:
                entry["dt"] = b.dt
            bats.append(entry)
        return {
            "schema_version": SCHEMA_VERSION,
            "T": self.T,
            "dt": self.dt,
            "batteries": bats,
            "td_loads": [{"p_min": arr(t.p_min), "p_max": arr(t.p_max)} for t in self.td_loads],
            "fixed_loads": [{"profile": arr(f.profile)} for f in self.fixed_loads],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "FlexModel":
        if not isinstance(doc, dict):
            raise ModelError("model document must be a JSON object")
        if "T" not in doc:
            raise ModelError("missing field", "T")
        dt = float(doc.get("dt", 1.0))

        def build(kind, make, keys):
            items = doc.get(kind, [])
            if not isinstance(items, list):
                raise ModelError("expected a list", kind)
            out = []
            for i, item in enumerate(items):
                where = f"{kind}[{i}]"
                if not isinstance(item, dict):
                    raise ModelError("expected an object", where)
                missing = [k for k in keys if k not in item]
                if missing:
                    raise ModelError("missing field", f"{where}.{missing[0]}")
                try:
                    out.append(make(item))
                except ModelError as exc:
                    raise ModelError(str(exc), where) from None
                except (TypeError, ValueError) as exc:
                    raise ModelError(f"bad value ({exc})", where) from None
            return out

        bats = build("batteries", lambda d: BatteryParams(
            d["p_min"], d["p_max"], d["e_min"], d["e_max"], d["e0"], d["sigma"],
            d.get("dt", dt)), ("p_min", "p_max", "e_min", "e_max", "e0", "sigma"))
        tds = build("td_loads", lambda d: TdLoadParams(d["p_min"], d["p_max"]),
                    ("p_min", "p_max"))
        fixed = build("fixed_loads", lambda d: FixedLoadParams(d["profile"]), ("profile",))
        return cls(doc["T"], bats, tds, fixed, dt)

    @classmethod
    def load(cls, path) -> "FlexModel":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ModelError(f"invalid JSON ({exc})", str(path)) from None
        return cls.from_json(doc)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# region assembly


@dataclass(frozen=True, eq=False)
class Region:
    """Lifted region over stacked adjustable powers plus the aggregation map.

    Aggregate power is ``agg @ x + offset``. ``labels[i]`` names the component
    and constraint kind behind row ``i`` of ``H``.
    """

    H: HPolyhedron
    agg: np.ndarray
    offset: np.ndarray
    labels: tuple
    blocks: tuple = field(default=())


def assemble_region(m: FlexModel) -> Region:
    T = m.T
    n = T * m.n_adjustable
    rows, rhs, labels, blocks = [], [], [], []
    agg = np.zeros((T, n))
    col = 0
    for i, b in enumerate(m.batteries):
        sl = slice(col, col + T)
        blocks.append(sl)
        G, lo, hi = b.energy_rows()
        for kind, coef, val in (("e_min", G, lo), ("e_max", -G, -hi),
                                ("p_min", np.eye(T), b.p_min), ("p_max", -np.eye(T), -b.p_max)):
            block = np.zeros((T, n))
            block[:, sl] = coef
            rows.append(block)
            rhs.append(val)
            labels += [(f"batteries[{i}]", kind)] * T
        agg[:, sl] = np.eye(T)
        col += T
    for i, t in enumerate(m.td_loads):
        sl = slice(col, col + T)
        blocks.append(sl)
        for kind, coef, val in (("p_min", np.eye(T), t.p_min), ("p_max", -np.eye(T), -t.p_max)):
            block = np.zeros((T, n))
            block[:, sl] = coef
            rows.append(block)
            rhs.append(val)
            labels += [(f"td_loads[{i}]", kind)] * T
        agg[:, sl] = np.eye(T)
        col += T
    A = np.vstack(rows) if rows else np.zeros((0, n))
    b = np.concatenate(rhs) if rhs else np.zeros(0)
    return Region(HPolyhedron(A.reshape(b.size, n), b), agg, m.fixed_total, tuple(labels), tuple(blocks))


# ---------------------------------------------------------------------------
# response oracle


@dataclass(frozen=True, eq=False)
class Response:
    p_star: np.ndarray
    objective: float
    unique: bool
    components: tuple = ()


def _face_is_point(p: LpProblem, sol: LpSolution) -> bool:
    """Sufficient test: constraints carrying nonzero multipliers pin every variable."""
    n = p.n
    normals = [p.A[i] for i in range(p.m) if abs(sol.duals[i]) > 1e-9]
    normals += [np.eye(n)[j] for j in range(n)
                if abs(sol.reduced_costs[j]) > 1e-9 or p.lower[j] == p.upper[j]]
    return bool(normals) and np.linalg.matrix_rank(np.array(normals), tol=1e-9) == n


def _lex_refine(p: LpProblem, sol: LpSolution) -> tuple[np.ndarray, bool]:
    """Lexicographically smallest point of the optimal face and whether the face is a point.

    The face is cut out exactly by complementary slackness with the dual at
    hand: rows with a nonzero multiplier become equalities and variables with
    a nonzero reduced cost are fixed at the bound they sit on.
    """
    if _face_is_point(p, sol):
        return sol.x, True
    n = p.n
    senses = list(p.senses)
    for i in range(p.m):
        if abs(sol.duals[i]) > 1e-9:
            senses[i] = "="
    lower, upper = p.lower.copy(), p.upper.copy()
    for j in range(n):
        if abs(sol.reduced_costs[j]) > 1e-9:
            at_lower = abs(sol.x[j] - p.lower[j]) <= abs(sol.x[j] - p.upper[j])
            lower[j] = upper[j] = p.lower[j] if at_lower else p.upper[j]
    senses = tuple(senses)
    x = sol.x
    unique = True
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        lo = solve_lp(LpProblem(e, p.A, senses, p.b, lower, upper, "min"))
        hi = solve_lp(LpProblem(e, p.A, senses, p.b, lower, upper, "max"))
        if not (lo.optimal and hi.optimal):
            break
        if hi.objective - lo.objective > 1e-9:
            unique = False
        lower[j] = upper[j] = lo.objective
        x = lo.x
    return x, unique


def _respond_battery(b: BatteryParams, lam: np.ndarray) -> tuple[np.ndarray, bool]:
    p = b.lp(lam)
    sol = solve_lp(p)
    if not sol.optimal:
        raise ModelError("energy and power limits are inconsistent")
    return _lex_refine(p, sol)


def _respond_box(lo: np.ndarray, hi: np.ndarray, lam: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.where(lam < 0, hi, lo)
    unique = bool(np.all((lam != 0) | (lo == hi)))
    return x, unique


def respond(m: FlexModel, lam) -> Response:
    """Cost-minimising aggregate power; lexicographically smallest on ties."""
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.size != m.T:
        raise ModelError(f"price vector of length {lam.size} for T={m.T}")
    parts, unique = [], True
    for i, b in enumerate(m.batteries):
        try:
            x, u = _respond_battery(b, lam)
        except ModelError as exc:
            raise ModelError(str(exc), f"batteries[{i}]") from None
        parts.append(x)
        unique &= u
    for t in m.td_loads:
        x, u = _respond_box(t.p_min, t.p_max, lam)
        parts.append(x)
        unique &= u
    total = m.fixed_total.copy()
    for x in parts:
        total = total + x
    return Response(total, float(lam @ total), bool(unique), tuple(parts))


def support_decomposition(m: FlexModel, lam) -> list[tuple[str, float]]:
    """Per-component minima of lam^T P; they add up to the response objective."""
    lam = np.asarray(lam, dtype=float).reshape(-1)
    out = []
    for i, b in enumerate(m.batteries):
        sol = solve_lp(b.lp(lam))
        if not sol.optimal:
            raise ModelError("energy and power limits are inconsistent", f"batteries[{i}]")
        out.append((f"batteries[{i}]", sol.objective))
    for i, t in enumerate(m.td_loads):
        out.append((f"td_loads[{i}]", float(np.sum(np.minimum(lam * t.p_min, lam * t.p_max)))))
    for i, f in enumerate(m.fixed_loads):
        out.append((f"fixed_loads[{i}]", float(lam @ f.profile)))
    return out


def validate(m: FlexModel) -> None:
    """Raise :class:`ModelError` naming the first empty component; bounded by construction."""
    for i, b in enumerate(m.batteries):
        sol = solve_lp(b.lp(np.zeros(m.T)))
        if not sol.optimal:
            raise ModelError("energy limits cannot be met within the power limits",
                             f"batteries[{i}]")
    if m.n_adjustable == 0 and not m.fixed_loads:
        raise ModelError("model has no components")
    if m.T == 2 and m.n_adjustable:
        # every variable carries finite box bounds, so the lifted set is bounded;
        # double-check the aggregate projection through its coordinate extremes
        for lam in ((1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)):
            if not np.isfinite(respond(m, lam).objective):
                raise ModelError("aggregate region is unbounded")


# ---------------------------------------------------------------------------
# planar geometry of the aggregate region


def component_polygon(params) -> np.ndarray:
    """Vertices of one component's feasible set in R^2."""
    if isinstance(params, FixedLoadParams):
        return params.profile.reshape(1, 2)
    if isinstance(params, TdLoadParams):
        lo, hi = params.p_min, params.p_max
        return convex_hull_2d([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]]).vertices
    G, lo, hi = params.energy_rows()
    H = HPolyhedron(np.vstack([G, -G, np.eye(2), -np.eye(2)]),
                    np.concatenate([lo, -hi, params.p_min, -params.p_max]))
    return vertex_enumerate_2d(H)


def minkowski_sum_2d(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    sums = (P[:, None, :] + Q[None, :, :]).reshape(-1, 2)
    return convex_hull_2d(sums).vertices


def aggregate_polygon(m: FlexModel) -> VPolytope:
    """Aggregate feasible region of a T = 2 model as a counterclockwise polygon."""
    if m.T != 2:
        raise ModelError("aggregate polygon requires T = 2")
    acc = np.zeros((1, 2))
    for _, comp in m.components():
        acc = minkowski_sum_2d(acc, component_polygon(comp))
    return VPolytope(acc)


def contains_point(m: FlexModel, P, tol: float = FEAS_TOL) -> bool:
    """Whether aggregate power P is achievable by the model (lifted feasibility LP)."""
    P = np.asarray(P, dtype=float).reshape(-1)
    R = assemble_region(m)
    n = R.agg.shape[1]
    # P = agg x + offset, relaxed by slacks s+/- whose sum must vanish
    T = m.T
    c = np.concatenate([np.zeros(n), np.ones(2 * T)])
    A = np.vstack([
        np.hstack([R.H.A, np.zeros((R.H.n_rows, 2 * T))]),
        np.hstack([R.agg, np.eye(T), -np.eye(T)]),
    ])
    senses = (">=",) * R.H.n_rows + ("=",) * T
    b = np.concatenate([R.H.b, P - R.offset])
    lower = np.concatenate([np.full(n, -np.inf), np.zeros(2 * T)])
    sol = solve_lp(LpProblem(c, A, senses, b, lower, np.inf))
    return bool(sol.optimal and sol.objective <= tol * max(1.0, float(np.max(np.abs(P)))))
