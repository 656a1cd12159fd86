"""H- and V-representations, 2-D hulls and vertex enumeration, containment checks.

Convention throughout: an :class:`HPolyhedron` is ``{P | A P >= b}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .solver import (
    FEAS_TOL, InputError, LpProblem, MilpProblem, ResourceLimit, SolverError,
    solve_lp, solve_milp,
)

HULL_TOL = 1e-9
MEMBER_TOL = 1e-7
DIST_TOL = 1e-6


class GeometryError(SolverError):
    """Base class for geometric failures."""


class EmptySetError(GeometryError):
    """The H-polyhedron has no points."""


class UnboundedError(GeometryError):
    """The H-polyhedron is unbounded; ``directions`` spans part of its recession cone."""

    def __init__(self, message: str, directions: np.ndarray):
        super().__init__(message)
        self.directions = directions


@dataclass(frozen=True, eq=False)
class HPolyhedron:
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape[0] != b.size:
            raise InputError(f"A has {A.shape[0]} rows but b has {b.size} entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def n_rows(self) -> int:
        return self.b.size

    def slack(self, P) -> np.ndarray:
        return self.A @ np.asarray(P, dtype=float) - self.b

    def contains(self, P, tol: float = FEAS_TOL) -> bool:
        return bool(np.all(self.slack(P) >= -tol))

    def intersect(self, other: "HPolyhedron") -> "HPolyhedron":
        return HPolyhedron(np.vstack([self.A, other.A]), np.concatenate([self.b, other.b]))

    @classmethod
    def box(cls, lower, upper) -> "HPolyhedron":
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        eye = np.eye(lower.size)
        return cls(np.vstack([eye, -eye]), np.concatenate([lower, -upper]))

    @classmethod
    def from_vpolytope_2d(cls, V: "VPolytope") -> "HPolyhedron":
        """Facet description of a planar polytope (points and segments included)."""
        hull = convex_hull_2d(V.vertices).vertices
        if len(hull) == 1:
            return cls.box(hull[0], hull[0])
        rows, rhs = [], []
        if len(hull) == 2:
            a, c = hull
            e = c - a
            n = np.array([-e[1], e[0]])
            rows += [n, -n, e, -e]
            rhs += [n @ a, -(n @ a), e @ a, -(e @ c)]
        else:
            for i, a in enumerate(hull):
                e = hull[(i + 1) % len(hull)] - a
                n = np.array([-e[1], e[0]])  # inward for CCW order
                rows.append(n)
                rhs.append(n @ a)
        return cls(np.array(rows), np.array(rhs))


@dataclass(frozen=True, eq=False)
class VPolytope:
    vertices: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=float)
        if V.ndim == 1:
            V = V.reshape(1, -1)
        if V.ndim != 2 or V.shape[0] < 1:
            raise InputError("a V-polytope needs at least one vertex")
        object.__setattr__(self, "vertices", V)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def __len__(self) -> int:
        return self.vertices.shape[0]


@dataclass(frozen=True)
class ContainmentVerdict:
    contained: bool
    witness: np.ndarray | None
    method: str
    unbounded: bool = False

    def to_json(self) -> dict:
        return {
            "contained": self.contained,
            "method": self.method,
            "unbounded": self.unbounded,
            "witness": None if self.witness is None else [float(v) for v in self.witness],
        }


# ---------------------------------------------------------------------------
# hulls


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull_2d(points) -> VPolytope:
    """Andrew's monotone chain.

    Vertices come back counterclockwise starting from the lexicographically
    smallest point; duplicates, interior points and points in the middle of an
    edge (|cross| <= 1e-9, scaled by the data magnitude) are dropped.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InputError("convex_hull_2d expects 2-D points")
    if pts.shape[0] == 0:
        raise InputError("convex_hull_2d needs at least one point")
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    scale = max(1.0, float(np.max(np.abs(pts))))
    tol = HULL_TOL * scale * scale
    uniq = [pts[0]]
    for p in pts[1:]:
        if np.max(np.abs(p - uniq[-1])) > HULL_TOL * scale:
            uniq.append(p)
    if len(uniq) <= 2:
        return VPolytope(np.array(uniq))

    def chain(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and _cross(out[-2], out[-1], p) <= tol:
                out.pop()
            out.append(p)
        return out

    lower = chain(uniq)
    upper = chain(reversed(uniq))
    hull = lower[:-1] + upper[:-1]
    return VPolytope(np.array(hull))


def polygon_area(vertices) -> float:
    """Shoelace area of an ordered vertex list (0 for points and segments)."""
    V = np.asarray(vertices, dtype=float)
    if len(V) < 3:
        return 0.0
    x, y = V[:, 0], V[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def extreme_points(points) -> np.ndarray:
    """Rows of ``points`` that are not convex combinations of the others (any dimension)."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if pts.shape[1] == 2:
        return convex_hull_2d(pts).vertices
    keep = []
    for i in range(len(pts)):
        others = np.delete(pts, i, axis=0)
        if len(others) == 0 or not vpolytope_membership(pts[i], VPolytope(others))[0]:
            keep.append(i)
    return pts[keep]


# ---------------------------------------------------------------------------
# membership and distances


def hull_residual(P, V: VPolytope) -> tuple[float, np.ndarray]:
    """Smallest l1 residual ``||Gamma a - P||_1`` over weights ``a`` in the simplex."""
    P = np.asarray(P, dtype=float).reshape(-1)
    if P.size != V.dim:
        raise InputError(f"point of dimension {P.size} against a {V.dim}-dimensional polytope")
    G = V.vertices.T
    d, nv = G.shape
    # variables: a (nv), s+ (d), s- (d)
    c = np.concatenate([np.zeros(nv), np.ones(2 * d)])
    A = np.vstack([
        np.hstack([G, np.eye(d), -np.eye(d)]),
        np.concatenate([np.ones(nv), np.zeros(2 * d)])[None, :],
    ])
    b = np.concatenate([P, [1.0]])
    sol = solve_lp(LpProblem(c, A, ("=",) * (d + 1), b, 0.0, np.inf))
    alpha = np.clip(sol.x[:nv], 0.0, 1.0)
    return sol.objective, alpha


def vpolytope_membership(P, V: VPolytope, tol: float = MEMBER_TOL):
    """``(True, weights)`` when P is a convex combination of the vertices, else ``(False, None)``."""
    residual, alpha = hull_residual(P, V)
    if residual <= tol * max(1.0, float(np.max(np.abs(P)))):
        return True, alpha
    return False, None


def _segment_distance(P, a, c) -> float:
    e = c - a
    ee = float(e @ e)
    t = 0.0 if ee == 0.0 else min(1.0, max(0.0, float((P - a) @ e) / ee))
    return float(np.linalg.norm(P - (a + t * e)))


def distance_to_polygon(P, V: VPolytope) -> float:
    """Euclidean distance from P to a planar polytope (0 inside)."""
    P = np.asarray(P, dtype=float)
    hull = convex_hull_2d(V.vertices).vertices
    if len(hull) == 1:
        return float(np.linalg.norm(P - hull[0]))
    if len(hull) >= 3:
        inside = all(_cross(hull[i], hull[(i + 1) % len(hull)], P) >= -HULL_TOL
                     for i in range(len(hull)))
        if inside:
            return 0.0
    k = len(hull) if len(hull) >= 3 else 1
    return min(_segment_distance(P, hull[i], hull[(i + 1) % len(hull)]) for i in range(k))


# ---------------------------------------------------------------------------
# H-side queries


def _lp_over(H: HPolyhedron, cost, sense="min") -> LpProblem:
    return LpProblem(np.asarray(cost, dtype=float), H.A, (">=",) * H.n_rows, H.b,
                     -np.inf, np.inf, sense)


def feasible_point(H: HPolyhedron) -> np.ndarray:
    sol = solve_lp(_lp_over(H, np.zeros(H.dim)))
    if not sol.optimal:
        raise EmptySetError("H-polyhedron is empty")
    return sol.x


def coordinate_range(H: HPolyhedron) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate min and max over H (infinite when unbounded in that direction)."""
    feasible_point(H)
    lo = np.empty(H.dim)
    hi = np.empty(H.dim)
    for i in range(H.dim):
        e = np.zeros(H.dim)
        e[i] = 1.0
        s = solve_lp(_lp_over(H, e, "min"))
        lo[i] = s.objective if s.optimal else -np.inf
        s = solve_lp(_lp_over(H, e, "max"))
        hi[i] = s.objective if s.optimal else np.inf
    return lo, hi


def is_bounded(H: HPolyhedron) -> bool:
    """True iff every coordinate is bounded above and below on the (nonempty) set."""
    lo, hi = coordinate_range(H)
    return bool(np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)))


def recession_directions(H: HPolyhedron) -> np.ndarray:
    """Nonzero ``y`` with ``A y >= 0`` found by maximising +-y_i over the unit box.

    Returns an array of shape (k, d); k = 0 means the recession cone is {0}.
    """
    d = H.dim
    found = []
    for i in range(d):
        for sgn in (1.0, -1.0):
            c = np.zeros(d)
            c[i] = sgn
            p = LpProblem(c, H.A, (">=",) * H.n_rows, np.zeros(H.n_rows), -1.0, 1.0, "max")
            s = solve_lp(p)
            if s.optimal and s.objective > 1e-9:
                y = s.x / np.linalg.norm(s.x)
                if not any(np.allclose(y, f, atol=1e-9) for f in found):
                    found.append(y)
    return np.array(found).reshape(-1, d)


def support_value(S, lam) -> float:
    """min over S of lam^T P; ``-inf`` when an H-polyhedron is unbounded below."""
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if isinstance(S, VPolytope):
        if lam.size != S.dim:
            raise InputError("direction dimension mismatch")
        return float(np.min(S.vertices @ lam))
    if lam.size != S.dim:
        raise InputError("direction dimension mismatch")
    sol = solve_lp(_lp_over(S, lam))
    if sol.status == "infeasible":
        raise EmptySetError("support value of an empty H-polyhedron")
    if sol.status == "unbounded":
        return -math.inf
    return sol.objective


def vertex_enumerate_2d(H: HPolyhedron) -> np.ndarray:
    """All vertices of a bounded planar H-polyhedron, counterclockwise."""
    if H.dim != 2:
        raise InputError("vertex enumeration is implemented for d = 2 only; use robust_milp")
    if not is_bounded(H):
        raise UnboundedError("H-polyhedron is unbounded; intersect with a clip box first",
                             recession_directions(H))
    norms = np.linalg.norm(H.A, axis=1)
    live = norms > 0
    A = H.A[live] / norms[live, None]
    b = H.b[live] / norms[live]
    i, j = np.triu_indices(len(b), k=1)
    det = A[i, 0] * A[j, 1] - A[i, 1] * A[j, 0]
    ok = np.abs(det) > 1e-12
    i, j, det = i[ok], j[ok], det[ok]
    x = (b[i] * A[j, 1] - b[j] * A[i, 1]) / det
    y = (A[i, 0] * b[j] - A[j, 0] * b[i]) / det
    pts = np.column_stack([x, y])
    if len(pts):
        feas = np.all(pts @ A.T - b >= -MEMBER_TOL * np.maximum(1.0, np.abs(b)), axis=1)
        pts = pts[feas]
    if len(pts) == 0:
        # a bounded nonempty set without two independent active rows is a point
        return feasible_point(H).reshape(1, 2)
    # dedupe within the membership tolerance before ordering
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    uniq = [pts[0]]
    for p in pts[1:]:
        if all(np.max(np.abs(p - u)) > MEMBER_TOL for u in uniq[-8:]):
            uniq.append(p)
    return convex_hull_2d(np.array(uniq)).vertices


# ---------------------------------------------------------------------------
# containment H in V


def _unbounded_verdict(H: HPolyhedron, V: VPolytope, method: str) -> ContainmentVerdict:
    dirs = recession_directions(H)
    x0 = feasible_point(H)
    y = dirs[0]
    reach = float(np.max(np.linalg.norm(V.vertices - x0, axis=1)))
    witness = x0 + (2.0 * reach + 1.0) * y
    return ContainmentVerdict(False, witness, method, unbounded=True)


def contains_h_in_v(H: HPolyhedron, V: VPolytope, method: str = "vertex_enum",
                    max_nodes: int = 200_000, heuristic: bool = True) -> ContainmentVerdict:
    """Decide ``H subset of conv(V)``.

    ``vertex_enum`` (d = 2) checks every vertex of H for hull membership.
    ``robust_milp`` maximises the distance from P in H to its Euclidean
    projection onto conv(V), with the projection written through its KKT
    conditions and the complementarity linearised by binaries. ``heuristic``
    seeds the search with projections of a few LP extremes of H.
    """
    if H.dim != V.dim:
        raise InputError("H and V live in different dimensions")
    if method not in ("vertex_enum", "robust_milp"):
        raise InputError(f"unknown containment method {method!r}")
    try:
        bounded = is_bounded(H)
    except EmptySetError:
        return ContainmentVerdict(True, None, method)
    if not bounded:
        return _unbounded_verdict(H, V, method)
    if method == "vertex_enum":
        for v in vertex_enumerate_2d(H):
            if not vpolytope_membership(v, V)[0]:
                return ContainmentVerdict(False, v, method)
        return ContainmentVerdict(True, None, method)
    return _robust_containment(H, V, max_nodes, heuristic)


def _projection_2d(P, G) -> tuple[np.ndarray, float, np.ndarray]:
    """Exact Euclidean projection of P onto conv of the rows of G (planar).

    Returns weights, multiplier mu and the multipliers nu of the KKT system
    2 G (G^T a - P) + mu 1 - nu = 0.
    """
    nv = len(G)
    best = None
    cands = [(i,) for i in range(nv)] + [(i, j) for i in range(nv) for j in range(i + 1, nv)]
    inside, alpha_in = vpolytope_membership(P, VPolytope(G), tol=1e-12)
    if inside:
        return alpha_in, 0.0, np.zeros(nv)
    for S in cands:
        a = np.zeros(nv)
        if len(S) == 1:
            a[S[0]] = 1.0
        else:
            u, w = G[S[0]], G[S[1]]
            e = w - u
            ee = float(e @ e)
            if ee == 0.0:
                continue
            t = float((P - u) @ e) / ee
            if not 0.0 < t < 1.0:
                continue
            a[S[0]], a[S[1]] = 1.0 - t, t
        r = G.T @ a - P
        dist = float(r @ r)
        if best is None or dist < best[0] - 1e-15:
            best = (dist, a)
    a = best[1]
    r = G.T @ a - P
    g = 2.0 * (G @ r)
    S = a > 0
    mu = -float(np.mean(g[S]))
    nu = np.maximum(g + mu, 0.0)
    nu[S] = 0.0
    return a, mu, nu


def _robust_containment(H: HPolyhedron, V: VPolytope, max_nodes: int,
                        heuristic: bool) -> ContainmentVerdict:
    d = H.dim
    G = extreme_points(V.vertices)
    lo, hi = coordinate_range(H)
    # work in coordinates centred on the hull centroid
    centre = G.mean(axis=0)
    Gc = G - centre
    lo_c, hi_c = lo - centre, hi - centre
    bc = H.b - H.A @ centre
    corner = np.maximum(np.abs(lo_c), np.abs(hi_c))
    r_g = float(np.max(np.linalg.norm(Gc, axis=1)))
    r_p = float(np.linalg.norm(corner))
    reach = r_g + r_p
    # |nu_i| = 2 |(g_i - g_k)^T r| <= 2 * (2 r_g) * reach, mu likewise bounded
    big_nu = 2.0 * (1.0 + 4.0 * r_g * reach)
    big_t = 2.0 * (1.0 + reach)

    for _ in range(4):
        p, idx = _robust_milp(H, Gc, bc, lo_c, hi_c, big_nu, big_t)
        bins = idx["z"] + idx["w"]
        incumbent = None
        if heuristic and d == 2:
            incumbent = _robust_incumbent(H, Gc, centre, idx, p.n, big_nu)
        try:
            sol = solve_milp(MilpProblem(p, bins), incumbent=incumbent, max_nodes=max_nodes,
                             cutoff=DIST_TOL, target=DIST_TOL)
        except ResourceLimit as exc:
            inc = exc.incumbent
            if inc is not None and inc.objective > DIST_TOL:
                sol = inc
            else:
                raise
        if sol.x is None or sol.objective <= DIST_TOL:
            return ContainmentVerdict(True, None, "robust_milp")
        x = sol.x
        nu = x[idx["nu"]]
        if np.max(nu, initial=0.0) >= big_nu * (1 - 1e-9) or abs(x[idx["mu"]]) >= big_nu * (1 - 1e-9):
            big_nu *= 2.0
            continue
        witness = x[idx["P"]] + centre
        return ContainmentVerdict(False, witness, "robust_milp")
    raise GeometryError("big-M audit failed to settle after 3 escalations")


def _robust_milp(H, Gc, bc, lo_c, hi_c, big_nu, big_t):
    d, nv = Gc.shape[1], Gc.shape[0]
    names = {}
    k = 0
    for name, size in (("P", d), ("alpha", nv), ("mu", 1), ("nu", nv), ("t", 1),
                       ("z", nv), ("w", 2 * d)):
        names[name] = list(range(k, k + size))
        k += size
    n = k
    lower = np.zeros(n)
    upper = np.full(n, np.inf)
    lower[names["P"]] = lo_c
    upper[names["P"]] = hi_c
    upper[names["alpha"]] = 1.0
    lower[names["mu"]] = -big_nu
    upper[names["mu"]] = big_nu
    upper[names["nu"]] = big_nu
    upper[names["t"]] = big_t
    upper[names["z"]] = 1.0
    upper[names["w"]] = 1.0

    rows, senses, rhs = [], [], []

    def row(entries, sense, value):
        r = np.zeros(n)
        for j, v in entries:
            r[j] += v
        rows.append(r)
        senses.append(sense)
        rhs.append(value)

    P, al, nu, z, w = names["P"], names["alpha"], names["nu"], names["z"], names["w"]
    mu, t = names["mu"][0], names["t"][0]
    for i in range(H.n_rows):
        row([(P[j], H.A[i, j]) for j in range(d)], ">=", bc[i])
    row([(a, 1.0) for a in al], "=", 1.0)
    Q = 2.0 * Gc @ Gc.T
    for i in range(nv):
        # 2 g_i^T (G^T alpha - P) + mu - nu_i = 0
        ent = [(al[k], Q[i, k]) for k in range(nv)]
        ent += [(P[j], -2.0 * Gc[i, j]) for j in range(d)]
        ent += [(mu, 1.0), (nu[i], -1.0)]
        row(ent, "=", 0.0)
        row([(al[i], 1.0), (z[i], -1.0)], "<=", 0.0)
        row([(nu[i], 1.0), (z[i], big_nu)], "<=", big_nu)
    # at most d + 1 vertices carry weight in a projection
    row([(zi, 1.0) for zi in z], "<=", d + 1)
    row([(zi, 1.0) for zi in z], ">=", 1)
    # t <= s (P_j - (G^T alpha)_j) + M (1 - w_js)
    for j in range(d):
        for s_idx, s in enumerate((1.0, -1.0)):
            wj = w[2 * j + s_idx]
            ent = [(t, 1.0), (P[j], -s), (wj, big_t)]
            ent += [(al[k], s * Gc[k, j]) for k in range(nv)]
            row(ent, "<=", big_t)
    row([(wj, 1.0) for wj in w], "=", 1.0)
    c = np.zeros(n)
    c[t] = 1.0
    p = LpProblem(c, np.array(rows), tuple(senses), np.array(rhs), lower, upper, "max")
    return p, names


def _robust_incumbent(H, Gc, centre, idx, n, big_nu):
    """Feasible MILP point built from a few LP extremes of H and their exact projections."""
    d = H.dim
    dirs = [s * e for e in np.eye(d) for s in (1.0, -1.0)]
    dirs += [np.array(sg) for sg in ((1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0))]
    best = None
    for u in dirs:
        sol = solve_lp(_lp_over(H, u, "max"))
        if not sol.optimal:
            continue
        P = sol.x - centre
        a, mu, nu = _projection_2d(P, Gc)
        r = P - Gc.T @ a
        t = float(np.max(np.abs(r)))
        if best is None or t > best[0]:
            best = (t, P, a, mu, nu, r)
    if best is None:
        return None
    t, P, a, mu, nu, r = best
    if abs(mu) >= big_nu or np.max(nu, initial=0.0) >= big_nu or np.sum(a > 0) > d + 1:
        return None
    x = np.zeros(n)
    x[idx["P"]] = P
    x[idx["alpha"]] = a
    x[idx["mu"][0]] = mu
    x[idx["nu"]] = nu
    x[idx["t"][0]] = t
    x[idx["z"]] = (a > 0).astype(float)
    j = int(np.argmax(np.abs(r)))
    x[idx["w"][2 * j + (0 if r[j] >= 0 else 1)]] = 1.0
    return x
