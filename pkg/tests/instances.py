"""Seeded instance generators and brute-force oracles shared by the tests."""
import itertools

import numpy as np

from pflid.solver import LpProblem, MilpProblem, solve_lp


def random_lp(rng: np.random.Generator) -> LpProblem:
    """Bounded LP with n <= 6 variables and m <= 12 rows, feasible in most draws."""
    n = int(rng.integers(1, 7))
    m = int(rng.integers(0, 13))
    x0 = rng.uniform(-1, 1, n)
    A = rng.normal(size=(m, n))
    senses = tuple(rng.choice(["<=", ">=", "="], p=[0.45, 0.45, 0.1]) for _ in range(m))
    shift = rng.uniform(-0.3, 1.0, m)
    b = np.array([A[i] @ x0 + (shift[i] if s == "<=" else -shift[i] if s == ">=" else 0.0)
                  for i, s in enumerate(senses)])
    lo = -rng.uniform(0.5, 3, n)
    hi = rng.uniform(0.5, 3, n)
    sense = str(rng.choice(["min", "max"]))
    return LpProblem(rng.normal(size=n), A, senses, b, lo, hi, sense)


def random_milp(rng: np.random.Generator) -> MilpProblem:
    nb = int(rng.integers(1, 11))
    nc = int(rng.integers(0, 4))
    n = nb + nc
    m = int(rng.integers(1, 12))
    x0 = np.concatenate([rng.integers(0, 2, nb), rng.uniform(-1, 1, nc)])
    A = rng.normal(size=(m, n))
    senses = tuple(rng.choice(["<=", ">="], size=m))
    slack = rng.uniform(-0.2, 1, m)
    b = np.array([A[i] @ x0 + (slack[i] if s == "<=" else -slack[i]) for i, s in enumerate(senses)])
    lo = np.concatenate([np.zeros(nb), -2 * np.ones(nc)])
    hi = np.concatenate([np.ones(nb), 2 * np.ones(nc)])
    lp = LpProblem(rng.normal(size=n), A, senses, b, lo, hi, str(rng.choice(["min", "max"])))
    return MilpProblem(lp, tuple(range(nb)))


def milp_by_enumeration(p: MilpProblem):
    """Best objective over all binary assignments, each completed by solve_lp."""
    lp = p.lp
    best = None
    for bits in itertools.product([0.0, 1.0], repeat=len(p.binaries)):
        lo, hi = lp.lower.copy(), lp.upper.copy()
        lo[list(p.binaries)] = bits
        hi[list(p.binaries)] = bits
        s = solve_lp(lp.with_bounds(lo, hi))
        if not s.optimal:
            continue
        if best is None or (s.objective < best if lp.sense == "min" else s.objective > best):
            best = s.objective
    return best


def random_polygon(rng: np.random.Generator, n_vertices: int, radius: float = 1.0) -> np.ndarray:
    """Convex polygon with exactly ``n_vertices`` vertices on a jittered circle, CCW."""
    angles = np.sort(rng.uniform(0, 2 * np.pi, n_vertices))
    # keep angular gaps below pi so every point stays extreme
    while np.max(np.diff(np.concatenate([angles, [angles[0] + 2 * np.pi]]))) >= np.pi * 0.9:
        angles = np.sort(rng.uniform(0, 2 * np.pi, n_vertices))
    r = radius * rng.uniform(0.8, 1.2)
    centre = rng.uniform(-1, 1, 2)
    return centre + r * np.column_stack([np.cos(angles), np.sin(angles)])


def lex_min_response(V: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Minimiser of lam^T P over the vertices, lexicographically smallest on ties."""
    vals = V @ lam
    best = vals.min()
    tied = [tuple(V[i]) for i in range(len(V)) if vals[i] <= best + 1e-12]
    return np.array(min(tied))


def edge_normal_prices(V: np.ndarray) -> list:
    """Inward edge normals of a CCW polygon plus the bisector at each vertex."""
    n = len(V)
    normals = []
    for i in range(n):
        e = V[(i + 1) % n] - V[i]
        nrm = np.array([-e[1], e[0]])
        normals.append(nrm / np.linalg.norm(nrm))
    bisectors = [(normals[i] + normals[i - 1]) / 2 for i in range(n)]
    return normals + bisectors


def pi_instance(rng: np.random.Generator, contained: bool, k_range=(5, 41)):
    """(Lambda, responses, truth vertices) for a random polygonal PFL.

    With ``contained`` the prices include every edge normal and vertex bisector
    so that the observed hull and the optimality halfspaces describe the same set.
    """
    V = random_polygon(rng, int(rng.integers(3, 9)))
    lams = edge_normal_prices(V) if contained else []
    K = max(int(rng.integers(*k_range)), len(lams))
    while len(lams) < K:
        x = rng.normal(size=2)
        lams.append(x / np.linalg.norm(x))
    L = np.array(lams)
    R = np.array([lex_min_response(V, lam) for lam in L])
    return L, R, V


def random_flex_model(rng: np.random.Generator, n_vb: int, n_td: int = 1, T: int = 2,
                      with_fixed: bool = True):
    """Valid model whose batteries can always idle at zero power."""
    from pflid.flex_model import BatteryParams, FixedLoadParams, FlexModel, TdLoadParams, upsilon

    bats = []
    for _ in range(n_vb):
        sigma = float(rng.choice([1.0, 0.98, 0.95, 0.9]))
        e0 = float(rng.uniform(0, 0.5))
        idle = e0 * upsilon(sigma, T)[1]
        bats.append(BatteryParams(-rng.uniform(0.2, 1.2, T), rng.uniform(0.2, 1.2, T),
                                  idle - rng.uniform(0.2, 1.5, T), idle + rng.uniform(0.2, 1.5, T),
                                  e0, sigma))
    tds = []
    for _ in range(n_td):
        lo = rng.uniform(0, 0.5, T)
        tds.append(TdLoadParams(lo, lo + rng.uniform(0.1, 1.0, T)))
    fixed = [FixedLoadParams(rng.uniform(0.5, 2.0, T))] if with_fixed else []
    return FlexModel(T, bats, tds, fixed)
