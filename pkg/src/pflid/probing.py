"""Active probing: choose prices that settle the undetermined part of Pi.

A vertex of Pi outside the observed hull is probed with a price under which
it is the unique minimiser over Pi. The response either is the vertex itself,
which then joins the hull, or costs strictly more than the vertex, in which
case the new optimality halfspace removes it from Pi.

Planar (T = 2) only.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataset import Dataset
from .flex_model import FlexModel, respond
from .identifiability import build_geometry, delta_omega_empty
from .polyhedra import (
    GeometryError, InputError, UnboundedError, VPolytope, distance_to_polygon, is_bounded,
    polygon_area, recession_directions, vertex_enumerate_2d, vpolytope_membership,
)
from .solver import LpProblem, solve_lp

STRICT_TOL = 1e-8
CONFIRM_TOL = 1e-6
CUT_TOL = 1e-9
SCHEMA_VERSION = 1

Oracle = Callable[[np.ndarray], np.ndarray]


class ProbeError(GeometryError):
    """No valid probing price, or a response that neither confirms nor cuts."""


class ProbeOutcome(str, enum.Enum):
    VERTEX_CONFIRMED = "vertex_confirmed"
    VERTEX_CUT = "vertex_cut"


@dataclass(frozen=True, eq=False)
class ProbeTarget:
    vertex: np.ndarray
    neighbors: tuple
    distance: float = 0.0

    @property
    def deltas(self) -> list:
        return [n - self.vertex for n in self.neighbors]


def _pi_vertices(g) -> np.ndarray:
    if g.T != 2:
        raise InputError("probing is implemented for T = 2")
    if not is_bounded(g.pi):
        raise UnboundedError("Pi is unbounded; bound it with axis probes first",
                             recession_directions(g.pi))
    return vertex_enumerate_2d(g.pi)


def undetermined_vertices(g) -> list:
    """Vertices of Pi outside the hull, farthest first (ties in lexicographic order).

    Neighbours are the adjacent vertices along the boundary of Pi, so each
    shares exactly one facet with the target.
    """
    V = _pi_vertices(g)
    n = len(V)
    out = []
    for i, v in enumerate(V):
        if vpolytope_membership(v, g.conv)[0]:
            continue
        if n == 1:
            nbrs = ()
        elif n == 2:
            nbrs = (V[1 - i],)
        else:
            nbrs = (V[i - 1], V[(i + 1) % n])
        out.append(ProbeTarget(v.copy(), tuple(x.copy() for x in nbrs),
                               distance_to_polygon(v, g.conv)))
    out.sort(key=lambda t: (-round(t.distance, 12), tuple(t.vertex)))
    return out


def _margins(lam, deltas) -> np.ndarray:
    return np.array([lam @ (d / np.linalg.norm(d)) for d in deltas])


def design_probe(t: ProbeTarget, method: str = "chord") -> np.ndarray:
    """Unit price under which the target is the unique minimiser over Pi.

    ``chord`` uses the normal of the line through the two neighbours, which
    gives both neighbours the same margin; when the response cuts the target
    the new facet is parallel to that chord, so a true edge spanned by the
    neighbours is recovered in one probe. ``sum`` adds the unit deltas. Both
    fall back to the price maximising the smallest normalised margin.
    """
    deltas = [d for d in t.deltas if np.linalg.norm(d) > 0]
    if not deltas:
        raise ProbeError("target has no neighbours to separate it from")
    tries = []
    if method == "chord" and len(deltas) == 2:
        e = deltas[1] - deltas[0]
        nrm = np.array([-e[1], e[0]])
        if np.linalg.norm(nrm) > 0:
            tries.append(nrm if nrm @ deltas[0] > 0 else -nrm)
    elif method not in ("chord", "sum"):
        raise InputError(f"unknown probe design {method!r}")
    tries.append(np.sum([d / np.linalg.norm(d) for d in deltas], axis=0))
    for lam in tries:
        norm = np.linalg.norm(lam)
        if norm > 0:
            lam = lam / norm
            if np.min(_margins(lam, deltas)) > STRICT_TOL:
                return lam
    lam = _chebyshev_price(deltas)
    m = _margins(lam, deltas)
    if np.min(m) <= STRICT_TOL:
        worst = int(np.argmin(m))
        raise ProbeError(f"no price separates the target from neighbour {worst} "
                         f"at {t.neighbors[worst].tolist()}")
    return lam / np.linalg.norm(lam)


def _chebyshev_price(deltas) -> np.ndarray:
    """Maximise r subject to lam^T d_hat >= r for every unit delta, |lam_i| <= 1."""
    D = np.array([d / np.linalg.norm(d) for d in deltas])
    k, T = D.shape
    A = np.hstack([D, -np.ones((k, 1))])
    sol = solve_lp(LpProblem(np.r_[np.zeros(T), 1.0], A, (">=",) * k, np.zeros(k),
                             np.r_[-np.ones(T), -np.inf], np.r_[np.ones(T), np.inf], "max"))
    return sol.x[:T] if sol.optimal else np.zeros(T)


# ---------------------------------------------------------------------------
# oracles


def model_oracle(m: FlexModel) -> Oracle:
    return lambda lam: respond(m, lam).p_star


def vertex_oracle(V) -> Oracle:
    """Response of a polytope given by vertices: lexicographically smallest minimiser."""
    V = np.asarray(V.vertices if isinstance(V, VPolytope) else V, dtype=float)

    def oracle(lam):
        vals = V @ np.asarray(lam, dtype=float)
        best = vals.min()
        tied = sorted(tuple(V[i]) for i in range(len(V))
                      if vals[i] <= best + 1e-12 * max(1.0, abs(best)))
        return np.array(tied[0])

    return oracle


# ---------------------------------------------------------------------------
# probing steps


def probe_step(ds: Dataset, oracle: Oracle, t: ProbeTarget, lam=None):
    """Query the oracle at the probing price for ``t`` and append the pair.

    Returns ``(dataset, outcome, lam, response)``.
    """
    lam = design_probe(t) if lam is None else np.asarray(lam, dtype=float)
    margins = _margins(lam, t.deltas) if t.neighbors else np.array([np.inf])
    if np.min(margins) <= STRICT_TOL:
        raise ProbeError("probing price does not isolate the target")
    response = np.asarray(oracle(lam), dtype=float).reshape(-1)
    ds2 = ds.append(lam, response)
    if np.max(np.abs(response - t.vertex)) <= CONFIRM_TOL:
        return ds2, ProbeOutcome.VERTEX_CONFIRMED, lam, response
    if lam @ t.vertex < lam @ response - CUT_TOL:
        return ds2, ProbeOutcome.VERTEX_CUT, lam, response
    raise ProbeError("response neither reproduces the target nor costs more than it; "
                     "the oracle is inconsistent with the data")


@dataclass(frozen=True, eq=False)
class ProbeRun:
    dataset: Dataset
    status: str  # "identified" or "budget_exhausted"
    trace: list = field(default_factory=list)

    @property
    def probes(self) -> int:
        return len(self.trace)

    def to_json(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "status": self.status,
                "probes": self.probes, "trace": self.trace}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1) + "\n"


def _summary(g) -> dict:
    V = vertex_enumerate_2d(g.pi)
    return {"K": g.K, "conv_area": polygon_area(g.conv.vertices),
            "pi_area": polygon_area(V), "pi_vertices": len(V)}


def probe_until_identified(ds: Dataset, oracle: Oracle, budget: int = 50,
                           method: str = "chord") -> ProbeRun:
    """Probe the farthest undetermined vertex until Pi equals the hull.

    An unbounded Pi is first bounded by querying the axis prices +-e_i that
    are not yet in the data; these count against the budget.
    """
    if ds.T != 2:
        raise InputError("probing is implemented for T = 2")
    if budget < 0:
        raise InputError("budget must be nonnegative")
    trace = []
    g = build_geometry(ds)
    if not is_bounded(g.pi):
        for i in range(ds.T):
            for s in (1.0, -1.0):
                lam = np.zeros(ds.T)
                lam[i] = s
                if any(np.allclose(lam, row) for row in ds.lambdas):
                    continue
                if len(trace) >= budget:
                    return ProbeRun(ds, "budget_exhausted", trace)
                response = np.asarray(oracle(lam), dtype=float).reshape(-1)
                ds = ds.append(lam, response)
                trace.append({"kind": "bootstrap", "lambda": lam.tolist(),
                              "response": response.tolist()})
        g = build_geometry(ds)
        if not is_bounded(g.pi):
            raise UnboundedError("axis probes left Pi unbounded", recession_directions(g.pi))
    while True:
        if delta_omega_empty(g).contained:
            return ProbeRun(ds, "identified", trace)
        targets = undetermined_vertices(g)
        if not targets:
            raise ProbeError("containment check and vertex scan disagree")
        if len(trace) >= budget:
            return ProbeRun(ds, "budget_exhausted", trace)
        t = targets[0]
        lam = design_probe(t, method)
        ds, outcome, lam, response = probe_step(ds, oracle, t, lam)
        g = build_geometry(ds)
        in_conv = vpolytope_membership(t.vertex, g.conv)[0]
        in_pi = g.pi.contains(t.vertex, CUT_TOL * max(1.0, float(np.abs(g.Xi).max())))
        if not in_conv and in_pi:
            raise ProbeError("probe made no progress on its target")
        entry = {"kind": "probe", "target": t.vertex.tolist(),
                 "neighbors": [n.tolist() for n in t.neighbors], "lambda": lam.tolist(),
                 "response": response.tolist(), "outcome": outcome.value,
                 "margin": float(np.min(_margins(lam, t.deltas)))}
        entry.update(_summary(g))
        trace.append(entry)
