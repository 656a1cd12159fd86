"""Geometry of what a price/power dataset pins down.

For samples ``(lam_k, P_k)`` the observed hull ``conv`` is the smallest region
consistent with the data and ``pi = {P | Lambda P >= Xi}`` with
``Xi_k = lam_k^T P_k`` the largest: any region containing the hull and
contained in ``pi`` reproduces every observation. Points of ``pi`` outside the
hull are undetermined.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .flex_model import FlexModel, contains_point, respond
from .polyhedra import (
    ContainmentVerdict, GeometryError, HPolyhedron, InputError, VPolytope, contains_h_in_v,
    convex_hull_2d, extreme_points, is_bounded, polygon_area, support_value,
    vertex_enumerate_2d, vpolytope_membership,
)

CERT_TOL = 1e-7


class ConsistencyError(GeometryError):
    """Two containment methods disagreed."""


class RegionClass(str, enum.Enum):
    CONFIRMED_FEASIBLE = "confirmed_feasible"
    UNDETERMINED = "undetermined"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True, eq=False)
class IdentGeometry:
    Lambda: np.ndarray
    Xi: np.ndarray
    Gamma: np.ndarray
    pi: HPolyhedron
    conv: VPolytope

    @property
    def T(self) -> int:
        return self.Lambda.shape[1]

    @property
    def K(self) -> int:
        return self.Lambda.shape[0]


def build_geometry(ds: Dataset) -> IdentGeometry:
    if ds.K < 1:
        raise InputError("geometry needs at least one sample")
    Lam = np.array(ds.lambdas, dtype=float)
    Gam = np.array(ds.powers, dtype=float)
    Xi = np.einsum("kt,kt->k", Lam, Gam)
    if ds.T == 2:
        conv = convex_hull_2d(Gam)
    else:
        conv = VPolytope(extreme_points(Gam))
    return IdentGeometry(Lam, Xi, Gam, HPolyhedron(Lam, Xi), conv)


def delta_omega_empty(g: IdentGeometry, method: str = "vertex_enum") -> ContainmentVerdict:
    """Whether ``pi`` lies inside the observed hull (no undetermined points).

    ``method`` is ``vertex_enum``, ``robust_milp`` or ``both``; ``both`` runs
    the two checks and raises :class:`ConsistencyError` if they disagree.
    """
    if method == "both":
        a = contains_h_in_v(g.pi, g.conv, "vertex_enum")
        b = contains_h_in_v(g.pi, g.conv, "robust_milp")
        if a.contained != b.contained:
            raise ConsistencyError(
                f"vertex enumeration says {a.contained}, robust MILP says {b.contained}")
        return a
    return contains_h_in_v(g.pi, g.conv, method)


def _pi_tol(g: IdentGeometry) -> float:
    return CERT_TOL * max(1.0, float(np.max(np.abs(g.Xi), initial=0.0)))


def classify_point(P, g: IdentGeometry) -> RegionClass:
    P = np.asarray(P, dtype=float).reshape(-1)
    if P.size != g.T:
        raise InputError(f"point of dimension {P.size} for T={g.T}")
    if vpolytope_membership(P, g.conv)[0]:
        return RegionClass.CONFIRMED_FEASIBLE
    if g.pi.contains(P, _pi_tol(g)):
        return RegionClass.UNDETERMINED
    return RegionClass.INFEASIBLE


# ---------------------------------------------------------------------------
# candidate certification


@dataclass(frozen=True)
class Certificate:
    is_optimum: bool
    failure: str  # "none", "not_superset_conv" or "not_subset_pi"
    worst_conv_vertex: int | None = None
    worst_pi_row: int | None = None
    pi_margin: float = 0.0

    def to_json(self) -> dict:
        return {"is_optimum": self.is_optimum, "failure": self.failure,
                "worst_conv_vertex": self.worst_conv_vertex,
                "worst_pi_row": self.worst_pi_row, "pi_margin": self.pi_margin}


def _member(candidate, P) -> bool:
    if isinstance(candidate, VPolytope):
        return vpolytope_membership(P, candidate)[0]
    if isinstance(candidate, HPolyhedron):
        scale = max(1.0, float(np.max(np.abs(candidate.b), initial=0.0)))
        return candidate.contains(P, CERT_TOL * scale)
    return contains_point(candidate, P, CERT_TOL)


def _support(candidate, lam) -> float:
    if isinstance(candidate, FlexModel):
        return respond(candidate, lam).objective
    return support_value(candidate, lam)


def certify_candidate(candidate, g: IdentGeometry) -> Certificate:
    """Check ``conv <= candidate <= pi``; candidates may be V-, H- or model regions."""
    if isinstance(candidate, HPolyhedron) and not is_bounded(candidate):
        raise InputError("candidate region is unbounded")
    for i, v in enumerate(g.conv.vertices):
        if not _member(candidate, v):
            return Certificate(False, "not_superset_conv", worst_conv_vertex=i)
    tol = _pi_tol(g)
    worst, worst_k = np.inf, None
    for k in range(g.K):
        margin = _support(candidate, g.Lambda[k]) - g.Xi[k]
        if margin < worst:
            worst, worst_k = margin, k
    if worst < -tol:
        return Certificate(False, "not_subset_pi", worst_pi_row=worst_k, pi_margin=float(worst))
    return Certificate(True, "none", worst_pi_row=worst_k, pi_margin=float(worst))


# ---------------------------------------------------------------------------
# planar reports


def default_clip(g: IdentGeometry, factor: float = 1.5) -> tuple[np.ndarray, np.ndarray]:
    """Visualisation box: the sample bounding box scaled by ``factor`` about its centre."""
    lo, hi = g.Gamma.min(axis=0), g.Gamma.max(axis=0)
    centre = (lo + hi) / 2
    half = np.maximum((hi - lo) / 2, 0.5) * factor
    return centre - half, centre + half


def clipped_pi_vertices(g: IdentGeometry, clip) -> np.ndarray:
    """Vertices of pi intersected with an axis box (visualisation only)."""
    lo, hi = (np.asarray(c, dtype=float) for c in clip)
    return vertex_enumerate_2d(g.pi.intersect(HPolyhedron.box(lo, hi)))


def region_areas(g: IdentGeometry, clip) -> dict:
    """Areas of the three classes inside the clip box (T = 2)."""
    if g.T != 2:
        raise InputError("areas are defined for T = 2 only")
    lo, hi = (np.asarray(c, dtype=float) for c in clip)
    box_area = float(np.prod(hi - lo))
    try:
        pi_area = polygon_area(clipped_pi_vertices(g, clip))
    except GeometryError:
        pi_area = 0.0
    conv_area = polygon_area(g.conv.vertices)
    return {
        "conv": conv_area,
        "pi_clipped": pi_area,
        "confirmed_feasible": conv_area,
        "undetermined": max(pi_area - conv_area, 0.0),
        "infeasible": box_area - pi_area,
    }


def classify_grid(g: IdentGeometry, clip, n: int = 41) -> tuple[np.ndarray, np.ndarray]:
    """Class of every point of an ``n x n`` grid over the clip box."""
    lo, hi = (np.asarray(c, dtype=float) for c in clip)
    xs = np.linspace(lo[0], hi[0], n)
    ys = np.linspace(lo[1], hi[1], n)
    pts = np.array([[x, y] for y in ys for x in xs])
    classes = np.array([classify_point(p, g).value for p in pts])
    return pts, classes


def region_report(g: IdentGeometry, method: str = "vertex_enum", clip=None) -> dict:
    """Verdict, boundedness, areas and vertex lists in a JSON-ready dict."""
    verdict = delta_omega_empty(g, method)
    report = {
        "K": g.K,
        "T": g.T,
        "delta_omega_empty": verdict.contained,
        "verdict": verdict.to_json(),
        "pi_bounded": is_bounded(g.pi),
        "conv_vertices": g.conv.vertices.tolist(),
    }
    if g.T == 2:
        clip = default_clip(g) if clip is None else clip
        report["clip"] = [list(map(float, clip[0])), list(map(float, clip[1]))]
        report["areas"] = region_areas(g, clip)
        report["pi_clipped_vertices"] = clipped_pi_vertices(g, clip).tolist()
    return report
