"""Deficit angles and simplicial Riemann, Ricci and scalar curvature.

In three dimensions the hinges are the edges, so every hinge quantity is
indexed by edge id.  The curvatures on edges, dual edges and vertices are
weighted averages of the hinge curvature ``ε_h / h*``:

* edge ``ℓ``: average over the hinges containing ``ℓ`` weighted by the part
  of each hinge nearest ``ℓ`` (for d = 3 this is ``ℓ`` itself);
* dual edge ``λ`` (dual to triangle ``t``): average over the three edges of
  ``t`` weighted by the fan piece ``½·λ·m`` of each edge's dual polygon;
* vertex ``v``: ratio of the averages of ``ε`` and ``h*`` over the edges at
  ``v``, weighted by the half edge nearest ``v``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .complex import ComplexTopology3, MetricAssignment
from .errors import NotCompact, ZeroDualArea, ZeroWeightSum
from .geometry import DualGeometry, dual_geometry


def deficit_angles(top: ComplexTopology3, metric: MetricAssignment, dual: DualGeometry | None = None):
    """``2π`` minus the sum of dihedral angles around each edge.

    Edges on the boundary of a non-compact complex carry no conic
    singularity and are returned as NaN.
    """
    if dual is None:
        dual = dual_geometry(top, metric)
    total = np.bincount(top.tet_edges.ravel(), weights=dual.dihedral.ravel(), minlength=top.n_edges)
    eps = 2.0 * math.pi - total
    if not top.compact:
        eps[top.boundary_edge_mask()] = np.nan
    return eps


def sectional_curvature(deficit, dual_area):
    """Hinge sectional curvature ``K = ε / h*``; works on scalars and arrays."""
    deficit = np.asarray(deficit, dtype=float)
    dual_area = np.asarray(dual_area, dtype=float)
    if np.any(dual_area == 0) or not np.all(np.isfinite(dual_area)):
        raise ZeroDualArea("dual polygon area is zero or not finite")
    K = deficit / dual_area
    return float(K) if K.ndim == 0 else K


def einstein_space_curvatures(d: int, K):
    """(Rm, Rc, R) of a hybrid cell that is an Einstein space of sectional curvature K."""
    if d < 2:
        raise ValueError(f"need d >= 2, got {d}")
    return K, (d - 1) * K, d * (d - 1) * K


def weighted_average(values, weights, groups, n_groups: int):
    """Group-wise weighted mean ``Σ f·w / Σ w``; ``groups`` maps each item to a group id."""
    values = np.asarray(values, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    groups = np.asarray(groups).ravel()
    num = np.bincount(groups, weights=values * weights, minlength=n_groups)
    den = np.bincount(groups, weights=weights, minlength=n_groups)
    if np.any(den == 0):
        raise ZeroWeightSum(f"{int((den == 0).sum())} group(s) have zero total weight")
    return num / den


def _hinge_edge_incidence(top: ComplexTopology3) -> sparse.csr_matrix:
    # d = 3: each hinge is an edge and contains exactly one edge, itself
    return sparse.identity(top.n_edges, format="csr")


def rc_edge(top: ComplexTopology3, metric: MetricAssignment, dual: DualGeometry | None = None,
            deficit=None) -> np.ndarray:
    """Edge Ricci curvature ``⟨Rc_h⟩_ℓ`` through the hinge-to-edge weighted average."""
    if dual is None:
        dual = dual_geometry(top, metric)
    if deficit is None:
        deficit = deficit_angles(top, metric, dual)
    _, rc_h, _ = einstein_space_curvatures(3, sectional_curvature(deficit, dual.dual_polygon_area))
    inc = _hinge_edge_incidence(top).tocoo()
    # weight: the part of hinge h nearest edge ℓ, i.e. the edge itself
    weights = np.sqrt(metric.lengths_sq)[inc.row]
    return weighted_average(rc_h[inc.row], weights, inc.col, top.n_edges)


def rc_edge_closed_form(deficit, dual_area) -> np.ndarray:
    return 2.0 * np.asarray(deficit) / np.asarray(dual_area)


def rc_dual_edge(top: ComplexTopology3, metric: MetricAssignment, dual: DualGeometry | None = None,
                 deficit=None) -> np.ndarray:
    """Ricci curvature on each dual edge, indexed by the triangle it is dual to."""
    if dual is None:
        dual = dual_geometry(top, metric)
    if deficit is None:
        deficit = deficit_angles(top, metric, dual)
    rc_h = 2.0 * sectional_curvature(deficit, dual.dual_polygon_area)
    weights = 0.5 * dual.dual_edge_len[:, None] * dual.moment_arm
    groups = np.repeat(np.arange(top.n_triangles), 3)
    return weighted_average(rc_h[top.triangle_edges], weights, groups, top.n_triangles)


def scalar_vertex(top: ComplexTopology3, metric: MetricAssignment, dual: DualGeometry | None = None,
                  deficit=None) -> np.ndarray:
    """Vertex scalar curvature ``d(d-1)·⟨ε⟩_v / ⟨h*⟩_v`` with half-edge weights."""
    if dual is None:
        dual = dual_geometry(top, metric)
    if deficit is None:
        deficit = deficit_angles(top, metric, dual)
    half = 0.5 * np.sqrt(metric.lengths_sq)
    ends = top.edges.ravel()
    h_v = np.repeat(half, 2)
    num = np.bincount(ends, weights=np.repeat(deficit, 2) * h_v, minlength=top.vertex_count)
    den = np.bincount(ends, weights=np.repeat(dual.dual_polygon_area, 2) * h_v, minlength=top.vertex_count)
    used = np.bincount(ends, minlength=top.vertex_count) > 0
    if np.any(den[used] == 0):
        raise ZeroWeightSum("vertex with zero weighted dual area")
    out = np.full(top.vertex_count, np.nan)
    out[used] = 6.0 * num[used] / den[used]
    return out


def regge_action(top: ComplexTopology3, metric: MetricAssignment, deficit=None) -> float:
    """Regge–Hilbert action ``(1/8π) Σ ε_ℓ·ℓ``."""
    if deficit is None:
        deficit = deficit_angles(top, metric)
    return float(np.dot(deficit, np.sqrt(metric.lengths_sq)) / (8.0 * math.pi))


def curvature_table(top: ComplexTopology3, metric: MetricAssignment, d: int = 3,
                    dual: DualGeometry | None = None, deficit=None) -> dict:
    """Rm, Rc and R assigned to hinges, edges and vertices.

    Keys are ``(kind, location)`` with kind in ``Rm, Rc, R`` and location in
    ``hinge, edge, vertex``.  Each entry is the Einstein-space factor times
    ``⟨ε⟩ / ⟨h*⟩`` averaged over the location's hinges.
    """
    if dual is None:
        dual = dual_geometry(top, metric)
    if deficit is None:
        deficit = deficit_angles(top, metric, dual)
    hstar = dual.dual_polygon_area
    ratio = {"hinge": sectional_curvature(deficit, hstar)}

    inc = _hinge_edge_incidence(top).tocoo()
    w = np.sqrt(metric.lengths_sq)[inc.row]
    eps_l = weighted_average(deficit[inc.row], w, inc.col, top.n_edges)
    hst_l = weighted_average(hstar[inc.row], w, inc.col, top.n_edges)
    ratio["edge"] = eps_l / hst_l

    ratio["vertex"] = scalar_vertex(top, metric, dual, deficit) / 6.0
    factors = dict(zip(("Rm", "Rc", "R"), einstein_space_curvatures(d, 1)))
    return {(kind, loc): f * r for kind, f in factors.items() for loc, r in ratio.items()}


@dataclass(frozen=True, eq=False)
class CurvatureField:
    deficit: np.ndarray
    dual_area: np.ndarray
    sectional: np.ndarray
    rc_edge: np.ndarray
    rc_dual: np.ndarray
    scalar_vertex: np.ndarray
    regge_action: float


def curvature_field(top: ComplexTopology3, metric: MetricAssignment,
                    dual: DualGeometry | None = None) -> CurvatureField:
    if not top.compact:
        raise NotCompact("curvature field needs a closed complex")
    if dual is None:
        dual = dual_geometry(top, metric)
    eps = deficit_angles(top, metric, dual)
    return CurvatureField(
        deficit=eps,
        dual_area=dual.dual_polygon_area,
        sectional=sectional_curvature(eps, dual.dual_polygon_area),
        rc_edge=rc_edge(top, metric, dual, eps),
        rc_dual=rc_dual_edge(top, metric, dual, eps),
        scalar_vertex=scalar_vertex(top, metric, dual, eps),
        regge_action=regge_action(top, metric, eps),
    )
