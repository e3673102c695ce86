"""Intrinsic Euclidean geometry of simplices and their circumcentric duals.

Everything here is computed from squared edge lengths only.  The batch
functions take arrays of shape ``(n, 6)`` (tetrahedra, edges in
:data:`~reggeflow.complex.TET_EDGES` order) or ``(n, 3)`` (triangles, edge
``j`` opposite vertex ``j``) and are vectorized over ``n``.

Circumcenters are located through their barycentric coordinates, obtained
from the bordered squared-distance system

    [0  1ᵀ] [-κ]   [1]
    [1  D ] [ w] = [0],      R² = κ / 2,

so a negative ``w_k`` means the circumcenter lies beyond the face opposite
vertex ``k``.  Signed quantities (face segments, dual edges, moment arms)
are propagated unclamped; well-centeredness is reported separately.
The batch kernels solve the same system in reduced form through the Gram
matrix of the edge vectors at vertex 0 and its closed-form adjugate.
"""
from __future__ import annotations

import math
import weakref
from dataclasses import dataclass

import numpy as np

from .complex import TET_EDGES, ComplexTopology3, MetricAssignment
from .errors import DegenerateFace, NonRealizable, NonRealizableTetrahedron

REL_TOL = 1e-12

# edge slots of the face opposite each tet vertex, in TRI_EDGES order
_FACE_EDGE_SLOTS = ((5, 4, 3), (5, 2, 1), (4, 2, 0), (3, 1, 0))
# for tet edge slot s = (i, j): the two remaining vertices (k, l)
_OPPOSITE_PAIR = tuple(tuple(v for v in range(4) if v not in e) for e in TET_EDGES)


# -- single simplices ----------------------------------------------------------

def _as_sq_matrix(squared_lengths, n_vertices=None) -> np.ndarray:
    a = np.asarray(squared_lengths, dtype=float)
    if a.ndim == 1:
        # condensed upper triangle, row-major (matches TET_EDGES for k = 3)
        n = int(round((1 + math.sqrt(1 + 8 * a.size)) / 2))
        if n * (n - 1) // 2 != a.size:
            raise ValueError(f"{a.size} values do not form a condensed distance list")
        D = np.zeros((n, n))
        iu = np.triu_indices(n, 1)
        D[iu] = a
        D = D + D.T
    else:
        D = a
    if D.shape[0] != D.shape[1] or (n_vertices is not None and D.shape[0] != n_vertices):
        raise ValueError(f"expected a {n_vertices}x{n_vertices} squared-distance matrix")
    if not np.allclose(D, D.T) or np.any(np.diag(D) != 0):
        raise ValueError("squared-distance matrix must be symmetric with zero diagonal")
    return D


def cm_volume(k: int, squared_lengths) -> float:
    """Volume of a k-simplex from its Cayley–Menger determinant.

    ``squared_lengths`` is the ``(k+1)x(k+1)`` matrix of pairwise squared
    distances (or its condensed upper triangle).
    """
    D = _as_sq_matrix(squared_lengths, k + 1)
    if k == 0:
        return 1.0
    cm = np.ones((k + 2, k + 2))
    cm[0, 0] = 0.0
    cm[1:, 1:] = D
    vol_sq = (-1) ** (k + 1) * np.linalg.det(cm) / (2**k * math.factorial(k) ** 2)
    scale = D.max() ** k if D.max() > 0 else 1.0
    if vol_sq < -REL_TOL * scale:
        raise NonRealizable(f"Cayley-Menger determinant gives volume² = {vol_sq:.3e} < 0")
    if vol_sq <= REL_TOL * scale:
        return 0.0
    return math.sqrt(vol_sq)


def circumcenter_barycentric(squared_lengths) -> tuple[np.ndarray, float]:
    """Barycentric coordinates of the circumcenter and the squared circumradius."""
    D = _as_sq_matrix(squared_lengths)
    w, r2 = _circumcenter_batch(D[None])
    return w[0], float(r2[0])


def circumradius(k: int, squared_lengths) -> float:
    D = _as_sq_matrix(squared_lengths, k + 1)
    if k == 0:
        return 0.0
    if cm_volume(k, D) == 0.0:
        raise NonRealizable(f"degenerate {k}-simplex has no circumsphere")
    return math.sqrt(circumcenter_barycentric(D)[1])


def _tet_l6(tet_squared_lengths) -> np.ndarray:
    a = np.asarray(tet_squared_lengths, dtype=float)
    if a.shape == (4, 4):
        a = _as_sq_matrix(a, 4)[np.triu_indices(4, 1)]
    if a.shape != (6,):
        raise ValueError("tetrahedron needs 6 squared lengths or a 4x4 matrix")
    return a


def _edge_slot(edge_index) -> int:
    if isinstance(edge_index, (tuple, list)):
        return TET_EDGES.index(tuple(sorted(edge_index)))
    return int(edge_index)


def dihedral_angle(tet_squared_lengths, edge_index) -> float:
    """Interior dihedral angle (radians) of a tetrahedron at one of its edges.

    ``edge_index`` is a slot 0..5 in ``TET_EDGES`` order or a vertex pair.
    """
    l6 = _tet_l6(tet_squared_lengths)[None]
    _check_tets(l6)
    return float(tet_dihedral_angles(l6)[0, _edge_slot(edge_index)])


def face_segment(tet_squared_lengths, face: int) -> float:
    """Signed distance from the tet circumcenter to the circumcenter of a face.

    ``face`` is the local vertex opposite the face.  The sign is positive when
    the tet circumcenter lies on the interior side of the face.
    """
    l6 = _tet_l6(tet_squared_lengths)[None]
    _check_tets(l6)
    return float(tet_face_segments(l6)[0, face])


def moment_arm(triangle_squared_lengths, edge: int) -> float:
    """Signed distance from the midpoint of edge ``edge`` to the triangle circumcenter.

    Equal to ``(ℓ/2)·cot θ`` with θ the angle opposite the edge.
    """
    l3 = np.asarray(triangle_squared_lengths, dtype=float).reshape(1, 3)
    if triangle_area_sq(l3)[0] <= REL_TOL * l3.max() ** 2:
        raise DegenerateFace("triangle is degenerate")
    return float(triangle_moment_arms(l3)[0, edge])


def hybrid_volume_general(d: int, k: int, vol_simplex: float, vol_dual: float) -> float:
    """d-volume spanned by a k-simplex and its (d-k)-dimensional dual: |σ||σ*| / C(d, k)."""
    if d < 1 or not 0 <= k <= d:
        raise ValueError(f"need d >= 1 and 0 <= k <= d, got d={d}, k={k}")
    if vol_simplex < 0 or vol_dual < 0:
        raise ValueError("volumes must be non-negative")
    return vol_simplex * vol_dual / math.comb(d, k)


# -- batch kernels -------------------------------------------------------------

def _circumcenter_batch(D: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, m = D.shape[0], D.shape[1]
    A = np.ones((n, m + 1, m + 1))
    A[:, 0, 0] = 0.0
    A[:, 1:, 1:] = D
    rhs = np.zeros((n, m + 1))
    rhs[:, 0] = 1.0
    sol = np.linalg.solve(A, rhs[..., None])[..., 0]
    return sol[:, 1:], -sol[:, 0] / 2.0


def _values(a) -> np.ndarray:
    """Float array, or complex when given complex input.

    Keeping complex dtypes lets the dual-length kernel be differentiated by
    the complex-step method; every operation on this path is analytic.
    """
    a = np.asarray(a)
    return a if np.iscomplexobj(a) else a.astype(float, copy=False)


def tet_gram(l6: np.ndarray) -> np.ndarray:
    """Gram matrix of the edge vectors from vertex 0."""
    l6 = _values(l6)
    d01, d02, d03, d12, d13, d23 = np.moveaxis(l6, -1, 0)
    G = np.empty(l6.shape[:-1] + (3, 3), dtype=l6.dtype)
    G[..., 0, 0], G[..., 1, 1], G[..., 2, 2] = d01, d02, d03
    G[..., 0, 1] = G[..., 1, 0] = 0.5 * (d01 + d02 - d12)
    G[..., 0, 2] = G[..., 2, 0] = 0.5 * (d01 + d03 - d13)
    G[..., 1, 2] = G[..., 2, 1] = 0.5 * (d02 + d03 - d23)
    return G


def _adjugate3(G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Adjugate and determinant of a stack of symmetric 3x3 matrices."""
    a, b, c = G[..., 0, 0], G[..., 1, 1], G[..., 2, 2]
    d, e, f = G[..., 0, 1], G[..., 0, 2], G[..., 1, 2]
    adj = np.empty_like(G)
    adj[..., 0, 0] = b * c - f * f
    adj[..., 1, 1] = a * c - e * e
    adj[..., 2, 2] = a * b - d * d
    adj[..., 0, 1] = adj[..., 1, 0] = e * f - d * c
    adj[..., 0, 2] = adj[..., 2, 0] = d * f - e * b
    adj[..., 1, 2] = adj[..., 2, 1] = d * e - a * f
    det = a * adj[..., 0, 0] + d * adj[..., 0, 1] + e * adj[..., 0, 2]
    return adj, det


def tet_volume_sq(l6: np.ndarray) -> np.ndarray:
    return _adjugate3(tet_gram(l6))[1] / 36.0


def tet_realizable(l6: np.ndarray) -> np.ndarray:
    """True where the squared lengths form a non-degenerate Euclidean tetrahedron."""
    l6 = np.atleast_2d(np.asarray(l6, dtype=float))
    G = tet_gram(l6)
    _, det = _adjugate3(G)
    s = l6.max(axis=1)
    s = np.where(s > 0, s, 1.0)
    minor2 = G[:, 0, 0] * G[:, 1, 1] - G[:, 0, 1] ** 2
    return (
        np.all(l6 > 0, axis=1)
        & (minor2 > REL_TOL * s**2)
        & (det > REL_TOL * s**3)
        & np.all(tet_face_areas_sq(l6) > REL_TOL * s[:, None] ** 2, axis=1)
    )


def _check_tets(l6: np.ndarray) -> None:
    ok = tet_realizable(l6)
    if not ok.all():
        raise NonRealizable(f"{int((~ok).sum())} tetrahedra are not realizable")


def triangle_area_sq(l3: np.ndarray) -> np.ndarray:
    a, b, c = np.moveaxis(_values(l3), -1, 0)
    return (2 * (a * b + b * c + c * a) - (a * a + b * b + c * c)) / 16.0


def triangle_cos_opposite(l3: np.ndarray) -> np.ndarray:
    """Cosine of each triangle angle, indexed by the opposite edge."""
    l3 = np.asarray(l3, dtype=float)
    a, b, c = np.moveaxis(l3, -1, 0)
    return np.stack(
        [
            (b + c - a) / (2 * np.sqrt(b * c)),
            (a + c - b) / (2 * np.sqrt(a * c)),
            (a + b - c) / (2 * np.sqrt(a * b)),
        ],
        axis=-1,
    )


def triangle_moment_arms(l3: np.ndarray) -> np.ndarray:
    """Signed edge-midpoint to circumcenter distances, one per edge."""
    l3 = np.asarray(l3, dtype=float)
    area = np.sqrt(np.maximum(triangle_area_sq(l3), 0.0))
    a, b, c = np.moveaxis(l3, -1, 0)
    num = np.stack([b + c - a, a + c - b, a + b - c], axis=-1)
    return np.sqrt(l3) * num / (8.0 * area[..., None])


def triangle_circumradius_sq(l3: np.ndarray) -> np.ndarray:
    a, b, c = np.moveaxis(np.asarray(l3, dtype=float), -1, 0)
    return a * b * c / (16.0 * triangle_area_sq(l3))


def tet_face_areas_sq(l6: np.ndarray) -> np.ndarray:
    l6 = _values(l6)
    return np.stack([triangle_area_sq(l6[..., list(s)]) for s in _FACE_EDGE_SLOTS], axis=-1)


def tet_circumcenter_barycentric(l6: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Circumcenter barycentric coordinates ``(n, 4)`` and squared circumradius ``(n,)``.

    With edge vectors e_a from vertex 0 the circumcenter is ``Σ c_a e_a`` where
    ``G c = diag(G) / 2``; then ``w = (1 - Σc, c)`` and ``R² = cᵀ G c``.
    """
    l6 = np.atleast_2d(_values(l6))
    G = tet_gram(l6)
    adj, det = _adjugate3(G)
    diag = np.diagonal(G, axis1=-2, axis2=-1)
    c = 0.5 * np.einsum("nij,nj->ni", adj, diag) / det[:, None]
    w = np.concatenate([1.0 - c.sum(axis=1, keepdims=True), c], axis=1)
    return w, 0.5 * np.einsum("ni,ni->n", c, diag)


def tet_face_segments(l6: np.ndarray) -> np.ndarray:
    """Signed circumcenter-to-face-circumcenter distances, face k opposite vertex k."""
    l6 = np.atleast_2d(_values(l6))
    w, _ = tet_circumcenter_barycentric(l6)
    vol = np.sqrt(tet_volume_sq(l6))
    areas = np.sqrt(tet_face_areas_sq(l6))
    # w_k is the signed distance to face k measured in units of the height over it
    return w * (3.0 * vol[:, None] / areas)


def tet_dihedral_angles(l6: np.ndarray) -> np.ndarray:
    """Interior dihedral angles at the six edges, ``TET_EDGES`` order."""
    l6 = np.atleast_2d(np.asarray(l6, dtype=float))
    adj, det = _adjugate3(tet_gram(l6))
    Ginv = adj / det[:, None, None]
    # inner products of barycentric-coordinate gradients
    B = np.empty(Ginv.shape[:-2] + (4, 4))
    B[:, 1:, 1:] = Ginv
    B[:, 0, 1:] = B[:, 1:, 0] = -Ginv.sum(axis=-1)
    B[:, 0, 0] = Ginv.sum(axis=(-1, -2))
    vol = np.sqrt(det) / 6.0
    areas = np.sqrt(tet_face_areas_sq(l6))
    out = np.empty_like(l6)
    for s, (k, l) in enumerate(_OPPOSITE_PAIR):
        cos = -B[:, k, l] / np.sqrt(B[:, k, k] * B[:, l, l])
        sin = 1.5 * vol * np.sqrt(l6[:, s]) / (areas[:, k] * areas[:, l])
        out[:, s] = np.arctan2(sin, cos)
    return out


# -- triangle pairs (two tets sharing a face) -----------------------------------
#
# slots 0..2: shared-triangle edges (v1v2, v0v2, v0v1)
# slots 3..5: first apex to v0, v1, v2;  slots 6..8: second apex to v0, v1, v2

_PAIR_TET1 = (2, 1, 3, 0, 4, 5)
_PAIR_TET2 = (2, 1, 6, 0, 7, 8)


def pair_dual_lengths(l9: np.ndarray) -> np.ndarray:
    """Dual edge length λ for each pair of tetrahedra glued along a triangle."""
    l9 = _values(l9)
    seg1 = tet_face_segments(l9[:, _PAIR_TET1])[:, 3]
    seg2 = tet_face_segments(l9[:, _PAIR_TET2])[:, 3]
    return seg1 + seg2


def pair_realizable(l9: np.ndarray) -> np.ndarray:
    l9 = np.asarray(l9, dtype=float)
    return tet_realizable(l9[:, _PAIR_TET1]) & tet_realizable(l9[:, _PAIR_TET2])


_STENCILS: "weakref.WeakKeyDictionary[ComplexTopology3, np.ndarray]" = weakref.WeakKeyDictionary()


def pair_stencil(top: ComplexTopology3) -> np.ndarray:
    """Edge ids of the 9 edges each triangle's dual length depends on, ``(F, 9)``.

    Triangles on the boundary of a non-compact complex get ``-1`` in the
    second-apex slots.
    """
    cached = _STENCILS.get(top)
    if cached is not None:
        return cached
    out = np.full((top.n_triangles, 9), -1, dtype=np.int64)
    for t, (v0, v1, v2) in enumerate(top.triangles):
        out[t, :3] = top.triangle_edges[t]
        for slot, k in zip((3, 6), top.triangle_tets[t]):
            apex = next(v for v in top.tetrahedra[k] if v not in (v0, v1, v2))
            out[t, slot:slot + 3] = [top.edge_id(apex, v) for v in (v0, v1, v2)]
    out.setflags(write=False)
    _STENCILS[top] = out
    return out


# -- whole-complex dual geometry --------------------------------------------------

@dataclass(frozen=True, eq=False)
class DualGeometry:
    """Circumcentric dual data of a complex, all arrays indexed by simplex id.

    ``face_segment[k, f]`` belongs to tetrahedron ``k`` and its face opposite
    local vertex ``f`` (triangle id ``top.tet_triangles[k, f]``);
    ``moment_arm[t, j]`` and ``reduced_hybrid_volume[t, j]`` pair triangle
    ``t`` with edge ``top.triangle_edges[t, j]``.
    """

    tet_volume: np.ndarray
    dihedral: np.ndarray
    face_segment: np.ndarray
    dual_edge_len: np.ndarray
    moment_arm: np.ndarray
    dual_polygon_area: np.ndarray
    hybrid_volume: np.ndarray
    reduced_hybrid_volume: np.ndarray
    tet_well_centered: np.ndarray
    triangle_well_centered: np.ndarray

    @property
    def well_centered(self) -> bool:
        return bool(self.tet_well_centered.all() and self.triangle_well_centered.all())


def dual_geometry(top: ComplexTopology3, metric: MetricAssignment) -> DualGeometry:
    l2 = np.asarray(metric.lengths_sq, dtype=float)
    tet_l2 = l2[top.tet_edges]
    ok = tet_realizable(tet_l2)
    if not ok.all():
        bad = np.flatnonzero(~ok)
        raise NonRealizableTetrahedron(
            f"{len(bad)} tetrahedra are not realizable, first {tuple(top.tetrahedra[bad[0]])}",
            tetrahedra=bad,
        )
    vol = np.sqrt(tet_volume_sq(tet_l2))
    dihedral = tet_dihedral_angles(tet_l2)
    w, _ = tet_circumcenter_barycentric(tet_l2)
    seg = w * (3.0 * vol[:, None] / np.sqrt(tet_face_areas_sq(tet_l2)))

    lam = np.zeros(top.n_triangles)
    np.add.at(lam, top.tet_triangles.ravel(), seg.ravel())

    tri_l2 = l2[top.triangle_edges]
    arms = triangle_moment_arms(tri_l2)
    edge_len = np.sqrt(l2)
    fan = 0.5 * lam[:, None] * arms
    area = np.zeros(top.n_edges)
    np.add.at(area, top.triangle_edges.ravel(), fan.ravel())
    reduced = edge_len[top.triangle_edges] * lam[:, None] * arms / 6.0

    for a in (vol, dihedral, seg, lam, arms, area, reduced):
        a.setflags(write=False)
    hybrid = edge_len * area / 3.0
    hybrid.setflags(write=False)
    return DualGeometry(
        tet_volume=vol,
        dihedral=dihedral,
        face_segment=seg,
        dual_edge_len=lam,
        moment_arm=arms,
        dual_polygon_area=area,
        hybrid_volume=hybrid,
        reduced_hybrid_volume=reduced,
        tet_well_centered=np.all(w > 0, axis=1),
        triangle_well_centered=np.all(triangle_cos_opposite(tri_l2) > 0, axis=1),
    )
