"""Closed-form symmetric RRF models and the lattices they describe.

Two families:

* regular 4-polytope boundaries (5-cell, 16-cell, 600-cell), tetrahedral
  lattices approximating S³ with ``p`` = 3, 4, 5 tetrahedra per edge;
* the icosahedral 3-cylinder, a periodic stack of icosahedra joined by axial
  edges.  Its blocks are triangular prisms, rigid by symmetry, so it is
  evolved through a two-unknown symmetric reduction instead of the general
  simplicial kernel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations, permutations, product

import numpy as np

from .complex import ComplexTopology3, MetricAssignment, build_complex, edge_key
from .errors import CollapseExceeded

PCELL_COUNTS = {3: 5, 4: 16, 5: 600}
PCELL_NAMES = {3: "5-cell", 4: "16-cell", 5: "600-cell"}
REGULAR_DIHEDRAL = math.acos(1.0 / 3.0)  # arcsec(3)
PHI = (1.0 + math.sqrt(5.0)) / 2.0


# -- S³ models -------------------------------------------------------------------

@dataclass(frozen=True)
class PCellModel:
    p: int
    ell0: float = 1.0

    def __post_init__(self):
        if self.p not in PCELL_COUNTS:
            raise ValueError(f"p must be 3, 4 or 5, got {self.p}")
        if not self.ell0 > 0:
            raise ValueError("ell0 must be positive")

    @property
    def n_tets(self) -> int:
        return PCELL_COUNTS[self.p]

    @property
    def name(self) -> str:
        return PCELL_NAMES[self.p]

    @property
    def theta(self) -> float:
        return REGULAR_DIHEDRAL

    @property
    def epsilon(self) -> float:
        return 2.0 * math.pi - self.p * REGULAR_DIHEDRAL

    lambda_ratio = math.sqrt(6.0) / 6.0
    arm_ratio = math.sqrt(3.0) / 6.0

    @property
    def ell_sq_rate(self) -> float:
        """d(ℓ²)/dt from (√2·p/24)·d(ℓ²)/dt = −4ε."""
        return -96.0 * self.epsilon / (math.sqrt(2.0) * self.p)

    @property
    def radius_factor(self) -> float:
        """a²/ℓ² from matching the polytope boundary volume to 2π²a³."""
        return (math.sqrt(2.0) * self.n_tets / (24.0 * math.pi**2)) ** (2.0 / 3.0)

    @property
    def extinction_time(self) -> float:
        return -self.ell0**2 / self.ell_sq_rate

    @property
    def effective_ricci(self) -> float:
        """Effective R_χχ; the continuum value is 2."""
        return (6.0 * math.sqrt(2.0) / self.p) * (
            math.sqrt(2.0) * self.n_tets / (3.0 * math.pi**2)
        ) ** (2.0 / 3.0) * self.epsilon


def pcell_closed_form(model: PCellModel, t) -> tuple:
    """(ℓ²(t), a_eff²(t)) for the uniformly evolving p-cell."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be non-negative")
    ell_sq = model.ell0**2 + model.ell_sq_rate * t_arr
    if np.any(ell_sq <= 0):
        raise CollapseExceeded(f"t past extinction time {model.extinction_time:.6g}")
    a_sq = ell_sq * model.radius_factor
    if t_arr.ndim == 0:
        return float(ell_sq), float(a_sq)
    return ell_sq, a_sq


@dataclass(frozen=True)
class DeviationRow:
    model: str
    p: int
    n_tets: int
    epsilon: float
    effective_ricci: float
    percent_deviation: float
    spacing: float  # ℓ / a_eff


@dataclass(frozen=True)
class DeviationTable:
    rows: tuple
    slope: float  # 16-cell -> 600-cell, log deviation vs log spacing
    slope_vs_deficit: float

    def to_markdown(self) -> str:
        lines = [
            "| model | p | N | deficit angle (rad) | effective R_chi_chi | deviation (%) |",
            "|---|---|---|---|---|---|",
        ]
        for r in self.rows:
            lines.append(
                f"| {r.model} | {r.p} | {r.n_tets} | {r.epsilon:.5f} | "
                f"{r.effective_ricci:.6f} | {r.percent_deviation:.3f} |"
            )
        lines.append("")
        lines.append(f"log-log slope 16-cell -> 600-cell (vs lattice spacing): {self.slope:.4f}")
        lines.append(f"log-log slope 16-cell -> 600-cell (vs deficit angle): {self.slope_vs_deficit:.4f}")
        return "\n".join(lines)


def _loglog_slope(x0, y0, x1, y1) -> float:
    return math.log(y0 / y1) / math.log(x0 / x1)


def pcell_deviation_table() -> DeviationTable:
    rows = []
    for p in (3, 4, 5):
        m = PCellModel(p)
        r = m.effective_ricci
        rows.append(
            DeviationRow(
                model=m.name,
                p=p,
                n_tets=m.n_tets,
                epsilon=m.epsilon,
                effective_ricci=r,
                percent_deviation=100.0 * abs(r - 2.0) / 2.0,
                spacing=1.0 / math.sqrt(m.radius_factor),
            )
        )
    r16, r600 = rows[1], rows[2]
    return DeviationTable(
        rows=tuple(rows),
        slope=_loglog_slope(r16.spacing, r16.percent_deviation, r600.spacing, r600.percent_deviation),
        slope_vs_deficit=_loglog_slope(
            r16.epsilon, r16.percent_deviation, r600.epsilon, r600.percent_deviation
        ),
    )


# -- polytope lattices -------------------------------------------------------------

def _even_permutations(n: int):
    for perm in permutations(range(n)):
        inversions = sum(perm[i] > perm[j] for i in range(n) for j in range(i + 1, n))
        if inversions % 2 == 0:
            yield perm


def six_hundred_cell_vertices() -> np.ndarray:
    """The 120 unit icosians; nearest neighbours are 1/φ apart."""
    verts = set()
    for i in range(4):
        for s in (1.0, -1.0):
            v = [0.0] * 4
            v[i] = s
            verts.add(tuple(v))
    for signs in product((0.5, -0.5), repeat=4):
        verts.add(signs)
    base = (PHI / 2, 0.5, 1 / (2 * PHI), 0.0)
    for perm in _even_permutations(4):
        for signs in product((1.0, -1.0), repeat=3):
            v = [0.0] * 4
            vals = [base[0] * signs[0], base[1] * signs[1], base[2] * signs[2], 0.0]
            for src, dst in enumerate(perm):
                v[dst] = vals[src]
            verts.add(tuple(round(x, 12) + 0.0 for x in v))
    out = np.array(sorted(verts))
    assert len(out) == 120
    return out


def _clique_tetrahedra(adj: np.ndarray) -> list[tuple[int, int, int, int]]:
    n = len(adj)
    nbrs = [set(np.flatnonzero(adj[i])) for i in range(n)]
    tets = []
    for a in range(n):
        for b in (x for x in nbrs[a] if x > a):
            common = sorted(x for x in nbrs[a] & nbrs[b] if x > b)
            for c, d in combinations(common, 2):
                if d in nbrs[c]:
                    tets.append((a, b, c, d))
    return tets


def pcell_tetrahedra(p: int) -> list[tuple[int, int, int, int]]:
    if p == 3:
        return list(combinations(range(5), 4))
    if p == 4:
        # vertices 2i, 2i+1 are the antipodal pair ±e_i; pick one of each pair
        return [tuple(2 * i + s for i, s in enumerate(bits)) for bits in product((0, 1), repeat=4)]
    if p == 5:
        X = six_hundred_cell_vertices()
        d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(-1)
        adj = np.isclose(d2, 1.0 / PHI**2, atol=1e-9)
        return _clique_tetrahedra(adj)
    raise ValueError(f"p must be 3, 4 or 5, got {p}")


def generate_pcell_lattice(p: int, ell: float = 1.0) -> tuple[ComplexTopology3, MetricAssignment]:
    """Boundary complex of the 4-simplex (p=3), cross-polytope (4) or 600-cell (5)."""
    top = build_complex(pcell_tetrahedra(p))
    return top, MetricAssignment(np.full(top.n_edges, float(ell) ** 2))



def perturb_metric(metric: MetricAssignment, rel: float, seed: int = 0) -> MetricAssignment:
    """Scale each edge length by an independent factor ``1 + U(-rel, rel)``."""
    rng = np.random.default_rng(seed)
    factor = 1.0 + rng.uniform(-rel, rel, size=metric.lengths_sq.shape)
    return MetricAssignment(metric.lengths_sq * factor**2, metric.time)

# -- flat test lattices ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EmbeddedTorus:
    """Flat 3-torus complex together with vertex positions and per-edge offsets."""

    top: ComplexTopology3
    points: np.ndarray
    box: float
    edge_vectors: np.ndarray = field(repr=False)

    def metric(self, displacement=None) -> MetricAssignment:
        vec = self.edge_vectors
        if displacement is not None:
            u, v = self.top.edges[:, 0], self.top.edges[:, 1]
            vec = vec + displacement[v] - displacement[u]
        return MetricAssignment((vec**2).sum(axis=1))


def bcc_torus(n: int = 3, spacing: float = 1.0) -> EmbeddedTorus:
    """Periodic body-centred-cubic tetrahedral lattice: flat and well-centered.

    Each tetrahedron joins two neighbouring cube centres with one edge of the
    square face between them.  ``n >= 3`` keeps the complex simplicial.
    """
    if n < 3:
        raise ValueError("need n >= 3 for a simplicial periodic lattice")

    def corner(i, j, k):
        return ((i % n) * n + (j % n)) * n + (k % n)

    def centre(i, j, k):
        return n**3 + corner(i, j, k)

    pts = np.zeros((2 * n**3, 3))
    for i, j, k in product(range(n), repeat=3):
        pts[corner(i, j, k)] = (i, j, k)
        pts[centre(i, j, k)] = (i + 0.5, j + 0.5, k + 0.5)
    pts *= spacing

    tets, geo = [], {}
    for i, j, k in product(range(n), repeat=3):
        base = np.array([i, j, k])
        for axis in range(3):
            # the face at base + e_axis is shared by cells base and base + e_axis
            a, b = [x for x in range(3) if x != axis]
            ring = []
            for da, db in ((0, 0), (1, 0), (1, 1), (0, 1)):
                off = np.zeros(3, dtype=int)
                off[axis], off[a], off[b] = 1, da, db
                ring.append(base + off)
            c1 = base.astype(float) + 0.5
            nxt = base.copy()
            nxt[axis] += 1
            c2 = nxt.astype(float) + 0.5
            for q in range(4):
                r0, r1 = ring[q], ring[(q + 1) % 4]
                ids = (centre(*base), centre(*nxt), corner(*r0), corner(*r1))
                coords = (c1, c2, r0.astype(float), r1.astype(float))
                tets.append(ids)
                for (x, px), (y, py) in combinations(zip(ids, coords), 2):
                    key = (x, y) if x < y else (y, x)
                    vec = (py - px) if x < y else (px - py)
                    geo[key] = vec * spacing
    top = build_complex(tets, vertex_count=2 * n**3)
    vecs = np.array([geo[tuple(e)] for e in top.edges])
    return EmbeddedTorus(top=top, points=pts, box=n * spacing, edge_vectors=vecs)


# -- icosahedral 3-cylinder --------------------------------------------------------

def icosahedron() -> tuple[np.ndarray, list, list]:
    """Vertices (edge length 2), edges and faces of the regular icosahedron."""
    verts = []
    for s1, s2 in product((1.0, -1.0), repeat=2):
        verts += [(0.0, s1, s2 * PHI), (s1, s2 * PHI, 0.0), (s2 * PHI, 0.0, s1)]
    X = np.array(verts)
    d2 = ((X[:, None] - X[None]) ** 2).sum(-1)
    adj = np.isclose(d2, 4.0)
    edges = [(i, j) for i, j in combinations(range(12), 2) if adj[i, j]]
    faces = [f for f in combinations(range(12), 3) if adj[f[0], f[1]] and adj[f[1], f[2]] and adj[f[0], f[2]]]
    return X, edges, faces


@dataclass(frozen=True)
class CylinderModel:
    s0: float
    a0: float
    n_rings: int = 3

    def __post_init__(self):
        if not (self.s0 > 0 and self.a0 > 0):
            raise ValueError("s0 and a0 must be positive")
        if self.n_rings < 3:
            raise ValueError("n_rings must be at least 3")

    s_sq_rate = -16.0 * math.pi / (5.0 * math.sqrt(3.0))
    radius_factor = 5.0 * math.sqrt(3.0) / (4.0 * math.pi)  # r² / s²

    @property
    def extinction_time(self) -> float:
        return -self.s0**2 / self.s_sq_rate


def cylinder_closed_form(model: CylinderModel, t) -> tuple:
    """(s²(t), a(t), r_eff²(t)): linear s², conserved a·s, area-matched radius."""
    t_arr = np.asarray(t, dtype=float)
    s_sq = model.s0**2 + model.s_sq_rate * t_arr
    if np.any(s_sq <= 0):
        raise CollapseExceeded(f"t past extinction time {model.extinction_time:.6g}")
    a = model.a0 * model.s0 / np.sqrt(s_sq)
    r_sq = model.radius_factor * s_sq
    if t_arr.ndim == 0:
        return float(s_sq), float(a), float(r_sq)
    return s_sq, a, r_sq


@dataclass(frozen=True, eq=False)
class PrismLattice:
    """Periodic stack of icosahedra joined by axial edges; blocks are prisms."""

    n_rings: int
    vertex_count: int
    icosahedral_edges: np.ndarray
    axial_edges: np.ndarray
    prisms: np.ndarray  # (P, 6): bottom triangle, then the matching top triangle
    lengths_sq: dict

    @property
    def edges(self) -> np.ndarray:
        return np.vstack([self.icosahedral_edges, self.axial_edges])

    def edge_prism_counts(self) -> dict:
        counts = {}
        for pr in self.prisms:
            bottom, top = pr[:3], pr[3:]
            for tri in (bottom, top):
                for u, v in combinations(tri, 2):
                    counts[edge_key(u, v)] = counts.get(edge_key(u, v), 0) + 1
            for u, v in zip(bottom, top):
                counts[edge_key(u, v)] = counts.get(edge_key(u, v), 0) + 1
        return counts

    def to_dict(self) -> dict:
        return {
            "dimension": 3,
            "prisms": [[int(v) for v in p] for p in self.prisms],
            "lengths_sq": dict(self.lengths_sq),
        }


def generate_cylinder_lattice(n_rings: int, s0: float, a0: float) -> PrismLattice:
    if n_rings < 3:
        raise ValueError("n_rings must be at least 3")
    _, ico_edges, faces = icosahedron()

    def vid(ring, v):
        return (ring % n_rings) * 12 + v

    s_edges, a_edges, prisms = [], [], []
    for ring in range(n_rings):
        s_edges += [tuple(sorted((vid(ring, u), vid(ring, v)))) for u, v in ico_edges]
        a_edges += [tuple(sorted((vid(ring, v), vid(ring + 1, v)))) for v in range(12)]
        prisms += [tuple(vid(ring, v) for v in f) + tuple(vid(ring + 1, v) for v in f) for f in faces]
    lengths = {edge_key(*e): s0 * s0 for e in s_edges}
    lengths.update({edge_key(*e): a0 * a0 for e in a_edges})
    return PrismLattice(
        n_rings=n_rings,
        vertex_count=12 * n_rings,
        icosahedral_edges=np.array(sorted(s_edges)),
        axial_edges=np.array(sorted(a_edges)),
        prisms=np.array(prisms),
        lengths_sq=lengths,
    )


@dataclass(frozen=True)
class PrismDualData:
    sigma: float
    alpha: float
    theta_s: float
    theta_a: float
    arm_s_sigma: float
    arm_s_alpha: float
    arm_a_sigma: float


def prism_dual_data(s: float, a: float) -> PrismDualData:
    """Dual lengths, dihedral angles and moment arms of a regular triangular prism.

    Built from explicit coordinates of one prism: triangle of side ``s`` in
    z = 0 and its translate at z = ``a``.  The prism circumcentre is the
    centroid at half height; dual edges run between circumcentres of
    neighbouring prisms and cross the shared face at its centre.
    """
    P = np.array([[0.0, 0.0, 0.0], [s, 0.0, 0.0], [s / 2, s * math.sqrt(3) / 2, 0.0]])
    Q = P + [0.0, 0.0, a]
    centre = np.vstack([P, Q]).mean(axis=0)
    rect_centre = (P[0] + P[1] + Q[0] + Q[1]) / 4  # face dual to σ
    cap_centre = P.mean(axis=0)  # face dual to α
    sigma = 2 * np.linalg.norm(centre - rect_centre)
    alpha = 2 * np.linalg.norm(centre - cap_centre)

    def angle(u, v):
        return math.acos(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))

    # dihedral at a cap edge: between the cap and a rectangle (inward normals)
    theta_s = angle(Q[0] - P[0], P[2] - (P[0] + P[1]) / 2)
    # dihedral at an axial edge: angle of the triangle at that vertex
    theta_a = angle(P[1] - P[0], P[2] - P[0])
    mid_s = (P[0] + P[1]) / 2
    mid_a = (P[0] + Q[0]) / 2
    return PrismDualData(
        sigma=float(sigma),
        alpha=float(alpha),
        theta_s=theta_s,
        theta_a=theta_a,
        arm_s_sigma=float(np.linalg.norm(mid_s - rect_centre)),
        arm_s_alpha=float(np.linalg.norm(mid_s - cap_centre)),
        arm_a_sigma=float(np.linalg.norm(mid_a - rect_centre)),
    )


@dataclass(frozen=True)
class CylinderRates:
    ds_dt: float
    da_dt: float
    eps_a: float
    eps_s: float
    lhs_a_coeff: float  # LHS_a = coeff · s·ṡ
    lhs_s_coeff: float  # LHS_s = coeff · (a·ṡ + s·ȧ)

    def s_sq_rate(self, s: float) -> float:
        return 2.0 * s * self.ds_dt


def cylinder_symmetric_rrf(model: CylinderModel, s: float | None = None, a: float | None = None,
                           lattice: PrismLattice | None = None) -> CylinderRates:
    """Solve ``Σ m_λ λ̇ = −4 ε`` on the prism lattice for (ṡ, ȧ).

    Deficits come from the prism dihedral angles and the number of prisms
    around each edge type in the generated lattice; the two rows are the
    axial-edge and icosahedral-edge equations.
    """
    s = model.s0 if s is None else s
    a = model.a0 if a is None else a
    if lattice is None:
        lattice = generate_cylinder_lattice(model.n_rings, s, a)
    counts = lattice.edge_prism_counts()
    n_a = counts[edge_key(*lattice.axial_edges[0])]
    n_s = counts[edge_key(*lattice.icosahedral_edges[0])]
    dd = prism_dual_data(s, a)
    eps_a = 2 * math.pi - n_a * dd.theta_a
    eps_s = 2 * math.pi - n_s * dd.theta_s

    # σ ∝ s and α = a, so σ̇ = (σ/s)ṡ and α̇ = ȧ
    dsigma_ds = dd.sigma / s
    # the dual polygon of an axial edge has one σ side per surrounding prism;
    # that of an icosahedral edge is a rectangle with two σ and two α sides
    row_a = [n_a * dd.arm_a_sigma * dsigma_ds, 0.0]
    row_s = [2 * dd.arm_s_sigma * dsigma_ds, 2 * dd.arm_s_alpha * 1.0]
    A = np.array([row_a, row_s])
    rhs = np.array([-4.0 * eps_a, -4.0 * eps_s])
    ds_dt, da_dt = np.linalg.solve(A, rhs)
    return CylinderRates(
        ds_dt=float(ds_dt),
        da_dt=float(da_dt),
        eps_a=eps_a,
        eps_s=eps_s,
        lhs_a_coeff=row_a[0] / s,
        lhs_s_coeff=row_s[0] / a,
    )
