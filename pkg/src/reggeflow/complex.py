"""Combinatorial simplicial 3-complexes and their edge-length metrics.

Geometry is purely intrinsic: a :class:`MetricAssignment` holds one squared
length per edge and nothing else.  Simplices are stored with sorted vertex
tuples and indexed in lexicographic order, so two complexes built from the
same tetrahedra (in any order) share identical edge and triangle ids.

Local orderings used throughout the package:

* tetrahedron edges follow ``TET_EDGES`` and face ``k`` is the triangle
  opposite local vertex ``k``;
* triangle edge ``j`` is the edge opposite local vertex ``j`` (``TRI_EDGES``).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateSimplex,
    DuplicateTetrahedron,
    MeshFormatError,
    MissingEdgeLength,
    NonRealizableTetrahedron,
)

TET_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
TET_FACES = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))
TRI_EDGES = ((1, 2), (0, 2), (0, 1))


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def edge_key(u: int, v: int) -> str:
    u, v = sorted((int(u), int(v)))
    return f"{u}-{v}"


def parse_edge_key(key: str) -> tuple[int, int]:
    try:
        u, v = (int(x) for x in key.split("-"))
    except ValueError as exc:
        raise MeshFormatError(f"bad edge key {key!r}; expected 'i-j'") from exc
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True, eq=False)
class ComplexTopology3:
    """Immutable combinatorial 3-complex with derived incidence data."""

    vertex_count: int
    tetrahedra: np.ndarray
    edges: np.ndarray
    triangles: np.ndarray
    tet_edges: np.ndarray
    tet_triangles: np.ndarray
    triangle_edges: np.ndarray
    triangle_tets: tuple
    edge_triangles: tuple
    edge_tets: tuple
    vertex_edges: tuple
    compact: bool
    edge_index: dict = field(repr=False)
    triangle_index: dict = field(repr=False)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_tetrahedra(self) -> int:
        return len(self.tetrahedra)

    def edge_id(self, u: int, v: int) -> int:
        return self.edge_index[(min(u, v), max(u, v))]

    def edge_keys(self) -> list[str]:
        return [f"{u}-{v}" for u, v in self.edges]

    def euler_characteristic(self) -> int:
        used = len(np.unique(self.tetrahedra))
        return used - self.n_edges + self.n_triangles - self.n_tetrahedra

    def boundary_edge_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_edges, dtype=bool)
        for t, cofaces in enumerate(self.triangle_tets):
            if len(cofaces) == 1:
                mask[self.triangle_edges[t]] = True
        return mask

    def same_as(self, other: "ComplexTopology3") -> bool:
        return (
            self.vertex_count == other.vertex_count
            and np.array_equal(self.tetrahedra, other.tetrahedra)
            and np.array_equal(self.edges, other.edges)
        )


def build_complex(tetrahedra, vertex_count: int | None = None) -> ComplexTopology3:
    """Build a :class:`ComplexTopology3` from a list of vertex 4-tuples."""
    tets = []
    for raw in tetrahedra:
        tet = tuple(int(v) for v in raw)
        if len(tet) != 4:
            raise DegenerateSimplex(f"tetrahedron {raw!r} does not have 4 vertices")
        if min(tet) < 0:
            raise DegenerateSimplex(f"negative vertex id in {raw!r}")
        if len(set(tet)) != 4:
            raise DegenerateSimplex(f"repeated vertex in tetrahedron {raw!r}")
        tets.append(tuple(sorted(tet)))
    if len(set(tets)) != len(tets):
        seen = set()
        dup = next(t for t in tets if t in seen or seen.add(t))
        raise DuplicateTetrahedron(f"tetrahedron {dup} listed more than once")
    tets.sort()

    tri_set, edge_set = set(), set()
    for tet in tets:
        tri_set.update(tuple(tet[i] for i in f) for f in TET_FACES)
        edge_set.update((tet[i], tet[j]) for i, j in TET_EDGES)
    triangles = sorted(tri_set)
    edges = sorted(edge_set)
    edge_index = {e: i for i, e in enumerate(edges)}
    tri_index = {t: i for i, t in enumerate(triangles)}

    n_vert = max(max(t) for t in tets) + 1 if tets else 0
    if vertex_count is not None:
        if vertex_count < n_vert:
            raise DegenerateSimplex(
                f"vertex_count={vertex_count} but tetrahedra use id {n_vert - 1}"
            )
        n_vert = vertex_count

    tet_edges = [[edge_index[(t[i], t[j])] for i, j in TET_EDGES] for t in tets]
    tet_tris = [[tri_index[tuple(t[i] for i in f)] for f in TET_FACES] for t in tets]
    tri_edges = [[edge_index[(t[i], t[j])] for i, j in TRI_EDGES] for t in triangles]

    tri_tets = [[] for _ in triangles]
    edge_tets = [[] for _ in edges]
    for k, (es, fs) in enumerate(zip(tet_edges, tet_tris)):
        for f in fs:
            tri_tets[f].append(k)
        for e in es:
            edge_tets[e].append(k)
    edge_tris = [[] for _ in edges]
    for t, es in enumerate(tri_edges):
        for e in es:
            edge_tris[e].append(t)
    vert_edges = [[] for _ in range(n_vert)]
    for e, (u, v) in enumerate(edges):
        vert_edges[u].append(e)
        vert_edges[v].append(e)

    compact = bool(tets) and all(len(c) == 2 for c in tri_tets)
    return ComplexTopology3(
        vertex_count=n_vert,
        tetrahedra=_frozen(tets, np.int64).reshape(-1, 4),
        edges=_frozen(edges, np.int64).reshape(-1, 2),
        triangles=_frozen(triangles, np.int64).reshape(-1, 3),
        tet_edges=_frozen(tet_edges, np.int64).reshape(-1, 6),
        tet_triangles=_frozen(tet_tris, np.int64).reshape(-1, 4),
        triangle_edges=_frozen(tri_edges, np.int64).reshape(-1, 3),
        triangle_tets=tuple(tuple(c) for c in tri_tets),
        edge_triangles=tuple(tuple(c) for c in edge_tris),
        edge_tets=tuple(tuple(c) for c in edge_tets),
        vertex_edges=tuple(tuple(c) for c in vert_edges),
        compact=compact,
        edge_index=edge_index,
        triangle_index=tri_index,
    )


@dataclass(frozen=True, eq=False)
class MetricAssignment:
    """Squared edge lengths (indexed by edge id) at flow time ``time``."""

    lengths_sq: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        arr = np.array(self.lengths_sq, dtype=float).reshape(-1)
        if not np.all(np.isfinite(arr) & (arr > 0)):
            raise ValueError("squared edge lengths must be finite and strictly positive")
        arr.setflags(write=False)
        object.__setattr__(self, "lengths_sq", arr)
        object.__setattr__(self, "time", float(self.time))

    @property
    def lengths(self) -> np.ndarray:
        return np.sqrt(self.lengths_sq)

    @classmethod
    def from_lengths(cls, lengths, time: float = 0.0) -> "MetricAssignment":
        lengths = np.asarray(lengths, dtype=float)
        return cls(lengths * lengths, time)

    @classmethod
    def from_mapping(cls, top: ComplexTopology3, mapping, time: float = 0.0):
        """Build from ``{"u-v": l2}`` or ``{(u, v): l2}``; every edge must be present."""
        values = np.full(top.n_edges, np.nan)
        for key, value in mapping.items():
            u, v = parse_edge_key(key) if isinstance(key, str) else sorted(key)
            try:
                values[top.edge_index[(u, v)]] = float(value)
            except KeyError:
                raise MissingEdgeLength(f"edge {u}-{v} is not an edge of the complex") from None
        missing = np.flatnonzero(np.isnan(values))
        if len(missing):
            keys = ", ".join(edge_key(*top.edges[e]) for e in missing[:5])
            raise MissingEdgeLength(f"{len(missing)} edge(s) without a length: {keys}")
        return cls(values, time)

    def as_mapping(self, top: ComplexTopology3) -> dict[str, float]:
        return {edge_key(u, v): float(x) for (u, v), x in zip(top.edges, self.lengths_sq)}


@dataclass
class ValidationReport:
    realizable: np.ndarray
    well_centered_tets: np.ndarray
    well_centered_triangles: np.ndarray
    warnings: list[str]

    @property
    def valid(self) -> bool:
        return bool(self.realizable.all())

    @property
    def well_centered(self) -> bool:
        return bool(self.well_centered_tets.all() and self.well_centered_triangles.all())

    @property
    def well_centered_fraction(self) -> float:
        n = len(self.well_centered_tets)
        return float(self.well_centered_tets.sum()) / n if n else 1.0


def validate_metric(top: ComplexTopology3, m: MetricAssignment, raise_on_error: bool = True):
    """Check realizability of every tetrahedron and flag non-well-centered simplices.

    Non-realizable tetrahedra raise :class:`NonRealizableTetrahedron` unless
    ``raise_on_error`` is false; non-well-centered simplices only produce
    warnings.
    """
    from . import geometry

    l2 = np.asarray(m.lengths_sq)
    if l2.shape != (top.n_edges,):
        raise MissingEdgeLength(
            f"metric has {l2.size} squared lengths, complex has {top.n_edges} edges"
        )
    if not np.all(np.isfinite(l2)):
        raise MissingEdgeLength("metric contains non-finite squared lengths")

    tet_l2 = l2[top.tet_edges]
    realizable = geometry.tet_realizable(tet_l2) & np.all(l2[top.tet_edges] > 0, axis=1)
    warnings = []
    bad = np.flatnonzero(~realizable)
    if len(bad):
        names = ", ".join(str(tuple(top.tetrahedra[k])) for k in bad[:5])
        if raise_on_error:
            raise NonRealizableTetrahedron(
                f"{len(bad)} tetrahedra are not realizable: {names}",
                tetrahedra=bad,
            )
        warnings.append(f"NonRealizableTetrahedron: {names}")

    tet_wc = np.zeros(top.n_tetrahedra, dtype=bool)
    if realizable.any():
        w, _ = geometry.tet_circumcenter_barycentric(tet_l2[realizable])
        tet_wc[realizable] = np.all(w > 0, axis=1)
    tri_l2 = l2[top.triangle_edges]
    tri_wc = np.all(geometry.triangle_cos_opposite(tri_l2) > 0, axis=1)
    if not tet_wc[realizable].all():
        warnings.append(
            f"NonWellCentered: {int((~tet_wc[realizable]).sum())} tetrahedra"
        )
    if not tri_wc.all():
        warnings.append(f"NonWellCentered: {int((~tri_wc).sum())} triangles")
    return ValidationReport(realizable, tet_wc, tri_wc, warnings)


# -- mesh JSON ---------------------------------------------------------------

def mesh_to_dict(top: ComplexTopology3, m: MetricAssignment) -> dict:
    return {
        "dimension": 3,
        "tetrahedra": [[int(v) for v in t] for t in top.tetrahedra],
        "lengths_sq": m.as_mapping(top),
    }


def mesh_from_dict(data) -> tuple[ComplexTopology3, MetricAssignment]:
    if not isinstance(data, dict):
        raise MeshFormatError("mesh JSON must be an object")
    unknown = set(data) - {"dimension", "tetrahedra", "lengths_sq"}
    if unknown:
        raise MeshFormatError(f"unknown keys in mesh JSON: {sorted(unknown)}")
    if data.get("dimension") != 3:
        raise MeshFormatError(f"dimension must be 3, got {data.get('dimension')!r}")
    if not isinstance(data.get("tetrahedra"), list) or not isinstance(data.get("lengths_sq"), dict):
        raise MeshFormatError("mesh JSON needs a 'tetrahedra' list and a 'lengths_sq' object")
    top = build_complex(data["tetrahedra"])
    for key, value in data["lengths_sq"].items():
        if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
            raise MeshFormatError(f"length for edge {key!r} is not a finite number")
    return top, MetricAssignment.from_mapping(top, data["lengths_sq"])


def dumps_mesh(top: ComplexTopology3, m: MetricAssignment) -> str:
    # json writes floats with repr(), the shortest round-tripping decimal
    return json.dumps(mesh_to_dict(top, m), indent=1)


def save_mesh(path, top: ComplexTopology3, m: MetricAssignment) -> None:
    Path(path).write_text(dumps_mesh(top, m) + "\n", encoding="utf-8")


def load_mesh(path) -> tuple[ComplexTopology3, MetricAssignment]:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MeshFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return mesh_from_dict(data)
