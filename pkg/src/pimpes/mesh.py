"""Conforming 2D triangular meshes with globally oriented edge normals.

Each edge carries one normal-flux degree of freedom. The global normal of an
interior edge points from the lower-indexed adjacent cell to the higher one;
boundary normals point outward. Local edge ``i`` of a cell is the edge opposite
its local vertex ``i``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

INTERIOR = 0
DIRICHLET = 1
NEUMANN = 2


class MeshError(ValueError):
    """Invalid mesh geometry or topology."""


class BoundaryConfigError(ValueError):
    """Boundary tags that do not cover the boundary exactly once."""


@dataclass(frozen=True)
class BoundaryTag:
    """Boundary condition attached to a set of boundary edges.

    ``kind`` is ``"dirichlet"`` or ``"neumann"``. Dirichlet edges prescribe
    the wetting pressure ``p_w`` (Pa) and optionally ``p_n``; when ``p_n`` is
    None the non-wetting boundary pressure follows ``p_w + p_c`` of the
    adjacent cell, so no capillary end effect is imposed. Neumann edges
    prescribe the outward total normal flux, either as a flux density ``flux``
    (m/s) or as a total injection ``rate`` (m^3/s per unit thickness, positive
    into the domain) spread uniformly over the tagged edges. ``s_w`` is the
    wetting saturation of fluid entering through the edge.
    """

    kind: str
    p_w: float = 0.0
    p_n: Optional[float] = None
    flux: float = 0.0
    rate: Optional[float] = None
    s_w: Optional[float] = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann"):
            raise BoundaryConfigError(f"unknown boundary kind {self.kind!r}")
        if self.s_w is not None and not 0.0 <= self.s_w <= 1.0:
            raise BoundaryConfigError(f"boundary s_w={self.s_w} outside [0, 1]")


@dataclass(frozen=True)
class BoundaryData:
    """Per-edge boundary arrays; interior edges hold kind INTERIOR."""

    kind: np.ndarray
    p_w: np.ndarray
    p_n: np.ndarray  # nan where derived from p_w + p_c
    flux: np.ndarray  # outward total normal flux density on Neumann edges
    s_w: np.ndarray  # nan where no inflow saturation is given
    names: tuple = ()

    @property
    def dirichlet(self) -> np.ndarray:
        return np.flatnonzero(self.kind == DIRICHLET)

    @property
    def neumann(self) -> np.ndarray:
        return np.flatnonzero(self.kind == NEUMANN)

    @property
    def has_dirichlet(self) -> bool:
        return bool(np.any(self.kind == DIRICHLET))


@dataclass(frozen=True)
class Geometry:
    cell_area: np.ndarray
    centroid: np.ndarray
    h_cell: np.ndarray
    edge_length: np.ndarray
    edge_mid: np.ndarray
    normal: np.ndarray

    @property
    def h(self) -> float:
        return float(self.h_cell.min())


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray  # (nv, 2)
    cells: np.ndarray  # (nc, 3), counterclockwise
    edges: np.ndarray  # (ne, 2) vertex indices
    edge_cells: np.ndarray  # (ne, 2); second entry -1 on the boundary
    cell_edges: np.ndarray  # (nc, 3); local edge i is opposite local vertex i
    cell_signs: np.ndarray  # (nc, 3); +1 iff the global normal leaves the cell
    normals: np.ndarray  # (ne, 2) global unit normal per edge
    boundary: Optional[BoundaryData] = field(default=None)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @cached_property
    def is_boundary_edge(self) -> np.ndarray:
        return self.edge_cells[:, 1] < 0

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.is_boundary_edge)

    @cached_property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(~self.is_boundary_edge)

    @cached_property
    def geom(self) -> Geometry:
        return geometry(self)


def _signed_areas(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    p0, p1, p2 = (vertices[cells[:, k]] for k in range(3))
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


def mesh_from_arrays(vertices, cells) -> Mesh:
    """Build edge connectivity and orientation for a triangle soup.

    Clockwise cells are reordered to counterclockwise; degenerate cells and
    non-conforming edges (shared by more than two cells) are rejected.
    """
    vertices = np.ascontiguousarray(vertices, dtype=float)
    cells = np.array(cells, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("vertices must have shape (n, 2)")
    if cells.ndim != 2 or cells.shape[1] != 3 or len(cells) == 0:
        raise MeshError("cells must have shape (m, 3) with m >= 1")
    if cells.min() < 0 or cells.max() >= len(vertices):
        raise MeshError("cell vertex index out of range")

    area = _signed_areas(vertices, cells)
    scale = np.ptp(vertices, axis=0).max() ** 2 or 1.0
    bad = np.flatnonzero(np.abs(area) <= 1e-14 * scale)
    if bad.size:
        raise MeshError(f"degenerate (zero-area) cell {int(bad[0])}")
    cw = area < 0
    cells[cw] = cells[cw][:, [0, 2, 1]]

    nc = len(cells)
    # local edge i joins the two vertices other than vertex i
    local = np.stack([cells[:, [1, 2]], cells[:, [2, 0]], cells[:, [0, 1]]], axis=1)
    keys = np.sort(local.reshape(-1, 2), axis=1)
    uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if np.any(counts > 2):
        raise MeshError("non-conforming mesh: edge shared by more than two cells")

    ne = len(uniq)
    cell_edges = inverse.reshape(nc, 3)
    owner = np.repeat(np.arange(nc), 3)
    edge_cells = np.full((ne, 2), -1, dtype=np.int64)
    # cells are visited in increasing index order, so the first hit is K_i
    order = np.argsort(inverse, kind="stable")
    first = np.ones(len(order), dtype=bool)
    first[1:] = inverse[order][1:] != inverse[order][:-1]
    edge_cells[inverse[order][first], 0] = owner[order][first]
    edge_cells[inverse[order][~first], 1] = owner[order][~first]

    # outward normal of K_i on the edge, taken from its local edge direction
    a = local.reshape(-1, 2)[:, 0]
    b = local.reshape(-1, 2)[:, 1]
    d = vertices[b] - vertices[a]
    out = np.stack([d[:, 1], -d[:, 0]], axis=1)
    out /= np.linalg.norm(out, axis=1)[:, None]
    normals = np.empty((ne, 2))
    normals[inverse[order][first]] = out[order][first]

    cell_signs = np.where(edge_cells[cell_edges, 0] == np.arange(nc)[:, None], 1, -1)
    return Mesh(
        vertices=vertices,
        cells=cells,
        edges=uniq.astype(np.int64),
        edge_cells=edge_cells,
        cell_edges=cell_edges.astype(np.int64),
        cell_signs=cell_signs.astype(np.int64),
        normals=normals,
    )


def build_structured_triangulation(nx: int, ny: int, lx: float, ly: float) -> Mesh:
    """Split ``[0, lx] x [0, ly]`` into ``nx * ny`` rectangles, each cut along
    its bottom-left to top-right diagonal."""
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError(f"cell counts must be positive integers, got {nx}x{ny}")
    if not (lx > 0 and ly > 0):
        raise MeshError(f"domain lengths must be positive, got {lx}x{ly}")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    a = (j * (nx + 1) + i).ravel()
    b, c, d = a + 1, a + nx + 2, a + nx + 1
    cells = np.empty((2 * nx * ny, 3), dtype=np.int64)
    cells[0::2] = np.column_stack([a, b, c])
    cells[1::2] = np.column_stack([a, c, d])
    return mesh_from_arrays(vertices, cells)


def geometry(mesh: Mesh) -> Geometry:
    """Cell areas (shoelace), centroids, diameters and edge data."""
    v = mesh.vertices
    area = _signed_areas(v, mesh.cells)
    if np.any(area <= 0):
        raise MeshError(f"degenerate cell {int(np.flatnonzero(area <= 0)[0])}")
    centroid = v[mesh.cells].mean(axis=1)
    ev = v[mesh.edges]
    length = np.linalg.norm(ev[:, 1] - ev[:, 0], axis=1)
    if np.any(length <= 0):
        raise MeshError("zero-length edge")
    mid = ev.mean(axis=1)
    h_cell = length[mesh.cell_edges].max(axis=1)
    return Geometry(area, centroid, h_cell, length, mid, mesh.normals)


def h_min(mesh: Mesh) -> float:
    return mesh.geom.h


EdgePredicate = Callable[[np.ndarray], np.ndarray]


def tag_boundary(mesh: Mesh, spec: Sequence[tuple]) -> Mesh:
    """Attach boundary conditions.

    ``spec`` is a sequence of ``(predicate, BoundaryTag)`` pairs. A predicate
    receives the ``(k, 2)`` midpoints of the boundary edges and returns a
    boolean mask. Each boundary edge must be selected by exactly one
    predicate.
    """
    bnd = mesh.boundary_edges
    mids = mesh.geom.edge_mid[bnd]
    hits = np.zeros(len(bnd), dtype=int)
    ne = mesh.n_edges
    kind = np.zeros(ne, dtype=np.int64)
    p_w = np.zeros(ne)
    p_n = np.full(ne, np.nan)
    flux = np.zeros(ne)
    s_w = np.full(ne, np.nan)
    names = [""] * ne

    for predicate, tag in spec:
        mask = np.asarray(predicate(mids), dtype=bool)
        if mask.shape != (len(bnd),):
            raise BoundaryConfigError("predicate must return one flag per boundary edge")
        hits += mask
        sel = bnd[mask]
        if tag.kind == "dirichlet":
            kind[sel] = DIRICHLET
            p_w[sel] = tag.p_w
            if tag.p_n is not None:
                p_n[sel] = tag.p_n
        else:
            kind[sel] = NEUMANN
            if tag.rate is not None:
                total = mesh.geom.edge_length[sel].sum()
                if total <= 0:
                    raise BoundaryConfigError(
                        f"boundary {tag.name or 'segment'} with a rate selects no edges")
                flux[sel] = -tag.rate / total
            else:
                flux[sel] = tag.flux
        if tag.s_w is not None:
            s_w[sel] = tag.s_w
        for e in sel:
            names[e] = tag.name

    for count, what in ((0, "not covered"), (2, "covered more than once")):
        bad = np.flatnonzero(hits == 0) if count == 0 else np.flatnonzero(hits >= 2)
        if bad.size:
            x, y = mids[bad[0]]
            raise BoundaryConfigError(
                f"boundary edge with midpoint ({x:.6g}, {y:.6g}) is {what}")

    inflow = (kind == NEUMANN) & (flux < 0) & np.isnan(s_w)
    if np.any(inflow):
        x, y = mesh.geom.edge_mid[np.flatnonzero(inflow)[0]]
        raise BoundaryConfigError(
            f"inflow edge at ({x:.6g}, {y:.6g}) lacks an inflow saturation s_w")

    data = BoundaryData(kind, p_w, p_n, flux, s_w, tuple(names))
    return dataclasses.replace(mesh, boundary=data)


def no_flow(mesh: Mesh) -> Mesh:
    """Tag every boundary edge impermeable."""
    return tag_boundary(mesh, [(lambda m: np.ones(len(m), bool), BoundaryTag("neumann", name="wall"))])


# --- text mesh format -------------------------------------------------------

def read_mesh(path) -> tuple[Mesh, list[tuple[str, float, float]]]:
    """Read the whitespace text format.

    ``V n`` followed by ``n`` vertex lines, ``C m`` followed by ``m`` cell
    lines (0-based), and optional ``T <tag> <x> <y>`` records naming the
    boundary edge whose midpoint is ``(x, y)``. Returns the mesh and the tag
    records.
    """
    tokens: list[list[str]] = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            tokens.append(line.split())
    vertices: list = []
    cells: list = []
    tags: list = []
    k = 0
    try:
        while k < len(tokens):
            head = tokens[k]
            if head[0] == "V":
                n = int(head[1])
                vertices = [[float(t) for t in tokens[k + 1 + r][:2]] for r in range(n)]
                k += n + 1
            elif head[0] == "C":
                n = int(head[1])
                cells = [[int(t) for t in tokens[k + 1 + r][:3]] for r in range(n)]
                k += n + 1
            elif head[0] == "T":
                tags.append((head[1], float(head[2]), float(head[3])))
                k += 1
            else:
                raise MeshError(f"unexpected record {head[0]!r}")
    except (IndexError, ValueError) as exc:
        raise MeshError(f"malformed mesh file {path}: {exc}") from exc
    return mesh_from_arrays(np.array(vertices), np.array(cells)), tags


def write_mesh(mesh: Mesh, path, tags: Iterable[tuple[str, float, float]] = ()) -> None:
    lines = [f"V {mesh.n_vertices}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines.append(f"C {mesh.n_cells}")
    lines += [" ".join(str(int(i)) for i in c) for c in mesh.cells]
    lines += [f"T {t} {float(x):.17g} {float(y):.17g}" for t, x, y in tags]
    Path(path).write_text("\n".join(lines) + "\n")


def tag_predicate(tag_records, name: str, tol: float = 1e-9) -> EdgePredicate:
    """Predicate selecting boundary edges whose midpoint matches a ``T`` record."""
    pts = np.array([(x, y) for t, x, y in tag_records if t == name]).reshape(-1, 2)

    def predicate(mid: np.ndarray) -> np.ndarray:
        if len(pts) == 0:
            return np.zeros(len(mid), bool)
        d = np.linalg.norm(mid[:, None, :] - pts[None, :, :], axis=2)
        return (d <= tol * max(1.0, np.abs(mid).max())).any(axis=1)

    return predicate
