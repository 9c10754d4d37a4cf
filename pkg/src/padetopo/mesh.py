"""Constant-element boundary meshes of rigid scatterers.

Conventions
-----------
Every loop is traversed counter-clockwise around the rigid region it
encloses, so the rigid material lies to the left of the tangent ``t`` and
the left normal ``n = (-t_y, t_x)`` points from the fluid into the rigid
body. Consequently the signed (shoelace) area of every loop is positive.
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)

__all__ = [
    "BoundaryMesh",
    "MeshDiagnostics",
    "DegenerateCellWarning",
    "build_circle",
    "build_polygon",
    "build_rectangle",
    "concatenate",
    "validate",
    "marching_squares",
    "extract_contour",
    "resample_loop",
]


class DegenerateCellWarning(RuntimeWarning):
    """Emitted when a sampled cell is flat at the zero level."""


@dataclass(frozen=True)
class BoundaryMesh:
    """Closed polygonal boundaries discretised into straight constant elements.

    Parameters
    ----------
    start, end : (N, 2) arrays
        Element end points, ordered along each loop.
    loops : list of (first, stop) index pairs
        Element ranges forming closed curves.
    """

    start: np.ndarray
    end: np.ndarray
    loops: list = field(default_factory=list)

    def __post_init__(self):
        s = np.asarray(self.start, dtype=float).reshape(-1, 2)
        e = np.asarray(self.end, dtype=float).reshape(-1, 2)
        if s.shape != e.shape:
            raise ValueError("start and end arrays differ in shape")
        object.__setattr__(self, "start", s)
        object.__setattr__(self, "end", e)
        object.__setattr__(self, "loops", [tuple(map(int, lp)) for lp in self.loops])
        d = e - s
        length = np.hypot(d[:, 0], d[:, 1])
        if np.any(length <= 0):
            raise ValueError("boundary elements must have positive length")
        t = d / length[:, None] if len(length) else d
        object.__setattr__(self, "length", length)
        object.__setattr__(self, "tangent", t)
        object.__setattr__(self, "normal", np.column_stack([-t[:, 1], t[:, 0]]) if len(length) else d)
        object.__setattr__(self, "midpoint", 0.5 * (s + e))

    # ------------------------------------------------------------------
    @property
    def n_elements(self) -> int:
        return self.start.shape[0]

    def __len__(self) -> int:
        return self.n_elements

    @property
    def loop_ids(self) -> np.ndarray:
        ids = np.empty(self.n_elements, dtype=int)
        for k, (a, b) in enumerate(self.loops):
            ids[a:b] = k
        return ids

    def signed_areas(self) -> np.ndarray:
        """Shoelace area of each loop (positive for the CCW convention)."""
        cross = self.start[:, 0] * self.end[:, 1] - self.end[:, 0] * self.start[:, 1]
        return np.array([0.5 * cross[a:b].sum() for a, b in self.loops])

    def perimeter(self) -> float:
        return float(self.length.sum())

    def distance_to(self, points) -> np.ndarray:
        """Euclidean distance from each point to the nearest element."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        if self.n_elements == 0:
            return np.full(p.shape[0], np.inf)
        d = self.end - self.start
        rel = p[:, None, :] - self.start[None, :, :]
        tau = np.clip(np.einsum("pnk,nk->pn", rel, d) / self.length**2, 0.0, 1.0)
        diff = rel - tau[..., None] * d[None]
        return np.sqrt((diff**2).sum(-1)).min(axis=1)

    def contains(self, points) -> np.ndarray:
        """True for points inside a rigid region (even-odd ray casting)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.zeros(p.shape[0], dtype=bool)
        if self.n_elements == 0:
            return inside
        x, y = p[:, 0:1], p[:, 1:2]
        x1, y1 = self.start[:, 0], self.start[:, 1]
        x2, y2 = self.end[:, 0], self.end[:, 1]
        straddle = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        hits = straddle & (x < xc)
        return (hits.sum(axis=1) % 2) == 1

    def reversed(self) -> "BoundaryMesh":
        """Same geometry with every loop traversed backwards (normals flipped)."""
        s, e = [], []
        for a, b in self.loops:
            s.append(self.end[a:b][::-1])
            e.append(self.start[a:b][::-1])
        return BoundaryMesh(np.vstack(s) if s else self.start, np.vstack(e) if e else self.end, self.loops)

    # I/O ---------------------------------------------------------------
    def to_csv(self, path) -> None:
        ids = self.loop_ids
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "y1", "x2", "y2", "nx", "ny", "loop_id"])
            for k in range(self.n_elements):
                w.writerow([repr(float(v)) for v in (*self.start[k], *self.end[k], *self.normal[k])] + [int(ids[k])])

    @classmethod
    def from_csv(cls, path) -> "BoundaryMesh":
        rows = list(csv.DictReader(open(path, newline="")))
        if not rows:
            return empty_mesh()
        start = np.array([[float(r["x1"]), float(r["y1"])] for r in rows])
        end = np.array([[float(r["x2"]), float(r["y2"])] for r in rows])
        ids = np.array([int(r["loop_id"]) for r in rows])
        loops = []
        a = 0
        for k in range(1, len(ids) + 1):
            if k == len(ids) or ids[k] != ids[a]:
                loops.append((a, k))
                a = k
        return cls(start, end, loops)


def empty_mesh() -> BoundaryMesh:
    return BoundaryMesh(np.zeros((0, 2)), np.zeros((0, 2)), [])


def build_polygon(vertices) -> BoundaryMesh:
    """Single closed loop through ``vertices``; reoriented to CCW if needed."""
    v = np.asarray(vertices, dtype=float)
    if v.shape[0] < 3:
        raise ValueError("a polygon needs at least three vertices")
    if np.allclose(v[0], v[-1]):
        v = v[:-1]
    area = 0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
    if area < 0:
        v = v[::-1]
    return BoundaryMesh(v, np.roll(v, -1, axis=0), [(0, v.shape[0])])


def build_circle(center, radius: float, n_elem: int) -> BoundaryMesh:
    """Regular ``n_elem``-gon inscribed in a circle, normals into the disc."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if n_elem < 3:
        raise ValueError("need at least three elements")
    theta = 2.0 * np.pi * np.arange(n_elem) / n_elem
    v = np.asarray(center, dtype=float) + radius * np.column_stack([np.cos(theta), np.sin(theta)])
    return BoundaryMesh(v, np.roll(v, -1, axis=0), [(0, n_elem)])


def build_rectangle(lower, upper, h: float) -> BoundaryMesh:
    """Axis-aligned rectangle with elements of length close to ``h``."""
    (x0, y0), (x1, y1) = lower, upper
    corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)
    pts = []
    for k in range(4):
        a, b = corners[k], corners[(k + 1) % 4]
        n = max(1, int(np.ceil(np.linalg.norm(b - a) / h)))
        t = np.arange(n)[:, None] / n
        pts.append(a + t * (b - a))
    return build_polygon(np.vstack(pts))


def concatenate(meshes: Sequence[BoundaryMesh]) -> BoundaryMesh:
    """Merge meshes; loop ranges are shifted accordingly."""
    meshes = [m for m in meshes if m.n_elements]
    if not meshes:
        return empty_mesh()
    loops, off = [], 0
    for m in meshes:
        loops += [(a + off, b + off) for a, b in m.loops]
        off += m.n_elements
    return BoundaryMesh(np.vstack([m.start for m in meshes]), np.vstack([m.end for m in meshes]), loops)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

@dataclass
class MeshDiagnostics:
    closed: bool
    loop_areas: np.ndarray
    misoriented_loops: list
    min_length: float
    max_length: float
    near_duplicates: int
    proximity_pairs: list

    @property
    def ok(self) -> bool:
        return (self.closed and not self.misoriented_loops and self.near_duplicates == 0
                and not self.proximity_pairs)


def validate(mesh: BoundaryMesh, tol: float = 1e-12) -> MeshDiagnostics:
    """Check closure, orientation, element sizes and loop proximity."""
    closed = True
    for a, b in mesh.loops:
        if np.any(np.linalg.norm(mesh.end[a:b - 1] - mesh.start[a + 1:b], axis=1) > tol):
            closed = False
        if np.linalg.norm(mesh.end[b - 1] - mesh.start[a]) > tol:
            closed = False
    areas = mesh.signed_areas() if mesh.loops else np.zeros(0)
    bad = [k for k, A in enumerate(areas) if A <= 0]
    if mesh.n_elements == 0:
        return MeshDiagnostics(True, areas, bad, 0.0, 0.0, 0, [])
    hmin, hmax = float(mesh.length.min()), float(mesh.length.max())
    tree = cKDTree(mesh.midpoint)
    dup = len(tree.query_pairs(1e-10 * max(hmax, 1.0)))
    prox = set()
    ids = mesh.loop_ids
    if len(mesh.loops) > 1:
        verts = np.vstack([mesh.start, mesh.midpoint])
        vid = np.concatenate([ids, ids])
        for i, j in cKDTree(verts).query_pairs(hmin):
            if vid[i] != vid[j]:
                prox.add((min(vid[i], vid[j]), max(vid[i], vid[j])))
    diag = MeshDiagnostics(closed, areas, bad, hmin, hmax, dup, sorted(prox))
    if bad:
        log.warning("loops with reversed orientation: %s", bad)
    if prox:
        log.warning("loops closer than the minimum element length: %s", sorted(prox))
    return diag


# ---------------------------------------------------------------------------
# level-set contouring
# ---------------------------------------------------------------------------

def marching_squares(xs: np.ndarray, ys: np.ndarray, values: np.ndarray) -> list[np.ndarray]:
    """Closed polylines of the zero level of gridded samples.

    ``values[i, j]`` is sampled at ``(xs[i], ys[j])``. Each returned loop is an
    ``(n, 2)`` vertex array (not repeated at the end) that keeps the negative
    region on its left. Open curves cannot occur as long as every sample on
    the grid border is positive. Saddle cells are resolved with the sign of
    the bilinear value at the cell centre.
    """
    v = np.array(values, dtype=float)
    flat = np.abs(v) < 1e-14
    if flat.any():
        cells = flat[:-1, :-1] & flat[1:, :-1] & flat[1:, 1:] & flat[:-1, 1:]
        if cells.any():
            warnings.warn(f"{int(cells.sum())} cells flat at the zero level; perturbing",
                          DegenerateCellWarning, stacklevel=2)
        v[flat] = 1e-14
    nx, ny = v.shape
    neg = v < 0
    # corners 0:(i,j) 1:(i+1,j) 2:(i+1,j+1) 3:(i,j+1); edge k joins corner k and k+1
    c = [neg[:-1, :-1], neg[1:, :-1], neg[1:, 1:], neg[:-1, 1:]]
    case = c[0] * 1 + c[1] * 2 + c[2] * 4 + c[3] * 8
    I, J = np.nonzero((case > 0) & (case < 15))
    if I.size == 0:
        return []
    centre = 0.25 * (v[:-1, :-1] + v[1:, :-1] + v[1:, 1:] + v[:-1, 1:])

    def edge_key(i, j, k):
        # horizontal edges ('h', i, j) join (i,j)-(i+1,j); vertical ('v', i, j) join (i,j)-(i,j+1)
        if k == 0:
            return (0, i, j)
        if k == 1:
            return (1, i + 1, j)
        if k == 2:
            return (0, i, j + 1)
        return (1, i, j)

    def edge_point(key):
        kind, i, j = key
        if kind == 0:
            a, b = v[i, j], v[i + 1, j]
            t = a / (a - b)
            return (xs[i] + t * (xs[i + 1] - xs[i]), ys[j])
        a, b = v[i, j], v[i, j + 1]
        t = a / (a - b)
        return (xs[i], ys[j] + t * (ys[j + 1] - ys[j]))

    nxt = {}
    for i, j in zip(I.tolist(), J.tolist()):
        sgn = [bool(cc[i, j]) for cc in c]
        exits = [k for k in range(4) if sgn[k] and not sgn[(k + 1) % 4]]
        entries = [k for k in range(4) if not sgn[k] and sgn[(k + 1) % 4]]
        if len(exits) == 1:
            pairs = [(exits[0], entries[0])]
        else:
            # saddle: the negative corners are diagonal
            negs = [k for k in range(4) if sgn[k]]
            if centre[i, j] < 0:
                # negatives connected; cut off each positive corner p: exit e_{p-1} -> entry e_p
                poss = [k for k in range(4) if not sgn[k]]
                pairs = [((p - 1) % 4, p) for p in poss]
            else:
                pairs = [(k, (k - 1) % 4) for k in negs]
        for a, b in pairs:
            nxt[edge_key(i, j, a)] = edge_key(i, j, b)

    loops = []
    seen = set()
    for k0 in nxt:
        if k0 in seen:
            continue
        pts, k = [], k0
        while k not in seen:
            seen.add(k)
            pts.append(edge_point(k))
            k = nxt.get(k)
            if k is None:
                raise RuntimeError("open contour: the grid border must be positive")
        loops.append(np.array(pts))
    return loops


def resample_loop(vertices: np.ndarray, h: float, min_elements: int = 3) -> np.ndarray:
    """Redistribute a closed polyline into near-uniform chords of length ~h."""
    v = np.asarray(vertices, dtype=float)
    seg = np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)
    keep = seg > 1e-12 * max(seg.max(), 1e-300)
    v, seg = v[keep], seg[keep]
    s = np.concatenate([[0.0], np.cumsum(seg)])
    per = s[-1]
    n = max(min_elements, int(np.ceil(per / h)))
    t = np.arange(n) * per / n
    closed = np.vstack([v, v[:1]])
    return np.column_stack([np.interp(t, s, closed[:, 0]), np.interp(t, s, closed[:, 1])])


def extract_contour(levelset, grid, element_size: float | None = None,
                    min_elements: int = 6, min_perimeter_cells: float = 2.0) -> BoundaryMesh:
    """Boundary mesh of the rigid region ``{phi < 0}`` of a level-set field.

    Parameters
    ----------
    levelset : callable or object with ``evaluate(x, y)`` and ``domain``
        The field; ``domain = ((x0, y0), (x1, y1))`` bounds the design domain.
    grid : int or (int, int)
        Number of samples per direction.
    element_size : float, optional
        Target element length; defaults to the grid spacing.
    min_elements, min_perimeter_cells : minimum-feature filter; loops with
        fewer elements or a perimeter below this many grid cells are dropped.

    Notes
    -----
    The sampled field is clamped to ``max(phi, h/2 - dist(x, boundary of D))`` so
    rigid regions touching the domain border are closed half a cell inside it.
    """
    evaluate: Callable = getattr(levelset, "evaluate", levelset)
    (x0, y0), (x1, y1) = levelset.domain
    nx, ny = (grid, grid) if np.isscalar(grid) else grid
    xs = np.linspace(x0, x1, int(nx))
    ys = np.linspace(y0, y1, int(ny))
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    phi = np.asarray(evaluate(X, Y), dtype=float)
    hcell = max(xs[1] - xs[0], ys[1] - ys[0])
    wall = np.minimum.reduce([X - x0, x1 - X, Y - y0, y1 - Y])
    phi = np.maximum(phi, 0.5 * hcell - wall)
    loops = marching_squares(xs, ys, phi)
    h = element_size or hcell
    starts, ends, ranges, off = [], [], [], 0
    for lp in loops:
        per = np.sum(np.linalg.norm(np.roll(lp, -1, axis=0) - lp, axis=1))
        if per < min_perimeter_cells * hcell:
            continue
        pts = resample_loop(lp, h)
        if pts.shape[0] < min_elements:
            continue
        starts.append(pts)
        ends.append(np.roll(pts, -1, axis=0))
        ranges.append((off, off + pts.shape[0]))
        off += pts.shape[0]
    if not starts:
        return empty_mesh()
    return BoundaryMesh(np.vstack(starts), np.vstack(ends), ranges)
