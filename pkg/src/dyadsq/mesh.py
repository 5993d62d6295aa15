"""Dyadic meshes and piecewise-constant function calculus.

A :class:`DyadicMesh` bisects a root cube ``depth`` times along every axis;
the ``2^(n*depth)`` finest cells tile it exactly and every dyadic subcube is
addressable as a :class:`Cube` (level plus per-axis integer coordinates).
Functions are piecewise constant on the finest cells, so integrals over
dyadic cubes -- and over arbitrary axis-aligned boxes, via partial overlaps --
are exact up to float rounding.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Cube",
    "DyadicMesh",
    "GridFunction",
    "build_mesh",
    "children",
    "integrate",
    "lp_norm",
    "weak_lp_norm",
    "distribution",
    "box_integral",
    "box_measure",
    "resample",
]

MAX_DEPTH = {1: 24, 2: 12}


def _is_power_of_two(x: float) -> bool:
    if x <= 0 or not math.isfinite(x):
        return False
    mantissa, _ = math.frexp(x)
    return mantissa == 0.5


def ceil_index(q: float) -> int:
    """Smallest integer >= q, snapping values within ~1e-12 relative of an integer.

    Guards threshold indices of the form t / cell_measure against float
    noise; always returns at least 1.
    """
    k = math.ceil(q * (1.0 - 1e-12) - 1e-15)
    return max(k, 1)


@dataclass(frozen=True)
class Cube:
    """Dyadic subcube address: refinement level and per-axis coordinates."""

    level: int
    coords: tuple[int, ...]

    def address(self) -> dict:
        return {"level": self.level, "coords": list(self.coords)}

    @staticmethod
    def from_address(d: dict) -> "Cube":
        return Cube(int(d["level"]), tuple(int(c) for c in d["coords"]))


class DyadicMesh:
    """Uniform dyadic refinement of a root cube in dimension 1 or 2."""

    def __init__(self, n: int, corner, side: float, depth: int):
        if n not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {n}")
        if not _is_power_of_two(side):
            raise ValueError(f"root side must be a power of 2, got {side}")
        if not (1 <= depth <= MAX_DEPTH[n]):
            raise ValueError(
                f"depth must be in [1, {MAX_DEPTH[n]}] for dimension {n}, got {depth}"
            )
        corner = np.atleast_1d(np.asarray(corner, dtype=float))
        if corner.shape != (n,):
            raise ValueError(f"corner must have {n} components, got shape {corner.shape}")
        self.n = n
        self.corner = corner
        self.corner.setflags(write=False)
        self.side = float(side)
        self.depth = int(depth)

    # -- geometry -----------------------------------------------------------

    @property
    def cells_per_axis(self) -> int:
        return 1 << self.depth

    @property
    def num_cells(self) -> int:
        return 1 << (self.n * self.depth)

    @property
    def cell_side(self) -> float:
        return self.side / self.cells_per_axis

    @property
    def cell_measure(self) -> float:
        return self.cell_side ** self.n

    def root_cube(self) -> Cube:
        return Cube(0, (0,) * self.n)

    def root_box(self) -> np.ndarray:
        lo = self.corner
        return np.stack([lo, lo + self.side], axis=1)

    def check_cube(self, cube: Cube) -> None:
        if not (0 <= cube.level <= self.depth):
            raise ValueError(f"cube level {cube.level} outside [0, {self.depth}]")
        if len(cube.coords) != self.n:
            raise ValueError("cube coordinate count does not match mesh dimension")
        top = 1 << cube.level
        if any(not (0 <= c < top) for c in cube.coords):
            raise ValueError(f"cube coords {cube.coords} outside [0, {top})")

    def side_of(self, cube: Cube) -> float:
        return self.side / (1 << cube.level)

    def measure_of(self, cube: Cube) -> float:
        return self.side_of(cube) ** self.n

    def cube_box(self, cube: Cube) -> np.ndarray:
        """Axis-aligned box [lo, hi) of the cube, shape (n, 2)."""
        h = self.side_of(cube)
        lo = self.corner + h * np.asarray(cube.coords, dtype=float)
        return np.stack([lo, lo + h], axis=1)

    def children(self, cube: Cube) -> list[Cube]:
        self.check_cube(cube)
        if cube.level >= self.depth:
            raise ValueError("finest-level cube has no children")
        out = []
        if self.n == 1:
            (c0,) = cube.coords
            for b in (0, 1):
                out.append(Cube(cube.level + 1, (2 * c0 + b,)))
        else:
            c0, c1 = cube.coords
            for b0 in (0, 1):
                for b1 in (0, 1):
                    out.append(Cube(cube.level + 1, (2 * c0 + b0, 2 * c1 + b1)))
        return out

    def cell_ranges(self, cube: Cube) -> tuple[tuple[int, int], ...]:
        """Per-axis half-open finest-cell index ranges covered by the cube."""
        w = 1 << (self.depth - cube.level)
        return tuple((c * w, (c + 1) * w) for c in cube.coords)

    def cell_indices(self, cube: Cube) -> np.ndarray:
        """Flat indices (row-major) of the finest cells inside the cube."""
        ranges = self.cell_ranges(cube)
        if self.n == 1:
            lo, hi = ranges[0]
            return np.arange(lo, hi)
        (x0, x1), (y0, y1) = ranges
        m = self.cells_per_axis
        ix = np.arange(x0, x1)
        iy = np.arange(y0, y1)
        return (ix[:, None] * m + iy[None, :]).ravel()

    def iter_cubes(self, min_level: int = 0, max_level: int | None = None):
        """All dyadic cubes, level-major then coordinate-lexicographic."""
        hi = self.depth if max_level is None else max_level
        for level in range(min_level, hi + 1):
            top = 1 << level
            if self.n == 1:
                for c in range(top):
                    yield Cube(level, (c,))
            else:
                for c0 in range(top):
                    for c1 in range(top):
                        yield Cube(level, (c0, c1))

    def descend_cubes(self, root: Cube):
        """All dyadic subcubes of ``root`` (including itself), level-major."""
        self.check_cube(root)
        for level in range(root.level, self.depth + 1):
            w = 1 << (level - root.level)
            base = tuple(c * w for c in root.coords)
            if self.n == 1:
                for c in range(w):
                    yield Cube(level, (base[0] + c,))
            else:
                for c0 in range(w):
                    for c1 in range(w):
                        yield Cube(level, (base[0] + c0, base[1] + c1))

    def cell_centers(self) -> np.ndarray:
        """Finest cell centers, shape (num_cells, n), row-major order."""
        h = self.cell_side
        axes = [self.corner[d] + h * (np.arange(self.cells_per_axis) + 0.5) for d in range(self.n)]
        if self.n == 1:
            return axes[0][:, None]
        gx, gy = np.meshgrid(axes[0], axes[1], indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def cell_edges(self, axis: int = 0) -> np.ndarray:
        return self.corner[axis] + self.cell_side * np.arange(self.cells_per_axis + 1)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "corner": [float(c) for c in self.corner],
            "side": self.side,
            "depth": self.depth,
        }

    @staticmethod
    def from_dict(d: dict) -> "DyadicMesh":
        return DyadicMesh(int(d["n"]), d["corner"], float(d["side"]), int(d["depth"]))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, DyadicMesh)
            and self.n == other.n
            and self.side == other.side
            and self.depth == other.depth
            and bool(np.all(self.corner == other.corner))
        )

    def __hash__(self):
        return hash((self.n, self.side, self.depth, tuple(self.corner)))

    def __repr__(self):
        return (
            f"DyadicMesh(n={self.n}, corner={list(self.corner)}, "
            f"side={self.side}, depth={self.depth})"
        )


class GridFunction:
    """Piecewise-constant real function on the finest cells of a mesh.

    Values are stored flat in row-major order (first axis major for n=2).
    """

    def __init__(self, mesh: DyadicMesh, values):
        values = np.asarray(values, dtype=float)
        if values.shape == (mesh.cells_per_axis,) * mesh.n:
            values = values.ravel()
        if values.shape != (mesh.num_cells,):
            raise ValueError(
                f"expected {mesh.num_cells} cell values, got shape {values.shape}"
            )
        self.mesh = mesh
        self.values = values

    @staticmethod
    def constant(mesh: DyadicMesh, c: float) -> "GridFunction":
        return GridFunction(mesh, np.full(mesh.num_cells, float(c)))

    @staticmethod
    def from_callable(mesh: DyadicMesh, fn) -> "GridFunction":
        """Sample ``fn`` at cell centers (fn takes (N, n) points, returns (N,))."""
        return GridFunction(mesh, np.asarray(fn(mesh.cell_centers()), dtype=float))

    def nd(self) -> np.ndarray:
        if self.mesh.n == 1:
            return self.values
        m = self.mesh.cells_per_axis
        return self.values.reshape(m, m)

    def cube_values(self, cube: Cube) -> np.ndarray:
        """View of the values on the finest cells inside ``cube`` (flattened)."""
        self.mesh.check_cube(cube)
        ranges = self.mesh.cell_ranges(cube)
        if self.mesh.n == 1:
            lo, hi = ranges[0]
            return self.values[lo:hi]
        (x0, x1), (y0, y1) = ranges
        return self.nd()[x0:x1, y0:y1].ravel()

    def block_matrix(self, root: Cube, level: int) -> np.ndarray:
        """Values of all level-``level`` subcubes of ``root`` as rows.

        Rows follow coordinate-lexicographic cube order; columns are the
        cells of each subcube (row-major within the subcube).
        """
        self.mesh.check_cube(root)
        if not (root.level <= level <= self.mesh.depth):
            raise ValueError("level outside root cube range")
        w = 1 << (level - root.level)
        s = 1 << (self.mesh.depth - level)
        if self.mesh.n == 1:
            return self.cube_values(root).reshape(w, s)
        block = self.cube_values(root).reshape(w * s, w * s)
        return (
            block.reshape(w, s, w, s)
            .transpose(0, 2, 1, 3)
            .reshape(w * w, s * s)
        )

    # light arithmetic helpers used throughout the test harness
    def map(self, fn) -> "GridFunction":
        return GridFunction(self.mesh, fn(self.values))

    def __abs__(self) -> "GridFunction":
        return GridFunction(self.mesh, np.abs(self.values))

    def to_dict(self) -> dict:
        return {"mesh": self.mesh.to_dict(), "values": [float(v) for v in self.values]}

    @staticmethod
    def from_dict(d: dict) -> "GridFunction":
        return GridFunction(DyadicMesh.from_dict(d["mesh"]), np.asarray(d["values"], dtype=float))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @staticmethod
    def from_json(s: str) -> "GridFunction":
        return GridFunction.from_dict(json.loads(s))


# ---------------------------------------------------------------------------
# module-level operations
# ---------------------------------------------------------------------------


def build_mesh(n: int, corner, side: float, depth: int) -> DyadicMesh:
    return DyadicMesh(n, corner, side, depth)


def children(mesh: DyadicMesh, cube: Cube) -> list[Cube]:
    return mesh.children(cube)


def integrate(f: GridFunction, cube: Cube) -> float:
    """Exact integral of the piecewise-constant ``f`` over a dyadic cube."""
    return float(f.cube_values(cube).sum()) * f.mesh.cell_measure


def lp_norm(f: GridFunction, weight: GridFunction | None, p: float) -> float:
    """(sum |f|^p w * cell_measure)^(1/p); ``weight=None`` means w == 1."""
    if p <= 0:
        raise ValueError(f"p must be positive, got {p}")
    if weight is None:
        wv = 1.0
    else:
        if weight.mesh != f.mesh:
            raise ValueError("weight lives on a different mesh")
        wv = weight.values
        if np.any(wv < 0):
            raise ValueError("weight must be nonnegative cellwise")
    total = float(np.sum(np.abs(f.values) ** p * wv)) * f.mesh.cell_measure
    return total ** (1.0 / p)


def distribution(f: GridFunction, lam: float) -> float:
    """|{x : |f(x)| > lam}|, exact for the step function."""
    return float(np.count_nonzero(np.abs(f.values) > lam)) * f.mesh.cell_measure


def weak_lp_norm(f: GridFunction, p: float) -> float:
    """Weak-type quasi-norm sup_t t * |{|f| > t}|^{1/p}, exact on the value set.

    The supremum over thresholds is attained just below a distinct value v
    of |f|, where the superlevel set is {|f| >= v}.
    """
    if p <= 0:
        raise ValueError(f"p must be positive, got {p}")
    av = np.abs(f.values)
    vals = np.unique(av)
    vals = vals[vals > 0]
    if vals.size == 0:
        return 0.0
    # |{|f| >= v}| for each distinct v, via descending sorted counts
    counts = av.size - np.searchsorted(np.sort(av), vals, side="left")
    measures = counts * f.mesh.cell_measure
    return float(np.max(vals * measures ** (1.0 / p)))


def box_measure(box) -> float:
    box = np.asarray(box, dtype=float)
    lengths = box[:, 1] - box[:, 0]
    if np.any(lengths < 0):
        return 0.0
    return float(np.prod(lengths))


def clip_box(box, bounds) -> np.ndarray | None:
    """Intersect two boxes; None when the intersection is empty."""
    box = np.asarray(box, dtype=float)
    bounds = np.asarray(bounds, dtype=float)
    lo = np.maximum(box[:, 0], bounds[:, 0])
    hi = np.minimum(box[:, 1], bounds[:, 1])
    if np.any(hi <= lo):
        return None
    return np.stack([lo, hi], axis=1)


def _axis_overlaps(mesh: DyadicMesh, axis: int, lo: float, hi: float) -> np.ndarray:
    edges = mesh.cell_edges(axis)
    left = np.maximum(edges[:-1], lo)
    right = np.minimum(edges[1:], hi)
    return np.maximum(right - left, 0.0)


def box_integral(f: GridFunction, box) -> float:
    """Exact integral of ``f`` (zero-extended outside its mesh) over a box."""
    box = np.asarray(box, dtype=float)
    if box.shape != (f.mesh.n, 2):
        raise ValueError(f"box must have shape ({f.mesh.n}, 2)")
    w0 = _axis_overlaps(f.mesh, 0, box[0, 0], box[0, 1])
    if f.mesh.n == 1:
        return float(w0 @ f.values)
    w1 = _axis_overlaps(f.mesh, 1, box[1, 0], box[1, 1])
    return float(w0 @ f.nd() @ w1)


def _axis_overlap_matrix(mesh: DyadicMesh, axis: int, target_edges: np.ndarray) -> np.ndarray:
    # overlap[i, j] = |target cell i  ∩  source cell j| along one axis
    src = mesh.cell_edges(axis)
    left = np.maximum(target_edges[:-1, None], src[None, :-1])
    right = np.minimum(target_edges[1:, None], src[None, 1:])
    return np.maximum(right - left, 0.0)


def resample(f: GridFunction, target: DyadicMesh) -> GridFunction:
    """Cell averages of ``f`` (zero-extended) on the cells of ``target``."""
    if target.n != f.mesh.n:
        raise ValueError("target mesh has a different dimension")
    w0 = _axis_overlap_matrix(f.mesh, 0, target.cell_edges(0))
    if target.n == 1:
        return GridFunction(target, (w0 @ f.values) / target.cell_side)
    w1 = _axis_overlap_matrix(f.mesh, 1, target.cell_edges(1))
    out = w0 @ f.nd() @ w1.T
    return GridFunction(target, out.ravel() / target.cell_measure)
