"""Multiple-weight systems: product weight, dual weights, the multilinear
weight characteristic, and the weighted dyadic maximal function.

Weights are either grid weights (positive piecewise-constant functions) or
analytic power weights |x|^a with closed-form box integrals; power weights
keep their analytic form under the powers taken inside the characteristic,
which is what lets the measured constant blow up near the integrability
boundary instead of being capped by the mesh resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mesh import (
    Cube,
    DyadicMesh,
    GridFunction,
    box_integral,
    box_measure,
    clip_box,
    lp_norm,
)

__all__ = [
    "conjugate_exponent",
    "GridWeight",
    "PowerWeight",
    "WeightSystem",
    "nu_w",
    "dual_weights",
    "multilinear_ap_constant",
    "dyadic_weighted_maximal",
    "multilinear_maximal",
    "maximal_bound_check",
    "holder_cell_check",
    "shifted_meshes",
    "shifted_dyadic_boxes",
]

GRID_SHIFTS_1D = (0.0, 1.0 / 3.0, -1.0 / 3.0)


def conjugate_exponent(p: float) -> float:
    if p < 1:
        raise ValueError(f"exponent must be >= 1, got {p}")
    if p == 1:
        return math.inf
    return p / (p - 1.0)


class GridWeight:
    """Positive piecewise-constant weight backed by a GridFunction."""

    def __init__(self, grid: GridFunction):
        if np.any(grid.values <= 0):
            raise ValueError("weight cells must be positive")
        self.grid = grid

    @property
    def mesh(self) -> DyadicMesh:
        return self.grid.mesh

    def as_grid(self, mesh: DyadicMesh) -> GridFunction:
        if mesh != self.mesh:
            raise ValueError("grid weight lives on a different mesh")
        return self.grid

    def power(self, beta: float) -> "GridWeight":
        return GridWeight(GridFunction(self.mesh, self.grid.values ** beta))

    def average_on(self, box) -> float:
        return box_integral(self.grid, box) / box_measure(box)

    def min_on(self, box) -> float:
        box = np.asarray(box, dtype=float)
        mesh = self.mesh
        idx = []
        for axis in range(mesh.n):
            edges = mesh.cell_edges(axis)
            lo = int(np.searchsorted(edges, box[axis, 0], side="right")) - 1
            hi = int(np.searchsorted(edges, box[axis, 1], side="left"))
            lo = max(lo, 0)
            hi = min(hi, mesh.cells_per_axis)
            if hi <= lo:
                raise ValueError("box does not meet the weight's mesh")
            idx.append((lo, hi))
        if mesh.n == 1:
            lo, hi = idx[0]
            return float(np.min(self.grid.values[lo:hi]))
        (x0, x1), (y0, y1) = idx
        return float(np.min(self.grid.nd()[x0:x1, y0:y1]))

    def to_dict(self) -> dict:
        return self.grid.to_dict()


class PowerWeight:
    """Analytic weight |x|^a with exact box integrals in 1-D.

    Integrable near the origin iff a > -n.  In 2-D the box integral has no
    closed form; boxes touching the origin are integrated by a 64x subsampled
    midpoint rule with a Richardson-style half-resolution check, others at
    16x (the integrand is smooth away from the singularity).
    """

    def __init__(self, a: float, n: int = 1):
        if n not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if a <= -n:
            raise ValueError(f"|x|^{a} is not locally integrable in dimension {n}")
        self.a = float(a)
        self.n = int(n)

    def power(self, beta: float) -> "PowerWeight":
        return PowerWeight(self.a * beta, self.n)

    def _antiderivative(self, x: float) -> float:
        # odd antiderivative of |x|^a, valid on both sides of the origin
        e = self.a + 1.0
        return math.copysign(abs(x) ** e, x) / e

    def box_int(self, box) -> float:
        box = np.asarray(box, dtype=float)
        if self.n == 1:
            return self._antiderivative(box[0, 1]) - self._antiderivative(box[0, 0])
        near = [
            0.0 if box[d, 0] <= 0.0 <= box[d, 1] else min(abs(box[d, 0]), abs(box[d, 1]))
            for d in range(2)
        ]
        touches = math.hypot(*near) == 0.0
        sub = 64 if touches else 16
        val = self._midpoint(box, sub)
        if touches:
            coarse = self._midpoint(box, sub // 2)
            if abs(val - coarse) > 0.02 * max(abs(val), 1e-300):
                # one Richardson refinement if the rule has not settled
                val = self._midpoint(box, 2 * sub)
        return val

    def _midpoint(self, box, sub: int) -> float:
        xs = np.linspace(box[0, 0], box[0, 1], sub + 1)
        ys = np.linspace(box[1, 0], box[1, 1], sub + 1)
        cx = 0.5 * (xs[:-1] + xs[1:])
        cy = 0.5 * (ys[:-1] + ys[1:])
        r2 = cx[:, None] ** 2 + cy[None, :] ** 2
        vals = r2 ** (self.a / 2.0)
        area = (xs[1] - xs[0]) * (ys[1] - ys[0])
        return float(vals.sum() * area)

    def average_on(self, box) -> float:
        return self.box_int(box) / box_measure(box)

    def min_on(self, box) -> float:
        box = np.asarray(box, dtype=float)
        # per-axis distance of the box to the origin, and farthest corner
        near = np.where(
            (box[:, 0] <= 0) & (box[:, 1] >= 0),
            0.0,
            np.minimum(np.abs(box[:, 0]), np.abs(box[:, 1])),
        )
        far = np.maximum(np.abs(box[:, 0]), np.abs(box[:, 1]))
        if self.a >= 0:
            r = float(np.sqrt(np.sum(near**2)))
        else:
            r = float(np.sqrt(np.sum(far**2)))
        if r == 0.0 and self.a > 0:
            return 0.0
        return r**self.a

    def as_grid(self, mesh: DyadicMesh) -> GridFunction:
        if mesh.n != self.n:
            raise ValueError("power weight dimension does not match mesh")
        if self.n == 1:
            edges = mesh.cell_edges(0)
            anti = np.array([self._antiderivative(x) for x in edges])
            ints = np.diff(anti)
        else:
            edges0 = mesh.cell_edges(0)
            edges1 = mesh.cell_edges(1)
            m = mesh.cells_per_axis
            ints = np.empty((m, m))
            for i in range(m):
                for j in range(m):
                    ints[i, j] = self.box_int(
                        np.array(
                            [[edges0[i], edges0[i + 1]], [edges1[j], edges1[j + 1]]]
                        )
                    )
            ints = ints.ravel()
        vals = ints / mesh.cell_measure
        if np.any(vals <= 0):
            raise ValueError("power weight produced a nonpositive cell value")
        return GridFunction(mesh, vals)

    def to_dict(self) -> dict:
        return {"kind": "power", "a": self.a}


def _as_weight(w, mesh: DyadicMesh):
    if isinstance(w, (GridWeight, PowerWeight)):
        return w
    if isinstance(w, GridFunction):
        return GridWeight(w)
    if isinstance(w, dict) and w.get("kind") == "power":
        return PowerWeight(float(w["a"]), mesh.n)
    if isinstance(w, dict):
        return GridWeight(GridFunction.from_dict(w))
    raise TypeError(f"cannot interpret {type(w)} as a weight")


class WeightSystem:
    """m weights with exponents P = (p_1, ..., p_m), 1/p = sum 1/p_i."""

    def __init__(self, mesh: DyadicMesh, weights, exponents):
        exponents = tuple(float(p) for p in exponents)
        if len(weights) != len(exponents):
            raise ValueError("weight/exponent count mismatch")
        if any(p < 1 for p in exponents):
            raise ValueError("all exponents must satisfy p_i >= 1")
        self.mesh = mesh
        self.weights = [_as_weight(w, mesh) for w in weights]
        self.exponents = exponents

    @property
    def m(self) -> int:
        return len(self.weights)

    @property
    def p(self) -> float:
        return 1.0 / sum(1.0 / p for p in self.exponents)

    def weight_grids(self) -> list[GridFunction]:
        return [w.as_grid(self.mesh) for w in self.weights]

    def nu_grid(self) -> GridFunction:
        """Cellwise product weight prod_i w_i^(p/p_i)."""
        p = self.p
        vals = np.ones(self.mesh.num_cells)
        for w, pi in zip(self.weight_grids(), self.exponents):
            vals = vals * w.values ** (p / pi)
        return GridFunction(self.mesh, vals)

    def nu_weight(self):
        """The product weight as an analytic object when every factor is one."""
        p = self.p
        if all(isinstance(w, PowerWeight) for w in self.weights):
            a = sum(w.a * p / pi for w, pi in zip(self.weights, self.exponents))
            return PowerWeight(a, self.mesh.n)
        return GridWeight(self.nu_grid())

    def dual_grids(self) -> list[GridFunction]:
        """sigma_i = w_i^(1 - p_i') cellwise; requires every p_i > 1."""
        out = []
        for w, pi in zip(self.weight_grids(), self.exponents):
            if pi == 1:
                raise ValueError("dual weight undefined for p_i = 1")
            out.append(GridFunction(self.mesh, w.values ** (1.0 - conjugate_exponent(pi))))
        return out

    def to_dict(self) -> dict:
        return {
            "exponents": list(self.exponents),
            "weights": [w.to_dict() for w in self.weights],
        }


def nu_w(system: WeightSystem) -> GridFunction:
    return system.nu_grid()


def dual_weights(system: WeightSystem) -> list[GridFunction]:
    return system.dual_grids()


def shifted_meshes(mesh: DyadicMesh) -> list[tuple[tuple[float, ...], DyadicMesh]]:
    """The base mesh plus its one-third translates per axis (3^n grids)."""
    shifts_1d = tuple(s * mesh.side for s in GRID_SHIFTS_1D)
    out = []
    if mesh.n == 1:
        combos = [(s,) for s in shifts_1d]
    else:
        combos = [(sx, sy) for sx in shifts_1d for sy in shifts_1d]
    for shift in combos:
        corner = mesh.corner + np.asarray(shift)
        out.append((shift, DyadicMesh(mesh.n, corner, mesh.side, mesh.depth)))
    return out


def shifted_dyadic_boxes(mesh: DyadicMesh, max_level: int | None = None):
    """All dyadic cubes of the shifted grids, clipped to the root cube.

    Yields (shift, cube, clipped box); cubes that miss the root cube are
    dropped.  The unshifted grid contributes its cubes unclipped.
    """
    bounds = mesh.root_box()
    for shift, smesh in shifted_meshes(mesh):
        for cube in smesh.iter_cubes(max_level=max_level):
            box = clip_box(smesh.cube_box(cube), bounds)
            if box is not None:
                yield shift, cube, box


def multilinear_ap_constant(
    system: WeightSystem,
    boxes=None,
    return_witness: bool = False,
):
    """Largest characteristic value over a box collection.

    Each box contributes (avg nu) * prod_j (avg w_j^(1-p_j'))^(p/p_j'); for
    p_j = 1 the j-th factor is (min over the box of w_j)^(-p).  The default
    collection is every dyadic cube of the 3^n shifted grids clipped to the
    root cube.
    """
    if boxes is None:
        boxes = [(shift, box) for shift, _, box in shifted_dyadic_boxes(system.mesh)]
    else:
        boxes = [
            item if isinstance(item, tuple) and len(item) == 2 else (None, item)
            for item in boxes
        ]
    if not boxes:
        raise ValueError("empty cube collection")
    p = system.p
    nu = system.nu_weight()
    best = -math.inf
    witness = None
    for shift, box in boxes:
        val = nu.average_on(box)
        for w, pj in zip(system.weights, system.exponents):
            if pj == 1:
                mn = w.min_on(box)
                if mn == 0.0:
                    val = math.inf
                    break
                val *= mn ** (-p)
            else:
                pj_c = conjugate_exponent(pj)
                val *= w.power(1.0 - pj_c).average_on(box) ** (p / pj_c)
        if val > best:
            best = val
            witness = (shift, np.asarray(box, dtype=float))
    if return_witness:
        return best, witness
    return best


def dyadic_weighted_maximal(
    f: GridFunction, sigma: GridFunction, root: Cube
) -> GridFunction:
    """Per finest cell of the root cube: max over containing dyadic cubes Q of
    (1/sigma(Q)) * integral_Q |f| sigma.  Zero outside the root cube."""
    mesh = f.mesh
    if sigma.mesh != mesh:
        raise ValueError("sigma lives on a different mesh")
    if np.any(sigma.values <= 0):
        raise ValueError("sigma must be positive cellwise")
    mesh.check_cube(root)
    num = GridFunction(mesh, np.abs(f.values) * sigma.values)
    out = np.zeros(mesh.num_cells)
    region = mesh.cell_indices(root)
    acc = np.zeros(region.size)
    from .oscillation import _spread_block_values

    for level in range(root.level, mesh.depth + 1):
        fs = num.block_matrix(root, level).sum(axis=1)
        ss = sigma.block_matrix(root, level).sum(axis=1)
        acc = np.maximum(acc, _spread_block_values(mesh, root, level, fs / ss))
    out[region] = acc
    return GridFunction(mesh, out)


def multilinear_maximal(fs, root: Cube) -> GridFunction:
    """Per finest cell of the root cube: max over containing dyadic cubes of
    the product of the m cube averages of |f_i| (zero outside the root)."""
    fs = list(fs)
    mesh = fs[0].mesh
    for f in fs[1:]:
        if f.mesh != mesh:
            raise ValueError("inputs live on different meshes")
    mesh.check_cube(root)
    from .oscillation import _spread_block_values

    region = mesh.cell_indices(root)
    acc = np.zeros(region.size)
    for level in range(root.level, mesh.depth + 1):
        prod = None
        for f in fs:
            means = np.abs(f).block_matrix(root, level).mean(axis=1)
            prod = means if prod is None else prod * means
        acc = np.maximum(acc, _spread_block_values(mesh, root, level, prod))
    out = np.zeros(mesh.num_cells)
    out[region] = acc
    return GridFunction(mesh, out)


def maximal_bound_check(
    f: GridFunction, sigma: GridFunction, p: float
) -> float:
    """Ratio of maximal-function to input norm in L^p(sigma); contract <= p'."""
    if p <= 1:
        raise ValueError(f"p must exceed 1, got {p}")
    denom = lp_norm(f, sigma, p)
    if denom == 0.0:
        return 0.0
    mf = dyadic_weighted_maximal(f, sigma, f.mesh.root_cube())
    return lp_norm(mf, sigma, p) / denom


def holder_cell_check(system: WeightSystem, cells) -> bool:
    """|E| <= nu(E)^(1/(mp)) * prod_i sigma_i(E)^(1/(m p_i')) for a cell set E.

    The exponents sum to 1, so this is the finite-sum Hoelder inequality and
    must hold on every instance (1e-12 relative slack for float rounding).
    """
    cells = np.asarray(cells, dtype=int)
    mesh = system.mesh
    cm = mesh.cell_measure
    size = cells.size * cm
    if cells.size == 0:
        return True
    m = system.m
    p = system.p
    rhs = float(np.sum(system.nu_grid().values[cells]) * cm) ** (1.0 / (m * p))
    for sigma, pi in zip(system.dual_grids(), system.exponents):
        pi_c = conjugate_exponent(pi)
        rhs *= float(np.sum(sigma.values[cells]) * cm) ** (1.0 / (m * pi_c))
    return size <= rhs * (1.0 + 1e-12)
