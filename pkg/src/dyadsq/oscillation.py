"""Medians, rearrangements, local mean oscillation, and the constructive
sparse oscillation decomposition.

Everything here is exact on step functions: medians and rearrangement values
are selected (not approximated) from the finite cell-value multiset, and the
oscillation minimizer is found by a sliding window over sorted values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .mesh import Cube, DyadicMesh, GridFunction, ceil_index

__all__ = [
    "median",
    "rearrangement",
    "local_mean_oscillation",
    "local_sharp_maximal",
    "median_bound_check",
    "SparseFamily",
    "OscillationDecomposition",
    "decompose",
    "oscillation_lambda",
    "DecompositionError",
]


class DecompositionError(Exception):
    """Constructed decomposition failed its own domination or sparseness check."""


def oscillation_lambda(n: int) -> float:
    """Default oscillation quantile 1 / 2^(n+2) used by the decomposition."""
    return 1.0 / (1 << (n + 2))


def median(f: GridFunction, cube: Cube) -> float:
    """Smallest cell value m with |{f > m}| <= |Q|/2 and |{f < m}| <= |Q|/2.

    All finest cells carry equal measure, so the measure conditions reduce to
    rank conditions on the sorted cell values.
    """
    vals = np.sort(f.cube_values(cube))
    return float(vals[(vals.size - 1) // 2])


def _median_interval(vals_sorted: np.ndarray) -> tuple[float, float]:
    # admissible median values of the multiset form the closed interval
    # [v_(ceil(N/2)), v_(floor(N/2)+1)] (1-based order statistics)
    n = vals_sorted.size
    return float(vals_sorted[(n - 1) // 2]), float(vals_sorted[n // 2])


def rearrangement(f: GridFunction, cube: Cube, t: float) -> float:
    """Value of the decreasing rearrangement of f*chi_Q at measure t.

    For a step function this is the k-th largest |cell value| on Q with
    k = ceil(t / cell_measure).
    """
    size = f.mesh.measure_of(cube)
    if not (0.0 < t <= size):
        raise ValueError(f"t must lie in (0, {size}], got {t}")
    vals = np.sort(np.abs(f.cube_values(cube)))[::-1]
    k = min(ceil_index(t / f.mesh.cell_measure), vals.size)
    return float(vals[k - 1])


def _oscillation_from_sorted(vals_sorted: np.ndarray, lam: float) -> float:
    n = vals_sorted.size
    k = min(ceil_index(lam * n), n)
    win = n - k + 1
    if win <= 1:
        return 0.0
    return 0.5 * float(np.min(vals_sorted[win - 1 :] - vals_sorted[: n - win + 1]))


def local_mean_oscillation(f: GridFunction, cube: Cube, lam: float) -> float:
    """Best rearrangement value of |f - c| on Q at measure lam*|Q| over centers c.

    With k = ceil(lam*N) the target is the k-th largest distance from c to
    the cell values, i.e. half the length of the shortest interval containing
    N-k+1 of the sorted values; a sliding window attains it exactly.
    """
    if not (0.0 < lam < 1.0):
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    return _oscillation_from_sorted(np.sort(f.cube_values(cube)), lam)


def local_sharp_maximal(f: GridFunction, root: Cube, lam: float) -> GridFunction:
    """Per finest cell of Q0: max oscillation over dyadic cubes containing it.

    Returned on the full mesh, zero outside Q0.
    """
    if not (0.0 < lam < 1.0):
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    mesh = f.mesh
    out = np.zeros(mesh.num_cells)
    region = mesh.cell_indices(root)
    acc = np.zeros(region.size)
    for level in range(root.level, mesh.depth + 1):
        blocks = np.sort(f.block_matrix(root, level), axis=1)
        ncells = blocks.shape[1]
        k = min(ceil_index(lam * ncells), ncells)
        win = ncells - k + 1
        if win <= 1:
            omegas = np.zeros(blocks.shape[0])
        else:
            omegas = 0.5 * np.min(
                blocks[:, win - 1 :] - blocks[:, : ncells - win + 1], axis=1
            )
        acc = np.maximum(acc, _spread_block_values(mesh, root, level, omegas))
    out[region] = acc
    return GridFunction(mesh, out)


def _spread_block_values(mesh: DyadicMesh, root: Cube, level: int, per_block: np.ndarray):
    """Broadcast one value per level-``level`` subcube onto the cells of root.

    Cell order matches GridFunction.cube_values(root).
    """
    w = 1 << (level - root.level)
    s = 1 << (mesh.depth - level)
    if mesh.n == 1:
        return np.repeat(per_block, s)
    grid = per_block.reshape(w, w)
    return np.repeat(np.repeat(grid, s, axis=0), s, axis=1).ravel()


def median_bound_check(f: GridFunction, cube: Cube) -> bool:
    """|median| never exceeds the rearrangement of f*chi_Q at half measure."""
    return abs(median(f, cube)) <= rearrangement(f, cube, f.mesh.measure_of(cube) / 2.0)


# ---------------------------------------------------------------------------
# sparse families and the oscillation decomposition
# ---------------------------------------------------------------------------


@dataclass
class SparseFamily:
    """Dyadic cubes with pairwise disjoint major subsets E(Q), |E(Q)| >= |Q|/2.

    ``major_subsets[i]`` holds flat finest-cell indices of E(cubes[i]).
    """

    mesh: DyadicMesh
    cubes: list[Cube]
    major_subsets: list[np.ndarray]

    def validate(self) -> None:
        if len(self.cubes) != len(self.major_subsets):
            raise ValueError("cube/major-subset count mismatch")
        seen = np.zeros(self.mesh.num_cells, dtype=bool)
        for cube, cells in zip(self.cubes, self.major_subsets):
            self.mesh.check_cube(cube)
            cells = np.asarray(cells)
            cube_cells = set(self.mesh.cell_indices(cube).tolist())
            if not set(cells.tolist()) <= cube_cells:
                raise ValueError(f"major subset of {cube} leaves the cube")
            # |Q| <= 2 |E(Q)| in exact cell counts
            if len(cube_cells) > 2 * cells.size:
                raise ValueError(
                    f"major subset of {cube} too small: {cells.size} of {len(cube_cells)} cells"
                )
            if np.any(seen[cells]):
                raise ValueError(f"major subset of {cube} overlaps another")
            seen[cells] = True

    def __len__(self) -> int:
        return len(self.cubes)

    def to_dict(self) -> dict:
        return {
            "mesh": self.mesh.to_dict(),
            "cubes": [c.address() for c in self.cubes],
            "major_subsets": [[int(i) for i in cells] for cells in self.major_subsets],
        }

    @staticmethod
    def from_dict(d: dict) -> "SparseFamily":
        mesh = DyadicMesh.from_dict(d["mesh"])
        cubes = [Cube.from_address(a) for a in d["cubes"]]
        subsets = [np.asarray(c, dtype=int) for c in d["major_subsets"]]
        return SparseFamily(mesh, cubes, subsets)


@dataclass
class OscillationDecomposition:
    """Output of :func:`decompose`: root median plus a weighted sparse family.

    At every finest cell x of the root cube,

        |f(x) - median| <= 2 * sum_Q coeff(Q) * chi_Q(x),

    where coeff(Q) is the local mean oscillation of f on Q at the
    dimensional quantile 1/2^(n+2).
    """

    root: Cube
    median: float
    family: SparseFamily
    coefficients: np.ndarray

    def domination_gap(self, f: GridFunction) -> float:
        """max over cells of |f - median| - 2*sum(coeff * chi); <= 0 when valid."""
        mesh = f.mesh
        rhs = np.zeros(mesh.num_cells)
        for cube, coeff in zip(self.family.cubes, self.coefficients):
            rhs[mesh.cell_indices(cube)] += coeff
        region = mesh.cell_indices(self.root)
        lhs = np.abs(f.values[region] - self.median)
        return float(np.max(lhs - 2.0 * rhs[region], initial=-np.inf))

    def verify(self, f: GridFunction) -> None:
        self.family.validate()
        if np.any(self.coefficients < 0):
            raise DecompositionError("negative oscillation coefficient")
        gap = self.domination_gap(f)
        if gap > 0:
            raise DecompositionError(f"domination inequality fails by {gap}")

    def to_dict(self) -> dict:
        return {
            "root": self.root.address(),
            "median": self.median,
            "family": self.family.to_dict(),
            "coefficients": [float(c) for c in self.coefficients],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @staticmethod
    def from_dict(d: dict) -> "OscillationDecomposition":
        return OscillationDecomposition(
            Cube.from_address(d["root"]),
            float(d["median"]),
            SparseFamily.from_dict(d["family"]),
            np.asarray(d["coefficients"], dtype=float),
        )


def _bad_count_fn(mesh: DyadicMesh, anchor: Cube, bad_flags: np.ndarray):
    """O(1) count of flagged cells in any subcube of ``anchor`` via prefix sums."""
    if mesh.n == 1:
        prefix = np.concatenate([[0], np.cumsum(bad_flags)])
        a0 = mesh.cell_ranges(anchor)[0][0]

        def count(cube: Cube) -> int:
            lo, hi = mesh.cell_ranges(cube)[0]
            return int(prefix[hi - a0] - prefix[lo - a0])

        return count

    w = 1 << (mesh.depth - anchor.level)
    grid = bad_flags.reshape(w, w).astype(np.int64)
    table = np.zeros((w + 1, w + 1), dtype=np.int64)
    table[1:, 1:] = grid.cumsum(axis=0).cumsum(axis=1)
    (ax0, _), (ay0, _) = mesh.cell_ranges(anchor)

    def count(cube: Cube) -> int:
        (x0, x1), (y0, y1) = mesh.cell_ranges(cube)
        x0, x1, y0, y1 = x0 - ax0, x1 - ax0, y0 - ay0, y1 - ay0
        return int(table[x1, y1] - table[x0, y1] - table[x1, y0] + table[x0, y0])

    return count


def decompose(f: GridFunction, root: Cube) -> OscillationDecomposition:
    """Constructive sparse oscillation decomposition of f on a root cube.

    Stopping-time recursion: at a cube Q with reference median r, threshold
    T = k-th largest |f - r| on Q at the quantile 1/2^(n+2), select the
    maximal strict dyadic subcubes where the cells with |f - r| > T exceed
    the fraction 1/2^(n+1); the unselected part of Q becomes E(Q), and the
    recursion continues inside each selected subcube with a fresh reference
    median clamped to [r - T, r + T] (such a median always exists because at
    most half of a selected subcube is above threshold).  This yields
    |E(Q)| > |Q|/2 exactly in cell counts and the cellwise domination bound
    with constant 2; the result is re-verified before returning and a
    :class:`DecompositionError` is raised on any violation.

    Cubes whose oscillation coefficient is zero contribute nothing to the
    bound and are omitted, so a constant input yields an empty family.
    """
    mesh = f.mesh
    mesh.check_cube(root)
    lam = oscillation_lambda(mesh.n)
    children_per_cube = 1 << mesh.n
    select_denom = 2 * children_per_cube  # fraction 1/2^(n+1)

    root_median = median(f, root)
    cubes: list[Cube] = []
    coeffs: list[float] = []
    majors: list[np.ndarray] = []

    stack: list[tuple[Cube, float]] = [(root, root_median)]
    while stack:
        cube, ref = stack.pop()
        vals = f.cube_values(cube)
        ncells = vals.size
        gabs = np.abs(vals - ref)
        k = min(ceil_index(lam * ncells), ncells)
        # threshold = k-th largest |f - ref| on the cube
        threshold = float(np.partition(gabs, ncells - k)[ncells - k])
        omega = _oscillation_from_sorted(np.sort(vals), lam)

        bad = gabs > threshold
        selected: list[Cube] = []
        if cube.level < mesh.depth and np.any(bad):
            count = _bad_count_fn(mesh, cube, bad)

            def scan(q: Cube) -> None:
                for child in mesh.children(q):
                    c = count(child)
                    if c == 0:
                        continue
                    child_cells = 1 << (mesh.n * (mesh.depth - child.level))
                    if c * select_denom > child_cells:
                        selected.append(child)
                    elif child.level < mesh.depth:
                        scan(child)

            scan(cube)

        cell_idx = mesh.cell_indices(cube)
        if selected:
            inside = np.zeros(mesh.num_cells, dtype=bool)
            for q in selected:
                inside[mesh.cell_indices(q)] = True
            major = cell_idx[~inside[cell_idx]]
        else:
            major = cell_idx

        if omega > 0.0:
            cubes.append(cube)
            coeffs.append(omega)
            majors.append(major)

        for q in selected:
            lo, hi = _median_interval(np.sort(f.cube_values(q)))
            stack.append((q, min(max(ref, lo), hi)))

    # canonical family order: level-major, then coordinate-lexicographic
    order = sorted(range(len(cubes)), key=lambda i: (cubes[i].level, cubes[i].coords))
    result = OscillationDecomposition(
        root=root,
        median=root_median,
        family=SparseFamily(mesh, [cubes[i] for i in order], [majors[i] for i in order]),
        coefficients=np.asarray([coeffs[i] for i in order], dtype=float),
    )
    result.verify(f)
    return result
