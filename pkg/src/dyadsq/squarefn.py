"""Multilinear kernels, scale transforms, cone/half-space square functions,
and exact atomic-field square functions.

The expensive object is the *transform plane*: values of the multilinear
scale transform at every (t-level, cell-center) node.  It is computed once
per (kernel, inputs, quadrature) and shared by every aperture, cutoff, and
tail-weight aggregation, which are comparatively cheap masked reductions
(numba-jitted with a numpy fallback, see _accel).

Node semantics are fixed so the order comparisons hold termwise in floats:
the cone at aperture a keeps nodes with |x - y| < a*t, the cutoff profile is
1 up to the cone boundary and supported strictly inside the doubled cone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .mesh import Cube, DyadicMesh, GridFunction, box_integral, box_measure, clip_box
from .oscillation import (
    decompose,
    local_mean_oscillation,
    oscillation_lambda,
)
from .weights import shifted_meshes

__all__ = [
    "MultilinearKernel",
    "ConeQuadrature",
    "TransformPlane",
    "AtomicField",
    "linear_odd_kernel",
    "bilinear_odd_kernel",
    "builtin_kernel",
    "validate_kernel",
    "KernelValidationReport",
    "scale_transform",
    "scale_plane",
    "cone_square_function",
    "smoothed_square_function",
    "g_star",
    "g_star_decomposition_check",
    "field_square_function",
    "field_square_function_grid",
    "weak_aperture_check",
    "oscillation_bound_check",
    "sparse_domination_check",
]


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@dataclass
class MultilinearKernel:
    """Kernel evaluator with the constants it claims for the decay conditions.

    ``fn(x, ys)`` must accept broadcastable float arrays (1-D coordinates)
    and return an array; ``factors``, when present, expresses the kernel as
    a product of per-slot difference profiles (enables the fast separable
    plane path); ``scalar_fn`` is a scalar float implementation used by the
    jitted brute-force path.
    """

    name: str
    arity: int
    dim: int
    fn: callable
    size_const: float  # A in the claimed bound A / (1 + sum |x-y_i|)^(mn+delta)
    decay: float  # delta
    smoothness: float  # Hoelder exponent of the claimed increment bounds
    factors: tuple | None = None
    scalar_fn: object = None

    def __post_init__(self):
        if self.arity < 1:
            raise ValueError("kernel arity must be >= 1")
        if self.dim != 1:
            raise ValueError("kernel transforms are implemented for dimension 1")
        if min(self.size_const, self.decay, self.smoothness) <= 0:
            raise ValueError("declared kernel constants must be positive")


def _odd_profile(u):
    u = np.asarray(u, dtype=float)
    return u * np.exp(-(u * u))


def _make_scalar(m):
    if not _accel.USE_NUMBA:
        return None
    import numba

    if m == 1:

        @numba.njit(cache=True)
        def scalar(x, y):
            u = x - y
            return u * math.exp(-u * u)

    else:

        @numba.njit(cache=True)
        def scalar(x, y1, y2):
            u = x - y1
            v = x - y2
            return u * v * math.exp(-u * u - v * v)

    return scalar


def linear_odd_kernel() -> MultilinearKernel:
    """Odd, mean-zero convolution profile u*exp(-u^2); certified constants."""
    return MultilinearKernel(
        name="linear_odd",
        arity=1,
        dim=1,
        fn=lambda x, ys: _odd_profile(np.asarray(x) - np.asarray(ys[0])),
        size_const=10.0,
        decay=1.0,
        smoothness=1.0,
        factors=(_odd_profile,),
        scalar_fn=_make_scalar(1),
    )


def bilinear_odd_kernel() -> MultilinearKernel:
    """Product of two odd profiles; the product decay certifies the size bound
    because (1+a)(1+b) >= 1+a+b."""
    return MultilinearKernel(
        name="bilinear_odd",
        arity=2,
        dim=1,
        fn=lambda x, ys: _odd_profile(np.asarray(x) - np.asarray(ys[0]))
        * _odd_profile(np.asarray(x) - np.asarray(ys[1])),
        size_const=19.0,
        decay=0.5,
        smoothness=0.5,
        factors=(_odd_profile, _odd_profile),
        scalar_fn=_make_scalar(2),
    )


_BUILTINS = {
    "linear_odd": linear_odd_kernel,
    "bilinear_odd": bilinear_odd_kernel,
}


def builtin_kernel(name: str) -> MultilinearKernel:
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise ValueError(f"unknown kernel {name!r}; available: {sorted(_BUILTINS)}")


# ---------------------------------------------------------------------------
# kernel validation against the declared decay/smoothness constants
# ---------------------------------------------------------------------------


def _halton(index: np.ndarray, base: int) -> np.ndarray:
    out = np.zeros(index.shape, dtype=float)
    f = 1.0
    i = index.astype(np.int64) + 1
    while np.any(i > 0):
        f /= base
        out += f * (i % base)
        i //= base
    return out


@dataclass
class KernelValidationReport:
    samples: int
    size_ratio: float
    smooth_x_ratio: float
    smooth_y_ratios: tuple[float, ...]
    tolerance: float = 1e-9

    @property
    def passed(self) -> bool:
        worst = max(self.size_ratio, self.smooth_x_ratio, *self.smooth_y_ratios)
        return worst <= 1.0 + self.tolerance


def validate_kernel(
    kernel: MultilinearKernel, samples: int = 4096, box: float = 8.0
) -> KernelValidationReport:
    """Check the declared decay and increment bounds on a deterministic
    low-discrepancy sample of points and admissible increments.

    Reported ratios are (observed value) / (claimed bound); the kernel passes
    when every ratio stays below 1 + 1e-9.
    """
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    m = kernel.arity
    primes = [2, 3, 5, 7, 11, 13, 17, 19]
    idx = np.arange(samples)
    dims = [_halton(idx, primes[d % len(primes)]) for d in range(m + 3)]
    x = (2.0 * dims[0] - 1.0) * box
    ys = [(2.0 * dims[1 + i] - 1.0) * box for i in range(m)]
    frac = dims[m + 1] * 0.499 + 5e-4  # increment fraction in (0, 1/2)
    sign = np.where(dims[m + 2] < 0.5, -1.0, 1.0)

    a = kernel.size_const
    delta = kernel.decay
    gamma = kernel.smoothness
    mn = m * kernel.dim

    vals = np.asarray(kernel.fn(x, tuple(ys)), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("kernel evaluator returned a non-finite value")
    dist_sum = sum(np.abs(x - y) for y in ys)
    size_ratio = float(np.max(np.abs(vals) * (1.0 + dist_sum) ** (mn + delta) / a))

    denom = a * (1.0 + dist_sum) ** (-(mn + delta + gamma))

    max_dist = np.abs(x - ys[0])
    for y in ys[1:]:
        max_dist = np.maximum(max_dist, np.abs(x - y))
    h = sign * frac * max_dist
    ok = max_dist > 0
    shifted = np.asarray(kernel.fn(x + h, tuple(ys)), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.abs(vals - shifted) / (denom * np.abs(h) ** gamma)
    smooth_x = float(np.max(np.where(ok, r, 0.0)))

    smooth_y = []
    for i in range(m):
        di = np.abs(x - ys[i])
        hi = sign * frac * di
        oki = di > 0
        ys_shift = list(ys)
        ys_shift[i] = ys[i] + hi
        shifted = np.asarray(kernel.fn(x, tuple(ys_shift)), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.abs(vals - shifted) / (denom * np.abs(hi) ** gamma)
        smooth_y.append(float(np.max(np.where(oki, r, 0.0))))

    return KernelValidationReport(
        samples=samples,
        size_ratio=size_ratio,
        smooth_x_ratio=smooth_x,
        smooth_y_ratios=tuple(smooth_y),
    )


# ---------------------------------------------------------------------------
# quadrature and the transform plane
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConeQuadrature:
    """Geometric scale grid on [t_min, t_max] with midpoint-in-log nodes.

    The dt/t^(n+1) measure is scale invariant, so a geometric grid is
    uniformly accurate per octave; refinement doubles ``levels``.
    """

    t_min: float
    t_max: float
    levels: int

    def __post_init__(self):
        if not (0.0 < self.t_min < self.t_max):
            raise ValueError("need 0 < t_min < t_max")
        if self.levels < 8:
            raise ValueError("need at least 8 quadrature levels")

    @staticmethod
    def default_for(mesh: DyadicMesh, levels: int | None = None) -> "ConeQuadrature":
        t_min = mesh.cell_side
        t_max = 4.0 * mesh.side
        if levels is None:
            octaves = math.log2(t_max / t_min)
            levels = max(8, int(round(4 * octaves)))
        return ConeQuadrature(t_min, t_max, levels)

    def edges(self) -> np.ndarray:
        ratio = (self.t_max / self.t_min) ** (1.0 / self.levels)
        return self.t_min * ratio ** np.arange(self.levels + 1)

    def nodes(self) -> np.ndarray:
        e = self.edges()
        return np.sqrt(e[:-1] * e[1:])

    def widths(self) -> np.ndarray:
        return np.diff(self.edges())

    def t_weights(self, n: int) -> np.ndarray:
        """Quadrature weight dt / t^(n+1) per level."""
        return self.widths() / self.nodes() ** (n + 1)

    def refined(self, factor: int = 2) -> "ConeQuadrature":
        return ConeQuadrature(self.t_min, self.t_max, self.levels * factor)

    def extended(self, octaves_below: float = 1.0, octaves_above: float = 1.0) -> "ConeQuadrature":
        """Same per-octave density on a widened scale window."""
        t_min = self.t_min * 2.0 ** (-octaves_below)
        t_max = self.t_max * 2.0**octaves_above
        density = self.levels / math.log2(self.t_max / self.t_min)
        levels = max(8, int(round(density * math.log2(t_max / t_min))))
        return ConeQuadrature(t_min, t_max, levels)

    def to_dict(self) -> dict:
        return {"t_min": self.t_min, "t_max": self.t_max, "levels": self.levels}


@dataclass
class TransformPlane:
    """Scale-transform values at every (t-level, cell-center) node."""

    mesh: DyadicMesh
    quad: ConeQuadrature
    arity: int
    values: np.ndarray  # shape (levels, num_cells)
    _sq: np.ndarray | None = field(default=None, repr=False)

    def squared(self) -> np.ndarray:
        if self._sq is None:
            self._sq = self.values * self.values
        return self._sq


def _check_inputs(kernel: MultilinearKernel, fs) -> tuple[DyadicMesh, list[GridFunction]]:
    fs = list(fs)
    if len(fs) != kernel.arity:
        raise ValueError(f"kernel has arity {kernel.arity}, got {len(fs)} inputs")
    mesh = fs[0].mesh
    if mesh.n != kernel.dim:
        raise ValueError("kernel dimension does not match the mesh")
    for f in fs[1:]:
        if f.mesh != mesh:
            raise ValueError("inputs live on different meshes")
    return mesh, fs


def scale_transform(kernel: MultilinearKernel, fs, t: float, x: float) -> float:
    """Transform value at a single scale and point, by midpoint quadrature
    over the finest cells of the input supports."""
    if t <= 0:
        raise ValueError(f"scale t must be positive, got {t}")
    mesh, fs = _check_inputs(kernel, fs)
    centers = mesh.cell_centers()[:, 0]
    cm = mesh.cell_measure
    active = [np.nonzero(f.values)[0] for f in fs]
    if any(a.size == 0 for a in active):
        return 0.0
    m = kernel.arity
    if m == 1:
        vals = kernel.fn(np.asarray(x) / t, (centers[active[0]] / t,))
        acc = float(np.sum(vals * fs[0].values[active[0]]))
    else:
        zs = tuple(
            (centers[a] / t).reshape((1,) * i + (-1,) + (1,) * (m - 1 - i))
            for i, a in enumerate(active)
        )
        kv = kernel.fn(np.asarray(x) / t, zs)
        prod = fs[0].values[active[0]]
        for i in range(1, m):
            prod = np.multiply.outer(prod, fs[i].values[active[i]])
        acc = float(np.sum(kv * prod))
    return acc * cm**m / t ** (m * mesh.n)


def _plane_product(kernel, fs, mesh, t_nodes):
    centers = mesh.cell_centers()[:, 0]
    cm = mesh.cell_measure
    plane = np.ones((t_nodes.size, centers.size))
    for profile, f in zip(kernel.factors, fs):
        for k, t in enumerate(t_nodes):
            mat = profile((centers[:, None] - centers[None, :]) / t)
            plane[k] *= (mat @ f.values) * cm / t
    return plane


def _plane_generic(kernel, fs, mesh, t_nodes, chunk: int = 64):
    centers = mesh.cell_centers()[:, 0]
    cm = mesh.cell_measure
    m = kernel.arity
    active = [np.nonzero(f.values)[0] for f in fs]
    plane = np.zeros((t_nodes.size, centers.size))
    if any(a.size == 0 for a in active):
        return plane
    fvals = [f.values[a] for f, a in zip(fs, active)]
    if m == 1:
        for k, t in enumerate(t_nodes):
            mat = kernel.fn(centers[:, None] / t, (centers[None, active[0]] / t,))
            plane[k] = (mat @ fvals[0]) * cm / t
        return plane
    prod = fvals[0]
    for i in range(1, m):
        prod = np.multiply.outer(prod, fvals[i])
    for k, t in enumerate(t_nodes):
        zs = tuple(
            (centers[a] / t).reshape((1,) + (1,) * i + (-1,) + (1,) * (m - 1 - i))
            for i, a in enumerate(active)
        )
        for lo in range(0, centers.size, chunk):
            hi = min(lo + chunk, centers.size)
            y = (centers[lo:hi] / t).reshape((-1,) + (1,) * m)
            kv = kernel.fn(y, zs)
            plane[k, lo:hi] = np.tensordot(kv, prod, axes=m) * cm**m / t**m
    return plane


def scale_plane(
    kernel: MultilinearKernel, fs, quad: ConeQuadrature, path: str = "auto"
) -> TransformPlane:
    """Compute the transform plane; the hot path of every sweep.

    ``path``: "auto" picks separable product evaluation when the kernel
    factors, then the jitted brute force, then generic numpy; explicit
    values ("product", "jit", "numpy") force a path (used by the
    cross-checking tests and the benchmark).
    """
    mesh, fs = _check_inputs(kernel, fs)
    t_nodes = quad.nodes()
    if path == "auto":
        if kernel.factors is not None:
            path = "product"
        elif _accel.USE_NUMBA and kernel.scalar_fn is not None and kernel.arity <= 2:
            path = "jit"
        else:
            path = "numpy"
    if path == "product":
        if kernel.factors is None:
            raise ValueError("kernel has no product factorization")
        values = _plane_product(kernel, fs, mesh, t_nodes)
    elif path == "jit":
        if not (_accel.USE_NUMBA and kernel.scalar_fn is not None):
            raise ValueError("jitted path unavailable for this kernel/environment")
        centers = mesh.cell_centers()[:, 0]
        if kernel.arity == 1:
            values = _accel._plane_m1_jit(
                kernel.scalar_fn, centers, fs[0].values, mesh.cell_measure, t_nodes
            )
        elif kernel.arity == 2:
            values = _accel._plane_m2_jit(
                kernel.scalar_fn,
                centers,
                fs[0].values,
                fs[1].values,
                mesh.cell_measure,
                t_nodes,
            )
        else:
            raise ValueError("jitted path supports arity 1 and 2")
    elif path == "numpy":
        values = _plane_generic(kernel, fs, mesh, t_nodes)
    else:
        raise ValueError(f"unknown plane path {path!r}")
    return TransformPlane(mesh=mesh, quad=quad, arity=kernel.arity, values=values)


# ---------------------------------------------------------------------------
# square functions from a plane
# ---------------------------------------------------------------------------


def cone_square_function(plane: TransformPlane, alpha: float) -> GridFunction:
    """Aperture-alpha cone aggregation of the plane; exact cell values."""
    if alpha < 1:
        raise ValueError(f"aperture must be >= 1, got {alpha}")
    mesh = plane.mesh
    out = _accel.cone_sum(
        plane.squared(),
        mesh.cell_centers(),
        plane.quad.nodes(),
        plane.quad.t_weights(mesh.n),
        alpha,
        mesh.cell_measure,
    )
    return GridFunction(mesh, np.sqrt(out))


def smoothed_square_function(plane: TransformPlane, alpha: float) -> GridFunction:
    """Cutoff-profile variant; termwise between the alpha and 2*alpha cones."""
    if alpha < 1:
        raise ValueError(f"aperture must be >= 1, got {alpha}")
    mesh = plane.mesh
    out = _accel.bump_sum(
        plane.squared(),
        mesh.cell_centers(),
        plane.quad.nodes(),
        plane.quad.t_weights(mesh.n),
        alpha,
        mesh.cell_measure,
    )
    return GridFunction(mesh, np.sqrt(out))


def g_star(plane: TransformPlane, lam: float) -> GridFunction:
    """Half-space aggregation with the tail weight (t/(t+|x-y|))^(n*lambda).

    Requires lambda > 2*arity; smaller tail exponents are rejected because
    the aggregation is no longer controlled by the cone pieces.
    """
    if lam <= 2 * plane.arity:
        raise ValueError(
            f"tail exponent lambda must exceed 2m = {2 * plane.arity}, got {lam}"
        )
    mesh = plane.mesh
    out = _accel.poisson_sum(
        plane.squared(),
        mesh.cell_centers(),
        plane.quad.nodes(),
        plane.quad.t_weights(mesh.n),
        mesh.n * lam,
        mesh.cell_measure,
    )
    return GridFunction(mesh, np.sqrt(out))


@dataclass
class GStarDecompositionReport:
    lam: float
    k_max: int
    max_violation: float  # max over cells of lhs^2 - (annulus rhs + tail)
    max_tail_fraction: float  # tail / lhs^2, worst cell with lhs > 0
    lower_bound_gap: float  # max of 2^(-n lam) S_1^2 - g*^2 (<= 0 when valid)

    @property
    def ok(self) -> bool:
        return self.max_violation <= 0 and self.lower_bound_gap <= 0


def g_star_decomposition_check(
    plane: TransformPlane, lam: float, k_max: int = 8, rel_slack: float = 1e-12
) -> GStarDecompositionReport:
    """Annulus decomposition of the tail-weighted aggregation.

    Splits g*^2 into the part reachable by the dyadic cones 2^k (k <= k_max),
    bounded termwise by 2^(n lam) sum_k 2^(-k n lam) S_{2^k}^2, plus the exact
    remainder from nodes outside the widest cone (reported, never hidden).
    Also checks the termwise lower bound g* >= 2^(-n lam / 2) S_1.
    """
    if lam <= 2 * plane.arity:
        raise ValueError(f"tail exponent must exceed 2m = {2 * plane.arity}")
    mesh = plane.mesh
    n = mesh.n
    centers = mesh.cell_centers()
    t_nodes = plane.quad.nodes()
    t_wts = plane.quad.t_weights(n)
    cm = mesh.cell_measure
    p2 = plane.squared()

    g2 = _accel.poisson_sum(p2, centers, t_nodes, t_wts, n * lam, cm)
    rhs = np.zeros_like(g2)
    for k in range(1, k_max + 1):
        s2k = _accel.cone_sum(p2, centers, t_nodes, t_wts, 2.0**k, cm)
        rhs += 2.0 ** (-k * n * lam) * s2k
    rhs *= 2.0 ** (n * lam)
    tail = _accel.poisson_tail(p2, centers, t_nodes, t_wts, n * lam, cm, 2.0**k_max)

    scale = np.maximum(g2, 1e-300)
    violation = float(np.max(g2 - (rhs + tail) - rel_slack * scale))
    with np.errstate(invalid="ignore"):
        tail_frac = np.where(g2 > 0, tail / g2, 0.0)
    s1 = _accel.cone_sum(p2, centers, t_nodes, t_wts, 1.0, cm)
    lower_gap = float(np.max(2.0 ** (-n * lam) * s1 - g2 - rel_slack * scale))
    return GStarDecompositionReport(
        lam=lam,
        k_max=k_max,
        max_violation=violation,
        max_tail_fraction=float(np.max(tail_frac)),
        lower_bound_gap=lower_gap,
    )


# ---------------------------------------------------------------------------
# atomic half-space fields (exact square functions)
# ---------------------------------------------------------------------------


@dataclass
class AtomicField:
    """Finite point measure on the upper half-space: atoms (y_j, t_j, c_j)
    standing for the squared-field mass carried near each point."""

    ys: np.ndarray  # (num_atoms, n)
    ts: np.ndarray  # (num_atoms,)
    cs: np.ndarray  # (num_atoms,)

    def __post_init__(self):
        self.ys = np.atleast_2d(np.asarray(self.ys, dtype=float))
        self.ts = np.asarray(self.ts, dtype=float)
        self.cs = np.asarray(self.cs, dtype=float)
        if np.any(self.ts <= 0) or np.any(self.cs <= 0):
            raise ValueError("atom scales and masses must be positive")
        if self.ys.shape[0] != self.ts.size or self.ts.size != self.cs.size:
            raise ValueError("atom array lengths disagree")

    @property
    def dim(self) -> int:
        return self.ys.shape[1]

    def to_list(self) -> list:
        return [
            [list(map(float, y)) if self.dim > 1 else float(y[0]), float(t), float(c)]
            for y, t, c in zip(self.ys, self.ts, self.cs)
        ]

    @staticmethod
    def from_list(items) -> "AtomicField":
        ys, ts, cs = [], [], []
        for y, t, c in items:
            ys.append([y] if np.isscalar(y) else list(y))
            ts.append(t)
            cs.append(c)
        return AtomicField(np.asarray(ys, dtype=float), np.asarray(ts), np.asarray(cs))


def field_square_function(fieldf: AtomicField, alpha: float, x) -> float:
    """Exact cone aggregation of an atomic field at one point."""
    if alpha <= 0:
        raise ValueError("aperture must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    dist = np.sqrt(np.sum((fieldf.ys - x[None, :]) ** 2, axis=1))
    return math.sqrt(float(np.sum(fieldf.cs[dist < alpha * fieldf.ts])))


def field_square_function_grid(
    fieldf: AtomicField, alpha: float, mesh: DyadicMesh
) -> GridFunction:
    """Exact cone aggregation sampled at every cell center."""
    if alpha <= 0:
        raise ValueError("aperture must be positive")
    centers = mesh.cell_centers()
    diff = centers[:, None, :] - fieldf.ys[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    mask = dist < alpha * fieldf.ts[None, :]
    return GridFunction(mesh, np.sqrt(mask @ fieldf.cs))


@dataclass
class WeakApertureReport:
    alpha: float
    p: float
    base_norm: float
    aperture_norm: float
    normalized_ratio: float


def weak_aperture_check(
    fieldf: AtomicField, alpha: float, p: float, mesh: DyadicMesh
) -> WeakApertureReport:
    """Weak-type norm growth of the cone aggregation when the aperture opens.

    normalized_ratio = ||S_alpha|| / (alpha^(n/p) ||S_1||) in the weak
    L^p quasi-norm, computed exactly on the evaluation mesh.
    """
    from .mesh import weak_lp_norm

    if not (0 < p < 2):
        raise ValueError(f"p must lie in (0, 2), got {p}")
    if alpha < 1:
        raise ValueError(f"aperture must be >= 1, got {alpha}")
    base = weak_lp_norm(field_square_function_grid(fieldf, 1.0, mesh), p)
    if base == 0.0:
        raise ValueError("base aperture aggregation vanishes on the mesh")
    wide = weak_lp_norm(field_square_function_grid(fieldf, alpha, mesh), p)
    return WeakApertureReport(
        alpha=alpha,
        p=p,
        base_norm=base,
        aperture_norm=wide,
        normalized_ratio=wide / (alpha ** (mesh.n / p) * base),
    )


# ---------------------------------------------------------------------------
# oscillation and sparse-domination diagnostics
# ---------------------------------------------------------------------------


def _dilated_average(f_abs: GridFunction, cube_box, ell: int, bounds) -> float:
    center = 0.5 * (cube_box[:, 0] + cube_box[:, 1])
    half = 0.5 * (cube_box[0, 1] - cube_box[0, 0]) * (2.0**ell)
    dil = np.stack([center - half, center + half], axis=1)
    clipped = clip_box(dil, bounds)
    if clipped is None:
        return 0.0
    return box_integral(f_abs, clipped) / box_measure(clipped)


def oscillation_bound_check(
    plane: TransformPlane,
    fs,
    alpha: float,
    cubes,
    lam: float | None = None,
    delta0: float | None = None,
    decay: float | None = None,
    max_dilation: int | None = None,
) -> dict:
    """Ratio of the smoothed square function's local oscillation to the
    dilated-average majorant, normalized by alpha^(2mn).

    For each cube Q the majorant is sum_{l=0..L} 2^(-l*delta0)
    (prod_i avg_{2^l Q} |f_i|)^2 with averages over the dilation clipped to
    the root cube.  delta0 defaults to min(decay, 1/2)/2, which keeps a
    margin below both the kernel decay and the geometric-sum threshold.
    """
    mesh = plane.mesh
    m = plane.arity
    if lam is None:
        lam = oscillation_lambda(mesh.n)
    if decay is None:
        decay = 0.5
    if delta0 is None:
        delta0 = min(decay, 0.5) / 2.0
    if max_dilation is None:
        max_dilation = mesh.depth
    s_tilde = smoothed_square_function(plane, alpha)
    u = GridFunction(mesh, s_tilde.values**2)
    abs_fs = [GridFunction(mesh, np.abs(f.values)) for f in fs]
    bounds = mesh.root_box()
    rows = []
    for cube in cubes:
        osc = local_mean_oscillation(u, cube, lam)
        box = mesh.cube_box(cube)
        majorant = 0.0
        for ell in range(max_dilation + 1):
            prod = 1.0
            for f in abs_fs:
                prod *= _dilated_average(f, box, ell, bounds)
            majorant += 2.0 ** (-ell * delta0) * prod * prod
        denom = alpha ** (2 * m * mesh.n) * majorant
        rows.append(
            {
                "level": cube.level,
                "coords": list(cube.coords),
                "oscillation": osc,
                "majorant": denom,
                "ratio": osc / denom if denom > 0 else math.inf,
            }
        )
    return {
        "alpha": alpha,
        "lam": lam,
        "delta0": delta0,
        "rows": rows,
        "max_ratio": max(r["ratio"] for r in rows),
    }


def _family_operator_at_centers(mesh_shift, family, coeff_products, centers, gamma):
    """Aggregate (prod of averages)^gamma over family cubes containing each
    center; cube membership decided at cell centers."""
    acc = np.zeros(centers.shape[0])
    for cube, prod in zip(family.cubes, coeff_products):
        box = mesh_shift.cube_box(cube)
        inside = np.ones(centers.shape[0], dtype=bool)
        for d in range(centers.shape[1]):
            inside &= (centers[:, d] >= box[d, 0]) & (centers[:, d] < box[d, 1])
        acc[inside] += prod**gamma
    return acc ** (1.0 / gamma)


def _centers_to_cells(smesh: DyadicMesh, centers: np.ndarray) -> np.ndarray:
    """Flat finest-cell index of each point in a (possibly shifted) mesh;
    -1 for points outside its root cube."""
    mcount = smesh.cells_per_axis
    per_axis = []
    for d in range(smesh.n):
        idx = np.floor((centers[:, d] - smesh.corner[d]) / smesh.cell_side).astype(int)
        per_axis.append(idx)
    flat = per_axis[0].copy()
    valid = (per_axis[0] >= 0) & (per_axis[0] < mcount)
    if smesh.n == 2:
        valid &= (per_axis[1] >= 0) & (per_axis[1] < mcount)
        flat = per_axis[0] * mcount + per_axis[1]
    return np.where(valid, flat, -1)


def sparse_domination_check(
    plane: TransformPlane,
    fs,
    alpha: float,
    use_shifts: bool = True,
) -> dict:
    """Pointwise control of the cone square function by the best sparse
    averaging operator of the inputs.

    The family supremum is realized over: (i) the oscillation-decomposition
    family of the squared cone function on each (shifted) grid, feeding a
    gamma=2 averaging operator of |f_i|; and (ii) every singleton family,
    i.e. the multilinear dyadic maximal function of the inputs on each grid.
    Reports the worst cell ratio lhs^2 / (alpha^(2mn) * best^2).
    """
    from .weights import multilinear_maximal

    mesh = plane.mesh
    m = plane.arity
    s_alpha = cone_square_function(plane, alpha)
    lhs2 = s_alpha.values**2
    abs_fs = [GridFunction(mesh, np.abs(f.values)) for f in fs]
    centers = mesh.cell_centers()

    global_avgs = [float(np.mean(f.values)) for f in abs_fs]
    best = np.full(mesh.num_cells, float(np.prod(global_avgs)))

    grids = shifted_meshes(mesh) if use_shifts else [((0.0,) * mesh.n, mesh)]
    shift_used = []
    lhs_grid = GridFunction(mesh, lhs2)
    for shift, smesh in grids:
        if smesh == mesh:
            res_fs = abs_fs
            u = lhs_grid
        else:
            res_fs = [GridFunction(smesh, _resample_values(f, smesh)) for f in abs_fs]
            u = GridFunction(smesh, _resample_values(lhs_grid, smesh))
        cell_of = _centers_to_cells(smesh, centers)
        covered = cell_of >= 0

        # singleton families: the multilinear maximal function on this grid
        mx = multilinear_maximal(res_fs, smesh.root_cube()).values
        best[covered] = np.maximum(best[covered], mx[cell_of[covered]])

        dec = decompose(u, smesh.root_cube())
        shift_used.append(shift)
        if not len(dec.family):
            continue
        prods = []
        for cube in dec.family.cubes:
            box = smesh.cube_box(cube)
            size = box_measure(box)
            prods.append(
                float(np.prod([box_integral(f, box) / size for f in abs_fs]))
            )
        a2 = _family_operator_at_centers(smesh, dec.family, prods, centers, 2.0)
        best = np.maximum(best, a2)

    denom = alpha ** (2 * m * mesh.n) * best**2
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(denom > 0, lhs2 / denom, np.where(lhs2 > 0, np.inf, 0.0))
    return {
        "alpha": alpha,
        "max_ratio": float(np.max(ratios)),
        "shifts": shift_used,
    }


def _resample_values(f: GridFunction, target: DyadicMesh) -> np.ndarray:
    from .mesh import resample

    return resample(f, target).values
