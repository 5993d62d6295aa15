"""Multilinear sparse averaging operators, their dilated variants, and the
weighted-bound verifier.

The operator value at a cell is the l^gamma aggregate, over family cubes
containing the cell, of the product of cube averages of the m inputs.
Dilated variants average over the concentric enlargement 2^l Q intersected
with the root cube (averages are taken over the intersection, so for large l
every average saturates at the global average).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Cube, GridFunction, box_integral, box_measure, clip_box, lp_norm
from .oscillation import SparseFamily
from .weights import WeightSystem, conjugate_exponent, multilinear_ap_constant

__all__ = [
    "SparseOperatorSpec",
    "sparse_operator",
    "shifted_sparse_operator",
    "bound_exponent",
    "verify_sparse_bound",
    "SparseBoundReport",
]


@dataclass
class SparseOperatorSpec:
    family: SparseFamily
    gamma: float
    arity: int

    def __post_init__(self):
        if self.gamma < 1:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")
        if self.arity < 1:
            raise ValueError("arity must be positive")


def _check_inputs(spec: SparseOperatorSpec, fs) -> list[GridFunction]:
    fs = list(fs)
    if len(fs) != spec.arity:
        raise ValueError(f"expected {spec.arity} inputs, got {len(fs)}")
    mesh = spec.family.mesh
    for f in fs:
        if f.mesh != mesh:
            raise ValueError("input lives on a different mesh than the family")
    return fs


def sparse_operator(spec: SparseOperatorSpec, fs) -> GridFunction:
    """[ sum_Q (prod_i avg_Q |f_i|)^gamma chi_Q ]^(1/gamma)."""
    fs = _check_inputs(spec, fs)
    mesh = spec.family.mesh
    cm = mesh.cell_measure
    acc = np.zeros(mesh.num_cells)
    for cube in spec.family.cubes:
        size = mesh.measure_of(cube)
        prod = 1.0
        for f in fs:
            prod *= float(np.sum(np.abs(f.cube_values(cube)))) * cm / size
        acc[mesh.cell_indices(cube)] += prod**spec.gamma
    return GridFunction(mesh, acc ** (1.0 / spec.gamma))


def _dilated_box(mesh, cube: Cube, ell: int):
    box = mesh.cube_box(cube)
    center = 0.5 * (box[:, 0] + box[:, 1])
    half = 0.5 * mesh.side_of(cube) * (2.0**ell)
    dilated = np.stack([center - half, center + half], axis=1)
    clipped = clip_box(dilated, mesh.root_box())
    assert clipped is not None  # cube lies inside the root cube
    return clipped


def shifted_sparse_operator(spec: SparseOperatorSpec, ell: int, fs) -> GridFunction:
    """Same aggregate with averages over 2^ell Q clipped to the root cube."""
    if ell < 0:
        raise ValueError("dilation exponent must be nonnegative")
    if ell == 0:
        return sparse_operator(spec, fs)
    fs = _check_inputs(spec, fs)
    mesh = spec.family.mesh
    abs_fs = [GridFunction(mesh, np.abs(f.values)) for f in fs]
    acc = np.zeros(mesh.num_cells)
    for cube in spec.family.cubes:
        box = _dilated_box(mesh, cube, ell)
        size = box_measure(box)
        prod = 1.0
        for f in abs_fs:
            prod *= box_integral(f, box) / size
        acc[mesh.cell_indices(cube)] += prod**spec.gamma
    return GridFunction(mesh, acc ** (1.0 / spec.gamma))


def bound_exponent(gamma: float, exponents) -> float:
    """max(1/gamma, p_1'/p, ..., p_m'/p) for exponents strictly inside (1, inf)."""
    if gamma < 1:
        raise ValueError(f"gamma must be >= 1, got {gamma}")
    exponents = [float(p) for p in exponents]
    if any(p <= 1 for p in exponents):
        raise ValueError("bound exponent requires every p_i > 1")
    p = 1.0 / sum(1.0 / pi for pi in exponents)
    return max(1.0 / gamma, *(conjugate_exponent(pi) / p for pi in exponents))


@dataclass
class SparseBoundReport:
    gamma: float
    exponents: tuple[float, ...]
    p: float
    apconst: float
    exponent: float
    lhs: float
    input_norms: tuple[float, ...]
    rhs_factor: float
    ratio: float

    def row(self) -> dict:
        out = {"m": len(self.exponents), "gamma": self.gamma}
        for i, pi in enumerate(self.exponents, start=1):
            out[f"p{i}"] = pi
        out.update(
            apconst=self.apconst,
            exponent=self.exponent,
            lhs=self.lhs,
            rhsfactor=self.rhs_factor,
            ratio=self.ratio,
        )
        return out


def verify_sparse_bound(
    spec: SparseOperatorSpec,
    system: WeightSystem,
    fs,
    boxes=None,
) -> SparseBoundReport:
    """Measure both sides of the weighted bound and report their ratio.

    lhs = output norm in L^p(nu); rhs factor = characteristic^exponent times
    the product of input norms.  The ratio is reported, not asserted: the
    inequality's constant is configuration-dependent, so regression suites
    pin it per configuration.
    """
    fs = _check_inputs(spec, fs)
    if len(fs) != system.m:
        raise ValueError("weight system arity mismatch")
    out = sparse_operator(spec, fs)
    p = system.p
    lhs = lp_norm(out, system.nu_grid(), p)
    norms = tuple(
        lp_norm(f, w, pi)
        for f, w, pi in zip(fs, system.weight_grids(), system.exponents)
    )
    apconst = multilinear_ap_constant(system, boxes)
    beta = bound_exponent(spec.gamma, system.exponents)
    rhs_factor = apconst**beta * float(np.prod(norms))
    if rhs_factor == 0.0:
        raise ValueError("right-hand side vanishes; ratio undefined")
    return SparseBoundReport(
        gamma=spec.gamma,
        exponents=system.exponents,
        p=p,
        apconst=apconst,
        exponent=beta,
        lhs=lhs,
        input_norms=norms,
        rhs_factor=rhs_factor,
        ratio=lhs / rhs_factor,
    )
