"""Hot numeric kernels: numba-jitted loops with pure-numpy fallbacks.

The jitted path is used when numba imports cleanly and the environment
variable ``DYADSQ_DISABLE_NUMBA`` is unset (or set to 0/false).  Both paths
are kept callable so they can be compared directly (see benchmarks/bench.py
and tests/test_accel.py).

Determinism: every reduction runs in a fixed node order (t-level major,
cell minor), so results do not depend on thread count or dispatch path
choice beyond ordinary float non-associativity between the two paths.
"""

from __future__ import annotations

import os

import numpy as np

ENV_FLAG = "DYADSQ_DISABLE_NUMBA"


def _flag_disabled() -> bool:
    return os.environ.get(ENV_FLAG, "").strip().lower() in ("1", "true", "yes", "on")


try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _flag_disabled()


def set_num_threads(k: int) -> None:
    """Advisory thread-count hint; kernels are serial so results never change."""
    if USE_NUMBA and k > 0:
        try:
            numba.set_num_threads(k)
        except ValueError:
            pass


# ---------------------------------------------------------------------------
# loop implementations (jitted when numba is active)
# ---------------------------------------------------------------------------


def _dist(centers, i, j, ndim):
    s = 0.0
    for d in range(ndim):
        diff = centers[i, d] - centers[j, d]
        s += diff * diff
    return s ** 0.5


def _cone_sum_loops(p2, centers, t_nodes, t_weights, alpha, cell_measure):
    # sum of p2[k, j] * cell_measure * t_weights[k] over nodes with |x_i - y_j| < alpha * t_k
    npts = centers.shape[0]
    ndim = centers.shape[1]
    nlev = t_nodes.shape[0]
    out = np.zeros(npts)
    for i in range(npts):
        acc = 0.0
        for k in range(nlev):
            reach = alpha * t_nodes[k]
            wk = t_weights[k] * cell_measure
            for j in range(npts):
                if _dist(centers, i, j, ndim) < reach:
                    acc += p2[k, j] * wk
        out[i] = acc
    return out


def _bump_sum_loops(p2, centers, t_nodes, t_weights, alpha, cell_measure):
    # same node set with the C^1 cutoff profile of the scaled offset
    npts = centers.shape[0]
    ndim = centers.shape[1]
    nlev = t_nodes.shape[0]
    out = np.zeros(npts)
    for i in range(npts):
        acc = 0.0
        for k in range(nlev):
            scale = alpha * t_nodes[k]
            wk = t_weights[k] * cell_measure
            for j in range(npts):
                u = _dist(centers, i, j, ndim) / scale
                if u <= 1.0:
                    w = 1.0
                elif u < 2.0:
                    w = (2.0 - u) * (2.0 - u) * (2.0 * u - 1.0)
                else:
                    continue
                acc += w * p2[k, j] * wk
        out[i] = acc
    return out


def _poisson_sum_loops(p2, centers, t_nodes, t_weights, n_lambda, cell_measure):
    # full half-space sum with weight (t / (t + |x - y|))^{n*lambda}
    npts = centers.shape[0]
    ndim = centers.shape[1]
    nlev = t_nodes.shape[0]
    out = np.zeros(npts)
    for i in range(npts):
        acc = 0.0
        for k in range(nlev):
            tk = t_nodes[k]
            wk = t_weights[k] * cell_measure
            for j in range(npts):
                w = (tk / (tk + _dist(centers, i, j, ndim))) ** n_lambda
                acc += w * p2[k, j] * wk
        out[i] = acc
    return out


def _poisson_tail_loops(p2, centers, t_nodes, t_weights, n_lambda, cell_measure, reach_factor):
    # portion of the half-space sum from nodes with |x - y| >= reach_factor * t
    npts = centers.shape[0]
    ndim = centers.shape[1]
    nlev = t_nodes.shape[0]
    out = np.zeros(npts)
    for i in range(npts):
        acc = 0.0
        for k in range(nlev):
            tk = t_nodes[k]
            wk = t_weights[k] * cell_measure
            for j in range(npts):
                dist = _dist(centers, i, j, ndim)
                if dist >= reach_factor * tk:
                    w = (tk / (tk + dist)) ** n_lambda
                    acc += w * p2[k, j] * wk
        out[i] = acc
    return out


def _plane_m1_loops(scalar_fn, centers1d, f1, cell_measure, t_nodes):
    # plane[k, j] = t^{-n} sum_z psi(y_j/t, z/t) f1(z) dz    (n = 1)
    npts = centers1d.shape[0]
    nlev = t_nodes.shape[0]
    out = np.zeros((nlev, npts))
    for k in range(nlev):
        t = t_nodes[k]
        for j in range(npts):
            yj = centers1d[j] / t
            acc = 0.0
            for a in range(npts):
                fa = f1[a]
                if fa != 0.0:
                    acc += scalar_fn(yj, centers1d[a] / t) * fa
            out[k, j] = acc * cell_measure / t
    return out


def _plane_m2_loops(scalar_fn, centers1d, f1, f2, cell_measure, t_nodes):
    # bilinear version: plane[k, j] = t^{-2n} sum_{z1,z2} psi(y/t, z1/t, z2/t) f1 f2 dz1 dz2
    npts = centers1d.shape[0]
    nlev = t_nodes.shape[0]
    out = np.zeros((nlev, npts))
    cm2 = cell_measure * cell_measure
    for k in range(nlev):
        t = t_nodes[k]
        for j in range(npts):
            yj = centers1d[j] / t
            acc = 0.0
            for a in range(npts):
                fa = f1[a]
                if fa == 0.0:
                    continue
                za = centers1d[a] / t
                for b in range(npts):
                    fb = f2[b]
                    if fb != 0.0:
                        acc += scalar_fn(yj, za, centers1d[b] / t) * fa * fb
            out[k, j] = acc * cm2 / (t * t)
    return out


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _pairwise_dist(centers):
    diff = centers[:, None, :] - centers[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def cutoff_profile(u):
    """C^1 bump: 1 on [0,1], (2-u)^2(2u-1) on (1,2), 0 beyond; vectorized."""
    u = np.asarray(u, dtype=float)
    mid = (2.0 - u) * (2.0 - u) * (2.0 * u - 1.0)
    return np.where(u <= 1.0, 1.0, np.where(u < 2.0, mid, 0.0))


def _cone_sum_numpy(p2, centers, t_nodes, t_weights, alpha, cell_measure):
    dist = _pairwise_dist(centers)
    out = np.zeros(centers.shape[0])
    for k in range(t_nodes.shape[0]):
        mask = dist < alpha * t_nodes[k]
        out += mask @ (p2[k] * (t_weights[k] * cell_measure))
    return out


def _bump_sum_numpy(p2, centers, t_nodes, t_weights, alpha, cell_measure):
    dist = _pairwise_dist(centers)
    out = np.zeros(centers.shape[0])
    for k in range(t_nodes.shape[0]):
        w = cutoff_profile(dist / (alpha * t_nodes[k]))
        out += w @ (p2[k] * (t_weights[k] * cell_measure))
    return out


def _poisson_sum_numpy(p2, centers, t_nodes, t_weights, n_lambda, cell_measure):
    dist = _pairwise_dist(centers)
    out = np.zeros(centers.shape[0])
    for k in range(t_nodes.shape[0]):
        tk = t_nodes[k]
        w = (tk / (tk + dist)) ** n_lambda
        out += w @ (p2[k] * (t_weights[k] * cell_measure))
    return out


def _poisson_tail_numpy(p2, centers, t_nodes, t_weights, n_lambda, cell_measure, reach_factor):
    dist = _pairwise_dist(centers)
    out = np.zeros(centers.shape[0])
    for k in range(t_nodes.shape[0]):
        tk = t_nodes[k]
        w = np.where(dist >= reach_factor * tk, (tk / (tk + dist)) ** n_lambda, 0.0)
        out += w @ (p2[k] * (t_weights[k] * cell_measure))
    return out


if USE_NUMBA:
    _njit = numba.njit(cache=True, fastmath=False)
    _dist = _njit(_dist)
    _cone_sum_jit = _njit(_cone_sum_loops)
    _bump_sum_jit = _njit(_bump_sum_loops)
    _poisson_sum_jit = _njit(_poisson_sum_loops)
    _poisson_tail_jit = _njit(_poisson_tail_loops)
    _plane_m1_jit = _njit(_plane_m1_loops)
    _plane_m2_jit = _njit(_plane_m2_loops)
else:
    _cone_sum_jit = None
    _bump_sum_jit = None
    _poisson_sum_jit = None
    _poisson_tail_jit = None
    _plane_m1_jit = None
    _plane_m2_jit = None


def cone_sum(p2, centers, t_nodes, t_weights, alpha, cell_measure):
    impl = _cone_sum_jit if USE_NUMBA else _cone_sum_numpy
    return impl(p2, centers, t_nodes, t_weights, float(alpha), cell_measure)


def bump_sum(p2, centers, t_nodes, t_weights, alpha, cell_measure):
    impl = _bump_sum_jit if USE_NUMBA else _bump_sum_numpy
    return impl(p2, centers, t_nodes, t_weights, float(alpha), cell_measure)


def poisson_sum(p2, centers, t_nodes, t_weights, n_lambda, cell_measure):
    impl = _poisson_sum_jit if USE_NUMBA else _poisson_sum_numpy
    return impl(p2, centers, t_nodes, t_weights, float(n_lambda), cell_measure)


def poisson_tail(p2, centers, t_nodes, t_weights, n_lambda, cell_measure, reach_factor):
    impl = _poisson_tail_jit if USE_NUMBA else _poisson_tail_numpy
    return impl(p2, centers, t_nodes, t_weights, float(n_lambda), cell_measure, float(reach_factor))
