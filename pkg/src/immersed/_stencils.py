"""Finite-difference derivative fields on masked grids.

Derivatives are evaluated independently on each contiguous run of valid
nodes along the differentiation axis, so values never leak across a body
mask or a domain edge.  Interior nodes use fourth-order central stencils;
nodes near a run end switch to skewed or fully one-sided variants of the
same order, degrading gracefully on runs too short to support them.
Invalid nodes always evaluate to zero.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded

__all__ = ["fd_weights", "derivative_field", "derivative_matrix",
           "compact_first_derivative"]


def fd_weights(offsets, order: int) -> np.ndarray:
    """Finite-difference weights for the order-th derivative at 0 from
    samples at the given integer offsets (unit spacing)."""
    offs = np.asarray(offsets, dtype=float)
    k = offs.size
    if order >= k:
        raise ValueError(f"need more than {order} samples for derivative {order}")
    A = np.array([offs**m / math.factorial(m) for m in range(k)])
    e = np.zeros(k)
    e[order] = 1.0
    return np.linalg.solve(A, e)


# (offsets, min valid nodes left of center, min right), most accurate first.
_STENCIL_MENU = {
    1: [
        (range(-2, 3), 2, 2),   # fourth-order central
        (range(-1, 4), 1, 3),   # fourth-order, skewed forward
        (range(-3, 2), 3, 1),   # fourth-order, skewed backward
        (range(0, 5), 0, 4),    # fourth-order, one-sided forward
        (range(-4, 1), 4, 0),   # fourth-order, one-sided backward
        (range(-1, 2), 1, 1),   # second-order central
        (range(0, 3), 0, 2),    # second-order forward
        (range(-2, 1), 2, 0),   # second-order backward
        (range(0, 2), 0, 1),    # first-order forward
        (range(-1, 1), 1, 0),   # first-order backward
    ],
    2: [
        (range(-2, 3), 2, 2),   # fourth-order central
        (range(-1, 4), 1, 3),   # third-order, skewed forward
        (range(-3, 2), 3, 1),   # third-order, skewed backward
        (range(0, 5), 0, 4),    # third-order, one-sided forward
        (range(-4, 1), 4, 0),   # third-order, one-sided backward
        (range(-1, 2), 1, 1),   # second-order central
        (range(0, 3), 0, 2),    # first-order forward
        (range(-2, 1), 2, 0),   # first-order backward
    ],
}

_STENCILS = {
    order: [(np.array(list(offs)), fd_weights(list(offs), order), lo, ro)
            for offs, lo, ro in menu]
    for order, menu in _STENCIL_MENU.items()
}


def _run_room(valid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per node, the number of valid nodes immediately before/after it in
    its contiguous run along the last axis (0 at invalid nodes)."""
    n = valid.shape[-1]
    idx = np.arange(n)
    last_bad = np.maximum.accumulate(np.where(valid, -1, idx), axis=-1)
    left = np.where(valid, idx - last_bad - 1, 0)
    rev = valid[..., ::-1]
    last_bad_r = np.maximum.accumulate(np.where(rev, -1, idx), axis=-1)
    right = np.where(rev, idx - last_bad_r - 1, 0)[..., ::-1]
    return left, right


def derivative_field(arr, spacing: float, axis: int, order: int = 1,
                     valid=None) -> np.ndarray:
    """order-th derivative of arr along axis, run-aware as described in the
    module docstring.  valid marks the nodes that carry meaningful data;
    by default every node does."""
    if order not in _STENCILS:
        raise ValueError(f"derivative order must be 1 or 2, got {order}")
    a = np.moveaxis(np.asarray(arr, dtype=float), axis, -1)
    if valid is None:
        v = np.ones(a.shape, dtype=bool)
    else:
        v = np.moveaxis(np.asarray(valid, dtype=bool), axis, -1)
        if v.shape != a.shape:
            raise ValueError("valid mask shape does not match the array")
    left, right = _run_room(v)

    conds, values = [], []
    for offs, w, lo, ro in _STENCILS[order]:
        cand = np.zeros(a.shape)
        for o, c in zip(offs, w):
            if c != 0.0:
                cand += c * np.roll(a, -o, axis=-1)
        conds.append(v & (left >= lo) & (right >= ro))
        values.append(cand)
    out = np.select(conds, values, default=0.0) / spacing**order
    return np.moveaxis(out, -1, axis)


def derivative_matrix(shape, spacing: float, axis: int, order: int = 1,
                      valid=None) -> sp.csr_matrix:
    """Sparse operator equivalent of derivative_field on flattened arrays:
    derivative_matrix(...) @ arr.ravel() == derivative_field(arr, ...).ravel().
    Rows at nodes outside valid (or with no usable stencil) are empty."""
    if order not in _STENCILS:
        raise ValueError(f"derivative order must be 1 or 2, got {order}")
    shape = tuple(int(s) for s in shape)
    size = int(np.prod(shape))
    if valid is None:
        v = np.ones(shape, dtype=bool)
    else:
        v = np.asarray(valid, dtype=bool)
        if v.shape != shape:
            raise ValueError("valid mask shape does not match the array")
    v = np.moveaxis(v, axis, -1)
    flat = np.moveaxis(np.arange(size).reshape(shape), axis, -1)
    left, right = _run_room(v)

    chosen = np.full(v.shape, -1, dtype=int)
    for k, (_, _, lo, ro) in enumerate(_STENCILS[order]):
        pick = v & (left >= lo) & (right >= ro) & (chosen < 0)
        chosen[pick] = k

    scale = 1.0 / spacing**order
    rows, cols, data = [], [], []
    for k, (offs, w, _, _) in enumerate(_STENCILS[order]):
        idx = np.nonzero(chosen == k)
        if idx[0].size == 0:
            continue
        here = flat[idx]
        for o, c in zip(offs, w):
            if c != 0.0:
                there = flat[idx[:-1] + (idx[-1] + o,)]
                rows.append(here)
                cols.append(there)
                data.append(np.full(here.size, c * scale))
    if not rows:
        return sp.csr_matrix((size, size))
    return sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size, size))


def _pade_segment(f: np.ndarray, t: float) -> np.ndarray:
    """Fourth-order compact first derivative of one contiguous sample run.

    Interior rows use the classical tridiagonal relation
        (1/4) g[i-1] + g[i] + (1/4) g[i+1] = 3 (f[i+1] - f[i-1]) / (4 t)
    closed at each end by the fourth-order boundary relation
        g[0] + 3 g[1] = (-17 f[0] + 9 f[1] + 9 f[2] - f[3]) / (6 t).
    Runs too short for the closure fall back to explicit differences.
    """
    n = f.size
    if n == 1:
        return np.zeros(1)
    if n == 2:
        return np.full(2, (f[1] - f[0]) / t)
    if n in (3, 4):
        # interpolating-polynomial derivative; the n == 4 tridiagonal
        # closure pair is singular, so take the cubic exactly instead
        return np.array([fd_weights(np.arange(n) - k, 1) @ f
                         for k in range(n)]) / t
    ab = np.zeros((3, n))
    ab[0, 2:] = 0.25
    ab[1, :] = 1.0
    ab[2, :-2] = 0.25
    ab[0, 1] = 3.0
    ab[2, -2] = 3.0
    rhs = np.empty(n)
    rhs[1:-1] = 3.0 * (f[2:] - f[:-2]) / (4.0 * t)
    rhs[0] = (-17.0 * f[0] + 9.0 * f[1] + 9.0 * f[2] - f[3]) / (6.0 * t)
    rhs[-1] = (17.0 * f[-1] - 9.0 * f[-2] - 9.0 * f[-3] + f[-4]) / (6.0 * t)
    return solve_banded((1, 1), ab, rhs)


def compact_first_derivative(arr, spacing: float, axis: int,
                             valid=None) -> np.ndarray:
    """Fourth-order compact (tridiagonal) first derivative along axis,
    evaluated per contiguous valid run; invalid nodes get 0."""
    a = np.moveaxis(np.asarray(arr, dtype=float), axis, -1)
    shape = a.shape
    a = a.reshape(-1, shape[-1])
    if valid is None:
        v = np.ones(a.shape, dtype=bool)
    else:
        v = np.moveaxis(np.asarray(valid, dtype=bool), axis, -1).reshape(a.shape)
        if v.shape != a.shape:
            raise ValueError("valid mask shape does not match the array")
    out = np.zeros_like(a)
    for line, mask, dest in zip(a, v, out):
        if mask.all():
            dest[:] = _pade_segment(line, spacing)
            continue
        bounds = np.flatnonzero(np.diff(mask.astype(np.int8))) + 1
        for lo, hi in zip(np.r_[0, bounds], np.r_[bounds, mask.size]):
            if mask[lo]:
                dest[lo:hi] = _pade_segment(line[lo:hi], spacing)
    return np.moveaxis(out.reshape(shape), -1, axis)
