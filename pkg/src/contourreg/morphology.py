"""Windowed extrema over cubic neighbourhoods and the contour operator.

A window of radius ``d`` around voxel ``v`` is the ``(2d+1)^3`` cube centred
on ``v``, clipped to the volume.  Clipping is equivalent to padding with
``-inf`` for the maximum and ``+inf`` for the minimum, so boundary voxels
only ever see real data.

Two implementations of the max filter are provided: :func:`maxpool_naive`
compares every offset of the window, :func:`maxpool_separable` runs a
1D sliding maximum along x, then y, then z, in O(N) time independent of
``d``.  Both select existing values, so results are bitwise equal.  The
value-only filters use block prefix/suffix extrema (van Herk / Gil-Werman);
the arg variants use a monotonic queue so ties resolve deterministically.
"""

from __future__ import annotations

import itertools

import numba
import numpy as np

from .volume import ScalarVolume


def _as_array(vol) -> np.ndarray:
    # Returns a fresh C-ordered copy.  Adding +0.0 turns -0.0 into +0.0, so
    # zero ties cannot pick different sign bits in different kernels.
    arr = vol.data if isinstance(vol, ScalarVolume) else np.asarray(vol)
    if arr.ndim != 3:
        raise ValueError(f"expected a 3D volume, got shape {arr.shape}")
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    return np.ascontiguousarray(arr + arr.dtype.type(0.0))


def _check_radius(d: int) -> int:
    if int(d) != d or d < 0:
        raise ValueError(f"window radius must be a non-negative integer, got {d!r}")
    return int(d)


def maxpool_naive(vol, d: int) -> np.ndarray:
    """Max filter by direct comparison of all window offsets."""
    a = _as_array(vol)
    d = _check_radius(d)
    padded = np.pad(a, d, mode="constant", constant_values=-np.inf)
    out = np.full_like(a, -np.inf)
    nz, ny, nx = a.shape
    for oz, oy, ox in itertools.product(range(2 * d + 1), repeat=3):
        np.maximum(out, padded[oz:oz + nz, oy:oy + ny, ox:ox + nx], out=out)
    return out


@numba.njit(cache=True)
def _slide_lines(values, index, bases, stride, n, d, take_max, out_values, out_index):
    # One 1D sliding extremum per line; line k covers flat positions
    # bases[k] + j * stride for j < n.  The deque holds line positions and the
    # comparison is strict, so the earliest of tied extrema stays in front.
    queue = np.empty(n, dtype=np.int64)
    for k in range(bases.size):
        base = bases[k]
        head = 0
        tail = 0
        for j in range(n + d):
            if j < n:
                v = values[base + j * stride]
                if take_max:
                    while tail > head and values[base + queue[tail - 1] * stride] < v:
                        tail -= 1
                else:
                    while tail > head and values[base + queue[tail - 1] * stride] > v:
                        tail -= 1
                queue[tail] = j
                tail += 1
            i = j - d
            if i >= 0:
                while queue[head] < i - d:
                    head += 1
                src = base + queue[head] * stride
                dst = base + i * stride
                out_values[dst] = values[src]
                out_index[dst] = index[src]


@numba.njit(cache=True)
def _block_extrema(a, d, take_max, out):
    # a, out: (outer, n, inner); filter along axis 1.  Index p of the padded
    # line maps to a[:, p - d]; blocks of length 2d+1 start at p = 0, so the
    # window of output i is padded [i, i + 2d], covered by the suffix extremum
    # at i and the prefix extremum at i + 2d.
    outer, n, inner = a.shape
    k = 2 * d + 1
    length = n + 2 * d
    fill = -np.inf if take_max else np.inf
    pre = np.empty((length, inner), dtype=a.dtype)
    suf = np.empty((length, inner), dtype=a.dtype)
    for o in range(outer):
        for p in range(length):
            inside = d <= p < n + d
            start = p % k == 0
            for c in range(inner):
                v = a[o, p - d, c] if inside else fill
                if start:
                    pre[p, c] = v
                elif take_max:
                    pre[p, c] = max(pre[p - 1, c], v)
                else:
                    pre[p, c] = min(pre[p - 1, c], v)
        for p in range(length - 1, -1, -1):
            inside = d <= p < n + d
            end = p % k == k - 1 or p == length - 1
            for c in range(inner):
                v = a[o, p - d, c] if inside else fill
                if end:
                    suf[p, c] = v
                elif take_max:
                    suf[p, c] = max(suf[p + 1, c], v)
                else:
                    suf[p, c] = min(suf[p + 1, c], v)
        for i in range(n):
            for c in range(inner):
                if take_max:
                    out[o, i, c] = max(suf[i, c], pre[i + 2 * d, c])
                else:
                    out[o, i, c] = min(suf[i, c], pre[i + 2 * d, c])


def _filter(a: np.ndarray, d: int, take_max: bool) -> np.ndarray:
    values = a.copy()
    if d == 0:
        return values
    nz, ny, nx = a.shape
    out = np.empty_like(values)
    for shape3 in ((nz * ny, nx, 1), (nz, ny, nx), (1, nz, ny * nx)):
        _block_extrema(values.reshape(shape3), d, take_max, out.reshape(shape3))
        values, out = out, values
    return values


def _line_bases(shape, axis):
    strides = np.cumprod((1,) + shape[::-1][:-1])[::-1]  # element strides of (z, y, x)
    others = [np.arange(n) * s for a, (n, s) in enumerate(zip(shape, strides)) if a != axis]
    bases = np.add.outer(others[0], others[1]).ravel()
    return bases.astype(np.int64), int(strides[axis])


def _separable(a: np.ndarray, d: int, take_max: bool) -> tuple[np.ndarray, np.ndarray]:
    values = a.ravel().copy()
    index = np.arange(values.size, dtype=np.int64)
    if d == 0:
        return values.reshape(a.shape), index.reshape(a.shape)
    out_v = np.empty_like(values)
    out_i = np.empty_like(index)
    # array axes are (z, y, x); pass order x, y, z
    for axis in (2, 1, 0):
        bases, stride = _line_bases(a.shape, axis)
        _slide_lines(values, index, bases, stride, a.shape[axis], d, take_max, out_v, out_i)
        values, out_v = out_v, values
        index, out_i = out_i, index
    return values.reshape(a.shape), index.reshape(a.shape)


def maxpool_separable(vol, d: int) -> np.ndarray:
    """Max filter via three 1D block prefix/suffix passes (x, y, z)."""
    a = _as_array(vol)
    return _filter(a, _check_radius(d), True)


def maxpool_argmax(vol, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Max filter plus the flat index of the voxel each output was taken from.

    Ties resolve to the first occurrence in ascending (z, y, x) order, which
    is ascending flat index.
    """
    a = _as_array(vol)
    return _separable(a, _check_radius(d), True)


def minpool_argmin(vol, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Min filter counterpart of :func:`maxpool_argmax`."""
    a = _as_array(vol)
    return _separable(a, _check_radius(d), False)


def contour(p, d: int) -> np.ndarray:
    """Windowed max minus windowed min, i.e. the morphological gradient.

    Equals ``M_d(p) + M_d(-p)`` with ``M_d`` the stride-1 max pool of
    extent ``2d+1``.
    """
    a = _as_array(p)
    d = _check_radius(d)
    return _filter(a, d, True) - _filter(a, d, False)
