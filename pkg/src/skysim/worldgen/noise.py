"""Seeded 2D gradient noise over an unbounded integer lattice.

Gradients are picked per lattice node by a splitmix-style integer hash of
(node, seed), so the field never tiles and needs no permutation table. The
quintic fade keeps the result C1-continuous; values vanish exactly at lattice
nodes and stay within [-1, 1] (the per-cell upper envelope of this gradient
set attains 1.0 only in the degenerate all-inward case).
"""

import numpy as np
from numba import njit, prange

U64 = np.uint64


@njit(cache=True, inline="always")
def _mix(h):
    h = (h ^ (h >> U64(30))) * U64(0xBF58476D1CE4E5B9)
    h = (h ^ (h >> U64(27))) * U64(0x94D049BB133111EB)
    return h ^ (h >> U64(31))


@njit(cache=True, inline="always")
def _hash_node(ix, iy, seed):
    h = U64(seed) + U64(0x9E3779B97F4A7C15)
    h = _mix(h ^ (U64(ix) * U64(0xD6E8FEB86659FD93)))
    h = _mix(h ^ (U64(iy) * U64(0xCA5A826395121157)))
    return h


@njit(cache=True, inline="always")
def _grad_dot(ix, iy, seed, dx, dy):
    g = _hash_node(ix, iy, seed) & U64(7)
    if g == 0:
        return dx + dy
    if g == 1:
        return -dx + dy
    if g == 2:
        return dx - dy
    if g == 3:
        return -dx - dy
    if g == 4:
        return dx
    if g == 5:
        return -dx
    if g == 6:
        return dy
    return -dy


@njit(cache=True, inline="always")
def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


@njit(cache=True)
def _perlin_unit(x, y, seed):
    # coordinates already in lattice units
    x0 = np.int64(np.floor(x))
    y0 = np.int64(np.floor(y))
    dx = x - x0
    dy = y - y0
    u = _fade(dx)
    v = _fade(dy)
    n00 = _grad_dot(x0, y0, seed, dx, dy)
    n10 = _grad_dot(x0 + 1, y0, seed, dx - 1.0, dy)
    n01 = _grad_dot(x0, y0 + 1, seed, dx, dy - 1.0)
    n11 = _grad_dot(x0 + 1, y0 + 1, seed, dx - 1.0, dy - 1.0)
    a = n00 + u * (n10 - n00)
    b = n01 + u * (n11 - n01)
    return a + v * (b - a)


@njit(cache=True)
def _perlin_scalar(x, y, frequency, seed):
    return _perlin_unit(x * frequency, y * frequency, seed)


def perlin(x: float, y: float, frequency: float, seed: int) -> float:
    """Gradient-noise value at a world point for a lattice of the given
    spatial frequency. Deterministic in (x, y, frequency, seed)."""
    if not (np.isfinite(x) and np.isfinite(y) and np.isfinite(frequency)):
        raise ValueError("perlin inputs must be finite")
    return float(_perlin_scalar(float(x), float(y), float(frequency),
                                np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))


@njit(cache=True)
def _octave_height(x, y, amplitude, roughness, base_frequency, octaves, seed):
    total = 0.0
    weight = 1.0
    freq = base_frequency
    for o in range(octaves):
        total += weight * _perlin_unit(x * freq, y * freq, seed ^ U64(o))
        weight *= roughness
        freq *= 2.0
    return amplitude * total


@njit(cache=True, parallel=True)
def _height_grid(xs, ys, amplitude, roughness, base_frequency, octaves, seed):
    nx = xs.shape[0]
    ny = ys.shape[0]
    out = np.empty((nx, ny))
    for i in prange(nx):
        for j in range(ny):
            out[i, j] = _octave_height(xs[i], ys[j], amplitude, roughness,
                                       base_frequency, octaves, seed)
    return out


@njit(cache=True, inline="always")
def _hash_float01(a, b, c, d, seed):
    h = _mix(U64(seed) ^ (U64(a) * U64(0x9E3779B97F4A7C15)))
    h = _mix(h ^ (U64(b) * U64(0xD6E8FEB86659FD93)))
    h = _mix(h ^ (U64(c) * U64(0xCA5A826395121157)))
    h = _mix(h ^ (U64(d) * U64(0xA24BAED4963EE407)))
    return (h >> U64(11)) * 1.1102230246251565e-16  # 2^-53


def hash_float01(a: int, b: int, c: int, d: int, seed: int) -> float:
    """Deterministic uniform in [0, 1) from four integers and a seed."""
    return float(_hash_float01(
        np.int64(a), np.int64(b), np.int64(c), np.int64(d),
        np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))
