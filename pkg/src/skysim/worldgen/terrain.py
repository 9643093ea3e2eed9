"""Terrain cells: fractal-noise height field meshed per rectangular cell,
plus density-filtered foliage instances.

Vertex positions are a pure function of world coordinates (never of the cell
that asked), so coincident border vertices of adjacent cells are bit-identical
and the tiling is seamless by construction.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numba import njit, prange

from .noise import _hash_float01, _octave_height

SEMANTIC_TERRAIN = 0
SEMANTIC_TREE = 1
SEMANTIC_GRASS = 2
SEMANTIC_SKY = 255

DEFAULT_MATERIAL_INTENSITY = {
    SEMANTIC_TERRAIN: 0.35,
    SEMANTIC_TREE: 0.6,
    SEMANTIC_GRASS: 0.2,
}

# candidate oversampling for the density filter
FOLIAGE_OVERSAMPLE = 2.0
TREE_FRACTION = 0.3
TREE_RADIUS_RANGE = (0.15, 0.4)
TREE_HEIGHT_RANGE = (5.0, 12.0)
GRASS_RADIUS_RANGE = (0.05, 0.15)
GRASS_HEIGHT = 0.3
FOLIAGE_MAX_HEIGHT = TREE_HEIGHT_RANGE[1]


class CellIndex(NamedTuple):
    ix: int
    iy: int


@dataclass
class TerrainParams:
    seed: int = 0
    cell_size: float = 100.0
    grid_resolution: int = 33     # vertices per cell edge
    roughness: float = 0.5        # per-octave persistence
    amplitude: float = 8.0        # m
    base_frequency: float = 0.01  # 1/m
    octaves: int = 4
    forest_density: float = 0.01  # instances / m^2
    visibility_range: float = 150.0
    material_intensity: dict = field(
        default_factory=lambda: dict(DEFAULT_MATERIAL_INTENSITY))

    def __post_init__(self):
        if self.cell_size <= 0.0:
            raise ValueError("cell_size must be > 0")
        if self.grid_resolution < 2:
            raise ValueError("grid_resolution must be >= 2")
        if self.visibility_range <= 0.0:
            raise ValueError("visibility_range must be > 0")
        if self.roughness < 0.0:
            raise ValueError("roughness must be >= 0")
        if self.octaves < 1:
            raise ValueError("octaves must be >= 1")
        if self.forest_density < 0.0:
            raise ValueError("forest_density must be >= 0")
        for label, value in self.material_intensity.items():
            if not 0 <= label <= 255 or not 0.0 <= value <= 1.0:
                raise ValueError("material intensity entries must map a class "
                                 "in [0, 255] to a value in [0, 1]")

    @property
    def height_bound(self) -> float:
        """A-priori bound on |terrain height|, available before generation."""
        total = sum(self.roughness ** o for o in range(self.octaves))
        return abs(self.amplitude) * total

    def noise_seed(self):
        return np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF)


@dataclass
class FoliageInstance:
    position: np.ndarray  # world, base of the instance
    kind: str             # "tree" | "grass"
    radius: float
    height: float
    label: int


@dataclass
class TerrainCell:
    index: CellIndex
    vertices: np.ndarray         # (V, 3) world coordinates
    triangles: np.ndarray        # (T, 3) int32 vertex indices
    vertex_normals: np.ndarray   # (V, 3) unit
    triangle_labels: np.ndarray  # (T,) uint8
    foliage: list


def terrain_height(x: float, y: float, p: TerrainParams) -> float:
    """Fractal height at a world point; independent of any cell identity."""
    return float(_octave_height(float(x), float(y), p.amplitude, p.roughness,
                                p.base_frequency, p.octaves, p.noise_seed()))


@njit(cache=True, parallel=True)
def _mesh_kernel(ix, iy, res, spacing, amplitude, roughness, base_frequency,
                 octaves, seed, grad_step):
    nv = res * res
    verts = np.empty((nv, 3))
    normals = np.empty((nv, 3))
    for i in prange(res):
        gx = ix * (res - 1) + i
        x = gx * spacing
        for j in range(res):
            gy = iy * (res - 1) + j
            y = gy * spacing
            z = _octave_height(x, y, amplitude, roughness, base_frequency,
                               octaves, seed)
            zxp = _octave_height(x + grad_step, y, amplitude, roughness,
                                 base_frequency, octaves, seed)
            zxm = _octave_height(x - grad_step, y, amplitude, roughness,
                                 base_frequency, octaves, seed)
            zyp = _octave_height(x, y + grad_step, amplitude, roughness,
                                 base_frequency, octaves, seed)
            zym = _octave_height(x, y - grad_step, amplitude, roughness,
                                 base_frequency, octaves, seed)
            dzdx = (zxp - zxm) / (2.0 * grad_step)
            dzdy = (zyp - zym) / (2.0 * grad_step)
            k = i * res + j
            verts[k, 0] = x
            verts[k, 1] = y
            verts[k, 2] = z
            inv = 1.0 / math.sqrt(dzdx * dzdx + dzdy * dzdy + 1.0)
            normals[k, 0] = -dzdx * inv
            normals[k, 1] = -dzdy * inv
            normals[k, 2] = inv
    return verts, normals


def _triangulate(res):
    t = np.empty((2 * (res - 1) * (res - 1), 3), dtype=np.int32)
    n = 0
    for i in range(res - 1):
        for j in range(res - 1):
            a = i * res + j
            b = (i + 1) * res + j
            c = (i + 1) * res + j + 1
            d = i * res + j + 1
            t[n] = (a, b, c)
            t[n + 1] = (a, c, d)
            n += 2
    return t


_TRIANGLE_CACHE = {}


def _triangles_for(res):
    if res not in _TRIANGLE_CACHE:
        _TRIANGLE_CACHE[res] = _triangulate(res)
    return _TRIANGLE_CACHE[res]


def _range_from_hash(u, lo_hi):
    lo, hi = lo_hi
    return lo + u * (hi - lo)


def generate_cell(index, p: TerrainParams) -> TerrainCell:
    """Deterministically generate the mesh and foliage of one cell."""
    index = CellIndex(*index)
    res = p.grid_resolution
    spacing = p.cell_size / (res - 1)
    seed = p.noise_seed()
    verts, normals = _mesh_kernel(
        index.ix, index.iy, res, spacing, p.amplitude, p.roughness,
        p.base_frequency, p.octaves, seed, spacing * 0.25)
    tris = _triangles_for(res)
    labels = np.full(tris.shape[0], SEMANTIC_TERRAIN, dtype=np.uint8)

    foliage = []
    area = p.cell_size * p.cell_size
    expected = p.forest_density * area
    n_candidates = int(math.ceil(expected * FOLIAGE_OVERSAMPLE))
    if n_candidates > 0:
        accept_p = expected / n_candidates
        ix64 = np.int64(index.ix)
        iy64 = np.int64(index.iy)
        for i in range(n_candidates):
            i64 = np.int64(i)
            if _hash_float01(ix64, iy64, i64, np.int64(0), seed) >= accept_p:
                continue
            u = _hash_float01(ix64, iy64, i64, np.int64(1), seed)
            v = _hash_float01(ix64, iy64, i64, np.int64(2), seed)
            x = (index.ix + u) * p.cell_size
            y = (index.iy + v) * p.cell_size
            z = terrain_height(x, y, p)
            if _hash_float01(ix64, iy64, i64, np.int64(3), seed) < TREE_FRACTION:
                kind = "tree"
                label = SEMANTIC_TREE
                radius = _range_from_hash(
                    _hash_float01(ix64, iy64, i64, np.int64(4), seed),
                    TREE_RADIUS_RANGE)
                height = _range_from_hash(
                    _hash_float01(ix64, iy64, i64, np.int64(5), seed),
                    TREE_HEIGHT_RANGE)
            else:
                kind = "grass"
                label = SEMANTIC_GRASS
                radius = _range_from_hash(
                    _hash_float01(ix64, iy64, i64, np.int64(4), seed),
                    GRASS_RADIUS_RANGE)
                height = GRASS_HEIGHT
            foliage.append(FoliageInstance(
                position=np.array([x, y, z]), kind=kind, radius=radius,
                height=height, label=label))

    return TerrainCell(index=index, vertices=verts, triangles=tris,
                       vertex_normals=normals, triangle_labels=labels,
                       foliage=foliage)
