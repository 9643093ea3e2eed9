"""World state: visibility-driven lifecycle of terrain cells and the
ray-query entry points.

Each simulation step the lifecycle pass recomputes the required cell set:
a cell is required iff it belongs to the 3x3 neighborhood of some observer's
containing cell AND that observer is within visibility range of the cell's
a-priori bounding box. Newly required cells are generated deterministically;
cells that stop being required are dropped (no caching: regeneration is
bit-identical, so observable behavior does not depend on eviction).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .bvh import CellGeometry, CompositeGeometry, RayHit
from .terrain import (FOLIAGE_MAX_HEIGHT, CellIndex, TerrainParams,
                      generate_cell)


@dataclass
class WorldState:
    params: TerrainParams
    cells: dict = field(default_factory=dict)    # CellIndex -> TerrainCell
    geometry: CompositeGeometry = field(default_factory=CompositeGeometry)

    @property
    def active_indices(self):
        return set(self.cells)

    @property
    def n_triangles(self):
        return self.geometry.n_triangles


def make_world(params: TerrainParams) -> WorldState:
    return WorldState(params=params)


def containing_cell(position, cell_size) -> CellIndex:
    return CellIndex(int(math.floor(position[0] / cell_size)),
                     int(math.floor(position[1] / cell_size)))


def cell_visible(index, observer, params: TerrainParams) -> bool:
    """Distance from the observer to the cell's a-priori bounding box is
    within visibility range. The z extent uses the analytic height bound plus
    the tallest foliage, so the test needs no generated geometry."""
    cs = params.cell_size
    x0, x1 = index[0] * cs, (index[0] + 1) * cs
    y0, y1 = index[1] * cs, (index[1] + 1) * cs
    z0 = -params.height_bound
    z1 = params.height_bound + FOLIAGE_MAX_HEIGHT
    dx = max(x0 - observer[0], 0.0, observer[0] - x1)
    dy = max(y0 - observer[1], 0.0, observer[1] - y1)
    oz = observer[2] if len(observer) > 2 else 0.0
    dz = max(z0 - oz, 0.0, oz - z1)
    return math.sqrt(dx * dx + dy * dy + dz * dz) <= params.visibility_range


def required_cells(params: TerrainParams, uav_positions, spectator=None):
    """Cells demanded by the current observers (order independent).

    Runs once per simulation step, so the inner loop avoids per-candidate
    object construction.
    """
    observers = list(uav_positions)
    if spectator is not None:
        observers.append(spectator)
    if not observers:
        raise ValueError("at least one observer position is required")
    cs = params.cell_size
    vr = params.visibility_range
    z0 = -params.height_bound
    z1 = params.height_bound + FOLIAGE_MAX_HEIGHT
    required = set()
    add = required.add
    for obs in observers:
        px = float(obs[0])
        py = float(obs[1])
        pz = float(obs[2]) if len(obs) > 2 else 0.0
        cx = math.floor(px / cs)
        cy = math.floor(py / cs)
        dz = z0 - pz if pz < z0 else (pz - z1 if pz > z1 else 0.0)
        dz2 = dz * dz
        for ix in (cx - 1, cx, cx + 1):
            x0 = ix * cs
            dx = x0 - px if px < x0 else (px - x0 - cs if px > x0 + cs else 0.0)
            for iy in (cy - 1, cy, cy + 1):
                key = (ix, iy)
                if key in required:
                    continue
                y0 = iy * cs
                dy = y0 - py if py < y0 \
                    else (py - y0 - cs if py > y0 + cs else 0.0)
                if dx * dx + dy * dy + dz2 <= vr * vr:
                    add(key)
    return {CellIndex(*key) for key in required}


def update_cells(world: WorldState, uav_positions, spectator=None) -> WorldState:
    """Lifecycle pass: create newly required cells, drop the rest."""
    required = required_cells(world.params, uav_positions, spectator)
    current = set(world.cells)
    for idx in sorted(required - current):
        cell = generate_cell(idx, world.params)
        world.cells[idx] = cell
        world.geometry.add_cell(idx, CellGeometry(cell, world.params))
    for idx in sorted(current - required):
        del world.cells[idx]
        world.geometry.remove_cell(idx)
    return world


def raycast(world: WorldState, origin, direction, max_range: float):
    """Nearest intersection with the active geometry, or None on miss."""
    direction = np.asarray(direction, dtype=float)
    norm = float(np.linalg.norm(direction))
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"direction must be unit length, |d| = {norm}")
    if max_range <= 0.0:
        raise ValueError("max_range must be > 0")
    origin = np.asarray(origin, dtype=float)
    t, label, intensity, normal = world.geometry.raycast_batch(
        origin[None, :], direction[None, :], max_range)
    if label[0] < 0:
        return None
    return RayHit(distance=float(t[0]), point=origin + direction * t[0],
                  normal=normal[0], label=int(label[0]),
                  intensity=float(intensity[0]))


def dump_obj(world: WorldState, handle):
    """ASCII triangle-mesh dump of the active cells (foliage as comments)."""
    handle.write("# terrain mesh export\n")
    base = 1
    for idx in sorted(world.cells):
        cell = world.cells[idx]
        handle.write(f"g cell_{idx.ix}_{idx.iy}\n")
        for v in cell.vertices:
            handle.write(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}\n")
        for t in cell.triangles:
            handle.write(f"f {base + t[0]} {base + t[1]} {base + t[2]}\n")
        base += cell.vertices.shape[0]
        for f in cell.foliage:
            handle.write(f"# foliage {f.kind} {f.position[0]:.3f} "
                         f"{f.position[1]:.3f} {f.position[2]:.3f} "
                         f"r={f.radius:.3f} h={f.height:.3f}\n")
