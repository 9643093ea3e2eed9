"""Bounding-volume hierarchies over terrain triangles and foliage proxies,
with a batch ray-cast kernel.

Each cell carries its own flat BVH (median split on the longest centroid
axis); the world-level structure is the set of per-cell trees plus their
bounding boxes. Rays visit cells nearest-first and prune against the best hit
so far, which keeps incremental cell add/remove trivial: the composite arrays
are plain concatenations rebuilt when the active set changes.

Tree foliage is represented by a capped vertical cylinder; grass instances
carry no ray proxy.
"""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .terrain import TerrainCell, TerrainParams

LEAF_SIZE = 4
_RAY_EPS = 1e-9
_DET_EPS = 1e-13
_BARY_EPS = 1e-12


@dataclass
class RayHit:
    distance: float
    point: np.ndarray
    normal: np.ndarray
    label: int
    intensity: float


def _build_flat_bvh(bmin, bmax):
    """Median-split BVH; returns (node_bounds, left, start, count, order)."""
    n = bmin.shape[0]
    cent = 0.5 * (bmin + bmax)
    order = np.arange(n, dtype=np.int32)
    cap = max(2 * n, 1)
    node_bounds = np.empty((cap, 6))
    node_left = np.full(cap, -1, dtype=np.int32)
    node_start = np.zeros(cap, dtype=np.int32)
    node_count = np.zeros(cap, dtype=np.int32)
    n_nodes = 1
    stack = [(0, 0, n)]
    while stack:
        nid, lo, hi = stack.pop()
        idx = order[lo:hi]
        lo_b = bmin[idx].min(axis=0)
        hi_b = bmax[idx].max(axis=0)
        node_bounds[nid, 0:3] = lo_b
        node_bounds[nid, 3:6] = hi_b
        if hi - lo <= LEAF_SIZE:
            node_start[nid] = lo
            node_count[nid] = hi - lo
            continue
        c = cent[idx]
        spread = c.max(axis=0) - c.min(axis=0)
        axis = int(np.argmax(spread))
        if spread[axis] <= 0.0:
            node_start[nid] = lo
            node_count[nid] = hi - lo
            continue
        mid = (hi - lo) // 2
        part = np.argpartition(c[:, axis], mid)
        order[lo:hi] = idx[part]
        left = n_nodes
        n_nodes += 2
        node_left[nid] = left
        stack.append((left, lo, lo + mid))
        stack.append((left + 1, lo + mid, hi))
    return (node_bounds[:n_nodes].copy(), node_left[:n_nodes].copy(),
            node_start[:n_nodes].copy(), node_count[:n_nodes].copy(), order)


class CellGeometry:
    """Ray-castable geometry of one terrain cell (triangles + tree proxies)."""

    def __init__(self, cell: TerrainCell, params: TerrainParams):
        v = cell.vertices
        tri = cell.triangles
        self.tri_v0 = np.ascontiguousarray(v[tri[:, 0]])
        self.tri_e1 = np.ascontiguousarray(v[tri[:, 1]] - v[tri[:, 0]])
        self.tri_e2 = np.ascontiguousarray(v[tri[:, 2]] - v[tri[:, 0]])
        n = cell.vertex_normals
        self.tri_n0 = np.ascontiguousarray(n[tri[:, 0]])
        self.tri_n1 = np.ascontiguousarray(n[tri[:, 1]])
        self.tri_n2 = np.ascontiguousarray(n[tri[:, 2]])
        self.tri_label = np.ascontiguousarray(cell.triangle_labels)
        intensity = params.material_intensity
        self.tri_intensity = np.array(
            [intensity.get(int(l), 0.0) for l in cell.triangle_labels])

        trees = [f for f in cell.foliage if f.kind == "tree"]
        self.cyl_data = np.zeros((len(trees), 5))
        self.cyl_label = np.zeros(len(trees), dtype=np.uint8)
        self.cyl_intensity = np.zeros(len(trees))
        for i, f in enumerate(trees):
            self.cyl_data[i] = (f.position[0], f.position[1], f.position[2],
                                f.radius, f.height)
            self.cyl_label[i] = f.label
            self.cyl_intensity[i] = intensity.get(int(f.label), 0.0)

        nt = self.tri_v0.shape[0]
        p1 = np.minimum(np.minimum(self.tri_v0, self.tri_v0 + self.tri_e1),
                        self.tri_v0 + self.tri_e2)
        p2 = np.maximum(np.maximum(self.tri_v0, self.tri_v0 + self.tri_e1),
                        self.tri_v0 + self.tri_e2)
        if len(trees):
            c = self.cyl_data
            cmin = np.column_stack([c[:, 0] - c[:, 3], c[:, 1] - c[:, 3], c[:, 2]])
            cmax = np.column_stack([c[:, 0] + c[:, 3], c[:, 1] + c[:, 3],
                                    c[:, 2] + c[:, 4]])
            bmin = np.vstack([p1, cmin])
            bmax = np.vstack([p2, cmax])
        else:
            bmin, bmax = p1, p2
        (self.node_bounds, self.node_left, self.node_start, self.node_count,
         order) = _build_flat_bvh(bmin, bmax)
        # local primitive ids: [0, nt) triangles, [nt, nt + n_cyl) cylinders
        self.prim_order = order
        self.n_triangles = nt
        self.aabb = np.concatenate([bmin.min(axis=0), bmax.max(axis=0)])


_EMPTY_F2 = np.zeros((0, 3))
_EMPTY_CYL = np.zeros((0, 5))
_EMPTY_U8 = np.zeros(0, dtype=np.uint8)
_EMPTY_F1 = np.zeros(0)


class CompositeGeometry:
    """World-level ray structure over the currently active cells."""

    def __init__(self):
        self._cells = {}
        self._dirty = True
        self._flat = None

    def add_cell(self, index, geometry: CellGeometry):
        self._cells[index] = geometry
        self._dirty = True

    def remove_cell(self, index):
        del self._cells[index]
        self._dirty = True

    def indices(self):
        return set(self._cells)

    @property
    def n_triangles(self):
        return sum(g.n_triangles for g in self._cells.values())

    def _rebuild(self):
        cells = [self._cells[k] for k in sorted(self._cells)]
        if not cells:
            self._flat = None
            self._dirty = False
            return
        n_tri_total = sum(g.n_triangles for g in cells)
        nodes, lefts, starts, counts, prims = [], [], [], [], []
        roots = np.empty(len(cells), dtype=np.int32)
        aabbs = np.empty((len(cells), 6))
        node_off = 0
        prim_off = 0
        tri_off = 0
        cyl_off = 0
        for i, g in enumerate(cells):
            roots[i] = node_off
            aabbs[i] = g.aabb
            nodes.append(g.node_bounds)
            left = g.node_left.copy()
            left[left >= 0] += node_off
            lefts.append(left)
            starts.append(g.node_start + prim_off)
            counts.append(g.node_count)
            p = g.prim_order.astype(np.int64)
            tri_mask = p < g.n_triangles
            gp = np.where(tri_mask, p + tri_off,
                          n_tri_total + cyl_off + (p - g.n_triangles))
            prims.append(gp.astype(np.int32))
            node_off += g.node_bounds.shape[0]
            prim_off += p.shape[0]
            tri_off += g.n_triangles
            cyl_off += g.cyl_data.shape[0]

        def cat(attr, empty):
            arrs = [getattr(g, attr) for g in cells if getattr(g, attr).size]
            return np.ascontiguousarray(np.concatenate(arrs)) if arrs else empty

        self._flat = dict(
            cell_aabb=aabbs,
            cell_root=roots,
            node_bounds=np.ascontiguousarray(np.concatenate(nodes)),
            node_left=np.concatenate(lefts),
            node_start=np.concatenate(starts),
            node_count=np.concatenate(counts),
            prim_ids=np.concatenate(prims),
            tri_v0=cat("tri_v0", _EMPTY_F2), tri_e1=cat("tri_e1", _EMPTY_F2),
            tri_e2=cat("tri_e2", _EMPTY_F2), tri_n0=cat("tri_n0", _EMPTY_F2),
            tri_n1=cat("tri_n1", _EMPTY_F2), tri_n2=cat("tri_n2", _EMPTY_F2),
            tri_label=cat("tri_label", _EMPTY_U8),
            tri_intensity=cat("tri_intensity", _EMPTY_F1),
            cyl_data=cat("cyl_data", _EMPTY_CYL),
            cyl_label=cat("cyl_label", _EMPTY_U8),
            cyl_intensity=cat("cyl_intensity", _EMPTY_F1),
            n_triangles=n_tri_total,
        )
        self._dirty = False

    def raycast_batch(self, origins, directions, max_range):
        """Nearest hits for a batch of rays.

        Returns (t, label, intensity, normal); misses carry t = +inf and
        label -1.
        """
        origins = np.ascontiguousarray(origins, dtype=float)
        directions = np.ascontiguousarray(directions, dtype=float)
        n = origins.shape[0]
        if self._dirty:
            self._rebuild()
        if self._flat is None or n == 0:
            return (np.full(n, np.inf), np.full(n, -1, dtype=np.int16),
                    np.zeros(n), np.zeros((n, 3)))
        f = self._flat
        return _raycast_kernel(
            origins, directions, float(max_range),
            f["cell_aabb"], f["cell_root"], f["node_bounds"], f["node_left"],
            f["node_start"], f["node_count"], f["prim_ids"],
            f["tri_v0"], f["tri_e1"], f["tri_e2"], f["tri_n0"], f["tri_n1"],
            f["tri_n2"], f["tri_label"], f["tri_intensity"],
            f["cyl_data"], f["cyl_label"], f["cyl_intensity"],
            f["n_triangles"])


@njit(cache=True, inline="always")
def _slab_entry(ox, oy, oz, idx, idy, idz, b, t_best):
    """Entry distance of a ray into an AABB, or inf when missed."""
    tmin = 0.0
    tmax = t_best
    t1 = (b[0] - ox) * idx
    t2 = (b[3] - ox) * idx
    if t1 > t2:
        t1, t2 = t2, t1
    if t1 > tmin:
        tmin = t1
    if t2 < tmax:
        tmax = t2
    if tmin > tmax:
        return math.inf
    t1 = (b[1] - oy) * idy
    t2 = (b[4] - oy) * idy
    if t1 > t2:
        t1, t2 = t2, t1
    if t1 > tmin:
        tmin = t1
    if t2 < tmax:
        tmax = t2
    if tmin > tmax:
        return math.inf
    t1 = (b[2] - oz) * idz
    t2 = (b[5] - oz) * idz
    if t1 > t2:
        t1, t2 = t2, t1
    if t1 > tmin:
        tmin = t1
    if t2 < tmax:
        tmax = t2
    if tmin > tmax:
        return math.inf
    return tmin


@njit(cache=True, parallel=True)
def _raycast_kernel(origins, dirs, max_range, cell_aabb, cell_root,
                    node_bounds, node_left, node_start, node_count, prim_ids,
                    tv0, te1, te2, tn0, tn1, tn2, tlabel, tintensity,
                    cyl, clabel, cintensity, n_tri):
    n_rays = origins.shape[0]
    n_cells = cell_root.shape[0]
    out_t = np.full(n_rays, np.inf)
    out_label = np.full(n_rays, -1, dtype=np.int16)
    out_intensity = np.zeros(n_rays)
    out_normal = np.zeros((n_rays, 3))

    n_blocks = min(n_rays, 128)
    block = (n_rays + n_blocks - 1) // n_blocks
    for b in prange(n_blocks):
        stack = np.empty(128, dtype=np.int32)
        cell_t = np.empty(n_cells)
        cell_i = np.empty(n_cells, dtype=np.int32)
        for r in range(b * block, min(n_rays, (b + 1) * block)):
            ox = origins[r, 0]
            oy = origins[r, 1]
            oz = origins[r, 2]
            dx = dirs[r, 0]
            dy = dirs[r, 1]
            dz = dirs[r, 2]
            idx = 1.0 / dx if dx != 0.0 else math.inf
            idy = 1.0 / dy if dy != 0.0 else math.inf
            idz = 1.0 / dz if dz != 0.0 else math.inf

            best = math.inf
            best_prim = -1
            best_u = 0.0
            best_v = 0.0
            best_part = 0  # cylinder: 0 side, 1 top, 2 bottom

            # order candidate cells by entry distance (insertion sort)
            nc = 0
            for c in range(n_cells):
                limit = best if best < max_range else max_range
                te = _slab_entry(ox, oy, oz, idx, idy, idz, cell_aabb[c], limit)
                if te != math.inf:
                    j = nc
                    while j > 0 and cell_t[j - 1] > te:
                        cell_t[j] = cell_t[j - 1]
                        cell_i[j] = cell_i[j - 1]
                        j -= 1
                    cell_t[j] = te
                    cell_i[j] = c
                    nc += 1

            for ci in range(nc):
                if cell_t[ci] > best:
                    break
                top = 0
                stack[0] = cell_root[cell_i[ci]]
                while top >= 0:
                    nid = stack[top]
                    top -= 1
                    limit = best if best < max_range else max_range
                    if _slab_entry(ox, oy, oz, idx, idy, idz,
                                   node_bounds[nid], limit) == math.inf:
                        continue
                    cnt = node_count[nid]
                    if cnt == 0:
                        left = node_left[nid]
                        top += 1
                        stack[top] = left
                        top += 1
                        stack[top] = left + 1
                        continue
                    start = node_start[nid]
                    for k in range(start, start + cnt):
                        p = prim_ids[k]
                        if p < n_tri:
                            # Moller-Trumbore, double sided
                            e1x = te1[p, 0]
                            e1y = te1[p, 1]
                            e1z = te1[p, 2]
                            e2x = te2[p, 0]
                            e2y = te2[p, 1]
                            e2z = te2[p, 2]
                            px = dy * e2z - dz * e2y
                            py = dz * e2x - dx * e2z
                            pz = dx * e2y - dy * e2x
                            det = e1x * px + e1y * py + e1z * pz
                            if det > -_DET_EPS and det < _DET_EPS:
                                continue
                            inv_det = 1.0 / det
                            tx = ox - tv0[p, 0]
                            ty = oy - tv0[p, 1]
                            tz = oz - tv0[p, 2]
                            u = (tx * px + ty * py + tz * pz) * inv_det
                            if u < -_BARY_EPS or u > 1.0 + _BARY_EPS:
                                continue
                            qx = ty * e1z - tz * e1y
                            qy = tz * e1x - tx * e1z
                            qz = tx * e1y - ty * e1x
                            v = (dx * qx + dy * qy + dz * qz) * inv_det
                            if v < -_BARY_EPS or u + v > 1.0 + _BARY_EPS:
                                continue
                            t = (e2x * qx + e2y * qy + e2z * qz) * inv_det
                            if t > _RAY_EPS and t <= max_range and t < best:
                                best = t
                                best_prim = p
                                best_u = u
                                best_v = v
                        else:
                            c = p - n_tri
                            cx = cyl[c, 0]
                            cy = cyl[c, 1]
                            zb = cyl[c, 2]
                            rad = cyl[c, 3]
                            zt = zb + cyl[c, 4]
                            rox = ox - cx
                            roy = oy - cy
                            a = dx * dx + dy * dy
                            if a > 1e-16:
                                hb = rox * dx + roy * dy
                                hc = rox * rox + roy * roy - rad * rad
                                disc = hb * hb - a * hc
                                if disc >= 0.0:
                                    sq = math.sqrt(disc)
                                    for sgn in range(2):
                                        t = (-hb - sq) / a if sgn == 0 \
                                            else (-hb + sq) / a
                                        if t > _RAY_EPS and t <= max_range \
                                                and t < best:
                                            z = oz + t * dz
                                            if zb <= z <= zt:
                                                best = t
                                                best_prim = p
                                                best_part = 0
                            if dz != 0.0:
                                t = (zt - oz) / dz
                                if t > _RAY_EPS and t <= max_range and t < best:
                                    hx = ox + t * dx - cx
                                    hy = oy + t * dy - cy
                                    if hx * hx + hy * hy <= rad * rad:
                                        best = t
                                        best_prim = p
                                        best_part = 1
                                t = (zb - oz) / dz
                                if t > _RAY_EPS and t <= max_range and t < best:
                                    hx = ox + t * dx - cx
                                    hy = oy + t * dy - cy
                                    if hx * hx + hy * hy <= rad * rad:
                                        best = t
                                        best_prim = p
                                        best_part = 2

            if best_prim >= 0:
                out_t[r] = best
                if best_prim < n_tri:
                    p = best_prim
                    w = 1.0 - best_u - best_v
                    nx = (w * tn0[p, 0] + best_u * tn1[p, 0]
                          + best_v * tn2[p, 0])
                    ny = (w * tn0[p, 1] + best_u * tn1[p, 1]
                          + best_v * tn2[p, 1])
                    nz = (w * tn0[p, 2] + best_u * tn1[p, 2]
                          + best_v * tn2[p, 2])
                    nn = math.sqrt(nx * nx + ny * ny + nz * nz)
                    out_normal[r, 0] = nx / nn
                    out_normal[r, 1] = ny / nn
                    out_normal[r, 2] = nz / nn
                    out_label[r] = tlabel[p]
                    out_intensity[r] = tintensity[p]
                else:
                    c = best_prim - n_tri
                    if best_part == 0:
                        hx = ox + best * dx - cyl[c, 0]
                        hy = oy + best * dy - cyl[c, 1]
                        hn = math.sqrt(hx * hx + hy * hy)
                        out_normal[r, 0] = hx / hn
                        out_normal[r, 1] = hy / hn
                        out_normal[r, 2] = 0.0
                    else:
                        out_normal[r, 2] = 1.0 if best_part == 1 else -1.0
                    out_label[r] = clabel[c]
                    out_intensity[r] = cintensity[c]
    return out_t, out_label, out_intensity, out_normal
