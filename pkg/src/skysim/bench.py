"""Benchmark suites: dynamics stepping throughput, swarm real-time factor,
and ray-cast scan rates against a standardized generated scene.
"""

import json
import math
import time

import numpy as np

from .control import ActuatorThrottles
from .rotations import rotation_y
from .sensors import LidarConfig, lidar_scan
from .simserver.session import Session, SessionConfig, UavConfig
from .worldgen import TerrainParams, make_world, update_cells

# Scene used by the scan-rate suite: fixed seed, 3x3 cells at high mesh
# resolution (>= 1e5 triangles), sensor flying 30 m above the origin cell.
BENCH_SCENE = TerrainParams(seed=42, cell_size=100.0, grid_resolution=89,
                            roughness=0.5, amplitude=8.0, base_frequency=0.01,
                            octaves=4, forest_density=0.01,
                            visibility_range=260.0)
BENCH_SENSOR_POSITION = np.array([50.0, 50.0, 30.0])
BENCH_SENSOR_PITCH = math.radians(-32.5)  # look-down scan pattern
BENCH_RAY_GRIDS = {
    128: (32, 4),
    256: (64, 4),
    1024: (128, 8),
    4096: (256, 16),
    8192: (512, 16),
    32768: (512, 64),
}
LIDAR_POINT_COUNTS = (128, 256, 1024, 4096, 8192, 32768)


def _hover_session(n_uavs, dt=1.0 / 250.0, spacing=10.0):
    """N vehicles holding fixed per-motor hover throttle on the default
    terrain, placed on a grid."""
    uavs = []
    side = max(1, int(math.ceil(math.sqrt(n_uavs))))
    for i in range(n_uavs):
        x = (i % side) * spacing
        y = (i // side) * spacing
        uavs.append(UavConfig(initial_position=np.array([x, y, 30.0])))
    cfg = SessionConfig(world=TerrainParams(), uavs=uavs, dt=dt)
    session = Session(cfg)
    for i, u in enumerate(uavs):
        hover = u.model.hover_motor_speed() / \
            u.model.propellers.max_angular_velocity
        session.set_control(i, ActuatorThrottles(
            np.full(u.model.n_motors, hover)))
    return session


def bench_dynamics(uav_counts=(1, 4, 16), steps=20000):
    """Physics stepping throughput (UAV-steps per second) by vehicle count."""
    rows = []
    for n in uav_counts:
        n_steps = max(200, steps // n)
        session = _hover_session(n)
        session.step(50)  # warmup (kernel dispatch, cell generation)
        t0 = time.perf_counter()
        session.step(n_steps)
        elapsed = time.perf_counter() - t0
        rows.append({
            "uavs": n,
            "steps_per_s": n_steps / elapsed,
            "uav_steps_per_s": n * n_steps / elapsed,
        })
    return rows


def bench_swarm(uav_counts=(1, 100, 400), sim_seconds=2.0, dt=1.0 / 250.0):
    """Real-time factor for N vehicles stepped at the physics rate."""
    rows = []
    for n in uav_counts:
        session = _hover_session(n, dt=dt)
        session.step(25)  # warmup
        n_steps = int(round(sim_seconds / dt))
        t0 = time.perf_counter()
        session.step(n_steps)
        elapsed = time.perf_counter() - t0
        rows.append({
            "uavs": n,
            "physics_rate_hz": 1.0 / dt,
            "sim_seconds": sim_seconds,
            "wall_seconds": elapsed,
            "realtime_factor": sim_seconds / elapsed,
        })
    return rows


def build_bench_scene():
    world = make_world(BENCH_SCENE)
    update_cells(world, [BENCH_SENSOR_POSITION])
    return world


def bench_lidar(point_counts=LIDAR_POINT_COUNTS, repeats=5):
    """Scans per second for each cloud size against the standardized scene."""
    world = build_bench_scene()
    pose = (BENCH_SENSOR_POSITION, rotation_y(-BENCH_SENSOR_PITCH))
    rows = []
    for count in point_counts:
        n_h, n_v = BENCH_RAY_GRIDS[count]
        cfg = LidarConfig(n_horizontal=n_h, n_vertical=n_v,
                          vertical_fov=math.radians(55.0), max_range=150.0)
        lidar_scan(world, pose, cfg)  # warmup
        best = 0.0
        for _ in range(repeats):
            t0 = time.perf_counter()
            lidar_scan(world, pose, cfg)
            elapsed = time.perf_counter() - t0
            best = max(best, 1.0 / elapsed)
        rows.append({
            "points": count,
            "scans_per_s": best,
            "scene_triangles": world.n_triangles,
        })
    return rows


_SUITES = {
    "dynamics": bench_dynamics,
    "swarm": bench_swarm,
    "lidar": bench_lidar,
}


def format_table(rows):
    if not rows:
        return "(no results)"
    cols = list(rows[0])
    widths = {c: max(len(c), max(len(_cell(r[c])) for r in rows))
              for c in cols}
    lines = ["  ".join(c.rjust(widths[c]) for c in cols)]
    for r in rows:
        lines.append("  ".join(_cell(r[c]).rjust(widths[c]) for c in cols))
    return "\n".join(lines)


def _cell(value):
    if isinstance(value, float):
        return f"{value:.1f}"
    return str(value)


def run_suite(name, json_path=None):
    if name == "all":
        results = {suite: fn() for suite, fn in _SUITES.items()}
    elif name in _SUITES:
        results = {name: _SUITES[name]()}
    else:
        raise ValueError(f"unknown suite {name!r}; "
                         f"choose from {sorted(_SUITES)} or 'all'")
    report = []
    for suite, rows in results.items():
        report.append(f"[{suite}]")
        report.append(format_table(rows))
        report.append("")
    text = "\n".join(report)
    if json_path:
        with open(json_path, "w", encoding="utf-8") as handle:
            json.dump(results, handle, indent=2)
    return text, results
