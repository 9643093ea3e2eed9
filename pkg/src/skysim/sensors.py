"""Virtual sensor suite: inertial/navigation emulation from vehicle state,
and ray-cast range sensors against the world geometry.

Every ray-based product (scan point, depth pixel, label pixel) goes through
the same batch ray-cast path as the single-ray query, so channels stay
coherent with independent ray casts by construction. Noise streams are
deterministic per (seed, draw index).
"""

import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .worldgen import SEMANTIC_SKY, WorldState

MISS_LABEL = SEMANTIC_SKY  # 255, reserved for "no return"


@dataclass
class NoiseSpec:
    """Additive Gaussian noise: sigma/bias broadcast over the sample shape."""
    gaussian_sigma: float = 0.0
    bias: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if np.any(np.asarray(self.gaussian_sigma) < 0.0):
            raise ValueError("gaussian_sigma must be >= 0")

    def make_rng(self):
        return np.random.Generator(np.random.PCG64(self.rng_seed))

    def apply(self, values, rng):
        values = np.asarray(values, dtype=float)
        out = values + self.bias
        sigma = np.asarray(self.gaussian_sigma, dtype=float)
        if np.any(sigma > 0.0):
            if rng is None:
                raise ValueError("noise requested but no rng supplied")
            out = out + sigma * rng.standard_normal(values.shape)
        return out


@dataclass
class LidarConfig:
    n_horizontal: int = 64
    n_vertical: int = 16
    horizontal_fov: float = 2.0 * math.pi
    vertical_fov: float = math.radians(30.0)
    max_range: float = 100.0
    rate: float = 10.0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    intensity_channel: bool = True
    label_channel: bool = True

    def __post_init__(self):
        if self.n_horizontal * self.n_vertical < 1:
            raise ValueError("need at least one ray")
        for fov in (self.horizontal_fov, self.vertical_fov):
            if not 0.0 < fov <= 2.0 * math.pi:
                raise ValueError("FOV must be in (0, 2*pi]")
        if self.max_range <= 0.0:
            raise ValueError("max_range must be > 0")


@dataclass
class CameraConfig:
    width: int = 32
    height: int = 24
    horizontal_fov: float = math.radians(90.0)
    rate: float = 10.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("resolution must be >= 1 px")
        if not 0.0 < self.horizontal_fov < math.pi:
            raise ValueError("horizontal FOV must be in (0, pi)")


@dataclass
class ImuSample:
    accelerometer: np.ndarray  # m/s^2, body frame (specific force)
    gyroscope: np.ndarray      # rad/s, body frame
    timestamp: float = 0.0


@dataclass
class GnssSample:
    position: np.ndarray
    timestamp: float = 0.0


@dataclass
class BaroSample:
    altitude: float
    timestamp: float = 0.0


@dataclass
class MagSample:
    field_direction: np.ndarray  # body frame
    timestamp: float = 0.0


@dataclass
class PointCloud:
    points: np.ndarray               # (N, 3) sensor frame
    ranges: np.ndarray               # (N,)
    intensities: Optional[np.ndarray]
    labels: Optional[np.ndarray]     # (N,) uint8
    rows: np.ndarray                 # (N,) azimuth index of each return
    cols: np.ndarray                 # (N,) elevation index of each return
    timestamp: float = 0.0


@dataclass
class DepthImage:
    ranges: np.ndarray  # (height, width), +inf on miss
    timestamp: float = 0.0


@dataclass
class LabelImage:
    labels: np.ndarray  # (height, width) uint8, MISS_LABEL on miss
    timestamp: float = 0.0


def imu_sample(state, acceleration, gravity, noise: NoiseSpec,
               rng=None, timestamp=0.0) -> ImuSample:
    """Accelerometer (specific force, body frame) and gyroscope sample."""
    spec_force = state.rotation.T @ (np.asarray(acceleration, dtype=float)
                                     - np.asarray(gravity, dtype=float))
    return ImuSample(
        accelerometer=noise.apply(spec_force, rng),
        gyroscope=noise.apply(state.body_rates, rng),
        timestamp=timestamp,
    )


def nav_samples(state, noise: NoiseSpec, rng=None, origin_offset=None,
                north_reference=None, timestamp=0.0):
    """Emulated GNSS position, barometric altitude, and magnetometer field."""
    if origin_offset is None:
        origin_offset = np.zeros(3)
    if north_reference is None:
        north_reference = np.array([1.0, 0.0, 0.0])
    gnss = GnssSample(
        position=noise.apply(state.position + origin_offset, rng),
        timestamp=timestamp)
    baro = BaroSample(
        altitude=float(noise.apply(np.array([state.position[2]]), rng)[0]),
        timestamp=timestamp)
    mag = MagSample(
        field_direction=noise.apply(state.rotation.T @ north_reference, rng),
        timestamp=timestamp)
    return gnss, baro, mag


def rotate_directions(rotation, directions):
    """Rotate (N, 3) direction rows into the world frame.

    Elementwise arithmetic with a fixed evaluation order, so a caller
    rotating a single ray direction the same way reproduces the scan's ray
    bit-for-bit (the ray-channel coherence contract).
    """
    d = np.asarray(directions, dtype=float)
    r = np.asarray(rotation, dtype=float)
    return np.column_stack([
        d[:, 0] * r[i, 0] + d[:, 1] * r[i, 1] + d[:, 2] * r[i, 2]
        for i in range(3)
    ])


_LIDAR_GRID_CACHE = {}


def lidar_directions(c: LidarConfig):
    """Sensor-frame unit directions on the azimuth x elevation grid,
    shaped (n_horizontal * n_vertical, 3), plus the (row, col) index grids."""
    key = (c.n_horizontal, c.n_vertical, c.horizontal_fov, c.vertical_fov)
    if key not in _LIDAR_GRID_CACHE:
        full_circle = abs(c.horizontal_fov - 2.0 * math.pi) < 1e-12
        if c.n_horizontal == 1:
            az = np.zeros(1)
        elif full_circle:
            az = -math.pi + c.horizontal_fov * np.arange(c.n_horizontal) \
                / c.n_horizontal
        else:
            az = np.linspace(-c.horizontal_fov / 2.0, c.horizontal_fov / 2.0,
                             c.n_horizontal)
        if c.n_vertical == 1:
            el = np.zeros(1)
        else:
            el = np.linspace(-c.vertical_fov / 2.0, c.vertical_fov / 2.0,
                             c.n_vertical)
        azg, elg = np.meshgrid(az, el, indexing="ij")
        dirs = np.stack([
            np.cos(elg) * np.cos(azg),
            np.cos(elg) * np.sin(azg),
            np.sin(elg),
        ], axis=-1).reshape(-1, 3)
        rows, cols = np.meshgrid(np.arange(c.n_horizontal),
                                 np.arange(c.n_vertical), indexing="ij")
        _LIDAR_GRID_CACHE[key] = (
            np.ascontiguousarray(dirs),
            rows.reshape(-1).astype(np.uint16),
            cols.reshape(-1).astype(np.uint16),
        )
    return _LIDAR_GRID_CACHE[key]


def lidar_scan(world: WorldState, pose, c: LidarConfig, rng=None,
               timestamp=0.0) -> PointCloud:
    """Cast the configured ray grid from the pose; misses are omitted.

    Range noise is applied along each ray (the xyz point moves with it).
    """
    position, rotation = pose
    position = np.asarray(position, dtype=float)
    rotation = np.asarray(rotation, dtype=float)
    dirs_sensor, rows, cols = lidar_directions(c)
    dirs_world = rotate_directions(rotation, dirs_sensor)
    origins = np.broadcast_to(position, dirs_world.shape)
    t, labels, intensities, _ = world.geometry.raycast_batch(
        np.ascontiguousarray(origins), np.ascontiguousarray(dirs_world),
        c.max_range)
    hit = labels >= 0
    ranges = c.noise.apply(t[hit], rng)
    points = dirs_sensor[hit] * ranges[:, None]
    return PointCloud(
        points=points,
        ranges=ranges,
        intensities=intensities[hit] if c.intensity_channel else None,
        labels=labels[hit].astype(np.uint8) if c.label_channel else None,
        rows=rows[hit],
        cols=cols[hit],
        timestamp=timestamp,
    )


_CAMERA_GRID_CACHE = {}


def camera_directions(c: CameraConfig):
    """Body-frame pinhole ray directions, shaped (height, width, 3).

    The optical axis is the body x-axis; image columns increase to the
    right (-y), rows increase downward (-z). The vertical FOV follows from
    the aspect ratio.
    """
    key = (c.width, c.height, c.horizontal_fov)
    if key not in _CAMERA_GRID_CACHE:
        tan_h = math.tan(c.horizontal_fov / 2.0)
        tan_v = tan_h * c.height / c.width
        xs = (2.0 * (np.arange(c.width) + 0.5) / c.width - 1.0) * tan_h
        ys = (2.0 * (np.arange(c.height) + 0.5) / c.height - 1.0) * tan_v
        xg, yg = np.meshgrid(xs, ys, indexing="xy")
        dirs = np.stack([np.ones_like(xg), -xg, -yg], axis=-1)
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        _CAMERA_GRID_CACHE[key] = np.ascontiguousarray(dirs)
    return _CAMERA_GRID_CACHE[key]


def _camera_cast(world, pose, c):
    position, rotation = pose
    position = np.asarray(position, dtype=float)
    rotation = np.asarray(rotation, dtype=float)
    dirs = rotate_directions(rotation, camera_directions(c).reshape(-1, 3))
    origins = np.broadcast_to(position, dirs.shape)
    t, labels, _, _ = world.geometry.raycast_batch(
        np.ascontiguousarray(origins), np.ascontiguousarray(dirs), np.inf)
    return t, labels


def depth_image(world: WorldState, pose, c: CameraConfig,
                timestamp=0.0) -> DepthImage:
    """Per-pixel Euclidean range; misses encoded as +inf."""
    t, _ = _camera_cast(world, pose, c)
    return DepthImage(ranges=t.reshape(c.height, c.width), timestamp=timestamp)


def label_image(world: WorldState, pose, c: CameraConfig,
                timestamp=0.0) -> LabelImage:
    """Per-pixel semantic class of the nearest hit; misses get MISS_LABEL."""
    _, labels = _camera_cast(world, pose, c)
    out = np.where(labels < 0, MISS_LABEL, labels).astype(np.uint8)
    return LabelImage(labels=out.reshape(c.height, c.width),
                      timestamp=timestamp)


class SensorSchedule:
    """Emission times of a fixed-rate sensor: k / rate for k = 1, 2, ...

    Over a span T this yields floor(T * rate) or ceil(T * rate) frames with
    timestamps on the sensor's own period grid.
    """

    def __init__(self, rate: float):
        if rate <= 0.0:
            raise ValueError("sensor rate must be > 0")
        self.rate = rate
        self.emitted = 0

    def due(self, sim_time: float):
        """Timestamps of all frames due up to sim_time (inclusive)."""
        out = []
        while (self.emitted + 1) / self.rate <= sim_time + 1e-9:
            self.emitted += 1
            out.append(self.emitted / self.rate)
        return out

    def reset(self):
        self.emitted = 0


# ---------------------------------------------------------------------------
# file formats

POINT_DTYPE = np.dtype([
    ("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
    ("range", "<f4"), ("intensity", "<f4"), ("label", "u1"),
])


def write_point_cloud(pc: PointCloud, handle):
    """Binary layout: u32 point count, then per point five little-endian
    float32 (x, y, z, range, intensity) and one u8 label."""
    n = pc.points.shape[0]
    handle.write(struct.pack("<I", n))
    rec = np.empty(n, dtype=POINT_DTYPE)
    rec["x"] = pc.points[:, 0]
    rec["y"] = pc.points[:, 1]
    rec["z"] = pc.points[:, 2]
    rec["range"] = pc.ranges
    rec["intensity"] = pc.intensities if pc.intensities is not None else 0.0
    rec["label"] = pc.labels if pc.labels is not None else 0
    handle.write(rec.tobytes())


def read_point_cloud(handle):
    (n,) = struct.unpack("<I", handle.read(4))
    rec = np.frombuffer(handle.read(n * POINT_DTYPE.itemsize), dtype=POINT_DTYPE)
    pts = np.column_stack([rec["x"], rec["y"], rec["z"]])
    return pts, rec["range"].copy(), rec["intensity"].copy(), rec["label"].copy()


def write_point_cloud_ascii(pc: PointCloud, handle):
    handle.write("# x y z range intensity label\n")
    n = pc.points.shape[0]
    intens = pc.intensities if pc.intensities is not None else np.zeros(n)
    labels = pc.labels if pc.labels is not None else np.zeros(n, dtype=np.uint8)
    for i in range(n):
        handle.write(f"{pc.points[i, 0]:.9g} {pc.points[i, 1]:.9g} "
                     f"{pc.points[i, 2]:.9g} {pc.ranges[i]:.9g} "
                     f"{intens[i]:.9g} {int(labels[i])}\n")


def write_depth_pfm(img: DepthImage, handle):
    """Portable float map, little endian, scanlines bottom-to-top."""
    h, w = img.ranges.shape
    handle.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
    handle.write(np.flipud(img.ranges).astype("<f4").tobytes())


def read_depth_pfm(handle):
    assert handle.readline().strip() == b"Pf"
    w, h = (int(v) for v in handle.readline().split())
    scale = float(handle.readline())
    data = np.frombuffer(handle.read(w * h * 4),
                         dtype="<f4" if scale < 0 else ">f4")
    return np.flipud(data.reshape(h, w)).copy()


def write_label_pgm(img: LabelImage, handle):
    """Binary portable graymap with maxval 255."""
    h, w = img.labels.shape
    handle.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
    handle.write(img.labels.astype(np.uint8).tobytes())


def read_label_pgm(handle):
    assert handle.readline().strip() == b"P5"
    w, h = (int(v) for v in handle.readline().split())
    assert int(handle.readline()) == 255
    return np.frombuffer(handle.read(w * h), dtype=np.uint8).reshape(h, w).copy()
