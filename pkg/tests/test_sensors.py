import io
import math

import numpy as np
import pytest

from skysim.dynamics import UavState
from skysim.rotations import rotation_y, rotation_z
from skysim.sensors import (MISS_LABEL, CameraConfig, LidarConfig, NoiseSpec,
                            SensorSchedule, camera_directions, depth_image,
                            imu_sample, label_image, lidar_directions,
                            lidar_scan, nav_samples, read_depth_pfm,
                            read_label_pgm, read_point_cloud,
                            rotate_directions, write_depth_pfm,
                            write_label_pgm, write_point_cloud,
                            write_point_cloud_ascii)
from skysim.worldgen import SEMANTIC_TERRAIN, raycast

NO_NOISE = NoiseSpec()


def _state(quad, position=(0.0, 0.0, 20.0), rotation=None):
    s = UavState.at_rest(quad, position=position)
    if rotation is not None:
        s.rotation = rotation
    return s


class TestImu:
    def test_hover_specific_force(self, quad):
        s = _state(quad)
        sample = imu_sample(s, np.zeros(3), quad.body.gravity, NO_NOISE)
        assert sample.accelerometer == pytest.approx([0.0, 0.0, 9.81])
        assert sample.gyroscope == pytest.approx([0.0, 0.0, 0.0])

    def test_free_fall_weightless(self, quad):
        s = _state(quad, rotation=rotation_y(0.3))
        sample = imu_sample(s, quad.body.gravity, quad.body.gravity, NO_NOISE)
        assert sample.accelerometer == pytest.approx(np.zeros(3), abs=1e-12)

    def test_body_frame_projection(self, quad):
        s = _state(quad, rotation=rotation_z(math.pi / 2.0))
        sample = imu_sample(s, np.array([1.0, 0.0, 0.0]), quad.body.gravity,
                            NO_NOISE)
        # world x maps to body -y under a +90 degree yaw
        assert sample.accelerometer == pytest.approx([0.0, -1.0, 9.81],
                                                     abs=1e-12)

    def test_noise_statistics(self, quad):
        sigma = 0.2
        spec = NoiseSpec(gaussian_sigma=sigma, rng_seed=42)
        rng = spec.make_rng()
        s = _state(quad)
        samples = np.empty((20000, 6))
        for i in range(samples.shape[0]):
            m = imu_sample(s, np.zeros(3), quad.body.gravity, spec, rng)
            samples[i, 0:3] = m.accelerometer
            samples[i, 3:6] = m.gyroscope
        pooled = samples - samples.mean(axis=0)
        measured = float(np.std(pooled.reshape(-1)))
        assert abs(measured - sigma) / sigma <= 0.05


class TestNav:
    def test_gnss_passthrough(self, quad):
        s = _state(quad, position=(12.0, -3.0, 44.0))
        gnss, baro, mag = nav_samples(s, NO_NOISE)
        assert gnss.position == pytest.approx([12.0, -3.0, 44.0])
        assert baro.altitude == pytest.approx(44.0)

    def test_mag_identity_attitude(self, quad):
        s = _state(quad)
        _, _, mag = nav_samples(s, NO_NOISE)
        assert mag.field_direction == pytest.approx([1.0, 0.0, 0.0])

    def test_mag_rotates_with_body(self, quad):
        s = _state(quad, rotation=rotation_z(math.pi / 2.0))
        _, _, mag = nav_samples(s, NO_NOISE)
        assert mag.field_direction == pytest.approx([0.0, -1.0, 0.0],
                                                    abs=1e-12)

    def test_geodetic_origin_offset(self, quad):
        s = _state(quad, position=(1.0, 2.0, 3.0))
        gnss, _, _ = nav_samples(s, NO_NOISE,
                                 origin_offset=np.array([100.0, 0.0, 0.0]))
        assert gnss.position == pytest.approx([101.0, 2.0, 3.0])

    def test_gnss_noise_statistics(self, quad):
        sigma = 1.5
        spec = NoiseSpec(gaussian_sigma=sigma, rng_seed=7)
        rng = spec.make_rng()
        s = _state(quad)
        n = 33334
        xyz = np.empty((n, 3))
        for i in range(n):
            gnss, _, _ = nav_samples(s, spec, rng)
            xyz[i] = gnss.position
        measured = float(np.std((xyz - xyz.mean(axis=0)).reshape(-1)))
        assert abs(measured - sigma) / sigma <= 0.05

    def test_noise_stream_reproducible(self, quad):
        spec = NoiseSpec(gaussian_sigma=0.5, rng_seed=99)
        s = _state(quad)

        def stream():
            rng = spec.make_rng()
            return [nav_samples(s, spec, rng)[0].position for _ in range(20)]

        a = stream()
        b = stream()
        for pa, pb in zip(a, b):
            assert np.array_equal(pa, pb)


class TestLidar:
    def test_nadir_single_ray(self, flat_world, quad):
        cfg = LidarConfig(n_horizontal=1, n_vertical=1, horizontal_fov=0.1,
                          vertical_fov=0.1, max_range=100.0)
        # a single ray points along the sensor x-axis; pitch it straight down
        pose = (np.array([10.0, 10.0, 10.0]), rotation_y(math.pi / 2.0))
        pc = lidar_scan(flat_world, pose, cfg)
        assert pc.points.shape == (1, 3)
        assert pc.ranges[0] == pytest.approx(10.0, abs=1e-9)
        assert pc.labels[0] == SEMANTIC_TERRAIN

    def test_sky_scan_empty(self, flat_world):
        cfg = LidarConfig(n_horizontal=8, n_vertical=2,
                          horizontal_fov=math.radians(90.0),
                          vertical_fov=math.radians(20.0), max_range=50.0)
        pose = (np.array([50.0, 50.0, 10.0]), rotation_y(-math.pi / 2.0))
        pc = lidar_scan(flat_world, pose, cfg)
        assert pc.points.shape == (0, 3)

    def test_points_match_independent_raycasts(self, hilly_world):
        cfg = LidarConfig(n_horizontal=24, n_vertical=6,
                          vertical_fov=math.radians(40.0), max_range=120.0)
        position = np.array([50.0, 50.0, 25.0])
        rotation = rotation_z(0.4) @ rotation_y(0.25)
        pc = lidar_scan(hilly_world, (position, rotation), cfg)
        dirs, rows, cols = lidar_directions(cfg)
        assert pc.points.shape[0] > 0
        index_of = {(int(r), int(c)): i
                    for i, (r, c) in enumerate(zip(rows, cols))}
        for i in range(pc.points.shape[0]):
            ray_idx = index_of[(int(pc.rows[i]), int(pc.cols[i]))]
            d_world = rotate_directions(rotation,
                                        dirs[ray_idx:ray_idx + 1])[0]
            hit = raycast(hilly_world, position, d_world, cfg.max_range)
            assert hit is not None
            assert pc.ranges[i] == hit.distance
            assert pc.intensities[i] == hit.intensity
            assert pc.labels[i] == hit.label
            # point reconstructs the hit location in the world frame
            world_pt = position + rotation @ pc.points[i]
            assert world_pt == pytest.approx(hit.point, abs=1e-9)

    def test_misses_are_omitted(self, hilly_world):
        cfg = LidarConfig(n_horizontal=16, n_vertical=8,
                          vertical_fov=math.radians(60.0), max_range=60.0)
        pose = (np.array([50.0, 50.0, 30.0]), np.eye(3))
        pc = lidar_scan(hilly_world, pose, cfg)
        assert pc.points.shape[0] < 16 * 8
        assert np.all(pc.ranges <= cfg.max_range)

    def test_range_noise_along_ray(self, flat_world):
        cfg = LidarConfig(n_horizontal=4, n_vertical=1, horizontal_fov=0.4,
                          vertical_fov=0.1, max_range=100.0,
                          noise=NoiseSpec(gaussian_sigma=0.05, rng_seed=3))
        pose = (np.array([50.0, 50.0, 20.0]), rotation_y(math.pi / 2.0))
        rng = cfg.noise.make_rng()
        pc = lidar_scan(flat_world, pose, cfg, rng)
        dirs, _, _ = lidar_directions(cfg)
        for i in range(pc.points.shape[0]):
            # xyz stays on the ray: |p| == range exactly
            assert np.linalg.norm(pc.points[i]) == pytest.approx(
                pc.ranges[i], abs=1e-9)
            assert pc.ranges[i] != pytest.approx(20.0, abs=1e-6)

    def test_full_circle_grid_has_no_duplicate_azimuth(self):
        cfg = LidarConfig(n_horizontal=8, n_vertical=1)
        dirs, _, _ = lidar_directions(cfg)
        first = dirs[0]
        assert not np.allclose(dirs[-1], first)


class TestCameras:
    def test_center_pixel_straight_down(self, flat_world):
        cfg = CameraConfig(width=9, height=9,
                           horizontal_fov=math.radians(60.0))
        pose = (np.array([50.0, 50.0, 10.0]), rotation_y(math.pi / 2.0))
        img = depth_image(flat_world, pose, cfg)
        assert img.ranges.shape == (9, 9)
        assert img.ranges[4, 4] == pytest.approx(10.0, abs=1e-9)

    def test_sky_view_all_miss(self, flat_world):
        cfg = CameraConfig(width=8, height=6)
        pose = (np.array([50.0, 50.0, 10.0]), rotation_y(-math.pi / 2.0))
        img = depth_image(flat_world, pose, cfg)
        assert np.all(np.isinf(img.ranges))
        lbl = label_image(flat_world, pose, cfg)
        assert np.all(lbl.labels == MISS_LABEL)

    def test_pixelwise_match_with_raycasts(self, hilly_world):
        cfg = CameraConfig(width=8, height=8,
                           horizontal_fov=math.radians(70.0))
        position = np.array([50.0, 50.0, 22.0])
        rotation = rotation_y(0.5)
        img = depth_image(hilly_world, (position, rotation), cfg)
        lbl = label_image(hilly_world, (position, rotation), cfg)
        dirs = camera_directions(cfg)
        for v in range(8):
            for u in range(8):
                d_world = rotate_directions(rotation, dirs[v:v + 1, u])[0]
                hit = raycast(hilly_world, position, d_world, 1e6)
                if hit is None:
                    assert math.isinf(img.ranges[v, u])
                    assert lbl.labels[v, u] == MISS_LABEL
                else:
                    assert img.ranges[v, u] == hit.distance
                    assert lbl.labels[v, u] == hit.label

    def test_terrain_fills_downward_view(self, flat_world):
        cfg = CameraConfig(width=6, height=4)
        pose = (np.array([50.0, 50.0, 10.0]), rotation_y(math.pi / 2.0))
        lbl = label_image(flat_world, pose, cfg)
        assert np.all(lbl.labels == SEMANTIC_TERRAIN)

    def test_labels_match_depth_hits(self, hilly_world):
        cfg = CameraConfig(width=10, height=8)
        pose = (np.array([50.0, 50.0, 18.0]), rotation_y(0.9))
        img = depth_image(hilly_world, pose, cfg)
        lbl = label_image(hilly_world, pose, cfg)
        assert np.array_equal(np.isinf(img.ranges), lbl.labels == MISS_LABEL)


class TestScheduling:
    def test_exact_frame_count_over_one_second(self):
        sched = SensorSchedule(10.0)
        frames = []
        for step in range(250):
            frames.extend(sched.due((step + 1) * (1.0 / 250.0)))
        assert len(frames) == 10
        assert frames == pytest.approx([0.1 * k for k in range(1, 11)])

    def test_non_divisor_rate(self):
        sched = SensorSchedule(7.0)
        frames = []
        dt = 1.0 / 250.0
        total = 3.0
        for step in range(int(total / dt)):
            frames.extend(sched.due((step + 1) * dt))
        assert len(frames) in (math.floor(total * 7.0), math.ceil(total * 7.0))
        periods = np.diff(frames)
        assert periods == pytest.approx(np.full(len(frames) - 1, 1.0 / 7.0),
                                        abs=1e-9)

    def test_rates_property_over_random_spans(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            rate = rng.uniform(0.5, 120.0)
            span = rng.uniform(0.1, 8.0)
            dt = 1.0 / 250.0
            sched = SensorSchedule(rate)
            count = 0
            steps = int(span / dt)
            for step in range(steps):
                count += len(sched.due((step + 1) * dt))
            t_end = steps * dt
            assert math.floor(t_end * rate - 1e-6) <= count \
                <= math.ceil(t_end * rate + 1e-6)

    def test_bad_rate_rejected(self):
        with pytest.raises(ValueError):
            SensorSchedule(0.0)


class TestFileFormats:
    def test_point_cloud_binary_round_trip(self, flat_world):
        cfg = LidarConfig(n_horizontal=8, n_vertical=2,
                          vertical_fov=math.radians(30.0), max_range=120.0)
        pose = (np.array([50.0, 50.0, 30.0]), rotation_y(math.pi / 3.0))
        pc = lidar_scan(flat_world, pose, cfg)
        assert pc.points.shape[0] > 0
        buf = io.BytesIO()
        write_point_cloud(pc, buf)
        raw = buf.getvalue()
        # layout: u32 count + 21 bytes per point
        assert len(raw) == 4 + 21 * pc.points.shape[0]
        buf.seek(0)
        pts, ranges, intens, labels = read_point_cloud(buf)
        assert pts == pytest.approx(pc.points, abs=1e-5)
        assert ranges == pytest.approx(pc.ranges, abs=1e-5)
        assert intens == pytest.approx(pc.intensities, abs=1e-6)
        assert np.array_equal(labels, pc.labels)

    def test_point_cloud_ascii_form(self, flat_world):
        cfg = LidarConfig(n_horizontal=4, n_vertical=1, horizontal_fov=0.5,
                          vertical_fov=0.1)
        pose = (np.array([50.0, 50.0, 15.0]), rotation_y(math.pi / 2.0))
        pc = lidar_scan(flat_world, pose, cfg)
        buf = io.StringIO()
        write_point_cloud_ascii(pc, buf)
        lines = buf.getvalue().strip().split("\n")
        assert lines[0].startswith("#")
        assert len(lines) == 1 + pc.points.shape[0]
        assert len(lines[1].split()) == 6

    def test_depth_pfm_round_trip(self, flat_world):
        cfg = CameraConfig(width=7, height=5)
        pose = (np.array([50.0, 50.0, 12.0]), rotation_y(1.1))
        img = depth_image(flat_world, pose, cfg)
        buf = io.BytesIO()
        write_depth_pfm(img, buf)
        buf.seek(0)
        back = read_depth_pfm(buf)
        assert back.shape == (5, 7)
        finite = np.isfinite(img.ranges)
        assert np.array_equal(np.isfinite(back), finite)
        assert back[finite] == pytest.approx(img.ranges[finite], rel=1e-6)

    def test_label_pgm_round_trip(self, flat_world):
        cfg = CameraConfig(width=6, height=4)
        pose = (np.array([50.0, 50.0, 12.0]), rotation_y(0.7))
        img = label_image(flat_world, pose, cfg)
        buf = io.BytesIO()
        write_label_pgm(img, buf)
        raw = buf.getvalue()
        assert raw.startswith(b"P5\n6 4\n255\n")
        buf.seek(0)
        assert np.array_equal(read_label_pgm(buf), img.labels)

    def test_labels_within_domain(self, hilly_world):
        cfg = LidarConfig(n_horizontal=32, n_vertical=8,
                          vertical_fov=math.radians(50.0), max_range=200.0)
        pose = (np.array([50.0, 50.0, 30.0]), rotation_y(0.6))
        pc = lidar_scan(hilly_world, pose, cfg)
        assert np.all(pc.labels <= 255)
        lbl = label_image(hilly_world, pose, CameraConfig(width=16, height=12))
        assert np.all((lbl.labels <= 255))
        assert MISS_LABEL == 255
