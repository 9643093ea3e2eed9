"""Simulation sessions: a world, a set of UAVs (simulated or externally
posed), latched commands, deterministic stepping, and sensor scheduling.

Commands are zero-order held: the latched input drives every physics step
until replaced. Stepping is strictly deterministic for identical configs and
command scripts. Externally posed (hardware-in-the-loop) vehicles never
integrate: their pose is exactly the last one written, they reject control
inputs, and they participate in the cell lifecycle as observers.
"""

import threading
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import control, dynamics, sensors
from ..control import CascadeGains, ControllerState
from ..dynamics import DivergenceError, UavModel, UavState
from ..rotations import is_rotation
from ..sensors import (CameraConfig, LidarConfig, NoiseSpec, SensorSchedule,
                       depth_image, imu_sample, label_image, lidar_scan,
                       nav_samples)
from ..worldgen import TerrainParams, make_world, update_cells

SENSOR_KINDS = ("imu", "gnss", "baro", "mag", "lidar", "depth", "label")


class SessionError(RuntimeError):
    """Protocol-mappable failure with a short machine-readable code."""

    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


class ConfigError(ValueError):
    """Validation failure carrying (field path, problem) pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = "; ".join(f"{path}: {msg}" for path, msg in self.errors)
        super().__init__(f"invalid configuration: {lines}")


@dataclass
class SensorSpec:
    kind: str
    rate: float = 10.0
    lidar: Optional[LidarConfig] = None
    camera: Optional[CameraConfig] = None
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    gnss_origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    north_reference: np.ndarray = field(
        default_factory=lambda: np.array([1.0, 0.0, 0.0]))

    def __post_init__(self):
        if self.kind not in SENSOR_KINDS:
            raise ValueError(f"unknown sensor kind {self.kind!r}")
        if self.kind == "lidar" and self.lidar is None:
            self.lidar = LidarConfig(rate=self.rate)
        if self.kind in ("depth", "label") and self.camera is None:
            self.camera = CameraConfig(rate=self.rate)


@dataclass
class UavConfig:
    model: UavModel = field(default_factory=UavModel.default_quad_x)
    gains: CascadeGains = field(default_factory=CascadeGains)
    initial_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    initial_heading: float = 0.0
    initial_motors: object = "hover"   # "hover" | "rest" | explicit list
    hitl: bool = False
    sensors: list = field(default_factory=list)


@dataclass
class SessionConfig:
    world: TerrainParams = field(default_factory=TerrainParams)
    uavs: list = field(default_factory=list)
    dt: float = 1.0 / 250.0
    mode: str = "stepped"              # "stepped" | "realtime"
    realtime_factor: float = 1.0
    spectator: Optional[np.ndarray] = None

    def validation_errors(self):
        errors = []
        if not self.uavs:
            errors.append(("uavs", "at least one UAV (simulated or HITL) required"))
        if self.dt <= 0.0:
            errors.append(("dt", "must be > 0"))
        if self.mode not in ("stepped", "realtime"):
            errors.append(("mode", "must be 'stepped' or 'realtime'"))
        if self.realtime_factor <= 0.0:
            errors.append(("realtime_factor", "must be > 0"))
        return errors


@dataclass
class SensorFrame:
    uav_id: int
    sensor_index: int
    kind: str
    timestamp: float
    data: object


class _SensorSlot:
    def __init__(self, spec: SensorSpec):
        self.spec = spec
        self.schedule = SensorSchedule(spec.rate)
        self.rng = spec.noise.make_rng()


class UavHandle:
    """Runtime state of one vehicle inside a session."""

    def __init__(self, uav_id: int, cfg: UavConfig):
        self.uav_id = uav_id
        self.config = cfg
        self.model = cfg.model
        self.gains = cfg.gains
        self.hitl = cfg.hitl
        state = UavState.at_rest(
            cfg.model, position=cfg.initial_position,
            heading_angle=cfg.initial_heading,
            motors="rest" if cfg.hitl else cfg.initial_motors)
        self.flat = state.to_flat()
        self.controller = ControllerState()
        self.kernel_params = dynamics.kernel_params(cfg.model)
        self.ctrl_params = control.control_params(cfg.model)
        self.gains_flat = cfg.gains.to_flat()
        # zero throttle until the first command arrives
        self.command_code = 0
        self.command_payload = np.zeros(cfg.model.n_motors)
        self.last_setpoints = np.zeros(cfg.model.n_motors)
        self.hitl_timestamp = 0.0
        self.sensors = [_SensorSlot(s) for s in cfg.sensors]

    @property
    def state(self) -> UavState:
        return UavState.from_flat(self.flat)

    def latch(self, code, payload):
        if code != self.command_code:
            # a different loop structure: drop stale integrators and memory
            self.controller.reset()
        self.command_code = code
        self.command_payload = payload


class Session:
    """One world plus its vehicles; the single logical writer of their state."""

    def __init__(self, cfg: SessionConfig):
        errors = cfg.validation_errors()
        if errors:
            raise ConfigError(errors)
        self.config = cfg
        self.dt = float(cfg.dt)
        self.step_count = 0
        self.world = make_world(cfg.world)
        self.uavs = [UavHandle(i, u) for i, u in enumerate(cfg.uavs)]
        self.lock = threading.RLock()
        self._frame_buffer = []
        self._rt_thread = None
        self._rt_stop = threading.Event()
        self._rt_start_wall = None
        self._rt_lag = 0.0
        update_cells(self.world, self._observer_positions(), cfg.spectator)

    # -- helpers -----------------------------------------------------------

    def _observer_positions(self):
        return [h.flat[0:3] for h in self.uavs]

    def _get_uav(self, uav_id) -> UavHandle:
        if not 0 <= uav_id < len(self.uavs):
            raise SessionError("bad-uav", f"no UAV with id {uav_id}")
        return self.uavs[uav_id]

    @property
    def sim_time(self) -> float:
        return self.step_count * self.dt

    def states(self):
        return {h.uav_id: h.state for h in self.uavs}

    # -- command and pose ingestion ----------------------------------------

    def set_control(self, uav_id: int, control_input):
        with self.lock:
            h = self._get_uav(uav_id)
            if h.hitl:
                raise SessionError(
                    "hitl-immutable",
                    f"UAV {uav_id} is externally posed and rejects control")
            try:
                code, payload = control.pack_input(control_input,
                                                   h.model.n_motors)
            except (TypeError, ValueError) as e:
                raise SessionError("malformed-payload", str(e)) from e
            h.latch(code, payload)

    def set_hitl_pose(self, uav_id: int, position, rotation, timestamp=0.0):
        with self.lock:
            h = self._get_uav(uav_id)
            if not h.hitl:
                raise SessionError(
                    "sim-immutable",
                    f"UAV {uav_id} is simulated and rejects external poses")
            position = np.asarray(position, dtype=float)
            rotation = np.asarray(rotation, dtype=float)
            if position.shape != (3,) or not np.all(np.isfinite(position)):
                raise SessionError("invalid-pose", "position must be a finite 3-vector")
            if not is_rotation(rotation, tol=1e-6):
                raise SessionError("invalid-pose", "rotation is not in SO(3)")
            h.flat[0:3] = position
            h.flat[3:6] = 0.0
            h.flat[6:15] = rotation.reshape(9)
            h.flat[15:18] = 0.0
            h.hitl_timestamp = float(timestamp)
            update_cells(self.world, self._observer_positions(),
                         self.config.spectator)

    # -- stepping ------------------------------------------------------------

    def _step_once(self):
        dt = self.dt
        for h in self.uavs:
            if h.hitl:
                continue
            wd = control._cascade_kernel(
                h.command_code, h.command_payload, h.flat, *h.ctrl_params,
                h.gains_flat, h.controller.array, dt)
            new_flat, ok = dynamics._rk4_kernel(h.flat, wd, dt,
                                                *h.kernel_params)
            if not ok:
                raise DivergenceError(
                    f"UAV {h.uav_id} diverged at t = {self.sim_time:.6f} s")
            h.flat = new_flat
            h.last_setpoints = wd
        self.step_count += 1
        update_cells(self.world, self._observer_positions(),
                     self.config.spectator)
        t = self.sim_time
        frames = []
        for h in self.uavs:
            for idx, slot in enumerate(h.sensors):
                for stamp in slot.schedule.due(t):
                    frames.append(self._make_frame(h, idx, slot, stamp))
        return frames

    def step(self, n_steps: int):
        """Advance n_steps in stepped mode; returns (states, frames)."""
        if self.config.mode != "stepped":
            raise SessionError("bad-mode", "step() requires stepped mode")
        if n_steps < 0:
            raise SessionError("malformed-payload", "n_steps must be >= 0")
        frames = []
        with self.lock:
            for _ in range(n_steps):
                frames.extend(self._step_once())
            return self.states(), frames

    # -- sensors -------------------------------------------------------------

    def _make_frame(self, h: UavHandle, sensor_index, slot, timestamp):
        spec = slot.spec
        state = h.state
        kind = spec.kind
        if kind == "imu":
            if h.hitl:
                # no dynamics available: static specific force, zero rates
                accel = np.zeros(3)
            else:
                deriv = dynamics.state_derivative(h.model, state,
                                                  h.last_setpoints)
                accel = deriv.acceleration
            data = imu_sample(state, accel, h.model.body.gravity, spec.noise,
                              slot.rng, timestamp)
        elif kind in ("gnss", "baro", "mag"):
            gnss, baro, mag = nav_samples(
                state, spec.noise, slot.rng, spec.gnss_origin,
                spec.north_reference, timestamp)
            data = {"gnss": gnss, "baro": baro, "mag": mag}[kind]
        elif kind == "lidar":
            data = lidar_scan(self.world, (state.position, state.rotation),
                              spec.lidar, slot.rng, timestamp)
        elif kind == "depth":
            data = depth_image(self.world, (state.position, state.rotation),
                               spec.camera, timestamp)
        elif kind == "label":
            data = label_image(self.world, (state.position, state.rotation),
                               spec.camera, timestamp)
        else:
            raise SessionError("malformed-payload", f"unknown sensor {kind}")
        return SensorFrame(uav_id=h.uav_id, sensor_index=sensor_index,
                           kind=kind, timestamp=timestamp, data=data)

    def sense(self, uav_id: int, sensor_index: int):
        """On-demand frame at the current pose; does not advance schedules."""
        with self.lock:
            h = self._get_uav(uav_id)
            if not 0 <= sensor_index < len(h.sensors):
                raise SessionError("bad-uav",
                                   f"UAV {uav_id} has no sensor {sensor_index}")
            return self._make_frame(h, sensor_index, h.sensors[sensor_index],
                                    self.sim_time)

    # -- realtime pacing -------------------------------------------------------

    def start_realtime(self):
        if self.config.mode != "realtime":
            raise SessionError("bad-mode", "session is not in realtime mode")
        if self._rt_thread is not None:
            return
        self._rt_stop.clear()
        self._rt_start_wall = time.perf_counter()
        self._rt_thread = threading.Thread(target=self._realtime_loop,
                                           daemon=True)
        self._rt_thread.start()

    def stop_realtime(self):
        if self._rt_thread is None:
            return
        self._rt_stop.set()
        self._rt_thread.join()
        self._rt_thread = None

    def _realtime_loop(self):
        step_wall = self.dt / self.config.realtime_factor
        start = self._rt_start_wall
        while not self._rt_stop.is_set():
            due = start + (self.step_count + 1) * step_wall
            now = time.perf_counter()
            if now < due:
                time.sleep(min(due - now, 0.002))
                continue
            with self.lock:
                frames = self._step_once()
                self._frame_buffer.extend(frames)
                if len(self._frame_buffer) > 100000:
                    del self._frame_buffer[:len(self._frame_buffer) - 100000]
                self._rt_lag = time.perf_counter() - due

    def drain_frames(self):
        with self.lock:
            frames = self._frame_buffer
            self._frame_buffer = []
            return frames

    def status(self):
        """(sim time, wall elapsed, lag in wall seconds). Lag reports how far
        stepping runs behind the pacing grid; steps are never skipped."""
        with self.lock:
            if self._rt_start_wall is None:
                wall = 0.0
            else:
                wall = time.perf_counter() - self._rt_start_wall
            return self.sim_time, wall, self._rt_lag

    def close(self):
        self.stop_realtime()
