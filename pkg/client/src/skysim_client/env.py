"""Episodic environment over a remote simulation session.

The client carries no simulation logic: every physical quantity in an
observation comes from server replies. An episode is a fresh session created
from the scenario template, so resets with the same template are
bit-deterministic.

Observation layouts (fixed shape within an episode):
    state  13-vector [x y z vx vy vz qw qx qy qz wx wy wz]
    lidar  flattened range grid of the template's first sensor, indexed by
           row * n_vertical + col (azimuth-major); misses hold max_range
    depth  flattened float32 range image (row-major); misses hold +inf

Action layouts by modality:
    actuators              n_motors throttles in [0, 1]
    control_groups         [roll, pitch, yaw, throttle]
    rate                   [wx, wy, wz, throttle]
    attitude               9 row-major rotation entries + [throttle]
    accel_heading          [ax, ay, az, heading]
    accel_heading_rate     [ax, ay, az, heading_rate]
    velocity_heading       [vx, vy, vz, heading]
    velocity_heading_rate  [vx, vy, vz, heading_rate]
    position_heading       [x, y, z, heading]
"""

import copy
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import wire

DEFAULT_HOST = os.environ.get("SKYSIM_HOST", "127.0.0.1")
DEFAULT_PORT = int(os.environ.get("SKYSIM_PORT", "18990"))

OBSERVATION_KINDS = ("state", "lidar", "depth")


def default_template():
    """A single hovering vehicle over mild terrain with one scan sensor and
    one depth camera."""
    return {
        "world": {"seed": 1, "grid_resolution": 9, "amplitude": 4.0,
                  "forest_density": 0.0},
        "uavs": [{
            "initial_position": [0.0, 0.0, 20.0],
            "sensors": [
                {"kind": "lidar", "rate": 10.0, "n_horizontal": 16,
                 "n_vertical": 4, "max_range": 80.0},
                {"kind": "depth", "rate": 10.0, "width": 16, "height": 12},
            ],
        }],
    }


@dataclass
class EnvConfig:
    host: str = DEFAULT_HOST
    port: int = DEFAULT_PORT
    template: dict = field(default_factory=default_template)
    observation: str = "state"
    action_modality: str = "position_heading"
    episode_steps: int = 100          # agent steps per episode
    physics_steps_per_action: int = 10
    goal: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 0.0, 20.0]))
    uav_id: int = 0

    def __post_init__(self):
        if self.observation not in OBSERVATION_KINDS:
            raise ValueError(f"observation must be one of "
                             f"{OBSERVATION_KINDS}")
        if self.action_modality not in wire.MODALITY_CODES:
            raise ValueError(f"unknown action modality "
                             f"{self.action_modality!r}")
        if self.episode_steps <= 0:
            raise ValueError("episode_steps must be > 0")
        if self.physics_steps_per_action <= 0:
            raise ValueError("physics_steps_per_action must be > 0")
        self.goal = np.asarray(self.goal, dtype=float)


class EpisodeOver(RuntimeError):
    """step() called after the episode finished; call reset()."""


class RemoteEnv:
    """reset/step/observe interface over one server session at a time."""

    def __init__(self, config: EnvConfig = None, **kwargs):
        self.config = config or EnvConfig(**kwargs)
        self._conn = None
        self._session_id = None
        self._steps_taken = 0
        self._done = True
        self._action_length = self._expected_action_length()

    # -- plumbing -----------------------------------------------------------

    def _connection(self):
        if self._conn is None:
            self._conn = wire.Connection(self.config.host, self.config.port)
        return self._conn

    def _expected_action_length(self):
        modality = self.config.action_modality
        if modality == "actuators":
            uav = self.config.template["uavs"][self.config.uav_id]
            allocation = uav.get("model", {}).get("allocation", "quad_x")
            return 4 if allocation == "quad_x" else len(allocation[0])
        if modality == "attitude":
            return 10
        return 4

    def _sensor_index(self, kind):
        sensors = self.config.template["uavs"][self.config.uav_id].get(
            "sensors", [])
        for i, s in enumerate(sensors):
            if s.get("kind") == kind:
                return i, s
        raise ValueError(f"scenario template defines no {kind!r} sensor for "
                         f"UAV {self.config.uav_id}")

    # -- episode control ------------------------------------------------------

    def reset(self):
        """Start a fresh deterministic episode; returns the initial
        observation."""
        conn = self._connection()
        if self._session_id is not None:
            try:
                conn.request(wire.CLOSE_SESSION, self._session_id)
            except (wire.ServerError, ConnectionError):
                pass
            self._session_id = None
        reply_type, _, body = conn.request(
            wire.CREATE_SESSION, 0,
            wire.encode_create_session(copy.deepcopy(self.config.template)))
        self._session_id, _ = wire.decode_session_created(body)
        self._steps_taken = 0
        self._done = False
        state = self._fetch_state()
        return self._observe(state)

    def step(self, action):
        """Apply one action, advance the configured number of physics steps,
        and return (observation, reward, done, info)."""
        if self._done:
            raise EpisodeOver("episode finished; call reset() before step()")
        values = self._encode_action(action)
        conn = self._connection()
        code = wire.MODALITY_CODES[self.config.action_modality]
        conn.request(wire.SET_CONTROL, self._session_id,
                     wire.encode_set_control(self.config.uav_id, code,
                                             values))
        info = {}
        try:
            _, _, body = conn.request(
                wire.STEP, self._session_id,
                wire.encode_step(self.config.physics_steps_per_action))
            sim_time, states, _ = wire.decode_step_result(body)
            state = states[self.config.uav_id]
            info["sim_time"] = sim_time
        except wire.ServerError as e:
            if e.code == "non-finite":
                self._done = True
                info["diverged"] = True
                zeros = np.zeros(self._observation_length())
                return zeros, -math.inf, True, info
            raise
        self._steps_taken += 1
        if self._steps_taken >= self.config.episode_steps:
            self._done = True
        obs = self._observe(state)
        reward = -float(np.linalg.norm(state["position"] - self.config.goal))
        return obs, reward, self._done, info

    def close(self):
        if self._conn is not None:
            if self._session_id is not None:
                try:
                    self._conn.request(wire.CLOSE_SESSION, self._session_id)
                except (wire.ServerError, ConnectionError):
                    pass
            self._conn.close()
            self._conn = None
            self._session_id = None
            self._done = True

    # -- observations -----------------------------------------------------------

    def _fetch_state(self):
        _, _, body = self._connection().request(
            wire.STEP, self._session_id, wire.encode_step(0))
        _, states, _ = wire.decode_step_result(body)
        return states[self.config.uav_id]

    def _observation_length(self):
        if self.config.observation == "state":
            return 13
        if self.config.observation == "lidar":
            _, spec = self._sensor_index("lidar")
            return int(spec.get("n_horizontal", 64)
                       * spec.get("n_vertical", 16))
        _, spec = self._sensor_index("depth")
        return int(spec.get("width", 32) * spec.get("height", 24))

    def _observe(self, state):
        kind = self.config.observation
        if kind == "state":
            return np.concatenate([state["position"], state["velocity"],
                                   state["quaternion"], state["body_rates"]])
        conn = self._connection()
        if kind == "lidar":
            index, spec = self._sensor_index("lidar")
            _, _, body = conn.request(
                wire.SENSE, self._session_id,
                wire.encode_sense(self.config.uav_id, index))
            frame = wire.decode_frames(body)[0]
            n_h = int(spec.get("n_horizontal", 64))
            n_v = int(spec.get("n_vertical", 16))
            max_range = float(spec.get("max_range", 100.0))
            grid = np.full(n_h * n_v, max_range, dtype=np.float32)
            flat = frame["rows"].astype(np.int64) * n_v \
                + frame["cols"].astype(np.int64)
            grid[flat] = frame["ranges"]
            return grid
        index, spec = self._sensor_index("depth")
        _, _, body = conn.request(
            wire.SENSE, self._session_id,
            wire.encode_sense(self.config.uav_id, index))
        frame = wire.decode_frames(body)[0]
        return frame["ranges"].reshape(-1)

    # -- actions -------------------------------------------------------------------

    def _encode_action(self, action):
        values = np.asarray(action, dtype=float).reshape(-1)
        if values.shape[0] != self._action_length:
            raise ValueError(
                f"action for modality {self.config.action_modality!r} must "
                f"have {self._action_length} values, got {values.shape[0]}")
        if not np.all(np.isfinite(values)):
            raise ValueError("action contains non-finite values")
        return values
