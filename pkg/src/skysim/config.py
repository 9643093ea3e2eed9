"""Declarative configuration: dict schema <-> runtime objects.

The same schema backs the scenario files read by the CLI (YAML) and the
session-creation blob on the wire (JSON). Loading makes every default
explicit, so a parse / serialize round trip is stable. Validation failures
carry the path to the offending field.
"""

import math

import numpy as np

from .control import (MODALITY_CODES_BY_NAME, MODALITY_NAMES, CascadeGains,
                      unpack_input)
from .dynamics import (AllocationModel, PropellerParams, RigidBodyModel,
                       UavModel)
from .sensors import CameraConfig, LidarConfig, NoiseSpec
from .simserver.session import (ConfigError, SensorSpec, SessionConfig,
                                UavConfig)
from .worldgen import TerrainParams


class _Reader:
    """Dict reader that tracks field paths and collects errors."""

    def __init__(self, data, path, errors):
        if not isinstance(data, dict):
            errors.append((path, "expected a mapping"))
            data = {}
        self.data = dict(data)
        self.path = path
        self.errors = errors

    def sub(self, key, default=None):
        value = self.data.pop(key, default if default is not None else {})
        return _Reader(value, f"{self.path}.{key}" if self.path else key,
                       self.errors)

    def take(self, key, default, kind=None, check=None, describe=""):
        value = self.data.pop(key, default)
        path = f"{self.path}.{key}" if self.path else key
        if kind is not None:
            if kind is float and isinstance(value, (int, float)) \
                    and not isinstance(value, bool):
                value = float(value)
            elif not isinstance(value, kind) or isinstance(value, bool) \
                    and kind is not bool:
                self.errors.append((path, f"expected {kind.__name__}"))
                return default
        if check is not None and not check(value):
            self.errors.append((path, describe or "invalid value"))
            return default
        return value

    def take_vector(self, key, default, length):
        value = self.data.pop(key, None)
        path = f"{self.path}.{key}" if self.path else key
        if value is None:
            return np.asarray(default, dtype=float)
        try:
            arr = np.asarray(value, dtype=float)
        except (TypeError, ValueError):
            self.errors.append((path, f"expected {length} numbers"))
            return np.asarray(default, dtype=float)
        if arr.shape != (length,):
            self.errors.append((path, f"expected {length} numbers"))
            return np.asarray(default, dtype=float)
        return arr

    def finish(self):
        for key in self.data:
            self.errors.append(
                (f"{self.path}.{key}" if self.path else key, "unknown field"))


def _positive(v):
    return isinstance(v, (int, float)) and v > 0


def load_terrain_params(reader: _Reader) -> TerrainParams:
    intensity_raw = reader.take("material_intensity", None, kind=dict) \
        if "material_intensity" in reader.data else None
    kwargs = dict(
        seed=reader.take("seed", 0, kind=int),
        cell_size=reader.take("cell_size", 100.0, kind=float),
        grid_resolution=reader.take("grid_resolution", 33, kind=int),
        roughness=reader.take("roughness", 0.5, kind=float),
        amplitude=reader.take("amplitude", 8.0, kind=float),
        base_frequency=reader.take("base_frequency", 0.01, kind=float),
        octaves=reader.take("octaves", 4, kind=int),
        forest_density=reader.take("forest_density", 0.01, kind=float),
        visibility_range=reader.take("visibility_range", 150.0, kind=float),
    )
    if intensity_raw is not None:
        try:
            kwargs["material_intensity"] = {
                int(k): float(v) for k, v in intensity_raw.items()}
        except (TypeError, ValueError):
            reader.errors.append((f"{reader.path}.material_intensity",
                                  "expected class -> intensity mapping"))
    reader.finish()
    try:
        return TerrainParams(**kwargs)
    except ValueError as e:
        reader.errors.append((reader.path, str(e)))
        return TerrainParams()


def terrain_params_to_dict(p: TerrainParams) -> dict:
    return {
        "seed": p.seed,
        "cell_size": p.cell_size,
        "grid_resolution": p.grid_resolution,
        "roughness": p.roughness,
        "amplitude": p.amplitude,
        "base_frequency": p.base_frequency,
        "octaves": p.octaves,
        "forest_density": p.forest_density,
        "visibility_range": p.visibility_range,
        "material_intensity": {str(k): v
                               for k, v in p.material_intensity.items()},
    }


def load_uav_model(reader: _Reader) -> UavModel:
    mass = reader.take("mass", 2.0, kind=float)
    inertia = reader.data.pop("inertia", [0.02, 0.02, 0.04])
    gravity = reader.take_vector("gravity", [0.0, 0.0, -9.81], 3)
    arm = reader.take("arm_diagonal", 0.4, kind=float)
    k = reader.take("thrust_coefficient", 2.2e-5, kind=float)
    ctf = reader.take("torque_constant", 0.016, kind=float)
    tau = reader.take("motor_time_constant", 0.03, kind=float)
    wmax = reader.take("max_motor_speed", 1100.0, kind=float)
    allocation = reader.data.pop("allocation", "quad_x")
    reader.finish()
    path = reader.path
    errors = reader.errors
    try:
        inertia_arr = np.asarray(inertia, dtype=float)
        if inertia_arr.shape == (3,):
            inertia_arr = np.diag(inertia_arr)
        propellers = PropellerParams(
            thrust_coefficient=k, motor_time_constant=tau,
            max_angular_velocity=wmax, torque_constant=ctf)
        if isinstance(allocation, str):
            if allocation != "quad_x":
                raise ValueError(f"unknown allocation preset {allocation!r}")
            alloc = AllocationModel.quad_x(arm_diagonal=arm,
                                           torque_constant=ctf)
        else:
            alloc = AllocationModel(matrix=np.asarray(allocation, dtype=float),
                                    arm_diagonal=arm)
        body = RigidBodyModel(mass=mass, inertia=inertia_arr, gravity=gravity)
        return UavModel(propellers=propellers, allocation=alloc, body=body)
    except (TypeError, ValueError) as e:
        errors.append((path, str(e)))
        return UavModel.default_quad_x()


def uav_model_to_dict(m: UavModel) -> dict:
    p = m.propellers
    quad = AllocationModel.quad_x(m.allocation.arm_diagonal,
                                  p.torque_constant)
    is_preset = (m.allocation.matrix.shape == (4, 4)
                 and np.allclose(m.allocation.matrix, quad.matrix))
    return {
        "mass": m.body.mass,
        "inertia": m.body.inertia.tolist(),
        "gravity": m.body.gravity.tolist(),
        "arm_diagonal": m.allocation.arm_diagonal,
        "thrust_coefficient": p.thrust_coefficient,
        "torque_constant": p.torque_constant,
        "motor_time_constant": p.motor_time_constant,
        "max_motor_speed": p.max_angular_velocity,
        "allocation": "quad_x" if is_preset else m.allocation.matrix.tolist(),
    }


def load_gains(reader: _Reader) -> CascadeGains:
    kwargs = dict(
        position_p=reader.take("position_p", 1.0, kind=float),
        velocity_pid=tuple(float(v) for v in reader.take_vector(
            "velocity_pid", [3.0, 0.1, 0.3], 3)),
        attitude_p=reader.take("attitude_p", 6.0, kind=float),
        rate_pid=tuple(float(v) for v in reader.take_vector(
            "rate_pid", [4.0, 0.2, 0.05], 3)),
        velocity_limit=reader.take("velocity_limit", 8.0, kind=float),
        accel_limit=reader.take("accel_limit", 10.0, kind=float),
        rate_limit=reader.take("rate_limit", 6.0, kind=float),
        torque_limit=reader.take("torque_limit", 2.0, kind=float),
    )
    reader.finish()
    try:
        return CascadeGains(**kwargs)
    except ValueError as e:
        reader.errors.append((reader.path, str(e)))
        return CascadeGains()


def gains_to_dict(g: CascadeGains) -> dict:
    return {
        "position_p": g.position_p,
        "velocity_pid": list(g.velocity_pid),
        "attitude_p": g.attitude_p,
        "rate_pid": list(g.rate_pid),
        "velocity_limit": g.velocity_limit,
        "accel_limit": g.accel_limit,
        "rate_limit": g.rate_limit,
        "torque_limit": g.torque_limit,
    }


def load_noise(reader: _Reader) -> NoiseSpec:
    kwargs = dict(
        gaussian_sigma=reader.take("sigma", 0.0, kind=float),
        bias=reader.take("bias", 0.0, kind=float),
        rng_seed=reader.take("seed", 0, kind=int),
    )
    reader.finish()
    try:
        return NoiseSpec(**kwargs)
    except ValueError as e:
        reader.errors.append((reader.path, str(e)))
        return NoiseSpec()


def noise_to_dict(n: NoiseSpec) -> dict:
    return {"sigma": n.gaussian_sigma, "bias": n.bias, "seed": n.rng_seed}


def load_sensor(reader: _Reader) -> SensorSpec:
    kind = reader.take("kind", "imu", kind=str)
    rate = reader.take("rate", 10.0, kind=float, check=_positive,
                       describe="must be > 0")
    noise = load_noise(reader.sub("noise"))
    kwargs = dict(kind=kind, rate=rate, noise=noise)
    if kind == "lidar":
        try:
            kwargs["lidar"] = LidarConfig(
                n_horizontal=reader.take("n_horizontal", 64, kind=int),
                n_vertical=reader.take("n_vertical", 16, kind=int),
                horizontal_fov=reader.take("horizontal_fov", 2.0 * math.pi,
                                           kind=float),
                vertical_fov=reader.take("vertical_fov",
                                         math.radians(30.0), kind=float),
                max_range=reader.take("max_range", 100.0, kind=float),
                rate=rate,
                noise=noise,
                intensity_channel=reader.take("intensity_channel", True,
                                              kind=bool),
                label_channel=reader.take("label_channel", True, kind=bool),
            )
        except ValueError as e:
            reader.errors.append((reader.path, str(e)))
    elif kind in ("depth", "label"):
        try:
            kwargs["camera"] = CameraConfig(
                width=reader.take("width", 32, kind=int),
                height=reader.take("height", 24, kind=int),
                horizontal_fov=reader.take("horizontal_fov",
                                           math.radians(90.0), kind=float),
                rate=rate,
            )
        except ValueError as e:
            reader.errors.append((reader.path, str(e)))
    elif kind == "gnss":
        kwargs["gnss_origin"] = reader.take_vector("origin", [0.0, 0.0, 0.0], 3)
    elif kind == "mag":
        kwargs["north_reference"] = reader.take_vector("north",
                                                       [1.0, 0.0, 0.0], 3)
    reader.finish()
    try:
        return SensorSpec(**kwargs)
    except ValueError as e:
        reader.errors.append((reader.path, str(e)))
        return SensorSpec(kind="imu")


def sensor_to_dict(s: SensorSpec) -> dict:
    out = {"kind": s.kind, "rate": s.rate, "noise": noise_to_dict(s.noise)}
    if s.kind == "lidar":
        c = s.lidar
        out.update(n_horizontal=c.n_horizontal, n_vertical=c.n_vertical,
                   horizontal_fov=c.horizontal_fov,
                   vertical_fov=c.vertical_fov, max_range=c.max_range,
                   intensity_channel=c.intensity_channel,
                   label_channel=c.label_channel)
    elif s.kind in ("depth", "label"):
        c = s.camera
        out.update(width=c.width, height=c.height,
                   horizontal_fov=c.horizontal_fov)
    elif s.kind == "gnss":
        out["origin"] = np.asarray(s.gnss_origin, dtype=float).tolist()
    elif s.kind == "mag":
        out["north"] = np.asarray(s.north_reference, dtype=float).tolist()
    return out


def load_uav(reader: _Reader) -> UavConfig:
    model = load_uav_model(reader.sub("model"))
    gains = load_gains(reader.sub("gains"))
    position = reader.take_vector("initial_position", [0.0, 0.0, 0.0], 3)
    heading = reader.take("initial_heading", 0.0, kind=float)
    motors = reader.data.pop("initial_motors", "hover")
    hitl = reader.take("hitl", False, kind=bool)
    sensors_raw = reader.take("sensors", [], kind=list)
    path = reader.path
    sensor_specs = []
    for i, raw in enumerate(sensors_raw):
        sensor_specs.append(load_sensor(
            _Reader(raw, f"{path}.sensors[{i}]", reader.errors)))
    reader.finish()
    if isinstance(motors, str):
        if motors not in ("hover", "rest"):
            reader.errors.append((f"{path}.initial_motors",
                                  "expected 'hover', 'rest' or a list"))
            motors = "hover"
    else:
        motors = list(np.asarray(motors, dtype=float))
    return UavConfig(model=model, gains=gains, initial_position=position,
                     initial_heading=heading, initial_motors=motors,
                     hitl=hitl, sensors=sensor_specs)


def uav_to_dict(u: UavConfig) -> dict:
    motors = u.initial_motors
    if not isinstance(motors, str):
        motors = np.asarray(motors, dtype=float).tolist()
    return {
        "model": uav_model_to_dict(u.model),
        "gains": gains_to_dict(u.gains),
        "initial_position": np.asarray(u.initial_position,
                                       dtype=float).tolist(),
        "initial_heading": float(u.initial_heading),
        "initial_motors": motors,
        "hitl": u.hitl,
        "sensors": [sensor_to_dict(s) for s in u.sensors],
    }


def load_session_config(data: dict, path="") -> SessionConfig:
    """Build a SessionConfig from a schema dict; raises ConfigError with
    per-field diagnostics on any violation."""
    errors = []
    reader = _Reader(data, path, errors)
    world = load_terrain_params(reader.sub("world"))
    uavs_raw = reader.take("uavs", [], kind=list)
    dt = reader.take("dt", 1.0 / 250.0, kind=float)
    mode = reader.take("mode", "stepped", kind=str)
    rtf = reader.take("realtime_factor", 1.0, kind=float)
    spectator = reader.data.pop("spectator", None)
    if spectator is not None:
        spectator = np.asarray(spectator, dtype=float)
        if spectator.shape != (3,):
            errors.append((_join(path, "spectator"), "expected 3 numbers"))
            spectator = None
    uavs = []
    for i, raw in enumerate(uavs_raw):
        uavs.append(load_uav(_Reader(raw, _join(path, f"uavs[{i}]"), errors)))
    reader.finish()
    cfg = SessionConfig(world=world, uavs=uavs, dt=dt, mode=mode,
                        realtime_factor=rtf, spectator=spectator)
    for field_path, msg in cfg.validation_errors():
        errors.append((_join(path, field_path), msg))
    if errors:
        raise ConfigError(errors)
    return cfg


def _join(path, key):
    return f"{path}.{key}" if path else key


def session_config_to_dict(cfg: SessionConfig) -> dict:
    return {
        "world": terrain_params_to_dict(cfg.world),
        "uavs": [uav_to_dict(u) for u in cfg.uavs],
        "dt": cfg.dt,
        "mode": cfg.mode,
        "realtime_factor": cfg.realtime_factor,
        "spectator": None if cfg.spectator is None
        else np.asarray(cfg.spectator, dtype=float).tolist(),
    }


_COMMAND_FIELDS = {
    0: ("throttles", None),
    1: (None, None),
    2: ("body_rates", "throttle"),
    3: ("rotation", "throttle"),
    4: ("acceleration", "heading"),
    5: ("acceleration", "heading_rate"),
    6: ("velocity", "heading"),
    7: ("velocity", "heading_rate"),
    8: ("position", "heading"),
}


def load_command(raw: dict, path: str, errors: list):
    """(time, uav id, ControlInput) from one command entry."""
    reader = _Reader(raw, path, errors)
    when = reader.take("time", 0.0, kind=float,
                       check=lambda v: v >= 0.0, describe="must be >= 0")
    uav = reader.take("uav", 0, kind=int)
    name = reader.take("modality", "", kind=str)
    code = MODALITY_CODES_BY_NAME.get(name)
    if code is None:
        errors.append((_join(path, "modality"),
                       f"unknown modality {name!r}; valid: "
                       f"{sorted(MODALITY_CODES_BY_NAME)}"))
        reader.data.clear()
        return when, uav, None
    try:
        if code == 0:
            payload = np.asarray(reader.data.pop("throttles", []), dtype=float)
        elif code == 1:
            payload = np.array([
                reader.take("roll", 0.0, kind=float),
                reader.take("pitch", 0.0, kind=float),
                reader.take("yaw", 0.0, kind=float),
                reader.take("throttle", 0.0, kind=float),
            ])
        elif code == 2:
            payload = np.concatenate([
                reader.take_vector("body_rates", [0.0, 0.0, 0.0], 3),
                [reader.take("throttle", 0.0, kind=float)]])
        elif code == 3:
            rot = np.asarray(reader.data.pop("rotation", np.eye(3).tolist()),
                             dtype=float).reshape(9)
            payload = np.concatenate([
                rot, [reader.take("throttle", 0.0, kind=float)]])
        else:
            vec_key, tail_key = _COMMAND_FIELDS[code]
            payload = np.concatenate([
                reader.take_vector(vec_key, [0.0, 0.0, 0.0], 3),
                [reader.take(tail_key, 0.0, kind=float)]])
        command = unpack_input(code, payload)
    except (TypeError, ValueError) as e:
        errors.append((path, str(e)))
        command = None
    reader.finish()
    return when, uav, command


def command_to_dict(when: float, uav: int, command) -> dict:
    from .control import MODALITY_CODES, pack_input
    code = MODALITY_CODES[type(command)]
    n_motors = len(command.throttles) if code == 0 else 4
    _, payload = pack_input(command, n_motors)
    out = {"time": when, "uav": uav, "modality": MODALITY_NAMES[code]}
    if code == 0:
        out["throttles"] = payload.tolist()
    elif code == 1:
        out.update(roll=float(payload[0]), pitch=float(payload[1]),
                   yaw=float(payload[2]), throttle=float(payload[3]))
    elif code == 2:
        out.update(body_rates=payload[:3].tolist(),
                   throttle=float(payload[3]))
    elif code == 3:
        out.update(rotation=payload[:9].reshape(3, 3).tolist(),
                   throttle=float(payload[9]))
    else:
        vec_key, tail_key = _COMMAND_FIELDS[code]
        out[vec_key] = payload[:3].tolist()
        out[tail_key] = float(payload[3])
    return out
