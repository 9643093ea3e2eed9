"""Scenario files: a session config plus a timestamped command script,
a duration, and output selections. Execution is stepped and deterministic;
rerunning a scenario produces byte-identical outputs.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import config as config_schema
from .config import command_to_dict, load_command, session_config_to_dict
from .dynamics import DivergenceError
from .sensors import write_depth_pfm, write_label_pgm, write_point_cloud
from .simserver.session import ConfigError, Session, SessionConfig

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_DIVERGED = 3

TRACE_FILENAME = "trace.csv"


@dataclass
class Scenario:
    session: SessionConfig
    duration: float = 10.0
    commands: list = field(default_factory=list)  # sorted (time, uav, input)
    write_trace: bool = True
    write_sensors: bool = True
    name: str = "scenario"


def scenario_from_dict(data: dict) -> Scenario:
    errors = []
    reader = config_schema._Reader(dict(data), "", errors)
    duration = reader.take("duration", 10.0, kind=float)
    name = reader.take("name", "scenario", kind=str)
    outputs = reader.sub("outputs")
    write_trace = outputs.take("state_trace", True, kind=bool)
    write_sensors = outputs.take("sensor_dumps", True, kind=bool)
    outputs.finish()
    commands_raw = reader.take("commands", [], kind=list)
    session_keys = ("world", "uavs", "dt", "mode", "realtime_factor",
                    "spectator")
    session_data = {k: reader.data.pop(k) for k in session_keys
                    if k in reader.data}
    reader.finish()
    if duration <= 0.0:
        errors.append(("duration", "must be > 0"))
    commands = []
    last_time = -1.0
    for i, raw in enumerate(commands_raw):
        when, uav, cmd = load_command(raw, f"commands[{i}]", errors)
        if when < last_time:
            errors.append((f"commands[{i}].time",
                           "command timestamps must be non-decreasing"))
        last_time = max(last_time, when)
        if cmd is not None:
            commands.append((when, uav, cmd))
    try:
        session = config_schema.load_session_config(session_data)
    except ConfigError as e:
        errors.extend(e.errors)
        session = None
    if errors:
        raise ConfigError(errors)
    return Scenario(session=session, duration=duration, commands=commands,
                    write_trace=write_trace, write_sensors=write_sensors,
                    name=name)


def scenario_to_dict(s: Scenario) -> dict:
    out = session_config_to_dict(s.session)
    out["duration"] = s.duration
    out["name"] = s.name
    out["outputs"] = {"state_trace": s.write_trace,
                      "sensor_dumps": s.write_sensors}
    out["commands"] = [command_to_dict(when, uav, cmd)
                       for when, uav, cmd in s.commands]
    return out


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as handle:
        data = yaml.safe_load(handle)
    if data is None:
        data = {}
    return scenario_from_dict(data)


def save_scenario(s: Scenario, path):
    with open(path, "w", encoding="utf-8") as handle:
        yaml.safe_dump(scenario_to_dict(s), handle, sort_keys=False)


def _fmt(value: float) -> str:
    return f"{value:.17g}"


class StateTraceWriter:
    """Delimited state trace: one row per (step, UAV), header first.

    Columns: time, uav, position, velocity, attitude quaternion (w, x, y, z),
    body rates, then one column per motor (padded across heterogeneous motor
    counts).
    """

    def __init__(self, handle, max_motors: int):
        self.handle = handle
        self.max_motors = max_motors
        cols = ["time", "uav", "x", "y", "z", "vx", "vy", "vz",
                "qw", "qx", "qy", "qz", "wx", "wy", "wz"]
        cols += [f"m{i}" for i in range(max_motors)]
        handle.write(",".join(cols) + "\n")

    def write_row(self, sim_time, uav_id, state):
        from .rotations import quaternion_wxyz
        quat = quaternion_wxyz(state.rotation)
        vals = [sim_time, float(uav_id)]
        vals += [float(v) for v in state.position]
        vals += [float(v) for v in state.velocity]
        vals += [float(v) for v in quat]
        vals += [float(v) for v in state.body_rates]
        motors = list(state.motor_speeds) + \
            [math.nan] * (self.max_motors - state.motor_speeds.shape[0])
        vals += [float(v) for v in motors]
        self.handle.write(",".join(_fmt(v) for v in vals) + "\n")


class _SensorDumper:
    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.counters = {}
        self.scalar_files = {}

    def dump(self, frame):
        key = (frame.uav_id, frame.sensor_index)
        if frame.kind in ("imu", "gnss", "baro", "mag"):
            handle = self.scalar_files.get(key)
            if handle is None:
                path = self.out_dir / (f"uav{frame.uav_id}_s{frame.sensor_index}"
                                       f"_{frame.kind}.csv")
                handle = open(path, "w", encoding="utf-8")
                header = {
                    "imu": "time,ax,ay,az,gx,gy,gz",
                    "gnss": "time,x,y,z",
                    "baro": "time,altitude",
                    "mag": "time,mx,my,mz",
                }[frame.kind]
                handle.write(header + "\n")
                self.scalar_files[key] = handle
            data = frame.data
            if frame.kind == "imu":
                vals = [frame.timestamp, *data.accelerometer, *data.gyroscope]
            elif frame.kind == "gnss":
                vals = [frame.timestamp, *data.position]
            elif frame.kind == "baro":
                vals = [frame.timestamp, data.altitude]
            else:
                vals = [frame.timestamp, *data.field_direction]
            handle.write(",".join(_fmt(float(v)) for v in vals) + "\n")
            return
        seq = self.counters.get(key, 0)
        self.counters[key] = seq + 1
        stem = f"uav{frame.uav_id}_s{frame.sensor_index}_{frame.kind}_{seq:05d}"
        if frame.kind == "lidar":
            with open(self.out_dir / f"{stem}.bin", "wb") as handle:
                write_point_cloud(frame.data, handle)
        elif frame.kind == "depth":
            with open(self.out_dir / f"{stem}.pfm", "wb") as handle:
                write_depth_pfm(frame.data, handle)
        elif frame.kind == "label":
            with open(self.out_dir / f"{stem}.pgm", "wb") as handle:
                write_label_pgm(frame.data, handle)

    def close(self):
        for handle in self.scalar_files.values():
            handle.close()


def run_scenario(scenario: Scenario, out_dir) -> int:
    """Execute to completion in stepped mode, writing the declared outputs.

    Returns EXIT_OK, or EXIT_DIVERGED when integration produced non-finite
    state (the trace written so far is kept for diagnosis).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = scenario.session
    if cfg.mode != "stepped":
        cfg = SessionConfig(world=cfg.world, uavs=cfg.uavs, dt=cfg.dt,
                            mode="stepped",
                            realtime_factor=cfg.realtime_factor,
                            spectator=cfg.spectator)
    session = Session(cfg)
    n_steps = int(round(scenario.duration / cfg.dt))
    commands = list(scenario.commands)
    next_cmd = 0

    trace = None
    trace_handle = None
    if scenario.write_trace:
        max_motors = max(u.model.n_motors for u in cfg.uavs)
        trace_handle = open(out_dir / TRACE_FILENAME, "w", encoding="utf-8",
                            newline="\n")
        trace = StateTraceWriter(trace_handle, max_motors)
        for uav_id, state in sorted(session.states().items()):
            trace.write_row(0.0, uav_id, state)
    dumper = _SensorDumper(out_dir) if scenario.write_sensors else None

    status = EXIT_OK
    try:
        for step_index in range(n_steps):
            now = step_index * cfg.dt
            while next_cmd < len(commands) and \
                    commands[next_cmd][0] <= now + 1e-9:
                _, uav_id, cmd = commands[next_cmd]
                session.set_control(uav_id, cmd)
                next_cmd += 1
            states, frames = session.step(1)
            if trace is not None:
                for uav_id, state in sorted(states.items()):
                    trace.write_row(session.sim_time, uav_id, state)
            if dumper is not None:
                for frame in frames:
                    dumper.dump(frame)
    except DivergenceError:
        status = EXIT_DIVERGED
    finally:
        if trace_handle is not None:
            trace_handle.close()
        if dumper is not None:
            dumper.close()
    return status
