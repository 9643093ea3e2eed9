"""Binary session protocol.

Framing: every message is one length-prefixed frame on a stream socket,
little-endian throughout:

    u32 payload_length | payload
    payload = u16 protocol_version | u16 message_type | u32 session_id | body

Request bodies:
    CREATE_SESSION  u32 json_len | UTF-8 JSON session config
    SET_CONTROL     u32 uav_id | u8 modality | modality payload
                    (modality 0: u32 count + count*f64 throttles;
                     1: 4*f64 roll,pitch,yaw,throttle; 2: 4*f64 wx,wy,wz,throttle;
                     3: 9*f64 R row-major + f64 throttle; 4..8: 3*f64 + f64)
    STEP            u32 n_steps
    SET_HITL_POSE   u32 uav_id | 3*f64 position | 9*f64 R row-major | f64 timestamp
    GET_STATUS      (empty)
    GET_FRAMES      (empty)
    SENSE           u32 uav_id | u32 sensor_index
    CLOSE_SESSION   (empty)

Reply bodies:
    SESSION_CREATED u32 session_id | u32 active_cells
    ACK             (empty)
    STEP_RESULT     f64 sim_time | u32 n_uavs | per UAV: u32 id, 3*f64 r,
                    3*f64 v, 4*f64 quaternion wxyz, 3*f64 omega,
                    u32 n_motors, n*f64 motor speeds | u32 n_frames | frames
    STATUS          f64 sim_time | f64 wall_elapsed | f64 lag | u8 mode | u32 n_uavs
    FRAMES          u32 n_frames | frames
    CLOSED          (empty)
    ERROR           u16 len | code | u16 len | message (both UTF-8)

Sensor frame encoding:
    u32 uav_id | u32 sensor_index | u8 kind | f64 timestamp
    | u32 payload_len | payload
    kind 0 imu:   6*f64 (accelerometer, gyroscope)
    kind 1 gnss:  3*f64
    kind 2 baro:  f64
    kind 3 mag:   3*f64
    kind 4 lidar: u32 n | per point f32 x,y,z,range,intensity, u8 label,
                  u16 row, u16 col (the row/col ray indices are wire-only;
                  file dumps use the plain point layout)
    kind 5 depth: u32 width | u32 height | width*height f32 row-major
    kind 6 label: u32 width | u32 height | width*height u8 row-major
"""

import json
import struct

import numpy as np

from ..rotations import quaternion_wxyz
from .session import SensorFrame

PROTOCOL_VERSION = 1
MAX_FRAME = 64 * 1024 * 1024

# request types
CREATE_SESSION = 1
SET_CONTROL = 2
STEP = 3
SET_HITL_POSE = 4
GET_STATUS = 5
GET_FRAMES = 6
CLOSE_SESSION = 7
SENSE = 8

# reply types
SESSION_CREATED = 128
ACK = 129
STEP_RESULT = 130
STATUS = 131
FRAMES = 132
CLOSED = 133
ERROR = 255

_HEADER = struct.Struct("<HHI")
_LEN = struct.Struct("<I")

SENSOR_KIND_CODES = {"imu": 0, "gnss": 1, "baro": 2, "mag": 3, "lidar": 4,
                     "depth": 5, "label": 6}
SENSOR_KIND_NAMES = {v: k for k, v in SENSOR_KIND_CODES.items()}

WIRE_POINT = np.dtype([
    ("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("range", "<f4"),
    ("intensity", "<f4"), ("label", "u1"), ("row", "<u2"), ("col", "<u2"),
])


class ProtocolError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def encode_frame(msg_type: int, session_id: int, body: bytes = b"") -> bytes:
    payload = _HEADER.pack(PROTOCOL_VERSION, msg_type, session_id) + body
    return _LEN.pack(len(payload)) + payload


def decode_payload(payload: bytes):
    """(version, message type, session id, body) of one frame payload."""
    if len(payload) < _HEADER.size:
        raise ProtocolError("bad-frame", "payload shorter than header")
    version, msg_type, session_id = _HEADER.unpack_from(payload)
    if version != PROTOCOL_VERSION:
        raise ProtocolError("bad-version",
                            f"unsupported protocol version {version}")
    return version, msg_type, session_id, payload[_HEADER.size:]


def read_frame(sock):
    """Blocking read of one frame payload from a socket; None on EOF."""
    head = _recv_exact(sock, _LEN.size)
    if head is None:
        return None
    (length,) = _LEN.unpack(head)
    if length < _HEADER.size or length > MAX_FRAME:
        raise ProtocolError("bad-frame", f"invalid frame length {length}")
    payload = _recv_exact(sock, length)
    if payload is None:
        raise ProtocolError("bad-frame", "connection closed mid-frame")
    return payload


def _recv_exact(sock, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None if not buf else None
        buf.extend(chunk)
    return bytes(buf)


# -- request encoders / decoders -------------------------------------------

def encode_create_session(config_dict) -> bytes:
    blob = json.dumps(config_dict, sort_keys=True).encode("utf-8")
    return struct.pack("<I", len(blob)) + blob


def decode_create_session(body: bytes):
    if len(body) < 4:
        raise ProtocolError("malformed-payload", "truncated config blob")
    (n,) = struct.unpack_from("<I", body)
    if len(body) != 4 + n:
        raise ProtocolError("malformed-payload", "config blob length mismatch")
    try:
        return json.loads(body[4:].decode("utf-8"))
    except ValueError as e:
        raise ProtocolError("malformed-payload", f"bad config JSON: {e}")


_MODALITY_LEN = {1: 4, 2: 4, 3: 10, 4: 4, 5: 4, 6: 4, 7: 4, 8: 4}


def encode_set_control(uav_id: int, code: int, payload) -> bytes:
    values = np.asarray(payload, dtype="<f8")
    head = struct.pack("<IB", uav_id, code)
    if code == 0:
        head += struct.pack("<I", values.shape[0])
    return head + values.tobytes()


def decode_set_control(body: bytes):
    if len(body) < 5:
        raise ProtocolError("malformed-payload", "truncated control command")
    uav_id, code = struct.unpack_from("<IB", body)
    off = 5
    if code == 0:
        if len(body) < 9:
            raise ProtocolError("malformed-payload", "truncated throttle count")
        (n,) = struct.unpack_from("<I", body, off)
        off += 4
    elif code in _MODALITY_LEN:
        n = _MODALITY_LEN[code]
    else:
        raise ProtocolError("malformed-payload", f"unknown modality {code}")
    if len(body) != off + 8 * n:
        raise ProtocolError("malformed-payload", "control payload length mismatch")
    values = np.frombuffer(body, dtype="<f8", count=n, offset=off).copy()
    return uav_id, code, values


def encode_step(n_steps: int) -> bytes:
    return struct.pack("<I", n_steps)


def decode_step(body: bytes):
    if len(body) != 4:
        raise ProtocolError("malformed-payload", "step body must be u32")
    return struct.unpack("<I", body)[0]


def encode_set_hitl_pose(uav_id, position, rotation, timestamp) -> bytes:
    return (struct.pack("<I", uav_id)
            + np.asarray(position, dtype="<f8").tobytes()
            + np.asarray(rotation, dtype="<f8").reshape(9).tobytes()
            + struct.pack("<d", timestamp))


def decode_set_hitl_pose(body: bytes):
    if len(body) != 4 + 8 * 13:
        raise ProtocolError("malformed-payload", "pose body length mismatch")
    (uav_id,) = struct.unpack_from("<I", body)
    vals = np.frombuffer(body, dtype="<f8", count=13, offset=4)
    return uav_id, vals[0:3].copy(), vals[3:12].reshape(3, 3).copy(), float(vals[12])


def encode_sense(uav_id: int, sensor_index: int) -> bytes:
    return struct.pack("<II", uav_id, sensor_index)


def decode_sense(body: bytes):
    if len(body) != 8:
        raise ProtocolError("malformed-payload", "sense body must be 2*u32")
    return struct.unpack("<II", body)


# -- reply encoders ----------------------------------------------------------

def encode_session_created(session_id: int, active_cells: int) -> bytes:
    return struct.pack("<II", session_id, active_cells)


def encode_error(code: str, message: str) -> bytes:
    c = code.encode("utf-8")
    m = message.encode("utf-8")
    return (struct.pack("<H", len(c)) + c + struct.pack("<H", len(m)) + m)


def decode_error(body: bytes):
    (nc,) = struct.unpack_from("<H", body)
    code = body[2:2 + nc].decode("utf-8")
    (nm,) = struct.unpack_from("<H", body, 2 + nc)
    message = body[4 + nc:4 + nc + nm].decode("utf-8")
    return code, message


def encode_uav_state(uav_id: int, state) -> bytes:
    quat = quaternion_wxyz(state.rotation)
    vals = np.concatenate([state.position, state.velocity, quat,
                           state.body_rates])
    return (struct.pack("<I", uav_id) + vals.astype("<f8").tobytes()
            + struct.pack("<I", state.motor_speeds.shape[0])
            + state.motor_speeds.astype("<f8").tobytes())


def decode_uav_state(body: bytes, off: int):
    (uav_id,) = struct.unpack_from("<I", body, off)
    off += 4
    vals = np.frombuffer(body, dtype="<f8", count=13, offset=off).copy()
    off += 13 * 8
    (n,) = struct.unpack_from("<I", body, off)
    off += 4
    motors = np.frombuffer(body, dtype="<f8", count=n, offset=off).copy()
    off += n * 8
    return {"uav_id": uav_id, "position": vals[0:3], "velocity": vals[3:6],
            "quaternion": vals[6:10], "body_rates": vals[10:13],
            "motor_speeds": motors}, off


def encode_sensor_frame(frame: SensorFrame) -> bytes:
    kind = SENSOR_KIND_CODES[frame.kind]
    data = frame.data
    if frame.kind == "imu":
        payload = np.concatenate([data.accelerometer,
                                  data.gyroscope]).astype("<f8").tobytes()
    elif frame.kind == "gnss":
        payload = np.asarray(data.position, dtype="<f8").tobytes()
    elif frame.kind == "baro":
        payload = struct.pack("<d", data.altitude)
    elif frame.kind == "mag":
        payload = np.asarray(data.field_direction, dtype="<f8").tobytes()
    elif frame.kind == "lidar":
        n = data.points.shape[0]
        rec = np.empty(n, dtype=WIRE_POINT)
        rec["x"] = data.points[:, 0]
        rec["y"] = data.points[:, 1]
        rec["z"] = data.points[:, 2]
        rec["range"] = data.ranges
        rec["intensity"] = data.intensities if data.intensities is not None else 0.0
        rec["label"] = data.labels if data.labels is not None else 0
        rec["row"] = data.rows
        rec["col"] = data.cols
        payload = struct.pack("<I", n) + rec.tobytes()
    elif frame.kind == "depth":
        h, w = data.ranges.shape
        payload = struct.pack("<II", w, h) + data.ranges.astype("<f4").tobytes()
    elif frame.kind == "label":
        h, w = data.labels.shape
        payload = struct.pack("<II", w, h) + data.labels.astype("u1").tobytes()
    else:
        raise ProtocolError("malformed-payload", f"unknown kind {frame.kind}")
    return (struct.pack("<IIBd", frame.uav_id, frame.sensor_index, kind,
                        frame.timestamp)
            + struct.pack("<I", len(payload)) + payload)


def decode_sensor_frame(body: bytes, off: int):
    uav_id, sensor_index, kind, stamp = struct.unpack_from("<IIBd", body, off)
    off += struct.calcsize("<IIBd")
    (n,) = struct.unpack_from("<I", body, off)
    off += 4
    payload = body[off:off + n]
    off += n
    name = SENSOR_KIND_NAMES.get(kind)
    out = {"uav_id": uav_id, "sensor_index": sensor_index, "kind": name,
           "timestamp": stamp}
    if name == "imu":
        vals = np.frombuffer(payload, dtype="<f8", count=6)
        out["accelerometer"] = vals[0:3].copy()
        out["gyroscope"] = vals[3:6].copy()
    elif name == "gnss":
        out["position"] = np.frombuffer(payload, dtype="<f8", count=3).copy()
    elif name == "baro":
        out["altitude"] = struct.unpack("<d", payload)[0]
    elif name == "mag":
        out["field_direction"] = np.frombuffer(payload, dtype="<f8",
                                               count=3).copy()
    elif name == "lidar":
        (count,) = struct.unpack_from("<I", payload)
        rec = np.frombuffer(payload, dtype=WIRE_POINT, count=count, offset=4)
        out["points"] = np.column_stack([rec["x"], rec["y"], rec["z"]])
        out["ranges"] = rec["range"].copy()
        out["intensities"] = rec["intensity"].copy()
        out["labels"] = rec["label"].copy()
        out["rows"] = rec["row"].copy()
        out["cols"] = rec["col"].copy()
    elif name in ("depth", "label"):
        w, h = struct.unpack_from("<II", payload)
        if name == "depth":
            out["ranges"] = np.frombuffer(payload, dtype="<f4", count=w * h,
                                          offset=8).reshape(h, w).copy()
        else:
            out["labels"] = np.frombuffer(payload, dtype="u1", count=w * h,
                                          offset=8).reshape(h, w).copy()
    else:
        raise ProtocolError("malformed-payload", f"unknown sensor kind {kind}")
    return out, off


def encode_step_result(sim_time: float, states: dict, frames: list) -> bytes:
    parts = [struct.pack("<dI", sim_time, len(states))]
    for uav_id in sorted(states):
        parts.append(encode_uav_state(uav_id, states[uav_id]))
    parts.append(struct.pack("<I", len(frames)))
    for f in frames:
        parts.append(encode_sensor_frame(f))
    return b"".join(parts)


def decode_step_result(body: bytes):
    sim_time, n_uavs = struct.unpack_from("<dI", body)
    off = 12
    states = []
    for _ in range(n_uavs):
        st, off = decode_uav_state(body, off)
        states.append(st)
    (n_frames,) = struct.unpack_from("<I", body, off)
    off += 4
    frames = []
    for _ in range(n_frames):
        fr, off = decode_sensor_frame(body, off)
        frames.append(fr)
    return sim_time, states, frames


def encode_frames(frames: list) -> bytes:
    parts = [struct.pack("<I", len(frames))]
    for f in frames:
        parts.append(encode_sensor_frame(f))
    return b"".join(parts)


def decode_frames(body: bytes):
    (n,) = struct.unpack_from("<I", body)
    off = 4
    frames = []
    for _ in range(n):
        fr, off = decode_sensor_frame(body, off)
        frames.append(fr)
    return frames


def encode_status(sim_time, wall, lag, mode, n_uavs) -> bytes:
    return struct.pack("<dddBI", sim_time, wall, lag,
                       1 if mode == "realtime" else 0, n_uavs)


def decode_status(body: bytes):
    sim_time, wall, lag, mode, n_uavs = struct.unpack("<dddBI", body)
    return {"sim_time": sim_time, "wall_elapsed": wall, "lag": lag,
            "mode": "realtime" if mode else "stepped", "n_uavs": n_uavs}
