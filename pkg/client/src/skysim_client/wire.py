"""Client-side implementation of the simulator's session wire protocol.

Implemented from the protocol documentation alone; this package never
imports the simulator. All integers and floats are little-endian. Each
message is one frame:

    u32 payload_length | u16 version | u16 message_type | u32 session_id | body
"""

import json
import socket
import struct

import numpy as np

PROTOCOL_VERSION = 1

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

MODALITY_CODES = {
    "actuators": 0,
    "control_groups": 1,
    "rate": 2,
    "attitude": 3,
    "accel_heading": 4,
    "accel_heading_rate": 5,
    "velocity_heading": 6,
    "velocity_heading_rate": 7,
    "position_heading": 8,
}

SENSOR_KINDS = {0: "imu", 1: "gnss", 2: "baro", 3: "mag", 4: "lidar",
                5: "depth", 6: "label"}

_HEADER = struct.Struct("<HHI")
_LEN = struct.Struct("<I")

# wire layout of one scan return: position, range, intensity, class label,
# and the (row, col) ray grid indices
POINT_DTYPE = np.dtype([
    ("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("range", "<f4"),
    ("intensity", "<f4"), ("label", "u1"), ("row", "<u2"), ("col", "<u2"),
])


class ServerError(RuntimeError):
    """Structured error reply from the server."""

    def __init__(self, code, message):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.server_message = message


class WireError(RuntimeError):
    """Malformed or unexpected data on the connection."""


def encode_frame(msg_type, session_id, body=b""):
    payload = _HEADER.pack(PROTOCOL_VERSION, msg_type, session_id) + body
    return _LEN.pack(len(payload)) + payload


def encode_create_session(config: dict) -> bytes:
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    return struct.pack("<I", len(blob)) + blob


def encode_set_control(uav_id, modality_code, values) -> bytes:
    values = np.asarray(values, dtype="<f8")
    head = struct.pack("<IB", uav_id, modality_code)
    if modality_code == 0:
        head += struct.pack("<I", values.shape[0])
    return head + values.tobytes()


def encode_step(n_steps) -> bytes:
    return struct.pack("<I", n_steps)


def encode_sense(uav_id, sensor_index) -> bytes:
    return struct.pack("<II", uav_id, sensor_index)


def decode_error(body):
    (nc,) = struct.unpack_from("<H", body)
    code = body[2:2 + nc].decode("utf-8")
    (nm,) = struct.unpack_from("<H", body, 2 + nc)
    return code, body[4 + nc:4 + nc + nm].decode("utf-8")


def decode_session_created(body):
    session_id, active_cells = struct.unpack("<II", body)
    return session_id, active_cells


def decode_status(body):
    sim_time, wall, lag, mode, n_uavs = struct.unpack("<dddBI", body)
    return {"sim_time": sim_time, "wall_elapsed": wall, "lag": lag,
            "mode": "realtime" if mode else "stepped", "n_uavs": n_uavs}


def _decode_state(body, off):
    (uav_id,) = struct.unpack_from("<I", body, off)
    off += 4
    vals = np.frombuffer(body, dtype="<f8", count=13, offset=off).copy()
    off += 13 * 8
    (n,) = struct.unpack_from("<I", body, off)
    off += 4
    motors = np.frombuffer(body, dtype="<f8", count=n, offset=off).copy()
    off += 8 * n
    return {"uav_id": uav_id, "position": vals[0:3], "velocity": vals[3:6],
            "quaternion": vals[6:10], "body_rates": vals[10:13],
            "motor_speeds": motors}, off


def _decode_sensor_frame(body, off):
    uav_id, sensor_index, kind, stamp = struct.unpack_from("<IIBd", body, off)
    off += struct.calcsize("<IIBd")
    (n,) = struct.unpack_from("<I", body, off)
    off += 4
    payload = body[off:off + n]
    off += n
    name = SENSOR_KINDS.get(kind)
    frame = {"uav_id": uav_id, "sensor_index": sensor_index, "kind": name,
             "timestamp": stamp}
    if name == "imu":
        vals = np.frombuffer(payload, dtype="<f8", count=6)
        frame["accelerometer"] = vals[0:3].copy()
        frame["gyroscope"] = vals[3:6].copy()
    elif name == "gnss":
        frame["position"] = np.frombuffer(payload, dtype="<f8", count=3).copy()
    elif name == "baro":
        frame["altitude"] = struct.unpack("<d", payload)[0]
    elif name == "mag":
        frame["field_direction"] = np.frombuffer(payload, dtype="<f8",
                                                 count=3).copy()
    elif name == "lidar":
        (count,) = struct.unpack_from("<I", payload)
        rec = np.frombuffer(payload, dtype=POINT_DTYPE, count=count, offset=4)
        frame["points"] = np.column_stack([rec["x"], rec["y"], rec["z"]])
        frame["ranges"] = rec["range"].copy()
        frame["intensities"] = rec["intensity"].copy()
        frame["labels"] = rec["label"].copy()
        frame["rows"] = rec["row"].copy()
        frame["cols"] = rec["col"].copy()
    elif name == "depth":
        w, h = struct.unpack_from("<II", payload)
        frame["ranges"] = np.frombuffer(payload, dtype="<f4", count=w * h,
                                        offset=8).reshape(h, w).copy()
    elif name == "label":
        w, h = struct.unpack_from("<II", payload)
        frame["labels"] = np.frombuffer(payload, dtype="u1", count=w * h,
                                        offset=8).reshape(h, w).copy()
    else:
        raise WireError(f"unknown sensor kind {kind}")
    return frame, off


def decode_step_result(body):
    sim_time, n_uavs = struct.unpack_from("<dI", body)
    off = 12
    states = []
    for _ in range(n_uavs):
        state, off = _decode_state(body, off)
        states.append(state)
    (n_frames,) = struct.unpack_from("<I", body, off)
    off += 4
    frames = []
    for _ in range(n_frames):
        frame, off = _decode_sensor_frame(body, off)
        frames.append(frame)
    return sim_time, states, frames


def decode_frames(body):
    (n,) = struct.unpack_from("<I", body)
    off = 4
    frames = []
    for _ in range(n):
        frame, off = _decode_sensor_frame(body, off)
        frames.append(frame)
    return frames


class Connection:
    """One blocking request/reply socket to the session server."""

    def __init__(self, host, port, timeout=30.0):
        try:
            self.sock = socket.create_connection((host, port),
                                                 timeout=timeout)
        except OSError as e:
            raise ConnectionError(
                f"cannot reach simulation server at {host}:{port}: {e}") from e

    def request(self, msg_type, session_id, body=b""):
        """Send one frame, read one reply; raises ServerError on an error
        reply."""
        self.sock.sendall(encode_frame(msg_type, session_id, body))
        head = self._recv_exact(_LEN.size)
        (length,) = _LEN.unpack(head)
        payload = self._recv_exact(length)
        if len(payload) < _HEADER.size:
            raise WireError("reply shorter than header")
        version, reply_type, reply_session = _HEADER.unpack_from(payload)
        if version != PROTOCOL_VERSION:
            raise WireError(f"unsupported protocol version {version}")
        reply_body = payload[_HEADER.size:]
        if reply_type == ERROR:
            code, message = decode_error(reply_body)
            raise ServerError(code, message)
        return reply_type, reply_session, reply_body

    def _recv_exact(self, n):
        buf = bytearray()
        while len(buf) < n:
            chunk = self.sock.recv(n - len(buf))
            if not chunk:
                raise ConnectionError("server closed the connection")
            buf.extend(chunk)
        return bytes(buf)

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass
