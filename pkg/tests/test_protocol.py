import socket
import struct

import numpy as np
import pytest

from skysim import config as config_schema
from skysim.sensors import LidarConfig
from skysim.simserver import protocol as P
from skysim.simserver.server import SimServer
from skysim.simserver.session import SensorSpec, SessionConfig, UavConfig
from skysim.worldgen import TerrainParams


def make_config(n_uavs=1, sensors=(), hitl=False, mode="stepped", z=20.0):
    uavs = [UavConfig(initial_position=np.array([10.0 * i, 0.0, z]),
                      hitl=hitl, sensors=list(sensors))
            for i in range(n_uavs)]
    world = TerrainParams(grid_resolution=5, forest_density=0.0)
    return SessionConfig(world=world, uavs=uavs, mode=mode)


@pytest.fixture()
def server():
    srv = SimServer(port=0)
    srv.start()
    yield srv
    srv.shutdown()


class Client:
    def __init__(self, port):
        self.sock = socket.create_connection(("127.0.0.1", port), timeout=10)

    def rpc(self, msg_type, session_id, body=b""):
        self.sock.sendall(P.encode_frame(msg_type, session_id, body))
        payload = P.read_frame(self.sock)
        assert payload is not None
        _, reply_type, reply_session, reply_body = P.decode_payload(payload)
        return reply_type, reply_session, reply_body

    def create(self, cfg):
        body = P.encode_create_session(config_schema.session_config_to_dict(cfg))
        reply_type, sid, reply_body = self.rpc(P.CREATE_SESSION, 0, body)
        assert reply_type == P.SESSION_CREATED, P.decode_error(reply_body)
        session_id, cells = struct.unpack("<II", reply_body)
        return session_id, cells

    def close(self):
        self.sock.close()


class TestFraming:
    def test_frame_round_trip(self):
        frame = P.encode_frame(P.STEP, 7, P.encode_step(250))
        (length,) = struct.unpack_from("<I", frame)
        assert length == len(frame) - 4
        version, msg_type, session_id, body = P.decode_payload(frame[4:])
        assert (version, msg_type, session_id) == (P.PROTOCOL_VERSION, P.STEP, 7)
        assert P.decode_step(body) == 250

    def test_bad_version_rejected(self):
        payload = struct.pack("<HHI", 99, P.STEP, 0)
        with pytest.raises(P.ProtocolError):
            P.decode_payload(payload)

    def test_error_body_round_trip(self):
        body = P.encode_error("hitl-immutable", "uav 3 is externally posed")
        assert P.decode_error(body) == ("hitl-immutable",
                                        "uav 3 is externally posed")

    def test_control_payload_round_trip(self):
        body = P.encode_set_control(2, 8, np.array([1.0, -2.0, 3.0, 0.5]))
        uav, code, payload = P.decode_set_control(body)
        assert (uav, code) == (2, 8)
        assert np.array_equal(payload, [1.0, -2.0, 3.0, 0.5])

    def test_actuator_payload_carries_count(self):
        body = P.encode_set_control(0, 0, np.array([0.1] * 6))
        uav, code, payload = P.decode_set_control(body)
        assert payload.shape == (6,)

    def test_truncated_control_rejected(self):
        body = P.encode_set_control(0, 8, np.zeros(4))[:-3]
        with pytest.raises(P.ProtocolError):
            P.decode_set_control(body)

    def test_hitl_pose_round_trip(self):
        rot = np.eye(3)
        body = P.encode_set_hitl_pose(1, np.array([1.0, 2.0, 3.0]), rot, 9.5)
        uav, pos, rot2, stamp = P.decode_set_hitl_pose(body)
        assert uav == 1 and stamp == 9.5
        assert np.array_equal(pos, [1.0, 2.0, 3.0])
        assert np.array_equal(rot2, rot)


class TestServer:
    def test_create_and_nine_cells(self, server):
        c = Client(server.port)
        sid, cells = c.create(make_config())
        assert cells == 9
        c.close()

    def test_invalid_config_lists_fields(self, server):
        c = Client(server.port)
        cfg = config_schema.session_config_to_dict(make_config())
        cfg["dt"] = -1.0
        cfg["uavs"][0]["model"]["mass"] = -2.0
        reply_type, _, body = c.rpc(P.CREATE_SESSION, 0,
                                    P.encode_create_session(cfg))
        assert reply_type == P.ERROR
        code, message = P.decode_error(body)
        assert code == "invalid-config"
        assert "dt" in message and "mass" in message
        c.close()

    def test_zero_uavs_rejected(self, server):
        c = Client(server.port)
        cfg = config_schema.session_config_to_dict(
            SessionConfig(world=TerrainParams(grid_resolution=5), uavs=[
                UavConfig()]))
        cfg["uavs"] = []
        reply_type, _, body = c.rpc(P.CREATE_SESSION, 0,
                                    P.encode_create_session(cfg))
        assert reply_type == P.ERROR
        assert P.decode_error(body)[0] == "invalid-config"
        c.close()

    def test_step_and_states(self, server):
        c = Client(server.port)
        sid, _ = c.create(make_config())
        c.rpc(P.SET_CONTROL, sid,
              P.encode_set_control(0, 8, np.array([0.0, 0.0, 20.0, 0.0])))
        reply_type, _, body = c.rpc(P.STEP, sid, P.encode_step(125))
        assert reply_type == P.STEP_RESULT
        sim_time, states, frames = P.decode_step_result(body)
        assert sim_time == pytest.approx(0.5)
        assert states[0]["position"] == pytest.approx([0.0, 0.0, 20.0],
                                                      abs=0.05)
        assert states[0]["quaternion"][0] == pytest.approx(1.0, abs=1e-3)
        c.close()

    def test_lidar_frames_on_wire(self, server):
        c = Client(server.port)
        lidar = SensorSpec(kind="lidar", rate=10.0,
                           lidar=LidarConfig(n_horizontal=8, n_vertical=2,
                                             rate=10.0, max_range=100.0))
        sid, _ = c.create(make_config(sensors=[lidar]))
        c.rpc(P.SET_CONTROL, sid,
              P.encode_set_control(0, 8, np.array([0.0, 0.0, 20.0, 0.0])))
        reply_type, _, body = c.rpc(P.STEP, sid, P.encode_step(50))
        _, _, frames = P.decode_step_result(body)
        assert len(frames) == 2
        f = frames[0]
        assert f["kind"] == "lidar"
        assert f["points"].shape[0] == f["ranges"].shape[0]
        assert np.all(f["rows"] < 8)
        assert np.all(f["cols"] < 2)
        c.close()

    def test_hitl_flow(self, server):
        c = Client(server.port)
        sid, _ = c.create(make_config(hitl=True))
        rot = np.eye(3)
        reply_type, _, _ = c.rpc(
            P.SET_HITL_POSE, sid,
            P.encode_set_hitl_pose(0, np.array([5.0, 5.0, 12.0]), rot, 0.1))
        assert reply_type == P.ACK
        reply_type, _, body = c.rpc(
            P.SET_CONTROL, sid,
            P.encode_set_control(0, 0, np.zeros(4)))
        assert reply_type == P.ERROR
        assert P.decode_error(body)[0] == "hitl-immutable"
        c.close()

    def test_unknown_session(self, server):
        c = Client(server.port)
        reply_type, _, body = c.rpc(P.STEP, 999, P.encode_step(1))
        assert reply_type == P.ERROR
        assert P.decode_error(body)[0] == "unknown-session"
        c.close()

    def test_unknown_type_gets_error_reply(self, server):
        c = Client(server.port)
        reply_type, _, body = c.rpc(77, 0)
        assert reply_type == P.ERROR
        assert P.decode_error(body)[0] == "unknown-type"
        c.close()

    def test_malformed_frame_closes_with_final_error(self, server):
        c = Client(server.port)
        # length prefix far beyond the cap
        c.sock.sendall(struct.pack("<I", 2 ** 31))
        payload = P.read_frame(c.sock)
        _, reply_type, _, body = P.decode_payload(payload)
        assert reply_type == P.ERROR
        assert P.decode_error(body)[0] == "bad-frame"
        # server hangs up afterwards
        assert c.sock.recv(1) == b""
        c.close()

    def test_malformed_control_payload(self, server):
        c = Client(server.port)
        sid, _ = c.create(make_config())
        reply_type, _, body = c.rpc(P.SET_CONTROL, sid, b"\x00\x00")
        assert reply_type == P.ERROR
        assert P.decode_error(body)[0] == "malformed-payload"
        c.close()

    def test_every_request_gets_exactly_one_reply(self, server):
        c = Client(server.port)
        sid, _ = c.create(make_config())
        for _ in range(20):
            reply_type, _, _ = c.rpc(P.GET_STATUS, sid)
            assert reply_type == P.STATUS
        c.close()

    def test_sense_on_demand(self, server):
        c = Client(server.port)
        imu = SensorSpec(kind="imu", rate=100.0)
        sid, _ = c.create(make_config(sensors=[imu]))
        reply_type, _, body = c.rpc(P.SENSE, sid, P.encode_sense(0, 0))
        assert reply_type == P.FRAMES
        frames = P.decode_frames(body)
        assert len(frames) == 1
        assert frames[0]["kind"] == "imu"
        c.close()

    def test_close_session(self, server):
        c = Client(server.port)
        sid, _ = c.create(make_config())
        reply_type, _, _ = c.rpc(P.CLOSE_SESSION, sid)
        assert reply_type == P.CLOSED
        reply_type, _, body = c.rpc(P.STEP, sid, P.encode_step(1))
        assert P.decode_error(body)[0] == "unknown-session"
        c.close()

    def test_realtime_status_and_frames(self, server):
        import time
        c = Client(server.port)
        imu = SensorSpec(kind="imu", rate=50.0)
        sid, _ = c.create(make_config(sensors=[imu], mode="realtime"))
        time.sleep(0.6)
        reply_type, _, body = c.rpc(P.GET_STATUS, sid)
        status = P.decode_status(body)
        assert status["mode"] == "realtime"
        assert status["sim_time"] > 0.3
        reply_type, _, body = c.rpc(P.GET_FRAMES, sid)
        frames = P.decode_frames(body)
        assert len(frames) >= 10
        c.rpc(P.CLOSE_SESSION, sid)
        c.close()

    def test_step_rejected_in_realtime(self, server):
        c = Client(server.port)
        sid, _ = c.create(make_config(mode="realtime"))
        reply_type, _, body = c.rpc(P.STEP, sid, P.encode_step(10))
        assert reply_type == P.ERROR
        assert P.decode_error(body)[0] == "bad-mode"
        c.rpc(P.CLOSE_SESSION, sid)
        c.close()
