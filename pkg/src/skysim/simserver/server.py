"""TCP front end: one length-prefixed binary frame per request, exactly one
reply per request (data, ack, or structured error). Malformed frames get a
final error frame and the connection is closed.
"""

import os
import socketserver
import threading

from .. import config as config_schema
from ..control import unpack_input
from ..dynamics import DivergenceError
from . import protocol
from .session import ConfigError, Session, SessionError

DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 18990
PORT_ENV_VAR = "SKYSIM_PORT"


def default_port():
    value = os.environ.get(PORT_ENV_VAR)
    if value:
        try:
            return int(value)
        except ValueError:
            pass
    return DEFAULT_PORT


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        server: SimServer = self.server.sim_server
        sock = self.request
        while True:
            try:
                payload = protocol.read_frame(sock)
            except (protocol.ProtocolError, ConnectionError, OSError) as e:
                code = getattr(e, "code", "bad-frame")
                self._try_send(sock, 0, protocol.encode_error(code, str(e)))
                return
            if payload is None:
                return
            try:
                _, msg_type, session_id, body = protocol.decode_payload(payload)
            except protocol.ProtocolError as e:
                self._try_send(sock, 0, protocol.encode_error(e.code, str(e)))
                return
            try:
                reply_type, reply_session, reply_body = server.dispatch(
                    msg_type, session_id, body)
            except SessionError as e:
                reply_type, reply_session, reply_body = (
                    protocol.ERROR, session_id,
                    protocol.encode_error(e.code, str(e)))
            except ConfigError as e:
                detail = "; ".join(f"{p}: {m}" for p, m in e.errors)
                reply_type, reply_session, reply_body = (
                    protocol.ERROR, session_id,
                    protocol.encode_error("invalid-config", detail))
            except DivergenceError as e:
                reply_type, reply_session, reply_body = (
                    protocol.ERROR, session_id,
                    protocol.encode_error("non-finite", str(e)))
            except protocol.ProtocolError as e:
                reply_type, reply_session, reply_body = (
                    protocol.ERROR, session_id,
                    protocol.encode_error(e.code, str(e)))
            try:
                sock.sendall(protocol.encode_frame(reply_type, reply_session,
                                                   reply_body))
            except OSError:
                return

    @staticmethod
    def _try_send(sock, session_id, error_body):
        try:
            sock.sendall(protocol.encode_frame(protocol.ERROR, session_id,
                                               error_body))
        except OSError:
            pass


class _TCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class SimServer:
    """Session registry plus the request dispatcher."""

    def __init__(self, host=DEFAULT_HOST, port=None):
        self.host = host
        self.port = port if port is not None else default_port()
        self._sessions = {}
        self._next_id = 1
        self._lock = threading.Lock()
        self._tcp = _TCPServer((self.host, self.port), _Handler)
        self._tcp.sim_server = self
        self.port = self._tcp.server_address[1]
        self._thread = None

    # -- lifecycle -----------------------------------------------------------

    def start(self):
        self._thread = threading.Thread(target=self._tcp.serve_forever,
                                        daemon=True)
        self._thread.start()

    def serve_forever(self):
        self._tcp.serve_forever()

    def shutdown(self):
        self._tcp.shutdown()
        self._tcp.server_close()
        if self._thread is not None:
            self._thread.join()
            self._thread = None
        with self._lock:
            for session in self._sessions.values():
                session.close()
            self._sessions.clear()

    # -- dispatch --------------------------------------------------------------

    def _session(self, session_id) -> Session:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise SessionError("unknown-session",
                               f"no session with id {session_id}")
        return session

    def dispatch(self, msg_type, session_id, body):
        if msg_type == protocol.CREATE_SESSION:
            cfg_dict = protocol.decode_create_session(body)
            cfg = config_schema.load_session_config(cfg_dict)
            session = Session(cfg)
            with self._lock:
                sid = self._next_id
                self._next_id += 1
                self._sessions[sid] = session
            if cfg.mode == "realtime":
                session.start_realtime()
            return (protocol.SESSION_CREATED, sid,
                    protocol.encode_session_created(sid, len(session.world.cells)))

        if msg_type == protocol.SET_CONTROL:
            session = self._session(session_id)
            uav_id, code, payload = protocol.decode_set_control(body)
            try:
                command = unpack_input(code, payload)
            except ValueError as e:
                raise SessionError("malformed-payload", str(e)) from e
            session.set_control(uav_id, command)
            return protocol.ACK, session_id, b""

        if msg_type == protocol.STEP:
            session = self._session(session_id)
            n_steps = protocol.decode_step(body)
            states, frames = session.step(n_steps)
            return (protocol.STEP_RESULT, session_id,
                    protocol.encode_step_result(session.sim_time, states,
                                                frames))

        if msg_type == protocol.SET_HITL_POSE:
            session = self._session(session_id)
            uav_id, position, rotation, stamp = \
                protocol.decode_set_hitl_pose(body)
            session.set_hitl_pose(uav_id, position, rotation, stamp)
            return protocol.ACK, session_id, b""

        if msg_type == protocol.GET_STATUS:
            session = self._session(session_id)
            sim_time, wall, lag = session.status()
            return (protocol.STATUS, session_id,
                    protocol.encode_status(sim_time, wall, lag,
                                           session.config.mode,
                                           len(session.uavs)))

        if msg_type == protocol.GET_FRAMES:
            session = self._session(session_id)
            return (protocol.FRAMES, session_id,
                    protocol.encode_frames(session.drain_frames()))

        if msg_type == protocol.SENSE:
            session = self._session(session_id)
            uav_id, sensor_index = protocol.decode_sense(body)
            frame = session.sense(uav_id, sensor_index)
            return (protocol.FRAMES, session_id,
                    protocol.encode_frames([frame]))

        if msg_type == protocol.CLOSE_SESSION:
            session = self._session(session_id)
            session.close()
            with self._lock:
                self._sessions.pop(session_id, None)
            return protocol.CLOSED, session_id, b""

        raise SessionError("unknown-type",
                           f"unknown message type {msg_type}")
