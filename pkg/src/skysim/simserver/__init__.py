from .session import (ConfigError, SensorFrame, SensorSpec, Session,
                      SessionConfig, SessionError, UavConfig, UavHandle)
from .server import DEFAULT_HOST, DEFAULT_PORT, PORT_ENV_VAR, SimServer

__all__ = [
    "ConfigError", "SensorFrame", "SensorSpec", "Session", "SessionConfig",
    "SessionError", "UavConfig", "UavHandle", "DEFAULT_HOST", "DEFAULT_PORT",
    "PORT_ENV_VAR", "SimServer",
]
