from .env import (DEFAULT_HOST, DEFAULT_PORT, EnvConfig, EpisodeOver,
                  RemoteEnv, default_template)
from .wire import Connection, ServerError, WireError

__all__ = ["DEFAULT_HOST", "DEFAULT_PORT", "EnvConfig", "EpisodeOver",
           "RemoteEnv", "default_template", "Connection", "ServerError",
           "WireError"]

__version__ = "0.1.0"
