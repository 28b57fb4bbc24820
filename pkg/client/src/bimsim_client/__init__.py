"""Thin client for the simulator's newline-delimited JSON protocol.

Standard library only: open a session with ``ClientSession.reset``, drive it
with ``step``, or hand a planner callable to ``run_episode``. Server error
codes surface as typed exceptions.
"""

from .client import (
    ClientError,
    ClientSession,
    ConnectionFailure,
    InvalidAction,
    RequestRejected,
    SessionNotFound,
    SessionTerminal,
    TaskNotFound,
    run_episode,
)

__version__ = "0.1.0"

__all__ = [
    "ClientError",
    "ClientSession",
    "ConnectionFailure",
    "InvalidAction",
    "RequestRejected",
    "SessionNotFound",
    "SessionTerminal",
    "TaskNotFound",
    "run_episode",
    "__version__",
]
