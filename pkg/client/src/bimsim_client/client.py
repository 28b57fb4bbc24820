"""Protocol client: one socket, newline-delimited JSON, typed errors.

The client never invents state: every field it exposes comes from a server
response, so transcripts replay byte-identically against the same server
and seed.
"""

from __future__ import annotations

import json
import socket
from typing import Any, Callable, Optional

ACTION_TYPES = {
    "navigate_to", "pick_up", "place", "open", "close", "pour",
    "adjust_height", "lift_together", "hold_and_open", "done",
}


class ClientError(Exception):
    """Base class for client-side and server-reported errors."""


class ConnectionFailure(ClientError):
    pass


class RequestRejected(ClientError):
    """Server rejected the request (E_REQUEST or unknown code)."""


class TaskNotFound(ClientError):
    pass


class SessionNotFound(ClientError):
    pass


class InvalidAction(ClientError):
    pass


class SessionTerminal(ClientError):
    """The session already finished; step was refused."""


_CODE_MAP = {
    "E_TASK": TaskNotFound,
    "E_SESSION": SessionNotFound,
    "E_ACTION": InvalidAction,
    "E_TERMINAL": SessionTerminal,
    "E_REQUEST": RequestRejected,
}


def _raise_for(error: dict) -> None:
    code = error.get("code", "E_REQUEST")
    raise _CODE_MAP.get(code, RequestRejected)(f"{code}: {error.get('message', '')}")


def validate_action(action: Any) -> dict:
    """Client-side shape check so malformed actions never hit the wire."""
    if not isinstance(action, dict):
        raise InvalidAction("action must be a dict")
    kind = action.get("type")
    if kind not in ACTION_TYPES:
        raise InvalidAction(f"unknown action type {kind!r}")
    return action


class ClientSession:
    """One simulator session over one TCP connection.

    The session mirrors server status: once ``done`` is observed locally,
    further ``step`` calls are refused without a round trip.
    """

    def __init__(self, host: str, port: int, timeout: float = 60.0):
        self.address = (host, port)
        try:
            self._sock = socket.create_connection(self.address, timeout=timeout)
        except OSError as exc:
            raise ConnectionFailure(f"cannot connect to {host}:{port}: {exc}") from exc
        self._reader = self._sock.makefile("rb")
        self.session_id: Optional[str] = None
        self.last_observation: Optional[dict] = None
        self.task: Optional[dict] = None
        self.done = False
        self.success = False

    # -- transport -----------------------------------------------------------

    def _request(self, message: dict) -> dict:
        try:
            payload = json.dumps(message, separators=(",", ":")) + "\n"
            self._sock.sendall(payload.encode("utf-8"))
            line = self._reader.readline()
        except OSError as exc:
            raise ConnectionFailure(str(exc)) from exc
        if not line:
            raise ConnectionFailure("server closed the connection")
        response = json.loads(line.decode("utf-8"))
        if not response.get("ok"):
            _raise_for(response.get("error", {}))
        return response

    # -- protocol operations ---------------------------------------------------

    def info(self) -> dict:
        return self._request({"type": "info"})

    def reset(
        self,
        task_id: str,
        seed: Optional[int] = None,
        difficulty: Optional[str] = None,
    ) -> dict:
        """Open a session for a task; returns and stores the first observation."""
        message: dict = {"type": "reset", "task": task_id}
        if seed is not None:
            message["seed"] = seed
        if difficulty is not None:
            message["difficulty"] = difficulty
        response = self._request(message)
        self.session_id = response["session"]
        self.task = response["task"]
        self.last_observation = response["observation"]
        self.done = False
        self.success = False
        return response["observation"]

    def step(self, action: dict) -> tuple[dict, str, bool, bool]:
        """One action round trip: (observation, feedback, done, success)."""
        if self.session_id is None:
            raise SessionNotFound("no active session; call reset first")
        if self.done:
            raise SessionTerminal("session already finished")
        validate_action(action)
        response = self._request({
            "type": "step", "session": self.session_id, "action": action,
        })
        self.last_observation = response["observation"]
        self.done = bool(response["done"])
        self.success = bool(response["success"])
        return (
            response["observation"],
            response["feedback"],
            self.done,
            self.success,
        )

    def step_raw(self, action: dict) -> dict:
        """Like step, but returns the whole response (digests included)."""
        if self.session_id is None:
            raise SessionNotFound("no active session; call reset first")
        if self.done:
            raise SessionTerminal("session already finished")
        validate_action(action)
        response = self._request({
            "type": "step", "session": self.session_id, "action": action,
        })
        self.last_observation = response["observation"]
        self.done = bool(response["done"])
        self.success = bool(response["success"])
        return response

    def observe(self) -> dict:
        if self.session_id is None:
            raise SessionNotFound("no active session; call reset first")
        response = self._request({"type": "observe", "session": self.session_id})
        self.last_observation = response["observation"]
        return response["observation"]

    def close(self) -> None:
        try:
            if self.session_id is not None:
                try:
                    self._request({"type": "close", "session": self.session_id})
                except ClientError:
                    pass
        finally:
            self.session_id = None
            try:
                self._reader.close()
            finally:
                self._sock.close()

    def __enter__(self) -> "ClientSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def run_episode(
    planner: Callable[[dict], dict],
    host: str,
    port: int,
    task_id: str,
    seed: Optional[int] = None,
    difficulty: Optional[str] = None,
    max_steps: Optional[int] = None,
) -> dict:
    """Drive one episode with a planner mapping observation dict -> action dict.

    A planner exposing a ``notify(action, result)`` attribute receives each
    step's result dict (outcome / feedback / success), which is how
    feedback-driven re-planning reaches the planner. Planner exceptions are
    recorded and the episode marked failed. The returned record carries the
    transcript plus the outcome: {task, seed, success, steps, transcript,
    error}.
    """
    transcript: list[dict] = []
    error: Optional[str] = None
    success = False
    notify = getattr(planner, "notify", None)
    with ClientSession(host, port) as session:
        observation = session.reset(task_id, seed=seed, difficulty=difficulty)
        budget = int(session.task.get("step_budget", 50)) if session.task else 50
        if max_steps is not None:
            budget = min(budget, max_steps)
        for _ in range(budget):
            try:
                action = planner(observation)
            except Exception as exc:  # planner bug: fail the episode, keep going
                error = f"planner error: {exc}"
                break
            response = session.step_raw(action)
            if notify is not None:
                notify(action, {
                    "outcome": response["result"]["outcome"],
                    "feedback": response["feedback"],
                    "success": response["result"]["success"],
                })
            transcript.append({
                "action": action,
                "feedback": response["feedback"],
                "outcome": response["result"]["outcome"],
                "digest": response["digest"],
            })
            observation = response["observation"]
            if session.done:
                success = session.success
                break
    return {
        "task": task_id,
        "seed": seed,
        "success": success,
        "steps": len(transcript),
        "transcript": transcript,
        "error": error,
    }
