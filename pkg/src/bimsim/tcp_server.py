"""Newline-delimited JSON protocol server over TCP.

One connection carries any number of requests, one JSON object per line;
each request yields exactly one response line. A connection may multiplex
sessions by id; requests for the same session are serialized by the
session lock while distinct sessions proceed in parallel.
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading
from typing import Optional

from .protocol import SessionRegistry, SimulatorConfig, handle_message


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        registry: SessionRegistry = self.server.registry  # type: ignore[attr-defined]
        while True:
            line = self.rfile.readline()
            if not line:
                return
            line = line.strip()
            if not line:
                continue
            try:
                msg = json.loads(line.decode("utf-8"))
            except (json.JSONDecodeError, UnicodeDecodeError) as exc:
                response = {
                    "ok": False,
                    "error": {"code": "E_REQUEST", "message": f"invalid JSON: {exc}"},
                }
            else:
                response = handle_message(registry, msg)
            payload = json.dumps(response, separators=(",", ":")) + "\n"
            try:
                self.wfile.write(payload.encode("utf-8"))
                self.wfile.flush()
            except (BrokenPipeError, ConnectionResetError):
                return


class ProtocolServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, config: SimulatorConfig, host: str = "127.0.0.1", port: int = 0):
        self.registry = SessionRegistry(config)
        super().__init__((host, port), _Handler)

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]


def serve_forever(config: SimulatorConfig, host: str, port: int) -> None:
    server = ProtocolServer(config, host, port)
    host, bound_port = server.address
    print(f"protocol server listening on {host}:{bound_port} "
          f"({len(config.tasks)} tasks, {len(config.scenes)} scenes)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        server.server_close()


class BackgroundServer:
    """Context manager running a ProtocolServer on a daemon thread (tests)."""

    def __init__(self, config: SimulatorConfig, host: str = "127.0.0.1", port: int = 0):
        self.server = ProtocolServer(config, host, port)
        self.thread: Optional[threading.Thread] = None

    def __enter__(self) -> "BackgroundServer":
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()
        return self

    @property
    def address(self) -> tuple[str, int]:
        return self.server.address

    def __exit__(self, *exc) -> None:
        self.server.shutdown()
        self.server.server_close()
        if self.thread is not None:
            self.thread.join(timeout=5)


class LineClient:
    """Minimal NDJSON client used by the harness's protocol path."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.reader = self.sock.makefile("rb")

    def request(self, msg: dict) -> dict:
        self.sock.sendall((json.dumps(msg, separators=(",", ":")) + "\n").encode("utf-8"))
        line = self.reader.readline()
        if not line:
            raise ConnectionError("server closed the connection")
        return json.loads(line.decode("utf-8"))

    def close(self) -> None:
        try:
            self.reader.close()
        finally:
            self.sock.close()

    def __enter__(self) -> "LineClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
