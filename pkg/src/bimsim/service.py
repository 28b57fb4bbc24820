"""HTTP face of the simulator: a FastAPI app over the same session engine.

Endpoints mirror the wire protocol one-to-one; request and response bodies
are pydantic models so the schema is self-documenting via /docs. Errors
map to HTTP status codes but keep the machine-readable protocol code in
the body.
"""

from __future__ import annotations

from typing import Any, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .protocol import SessionRegistry, SimulatorConfig, handle_message


class ResetRequest(BaseModel):
    task: str
    seed: Optional[int] = None
    difficulty: Optional[str] = Field(default=None, pattern="^(easy|medium|hard)$")


class StepRequest(BaseModel):
    action: dict[str, Any]


class ActionResultModel(BaseModel):
    outcome: str
    ticks_consumed: int
    success: bool


class ObservationModel(BaseModel):
    token_grid: list[list[int]]
    position_index: list[list[list[int]]]
    robot_centroid: list[int]
    crop_origin: list[int]
    visible_objects: list[dict[str, Any]]
    proprio: list[float]
    tick: int
    robot: dict[str, Any]


class ResetResponse(BaseModel):
    session: str
    task: dict[str, Any]
    difficulty: str
    observation: ObservationModel
    digest: str


class StepResponse(BaseModel):
    session: str
    observation: ObservationModel
    feedback: str
    result: ActionResultModel
    done: bool
    success: bool
    steps_used: int
    digest: str


class ObserveResponse(BaseModel):
    session: str
    observation: ObservationModel
    digest: str
    steps_used: int
    status: str


class InfoResponse(BaseModel):
    tasks: list[dict[str, Any]]
    scenes: list[str]
    robots: list[str]
    slow_motion: bool


_HTTP_STATUS = {
    "E_REQUEST": 400,
    "E_ACTION": 400,
    "E_TASK": 404,
    "E_SESSION": 404,
    "E_TERMINAL": 409,
    "E_RESPONSE_SIZE": 500,
}


def _dispatch(registry: SessionRegistry, msg: dict) -> dict:
    response = handle_message(registry, msg)
    if not response.get("ok"):
        error = response.get("error", {})
        code = error.get("code", "E_REQUEST")
        raise HTTPException(
            status_code=_HTTP_STATUS.get(code, 400),
            detail={"code": code, "message": error.get("message", "")},
        )
    response.pop("ok", None)
    return response


def create_app(config: SimulatorConfig) -> FastAPI:
    app = FastAPI(
        title="bimsim",
        description="Bimanual humanoid household simulator sessions over HTTP",
        version="0.1.0",
    )
    registry = SessionRegistry(config)
    app.state.registry = registry

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok"}

    @app.get("/info", response_model=InfoResponse)
    def info():
        return _dispatch(registry, {"type": "info"})

    @app.post("/sessions", response_model=ResetResponse)
    def reset(request: ResetRequest):
        return _dispatch(registry, {
            "type": "reset",
            "task": request.task,
            "seed": request.seed,
            "difficulty": request.difficulty,
        })

    @app.post("/sessions/{session_id}/step", response_model=StepResponse)
    def step(session_id: str, request: StepRequest):
        return _dispatch(registry, {
            "type": "step",
            "session": session_id,
            "action": request.action,
        })

    @app.get("/sessions/{session_id}/observation", response_model=ObserveResponse)
    def observation(session_id: str):
        return _dispatch(registry, {"type": "observe", "session": session_id})

    @app.post("/sessions/{session_id}/tick")
    def tick(session_id: str):
        return _dispatch(registry, {"type": "tick", "session": session_id})

    @app.delete("/sessions/{session_id}")
    def close(session_id: str):
        return _dispatch(registry, {"type": "close", "session": session_id})

    return app
