"""Session protocol: message handling, TCP transport, HTTP service."""

from __future__ import annotations

import json

import pytest

from bimsim.protocol import (
    SessionRegistry,
    SimulatorConfig,
    handle_message,
    observation_payload,
    payload_to_frame,
)
from bimsim.scene import scene_from_dict
from bimsim.tcp_server import BackgroundServer, LineClient
from bimsim.world import observe


@pytest.fixture()
def registry(config) -> SessionRegistry:
    return SessionRegistry(config)


TASK = "kitchen-h1-cup-to-sink"


def reset(registry, task=TASK, seed=7, difficulty="easy"):
    response = handle_message(
        registry, {"type": "reset", "task": task, "seed": seed, "difficulty": difficulty}
    )
    assert response["ok"], response
    return response


# ---------------------------------------------------------------------------
# Message handling
# ---------------------------------------------------------------------------


def test_reset_twice_gives_byte_identical_observations(registry):
    a = reset(registry)
    b = reset(registry)
    assert a["session"] != b["session"]
    assert json.dumps(a["observation"], sort_keys=True) == json.dumps(
        b["observation"], sort_keys=True
    )
    assert a["digest"] == b["digest"]


def test_step_done_with_unmet_goals(registry):
    session = reset(registry)["session"]
    response = handle_message(
        registry, {"type": "step", "session": session, "action": {"type": "done"}}
    )
    assert response["ok"]
    assert response["done"] is True
    assert response["success"] is False


def test_observe_is_read_only(registry):
    session = reset(registry)["session"]
    a = handle_message(registry, {"type": "observe", "session": session})
    b = handle_message(registry, {"type": "observe", "session": session})
    assert a["digest"] == b["digest"]
    assert a["observation"] == b["observation"]


def test_unknown_session_is_e_session(registry):
    response = handle_message(
        registry, {"type": "step", "session": "zzz", "action": {"type": "done"}}
    )
    assert not response["ok"]
    assert response["error"]["code"] == "E_SESSION"


def test_unknown_task_is_e_task(registry):
    response = handle_message(registry, {"type": "reset", "task": "zzz"})
    assert response["error"]["code"] == "E_TASK"


def test_malformed_action_is_e_action_without_mutation(registry):
    session = reset(registry)["session"]
    before = handle_message(registry, {"type": "observe", "session": session})["digest"]
    response = handle_message(
        registry, {"type": "step", "session": session, "action": {"type": "warp"}}
    )
    assert response["error"]["code"] == "E_ACTION"
    after = handle_message(registry, {"type": "observe", "session": session})["digest"]
    assert before == after


def test_step_after_done_is_e_terminal_and_digest_frozen(registry):
    session = reset(registry)["session"]
    handle_message(registry, {"type": "step", "session": session, "action": {"type": "done"}})
    digest = handle_message(registry, {"type": "observe", "session": session})["digest"]
    response = handle_message(
        registry, {"type": "step", "session": session, "action": {"type": "done"}}
    )
    assert response["error"]["code"] == "E_TERMINAL"
    assert handle_message(registry, {"type": "observe", "session": session})["digest"] == digest


def test_budget_exhaustion_marks_failed(config):
    registry = SessionRegistry(config)
    session = reset(registry)["session"]
    task = config.tasks[TASK]
    response = None
    for _ in range(task.step_budget):
        response = handle_message(
            registry,
            {"type": "step", "session": session,
             "action": {"type": "adjust_height", "delta": 0.0}},
        )
    assert response["done"] is True
    assert response["success"] is False


def test_close_frees_session(registry):
    session = reset(registry)["session"]
    assert handle_message(registry, {"type": "close", "session": session})["ok"]
    response = handle_message(registry, {"type": "observe", "session": session})
    assert response["error"]["code"] == "E_SESSION"


def test_info_lists_tasks_and_scenes(registry, config):
    response = handle_message(registry, {"type": "info"})
    assert response["ok"]
    assert sorted(t["id"] for t in response["tasks"]) == sorted(config.tasks)
    assert response["scenes"] == sorted(config.scenes)


def test_malformed_request_is_e_request(registry):
    assert handle_message(registry, {"nope": 1})["error"]["code"] == "E_REQUEST"
    assert handle_message(registry, {"type": "reset"})["error"]["code"] == "E_REQUEST"
    assert (
        handle_message(registry, {"type": "reset", "task": TASK, "seed": "x"})
        ["error"]["code"] == "E_REQUEST"
    )
    assert (
        handle_message(registry, {"type": "reset", "task": TASK, "difficulty": "nope"})
        ["error"]["code"] == "E_REQUEST"
    )


def test_response_size_bound_enforced(config):
    small = SimulatorConfig(
        scenes=config.scenes,
        tasks=config.tasks,
        outcome_table=config.outcome_table,
        max_response_bytes=200,
    )
    registry = SessionRegistry(small)
    response = handle_message(registry, {"type": "reset", "task": TASK, "seed": 1})
    assert response["error"]["code"] == "E_RESPONSE_SIZE"


def test_session_isolation_interleaved_equals_serial(config):
    actions = [
        {"type": "navigate_to", "target": "cup_1"},
        {"type": "pick_up", "object": "cup_1", "arm": "left"},
        {"type": "navigate_to", "target": "sink_1"},
        {"type": "place", "object": "cup_1", "receptacle": "sink_1", "arm": "left"},
    ]

    def serial():
        registry = SessionRegistry(config)
        out = []
        for _ in range(2):
            session = reset(registry)["session"]
            transcript = []
            for action in actions:
                response = handle_message(
                    registry, {"type": "step", "session": session, "action": action}
                )
                transcript.append((response["digest"], response["success"]))
            out.append(transcript)
        return out

    def interleaved():
        registry = SessionRegistry(config)
        s1 = reset(registry)["session"]
        s2 = reset(registry)["session"]
        t1, t2 = [], []
        for action in actions:
            r1 = handle_message(registry, {"type": "step", "session": s1, "action": action})
            r2 = handle_message(registry, {"type": "step", "session": s2, "action": action})
            t1.append((r1["digest"], r1["success"]))
            t2.append((r2["digest"], r2["success"]))
        return [t1, t2]

    assert serial() == interleaved()


def test_slow_motion_exposes_ticks(config):
    slow = SimulatorConfig(
        scenes=config.scenes,
        tasks=config.tasks,
        outcome_table=config.outcome_table,
        slow_motion=True,
    )
    registry = SessionRegistry(slow)
    session = reset(registry)["session"]
    response = handle_message(
        registry,
        {"type": "step", "session": session,
         "action": {"type": "navigate_to", "target": "cup_1"}},
    )
    assert response["ok"]
    ticks = response["result"]["ticks_consumed"]
    assert ticks > 0
    # motion is still in flight; advance it one tick at a time
    in_flight = True
    advanced = 0
    while in_flight:
        tick_response = handle_message(registry, {"type": "tick", "session": session})
        assert tick_response["ok"]
        in_flight = tick_response["in_flight"]
        advanced += 1
        assert advanced <= ticks
    assert advanced == ticks


def test_payload_frame_round_trip(config):
    world = scene_from_dict(config.scenes["kitchen_h1"], seed=3, scene_id="kitchen_h1")
    payload = observation_payload(world)
    frame = payload_to_frame(payload)
    assert frame == observe(world)


def test_position_index_payload_matches_centroid(config):
    world = scene_from_dict(config.scenes["kitchen_h1"], seed=3, scene_id="kitchen_h1")
    payload = observation_payload(world)
    cx, cy = payload["robot_centroid"]
    assert payload["position_index"][cy][cx] == [payload["tick"], 0, 0]
    assert payload["position_index"][cy][cx + 1] == [payload["tick"], 0, 1]
    assert payload["position_index"][cy - 1][cx] == [payload["tick"], -1, 0]


# ---------------------------------------------------------------------------
# TCP transport
# ---------------------------------------------------------------------------


def test_tcp_round_trip(config):
    with BackgroundServer(config) as server:
        with LineClient(*server.address) as client:
            info = client.request({"type": "info"})
            assert info["ok"]
            response = client.request({"type": "reset", "task": TASK, "seed": 7})
            assert response["ok"]
            session = response["session"]
            step = client.request({
                "type": "step", "session": session,
                "action": {"type": "navigate_to", "target": "cup_1"},
            })
            assert step["ok"] and step["result"]["outcome"] == "success"
            assert client.request({"type": "close", "session": session})["ok"]


def test_tcp_invalid_json_yields_error_line(config):
    with BackgroundServer(config) as server:
        with LineClient(*server.address) as client:
            client.sock.sendall(b"this is not json\n")
            line = client.reader.readline()
            response = json.loads(line)
            assert not response["ok"]
            assert response["error"]["code"] == "E_REQUEST"


def test_tcp_sessions_shared_across_connections(config):
    with BackgroundServer(config) as server:
        with LineClient(*server.address) as c1:
            session = c1.request({"type": "reset", "task": TASK, "seed": 7})["session"]
        with LineClient(*server.address) as c2:
            response = c2.request({"type": "observe", "session": session})
            assert response["ok"]


# ---------------------------------------------------------------------------
# HTTP service
# ---------------------------------------------------------------------------


@pytest.fixture()
def http_client(config):
    from fastapi.testclient import TestClient

    from bimsim.service import create_app

    return TestClient(create_app(config))


def test_http_full_episode(http_client):
    info = http_client.get("/info").json()
    assert TASK in [t["id"] for t in info["tasks"]]
    reset_response = http_client.post(
        "/sessions", json={"task": TASK, "seed": 7, "difficulty": "easy"}
    ).json()
    session = reset_response["session"]
    actions = [
        {"type": "navigate_to", "target": "cup_1"},
        {"type": "pick_up", "object": "cup_1", "arm": "left"},
        {"type": "navigate_to", "target": "sink_1"},
        {"type": "place", "object": "cup_1", "receptacle": "sink_1", "arm": "left"},
    ]
    response = None
    for action in actions:
        response = http_client.post(
            f"/sessions/{session}/step", json={"action": action}
        ).json()
    assert response["done"] is True
    assert response["success"] is True
    assert http_client.delete(f"/sessions/{session}").json()["closed"]


def test_http_error_codes(http_client):
    assert http_client.post("/sessions", json={"task": "zzz"}).status_code == 404
    assert http_client.post(
        "/sessions/zzz/step", json={"action": {"type": "done"}}
    ).status_code == 404
    response = http_client.post("/sessions", json={"task": TASK, "seed": 1})
    session = response.json()["session"]
    http_client.post(f"/sessions/{session}/step", json={"action": {"type": "done"}})
    conflict = http_client.post(f"/sessions/{session}/step", json={"action": {"type": "done"}})
    assert conflict.status_code == 409
    assert conflict.json()["detail"]["code"] == "E_TERMINAL"


def test_http_matches_tcp_digests(config, http_client):
    reset_body = {"task": TASK, "seed": 11, "difficulty": "easy"}
    action = {"type": "navigate_to", "target": "cup_1"}
    http_session = http_client.post("/sessions", json=reset_body).json()
    http_digest = http_client.post(
        f"/sessions/{http_session['session']}/step", json={"action": action}
    ).json()["digest"]
    with BackgroundServer(config) as server:
        with LineClient(*server.address) as client:
            tcp_session = client.request({"type": "reset", **reset_body})
            tcp_digest = client.request({
                "type": "step", "session": tcp_session["session"], "action": action,
            })["digest"]
    assert http_digest == tcp_digest
    assert http_session["digest"] == tcp_session["digest"]
