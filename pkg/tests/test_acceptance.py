"""Acceptance criteria, one test per criterion, each printing PASS/FAIL.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. Tolerances are pinned here, not configurable.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from bimsim.contingency import (
    Difficulty,
    OutcomeDistribution,
    OutcomeLabel,
    sample_outcome,
    scale_for_difficulty,
)
from bimsim.features import (
    LinearAutoencoder,
    MotionFeature,
    ema_update,
    make_codebook,
    position_index,
    quantize,
    train_quantizer,
    vqvae_gradients,
)
from bimsim.geometry import rotation_angle_between
from bimsim.harness import OraclePlanner, run_trials, success_rate
from bimsim.kinematics import (
    com_in_support,
    forward_kinematics,
    ik_decoupled,
    ik_whole_body,
    load_robot_model,
)
from bimsim.protocol import Session, SessionRegistry, SimulatorConfig, handle_message
from bimsim.rng import SplitMix64, seed_state

from bimsim.tasks import (
    EpisodeTrace,
    FailureCategory,
    Holding,
    ObjectIn,
    ReachSnapshot,
    Task,
    TaskCategory,
    TraceStep,
    classify_failure,
)
from bimsim.world import (
    ActionResult,
    Done,
    NavigateTo,
    PickUp,
    observe,
)

FIG_CUP_ROW = OutcomeDistribution((
    (OutcomeLabel.SUCCESS, 0.8),
    (OutcomeLabel.SPILL, 0.1),
    (OutcomeLabel.BREAK, 0.1),
))


def _announce(name: str, ok: bool, detail: str = ""):
    print(f"{'PASS' if ok else 'FAIL'}: {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# Criterion 1: contingency fidelity
# ---------------------------------------------------------------------------


def test_contingency_fidelity():
    """100k samples of the pourable-cup row within +-0.005 of (0.8, 0.1, 0.1)."""
    n = 100_000
    state = seed_state(2024)
    counts = {label: 0 for label, _ in FIG_CUP_ROW.entries}
    start = time.perf_counter()
    for _ in range(n):
        label, state = sample_outcome(FIG_CUP_ROW, state)
        counts[label] += 1
    elapsed = time.perf_counter() - start
    freqs = {label.value: counts[label] / n for label, _ in FIG_CUP_ROW.entries}
    ok = (
        abs(freqs["success"] - 0.8) <= 0.005
        and abs(freqs["spill"] - 0.1) <= 0.005
        and abs(freqs["break"] - 0.1) <= 0.005
        and elapsed < 5.0
    )
    _announce(
        "contingency fidelity",
        ok,
        f"freqs={freqs} elapsed={elapsed:.2f}s",
    )


# ---------------------------------------------------------------------------
# Criterion 2: difficulty scaling
# ---------------------------------------------------------------------------


def _single_sampled_action_config():
    """Scene whose oracle plan has exactly one contingency-sampled action.

    The cup is breakable-only, so its pick-up row is (0.9 success, 0.1
    break); the goal is to hold it, so the plan is navigate + pick, with the
    pick the single sampled action. A break is unrecoverable (the goal names
    the id and a broken object cannot be picked), so episode success equals
    the per-action success probability exactly.
    """
    doc = {
        "name": "scaling", "seed": 1,
        "grid": {"width": 10, "height": 10, "cell_size": 0.4},
        "robot": {"embodiment": "x1", "base": [1.0, 1.0, 0.0]},
        "objects": [
            {"id": "table_1", "category": "table", "position": [2.2, 1.0, 0.75],
             "mass": 20.0, "properties": ["receptacle"]},
            {"id": "cup_1", "category": "cup", "position": [2.2, 1.0, 0.8],
             "mass": 0.3, "properties": ["pickupable", "breakable"],
             "parent": "table_1"},
        ],
    }
    task = Task(
        id="hold-cup", category=TaskCategory.SINGLE_ARM, instruction="hold the cup",
        goals=(Holding("either", "cup_1"),), scene="scaling",
    )
    from bimsim.contingency import load_outcome_table

    return SimulatorConfig(scenes={"scaling": doc}, tasks={"hold-cup": task},
                           outcome_table=load_outcome_table()), task


def test_difficulty_scaling():
    """Table semantics exact; oracle success tracks multiplier^k within 3%."""
    easy = scale_for_difficulty(FIG_CUP_ROW, Difficulty.EASY)
    medium = scale_for_difficulty(FIG_CUP_ROW, Difficulty.MEDIUM)
    hard = scale_for_difficulty(FIG_CUP_ROW, Difficulty.HARD)

    def triple(dist):
        return (
            dist.probability(OutcomeLabel.SUCCESS),
            dist.probability(OutcomeLabel.SPILL),
            dist.probability(OutcomeLabel.BREAK),
        )

    exact = (
        triple(easy) == (1.0, 0.0, 0.0)
        and triple(medium) == (0.5, 0.25, 0.25)
        and triple(hard) == (0.2, 0.4, 0.4)
    )

    config, task = _single_sampled_action_config()
    factory = lambda t, emb, s: OraclePlanner(t, emb, "dual_arm")
    k = 1  # one sampled action in the oracle plan (the pick-up)
    rates = {}
    for difficulty, multiplier in (
        (Difficulty.EASY, 1.0), (Difficulty.MEDIUM, 0.5), (Difficulty.HARD, 0.2),
    ):
        reports = run_trials(config, task, factory, 1000, base_seed=10_000,
                             difficulty=difficulty)
        rates[difficulty.value] = success_rate(reports)
    within = all(
        abs(rates[d.value] - d.success_multiplier**k) <= 0.03
        for d in (Difficulty.EASY, Difficulty.MEDIUM, Difficulty.HARD)
    )
    _announce(
        "difficulty scaling",
        exact and within,
        f"table exact={exact} rates={ {k: round(v, 3) for k, v in rates.items()} }",
    )


# ---------------------------------------------------------------------------
# Criterion 3: IK success and balance
# ---------------------------------------------------------------------------


def test_ik_success_rates_and_balance():
    """>=95% of 1000 FK-generated targets per embodiment; balance always holds."""
    details = []
    ok = True
    for embodiment in ("x1", "h1"):
        model = load_robot_model(embodiment)
        chain = model.right
        lo, hi = chain.lower_limits, chain.upper_limits
        gen = np.random.default_rng(42)
        solved = 0
        n = 1000
        for _ in range(n):
            q = lo + gen.random(chain.n_joints) * (hi - lo)
            target = forward_kinematics(chain, q)
            q_start = np.clip(q + gen.normal(0.0, 0.3, chain.n_joints), lo, hi)
            sol = ik_decoupled(chain, target[:3, :3], target[:3, 3], q_start,
                               max_iters=200)
            if sol is None:
                continue
            t_sol = forward_kinematics(chain, sol)
            if (
                np.linalg.norm(t_sol[:3, 3] - target[:3, 3]) < 1e-3
                and rotation_angle_between(t_sol[:3, :3], target[:3, :3]) < 1e-2
            ):
                solved += 1
        rate = solved / n
        details.append(f"{embodiment}: {rate:.1%}")
        ok = ok and rate >= 0.95

    # whole-body: every returned configuration passes the balance check
    model = load_robot_model("h1")
    lo, hi = model.full_lower(), model.full_upper()
    gen = np.random.default_rng(7)
    returned = balanced = 0
    attempts = 0
    while returned < 200 and attempts < 2000:
        attempts += 1
        q = lo + gen.random(model.n_full) * (hi - lo)
        ql, qr, lift = model.unpack_full(q)
        if not com_in_support(model, lift, ql, qr, (1.0, 1.0)):
            continue
        tl = forward_kinematics(model.left, ql)
        tl[:3, 3] += np.array(model.left.mount) + [0, 0, model.shoulder_height + lift]
        tr = forward_kinematics(model.right, qr)
        tr[:3, 3] += np.array(model.right.mount) + [0, 0, model.shoulder_height + lift]
        q_start = np.clip(q + gen.normal(0, 0.2, model.n_full), lo, hi)
        sol = ik_whole_body(model, tl, tr, q_start, held_masses=(1.0, 1.0))
        if sol is None:
            continue
        returned += 1
        sl, sr, s_lift = model.unpack_full(sol)
        if com_in_support(model, s_lift, sl, sr, (1.0, 1.0)):
            balanced += 1
    ok = ok and returned > 0 and balanced == returned
    details.append(f"whole-body balanced {balanced}/{returned}")
    _announce("IK success and balance", ok, "; ".join(details))


# ---------------------------------------------------------------------------
# Criterion 4: FK/IK round trip on 10,000 configurations per chain
# ---------------------------------------------------------------------------


def test_fk_ik_round_trip_property():
    ok = True
    details = []
    for embodiment in ("x1", "h1"):
        model = load_robot_model(embodiment)
        chain = model.right
        lo, hi = chain.lower_limits, chain.upper_limits
        gen = np.random.default_rng(99)
        failures = 0
        n = 10_000
        for _ in range(n):
            q = lo + gen.random(chain.n_joints) * (hi - lo)
            target = forward_kinematics(chain, q)
            q_start = np.clip(q + gen.normal(0.0, 0.05, chain.n_joints), lo, hi)
            sol = ik_decoupled(chain, target[:3, :3], target[:3, 3], q_start)
            if sol is None:
                failures += 1
                continue
            t_sol = forward_kinematics(chain, sol)
            if not (
                np.linalg.norm(t_sol[:3, 3] - target[:3, 3]) < 1e-3
                and rotation_angle_between(t_sol[:3, :3], target[:3, :3]) < 1e-2
            ):
                failures += 1
        details.append(f"{embodiment}: {n - failures}/{n}")
        ok = ok and failures == 0
    _announce("FK/IK round trip (10k per chain)", ok, "; ".join(details))


# ---------------------------------------------------------------------------
# Criterion 5: replay determinism, in-process and over the protocol
# ---------------------------------------------------------------------------


def _random_action_sequence(config, task, seed, length=12):
    """Random but well-formed action sequence recorded against a live session."""
    from bimsim.harness import RandomPlanner

    session = Session.for_task(
        task, config.scenes[task.scene], config.outcome_table,
        seed=seed, difficulty=Difficulty.MEDIUM,
    )
    planner = RandomPlanner(task, session.world.robot.embodiment, seed=seed)
    actions = []
    for _ in range(length):
        if session.status != "active":
            break
        action = planner.plan(observe(session.world))
        actions.append(action)
        session.step(action)
    return actions


def _run_in_process(config, task, seed, actions):
    session = Session.for_task(
        task, config.scenes[task.scene], config.outcome_table,
        seed=seed, difficulty=Difficulty.MEDIUM,
    )
    digests = []
    for action in actions:
        if session.status != "active":
            break
        outcome = session.step(action)
        digests.append(outcome.digest)
    return digests


def _run_over_protocol(config, task, seed, actions):
    from bimsim.world import action_to_dict

    registry = SessionRegistry(config)
    response = handle_message(registry, {
        "type": "reset", "task": task.id, "seed": seed, "difficulty": "medium",
    })
    session_id = response["session"]
    digests = []
    for action in actions:
        response = handle_message(registry, {
            "type": "step", "session": session_id, "action": action_to_dict(action),
        })
        if not response.get("ok"):
            break
        digests.append(response["digest"])
        if response["done"]:
            break
    return digests


def test_replay_determinism(config):
    task = config.tasks["kitchen-h1-cup-to-sink"]
    mismatches = 0
    protocol_mismatches = 0
    gen = SplitMix64(31337)
    pairs = 100
    for i in range(pairs):
        seed = gen.randint(1 << 30)
        actions = _random_action_sequence(config, task, seed)
        run_a = _run_in_process(config, task, seed, actions)
        run_b = _run_in_process(config, task, seed, actions)
        if run_a != run_b:
            mismatches += 1
            continue
        over_wire = _run_over_protocol(config, task, seed, actions)
        if over_wire != run_a[: len(over_wire)] or len(over_wire) != len(run_a):
            protocol_mismatches += 1
    ok = mismatches == 0 and protocol_mismatches == 0
    _announce(
        "replay determinism",
        ok,
        f"{pairs} pairs, {mismatches} run mismatches, "
        f"{protocol_mismatches} protocol mismatches",
    )


# ---------------------------------------------------------------------------
# Criterion 6: task taxonomy semantics
# ---------------------------------------------------------------------------


def test_taxonomy_semantics(config):
    essentials = [t for t in config.tasks.values()
                  if t.category == TaskCategory.DUAL_ESSENTIAL]
    assert essentials
    single_successes = 0
    dual_successes = 0
    trials = 50
    total = 0
    for task in essentials:
        single = run_trials(
            config, task, lambda t, e, s: OraclePlanner(t, e, "single_arm"),
            trials, base_seed=500, difficulty=Difficulty.EASY,
        )
        dual = run_trials(
            config, task, lambda t, e, s: OraclePlanner(t, e, "dual_arm"),
            trials, base_seed=500, difficulty=Difficulty.EASY,
        )
        single_successes += sum(r.success for r in single)
        dual_successes += sum(r.success for r in dual)
        total += trials
    ok = single_successes == 0 and dual_successes == total
    _announce(
        "task taxonomy semantics",
        ok,
        f"single-arm {single_successes}/{total}, dual-arm {dual_successes}/{total}",
    )


# ---------------------------------------------------------------------------
# Criterion 7: quantizer and EMA
# ---------------------------------------------------------------------------


def test_quantizer_and_ema():
    details = []
    # (a) two-cluster EMA vs k-means oracle
    rng = np.random.default_rng(3)
    a = rng.normal(loc=[-1.5, 0.5], scale=0.05, size=(50, 2))
    b = rng.normal(loc=[1.5, -0.5], scale=0.05, size=(50, 2))
    data = np.vstack([a, b])
    seeds = np.array([data[0], data[50]])
    centers = seeds.copy()
    for _ in range(50):
        d = ((data[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(d, axis=1)
        for k in range(2):
            if np.any(assign == k):
                centers[k] = data[assign == k].mean(axis=0)
    cb = make_codebook(seeds, decay=0.99)
    for _ in range(100):
        cb = ema_update(cb, [(z, quantize(z, cb)[0]) for z in data])
    err = max(
        min(float(np.linalg.norm(cb.codes[k] - centers[0])),
            float(np.linalg.norm(cb.codes[k] - centers[1])))
        for k in range(2)
    )
    ema_ok = err < 1e-2
    details.append(f"ema-vs-kmeans err={err:.2e}")

    # (b) analytic gradient vs central finite differences (frozen stop-grads)
    rng = np.random.default_rng(11)
    frames = rng.normal(size=(6, 5))
    encoder = rng.normal(size=(3, 5)) * 0.5
    decoder = rng.normal(size=(5, 3)) * 0.5
    cb2 = make_codebook(rng.normal(size=(4, 3)))
    ae = LinearAutoencoder(encoder=encoder, decoder=decoder)
    alpha, beta = 1.0, 0.25
    g_enc, _ = vqvae_gradients(frames, ae, cb2, alpha, beta)

    def frozen(e_mat):
        t = frames.shape[0]
        z_base = frames @ encoder.T
        d = ((z_base[:, None, :] - cb2.codes[None, :, :]) ** 2).sum(axis=2)
        e = cb2.codes[np.argmin(d, axis=1)]
        z = frames @ e_mat.T
        recon = float(np.sum(((z + (e - z_base)) @ decoder.T - frames) ** 2)) / t
        cterm = alpha * float(np.sum((z_base - e) ** 2)) / t
        commit = beta * float(np.sum((z - e) ** 2)) / t
        return recon + cterm + commit

    h = 1e-6
    max_rel = 0.0
    for i in range(encoder.shape[0]):
        for j in range(encoder.shape[1]):
            e_plus, e_minus = encoder.copy(), encoder.copy()
            e_plus[i, j] += h
            e_minus[i, j] -= h
            fd = (frozen(e_plus) - frozen(e_minus)) / (2 * h)
            denom = max(abs(fd), abs(g_enc[i, j]), 1e-8)
            max_rel = max(max_rel, abs(fd - g_enc[i, j]) / denom)
    grad_ok = max_rel < 1e-5
    details.append(f"grad rel err={max_rel:.2e}")

    # (c) loss history on synthetic data: at most one uptick after epoch 3
    rng = np.random.default_rng(5)
    dataset = [MotionFeature(frames=rng.normal(size=(25, 6)) * 0.5) for _ in range(4)]
    _, _, history = train_quantizer(dataset, epochs=12, seed=2, n_codes=8, latent_dim=3)
    upticks = sum(
        1 for i in range(3, len(history) - 1) if history[i + 1] > history[i] + 1e-12
    )
    history_ok = upticks <= 1
    details.append(f"upticks={upticks}")

    _announce("quantizer and EMA", ema_ok and grad_ok and history_ok, "; ".join(details))


# ---------------------------------------------------------------------------
# Criterion 8: position-index properties on exhaustive 64x64 grids
# ---------------------------------------------------------------------------


def test_position_index_properties_exhaustive():
    size = 64
    ok = True
    for centroid in ((0, 0), (31, 31), (63, 63), (17, 42)):
        xr, yr = centroid
        for y in range(size):
            for x in range(size):
                idx = position_index(5, x, y, centroid)
                # sign range
                if idx.sx not in (-1, 0, 1) or idx.sy not in (-1, 0, 1):
                    ok = False
                # centroid row/column zeros
                if x == xr and idx.sx != 0:
                    ok = False
                if y == yr and idx.sy != 0:
                    ok = False
                # translation invariance
                shifted = position_index(5, x + 7, y + 3, (xr + 7, yr + 3))
                if (shifted.sx, shifted.sy) != (idx.sx, idx.sy):
                    ok = False
                # reflection negation
                reflected = position_index(5, 2 * xr - x, 2 * yr - y, centroid)
                if (reflected.sx, reflected.sy) != (-idx.sx, -idx.sy):
                    ok = False
        if not ok:
            break
    _announce("position-index properties (64x64 exhaustive)", ok)


# ---------------------------------------------------------------------------
# Criterion 9: failure classification on 30 hand-constructed traces
# ---------------------------------------------------------------------------


def _step(action, outcome, reach=None, feedback="constructed"):
    return TraceStep(
        action=action,
        result=ActionResult.of(outcome, feedback, 1),
        digest="f" * 16,
        reach=reach,
    )


def _curated_traces():
    """30 failure traces, 10 per intended category by construction."""
    traces = []
    task = Task(
        id="curated", category=TaskCategory.SINGLE_ARM, instruction="",
        goals=(ObjectIn("cup_1", "sink_1"),), scene="kitchen_h1",
    )
    # navigation: path planning failures and out-of-place interactions
    for i in range(6):
        traces.append((EpisodeTrace(
            steps=(
                _step(NavigateTo(f"obj_{i}"), OutcomeLabel.UNREACHABLE),
                _step(Done(), OutcomeLabel.NO_OP),
            ),
            success=False, seed=i,
        ), FailureCategory.NAVIGATION))
    for i in range(4):
        # interaction point out of reach at every torso lift: too far away
        reach = ReachSnapshot(
            embodiment="h1" if i % 2 else "x1", base=(1.0, 1.0, 0.0),
            torso_lift=0.0, target=(4.0 + i, 1.0, 0.8), arm="right" if i % 2 else "left",
        )
        traces.append((EpisodeTrace(
            steps=(_step(PickUp(f"obj_{i}", "right"), OutcomeLabel.UNREACHABLE, reach),),
            success=False, seed=10 + i,
        ), FailureCategory.NAVIGATION))
    # body adjustment: a torso lift would have reached the target
    shelf_z = {"h1": 1.55, "x1": 1.35}
    for i in range(10):
        embodiment = "h1" if i % 2 else "x1"
        reach = ReachSnapshot(
            embodiment=embodiment, base=(1.0, 1.0, 0.0), torso_lift=0.0,
            target=(1.4, 1.0, shelf_z[embodiment] + 0.01 * (i % 3)),
            arm="left" if i % 2 else "right",
        )
        traces.append((EpisodeTrace(
            steps=(
                _step(NavigateTo(f"shelf_{i}"), OutcomeLabel.SUCCESS),
                _step(PickUp(f"obj_{i}", reach.arm), OutcomeLabel.UNREACHABLE, reach),
                _step(Done(), OutcomeLabel.NO_OP),
            ),
            success=False, seed=20 + i,
        ), FailureCategory.BODY_ADJUSTMENT))
    # logical: budget exhaustion, early give-up, arm conflicts
    for i in range(10):
        if i < 5:
            steps = tuple(
                _step(PickUp("cup_1", "left"), OutcomeLabel.NO_OP,
                      feedback="left arm is already holding pot_1")
                for _ in range(3 + i)
            )
        else:
            steps = (
                _step(NavigateTo("cup_1"), OutcomeLabel.SUCCESS),
                _step(PickUp("cup_1", "left"), OutcomeLabel.BREAK),
                _step(Done(), OutcomeLabel.NO_OP),
            )
        traces.append((EpisodeTrace(steps=steps, success=False, seed=40 + i),
                       FailureCategory.LOGICAL))
    return task, traces


def test_failure_classification_curated():
    task, traces = _curated_traces()
    assert len(traces) == 30
    wrong = []
    for i, (trace, expected) in enumerate(traces):
        got = classify_failure(trace, task)
        if got != expected:
            wrong.append((i, expected.value, got.value))
    _announce(
        "failure classification (30 curated traces)",
        not wrong,
        f"misclassified={wrong}" if wrong else "30/30",
    )
