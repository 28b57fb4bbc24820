"""Arm kinematics: FK, damped-least-squares IK, trajectories, balance.

Two embodiments ship with the package:

* ``x1`` - two 6-DOF arms (~0.55 m reach), parallel gripper, 2 kg per-arm
  payload. Interaction targets are solved per arm independently (decoupled).
* ``h1`` - two 7-DOF arms (~0.65 m reach), dexterous hand, 4 kg per-arm
  payload. Interaction targets are solved for both arms at once with a
  torso-lift variable and a static-balance gate (whole-body).

Chain layout convention: joint i applies ``Rot(axis_i, q_i)`` followed by a
fixed translation ``offset_i``, all expressed in the chain-local (shoulder)
frame at q = 0. The full configuration vector used by trajectories is
``[left joints..., right joints..., torso_lift]``.

Reachability is gated by a convex hull over 10^4 FK samples per arm, cached
per embodiment. The hull overestimates slightly (it fills elbow-infeasible
voids); the IK solve remains the final arbiter.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import numpy as np
from scipy.spatial import Delaunay

from .exceptions import ArgumentError, SchemaError
from .geometry import axis_rotation, make_transform, rotation_vector
from .rng import SplitMix64

# DLS defaults, fixed so tests are reproducible
DLS_DAMPING = 0.05
DLS_STEP_CLAMP = 0.2
DLS_MAX_ITERS = 200
DLS_POS_TOL = 1e-3
DLS_ROT_TOL = 1e-2
PROXIMAL_WEIGHT = 0.1

WORKSPACE_SAMPLES = 10_000
TRAJECTORY_WAYPOINTS = 20
MAX_JOINT_STEP = 0.15


@dataclass(frozen=True)
class JointSpec:
    axis: tuple[float, float, float]
    offset: tuple[float, float, float]
    lower: float
    upper: float
    mass: float


@dataclass(frozen=True)
class KinematicChain:
    """One arm: ordered revolute joints plus its mount on the torso."""

    name: str
    joints: tuple[JointSpec, ...]
    mount: tuple[float, float, float]
    payload_limit: float
    rest_pose: tuple[float, ...]

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def lower_limits(self) -> np.ndarray:
        return np.array([j.lower for j in self.joints])

    @property
    def upper_limits(self) -> np.ndarray:
        return np.array([j.upper for j in self.joints])

    @property
    def rest(self) -> np.ndarray:
        return np.array(self.rest_pose)


@dataclass(frozen=True)
class RobotModel:
    embodiment: str
    end_effector: str
    left: KinematicChain
    right: KinematicChain
    body_mass: float
    body_com: tuple[float, float, float]
    shoulder_height: float
    torso_lift_range: tuple[float, float]
    support_polygon: tuple[tuple[float, float], ...]
    rest_lift: float

    def chain(self, arm: str) -> KinematicChain:
        if arm == "left":
            return self.left
        if arm == "right":
            return self.right
        raise ArgumentError(f"unknown arm selector {arm!r}")

    @property
    def payload_limit(self) -> float:
        return self.right.payload_limit

    @property
    def n_full(self) -> int:
        return self.left.n_joints + self.right.n_joints + 1

    def pack_full(self, q_left, q_right, lift: float) -> np.ndarray:
        return np.concatenate([np.asarray(q_left, float), np.asarray(q_right, float), [lift]])

    def unpack_full(self, q_full: np.ndarray):
        nl = self.left.n_joints
        nr = self.right.n_joints
        return q_full[:nl], q_full[nl : nl + nr], float(q_full[nl + nr])

    def full_lower(self) -> np.ndarray:
        return np.concatenate(
            [self.left.lower_limits, self.right.lower_limits, [self.torso_lift_range[0]]]
        )

    def full_upper(self) -> np.ndarray:
        return np.concatenate(
            [self.left.upper_limits, self.right.upper_limits, [self.torso_lift_range[1]]]
        )

    def rest_full(self) -> np.ndarray:
        return self.pack_full(self.left.rest, self.right.rest, self.rest_lift)


@dataclass(frozen=True)
class Trajectory:
    """Joint-space waypoint sequence over the full configuration vector."""

    waypoints: np.ndarray  # (n, d)
    ticks_per_waypoint: int = 1

    def __len__(self) -> int:
        return int(self.waypoints.shape[0])


# ---------------------------------------------------------------------------
# Robot model loading
# ---------------------------------------------------------------------------

_ROBOT_SCHEMA_FIELDS = {
    "embodiment",
    "end_effector",
    "payload_limit",
    "body_mass",
    "body_com",
    "shoulder_height",
    "torso_lift_range",
    "support_polygon",
    "rest_lift",
    "arms",
}

_MODEL_CACHE: dict[str, RobotModel] = {}


def _mirror_chain(chain_cfg: dict) -> dict:
    """Left arm as the sagittal mirror of the right: y components negate.

    Joints about x or z axes flip rotation sense under the mirror, which we
    fold into negated rest angles; limits must be symmetric for this to be
    exact.
    """
    mirrored = {"mount": [chain_cfg["mount"][0], -chain_cfg["mount"][1], chain_cfg["mount"][2]]}
    joints = []
    rest = []
    for spec, rest_q in zip(chain_cfg["joints"], chain_cfg["rest"]):
        ax, ay, az = spec["axis"]
        ox, oy, oz = spec["offset"]
        lo, hi = spec["limits"]
        if abs(lo + hi) > 1e-12:
            raise SchemaError("mirror_of requires symmetric joint limits", "arms")
        sign = 1.0 if abs(ay) > 0.5 else -1.0  # pitch keeps sense, yaw/roll flip
        joints.append(
            {
                "axis": [ax, ay, az],
                "offset": [ox, -oy, oz],
                "limits": [lo, hi],
                "mass": spec["mass"],
            }
        )
        rest.append(sign * rest_q)
    mirrored["joints"] = joints
    mirrored["rest"] = rest
    return mirrored


def _build_chain(name: str, cfg: dict, payload: float) -> KinematicChain:
    joints = tuple(
        JointSpec(
            axis=tuple(j["axis"]),
            offset=tuple(j["offset"]),
            lower=float(j["limits"][0]),
            upper=float(j["limits"][1]),
            mass=float(j["mass"]),
        )
        for j in cfg["joints"]
    )
    if len(joints) < 6:
        raise SchemaError("arm chains need at least 6 joints", f"arms.{name}.joints")
    for i, j in enumerate(joints):
        if j.lower > j.upper:
            raise SchemaError("joint lower limit above upper", f"arms.{name}.joints[{i}]")
        if not all(math.isfinite(c) for c in j.offset):
            raise SchemaError("joint offset not finite", f"arms.{name}.joints[{i}]")
    return KinematicChain(
        name=name,
        joints=joints,
        mount=tuple(cfg["mount"]),
        payload_limit=payload,
        rest_pose=tuple(float(v) for v in cfg["rest"]),
    )


def robot_model_from_dict(cfg: dict) -> RobotModel:
    missing = _ROBOT_SCHEMA_FIELDS - set(cfg)
    if missing:
        raise SchemaError(f"missing fields {sorted(missing)}", "$")
    arms = cfg["arms"]
    right_cfg = arms["right"]
    left_cfg = arms["left"]
    if left_cfg.get("mirror_of") == "right":
        left_cfg = _mirror_chain(right_cfg)
    payload = float(cfg["payload_limit"])
    return RobotModel(
        embodiment=cfg["embodiment"],
        end_effector=cfg["end_effector"],
        left=_build_chain("left", left_cfg, payload),
        right=_build_chain("right", right_cfg, payload),
        body_mass=float(cfg["body_mass"]),
        body_com=tuple(cfg["body_com"]),
        shoulder_height=float(cfg["shoulder_height"]),
        torso_lift_range=tuple(cfg["torso_lift_range"]),
        support_polygon=tuple(tuple(v) for v in cfg["support_polygon"]),
        rest_lift=float(cfg["rest_lift"]),
    )


def load_robot_model(embodiment: str, path: Optional[str] = None) -> RobotModel:
    """Load a robot definition, from packaged data or an explicit JSON file."""
    key = path or embodiment
    if key in _MODEL_CACHE:
        return _MODEL_CACHE[key]
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    else:
        ref = resources.files("bimsim").joinpath(f"data/robots/{embodiment}.json")
        if not ref.is_file():
            raise ArgumentError(f"unknown embodiment {embodiment!r}")
        cfg = json.loads(ref.read_text(encoding="utf-8"))
    model = robot_model_from_dict(cfg)
    _MODEL_CACHE[key] = model
    return model


# ---------------------------------------------------------------------------
# Forward kinematics
# ---------------------------------------------------------------------------


def chain_frames(chain: KinematicChain, q: np.ndarray):
    """Joint origins/axes (chain frame) plus the end-effector frame.

    Returns (origins (n,3), axes (n,3), R_ee (3,3), p_ee (3,)).
    """
    n = chain.n_joints
    if len(q) != n:
        raise ArgumentError(f"expected {n} joint angles, got {len(q)}")
    origins = np.empty((n, 3))
    axes = np.empty((n, 3))
    rot = np.eye(3)
    pos = np.zeros(3)
    for i, joint in enumerate(chain.joints):
        origins[i] = pos
        rot = rot @ axis_rotation(np.array(joint.axis), float(q[i]))
        axes[i] = rot @ np.array(joint.axis)
        pos = pos + rot @ np.array(joint.offset)
    return origins, axes, rot, pos


def forward_kinematics(chain: KinematicChain, q) -> np.ndarray:
    """End-effector transform in the chain (shoulder) frame."""
    q = np.asarray(q, dtype=float)
    _, _, rot, pos = chain_frames(chain, q)
    return make_transform(rot, pos)


def geometric_jacobian(chain: KinematicChain, q: np.ndarray) -> np.ndarray:
    """6xN Jacobian (linear rows first) for revolute joints."""
    origins, axes, _, p_ee = chain_frames(chain, q)
    jac = np.empty((6, chain.n_joints))
    jac[:3] = np.cross(axes, p_ee - origins).T
    jac[3:] = axes.T
    return jac


def _batch_fk_positions(chain: KinematicChain, qs: np.ndarray) -> np.ndarray:
    """End-effector positions for a (N, n) batch of configurations."""
    n_samples = qs.shape[0]
    rot = np.broadcast_to(np.eye(3), (n_samples, 3, 3)).copy()
    pos = np.zeros((n_samples, 3))
    for i, joint in enumerate(chain.joints):
        axis = np.array(joint.axis)
        angles = qs[:, i]
        c, s = np.cos(angles), np.sin(angles)
        x, y, z = axis
        omc = 1.0 - c
        step = np.empty((n_samples, 3, 3))
        step[:, 0, 0] = c + x * x * omc
        step[:, 0, 1] = x * y * omc - z * s
        step[:, 0, 2] = x * z * omc + y * s
        step[:, 1, 0] = y * x * omc + z * s
        step[:, 1, 1] = c + y * y * omc
        step[:, 1, 2] = y * z * omc - x * s
        step[:, 2, 0] = z * x * omc - y * s
        step[:, 2, 1] = z * y * omc + x * s
        step[:, 2, 2] = c + z * z * omc
        rot = rot @ step
        pos = pos + rot @ np.array(joint.offset)
    return pos


# ---------------------------------------------------------------------------
# Workspace hulls
# ---------------------------------------------------------------------------

_HULL_CACHE: dict[tuple[str, str], Delaunay] = {}


def workspace_hull(model: RobotModel, arm: str) -> Delaunay:
    """Convex hull over FK-sampled end-effector positions (chain frame)."""
    key = (model.embodiment, arm)
    if key not in _HULL_CACHE:
        chain = model.chain(arm)
        gen = SplitMix64(zlib.crc32(f"{model.embodiment}:{arm}".encode()))
        lo, hi = chain.lower_limits, chain.upper_limits
        u = np.array(
            [[gen.random() for _ in range(chain.n_joints)] for _ in range(WORKSPACE_SAMPLES)]
        )
        qs = lo + u * (hi - lo)
        points = _batch_fk_positions(chain, qs)
        _HULL_CACHE[key] = Delaunay(points)
    return _HULL_CACHE[key]


def point_in_workspace(model: RobotModel, arm: str, point_chain_frame) -> bool:
    hull = workspace_hull(model, arm)
    return bool(hull.find_simplex(np.asarray(point_chain_frame, float)) >= 0)


def point_to_chain_frame(
    model: RobotModel, arm: str, point_torso: np.ndarray, lift: float
) -> np.ndarray:
    """Torso-ground-frame point expressed in the arm's chain frame."""
    mount = np.array(model.chain(arm).mount)
    return np.asarray(point_torso, float) - mount - np.array([0.0, 0.0, model.shoulder_height + lift])


def lifts_reaching(
    model: RobotModel, arm: str, point_torso: np.ndarray, n_steps: int = 7
) -> list[float]:
    """Torso-lift values at which a torso-frame point enters the workspace."""
    lo, hi = model.torso_lift_range
    feasible = []
    for lift in np.linspace(lo, hi, n_steps):
        if point_in_workspace(model, arm, point_to_chain_frame(model, arm, point_torso, lift)):
            feasible.append(float(lift))
    return feasible


# ---------------------------------------------------------------------------
# IK solvers
# ---------------------------------------------------------------------------


def _pose_error(
    rot: np.ndarray,
    pos: np.ndarray,
    target_rot: Optional[np.ndarray],
    target_pos: np.ndarray,
) -> np.ndarray:
    pos_err = target_pos - pos
    if target_rot is None:
        return pos_err
    rot_err = rotation_vector(target_rot @ rot.T)
    return np.concatenate([pos_err, rot_err])


def _converged(err: np.ndarray, with_rotation: bool) -> bool:
    if with_rotation:
        return (
            float(np.linalg.norm(err[:3])) < DLS_POS_TOL
            and float(np.linalg.norm(err[3:])) < DLS_ROT_TOL
        )
    return float(np.linalg.norm(err)) < DLS_POS_TOL


def _clamp_step(dq: np.ndarray) -> np.ndarray:
    peak = float(np.max(np.abs(dq)))
    if peak > DLS_STEP_CLAMP:
        dq = dq * (DLS_STEP_CLAMP / peak)
    return dq


def _railed(q: np.ndarray, dq: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Joints pinned at a limit with the step still pushing outward."""
    return ((q <= lo + 1e-12) & (dq < 0.0)) | ((q >= hi - 1e-12) & (dq > 0.0))


def ik_decoupled(
    chain: KinematicChain,
    target_rotation: Optional[np.ndarray],
    target_translation,
    q0,
    max_iters: int = DLS_MAX_ITERS,
    position_only: bool = False,
) -> Optional[np.ndarray]:
    """Single-arm damped-least-squares IK in the chain frame.

    Returns a configuration with FK matching the target within tolerance
    (position 1e-3 m, orientation 1e-2 rad), or None if the iteration does
    not converge. Joint limits are enforced by clamping each step. Pass
    ``position_only=True`` (or a None rotation) to leave orientation free.
    """
    q = np.array(q0, dtype=float)
    if len(q) != chain.n_joints:
        raise ArgumentError(f"q0 has {len(q)} entries, chain has {chain.n_joints}")
    target_pos = np.asarray(target_translation, float)
    target_rot = None if position_only else target_rotation
    with_rot = target_rot is not None
    lo, hi = chain.lower_limits, chain.upper_limits
    damping = DLS_DAMPING**2

    for _ in range(max_iters + 1):
        origins, axes, rot, pos = chain_frames(chain, q)
        err = _pose_error(rot, pos, target_rot, target_pos)
        if _converged(err, with_rot):
            return q
        jac = np.empty((6, chain.n_joints))
        jac[:3] = np.cross(axes, pos - origins).T
        jac[3:] = axes.T
        if not with_rot:
            jac = jac[:3]
        for _pass in range(2):
            jjt = jac @ jac.T
            jjt[np.diag_indices_from(jjt)] += damping
            dq = jac.T @ np.linalg.solve(jjt, err)
            railed = _railed(q, dq, lo, hi)
            if not railed.any():
                break
            jac = jac.copy()
            jac[:, railed] = 0.0  # re-solve without limit-pinned joints
        q = np.clip(q + _clamp_step(dq), lo, hi)
    return None


def _arm_base_offset(model: RobotModel, arm: str, lift: float) -> np.ndarray:
    mount = np.array(model.chain(arm).mount)
    return mount + np.array([0.0, 0.0, model.shoulder_height + lift])


def arm_fk_torso(model: RobotModel, arm: str, q_arm, lift: float):
    """(R, p) of an arm's end effector in the torso ground frame."""
    _, _, rot, pos = chain_frames(model.chain(arm), np.asarray(q_arm, float))
    return rot, pos + _arm_base_offset(model, arm, lift)


def ik_whole_body(
    model: RobotModel,
    target_left: np.ndarray,
    target_right: np.ndarray,
    q0_full,
    held_masses: tuple[float, float] = (0.0, 0.0),
    position_only: bool = False,
    max_iters: int = DLS_MAX_ITERS,
) -> Optional[np.ndarray]:
    """Both arms plus torso lift solved together, balance-gated.

    Targets are 4x4 transforms in the torso ground frame (origin on the
    floor between the feet, robot-aligned axes). Each step adds a proximal
    pull toward ``q0_full`` projected into the task nullspace, standing in
    for joint-velocity regularization without biasing the task solution.
    Converged candidates failing the center-of-mass check are rejected; a
    few torso-lift restarts are tried before giving up.
    """
    q0_full = np.asarray(q0_full, dtype=float)
    if len(q0_full) != model.n_full:
        raise ArgumentError(f"q0 has {len(q0_full)} entries, expected {model.n_full}")
    nl = model.left.n_joints
    nr = model.right.n_joints
    lo, hi = model.full_lower(), model.full_upper()
    lift_lo, lift_hi = model.torso_lift_range

    tl_pos, tr_pos = target_left[:3, 3], target_right[:3, 3]
    tl_rot = None if position_only else target_left[:3, :3]
    tr_rot = None if position_only else target_right[:3, :3]
    rows_per_arm = 3 if position_only else 6
    damping = DLS_DAMPING**2

    starts = [q0_full]
    for lift in (lift_lo, 0.5 * (lift_lo + lift_hi), lift_hi):
        alt = q0_full.copy()
        alt[-1] = lift
        starts.append(alt)

    for start in starts:
        q = start.copy()
        solution = None
        for _ in range(max_iters + 1):
            ql, qr, lift = q[:nl], q[nl : nl + nr], q[-1]
            ol, al, rl, pl = chain_frames(model.left, ql)
            orr, ar, rr, pr = chain_frames(model.right, qr)
            pl_t = pl + _arm_base_offset(model, "left", lift)
            pr_t = pr + _arm_base_offset(model, "right", lift)
            err_l = _pose_error(rl, pl_t, tl_rot, tl_pos)
            err_r = _pose_error(rr, pr_t, tr_rot, tr_pos)
            if _converged(err_l, not position_only) and _converged(err_r, not position_only):
                solution = q
                break
            err = np.concatenate([err_l, err_r])
            jac = np.zeros((2 * rows_per_arm, model.n_full))
            jac[:3, :nl] = np.cross(al, pl - ol).T
            jac[rows_per_arm : rows_per_arm + 3, nl : nl + nr] = np.cross(ar, pr - orr).T
            if not position_only:
                jac[3:6, :nl] = al.T
                jac[9:12, nl : nl + nr] = ar.T
            jac[2, -1] = 1.0  # lift moves both shoulders along +z
            jac[rows_per_arm + 2, -1] = 1.0
            # damped projector leaks the pull into task space, so fade it out
            # as the task error shrinks instead of fighting the last millimeters
            pull = PROXIMAL_WEIGHT * min(1.0, float(np.linalg.norm(err)) / 0.05)
            for _pass in range(2):
                jjt = jac @ jac.T
                jjt[np.diag_indices_from(jjt)] += damping
                jjt_inv_j = np.linalg.solve(jjt, jac)
                dq = jjt_inv_j.T @ err
                dq += pull * ((q0_full - q) - jac.T @ (jjt_inv_j @ (q0_full - q)))
                railed = _railed(q, dq, lo, hi)
                if not railed.any():
                    break
                jac = jac.copy()
                jac[:, railed] = 0.0  # re-solve without limit-pinned joints
            q = np.clip(q + _clamp_step(dq), lo, hi)
        if solution is None:
            continue
        ql, qr, lift = solution[:nl], solution[nl : nl + nr], float(solution[-1])
        if com_in_support(model, lift, ql, qr, held_masses):
            return solution
    return None


# ---------------------------------------------------------------------------
# Balance
# ---------------------------------------------------------------------------


def _chain_mass_moments(model: RobotModel, arm: str, q_arm, lift: float):
    """(total mass, first moment) of one arm with point masses at link midpoints."""
    chain = model.chain(arm)
    origins, _, _, p_ee = chain_frames(chain, np.asarray(q_arm, float))
    base = _arm_base_offset(model, arm, lift)
    points = np.vstack([origins, p_ee]) + base
    mass = 0.0
    moment = np.zeros(3)
    for i, joint in enumerate(chain.joints):
        mid = 0.5 * (points[i] + points[i + 1])
        mass += joint.mass
        moment += joint.mass * mid
    return mass, moment, points[-1]


def compute_com(
    model: RobotModel,
    lift: float,
    q_left,
    q_right,
    held_masses: tuple[float, float] = (0.0, 0.0),
) -> np.ndarray:
    """Center of mass in the torso ground frame (point-mass link model)."""
    mass = model.body_mass
    moment = model.body_mass * np.array(model.body_com)
    for arm, q_arm, held in (("left", q_left, held_masses[0]), ("right", q_right, held_masses[1])):
        m, mom, ee = _chain_mass_moments(model, arm, q_arm, lift)
        mass += m + held
        moment += mom + held * ee
    return moment / mass


def point_in_convex_polygon(point, polygon) -> bool:
    """Sign-consistent cross-product containment test (boundary counts)."""
    px, py = point
    sign = 0.0
    n = len(polygon)
    for i in range(n):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % n]
        cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        if abs(cross) < 1e-12:
            continue
        if sign == 0.0:
            sign = math.copysign(1.0, cross)
        elif math.copysign(1.0, cross) != sign:
            return False
    return True


def com_in_support(
    model: RobotModel,
    lift: float,
    q_left,
    q_right,
    held_masses: tuple[float, float] = (0.0, 0.0),
) -> bool:
    """Whether the CoM ground projection stays inside the support polygon."""
    com = compute_com(model, lift, q_left, q_right, held_masses)
    return point_in_convex_polygon((com[0], com[1]), model.support_polygon)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


def interpolate_trajectory(
    q_start,
    q_goal,
    n: int = TRAJECTORY_WAYPOINTS,
    max_step: float = MAX_JOINT_STEP,
) -> Trajectory:
    """Cubic ease-in/ease-out joint-space interpolation.

    Endpoints are exact. The waypoint count is increased automatically when
    the per-step delta would exceed ``max_step`` (the ease curve's peak slope
    is 1.5x the mean).
    """
    q_start = np.asarray(q_start, dtype=float)
    q_goal = np.asarray(q_goal, dtype=float)
    if q_start.shape != q_goal.shape:
        raise ArgumentError("start and goal dimensions differ")
    if n < 2:
        raise ArgumentError("need at least 2 waypoints")
    span = float(np.max(np.abs(q_goal - q_start)))
    if span > 0.0 and max_step > 0.0:
        needed = int(math.ceil(1.5 * span / max_step)) + 1
        n = max(n, needed)
    t = np.linspace(0.0, 1.0, n)
    s = 3.0 * t**2 - 2.0 * t**3
    waypoints = q_start[None, :] + s[:, None] * (q_goal - q_start)[None, :]
    waypoints[0] = q_start
    waypoints[-1] = q_goal
    return Trajectory(waypoints=waypoints)


def mirror_joint_signs(chain: KinematicChain) -> np.ndarray:
    """Per-joint angle signs mapping a configuration to its sagittal mirror."""
    return np.array([1.0 if abs(j.axis[1]) > 0.5 else -1.0 for j in chain.joints])


def grasp_orientation(direction: np.ndarray) -> np.ndarray:
    """Tool frame with x pointing along ``direction``, z kept upward-ish."""
    x = np.asarray(direction, float)
    n = np.linalg.norm(x)
    if n < 1e-12:
        return np.eye(3)
    x = x / n
    up = np.array([0.0, 0.0, 1.0])
    if abs(float(x @ up)) > 0.99:
        up = np.array([0.0, 1.0, 0.0])
    z = up - (up @ x) * x
    z /= np.linalg.norm(z)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])
