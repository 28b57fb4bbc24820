"""bimsim: a deterministic bimanual-humanoid household simulator and benchmark.

Core pieces: a semantic world model with tick-level continuous motion, two
IK models (decoupled and whole-body with balance), a stochastic contingency
mechanism over action outcomes, a three-category task taxonomy, a motion
quantizer with robot-centric position indices, a session protocol served
over TCP (NDJSON) and HTTP (FastAPI), and an evaluation harness.
"""

from .contingency import (
    Difficulty,
    OutcomeDistribution,
    OutcomeLabel,
    load_outcome_table,
    sample_outcome,
    scale_for_difficulty,
)
from .exceptions import SimError
from .kinematics import (
    KinematicChain,
    RobotModel,
    Trajectory,
    com_in_support,
    forward_kinematics,
    ik_decoupled,
    ik_whole_body,
    interpolate_trajectory,
    load_robot_model,
)
from .scene import WorldState, load_scene, scene_from_dict, state_digest
from .tasks import (
    EpisodeTrace,
    FailureCategory,
    Task,
    TaskCategory,
    classify_failure,
    goal_satisfied,
)
from .world import (
    Action,
    ActionResult,
    ObservationFrame,
    apply_action,
    check_reachability,
    observe,
    plan_navigation,
    run_action,
    step_tick,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "ActionResult",
    "Difficulty",
    "EpisodeTrace",
    "FailureCategory",
    "KinematicChain",
    "ObservationFrame",
    "OutcomeDistribution",
    "OutcomeLabel",
    "RobotModel",
    "SimError",
    "Task",
    "TaskCategory",
    "Trajectory",
    "WorldState",
    "apply_action",
    "check_reachability",
    "classify_failure",
    "com_in_support",
    "forward_kinematics",
    "goal_satisfied",
    "ik_decoupled",
    "ik_whole_body",
    "interpolate_trajectory",
    "load_outcome_table",
    "load_robot_model",
    "load_scene",
    "observe",
    "plan_navigation",
    "run_action",
    "sample_outcome",
    "scale_for_difficulty",
    "scene_from_dict",
    "state_digest",
    "step_tick",
    "__version__",
]
