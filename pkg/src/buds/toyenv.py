"""Deterministic 2-D multi-stage manipulation world.

A point robot with a binary gripper moves in the unit square among a block,
a distractor tool, a sliding drawer (grasp the knob to drag it), and a stove
switch (an open-to-close gripper edge inside the switch zone toggles the
stove). Tasks chain four to six stages: close the drawer, set the stove,
pick the block, place it in a target zone, and return home.

Observations are three modalities: two fixed nonlinear projections of the
state ("views", each occluding a different part of the scene, so neither
alone recovers the full state) plus raw proprioception. Scripted waypoint
controllers generate demonstrations with seeded jitter and record held-out
per-step stage labels; closed-loop rollouts execute a trained hierarchy.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Modality, Trajectory
from .errors import ScriptFailure
from .hbc import MetaController, SkillPolicy, hier_act

MAX_STEP = 0.05
GRASP_RADIUS = 0.03
PRESS_RADIUS = 0.055

KNOB_CLOSED_X = 0.15
KNOB_Y = 0.80
DRAWER_TRAVEL = 0.40
SWITCH = np.array([0.84, 0.78])
TRAY = np.array([0.50, 0.64])
TRAY_RADIUS = 0.06
SERVING = np.array([0.80, 0.28])
SERVING_RADIUS = 0.07
HOME = np.array([0.10, 0.10])
HOME_RADIUS = 0.05
BLOCK_SPAWN = ((0.25, 0.45), (0.15, 0.35))
TOOL_SPAWN = ((0.58, 0.72), (0.10, 0.22))

_HELD_IDS = (None, "block", "tool", "knob")
_SCRIPT_GAIN = 0.22
_SCRIPT_SPEED = 0.02  # commanded cap, below the env clip
_SCRIPT_GRIP = 0.04  # commanded gripper magnitude, same scale as motion
_SLIP_PROB = 0.02  # per-step one-frame grip slip while transporting
_MAX_SCRIPT_STEPS = 500


@dataclass
class EnvState:
    robot: np.ndarray
    gripper: bool
    block: np.ndarray
    tool: np.ndarray
    drawer_frac: float
    stove_on: bool
    held: str | None
    steps: int = 0


def knob_position(drawer_frac: float) -> np.ndarray:
    return np.array([KNOB_CLOSED_X + DRAWER_TRAVEL * drawer_frac, KNOB_Y])


def zone_center(zone: str) -> np.ndarray:
    return TRAY if zone == "tray" else SERVING


def zone_radius(zone: str) -> float:
    return TRAY_RADIUS if zone == "tray" else SERVING_RADIUS


def in_zone(point: np.ndarray, zone: str) -> bool:
    return float(np.linalg.norm(point - zone_center(zone))) <= zone_radius(zone)


@dataclass(frozen=True)
class TaskSpec:
    """A goal predicate plus a seeded initial-state distribution.

    The ordered stage names drive scripted demos and their held-out labels;
    they are never consumed by training code.
    """

    id: str
    family: str
    variant: int
    drawer_open_init: bool
    stove_on_init: bool
    goal_stove_on: bool
    goal_zone: str  # "tray" | "serving"

    def stages(self) -> list[str]:
        """Ordered motion phases; each ends at a sensorimotor mode switch."""
        names = []
        if self.drawer_open_init:
            names.extend(["reach-knob", "drag-drawer"])
        if self.stove_on_init != self.goal_stove_on:
            names.append("press-stove")
        names.extend(["reach-block", "carry-block", "go-home"])
        return names

    def stage_done(self, name: str, state: EnvState) -> bool:
        if name == "reach-knob":
            return state.held == "knob"
        if name == "drag-drawer":
            return state.drawer_frac <= 0.05 and state.held is None
        if name == "press-stove":
            return state.stove_on == self.goal_stove_on
        if name == "reach-block":
            return state.held == "block"
        if name == "carry-block":
            return in_zone(state.block, self.goal_zone) and state.held is None
        if name == "go-home":
            return float(np.linalg.norm(state.robot - HOME)) <= HOME_RADIUS
        raise ValueError(f"unknown stage {name!r}")

    def goal(self, state: EnvState) -> bool:
        return (
            state.drawer_frac <= 0.1
            and state.stove_on == self.goal_stove_on
            and in_zone(state.block, self.goal_zone)
            and state.held is None
            and float(np.linalg.norm(state.robot - HOME)) <= HOME_RADIUS
        )


def task_specs() -> dict[str, TaskSpec]:
    """All shipped task specs, keyed by id."""
    specs = {
        "kitchen": TaskSpec("kitchen", "kitchen", 1, True, False, True, "tray"),
    }
    goals = {"task1": (True, "tray"), "task2": (True, "serving"), "task3": (False, "serving")}
    variants = {1: (True, False), 2: (False, False), 3: (True, True)}
    for family, (goal_stove, zone) in goals.items():
        for v, (drawer_open, stove_on) in variants.items():
            spec_id = f"{family}:v{v}"
            specs[spec_id] = TaskSpec(spec_id, family, v, drawer_open, stove_on, goal_stove, zone)
    return specs


def _salt(spec_id: str) -> int:
    return zlib.crc32(spec_id.encode())


def env_reset(spec: TaskSpec, seed: int) -> EnvState:
    """Seeded initial state: random robot pose anywhere in the workspace
    (approach coverage for imitation), random object poses in their spawn
    boxes, drawer/stove per the task variant.
    """
    rng = np.random.default_rng([_salt(spec.id), seed])
    (bx, by) = BLOCK_SPAWN
    (tx, ty) = TOOL_SPAWN
    state = EnvState(
        robot=rng.uniform(0.08, 0.92, 2),
        gripper=False,
        block=np.array([rng.uniform(*bx), rng.uniform(*by)]),
        tool=np.array([rng.uniform(*tx), rng.uniform(*ty)]),
        drawer_frac=float(rng.uniform(0.75, 1.0) if spec.drawer_open_init else rng.uniform(0.0, 0.04)),
        stove_on=spec.stove_on_init,
        held=None,
        steps=0,
    )
    assert not spec.goal(state)
    return state


def env_step(state: EnvState, action: np.ndarray) -> EnvState:
    """Kinematic step: displacement clipped to +-0.05 per axis, level-
    triggered grasping within 0.03, edge-triggered stove toggle, drawer
    fraction following a held knob.
    """
    delta = np.clip(np.asarray(action[:2], dtype=float), -MAX_STEP, MAX_STEP)
    robot = np.clip(state.robot + delta, 0.0, 1.0)
    closed = float(action[2]) > 0.0
    edge_close = closed and not state.gripper

    held = state.held if closed else None
    block, tool, frac = state.block.copy(), state.tool.copy(), state.drawer_frac
    if closed and held is None:
        candidates = [
            ("block", block),
            ("tool", tool),
            ("knob", knob_position(frac)),
        ]
        best, best_d = None, GRASP_RADIUS
        for name, pos in candidates:
            d = float(np.linalg.norm(robot - pos))
            if d <= best_d:
                best, best_d = name, d
        held = best

    if held == "block":
        block = robot.copy()
    elif held == "tool":
        tool = robot.copy()
    elif held == "knob":
        frac = float(np.clip((robot[0] - KNOB_CLOSED_X) / DRAWER_TRAVEL, 0.0, 1.0))

    stove = state.stove_on
    if edge_close and held is None and float(np.linalg.norm(robot - SWITCH)) <= PRESS_RADIUS:
        stove = not stove

    return EnvState(robot, closed, block, tool, frac, stove, held, state.steps + 1)


# --- observations -----------------------------------------------------------

_VIEW_DIM = 3 + 2 + 2 + 1 + 1 + 4  # robot, block, tool, drawer, stove, held


def state_vector(state: EnvState) -> np.ndarray:
    held = np.zeros(4)
    held[_HELD_IDS.index(state.held)] = 1.0
    return np.concatenate(
        [
            state.robot,
            [1.0 if state.gripper else 0.0],
            state.block,
            state.tool,
            [state.drawer_frac, 1.0 if state.stove_on else 0.0],
            held,
        ]
    )


# view_a: manipulation-centric (block, drawer, gripper, held) -- occludes the
# robot, tool, and stove. view_b: workspace-centric (robot, tool, stove) --
# occludes the block, drawer, gripper, and held flags.
_VIEW_A_IDX = np.array([3, 4, 7, 2, 9, 10, 11, 12])
_VIEW_B_IDX = np.array([0, 1, 5, 6, 8])
_VIEW_OUT = 8


def _projection(seed: int, n_in: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    return (
        rng.standard_normal((_VIEW_OUT, n_in)) * (1.2 / np.sqrt(n_in)),
        rng.uniform(-0.3, 0.3, _VIEW_OUT),
    )


_A_W, _A_B = _projection(0xA17, len(_VIEW_A_IDX))
_B_W, _B_B = _projection(0xB23, len(_VIEW_B_IDX))


def make_modalities() -> list[Modality]:
    return [
        Modality("view_a", _VIEW_OUT, "observation"),
        Modality("view_b", _VIEW_OUT, "observation"),
        Modality("proprio", 3, "proprioception"),
    ]


def make_observation(
    state: EnvState, rng: np.random.Generator, noise_scale: float
) -> dict[str, np.ndarray]:
    vec = state_vector(state)
    view_a = np.tanh(_A_W @ vec[_VIEW_A_IDX] + _A_B)
    view_b = np.tanh(_B_W @ vec[_VIEW_B_IDX] + _B_B)
    if noise_scale > 0.0:
        view_a = view_a + noise_scale * rng.standard_normal(_VIEW_OUT)
        view_b = view_b + noise_scale * rng.standard_normal(_VIEW_OUT)
    return {"view_a": view_a, "view_b": view_b, "proprio": vec[:3].copy()}


def observation_vector(obs: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([obs[m.name] for m in make_modalities()])


# --- scripted demonstrations -------------------------------------------------


def _move_action(pos: np.ndarray, target: np.ndarray, grip: float) -> np.ndarray:
    step = np.clip(_SCRIPT_GAIN * (target - pos), -_SCRIPT_SPEED, _SCRIPT_SPEED)
    return np.array([step[0], step[1], grip * _SCRIPT_GRIP])


def _near(pos: np.ndarray, target: np.ndarray, radius: float) -> bool:
    return float(np.linalg.norm(pos - target)) <= radius


def _grasp_approach(pos: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Move straight at the target with the gripper open; close in range.

    The close command starts at twice the grasp radius: attachment is
    level-triggered, so the claw simply stays shut until contact.
    """
    grip = 1.0 if _near(pos, target, GRASP_RADIUS * 2.0) else -1.0
    return _move_action(pos, target, grip)


def _stage_action(spec: TaskSpec, state: EnvState, stage: str) -> np.ndarray:
    pos = state.robot
    if stage == "reach-knob":
        return _grasp_approach(pos, knob_position(state.drawer_frac))
    if stage == "drag-drawer":
        if state.held != "knob":  # slipped; re-grasp
            return _grasp_approach(pos, knob_position(state.drawer_frac))
        if state.drawer_frac <= 0.03:
            return np.array([0.0, 0.0, -_SCRIPT_GRIP])  # release
        return _move_action(pos, np.array([KNOB_CLOSED_X - 0.02, KNOB_Y]), 1.0)
    if stage == "press-stove":
        if not _near(pos, SWITCH, PRESS_RADIUS * 0.7):
            return _move_action(pos, SWITCH, -1.0)
        grip = -1.0 if state.gripper else 1.0  # re-open then press again if missed
        return np.array([0.0, 0.0, grip * _SCRIPT_GRIP])
    if stage == "reach-block":
        return _grasp_approach(pos, state.block)
    if stage == "carry-block":
        if state.held != "block":  # dropped short of the zone; re-grasp
            return _grasp_approach(pos, state.block)
        center = zone_center(spec.goal_zone)
        if _near(pos, center, zone_radius(spec.goal_zone) * 0.7):
            return np.array([0.0, 0.0, -_SCRIPT_GRIP])  # release
        return _move_action(pos, center, 1.0)
    if stage == "go-home":
        return _move_action(pos, HOME, -1.0)
    raise ValueError(f"unknown stage {stage!r}")


def scripted_demo(
    spec: TaskSpec, seed: int, noise_scale: float, traj_id: str | None = None
) -> Trajectory:
    """Run the waypoint controller to completion, recording observations,
    commanded actions, and per-step stage labels. The label of a step is the
    index of the first stage milestone not yet achieved (milestones latch).
    """
    state = env_reset(spec, seed)
    rng = np.random.default_rng([_salt(spec.id), seed, 7])
    slip_rng = np.random.default_rng([_salt(spec.id), seed, 13])
    stages = spec.stages()
    progress = 0  # stages complete strictly in order

    obs_rows: dict[str, list[np.ndarray]] = {m.name: [] for m in make_modalities()}
    actions: list[np.ndarray] = []
    labels: list[int] = []

    for _ in range(_MAX_SCRIPT_STEPS):
        while progress < len(stages) and spec.stage_done(stages[progress], state):
            progress += 1
        if progress == len(stages):
            break
        obs = make_observation(state, rng, noise_scale)
        for name, row in obs.items():
            obs_rows[name].append(row)
        action = _stage_action(spec, state, stages[progress])
        # Occasional one-frame grip slips while transporting: the scripted
        # recovery (re-grasp, resume) puts fumble-and-recover behavior into
        # the demonstrations, like a human operator's.
        if (
            stages[progress] in ("drag-drawer", "carry-block")
            and state.held is not None
            and slip_rng.random() < _SLIP_PROB
        ):
            action[2] = -_SCRIPT_GRIP
        action = action + np.array([*(noise_scale * rng.standard_normal(2)), 0.0])
        actions.append(action)
        labels.append(progress)
        state = env_step(state, action)
    else:
        raise ScriptFailure(f"{spec.id} seed {seed}: not done in {_MAX_SCRIPT_STEPS} steps")

    if not spec.goal(state):
        raise ScriptFailure(f"{spec.id} seed {seed}: stages done but goal unmet")
    return Trajectory(
        id=traj_id or f"{spec.id}-{seed:05d}",
        task_id=spec.id,
        obs={k: np.asarray(v, dtype="<f4") for k, v in obs_rows.items()},
        actions=np.asarray(actions, dtype="<f4"),
        gt_stage_labels=np.asarray(labels, dtype="<i4"),
    )


# --- closed-loop evaluation ---------------------------------------------------


@dataclass
class RolloutResult:
    success: bool
    steps: int
    skill_trace: list[int] = field(default_factory=list)


def rollout(
    meta: MetaController,
    skills: list[SkillPolicy],
    spec: TaskSpec,
    seed: int,
    max_steps: int,
    noise_scale: float = 0.01,
) -> RolloutResult:
    """Closed-loop hierarchical execution; success when the goal predicate
    holds before `max_steps`. Deterministic per seed.
    """
    state = env_reset(spec, seed)
    rng = np.random.default_rng([_salt(spec.id), seed, 99])
    cache = None
    trace: list[int] = []
    for step in range(max_steps):
        obs = make_observation(state, rng, noise_scale)
        sv = observation_vector(obs)
        prev = cache
        action, cache = hier_act(meta, skills, sv, step, cache, rng)
        if cache is not prev:
            trace.append(cache[0])
        state = env_step(state, action)
        if spec.goal(state):
            return RolloutResult(True, step + 1, trace)
    return RolloutResult(False, max_steps, trace)


def replay_actions(spec: TaskSpec, seed: int, actions: np.ndarray) -> EnvState:
    """Apply recorded actions open-loop from the same reset (sanity path)."""
    state = env_reset(spec, seed)
    for action in np.asarray(actions, dtype=float):
        state = env_step(state, action)
    return state
