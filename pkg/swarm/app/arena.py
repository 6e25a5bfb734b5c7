"""Desk-scale differential-drive arena with one pushable box.

Three terrains (flat, slope, hole), eight macro-actions built from reorient, travel
and align feedback controls, the shaped reward and the success/failure rules.
"""

import csv
import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np
from app.errors import ConfigurationError, NumericError

logger = logging.getLogger(__name__)

SUCCESS_DISTANCE = 0.2
HEIGHT_THRESHOLD = 0.2
SUCCESS_YAW = 0.2
FAILURE_YAW = 0.3
FAILURE_DISTANCE = 5.0
REJECTION_BUDGET = 100


class MacroAction(enum.IntEnum):
    MOVE_BACKWARDS = 0
    APPROACH = 1
    ANGLE_TOWARDS_BOX = 2
    ALIGN = 3
    PUSH_IN = 4
    PUSH_LEFT = 5
    PUSH_RIGHT = 6
    ANGLE_TOWARDS_GOAL = 7


REORIENT_ACTIONS = frozenset({MacroAction.ANGLE_TOWARDS_BOX, MacroAction.ANGLE_TOWARDS_GOAL})
TRAVEL_ACTIONS = frozenset(
    {MacroAction.APPROACH, MacroAction.PUSH_IN, MacroAction.PUSH_LEFT, MacroAction.PUSH_RIGHT}
)


class EnvKind(str, enum.Enum):
    FLAT = "flat"
    SLOPE = "slope"
    HOLE = "hole"


MAX_STEPS = {EnvKind.HOLE: 50, EnvKind.FLAT: 50, EnvKind.SLOPE: 100}


class Status(enum.Enum):
    RUNNING = "running"
    SUCCESS = "success"
    FAILURE = "failure"


def wrap_angle(angle):
    """Normalize to (-pi, pi]."""
    return math.pi - ((math.pi - angle) % (2.0 * math.pi))


def wrap_quarter(angle):
    """Normalize to [-pi/4, pi/4); a square box looks the same every quarter turn."""
    return ((angle + math.pi / 4.0) % (math.pi / 2.0)) - math.pi / 4.0


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    z: float = 0.0
    yaw: float = 0.0
    pitch: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def xy(self):
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Flat:
    pass


@dataclass(frozen=True)
class Slope:
    start_x: float
    length: float
    incline: float

    def height(self, x):
        return min(max(x - self.start_x, 0.0), self.length) * math.tan(self.incline)

    def covers(self, x):
        return self.start_x < x < self.start_x + self.length


@dataclass(frozen=True)
class Hole:
    center: tuple[float, float]
    side: float
    depth: float

    def covers(self, x, y):
        half = self.side / 2.0
        return abs(x - self.center[0]) < half and abs(y - self.center[1]) < half


Terrain = Union[Flat, Slope, Hole]


@dataclass(frozen=True)
class ControlGains:
    rotate: float = 1.0
    travel: float = 1.0
    align: float = 1.0

    def __post_init__(self):
        if min(self.rotate, self.travel, self.align) <= 0:
            raise ConfigurationError(f"control gains must be positive: {self}")


@dataclass(frozen=True)
class KinematicsConfig:
    wheel_radius: float = 0.1
    track_width: float = 0.4
    dt: float = 0.05
    inner_steps: int = 50
    agent_length: float = 0.6
    agent_width: float = 0.4
    agent_height: float = 0.6
    box_size: float = 0.5
    box_height: float = 0.5
    hole_side: float = 1.0
    hole_depth: float = 0.5
    incline: float = math.radians(15.0)
    slope_length: float = 2.0
    # downhill creep of the agent while on the incline, m/s
    slope_drift: float = 0.01
    contact_rotation: float = 0.5
    max_steps: dict = field(default_factory=lambda: dict(MAX_STEPS))

    def __post_init__(self):
        positive = (
            self.wheel_radius,
            self.track_width,
            self.dt,
            self.inner_steps,
            self.agent_length,
            self.agent_width,
            self.box_size,
            self.hole_side,
            self.hole_depth,
        )
        if min(positive) <= 0:
            raise ConfigurationError(f"kinematics constants must be positive: {self}")


@dataclass(frozen=True)
class ArenaState:
    kind: EnvKind
    agent: Pose
    box: Pose
    box_extents: tuple[float, float]
    goal: tuple[float, float, float]
    terrain: Terrain
    # where the box started; agent and box yaw are measured against the start -> goal line
    start: tuple[float, float]
    step_count: int = 0
    agent_fallen: bool = False
    box_fallen: bool = False

    @property
    def goal_xy(self):
        return np.array(self.goal[:2])


def box_goal_distance(state):
    return float(np.linalg.norm(state.goal_xy - state.box.xy))


def box_heading_error(state):
    """Yaw of the box face nearest the start -> goal line, relative to that line."""
    line = state.goal_xy - np.asarray(state.start)
    if not np.any(line):
        line = state.goal_xy - state.box.xy
    return wrap_quarter(math.atan2(line[1], line[0]) - state.box.yaw)


def bearing_error(pose, point):
    delta = np.asarray(point) - pose.xy
    return wrap_angle(math.atan2(delta[1], delta[0]) - pose.yaw)


def _goal_direction(state):
    delta = state.goal_xy - state.box.xy
    norm = np.linalg.norm(delta)
    if norm == 0.0:
        return np.array([math.cos(state.box.yaw), math.sin(state.box.yaw)])
    return delta / norm


def reference_point(action, state):
    action = MacroAction(action)
    if action is MacroAction.MOVE_BACKWARDS:
        return None
    if action in (MacroAction.APPROACH, MacroAction.ANGLE_TOWARDS_BOX):
        return state.box.xy
    if action in (MacroAction.PUSH_IN, MacroAction.ANGLE_TOWARDS_GOAL):
        return state.goal_xy

    u = _goal_direction(state)
    if action is MacroAction.ALIGN:
        t = float(np.dot(state.agent.xy - state.box.xy, u))
        return state.box.xy + t * u

    left = np.array([-u[1], u[0]])
    offset = state.box_extents[1] / 2.0
    if action is MacroAction.PUSH_LEFT:
        return state.box.xy + offset * left
    return state.box.xy - offset * left


def reorient_control(theta, gain):
    return gain * math.cos(theta), -gain * math.cos(theta)


def travel_control(error, gain):
    alpha = math.cos(error) - math.sin(error)
    theta = math.cos(error) + math.sin(error)
    return gain * alpha, gain * theta


def wheel_frequencies(action, state, gains):
    action = MacroAction(action)
    if action is MacroAction.MOVE_BACKWARDS:
        return -gains.travel, -gains.travel

    ref = reference_point(action, state)
    error = bearing_error(state.agent, ref)
    if action in REORIENT_ACTIONS:
        # the reorient angle is measured from the agent's right-hand axis
        return reorient_control(error + math.pi / 2.0, gains.rotate)
    if action is MacroAction.ALIGN:
        dist = float(np.linalg.norm(ref - state.agent.xy))
        left, right = travel_control(error, gains.align)
        return left * dist, right * dist
    return travel_control(error, gains.travel)


def terrain_height(terrain, x):
    if isinstance(terrain, Slope):
        return terrain.height(x)
    return 0.0


def terrain_pitch(terrain, x):
    if isinstance(terrain, Slope) and terrain.covers(x):
        return terrain.incline
    return 0.0


def _front_contact(agent, box, extents, config):
    """Deepest point of the agent's front segment inside the box.

    Returns (point, depth, push direction) or None.
    """
    heading = np.array([math.cos(agent.yaw), math.sin(agent.yaw)])
    lateral = np.array([-heading[1], heading[0]])
    front = agent.xy + (config.agent_length / 2.0) * heading
    half_width = config.agent_width / 2.0
    points = (front, front + half_width * lateral, front - half_width * lateral)

    ex = np.array([math.cos(box.yaw), math.sin(box.yaw)])
    ey = np.array([-ex[1], ex[0]])
    hx, hy = extents[0] / 2.0, extents[1] / 2.0

    best = None
    for point in points:
        rel = point - box.xy
        lx, ly = float(np.dot(rel, ex)), float(np.dot(rel, ey))
        px, py = hx - abs(lx), hy - abs(ly)
        if px <= 0.0 or py <= 0.0:
            continue
        if px <= py:
            depth, outward = px, (1.0 if lx >= 0 else -1.0) * ex
        else:
            depth, outward = py, (1.0 if ly >= 0 else -1.0) * ey
        if best is None or depth > best[1]:
            best = (point, depth, -outward)
    return best


def _check_finite(*values):
    for value in values:
        if not math.isfinite(value):
            raise NumericError(f"non-finite value in kinematics: {values}")


def step_kinematics(state, wheels, dt, config):
    """One inner integration step of agent motion, box contact and falls."""
    if not dt > 0:
        raise NumericError(f"dt must be positive, got {dt}")
    wl, wr = wheels
    agent, box = state.agent, state.box
    _check_finite(wl, wr, dt, agent.x, agent.y, agent.yaw, box.x, box.y, box.yaw)

    if state.agent_fallen:
        return state

    terrain = state.terrain
    v = config.wheel_radius * (wl + wr) / 2.0
    w = config.wheel_radius * (wr - wl) / config.track_width

    heading = np.array([math.cos(agent.yaw), math.sin(agent.yaw)])
    velocity = v * heading
    if isinstance(terrain, Slope) and terrain.covers(agent.x):
        velocity = velocity * math.cos(terrain.incline) - np.array([config.slope_drift, 0.0])

    xy = agent.xy + velocity * dt
    agent = Pose(
        x=float(xy[0]),
        y=float(xy[1]),
        z=terrain_height(terrain, xy[0]) + config.agent_height / 2.0,
        yaw=agent.yaw + w * dt,
        pitch=terrain_pitch(terrain, xy[0]),
    )

    box_fallen = state.box_fallen
    if not box_fallen:
        contact = _front_contact(agent, box, state.box_extents, config)
        if contact is not None and float(np.dot(velocity, contact[2])) > 0.0:
            point, depth, direction = contact
            shift = depth * direction
            arm = point - box.xy
            gyration = (state.box_extents[0] ** 2 + state.box_extents[1] ** 2) / 12.0
            turn = config.contact_rotation * (arm[0] * shift[1] - arm[1] * shift[0]) / gyration
            centre = box.xy + shift
            box = Pose(
                x=float(centre[0]),
                y=float(centre[1]),
                z=terrain_height(terrain, centre[0]) + config.box_height / 2.0,
                yaw=box.yaw + turn,
                pitch=terrain_pitch(terrain, centre[0]),
            )

        if isinstance(terrain, Hole) and terrain.covers(box.x, box.y):
            box = Pose(
                x=terrain.center[0],
                y=terrain.center[1],
                z=config.box_height / 2.0 - terrain.depth,
                yaw=box.yaw,
            )
            box_fallen = True

    agent_fallen = False
    if isinstance(terrain, Hole) and not box_fallen and terrain.covers(agent.x, agent.y):
        agent = replace(agent, z=config.agent_height / 2.0 - terrain.depth)
        agent_fallen = True

    return replace(state, agent=agent, box=box, agent_fallen=agent_fallen, box_fallen=box_fallen)


def observe(state):
    """Agent-frame observation: box offset, box pitch and yaw, goal offset, agent yaw, pad."""
    agent = state.agent
    c, s = math.cos(-agent.yaw), math.sin(-agent.yaw)
    rotation = np.array([[c, -s], [s, c]])

    box_rel = rotation @ (state.box.xy - agent.xy)
    goal_rel = rotation @ (state.goal_xy - agent.xy)
    line = state.goal_xy - np.asarray(state.start)
    line_yaw = math.atan2(line[1], line[0])

    return np.array(
        [
            box_rel[0],
            box_rel[1],
            state.box.z - agent.z,
            state.box.pitch,
            wrap_angle(state.box.yaw - agent.yaw),
            goal_rel[0],
            goal_rel[1],
            state.goal[2] - agent.z,
            wrap_angle(agent.yaw - line_yaw),
            1.0,
        ]
    )


def macro_step(state, action, config, gains):
    """Run one macro-action for T inner steps with feedback recomputed each step."""
    action = MacroAction(action)
    for _ in range(config.inner_steps):
        wheels = wheel_frequencies(action, state, gains)
        state = step_kinematics(state, wheels, config.dt, config)
    state = replace(state, step_count=state.step_count + 1)
    return state, observe(state)


def shaped_reward(d_prev, beta_prev, d_curr, beta_curr):
    return (d_prev - d_curr) * 5.0 + (abs(beta_prev) - abs(beta_curr)) * 2.0 - 0.1


def reward(prev, curr):
    return shaped_reward(
        box_goal_distance(prev),
        box_heading_error(prev),
        box_goal_distance(curr),
        box_heading_error(curr),
    )


def check_termination(kind, state, max_steps=None):
    kind = EnvKind(kind)
    limits = max_steps or MAX_STEPS
    distance = box_goal_distance(state)

    if kind is EnvKind.HOLE:
        box_height, agent_height = state.box.z, state.agent.z
        if (
            distance <= SUCCESS_DISTANCE
            and box_height < HEIGHT_THRESHOLD
            and agent_height > HEIGHT_THRESHOLD
        ):
            return Status.SUCCESS
        if (distance > SUCCESS_DISTANCE and box_height < HEIGHT_THRESHOLD) or (
            agent_height < HEIGHT_THRESHOLD
        ):
            return Status.FAILURE
    else:
        yaw = abs(box_heading_error(state))
        if distance <= SUCCESS_DISTANCE and yaw < SUCCESS_YAW:
            return Status.SUCCESS
        if distance > FAILURE_DISTANCE or yaw > FAILURE_YAW:
            return Status.FAILURE

    if state.step_count >= limits[kind]:
        return Status.FAILURE
    return Status.RUNNING


def _corners(center, yaw, length, width):
    u = np.array([math.cos(yaw), math.sin(yaw)])
    v = np.array([-u[1], u[0]])
    return [
        center + sx * (length / 2.0) * u + sy * (width / 2.0) * v
        for sx in (1.0, -1.0)
        for sy in (1.0, -1.0)
    ]


def rectangles_overlap(a, b):
    """Separating-axis test for two (center, yaw, length, width) rectangles."""
    corners_a, corners_b = _corners(*a), _corners(*b)
    for yaw in (a[1], a[1] + math.pi / 2.0, b[1], b[1] + math.pi / 2.0):
        axis = np.array([math.cos(yaw), math.sin(yaw)])
        pa = [float(np.dot(p, axis)) for p in corners_a]
        pb = [float(np.dot(p, axis)) for p in corners_b]
        if max(pa) < min(pb) or max(pb) < min(pa):
            return False
    return True


def behind_box(box_xy, direction, gap, config):
    """Planar position that puts the agent's front `gap` meters behind the box."""
    standoff = config.agent_length / 2.0 + config.box_size / 2.0 + gap
    return np.asarray(box_xy) - standoff * np.asarray(direction)


def _draw(kind, rng, config):
    if kind is EnvKind.SLOPE:
        terrain = Slope(start_x=0.0, length=config.slope_length, incline=config.incline)
        top = terrain.height(config.slope_length)
        goal_xy = np.array([config.slope_length + 0.6, rng.uniform(-0.3, 0.3)])
        box_xy = np.array([rng.uniform(-1.0, -0.5), goal_xy[1] + rng.uniform(-0.2, 0.2)])
        goal_z = top
    else:
        goal_xy = rng.uniform(-2.0, 2.0, size=2)
        phi = rng.uniform(-math.pi, math.pi)
        low = 1.0 if kind is EnvKind.FLAT else 1.2
        dist = rng.uniform(low, 2.5)
        box_xy = goal_xy - dist * np.array([math.cos(phi), math.sin(phi)])
        goal_z = 0.0
        if kind is EnvKind.HOLE:
            terrain = Hole(
                center=(float(goal_xy[0]), float(goal_xy[1])),
                side=config.hole_side,
                depth=config.hole_depth,
            )
        else:
            terrain = Flat()

    delta = goal_xy - box_xy
    phi = math.atan2(delta[1], delta[0])
    direction = np.array([math.cos(phi), math.sin(phi)])
    agent_xy = behind_box(box_xy, direction, rng.uniform(0.1, 0.5), config)

    agent = Pose(
        x=float(agent_xy[0]),
        y=float(agent_xy[1]),
        z=terrain_height(terrain, agent_xy[0]) + config.agent_height / 2.0,
        yaw=phi + rng.uniform(-0.5, 0.5),
        pitch=terrain_pitch(terrain, agent_xy[0]),
    )
    box = Pose(
        x=float(box_xy[0]),
        y=float(box_xy[1]),
        z=terrain_height(terrain, box_xy[0]) + config.box_height / 2.0,
        yaw=phi + rng.uniform(-0.1, 0.1),
        pitch=terrain_pitch(terrain, box_xy[0]),
    )
    return ArenaState(
        kind=kind,
        agent=agent,
        box=box,
        box_extents=(config.box_size, config.box_size),
        goal=(float(goal_xy[0]), float(goal_xy[1]), float(goal_z)),
        terrain=terrain,
        start=(float(box_xy[0]), float(box_xy[1])),
    )


def overlapping(state, config):
    return rectangles_overlap(
        (state.agent.xy, state.agent.yaw, config.agent_length, config.agent_width),
        (state.box.xy, state.box.yaw, state.box_extents[0], state.box_extents[1]),
    )


def sample_initial(kind, rng, config):
    kind = EnvKind(kind)
    for _ in range(REJECTION_BUDGET):
        state = _draw(kind, rng, config)
        if not overlapping(state, config):
            return state
    raise ConfigurationError(
        f"could not place agent and box apart in {REJECTION_BUDGET} draws for {kind.value}"
    )


class KinematicArena(object):
    def __init__(self, config=None, gains=None):
        self.config = config or KinematicsConfig()
        self.gains = gains or ControlGains()

    def reset(self, kind, rng):
        state = sample_initial(kind, rng, self.config)
        return state, observe(state)

    def step(self, state, action):
        nxt, observation = macro_step(state, action, self.config, self.gains)
        status = check_termination(nxt.kind, nxt, self.config.max_steps)
        return nxt, observation, reward(state, nxt), status


TRAJECTORY_COLUMNS = ["episode", "step", "action"] + [f"s{i}" for i in range(10)] + [
    "reward",
    "status",
]


def write_trajectory_csv(path, rows):
    """rows: iterables of (episode, step, action, observation, reward, status)."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(TRAJECTORY_COLUMNS)
        for episode, step, action, observation, value, status in rows:
            writer.writerow(
                [episode, step, int(action)]
                + [repr(float(x)) for x in observation]
                + [repr(float(value)), Status(status).value]
            )
