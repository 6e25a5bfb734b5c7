"""Embodied-mode glue between the node world and the kinematic arena.

Node-to-node travel is scripted (turn towards the next node, then drive). A box push
along one edge runs a short arena episode in a segment-local frame: the box at the
origin, the next node on +x and the agent right behind the box.
"""

import logging
import math

import numpy as np
from app.arena import (
    ArenaState,
    EnvKind,
    Flat,
    Hole,
    KinematicArena,
    Pose,
    Slope,
    behind_box,
    bearing_error,
    observe,
    reorient_control,
    travel_control,
    wrap_angle,
)
from app.forest import predict
from app.hddqn import rollout

logger = logging.getLogger(__name__)

HEADING_TOLERANCE = 0.05
ARRIVAL_RADIUS = 0.1
MAX_DEVIATION = 0.6
SLOPE_RISE = 0.05
SEGMENT_GAP = 0.1
TRAVEL_TIMEOUT = 120.0


def scripted_travel(start, target, yaw, config, gains):
    """Drive from `start` to `target` on flat ground.

    Returns (elapsed seconds, final yaw). Gives up after TRAVEL_TIMEOUT seconds.
    """
    pose = Pose(x=float(start[0]), y=float(start[1]), yaw=yaw)
    target = np.asarray(target[:2], dtype=float)
    elapsed = 0.0
    while np.linalg.norm(target - pose.xy) > ARRIVAL_RADIUS:
        if elapsed >= TRAVEL_TIMEOUT:
            logger.warning(f"Scripted travel to {tuple(target)} timed out at {tuple(pose.xy)}")
            break
        error = bearing_error(pose, target)
        if abs(error) > math.pi / 2.0:
            # full-rate spin, the proportional law stalls at error = pi
            wl, wr = reorient_control(math.pi if error > 0 else 0.0, gains.rotate)
        elif abs(error) > HEADING_TOLERANCE:
            wl, wr = reorient_control(error + math.pi / 2.0, gains.rotate)
        else:
            wl, wr = travel_control(error, gains.travel)
        v = config.wheel_radius * (wl + wr) / 2.0
        w = config.wheel_radius * (wr - wl) / config.track_width
        pose = Pose(
            x=pose.x + v * math.cos(pose.yaw) * config.dt,
            y=pose.y + v * math.sin(pose.yaw) * config.dt,
            yaw=pose.yaw + w * config.dt,
        )
        elapsed += config.dt
    return elapsed, pose.yaw


def heading(a, b):
    return math.atan2(b[1] - a[1], b[0] - a[0])


def approach_deviation(world, from_node, box_node, next_node):
    """Turn between arriving at the box and pushing it on, clamped to +-MAX_DEVIATION."""
    if from_node is None or from_node == box_node:
        return 0.0
    arrive = heading(world.position(from_node), world.position(box_node))
    push = heading(world.position(box_node), world.position(next_node))
    return float(np.clip(wrap_angle(arrive - push), -MAX_DEVIATION, MAX_DEVIATION))


def segment_kind(world, box_node, next_node):
    if world.hole_at(next_node) is not None and not world.is_flush(next_node):
        return EnvKind.HOLE
    rise = world.position(next_node)[2] - world.position(box_node)[2]
    if abs(rise) > SLOPE_RISE:
        return EnvKind.SLOPE
    return EnvKind.FLAT


def segment_state(world, box_node, next_node, deviation, config):
    """Arena state for pushing the box one edge: box at origin, next node on +x."""
    kind = segment_kind(world, box_node, next_node)
    a, b = world.position(box_node), world.position(next_node)
    length = float(np.hypot(b[0] - a[0], b[1] - a[1]))

    goal_z = 0.0
    if kind is EnvKind.HOLE:
        terrain = Hole(center=(length, 0.0), side=config.hole_side, depth=config.hole_depth)
    elif kind is EnvKind.SLOPE:
        # descents run as the mirrored climb
        incline = math.atan2(abs(b[2] - a[2]), length)
        terrain = Slope(start_x=0.0, length=length, incline=incline)
        goal_z = terrain.height(length)
    else:
        terrain = Flat()

    agent_xy = behind_box((0.0, 0.0), (1.0, 0.0), SEGMENT_GAP, config)
    state = ArenaState(
        kind=kind,
        agent=Pose(x=float(agent_xy[0]), y=0.0, z=config.agent_height / 2.0, yaw=deviation),
        box=Pose(x=0.0, y=0.0, z=config.box_height / 2.0, yaw=0.0),
        box_extents=(config.box_size, config.box_size),
        goal=(length, 0.0, goal_z),
        terrain=terrain,
        start=(0.0, 0.0),
    )
    return state


def run_push_segment(controller, state, arena, rng):
    """Execute the controller until the segment terminates.

    Returns (trajectory, elapsed seconds).
    """
    trajectory = rollout(controller, arena, state.kind, rng, initial=state)
    elapsed = len(trajectory.actions) * arena.config.inner_steps * arena.config.dt
    return trajectory, elapsed


class FeasibilityGate(object):
    """Classifier-backed push filter for the policy.

    `came_from` maps an agent pushing a box to the node the box was pushed from, so
    the deviation of a continued push follows the path's turn.
    """

    def __init__(self, model, arena=None):
        self.model = model
        self.arena = arena or KinematicArena()
        self.came_from = {}
        self.rejections = 0

    def __call__(self, world, agent_id, box_id, next_node):
        box_node = world.box(box_id).location.node
        agent = world.agent(agent_id)
        origin = agent.node if agent.node != box_node else self.came_from.get(agent_id)
        deviation = approach_deviation(world, origin, box_node, next_node)
        state = segment_state(world, box_node, next_node, deviation, self.arena.config)
        label, votes = predict(self.model, observe(state))
        if not label:
            self.rejections += 1
            logger.debug(
                f"Gate rejects agent {agent_id} pushing box {box_id} {box_node}->{next_node} "
                f"({votes:.2f} of trees agree)"
            )
        return bool(label)


class AcceptAll(object):
    """Gate used with the scripted oracle pusher."""

    rejections = 0

    def __init__(self):
        self.came_from = {}

    def __call__(self, world, agent_id, box_id, next_node):
        return True
