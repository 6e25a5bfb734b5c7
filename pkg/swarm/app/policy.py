"""Per-agent decision rule: collision-safe moves, box/hole candidates and the
explore/exploit pheromone policy."""

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np
from app.errors import BoxStateError, ConfigurationError
from app.world import AtNode, Pushing

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PolicyConfig:
    epsilon0: float = 0.3
    epsilon_min: float = 0.05
    epsilon_decay: float = 0.995
    beta: float = 8.0
    radius: float = 5.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon_min <= self.epsilon0 <= 1.0:
            raise ConfigurationError(
                f"need 0 <= epsilon_min <= epsilon0 <= 1, got {self.epsilon_min}, {self.epsilon0}"
            )
        if not 0.0 < self.epsilon_decay <= 1.0:
            raise ConfigurationError(f"epsilon_decay must lie in (0, 1], got {self.epsilon_decay}")
        if not self.beta > 0:
            raise ConfigurationError(f"beta must be positive, got {self.beta}")
        if not self.radius >= 0:
            raise ConfigurationError(f"radius must be non-negative, got {self.radius}")


@dataclass(frozen=True)
class Move:
    target: int


@dataclass(frozen=True)
class Claim:
    box: int
    hole: int
    # starts on the box's node, ends on the hole's node
    path: tuple[int, ...]


@dataclass(frozen=True)
class ContinuePush:
    pass


@dataclass(frozen=True)
class Wait:
    # True while a push is only paused for a blocked next node
    holding: bool = False


AgentDecision = Union[Move, Claim, ContinuePush, Wait]


def decision_label(decision):
    if isinstance(decision, Move):
        return f"move:{decision.target}"
    if isinstance(decision, Claim):
        return f"claim:{decision.box}->{decision.hole}"
    if isinstance(decision, ContinuePush):
        return "continue_push"
    return "wait"


def softmax(values, beta):
    """Max-shifted softmax of beta * values."""
    z = beta * np.asarray(values, dtype=float)
    z = z - z.max()
    weights = np.exp(z)
    return weights / weights.sum()


def allowed_moves(world, agent_id):
    agent = world.agent(agent_id)
    others = {a.node for a in world.agents.values() if not a.arrived and a.id != agent_id}

    allowed = set()
    for n in world.reachable_neighbors(agent.node):
        if n in others:
            continue
        if any(m in others for m in world.neighbors(n) if m != agent.node):
            continue
        allowed.add(n)
    return allowed


def _claimed_by_others(world, agent_id):
    return {
        a.activity.box
        for a in world.agents.values()
        if a.id != agent_id and isinstance(a.activity, Pushing)
    }


def box_candidate(world, agent_id, radius):
    agent = world.agent(agent_id)
    claimed = _claimed_by_others(world, agent_id)
    boxes = world.at_node_boxes()

    best = None
    for node, (dist, _) in world.distances_from(agent.node, max_radius=radius).items():
        box_id = boxes.get(node)
        if box_id is None or box_id in claimed:
            continue
        if best is None or (dist, box_id) < best:
            best = (dist, box_id)
    return None if best is None else best[1]


def hole_candidates(world, field, box_id, agent_id, radius):
    box = world.box(box_id)
    if not isinstance(box.location, AtNode):
        raise BoxStateError(f"box {box_id} is not on a node")
    node = box.location.node

    found = set(world.holes_within(node, radius))
    for m in world.reachable_neighbors(node):
        found.update(j for j, value in field.nodes[m].H.items() if value > 0.0)
    return found


def _pushable_holes(world, field, box_id, agent_id, config, feasible):
    options = {}
    for hole_id in sorted(hole_candidates(world, field, box_id, agent_id, config.radius)):
        found = world.push_path(box_id, hole_id)
        if found is None:
            continue
        path = found[0]
        if feasible is not None and not feasible(world, agent_id, box_id, path[1]):
            continue
        options[hole_id] = path
    return options


def _claimable_box_at(world, agent_id, node):
    box_id = world.at_node_boxes().get(node)
    if box_id is None or box_id in _claimed_by_others(world, agent_id):
        return None
    return box_id


def _continue_push(world, agent, feasible):
    """ContinuePush, a holding Wait, or None when the push has to be abandoned."""
    push = agent.activity
    box = world.box(push.box)
    if not isinstance(box.location, AtNode) or not push.remaining:
        return None
    box_node = box.location.node
    if agent.node != box_node:
        return None

    hole = world.hole(push.hole)
    nxt = push.remaining[0]
    if nxt == hole.node:
        if len(push.remaining) != 1 or not world.graph.has_edge(box_node, nxt):
            return None
        if feasible is not None and not feasible(world, agent.id, box.id, nxt):
            return None
        return ContinuePush()

    if not world.is_reachable(box_node, nxt) or world.box_at(nxt) is not None:
        return None
    if feasible is not None and not feasible(world, agent.id, box.id, nxt):
        return None
    if nxt not in allowed_moves(world, agent.id):
        return Wait(holding=True)
    return ContinuePush()


def _explore(world, field, agent, allowed, config, rng, feasible):
    targets = sorted(allowed)
    probs = softmax([-field.nodes[n].E for n in targets], config.beta)
    target = targets[rng.choice(len(targets), p=probs)]

    box_id = _claimable_box_at(world, agent.id, target)
    if box_id is not None:
        options = _pushable_holes(world, field, box_id, agent.id, config, feasible)
        if options:
            holes = sorted(options)
            hole_id = holes[rng.integers(len(holes))]
            return Claim(box_id, hole_id, tuple(options[hole_id]))
    return Move(target)


def _approach(world, agent, allowed, box_id, hole_id, path):
    box_node = path[0]
    if box_node == agent.node or box_node in allowed:
        return Claim(box_id, hole_id, tuple(path))

    route = world.shortest_path(agent.node, box_node)
    if route is None or not route[0]:
        return Wait()
    first = route[0][0]
    return Move(first) if first in allowed else Wait()


def _exploit(world, field, agent, allowed, config, rng, feasible):
    targets = sorted(allowed)
    # D gain over the current node, on the same scale as the box values
    here = field.nodes[agent.node].D
    values = [field.nodes[n].D - here for n in targets]

    box_option = None
    box_id = box_candidate(world, agent.id, config.radius)
    if box_id is not None:
        options = _pushable_holes(world, field, box_id, agent.id, config, feasible)
        if options:
            holes = sorted(options)
            hole_probs = softmax([field.box_value(box_id, h) for h in holes], config.beta)
            hole_id = holes[rng.choice(len(holes), p=hole_probs)]
            box_option = (box_id, hole_id, options[hole_id])
            values.append(field.box_value(box_id, hole_id))

    if not values:
        return Wait()
    pick = rng.choice(len(values), p=softmax(values, config.beta))
    if pick < len(targets):
        return Move(targets[pick])
    return _approach(world, agent, allowed, *box_option)


def decide(world, field, agent_id, config, epsilon, rng, feasible=None):
    """Choose the next action of one agent against a world snapshot.

    `feasible(world, agent_id, box_id, next_node)` gates push segments in embodied
    runs. Returns the decision and the (possibly decayed) exploration rate.
    """
    agent = world.agent(agent_id)

    if isinstance(agent.activity, Pushing):
        decision = _continue_push(world, agent, feasible)
        if decision is not None:
            return decision, epsilon
        logger.debug(f"Agent {agent_id} abandons push of box {agent.activity.box}")

    allowed = allowed_moves(world, agent_id)
    if not allowed:
        return Wait(), epsilon

    if rng.random() < epsilon:
        decision = _explore(world, field, agent, allowed, config, rng, feasible)
        return decision, max(config.epsilon_min, epsilon * config.epsilon_decay)

    return _exploit(world, field, agent, allowed, config, rng, feasible), epsilon
