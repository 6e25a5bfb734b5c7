"""Scenario files: JSON schema, validation and world construction.

A scenario file looks like::

    {
      "name": "sanity",
      "nodes": [{"id": 0, "position": [0, 0]}, {"id": 3, "position": [2, 0, 0]}, ...],
      "edges": [[0, 1], {"between": [1, 2], "length": 1.5}, ...],
      "holes": [{"id": 0, "node": 3, "depth": 1.0}],
      "boxes": [{"id": 0, "node": 1, "height": 1.0}],
      "agents": [0],
      "goal": 8,
      "field": {"d_max": null, "b_decay": 0.9, "b_init": 1.0},
      "policy": {"epsilon0": 0.3, "epsilon_min": 0.05, "epsilon_decay": 0.995,
                 "beta": 8.0, "radius": 5.0},
      "max_steps": 20,
      "episodes": 10,
      "mode": "abstract",
      "seed": 0
    }

Positions may omit z. Edge lengths default to the Euclidean distance between the
end points. `agents` lists start nodes; agent ids are their list positions.
"""

import json
import logging
import os
from dataclasses import dataclass, field, fields, replace

from app.errors import ConfigurationError, ScenarioValidationError
from app.pheromones import FieldConfig
from app.policy import PolicyConfig
from app.world import (
    AgentRecord,
    AtNode,
    BoxRecord,
    EdgeRecord,
    HoleRecord,
    NodeRecord,
    WorldGraph,
    euclidean,
)

logger = logging.getLogger(__name__)

SCENARIO_DIR = os.path.join(
    os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "scenarios"
)
MODES = ("abstract", "embodied")

FIELD_KEYS = ("d_max", "b_decay", "b_init")
POLICY_KEYS = tuple(f.name for f in fields(PolicyConfig))
# names accepted in ablation grids and CLI overrides
OVERRIDE_KEYS = FIELD_KEYS + POLICY_KEYS + ("max_steps", "episodes", "seed")


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    nodes: tuple
    edges: tuple
    holes: tuple
    boxes: tuple
    agent_starts: tuple
    goal: int
    field_params: dict = field(default_factory=dict)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    max_steps: int = 20
    episodes: int = 10
    mode: str = "abstract"
    seed: int = 0

    def build_world(self):
        """Fresh world in the scenario's initial configuration."""
        node_holes = {h.node: h.id for h in self.holes}
        nodes = [replace(n, hole=node_holes.get(n.id)) for n in self.nodes]
        holes = [HoleRecord(h.id, h.node, h.depth) for h in self.holes]
        boxes = [BoxRecord(b.id, b.height, AtNode(b.location.node)) for b in self.boxes]
        agents = [AgentRecord(i, node) for i, node in enumerate(self.agent_starts)]
        return WorldGraph(
            nodes, self.edges, holes, boxes, agents, self.goal, d_max=self.field_params.get("d_max")
        )

    def field_config(self, world):
        params = {k: v for k, v in self.field_params.items() if k != "d_max"}
        return FieldConfig(d_max=world.d_max, **params)

    @property
    def hole_ids(self):
        return sorted(h.id for h in self.holes)


def _number(value, name, violations, integer=False):
    kind = int if integer else (int, float)
    if isinstance(value, bool) or not isinstance(value, kind):
        violations.append(f"{name} must be a {'integer' if integer else 'number'}, got {value!r}")
        return None
    return value


def _records(data, key, violations):
    value = data.get(key, [])
    if not isinstance(value, list):
        violations.append(f"'{key}' must be a list")
        return []
    return value


def scenario_from_dict(data, name=None):
    """Validate a decoded scenario document; every problem found is reported at once."""
    if not isinstance(data, dict):
        raise ScenarioValidationError(["scenario document must be a JSON object"])

    violations = []
    for key in ("nodes", "edges", "goal", "agents"):
        if key not in data:
            violations.append(f"missing required key '{key}'")
    unknown = set(data) - {
        "name", "nodes", "edges", "holes", "boxes", "agents", "goal", "field", "policy",
        "max_steps", "episodes", "mode", "seed", "description",
    }
    for key in sorted(unknown):
        violations.append(f"unknown key '{key}'")

    nodes = []
    for i, raw in enumerate(_records(data, "nodes", violations)):
        if not isinstance(raw, dict) or "id" not in raw or "position" not in raw:
            violations.append(f"node #{i} needs 'id' and 'position'")
            continue
        node_id = _number(raw["id"], f"node #{i} id", violations, integer=True)
        position = raw["position"]
        if not isinstance(position, list) or len(position) not in (2, 3):
            violations.append(f"node {raw['id']} position must have 2 or 3 coordinates")
            continue
        coords = [_number(c, f"node {raw['id']} coordinate", violations) for c in position]
        if node_id is None or None in coords:
            continue
        coords = [float(c) for c in coords] + [0.0] * (3 - len(coords))
        nodes.append(NodeRecord(node_id, tuple(coords)))
    positions = {n.id: n.position for n in nodes}

    edges = []
    for i, raw in enumerate(_records(data, "edges", violations)):
        length = None
        if isinstance(raw, dict):
            ends, length = raw.get("between"), raw.get("length")
        else:
            ends = raw
        if not isinstance(ends, list) or len(ends) != 2:
            violations.append(f"edge #{i} must join exactly two nodes")
            continue
        if any(n not in positions for n in ends):
            violations.append(f"edge #{i} {ends} references unknown node(s)")
            continue
        if length is None:
            length = euclidean(positions[ends[0]], positions[ends[1]])
        elif _number(length, f"edge #{i} length", violations) is None:
            continue
        edges.append(EdgeRecord(frozenset(ends), float(length)))

    holes = []
    for i, raw in enumerate(_records(data, "holes", violations)):
        if not isinstance(raw, dict) or not {"id", "node", "depth"} <= set(raw):
            violations.append(f"hole #{i} needs 'id', 'node' and 'depth'")
            continue
        if _number(raw["depth"], f"hole {raw['id']} depth", violations) is None:
            continue
        holes.append(HoleRecord(raw["id"], raw["node"], float(raw["depth"])))

    boxes = []
    for i, raw in enumerate(_records(data, "boxes", violations)):
        if not isinstance(raw, dict) or not {"id", "node", "height"} <= set(raw):
            violations.append(f"box #{i} needs 'id', 'node' and 'height'")
            continue
        if _number(raw["height"], f"box {raw['id']} height", violations) is None:
            continue
        boxes.append(BoxRecord(raw["id"], float(raw["height"]), AtNode(raw["node"])))

    hole_nodes = {h.node for h in holes}
    for b in boxes:
        if b.location.node in hole_nodes:
            violations.append(f"box {b.id} starts on hole node {b.location.node}")
    agents = data.get("agents", [])
    if not isinstance(agents, list) or not agents:
        violations.append("'agents' must list at least one start node")
        agents = []
    for node in agents:
        if node in hole_nodes:
            violations.append(f"an agent starts on hole node {node}")

    field_params = data.get("field", {}) or {}
    for key in sorted(set(field_params) - set(FIELD_KEYS)):
        violations.append(f"unknown field parameter '{key}'")
    field_params = {k: v for k, v in field_params.items() if k in FIELD_KEYS and v is not None}

    policy_params = data.get("policy", {}) or {}
    for key in sorted(set(policy_params) - set(POLICY_KEYS)):
        violations.append(f"unknown policy parameter '{key}'")
    policy = PolicyConfig()
    try:
        policy = PolicyConfig(**{k: v for k, v in policy_params.items() if k in POLICY_KEYS})
    except ConfigurationError as e:
        violations.append(str(e))

    max_steps = _number(data.get("max_steps", 20), "max_steps", violations, integer=True)
    if max_steps is not None and max_steps <= 0:
        violations.append(f"max_steps must be positive, got {max_steps}")
    episodes = _number(data.get("episodes", 10), "episodes", violations, integer=True)
    if episodes is not None and episodes <= 0:
        violations.append(f"episodes must be positive, got {episodes}")
    seed = _number(data.get("seed", 0), "seed", violations, integer=True)
    mode = data.get("mode", "abstract")
    if mode not in MODES:
        violations.append(f"mode must be one of {', '.join(MODES)}, got {mode!r}")

    spec = ScenarioSpec(
        name=data.get("name", name or "scenario"),
        nodes=tuple(nodes),
        edges=tuple(edges),
        holes=tuple(holes),
        boxes=tuple(boxes),
        agent_starts=tuple(agents),
        goal=data.get("goal"),
        field_params=field_params,
        policy=policy,
        max_steps=max_steps or 1,
        episodes=episodes or 1,
        mode=mode,
        seed=seed or 0,
    )

    if not violations:
        try:
            world = spec.build_world()
            spec.field_config(world)
        except ScenarioValidationError as e:
            violations.extend(e.violations)
        except ConfigurationError as e:
            violations.append(str(e))

    if violations:
        logger.error(f"Scenario {spec.name} has {len(violations)} problem(s)")
        raise ScenarioValidationError(violations)
    return spec


def load_scenario(path):
    """Load a scenario file, or a shipped scenario by name (``sanity``, ``easy`` ...)."""
    if not os.path.exists(path) and os.path.exists(scenario_path(path)):
        path = scenario_path(path)
    with open(path) as handle:
        try:
            data = json.load(handle)
        except json.JSONDecodeError as e:
            raise ScenarioValidationError([f"{path} is not valid JSON: {e}"]) from e
    name = os.path.splitext(os.path.basename(path))[0]
    return scenario_from_dict(data, name=name)


def scenario_path(name):
    return os.path.join(SCENARIO_DIR, f"{name}.json")


def with_overrides(spec, overrides):
    """Copy of `spec` with field, policy and run parameters replaced."""
    unknown = set(overrides) - set(OVERRIDE_KEYS)
    if unknown:
        raise ConfigurationError(f"unknown scenario parameter(s): {', '.join(sorted(unknown))}")

    field_params = dict(spec.field_params)
    field_params.update({k: v for k, v in overrides.items() if k in FIELD_KEYS})
    policy = replace(spec.policy, **{k: v for k, v in overrides.items() if k in POLICY_KEYS})
    run = {k: v for k, v in overrides.items() if k in ("max_steps", "episodes", "seed")}
    if run.get("max_steps", spec.max_steps) <= 0:
        raise ConfigurationError("max_steps must be positive")
    return replace(spec, field_params=field_params, policy=policy, **run)


def load_grid(path):
    """Ablation grid file: a JSON object mapping parameter names to value lists."""
    with open(path) as handle:
        try:
            grid = json.load(handle)
        except json.JSONDecodeError as e:
            raise ScenarioValidationError([f"{path} is not valid JSON: {e}"]) from e
    violations = []
    if not isinstance(grid, dict) or not grid:
        violations.append("grid must be a non-empty JSON object")
    else:
        for key, values in grid.items():
            if key not in OVERRIDE_KEYS:
                violations.append(f"unknown grid parameter '{key}'")
            if not isinstance(values, list) or not values:
                violations.append(f"grid parameter '{key}' needs a non-empty list of values")
    if violations:
        raise ScenarioValidationError(violations)
    return grid
