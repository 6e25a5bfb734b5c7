"""Discretized environment: nodes, edges, holes, boxes, agents and traversability.

The world is single-writer. `snapshot()` hands out value copies that share the
immutable topology (nodes, edges, graph) and copy only holes, boxes and agents.
"""

import heapq
import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import networkx as nx
import numpy as np
from app.errors import BoxStateError, PlacementError, ScenarioValidationError, UnknownEntityError

logger = logging.getLogger(__name__)

H_TOL = 0.2
D_MAX_FACTOR = 1.5
RADIUS_EPS = 1e-9


@dataclass(frozen=True)
class NodeRecord:
    id: int
    position: tuple[float, float, float]
    hole: Optional[int] = None


@dataclass(frozen=True)
class EdgeRecord:
    endpoints: frozenset
    length: float


@dataclass
class HoleRecord:
    id: int
    node: int
    depth: float
    stack: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class AtNode:
    node: int


@dataclass(frozen=True)
class InHole:
    hole: int


@dataclass
class BoxRecord:
    id: int
    height: float
    location: Union[AtNode, InHole]


@dataclass(frozen=True)
class Idle:
    pass


@dataclass(frozen=True)
class Traveling:
    target: int


@dataclass(frozen=True)
class Pushing:
    box: int
    hole: int
    # nodes still to enter, ending with the hole's node
    remaining: tuple[int, ...]


@dataclass(frozen=True)
class Waiting:
    pass


Activity = Union[Idle, Traveling, Pushing, Waiting]

IDLE = Idle()
WAITING = Waiting()


@dataclass
class AgentRecord:
    id: int
    node: int
    activity: Activity = IDLE
    arrived: bool = False


def euclidean(a, b):
    return float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))


def default_d_max(nodes, edges):
    """Graph diameter times 1.5, where the diameter is the larger of the Euclidean
    spread of the node positions and the longest finite shortest path over all edges."""
    positions = [n.position for n in nodes]
    spread = 0.0
    for a, b in itertools.combinations(positions, 2):
        spread = max(spread, euclidean(a, b))

    graph = nx.Graph()
    graph.add_nodes_from(n.id for n in nodes)
    for edge in edges:
        u, v = sorted(edge.endpoints)
        graph.add_edge(u, v, length=edge.length)
    longest = 0.0
    for _, lengths in nx.all_pairs_dijkstra_path_length(graph, weight="length"):
        if lengths:
            longest = max(longest, max(lengths.values()))

    diameter = max(spread, longest)
    return D_MAX_FACTOR * diameter if diameter > 0 else 1.0


class WorldGraph(object):
    def __init__(self, nodes, edges, holes, boxes, agents, goal, d_max=None, h_tol=H_TOL):
        self.nodes = {n.id: n for n in nodes}
        self.edges = {e.endpoints: e for e in edges}
        self.holes = {h.id: h for h in holes}
        self.boxes = {b.id: b for b in boxes}
        self.agents = {a.id: a for a in agents}
        self.goal = goal
        self.h_tol = h_tol
        self.d_max = d_max if d_max is not None else default_d_max(nodes, edges)

        violations = self._validate(nodes, edges, holes, boxes, agents)
        if violations:
            raise ScenarioValidationError(violations)

        self.graph = nx.Graph()
        self.graph.add_nodes_from(sorted(self.nodes))
        for edge in self.edges.values():
            u, v = sorted(edge.endpoints)
            self.graph.add_edge(u, v, length=edge.length)

        for agent in self.agents.values():
            if agent.node == self.goal:
                agent.arrived = True

    def _validate(self, nodes, edges, holes, boxes, agents):
        violations = []

        if len(self.nodes) != len(nodes):
            violations.append("node ids are not unique")
        if self.goal not in self.nodes:
            violations.append(f"goal node {self.goal} does not exist")

        if len(self.edges) != len(edges):
            violations.append("duplicate edges")
        for edge in edges:
            ends = sorted(edge.endpoints)
            if len(ends) != 2:
                violations.append(f"edge {ends} joins a node to itself")
                continue
            missing = [n for n in ends if n not in self.nodes]
            if missing:
                violations.append(f"edge {ends} references unknown node(s) {missing}")
            if not edge.length > 0:
                violations.append(f"edge {ends} has non-positive length {edge.length}")

        if len(self.holes) != len(holes):
            violations.append("hole ids are not unique")
        hole_nodes = set()
        for hole in holes:
            if hole.node not in self.nodes:
                violations.append(f"hole {hole.id} sits on unknown node {hole.node}")
            elif self.nodes[hole.node].hole != hole.id:
                violations.append(f"node {hole.node} does not reference hole {hole.id}")
            if hole.node in hole_nodes:
                violations.append(f"node {hole.node} has more than one hole")
            hole_nodes.add(hole.node)
            if not hole.depth > 0:
                violations.append(f"hole {hole.id} has non-positive depth {hole.depth}")
        for node in nodes:
            if node.hole is not None and node.hole not in self.holes:
                violations.append(f"node {node.id} references unknown hole {node.hole}")

        if len(self.boxes) != len(boxes):
            violations.append("box ids are not unique")
        box_nodes = set()
        for box in boxes:
            if not box.height > 0:
                violations.append(f"box {box.id} has non-positive height {box.height}")
            if isinstance(box.location, AtNode):
                if box.location.node not in self.nodes:
                    violations.append(f"box {box.id} sits on unknown node {box.location.node}")
                if box.location.node in box_nodes:
                    violations.append(f"node {box.location.node} holds more than one box")
                box_nodes.add(box.location.node)
            elif isinstance(box.location, InHole):
                hole = self.holes.get(box.location.hole)
                if hole is None or box.id not in hole.stack:
                    violations.append(f"box {box.id} is not in the stack of its hole")
            else:
                violations.append(f"box {box.id} has no location")
        for hole in holes:
            for box_id in hole.stack:
                box = self.boxes.get(box_id)
                if box is None or box.location != InHole(hole.id):
                    violations.append(f"hole {hole.id} stacks box {box_id} located elsewhere")

        if len(self.agents) != len(agents):
            violations.append("agent ids are not unique")
        occupied = set()
        for agent in agents:
            if agent.node not in self.nodes:
                violations.append(f"agent {agent.id} starts on unknown node {agent.node}")
                continue
            if agent.node == self.goal:
                continue
            if agent.node in occupied:
                violations.append(f"two agents share node {agent.node}")
            occupied.add(agent.node)

        spread = 0.0
        for a, b in itertools.combinations([n.position for n in nodes], 2):
            spread = max(spread, euclidean(a, b))
        if self.d_max < spread:
            violations.append(f"d_max {self.d_max} is below the node spread {spread:.3f}")

        return violations

    def snapshot(self):
        """Value copy sharing the immutable topology."""
        clone = WorldGraph.__new__(WorldGraph)
        clone.nodes = self.nodes
        clone.edges = self.edges
        clone.graph = self.graph
        clone.goal = self.goal
        clone.h_tol = self.h_tol
        clone.d_max = self.d_max
        clone.holes = {k: replace(h, stack=list(h.stack)) for k, h in self.holes.items()}
        clone.boxes = {k: replace(b) for k, b in self.boxes.items()}
        clone.agents = {k: replace(a) for k, a in self.agents.items()}
        return clone

    # lookups

    def node(self, node_id):
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownEntityError("node", node_id) from None

    def hole(self, hole_id):
        try:
            return self.holes[hole_id]
        except KeyError:
            raise UnknownEntityError("hole", hole_id) from None

    def box(self, box_id):
        try:
            return self.boxes[box_id]
        except KeyError:
            raise UnknownEntityError("box", box_id) from None

    def agent(self, agent_id):
        try:
            return self.agents[agent_id]
        except KeyError:
            raise UnknownEntityError("agent", agent_id) from None

    def position(self, node_id):
        return self.node(node_id).position

    def euclidean(self, a, b):
        return euclidean(self.position(a), self.position(b))

    def edge_length(self, a, b):
        return self.graph.adj[a][b]["length"]

    def neighbors(self, node_id):
        """Edge-adjacent nodes regardless of traversability, in id order."""
        self.node(node_id)
        return sorted(self.graph.adj[node_id])

    def hole_at(self, node_id):
        return self.node(node_id).hole

    def box_at(self, node_id):
        for box in self.boxes.values():
            if box.location == AtNode(node_id):
                return box.id
        return None

    def agent_at(self, node_id):
        for agent in self.agents.values():
            if not agent.arrived and agent.node == node_id:
                return agent.id
        return None

    def active_agents(self):
        return sorted(a.id for a in self.agents.values() if not a.arrived)

    def all_arrived(self):
        return all(a.arrived for a in self.agents.values())

    def at_node_boxes(self):
        return {
            b.location.node: b.id for b in self.boxes.values() if isinstance(b.location, AtNode)
        }

    # traversability

    def residual_depth(self, hole_id):
        hole = self.hole(hole_id)
        return hole.depth - sum(self.boxes[b].height for b in hole.stack)

    def is_flush(self, node_id):
        hole_id = self.node(node_id).hole
        if hole_id is None:
            return True
        return abs(self.residual_depth(hole_id)) <= self.h_tol

    def is_reachable(self, a, b):
        self.node(a)
        self.node(b)
        if not self.graph.has_edge(a, b):
            return False
        return self.is_flush(a) and self.is_flush(b)

    def reachable_neighbors(self, node_id):
        self.node(node_id)
        if not self.is_flush(node_id):
            return set()
        return {m for m in self.graph.adj[node_id] if self.is_flush(m)}

    def distances_from(self, src, max_radius=None, into_holes=False, avoid=(), target=None):
        """Single-source shortest paths over reachable edges.

        Returns node -> (distance, path) where path starts at `src`. Equal-length paths
        resolve to the lexicographically smallest node sequence. With `into_holes`, hole
        nodes that are not flush may be entered as the last hop but never crossed.
        """
        self.node(src)
        avoid = set(avoid)
        settled = {}
        heap = [(0.0, (src,))]
        while heap:
            dist, path = heapq.heappop(heap)
            node = path[-1]
            if node in settled:
                continue
            settled[node] = (dist, path)
            if node == target:
                break
            if not self.is_flush(node):
                continue
            for nbr in self.graph.adj[node]:
                if nbr in settled or nbr in avoid:
                    continue
                if not self.is_flush(nbr):
                    if not (into_holes and self.nodes[nbr].hole is not None):
                        continue
                next_dist = dist + self.graph.adj[node][nbr]["length"]
                if max_radius is not None and next_dist > max_radius + RADIUS_EPS:
                    continue
                heapq.heappush(heap, (next_dist, path + (nbr,)))
        return settled

    def shortest_path(self, src, dst, max_radius=None):
        """Minimal reachable path from `src` to `dst`.

        The returned node sequence lists the hops after `src`, so `src == dst` gives an
        empty path of length 0. None when disconnected or longer than `max_radius`.
        """
        self.node(dst)
        settled = self.distances_from(src, max_radius=max_radius, target=dst)
        if dst not in settled:
            return None
        dist, path = settled[dst]
        return list(path[1:]), dist

    def path_to_hole(self, src, hole_id, max_radius=None, avoid=()):
        """Path from `src` ending on the hole's node, entering the hole as the last hop.

        The path includes `src`. None when the hole is out of reach.
        """
        hole = self.hole(hole_id)
        settled = self.distances_from(
            src, max_radius=max_radius, into_holes=True, avoid=avoid, target=hole.node
        )
        if hole.node not in settled:
            return None
        dist, path = settled[hole.node]
        return list(path), dist

    def push_path(self, box_id, hole_id, max_radius=None):
        """Route a box from its node into a hole without crossing other boxes."""
        box = self.box(box_id)
        if not isinstance(box.location, AtNode):
            return None
        others = [n for n, b in self.at_node_boxes().items() if b != box_id]
        found = self.path_to_hole(box.location.node, hole_id, max_radius=max_radius, avoid=others)
        if found is None or len(found[0]) < 2:
            return None
        return found

    def holes_within(self, node_id, radius):
        """Hole ids whose node lies within reachable path distance `radius`."""
        settled = self.distances_from(node_id, max_radius=radius, into_holes=True)
        return sorted(self.nodes[n].hole for n in settled if self.nodes[n].hole is not None)

    # mutations

    def place_box(self, box_id, hole_id):
        box = self.box(box_id)
        hole = self.hole(hole_id)
        if isinstance(box.location, InHole):
            raise BoxStateError(f"box {box_id} is already in hole {box.location.hole}")
        if not self.graph.has_edge(box.location.node, hole.node):
            raise PlacementError(
                f"box {box_id} on node {box.location.node} is not adjacent to hole {hole_id} "
                f"on node {hole.node}"
            )
        box.location = InHole(hole_id)
        hole.stack.append(box_id)
        logger.debug(
            f"Placed box {box_id} in hole {hole_id}, residual {self.residual_depth(hole_id):.2f}"
        )
        return self

    def move_box(self, box_id, node_id):
        box = self.box(box_id)
        self.node(node_id)
        if isinstance(box.location, InHole):
            raise BoxStateError(f"box {box_id} is in hole {box.location.hole} and cannot move")
        if not self.is_reachable(box.location.node, node_id):
            raise PlacementError(f"box {box_id} cannot move to node {node_id}")
        other = self.box_at(node_id)
        if other is not None:
            raise PlacementError(f"node {node_id} already holds box {other}")
        box.location = AtNode(node_id)
        return self

    def move_agent(self, agent_id, node_id):
        agent = self.agent(agent_id)
        if not self.is_reachable(agent.node, node_id):
            raise PlacementError(f"agent {agent_id} cannot reach node {node_id}")
        other = self.agent_at(node_id)
        if other is not None and other != agent_id:
            raise PlacementError(f"node {node_id} is occupied by agent {other}")
        agent.node = node_id
        if node_id == self.goal:
            agent.arrived = True
            agent.activity = IDLE
        return self

    def set_activity(self, agent_id, activity):
        self.agent(agent_id).activity = activity
        return self
