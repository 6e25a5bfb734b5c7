import itertools

import networkx as nx
import pytest
from app.errors import BoxStateError, PlacementError, ScenarioValidationError, UnknownEntityError
from app.world import (
    AgentRecord,
    AtNode,
    EdgeRecord,
    InHole,
    NodeRecord,
    WorldGraph,
    default_d_max,
)


def brute_force_length(world, src, dst):
    """Shortest reachable path length by enumerating simple paths."""
    if src == dst:
        return 0.0
    walkable = nx.Graph()
    for a, b in world.graph.edges:
        if world.is_reachable(a, b):
            walkable.add_edge(a, b, length=world.edge_length(a, b))
    if src not in walkable or dst not in walkable:
        return None
    lengths = [
        sum(world.edge_length(u, v) for u, v in zip(path, path[1:]))
        for path in nx.all_simple_paths(walkable, src, dst)
    ]
    return min(lengths) if lengths else None


class TestResidualDepth:
    """Hole fill levels and the flush rule."""

    def test_empty_hole(self, make_line_world):
        """An empty hole's residual is its depth."""
        world = make_line_world(3, holes=[(1, 1.0)])
        assert world.residual_depth(0) == 1.0
        assert not world.is_flush(1)

    def test_exact_fill_is_flush(self, make_line_world):
        """A height-3 box in a depth-3 hole leaves it flush."""
        world = make_line_world(3, holes=[(1, 3.0)], boxes=[(0, 3.0)], agents=(2,), goal=0)
        world.place_box(0, 0)
        assert world.residual_depth(0) == 0.0
        assert world.is_flush(1)
        assert world.is_reachable(0, 1)

    def test_tall_box_leaves_a_hill(self, make_line_world):
        """A box taller than the hole protrudes and blocks the node."""
        world = make_line_world(3, holes=[(1, 1.0)], boxes=[(0, 3.0)], agents=(2,), goal=0)
        world.place_box(0, 0)
        assert world.residual_depth(0) == -2.0
        assert not world.is_reachable(0, 1)

    def test_stacking_two_boxes(self, make_line_world):
        """Two boxes stack bottom first and fill a depth-2 hole together."""
        world = make_line_world(
            4, holes=[(1, 2.0)], boxes=[(0, 1.0), (2, 1.0)], agents=(3,), goal=3
        )
        world.place_box(0, 0)
        assert not world.is_flush(1)
        world.place_box(1, 0)
        assert world.hole(0).stack == [0, 1]
        assert world.is_flush(1)
        assert world.box(1).location == InHole(0)

    def test_unknown_hole(self, sanity_world):
        """Lookups of missing ids raise a KeyError subclass."""
        with pytest.raises(UnknownEntityError):
            sanity_world.residual_depth(42)
        with pytest.raises(KeyError):
            sanity_world.hole(42)


class TestReachability:
    """Edges, holes and the reachable neighbor sets of the sanity map."""

    def test_open_holes_block(self, sanity_world):
        """The open holes at n3 and n7 cut the sanity map in two."""
        assert sanity_world.reachable_neighbors(0) == {1}
        assert sanity_world.reachable_neighbors(1) == {0, 2}
        assert sanity_world.reachable_neighbors(2) == {1}
        assert not sanity_world.is_reachable(2, 3)
        assert not sanity_world.is_reachable(6, 7)

    def test_missing_edge(self, sanity_world):
        """Nodes without an edge are never reachable from each other."""
        assert not sanity_world.is_reachable(0, 8)

    def test_neighbors_never_include_self(self, sanity_world):
        """No node is its own neighbor."""
        for node in sanity_world.nodes:
            assert node not in sanity_world.reachable_neighbors(node)

    def test_isolated_node(self):
        """A node with no edges has no reachable neighbors."""
        world = WorldGraph(
            [NodeRecord(0, (0.0, 0.0, 0.0)), NodeRecord(1, (1.0, 0.0, 0.0))],
            [],
            [],
            [],
            [AgentRecord(0, 0)],
            1,
        )
        assert world.reachable_neighbors(0) == set()

    def test_unknown_node(self, sanity_world):
        """Unknown nodes raise instead of returning an empty set."""
        with pytest.raises(UnknownEntityError):
            sanity_world.reachable_neighbors(99)


class TestShortestPath:
    """Path search over reachable edges."""

    def test_same_node(self, sanity_world):
        """A path to the start node is empty with length zero."""
        assert sanity_world.shortest_path(4, 4) == ([], 0.0)

    def test_disconnected(self, sanity_world):
        """No path crosses an open hole."""
        assert sanity_world.shortest_path(0, 8) is None

    def test_radius_limit(self, make_line_world):
        """Paths longer than the radius are not found."""
        world = make_line_world(5)
        assert world.shortest_path(0, 4, max_radius=3.0) is None
        path, length = world.shortest_path(0, 4, max_radius=4.0)
        assert path == [1, 2, 3, 4]
        assert length == pytest.approx(4.0)

    def test_equal_length_tie_break(self):
        """Equal-length routes resolve to the smaller node sequence."""
        nodes = [
            NodeRecord(0, (0.0, 0.0, 0.0)),
            NodeRecord(1, (1.0, 1.0, 0.0)),
            NodeRecord(2, (1.0, -1.0, 0.0)),
            NodeRecord(3, (2.0, 0.0, 0.0)),
        ]
        edges = [
            EdgeRecord(frozenset(e), 1.0) for e in ((0, 1), (0, 2), (1, 3), (2, 3))
        ]
        world = WorldGraph(nodes, edges, [], [], [AgentRecord(0, 0)], 3)
        assert world.shortest_path(0, 3) == ([1, 3], 2.0)

    def test_matches_brute_force(self, sanity_world):
        """Lengths agree with simple-path enumeration on every node pair."""
        for src, dst in itertools.product(sorted(sanity_world.nodes), repeat=2):
            if not sanity_world.is_flush(src) or not sanity_world.is_flush(dst):
                continue
            found = sanity_world.shortest_path(src, dst)
            expected = brute_force_length(sanity_world, src, dst)
            if expected is None:
                assert found is None
            else:
                assert found[1] == pytest.approx(expected)

    def test_push_path_avoids_other_boxes(self, make_line_world):
        """A box cannot be routed through a node holding another box."""
        world = make_line_world(
            5, holes=[(3, 1.0)], boxes=[(1, 1.0), (2, 1.0)], agents=(0,), goal=4
        )
        assert world.push_path(0, 0) is None
        path, length = world.push_path(1, 0)
        assert path == [2, 3]
        assert length == pytest.approx(1.0)

    def test_holes_within(self, sanity_world):
        """Only the n3 hole is reachable from the west side of the sanity map."""
        assert sanity_world.holes_within(1, 5.0) == [0]
        assert sanity_world.holes_within(0, 0.5) == []


class TestMutations:
    """Box placement, box and agent moves."""

    def test_place_requires_adjacency(self, sanity_world):
        """The height-3 box at n2 is not adjacent to the n7 hole."""
        with pytest.raises(PlacementError):
            sanity_world.place_box(1, 1)
        assert sanity_world.box(1).location == AtNode(2)

    def test_place_twice(self, make_line_world):
        """A placed box cannot be placed again."""
        world = make_line_world(3, holes=[(1, 1.0)], boxes=[(0, 1.0)], agents=(2,), goal=0)
        world.place_box(0, 0)
        with pytest.raises(BoxStateError):
            world.place_box(0, 0)

    def test_move_box_onto_box(self, make_line_world):
        """Two boxes never share a node."""
        world = make_line_world(3, boxes=[(0, 1.0), (1, 1.0)], agents=(2,), goal=2)
        with pytest.raises(PlacementError):
            world.move_box(0, 1)

    def test_move_agent_onto_agent(self, make_line_world):
        """Agents never share a node."""
        world = make_line_world(4, agents=(0, 1))
        with pytest.raises(PlacementError):
            world.move_agent(0, 1)

    def test_arrival(self, make_line_world):
        """Stepping onto the goal marks the agent arrived and frees the node."""
        world = make_line_world(3, agents=(1,))
        world.move_agent(0, 2)
        assert world.agent(0).arrived
        assert world.agent_at(2) is None
        assert world.all_arrived()

    def test_snapshot_is_independent(self, make_line_world):
        """Changes to a snapshot do not leak into the live world."""
        world = make_line_world(3, holes=[(1, 1.0)], boxes=[(0, 1.0)], agents=(2,), goal=0)
        snapshot = world.snapshot()
        snapshot.place_box(0, 0)
        assert world.box(0).location == AtNode(0)
        assert world.hole(0).stack == []
        assert snapshot.graph is world.graph


class TestValidation:
    """World construction rejects inconsistent inputs."""

    def test_shared_start_node(self, make_line_world):
        """Two agents cannot start on the same node."""
        with pytest.raises(ScenarioValidationError) as e:
            make_line_world(3, agents=(0, 0))
        assert any("share" in v for v in e.value.violations)

    def test_unknown_edge_endpoint(self):
        """Edges must join known nodes."""
        with pytest.raises(ScenarioValidationError):
            WorldGraph(
                [NodeRecord(0, (0.0, 0.0, 0.0))],
                [EdgeRecord(frozenset((0, 5)), 1.0)],
                [],
                [],
                [AgentRecord(0, 0)],
                0,
            )

    def test_d_max_below_spread(self):
        """d_max must cover the node spread."""
        nodes = [NodeRecord(0, (0.0, 0.0, 0.0)), NodeRecord(1, (4.0, 0.0, 0.0))]
        edges = [EdgeRecord(frozenset((0, 1)), 4.0)]
        with pytest.raises(ScenarioValidationError):
            WorldGraph(nodes, edges, [], [], [AgentRecord(0, 0)], 1, d_max=2.0)

    def test_default_d_max(self, sanity_world):
        """The sanity map's longest shortest path is 7 m, so d_max is 10.5."""
        assert sanity_world.d_max == pytest.approx(10.5)
        assert default_d_max(list(sanity_world.nodes.values()), []) == pytest.approx(10.5)
