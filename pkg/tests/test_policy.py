import math
from dataclasses import replace

import numpy as np
import pytest
from app.errors import ConfigurationError
from app.pheromones import FieldConfig, PheromoneField
from app.policy import (
    Claim,
    ContinuePush,
    Move,
    PolicyConfig,
    Wait,
    allowed_moves,
    box_candidate,
    decide,
    decision_label,
    hole_candidates,
    softmax,
)
from app.world import (
    AgentRecord,
    AtNode,
    BoxRecord,
    EdgeRecord,
    HoleRecord,
    NodeRecord,
    Pushing,
    WorldGraph,
)


def field_for(world):
    return PheromoneField(world, FieldConfig(d_max=world.d_max))


@pytest.fixture
def push_world(make_line_world):
    """n0 agent, n1 box (height 1), n2 hole (depth 1), n3 goal."""
    return make_line_world(4, holes=[(2, 1.0)], boxes=[(1, 1.0)], agents=(0,))


class TestSoftmax:
    """Boltzmann weights."""

    def test_sums_to_one(self):
        """Probabilities are normalized."""
        probs = softmax([1.0, 2.0, 3.0], 8.0)
        assert probs.sum() == pytest.approx(1.0)
        assert np.argmax(probs) == 2

    def test_large_values(self):
        """Shifting by the max keeps huge inputs finite."""
        probs = softmax([1000.0, 1000.0], 8.0)
        assert np.allclose(probs, [0.5, 0.5])


class TestCollisionRule:
    """Moves are allowed only onto nodes no other agent sits on or next to."""

    def test_blocked_by_neighbor_of_target(self, make_line_world):
        """An agent two hops away blocks the node between them."""
        world = make_line_world(5, agents=(0, 2))
        assert allowed_moves(world, 0) == set()

    def test_free_when_far(self, make_line_world):
        """Agents three hops apart move freely."""
        world = make_line_world(5, agents=(0, 3))
        assert allowed_moves(world, 0) == {1}

    def test_no_moves_means_wait(self, make_line_world, rng):
        """Without allowed moves the agent waits."""
        world = make_line_world(5, agents=(0, 2))
        decision, epsilon = decide(world, field_for(world), 0, PolicyConfig(), 0.3, rng)
        assert decision == Wait()
        assert epsilon == 0.3


class TestCandidates:
    """Box and hole candidates."""

    def test_nearest_box(self, make_line_world):
        """The closest reachable box wins."""
        world = make_line_world(7, boxes=[(2, 1.0), (4, 1.0)], agents=(0, 5))
        assert box_candidate(world, 0, 5.0) == 0

    def test_claimed_box_skipped(self, make_line_world):
        """Boxes other agents are pushing are not candidates."""
        world = make_line_world(7, boxes=[(2, 1.0), (4, 1.0)], agents=(0, 5))
        world.set_activity(1, Pushing(0, 0, (3,)))
        assert box_candidate(world, 0, 5.0) == 1

    def test_out_of_radius(self, make_line_world):
        """Boxes beyond the radius are ignored."""
        world = make_line_world(7, boxes=[(4, 1.0)], agents=(0,))
        assert box_candidate(world, 0, 3.0) is None

    def test_hole_candidates(self, push_world):
        """The hole next to the box is found by radius search."""
        assert hole_candidates(push_world, field_for(push_world), 0, 0, 5.0) == {0}

    def test_hole_candidates_from_trail(self, make_line_world):
        """A neighbor's H trail makes a far hole a candidate."""
        world = make_line_world(6, holes=[(5, 1.0)], boxes=[(1, 1.0)], agents=(0,), goal=0)
        field = field_for(world)
        field.update_hole_pheromones(world, 4, radius=1.0)
        field.update_hole_pheromones(world, 3, radius=0.5)
        field.update_hole_pheromones(world, 2, radius=0.5)
        assert hole_candidates(world, field, 0, 0, 0.5) == {0}


class TestDecide:
    """The explore/exploit decision."""

    def test_exploit_moves_toward_goal(self, make_line_world, rng):
        """With no boxes around an exploiting agent walks."""
        world = make_line_world(3, agents=(0,))
        decision, epsilon = decide(world, field_for(world), 0, PolicyConfig(), 0.0, rng)
        assert decision == Move(1)
        assert epsilon == 0.0

    def test_explore_claims_box_on_target(self, push_world, rng):
        """Exploring onto a box node claims the box for the adjacent hole."""
        config = PolicyConfig(epsilon0=1.0)
        decision, epsilon = decide(push_world, field_for(push_world), 0, config, 1.0, rng)
        assert decision == Claim(box=0, hole=0, path=(1, 2))
        assert epsilon == pytest.approx(0.995)

    def test_exploration_rate_floor(self, make_line_world, rng):
        """Decay never takes the rate below the minimum."""
        world = make_line_world(3, agents=(0,))
        config = PolicyConfig(epsilon0=1.0, epsilon_min=0.6, epsilon_decay=0.5)
        _, epsilon = decide(world, field_for(world), 0, config, 1.0, rng)
        assert epsilon == pytest.approx(0.6)

    def test_continue_push(self, push_world, rng):
        """An agent on its box with the hole next keeps pushing."""
        push_world.move_agent(0, 1)
        push_world.set_activity(0, Pushing(0, 0, (2,)))
        decision, epsilon = decide(push_world, field_for(push_world), 0, PolicyConfig(), 0.3, rng)
        assert decision == ContinuePush()
        assert epsilon == 0.3

    def test_infeasible_push_is_abandoned(self, push_world, rng):
        """A rejected segment ends the push and the agent walks away."""
        push_world.move_agent(0, 1)
        push_world.set_activity(0, Pushing(0, 0, (2,)))
        decision, _ = decide(
            push_world,
            field_for(push_world),
            0,
            PolicyConfig(),
            0.0,
            rng,
            feasible=lambda *args: False,
        )
        assert decision == Move(0)

    def test_deterministic_for_seed(self, push_world):
        """The same seed gives the same decisions."""
        field = field_for(push_world)
        first = [
            decide(push_world, field, 0, PolicyConfig(), 0.5, np.random.default_rng(s))[0]
            for s in range(10)
        ]
        second = [
            decide(push_world, field, 0, PolicyConfig(), 0.5, np.random.default_rng(s))[0]
            for s in range(10)
        ]
        assert first == second


class TestConfig:
    """Policy hyperparameter validation and labels."""

    def test_bad_epsilon(self):
        """epsilon_min may not exceed epsilon0."""
        with pytest.raises(ConfigurationError):
            PolicyConfig(epsilon0=0.1, epsilon_min=0.2)

    def test_labels(self):
        """Decision labels name the action and its target."""
        assert decision_label(Move(3)) == "move:3"
        assert decision_label(Claim(1, 0, (2, 3))) == "claim:1->0"
        assert decision_label(ContinuePush()) == "continue_push"
        assert decision_label(Wait(holding=True)) == "wait"


def fork_world():
    """n0 agent, n1 box, holes at n2 and n3 both next to the box, goal n4 past n2."""
    nodes = [
        NodeRecord(0, (0.0, 0.0, 0.0)),
        NodeRecord(1, (1.0, 0.0, 0.0)),
        NodeRecord(2, (2.0, 0.0, 0.0), 0),
        NodeRecord(3, (1.0, 1.0, 0.0), 1),
        NodeRecord(4, (3.0, 0.0, 0.0)),
    ]
    edges = [EdgeRecord(frozenset(pair), 1.0) for pair in [(0, 1), (1, 2), (1, 3), (2, 4)]]
    return WorldGraph(
        nodes,
        edges,
        [HoleRecord(0, 2, 1.0), HoleRecord(1, 3, 1.0)],
        [BoxRecord(0, 1.0, AtNode(1))],
        [AgentRecord(0, 0)],
        4,
    )


class TestDecisionWeights:
    """Sampling frequencies of the explore and exploit draws."""

    def test_distance_softmax_closed_form(self, make_line_world):
        """Neighbors with D = 6 and 5 at beta 8 split exp(48) : exp(40)."""
        world = make_line_world(3, agents=(1,), goal=0)
        field = field_for(world)
        field.nodes[0] = replace(field.nodes[0], D=6.0)
        field.nodes[2] = replace(field.nodes[2], D=5.0)
        expected = math.exp(48) / (math.exp(48) + math.exp(40))
        assert expected == pytest.approx(0.99966, abs=1e-5)
        assert softmax([6.0, 5.0], 8.0)[0] == pytest.approx(expected, abs=1e-12)

        picks = [
            decide(world, field, 0, PolicyConfig(), 0.0, np.random.default_rng(s))[0]
            for s in range(3000)
        ]
        assert set(picks) <= {Move(0), Move(2)}
        assert picks.count(Move(0)) >= 2990

    def test_shifted_distances_decide_alike(self, make_line_world):
        """Adding a constant to every D leaves the exploit draw unchanged."""
        world = make_line_world(3, agents=(1,), goal=0)
        low, high = field_for(world), field_for(world)
        for node, value in [(0, 2.0), (1, 1.5), (2, 1.0)]:
            low.nodes[node] = replace(low.nodes[node], D=value)
            high.nodes[node] = replace(high.nodes[node], D=value + 4.0)
        for s in range(50):
            first = decide(world, low, 0, PolicyConfig(), 0.0, np.random.default_rng(s))[0]
            second = decide(world, high, 0, PolicyConfig(), 0.0, np.random.default_rng(s))[0]
            assert first == second

    def test_box_option_competes_with_walking(self, make_line_world):
        """An exploiting agent weighs a nearby box against its best step."""
        world = make_line_world(6, holes=[(4, 1.0)], boxes=[(2, 1.0)], agents=(1,), goal=5)
        field = field_for(world)
        picks = [
            decide(world, field, 0, PolicyConfig(), 0.0, np.random.default_rng(s))[0]
            for s in range(200)
        ]
        claims = [p for p in picks if isinstance(p, Claim)]
        assert claims
        assert all(p == Claim(box=0, hole=0, path=(2, 3, 4)) for p in claims)

    def test_explored_box_picks_holes_uniformly(self):
        """Exploring onto a box with two candidate holes picks each about half the time."""
        world = fork_world()
        field = field_for(world)
        assert hole_candidates(world, field, 0, 0, 5.0) == {0, 1}
        config = PolicyConfig(epsilon0=1.0)
        holes = []
        for s in range(2000):
            decision, _ = decide(world, field, 0, config, 1.0, np.random.default_rng(s))
            assert isinstance(decision, Claim)
            holes.append(decision.hole)
        share = holes.count(0) / len(holes)
        assert 0.45 <= share <= 0.55
