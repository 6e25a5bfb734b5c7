"""Run engine: abstract and embodied episodes, metrics, ablation and CSV logs."""

import csv
import heapq
import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from app.arena import KinematicArena, Status
from app.errors import ArtifactError, BoxStateError, ConfigurationError, PlacementError
from app.hddqn import QController, ScriptedPusher
from app.pheromones import BoxEvent, PheromoneField
from app.policy import Claim, ContinuePush, Move, Wait, decide, decision_label
from app.primitive import (
    AcceptAll,
    FeasibilityGate,
    approach_deviation,
    run_push_segment,
    scripted_travel,
    segment_state,
)
from app.scenarios import with_overrides
from app.world import IDLE, WAITING, AtNode, Pushing, Traveling

logging.basicConfig(
    level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger(__name__)

ROUND_SECONDS = 10.0
WAIT_SECONDS = 2.5
CURVE_WINDOW = 10
# consecutive blocked-push waits before an agent gives up its push
DEADLOCK_WAITS = 10


@dataclass(frozen=True)
class StepRecord:
    episode: int
    step: int
    agent: int
    decision: str
    node: int
    epsilon: float


@dataclass(frozen=True)
class EpisodeSummary:
    episode: int
    steps: int
    reached: tuple

    @property
    def proportion(self):
        return sum(self.reached) / len(self.reached) if self.reached else 1.0


@dataclass
class EpisodeLog:
    episode: int
    records: list = field(default_factory=list)
    summary: Optional[EpisodeSummary] = None
    # pheromone rows at episode end, after normalization
    pheromones: list = field(default_factory=list)


@dataclass(frozen=True)
class RunMetrics:
    episodes: int
    steps_mean: float
    steps_std: float
    success_mean: float
    success_std: float


def compute_metrics(logs):
    """Mean and population std of steps used and of the share of agents at the goal.

    Accepts episode logs or bare summaries. Failed episodes already carry the cap.
    """
    summaries = [log.summary if isinstance(log, EpisodeLog) else log for log in logs]
    if not summaries:
        raise ConfigurationError("metrics need at least one episode")
    steps = np.array([s.steps for s in summaries], dtype=float)
    share = np.array([s.proportion for s in summaries], dtype=float)
    return RunMetrics(
        episodes=len(summaries),
        steps_mean=float(np.mean(steps)),
        steps_std=float(np.std(steps)),
        success_mean=float(np.mean(share)),
        success_std=float(np.std(share)),
    )


def moving_average(values, window=CURVE_WINDOW):
    """Trailing mean over the last `window` values (fewer at the start)."""
    out = []
    for i in range(len(values)):
        chunk = values[max(0, i - window + 1) : i + 1]
        out.append(float(np.mean(chunk)))
    return out


class SwarmRun(object):
    """Owns the pheromone field, per-agent exploration rates and random streams for a
    sequence of episodes; the world itself is rebuilt every episode."""

    def __init__(self, spec, seed=None):
        self.spec = spec
        self.seed = spec.seed if seed is None else seed
        world = spec.build_world()
        self.field = PheromoneField(world, spec.field_config(world))
        n_agents = len(spec.agent_starts)
        streams = np.random.SeedSequence(self.seed).spawn(n_agents)
        self.rngs = [np.random.default_rng(s) for s in streams]
        self.epsilon = [spec.policy.epsilon0] * n_agents
        self.episode_count = 0

    # shared commit and update logic

    def _enter(self, world, node, events):
        hole_id = world.hole_at(node)
        if hole_id is None or not world.is_flush(node):
            return
        for box_id in world.hole(hole_id).stack:
            events.append((box_id, hole_id, BoxEvent.STEPPED_OVER))

    def _commit(self, world, agent_id, decision, events, gate=None):
        """Apply one decision to the live world. Returns False if it could not apply."""
        agent = world.agent(agent_id)
        try:
            if isinstance(decision, Move):
                world.move_agent(agent_id, decision.target)
                self._enter(world, decision.target, events)
                if not agent.arrived:
                    world.set_activity(agent_id, IDLE)
            elif isinstance(decision, Claim):
                if world.box(decision.box).location != AtNode(decision.path[0]) or any(
                    isinstance(a.activity, Pushing) and a.activity.box == decision.box
                    for a in world.agents.values()
                    if a.id != agent_id
                ):
                    raise PlacementError(
                        f"box {decision.box} is no longer free at node {decision.path[0]}"
                    )
                events.append((decision.box, decision.hole, BoxEvent.CLAIMED))
                origin = agent.node
                if agent.node != decision.path[0]:
                    world.move_agent(agent_id, decision.path[0])
                    self._enter(world, decision.path[0], events)
                if not agent.arrived:
                    world.set_activity(
                        agent_id, Pushing(decision.box, decision.hole, tuple(decision.path[1:]))
                    )
                    if gate is not None:
                        gate.came_from[agent_id] = origin
            elif isinstance(decision, ContinuePush):
                push = agent.activity
                nxt = push.remaining[0]
                if nxt == world.hole(push.hole).node:
                    world.place_box(push.box, push.hole)
                    world.set_activity(agent_id, IDLE)
                else:
                    origin = agent.node
                    if world.agent_at(nxt) is not None:
                        raise PlacementError(
                            f"node {nxt} is occupied by agent {world.agent_at(nxt)}"
                        )
                    world.move_box(push.box, nxt)
                    world.move_agent(agent_id, nxt)
                    self._enter(world, nxt, events)
                    if not agent.arrived:
                        world.set_activity(
                            agent_id, Pushing(push.box, push.hole, push.remaining[1:])
                        )
                        if gate is not None:
                            gate.came_from[agent_id] = origin
            elif isinstance(decision, Wait):
                if not decision.holding:
                    world.set_activity(agent_id, WAITING)
        except (PlacementError, BoxStateError) as e:
            logger.debug(f"Agent {agent_id} could not apply {decision_label(decision)}: {e}")
            world.set_activity(agent_id, IDLE)
            return False
        return True

    def _update(self, world, nodes, events):
        radius = self.spec.policy.radius
        self.field.update_distances(world)
        for box_id, hole_id, event in events:
            self.field.update_box_value(box_id, hole_id, event)
        for node in nodes:
            self.field.update_hole_pheromones(world, node, radius)
        for node in nodes:
            self.field.update_exploration(world, node)

    def _finish(self, world, log, steps):
        for node in sorted({a.node for a in world.agents.values()}):
            self.field.update_hole_pheromones(
                world, node, self.spec.policy.radius, episode_ended=True
            )
        self.field.update_exploration(world, world.goal, episode_ended=True)
        reached = tuple(world.agents[a].arrived for a in sorted(world.agents))
        if not all(reached):
            steps = self.spec.max_steps
        log.summary = EpisodeSummary(log.episode, steps, reached)
        log.pheromones = self.field.rows(self.spec.hole_ids)
        self.episode_count += 1
        return log

    # abstract mode

    def _watch_deadlock(self, world, agent_id, decision, blocked, episode):
        """Count blocked-push waits; after DEADLOCK_WAITS of them the push is dropped."""
        if isinstance(decision, Wait) and decision.holding:
            blocked[agent_id] += 1
            if blocked[agent_id] >= DEADLOCK_WAITS:
                logger.warning(
                    f"Agent {agent_id} has waited {DEADLOCK_WAITS} steps behind its push "
                    f"in episode {episode}; likely deadlocked, dropping the push"
                )
                world.set_activity(agent_id, IDLE)
                blocked[agent_id] = 0
        else:
            blocked[agent_id] = 0

    def abstract_episode(self):
        """Synchronous episode: decide on a shared snapshot, commit in id order, update."""
        spec = self.spec
        world = spec.build_world()
        log = EpisodeLog(self.episode_count)
        blocked = dict.fromkeys(world.agents, 0)

        step = 0
        while not world.all_arrived() and step < spec.max_steps:
            step += 1
            snapshot = world.snapshot()
            active = snapshot.active_agents()

            decisions = {}
            for agent_id in active:
                decisions[agent_id], self.epsilon[agent_id] = decide(
                    snapshot,
                    self.field,
                    agent_id,
                    spec.policy,
                    self.epsilon[agent_id],
                    self.rngs[agent_id],
                )

            events = []
            for agent_id in active:
                self._commit(world, agent_id, decisions[agent_id], events)
                self._watch_deadlock(world, agent_id, decisions[agent_id], blocked, log.episode)

            self._update(world, sorted({world.agent(a).node for a in active}), events)
            for agent_id in active:
                agent = world.agent(agent_id)
                log.records.append(
                    StepRecord(
                        log.episode,
                        step,
                        agent_id,
                        decision_label(decisions[agent_id]),
                        agent.node,
                        self.epsilon[agent_id],
                    )
                )

        return self._finish(world, log, step)

    # embodied mode

    def embodied_episode(self, controller, gate, arena):
        """Asynchronous episode driven by an event queue of action completion times.

        An agent decides when its previous action completes; the action's effect lands
        in the world at its own completion time.
        """
        spec = self.spec
        world = spec.build_world()
        log = EpisodeLog(self.episode_count)
        config = arena.config
        horizon = spec.max_steps * ROUND_SECONDS
        yaw = {a: 0.0 for a in world.agents}
        gate.came_from.clear()

        seq = itertools.count()
        queue = [(0.0, next(seq), agent_id, None, None) for agent_id in world.active_agents()]
        heapq.heapify(queue)
        clock = 0.0

        while queue and not world.all_arrived():
            at, _, agent_id, decision, outcome = heapq.heappop(queue)
            if at > horizon:
                clock = horizon
                break
            clock = at
            agent = world.agent(agent_id)
            if agent.arrived:
                continue

            if decision is not None:
                events = []
                if isinstance(decision, ContinuePush) and outcome is not None and not outcome[0]:
                    logger.warning(
                        f"Agent {agent_id} failed to push box {agent.activity.box} along one edge; "
                        "leaving it"
                    )
                    world.set_activity(agent_id, IDLE)
                else:
                    self._commit(world, agent_id, decision, events, gate=gate)
                    if outcome is not None:
                        yaw[agent_id] = outcome[1]
                self._update(world, [agent.node], events)
                log.records.append(
                    StepRecord(
                        log.episode,
                        max(1, math.ceil(clock / ROUND_SECONDS)),
                        agent_id,
                        decision_label(decision),
                        agent.node,
                        self.epsilon[agent_id],
                    )
                )
                if agent.arrived:
                    continue

            was_pushing = isinstance(agent.activity, Pushing)
            nxt, self.epsilon[agent_id] = decide(
                world,
                self.field,
                agent_id,
                spec.policy,
                self.epsilon[agent_id],
                self.rngs[agent_id],
                feasible=gate,
            )
            if was_pushing and not isinstance(nxt, (ContinuePush, Wait)):
                logger.debug(f"Agent {agent_id} abandons its push")
                world.set_activity(agent_id, IDLE)

            duration, outcome = self._duration(
                world, agent_id, nxt, yaw[agent_id], controller, gate, arena
            )
            if isinstance(nxt, Move):
                world.set_activity(agent_id, Traveling(nxt.target))
            heapq.heappush(queue, (clock + duration, next(seq), agent_id, nxt, outcome))

        steps = min(spec.max_steps, math.ceil(clock / ROUND_SECONDS))
        return self._finish(world, log, steps)

    def _duration(self, world, agent_id, decision, heading, controller, gate, arena):
        """Seconds the decision takes and (success, final yaw) of its motion."""
        config = arena.config
        agent = world.agent(agent_id)
        if isinstance(decision, Move):
            elapsed, final = scripted_travel(
                world.position(agent.node),
                world.position(decision.target),
                heading,
                config,
                arena.gains,
            )
            return elapsed, (True, final)
        if isinstance(decision, Claim):
            if agent.node == decision.path[0]:
                return WAIT_SECONDS, (True, heading)
            elapsed, final = scripted_travel(
                world.position(agent.node),
                world.position(decision.path[0]),
                heading,
                config,
                arena.gains,
            )
            return elapsed, (True, final)
        if isinstance(decision, ContinuePush):
            push = agent.activity
            box_node = world.box(push.box).location.node
            nxt = push.remaining[0]
            deviation = approach_deviation(world, gate.came_from.get(agent_id), box_node, nxt)
            state = segment_state(world, box_node, nxt, deviation, config)
            trajectory, elapsed = run_push_segment(controller, state, arena, self.rngs[agent_id])
            a, b = world.position(box_node), world.position(nxt)
            pushed = trajectory.status is Status.SUCCESS
            return elapsed, (pushed, math.atan2(b[1] - a[1], b[0] - a[0]))
        return WAIT_SECONDS, None


def run_abstract(spec, episodes=None, seed=None, run=None):
    """Run abstract episodes; returns (episode logs, RunMetrics)."""
    run = run or SwarmRun(spec, seed=seed)
    episodes = episodes or spec.episodes
    logger.info(f"Starting abstract run of {spec.name} for {episodes} episodes")
    start = time.time()
    logs = [run.abstract_episode() for _ in range(episodes)]
    metrics = compute_metrics(logs)
    logger.info(
        f"Abstract run completed in {time.time() - start:.2f} seconds: "
        f"steps {metrics.steps_mean:.2f} +- {metrics.steps_std:.2f}, "
        f"success {metrics.success_mean:.3f} +- {metrics.success_std:.3f}"
    )
    return logs, metrics


def run_embodied(
    spec, params=None, model=None, oracle=False, episodes=None, seed=None, arena=None, beta=8.0
):
    """Run embodied episodes with the trained primitive and classifier gate, or with the
    scripted oracle pusher and no gate."""
    arena = arena or KinematicArena()
    if oracle:
        controller, gate = ScriptedPusher(), AcceptAll()
    else:
        if params is None or model is None:
            raise ArtifactError("embodied runs need a Q-network checkpoint and a classifier")
        controller, gate = QController(params, beta), FeasibilityGate(model, arena)

    run = SwarmRun(spec, seed=seed)
    episodes = episodes or spec.episodes
    logger.info(f"Starting embodied run of {spec.name} for {episodes} episodes")
    start = time.time()
    logs = [run.embodied_episode(controller, gate, arena) for _ in range(episodes)]
    metrics = compute_metrics(logs)
    logger.info(
        f"Embodied run completed in {time.time() - start:.2f} seconds: "
        f"steps {metrics.steps_mean:.2f} +- {metrics.steps_std:.2f}, "
        f"success {metrics.success_mean:.3f} +- {metrics.success_std:.3f}, "
        f"{gate.rejections} gate rejections"
    )
    return logs, metrics


@dataclass(frozen=True)
class AblationCell:
    params: dict
    metrics: RunMetrics
    steps: tuple
    curve: tuple


def expand_grid(grid):
    keys = sorted(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def ablate(spec, grid, episodes=None, seed=None, runner=None):
    """One run per grid cell with fresh pheromones and the same seed everywhere."""
    cells = expand_grid(grid)
    if not cells:
        raise ConfigurationError("ablation grid is empty")
    runner = runner or (lambda s: run_abstract(s, episodes=episodes, seed=seed))

    results = []
    for i, params in enumerate(cells):
        logger.info(f"Starting ablation cell {i + 1}/{len(cells)}: {params}")
        logs, metrics = runner(with_overrides(spec, params))
        steps = tuple(log.summary.steps for log in logs)
        results.append(AblationCell(params, metrics, steps, tuple(moving_average(steps))))
    return results


# CSV logs

EPISODE_COLUMNS = ["episode", "steps", "proportion", "reached"]


def write_episode_summaries(path, logs):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(EPISODE_COLUMNS)
        for log in logs:
            s = log.summary
            reached = "".join("1" if r else "0" for r in s.reached)
            writer.writerow([s.episode, s.steps, repr(s.proportion), reached])


def read_episode_summaries(path):
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or not set(EPISODE_COLUMNS) <= set(reader.fieldnames):
            raise ArtifactError(f"{path} is not an episode log")
        try:
            return [
                EpisodeSummary(
                    int(row["episode"]), int(row["steps"]), tuple(c == "1" for c in row["reached"])
                )
                for row in reader
            ]
        except ValueError as e:
            raise ArtifactError(f"malformed episode row in {path}: {e}") from e


def write_step_records(path, logs):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["episode", "step", "agent", "decision", "node", "epsilon"])
        for log in logs:
            for r in log.records:
                writer.writerow([r.episode, r.step, r.agent, r.decision, r.node, repr(r.epsilon)])


def write_pheromones(path, logs):
    rows = [dict(episode=log.episode, **row) for log in logs for row in log.pheromones]
    if not rows:
        return
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


METRIC_COLUMNS = ["episodes", "steps_mean", "steps_std", "success_mean", "success_std"]


def write_metrics(path, metrics):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(METRIC_COLUMNS)
        writer.writerow([getattr(metrics, c) for c in METRIC_COLUMNS])


def write_ablation(path, cells):
    keys = sorted({k for cell in cells for k in cell.params})
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["cell"] + keys + METRIC_COLUMNS)
        for i, cell in enumerate(cells):
            writer.writerow(
                [i]
                + [cell.params.get(k) for k in keys]
                + [getattr(cell.metrics, c) for c in METRIC_COLUMNS]
            )


def write_ablation_curves(path, cells):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["cell", "episode", "steps", "moving_average"])
        for i, cell in enumerate(cells):
            for episode, (steps, smooth) in enumerate(zip(cell.steps, cell.curve)):
                writer.writerow([i, episode, steps, repr(smooth)])
