"""Node and box pheromone banks and their update rules.

Each update computes a new bank value from the current world and the neighbouring
banks, then commits it into the field. Callers serialize commits.
"""

import enum
import logging
import math
from dataclasses import dataclass, field, replace

from app.errors import ConfigurationError

logger = logging.getLogger(__name__)


class BoxEvent(enum.Enum):
    CLAIMED = "claimed"
    STEPPED_OVER = "stepped_over"


@dataclass(frozen=True)
class FieldConfig:
    d_max: float
    b_decay: float = 0.9
    b_init: float = 1.0

    def __post_init__(self):
        if not self.d_max > 0:
            raise ConfigurationError(f"d_max must be positive, got {self.d_max}")
        if not 0 < self.b_decay < 1:
            raise ConfigurationError(f"b_decay must lie in (0, 1), got {self.b_decay}")
        if not self.b_init > 0:
            raise ConfigurationError(f"b_init must be positive, got {self.b_init}")


@dataclass(frozen=True)
class NodePheromones:
    D: float
    d: float
    official: bool = False
    E: float = 0.0
    H: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BoxPheromones:
    values: dict = field(default_factory=dict)


class PheromoneField(object):
    def __init__(self, world, config):
        self.config = config
        self.nodes = {}
        for node_id in sorted(world.nodes):
            d = world.euclidean(node_id, world.goal)
            self.nodes[node_id] = NodePheromones(D=self.distance_value(d), d=d)
        self.boxes = {box_id: BoxPheromones() for box_id in sorted(world.boxes)}

    def distance_value(self, d):
        return max(0.0, self.config.d_max - d)

    def box_value(self, box_id, hole_id):
        return self.boxes[box_id].values.get(hole_id, self.config.b_init)

    def update_distance(self, world, node_id):
        """Refresh d, D and the official flag of one node."""
        bank = self.nodes[node_id]

        if node_id == world.goal:
            updated = replace(bank, d=0.0, D=self.config.d_max, official=True)
        else:
            via_official = [
                world.edge_length(node_id, m) + self.nodes[m].d
                for m in sorted(world.reachable_neighbors(node_id))
                if self.nodes[m].official
            ]
            if via_official:
                d = min(via_official)
                if bank.official:
                    d = min(d, bank.d)
                updated = replace(bank, d=d, D=self.distance_value(d), official=True)
            elif bank.official:
                updated = bank
            else:
                d = world.euclidean(node_id, world.goal)
                updated = replace(bank, d=d, D=self.distance_value(d))

        self.nodes[node_id] = updated
        return updated

    def update_distances(self, world):
        """One pass of `update_distance` over every node, nearest stored distance first,
        so a freshly opened route is official end to end after a single step."""
        order = sorted(self.nodes, key=lambda n: (self.nodes[n].d, n))
        for node_id in order:
            self.update_distance(world, node_id)
        return self.nodes

    def update_box_value(self, box_id, hole_id, event):
        current = self.box_value(box_id, hole_id)
        if event is BoxEvent.CLAIMED:
            value = current * self.config.b_decay
        else:
            value = current * (1.0 / self.config.b_decay)

        values = dict(self.boxes[box_id].values)
        values[hole_id] = value
        updated = BoxPheromones(values=values)
        self.boxes[box_id] = updated
        logger.debug(f"B[{box_id}][{hole_id}] {event.value}: {current:.4f} -> {value:.4f}")
        return updated

    def update_hole_pheromones(self, world, node_id, radius, episode_ended=False):
        bank = self.nodes[node_id]

        if episode_ended:
            updated = replace(bank, H={j: 0.0 for j in bank.H})
            self.nodes[node_id] = updated
            return updated

        trail = dict(bank.H)
        for hole_id in world.holes_within(node_id, radius):
            trail[hole_id] = 1.0

        neighbours = sorted(world.reachable_neighbors(node_id))
        for hole_id in sorted(world.holes):
            best = trail.get(hole_id, 0.0)
            for m in neighbours:
                decayed = self.nodes[m].H.get(hole_id, 0.0) * math.exp(
                    -world.edge_length(node_id, m)
                )
                best = max(best, decayed)
            if best > 0.0 or hole_id in trail:
                trail[hole_id] = best

        updated = replace(bank, H=trail)
        self.nodes[node_id] = updated
        return updated

    def update_exploration(self, world, node_id, episode_ended=False):
        if episode_ended:
            floor = min(bank.E for bank in self.nodes.values())
            self.nodes = {n: replace(bank, E=bank.E - floor) for n, bank in self.nodes.items()}
            return self.nodes

        bank = self.nodes[node_id]
        self.nodes[node_id] = replace(bank, E=bank.E + 1.0)
        return self.nodes

    def rows(self, hole_ids):
        """Per-node snapshot rows: id, D, d, official, E, then one H column per hole."""
        rows = []
        for node_id, bank in sorted(self.nodes.items()):
            row = {
                "node": node_id,
                "D": bank.D,
                "d": bank.d,
                "official": int(bank.official),
                "E": bank.E,
            }
            for hole_id in hole_ids:
                row[f"H_{hole_id}"] = bank.H.get(hole_id, 0.0)
            rows.append(row)
        return rows
