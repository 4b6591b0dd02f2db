"""The 2D grid world: map, resource regeneration, movement, gathering, building.

The map is a plain-text character grid (header line "rows cols", then one
character per cell): 'W' water, 'w' wood source, 's' stone source, '.' empty.
A cell is at most one of water/source; each source cell spawns a single
resource kind and holds at most one unit at a time. Houses are placed by
agents, persist forever, and block movement for everyone but their owner.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np


class ResourceKind(IntEnum):
    WOOD = 0
    STONE = 1


#: Fixed building-skill multiset (coin per house = 10 x skill).
BUILDING_SKILLS = (1.13, 1.33, 1.65, 2.22)

#: Coin paid per house per unit of building skill.
BUILD_PAYOUT_BASE = 10.0

#: Probability an empty source cell regains a unit at the start of a tick.
RESPAWN_PROBABILITY = 0.01

MOVE_ORDER = ("up", "down", "left", "right")
MOVE_DELTAS = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}

NO_OWNER = -1
NO_SOURCE = -1

_MAP_CHARS = {"W": "water", "w": "wood", "s": "stone", ".": "empty"}


@dataclass(frozen=True)
class LaborCosts:
    """Labor charged per performed action; blocked/rejected actions are free."""

    move: float = 0.21
    gather: float = 0.21
    trade: float = 0.05
    build: float = 2.1

    def __post_init__(self):
        if min(self.move, self.gather, self.trade, self.build) < 0:
            raise ValueError("labor costs must be nonnegative")


#: Human-play variant: only building costs labor, and 50% more of it.
HUMAN_LABOR_COSTS = LaborCosts(move=0.0, gather=0.0, trade=0.0, build=15.0)


class MapError(ValueError):
    pass


@dataclass
class WorldMap:
    """Static map layers: water mask and per-kind source masks."""

    height: int
    width: int
    water: np.ndarray          # bool (H, W)
    source: np.ndarray         # int8 (H, W): NO_SOURCE, or a ResourceKind value

    def source_mask(self, kind: ResourceKind) -> np.ndarray:
        return self.source == int(kind)

    @property
    def n_source_cells(self) -> int:
        return int((self.source != NO_SOURCE).sum())


def load_map(map_text: str) -> WorldMap:
    """Parse the text grid format into a WorldMap. Deterministic."""
    lines = [ln for ln in map_text.splitlines() if ln.strip()]
    if not lines:
        raise MapError("empty map text")
    header = lines[0].split()
    if len(header) != 2:
        raise MapError(f"expected header 'rows cols', got {lines[0]!r}")
    rows, cols = int(header[0]), int(header[1])
    grid = lines[1:]
    if len(grid) != rows:
        raise MapError(f"expected {rows} grid rows, got {len(grid)}")
    water = np.zeros((rows, cols), dtype=bool)
    source = np.full((rows, cols), NO_SOURCE, dtype=np.int8)
    for r, line in enumerate(grid):
        if len(line) != cols:
            raise MapError(f"row {r} has {len(line)} cells, expected {cols}")
        for c, ch in enumerate(line):
            if ch not in _MAP_CHARS:
                raise MapError(f"unknown map character {ch!r} at ({r}, {c})")
            if ch == "W":
                water[r, c] = True
            elif ch == "w":
                source[r, c] = int(ResourceKind.WOOD)
            elif ch == "s":
                source[r, c] = int(ResourceKind.STONE)
    return WorldMap(rows, cols, water, source)


def load_map_file(path) -> WorldMap:
    with open(path, "r", encoding="utf-8") as fh:
        return load_map(fh.read())


def default_map() -> WorldMap:
    """The shipped 25x25 four-quadrant map."""
    from importlib.resources import files

    return load_map(files("gatherbuild.data").joinpath("quadrant25.map").read_text())


@dataclass
class AgentState:
    """One agent: position, holdings, escrowed holdings, labor, skills.

    Inventory fields hold freely usable amounts; escrowed amounts back open
    market orders and cannot be spent or used for building until released.
    """

    id: int
    position: tuple
    building_skill: float
    collection_skill: float
    wood: int = 0
    stone: int = 0
    coin: float = 0.0
    escrow_wood: int = 0
    escrow_stone: int = 0
    escrow_coin: float = 0.0
    labor: float = 0.0
    houses_built: int = 0

    @property
    def total_coin(self) -> float:
        return self.coin + self.escrow_coin

    def resource_count(self, kind: ResourceKind) -> int:
        return self.wood if kind == ResourceKind.WOOD else self.stone

    def add_resource(self, kind: ResourceKind, n: int):
        if kind == ResourceKind.WOOD:
            self.wood += n
        else:
            self.stone += n

    @property
    def build_payout(self) -> float:
        return BUILD_PAYOUT_BASE * self.building_skill


def collection_skill_for(building_skill: float) -> float:
    """Map building skill in [1, 3] onto collection skill in [1, 2]."""
    return (building_skill + 1.0) / 2.0


def corner_positions(world_map: WorldMap):
    h, w = world_map.height, world_map.width
    return [(0, 0), (0, w - 1), (h - 1, 0), (h - 1, w - 1)]


def assign_skills_and_spawns(n_agents: int, world_map: WorldMap, rng: np.random.Generator):
    """Shuffle the fixed skill multiset and the corner spawns over agents.

    Returns a list of (building_skill, collection_skill, position) tuples.
    """
    positions = [p for p in corner_positions(world_map) if not world_map.water[p]]
    if n_agents > len(positions):
        raise ValueError(
            f"{n_agents} agents but only {len(positions)} start positions"
        )
    if n_agents > len(BUILDING_SKILLS):
        raise ValueError(f"{n_agents} agents but {len(BUILDING_SKILLS)} skills")
    skills = list(BUILDING_SKILLS[:n_agents])
    rng.shuffle(skills)
    idx = rng.permutation(len(positions))[:n_agents]
    return [
        (skills[i], collection_skill_for(skills[i]), positions[idx[i]])
        for i in range(n_agents)
    ]


@dataclass
class World:
    """Mutable world state: the map plus resources, houses, and agents."""

    world_map: WorldMap
    agents: list
    labor_costs: LaborCosts = field(default_factory=LaborCosts)
    respawn_probability: float = RESPAWN_PROBABILITY

    def __post_init__(self):
        h, w = self.world_map.height, self.world_map.width
        self.resource = np.zeros((h, w), dtype=bool)     # unit present on source cell
        self.houses = np.full((h, w), NO_OWNER, dtype=np.int8)
        self.occupant = np.full((h, w), NO_OWNER, dtype=np.int8)
        for a in self.agents:
            if self.world_map.water[a.position] or self.occupant[a.position] != NO_OWNER:
                raise ValueError(f"invalid start position {a.position} for agent {a.id}")
            self.occupant[a.position] = a.id
        # Conservation counters (units created / consumed), per resource kind.
        self.units_spawned = [0, 0]
        self.units_built_with = [0, 0]

    @classmethod
    def create(cls, world_map, n_agents, rng, labor_costs=None, respawn_probability=RESPAWN_PROBABILITY,
               populate_sources=True):
        assignments = assign_skills_and_spawns(n_agents, world_map, rng)
        agents = [
            AgentState(id=i, position=pos, building_skill=b, collection_skill=c)
            for i, (b, c, pos) in enumerate(assignments)
        ]
        world = cls(world_map, agents, labor_costs or LaborCosts(), respawn_probability)
        if populate_sources:
            fresh = world_map.source != NO_SOURCE
            world.resource[fresh] = True
            counts = [int((world.resource & world_map.source_mask(k)).sum()) for k in ResourceKind]
            world.units_spawned = counts
        return world

    # -- per-tick dynamics ---------------------------------------------------

    def spawn_resources(self, rng: np.random.Generator) -> int:
        """Each empty, unoccupied source cell gains a unit with fixed probability."""
        empty = (self.world_map.source != NO_SOURCE) & ~self.resource & (self.occupant == NO_OWNER)
        idx = np.flatnonzero(empty)
        if idx.size == 0:
            return 0
        hits = idx[rng.random(idx.size) < self.respawn_probability]
        if hits.size:
            flat = self.resource.reshape(-1)
            flat[hits] = True
            kinds = self.world_map.source.reshape(-1)[hits]
            self.units_spawned[0] += int((kinds == int(ResourceKind.WOOD)).sum())
            self.units_spawned[1] += int((kinds == int(ResourceKind.STONE)).sum())
        return int(hits.size)

    def can_enter(self, agent_id: int, r: int, c: int) -> bool:
        if not (0 <= r < self.world_map.height and 0 <= c < self.world_map.width):
            return False
        if self.world_map.water[r, c]:
            return False
        if self.occupant[r, c] != NO_OWNER:
            return False
        owner = self.houses[r, c]
        return owner == NO_OWNER or owner == agent_id

    def move_agent(self, agent_id: int, direction: str, rng: np.random.Generator):
        """Move one cell; gathers if the destination holds a resource.

        Returns (moved, units_gathered). Blocked moves are no-ops and charge
        no labor.
        """
        if direction not in MOVE_DELTAS:
            raise ValueError(f"unknown direction {direction!r}")
        agent = self.agents[agent_id]
        dr, dc = MOVE_DELTAS[direction]
        r, c = agent.position[0] + dr, agent.position[1] + dc
        if not self.can_enter(agent_id, r, c):
            return False, 0
        self.occupant[agent.position] = NO_OWNER
        agent.position = (r, c)
        self.occupant[r, c] = agent_id
        agent.labor += self.labor_costs.move
        gathered = 0
        if self.resource[r, c]:
            gathered = self._gather(agent, r, c, rng)
        return True, gathered

    def _gather(self, agent: AgentState, r: int, c: int, rng: np.random.Generator) -> int:
        kind = ResourceKind(int(self.world_map.source[r, c]))
        units = 1
        if rng.random() < agent.collection_skill - 1.0:
            units += 1
        agent.add_resource(kind, units)
        self.resource[r, c] = False
        agent.labor += self.labor_costs.gather
        if units > 1:
            # The bonus unit is conjured by skill, not taken from the map.
            self.units_spawned[int(kind)] += units - 1
        return units

    def can_build(self, agent_id: int) -> bool:
        agent = self.agents[agent_id]
        r, c = agent.position
        return (
            agent.wood >= 1
            and agent.stone >= 1
            and self.world_map.source[r, c] == NO_SOURCE
            and self.houses[r, c] == NO_OWNER
        )

    def build(self, agent_id: int):
        """Spend 1 wood + 1 stone for a house and its skill-scaled payout.

        Returns the coin earned, or None if the build was rejected.
        """
        if not self.can_build(agent_id):
            return None
        agent = self.agents[agent_id]
        agent.wood -= 1
        agent.stone -= 1
        self.units_built_with[0] += 1
        self.units_built_with[1] += 1
        self.houses[agent.position] = agent_id
        payout = agent.build_payout
        agent.coin += payout
        agent.labor += self.labor_costs.build
        agent.houses_built += 1
        return payout

    # -- accounting ----------------------------------------------------------

    def units_on_map(self, kind: ResourceKind) -> int:
        return int((self.resource & self.world_map.source_mask(kind)).sum())

    def units_held(self, kind: ResourceKind) -> int:
        if kind == ResourceKind.WOOD:
            return sum(a.wood + a.escrow_wood for a in self.agents)
        return sum(a.stone + a.escrow_stone for a in self.agents)

    def coin_endowments(self) -> np.ndarray:
        return np.array([a.total_coin for a in self.agents])

    def labors(self) -> np.ndarray:
        return np.array([a.labor for a in self.agents])
