import numpy as np
import pytest

from gatherbuild.world import (
    BUILDING_SKILLS,
    AgentState,
    LaborCosts,
    MapError,
    ResourceKind,
    World,
    assign_skills_and_spawns,
    collection_skill_for,
    default_map,
    load_map,
)


def open_map(rows=8, cols=8):
    lines = [f"{rows} {cols}"] + ["." * cols] * rows
    return load_map("\n".join(lines))


def world_with_agent(pos=(3, 3), skill=1.0, cskill=1.0, world_map=None):
    wm = world_map or open_map()
    agent = AgentState(id=0, position=pos, building_skill=skill, collection_skill=cskill)
    return World(wm, [agent])


class TestLoadMap:
    def test_default_quadrant_map(self):
        m = default_map()
        assert (m.height, m.width) == (25, 25)
        # The water cross splits the grid into four quadrants with passages.
        assert m.water[12, :].sum() == 23 and m.water[:, 12].sum() == 23
        assert not m.water[12, 5] and not m.water[12, 19]
        assert m.source_mask(ResourceKind.WOOD).sum() > 0
        assert m.source_mask(ResourceKind.STONE).sum() > 0
        for corner in [(0, 0), (0, 24), (24, 0), (24, 24)]:
            assert not m.water[corner] and m.source[corner] == -1

    def test_empty_grid(self):
        m = load_map("2 2\n..\n..")
        assert not m.water.any() and (m.source == -1).all()

    def test_water_row_mask(self):
        m = load_map("3 4\n....\nWWWW\n....")
        assert m.water[1].all()
        assert not m.water[0].any() and not m.water[2].any()

    def test_non_rectangular_rejected(self):
        with pytest.raises(MapError):
            load_map("2 3\n...\n..")

    def test_unknown_character_rejected(self):
        with pytest.raises(MapError):
            load_map("1 3\n.x.")

    def test_wrong_row_count_rejected(self):
        with pytest.raises(MapError):
            load_map("3 2\n..\n..")


class TestSpawn:
    def make(self, prob):
        wm = load_map("1 4\nwwww")
        w = World(wm, [AgentState(id=0, position=(0, 0), building_skill=1, collection_skill=1)],
                  respawn_probability=prob)
        return w

    def test_zero_probability(self):
        w = self.make(0.0)
        w.spawn_resources(np.random.default_rng(0))
        assert not w.resource.any()

    def test_certain_spawn_fills_empty_unoccupied_sources(self):
        w = self.make(1.0)
        w.spawn_resources(np.random.default_rng(0))
        # Everything except the cell under the agent fills up.
        assert w.resource[0, 1:].all() and not w.resource[0, 0]

    def test_populated_cells_unchanged(self):
        w = self.make(1.0)
        w.resource[0, 2] = True
        before = w.units_spawned[0]
        w.spawn_resources(np.random.default_rng(0))
        assert w.units_spawned[0] - before == 2  # only the two empty free cells

    def test_monte_carlo_rate(self):
        wm = load_map("1 2\n.w")
        w = World(wm, [AgentState(id=0, position=(0, 0), building_skill=1, collection_skill=1)],
                  respawn_probability=0.01)
        rng = np.random.default_rng(123)
        hits = 0
        for _ in range(10_000):
            w.resource[0, 1] = False
            hits += w.spawn_resources(rng)
        assert abs(hits / 10_000 - 0.01) < 0.003


class TestMove:
    def test_move_right_costs_labor(self):
        w = world_with_agent((3, 3))
        moved, gathered = w.move_agent(0, "right", np.random.default_rng(0))
        assert moved and gathered == 0
        assert w.agents[0].position == (3, 4)
        assert w.agents[0].labor == pytest.approx(0.21)

    def test_water_blocks(self):
        wm = load_map("2 2\n.W\n..")
        w = World(wm, [AgentState(id=0, position=(0, 0), building_skill=1, collection_skill=1)])
        moved, _ = w.move_agent(0, "right", np.random.default_rng(0))
        assert not moved
        assert w.agents[0].position == (0, 0)
        assert w.agents[0].labor == 0.0  # blocked moves are free

    def test_out_of_bounds_blocks(self):
        w = world_with_agent((0, 0))
        assert not w.move_agent(0, "up", np.random.default_rng(0))[0]
        assert not w.move_agent(0, "left", np.random.default_rng(0))[0]

    def test_other_agent_blocks(self):
        wm = open_map()
        a = AgentState(id=0, position=(1, 1), building_skill=1, collection_skill=1)
        b = AgentState(id=1, position=(1, 2), building_skill=1, collection_skill=1)
        w = World(wm, [a, b])
        assert not w.move_agent(0, "right", np.random.default_rng(0))[0]

    def test_own_house_passable_others_blocked(self):
        wm = open_map()
        a = AgentState(id=0, position=(1, 1), building_skill=1, collection_skill=1, wood=1, stone=1)
        b = AgentState(id=1, position=(3, 3), building_skill=1, collection_skill=1)
        w = World(wm, [a, b])
        assert w.build(0) is not None
        w.move_agent(0, "right", np.random.default_rng(0))
        # Own house: can re-enter.
        moved, _ = w.move_agent(0, "left", np.random.default_rng(0))
        assert moved and w.agents[0].position == (1, 1)
        # Other agent: blocked by the house.
        w.move_agent(0, "right", np.random.default_rng(0))
        b.position = (2, 1)
        w.occupant[3, 3] = -1
        w.occupant[2, 1] = 1
        assert not w.move_agent(1, "up", np.random.default_rng(0))[0]

    def test_bad_direction(self):
        w = world_with_agent()
        with pytest.raises(ValueError):
            w.move_agent(0, "sideways", np.random.default_rng(0))


class TestGather:
    def gather_world(self, cskill):
        wm = load_map("1 3\n.ww")
        a = AgentState(id=0, position=(0, 0), building_skill=1, collection_skill=cskill)
        w = World(wm, [a])
        w.resource[0, 1] = True
        return w

    def test_min_skill_always_one_unit(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            w = self.gather_world(1.0)
            w.move_agent(0, "right", rng)
            assert w.agents[0].wood == 1

    def test_max_skill_always_two_units(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            w = self.gather_world(2.0)
            w.move_agent(0, "right", rng)
            assert w.agents[0].wood == 2

    def test_bonus_probability(self):
        rng = np.random.default_rng(9)
        bonus = 0
        n = 5000
        for _ in range(n):
            w = self.gather_world(1.2)
            w.move_agent(0, "right", rng)
            bonus += w.agents[0].wood - 1
        assert abs(bonus / n - 0.2) < 0.02

    def test_gather_empties_cell_and_charges_labor(self):
        w = self.gather_world(1.0)
        w.move_agent(0, "right", np.random.default_rng(0))
        assert not w.resource[0, 1]
        assert w.agents[0].labor == pytest.approx(0.21 + 0.21)  # move + gather


class TestBuild:
    def test_payout_scales_with_skill(self):
        for skill, payout in [(2.5, 25.0), (1.0, 10.0)]:
            w = world_with_agent(skill=skill)
            w.agents[0].wood, w.agents[0].stone = 1, 1
            assert w.build(0) == pytest.approx(payout)
            assert w.agents[0].coin == pytest.approx(payout)
            assert w.agents[0].labor == pytest.approx(2.1)

    def test_requires_resources(self):
        w = world_with_agent()
        assert w.build(0) is None
        w.agents[0].wood = 1
        assert w.build(0) is None

    def test_source_cell_rejected(self):
        wm = load_map("1 2\nw.")
        a = AgentState(id=0, position=(0, 0), building_skill=1, collection_skill=1,
                       wood=1, stone=1)
        w = World(wm, [a])
        assert w.build(0) is None
        assert a.wood == 1 and a.stone == 1 and a.labor == 0.0

    def test_existing_house_rejected(self):
        w = world_with_agent()
        w.agents[0].wood, w.agents[0].stone = 2, 2
        assert w.build(0) is not None
        assert w.build(0) is None

    def test_escrowed_resources_unusable(self):
        w = world_with_agent()
        w.agents[0].wood, w.agents[0].stone = 1, 1
        w.agents[0].stone = 0
        w.agents[0].escrow_stone = 1
        assert w.build(0) is None


class TestSkillsAndSpawns:
    def test_payout_multiset(self):
        rng = np.random.default_rng(0)
        out = assign_skills_and_spawns(4, default_map(), rng)
        payouts = sorted(round(10 * b, 10) for b, _, _ in out)
        assert payouts == [11.3, 13.3, 16.5, 22.2]

    def test_collection_skill_range(self):
        for b in BUILDING_SKILLS:
            c = collection_skill_for(b)
            assert 1.0 <= c <= 2.0

    def test_deterministic_under_seed(self):
        a = assign_skills_and_spawns(4, default_map(), np.random.default_rng(42))
        b = assign_skills_and_spawns(4, default_map(), np.random.default_rng(42))
        assert a == b

    def test_shuffle_uniformity(self):
        rng = np.random.default_rng(1)
        wins = np.zeros(4)
        n = 1000
        top = max(BUILDING_SKILLS)
        for _ in range(n):
            out = assign_skills_and_spawns(4, default_map(), rng)
            wins[[i for i, (b, _, _) in enumerate(out) if b == top][0]] += 1
        assert np.all(np.abs(wins / n - 0.25) < 0.04)

    def test_too_many_agents(self):
        with pytest.raises(ValueError):
            assign_skills_and_spawns(5, default_map(), np.random.default_rng(0))


class TestInvariantsUnderRandomPlay:
    def test_conservation_and_labor(self):
        rng = np.random.default_rng(7)
        w = World.create(default_map(), 4, rng)
        costs = LaborCosts()
        start_units = [w.units_on_map(k) for k in ResourceKind]
        assert w.units_spawned == start_units  # fresh map starts populated
        expected_labor = np.zeros(4)
        for _ in range(600):
            w.spawn_resources(rng)
            for i in rng.permutation(4):
                roll = rng.random()
                if roll < 0.8:
                    d = ["up", "down", "left", "right"][rng.integers(4)]
                    moved, gathered = w.move_agent(i, d, rng)
                    if moved:
                        expected_labor[i] += costs.move
                    if gathered:
                        expected_labor[i] += costs.gather
                elif w.build(i) is not None:
                    expected_labor[i] += costs.build
        assert np.allclose(w.labors(), expected_labor)
        for k in ResourceKind:
            held = w.units_held(k)
            assert w.units_spawned[int(k)] == (
                w.units_on_map(k) + held + w.units_built_with[int(k)]
            )
        # Coin created only by building, exactly 10 x skill per house.
        for a in w.agents:
            assert a.total_coin == pytest.approx(a.houses_built * 10 * a.building_skill)
        # No agent on water, no two agents on one cell.
        positions = [a.position for a in w.agents]
        assert len(set(positions)) == 4
        assert not any(w.world_map.water[p] for p in positions)
