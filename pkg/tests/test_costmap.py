from __future__ import annotations

import json
import math

import numpy as np
import pytest

from oracles import oracle_dijkstra
from terraseg.costmap import (
    BLOCKED,
    Costmap,
    costmap_from_png16,
    costmap_to_png16,
    plan_path,
    project_ground,
    suggest_waypoints,
    to_costmap,
)
from terraseg.errors import (
    GoalBlocked,
    IndexOutOfRange,
    NoPath,
    SingularHomography,
    StartBlocked,
    ValidationFailure,
)

LANDSCAPE, FLOWERS, LOGS, SKY, ROCKS = 8, 5, 6, 9, 7


def open_map(h, w, safe=1.0, caution=10.0) -> Costmap:
    return Costmap(np.full((h, w), safe), np.zeros((h, w), np.uint8), safe, caution)


def with_blocked(cmap: Costmap, cells) -> Costmap:
    costs = cmap.cell_costs.copy()
    tiers = cmap.tiers.copy()
    for r, c in cells:
        costs[r, c] = BLOCKED
        tiers[r, c] = 2
    return Costmap(costs, tiers, cmap.safe_cost, cmap.caution_cost)


def random_costmap(rng, h=16, w=16, p_block=0.2, p_caution=0.3) -> Costmap:
    roll = rng.random((h, w))
    tiers = np.zeros((h, w), np.uint8)
    tiers[roll < p_caution + p_block] = 1
    tiers[roll < p_block] = 2
    costs = np.choose(tiers, [1.0, 10.0, BLOCKED])
    return Costmap(costs, tiers, 1.0, 10.0)


# -- to_costmap -------------------------------------------------------------------

def test_fixture_two_by_two(schema):
    mask = np.array([[LANDSCAPE, FLOWERS], [LOGS, SKY]], np.uint8)
    cmap = to_costmap(mask, schema)
    assert cmap.cell_costs[0, 0] == 1.0
    assert cmap.cell_costs[0, 1] == 10.0
    assert math.isinf(cmap.cell_costs[1, 0])
    assert cmap.cell_costs[1, 1] == 1.0
    assert cmap.tiers.tolist() == [[0, 1], [2, 0]]


def test_all_sky_uniform_safe(schema):
    cmap = to_costmap(np.full((4, 4), SKY, np.uint8), schema)
    assert np.all(cmap.cell_costs == 1.0)


def test_all_rocks_fully_blocked(schema):
    cmap = to_costmap(np.full((3, 3), ROCKS, np.uint8), schema)
    assert np.all(np.isinf(cmap.cell_costs))
    assert np.all(cmap.tiers == 2)


def test_cost_config_validation(schema):
    mask = np.zeros((2, 2), np.uint8)
    with pytest.raises(ValidationFailure):
        to_costmap(mask, schema, safe_cost=10.0, caution_cost=1.0)
    with pytest.raises(IndexOutOfRange):
        to_costmap(np.full((2, 2), 12, np.uint8), schema)


def test_pixelwise_independence(schema, rng):
    mask = rng.integers(0, 10, (6, 6)).astype(np.uint8)
    perm = rng.permutation(36)
    permuted = mask.ravel()[perm].reshape(6, 6)
    a = to_costmap(mask, schema)
    b = to_costmap(permuted, schema)
    assert np.array_equal(a.cell_costs.ravel()[perm], b.cell_costs.ravel())
    assert np.array_equal(a.tiers.ravel()[perm], b.tiers.ravel())


# -- projection --------------------------------------------------------------------

def test_identity_projection(schema, rng):
    cmap = to_costmap(rng.integers(0, 10, (5, 7)).astype(np.uint8), schema)
    out = project_ground(cmap, np.eye(3), (5, 7))
    assert np.array_equal(out.tiers, cmap.tiers)
    got = out.cell_costs
    assert np.array_equal(np.isinf(got), np.isinf(cmap.cell_costs))
    finite = ~np.isinf(got)
    assert np.array_equal(got[finite], cmap.cell_costs[finite])


def test_translation_projection(schema):
    mask = np.arange(12, dtype=np.uint8).reshape(3, 4) % 10
    cmap = to_costmap(mask, schema)
    shift = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    out = project_ground(cmap, shift, (3, 4))
    # columns 0..1 are vacated -> Blocked; column c samples source c-2
    assert np.all(np.isinf(out.cell_costs[:, :2]))
    assert np.all(out.tiers[:, :2] == 2)
    assert np.array_equal(out.tiers[:, 2:], cmap.tiers[:, :2])


def test_singular_homography(schema):
    cmap = to_costmap(np.zeros((2, 2), np.uint8), schema)
    with pytest.raises(SingularHomography):
        project_ground(cmap, np.zeros((3, 3)), (2, 2))


def test_translation_round_trip(schema, rng):
    cmap = to_costmap(rng.integers(0, 10, (6, 6)).astype(np.uint8), schema)
    shift = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 1.0], [0.0, 0.0, 1.0]])
    there = project_ground(cmap, shift, (6, 6))
    back = project_ground(there, np.linalg.inv(shift), (6, 6))
    # cells that stayed in bounds both ways carry the original tiers
    inner = np.s_[0:5, 0:4]
    assert np.array_equal(back.tiers[inner], cmap.tiers[inner])


# -- planning ----------------------------------------------------------------------

def test_free_diagonal():
    plan = plan_path(open_map(3, 3), (0, 0), (2, 2))
    assert plan.total_cost == pytest.approx(2 * math.sqrt(2), abs=1e-12)
    assert plan.waypoints[0] == (0, 0) and plan.waypoints[-1] == (2, 2)
    for (r0, c0), (r1, c1) in zip(plan.waypoints, plan.waypoints[1:]):
        assert max(abs(r0 - r1), abs(c0 - c1)) == 1


def test_blocked_centre_detour():
    cmap = with_blocked(open_map(3, 3), [(1, 1)])
    plan = plan_path(cmap, (0, 0), (2, 2))
    oracle = oracle_dijkstra(cmap.cell_costs, (0, 0), (2, 2))
    assert plan.total_cost == pytest.approx(oracle, abs=0)
    assert plan.total_cost == pytest.approx(2 + math.sqrt(2), abs=1e-12)
    assert (1, 1) not in plan.waypoints
    assert plan.blocked_cells_adjacent == 1


def test_endpoint_errors():
    cmap = with_blocked(open_map(3, 3), [(0, 0), (2, 2)])
    with pytest.raises(StartBlocked):
        plan_path(cmap, (0, 0), (1, 1))
    with pytest.raises(GoalBlocked):
        plan_path(cmap, (1, 1), (2, 2))
    with pytest.raises(ValidationFailure):
        plan_path(cmap, (5, 5), (1, 1))


def test_no_path_through_wall():
    cmap = open_map(3, 5)
    cmap = with_blocked(cmap, [(0, 2), (1, 2), (2, 2)])
    with pytest.raises(NoPath):
        plan_path(cmap, (1, 0), (1, 4))


def test_matches_dijkstra_on_random_maps(rng):
    checked = 0
    while checked < 50:
        cmap = random_costmap(rng)
        free = np.argwhere(np.isfinite(cmap.cell_costs))
        if len(free) < 2:
            continue
        start = tuple(free[rng.integers(0, len(free))])
        goal = tuple(free[rng.integers(0, len(free))])
        oracle = oracle_dijkstra(cmap.cell_costs, start, goal)
        if oracle is None:
            with pytest.raises(NoPath):
                plan_path(cmap, start, goal)
        else:
            assert plan_path(cmap, start, goal).total_cost == pytest.approx(oracle, abs=0)
        checked += 1


def test_raising_caution_cost_never_cheapens(rng):
    for _ in range(20):
        roll = rng.random((10, 10))
        tiers = np.where(roll < 0.4, 1, 0).astype(np.uint8)
        tiers[0, 0] = tiers[9, 9] = 0
        cheap = Costmap(np.choose(tiers, [1.0, 5.0]), tiers, 1.0, 5.0)
        dear = Costmap(np.choose(tiers, [1.0, 20.0]), tiers, 1.0, 20.0)
        a = plan_path(cheap, (0, 0), (9, 9)).total_cost
        b = plan_path(dear, (0, 0), (9, 9)).total_cost
        assert b >= a - 1e-12


def test_waypoints_clearance_zero_is_plain_plan():
    cmap = with_blocked(open_map(5, 5), [(2, 2)])
    plan = plan_path(cmap, (0, 0), (4, 4))
    replanned = suggest_waypoints(plan, cmap, clearance=0)
    assert replanned.waypoints == plan.waypoints
    assert replanned.total_cost == plan.total_cost


def test_waypoints_clearance_avoids_obstacle():
    # single obstacle beside the straight path; clearance 1 must clear it
    cmap = with_blocked(open_map(7, 7), [(3, 3)])
    plan = plan_path(cmap, (3, 0), (3, 6))
    assert plan.blocked_cells_adjacent >= 1
    cleared = suggest_waypoints(plan, cmap, clearance=1)
    assert cleared.blocked_cells_adjacent == 0
    assert cleared.waypoints[0] == (3, 0) and cleared.waypoints[-1] == (3, 6)
    for r, c in cleared.waypoints:
        assert max(abs(r - 3), abs(c - 3)) > 1


def test_waypoints_clearance_swallows_goal():
    cmap = with_blocked(open_map(5, 5), [(4, 3)])
    plan = plan_path(cmap, (0, 0), (4, 4))
    with pytest.raises(NoPath):
        suggest_waypoints(plan, cmap, clearance=2)


# -- serialisation -----------------------------------------------------------------

def test_png16_round_trip(schema, rng):
    mask = rng.integers(0, 10, (9, 9)).astype(np.uint8)
    cmap = to_costmap(mask, schema)
    png, sidecar = costmap_to_png16(cmap)
    assert json.dumps(sidecar)  # JSON-serialisable
    back = costmap_from_png16(png, sidecar)
    assert np.array_equal(back.tiers, cmap.tiers)
    finite = np.isfinite(cmap.cell_costs)
    assert np.array_equal(np.isfinite(back.cell_costs), finite)
    assert np.array_equal(back.cell_costs[finite], cmap.cell_costs[finite])
