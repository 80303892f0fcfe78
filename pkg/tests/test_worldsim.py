from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import open_world, random_grid_world
from oracles import brute_dijkstra, counts_to_metres, segment_clear
from zson.embedding import ConceptVocabulary
from zson.worldsim import (
    MOVE_FORWARD,
    STOP,
    TURN_LEFT,
    TURN_RIGHT,
    UNREACHABLE,
    AgentPose,
    GridWorld,
    KinematicsConfig,
    ObjectInstance,
    Room,
    WorldGenerationError,
    WorldGenParams,
    check_world,
    corridor_world,
    generate_world,
    geodesic_distance,
    load_world,
    observation_dim,
    observe,
    save_world,
    step_action,
    visible_concept_bag,
    visible_objects,
    with_objects,
    world_from_dict,
    world_to_dict,
    world_to_json,
)

KIN = KinematicsConfig()


# ---------------------------------------------------------------- kinematics


def test_turn_left_adds_thirty_degrees():
    w = open_world()
    p, hit = step_action(w, AgentPose(2.5, 2.5, 90), TURN_LEFT, KIN)
    assert p.heading == 120 and not hit
    p, _ = step_action(w, AgentPose(2.5, 2.5, 0), TURN_RIGHT, KIN)
    assert p.heading == 330
    p, _ = step_action(w, AgentPose(2.5, 2.5, 330), TURN_LEFT, KIN)
    assert p.heading == 0


def test_move_forward_in_open_space():
    w = open_world()
    p, hit = step_action(w, AgentPose(1.0, 1.0, 0), MOVE_FORWARD, KIN)
    assert (p.x, p.y, p.heading) == (1.25, 1.0, 0) and not hit


def test_move_into_wall_is_identity():
    w = open_world()
    start = AgentPose(1.1, 1.5, 180)
    p, hit = step_action(w, start, MOVE_FORWARD, KIN)
    assert hit and p == start


def test_stop_leaves_pose_unchanged():
    w = open_world()
    start = AgentPose(3.5, 3.5, 60)
    assert step_action(w, start, STOP, KIN) == (start, False)


def test_unknown_action_rejected():
    with pytest.raises(ValueError):
        step_action(open_world(), AgentPose(2.5, 2.5, 0), 9, KIN)


@given(st.lists(st.sampled_from([MOVE_FORWARD, TURN_LEFT, TURN_RIGHT, STOP]), max_size=80),
       st.integers(0, 3))
def test_agent_never_enters_a_blocked_cell(actions, wseed):
    w = generate_world(wseed)
    r, c = w.free_cells[len(w.free_cells) // 2]
    pose = AgentPose(*w.cell_center(r, c), 30 * wseed)
    for a in actions:
        pose, _ = step_action(w, pose, a, KIN)
        assert w.is_free(pose.x, pose.y)
        assert pose.heading % 30 == 0 and 0 <= pose.heading < 360


# ---------------------------------------------------------------- geodesics


def test_geodesic_straight_line_and_identity():
    occ = np.zeros((4, 4), dtype=bool)
    w = GridWorld("g", 1.0, occ, (Room("kitchen", tuple(map(tuple, np.argwhere(~occ)))),), (), 0)
    assert geodesic_distance(w, (0.5, 0.5), (0.5, 2.5)) == 2.0
    assert geodesic_distance(w, (1.5, 1.5), (1.5, 1.5)) == 0.0


def test_geodesic_detour_matches_brute_force():
    occ = np.zeros((5, 5), dtype=bool)
    occ[0:4, 2] = True  # wall with a gap at the bottom row
    w = GridWorld("d", 1.0, occ, (Room("kitchen", tuple(map(tuple, np.argwhere(~occ)))),), (), 0)
    ref = brute_dijkstra(occ, (0, 0))
    a, b = ref[(0, 4)]
    assert geodesic_distance(w, (0.5, 0.5), (4.5, 0.5)) == counts_to_metres(a, b, 1.0)
    assert geodesic_distance(w, (0.5, 0.5), (4.5, 0.5)) > 4.0


def test_geodesic_unreachable():
    occ = np.zeros((5, 5), dtype=bool)
    occ[:, 2] = True
    w = GridWorld("u", 1.0, occ, (Room("kitchen", tuple(map(tuple, np.argwhere(~occ)))),), (), 0)
    assert geodesic_distance(w, (0.5, 0.5), (4.5, 0.5)) == UNREACHABLE


@pytest.mark.parametrize("seed", range(6))
def test_geodesic_symmetry_triangle_and_euclidean_bound(seed):
    w = generate_world(seed)
    rng = np.random.default_rng(seed)
    free = w.free_cells
    for _ in range(200):
        i, j, k = rng.integers(len(free), size=3)
        a, b, c = (w.cell_center(*free[n]) for n in (i, j, k))
        ab = geodesic_distance(w, a, b)
        assert ab == geodesic_distance(w, b, a)
        assert ab <= geodesic_distance(w, a, c) + geodesic_distance(w, c, b) + 1e-12
        assert ab >= math.dist(a, b) - 2 * w.cell_size


@pytest.mark.parametrize("seed", range(10))
def test_geodesic_matches_brute_force_on_random_grids(seed):
    rng = np.random.default_rng(1000 + seed)
    w = random_grid_world(rng, 12, 12)
    free = [tuple(x) for x in w.free_cells]
    src = free[rng.integers(len(free))]
    ref = brute_dijkstra(w.occupancy, src)
    for dst in free:
        d = geodesic_distance(w, w.cell_center(*src), w.cell_center(*dst))
        if dst in ref:
            assert d == counts_to_metres(*ref[dst], w.cell_size)
        else:
            assert d == UNREACHABLE


# ---------------------------------------------------------------- sensing


def test_object_behind_agent_not_in_bag():
    w = open_world(objects=[("sink", 2.5, 4.5)], room="kitchen")
    bag = visible_concept_bag(w, AgentPose(4.5, 4.5, 0), KIN)
    assert bag.counts == {"kitchen": 1}


def test_object_ahead_in_bag():
    w = open_world(objects=[("sink", 5.0, 4.5)], room="kitchen")
    bag = visible_concept_bag(w, AgentPose(4.5, 4.5, 0), KIN)
    assert bag.counts == {"kitchen": 1, "sink": 1}


def test_object_behind_wall_excluded():
    w = open_world(objects=[("sink", 7.5, 4.5)], blocked=[(3, 5), (4, 5), (5, 5)], room="kitchen")
    assert visible_objects(w, AgentPose(3.5, 4.5, 0), KIN) == []
    w2 = open_world(objects=[("sink", 7.5, 4.5)], room="kitchen")
    assert len(visible_objects(w2, AgentPose(3.5, 4.5, 0), KIN)) == 1


def test_bag_invariant_under_objects_added_behind_walls():
    w = open_world(h=10, w=12, objects=[("sofa", 3.5, 5.5)], blocked=[(r, 6) for r in range(1, 9)],
                   room="living_room")
    pose = AgentPose(1.5, 5.5, 0)
    before = visible_concept_bag(w, pose, KIN)
    hidden = list(w.objects) + [ObjectInstance("tv", (8.5, 5.5), "living_room"),
                                ObjectInstance("plant", (9.5, 3.5), "living_room")]
    after = visible_concept_bag(with_objects(w, hidden), pose, KIN)
    assert before == after


@pytest.mark.parametrize("seed", range(8))
def test_visibility_agrees_with_dense_sampling_oracle(seed):
    rng = np.random.default_rng(seed)
    w = generate_world(seed)
    free = w.free_cells
    checked = 0
    for _ in range(300):
        r, c = free[rng.integers(len(free))]
        pose = AgentPose(*w.cell_center(r, c), 30 * int(rng.integers(12)))
        tr, tc = free[rng.integers(len(free))]
        target = (w.cell_center(tr, tc)[0] + rng.uniform(-0.2, 0.2) * w.cell_size,
                  w.cell_center(tr, tc)[1] + rng.uniform(-0.2, 0.2) * w.cell_size)
        dist = math.dist(pose.position, target)
        bearing = math.degrees(math.atan2(target[1] - pose.y, target[0] - pose.x))
        rel = (bearing - pose.heading + 180) % 360 - 180
        if dist > KIN.view_range or abs(rel) > 44.0 or dist < 1e-6:
            continue
        # only robust cases: the oracle must agree with itself under small endpoint jitter
        votes = {segment_clear(w.occupancy, w.cell_size, pose.position, (target[0] + dx, target[1] + dy))
                 for dx in (-2e-3, 0, 2e-3) for dy in (-2e-3, 0, 2e-3)}
        if len(votes) != 1:
            continue
        ww = with_objects(w, [ObjectInstance("sink", target, w.room_at(*target))])
        assert (len(visible_objects(ww, pose, KIN)) == 1) == votes.pop()
        checked += 1
    assert checked > 20


def test_open_corridor_longer_than_view_range_reads_one():
    w = open_world(h=60, w=60)
    obs = observe(w, AgentPose(30.5, 30.5, 0), KIN)
    stride = 1 + len(w.vocab.object_concepts)
    assert all(obs[k * stride] == 1.0 for k in range(KIN.n_view_bins))


def test_wall_distance_ratio_in_centre_sector():
    w = open_world(h=10, w=10)
    obs = observe(w, AgentPose(8.75, 4.5, 0), KIN)
    stride = 1 + len(w.vocab.object_concepts)
    centre = KIN.n_view_bins // 2
    assert obs[centre * stride] == pytest.approx(0.25 / KIN.view_range)


def test_observation_dimension_contract(worlds):
    v = ConceptVocabulary()
    dim = observation_dim(v, KIN)
    assert dim == KIN.n_view_bins * (1 + len(v.object_concepts)) + len(v.room_concepts)
    for w in worlds:
        assert observe(w, AgentPose(*w.cell_center(*w.free_cells[0]), 0), KIN).shape == (dim,)


def test_objects_land_in_left_to_right_sectors():
    w = open_world(objects=[("sink", 6.5, 6.5), ("tv", 6.5, 2.5)], room="kitchen")
    obs = observe(w, AgentPose(4.5, 4.5, 0), KIN)  # sink at +45 (left), tv at -45 (right)
    stride = 1 + len(w.vocab.object_concepts)
    sink = 1 + w.vocab.object_index("sink")
    tv = 1 + w.vocab.object_index("tv")
    assert obs[0 * stride + sink] == 1.0
    assert obs[(KIN.n_view_bins - 1) * stride + tv] == 1.0
    room = obs[-len(w.vocab.room_concepts):]
    assert room[w.vocab.room_index("kitchen")] == 1.0 and room.sum() == 1.0


def test_sensing_is_pure(world):
    pose = AgentPose(*world.cell_center(*world.free_cells[5]), 120)
    a = observe(world, pose, KIN)
    b = observe(world, pose, KIN)
    assert a.tobytes() == b.tobytes()


def test_kinematics_config_validation():
    with pytest.raises(ValueError):
        KinematicsConfig(hfov=90, n_view_bins=7)
    with pytest.raises(ValueError):
        KinematicsConfig(step_size=0)


# ---------------------------------------------------------------- generation


def test_generation_is_deterministic():
    assert world_to_json(generate_world(7)) == world_to_json(generate_world(7))
    assert world_to_json(generate_world(7)) != world_to_json(generate_world(8))


def test_hundred_default_worlds_pass_invariants():
    for s in range(1, 101):
        assert check_world(generate_world(s)) == []


def test_degenerate_single_room_no_objects():
    p = WorldGenParams(min_rooms=1, max_rooms=1, min_objects_per_room=0, max_objects_per_room=0)
    w = generate_world(5, p)
    assert len(w.rooms) == 1 and w.objects == ()
    assert check_world(w) == []


def test_generation_failure_is_explicit():
    p = WorldGenParams(height=8, width=8, min_rooms=4, max_rooms=4, min_room_side=4, max_retries=3)
    with pytest.raises(WorldGenerationError):
        generate_world(0, p)


def test_world_gen_params_round_trip_and_unknown_key():
    p = WorldGenParams(max_rooms=3)
    assert WorldGenParams.from_dict(p.to_dict()) == p
    with pytest.raises(ValueError):
        WorldGenParams.from_dict({"rooms": 3})


def test_check_world_reports_violations():
    occ = np.zeros((8, 8), dtype=bool)
    occ[:, 4] = True
    cells = tuple(map(tuple, np.argwhere(~occ)))
    w = GridWorld("bad", 1.0, occ, (Room("kitchen", cells),), (ObjectInstance("sink", (4.5, 0.5), "kitchen"),), 0)
    problems = check_world(w)
    assert any("connected" in p for p in problems)
    assert any("sink" in p for p in problems)


def test_world_json_round_trip(tmp_path, world):
    d = world_to_dict(world)
    assert set(d) >= {"id", "cell_size", "grid", "rooms", "objects", "rng_seed"}
    assert world_to_json(world_from_dict(d)) == world_to_json(world)
    save_world(world, tmp_path / "w.json")
    assert world_to_json(load_world(tmp_path / "w.json")) == world_to_json(world)


def test_corridor_shape():
    w = corridor_world()
    assert w.shape[0] >= 8 and w.shape[1] >= 8
    assert len(w.free_cells) == 10
    assert check_world(w) == []
