import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thzris.geometry import (BlockageModel, LinkGeometry, Room, UserState, geometric_los,
                             initial_links, link_distances, place_ris, spawn_users, step_users,
                             update_blockage, wrap_angle)


def test_place_ris_one_per_wall():
    np.testing.assert_allclose(place_ris(40, 4), [[20, 0], [40, 20], [20, 40], [0, 20]])


def test_place_ris_single():
    np.testing.assert_allclose(place_ris(40, 1), [[20, 0]])


def test_place_ris_two_per_wall_quarter_points():
    pos = place_ris(40, 8)
    bottom = pos[pos[:, 1] == 0][:, 0]
    np.testing.assert_allclose(sorted(bottom), [10, 30])
    assert len(pos) == 8


@pytest.mark.parametrize("side,count", [(0, 4), (-1, 4), (40, 0), (40, -2)])
def test_place_ris_rejects_bad_inputs(side, count):
    with pytest.raises(ValueError):
        place_ris(side, count)


@given(st.floats(1.0, 500.0), st.integers(1, 40))
def test_place_ris_on_boundary_and_deterministic(side, count):
    pos = place_ris(side, count)
    again = place_ris(side, count)
    assert np.array_equal(pos, again)
    on_edge = (np.isclose(pos, 0).any(axis=1) | np.isclose(pos, side).any(axis=1))
    assert on_edge.all()
    assert ((pos >= -1e-9) & (pos <= side + 1e-9)).all()


def test_room_rejects_interior_ris():
    with pytest.raises(ValueError):
        Room(40.0, np.array([[20.0, 20.0]]))


def test_wrap_angle_range():
    a = wrap_angle(np.array([math.pi, -math.pi, 3 * math.pi, 0.5]))
    assert ((a >= -math.pi) & (a < math.pi)).all()
    assert a[3] == 0.5


def test_step_zero_speed_keeps_positions():
    room = Room.square(40, 4)
    users = UserState(np.array([[5.0, 5.0], [30.0, 12.0]]), [0.0, 1.0], 0.0)
    out = step_users(users, room, np.random.default_rng(1))
    np.testing.assert_array_equal(out.position, users.position)
    assert not np.array_equal(out.heading, users.heading)


def test_step_specular_reflection():
    room = Room.square(40, 4)
    users = UserState(np.array([[39.9, 20.0]]), [0.0], 0.5)
    out = step_users(users, room, np.random.default_rng(0), max_turn=0.0)
    np.testing.assert_allclose(out.position, [[39.6, 20.0]], atol=1e-12)
    assert abs(abs(out.heading[0]) - math.pi) < 1e-12


def test_random_walk_coverage():
    room = Room.square(40, 4)
    rng = np.random.default_rng(3)
    users = spawn_users(1, room, 0.5, rng)
    cells = set()
    for _ in range(100_000):
        users = step_users(users, room, rng)
        x, y = users.position[0]
        cells.add((int(x // 2), int(y // 2)))
    assert len(cells) / 400 >= 0.95


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 30.0), st.integers(1, 6))
def test_positions_stay_strictly_inside(seed, speed, n):
    room = Room.square(10, 4)
    rng = np.random.default_rng(seed)
    users = spawn_users(n, room, speed, rng)
    for _ in range(20):
        users = step_users(users, room, rng)
        assert users.inside(room)
        assert ((users.heading >= -math.pi) & (users.heading < math.pi)).all()


@pytest.mark.parametrize("kw", [dict(p_stay_los=1.2), dict(p_stay_blocked=-0.1),
                                dict(self_block_half_angle=0.0), dict(body_radius=-1.0),
                                dict(mode="ray")])
def test_blockage_model_validation(kw):
    with pytest.raises(ValueError):
        BlockageModel(**kw)


def test_markov_absorbing_los():
    room = Room.square(40, 4)
    rng = np.random.default_rng(0)
    users = spawn_users(3, room, 0.5, rng)
    geom = initial_links(users, room, los=True)
    model = BlockageModel(p_stay_los=1.0)
    for _ in range(200):
        geom = update_blockage(geom, users, room, model, rng)
        assert (geom.s == 1).all()


def test_markov_symmetric_stationary_fraction():
    room = Room.square(40, 4)
    rng = np.random.default_rng(11)
    users = spawn_users(25, room, 0.0, rng)
    model = BlockageModel(p_stay_los=0.9, p_stay_blocked=0.9)
    geom = initial_links(users, room)
    total = 0
    steps = 10_000  # 100 links x 10^4 slots = 10^6 transitions
    for _ in range(steps):
        geom = update_blockage(geom, users, room, model, rng)
        total += int(geom.s.sum())
    assert abs(total / (steps * geom.s.size) - 0.5) <= 0.01
    assert model.stationary_los == pytest.approx(0.5)


def test_geometric_back_cone_blocks():
    room = Room.square(40, 1)                      # RIS at (20, 0)
    users = UserState(np.array([[20.0, 20.0]]), [math.pi / 2], 0.5)   # facing away (+y)
    model = BlockageModel(mode="geometric", self_block_half_angle=math.pi / 3)
    assert geometric_los(users, room, model)[0, 0] == 0
    facing = UserState(np.array([[20.0, 20.0]]), [-math.pi / 2], 0.5)
    assert geometric_los(facing, room, model)[0, 0] == 1


def test_geometric_body_blocks_other_user():
    room = Room.square(40, 1)
    users = UserState(np.array([[20.0, 20.0], [20.0, 10.0]]), [-math.pi / 2] * 2, 0.5)
    s = geometric_los(users, room, BlockageModel(mode="geometric"))
    assert s[0, 0] == 0 and s[0, 1] == 1


def test_distances_floored():
    room = Room.square(40, 4, min_link_distance=1.0)
    users = UserState(np.array([[20.0, 0.2]]), [0.0], 0.0)
    d = link_distances(users, room)
    assert d.min() >= 1.0 and d[0, 0] == 1.0


def test_update_blockage_rejects_shape_mismatch():
    room = Room.square(40, 4)
    users = spawn_users(3, room, 0.5, np.random.default_rng(0))
    bad = LinkGeometry(np.ones((2, 3), dtype=np.int8), np.ones((2, 3)))
    with pytest.raises(ValueError):
        update_blockage(bad, users, room, BlockageModel(), np.random.default_rng(0))
