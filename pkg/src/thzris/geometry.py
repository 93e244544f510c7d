"""Indoor room geometry, RIS placement, random-walk mobility and LoS blockage.

Everything is 2-D (floor plan).  Per-user quantities are stored as numpy
arrays so that a whole population can be stepped in one call.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a):
    """Map angles to [-pi, pi)."""
    return (np.asarray(a, dtype=float) + math.pi) % TWO_PI - math.pi


def place_ris(room_side: float, count_b: int) -> np.ndarray:
    """Positions of ``count_b`` RIS spread round-robin over the four walls.

    RIS ``i`` goes on wall ``i % 4``; the ``k`` RIS sharing a wall split it
    into equal segments and sit at the segment midpoints.  Walls are walked
    counter-clockwise starting from the corner (0, 0): bottom, right, top,
    left.  Returns a ``(count_b, 2)`` array.
    """
    if count_b < 1:
        raise ValueError(f"count_b must be >= 1, got {count_b}")
    if not room_side > 0:
        raise ValueError(f"room_side must be positive, got {room_side}")
    L = float(room_side)
    per_wall = [len(range(w, count_b, 4)) for w in range(4)]
    out = np.empty((count_b, 2))
    for i in range(count_b):
        wall, k = i % 4, i // 4
        s = L * (2 * k + 1) / (2 * per_wall[wall])
        if wall == 0:
            out[i] = (s, 0.0)
        elif wall == 1:
            out[i] = (L, s)
        elif wall == 2:
            out[i] = (L - s, L)
        else:
            out[i] = (0.0, L - s)
    return out


def ris_walls(count_b: int) -> np.ndarray:
    return np.arange(count_b) % 4


@dataclass(frozen=True)
class Room:
    side_length: float = 40.0
    ris_positions: np.ndarray = field(default=None, repr=False)
    min_link_distance: float = 1.0

    def __post_init__(self):
        if not self.side_length > 0:
            raise ValueError("side_length must be positive")
        if not self.min_link_distance > 0:
            raise ValueError("min_link_distance must be positive")
        if self.ris_positions is None:
            object.__setattr__(self, "ris_positions", place_ris(self.side_length, 4))
        pos = np.asarray(self.ris_positions, dtype=float).reshape(-1, 2)
        L = self.side_length
        inside = (pos >= 0) & (pos <= L)
        on_edge = np.isclose(pos, 0.0) | np.isclose(pos, L)
        if not (inside.all() and on_edge.any(axis=1).all()):
            raise ValueError("every RIS must lie on the room boundary")
        object.__setattr__(self, "ris_positions", pos)

    @classmethod
    def square(cls, side_length: float, count_b: int, min_link_distance: float = 1.0) -> "Room":
        return cls(side_length, place_ris(side_length, count_b), min_link_distance)

    @property
    def n_ris(self) -> int:
        return len(self.ris_positions)

    @property
    def ris_descriptors(self):
        walls = ris_walls(self.n_ris)
        return [(tuple(p), int(w)) for p, w in zip(self.ris_positions, walls)]


@dataclass(frozen=True)
class UserState:
    """State of all ``U`` users: positions ``(U, 2)``, headings and speeds ``(U,)``."""

    position: np.ndarray
    heading: np.ndarray
    speed: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(-1, 2))
        n = len(self.position)
        object.__setattr__(self, "heading", wrap_angle(np.broadcast_to(self.heading, (n,))))
        object.__setattr__(self, "speed", np.array(np.broadcast_to(self.speed, (n,)), dtype=float))

    def __len__(self):
        return len(self.position)

    def inside(self, room: Room) -> bool:
        p = self.position
        return bool(((p > 0) & (p < room.side_length)).all())


def spawn_users(count_u: int, room: Room, speed: float, rng: np.random.Generator) -> UserState:
    """Uniform initial positions (1 m away from the walls) and headings."""
    L = room.side_length
    margin = min(1.0, L / 4)
    pos = rng.uniform(margin, L - margin, size=(count_u, 2))
    heading = rng.uniform(-math.pi, math.pi, size=count_u)
    return UserState(pos, heading, np.full(count_u, float(speed)))


def _reflect(x: np.ndarray, v: np.ndarray, L: float):
    # fold coordinates back into [0, L] and flip the matching velocity sign
    while True:
        hi = x > L
        lo = x < 0
        if not (hi.any() or lo.any()):
            break
        x = np.where(hi, 2 * L - x, np.where(lo, -x, x))
        v = np.where(hi | lo, -v, v)
    # keep strictly inside
    x = np.clip(x, np.nextafter(0.0, 1.0), np.nextafter(L, 0.0))
    return x, v


def step_users(users: UserState, room: Room, rng: np.random.Generator,
               max_turn: float = math.pi / 4) -> UserState:
    """One slot of the heading-perturbation random walk with specular walls."""
    n = len(users)
    turn = rng.uniform(-max_turn, max_turn, size=n) if max_turn > 0 else np.zeros(n)
    heading = users.heading + turn
    vx = users.speed * np.cos(heading)
    vy = users.speed * np.sin(heading)
    L = room.side_length
    x, vx = _reflect(users.position[:, 0] + vx, vx, L)
    y, vy = _reflect(users.position[:, 1] + vy, vy, L)
    moving = users.speed > 0
    heading = np.where(moving, np.arctan2(vy, vx), heading)
    return UserState(np.column_stack([x, y]), heading, users.speed)


@dataclass(frozen=True)
class BlockageModel:
    mode: str = "markov"
    p_stay_los: float = 0.95
    p_stay_blocked: float = 0.8
    self_block_half_angle: float = math.pi / 4
    body_radius: float = 0.3

    def __post_init__(self):
        if self.mode not in ("markov", "geometric"):
            raise ValueError(f"unknown blockage mode {self.mode!r}")
        for name in ("p_stay_los", "p_stay_blocked"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if not 0.0 < self.self_block_half_angle < math.pi:
            raise ValueError("self_block_half_angle must be in (0, pi)")
        if self.body_radius < 0:
            raise ValueError("body_radius must be >= 0")

    @property
    def stationary_los(self) -> float:
        p_block = 1.0 - self.p_stay_los
        p_unblock = 1.0 - self.p_stay_blocked
        if p_block + p_unblock == 0:
            return float("nan")
        return p_unblock / (p_block + p_unblock)


@dataclass(frozen=True)
class LinkGeometry:
    """LoS indicators ``s`` and distances ``d``, both ``(B, U)``."""

    s: np.ndarray
    d: np.ndarray

    @property
    def shape(self):
        return self.s.shape


def link_distances(users: UserState, room: Room) -> np.ndarray:
    diff = users.position[None, :, :] - room.ris_positions[:, None, :]
    return np.maximum(np.hypot(diff[..., 0], diff[..., 1]), room.min_link_distance)


def initial_links(users: UserState, room: Room, los: bool = True) -> LinkGeometry:
    d = link_distances(users, room)
    return LinkGeometry(np.full(d.shape, int(los), dtype=np.int8), d)


def _segment_point_distance(a: np.ndarray, b: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Distance from points ``p`` to segments ``a``-``b`` (broadcast over leading axes)."""
    ab = b - a
    denom = np.maximum((ab * ab).sum(-1), 1e-300)
    t = np.clip(((p - a) * ab).sum(-1) / denom, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.hypot(*np.moveaxis(p - closest, -1, 0))


def geometric_los(users: UserState, room: Room, model: BlockageModel) -> np.ndarray:
    ris = room.ris_positions
    pos = users.position
    to_ris = ris[:, None, :] - pos[None, :, :]                  # (B, U, 2)
    ang = np.arctan2(to_ris[..., 1], to_ris[..., 0])
    back = users.heading[None, :] + math.pi
    self_blocked = np.abs(wrap_angle(ang - back)) < model.self_block_half_angle

    B, U = ang.shape
    dyn = np.zeros((B, U), dtype=bool)
    if U > 1 and model.body_radius > 0:
        a = np.broadcast_to(ris[:, None, None, :], (B, U, U, 2))
        b = np.broadcast_to(pos[None, :, None, :], (B, U, U, 2))
        p = np.broadcast_to(pos[None, None, :, :], (B, U, U, 2))
        dist = _segment_point_distance(a, b, p)                 # [b, u, v]
        dist[:, np.arange(U), np.arange(U)] = np.inf
        dyn = (dist < model.body_radius).any(axis=2)
    return (~(self_blocked | dyn)).astype(np.int8)


def update_blockage(prev: LinkGeometry, users: UserState, room: Room,
                    model: BlockageModel, rng: np.random.Generator) -> LinkGeometry:
    """Advance LoS states by one slot and recompute distances."""
    B, U = room.n_ris, len(users)
    if prev.s.shape != (B, U):
        raise ValueError(f"link state shape {prev.s.shape} does not match (B, U) = {(B, U)}")
    if model.mode == "markov":
        r = rng.random((B, U))
        s = np.where(prev.s == 1, r < model.p_stay_los, r >= model.p_stay_blocked).astype(np.int8)
    else:
        s = geometric_los(users, room, model)
    return LinkGeometry(s, link_distances(users, room))
