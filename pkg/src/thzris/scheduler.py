"""Per-slot RIS-to-user association: drift-plus-penalty weights, the
reward, an exact assignment solver and simple baselines.

An association is stored as a ``(B, U)`` 0/1 matrix.  Solvers work on the
equivalent *choice vector* ``a`` of length ``B`` where ``a[b]`` is the user
served by RIS ``b`` or ``-1`` when the RIS idles.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import LinkGeometry
from .queues import QueueState, RiskParams

IDLE = -1


class InfeasibleAssociation(ValueError):
    pass


@dataclass(frozen=True)
class Association:
    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x)
        if x.ndim != 2:
            raise InfeasibleAssociation("association must be a B x U matrix")
        if not ((x == 0) | (x == 1)).all():
            raise InfeasibleAssociation("association entries must be 0 or 1")
        x = x.astype(np.int8)
        if (x.sum(axis=1) > 1).any():
            raise InfeasibleAssociation("an RIS serves more than one user")
        if (x.sum(axis=0) > 1).any():
            raise InfeasibleAssociation("a user is served by more than one RIS")
        object.__setattr__(self, "x", x)

    @classmethod
    def from_choices(cls, choices, n_users: int) -> "Association":
        x = np.zeros((len(choices), n_users), dtype=np.int8)
        for b, u in enumerate(choices):
            if u != IDLE:
                x[b, u] = 1
        return cls(x)

    @classmethod
    def empty(cls, n_ris: int, n_users: int) -> "Association":
        return cls(np.zeros((n_ris, n_users), dtype=np.int8))

    @property
    def choices(self) -> tuple:
        return tuple(int(r.argmax()) if r.any() else IDLE for r in self.x)

    def served(self, rates_images) -> np.ndarray:
        """Images/slot delivered to each user under this association."""
        return (self.x * np.asarray(rates_images)).sum(axis=0)

    def value(self, weights) -> float:
        return float((self.x * np.asarray(weights)).sum())

    def __eq__(self, other):
        return isinstance(other, Association) and np.array_equal(self.x, other.x)

    def __hash__(self):
        return hash(self.x.tobytes())


def build_weights(rates_images, queues: QueueState, params: RiskParams) -> np.ndarray:
    """Action-dependent part of the per-slot objective: (V + Q_u) * R_bu."""
    r = np.asarray(rates_images, dtype=float)
    return (params.v_tradeoff + queues.q)[None, :] * r


def reward(assoc: Association, rates_images, queues: QueueState, arrivals,
           params: RiskParams) -> float:
    r = np.asarray(rates_images, dtype=float)
    if assoc.x.shape != r.shape:
        raise InfeasibleAssociation(f"association shape {assoc.x.shape} != rate shape {r.shape}")
    served = assoc.served(r)
    q_t = queues.q_max
    return (params.v_tradeoff * float((assoc.x * r).sum())
            - float(np.dot(queues.q, np.asarray(arrivals, dtype=float) - served))
            - queues.z1 * (q_t - params.epsilon)
            - queues.z2 * (q_t ** 2 - params.eta))


@lru_cache(maxsize=64)
def enumerate_matchings(n_ris: int, n_users: int) -> np.ndarray:
    """All partial matchings as choice vectors, in canonical order.

    Canonical order is lexicographic on the choice vector with users ranked
    ``0..U-1`` and idle ranked last.
    """
    if (n_users + 1) ** n_ris > 5_000_000:
        raise ValueError(f"too many candidate matchings for B={n_ris}, U={n_users}")
    options = list(range(n_users)) + [IDLE]
    rows = []
    for combo in itertools.product(options, repeat=n_ris):
        used = [u for u in combo if u != IDLE]
        if len(used) == len(set(used)):
            rows.append(combo)
    out = np.array(rows, dtype=np.int64).reshape(-1, n_ris)
    out.setflags(write=False)
    return out


def _tol(best: float) -> float:
    return 1e-9 * max(1.0, abs(best))


def _solve_brute(w: np.ndarray) -> tuple:
    B, U = w.shape
    cand = enumerate_matchings(B, U)
    padded = np.concatenate([np.where(w > 0, w, 0.0), np.zeros((B, 1))], axis=1)
    cols = np.where(cand == IDLE, U, cand)
    values = padded[np.arange(B)[None, :], cols].sum(axis=1)
    # non-positive edges never help; drop them so idle wins those ties
    ok = ~((cols < U) & (w[np.arange(B)[None, :], np.minimum(cols, U - 1)] <= 0)).any(axis=1)
    values = np.where(ok, values, -np.inf)
    best = values.max()
    first = int(np.flatnonzero(values >= best - _tol(best))[0])
    return tuple(int(u) for u in cand[first])


def _lsa(w: np.ndarray):
    """Optimal value and row -> column map of a max-weight assignment."""
    if w.size == 0:
        return 0.0, {}
    r, c = linear_sum_assignment(w, maximize=True)
    return float(w[r, c].sum()), dict(zip(r.tolist(), c.tolist()))


def _solve_exact(w: np.ndarray) -> tuple:
    B, U = w.shape
    wp = np.where(w > 0, w, 0.0)
    best, assign = _lsa(wp)
    tol = _tol(best)
    # ref: an optimal completion consistent with the choices fixed so far
    ref = {b: (u if wp[b, u] > 0 else IDLE) for b, u in assign.items()}
    choices = []
    fixed = 0.0
    free_users = list(range(U))
    for b in range(B):
        target = ref.get(b, IDLE)
        for u in [v for v in free_users if wp[b, v] > 0] + [IDLE]:
            if u == target:
                break
            gain = 0.0 if u == IDLE else wp[b, u]
            remaining = [v for v in free_users if v != u]
            rest = wp[b + 1:][:, remaining]
            bound = fixed + gain + (rest.max(axis=1).sum() if rest.size else 0.0)
            if bound < best - tol:
                continue
            val, sub = _lsa(rest)
            if fixed + gain + val >= best - tol:
                ref = {b + 1 + i: (remaining[j] if rest[i, j] > 0 else IDLE) for i, j in sub.items()}
                break
        else:  # pragma: no cover - the reference choice always terminates the scan
            raise RuntimeError("assignment tie-break failed")
        choices.append(u)
        if u != IDLE:
            fixed += wp[b, u]
            free_users.remove(u)
    return tuple(choices)


def solve_assignment(weights, method: str = "exact_matching") -> Association:
    """Max-weight partial matching; ties go to the canonically first matching."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2:
        raise ValueError("weights must be a B x U matrix")
    if not np.isfinite(w).all():
        raise ValueError("weights must be finite")
    if method == "brute":
        choices = _solve_brute(w)
    elif method == "exact_matching":
        choices = _solve_exact(w)
    else:
        raise ValueError(f"unknown method {method!r}")
    return Association.from_choices(choices, w.shape[1])


def random_assoc(n_ris: int, n_users: int, rng: np.random.Generator) -> Association:
    cand = enumerate_matchings(n_ris, n_users)
    return Association.from_choices(cand[rng.integers(len(cand))], n_users)


def nearest_assoc(geom: LinkGeometry) -> Association:
    """Each RIS in turn takes its nearest still-unassigned LoS user."""
    s = np.asarray(geom.s)
    d = np.asarray(geom.d, dtype=float)
    B, U = s.shape
    taken = np.zeros(U, dtype=bool)
    choices = []
    for b in range(B):
        cand = np.where((s[b] == 1) & ~taken, d[b], np.inf)
        if np.isfinite(cand).any():
            u = int(np.argmin(cand))
            taken[u] = True
            choices.append(u)
        else:
            choices.append(IDLE)
    return Association.from_choices(choices, U)


def baseline_assoc(kind: str, geom: LinkGeometry, rng: np.random.Generator | None = None) -> Association:
    if kind == "random":
        if rng is None:
            raise ValueError("random baseline needs an rng")
        B, U = np.asarray(geom.s).shape
        return random_assoc(B, U, rng)
    if kind == "nearest":
        return nearest_assoc(geom)
    raise ValueError(f"unknown baseline {kind!r}")
