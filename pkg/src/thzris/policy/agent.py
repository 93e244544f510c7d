"""MDP state encoding, action sampling and log-probability gradients."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..scheduler import IDLE, Association
from . import network
from .network import PolicyParams


@dataclass(frozen=True)
class MdpState:
    s_links: np.ndarray          # (B, U) LoS indicators
    q: np.ndarray                # (U,)
    z1: float
    z2: float
    rates: np.ndarray | None = None   # (B, U) images/slot, if observed

    def to_record(self) -> dict:
        rec = {"s_links": np.asarray(self.s_links).astype(int).tolist(),
               "q": [float(v) for v in self.q],
               "z1": float(self.z1), "z2": float(self.z2)}
        if self.rates is not None:
            rec["rates"] = np.asarray(self.rates, dtype=float).tolist()
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "MdpState":
        rates = rec.get("rates")
        return cls(np.asarray(rec["s_links"], dtype=np.int8), np.asarray(rec["q"], dtype=float),
                   float(rec["z1"]), float(rec["z2"]),
                   None if rates is None else np.asarray(rates, dtype=float))


@dataclass(frozen=True)
class FeatureScales:
    """Normalizers for :func:`encode_state`.

    With ``use_rates`` three ``(B, U)`` blocks follow the queue features,
    all in units of ``w_scale`` and zero on blocked links: the standardized
    link weight ``(V + Q_u) R_bu - w_center``, its margin over the best
    competing user of the same RIS and its margin over the best competing
    RIS of the same user (idle counts as weight 0 in both).
    """

    q_scale: float = 10.0
    z1_scale: float = 100.0
    z2_scale: float = 1000.0
    w_scale: float = 1000.0
    w_center: float = 0.0
    v_tradeoff: float = 20.0
    use_rates: bool = True

    def __post_init__(self):
        for name in ("q_scale", "z1_scale", "z2_scale", "w_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def n_features(self, n_ris: int, n_users: int) -> int:
        base = n_ris * n_users + n_users + 2
        return base + 3 * n_ris * n_users if self.use_rates else base

    @classmethod
    def fit(cls, states, v_tradeoff: float, use_rates: bool = True) -> "FeatureScales":
        """Queue scales from the 99th percentile of a sample of states (floored
        at 1); the weight scale is the mean and spread of LoS link weights."""
        def p99(vals):
            vals = np.asarray(vals, dtype=float).ravel()
            return max(1.0, float(np.quantile(vals, 0.99))) if vals.size else 1.0

        q = np.concatenate([np.asarray(s.q, dtype=float) for s in states])
        z1 = [s.z1 for s in states]
        z2 = [s.z2 for s in states]
        w, center = 1.0, 0.0
        if use_rates:
            los = np.concatenate([((v_tradeoff + s.q)[None, :] * s.rates)[np.asarray(s.s_links) == 1]
                                  for s in states])
            if los.size:
                center = float(los.mean())
                w = max(float(los.std()), 1e-6 * max(1.0, abs(center)))
        return cls(q_scale=p99(q), z1_scale=p99(z1), z2_scale=p99(z2), w_scale=w, w_center=center,
                   v_tradeoff=v_tradeoff, use_rates=use_rates)

    def to_dict(self) -> dict:
        return asdict(self)


def encode_state(state: MdpState, norms: FeatureScales) -> np.ndarray:
    s = np.asarray(state.s_links, dtype=float)
    q = np.asarray(state.q, dtype=float)
    parts = [s.ravel(), q / norms.q_scale, [state.z1 / norms.z1_scale, state.z2 / norms.z2_scale]]
    if norms.use_rates:
        if state.rates is None:
            raise ValueError("state carries no rates but the encoding expects them")
        w = np.where(s == 1, (norms.v_tradeoff + q)[None, :] * np.asarray(state.rates, dtype=float), 0.0)
        los = s == 1
        for block in ((w - norms.w_center), w - _rival(w, axis=1), w - _rival(w, axis=0)):
            parts.append(np.where(los, block / norms.w_scale, 0.0).ravel())
    return np.concatenate(parts)


def _rival(w: np.ndarray, axis: int) -> np.ndarray:
    """Largest other entry along ``axis`` for every element, floored at 0."""
    n = w.shape[axis]
    if n < 2:
        return np.zeros_like(w)
    srt = np.sort(w, axis=axis)
    top = np.take(srt, [n - 1], axis=axis)
    second = np.take(srt, [n - 2], axis=axis)
    return np.maximum(np.where(w == top, second, top), 0.0)


def policy_forward(params: PolicyParams, features, carry=None):
    """Head distributions for a feature sequence ``(T, F)`` (or one vector).

    Returns ``(probs, carry')`` with ``probs`` of shape ``(T, B, U+1)``.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    logits, carry, _ = network.forward(params, x[:, None, :], carry)
    return network.softmax(logits[:, 0]), carry


def _masked_pick(dist: np.ndarray, n_users: int, rng: np.random.Generator | None):
    B = dist.shape[0]
    used = np.zeros(n_users + 1, dtype=bool)
    actions = []
    logp = 0.0
    for b in range(B):
        p = np.where(used, 0.0, dist[b])
        total = p.sum()
        if total > 0:
            p = p / total
        else:   # all mass was on taken users: idle is the only option left
            p = np.eye(n_users + 1)[n_users]
        if rng is None:
            k = int(np.argmax(p))
        else:
            k = int(rng.choice(n_users + 1, p=p))
        logp += float(np.log(p[k]))
        actions.append(k)
        if k != n_users:
            used[k] = True
    return actions, logp


def _to_assoc(actions, n_users):
    return Association.from_choices([IDLE if k == n_users else k for k in actions], n_users)


def sample_action(dists, rng: np.random.Generator):
    """Sample heads in order, masking users already taken by earlier heads."""
    dists = np.asarray(dists, dtype=float)
    n_users = dists.shape[1] - 1
    actions, logp = _masked_pick(dists, n_users, rng)
    return _to_assoc(actions, n_users), logp


def greedy_action(dists):
    dists = np.asarray(dists, dtype=float)
    n_users = dists.shape[1] - 1
    actions, logp = _masked_pick(dists, n_users, None)
    return _to_assoc(actions, n_users), logp


def assoc_to_actions(assoc: Association) -> np.ndarray:
    """Choice vector with idle encoded as ``U`` (network convention)."""
    U = assoc.x.shape[1]
    return np.array([U if u == IDLE else u for u in assoc.choices], dtype=np.int64)


def sequence_log_prob(params: PolicyParams, features, actions, carry=None) -> float:
    x = np.asarray(features, dtype=float)
    logits, _, _ = network.forward(params, x[:, None, :], carry)
    logp, _ = network.masked_log_prob(logits[:, 0], np.asarray(actions))
    return float(logp.sum())


def weighted_log_prob_grad(params: PolicyParams, x, actions, weights, carry=None):
    """``sum_t w_t grad log pi(a_t | s_1..t)`` for batched sequences.

    ``x``: ``(T, N, F)``; ``actions``: ``(T, N, B)``; ``weights``: ``(T, N)``.
    Returns ``(grad, logp (T, N), logits)``.
    """
    logits, _, cache = network.forward(params, x, carry)
    logp, dlogits = network.masked_log_prob(logits, np.asarray(actions))
    grad = network.backward(params, cache, dlogits * np.asarray(weights, dtype=float)[..., None, None])
    return grad, logp, logits


def log_prob_grad(params: PolicyParams, state_seq, action_seq) -> np.ndarray:
    """Gradient of the episode log-likelihood sum_t log pi(a_t|s_t) via BPTT.

    ``state_seq`` is a ``(T, F)`` feature array; ``action_seq`` holds
    :class:`Association` objects or ``(T, B)`` action indices.
    """
    x = np.asarray(state_seq, dtype=float)
    acts = [assoc_to_actions(a) if isinstance(a, Association) else np.asarray(a) for a in action_seq]
    acts = np.asarray(acts, dtype=np.int64)
    grad, _, _ = weighted_log_prob_grad(params, x[:, None, :], acts[:, None, :], np.ones((len(x), 1)))
    if not np.isfinite(grad).all():
        raise FloatingPointError("non-finite policy gradient")
    return grad
