"""Behavior cloning against the exact scheduler, REINFORCE fine-tuning and
policy evaluation."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import network
from .agent import FeatureScales, assoc_to_actions, encode_state, weighted_log_prob_grad
from .checkpoint import TrainedPolicy
from .network import PolicyParams, PolicyShape

log = logging.getLogger(__name__)

MODES = ("clone", "reinforce", "clone_then_reinforce")
METRICS = ("per_ris_accuracy", "exact_match", "queue_gap", "rate_gap")
EVAL_EPISODE_OFFSET = 1_000_000
RL_EPISODE_OFFSET = 500_000


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 1000
    batch_size: int = 128          # slots per mini-batch
    split: tuple = (0.8, 0.1, 0.1)
    learning_rate: float = 1e-3
    hidden_h: int = 128
    mode: str = "clone"
    optimizer: str = "sgd"
    window: int = 16               # truncated BPTT length
    patience: int = 50
    clip_norm: float = 5.0
    seed: int = 0
    use_rates: bool = True
    augment: bool = True           # random user/RIS relabeling per stream and epoch
    init: str = "uniform"
    rl_iterations: int = 50
    rl_episodes: int = 4
    rl_horizon: int = 100

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.init not in network.INIT_SCHEMES:
            raise ValueError(f"init must be one of {network.INIT_SCHEMES}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if abs(sum(self.split) - 1.0) > 1e-9 or len(self.split) != 3:
            raise ValueError("split must have three fractions summing to 1")
        for name in ("max_epochs", "batch_size", "hidden_h", "window", "patience",
                     "rl_iterations", "rl_episodes", "rl_horizon"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


class Optimizer:
    """Plain SGD or Adam on a flat parameter vector (minimizes)."""

    def __init__(self, kind: str, lr: float, size: int, clip_norm: float | None = None):
        self.kind, self.lr, self.clip = kind, lr, clip_norm
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        if not np.isfinite(grad).all():
            raise FloatingPointError("non-finite gradient; update aborted")
        if self.clip:
            norm = float(np.linalg.norm(grad))
            if norm > self.clip:
                grad = grad * (self.clip / norm)
        if self.kind == "sgd":
            theta -= self.lr * grad
            return
        self.t += 1
        self.m *= 0.9
        self.m += 0.1 * grad
        self.v *= 0.999
        self.v += 0.001 * (grad * grad)
        lr_t = self.lr * np.sqrt(1 - 0.999 ** self.t) / (1 - 0.9 ** self.t)
        denom = np.sqrt(self.v)
        denom += 1e-8
        theta -= lr_t * (self.m / denom)


# -- data plumbing -----------------------------------------------------

def _episode_arrays(episode, scales: FeatureScales):
    x = np.stack([encode_state(s, scales) for s in episode.states])
    a = np.stack([assoc_to_actions(act) for act in episode.actions])
    return x, a


def _pad(seqs, fill=0):
    T = max(len(s) for s in seqs)
    out = np.full((T, len(seqs)) + seqs[0].shape[1:], fill, dtype=seqs[0].dtype)
    mask = np.zeros((T, len(seqs)))
    for n, s in enumerate(seqs):
        out[:len(s), n] = s
        mask[:len(s), n] = 1.0
    return out, mask


def permutation_index(n_ris: int, n_users: int, n_features: int, ris_perm, user_perm) -> np.ndarray:
    """Feature gather index that relabels RIS by ``ris_perm`` and users by ``user_perm``.

    Matches the layout of :func:`encode_state`: ``(B, U)`` blocks, the ``U``
    queues, two scalars, then any further ``(B, U)`` blocks.
    """
    B, U = n_ris, n_users
    block = (np.asarray(ris_perm)[:, None] * U + np.asarray(user_perm)[None, :]).ravel()
    idx = [block, B * U + np.asarray(user_perm), B * U + U + np.arange(2)]
    off = B * U + U + 2
    while off < n_features:
        idx.append(off + block)
        off += B * U
    return np.concatenate(idx)


def permute_actions(actions: np.ndarray, ris_perm, user_perm) -> np.ndarray:
    """Head labels of the relabeled problem (idle, coded ``U``, stays idle)."""
    U = len(user_perm)
    inv = np.empty(U + 1, dtype=np.int64)
    inv[np.asarray(user_perm)] = np.arange(U)
    inv[U] = U
    return inv[actions[..., np.asarray(ris_perm)]]


def _assign_splits(episodes, fractions):
    from ..sim.dataset import split_episodes
    if all(ep.split in ("train", "val", "test") for ep in episodes) and \
            any(ep.split == "train" for ep in episodes):
        return {name: [ep for ep in episodes if ep.split == name] for name in ("train", "val", "test")}
    labels = split_episodes(len(episodes), fractions)
    return {name: [ep for ep, lab in zip(episodes, labels) if lab == name]
            for name in ("train", "val", "test")}


def greedy_decode(logits: np.ndarray) -> np.ndarray:
    """Masked sequential argmax over heads; ``(..., B, U+1)`` -> ``(..., B)``."""
    B, K = logits.shape[-2:]
    used = np.zeros(logits.shape[:-2] + (K,), dtype=bool)
    out = np.empty(logits.shape[:-1], dtype=np.int64)
    for b in range(B):
        k = np.where(used, -np.inf, logits[..., b, :]).argmax(-1)
        out[..., b] = k
        hit = np.eye(K, dtype=bool)[k]
        hit[..., K - 1] = False
        used |= hit
    return out


def sample_decode(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    B, K = logits.shape[-2:]
    flat = logits.reshape(-1, B, K)
    out = np.empty(flat.shape[:2], dtype=np.int64)
    for n in range(flat.shape[0]):
        used = np.zeros(K, dtype=bool)
        for b in range(B):
            z = np.where(used, -np.inf, flat[n, b])
            p = np.exp(z - z.max())
            p /= p.sum()
            k = int(rng.choice(K, p=p))
            out[n, b] = k
            if k != K - 1:
                used[k] = True
    return out.reshape(logits.shape[:-1])


def predict_actions(policy: TrainedPolicy, episodes, stochastic=False, rng=None):
    """Per-episode ``(T, B)`` predicted actions with carry threaded through each episode."""
    arrays = [_episode_arrays(ep, policy.scales) for ep in episodes]
    x, mask = _pad([a[0] for a in arrays])
    logits, _, _ = network.forward(policy.params, x)
    pred = sample_decode(logits, rng) if stochastic else greedy_decode(logits)
    return [pred[:len(a[0]), n] for n, a in enumerate(arrays)], [a[1] for a in arrays]


def action_accuracy(pred, labels):
    pred = np.concatenate(pred)
    labels = np.concatenate(labels)
    per_ris = float((pred == labels).mean())
    exact = float((pred == labels).all(axis=1).mean())
    return per_ris, exact


# -- training ----------------------------------------------------------

def _clone_epoch(params, opt, train_arrays, cfg: TrainConfig, rng):
    n_streams = max(1, cfg.batch_size // cfg.window)
    order = rng.permutation(len(train_arrays))
    total, count = 0.0, 0.0
    for g in range(0, len(order), n_streams):
        group = [train_arrays[i] for i in order[g:g + n_streams]]
        if cfg.augment:
            group = [_relabel(x, a, params.shape.n_users, rng) for x, a in group]
        x, mask = _pad([a[0] for a in group])
        acts, _ = _pad([a[1] for a in group])
        carry = None
        for k in range(0, len(x), cfg.window):
            sl = slice(k, k + cfg.window)
            m = mask[sl]
            n_valid = m.sum()
            if n_valid == 0:
                continue
            logits, new_carry, cache = network.forward(params, x[sl], carry)
            logp, dlogits = network.masked_log_prob(logits, acts[sl])
            grad = network.backward(params, cache, -dlogits * (m / n_valid)[..., None, None])
            opt.step(params.theta, grad)
            carry = tuple((h.copy(), c.copy()) for h, c in new_carry)
            total += float(-(logp * m).sum())
            count += n_valid
    return total / max(count, 1.0)


def _relabel(x, a, n_users, rng):
    rp = rng.permutation(a.shape[1])
    up = rng.permutation(n_users)
    return x[:, permutation_index(len(rp), n_users, x.shape[1], rp, up)], permute_actions(a, rp, up)


def _smoothed(values, window=10):
    v = np.asarray(values, dtype=float)
    if len(v) < window:
        return v
    return np.convolve(v, np.ones(window) / window, mode="valid")


def train_clone(cfg: TrainConfig, episodes, v_tradeoff: float, params: PolicyParams | None = None,
                scales: FeatureScales | None = None):
    """Supervised fit of the policy heads to oracle labels.

    Early-stops once validation per-RIS accuracy has not improved for
    ``cfg.patience`` epochs and returns the best-validation parameters.
    """
    if not episodes:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    parts = _assign_splits(episodes, cfg.split)
    train_eps, val_eps = parts["train"], parts["val"] or parts["train"]
    if not train_eps:
        raise ValueError("dataset has no training episodes")
    first = train_eps[0].states[0]
    B, U = np.asarray(first.s_links).shape
    if scales is None:
        scales = FeatureScales.fit([s for ep in train_eps for s in ep.states], v_tradeoff,
                                   cfg.use_rates)
    if params is None:
        shape = PolicyShape(scales.n_features(B, U), cfg.hidden_h, B, U)
        params = PolicyParams.init(shape, rng, cfg.init)
    policy = TrainedPolicy(params, scales, cfg.seed, {"mode": cfg.mode})
    train_arrays = [_episode_arrays(ep, scales) for ep in train_eps]
    opt = Optimizer(cfg.optimizer, cfg.learning_rate, params.shape.size, cfg.clip_norm)

    report = []
    best_acc, best_theta, best_epoch = -1.0, params.theta.copy(), 0
    for epoch in range(1, cfg.max_epochs + 1):
        loss = _clone_epoch(params, opt, train_arrays, cfg, rng)
        pred, labels = predict_actions(policy, val_eps)
        acc, exact = action_accuracy(pred, labels)
        report.append({"epoch": epoch, "phase": "clone", "train_loss": loss,
                       "val_accuracy": acc, "val_exact_match": exact})
        log.info("epoch %d loss %.4f val_acc %.4f", epoch, loss, acc)
        if acc > best_acc:
            best_acc, best_theta, best_epoch = acc, params.theta.copy(), epoch
        if epoch - best_epoch >= cfg.patience:
            break
    params.theta[:] = best_theta
    return policy, report


def train_reinforce(cfg: TrainConfig, policy: TrainedPolicy, sim_config, report=None):
    """Policy-gradient ascent on per-slot rewards from simulator rollouts.

    Each slot's log-probability gradient is weighted by its reward minus a
    running-mean baseline, divided by a running reward scale.
    """
    from ..sim.episode import run_episode

    report = [] if report is None else report
    params = policy.params
    opt = Optimizer(cfg.optimizer, cfg.learning_rate, params.shape.size, cfg.clip_norm)
    rl_cfg = sim_config.replace(scheduler="policy", horizon_t=cfg.rl_horizon, seed=cfg.seed)
    baseline, scale = None, None
    for it in range(1, cfg.rl_iterations + 1):
        xs, acts, rews = [], [], []
        for k in range(cfg.rl_episodes):
            ep = RL_EPISODE_OFFSET + (it - 1) * cfg.rl_episodes + k
            trace = run_episode(rl_cfg, policy, episode=ep, record=True, stochastic=True)
            xs.append(np.stack([encode_state(s.state, policy.scales) for s in trace.steps]))
            acts.append(np.stack([assoc_to_actions(s.action) for s in trace.steps]))
            rews.append(trace.rewards)
        r = np.stack(rews, axis=1)                     # (T, N)
        mean_r = float(r.mean())
        baseline = mean_r if baseline is None else 0.9 * baseline + 0.1 * mean_r
        spread = float(r.std()) + 1e-8
        scale = spread if scale is None else 0.9 * scale + 0.1 * spread
        adv = (r - baseline) / scale
        x = np.stack(xs, axis=1)
        a = np.stack(acts, axis=1)
        grad, _, _ = weighted_log_prob_grad(params, x, a, adv / adv.size)
        opt.step(params.theta, -grad)
        report.append({"epoch": it, "phase": "reinforce", "train_loss": -mean_r,
                       "val_accuracy": float("nan"), "val_exact_match": float("nan")})
    return policy, report


def train(cfg: TrainConfig, episodes=None, sim_config=None):
    """Train a policy per ``cfg.mode``; returns ``(TrainedPolicy, report rows)``."""
    if cfg.mode in ("clone", "clone_then_reinforce"):
        if not episodes:
            raise ValueError("clone training needs a non-empty dataset")
        v = sim_config.risk.v_tradeoff if sim_config is not None else 20.0
        policy, report = train_clone(cfg, episodes, v)
        if cfg.mode == "clone":
            return policy, report
        if sim_config is None:
            raise ValueError("reinforce fine-tuning needs a simulator config")
        return train_reinforce(cfg, policy, sim_config, report)
    if sim_config is None:
        raise ValueError("reinforce training needs a simulator config")
    B, U = sim_config.n_ris, sim_config.n_users
    scales = FeatureScales(v_tradeoff=sim_config.risk.v_tradeoff, use_rates=cfg.use_rates)
    shape = PolicyShape(scales.n_features(B, U), cfg.hidden_h, B, U)
    params = PolicyParams.init(shape, np.random.default_rng(cfg.seed), cfg.init)
    return train_reinforce(cfg, TrainedPolicy(params, scales, cfg.seed, {"mode": cfg.mode}), sim_config)


def write_report(report, path) -> None:
    cols = ("epoch", "phase", "train_loss", "val_accuracy", "val_exact_match")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in report:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])


# -- evaluation --------------------------------------------------------

def rollout_gaps(policy, sim_config, episodes: int = 5, offset: int = EVAL_EPISODE_OFFSET) -> dict:
    """Pooled queue/rate gaps of greedy policy rollouts against the oracle.

    Both schedulers see identical environment randomness per episode.
    ``policy=None`` evaluates the oracle against itself.
    """
    from ..sim.episode import run_episode

    q_pol = q_opt = r_pol = r_opt = 0.0
    for e in range(offset, offset + episodes):
        opt = run_episode(sim_config.replace(scheduler="optimal"), episode=e)
        if policy is None:
            pol = opt
        else:
            pol = run_episode(sim_config.replace(scheduler="policy"), policy, episode=e)
        q_opt += opt.q_max.mean()
        q_pol += pol.q_max.mean()
        r_opt += opt.sum_rate_bps.mean()
        r_pol += pol.sum_rate_bps.mean()
    return {"queue_gap": (q_pol - q_opt) / q_opt if q_opt else float(q_pol != q_opt),
            "rate_gap": (r_opt - r_pol) / r_opt if r_opt else float(r_pol != r_opt)}


def evaluate(policy, metric: str, episodes=None, sim_config=None, split: str | None = "test",
             stochastic: bool = False, rng=None, rollout_episodes: int = 5) -> float:
    """Score a trained policy (``None`` = the oracle itself) on one metric.

    Accuracy metrics use the episodes of ``split`` (all episodes when
    ``None``); gap metrics roll out ``rollout_episodes`` fresh episodes.
    """
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    if metric in ("queue_gap", "rate_gap"):
        if sim_config is None:
            raise ValueError(f"{metric} needs a simulator config")
        return rollout_gaps(policy, sim_config, rollout_episodes)[metric]
    if not episodes:
        raise ValueError(f"{metric} is undefined on an empty dataset")
    chosen = list(episodes) if split is None else [ep for ep in episodes if ep.split == split]
    if not chosen:
        raise ValueError(f"no episodes in split {split!r}")
    if policy is None:
        labels = [np.stack([assoc_to_actions(a) for a in ep.actions]) for ep in chosen]
        pred = labels
    else:
        pred, labels = predict_actions(policy, chosen, stochastic, rng)
    per_ris, exact = action_accuracy(pred, labels)
    return per_ris if metric == "per_ris_accuracy" else exact
