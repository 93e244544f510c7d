"""Slot-level episode loop, metric traces and scheduler comparison."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..channel import draw_channel_phases, link_rate
from ..geometry import Room, initial_links, spawn_users, step_users, update_blockage
from ..policy.agent import MdpState, encode_state, greedy_action, policy_forward, sample_action
from ..queues import (QueueState, drift_bound_check, evar_sliding, sample_arrivals, update_queues,
                      upsilon)
from ..scheduler import Association, baseline_assoc, build_weights, reward, solve_assignment
from .config import ConfigError, SimConfig

TRACE_COLUMNS = ("t", "q_max", "sum_rate_bps", "z1", "z2", "evar_window", "served_count")
STREAMS = ("init", "mobility", "blockage", "phases", "arrivals", "scheduler")


def episode_streams(seed: int, episode: int = 0) -> dict:
    """Independent generators per randomness source.

    Environment streams never depend on the scheduler, which gives common
    random numbers when schedulers are compared on the same seed.
    """
    ss = np.random.SeedSequence([int(seed), int(episode)])
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, ss.spawn(len(STREAMS)))}


@dataclass
class Step:
    state: MdpState
    action: Association
    reward: float
    log_prob: float = 0.0


@dataclass
class MetricsTrace:
    q_max: np.ndarray
    sum_rate_bps: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    evar_window: np.ndarray
    served_count: np.ndarray
    rewards: np.ndarray
    seed: int
    config_hash: str
    risk_epsilon: float
    risk_eta: float
    drift_violations: int = 0
    drift_violations_horizon: int = 0
    steps: list = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return len(self.q_max)

    def summary(self) -> dict:
        q = self.q_max
        mean_q = float(np.mean(q))
        mean_q2 = float(np.mean(q * q))
        return {
            "mean_q": mean_q,
            "mean_q2": mean_q2,
            "mean_sum_rate_bps": float(np.mean(self.sum_rate_bps)),
            "constraint_eps_ok": bool(mean_q < self.risk_epsilon),
            "constraint_eta_ok": bool(mean_q2 < self.risk_eta),
            "seed": int(self.seed),
            "config_hash": self.config_hash,
            "horizon_t": self.horizon,
            "final_z1": float(self.z1[-1]),
            "final_z2": float(self.z2[-1]),
        }

    def rows(self):
        for t in range(self.horizon):
            yield (t, float(self.q_max[t]), float(self.sum_rate_bps[t]), float(self.z1[t]),
                   float(self.z2[t]), float(self.evar_window[t]), int(self.served_count[t]))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for row in self.rows():
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def read_trace_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {c: np.array([float(r[c]) for r in rows]) for c in TRACE_COLUMNS}


def summary_from_csv(path, epsilon: float, eta: float) -> dict:
    cols = read_trace_csv(path)
    q = cols["q_max"]
    return {"mean_q": float(np.mean(q)), "mean_q2": float(np.mean(q * q)),
            "mean_sum_rate_bps": float(np.mean(cols["sum_rate_bps"])),
            "constraint_eps_ok": bool(np.mean(q) < epsilon),
            "constraint_eta_ok": bool(np.mean(q * q) < eta)}


SchedulerFn = Callable[[MdpState, object, object], "tuple[Association, float]"]


def make_scheduler(config: SimConfig, policy=None, rng=None, stochastic: bool = False) -> SchedulerFn:
    """Per-slot decision function ``(state, geom, rates) -> (assoc, log_prob)``."""
    kind = config.scheduler
    if kind == "optimal":
        def choose(state, geom, rates):
            w = build_weights(rates.r_images, QueueState(state.q, state.z1, state.z2), config.risk)
            return solve_assignment(w, config.solver), 0.0
        return choose
    if kind in ("random", "nearest"):
        def choose(state, geom, rates):
            return baseline_assoc(kind, geom, rng), 0.0
        return choose
    if kind == "policy":
        if policy is None:
            raise ConfigError("scheduler 'policy' needs a trained policy")
        shape = policy.shape
        if (shape.n_ris, shape.n_users) != (config.n_ris, config.n_users):
            raise ConfigError(f"policy was built for B={shape.n_ris}, U={shape.n_users}")
        carry = [None]

        def choose(state, geom, rates):
            feats = encode_state(state, policy.scales)
            probs, carry[0] = policy_forward(policy.params, feats, carry[0])
            if stochastic:
                return sample_action(probs[0], rng)
            return greedy_action(probs[0])
        return choose
    raise ConfigError(f"unknown scheduler {kind!r}")


def run_episode(config: SimConfig, policy=None, *, episode: int = 0, record: bool = False,
                check_drift: bool = False, stochastic: bool = False,
                scheduler: SchedulerFn | None = None) -> MetricsTrace:
    """Simulate ``config.horizon_t`` slots and return the metric trace.

    Slot order: move users and update blockage, draw channel phases and
    rates, observe the state, schedule, score, then serve and enqueue
    arrivals.  With ``check_drift`` the per-slot Lyapunov bound is checked
    and violations counted; with ``record`` every (state, action, reward)
    is kept on the trace.
    """
    rng = episode_streams(config.seed, episode)
    room = Room.square(config.room_side, config.n_ris, config.min_link_distance)
    users = spawn_users(config.n_users, room, config.mobility.speed, rng["init"])
    geom = initial_links(users, room, config.initial_los)
    queues = QueueState.empty(config.n_users)
    choose = scheduler or make_scheduler(config, policy, rng["scheduler"], stochastic)

    T, B, U = config.horizon_t, config.n_ris, config.n_users
    ch = config.channel
    q_max = np.empty(T)
    sum_rate = np.empty(T)
    z1 = np.empty(T)
    z2 = np.empty(T)
    served_count = np.empty(T, dtype=np.int64)
    rewards = np.empty(T)
    steps = []
    drift = [] if check_drift else None
    psi = None

    for t in range(T):
        users = step_users(users, room, rng["mobility"], config.mobility.max_turn)
        geom = update_blockage(geom, users, room, config.blockage, rng["blockage"])
        if t % config.psi_coherence == 0:
            psi = draw_channel_phases(rng["phases"], B, U, ch.n_meta)
        rates = link_rate(geom, psi, ch, config.min_link_distance)
        state = MdpState(geom.s, queues.q, queues.z1, queues.z2, rates.r_images)
        assoc, logp = choose(state, geom, rates)
        arrivals = sample_arrivals(config.arrivals, rng["arrivals"])
        rewards[t] = reward(assoc, rates.r_images, queues, arrivals, config.risk)
        served = assoc.served(rates.r_images)
        new_queues, q_t = update_queues(queues, served, arrivals, config.risk)
        if check_drift:
            rep = drift_bound_check(queues, new_queues, served, arrivals, rates.r_images, config.risk)
            drift.append((rep.lhs, rep.rhs - rep.upsilon, float(rates.r_images.max()), rep.ok))
        if record:
            steps.append(Step(state, assoc, float(rewards[t]), float(logp)))
        q_max[t] = q_t
        sum_rate[t] = float((assoc.x * rates.r_bps).sum())
        served_count[t] = int(assoc.x.sum())
        queues = new_queues
        z1[t], z2[t] = queues.z1, queues.z2

    evar = evar_sliding(q_max, config.risk.gamma, config.evar_window)
    v_slot, v_horizon = _count_drift_violations(drift, U, config) if check_drift else (0, 0)
    return MetricsTrace(q_max, sum_rate, z1, z2, evar, served_count, rewards, config.seed,
                        config.hash(), config.risk.epsilon, config.risk.eta, v_slot, v_horizon, steps)


def _count_drift_violations(drift, n_users, config):
    """Violations with Upsilon from the slot's max rate and from the horizon's max rate."""
    lhs, rest, slot_max, ok = (np.array(col) for col in zip(*drift))
    ups = upsilon(n_users, float(slot_max.max()), config.risk)
    rhs = rest + ups
    ok_horizon = lhs <= rhs + 1e-12 * np.maximum(1.0, np.maximum(np.abs(lhs), np.abs(rhs)))
    return int((~ok.astype(bool)).sum()), int((~ok_horizon).sum())


def _gap(value: float, reference: float, higher_is_worse: bool) -> float:
    diff = value - reference if higher_is_worse else reference - value
    if reference == 0:
        return 0.0 if diff == 0 else math.copysign(math.inf, diff)
    return diff / abs(reference)


def gaps(trace: MetricsTrace, oracle: MetricsTrace) -> dict:
    """Relative shortfall against the oracle; positive means worse than the oracle."""
    if trace.horizon != oracle.horizon:
        raise ValueError("traces have different horizons")
    s, o = trace.summary(), oracle.summary()
    return {"queue_gap": _gap(s["mean_q"], o["mean_q"], True),
            "rate_gap": _gap(s["mean_sum_rate_bps"], o["mean_sum_rate_bps"], False)}


def compare(configs, schedulers, policy=None, episodes: int = 1) -> dict:
    """Run every scheduler on every config with common random numbers."""
    configs = list(configs)
    if len({c.horizon_t for c in configs}) > 1:
        raise ValueError("configs have mismatched horizons")
    report = []
    for cfg in configs:
        entry = {"config_hash": cfg.hash(), "n_ris": cfg.n_ris, "n_users": cfg.n_users,
                 "seed": cfg.seed, "horizon_t": cfg.horizon_t, "schedulers": {}, "gaps": {}}
        traces = {}
        for kind in dict.fromkeys(["optimal", *schedulers]):
            c = cfg.replace(scheduler=kind)
            traces[kind] = [run_episode(c, policy if kind == "policy" else None, episode=e)
                            for e in range(episodes)]
        for kind in schedulers:
            summ = [tr.summary() for tr in traces[kind]]
            entry["schedulers"][kind] = {
                k: float(np.mean([s[k] for s in summ]))
                for k in ("mean_q", "mean_q2", "mean_sum_rate_bps")
            }
            g = [gaps(a, b) for a, b in zip(traces[kind], traces["optimal"])]
            entry["gaps"][kind] = {k: float(np.mean([x[k] for x in g])) for k in ("queue_gap", "rate_gap")}
        report.append(entry)
    return {"results": report}
