"""Labeled state/optimal-action datasets for behavior cloning.

One JSON object per line::

    {"episode": 3, "slot": 17, "split": "train",
     "state": {"s_links": [[...]], "q": [...], "z1": 0.0, "z2": 0.0, "rates": [[...]]},
     "optimal_action": [[0, 1, 0], ...]}
"""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from ..policy.agent import MdpState
from ..scheduler import Association
from .config import SimConfig
from .episode import run_episode

SPLITS = ("train", "val", "test")


def split_episodes(n_episodes: int, fractions=(0.8, 0.1, 0.1)) -> list:
    """Split label per episode index: the first 80% train, next 10% val, rest test."""
    if n_episodes < 1:
        raise ValueError("need at least one episode")
    if abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError("split fractions must be non-negative and sum to 1")
    n_train = int(np.floor(fractions[0] * n_episodes + 1e-9))
    n_val = int(np.floor(fractions[1] * n_episodes + 1e-9))
    return ["train"] * n_train + ["val"] * n_val + ["test"] * (n_episodes - n_train - n_val)


def generate_records(config: SimConfig, episodes: int, fractions=(0.8, 0.1, 0.1)):
    """Yield records from ``episodes`` oracle-scheduled episodes, in order."""
    cfg = config.replace(scheduler="optimal")
    for ep, split in enumerate(split_episodes(episodes, fractions)):
        trace = run_episode(cfg, episode=ep, record=True)
        for t, step in enumerate(trace.steps):
            yield {"episode": ep, "slot": t, "split": split,
                   "state": step.state.to_record(),
                   "optimal_action": step.action.x.astype(int).tolist()}


def generate_dataset(config: SimConfig, episodes: int, path, fractions=(0.8, 0.1, 0.1)) -> dict:
    """Write the dataset to ``path``; returns record counts per split."""
    counts = dict.fromkeys(SPLITS, 0)
    try:
        with open(path, "w") as fh:
            for rec in generate_records(config, episodes, fractions):
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
                counts[rec["split"]] += 1
    except OSError as exc:
        raise OSError(f"cannot write dataset to {path}: {exc}") from exc
    return counts


@dataclass
class Episode:
    index: int
    split: str
    states: list
    actions: list   # Association per slot


def load_dataset(path) -> list:
    """Episodes (sorted by index) with their states and oracle actions."""
    slots = defaultdict(list)
    splits = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                ep = int(rec["episode"])
                slots[ep].append((int(rec["slot"]), MdpState.from_record(rec["state"]),
                                  Association(np.asarray(rec["optimal_action"]))))
                splits[ep] = rec.get("split", "train")
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad record ({exc})") from exc
    out = []
    for ep in sorted(slots):
        rows = sorted(slots[ep], key=lambda r: r[0])
        out.append(Episode(ep, splits[ep], [r[1] for r in rows], [r[2] for r in rows]))
    return out
