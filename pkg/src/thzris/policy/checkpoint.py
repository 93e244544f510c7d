"""Trained policy bundle and its on-disk format.

File layout: a magic line, one line of JSON header (architecture, feature
scales, seed, parameter count), then the parameters as raw little-endian
float64.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import FeatureScales
from .network import PolicyParams, PolicyShape

MAGIC = b"THZRIS-POLICY 1\n"


@dataclass
class TrainedPolicy:
    params: PolicyParams
    scales: FeatureScales
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def shape(self) -> PolicyShape:
        return self.params.shape


def save_policy(policy: TrainedPolicy, path) -> None:
    shape = policy.shape
    header = {
        "n_features": shape.n_features, "hidden": shape.hidden,
        "n_ris": shape.n_ris, "n_users": shape.n_users,
        "n_params": shape.size, "seed": int(policy.seed),
        "scales": policy.scales.to_dict(), "meta": policy.meta,
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(policy.params.theta.astype("<f8").tobytes())


def load_policy(path) -> TrainedPolicy:
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise ValueError(f"{path}: not a policy checkpoint")
        header = json.loads(fh.readline())
        theta = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    shape = PolicyShape(header["n_features"], header["hidden"], header["n_ris"], header["n_users"])
    if theta.size != header["n_params"] or theta.size != shape.size:
        raise ValueError(f"{path}: truncated or inconsistent checkpoint")
    return TrainedPolicy(PolicyParams(shape, theta), FeatureScales(**header["scales"]),
                         header["seed"], header.get("meta", {}))


def checkpoint_path(out_dir) -> Path:
    return Path(out_dir) / "policy.ckpt"
