"""Simulation configuration: one validated record, loadable from JSON.

Config files are nested JSON objects mirroring :class:`SimConfig`; every
key is optional and unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..channel import ChannelParams
from ..geometry import BlockageModel
from ..queues import ArrivalConfig, RiskParams

SCHEDULERS = ("optimal", "policy", "random", "nearest")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MobilityConfig:
    speed: float = 0.5               # m/slot
    max_turn: float = math.pi / 4    # heading perturbation half-width

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be >= 0")
        if not 0 <= self.max_turn <= math.pi:
            raise ValueError("max_turn must be in [0, pi]")


@dataclass(frozen=True)
class SimConfig:
    n_ris: int = 4
    n_users: int = 3
    room_side: float = 40.0
    min_link_distance: float = 1.0
    channel: ChannelParams = field(default_factory=ChannelParams)
    risk: RiskParams = field(default_factory=RiskParams)
    arrivals: ArrivalConfig | None = None
    mobility: MobilityConfig = field(default_factory=MobilityConfig)
    blockage: BlockageModel = field(default_factory=BlockageModel)
    initial_los: bool = True
    horizon_t: int = 1000
    seed: int = 0
    scheduler: str = "optimal"
    solver: str = "exact_matching"
    evar_window: int = 10_000
    psi_coherence: int = 1           # slots between channel-phase redraws

    def __post_init__(self):
        if self.n_ris < 1 or self.n_users < 1:
            raise ConfigError("n_ris and n_users must be >= 1")
        if not self.room_side > 0 or not self.min_link_distance > 0:
            raise ConfigError("room_side and min_link_distance must be positive")
        if self.horizon_t < 1:
            raise ConfigError("horizon_t must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must fit in 64 bits")
        if self.scheduler not in SCHEDULERS:
            raise ConfigError(f"scheduler must be one of {SCHEDULERS}, got {self.scheduler!r}")
        if self.solver not in ("exact_matching", "brute"):
            raise ConfigError(f"unknown solver {self.solver!r}")
        if self.evar_window < 1 or self.psi_coherence < 1:
            raise ConfigError("evar_window and psi_coherence must be >= 1")
        if self.arrivals is None:
            object.__setattr__(self, "arrivals", ArrivalConfig.uniform(1.0, self.n_users))
        if len(self.arrivals.lambda_u) != self.n_users:
            raise ConfigError(f"{len(self.arrivals.lambda_u)} arrival rates for {self.n_users} users")

    def replace(self, **changes) -> "SimConfig":
        if "n_users" in changes and "arrivals" not in changes:
            rates = set(self.arrivals.lambda_u)
            if len(rates) != 1:
                raise ConfigError("cannot resize non-uniform arrivals implicitly")
            changes["arrivals"] = ArrivalConfig.uniform(rates.pop(), changes["n_users"])
        return dataclasses.replace(self, **changes)

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        d = {}
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            if dataclasses.is_dataclass(val):
                val = {k: v for k, v in dataclasses.asdict(val).items()
                       if k in _init_fields(type(val))}
                if f.name == "arrivals":
                    val["lambda_u"] = list(val["lambda_u"])
            d[f.name] = val
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        top = _init_fields(cls)
        unknown = set(data) - top
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        nested = {"channel": ChannelParams, "risk": RiskParams, "mobility": MobilityConfig,
                  "blockage": BlockageModel}
        try:
            for key, typ in nested.items():
                if key in kwargs:
                    kwargs[key] = _build(typ, kwargs[key], key)
            if "arrivals" in kwargs:
                arr = kwargs["arrivals"]
                if not isinstance(arr, dict) or set(arr) - {"lambda_u"}:
                    raise ConfigError("arrivals must be an object with the single key 'lambda_u'")
                lam = arr.get("lambda_u", 1.0)
                if isinstance(lam, (int, float)):
                    lam = [lam] * int(kwargs.get("n_users", cls.n_users))
                kwargs["arrivals"] = ArrivalConfig(tuple(lam))
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "SimConfig":
        """Read a JSON config.  ``OSError`` propagates; bad content raises ConfigError."""
        text = Path(path).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data)

    def hash(self) -> str:
        """Digest of everything except the seed."""
        d = self.to_dict()
        d.pop("seed")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _init_fields(cls) -> set:
    return {f.name for f in dataclasses.fields(cls) if f.init}


def _build(cls, data, section):
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    unknown = set(data) - _init_fields(cls)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    return cls(**data)
