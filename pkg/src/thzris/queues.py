"""Content queues, virtual risk queues, Lyapunov drift bookkeeping and
tail-risk estimators (EVaR / VaR)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def derive_eta(epsilon: float, gamma: float, kappa: float) -> float:
    """Second-moment bound implied by the EVaR threshold."""
    return epsilon ** 2 + 2.0 * (gamma * (kappa + 1.0) - epsilon)


@dataclass(frozen=True)
class RiskParams:
    gamma: float = 0.05
    kappa: float = 50.0
    epsilon: float = 2.0
    alpha: float = 0.05
    v_tradeoff: float = 20.0
    eta: float = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.v_tradeoff < 0:
            raise ValueError("v_tradeoff must be >= 0")
        eta = derive_eta(self.epsilon, self.gamma, self.kappa)
        if not eta > 0:
            raise ValueError(
                f"epsilon={self.epsilon}, gamma={self.gamma}, kappa={self.kappa} give eta={eta:.6g} <= 0"
            )
        object.__setattr__(self, "eta", eta)


@dataclass(frozen=True)
class ArrivalConfig:
    lambda_u: tuple

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lambda_u)
        if any(not np.isfinite(v) or v < 0 for v in lam):
            raise ValueError("arrival rates must be finite and >= 0")
        object.__setattr__(self, "lambda_u", lam)

    @classmethod
    def uniform(cls, rate: float, n_users: int) -> "ArrivalConfig":
        return cls((rate,) * n_users)


def sample_arrivals(cfg: ArrivalConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.poisson(np.asarray(cfg.lambda_u))


@dataclass(frozen=True)
class QueueState:
    q: np.ndarray
    z1: float = 0.0
    z2: float = 0.0

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if np.any(q < 0) or self.z1 < 0 or self.z2 < 0:
            raise ValueError("queue lengths must be >= 0")
        object.__setattr__(self, "q", q)

    @classmethod
    def empty(cls, n_users: int) -> "QueueState":
        return cls(np.zeros(n_users))

    @property
    def q_max(self) -> float:
        return float(self.q.max()) if self.q.size else 0.0


def update_queues(state: QueueState, served, arrivals, params: RiskParams):
    """Serve, then enqueue arrivals; virtual queues see the pre-update max queue.

    Returns ``(new_state, q_t)``.
    """
    served = np.asarray(served, dtype=float)
    arrivals = np.asarray(arrivals, dtype=float)
    if np.any(served < 0) or np.any(arrivals < 0):
        raise ValueError("served and arrivals must be >= 0")
    q_t = state.q_max
    q = np.maximum(state.q - served, 0.0) + arrivals
    z1 = max(state.z1 + q_t - params.epsilon, 0.0)
    z2 = max(state.z2 + q_t ** 2 - params.eta, 0.0)
    return QueueState(q, z1, z2), q_t


def lyapunov(state: QueueState) -> float:
    return 0.5 * (state.z1 ** 2 + state.z2 ** 2 + float(np.dot(state.q, state.q)))


def upsilon(n_users: int, max_rate: float, params: RiskParams) -> float:
    return 0.5 * (n_users * max_rate ** 2 + params.epsilon ** 2 + params.eta ** 2)


@dataclass(frozen=True)
class DriftReport:
    lhs: float
    rhs: float
    upsilon: float
    ok: bool


def drift_bound_check(before: QueueState, after: QueueState, served, arrivals,
                      rates_images, params: RiskParams, max_rate: float | None = None,
                      rtol: float = 1e-12) -> DriftReport:
    """Check L(t+1) - L(t) <= Upsilon + sum Q(A - S) + Z1(Q_t - eps) + Z2(Q_t^2 - eta).

    ``rates_images`` is the slot's ``(B, U)`` image-rate matrix.  Upsilon
    uses ``max_rate`` when given (e.g. the maximum over a whole horizon),
    otherwise the maximum entry of ``rates_images``.
    """
    served = np.asarray(served, dtype=float)
    arrivals = np.asarray(arrivals, dtype=float)
    rates = np.asarray(rates_images, dtype=float)
    U = before.q.shape[0]
    if served.shape != (U,) or arrivals.shape != (U,) or after.q.shape != (U,) or rates.shape[-1] != U:
        raise ValueError("dimension mismatch in drift check")
    q_t = before.q_max
    if max_rate is None:
        max_rate = float(rates.max()) if rates.size else 0.0
    ups = upsilon(U, max_rate, params)
    lhs = lyapunov(after) - lyapunov(before)
    rhs = (ups + float(np.dot(before.q, arrivals - served))
           + before.z1 * (q_t - params.epsilon) + before.z2 * (q_t ** 2 - params.eta))
    ok = lhs <= rhs + rtol * max(1.0, abs(lhs), abs(rhs))
    return DriftReport(lhs, rhs, ups, bool(ok))


def evar_estimate(samples, gamma: float) -> float:
    """log E[exp(-gamma Q)] / gamma from samples, evaluated with a max shift."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("evar_estimate needs at least one sample")
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must be in (0, 1)")
    a = -gamma * x
    m = a.max()
    return float((m + np.log(np.mean(np.exp(a - m)))) / gamma)


def evar_sliding(samples, gamma: float, window: int) -> np.ndarray:
    """EVaR over the trailing ``window`` samples, one value per position.

    Log-sum-exp over each window is assembled from per-block prefix and
    suffix accumulations, so the cost is linear and no cancellation occurs.
    """
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n == 0:
        return x.copy()
    if window < 1:
        raise ValueError("window must be >= 1")
    w = min(int(window), n)
    n_blocks = -(-n // w)
    a = np.full(n_blocks * w, -np.inf)
    a[:n] = -gamma * x
    blocks = a.reshape(n_blocks, w)
    prefix = np.logaddexp.accumulate(blocks, axis=1).ravel()[:n]
    suffix = np.logaddexp.accumulate(blocks[:, ::-1], axis=1)[:, ::-1].ravel()[:n]

    i = np.arange(n)
    start = i - w + 1
    block_start = (i // w) * w
    split = (start > 0) & (start < block_start)  # window straddles two blocks
    lse = prefix.copy()
    lse[split] = np.logaddexp(suffix[start[split]], prefix[split])
    counts = np.minimum(i + 1, w)
    return (lse - np.log(counts)) / gamma


def var_estimate(samples, alpha: float) -> float:
    """Empirical (1 - alpha) quantile, lower interpolation."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("var_estimate needs at least one sample")
    return float(np.quantile(x, 1.0 - alpha, method="lower"))
