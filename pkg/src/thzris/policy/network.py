"""Recurrent encoder/decoder policy over RIS associations, in plain numpy.

Encoder: three stacked LSTM layers followed by two fully connected ReLU
layers.  Decoder: one fully connected layer producing ``B`` groups of
``U + 1`` logits, one softmax head per RIS (last option = idle).

All parameters live in one flat float64 vector; layer matrices are views
into it, so gradients come back in the same layout.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_LSTM = 3
N_FC = 2
INIT_SCALE = 0.08
INIT_SCHEMES = ("uniform", "scaled")


@dataclass(frozen=True)
class PolicyShape:
    n_features: int
    hidden: int
    n_ris: int
    n_users: int

    @property
    def n_options(self) -> int:
        return self.n_users + 1

    def blocks(self):
        """(name, shape) for every parameter tensor, in storage order."""
        h = self.hidden
        out = []
        fan_in = self.n_features
        for layer in range(N_LSTM):
            out += [(f"lstm{layer}_wx", (fan_in, 4 * h)),
                    (f"lstm{layer}_wh", (h, 4 * h)),
                    (f"lstm{layer}_b", (4 * h,))]
            fan_in = h
        for layer in range(N_FC):
            out += [(f"fc{layer}_w", (h, h)), (f"fc{layer}_b", (h,))]
        out += [("out_w", (h, self.n_ris * self.n_options)),
                ("out_b", (self.n_ris * self.n_options,))]
        return out

    @property
    def size(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.blocks())

    def unflatten(self, theta: np.ndarray) -> dict:
        if theta.shape != (self.size,):
            raise ValueError(f"parameter vector has shape {theta.shape}, expected ({self.size},)")
        views, i = {}, 0
        for name, shape in self.blocks():
            n = int(np.prod(shape))
            views[name] = theta[i:i + n].reshape(shape)
            i += n
        return views


@dataclass
class PolicyParams:
    shape: PolicyShape
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.shape.unflatten(self.theta)
        if not np.isfinite(self.theta).all():
            raise ValueError("policy parameters must be finite")

    @classmethod
    def init(cls, shape: PolicyShape, rng: np.random.Generator,
             scheme: str = "uniform") -> "PolicyParams":
        """Random parameters with zero biases and forget-gate bias 1.

        ``uniform`` draws every weight from [-0.08, 0.08].  ``scaled`` sizes
        each matrix by its fan: Glorot-uniform for LSTM gate blocks and the
        output layer, He-uniform for the ReLU layers.  The fixed range
        shrinks the signal by about an order of magnitude per stacked layer,
        which stalls training of wide inputs.
        """
        if scheme not in INIT_SCHEMES:
            raise ValueError(f"init scheme must be one of {INIT_SCHEMES}")
        theta = rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape.size)
        v = shape.unflatten(theta)
        h = shape.hidden
        for name, dims in shape.blocks():
            if name.endswith("_b"):
                v[name][:] = 0.0
            elif scheme == "scaled":
                fan_in, fan_out = dims[0], dims[1]
                if name.startswith("lstm"):
                    fan_out = h
                limit = np.sqrt(6.0 / fan_in) if name.startswith("fc") else np.sqrt(6.0 / (fan_in + fan_out))
                v[name][:] *= limit / INIT_SCALE
        for layer in range(N_LSTM):
            v[f"lstm{layer}_b"][h:2 * h] = 1.0   # forget gate
        return cls(shape, theta)

    @classmethod
    def zeros(cls, shape: PolicyShape) -> "PolicyParams":
        return cls(shape, np.zeros(shape.size))

    def views(self) -> dict:
        return self.shape.unflatten(self.theta)


def zero_carry(shape: PolicyShape, batch: int):
    return tuple((np.zeros((batch, shape.hidden)), np.zeros((batch, shape.hidden)))
                 for _ in range(N_LSTM))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _lstm_forward(x, wx, wh, b, h0, c0):
    T, N, _ = x.shape
    H = wh.shape[0]
    zx = (x.reshape(T * N, -1) @ wx).reshape(T, N, 4 * H) + b
    hs = np.empty((T, N, H))
    cs = np.empty((T, N, H))
    gates = np.empty((T, N, 4 * H))
    h, c = h0, c0
    for t in range(T):
        z = zx[t] + h @ wh
        g = np.empty_like(z)
        g[:, :3 * H] = _sigmoid(z[:, :3 * H])
        g[:, 3 * H:] = np.tanh(z[:, 3 * H:])
        c = g[:, H:2 * H] * c + g[:, :H] * g[:, 3 * H:]
        h = g[:, 2 * H:3 * H] * np.tanh(c)
        gates[t], cs[t], hs[t] = g, c, h
    return hs, (h, c), (x, h0, c0, gates, cs, hs)


def _lstm_backward(dh_out, wx, wh, cache):
    x, h0, c0, gates, cs, hs = cache
    T, N, H = hs.shape
    dz = np.empty((T, N, 4 * H))
    dh_next = np.zeros((N, H))
    dc_next = np.zeros((N, H))
    for t in range(T - 1, -1, -1):
        g = gates[t]
        i, f, o, gg = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        c_prev = cs[t - 1] if t > 0 else c0
        tc = np.tanh(cs[t])
        dh = dh_out[t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        d = dz[t]
        d[:, :H] = dc * gg * i * (1.0 - i)
        d[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        d[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        d[:, 3 * H:] = dc * i * (1.0 - gg * gg)
        dc_next = dc * f
        dh_next = d @ wh.T
    h_prev = np.concatenate([h0[None], hs[:-1]], axis=0)
    dzf = dz.reshape(T * N, 4 * H)
    dwx = x.reshape(T * N, -1).T @ dzf
    dwh = h_prev.reshape(T * N, H).T @ dzf
    db = dzf.sum(axis=0)
    dx = (dzf @ wx.T).reshape(T, N, -1)
    return dx, dwx, dwh, db


def forward(params: PolicyParams, x: np.ndarray, carry=None):
    """Run the network over ``x`` of shape ``(T, N, F)``.

    Returns ``(logits, carry', cache)`` with logits shaped ``(T, N, B, U+1)``.
    """
    shape = params.shape
    x = np.asarray(x, dtype=float)
    if x.ndim != 3 or x.shape[2] != shape.n_features:
        raise ValueError(f"expected features of shape (T, N, {shape.n_features}), got {x.shape}")
    T, N, _ = x.shape
    v = params.views()
    if carry is None:
        carry = zero_carry(shape, N)
    layer_in = x
    new_carry, lstm_caches = [], []
    for layer in range(N_LSTM):
        h0, c0 = carry[layer]
        layer_in, hc, cache = _lstm_forward(layer_in, v[f"lstm{layer}_wx"], v[f"lstm{layer}_wh"],
                                            v[f"lstm{layer}_b"], h0, c0)
        new_carry.append(hc)
        lstm_caches.append(cache)
    a = layer_in.reshape(T * N, shape.hidden)
    fc_in = []
    for layer in range(N_FC):
        fc_in.append(a)
        a = np.maximum(a @ v[f"fc{layer}_w"] + v[f"fc{layer}_b"], 0.0)
    logits = a @ v["out_w"] + v["out_b"]
    logits = logits.reshape(T, N, shape.n_ris, shape.n_options)
    return logits, tuple(new_carry), (lstm_caches, fc_in, a)


def backward(params: PolicyParams, cache, dlogits: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(dlogits * logits)`` with respect to the flat parameters."""
    shape = params.shape
    v = params.views()
    grad = np.zeros_like(params.theta)
    g = shape.unflatten(grad)
    lstm_caches, fc_in, a_last = cache
    T, N = dlogits.shape[:2]
    d = dlogits.reshape(T * N, -1)
    g["out_w"][:] = a_last.T @ d
    g["out_b"][:] = d.sum(axis=0)
    da = d @ v["out_w"].T
    out = a_last
    for layer in range(N_FC - 1, -1, -1):
        da = da * (out > 0)
        a_in = fc_in[layer]
        g[f"fc{layer}_w"][:] = a_in.T @ da
        g[f"fc{layer}_b"][:] = da.sum(axis=0)
        da = da @ v[f"fc{layer}_w"].T
        out = a_in
    dh = da.reshape(T, N, shape.hidden)
    for layer in range(N_LSTM - 1, -1, -1):
        dh, dwx, dwh, db = _lstm_backward(dh, v[f"lstm{layer}_wx"], v[f"lstm{layer}_wh"],
                                           lstm_caches[layer])
        g[f"lstm{layer}_wx"][:] = dwx
        g[f"lstm{layer}_wh"][:] = dwh
        g[f"lstm{layer}_b"][:] = db
    return grad


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def head_masks(actions: np.ndarray, n_users: int) -> np.ndarray:
    """Allowed-option masks under sequential per-user exclusion.

    ``actions`` has shape ``(..., B)`` with idle encoded as ``n_users``.
    """
    actions = np.asarray(actions)
    B = actions.shape[-1]
    mask = np.ones(actions.shape + (n_users + 1,), dtype=bool)
    for b in range(1, B):
        prev = actions[..., b - 1]
        hit = np.eye(n_users + 1, dtype=bool)[prev]
        hit[..., n_users] = False
        mask[..., b, :] = mask[..., b - 1, :] & ~hit
    return mask


def masked_log_prob(logits: np.ndarray, actions: np.ndarray):
    """Joint log-probability of ``actions`` and its gradient w.r.t. ``logits``.

    ``logits``: ``(..., B, U+1)``; ``actions``: ``(..., B)`` ints, idle = ``U``.
    Returns ``(logp (...), dlogp_dlogits (..., B, U+1))``.
    """
    K = logits.shape[-1]
    mask = head_masks(actions, K - 1)
    z = np.where(mask, logits, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z - zmax), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    p = e / s
    onehot = np.eye(K)[actions]
    chosen = (logits * onehot).sum(-1)
    logp_heads = chosen - (zmax[..., 0] + np.log(s[..., 0]))
    return logp_heads.sum(-1), onehot - p
