"""THz link budget: spreading + molecular absorption loss, absorption noise,
RIS phase quantization and the resulting per-link rates."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import constants

from .geometry import LinkGeometry

SPEED_OF_LIGHT = constants.c
BOLTZMANN = constants.k


@dataclass(frozen=True)
class ChannelParams:
    p: float = 1.0                 # feeder transmit power [W]
    f: float = 1e12                # carrier [Hz]
    bandwidth_w: float = 30e9      # [Hz]
    k_abs: float = 0.0016          # molecular absorption coefficient [1/m]
    temperature_t0: float = 300.0  # [K]
    n_meta: int = 64               # meta-surfaces per RIS
    z_levels: int = 8              # phase quantization levels
    slot_tau: float = 1e-3         # [s]
    image_bits: float = 1e7        # VR image size M [bit]
    light_speed: float = SPEED_OF_LIGHT

    def __post_init__(self):
        for name in ("p", "f", "bandwidth_w", "temperature_t0", "slot_tau", "light_speed"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.k_abs < 0:
            raise ValueError("k_abs must be >= 0")
        if self.n_meta < 1:
            raise ValueError("n_meta must be >= 1")
        if self.z_levels < 2:
            raise ValueError("z_levels must be >= 2")
        if self.image_bits < 1:
            raise ValueError("image_bits must be >= 1")

    @property
    def wavelength(self) -> float:
        return self.light_speed / self.f

    @property
    def a0(self) -> float:
        """Isotropic aperture constant c^2 / (16 pi^2 f^2)."""
        return self.light_speed ** 2 / (16 * math.pi ** 2 * self.f ** 2)

    @property
    def n0(self) -> float:
        """Thermal noise floor W lambda^2 / (4 pi) k_B T0."""
        return self.bandwidth_w * self.wavelength ** 2 / (4 * math.pi) * BOLTZMANN * self.temperature_t0


@dataclass(frozen=True)
class RateMatrix:
    r_bps: np.ndarray     # (B, U) bit/s
    r_images: np.ndarray  # (B, U) images/slot

    @classmethod
    def from_bps(cls, r_bps, params: ChannelParams) -> "RateMatrix":
        r_bps = np.asarray(r_bps, dtype=float)
        return cls(r_bps, r_bps * params.slot_tau / params.image_bits)


def _check_distance(d, min_distance):
    d = np.asarray(d, dtype=float)
    if np.any(d < min_distance):
        raise ValueError(f"link distance below the {min_distance} m floor")
    return d


def path_gain(d, params: ChannelParams, min_distance: float = 1.0):
    """LoS power gain (lambda / (4 pi d))^2 * exp(-k d)^2."""
    d = _check_distance(d, min_distance)
    return (params.wavelength / (4 * math.pi * d)) ** 2 * np.exp(-params.k_abs * d) ** 2


def noise_power(distances_to_all_ris, params: ChannelParams, min_distance: float = 1.0):
    """N0 plus the molecular re-radiation from every RIS.

    The sum runs over the last axis, so a ``(B, U)`` distance matrix passed
    as ``d.T`` yields one noise value per user.
    """
    d = np.asarray(distances_to_all_ris, dtype=float)
    if d.size == 0:
        return params.n0
    d = _check_distance(d, min_distance)
    term = params.p * params.a0 * d ** -2 * -np.expm1(-params.k_abs * d)
    return params.n0 + term.sum(axis=-1)


def phase_grid(z_levels: int) -> np.ndarray:
    if z_levels < 2:
        raise ValueError("z_levels must be >= 2")
    return -math.pi + 2 * math.pi * np.arange(z_levels) / (z_levels - 1)


def quantize_phase(psi, z_levels: int):
    """Nearest element of the Z-level phase grid; ties go to the smaller phase."""
    if z_levels < 2:
        raise ValueError("z_levels must be >= 2")
    step = 2 * math.pi / (z_levels - 1)
    pos = (np.asarray(psi, dtype=float) + math.pi) / step
    lo = np.floor(pos)
    idx = np.where(pos - lo > 0.5, lo + 1, lo)
    idx = np.clip(idx, 0, z_levels - 1)
    return -math.pi + idx * step


def array_gain(phi, psi):
    """|sum_n exp(j (phi_n - psi_n))|^2 over the last axis."""
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if phi.shape != psi.shape:
        raise ValueError(f"phase vectors differ in shape: {phi.shape} vs {psi.shape}")
    err = phi - psi
    return np.cos(err).sum(-1) ** 2 + np.sin(err).sum(-1) ** 2


def draw_channel_phases(rng: np.random.Generator, n_ris: int, n_users: int, n_meta: int) -> np.ndarray:
    return rng.uniform(-math.pi, math.pi, size=(n_ris, n_users, n_meta))


def link_rate(geom: LinkGeometry, psi, params: ChannelParams, min_distance: float = 1.0) -> RateMatrix:
    """Per-link rates with the controller matching quantized phases to ``psi``.

    ``psi`` has shape ``(B, U, N)``.  Blocked links get exactly zero rate.
    """
    psi = np.asarray(psi, dtype=float)
    s = np.asarray(geom.s)
    d = np.asarray(geom.d, dtype=float)
    if psi.shape[:2] != s.shape or s.shape != d.shape:
        raise ValueError("phase / LoS / distance dimensions disagree")
    h = path_gain(d, params, min_distance)
    g = array_gain(quantize_phase(psi, params.z_levels), psi)
    noise = noise_power(d.T, params, min_distance)               # (U,)
    snr = params.p * h * g * s / noise[None, :]
    r = params.bandwidth_w * np.log2(1.0 + snr)
    r = np.where(s == 1, r, 0.0)
    return RateMatrix.from_bps(r, params)


def rate_from_snr_terms(gain: float, array: float, noise: float, params: ChannelParams) -> float:
    """Scalar rate for explicitly supplied gain, array gain and noise power."""
    return params.bandwidth_w * math.log2(1.0 + params.p * gain * array / noise)
