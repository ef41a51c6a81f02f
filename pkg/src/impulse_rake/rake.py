"""Selective RAKE receiver: finger selection, template correlation, MRC, and the Gaussian fast path.

Per-finger noise variances are *per-pulse* quantities: the variance of a
single-pulse template's correlator output, ``N_0/2`` under AWGN plus any
interference. A template of N_p pulses therefore sees N_p times that
variance, which is where the N_p factor of the frame-statistic variance
comes from. ``variance_model="derived"`` instead takes each finger variance
to be the full correlator-output variance (already including N_p).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .channel import ChannelRealization, ReceivedWaveform
from .exceptions import ConfigError, EstimationError, NumericalError, StructureError
from .phy import HopCode, LinkConfig, _check_in_window, _pulse_window, pulse_autocorrelation_energy

__all__ = [
    "FingerSet",
    "FrameStatistics",
    "VARIANCE_MODELS",
    "select_paths",
    "correlate",
    "correlate_fingers",
    "mrc_combine",
    "link_stats",
    "statistic_model_sample",
    "estimate_finger_noise",
    "mui_variance",
    "sample_frame_statistics",
    "ppm_to_ook",
]

VARIANCE_MODELS = ("as-printed", "derived")


@dataclass
class FingerSet:
    """The L strongest taps of one user's channel and their per-pulse noise variances."""

    user: int
    delays: np.ndarray
    gains: np.ndarray
    noise_var: np.ndarray | None = None

    @property
    def n_fingers(self) -> int:
        return int(self.delays.size)

    def with_noise(self, noise_var) -> "FingerSet":
        nv = np.broadcast_to(np.asarray(noise_var, dtype=float), self.delays.shape).copy()
        return FingerSet(self.user, self.delays, self.gains, nv)

    @property
    def weights(self) -> np.ndarray:
        """MRC weights alpha / sigma^2 (real gains, so no conjugate)."""
        if self.noise_var is None:
            raise ConfigError("finger noise variances are not set")
        if np.any(self.noise_var <= 0):
            raise NumericalError("MRC weight undefined for a zero-variance finger")
        return self.gains / self.noise_var


@dataclass
class FrameStatistics:
    """Combined statistics ``Y[k, n, j]`` plus each user's Gaussian moments (mu, sigma)."""

    Y: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=float)
        self.mu = np.broadcast_to(np.asarray(self.mu, dtype=float), self.Y.shape[:1]).copy()
        self.sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), self.Y.shape[:1]).copy()
        if self.Y.ndim != 3:
            raise StructureError(f"Y must be indexed (user, bit, frame), got shape {self.Y.shape}")
        if np.any(self.sigma <= 0):
            raise NumericalError("sigma must be positive")

    @property
    def n_users(self) -> int:
        return self.Y.shape[0]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "n", "j", "Y"])
            for (k, n, j), y in np.ndenumerate(self.Y):
                w.writerow([k, n, j, f"{y:.12g}"])


def select_paths(realization: ChannelRealization, n_fingers: int) -> FingerSet:
    """Keep the `n_fingers` strongest taps, strongest first; ties go to the earlier tap."""
    if n_fingers > realization.n_taps:
        raise ConfigError(f"L = {n_fingers} exceeds the {realization.n_taps} available taps")
    if n_fingers < 1:
        raise ConfigError("L must be >= 1")
    power = realization.gains**2
    order = np.lexsort((realization.delays, -power))[:n_fingers]
    return FingerSet(realization.user, realization.delays[order].copy(), realization.gains[order].copy())


def _template_centers(code: HopCode, cfg: LinkConfig, delay: float, shift: float = 0.0) -> np.ndarray:
    return code.chips * cfg.chip_duration + cfg.chip_duration / 2 + delay + shift


def correlate(received: ReceivedWaveform, code: HopCode, delay: float, cfg: LinkConfig,
              n: int, j: int, shift: float = 0.0) -> float:
    """Inner product of frame j of bit n with the N_p-pulse template delayed by `delay`."""
    centers = _template_centers(code, cfg, delay, shift)[n, j]
    _check_in_window(centers, cfg, "correlator template")
    idx, vals = _pulse_window(centers, cfg)
    row = received.samples[n, j]
    return float(np.sum(row[idx] * vals) / cfg.sample_rate)


def correlate_fingers(received: ReceivedWaveform, code: HopCode, fingers: FingerSet, cfg: LinkConfig,
                      shift: float = 0.0) -> np.ndarray:
    """All correlator outputs ``Y[n, j, l]`` for one user, vectorized."""
    n_b, n_f, n_s = received.samples.shape
    if code.n_bits < n_b:
        raise StructureError(f"hop code covers {code.n_bits} bits, waveform has {n_b}")
    rows = received.samples.reshape(n_b * n_f, n_s)
    out = np.empty((n_b, n_f, fingers.n_fingers))
    chips = code.chips[:n_b]
    row_ids = np.repeat(np.arange(n_b * n_f), chips.shape[2])
    for l, delay in enumerate(fingers.delays):
        centers = (chips * cfg.chip_duration + cfg.chip_duration / 2 + delay + shift).reshape(-1)
        _check_in_window(centers, cfg, "correlator template")
        idx, vals = _pulse_window(centers, cfg)
        per_pulse = np.sum(rows[row_ids[:, None], idx] * vals, axis=1) / cfg.sample_rate
        out[..., l] = per_pulse.reshape(n_b, n_f, -1).sum(axis=2)
    return out


def mrc_combine(finger_outputs: np.ndarray, weights) -> np.ndarray:
    """Weighted sum over the last (finger) axis."""
    finger_outputs = np.asarray(finger_outputs, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if finger_outputs.shape[-1] != weights.shape[-1]:
        raise StructureError(f"{finger_outputs.shape[-1]} finger outputs vs {weights.shape[-1]} weights")
    return finger_outputs @ weights


def link_stats(fingers: FingerSet, cfg: LinkConfig, variance_model: str = "as-printed") -> tuple[float, float]:
    """Mean and standard deviation of the MRC statistic under b=1 (mean is 0 under b=0).

    With ``S = sum_l alpha_l^2 / sigma_l^2`` and pulse amplitude ``a``:
    ``mu = a * N_p * S`` in both modes; the variance is ``N_p * S``
    ("as-printed") or ``S`` ("derived").
    """
    if variance_model not in VARIANCE_MODELS:
        raise ConfigError(f"variance_model must be one of {VARIANCE_MODELS}")
    if fingers.noise_var is None:
        raise ConfigError("finger noise variances are not set")
    if np.any(fingers.noise_var <= 0):
        raise NumericalError("zero-variance finger")
    s = float(np.sum(fingers.gains**2 / fingers.noise_var))
    mu = cfg.ook_amplitude() * cfg.n_pulses * s
    var = cfg.n_pulses * s if variance_model == "as-printed" else s
    return mu, math.sqrt(var)


def statistic_model_sample(b, mu: float, sigma: float, seed=None) -> np.ndarray:
    """Draw ``Y ~ N(b*mu, sigma^2)`` element-wise over `b`."""
    if sigma < 0:
        raise NumericalError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    b = np.asarray(b, dtype=float)
    return b * mu + sigma * rng.standard_normal(b.shape)


def estimate_finger_noise(received: ReceivedWaveform, code: HopCode, delay: float, cfg: LinkConfig,
                          min_samples: int = 30, max_samples: int | None = None) -> float:
    """Variance of an N_p-pulse correlator output, measured on this user's silent chips.

    Single-pulse templates are correlated at every chip the user does not
    occupy (and whose delayed template stays in the window); the unbiased
    sample variance is scaled by N_p.
    """
    n_b, n_f, _ = received.samples.shape
    n_h = cfg.n_chips
    used = np.zeros((n_b, n_f, n_h), dtype=bool)
    np.put_along_axis(used, code.chips[:n_b], True, axis=2)
    chip_centers = np.arange(n_h) * cfg.chip_duration + cfg.chip_duration / 2 + delay
    fits = (chip_centers + cfg.pulse.half_width <= cfg.window + 1e-9)
    silent = ~used & fits[None, None, :]
    n_idx, j_idx, c_idx = np.nonzero(silent)
    if max_samples is not None:
        n_idx, j_idx, c_idx = n_idx[:max_samples], j_idx[:max_samples], c_idx[:max_samples]
    if n_idx.size < min_samples:
        raise EstimationError(f"only {n_idx.size} silent chips available, need {min_samples}")
    idx, vals = _pulse_window(chip_centers[c_idx], cfg)
    rows = received.samples[n_idx, j_idx]
    y = np.sum(np.take_along_axis(rows, idx, axis=1) * vals, axis=1) / cfg.sample_rate
    return float(cfg.n_pulses * np.var(y, ddof=1))


def mui_variance(cfg: LinkConfig, activities: Sequence[float], pulses_per_frame: int | None = None,
                 amplitude: float | None = None) -> float:
    """Per-pulse correlator variance from other users' randomly-timed pulses.

    Each interfering pulse of energy ``a^2`` landing uniformly within the
    frame adds ``a^2 * int(R_w^2) / T_f``. A unit-power channel spreads
    that energy over taps without changing the total; `activities` holds
    each other user's probability of transmitting in a frame.
    """
    if pulses_per_frame is None:
        pulses_per_frame = cfg.n_pulses
    if amplitude is None:
        amplitude = cfg.ook_amplitude()
    load = float(np.sum(activities)) * pulses_per_frame
    return amplitude**2 * load * pulse_autocorrelation_energy(cfg.pulse) / cfg.frame_duration


def sample_frame_statistics(bits: np.ndarray, mu, sigma, n_frames: int, seed=None) -> FrameStatistics:
    """Statistic-level fast path: ``Y[k, n, j] ~ N(b[k, n] mu_k, sigma_k^2)``."""
    bits = np.asarray(bits)
    if bits.ndim == 1:
        bits = bits[None, :]
    mu = np.broadcast_to(np.asarray(mu, dtype=float), bits.shape[:1])
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), bits.shape[:1])
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(bits.shape + (n_frames,))
    Y = bits[..., None] * mu[:, None, None] + sigma[:, None, None] * noise
    return FrameStatistics(Y, mu, sigma)


def ppm_to_ook(y_diff, mu: float, sigma: float):
    """Recast a PPM difference statistic (means -mu / +mu, std sqrt(2)*sigma) as OOK.

    Returns ``(Y + mu, 2 mu, sqrt(2) sigma)`` so the OOK detector applies unchanged.
    """
    return np.asarray(y_diff) + mu, 2.0 * mu, math.sqrt(2.0) * sigma
