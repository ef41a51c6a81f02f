"""Cluster/ray multipath channel with Nakagami magnitudes, and waveform propagation.

Realizations are quasi-static: one per (user, block), reproducible from
``(seed, user, block)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import ConfigError, NumericalError, StructureError
from .phy import LinkConfig, PulseTrain, _check_in_window, _pulse_window

__all__ = [
    "ChannelParams",
    "ChannelRealization",
    "ReceivedWaveform",
    "PRESETS",
    "channel_preset",
    "nakagami_magnitudes",
    "sample_channel",
    "normalize_channel",
    "propagate",
    "write_taps_csv",
]

RAY_COUNT_MODELS = ("fixed", "poisson")
PHASE_MODELS = ("sign", "complex-real-part")


@dataclass(frozen=True)
class ChannelParams:
    """Cluster/ray model parameters (rates in 1/ns, decays and delays in ns)."""

    cluster_rate: float = 0.047
    ray_rate: float = 1.54
    cluster_decay: float = 22.61
    ray_decay: float = 12.53
    m_nakagami: float = 1.0
    n_clusters: int = 5
    rays_per_cluster: int = 20
    max_delay: float = 60.0
    ray_count: str = "fixed"
    phase_model: str = "sign"

    def __post_init__(self):
        errors = []
        for name in ("cluster_rate", "ray_rate", "cluster_decay", "ray_decay"):
            if not getattr(self, name) > 0:
                errors.append(f"{name} must be > 0")
        if not self.m_nakagami >= 0.5:
            errors.append("m_nakagami must be >= 0.5")
        if self.n_clusters < 1 or self.rays_per_cluster < 1:
            errors.append("need at least one cluster and one ray per cluster")
        if self.max_delay < 0:
            errors.append("max_delay must be >= 0")
        if self.ray_count not in RAY_COUNT_MODELS:
            errors.append(f"ray_count must be one of {RAY_COUNT_MODELS}")
        if self.phase_model not in PHASE_MODELS:
            errors.append(f"phase_model must be one of {PHASE_MODELS}")
        if errors:
            raise ConfigError("; ".join(errors), errors)


# Default parameters approximate the IEEE 802.15.4a CM1 residential LOS profile.
PRESETS = {
    "cm1-fallback": ChannelParams(),
    "single-tap": ChannelParams(n_clusters=1, rays_per_cluster=1, max_delay=0.0),
}


def channel_preset(name: str, **overrides) -> ChannelParams:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown channel preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(base, **overrides) if overrides else base


@dataclass
class ChannelRealization:
    user: int
    delays: np.ndarray
    gains: np.ndarray
    block: int = 0

    @property
    def n_taps(self) -> int:
        return int(self.delays.size)

    @property
    def power(self) -> float:
        return float(np.sum(self.gains**2))


def nakagami_magnitudes(m: float, omega, size=None, rng=None) -> np.ndarray:
    """Nakagami-m magnitudes with mean power `omega` (``sqrt`` of a Gamma(m, omega/m) draw)."""
    rng = np.random.default_rng(rng)
    return np.sqrt(rng.gamma(m, np.asarray(omega, dtype=float) / m, size=size))


def sample_channel(params: ChannelParams, seed: int, user: int, block: int = 0,
                   normalize: bool = True) -> ChannelRealization:
    """Draw one realization of the cluster/ray model.

    Cluster and ray arrivals are Poisson processes (the first cluster and the
    first ray of every cluster at relative delay 0). Mean tap power decays as
    ``exp(-T_l/Gamma) * exp(-tau_lm/gamma)``; magnitudes are Nakagami-m around
    it. Taps beyond `max_delay` are dropped before normalization.
    """
    rng = np.random.default_rng([seed, user, block, 0xC4A7])
    cluster_gaps = rng.exponential(1.0 / params.cluster_rate, size=params.n_clusters)
    cluster_gaps[0] = 0.0
    cluster_delays = np.cumsum(cluster_gaps)

    if params.ray_count == "fixed":
        counts = np.full(params.n_clusters, params.rays_per_cluster)
    else:
        counts = 1 + rng.poisson(params.rays_per_cluster - 1, size=params.n_clusters)

    delays, powers = [], []
    for t_l, n_rays in zip(cluster_delays, counts):
        gaps = rng.exponential(1.0 / params.ray_rate, size=n_rays)
        gaps[0] = 0.0
        tau = np.cumsum(gaps)
        delays.append(t_l + tau)
        powers.append(np.exp(-t_l / params.cluster_decay) * np.exp(-tau / params.ray_decay))
    delays = np.concatenate(delays)
    mean_power = np.concatenate(powers)

    magnitude = nakagami_magnitudes(params.m_nakagami, mean_power, rng=rng)
    if params.phase_model == "sign":
        gains = magnitude * rng.choice((-1.0, 1.0), size=magnitude.size)
    else:
        gains = magnitude * np.cos(rng.uniform(0.0, 2 * np.pi, size=magnitude.size))

    keep = delays <= params.max_delay + 1e-12
    order = np.argsort(delays[keep], kind="stable")
    real = ChannelRealization(user=user, delays=delays[keep][order], gains=gains[keep][order], block=block)
    return normalize_channel(real) if normalize else real


def normalize_channel(realization: ChannelRealization) -> ChannelRealization:
    power = realization.power
    if not power > 0:
        raise NumericalError("cannot normalize a channel whose taps are all zero")
    return replace(realization, gains=realization.gains / np.sqrt(power))


def write_taps_csv(path: str | Path, realizations: Sequence[ChannelRealization]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "delay_ns", "gain"])
        for r in realizations:
            for d, g in zip(r.delays, r.gains):
                w.writerow([r.user, f"{d:.6f}", f"{g:.12g}"])


@dataclass
class ReceivedWaveform:
    """Received samples per bit and frame: ``samples[n, j, s]`` at time ``s / sample_rate`` into frame j."""

    samples: np.ndarray
    cfg: LinkConfig
    noise_psd: float = 0.0

    @property
    def sample_rate(self) -> float:
        return self.cfg.sample_rate

    @property
    def n_bits(self) -> int:
        return self.samples.shape[0]


def propagate(trains: Sequence[PulseTrain], realizations: Sequence[ChannelRealization], cfg: LinkConfig,
              noise_psd: float | None = None, seed=None, n_bits: int | None = None) -> ReceivedWaveform:
    """Pass every user's pulse train through its channel, superpose, and add white Gaussian noise.

    Frames are rendered independently; the per-frame window is
    ``T_f + guard`` long so delayed copies stay in their own frame.
    Noise samples have variance ``N_0/2 * sample_rate``, i.e. two-sided PSD
    N_0/2 after multiplication by the sample spacing.
    """
    if len(trains) != len(realizations):
        raise StructureError(f"{len(trains)} pulse trains but {len(realizations)} channel realizations")
    n0 = cfg.noise_psd if noise_psd is None else noise_psd
    if n_bits is None:
        n_bits = 1 + max((int(t.bit.max()) for t in trains if len(t)), default=-1)
    n_rows = n_bits * cfg.n_frames
    n_samp = cfg.samples_per_frame
    flat = np.zeros(n_rows * n_samp)

    for train, real in zip(trains, realizations):
        if len(train) == 0:
            continue
        if real.n_taps and real.delays.max() >= cfg.frame_duration:
            raise StructureError(f"tap delay {real.delays.max():g} ns exceeds the frame duration")
        rows = train.bit * cfg.n_frames + train.frame
        if rows.max() >= n_rows:
            raise StructureError("pulse train references bits beyond n_bits")
        base = train.time - train.frame * cfg.frame_duration + cfg.chip_duration / 2
        for delay, gain in zip(real.delays, real.gains):
            centers = base + delay
            _check_in_window(centers, cfg, "delayed pulse")
            idx, vals = _pulse_window(centers, cfg)
            np.add.at(flat, (rows[:, None] * n_samp + idx).ravel(),
                      (vals * (train.amplitude * gain)[:, None]).ravel())

    samples = flat.reshape(n_bits, cfg.n_frames, n_samp)
    if n0 > 0:
        rng = np.random.default_rng(seed)
        samples += rng.normal(0.0, np.sqrt(n0 / 2 * cfg.sample_rate), size=samples.shape)
    return ReceivedWaveform(samples=samples, cfg=cfg, noise_psd=n0)
