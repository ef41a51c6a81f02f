"""Time-hopping transmitter: hop codes, the monocycle, and OOK / PPM pulse trains.

Times are in nanoseconds and energies in normalized units. A pulse's
recorded ``time`` is the start of its chip inside the repetition block,
``j*T_f + c*T_c`` (plus the PPM shift); the waveform itself is centred in
the chip, ``T_c/2`` later, so it never leaks into a neighbouring chip.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, StructureError

__all__ = [
    "LinkConfig",
    "PulseShape",
    "HopCode",
    "PulseTrain",
    "monocycle",
    "gen_th_code",
    "modulate_ook",
    "modulate_ppm",
    "pulse_autocorrelation_energy",
]

ENERGY_MODES = ("per-pulse", "per-bit")


@dataclass(frozen=True)
class PulseShape:
    """Second-order Gaussian derivative with shape parameter `tau` (ns).

    The amplitude ``sqrt(8 / (3 tau))`` makes the energy exactly one:
    with ``u = t/tau`` the integral of ``(1 - 4 pi u^2)^2 exp(-4 pi u^2)``
    is ``3/8``. With ``tau = 0.6`` and a 1 ns half-width, the energy left
    outside the support is about 1e-13.
    """

    tau: float = 0.6
    half_width: float = 1.0

    def __post_init__(self):
        if self.tau <= 0 or self.half_width <= 0:
            raise ConfigError("pulse tau and half_width must be positive")

    @property
    def amplitude(self) -> float:
        return math.sqrt(8.0 / (3.0 * self.tau))

    def __call__(self, t):
        return monocycle(t, self)


def monocycle(t, shape: PulseShape = PulseShape()):
    u2 = (np.asarray(t, dtype=float) / shape.tau) ** 2
    return shape.amplitude * (1.0 - 4.0 * np.pi * u2) * np.exp(-2.0 * np.pi * u2)


def pulse_autocorrelation_energy(shape: PulseShape = PulseShape(), n: int = 4001) -> float:
    """Integral of the squared pulse autocorrelation, in ns.

    Scales the variance a randomly-timed interfering pulse adds to a
    correlator output.
    """
    span = 2.0 * shape.half_width
    t = np.linspace(-span, span, n)
    dt = t[1] - t[0]
    w = monocycle(t, shape)
    r = np.correlate(w, w, mode="full") * dt
    return float(np.sum(r**2) * dt)


@dataclass(frozen=True)
class LinkConfig:
    """Physical-layer parameters of one link.

    `noise_psd` is N_0; the AWGN has two-sided PSD N_0/2. `guard` extends
    each frame's receive window so that delayed multipath copies of a
    frame's pulses stay inside that frame's window.
    """

    frame_duration: float = 100.0
    chip_duration: float = 2.0
    n_frames: int = 9
    n_pulses: int = 1
    n_users: int = 16
    symbol_energy: float = 1.0
    noise_psd: float = 0.0
    n_fingers: int = 5
    sample_rate: float = 16.0
    energy_mode: str = "per-pulse"
    ppm_shift: float | None = None
    guard: float = 0.0
    pulse: PulseShape = field(default_factory=PulseShape)

    def __post_init__(self):
        errors = []
        if self.frame_duration <= 0 or self.chip_duration <= 0:
            errors.append("T_f and T_c must be positive")
        else:
            ratio = self.frame_duration / self.chip_duration
            if abs(ratio - round(ratio)) > 1e-9:
                errors.append(f"T_f = {self.frame_duration} is not an integer multiple of T_c = {self.chip_duration}")
            elif self.n_pulses > round(ratio):
                errors.append(f"N_p = {self.n_pulses} exceeds N_h = {round(ratio)}")
        if self.n_frames < 1:
            errors.append("N_f must be >= 1")
        if self.n_pulses < 1:
            errors.append("N_p must be >= 1")
        if self.n_users < 1:
            errors.append("K must be >= 1")
        if self.n_fingers < 1:
            errors.append("L must be >= 1")
        if self.symbol_energy < 0 or self.noise_psd < 0:
            errors.append("E_s and N_0 must be non-negative")
        if self.sample_rate <= 0:
            errors.append("sample_rate must be positive")
        if self.energy_mode not in ENERGY_MODES:
            errors.append(f"energy_mode must be one of {ENERGY_MODES}")
        if self.guard < 0:
            errors.append("guard must be non-negative")
        if self.ppm_shift is not None and not 0 < self.ppm_shift < self.chip_duration:
            errors.append("PPM shift must lie in (0, T_c)")
        if 2 * self.pulse.half_width > self.chip_duration + 1e-12:
            errors.append("pulse support does not fit inside one chip")
        if errors:
            raise ConfigError("; ".join(errors), errors)

    @property
    def n_chips(self) -> int:
        return int(round(self.frame_duration / self.chip_duration))

    @property
    def n_repetitions(self) -> int:
        return self.n_frames * self.n_pulses

    @property
    def shift(self) -> float:
        return self.chip_duration / 2 if self.ppm_shift is None else self.ppm_shift

    @property
    def window(self) -> float:
        """Receive window per frame (ns)."""
        return self.frame_duration + self.guard

    @property
    def samples_per_frame(self) -> int:
        return int(round(self.window * self.sample_rate))

    def ook_amplitude(self) -> float:
        amp = math.sqrt(self.symbol_energy)
        if self.energy_mode == "per-bit":
            amp /= math.sqrt(self.n_repetitions)
        return amp

    def ppm_amplitude(self) -> float:
        amp = math.sqrt(self.symbol_energy)
        if self.energy_mode == "per-bit":
            amp /= math.sqrt(self.n_frames)
        return amp

    def with_(self, **changes) -> "LinkConfig":
        return replace(self, **changes)


@dataclass
class HopCode:
    """Chip indices for one user: ``chips[n, j, i]`` is the i-th pulse of bit n in frame j.

    Flattened in C order this is the single pseudo-random sequence indexed
    ``n*N_s + j*N_p + i``.
    """

    user: int
    seed: int
    chips: np.ndarray

    @property
    def n_bits(self) -> int:
        return self.chips.shape[0]


def gen_th_code(seed: int, user: int, cfg: LinkConfig, n_bits: int) -> HopCode:
    """Draw N_p distinct chips per (bit, frame), uniformly without replacement.

    The stream is a pure function of ``(seed, user)`` so every user gets an
    independent sequence.
    """
    n_h, n_p = cfg.n_chips, cfg.n_pulses
    if n_p > n_h:
        raise ConfigError(f"N_p = {n_p} exceeds N_h = {n_h}")
    rng = np.random.default_rng([seed, user, 0x7C0DE])
    n_slots = n_bits * cfg.n_frames
    if n_p == 1:
        chips = rng.integers(0, n_h, size=(n_slots, 1))
    else:
        chips = np.empty((n_slots, n_p), dtype=np.int64)
        step = max(1, 2_000_000 // n_h)
        for start in range(0, n_slots, step):
            stop = min(n_slots, start + step)
            keys = rng.random((stop - start, n_h))
            chips[start:stop] = np.argpartition(keys, n_p - 1, axis=1)[:, :n_p]
    return HopCode(user=user, seed=seed, chips=chips.reshape(n_bits, cfg.n_frames, n_p).astype(np.int64))


@dataclass
class PulseTrain:
    """Flat list of transmitted pulses; one entry per pulse, in parallel arrays."""

    user: np.ndarray
    bit: np.ndarray
    frame: np.ndarray
    chip: np.ndarray
    time: np.ndarray
    amplitude: np.ndarray

    def __len__(self) -> int:
        return int(self.time.size)

    @classmethod
    def empty(cls) -> "PulseTrain":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), z.copy(), z.copy(), np.zeros(0), np.zeros(0))

    @classmethod
    def concat(cls, trains) -> "PulseTrain":
        trains = list(trains)
        if not trains:
            return cls.empty()
        return cls(*(np.concatenate([getattr(t, f) for t in trains])
                     for f in ("user", "bit", "frame", "chip", "time", "amplitude")))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["user", "bit", "frame", "time_ns", "amplitude"])
            for row in zip(self.user, self.bit, self.frame, self.time, self.amplitude):
                w.writerow([int(row[0]), int(row[1]), int(row[2]), f"{row[3]:.6f}", f"{row[4]:.9g}"])


def _check_bits(bits, code: HopCode) -> np.ndarray:
    bits = np.asarray(bits)
    if bits.ndim != 1:
        raise StructureError(f"bit stream must be 1-D, got shape {bits.shape}")
    if bits.size > code.n_bits:
        raise StructureError(f"hop code covers {code.n_bits} bits, stream has {bits.size}")
    if bits.size and not np.isin(bits, (0, 1)).all():
        raise StructureError("bit stream must be binary")
    return bits.astype(np.int8)


def modulate_ook(bits, code: HopCode, cfg: LinkConfig) -> PulseTrain:
    """TH-OOK with two-timescale repetition.

    A one-bit emits N_p pulses in each of N_f frames; a zero-bit emits nothing.
    """
    bits = _check_bits(bits, code)
    n_idx = np.flatnonzero(bits)
    if n_idx.size == 0:
        return PulseTrain.empty()
    chips = code.chips[n_idx]  # (n_ones, N_f, N_p)
    n_ones = n_idx.size
    frames = np.broadcast_to(np.arange(cfg.n_frames)[None, :, None], chips.shape)
    bit_ids = np.broadcast_to(n_idx[:, None, None], chips.shape)
    time = frames * cfg.frame_duration + chips * cfg.chip_duration
    return PulseTrain(
        user=np.full(chips.size, code.user, dtype=np.int64),
        bit=bit_ids.reshape(-1).astype(np.int64),
        frame=frames.reshape(-1).astype(np.int64),
        chip=chips.reshape(-1),
        time=time.reshape(-1).astype(float),
        amplitude=np.full(n_ones * cfg.n_repetitions, cfg.ook_amplitude()),
    )


def modulate_ppm(bits, code: HopCode, cfg: LinkConfig) -> PulseTrain:
    """TH-PPM benchmark: one pulse per frame for every bit, delayed by the PPM shift when the bit is 1.

    Only frame-level repetition is used; the first hop chip of each frame is taken.
    """
    bits = _check_bits(bits, code)
    n_b = bits.size
    if n_b == 0:
        return PulseTrain.empty()
    chips = code.chips[:n_b, :, 0]
    frames = np.broadcast_to(np.arange(cfg.n_frames)[None, :], chips.shape)
    shift = bits[:, None] * cfg.shift
    time = frames * cfg.frame_duration + chips * cfg.chip_duration + shift
    return PulseTrain(
        user=np.full(chips.size, code.user, dtype=np.int64),
        bit=np.broadcast_to(np.arange(n_b)[:, None], chips.shape).reshape(-1).astype(np.int64),
        frame=frames.reshape(-1).astype(np.int64),
        chip=chips.reshape(-1),
        time=time.reshape(-1).astype(float),
        amplitude=np.full(chips.size, cfg.ppm_amplitude()),
    )


# sample-grid helpers shared by the channel and the receiver

def _pulse_window(centers: np.ndarray, cfg: LinkConfig):
    """Sample indices and pulse values around each centre (ns, relative to frame start)."""
    fs = cfg.sample_rate
    hw = cfg.pulse.half_width
    width = int(math.floor(2 * hw * fs)) + 2
    s0 = np.ceil((centers - hw) * fs - 1e-9).astype(np.int64)
    idx = s0[:, None] + np.arange(width)[None, :]
    vals = monocycle(idx / fs - centers[:, None], cfg.pulse)
    vals[np.abs(idx / fs - centers[:, None]) > hw + 1e-12] = 0.0
    # out-of-support entries carry zero weight; clipping keeps them inside the row
    np.clip(idx, 0, cfg.samples_per_frame - 1, out=idx)
    return idx, vals


def _check_in_window(centers: np.ndarray, cfg: LinkConfig, what: str) -> None:
    if centers.size == 0:
        return
    hw = cfg.pulse.half_width
    lo, hi = centers.min() - hw, centers.max() + hw
    if lo < -1e-9 or hi > cfg.window + 1e-9:
        raise StructureError(
            f"{what} extends outside the {cfg.window:g} ns frame window "
            f"(support [{lo:g}, {hi:g}] ns); increase guard or shorten the delay spread"
        )
