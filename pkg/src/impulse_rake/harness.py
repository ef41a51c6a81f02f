"""Experiment configuration and seeded Monte Carlo runs: BER sweeps, collisions, end-to-end inference.

SNR is ``10 log10(E_s / N_0)`` with unit-power channels. Every trial draws
from its own generator keyed on ``(seed, snr index, trial, purpose)``, so
results do not depend on how trials are scheduled across workers.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .channel import (ChannelParams, ChannelRealization, PRESETS, channel_preset, propagate,
                      sample_channel)
from .detection import (EPS_PRIOR, LAMBDA_MAX, ber_at_threshold, detect_bits, estimate_sparsity,
                        map_threshold, optimize_lambda, reconstruct_frame)
from .events import frame_to_streams, grid_side
from .exceptions import ConfigError
from .phy import HopCode, LinkConfig, gen_th_code, modulate_ook, modulate_ppm
from .rake import (VARIANCE_MODELS, FingerSet, FrameStatistics, correlate_fingers, estimate_finger_noise,
                   link_stats, mrc_combine, mui_variance, select_paths)

__all__ = [
    "SCHEMES",
    "ExperimentConfig",
    "ResultRecord",
    "parse_config",
    "load_config",
    "validate",
    "wilson_interval",
    "snr_to_noise_psd",
    "simulate_link",
    "run_ber_sweep",
    "run_collision_analysis",
    "analytic_collision_probability",
    "run_e2e_trial",
    "run_e2e_sweep",
    "prepare_e2e_models",
    "e2e_input",
    "write_records",
    "config_hash",
]

SCHEMES = ("ook-digital", "ook-analog", "ppm-digital", "ppm-analog", "baseline")
LEVELS = ("waveform", "statistic")
SPARSITY_METHODS = ("oracle", "moment", "em")
NOISE_MODES = ("oracle", "estimated")


@dataclass(frozen=True)
class ExperimentConfig:
    link: LinkConfig = field(default_factory=LinkConfig)
    channel_preset: str = "cm1-fallback"
    channel: ChannelParams = field(default_factory=ChannelParams)
    scheme: str = "ook-digital"
    snr_db: tuple = (0.0, 5.0, 10.0)
    trials: int = 500
    seed: int = 0
    output: str | None = None
    level: str = "statistic"
    activation_rate: float = 0.1
    n_bits: int = 2048
    sparsity: str = "oracle"
    noise_estimation: str = "oracle"
    variance_model: str = "as-printed"
    lambda_max: float = LAMBDA_MAX
    dry_run: bool = False
    workers: int = 1
    height: int = 128
    width: int = 128
    steps_per_slice: int = 16
    analog_epochs: int = 30

    @property
    def is_ppm(self) -> bool:
        return self.scheme.startswith("ppm")

    def effective_link(self) -> LinkConfig:
        """Link config with the receive guard sized to the channel's delay spread."""
        guard = self.channel.max_delay + (self.link.shift if self.is_ppm else 0.0)
        return replace(self.link, guard=max(self.link.guard, guard))


@dataclass
class ResultRecord:
    scheme: str
    snr_db: float
    n_frames: int
    n_pulses: int
    metric: str
    value: float
    ci_low: float
    ci_high: float
    trials: int
    seed: int
    analytic: float = math.nan
    p: float = math.nan
    lambda_star: float = math.nan
    eta: float = math.nan
    count: int = 0
    total: int = 0


# -- configuration -----------------------------------------------------------------

_LINK_KEYS = {
    "T_f": ("frame_duration", float), "T_c": ("chip_duration", float), "N_f": ("n_frames", int),
    "N_p": ("n_pulses", int), "K": ("n_users", int), "E_s": ("symbol_energy", float),
    "L": ("n_fingers", int), "sample_rate": ("sample_rate", float), "energy_mode": ("energy_mode", str),
    "ppm_shift": ("ppm_shift", float), "guard": ("guard", float),
}
_CHANNEL_KEYS = {f.name: f.type for f in fields(ChannelParams)}
_CHANNEL_TYPES = {"cluster_rate": float, "ray_rate": float, "cluster_decay": float, "ray_decay": float,
                  "m_nakagami": float, "n_clusters": int, "rays_per_cluster": int, "max_delay": float,
                  "ray_count": str, "phase_model": str}
_EXPERIMENT_TYPES = {
    "scheme": str, "snr_db": "floats", "trials": int, "seed": int, "output": str, "level": str,
    "activation_rate": float, "n_bits": int, "sparsity": str, "noise_estimation": str,
    "variance_model": str, "lambda_max": float, "dry_run": bool, "workers": int, "height": int,
    "width": int, "steps_per_slice": int, "analog_epochs": int,
}


def _convert(value: str, kind):
    value = value.strip()
    if kind == "floats":
        items = [v for v in value.replace(",", " ").split() if v]
        return tuple(float(v) for v in items)
    if kind is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if kind is int:
        return int(value)
    if kind is float:
        return float(value)
    return value


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``[link]``, ``[channel]`` and ``[experiment]`` sections of ``key = value`` lines.

    Unknown sections or keys are rejected; every problem is reported at once
    in ``ConfigError.errors``.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    errors = []
    link_kw, chan_kw, exp_kw = {}, {}, {}
    preset = "cm1-fallback"
    tables = {"link": (_LINK_KEYS, link_kw), "channel": (None, chan_kw), "experiment": (None, exp_kw)}
    for section in parser.sections():
        if section not in tables:
            errors.append(f"unknown section [{section}]")
            continue
        for key, raw in parser.items(section):
            try:
                if section == "link":
                    if key not in _LINK_KEYS:
                        errors.append(f"[link] unknown key {key!r}")
                        continue
                    name, kind = _LINK_KEYS[key]
                    link_kw[name] = _convert(raw, kind)
                elif section == "channel":
                    if key == "preset":
                        preset = raw.strip()
                    elif key in _CHANNEL_TYPES:
                        chan_kw[key] = _convert(raw, _CHANNEL_TYPES[key])
                    else:
                        errors.append(f"[channel] unknown key {key!r}")
                else:
                    if key not in _EXPERIMENT_TYPES:
                        errors.append(f"[experiment] unknown key {key!r}")
                        continue
                    exp_kw[key] = _convert(raw, _EXPERIMENT_TYPES[key])
            except ValueError as exc:
                errors.append(f"[{section}] {key}: {exc}")

    link = chan = None
    try:
        link = LinkConfig(**link_kw)
    except ConfigError as exc:
        errors.extend(exc.errors)
    if preset not in PRESETS:
        errors.append(f"[channel] unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    else:
        try:
            chan = channel_preset(preset, **chan_kw)
        except ConfigError as exc:
            errors.extend(exc.errors)
    if errors:
        raise ConfigError("invalid config: " + "; ".join(errors), errors)

    cfg = ExperimentConfig(link=link, channel_preset=preset, channel=chan, **exp_kw)
    problems = validate(cfg)
    if problems:
        raise ConfigError("invalid config: " + "; ".join(problems), problems)
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def validate(cfg: ExperimentConfig) -> list[str]:
    """Return a list of human-readable problems (empty when the config is usable)."""
    errs = []
    link = cfg.link
    if cfg.scheme not in SCHEMES:
        errs.append(f"scheme must be one of {SCHEMES}")
    if not cfg.snr_db:
        errs.append("SNR grid must not be empty")
    if cfg.trials < 1:
        errs.append("trials must be >= 1")
    if cfg.level not in LEVELS:
        errs.append(f"level must be one of {LEVELS}")
    if cfg.sparsity not in SPARSITY_METHODS:
        errs.append(f"sparsity must be one of {SPARSITY_METHODS}")
    if cfg.noise_estimation not in NOISE_MODES:
        errs.append(f"noise_estimation must be one of {NOISE_MODES}")
    if cfg.variance_model not in VARIANCE_MODELS:
        errs.append(f"variance_model must be one of {VARIANCE_MODELS}")
    if not 0.0 <= cfg.activation_rate <= 1.0:
        errs.append("activation_rate must lie in [0, 1]")
    if cfg.n_bits < 1:
        errs.append("n_bits must be >= 1")
    if cfg.lambda_max < 1:
        errs.append("lambda_max must be >= 1")
    if cfg.workers < 1:
        errs.append("workers must be >= 1")
    if cfg.steps_per_slice < 1:
        errs.append("steps_per_slice must be >= 1")
    if cfg.scheme in ("ook-digital", "ppm-digital") and link.n_frames % 2 == 0:
        errs.append("N_f must be odd for majority voting")
    if cfg.is_ppm and link.n_pulses != 1:
        errs.append("N_p > 1 is only defined for OOK schemes")
    if link.n_pulses > link.n_chips:
        errs.append(f"N_p = {link.n_pulses} exceeds N_h = {link.n_chips}")
    if cfg.channel.max_delay > link.frame_duration - link.n_pulses * link.chip_duration:
        errs.append("channel max_delay must not exceed T_f - N_p*T_c")
    return errs


def _check_tiling(cfg: ExperimentConfig) -> None:
    """End-to-end runs split frames over a sqrt(K) x sqrt(K) grid of users."""
    side = grid_side(cfg.link.n_users)
    if cfg.height % side or cfg.width % side:
        raise ConfigError(f"frame {cfg.height}x{cfg.width} not divisible into a {side}x{side} grid")


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(repr(asdict(cfg)).encode()).hexdigest()[:16]


# -- statistics helpers ----------------------------------------------------------------

def wilson_interval(k: int, n: int, confidence: float = 0.99) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        return 0.0, 1.0
    z = norm.ppf(0.5 + confidence / 2)
    phat = k / n
    denom = 1 + z * z / n
    centre = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return float(max(0.0, centre - half)), float(min(1.0, centre + half))


def snr_to_noise_psd(snr_db: float, symbol_energy: float = 1.0) -> float:
    return 0.0 if math.isinf(snr_db) and snr_db > 0 else symbol_energy / 10 ** (snr_db / 10)


def _rng(cfg: ExperimentConfig, snr_index: int, trial: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, snr_index, trial, purpose])


# -- link simulation ---------------------------------------------------------------------

@dataclass
class LinkResult:
    stats: FrameStatistics
    fingers: list


def _finger_noise_floor(link: LinkConfig) -> float:
    return 1e-12 * max(link.ook_amplitude(), 1.0) ** 2


def _fingers_for(real: ChannelRealization, link: LinkConfig) -> FingerSet:
    return select_paths(real, min(link.n_fingers, real.n_taps))


def _oracle_noise(link: LinkConfig, n0: float, activities: Sequence[float], ppm: bool) -> float:
    if ppm:
        mui = mui_variance(link, activities, pulses_per_frame=1, amplitude=link.ppm_amplitude())
    else:
        mui = mui_variance(link, activities)
    return max(n0 / 2 + mui, _finger_noise_floor(link))


def _moments(fingers: FingerSet, link: LinkConfig, variance_model: str):
    # PPM is restricted to N_p = 1, where its pulse amplitude equals the OOK one
    return link_stats(fingers, link, variance_model)


def simulate_link(cfg: ExperimentConfig, bits: np.ndarray, snr_db: float, rng_channel, rng_noise,
                  trial: int = 0) -> LinkResult:
    """Run K users' bit streams through channel and receiver; returns OOK-form statistics.

    PPM statistics are already mapped to OOK form (means 0 / mu), so the same
    detector applies. At statistic level the MRC output is drawn from its
    Gaussian model; at waveform level the full pulse-level chain is simulated.
    """
    link = cfg.effective_link()
    ppm = cfg.is_ppm
    n0 = snr_to_noise_psd(snr_db, link.symbol_energy)
    link = replace(link, noise_psd=n0)
    K, n_bits = bits.shape
    chan_seed = int(rng_channel.integers(2**31))
    reals = [sample_channel(cfg.channel, chan_seed, k, block=trial) for k in range(K)]
    fingers = [_fingers_for(r, link) for r in reals]
    activity = np.ones(K) if ppm else bits.mean(axis=1)

    if cfg.level == "statistic":
        mus, sigmas = np.empty(K), np.empty(K)
        for k in range(K):
            others = np.delete(activity, k)
            fingers[k] = fingers[k].with_noise(_oracle_noise(link, n0, others, ppm))
            mu, sigma = _moments(fingers[k], link, cfg.variance_model)
            if ppm:
                mu, sigma = 2 * mu, math.sqrt(2) * sigma
            mus[k], sigmas[k] = mu, sigma
        noise = rng_noise.standard_normal(bits.shape + (link.n_frames,))
        Y = bits[..., None] * mus[:, None, None] + sigmas[:, None, None] * noise
        return LinkResult(FrameStatistics(Y, mus, sigmas), fingers)

    return _simulate_waveform(cfg, link, bits, reals, fingers, activity, rng_noise)


def _simulate_waveform(cfg, link, bits, reals, fingers, activity, rng_noise) -> LinkResult:
    ppm = cfg.is_ppm
    K, n_bits = bits.shape
    code_seed = int(rng_noise.integers(2**31))
    codes = [gen_th_code(code_seed, k, link, n_bits) for k in range(K)]
    chunk = max(1, int(4_000_000 // (link.n_frames * link.samples_per_frame)))
    raw = [np.empty((n_bits, link.n_frames, fingers[k].n_fingers)) for k in range(K)]
    noise_est = [None] * K
    for start in range(0, n_bits, chunk):
        stop = min(n_bits, start + chunk)
        sub = [HopCode(c.user, c.seed, c.chips[start:stop]) for c in codes]
        mod = modulate_ppm if ppm else modulate_ook
        trains = [mod(bits[k, start:stop], sub[k], link) for k in range(K)]
        rx = propagate(trains, reals, link, seed=rng_noise, n_bits=stop - start)
        for k in range(K):
            if ppm:
                y1 = correlate_fingers(rx, sub[k], fingers[k], link, shift=link.shift)
                y0 = correlate_fingers(rx, sub[k], fingers[k], link)
                raw[k][start:stop] = y1 - y0
            else:
                raw[k][start:stop] = correlate_fingers(rx, sub[k], fingers[k], link)
            if cfg.noise_estimation == "estimated" and noise_est[k] is None:
                occupied = sub[k]
                if ppm:
                    nxt = np.minimum(sub[k].chips + 1, link.n_chips - 1)
                    occupied = HopCode(sub[k].user, sub[k].seed, np.concatenate([sub[k].chips, nxt], axis=2))
                est = [estimate_finger_noise(rx, occupied, d, link, max_samples=20000) / link.n_pulses
                       for d in fingers[k].delays]
                noise_est[k] = np.maximum(est, _finger_noise_floor(link))

    mus, sigmas, Y = np.empty(K), np.empty(K), np.empty((K, n_bits, link.n_frames))
    for k in range(K):
        if cfg.noise_estimation == "estimated":
            fingers[k] = fingers[k].with_noise(noise_est[k])
        else:
            fingers[k] = fingers[k].with_noise(_oracle_noise(link, link.noise_psd, np.delete(activity, k), ppm))
        mu, sigma = _moments(fingers[k], link, cfg.variance_model)
        y = mrc_combine(raw[k], fingers[k].weights)
        if ppm:
            y, mu, sigma = y + mu, 2 * mu, math.sqrt(2) * sigma
        mus[k], sigmas[k], Y[k] = mu, sigma, y
    return LinkResult(FrameStatistics(Y, mus, sigmas), fingers)


def _prior_for(cfg: ExperimentConfig, y: np.ndarray, mu: float, sigma: float, true_p: float) -> float:
    if cfg.sparsity == "oracle":
        return float(np.clip(true_p, EPS_PRIOR, 1 - EPS_PRIOR))
    return estimate_sparsity(y, mu, sigma, method=cfg.sparsity).p_hat


# -- BER sweep ---------------------------------------------------------------------------

def _ber_trial(cfg: ExperimentConfig, snr_index: int, snr_db: float, trial: int):
    link = cfg.link
    rng_bits = _rng(cfg, snr_index, trial, 1)
    bits = (rng_bits.random((link.n_users, cfg.n_bits)) < cfg.activation_rate).astype(np.int8)
    res = simulate_link(cfg, bits, snr_db, _rng(cfg, snr_index, trial, 2), _rng(cfg, snr_index, trial, 3), trial)
    p = cfg.activation_rate
    errors = 0
    analytic = lam_sum = eta_sum = 0.0
    for k in range(link.n_users):
        mu, sigma = res.stats.mu[k], res.stats.sigma[k]
        prior = _prior_for(cfg, res.stats.Y[k], mu, sigma, p)
        lam, _ = optimize_lambda(prior, link.n_frames, mu, sigma, cfg.lambda_max)
        eta = float(map_threshold(lam, prior, mu, sigma))
        analytic += float(ber_at_threshold(eta, p, link.n_frames, mu, sigma))
        lam_sum += lam
        eta_sum += eta
        if not cfg.dry_run:
            detected = (2 * (res.stats.Y[k] > eta).sum(axis=1) > link.n_frames)
            errors += int(np.count_nonzero(detected != bits[k]))
    return errors, analytic, lam_sum, eta_sum


def _map_trials(cfg: ExperimentConfig, fn, n: int):
    if cfg.workers == 1:
        return [fn(t) for t in range(n)]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(fn, range(n)))


def run_ber_sweep(cfg: ExperimentConfig) -> list[ResultRecord]:
    """Empirical (Wilson 99% CI) and closed-form BER at every SNR point.

    Each trial draws fresh block channels and bits for all K users; per user
    the prior (oracle or estimated) sets the BER-optimal bias and threshold.
    The closed-form BER uses the true activation rate and the threshold
    actually applied, averaged over users and trials.
    """
    problems = validate(cfg)
    if problems:
        raise ConfigError("invalid config: " + "; ".join(problems), problems)
    if cfg.scheme not in ("ook-digital", "ppm-digital"):
        raise ConfigError(f"ber-sweep needs a digital scheme, got {cfg.scheme!r}")
    link = cfg.link
    records = []
    for i, snr in enumerate(cfg.snr_db):
        out = _map_trials(cfg, lambda t: _ber_trial(cfg, i, snr, t), cfg.trials)
        n_links = cfg.trials * link.n_users
        total = n_links * cfg.n_bits
        errors = sum(o[0] for o in out)
        analytic = sum(o[1] for o in out) / n_links
        if cfg.dry_run:
            value, lo, hi, total = math.nan, math.nan, math.nan, 0
        else:
            value = errors / total
            lo, hi = wilson_interval(errors, total)
        records.append(ResultRecord(
            scheme=cfg.scheme, snr_db=snr, n_frames=link.n_frames, n_pulses=link.n_pulses, metric="BER",
            value=value, ci_low=lo, ci_high=hi, trials=cfg.trials, seed=cfg.seed, analytic=analytic,
            p=cfg.activation_rate, lambda_star=sum(o[2] for o in out) / n_links,
            eta=sum(o[3] for o in out) / n_links, count=errors, total=total))
    return records


# -- collisions --------------------------------------------------------------------------

def analytic_collision_probability(n_users: int, n_chips: int, n_pulses: int, activity: float) -> float:
    """Probability that an active user's pulses share a chip with another active user in a frame."""
    if n_users < 2:
        return 0.0
    miss = math.comb(n_chips - n_pulses, n_pulses) / math.comb(n_chips, n_pulses)
    return 1.0 - (1.0 - activity * (1.0 - miss)) ** (n_users - 1)


def run_collision_analysis(cfg: ExperimentConfig, snr_db: float = math.nan) -> ResultRecord:
    """Empirical chip-collision rate of user 0's frames, from the actual hop codes.

    Frames are counted only when user 0 transmits. OOK users are active with
    the activation rate; PPM users always occupy one chip per frame. The
    rate does not depend on SNR; `snr_db` only labels the record.
    """
    link = cfg.link
    K, n_h = link.n_users, link.n_chips
    n_p = 1 if cfg.is_ppm else link.n_pulses
    activity = 1.0 if cfg.is_ppm else cfg.activation_rate
    collisions = frames = 0
    for t in range(cfg.trials):
        rng = _rng(cfg, 0, t, 7)
        code_seed = int(rng.integers(2**31))
        occ = np.zeros((cfg.n_bits * link.n_frames, n_h), dtype=np.int16)
        active = rng.random((K, cfg.n_bits)) < activity
        mine = None
        for k in range(K):
            chips = gen_th_code(code_seed, k, link, cfg.n_bits).chips[:, :, :n_p]
            on = np.repeat(active[k], link.n_frames)
            hits = np.zeros((cfg.n_bits * link.n_frames, n_h), dtype=np.int16)
            np.put_along_axis(hits, chips.reshape(-1, n_p), 1, axis=1)
            hits[~on] = 0
            if k == 0:
                mine = hits.astype(bool)
                me_on = on
            else:
                occ += hits
        hit = (mine & (occ > 0)).any(axis=1)
        collisions += int(np.count_nonzero(hit[me_on]))
        frames += int(np.count_nonzero(me_on))
    lo, hi = wilson_interval(collisions, frames)
    return ResultRecord(
        scheme=cfg.scheme, snr_db=snr_db, n_frames=link.n_frames, n_pulses=n_p, metric="collision-rate",
        value=collisions / frames if frames else 0.0, ci_low=lo, ci_high=hi, trials=cfg.trials, seed=cfg.seed,
        analytic=analytic_collision_probability(K, n_h, n_p, activity), p=activity,
        count=collisions, total=frames)


# -- end-to-end inference -----------------------------------------------------------------

def _e2e_statistics(cfg: ExperimentConfig, frame: np.ndarray, snr_db: float, snr_index: int, trial: int):
    streams = frame_to_streams(frame, cfg.link.n_users).astype(np.int8)
    res = simulate_link(cfg, streams, snr_db, _rng(cfg, snr_index, trial, 12), _rng(cfg, snr_index, trial, 13),
                        trial)
    return streams, res.stats


def _digital_frame(cfg: ExperimentConfig, streams, stats: FrameStatistics) -> np.ndarray:
    priors = []
    for k in range(stats.n_users):
        if cfg.sparsity == "oracle":
            priors.append(float(streams[k].mean()))
        else:
            priors.append(estimate_sparsity(stats.Y[k], stats.mu[k], stats.sigma[k], method=cfg.sparsity))
    return reconstruct_frame(stats, priors, cfg.height, cfg.width, cfg.lambda_max)


def e2e_input(cfg: ExperimentConfig, frame: np.ndarray, snr_db: float, snr_index: int = 0,
              trial: int = 0, mode: str = "digital") -> np.ndarray:
    """Network input ``(H, W, 2, N_f)`` for one frame after the wireless link."""
    from .snn import encode_analog, encode_digital

    streams, stats = _e2e_statistics(cfg, frame, snr_db, snr_index, trial)
    if mode == "digital":
        return encode_digital(_digital_frame(cfg, streams, stats), cfg.link.n_frames)
    return encode_analog(stats, cfg.height, cfg.width)


def prepare_e2e_models(cfg: ExperimentConfig, X_train, y_train, digital=None, train_snrs=None,
                       epochs: int = 30):
    """Return ``(digital_clf, analog_clf)`` for end-to-end runs.

    The digital classifier is trained on clean frames (unless one is
    given). The analog classifier is trained from scratch on soft inputs
    received over the link, cycling through `train_snrs` (default: the
    finite points of the config's SNR grid).
    """
    from .snn import LIFClassifier, encode_digital

    _check_tiling(cfg)
    n_f = cfg.link.n_frames
    if digital is None:
        digital = LIFClassifier(steps_per_slice=cfg.steps_per_slice, epochs=epochs, seed=cfg.seed)
        digital.fit(np.stack([encode_digital(x, n_f) for x in X_train]), y_train)
    snrs = list(cfg.snr_db if train_snrs is None else train_snrs)
    finite = [s for s in snrs if math.isfinite(s)] or [20.0]
    Z = np.stack([e2e_input(cfg, x, finite[i % len(finite)], snr_index=10_000, trial=i, mode="analog")
                  for i, x in enumerate(X_train)])
    analog = LIFClassifier(hidden=digital.hidden, steps_per_slice=cfg.steps_per_slice, epochs=cfg.analog_epochs,
                           lr=3e-3, init_gain=0.5, seed=cfg.seed)
    analog.fit(Z, y_train)
    return digital, analog


def run_e2e_trial(cfg: ExperimentConfig, classifier, X, y, snr_db: float, scheme: str | None = None,
                  snr_index: int = 0) -> ResultRecord:
    """Classification accuracy after the full frame -> link -> encoder -> SNN chain.

    ``cfg.trials`` samples are drawn by cycling through ``(X, y)``; each gets
    its own channel and noise. ``baseline`` classifies the clean frame.
    """
    from .snn import encode_digital

    scheme = cfg.scheme if scheme is None else scheme
    if classifier is None:
        raise ConfigError("end-to-end runs need trained SNN weights")
    _check_tiling(cfg)
    run_cfg = replace(cfg, scheme=scheme)
    mode = "analog" if scheme.endswith("analog") else "digital"
    n = len(X)

    def one(t):
        x = X[t % n]
        if scheme == "baseline":
            inp = encode_digital(x, cfg.link.n_frames)
        else:
            inp = e2e_input(run_cfg, x, snr_db, snr_index, t, mode)
        return int(classifier.predict(inp[None])[0] == y[t % n])

    correct = sum(_map_trials(cfg, one, cfg.trials))
    lo, hi = wilson_interval(correct, cfg.trials)
    return ResultRecord(scheme=scheme, snr_db=snr_db, n_frames=cfg.link.n_frames, n_pulses=cfg.link.n_pulses,
                        metric="accuracy", value=correct / cfg.trials, ci_low=lo, ci_high=hi,
                        trials=cfg.trials, seed=cfg.seed, count=correct, total=cfg.trials)


def run_e2e_sweep(cfg: ExperimentConfig, classifiers: dict, X, y, schemes=None) -> list[ResultRecord]:
    """Accuracy versus SNR for each scheme; `classifiers` maps ``"digital"``/``"analog"`` to models."""
    schemes = [cfg.scheme] if schemes is None else list(schemes)
    out = []
    for scheme in schemes:
        clf = classifiers.get("analog" if scheme.endswith("analog") else "digital")
        for i, snr in enumerate(cfg.snr_db):
            out.append(run_e2e_trial(cfg, clf, X, y, snr, scheme, snr_index=i))
    return out


# -- output ------------------------------------------------------------------------------

BER_COLUMNS = ("snr_db", "p", "lambda_star", "eta", "analytic_ber", "empirical_ber", "ci_low", "ci_high")


def write_records(records: Sequence[ResultRecord], cfg: ExperimentConfig, path=None, kind: str = "ber"):
    """Write CSV with a commented YAML-style header; returns the text."""
    lines = [
        "# impulse-rake results",
        f"# config_hash: {config_hash(cfg)}",
        f"# scheme: {cfg.scheme}",
        f"# level: {cfg.level}",
        f"# seed: {cfg.seed}",
        f"# trials: {cfg.trials}",
        "# snr_definition: 10*log10(E_s/N_0), unit-power channels",
        f"# energy_mode: {cfg.link.energy_mode}",
        f"# N_f: {cfg.link.n_frames}",
        f"# N_p: {cfg.link.n_pulses}",
        f"# K: {cfg.link.n_users}",
    ]
    rows = []
    if kind == "ber":
        rows.append(",".join(BER_COLUMNS))
        for r in records:
            rows.append(",".join(f"{v:.10g}" for v in (r.snr_db, r.p, r.lambda_star, r.eta, r.analytic,
                                                        r.value, r.ci_low, r.ci_high)))
    else:
        cols = ("scheme", "snr_db", "metric", "value", "ci_low", "ci_high", "analytic", "count", "total")
        rows.append(",".join(cols))
        for r in records:
            rows.append(",".join(str(getattr(r, c)) if isinstance(getattr(r, c), str)
                                 else f"{getattr(r, c):.10g}" for c in cols))
    text = "\n".join(lines + rows) + "\n"
    if path:
        Path(path).write_text(text)
    return text
