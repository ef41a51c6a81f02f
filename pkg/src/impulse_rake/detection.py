"""Sparsity-aware MAP detection of repetition-coded OOK bits.

Each frame statistic is thresholded at

    eta(lam, p) = sigma^2 / mu * ln((1 - p) / (lam * p)) + mu / 2,

the N_f per-frame decisions are majority-voted, and the resulting bit error
rate has a closed form in the per-frame false-alarm and miss probabilities.
The bias ``lam >= 1`` lowers the threshold to favour the rare one-bits; it
is chosen to minimize the closed-form BER.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .events import assemble_frame
from .exceptions import ConfigError, EstimationError, NumericalError, StructureError
from .rake import FrameStatistics

__all__ = [
    "ErrorModel",
    "SparsityEstimate",
    "q_function",
    "map_threshold",
    "detect_frame",
    "majority_vote",
    "per_frame_error_probs",
    "vote_error_probs",
    "analytic_ber",
    "ber_at_threshold",
    "optimize_lambda",
    "estimate_sparsity",
    "detect_bits",
    "reconstruct_frame",
    "SparseMAPDetector",
    "EPS_PRIOR",
    "LAMBDA_MAX",
]

EPS_PRIOR = 1e-4
LAMBDA_MAX = 1e3


def q_function(x):
    """Standard normal tail probability ``Q(x) = 1 - Phi(x)``."""
    return ndtr(-np.asarray(x, dtype=float))


def map_threshold(lam, p, mu, sigma):
    lam = np.asarray(lam, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(lam < 1):
        raise ConfigError("bias lambda must be >= 1")
    if np.any((p <= 0) | (p >= 1)):
        raise ConfigError("prior p must lie strictly inside (0, 1); clamp degenerate estimates first")
    if np.any(np.asarray(mu) <= 0):
        raise NumericalError("mu must be positive (no signal)")
    return sigma**2 / mu * np.log((1 - p) / (lam * p)) + mu / 2


def detect_frame(Y, eta):
    """Hard per-frame decision, ``1`` iff ``Y > eta`` (strict)."""
    return (np.asarray(Y) > eta).astype(np.int8)


def _check_odd(n_frames: int) -> None:
    if n_frames < 1 or n_frames % 2 == 0:
        raise ConfigError(f"N_f must be odd for majority voting, got {n_frames}")


def majority_vote(frame_bits, axis: int = -1):
    frame_bits = np.asarray(frame_bits)
    n_frames = frame_bits.shape[axis]
    _check_odd(n_frames)
    return (2 * frame_bits.sum(axis=axis) > n_frames).astype(np.int8)


def per_frame_error_probs(eta, mu, sigma):
    """Per-frame false alarm and miss probabilities ``(Q(eta/sigma), Q((mu-eta)/sigma))``."""
    eta = np.asarray(eta, dtype=float)
    return q_function(eta / sigma), q_function((mu - eta) / sigma)


def vote_error_probs(p_fa, p_md, n_frames: int):
    """Post-vote error probabilities given per-frame ones.

    ``P_e|0 = sum_{i=m+1}^{N_f} C(N_f, i) P_FA^i (1-P_FA)^(N_f-i)`` and
    ``P_e|1 = sum_{i=0}^{m} C(N_f, i) (1-P_MD)^i P_MD^(N_f-i)``, ``m = (N_f-1)/2``.
    """
    _check_odd(n_frames)
    m = (n_frames - 1) // 2
    p_fa = np.asarray(p_fa, dtype=float)
    p_md = np.asarray(p_md, dtype=float)
    p_e0 = sum(math.comb(n_frames, i) * p_fa**i * (1 - p_fa) ** (n_frames - i)
               for i in range(m + 1, n_frames + 1))
    p_e1 = sum(math.comb(n_frames, i) * (1 - p_md) ** i * p_md ** (n_frames - i)
               for i in range(0, m + 1))
    return p_e0, p_e1


@dataclass
class ErrorModel:
    lam: float
    p: float
    threshold: float
    p_fa: float
    p_md: float
    p_e0: float
    p_e1: float
    ber: float
    vote_threshold: int


def ber_at_threshold(eta, p, n_frames, mu, sigma):
    """Closed-form BER for an arbitrary per-frame threshold (vectorized over `eta`)."""
    p_fa, p_md = per_frame_error_probs(eta, mu, sigma)
    p_e0, p_e1 = vote_error_probs(p_fa, p_md, n_frames)
    return (1 - p) * p_e0 + p * p_e1


def analytic_ber(lam, p, n_frames: int, mu: float, sigma: float) -> ErrorModel:
    """Closed-form error model at bias `lam` and prior `p`.

    At the endpoints ``p = 0`` / ``p = 1`` the threshold goes to +inf / -inf.
    """
    _check_odd(n_frames)
    if lam < 1:
        raise ConfigError("bias lambda must be >= 1")
    if not 0 <= p <= 1:
        raise ConfigError("prior p must lie in [0, 1]")
    if p == 0:
        eta = math.inf
    elif p == 1:
        eta = -math.inf
    else:
        eta = float(map_threshold(lam, p, mu, sigma))
    p_fa, p_md = per_frame_error_probs(eta, mu, sigma)
    p_e0, p_e1 = vote_error_probs(p_fa, p_md, n_frames)
    return ErrorModel(
        lam=float(lam), p=float(p), threshold=eta, p_fa=float(p_fa), p_md=float(p_md),
        p_e0=float(p_e0), p_e1=float(p_e1), ber=float((1 - p) * p_e0 + p * p_e1),
        vote_threshold=(n_frames - 1) // 2,
    )


def _golden_section(f: Callable[[float], float], a: float, b: float, tol: float = 1e-12, max_iter: int = 200):
    invphi = (math.sqrt(5) - 1) / 2
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def optimize_lambda(p: float, n_frames: int, mu: float, sigma: float,
                    lambda_max: float = LAMBDA_MAX, n_grid: int = 1024) -> tuple[float, float]:
    """Bias minimizing the closed-form BER over ``[1, lambda_max]``.

    BER is not known to be unimodal in lambda, so a log-spaced grid locates
    the best basin and golden-section search on ``ln lambda`` refines it.
    """
    if not 0 < p < 1:
        raise ConfigError("prior p must lie strictly inside (0, 1)")
    _check_odd(n_frames)
    x = np.linspace(0.0, math.log(lambda_max), n_grid)
    eta = map_threshold(np.exp(x), p, mu, sigma)
    ber = ber_at_threshold(eta, p, n_frames, mu, sigma)
    i = int(np.argmin(ber))
    best_x, best_ber = float(x[i]), float(ber[i])

    def f(t):
        return float(ber_at_threshold(map_threshold(math.exp(t), p, mu, sigma), p, n_frames, mu, sigma))

    lo, hi = x[max(i - 1, 0)], x[min(i + 1, n_grid - 1)]
    if hi > lo:
        tx, tb = _golden_section(f, float(lo), float(hi))
        if tb <= best_ber:
            best_x, best_ber = tx, tb
    return math.exp(best_x), best_ber


@dataclass
class SparsityEstimate:
    p_hat: float
    method: str
    n_samples: int
    nll_history: list = field(default_factory=list)


def _mixture_nll(y, p, mu, sigma):
    log0 = -0.5 * (y / sigma) ** 2
    log1 = -0.5 * ((y - mu) / sigma) ** 2
    mx = np.maximum(log0, log1)
    lik = (1 - p) * np.exp(log0 - mx) + p * np.exp(log1 - mx)
    return float(-np.sum(np.log(lik) + mx) + y.size * math.log(sigma * math.sqrt(2 * math.pi)))


def estimate_sparsity(Y, mu: float, sigma: float | None = None, method: str = "moment",
                      eps: float = EPS_PRIOR, em_iter: int = 50, min_samples: int = 100) -> SparsityEstimate:
    """Estimate the one-bit prior from frame statistics.

    ``moment`` uses ``E[Y] = p mu``. ``em`` starts there and runs EM on the
    two-component mixture ``(1-p) N(0, s^2) + p N(mu, s^2)`` with mu and s
    held fixed, updating only the weight p. The estimate is clamped to
    ``[eps, 1-eps]``.
    """
    y = np.asarray(Y, dtype=float).ravel()
    if y.size < min_samples:
        raise EstimationError(f"need at least {min_samples} statistics, got {y.size}")
    if not mu > 0:
        raise NumericalError("mu must be positive")
    p = float(np.clip(y.mean() / mu, eps, 1 - eps))
    history = []
    if method == "em":
        if sigma is None or not sigma > 0:
            raise ConfigError("EM refinement needs a positive sigma")
        z = ((y - mu / 2) * mu / sigma**2).clip(-700, 700)  # log-likelihood ratio
        history.append(_mixture_nll(y, p, mu, sigma))
        for _ in range(em_iter):
            # posterior of the one-component, written stably via the LLR
            r = 1.0 / (1.0 + (1 - p) / p * np.exp(-z))
            p_new = float(np.clip(r.mean(), eps, 1 - eps))
            history.append(_mixture_nll(y, p_new, mu, sigma))
            converged = abs(p_new - p) < 1e-10
            p = p_new
            if converged:
                break
    elif method != "moment":
        raise ConfigError(f"unknown sparsity method {method!r}")
    return SparsityEstimate(p_hat=p, method=method, n_samples=int(y.size), nll_history=history)


def _as_prior(estimate, eps=EPS_PRIOR) -> float:
    p = estimate.p_hat if isinstance(estimate, SparsityEstimate) else float(estimate)
    return float(np.clip(p, eps, 1 - eps))


def detect_bits(Y, p: float, mu: float, sigma: float, lambda_max: float = LAMBDA_MAX):
    """Optimize the bias for prior `p`, threshold every frame of ``Y[n, j]``, and vote."""
    Y = np.asarray(Y, dtype=float)
    lam, _ = optimize_lambda(p, Y.shape[-1], mu, sigma, lambda_max)
    eta = float(map_threshold(lam, p, mu, sigma))
    return majority_vote(detect_frame(Y, eta)), lam, eta


def reconstruct_frame(stats: FrameStatistics, estimates: Sequence, height: int, width: int,
                      lambda_max: float = LAMBDA_MAX, eps: float = EPS_PRIOR) -> np.ndarray:
    """Detect every user's bit stream from its statistics and reassemble the event frame."""
    if len(estimates) != stats.n_users:
        raise StructureError(f"{len(estimates)} sparsity estimates for {stats.n_users} users")
    streams = []
    for k in range(stats.n_users):
        bits, _, _ = detect_bits(stats.Y[k], _as_prior(estimates[k], eps),
                                 stats.mu[k], stats.sigma[k], lambda_max)
        streams.append(bits.astype(np.uint8))
    return assemble_frame(streams, stats.n_users, height, width)


class SparseMAPDetector(BaseEstimator):
    """Detector for one link's repetition-coded OOK statistics ``Y[n, j]``.

    `fit` estimates the one-bit prior (unless ``sparsity="oracle"``, which
    uses `prior`), then picks the BER-optimal bias and threshold. `predict`
    thresholds and majority-votes.

    Parameters
    ----------
    mu, sigma : float
        Gaussian moments of the statistic under b=1 (mean under b=0 is 0).
    sparsity : {"moment", "em", "oracle"}
    prior : float, optional
        Known activation rate, required for ``sparsity="oracle"``.
    lambda_max : float
        Upper end of the bias search.
    eps : float
        Prior clamp.
    """

    def __init__(self, mu=1.0, sigma=1.0, sparsity="moment", prior=None, lambda_max=LAMBDA_MAX, eps=EPS_PRIOR):
        self.mu = mu
        self.sigma = sigma
        self.sparsity = sparsity
        self.prior = prior
        self.lambda_max = lambda_max
        self.eps = eps

    def _validate(self, Y, reset=False):
        Y = check_array(Y, dtype=float, ensure_2d=True)
        if reset:
            self.n_frames_ = Y.shape[1]
            _check_odd(self.n_frames_)
        elif Y.shape[1] != self.n_frames_:
            raise StructureError(f"fitted on {self.n_frames_} frames, got {Y.shape[1]}")
        return Y

    def fit(self, Y, y=None):
        Y = self._validate(Y, reset=True)
        if self.sparsity == "oracle":
            if self.prior is None:
                raise ConfigError("oracle sparsity needs prior=")
            self.sparsity_ = SparsityEstimate(float(self.prior), "oracle", Y.size)
        else:
            self.sparsity_ = estimate_sparsity(Y, self.mu, self.sigma, method=self.sparsity, eps=self.eps)
        self.prior_ = _as_prior(self.sparsity_, self.eps)
        self.lambda_, _ = optimize_lambda(self.prior_, self.n_frames_, self.mu, self.sigma, self.lambda_max)
        self.threshold_ = float(map_threshold(self.lambda_, self.prior_, self.mu, self.sigma))
        self.error_model_ = analytic_ber(self.lambda_, self.prior_, self.n_frames_, self.mu, self.sigma)
        return self

    def predict_frames(self, Y):
        check_is_fitted(self, "threshold_")
        return detect_frame(self._validate(Y), self.threshold_)

    def predict(self, Y):
        return majority_vote(self.predict_frames(Y))

    def score(self, Y, bits):
        """Fraction of correctly detected bits, ``1 - BER``."""
        return float(np.mean(self.predict(Y) == np.asarray(bits)))
