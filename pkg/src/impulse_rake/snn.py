"""Leaky integrate-and-fire network: inference, spike encoders, and small-scale training.

Every layer follows

    U[m] = beta * U[m-1] + W @ X[m] - zeta * S[m-1],    S[m] = 1{U[m] >= zeta},

so a spike is subtracted from the membrane one step *after* it is emitted.
Layer 1 is driven by an input slice; deeper layers by the spikes of the
layer below in the same step. Classification counts output spikes.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_is_fitted

from .detection import SparsityEstimate, EPS_PRIOR
from .events import assemble_frame
from .exceptions import ConfigError, StructureError, TrainingError, WeightFormatError
from .rake import FrameStatistics

__all__ = [
    "SnnNetwork",
    "SnnState",
    "ClassScores",
    "init_network",
    "init_state",
    "lif_step",
    "network_step",
    "encode_digital",
    "encode_analog",
    "forward",
    "forward_batch",
    "arctan_surrogate",
    "train_toy",
    "save_weights",
    "load_weights",
    "network_from_blob",
    "LIFClassifier",
    "LIFSparsityEstimator",
]

PRESENTATIONS = ("block", "interleaved")


@dataclass
class SnnNetwork:
    """Dense LIF layers; ``weights[d]`` has shape ``(n_out, n_in)``."""

    weights: list
    beta: float = 0.9
    threshold: float = 1.0

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        if not self.weights:
            raise ConfigError("network needs at least one layer")
        if not 0.0 < self.beta < 1.0:
            raise ConfigError(f"decay beta must lie in (0, 1), got {self.beta}")
        if not self.threshold > 0:
            raise ConfigError(f"threshold must be positive, got {self.threshold}")
        for d in range(1, len(self.weights)):
            if self.weights[d].shape[1] != self.weights[d - 1].shape[0]:
                raise StructureError(
                    f"layer {d} expects {self.weights[d].shape[1]} inputs, layer {d - 1} has "
                    f"{self.weights[d - 1].shape[0]} neurons")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.n_inputs] + [w.shape[0] for w in self.weights]

    def copy(self) -> "SnnNetwork":
        return replace(self, weights=[w.copy() for w in self.weights])


@dataclass
class SnnState:
    U: list
    S: list
    m: int = 0


@dataclass
class ClassScores:
    counts: np.ndarray
    n_steps: int

    @property
    def label(self) -> int:
        # argmax already breaks ties toward the lowest index
        return int(np.argmax(self.counts))


def init_network(layer_sizes: Sequence[int], beta: float = 0.9, threshold: float = 1.0,
                 gain: float = 1.0, seed=None) -> SnnNetwork:
    """Gaussian init with standard deviation ``gain / sqrt(fan_in)``."""
    rng = np.random.default_rng(seed)
    weights = [rng.normal(0.0, gain / math.sqrt(n_in), size=(n_out, n_in))
               for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:])]
    return SnnNetwork(weights, beta=beta, threshold=threshold)


def init_state(net: SnnNetwork, batch: tuple = ()) -> SnnState:
    sizes = net.layer_sizes[1:]
    return SnnState(U=[np.zeros(batch + (n,)) for n in sizes], S=[np.zeros(batch + (n,)) for n in sizes])


def lif_step(state: SnnState, net: SnnNetwork, x, d: int):
    """Advance layer `d` by one step given its synaptic input `x`; returns ``(new_state, spikes)``."""
    u = net.beta * state.U[d] + np.asarray(x, dtype=float) @ net.weights[d].T - net.threshold * state.S[d]
    s = (u >= net.threshold).astype(float)
    U = list(state.U)
    S = list(state.S)
    U[d], S[d] = u, s
    return SnnState(U, S, state.m), s


def network_step(state: SnnState, net: SnnNetwork, x):
    """One time step through all layers; returns ``(new_state, output_spikes)``."""
    for d in range(net.n_layers):
        state, x = lif_step(state, net, x, d)
    state.m += 1
    return state, x


def _slice_index(m: int, n_slices: int, steps_per_slice: int, presentation: str) -> int:
    if presentation == "block":
        return m // steps_per_slice
    if presentation == "interleaved":
        return m % n_slices
    raise ConfigError(f"presentation must be one of {PRESENTATIONS}")


def encode_digital(frame, n_slices: int = 1) -> np.ndarray:
    """Present a binary frame unchanged as input spikes, repeated over `n_slices` slices."""
    frame = np.asarray(frame)
    if frame.ndim != 3:
        raise StructureError(f"expected an (H, W, 2) frame, got {frame.shape}")
    return np.repeat(frame[..., None].astype(float), n_slices, axis=-1)


def encode_analog(stats: FrameStatistics, height: int, width: int) -> np.ndarray:
    """Soft values ``z = sigmoid((Y - mu/2) / sigma)`` rearranged to ``(H, W, 2, N_f)``.

    Centred at the balanced decision point and scaled by each user's sigma.
    """
    z = expit((stats.Y - stats.mu[:, None, None] / 2) / stats.sigma[:, None, None])
    n_frames = stats.Y.shape[2]
    return np.stack([assemble_frame(list(z[:, :, j]), stats.n_users, height, width)
                     for j in range(n_frames)], axis=-1)


def _as_slices(inputs) -> np.ndarray:
    """Normalize one sample to ``(n_slices, n_in)``."""
    x = np.asarray(inputs, dtype=float)
    if x.ndim == 1:
        return x[None, :]
    if x.ndim == 2:
        return x
    if x.ndim == 3:
        return x.reshape(1, -1)
    if x.ndim == 4:
        return np.moveaxis(x, -1, 0).reshape(x.shape[-1], -1)
    raise StructureError(f"cannot interpret input of shape {x.shape}")


def _as_batch(X) -> np.ndarray:
    """Normalize a batch to ``(B, n_slices, n_in)``; frames may be (B,H,W,2) or (B,H,W,2,S)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 3:
        return X
    if X.ndim == 4:
        return X.reshape(X.shape[0], 1, -1)
    if X.ndim == 5:
        return np.moveaxis(X, -1, 1).reshape(X.shape[0], X.shape[-1], -1)
    if X.ndim == 2:
        return X[:, None, :]
    raise StructureError(f"cannot interpret batch of shape {X.shape}")


def _run(net: SnnNetwork, X: np.ndarray, steps_per_slice: int, presentation: str, record: bool = False):
    """Simulate a batch; returns output counts and, if `record`, per-step traces for BPTT."""
    B, n_slices, n_in = X.shape
    if n_in != net.n_inputs:
        raise StructureError(f"network takes {net.n_inputs} inputs, got {n_in}")
    n_steps = n_slices * steps_per_slice
    state = init_state(net, (B,))
    counts = np.zeros((B, net.n_classes))
    traces = [dict(x=[], U=[], S=[]) for _ in range(net.n_layers)] if record else None
    for m in range(n_steps):
        x = X[:, _slice_index(m, n_slices, steps_per_slice, presentation)]
        for d in range(net.n_layers):
            if record:
                traces[d]["x"].append(x)
            state, x = lif_step(state, net, x, d)
            if record:
                traces[d]["U"].append(state.U[d])
                traces[d]["S"].append(x)
        counts += x
    return counts, n_steps, traces


def forward(net: SnnNetwork, inputs, steps_per_slice: int = 1, presentation: str = "block") -> ClassScores:
    """Rate-decoded scores for one sample.

    `inputs` is a frame ``(H, W, 2)``, a slice stack ``(H, W, 2, S)``, or a
    flat ``(n_in,)`` / ``(S, n_in)`` array. Slice j drives steps
    ``[j*T, (j+1)*T)`` under block presentation, or every S-th step under
    interleaved presentation.
    """
    counts, n_steps, _ = _run(net, _as_slices(inputs)[None], steps_per_slice, presentation)
    return ClassScores(counts[0], n_steps)


def forward_batch(net: SnnNetwork, X, steps_per_slice: int = 1, presentation: str = "block") -> np.ndarray:
    counts, _, _ = _run(net, _as_batch(X), steps_per_slice, presentation)
    return counts


def arctan_surrogate(u, threshold: float = 1.0, slope: float = 2.0):
    """Surrogate spike derivative ``1 / (1 + (pi * slope * (u - threshold))^2)``; peaks at 1 on threshold."""
    return 1.0 / (1.0 + (math.pi * slope * (np.asarray(u) - threshold)) ** 2)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _loss_and_grads(net, X, y, steps_per_slice, presentation, slope, logit_scale):
    counts, n_steps, tr = _run(net, X, steps_per_slice, presentation, record=True)
    B = X.shape[0]
    probs = _softmax(logit_scale * counts / n_steps)
    loss = float(-np.mean(np.log(probs[np.arange(B), y] + 1e-300)))
    g_logits = probs.copy()
    g_logits[np.arange(B), y] -= 1.0
    g_logits /= B
    g_spikes = [g_logits * logit_scale / n_steps] * n_steps

    grads = [np.zeros_like(w) for w in net.weights]
    for d in reversed(range(net.n_layers)):
        g_u_next = np.zeros_like(tr[d]["U"][0])
        g_below = []
        for m in reversed(range(n_steps)):
            # reset term is detached: gradient flows only through the leak
            g_u = g_spikes[m] * arctan_surrogate(tr[d]["U"][m], net.threshold, slope) + net.beta * g_u_next
            grads[d] += g_u.T @ tr[d]["x"][m]
            if d > 0:
                g_below.append(g_u @ net.weights[d])
            g_u_next = g_u
        g_spikes = g_below[::-1]
    accuracy = float(np.mean(np.argmax(counts, axis=1) == y))
    return loss, grads, accuracy


def train_toy(net: SnnNetwork, X, y, epochs: int = 50, lr: float = 1e-2, steps_per_slice: int = 4,
              batch_size: int = 32, presentation: str = "block", slope: float = 2.0,
              logit_scale: float = 10.0, seed=None, history: list | None = None) -> SnnNetwork:
    """Backprop-through-time with an arctangent surrogate and Adam, on a small labelled set.

    Loss is cross-entropy on ``logit_scale * spike_count / n_steps``. The
    input network is left untouched; a trained copy is returned. Per-epoch
    ``(loss, train_accuracy)`` pairs are appended to `history` if given.

    Raises
    ------
    TrainingError
        If an epoch's loss exceeds ten times the initial loss.
    """
    X = _as_batch(X)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] != y.size:
        raise StructureError(f"{X.shape[0]} samples but {y.size} labels")
    if y.size and (y.min() < 0 or y.max() >= net.n_classes):
        raise StructureError(f"labels must lie in [0, {net.n_classes})")
    net = net.copy()
    if epochs <= 0 or lr == 0:
        return net
    rng = np.random.default_rng(seed)
    b1, b2, adam_eps = 0.9, 0.999, 1e-8
    m1 = [np.zeros_like(w) for w in net.weights]
    m2 = [np.zeros_like(w) for w in net.weights]
    t = 0
    log = [] if history is None else history
    initial = None
    for epoch in range(epochs):
        order = rng.permutation(y.size)
        losses, accs, sizes = [], [], []
        for start in range(0, y.size, batch_size):
            idx = order[start:start + batch_size]
            loss, grads, acc = _loss_and_grads(net, X[idx], y[idx], steps_per_slice, presentation,
                                               slope, logit_scale)
            if initial is None:
                initial = loss
            t += 1
            for d, g in enumerate(grads):
                m1[d] = b1 * m1[d] + (1 - b1) * g
                m2[d] = b2 * m2[d] + (1 - b2) * g * g
                mh = m1[d] / (1 - b1**t)
                vh = m2[d] / (1 - b2**t)
                net.weights[d] -= lr * mh / (np.sqrt(vh) + adam_eps)
            losses.append(loss)
            accs.append(acc)
            sizes.append(idx.size)
        epoch_loss = float(np.average(losses, weights=sizes))
        log.append((epoch_loss, float(np.average(accs, weights=sizes))))
        if not np.isfinite(epoch_loss) or epoch_loss > 10 * initial:
            raise TrainingError(f"training diverged at epoch {epoch}: loss {epoch_loss:.4g} "
                                f"vs initial {initial:.4g}", log)
    return net


_MAGIC = b"IRSN"
_VERSION = 1
_HEADER = struct.Struct("<4sHHdd")
_SHAPE = struct.Struct("<II")


def save_weights(net: SnnNetwork) -> bytes:
    """Serialize to ``magic | version | layer count | beta | zeta | shapes | float64 data``, little-endian."""
    parts = [_HEADER.pack(_MAGIC, _VERSION, net.n_layers, net.beta, net.threshold)]
    parts += [_SHAPE.pack(*w.shape) for w in net.weights]
    parts += [np.ascontiguousarray(w, dtype="<f8").tobytes() for w in net.weights]
    return b"".join(parts)


def network_from_blob(blob: bytes) -> SnnNetwork:
    if len(blob) < _HEADER.size:
        raise WeightFormatError("weight blob is truncated or empty")
    magic, version, n_layers, beta, threshold = _HEADER.unpack_from(blob, 0)
    if magic != _MAGIC:
        raise WeightFormatError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise WeightFormatError(f"unsupported weight format version {version}")
    offset = _HEADER.size
    if len(blob) < offset + n_layers * _SHAPE.size:
        raise WeightFormatError("weight blob is truncated")
    shapes = [_SHAPE.unpack_from(blob, offset + i * _SHAPE.size) for i in range(n_layers)]
    offset += n_layers * _SHAPE.size
    expected = offset + 8 * sum(r * c for r, c in shapes)
    if len(blob) != expected:
        raise WeightFormatError(f"weight blob has {len(blob)} bytes, expected {expected}")
    weights = []
    for r, c in shapes:
        weights.append(np.frombuffer(blob, dtype="<f8", count=r * c, offset=offset).reshape(r, c).copy())
        offset += 8 * r * c
    return SnnNetwork(weights, beta=beta, threshold=threshold)


def load_weights(net: SnnNetwork, blob: bytes) -> SnnNetwork:
    """Load a blob into a copy of `net`, checking that the layer structure matches."""
    loaded = network_from_blob(blob)
    if loaded.n_layers != net.n_layers:
        raise WeightFormatError(f"blob has {loaded.n_layers} layers, network has {net.n_layers}")
    for d, (a, b) in enumerate(zip(loaded.weights, net.weights)):
        if a.shape != b.shape:
            raise WeightFormatError(f"layer {d}: blob shape {a.shape} vs network shape {b.shape}")
    return loaded


class LIFClassifier(ClassifierMixin, BaseEstimator):
    """Two-layer LIF classifier (flatten -> LIF(hidden) -> LIF(n_classes)) with rate decoding.

    `X` holds frames ``(n, H, W, 2)``, slice stacks ``(n, H, W, 2, S)``, or
    pre-flattened ``(n, S, n_in)`` arrays.
    """

    def __init__(self, hidden=64, beta=0.9, threshold=1.0, steps_per_slice=4, epochs=50, lr=1e-2,
                 batch_size=32, slope=2.0, logit_scale=10.0, presentation="block", init_gain=2.0, seed=0):
        self.hidden = hidden
        self.beta = beta
        self.threshold = threshold
        self.steps_per_slice = steps_per_slice
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.slope = slope
        self.logit_scale = logit_scale
        self.presentation = presentation
        self.init_gain = init_gain
        self.seed = seed

    def fit(self, X, y):
        Xb = _as_batch(X)
        self.classes_ = unique_labels(y)
        y_idx = np.searchsorted(self.classes_, y)
        init = init_network([Xb.shape[2], self.hidden, len(self.classes_)], self.beta, self.threshold,
                            gain=self.init_gain, seed=self.seed)
        return self._train(init, Xb, y_idx)

    def fine_tune(self, X, y, epochs=None):
        """Continue training from the current weights (e.g. on channel-corrupted inputs)."""
        check_is_fitted(self, "network_")
        y_idx = np.searchsorted(self.classes_, y)
        return self._train(self.network_, _as_batch(X), y_idx, epochs)

    def _train(self, net, Xb, y_idx, epochs=None):
        history = []
        self.network_ = train_toy(net, Xb, y_idx, epochs=self.epochs if epochs is None else epochs,
                                  lr=self.lr, steps_per_slice=self.steps_per_slice,
                                  batch_size=self.batch_size, presentation=self.presentation,
                                  slope=self.slope, logit_scale=self.logit_scale, seed=self.seed,
                                  history=history)
        self.loss_history_ = [h[0] for h in history]
        self.train_accuracy_history_ = [h[1] for h in history]
        return self

    @classmethod
    def from_network(cls, net: SnnNetwork, classes=None, **params):
        clf = cls(beta=net.beta, threshold=net.threshold, hidden=net.weights[0].shape[0], **params)
        clf.network_ = net
        clf.classes_ = np.arange(net.n_classes) if classes is None else np.asarray(classes)
        return clf

    def predict_counts(self, X):
        check_is_fitted(self, "network_")
        return forward_batch(self.network_, X, self.steps_per_slice, self.presentation)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_counts(X), axis=1)]


class LIFSparsityEstimator:
    """Pluggable learned sparsity estimator backed by a loadable LIF network.

    Each frame slice ``Y[:, j]`` of one user's statistics, scaled by sigma,
    drives the network for one step; the estimate is the sigmoid of the
    time-averaged membrane potential of the single output neuron. Weights
    come from :func:`network_from_blob`; training them is out of scope here.
    """

    method = "learned"

    def __init__(self, network: SnnNetwork, eps: float = EPS_PRIOR):
        if network.n_classes != 1:
            raise StructureError("sparsity network must end in a single neuron")
        self.network = network
        self.eps = eps

    def __call__(self, Y, mu: float, sigma: float) -> SparsityEstimate:
        Y = np.asarray(Y, dtype=float)
        if Y.ndim != 2 or Y.shape[0] != self.network.n_inputs:
            raise StructureError(f"expected statistics of shape ({self.network.n_inputs}, N_f), got {Y.shape}")
        state = init_state(self.network)
        total = 0.0
        for j in range(Y.shape[1]):
            state, _ = network_step(state, self.network, Y[:, j] / sigma)
            total += float(state.U[-1][0])
        p = float(np.clip(expit(total / Y.shape[1]), self.eps, 1 - self.eps))
        return SparsityEstimate(p_hat=p, method=self.method, n_samples=Y.size)
