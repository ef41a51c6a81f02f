"""Event frames: accumulation, tiling across users, and bit-stream conversion.

A frame is a ``uint8`` array of shape ``(H, W, 2)``. Channel 0 flags a
brightness decrease (polarity -1), channel 1 an increase (polarity +1), so a
pixel is one of ``00``, ``01`` or ``10`` and never ``11``.

Scan orders are fixed for interoperability:

* tiles are numbered row-major over the ``sqrt(K) x sqrt(K)`` grid;
* a tile is vectorized row-major over pixels with the polarity channel
  fastest, i.e. ``stream[2 * (r * W_tile + c) + ch] = tile[r, c, ch]``.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ConfigError, EventError, StructureError

__all__ = [
    "EventRecord",
    "accumulate_events",
    "read_event_stream",
    "write_event_stream",
    "tile_frame",
    "vectorize_tile",
    "devectorize_tile",
    "assemble_frame",
    "frame_to_streams",
    "streams_to_frame",
    "synth_sparse_frame",
    "export_frame_bytes",
    "grid_side",
    "FrameTiler",
]


class EventRecord(NamedTuple):
    x: int
    y: int
    t: float
    rho: int


def accumulate_events(
    stream: Iterable[EventRecord | Sequence],
    delta_t: float,
    height: int,
    width: int,
    n_windows: int | None = None,
    t0: float = 0.0,
) -> list[np.ndarray]:
    """Accumulate an event stream into frames over windows of length `delta_t`.

    Window ``i`` covers ``[t0 + i*delta_t, t0 + (i+1)*delta_t)``. When two
    events hit the same pixel inside one window, the later one wins.
    If `n_windows` is None, enough windows are produced to cover the last
    event (at least one).

    Raises
    ------
    EventError
        On an out-of-range coordinate, a polarity outside {-1, +1}, an event
        before `t0`, or a timestamp that goes backwards.
    """
    if delta_t <= 0:
        raise ConfigError(f"delta_t must be positive, got {delta_t}")
    records = [EventRecord(*r) for r in stream]

    last_t = t0
    for i, (x, y, t, rho) in enumerate(records):
        if not (0 <= x < width and 0 <= y < height):
            raise EventError(f"coordinate ({x}, {y}) outside {width}x{height}", i)
        if rho not in (-1, 1):
            raise EventError(f"polarity must be -1 or +1, got {rho}", i)
        if t < last_t:
            if i == 0:
                raise EventError(f"timestamp {t} precedes window origin {t0}", i)
            raise EventError(f"timestamp {t} goes backwards", i)
        last_t = t

    if n_windows is None:
        n_windows = 1 if not records else int((last_t - t0) // delta_t) + 1
    frames = [np.zeros((height, width, 2), dtype=np.uint8) for _ in range(n_windows)]
    for x, y, t, rho in records:
        w = int((t - t0) // delta_t)
        if w >= n_windows:
            break
        frames[w][y, x] = (0, 1) if rho == 1 else (1, 0)
    return frames


def read_event_stream(path: str | Path) -> list[EventRecord]:
    """Read ``x y t rho`` lines; blank lines and ``#`` comments are skipped."""
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise EventError(f"line {lineno}: expected 4 fields, got {len(parts)}", len(records))
            x, y, t, rho = parts
            records.append(EventRecord(int(x), int(y), float(t), int(rho)))
    return records


def write_event_stream(path: str | Path, records: Iterable[EventRecord | Sequence]) -> None:
    with open(path, "w") as fh:
        fh.write("# x y t rho\n")
        for x, y, t, rho in records:
            fh.write(f"{int(x)} {int(y)} {t:g} {int(rho)}\n")


def grid_side(n_users: int) -> int:
    """Return ``sqrt(K)``, raising ConfigError when K is not a perfect square."""
    if n_users < 1:
        raise ConfigError(f"K must be >= 1, got {n_users}")
    side = math.isqrt(n_users)
    if side * side != n_users:
        raise ConfigError(f"K must be a perfect square, got {n_users}")
    return side


def _check_frame(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 2:
        raise StructureError(f"frame must have shape (H, W, 2), got {frame.shape}")
    return frame


def tile_frame(frame: np.ndarray, n_users: int) -> list[np.ndarray]:
    """Split a frame into `n_users` disjoint tiles in row-major grid order."""
    frame = _check_frame(frame)
    side = grid_side(n_users)
    h, w, _ = frame.shape
    if h % side or w % side:
        raise ConfigError(f"frame {h}x{w} not divisible into a {side}x{side} grid")
    th, tw = h // side, w // side
    return [
        frame[(k // side) * th:(k // side + 1) * th, (k % side) * tw:(k % side + 1) * tw].copy()
        for k in range(n_users)
    ]


def vectorize_tile(tile: np.ndarray) -> np.ndarray:
    return _check_frame(tile).reshape(-1).copy()


def devectorize_tile(stream: np.ndarray, tile_height: int, tile_width: int) -> np.ndarray:
    stream = np.asarray(stream)
    expected = 2 * tile_height * tile_width
    if stream.ndim != 1 or stream.size != expected:
        raise StructureError(f"bit stream must have length {expected}, got shape {stream.shape}")
    return stream.reshape(tile_height, tile_width, 2).copy()


def assemble_frame(streams: Sequence[np.ndarray], n_users: int, height: int, width: int) -> np.ndarray:
    """Inverse of tiling + vectorization: K bit streams back to an ``(H, W, 2)`` frame.

    Works for any dtype, so it also reassembles real-valued statistics.
    """
    side = grid_side(n_users)
    if len(streams) != n_users:
        raise StructureError(f"expected {n_users} streams, got {len(streams)}")
    if height % side or width % side:
        raise ConfigError(f"frame {height}x{width} not divisible into a {side}x{side} grid")
    th, tw = height // side, width // side
    first = np.asarray(streams[0])
    frame = np.zeros((height, width, 2), dtype=first.dtype)
    for k, s in enumerate(streams):
        r, c = k // side, k % side
        frame[r * th:(r + 1) * th, c * tw:(c + 1) * tw] = devectorize_tile(s, th, tw)
    return frame


def frame_to_streams(frame: np.ndarray, n_users: int) -> np.ndarray:
    """Tile and vectorize in one go; returns shape ``(K, N_b)``."""
    return np.stack([vectorize_tile(t) for t in tile_frame(frame, n_users)])


def streams_to_frame(streams: np.ndarray, n_users: int, height: int, width: int) -> np.ndarray:
    return assemble_frame(list(streams), n_users, height, width)


def synth_sparse_frame(p: float, height: int, width: int, seed=None) -> np.ndarray:
    """Random frame whose bit-level activation rate is `p`.

    An active pixel sets exactly one of its two bits, so pixels are activated
    with probability ``min(2p, 1)``; bit rates above 0.5 saturate at 0.5.
    Active pixels get a uniformly random polarity.
    """
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"activation rate must lie in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    active = rng.random((height, width)) < min(2.0 * p, 1.0)
    channel = rng.integers(0, 2, size=(height, width))
    frame = np.zeros((height, width, 2), dtype=np.uint8)
    frame[..., 0] = active & (channel == 0)
    frame[..., 1] = active & (channel == 1)
    return frame


def export_frame_bytes(frame: np.ndarray) -> bytes:
    """Flat row-major ``uint8`` dump of a frame, for debugging."""
    return np.ascontiguousarray(_check_frame(frame), dtype=np.uint8).tobytes()


class FrameTiler(TransformerMixin, BaseEstimator):
    """Map a batch of frames ``(n, H, W, 2)`` to per-user bit streams ``(n, K, N_b)``.

    Stateless apart from remembering the frame size for `inverse_transform`.
    """

    def __init__(self, n_users=16):
        self.n_users = n_users

    def fit(self, X, y=None):
        X = np.asarray(X)
        if X.ndim != 4 or X.shape[-1] != 2:
            raise StructureError(f"expected frames of shape (n, H, W, 2), got {X.shape}")
        side = grid_side(self.n_users)
        if X.shape[1] % side or X.shape[2] % side:
            raise ConfigError(f"frame {X.shape[1]}x{X.shape[2]} not divisible by {side}")
        self.frame_shape_ = X.shape[1:3]
        return self

    def transform(self, X):
        X = np.asarray(X)
        if X.ndim != 4:
            raise StructureError(f"expected frames of shape (n, H, W, 2), got {X.shape}")
        return np.stack([frame_to_streams(f, self.n_users) for f in X])

    def inverse_transform(self, S):
        if not hasattr(self, "frame_shape_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("FrameTiler must be fitted before inverse_transform")
        h, w = self.frame_shape_
        return np.stack([streams_to_frame(s, self.n_users, h, w) for s in np.asarray(S)])
