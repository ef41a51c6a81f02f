"""Bundled toy event-frame dataset for desk-scale end-to-end runs.

Each class owns a disjoint set of prototype pixels with fixed polarities.
A sample keeps every prototype pixel with probability `keep` and adds
background events at rate `background`, so classes are linearly separable
(the count of active pixels on each prototype is a discriminant).

File format (``toy_frames.npz``): ``X_train``, ``X_test`` are ``uint8``
arrays of shape ``(n, H, W, 2)``; ``y_train``, ``y_test`` are ``int64``
labels in ``[0, C)``.
"""
from __future__ import annotations

from importlib import resources

import numpy as np

__all__ = ["make_toy_dataset", "load_toy_dataset", "TOY_PARAMS"]

TOY_PARAMS = dict(n_classes=4, height=16, width=16, proto_pixels=24, keep=0.85, background=0.02)


def make_toy_dataset(n_per_class: int, n_classes: int = 4, height: int = 16, width: int = 16,
                     proto_pixels: int = 24, keep: float = 0.85, background: float = 0.02,
                     seed: int = 0, proto_seed: int = 1234):
    """Return ``(X, y)`` with ``X`` of shape ``(n_per_class * n_classes, H, W, 2)``.

    Prototypes depend only on `proto_seed`, so train and test splits drawn
    with different `seed` values share them.
    """
    prng = np.random.default_rng(proto_seed)
    pixels = prng.permutation(height * width)[: n_classes * proto_pixels].reshape(n_classes, proto_pixels)
    polarity = prng.integers(0, 2, size=(n_classes, proto_pixels))

    rng = np.random.default_rng(seed)
    n = n_per_class * n_classes
    y = np.repeat(np.arange(n_classes), n_per_class)
    X = np.zeros((n, height * width, 2), dtype=np.uint8)
    for i, c in enumerate(y):
        bg = np.flatnonzero(rng.random(height * width) < background)
        X[i, bg, rng.integers(0, 2, size=bg.size)] = 1
        on = rng.random(proto_pixels) < keep
        X[i, pixels[c, on]] = 0
        X[i, pixels[c, on], polarity[c, on]] = 1
    order = rng.permutation(n)
    return X[order].reshape(n, height, width, 2), y[order]


def load_toy_dataset():
    """Load the bundled split: ``(X_train, y_train, X_test, y_test)``."""
    with resources.files(__package__).joinpath("data/toy_frames.npz").open("rb") as fh:
        data = np.load(fh)
        return data["X_train"], data["y_train"], data["X_test"], data["y_test"]


def _build_bundle(path):
    X_train, y_train = make_toy_dataset(100, seed=0, **TOY_PARAMS)
    X_test, y_test = make_toy_dataset(50, seed=1, **TOY_PARAMS)
    np.savez_compressed(path, X_train=X_train, y_train=y_train, X_test=X_test, y_test=y_test)


if __name__ == "__main__":
    import sys
    _build_bundle(sys.argv[1] if len(sys.argv) > 1 else "toy_frames.npz")
