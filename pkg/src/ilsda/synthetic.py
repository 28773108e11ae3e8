"""Rotated-Gaussians domain adaptation fixture.

The source domain is a mixture of anisotropic Gaussians, one per class, with
class means spread along the first coordinate axis. The target domain draws
fresh samples from the same mixture, rotates them by ``angle`` degrees in the
plane of the first two coordinates and adds a mean shift. When the two
domains have different dimensions, the lower-dimensional base samples of the
larger domain are embedded through a random orthonormal lift (columns signed
so their largest-magnitude entry is positive) and a little isotropic noise
fills the extra directions.
"""

from __future__ import annotations

import numpy as np

from .manifolds import uf
from .pipeline import FeatureSet


def _base_mixture(rng, n_per_class, n_classes, dim, separation, spread):
    scales = np.linspace(1.0, 0.3, dim) * spread
    centers = np.zeros((n_classes, dim))
    centers[:, 0] = separation * (np.arange(n_classes) - (n_classes - 1) / 2.0)
    X = np.vstack([c + rng.normal(size=(n_per_class, dim)) * scales for c in centers])
    y = np.repeat(np.arange(n_classes), n_per_class)
    return X, y


def plane_rotation(dim, angle_deg):
    R = np.eye(dim)
    a = np.deg2rad(angle_deg)
    R[:2, :2] = [[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]]
    return R


def _lift(rng, X, dim, noise):
    base = X.shape[1]
    if dim == base:
        return X
    Q = uf(rng.normal(size=(dim, base)))
    # reflections are invisible to second-order matching; fix column signs
    lead = np.argmax(np.abs(Q), axis=0)
    Q *= np.sign(Q[lead, np.arange(base)])
    return X @ Q.T + noise * rng.normal(size=(X.shape[0], dim))


def rotated_gaussians(
    n_per_class=100,
    n_classes=2,
    source_dim=10,
    target_dim=None,
    angle=30.0,
    shift=3.0,
    separation=3.0,
    spread=1.0,
    lift_noise=0.05,
    seed=7,
):
    """Return ``(source, target)`` labeled FeatureSets (uncentered).

    Target labels are present for scoring; strip them before fitting in the
    unsupervised setting.
    """
    target_dim = source_dim if target_dim is None else target_dim
    base = min(source_dim, target_dim)
    if base < 2:
        raise ValueError("domains need at least two dimensions")
    rng = np.random.default_rng(seed)
    Xs, ys = _base_mixture(rng, n_per_class, n_classes, base, separation, spread)
    Xt, yt = _base_mixture(rng, n_per_class, n_classes, base, separation, spread)
    Xt = Xt @ plane_rotation(base, angle).T
    Xt[:, 0] += shift
    Xs = _lift(rng, Xs, source_dim, lift_noise)
    Xt = _lift(rng, Xt, target_dim, lift_noise)
    return FeatureSet(Xs, ys, "source"), FeatureSet(Xt, yt, "target")
