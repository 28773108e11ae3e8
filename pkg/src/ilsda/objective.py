"""The ILS cost and its Euclidean gradients.

The cost of a parameter point ``(Ws, Wt, M, v)`` is::

    L = (1/Np) sum_k l_beta(M, y_k, z1_k - z2_k, 1 + y_k exp(v_k))
        + (1/p) stein(M, I)
        + (1/Np) ||exp(v)||_2
        + lam * (1/p) stein(Ws^T Cs Ws, Wt^T Ct Wt)

where ``z`` are samples projected by the projection of their domain and
``l_beta(M, y, x, u) = softplus(beta * y * (x^T M x - u)) / beta``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .manifolds import ConditioningError, ManifoldError, TangentBundle, spd_inv, spd_logdet, sym

SOURCE = 0
TARGET = 1

COVARIANCE_RIDGE = 1e-6
SOFTPLUS_SWITCH = 30.0


# ---------------------------------------------------------------------------
# Scalar building blocks


def softplus(a):
    """``log(1 + exp(a))``, switching to ``a + log1p(exp(-a))`` above 30."""
    a = np.asarray(a, dtype=float)
    big = a > SOFTPLUS_SWITCH
    out = np.empty_like(a)
    out[~big] = np.log1p(np.exp(a[~big]))
    out[big] = a[big] + np.log1p(np.exp(-a[big]))
    return out


def sigmoid(a):
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def smooth_hinge(z, beta):
    """``softplus(beta * z) / beta``; tends to ``max(0, z)`` as beta grows."""
    return softplus(beta * np.asarray(z, dtype=float)) / beta


def generalized_logistic(M, y, x, u, beta):
    """Large-margin logistic loss of one pair difference ``x``.

    Parameters
    ----------
    M : ndarray, shape (p, p)
        Latent Mahalanobis metric.
    y : {-1, +1}
        Pair label, +1 for a similar pair.
    x : ndarray, shape (p,)
        Difference of the two latent samples.
    u : float
        Margin.
    beta : float
        Sharpness, must be positive.
    """
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    x = np.asarray(x, dtype=float)
    d = float(x @ M @ x)
    return float(smooth_hinge(y * (d - u), beta))


def stein_divergence(P, Q):
    """Stein (Jensen-Bregman log-det) divergence between SPD matrices.

    ``log det((P + Q) / 2) - (log det P + log det Q) / 2``, clipped at zero to
    absorb round-off.
    """
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if P.shape != Q.shape:
        raise ValueError(f"shape mismatch {P.shape} vs {Q.shape}")
    val = spd_logdet(0.5 * (P + Q)) - 0.5 * (spd_logdet(P) + spd_logdet(Q))
    return max(val, 0.0)


def metric_regularizer(M):
    p = M.shape[0]
    return stein_divergence(M, np.eye(p)) / p


# ---------------------------------------------------------------------------
# Data containers


@dataclass(frozen=True)
class PairSet:
    """Labeled pairs of (domain, row) references.

    ``dom1``/``dom2`` hold :data:`SOURCE` or :data:`TARGET`, ``idx1``/``idx2``
    the row within that domain's sample matrix, and ``y`` is +1 for a similar
    pair and -1 for a dissimilar one.
    """

    dom1: np.ndarray
    idx1: np.ndarray
    dom2: np.ndarray
    idx2: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        n = len(self.y)
        for name in ("dom1", "idx1", "dom2", "idx2"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"PairSet field {name} has inconsistent length")
        if n and not np.all(np.isin(self.y, (-1, 1))):
            raise ValueError("pair labels must be -1 or +1")

    @classmethod
    def from_tuples(cls, pairs):
        """Build from ``[((dom, idx), (dom, idx), y), ...]``."""
        if not pairs:
            empty = np.zeros(0, dtype=np.int64)
            return cls(empty, empty, empty, empty, empty)
        arr = np.array([(a[0], a[1], b[0], b[1], c) for a, b, c in pairs], dtype=np.int64)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4])

    @property
    def n_pairs(self):
        return len(self.y)

    @property
    def n_similar(self):
        return int(np.sum(self.y == 1))

    @property
    def n_dissimilar(self):
        return int(np.sum(self.y == -1))

    def swapped(self):
        return PairSet(self.dom2, self.idx2, self.dom1, self.idx1, self.y)


@dataclass(frozen=True)
class DomainStats:
    mean_s: np.ndarray
    mean_t: np.ndarray
    Sigma_s: np.ndarray
    Sigma_t: np.ndarray


def covariance(X, ridge=COVARIANCE_RIDGE):
    """Unbiased sample covariance plus ``ridge * trace / dim`` on the diagonal."""
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if n < 2:
        raise ValueError("covariance needs at least two samples")
    Xc = X - X.mean(axis=0)
    C = sym(Xc.T @ Xc / (n - 1))
    return C + ridge * np.trace(C) / d * np.eye(d)


def domain_stats(Xs, Xt, ridge=COVARIANCE_RIDGE):
    return DomainStats(
        np.asarray(Xs, dtype=float).mean(axis=0),
        np.asarray(Xt, dtype=float).mean(axis=0),
        covariance(Xs, ridge),
        covariance(Xt, ridge),
    )


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    discriminative: float
    statistical: float
    regularizer: float
    slack_penalty: float

    def as_dict(self):
        return {
            "total": self.total,
            "discriminative": self.discriminative,
            "statistical": self.statistical,
            "regularizer": self.regularizer,
            "slack_penalty": self.slack_penalty,
        }


# ---------------------------------------------------------------------------
# Losses


def _check_pairs(Xs, Xt, pairs):
    sizes = (Xs.shape[0], Xt.shape[0])
    for dom, idx in ((pairs.dom1, pairs.idx1), (pairs.dom2, pairs.idx2)):
        if np.any((dom != SOURCE) & (dom != TARGET)):
            raise ValueError("pair domain tags must be SOURCE or TARGET")
        for tag in (SOURCE, TARGET):
            sel = idx[dom == tag]
            if sel.size and (sel.min() < 0 or sel.max() >= sizes[tag]):
                raise IndexError(f"pair index out of range for domain {tag}")


def incidence(pairs, n_source, n_target):
    """Signed pair/sample incidence matrix of shape ``(Np, n_source + n_target)``.

    Row ``k`` holds +1 at the first sample of pair ``k`` and -1 at the second,
    with target rows offset by ``n_source``; ``D @ vstack([Zs, Zt])`` yields
    the pair differences.
    """
    n = pairs.n_pairs
    cols = np.concatenate(
        [pairs.idx1 + pairs.dom1 * n_source, pairs.idx2 + pairs.dom2 * n_source]
    )
    vals = np.concatenate([np.ones(n), -np.ones(n)])
    rows = np.concatenate([np.arange(n), np.arange(n)])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n_source + n_target))


def pair_differences(point, Xs, Xt, pairs, D=None):
    """Latent differences ``z1_k - z2_k``, shape ``(Np, p)``."""
    if D is None:
        D = incidence(pairs, Xs.shape[0], Xt.shape[0])
    return D @ np.vstack([Xs @ point.Ws, Xt @ point.Wt])


def _pair_arguments(point, Xs, Xt, pairs, beta, D=None):
    """Latent differences and logistic arguments ``beta * y * (dist - margin)``."""
    delta = pair_differences(point, Xs, Xt, pairs, D)
    dist = np.sum((delta @ point.M) * delta, axis=1)
    y = pairs.y.astype(float)
    margin = 1.0 + y * np.exp(point.v)
    return delta, beta * y * (dist - margin)


def slack_penalty(v):
    n = len(v)
    if n == 0 or np.max(v) == -np.inf:
        return 0.0
    vmax = np.max(v)
    return float(np.exp(vmax) * np.sqrt(np.sum(np.exp(2.0 * (v - vmax)))) / n)


def discriminative_loss(point, Xs, Xt, pairs, beta):
    """Soft-margin pair loss plus metric regularizer plus slack penalty."""
    _check_pairs(Xs, Xt, pairs)
    return sum(_discriminative_parts(point, Xs, Xt, pairs, beta))


def _discriminative_parts(point, Xs, Xt, pairs, beta, D=None):
    n = pairs.n_pairs
    if n:
        _, a = _pair_arguments(point, Xs, Xt, pairs, beta, D)
        pair_term = float(np.sum(softplus(a))) / (beta * n)
    else:
        pair_term = 0.0
    return pair_term, metric_regularizer(point.M), slack_penalty(point.v)


def projected_covariances(Ws, Wt, stats):
    A = sym(Ws.T @ stats.Sigma_s @ Ws)
    B = sym(Wt.T @ stats.Sigma_t @ Wt)
    return A, B


def statistical_loss(Ws, Wt, stats):
    """Stein divergence between the latent covariances of the two domains, over p."""
    A, B = projected_covariances(Ws, Wt, stats)
    return stein_divergence(A, B) / A.shape[0]


def total_loss(point, Xs, Xt, pairs, stats, beta, lam=1.0, D=None):
    """Full cost split into its parts; ``D`` is an optional cached :func:`incidence`."""
    if D is None:
        _check_pairs(Xs, Xt, pairs)
    pair_term, reg, slack = _discriminative_parts(point, Xs, Xt, pairs, beta, D)
    stat = statistical_loss(point.Ws, point.Wt, stats)
    total = pair_term + reg + slack + lam * stat
    return LossBreakdown(
        total=total,
        discriminative=pair_term,
        statistical=stat,
        regularizer=reg,
        slack_penalty=slack,
    )


# ---------------------------------------------------------------------------
# Gradients


def euclidean_gradients(point, Xs, Xt, pairs, stats, beta, lam=1.0, D=None):
    """Euclidean gradient of :func:`total_loss` w.r.t. ``(Ws, Wt, M, v)``.

    Returns a :class:`TangentBundle` holding ambient (not yet Riemannian)
    gradients. Pair terms carry the ``1/Np`` normalization of the cost.
    """
    if D is None:
        _check_pairs(Xs, Xt, pairs)
        D = incidence(pairs, Xs.shape[0], Xt.shape[0])
    p = point.p
    n = pairs.n_pairs
    g_s = np.zeros_like(point.Ws)
    g_t = np.zeros_like(point.Wt)
    g_M = np.zeros((p, p))
    g_v = np.zeros(n)

    if n:
        delta, a = _pair_arguments(point, Xs, Xt, pairs, beta, D)
        sig = sigmoid(a)
        y = pairs.y.astype(float)
        # d l_k / d dist_k = y_k * sigmoid(a_k)
        coef = y * sig / n
        g_M = sym((delta * coef[:, None]).T @ delta)

        # d dist_k / d z1_k = 2 M delta_k, d dist_k / d z2_k = -2 M delta_k
        G = 2.0 * (delta @ point.M) * coef[:, None]
        acc = D.T @ G
        ns = Xs.shape[0]
        g_s += Xs.T @ acc[:ns]
        g_t += Xt.T @ acc[ns:]

        # margin 1 + y exp(v): d a / d v = -beta exp(v) since y^2 = 1
        eps = np.exp(point.v)
        g_v = -eps * sig / n
        vmax = np.max(point.v)
        if vmax > -np.inf:
            w = np.exp(2.0 * (point.v - vmax))
            g_v += np.exp(point.v - vmax) * eps / (np.sqrt(np.sum(w)) * n)

    g_M = g_M + (spd_inv(point.M + np.eye(p)) - 0.5 * spd_inv(point.M)) / p

    if lam != 0.0:
        A, B = projected_covariances(point.Ws, point.Wt, stats)
        try:
            inv_sum = spd_inv(A + B)
            g_s += lam / p * stats.Sigma_s @ point.Ws @ (2.0 * inv_sum - spd_inv(A))
            g_t += lam / p * stats.Sigma_t @ point.Wt @ (2.0 * inv_sum - spd_inv(B))
        except ConditioningError as exc:
            raise ConditioningError(f"projected covariance is singular: {exc}") from exc

    return TangentBundle(g_s, g_t, g_M, g_v)


@dataclass
class ILSProblem:
    """Bundles centered data, pairs and hyper-parameters for the optimizers."""

    Xs: np.ndarray
    Xt: np.ndarray
    pairs: PairSet
    stats: DomainStats
    beta: float
    lam: float = 1.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        _check_pairs(self.Xs, self.Xt, self.pairs)
        self._D = incidence(self.pairs, self.Xs.shape[0], self.Xt.shape[0])

    def loss(self, point):
        return total_loss(
            point, self.Xs, self.Xt, self.pairs, self.stats, self.beta, self.lam, self._D
        )

    def egrad(self, point):
        return euclidean_gradients(
            point, self.Xs, self.Xt, self.pairs, self.stats, self.beta, self.lam, self._D
        )


__all__ = [
    "SOURCE",
    "TARGET",
    "ConditioningError",
    "DomainStats",
    "ILSProblem",
    "LossBreakdown",
    "ManifoldError",
    "PairSet",
    "covariance",
    "discriminative_loss",
    "domain_stats",
    "euclidean_gradients",
    "generalized_logistic",
    "incidence",
    "metric_regularizer",
    "pair_differences",
    "slack_penalty",
    "smooth_hinge",
    "softplus",
    "statistical_loss",
    "stein_divergence",
    "total_loss",
]
