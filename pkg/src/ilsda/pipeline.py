"""End-to-end fit and predict for invariant latent space adaptation.

``fit`` runs: centering -> PCA initialization of both projections -> balanced
pair construction -> metric initialization -> beta heuristic -> Riemannian
optimization. ``embed`` maps samples to the latent space through
``W M^{1/2}`` and ``knn_classify`` applies a 1-nearest-neighbor rule there.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .manifolds import ConditioningError, ProductPoint, spd_sqrt, sym, sym_eigh
from .objective import SOURCE, TARGET, ILSProblem, PairSet, domain_stats, pair_differences
from .optim import OptimizerConfig, optimize

UNLABELED = -1
DOMAINS = ("source", "target")
PAIR_MODES = ("unsupervised", "semi")


class PairConstructionError(ValueError):
    """The labeled pool cannot produce both similar and dissimilar pairs."""


class RankError(ValueError):
    """Requested latent dimension exceeds the rank of the data."""


class StageError(RuntimeError):
    """Failure inside :func:`fit`, tagged with the stage that raised it."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.message = message


@dataclass(frozen=True)
class FeatureSet:
    """Samples of one domain.

    ``labels`` uses ``-1`` for unlabeled rows and is ``None`` when no row is
    labeled. ``mean`` is set by :meth:`centered`.
    """

    X: np.ndarray
    labels: np.ndarray | None = None
    domain: str = "source"
    mean: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {X.shape}")
        object.__setattr__(self, "X", X)
        if self.domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}, got {self.domain!r}")
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (X.shape[0],):
                raise ValueError("labels must have one entry per row")
            object.__setattr__(self, "labels", labels)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def labeled_mask(self):
        if self.labels is None:
            return np.zeros(self.n, dtype=bool)
        return self.labels != UNLABELED

    def centered(self):
        mean = self.X.mean(axis=0)
        return replace(self, X=self.X - mean, mean=mean)

    def with_labels(self, labels):
        return replace(self, labels=labels)


@dataclass(frozen=True)
class TrainConfig:
    p: int = 20
    lam: float = 1.0
    beta: float | str = "auto"
    mode: str = "unsupervised"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    max_similar_pairs: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.mode not in PAIR_MODES:
            raise ValueError(f"mode must be one of {PAIR_MODES}")
        if self.p < 1:
            raise ValueError("latent dimension p must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.beta != "auto" and not float(self.beta) > 0:
            raise ValueError("beta must be 'auto' or a positive number")

    def as_dict(self):
        out = asdict(self)
        out["optimizer"] = asdict(self.optimizer)
        return out


@dataclass(frozen=True)
class FittedModel:
    params: ProductPoint
    M_sqrt: np.ndarray
    source_mean: np.ndarray
    target_mean: np.ndarray
    beta: float
    config: TrainConfig | None = None

    @property
    def p(self):
        return self.params.p

    @classmethod
    def from_params(cls, params, source_mean, target_mean, beta, config=None):
        return cls(params, spd_sqrt(params.M), source_mean, target_mean, beta, config)


# ---------------------------------------------------------------------------
# Pairs


def _labeled_pool(source, target, mode):
    """(domain tag, row, label) arrays of the samples eligible for pairing."""
    doms, rows, labs = [], [], []
    sets = [(SOURCE, source)] + ([(TARGET, target)] if mode == "semi" else [])
    for tag, fs in sets:
        idx = np.flatnonzero(fs.labeled_mask)
        doms.append(np.full(idx.size, tag))
        rows.append(idx)
        labs.append(fs.labels[idx] if idx.size else np.zeros(0, dtype=np.int64))
    return np.concatenate(doms), np.concatenate(rows), np.concatenate(labs)


def make_pairs(source, target, mode="unsupervised", seed=0, max_similar_pairs=10_000):
    """Balanced similar/dissimilar pairs over the labeled pool.

    Similar pairs are all within-class pairs (uniformly subsampled down to
    ``max_similar_pairs``); the same number of dissimilar pairs is drawn
    uniformly without replacement from all cross-class pairs. When fewer
    cross-class pairs exist, the similar set is subsampled to match.

    In ``"unsupervised"`` mode the pool is the labeled source rows; in
    ``"semi"`` mode the labeled target rows join it.

    Returns
    -------
    PairSet
        Similar pairs first, then dissimilar ones.
    """
    if mode not in PAIR_MODES:
        raise ValueError(f"mode must be one of {PAIR_MODES}")
    if source.labels is None or not np.all(source.labeled_mask):
        raise PairConstructionError("source domain must be fully labeled")
    if mode == "semi" and not np.any(target.labeled_mask):
        raise PairConstructionError("semi-supervised mode needs labeled target rows")
    rng = np.random.default_rng(seed)
    dom, row, lab = _labeled_pool(source, target, mode)

    i, j = np.triu_indices(lab.size, k=1)
    same = lab[i] == lab[j]
    sim_i, sim_j = i[same], j[same]
    dis_i, dis_j = i[~same], j[~same]
    if sim_i.size == 0:
        raise PairConstructionError("no class has two labeled samples; no similar pairs")
    if dis_i.size == 0:
        raise PairConstructionError("only one class is labeled; no dissimilar pairs")

    n = min(sim_i.size, max_similar_pairs, dis_i.size)
    if n < sim_i.size:
        keep = np.sort(rng.choice(sim_i.size, size=n, replace=False))
        sim_i, sim_j = sim_i[keep], sim_j[keep]
    pick = np.sort(rng.choice(dis_i.size, size=n, replace=False))
    dis_i, dis_j = dis_i[pick], dis_j[pick]

    a = np.concatenate([sim_i, dis_i])
    b = np.concatenate([sim_j, dis_j])
    y = np.concatenate([np.ones(n, dtype=np.int64), -np.ones(n, dtype=np.int64)])
    return PairSet(dom[a], row[a], dom[b], row[b], y)


# ---------------------------------------------------------------------------
# Initialization


def pca_init(X, p):
    """Top-``p`` principal directions of ``X`` as an orthonormal ``(d, p)`` matrix.

    Columns are ordered by decreasing variance and signed so that each
    column's largest-magnitude coordinate is positive.
    """
    X = np.asarray(X.X if isinstance(X, FeatureSet) else X, dtype=float)
    Xc = X - X.mean(axis=0)
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    tol = s[0] * max(Xc.shape) * np.finfo(float).eps if s.size else 0.0
    rank = int(np.sum(s > tol))
    if p > rank:
        raise RankError(f"latent dimension p={p} exceeds the rank {rank} of the centered data")
    W = Vt[:p].T.copy()
    lead = np.argmax(np.abs(W), axis=0)
    W *= np.sign(W[lead, np.arange(p)])
    return W


def metric_init(deltas, y, mode="unsupervised", floor=1e-6):
    """Initial latent metric.

    Unsupervised mode returns the identity. Semi-supervised mode returns the
    KISSME-style estimate ``inv(C_sim) - inv(C_dis)``, where ``C`` are second
    moments of the latent pair differences, with eigenvalues clamped from
    below at ``floor`` times the largest one. A singular second-moment
    matrix falls back to the identity with a warning.
    """
    deltas = np.asarray(deltas, dtype=float)
    p = deltas.shape[1]
    if mode == "unsupervised":
        return np.eye(p)
    sim = deltas[np.asarray(y) == 1]
    dis = deltas[np.asarray(y) == -1]
    try:
        if len(sim) == 0 or len(dis) == 0:
            raise ConditioningError("empty pair class")
        inv_sim = _inv_second_moment(sim)
        inv_dis = _inv_second_moment(dis)
    except ConditioningError as exc:
        warnings.warn(f"metric initialization fell back to identity: {exc}", stacklevel=2)
        return np.eye(p)
    w, U = sym_eigh(inv_sim - inv_dis)
    top = w[-1] if w[-1] > 0 else np.linalg.eigvalsh(inv_sim)[-1]
    w = np.maximum(w, floor * top)
    return sym((U * w) @ U.T)


def _inv_second_moment(D):
    C = D.T @ D / len(D)
    w, U = sym_eigh(C, check_spd=True)
    return sym((U / w) @ U.T)


def beta_heuristic(similar_distances):
    """Reciprocal of the population std of similar-pair distances (1 if ~0)."""
    std = float(np.std(np.asarray(similar_distances, dtype=float)))
    return 1.0 / std if std >= 1e-12 else 1.0


# ---------------------------------------------------------------------------
# Fit / embed / classify


def _stage(name, func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with stage attribution
        raise StageError(name, f"{type(exc).__name__}: {exc}") from exc


def initial_point(source, target, pairs, config):
    """PCA projections, initial metric and zero slacks for centered inputs."""
    Ws = _stage("pca_init", pca_init, source.X, config.p)
    Wt = _stage("pca_init", pca_init, target.X, config.p)
    v = np.zeros(pairs.n_pairs)
    probe = ProductPoint(Ws, Wt, np.eye(config.p), v)
    deltas = pair_differences(probe, source.X, target.X, pairs)
    M0 = _stage("metric_init", metric_init, deltas, pairs.y, config.mode)
    return ProductPoint(Ws, Wt, M0, v), deltas


def fit(source, target, config=None):
    """Learn projections and latent metric for a source/target pair.

    Parameters
    ----------
    source : FeatureSet
        Fully labeled source samples (uncentered).
    target : FeatureSet
        Target samples; labels of rows to use in ``"semi"`` mode, ``-1``
        elsewhere. Labels are ignored in ``"unsupervised"`` mode.
    config : TrainConfig, optional

    Returns
    -------
    model : FittedModel
    trace : list of TraceRecord
    """
    config = config or TrainConfig()
    src = _stage("center", source.centered)
    tgt = _stage("center", target.centered)
    pairs = _stage(
        "make_pairs",
        make_pairs,
        src,
        tgt,
        config.mode,
        seed=config.seed,
        max_similar_pairs=config.max_similar_pairs,
    )
    point, deltas = initial_point(src, tgt, pairs, config)
    if config.beta == "auto":
        sim = deltas[pairs.y == 1]
        beta = beta_heuristic(np.einsum("ki,ij,kj->k", sim, point.M, sim))
    else:
        beta = float(config.beta)
    stats = _stage("statistics", domain_stats, src.X, tgt.X)
    problem = _stage("problem", ILSProblem, src.X, tgt.X, pairs, stats, beta, config.lam)
    params, trace = _stage("optimize", optimize, point, problem, config.optimizer)
    model = _stage(
        "finalize", FittedModel.from_params, params, src.mean, tgt.mean, beta, config
    )
    return model, trace


def embed(model, fs):
    """Latent coordinates ``M^{1/2} W^T (x - mean)`` of every row of ``fs``."""
    if fs.domain == "source":
        W, mean = model.params.Ws, model.source_mean
    else:
        W, mean = model.params.Wt, model.target_mean
    if fs.dim != W.shape[0]:
        raise ValueError(f"{fs.domain} features have dimension {fs.dim}, model expects {W.shape[0]}")
    return (fs.X - mean) @ W @ model.M_sqrt


def nearest_neighbor(train, train_labels, queries, chunk=2048):
    """1-NN labels under Euclidean distance; ties go to the lowest train row."""
    train = np.asarray(train, dtype=float)
    queries = np.asarray(queries, dtype=float)
    if train.shape[0] == 0:
        raise ValueError("empty training pool")
    out = np.empty(queries.shape[0], dtype=np.asarray(train_labels).dtype)
    for start in range(0, queries.shape[0], chunk):
        q = queries[start : start + chunk]
        d2 = np.sum((q[:, None, :] - train[None, :, :]) ** 2, axis=2)
        out[start : start + chunk] = np.asarray(train_labels)[np.argmin(d2, axis=1)]
    return out


def training_pool(model, train_sets):
    Z, labels = [], []
    for fs in train_sets:
        mask = fs.labeled_mask
        if np.any(mask):
            Z.append(embed(model, fs)[mask])
            labels.append(fs.labels[mask])
    if not Z:
        raise ValueError("empty training pool: no labeled rows")
    return np.vstack(Z), np.concatenate(labels)


def knn_classify(model, train_sets, queries):
    """Classify ``queries`` (a target FeatureSet) by 1-NN in the latent space.

    The training pool is every labeled row of ``train_sets`` (source, plus
    target when labeled target rows exist), embedded through ``model``.
    """
    Z, labels = training_pool(model, train_sets)
    return nearest_neighbor(Z, labels, embed(model, queries))


__all__ = [
    "FeatureSet",
    "FittedModel",
    "PairConstructionError",
    "RankError",
    "StageError",
    "TrainConfig",
    "beta_heuristic",
    "embed",
    "fit",
    "initial_point",
    "knn_classify",
    "make_pairs",
    "metric_init",
    "nearest_neighbor",
    "pca_init",
    "training_pool",
]
