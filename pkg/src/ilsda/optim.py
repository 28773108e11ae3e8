"""Riemannian gradient descent on the product manifold.

Three drivers share one stopping rule and one trace format:

* ``optimize_product`` -- joint step on all four factors per iteration.
* ``optimize_alternating`` -- one backtracking step per block, cycling
  ``Ws -> Wt -> M -> v``.
* ``optimize_pgd`` -- Euclidean step followed by projection; a comparison
  baseline with a fixed step and no monotonicity guarantee.

A *problem* is any object with ``loss(point) -> LossBreakdown`` and
``egrad(point) -> TangentBundle``; :class:`ilsda.objective.ILSProblem` is the
one used in practice.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .manifolds import (
    BLOCK_NAMES,
    ManifoldError,
    ProductPoint,
    product_norm,
    product_retract,
    product_rgrad,
    sym,
    sym_eigh,
    uf,
)

logger = logging.getLogger(__name__)

MODES = ("alternating", "product", "pgd")
SLACK_METRICS = ("mean", "unit")
LOSS_WINDOW = 10


@dataclass(frozen=True)
class OptimizerConfig:
    mode: str = "product"
    max_iters: int = 500
    initial_step: float = 1.0
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    max_trials: int = 30
    grad_norm_tol: float = 1e-6
    loss_rel_tol: float = 1e-9
    slack_metric: str = "mean"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown optimizer mode {self.mode!r}; choose from {MODES}")
        if self.slack_metric not in SLACK_METRICS:
            raise ValueError(f"slack_metric must be one of {SLACK_METRICS}")
        if not 0.0 < self.shrink < 1.0:
            raise ValueError("shrink must lie in (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not (self.grad_norm_tol > 0 and self.loss_rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if not (self.initial_step > 0 and self.sufficient_decrease > 0 and self.max_trials >= 1):
            raise ValueError("invalid line-search settings")

    def slack_weight(self, n_pairs):
        """Metric weight of the slack factor: ``1/Np`` for "mean", 1 for "unit"."""
        if self.slack_metric == "mean" and n_pairs > 0:
            return 1.0 / n_pairs
        return 1.0


@dataclass
class TraceRecord:
    """State after ``iteration`` updates (iteration 0 is the initial point)."""

    iteration: int
    loss: object
    grad_norm: float
    step: float
    wall_time: float
    status: str = "ok"
    block_steps: dict = field(default_factory=dict)

    def as_dict(self):
        out = {
            "iteration": self.iteration,
            "grad_norm": self.grad_norm,
            "step": self.step,
            "status": self.status,
            "wall_time": self.wall_time,
        }
        out.update(self.loss.as_dict())
        if self.block_steps:
            out["block_steps"] = dict(self.block_steps)
        return out


def write_trace(trace, path):
    """Write one JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in trace:
            fh.write(json.dumps(rec.as_dict(), sort_keys=True) + "\n")


def read_trace(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def rgd_step(point, bundle, alpha):
    """``R_x(-alpha * grad)``; raises on a singular retraction."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return product_retract(point, bundle * -alpha)


def _line_search(problem, point, f0, rgrad, sq_norm, alpha0, config):
    """Armijo backtracking along ``-rgrad``.

    Returns ``(new_point, new_loss, alpha)``, or ``(None, None, 0.0)`` when no
    trial satisfies the sufficient-decrease condition.
    """
    alpha = alpha0
    for _ in range(config.max_trials):
        try:
            cand = rgd_step(point, rgrad, alpha)
            loss = problem.loss(cand)
        except (ManifoldError, np.linalg.LinAlgError):
            loss = None
        if loss is not None and np.isfinite(loss.total):
            if loss.total <= f0 - config.sufficient_decrease * alpha * sq_norm:
                return cand, loss, alpha
        alpha *= config.shrink
    return None, None, 0.0


class _Stopper:
    def __init__(self, config):
        self.config = config
        self.history = []

    def __call__(self, total, grad_norm):
        """Return a stop reason or ``None``."""
        self.history.append(total)
        if grad_norm < self.config.grad_norm_tol:
            return "grad_norm_tol"
        if len(self.history) > LOSS_WINDOW:
            old = self.history[-1 - LOSS_WINDOW]
            if abs(old - total) <= self.config.loss_rel_tol * max(abs(old), 1e-300):
                return "loss_rel_tol"
        return None


class _Geometry:
    """Riemannian gradient and norm with the configured slack metric."""

    def __init__(self, config, point):
        self.w = config.slack_weight(point.n_pairs)

    def rgrad(self, problem, point):
        return product_rgrad(point, problem.egrad(point), self.w)

    def norm(self, point, bundle):
        return product_norm(point, bundle, self.w)


def optimize_product(initial, problem, config=None):
    """Riemannian gradient descent with all factors updated jointly.

    The first trial step of each iteration is twice the previously accepted
    step (``config.initial_step`` at the start).

    Returns
    -------
    point : ProductPoint
        Final iterate.
    trace : list of TraceRecord
    """
    config = config or OptimizerConfig(mode="product")
    t0 = time.perf_counter()
    geo = _Geometry(config, initial)
    point = initial
    loss = problem.loss(point)
    rgrad = geo.rgrad(problem, point)
    gnorm = geo.norm(point, rgrad)
    trace = [TraceRecord(0, loss, gnorm, 0.0, time.perf_counter() - t0)]
    stop = _Stopper(config)
    reason = stop(loss.total, gnorm)
    alpha0 = config.initial_step

    for it in range(1, config.max_iters + 1):
        if reason:
            break
        cand, cand_loss, alpha = _line_search(
            problem, point, loss.total, rgrad, gnorm**2, alpha0, config
        )
        if cand is None:
            reason = "line_search_failed"
            break
        point, loss = cand, cand_loss
        alpha0 = 2.0 * alpha
        rgrad = geo.rgrad(problem, point)
        gnorm = geo.norm(point, rgrad)
        trace.append(TraceRecord(it, loss, gnorm, alpha, time.perf_counter() - t0))
        reason = stop(loss.total, gnorm)

    trace[-1].status = reason or "max_iters"
    logger.debug("product RGD stopped after %d iterations: %s", len(trace) - 1, trace[-1].status)
    return point, trace


def optimize_alternating(initial, problem, config=None):
    """Block-coordinate Riemannian descent over ``Ws, Wt, M, v``.

    Each outer iteration takes one backtracking step per block with the other
    blocks frozen. Blocks whose Riemannian gradient vanishes are skipped. Every
    block keeps its own step-size memory.
    """
    config = config or OptimizerConfig(mode="alternating")
    t0 = time.perf_counter()
    geo = _Geometry(config, initial)
    point = initial
    loss = problem.loss(point)
    rgrad = geo.rgrad(problem, point)
    gnorm = geo.norm(point, rgrad)
    trace = [TraceRecord(0, loss, gnorm, 0.0, time.perf_counter() - t0)]
    stop = _Stopper(config)
    reason = stop(loss.total, gnorm)
    alpha0 = dict.fromkeys(BLOCK_NAMES, config.initial_step)

    for it in range(1, config.max_iters + 1):
        if reason:
            break
        steps = {}
        moved = False
        for block in BLOCK_NAMES:
            if block != BLOCK_NAMES[0]:
                rgrad = geo.rgrad(problem, point)
            direction = rgrad.only(block)
            sq = geo.norm(point, direction) ** 2
            if sq == 0.0:
                steps[block] = 0.0
                continue
            cand, cand_loss, alpha = _line_search(
                problem, point, loss.total, direction, sq, alpha0[block], config
            )
            steps[block] = alpha
            if cand is not None:
                point, loss = cand, cand_loss
                alpha0[block] = 2.0 * alpha
                moved = True
        if not moved:
            reason = "line_search_failed"
            break
        rgrad = geo.rgrad(problem, point)
        gnorm = geo.norm(point, rgrad)
        trace.append(
            TraceRecord(
                it, loss, gnorm, max(steps.values()), time.perf_counter() - t0, block_steps=steps
            )
        )
        reason = stop(loss.total, gnorm)

    trace[-1].status = reason or "max_iters"
    return point, trace


def project_spd(M, rcond=1e-12):
    """Symmetrize and clamp eigenvalues at ``rcond`` times the largest one."""
    w, U = sym_eigh(M)
    top = w[-1]
    if not np.isfinite(top) or not top > 0:
        raise ManifoldError("cannot project: matrix has no positive eigenvalue")
    return sym((U * np.maximum(w, rcond * top)) @ U.T)


def optimize_pgd(initial, problem, config=None):
    """Projected gradient descent with a fixed step ``config.initial_step``.

    Projection failures (or a non-finite loss) are recorded with status
    ``"projection_failed"`` and the previous iterate is kept.
    """
    config = config or OptimizerConfig(mode="pgd")
    t0 = time.perf_counter()
    w = config.slack_weight(initial.n_pairs)
    alpha = config.initial_step
    point = initial
    loss = problem.loss(point)
    egrad = problem.egrad(point)
    gnorm = product_norm(point, product_rgrad(point, egrad, w), w)
    trace = [TraceRecord(0, loss, gnorm, 0.0, time.perf_counter() - t0)]
    stop = _Stopper(config)
    reason = stop(loss.total, gnorm)

    for it in range(1, config.max_iters + 1):
        if reason:
            break
        status = "ok"
        try:
            cand = ProductPoint(
                uf(point.Ws - alpha * egrad.xi_s),
                uf(point.Wt - alpha * egrad.xi_t),
                project_spd(point.M - alpha * egrad.xi_M),
                point.v - alpha * egrad.xi_v,
            )
            cand_loss = problem.loss(cand)
            if not np.isfinite(cand_loss.total):
                raise ManifoldError("non-finite loss")
            cand_egrad = problem.egrad(cand)
        except (ManifoldError, np.linalg.LinAlgError, FloatingPointError):
            status = "projection_failed"
        else:
            point, loss, egrad = cand, cand_loss, cand_egrad
        gnorm = product_norm(point, product_rgrad(point, egrad, w), w)
        trace.append(TraceRecord(it, loss, gnorm, alpha, time.perf_counter() - t0, status))
        reason = stop(loss.total, gnorm)

    if reason:
        trace[-1].status = reason
    elif trace[-1].status == "ok":
        trace[-1].status = "max_iters"
    return point, trace


def optimize(initial, problem, config):
    drivers = {
        "product": optimize_product,
        "alternating": optimize_alternating,
        "pgd": optimize_pgd,
    }
    return drivers[config.mode](initial, problem, config)


__all__ = [
    "MODES",
    "OptimizerConfig",
    "TraceRecord",
    "optimize",
    "optimize_alternating",
    "optimize_pgd",
    "optimize_product",
    "project_spd",
    "read_trace",
    "rgd_step",
    "write_trace",
]
