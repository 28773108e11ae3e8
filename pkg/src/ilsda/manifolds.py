"""Geometry of the Stiefel manifold, the SPD manifold and their product.

The projections ``Ws``/``Wt`` live on Stiefel manifolds with the embedded
(Frobenius) metric, the latent metric ``M`` lives on the SPD manifold with the
affine-invariant metric, and the slack log-parameters ``v`` are Euclidean.
All functions are pure; points and tangent bundles are immutable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHONORMALITY_TOL = 1e-10
SYMMETRY_TOL = 1e-12
SPD_RCOND = 1e-12


class ManifoldError(ValueError):
    """A matrix does not satisfy the requirements of its manifold."""


class ConditioningError(ManifoldError):
    """An SPD matrix is numerically singular."""


class SingularRetractionError(ManifoldError):
    """``W + xi`` lost rank, so the polar retraction is undefined."""


def sym(A):
    return 0.5 * (A + A.T)


def _check_shape(A, shape, name):
    if A.shape != shape:
        raise ManifoldError(f"{name} has shape {A.shape}, expected {shape}")


def sym_eigh(A, check_spd=False):
    """Eigendecomposition of the symmetric part of ``A``.

    With ``check_spd`` a :class:`ConditioningError` is raised unless the
    smallest eigenvalue exceeds ``SPD_RCOND`` times the largest.
    """
    w, U = np.linalg.eigh(sym(np.asarray(A, dtype=float)))
    if check_spd and not (w[-1] > 0 and w[0] > SPD_RCOND * w[-1]):
        raise ConditioningError(
            f"matrix is not numerically SPD (eigenvalue range [{w[0]:.3e}, {w[-1]:.3e}])"
        )
    return w, U


def sym_funm(A, func, check_spd=False):
    """Apply ``func`` to the eigenvalues of the symmetric matrix ``A``."""
    w, U = sym_eigh(A, check_spd=check_spd)
    return sym((U * func(w)) @ U.T)


def spd_sqrt(M):
    return sym_funm(M, np.sqrt, check_spd=True)


def spd_invsqrt(M):
    return sym_funm(M, lambda w: 1.0 / np.sqrt(w), check_spd=True)


def spd_inv(M):
    return sym_funm(M, np.reciprocal, check_spd=True)


def spd_logdet(M):
    w, _ = sym_eigh(M, check_spd=True)
    return float(np.sum(np.log(w)))


def is_spd(M):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        return False
    if np.max(np.abs(M - M.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.max(np.abs(M))):
        return False
    w = np.linalg.eigvalsh(sym(M))
    return bool(w[-1] > 0 and w[0] > SPD_RCOND * w[-1])


def orthonormality_error(W):
    W = np.asarray(W, dtype=float)
    return float(np.linalg.norm(W.T @ W - np.eye(W.shape[1])))


def is_stiefel(W, tol=ORTHONORMALITY_TOL):
    W = np.asarray(W, dtype=float)
    return W.ndim == 2 and W.shape[1] <= W.shape[0] and orthonormality_error(W) < tol


def uf(A):
    """Orthonormal factor of ``A`` from the polar decomposition.

    Equal to ``A (A^T A)^{-1/2}``; computed as ``U V^T`` from a thin SVD.
    """
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size and (s[-1] <= s[0] * 1e-14 or s[0] == 0.0):
        raise SingularRetractionError(
            f"rank-deficient matrix (singular values {s[-1]:.3e} .. {s[0]:.3e})"
        )
    return U @ Vt


# ---------------------------------------------------------------------------
# Stiefel


def stiefel_egrad_to_rgrad(W, G):
    """Riemannian gradient on St(n, p) under the embedded metric.

    Parameters
    ----------
    W : ndarray, shape (n, p)
        Point with orthonormal columns.
    G : ndarray, shape (n, p)
        Euclidean gradient at ``W``.

    Returns
    -------
    ndarray, shape (n, p)
        ``G - W sym(W^T G)``, the projection of ``G`` onto the tangent space.
    """
    G = np.asarray(G, dtype=float)
    _check_shape(G, W.shape, "gradient")
    return G - W @ sym(W.T @ G)


def stiefel_retract(W, xi):
    _check_shape(xi, W.shape, "tangent vector")
    return uf(W + xi)


# ---------------------------------------------------------------------------
# SPD


def spd_egrad_to_rgrad(M, G):
    """Riemannian gradient ``M sym(G) M`` under the affine-invariant metric."""
    G = np.asarray(G, dtype=float)
    _check_shape(G, M.shape, "gradient")
    return sym(M @ sym(G) @ M)


def spd_retract(M, xi):
    """Exponential-map retraction ``M^{1/2} expm(M^{-1/2} xi M^{-1/2}) M^{1/2}``."""
    xi = np.asarray(xi, dtype=float)
    _check_shape(xi, M.shape, "tangent vector")
    w, U = sym_eigh(M, check_spd=True)
    root = (U * np.sqrt(w)) @ U.T
    iroot = (U / np.sqrt(w)) @ U.T
    lam, V = sym_eigh(iroot @ sym(xi) @ iroot)
    # Gram form B B^T keeps the result exactly symmetric
    B = (root @ V) * np.exp(0.5 * lam)
    return sym(B @ B.T)


def spd_inner(M, a, b):
    Minv = spd_inv(M)
    return float(np.sum((Minv @ a) * (Minv @ b).T))


# ---------------------------------------------------------------------------
# Product manifold St(s,p) x St(t,p) x SPD(p) x R^Np


@dataclass(frozen=True)
class TangentBundle:
    """One tangent (or ambient gradient) component per factor manifold."""

    xi_s: np.ndarray
    xi_t: np.ndarray
    xi_M: np.ndarray
    xi_v: np.ndarray

    def __add__(self, other):
        return TangentBundle(
            self.xi_s + other.xi_s,
            self.xi_t + other.xi_t,
            self.xi_M + other.xi_M,
            self.xi_v + other.xi_v,
        )

    def __mul__(self, c):
        c = float(c)
        return TangentBundle(c * self.xi_s, c * self.xi_t, c * self.xi_M, c * self.xi_v)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def blocks(self):
        return (self.xi_s, self.xi_t, self.xi_M, self.xi_v)

    def only(self, block):
        """Copy with every factor except ``block`` set to zero."""
        parts = {name: np.zeros_like(getattr(self, name)) for name in BLOCK_NAMES}
        parts[block] = getattr(self, block)
        return TangentBundle(**parts)

    @classmethod
    def zeros_like(cls, point):
        return cls(
            np.zeros_like(point.Ws),
            np.zeros_like(point.Wt),
            np.zeros_like(point.M),
            np.zeros_like(point.v),
        )


BLOCK_NAMES = ("xi_s", "xi_t", "xi_M", "xi_v")


@dataclass(frozen=True)
class ProductPoint:
    """Model parameters ``(Ws, Wt, M, v)``; ``exp(v)`` are the pair slacks."""

    Ws: np.ndarray
    Wt: np.ndarray
    M: np.ndarray
    v: np.ndarray

    @property
    def p(self):
        return self.M.shape[0]

    @property
    def n_pairs(self):
        return self.v.shape[0]

    def check(self, tol=ORTHONORMALITY_TOL):
        """Raise :class:`ManifoldError` unless every factor invariant holds."""
        p = self.p
        if self.M.shape != (p, p):
            raise ManifoldError(f"M has shape {self.M.shape}")
        for name, W in (("Ws", self.Ws), ("Wt", self.Wt)):
            if W.ndim != 2 or W.shape[1] != p or W.shape[0] < p:
                raise ManifoldError(f"{name} has shape {W.shape}, expected (>= {p}, {p})")
            err = orthonormality_error(W)
            if not err < tol:
                raise ManifoldError(f"{name} is not orthonormal (error {err:.3e})")
        if not is_spd(self.M):
            raise ManifoldError("M is not symmetric positive definite")
        if self.v.ndim != 1 or not np.all(np.isfinite(self.v)):
            raise ManifoldError("v must be a finite vector")
        return self


def _check_bundle(point, bundle):
    for name, ref in zip(BLOCK_NAMES, (point.Ws, point.Wt, point.M, point.v)):
        _check_shape(getattr(bundle, name), ref.shape, name)


def product_rgrad(point, egrad, slack_weight=1.0):
    """Convert a bundle of Euclidean gradients factor by factor.

    ``slack_weight`` scales the metric of the Euclidean slack factor,
    ``g(a, b) = slack_weight * a.b``, so its gradient is divided by it.
    """
    _check_bundle(point, egrad)
    return TangentBundle(
        stiefel_egrad_to_rgrad(point.Ws, egrad.xi_s),
        stiefel_egrad_to_rgrad(point.Wt, egrad.xi_t),
        spd_egrad_to_rgrad(point.M, egrad.xi_M),
        np.asarray(egrad.xi_v, dtype=float) / slack_weight,
    )


def product_retract(point, step):
    _check_bundle(point, step)
    return ProductPoint(
        stiefel_retract(point.Ws, step.xi_s),
        stiefel_retract(point.Wt, step.xi_t),
        spd_retract(point.M, step.xi_M),
        point.v + step.xi_v,
    )


def product_inner(point, a, b, slack_weight=1.0):
    """Sum of the factor metrics (Frobenius, Frobenius, affine-invariant, dot)."""
    return (
        float(np.sum(a.xi_s * b.xi_s))
        + float(np.sum(a.xi_t * b.xi_t))
        + spd_inner(point.M, a.xi_M, b.xi_M)
        + slack_weight * float(np.dot(a.xi_v, b.xi_v))
    )


def product_norm(point, a, slack_weight=1.0):
    return float(np.sqrt(max(product_inner(point, a, a, slack_weight), 0.0)))
