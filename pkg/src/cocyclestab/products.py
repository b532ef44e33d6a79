"""Stable singular value decompositions of long matrix products.

A product M = A_{n-1} ... A_0 is never formed explicitly when it would be
badly graded.  Instead, orthonormal frames are pushed through the factors with
a QR step after every factor and the logs of the triangular diagonals are
accumulated (forward sweep for M, backward sweep for M^T).  Alternating the
two sweeps is orthogonal iteration on M^T M; at convergence the accumulated
logs are the log singular values and the frames are the singular frames.

All routines accept leading batch dimensions: ``factors`` has shape
(..., n, d, d) and frames have shape (..., d, k).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# A triangular pivot below this fraction of its factor's Frobenius norm is an
# exact zero produced by a singular factor.
ZERO_RTOL = 1e-12
_START_SEED = 20_240_617


@dataclass(frozen=True)
class ProductSVD:
    """M = u @ diag(exp(log_s)) @ v.T, possibly batched."""

    u: np.ndarray
    log_s: np.ndarray
    v: np.ndarray
    iterations: int
    converged: bool


def generic_frame(d: int) -> np.ndarray:
    """A fixed orthonormal d x d frame in general position."""
    g = np.random.default_rng(_START_SEED).standard_normal((d, d))
    q, _ = np.linalg.qr(g)
    return q


def _qr_pos(m):
    q, r = np.linalg.qr(m)
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    sgn = np.where(diag < 0, -1.0, 1.0)
    return q * sgn[..., None, :], np.abs(diag)


def sweep(factors, frame, zero_rtol: float = ZERO_RTOL, norms=None):
    """Push ``frame`` through the factors in order, re-orthonormalizing each step.

    Returns the final orthonormal frame and the accumulated log pivots, with
    -inf wherever a singular factor annihilated a direction.
    """
    factors = np.asarray(factors, dtype=float)
    q = np.asarray(frame, dtype=float)
    n = factors.shape[-3]
    if norms is None:
        norms = np.sqrt(np.sum(factors * factors, axis=(-2, -1)))
    logs = np.zeros(q.shape[:-2] + (q.shape[-1],))
    with np.errstate(divide="ignore"):
        for t in range(n):
            q, piv = _qr_pos(factors[..., t, :, :] @ q)
            dead = piv <= zero_rtol * norms[..., t, None]
            logs = logs + np.where(dead, -np.inf, np.log(np.where(dead, 1.0, piv)))
    return q, logs


def transpose_factors(factors):
    """Factors of M^T in application order."""
    factors = np.asarray(factors, dtype=float)
    return np.swapaxes(factors[..., ::-1, :, :], -1, -2)


def explicit_product(factors):
    """Product with a running scalar rescaling; returns (scaled product, log scale)."""
    factors = np.asarray(factors, dtype=float)
    d = factors.shape[-1]
    p = np.broadcast_to(np.eye(d), factors.shape[:-3] + (d, d)).copy()
    log_scale = np.zeros(factors.shape[:-3])
    for t in range(factors.shape[-3]):
        p = factors[..., t, :, :] @ p
        nrm = np.sqrt(np.sum(p * p, axis=(-2, -1)))
        nrm = np.where(nrm > 0, nrm, 1.0)
        p = p / nrm[..., None, None]
        log_scale = log_scale + np.log(nrm)
    return p, log_scale


def product_svd(factors, max_iter: int = 60, tol: float = 1e-12,
                zero_rtol: float = ZERO_RTOL) -> ProductSVD:
    """Singular value decomposition of A_{n-1} ... A_0 (batched).

    The explicit (rescaled) product seeds the right frame; forward/backward
    sweeps then refine it until the forward and backward log pivots agree.
    """
    factors = np.asarray(factors, dtype=float)
    if factors.ndim < 3:
        raise ValueError("factors must have shape (..., n, d, d)")
    d = factors.shape[-1]
    batch = factors.shape[:-3]
    norms = np.sqrt(np.sum(factors * factors, axis=(-2, -1)))
    tfactors = transpose_factors(factors)
    tnorms = norms[..., ::-1]

    p, _ = explicit_product(factors)
    if np.all(np.isfinite(p)):
        _, _, vt = np.linalg.svd(p)
        v = np.swapaxes(vt, -1, -2)
        # Keep the frame in general position if the explicit SVD was degenerate.
        v = np.where(np.isfinite(v), v, generic_frame(d))
    else:
        v = np.broadcast_to(generic_frame(d), batch + (d, d)).copy()

    converged = False
    prev = None
    it = 0
    u = logs_f = None
    for it in range(1, max_iter + 1):
        u, logs_f = sweep(factors, v, zero_rtol, norms)
        v, logs_b = sweep(tfactors, u, zero_rtol, tnorms)
        both_inf = np.isneginf(logs_f) & np.isneginf(logs_b)
        with np.errstate(invalid="ignore"):
            diff = np.where(both_inf, 0.0, np.abs(logs_f - logs_b))
            if prev is not None:
                step = np.where(np.isneginf(prev) & np.isneginf(logs_b), 0.0, np.abs(prev - logs_b))
            else:
                step = np.full_like(diff, np.inf)
        scale = 1.0 + np.where(np.isfinite(logs_b), np.abs(logs_b), 0.0)
        if np.all(diff <= tol * scale) and np.all(step <= tol * scale):
            converged = True
            break
        prev = logs_b
    # Final forward sweep from the refined right frame.
    u, logs = sweep(factors, v, zero_rtol, norms)
    order = np.argsort(-np.where(np.isneginf(logs), -np.inf, logs), axis=-1, kind="stable")
    logs = np.take_along_axis(logs, order, axis=-1)
    u = np.take_along_axis(u, order[..., None, :], axis=-1)
    v = np.take_along_axis(v, order[..., None, :], axis=-1)
    return ProductSVD(u=u, log_s=logs, v=v, iterations=it, converged=converged)


def push_span(factors, basis):
    """Orthonormal basis for the image of span(basis) under the product."""
    q, logs = sweep(factors, basis)
    return q, logs
