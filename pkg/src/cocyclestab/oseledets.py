"""Lyapunov spectra and Oseledets fast/slow spaces of matrix cocycles.

Exponents come from the QR (Benettin) accumulation of triangular pivots.
Fast and slow spaces are the limits of singular spaces of long blocks: the
slow space E_j(omega) is the bottom right-singular space of the forward block
A^{(n)}(omega), the fast space F_j(omega) is the top left-singular space of the
block A^{(n)}(sigma^{-n} omega) that ends at omega.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
import warnings

import numpy as np

from . import products
from .errors import DegenerateGap, RankDeficient, TransversalityFailure
from .geometry import DEFAULT_GAP_TOL, Subspace, angle, intersection, perp

NEG_INF_RATE = -500.0
CHUNK_LOG_COND = math.log(1e6)
SINGULAR_LOG_COND = math.log(1e12)


@dataclass
class SpectrumReport:
    exponents: list
    grouped: list
    n_used: int
    stderr: list
    warning: str | None = None

    @property
    def boundaries(self) -> list:
        """Cumulative multiplicities D_1 < D_2 < ... < D_p = d."""
        out, acc = [], 0
        for _, m in self.grouped:
            acc += m
            out.append(acc)
        return out

    @property
    def finite_gaps(self) -> list:
        lams = [lam for lam, _ in self.grouped]
        return [a - b for a, b in zip(lams, lams[1:]) if math.isfinite(a) and math.isfinite(b)]

    def to_dict(self) -> dict:
        def enc(x):
            return None if not math.isfinite(x) else x
        return {
            "exponents": [enc(x) for x in self.exponents],
            "neg_inf": [x == -math.inf for x in self.exponents],
            "grouped": [{"lambda": enc(lam), "multiplicity": m, "neg_inf": lam == -math.inf}
                        for lam, m in self.grouped],
            "n_used": self.n_used,
            "stderr": [enc(x) for x in self.stderr],
            "warning": self.warning,
        }


def _log_cond(factors):
    s = np.linalg.svd(factors, compute_uv=False)
    with np.errstate(divide="ignore"):
        return np.log(s[..., 0]) - np.log(s[..., -1])


def chunk_boundaries(factors, renorm_every: int = 10) -> list:
    """Split step indices into chunks for re-orthonormalization.

    A chunk closes after ``renorm_every`` factors or once the product of
    condition numbers inside it would exceed 1e6; numerically singular factors
    sit in a chunk of their own.  With a batch, the worst case over the batch
    decides.
    """
    factors = np.asarray(factors, dtype=float)
    n = factors.shape[-3]
    lc = _log_cond(factors)
    if lc.ndim > 1:
        lc = lc.reshape(-1, n).max(axis=0)
    chunks, start, acc = [], 0, 0.0
    for t in range(n):
        singular = not lc[t] < SINGULAR_LOG_COND
        if t > start and (singular or t - start >= renorm_every or acc + lc[t] > CHUNK_LOG_COND):
            chunks.append((start, t))
            start, acc = t, 0.0
        acc += lc[t]
        if singular:
            chunks.append((start, t + 1))
            start, acc = t + 1, 0.0
    if start < n:
        chunks.append((start, n))
    return chunks


def qr_log_pivots(factors, renorm_every: int = 10, frame=None):
    """Per-chunk log pivots of the QR accumulation (batched).

    Returns (pivots, chunk_lengths, final frame); ``pivots`` has shape
    (..., n_chunks, d).
    """
    factors = np.asarray(factors, dtype=float)
    d = factors.shape[-1]
    batch = factors.shape[:-3]
    q = np.broadcast_to(np.eye(d) if frame is None else frame, batch + (d, d)).copy()
    chunks = chunk_boundaries(factors, renorm_every)
    pivots = np.empty(batch + (len(chunks), d))
    for c, (a, b) in enumerate(chunks):
        sub = factors[..., a:b, :, :]
        prod, _ = _chunk_product(sub)
        norms = np.prod(np.sqrt(np.sum(sub * sub, axis=(-2, -1))), axis=-1)
        q, logs = products.sweep(prod[..., None, :, :], q, norms=norms[..., None])
        pivots[..., c, :] = logs
    return pivots, np.array([b - a for a, b in chunks]), q


def _chunk_product(sub):
    p = sub[..., 0, :, :].copy()
    for t in range(1, sub.shape[-3]):
        p = sub[..., t, :, :] @ p
    return p, None


def group_exponents(mu, group_tol: float) -> list:
    """Merge consecutive exponents closer than ``group_tol``; -inf values form one group."""
    groups = []
    for x in mu:
        if groups:
            lam_sum, m, last = groups[-1]
            if x == -math.inf and last == -math.inf:
                groups[-1] = (lam_sum, m + 1, x)
                continue
            if math.isfinite(x) and math.isfinite(last) and last - x < group_tol:
                groups[-1] = (lam_sum + x, m + 1, x)
                continue
        groups.append((x, 1, x))
    return [((s / m) if math.isfinite(s) else -math.inf, m) for s, m, _ in groups]


def default_group_tol(mu, stderr) -> float:
    """5% of the finite spread, but never below three standard errors of a gap.

    The standard error of a difference of two estimates is at most the sum of
    their standard errors, whatever their correlation.
    """
    fin = [x for x in mu if math.isfinite(x)]
    spread = (max(fin) - min(fin)) if fin else 0.0
    se = [s for s in stderr if math.isfinite(s)]
    return max(0.05 * spread, 6.0 * max(se, default=0.0), 1e-9)


def spectrum_from_pivots(pivots, lengths, group_tol=None, n_batches: int = 20) -> SpectrumReport:
    """Exponents and batch-means standard errors from per-chunk log pivots (one trajectory)."""
    pivots = np.asarray(pivots, dtype=float)
    n = int(np.sum(lengths))
    total = pivots.sum(axis=0)
    mu = total / n
    mu = np.where(mu < NEG_INF_RATE, -np.inf, mu)

    nb = max(2, min(n_batches, len(lengths)))
    edges = np.linspace(0, len(lengths), nb + 1).astype(int)
    batch_rates = []
    for a, b in zip(edges[:-1], edges[1:]):
        if b > a:
            with np.errstate(invalid="ignore"):
                batch_rates.append(pivots[a:b].sum(axis=0) / lengths[a:b].sum())
    batch_rates = np.array(batch_rates)

    order = np.argsort(-np.where(np.isneginf(mu), -np.inf, mu), kind="stable")
    mu = mu[order]
    batch_rates = batch_rates[:, order]
    stderr = []
    for i in range(len(mu)):
        col = batch_rates[:, i]
        if not math.isfinite(mu[i]) or not np.all(np.isfinite(col)) or len(col) < 2:
            stderr.append(math.nan if not math.isfinite(mu[i]) else 0.0)
        else:
            stderr.append(float(np.std(col, ddof=1) / math.sqrt(len(col))))
    mu_list = [float(x) for x in mu]
    tol = default_group_tol(mu_list, stderr) if group_tol is None else group_tol
    grouped = group_exponents(mu_list, tol)

    warning = None
    lams = [lam for lam, _ in grouped]
    se_max = max((s for s in stderr if math.isfinite(s)), default=0.0)
    for a, b in zip(lams, lams[1:]):
        if math.isfinite(b) and a - b < 6.0 * se_max:
            warning = f"block length {n} too short to resolve gap {a - b:.3g} (stderr {se_max:.3g})"
    return SpectrumReport(mu_list, grouped, n, stderr, warning)


def estimate_spectrum(sys, omega, n: int, group_tol: float | None = None,
                      renorm_every: int = 10, n_batches: int = 20) -> SpectrumReport:
    """Lyapunov exponents with multiplicities from n steps starting at omega."""
    if n < 1:
        raise ValueError("n must be at least 1")
    factors = sys.matrices(omega, n)
    pivots, lengths, _ = qr_log_pivots(factors, renorm_every)
    return spectrum_from_pivots(pivots, lengths, group_tol, n_batches)


# --------------------------------------------------------------------------
# Singular spaces of long blocks


def _check_gap(log_s, j, gap_tol):
    if gap_tol is None:
        return
    a, b = log_s[..., j - 1], log_s[..., j]
    with np.errstate(invalid="ignore"):
        gap = np.where(np.isneginf(b), np.inf, a - b)
    if np.any(~(gap > math.log1p(gap_tol))):
        g = float(np.min(gap))
        raise DegenerateGap(j, math.exp(g) if math.isfinite(g) else math.nan)


def block_svd(factors) -> products.ProductSVD:
    return products.product_svd(factors)


def slow_frame(factors, j: int, gap_tol=DEFAULT_GAP_TOL):
    """Bottom right-singular frame (d x (d-j)) of the product of ``factors`` (batched)."""
    r = products.product_svd(factors)
    _check_gap(r.log_s, j, gap_tol)
    return r.v[..., :, j:], r


def fast_frame(factors, j: int, gap_tol=DEFAULT_GAP_TOL):
    """Top left-singular frame (d x j) of the product of ``factors`` (batched)."""
    r = products.product_svd(factors)
    if j < r.log_s.shape[-1]:
        _check_gap(r.log_s, j, gap_tol)
    if np.any(np.isneginf(r.log_s[..., j - 1])):
        raise RankDeficient(j)
    return r.u[..., :, :j], r


def _forward(sys, omega, n):
    return sys.matrices(omega, n)


def _backward(sys, omega, n):
    return sys.matrices(sys.shift(omega, -n), n)


def slow_space(sys, omega, j: int, n: int, gap_tol=DEFAULT_GAP_TOL) -> Subspace:
    """E_j(omega) estimated from the forward block of length n."""
    frame, _ = slow_frame(_forward(sys, omega, n), j, gap_tol)
    return Subspace(frame)


def fast_space(sys, omega, j: int, n: int, gap_tol=DEFAULT_GAP_TOL) -> Subspace:
    """F_j(omega) estimated from the block of length n ending at omega."""
    frame, _ = fast_frame(_backward(sys, omega, n), j, gap_tol)
    return Subspace(frame)


@dataclass
class SpaceEstimate:
    space: Subspace
    n: int
    certificate: float  # angle between the n and 2n estimates

    def to_dict(self) -> dict:
        return {"basis": self.space.to_list(), "n": self.n, "certificate": self.certificate}


def slow_space_certified(sys, omega, j, n, gap_tol=DEFAULT_GAP_TOL) -> SpaceEstimate:
    a = slow_space(sys, omega, j, n, gap_tol)
    b = slow_space(sys, omega, j, 2 * n, gap_tol)
    return SpaceEstimate(a, n, angle(a, b))


def fast_space_certified(sys, omega, j, n, gap_tol=DEFAULT_GAP_TOL) -> SpaceEstimate:
    a = fast_space(sys, omega, j, n, gap_tol)
    b = fast_space(sys, omega, j, 2 * n, gap_tol)
    return SpaceEstimate(a, n, angle(a, b))


# --------------------------------------------------------------------------
# Splitting


def oblique_projection(fast: Subspace, slow: Subspace, vectors) -> np.ndarray:
    """Project ``vectors`` onto ``fast`` along ``slow`` (complementary subspaces)."""
    g = np.hstack([fast.basis, slow.basis])
    coords = np.linalg.solve(g, np.asarray(vectors, dtype=float))
    return fast.basis @ coords[: fast.k]


def components_from_spaces(fast: dict, slow: dict, boundaries: list, min_perp: float = 1e-6):
    """Oseledets components Y_i from fast/slow spaces at the group boundaries.

    ``boundaries`` are D_1 < ... < D_{p-1} (excluding d).  Y_1 = F_{D_1},
    Y_i = projection of E_{D_{i-1}} onto F_{D_i} along E_{D_i}, Y_p = E_{D_{p-1}}.
    """
    perps = {}
    for j in boundaries:
        perps[j] = perp(slow[j], fast[j])
        if perps[j] < min_perp:
            raise TransversalityFailure(f"fast and slow spaces at index {j} nearly intersect "
                                        f"(perp = {perps[j]:.3g})")
    if not boundaries:
        return [], perps
    comps = [fast[boundaries[0]]]
    for prev, j in zip(boundaries, boundaries[1:]):
        img = oblique_projection(fast[j], slow[j], slow[prev].basis)
        comps.append(Subspace.span(img, rank=j - prev))
    comps.append(slow[boundaries[-1]])
    return comps, perps


@dataclass
class SplittingReport:
    boundaries: list
    fast: dict
    slow: dict
    components: list
    perp: dict
    exponents: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "boundaries": self.boundaries,
            "fast": {str(j): s.to_list() for j, s in self.fast.items()},
            "slow": {str(j): s.to_list() for j, s in self.slow.items()},
            "components": [c.to_list() for c in self.components],
            "component_dims": [c.k for c in self.components],
            "perp": {str(j): v for j, v in self.perp.items()},
            "grouped_exponents": [{"lambda": lam if math.isfinite(lam) else None,
                                   "multiplicity": m} for lam, m in self.exponents],
        }


def splitting(sys, omega, n: int, spectrum: SpectrumReport | None = None,
              boundaries: list | None = None, spectrum_n: int | None = None) -> SplittingReport:
    """Oseledets splitting at omega from blocks of length n.

    Group boundaries come from ``boundaries`` if given, otherwise from
    ``spectrum`` (estimated over ``spectrum_n`` steps when absent).
    """
    if boundaries is None:
        if spectrum is None:
            spectrum = estimate_spectrum(sys, omega, spectrum_n or max(n, 2000))
        boundaries = spectrum.boundaries[:-1]
    fwd = products.product_svd(_forward(sys, omega, n))
    bwd = products.product_svd(_backward(sys, omega, n))
    fast, slow = {}, {}
    for j in boundaries:
        _check_gap(fwd.log_s, j, DEFAULT_GAP_TOL)
        _check_gap(bwd.log_s, j, DEFAULT_GAP_TOL)
        if np.isneginf(bwd.log_s[j - 1]):
            raise RankDeficient(j)
        fast[j] = Subspace(bwd.u[:, :j])
        slow[j] = Subspace(fwd.v[:, j:])
    comps, perps = components_from_spaces(fast, slow, list(boundaries))
    return SplittingReport(list(boundaries), fast, slow, comps, perps,
                           spectrum.grouped if spectrum is not None else [])


def intersection_components(report: SplittingReport) -> list:
    """Y_i = F_{D_i} intersect E_{D_{i-1}} computed directly (reference route)."""
    b = report.boundaries
    out = [report.fast[b[0]]]
    for prev, j in zip(b, b[1:]):
        out.append(intersection(report.fast[j], report.slow[prev], tol=1e-6))
    out.append(report.slow[b[-1]])
    return out


# --------------------------------------------------------------------------
# Good blocks


@dataclass
class GoodBlockResult:
    good: bool
    conditions: dict
    diagnostics: dict

    def __bool__(self):
        return self.good


def _batch_angle(u, v) -> np.ndarray:
    diff = u @ np.swapaxes(u, -1, -2) - v @ np.swapaxes(v, -1, -2)
    return np.minimum(1.0, np.linalg.norm(diff, 2, axis=(-2, -1)))


def _batch_perp(u, w) -> np.ndarray:
    smax = np.linalg.norm(np.swapaxes(u, -1, -2) @ w, 2, axis=(-2, -1))
    return np.sqrt(np.maximum(0.0, 1.0 - np.minimum(1.0, smax)))


def _stack(sys, states, n, back=False):
    return np.stack([sys.matrices(sys.shift(w, -n) if back else w, n) for w in states])


def classify_good_blocks(sys, states, N: int, kappa: float, delta: float, K_threshold: float,
                         j: int, n_ref: int | None = None) -> list:
    """Batched good-block classification of A^{(N)}(omega) for each omega in ``states``.

    Conditions: (a) perp(E_j(omega), F_j(omega)) > 10 kappa; (b) the top space
    of the block is within delta of F_j(sigma^N omega); (c) its bottom space
    is within delta of E_j(omega); (d) s_j/s_{j+1} > K and s_j > K.  Reference
    Oseledets spaces use blocks of length ``n_ref`` (default 8N).
    """
    n_ref = n_ref or 8 * N
    fwd = products.product_svd(_stack(sys, states, n_ref))
    bwd = products.product_svd(_stack(sys, states, n_ref, back=True))
    nxt = products.product_svd(_stack(sys, [sys.shift(w, N) for w in states], n_ref, back=True))
    blk = products.product_svd(_stack(sys, states, N))
    e_ref, f_ref, f_next = fwd.v[..., :, j:], bwd.u[..., :, :j], nxt.u[..., :, :j]
    sep = _batch_perp(e_ref, f_ref)
    a_top = _batch_angle(blk.u[..., :, :j], f_next)
    a_bottom = _batch_angle(blk.v[..., :, j:], e_ref)
    log_k = math.log(K_threshold)
    out = []
    for t in range(len(states)):
        ls = blk.log_s[t]
        if np.isneginf(ls[j - 1]):
            log_ratio = -math.inf
        elif np.isneginf(ls[j]):
            log_ratio = math.inf
        else:
            log_ratio = float(ls[j - 1] - ls[j])
        conditions = {
            "a": bool(sep[t] > 10 * kappa),
            "b": bool(a_top[t] < delta),
            "c": bool(a_bottom[t] < delta),
            "d": bool(log_ratio > log_k and ls[j - 1] > log_k),
        }
        diagnostics = {"perp_reference": float(sep[t]), "angle_top": float(a_top[t]),
                       "angle_bottom": float(a_bottom[t]), "log_ratio": log_ratio,
                       "log_s_j": float(ls[j - 1]), "n_ref": n_ref}
        out.append(GoodBlockResult(all(conditions.values()), conditions, diagnostics))
    return out


def classify_good_block(sys, omega, N: int, kappa: float, delta: float, K_threshold: float,
                        j: int, n_ref: int | None = None) -> GoodBlockResult:
    """Good-block classification of a single block; see ``classify_good_blocks``."""
    return classify_good_blocks(sys, [omega], N, kappa, delta, K_threshold, j, n_ref)[0]


def warn_if(report: SpectrumReport):
    if report.warning:
        warnings.warn(report.warning, RuntimeWarning, stacklevel=2)
