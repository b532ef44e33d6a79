"""Numerical checks of the integral lower bounds behind exponent stability.

Every check returns an ``IntegralBoundReport``: the observed value, the bound
it must respect, the margin and the numerical error allowance.  A report
fails only if the value undershoots the bound by more than that allowance.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import lru_cache
import math

import numpy as np
from scipy import integrate, optimize

from .cocycle import sample_operator_ball
from .geometry import ZERO_FLOOR, compound

# Absolute floor on the error allowance; quad's own estimate can be optimistic
# by a few ulps on smooth integrands.
QUAD_FLOOR = 1e-10
BAD_BLOCK_SLOPE = -1.28


@dataclass
class IntegralBoundReport:
    lemma_id: str
    sampled_parameters: dict
    observed_min: float
    claimed_bound: float
    margin: float
    quadrature_error_estimate: float
    passed: bool
    vacuous: bool = False
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        for k in ("observed_min", "claimed_bound", "margin"):
            v = out[k]
            if isinstance(v, float) and not math.isfinite(v):
                out[k] = None
                out[k + "_flag"] = "inf" if v > 0 else "-inf"
        return out


def _report(lemma_id, params, value, bound, err, vacuous=False, extra=None):
    err = max(float(err), QUAD_FLOOR)
    margin = value - bound
    passed = bool(vacuous or margin >= -err)
    return IntegralBoundReport(lemma_id, params, float(value), float(bound), float(margin), err,
                               passed, vacuous, extra or {})


# --------------------------------------------------------------------------
# The constant B


def linear_g(z: float) -> float:
    """(1/z) * integral over [0, z] of log^-|1 - y|, by quadrature (g(0) = 0)."""
    if z == 0:
        return 0.0
    pts = [1.0] if z > 1.0 else None

    def f(y):
        a = abs(1.0 - y)
        return min(0.0, math.log(a)) if a > 0 else -math.inf

    val, _ = integrate.quad(f, 0.0, z, points=pts, limit=200, epsabs=1e-13, epsrel=1e-13)
    return val / z


@lru_cache(maxsize=1)
def compute_constant_B() -> float:
    """inf over z in (0, 2] of linear_g(z), by bounded scalar minimization."""
    res = optimize.minimize_scalar(linear_g, bounds=(1.0, 2.0), method="bounded",
                                   options={"xatol": 1e-10})
    return float(res.fun)


def constant_B_minimizer() -> float:
    res = optimize.minimize_scalar(linear_g, bounds=(1.0, 2.0), method="bounded",
                                   options={"xatol": 1e-10})
    return float(res.x)


# --------------------------------------------------------------------------
# Quadrature helpers


def _quad(f, breakpoints=()):
    pts = sorted({float(p) for p in breakpoints if 0.0 < p < 1.0})
    val, err = integrate.quad(f, 0.0, 1.0, points=pts or None, limit=400,
                              epsabs=1e-12, epsrel=1e-11)
    return val, err


def _near_zeros(h, n_grid: int = 401, rel: float = 1e-2):
    """Local minima of a nonnegative function on [0, 1] that dip below rel * its max."""
    t = np.linspace(0.0, 1.0, n_grid)
    v = np.array([h(x) for x in t])
    top = max(v.max(), 1e-300)
    out = []
    for i in range(1, n_grid - 1):
        if v[i] <= v[i - 1] and v[i] <= v[i + 1] and v[i] < rel * top:
            lo, hi = t[i - 1], t[i + 1]
            res = optimize.minimize_scalar(h, bounds=(lo, hi), method="bounded",
                                           options={"xatol": 1e-14})
            out.append(float(res.x))
    return out


def _log(x):
    return math.log(x) if x > 0 else -math.inf


# --------------------------------------------------------------------------
# Scalar and polynomial bounds


def verify_linear_bound(z: complex, l: int, quad_pts=None) -> IntegralBoundReport:
    """Integral over [0,1] of t^l log|1 - t z| against B."""
    z = complex(z)
    bound = compute_constant_B()
    if abs(z) < ZERO_FLOOR:
        # the integrand is below 1e-300 in magnitude
        return _report("linear", {"z": [z.real, z.imag], "l": l}, 0.0, bound, 0.0)
    pts = list(quad_pts or [])
    # |1 - tz| is smallest at t = Re(z)/|z|^2; a log singularity sits there if z is real.
    tmin = (z.real / abs(z)) / abs(z)
    pts.append(tmin)
    val, err = _quad(lambda t: t ** l * _log(abs(1.0 - t * z)), pts)
    return _report("linear", {"z": [z.real, z.imag], "l": l}, val, bound, err)


def verify_poly_bound(roots, l: int) -> IntegralBoundReport:
    """Integral of t^l (log|p(t)| - log|p(0)|) against B deg(p), p given by its roots."""
    roots = np.asarray(roots, dtype=complex).ravel()
    deg = len(roots)
    bound = compute_constant_B() * deg
    params = {"roots": [[r.real, r.imag] for r in roots], "l": l}
    if deg == 0:
        return _report("poly", params, 0.0, 0.0, 0.0)
    if np.any(roots == 0):
        return _report("poly", params, math.inf, bound, 0.0, vacuous=True)
    p0 = np.prod(-roots)

    def f(t):
        return t ** l * (_log(abs(np.prod(t - roots))) - _log(abs(p0)))

    pts = [r.real for r in roots]
    val, err = _quad(f, pts)
    return _report("poly", params, val, bound, err)


def _poly_eval(coeffs, t):
    out = np.zeros_like(coeffs[0])
    for c in reversed(coeffs):
        out = out * t + c
    return out


def _degree(coeffs, tol=0.0):
    deg = 0
    for k, c in enumerate(coeffs):
        if np.abs(c).max() > tol:
            deg = k
    return deg


def verify_operator_bound(coeff_matrices, l: int) -> IntegralBoundReport:
    """Integral of t^l (log||P(t)|| - log||P(0)||) against B deg(P), P(t) = sum_k C_k t^k."""
    coeffs = [np.atleast_2d(np.asarray(c, dtype=float)) for c in coeff_matrices]
    deg = _degree(coeffs)
    bound = compute_constant_B() * deg
    params = {"degree": deg, "l": l, "shape": list(coeffs[0].shape)}
    n0 = np.linalg.norm(coeffs[0], 2)
    if n0 < ZERO_FLOOR:
        return _report("operator", params, math.inf, bound, 0.0, vacuous=True)

    def h(t):
        return float(np.linalg.norm(_poly_eval(coeffs, t), 2))

    def f(t):
        return t ** l * (_log(h(t)) - math.log(n0))

    val, err = _quad(f, _near_zeros(h))
    return _report("operator", params, val, bound, err)


def compound_norm(m, j: int) -> float:
    return float(np.linalg.norm(compound(m, j), 2))


def verify_magic_bound(L, M, A, R, j: int, l: int) -> IntegralBoundReport:
    """Integral of t^l (log||C_j(L(A+tM)R)|| - log||C_j(LAR)||) against jB.

    C_j is the j-th compound matrix.  If C_j(LAR) vanishes the bound is vacuous.
    """
    L, M, A, R = (np.asarray(x, dtype=float) for x in (L, M, A, R))
    bound = compute_constant_B() * j
    params = {"d": L.shape[0], "j": j, "l": l}
    base = compound_norm(L @ A @ R, j)
    scale = compound_norm(L, j) * compound_norm(R, j) * max(np.linalg.norm(A, 2), np.linalg.norm(M, 2)) ** j
    if base <= 1e-13 * max(scale, ZERO_FLOOR):
        return _report("magic", params, math.inf, bound, 0.0, vacuous=True)

    def h(t):
        return compound_norm(L @ (A + t * M) @ R, j)

    def f(t):
        return t ** l * (_log(h(t)) - math.log(base))

    val, err = _quad(f, _near_zeros(h))
    return _report("magic", params, val, bound, err)


# --------------------------------------------------------------------------
# Monte Carlo costs


def _xi_batch(m, j: int) -> np.ndarray:
    s = np.linalg.svd(m, compute_uv=False)[..., :j]
    with np.errstate(divide="ignore"):
        out = np.sum(np.log(s), axis=-1)
    return np.where(s[..., -1] < ZERO_FLOOR, -np.inf, out)


def _batch_stderr(x, n_batches: int = 20) -> float:
    x = np.asarray(x, dtype=float)
    nb = min(n_batches, len(x))
    if nb < 2:
        return math.nan
    means = np.array([b.mean() for b in np.array_split(x, nb)])
    return float(means.std(ddof=1) / math.sqrt(nb))


@dataclass
class CostEstimate:
    estimate: float
    stderr: float
    n_samples: int
    bound: float
    passed: bool
    trivial: bool = False

    def to_dict(self) -> dict:
        enc = (lambda v: v if math.isfinite(v) else None)
        return {"estimate": enc(self.estimate), "stderr": enc(self.stderr), "n_samples": self.n_samples,
                "bound": self.bound, "passed": self.passed, "trivial": self.trivial}


def _chain_product(mats):
    out = mats[..., 0, :, :]
    for k in range(1, mats.shape[-3]):
        out = mats[..., k, :, :] @ out
    return out


def estimate_bad_block_cost(A_list, epsilon: float, j: int, n_samples: int = 10_000,
                            rng=None, deltas=None) -> CostEstimate:
    """Mean of Xi_j(perturbed product) - Xi_j(product) over operator-ball perturbations.

    ``A_list[0]`` is applied first.  Passes if the estimate is at least
    -1.28 d^2 n j minus three standard errors, or trivially if the unperturbed
    product has Xi_j = -inf.
    """
    mats = np.asarray(A_list, dtype=float)
    n, d = mats.shape[0], mats.shape[-1]
    bound = BAD_BLOCK_SLOPE * d * d * n * j
    base = float(_xi_batch(_chain_product(mats), j))
    if deltas is None:
        rng = np.random.default_rng(rng)
        deltas = sample_operator_ball(rng, d, n_samples * n).reshape(n_samples, n, d, d)
    pert = _chain_product(mats[None] + epsilon * deltas)
    vals = _xi_batch(pert, j)
    if base == -math.inf:
        est = math.inf if np.all(np.isfinite(vals)) else float(np.mean(vals))
        return CostEstimate(est, 0.0, len(vals), bound, True, trivial=True)
    diff = vals - base
    est = float(np.mean(diff))
    se = _batch_stderr(diff)
    passed = bool(math.isfinite(est) and est >= bound - 3 * se)
    return CostEstimate(est, se, len(vals), bound, passed)


@dataclass
class GlueFit:
    K: float
    c0: float
    epsilons: list
    estimates: list
    stderr: list
    residuals: list  # estimate - (c0 + K log eps), in standard errors
    passed: bool
    K_ceiling: float

    def to_dict(self) -> dict:
        return asdict(self)


def fit_log_envelope(log_eps, est, se):
    """Tightest line c0 + K log(eps) lying below every estimate, with K >= 0.

    Solved as a linear program minimizing the summed gaps.
    """
    log_eps = np.asarray(log_eps, dtype=float)
    est = np.asarray(est, dtype=float)
    # variables (c0, K); constraint c0 + K x_i <= est_i
    a_ub = np.column_stack([np.ones_like(log_eps), log_eps])
    cost = -a_ub.sum(axis=0)
    res = optimize.linprog(cost, A_ub=a_ub, b_ub=est, bounds=[(None, None), (0, None)], method="highs")
    if not res.success:
        raise RuntimeError(f"envelope fit failed: {res.message}")
    c0, k = res.x
    return float(c0), float(k)


def glue_cost_samples(L, A, R, j: int, epsilon: float, deltas) -> np.ndarray:
    L, A, R = (np.asarray(x, dtype=float) for x in (L, A, R))
    vals = _xi_batch(L @ (A + epsilon * deltas) @ R, j)
    return vals - (_xi_batch(L, j) + _xi_batch(R, j))


def estimate_glue_cost(L, A, R, j: int, epsilon_list, n_samples: int = 10_000, rng=None,
                       K_ceiling: float = 4.0) -> GlueFit:
    """Fit the lower bound c0 + K log(eps) to Monte Carlo glue costs.

    The same perturbation samples are reused for every epsilon.
    """
    eps = np.asarray(sorted(epsilon_list, reverse=True), dtype=float)
    if eps.max() / eps.min() < 100:
        raise ValueError("epsilon_list must span at least two decades")
    d = np.asarray(A).shape[0]
    rng = np.random.default_rng(rng)
    deltas = sample_operator_ball(rng, d, n_samples)
    est, se = [], []
    for e in eps:
        v = glue_cost_samples(L, A, R, j, e, deltas)
        if not np.all(np.isfinite(v)):
            raise ValueError("glue cost is not finite; Xi_j(L) or Xi_j(R) is -inf")
        est.append(float(v.mean()))
        se.append(_batch_stderr(v))
    x = np.log(eps)
    c0, k = fit_log_envelope(x, est, se)
    resid = [(e_ - (c0 + k * xi)) / s if s > 0 else 0.0 for e_, xi, s in zip(est, x, se)]
    passed = bool(all(r >= -3.0 for r in resid) and 0.0 <= k <= K_ceiling)
    return GlueFit(k, c0, eps.tolist(), est, se, resid, passed, K_ceiling)


# --------------------------------------------------------------------------
# Batteries


def _random_rank(rng, d, rank):
    u = rng.standard_normal((d, rank))
    v = rng.standard_normal((rank, d))
    return u @ v


def linear_battery(n: int = 200, seed: int = 0) -> list:
    """Grid over z (real, near the minimizer, complex, up to |z| = 1e4) and l = 0..10."""
    rng = np.random.default_rng(seed)
    zs = [0.0, 0.5, 1.0, 2.0, constant_B_minimizer(), 1e4, -1e4, 5j, 1e4j]
    zs += list(np.linspace(0.05, 2.0, 40))
    while len(zs) < n:
        r = 10 ** rng.uniform(-2, 4)
        zs.append(r * np.exp(1j * rng.uniform(0, 2 * np.pi)))
    out = []
    for i, z in enumerate(zs[:n]):
        out.append(verify_linear_bound(z, i % 11))
    return out


def poly_battery(n: int = 50, seed: int = 1) -> list:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        deg = int(rng.integers(1, 6))
        roots = []
        while len(roots) < deg:
            if deg - len(roots) >= 2 and rng.random() < 0.4:
                r = complex(rng.uniform(-2, 2), rng.uniform(0.01, 2))
                roots += [r, r.conjugate()]
            else:
                roots.append(complex(rng.uniform(0.05, 1.0) if rng.random() < 0.5 else rng.uniform(-3, 3)))
        out.append(verify_poly_bound(roots, int(rng.integers(0, 6))))
    return out


def operator_battery(n: int = 50, seed: int = 2) -> list:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        deg = int(rng.integers(1, 3))
        coeffs = [rng.standard_normal((3, 3)) for _ in range(deg + 1)]
        out.append(verify_operator_bound(coeffs, int(rng.integers(0, 6))))
    return out


def magic_battery(n: int = 100, seed: int = 3) -> list:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        j = 1 + i % 3
        rank_a = int(rng.integers(j, 5)) if i % 2 else 4
        L = rng.standard_normal((4, 4))
        R = rng.standard_normal((4, 4))
        A = _random_rank(rng, 4, rank_a)
        M = rng.standard_normal((4, 4))
        out.append(verify_magic_bound(L, M, A, R, j, int(rng.integers(0, 6))))
    return out


def bad_block_battery(n_chains: int = 20, n_samples: int = 10_000, seed: int = 4) -> list:
    """Chains with d <= 3, n <= 4, eps in {0.5, 0.1}, including singular factors."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_chains):
        d = 2 + i % 2
        n = 1 + (i // 2) % 4
        eps = 0.5 if i % 4 < 2 else 0.1
        j = 1 + int(rng.integers(0, d))
        mats = []
        for k in range(n):
            rank = d - 1 if rng.random() < 0.3 else d
            mats.append(_random_rank(rng, d, rank))
        if i == 0:
            mats[0] = np.zeros((d, d))
        rep = estimate_bad_block_cost(mats, eps, j, n_samples, rng=rng)
        out.append({"d": d, "n": n, "j": j, "epsilon": eps, **rep.to_dict()})
    return out


def glue_battery(n_triples: int = 20, n_samples: int = 10_000, seed: int = 5,
                 epsilon_list=(1e-1, 1e-2, 1e-3, 1e-4)) -> list:
    """Triples (L, A, R) in d = 3, j = 2 with rank-2 L and R and rank-deficient A."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_triples):
        L = _random_rank(rng, 3, 2)
        R = _random_rank(rng, 3, 2)
        A = _random_rank(rng, 3, i % 4) if i % 4 else np.zeros((3, 3))
        fit = estimate_glue_cost(L, A, R, 2, epsilon_list, n_samples, rng=rng)
        out.append(fit)
    return out
