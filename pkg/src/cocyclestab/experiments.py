"""Desk-scale stability experiments under small additive operator-ball noise.

Trials use common random numbers: trial t draws its base point and its noise
stream from (seed, t), and the same draws are reused for every epsilon, so
differences between epsilon rows reflect the perturbation size rather than
resampling.  Every estimate is reported with its trial count and standard
error.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import asdict, dataclass, field, replace
import hashlib
import io
import json
import math

import numpy as np
from scipy import stats

from . import grassmann, oseledets, products
from .cocycle import (NoiseRealization, PerturbedCocycle, block_length, block_length_constant,
                      cocycle_from_dict, noise_stream, sample_operator_ball)
from .errors import ChartEscape, ConfigError, DegenerateGap, TransversalityFailure
from .geometry import Subspace, angle

REF_FACTOR = 8
CSV_COLUMNS = ("epsilon", "index", "estimate", "stderr", "n_trials", "flag")


@dataclass(frozen=True)
class ExperimentConfig:
    cocycle: dict
    epsilon_list: tuple = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
    n_trials: int = 200
    seed: int = 0
    horizon: int = 2000          # steps per exponent estimate
    space_horizon: int = 100     # block length for fast/slow space estimates
    block_length: int | None = None  # Grassmann block length N; None means floor(C |log eps|)
    n_blocks: int = 4
    j_index: int = 1
    y_index: int = 2
    chi: float = 0.1
    tau: float | None = None
    kappa: float = 0.001
    delta: float = 0.1
    K_threshold: float = 10.0
    census_lengths: tuple = (1, 2, 4, 8, 16, 32, 64)
    include_zero: bool = True
    workers: int = 1

    def __post_init__(self):
        eps = [float(e) for e in self.epsilon_list]
        if not eps:
            raise ConfigError("epsilon_list: must not be empty")
        if any(not 0.0 < e < 1.0 for e in eps):
            raise ConfigError("epsilon_list: every value must lie in (0, 1)")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("epsilon_list: values must be strictly decreasing")
        if self.n_trials < 30:
            raise ConfigError("n_trials: must be at least 30")
        if not 0.0 < self.chi < 1.0:
            raise ConfigError("chi: must lie in (0, 1)")
        if self.horizon < 1 or self.space_horizon < 1 or self.n_blocks < 1:
            raise ConfigError("horizon, space_horizon and n_blocks must be positive")
        d = int(self.cocycle.get("d", 0)) if isinstance(self.cocycle, dict) else 0
        if not 1 <= self.j_index < max(d, 2):
            raise ConfigError(f"j_index: must lie in [1, d-1], got {self.j_index}")
        object.__setattr__(self, "epsilon_list", tuple(eps))
        object.__setattr__(self, "census_lengths", tuple(int(n) for n in self.census_lengths))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["epsilon_list"] = list(self.epsilon_list)
        out["census_lengths"] = list(self.census_lengths)
        return out

    def system(self):
        return cocycle_from_dict(self.cocycle)


# --------------------------------------------------------------------------
# Output


def spec_hash(spec: dict) -> str:
    """Git blob sha1 of the canonical JSON form of a cocycle spec."""
    data = json.dumps(spec, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def json_safe(x):
    if isinstance(x, float):
        return x if math.isfinite(x) else None
    if isinstance(x, (np.floating,)):
        return json_safe(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.ndarray):
        return json_safe(x.tolist())
    if isinstance(x, dict):
        return {str(k): json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [json_safe(v) for v in x]
    return x


def _float_flag(x) -> str | None:
    if isinstance(x, (float, np.floating)) and not math.isfinite(x):
        return "-inf" if x < 0 else ("inf" if x > 0 else "nan")
    return None


def _encode_row(row: dict) -> dict:
    out = {}
    for k, v in row.items():
        flag = _float_flag(v)
        out[k] = json_safe(v)
        if flag:
            out[k + "_flag"] = flag
    return out


@dataclass
class ConvergenceTable:
    kind: str
    rows: list
    reference: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def select(self, index=None, epsilon=None) -> list:
        return [r for r in self.rows
                if (index is None or r["index"] == index) and (epsilon is None or r["epsilon"] == epsilon)]

    def column(self, key, index) -> list:
        return [r[key] for r in self.rows if r["index"] == index and r["epsilon"] > 0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([format_csv(r["epsilon"]), r["index"], format_csv(r["estimate"]),
                        format_csv(r["stderr"]), r["n_trials"], r.get("flag") or ""])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rows": [_encode_row(r) for r in self.rows],
                "reference": json_safe(self.reference), "summary": json_safe(self.summary)}


def format_csv(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(x)
    x = float(x)
    if x == -math.inf:
        return "-inf"
    return "%.12g" % x


def envelope(cfg: ExperimentConfig, result: dict, seeds: dict | None = None) -> dict:
    return {"config": json_safe(cfg.to_dict()), "seeds": seeds or {"seed": cfg.seed},
            "cocycle_sha1": spec_hash(cfg.cocycle), "result": json_safe(result)}


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


# --------------------------------------------------------------------------
# Trial streams


def trial_seed(seed: int, t: int, stream: int = 0) -> int:
    """Independent 63-bit seed for trial t, computable out of order."""
    return int(np.random.SeedSequence([seed, stream, t]).generate_state(1, np.uint64)[0] >> 1)


def trial_states(sys, seed: int, n_trials: int) -> list:
    return [sys.sample_state(np.random.default_rng(trial_seed(seed, t, 1))) for t in range(n_trials)]


def noise_seeds(seed: int, n_trials: int) -> list:
    return [trial_seed(seed, t, 2) for t in range(n_trials)]


def factor_batch(sys, states, seeds, epsilon: float, k0: int, n: int) -> np.ndarray:
    """Perturbed factors at times k0 .. k0+n-1 for every trial, shape (T, n, d, d)."""
    out = np.empty((len(states), n, sys.d, sys.d))
    for t, (om, s) in enumerate(zip(states, seeds)):
        base = sys.matrices(sys.shift(om, k0) if k0 else om, n)
        out[t] = base if epsilon == 0 else base + epsilon * noise_stream(s, sys.d, k0, k0 + n)
    return out


def _map(cfg, fn, items):
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _epsilons(cfg) -> list:
    return ([0.0] if cfg.include_zero else []) + list(cfg.epsilon_list)


def default_tau(spectrum: oseledets.SpectrumReport) -> float:
    gaps = spectrum.finite_gaps
    return min(gaps) / 12.0 if gaps else math.nan


# --------------------------------------------------------------------------
# Exponents


def _trial_exponents(factors, renorm_every: int = 10) -> np.ndarray:
    """Per-trial exponents, each sorted descending; -inf below the rate floor."""
    pivots, lengths, _ = oseledets.qr_log_pivots(factors, renorm_every)
    mu = pivots.sum(axis=-2) / lengths.sum()
    mu = np.where(mu < oseledets.NEG_INF_RATE, -np.inf, mu)
    return -np.sort(-mu, axis=-1)


def _mean_se(x) -> tuple:
    x = np.asarray(x, dtype=float)
    if np.any(np.isneginf(x)):
        return -math.inf, math.nan
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def reference_spectrum(sys, states, horizon: int) -> tuple:
    """Trial-averaged unperturbed spectrum at REF_FACTOR times the horizon.

    Grouping uses the per-trial spread, not the standard error of the mean:
    sorting each trial's exponents biases the mean gap between tied
    exponents by about one per-trial deviation, which the standard error
    would report as a real gap once the trial count is large.
    """
    n_ref = REF_FACTOR * horizon
    mu = _trial_exponents(factor_batch(sys, states, [0] * len(states), 0.0, 0, n_ref))
    means, ses = zip(*(_mean_se(mu[:, i]) for i in range(sys.d)))
    sds = [s * math.sqrt(len(states)) for s in ses]
    tol = oseledets.default_group_tol(list(means), [s for s in sds if math.isfinite(s)])
    grouped = oseledets.group_exponents(list(means), tol)
    return oseledets.SpectrumReport(list(means), grouped, n_ref, list(ses)), mu


def check_window(ref: oseledets.SpectrumReport, tau: float) -> None:
    """The exponent window must be wider than the reference resolution."""
    se_max = max((s for s in ref.stderr if math.isfinite(s)), default=0.0)
    if math.isfinite(tau) and tau < 3 * se_max:
        raise DegenerateGap(0, tau, f"window half-width {tau:.3g} is below 3 reference stderr "
                            f"({se_max:.3g}); the reference gaps are not resolved")


def run_exponent_convergence(cfg: ExperimentConfig) -> ConvergenceTable:
    sys = cfg.system()
    states = trial_states(sys, cfg.seed, cfg.n_trials)
    seeds = noise_seeds(cfg.seed, cfg.n_trials)
    ref, _ = reference_spectrum(sys, states, cfg.horizon)
    tau = cfg.tau if cfg.tau is not None else default_tau(ref)
    check_window(ref, tau)

    def one(eps):
        return eps, _trial_exponents(factor_batch(sys, states, seeds, eps, 0, cfg.horizon))

    results = dict(_map(cfg, one, _epsilons(cfg)))
    base = results.get(0.0)
    rows = []
    for eps, mu in results.items():
        for i in range(sys.d):
            est, se = _mean_se(mu[:, i])
            ref_i = ref.exponents[i]
            err = abs(est - ref_i) if math.isfinite(est) and math.isfinite(ref_i) else (
                0.0 if est == ref_i else math.inf)
            row = {"epsilon": eps, "index": i + 1, "estimate": est, "stderr": se,
                   "n_trials": cfg.n_trials, "abs_error": err, "reference": ref_i,
                   "flag": "neg_inf" if est == -math.inf else ""}
            if base is not None and eps > 0 and np.all(np.isfinite(base[:, i])):
                diff = mu[:, i] - base[:, i]
                row["paired_shift"], row["paired_stderr"] = _mean_se(diff)
            if math.isfinite(tau) and math.isfinite(est) and math.isfinite(ref_i):
                row["window_margin"] = tau - err
            rows.append(row)

    summary = {"tau": tau, "trend": {}, "slopes": {}}
    pos = sorted((e for e in results if e > 0), reverse=True)
    for i in range(sys.d):
        errs = [next(r["abs_error"] for r in rows if r["epsilon"] == e and r["index"] == i + 1) for e in pos]
        if len(pos) >= 3 and all(math.isfinite(x) for x in errs):
            rho = stats.spearmanr(pos, errs).statistic
            summary["trend"][i + 1] = float(rho)
        ests = [next(r["estimate"] for r in rows if r["epsilon"] == e and r["index"] == i + 1) for e in pos]
        if ref.exponents[i] == -math.inf and all(math.isfinite(x) for x in ests) and len(pos) >= 2:
            slope = np.polyfit(np.log(pos), ests, 1)[0]
            summary["slopes"][i + 1] = float(slope)
    reference = ref.to_dict()
    reference["trials"] = cfg.n_trials
    return ConvergenceTable("exponents", rows, reference, summary)


# --------------------------------------------------------------------------
# Spaces


def _binom_se(p, n) -> float:
    """Binomial standard error, floored at the resolution 1/n."""
    if not n or not math.isfinite(p):
        return math.nan
    return math.sqrt(max(p * (1 - p), 1.0 / n) / n)


def _prob_row(eps, label, angles, chi, n_trials, failures=0):
    a = np.asarray(angles, dtype=float)
    p = float(np.mean(a > chi))
    se = _binom_se(p, n_trials)
    return {"epsilon": eps, "index": label, "estimate": p, "stderr": se, "n_trials": n_trials,
            "mean_angle": float(a.mean()), "median_angle": float(np.median(a)),
            "max_angle": float(a.max()), "failures": failures,
            "flag": "transversality" if failures else ""}


def _components(fast_frames, slow_frames, boundaries, y_index):
    """Y_{y_index} per trial; None where the fast/slow pair nearly intersects."""
    out = []
    for t in range(fast_frames[boundaries[0]].shape[0]):
        fast = {j: Subspace(fast_frames[j][t]) for j in boundaries}
        slow = {j: Subspace(slow_frames[j][t]) for j in boundaries}
        try:
            comps, _ = oseledets.components_from_spaces(fast, slow, boundaries)
            out.append(comps[y_index - 1])
        except TransversalityFailure:
            out.append(None)
    return out


def run_space_convergence(cfg: ExperimentConfig) -> ConvergenceTable:
    """P(angle(perturbed space, reference space) > chi) per epsilon for F_j and Y_i."""
    sys = cfg.system()
    j, n = cfg.j_index, cfg.space_horizon
    states = trial_states(sys, cfg.seed, cfg.n_trials)
    seeds = noise_seeds(cfg.seed, cfg.n_trials)
    zero = [0] * cfg.n_trials
    ref_spec, _ = reference_spectrum(sys, states, cfg.horizon)
    boundaries = ref_spec.boundaries[:-1]
    if j not in boundaries:
        raise DegenerateGap(j, math.nan, f"index {j} is not a spectral boundary {boundaries}")
    n_ref = REF_FACTOR * n

    # Reference spaces, unperturbed, at 8x resolution.
    all_j = sorted(set(boundaries) | {j})
    ref_fast = {}
    ref_slow = {}
    r_b = products.product_svd(factor_batch(sys, states, zero, 0.0, -n_ref, n_ref))
    r_f = products.product_svd(factor_batch(sys, states, zero, 0.0, 0, n_ref))
    for b in all_j:
        ref_fast[b] = r_b.u[..., :, :b]
        ref_slow[b] = r_f.v[..., :, b:]
    ref_f = [Subspace(ref_fast[j][t]) for t in range(cfg.n_trials)]
    y_ok = 1 < cfg.y_index <= len(boundaries) + 1
    ref_y = _components(ref_fast, ref_slow, boundaries, cfg.y_index) if y_ok else None

    def one(eps):
        rb = products.product_svd(factor_batch(sys, states, seeds, eps, -n, n))
        rf = products.product_svd(factor_batch(sys, states, seeds, eps, 0, n))
        fast = {b: rb.u[..., :, :b] for b in all_j}
        slow = {b: rf.v[..., :, b:] for b in all_j}
        out = []
        ang = [angle(Subspace(fast[j][t]), ref_f[t]) for t in range(cfg.n_trials)]
        out.append(_prob_row(eps, f"F{j}", ang, cfg.chi, cfg.n_trials))
        if y_ok:
            ys = _components(fast, slow, boundaries, cfg.y_index)
            fails = 0
            ang_y = []
            for y, yr in zip(ys, ref_y):
                if y is None or yr is None:
                    fails += 1
                    ang_y.append(1.0)
                else:
                    ang_y.append(angle(y, yr))
            out.append(_prob_row(eps, f"Y{cfg.y_index}", ang_y, cfg.chi, cfg.n_trials, fails))
        return out

    rows = [r for block in _map(cfg, one, _epsilons(cfg)) for r in block]
    labels = sorted({r["index"] for r in rows})
    summary = {"boundaries": boundaries, "space_horizon": n, "reference_horizon": n_ref,
               "trend": {}}
    for lab in labels:
        ps = [(r["epsilon"], r["estimate"]) for r in rows if r["index"] == lab and r["epsilon"] > 0]
        if len(ps) >= 3:
            summary["trend"][lab] = float(stats.spearmanr([e for e, _ in ps], [p for _, p in ps]).statistic)
    return ConvergenceTable("spaces", rows, {"spectrum": ref_spec.to_dict()}, summary)


# --------------------------------------------------------------------------
# Conditional Grassmannian experiment


def grassmann_block_length(cfg: ExperimentConfig, sys, eps: float, c: float | None) -> int:
    if cfg.block_length is not None:
        return int(cfg.block_length)
    # The unperturbed row borrows the block length of the smallest epsilon.
    return block_length(eps if eps > 0 else min(cfg.epsilon_list), c)


def run_grassmann_conditional(cfg: ExperimentConfig) -> dict:
    """Freeze the base point and every perturbation except the one at time -1.

    For each epsilon, Delta_{-1} is resampled ``n_trials`` times; B_0 is pushed
    through the transfer chain of the fixed perturbed blocks and compared with
    direct evolution of the subspace.
    """
    sys = cfg.system()
    j, d = cfg.j_index, sys.d
    rng0 = np.random.default_rng(trial_seed(cfg.seed, 0, 3))
    omega = sys.sample_state(rng0)
    base_seed = trial_seed(cfg.seed, 0, 4)
    c = None if cfg.block_length is not None else block_length_constant(sys, omega)
    n_back = cfg.space_horizon
    a_prev = sys.matrix(sys.shift(omega, -1))

    def one(eps):
        N = grassmann_block_length(cfg, sys, eps, c)
        n_blocks = cfg.n_blocks
        horizon = n_blocks * N
        noise = NoiseRealization.generate(eps, d, base_seed, -n_back - 1, (n_blocks + 1) * N)
        pc = PerturbedCocycle(sys, noise, omega)
        v_prev = oseledets.fast_space(pc, -1, j, n_back, gap_tol=None)
        ref = oseledets.fast_space(sys, sys.shift(omega, horizon), j, REF_FACTOR * max(n_back, horizon),
                                   gap_tol=None)
        try:
            chain = grassmann.build_transfer_chain(sys, noise, omega, N, n_blocks, j)
        except DegenerateGap as exc:
            return {"epsilon": eps, "N": N, "error": str(exc)}
        cum = grassmann.cumulative(chain.transfers)[-1]
        det_part = np.linalg.solve(cum.W.T, cum.Y.T).T
        schur = grassmann.schur_complement(cum)

        # Delta_{-1} draws are shared across epsilon rows.
        deltas = sample_operator_ball(np.random.default_rng(trial_seed(cfg.seed, 0, 5)), d, cfg.n_trials)
        tail = pc.matrices(0, horizon)
        direct_factors = np.concatenate([np.broadcast_to(a_prev + eps * deltas[:, None], (cfg.n_trials, 1, d, d)),
                                         np.broadcast_to(tail, (cfg.n_trials,) + tail.shape)], axis=1)
        q, _ = products.sweep(direct_factors, np.broadcast_to(v_prev.basis, (cfg.n_trials, d, j)))

        norms, rand_norms, ang_ref, agree, escapes = [], [], [], [], 0
        for t in range(cfg.n_trials):
            try:
                b0 = grassmann.b0_from_perturbation(a_prev, deltas[t], eps, v_prev, chain.charts[0])
                bn = chain.apply(b0)
            except ChartEscape:
                escapes += 1
                continue
            v_chain = grassmann.from_chart(bn)
            agree.append(angle(v_chain, Subspace(q[t])))
            ang_ref.append(angle(v_chain, ref))
            norms.append(bn.norm())
            rand_norms.append(float(np.linalg.norm(bn.B - det_part, 2)))
        kept = len(norms)
        big = 3.0 / cfg.delta
        frac_big = float(np.mean(np.array(norms) > big)) if kept else math.nan
        frac_far = float(np.mean(np.array(ang_ref) > cfg.chi)) if kept else math.nan
        out = {
            "epsilon": eps, "N": N, "n_blocks": n_blocks, "n_trials": cfg.n_trials,
            "escapes": escapes, "escape_rate": escapes / cfg.n_trials, "kept": kept,
            "max_chart_direct_angle": max(agree) if agree else math.nan,
            "median_norm_B": float(np.median(norms)) if kept else math.nan,
            "mean_norm_B": float(np.mean(norms)) if kept else math.nan,
            "norm_B_quartiles": np.quantile(norms, [0.25, 0.75]).tolist() if kept else None,
            "frac_norm_B_large": frac_big,
            "frac_norm_B_large_stderr": _binom_se(frac_big, kept),
            "norm_threshold": big,
            "median_random_part": float(np.median(rand_norms)) if kept else math.nan,
            "deterministic_part_norm": float(np.linalg.norm(det_part, 2)),
            "schur_norm": float(np.linalg.norm(schur, 2)),
            "median_angle_to_reference": float(np.median(ang_ref)) if kept else math.nan,
            "frac_angle_above_chi": frac_far,
            "frac_angle_above_chi_stderr": _binom_se(frac_far, kept),
            "growth_domination": grassmann.growth_domination(chain.transfers),
        }
        return out

    rows = _map(cfg, one, _epsilons(cfg))
    return {"kind": "grassmann", "omega": json_safe(omega), "j": j, "rows": rows}


# --------------------------------------------------------------------------
# Good blocks


def run_good_block_census(cfg: ExperimentConfig) -> dict:
    sys = cfg.system()
    states = trial_states(sys, cfg.seed, cfg.n_trials)
    j = cfg.j_index

    def one(N):
        res = oseledets.classify_good_blocks(sys, states, N, cfg.kappa, cfg.delta, cfg.K_threshold, j)
        good = np.array([r.good for r in res], dtype=float)
        p = float(good.mean())
        cond_rates = {k: float(np.mean([r.conditions[k] for r in res])) for k in "abcd"}
        return {"N": N, "frequency": p, "stderr": _binom_se(p, len(res)),
                "n_trials": len(res), "condition_rates": cond_rates}

    rows = _map(cfg, one, list(cfg.census_lengths))
    return {"kind": "good_blocks", "j": j, "kappa": cfg.kappa, "delta": cfg.delta,
            "K_threshold": cfg.K_threshold, "rows": rows}


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **kw)
