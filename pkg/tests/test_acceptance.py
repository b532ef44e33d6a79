"""Acceptance criteria 1-10, each at its stated tolerance and time budget.

Every criterion prints one line ``C<k> PASS|FAIL <detail>``; run with
``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
"""

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cocyclestab import bounds, experiments as ex, grassmann as gr, oseledets as ose, zoo  # noqa: E402
from cocyclestab.errors import ChartEscape  # noqa: E402
from cocyclestab.geometry import Subspace, angle, perp  # noqa: E402

import oracles  # noqa: E402

EPS_GRID = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
BERN = "invertible_bernoulli"


def rand_sub(rng, d, k):
    return Subspace(oracles.orthonormal(rng, d, k))


def nonincreasing_within(values, ses, k=2.0):
    """Each step may rise by at most k standard errors of the difference."""
    return all(b <= a + k * math.hypot(sa, sb) for a, b, sa, sb in zip(values, values[1:], ses, ses[1:]))


# --------------------------------------------------------------------------


def c1():
    t = time.perf_counter()
    b = bounds.compute_constant_B()
    dt = time.perf_counter() - t
    _, b_oracle = oracles.fixed_point_constant()
    ok = abs(b + 1.2785) <= 1e-3 and abs(b - b_oracle) <= 1e-6 and dt < 1.0
    return ok, f"B={b:.10f} oracle={b_oracle:.10f} time={dt:.3f}s", dt


def c2():
    t = time.perf_counter()
    batteries = {"linear": bounds.linear_battery(200), "poly": bounds.poly_battery(50),
                 "operator": bounds.operator_battery(50), "magic": bounds.magic_battery(100)}
    dt = time.perf_counter() - t
    fails = {k: sum(not r.passed for r in v) for k, v in batteries.items()}
    sizes = {k: len(v) for k, v in batteries.items()}
    ok = sum(fails.values()) == 0 and dt < 120
    return ok, f"sizes={sizes} violations={fails} time={dt:.1f}s", dt


def c3():
    t = time.perf_counter()
    bad = bounds.bad_block_battery(20, 10_000)
    glue = bounds.glue_battery(20, 10_000)
    dt = time.perf_counter() - t
    bad_fail = sum(not r["passed"] for r in bad)
    glue_fail = sum(not g.passed for g in glue)
    worst = min(min(g.residuals) for g in glue)
    k_max = max(g.K for g in glue)
    ok = len(bad) == 20 and len(glue) == 20 and bad_fail == 0 and glue_fail == 0 and dt < 300
    return ok, (f"bad-block {len(bad) - bad_fail}/{len(bad)} pass, glue {len(glue) - glue_fail}/{len(glue)} "
                f"pass (K max {k_max:.3g}, lowest residual {worst:.2f} SE) time={dt:.1f}s"), dt


def c4():
    rng = np.random.default_rng(2024)
    t = time.perf_counter()
    perp_err = 0.0
    for _ in range(100):
        d = int(rng.integers(2, 6))
        u, w = rand_sub(rng, d, int(rng.integers(1, 3))), rand_sub(rng, d, int(rng.integers(1, 3)))
        perp_err = max(perp_err, abs(perp(u, w) - oracles.perp_grid(u.basis, w.basis)))
    ang_err = 0.0
    for _ in range(50):
        d = int(rng.integers(2, 5))
        k = int(rng.integers(1, min(2, d - 1) + 1))
        u, v = rand_sub(rng, d, k), rand_sub(rng, d, k)
        ang_err = max(ang_err, abs(angle(u, v) - oracles.hausdorff_unit_balls(u.basis, v.basis)))
    chart_err = 0.0
    for _ in range(1000):
        c = gr.Chart.from_frame(oracles.orthonormal(rng, 5, 5), 2)
        bm = gr.ChartMatrix(rng.standard_normal((3, 2)) * 10 ** rng.uniform(-2, 2), c)
        chart_err = max(chart_err, abs(gr.perp_from_chart(bm) - perp(gr.from_chart(bm), c.slow)))
    dt = time.perf_counter() - t
    ok = perp_err <= 1e-3 and ang_err <= 1e-3 and chart_err <= 1e-8 and dt < 60
    return ok, (f"perp-vs-grid {perp_err:.2e}, angle-vs-Hausdorff {ang_err:.2e}, "
                f"chart-perp {chart_err:.2e}, time={dt:.1f}s"), dt


def c5():
    rng = np.random.default_rng(5)
    t = time.perf_counter()
    std = gr.Chart.standard(5, 2)
    flt_err, escapes = 0.0, 0
    for _ in range(1000):
        tr = gr.BlockTransfer.from_matrix(rng.standard_normal((5, 5)), 2)
        b0 = rng.standard_normal((3, 2))
        try:
            b1 = gr.flt_apply(tr, b0)
        except ChartEscape:
            escapes += 1
            continue
        image = Subspace.span(tr.assembled() @ np.vstack([np.eye(2), b0]))
        flt_err = max(flt_err, angle(gr.from_chart(gr.ChartMatrix(b1, std)), image))
    schur_err = 0.0
    for _ in range(200):
        chain = []
        for _ in range(4):
            p = oracles.orthonormal(rng, 5, 5)
            r = np.diag(np.sort(rng.uniform(0.1, 3.0, 5))[::-1])
            chain.append(gr.BlockTransfer.from_matrix(p @ r, 2))
        for e, cum in zip(gr.schur_recursion(chain), gr.cumulative(chain)):
            direct = gr.schur_complement(cum)
            schur_err = max(schur_err, np.abs(e - direct).max() / max(1.0, np.abs(direct).max()))
    dt = time.perf_counter() - t
    ok = flt_err <= 1e-8 and schur_err <= 1e-8 and escapes < 1000 and dt < 60
    return ok, f"FLT angle {flt_err:.2e} ({escapes} escapes), Schur {schur_err:.2e}, time={dt:.1f}s", dt


def c6():
    t = time.perf_counter()
    ln2 = math.log(2)
    diag = ose.estimate_spectrum(zoo.get("constant_diagonal"), 0, 1000)
    jordan = ose.estimate_spectrum(zoo.get("jordan"), 0, 1000)
    lln = ose.estimate_spectrum(zoo.get("commuting_diagonal"), 0, 10_000)
    dt = time.perf_counter() - t
    e_diag = max(abs(diag.exponents[0] - ln2), abs(diag.exponents[1] + ln2))
    e_jordan = max(abs(x) for x in jordan.exponents)
    z = max(abs(mu - ln2 / 2) / se for mu, se in zip(lln.exponents, lln.stderr))
    ok = e_diag <= 1e-10 and e_jordan <= 1e-10 and z <= 3
    return ok, f"diag err {e_diag:.1e}, Jordan err {e_jordan:.1e}, LLN max |z| {z:.2f}, time={dt:.1f}s", dt


def showcase_cfg(**kw):
    return ex.ExperimentConfig(zoo.ZOO["showcase"](), epsilon_list=EPS_GRID, n_trials=200, **kw)


def c7():
    t = time.perf_counter()
    table = ex.run_exponent_convergence(showcase_cfg())
    dt = time.perf_counter() - t
    ok = dt < 600
    parts = []
    for i in (1, 2):
        rows = [table.select(index=i, epsilon=e)[0] for e in EPS_GRID]
        errs = [r["abs_error"] for r in rows]
        ses = [r["stderr"] for r in rows]
        mono = nonincreasing_within(errs, ses)
        ok &= mono and errs[-1] < 0.05
        parts.append(f"mu{i} errs " + " ".join(f"{x:.1e}" for x in errs) + f" monotone={mono}")
    slope = table.summary["slopes"].get(3, math.nan)
    ok &= 0.7 <= slope <= 1.3
    return ok, "; ".join(parts) + f"; mu3 slope {slope:.3f}; time={dt:.1f}s", dt


def c8():
    t = time.perf_counter()
    table = ex.run_space_convergence(showcase_cfg())
    dt = time.perf_counter() - t
    ok = dt < 600
    parts = []
    for lab in ("F1", "Y2"):
        rows = [table.select(index=lab, epsilon=e)[0] for e in EPS_GRID]
        ps = [r["estimate"] for r in rows]
        mono = nonincreasing_within(ps, [r["stderr"] for r in rows])
        halved = ps[-1] <= ps[0] / 2
        ok &= mono and halved
        parts.append(f"{lab} P " + " ".join(f"{p:.3f}" for p in ps) + f" monotone={mono} halved={halved}")
    return ok, "; ".join(parts) + f"; time={dt:.1f}s", dt


def c9():
    t = time.perf_counter()
    rep = ex.run_grassmann_conditional(showcase_cfg())
    dt = time.perf_counter() - t
    rows = [r for r in rep["rows"] if r["epsilon"] > 0]
    errors = [r for r in rows if "error" in r]
    agree = max((r["max_chart_direct_angle"] for r in rows if "error" not in r), default=math.nan)
    esc = max(r["escape_rate"] for r in rows if r["epsilon"] <= 1e-2 and "error" not in r)
    ok = not errors and agree <= 1e-6 and esc < 0.05
    return ok, f"chart-vs-direct max angle {agree:.2e}, max escape rate (eps<=1e-2) {esc:.3f}, time={dt:.1f}s", dt


def c10():
    t = time.perf_counter()
    sys_ = zoo.get(BERN)
    dual = sys_.dual()
    dual_err = 0.0
    for omega in (0, 500, 2024):
        for j in range(1, sys_.d):
            fast = ose.fast_space(sys_, omega, j, 400)
            dual_err = max(dual_err, angle(fast, ose.slow_space(dual, omega, j, 400).complement()))
    eq_err = 0.0
    for omega in (10, 600, 3000):
        a = ose.splitting(sys_, omega, 400)
        b = ose.splitting(sys_, sys_.shift(omega), 400)
        for ya, yb in zip(a.components, b.components):
            eq_err = max(eq_err, angle(Subspace.span(sys_.matrix(omega) @ ya.basis), yb))
    dt = time.perf_counter() - t
    ok = dual_err <= 1e-3 and eq_err <= 1e-3
    return ok, f"duality {dual_err:.2e}, Y_i equivariance {eq_err:.2e}, time={dt:.1f}s", dt


CRITERIA = {1: c1, 2: c2, 3: c3, 4: c4, 5: c5, 6: c6, 7: c7, 8: c8, 9: c9, 10: c10}


def report(k):
    ok, detail, _ = CRITERIA[k]()
    return ok, f"C{k} {'PASS' if ok else 'FAIL'} {detail}"


@pytest.mark.slow
@pytest.mark.parametrize("k", sorted(CRITERIA))
def test_criterion(k, capsys):
    ok, line = report(k)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = [report(k) for k in sorted(CRITERIA)]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
