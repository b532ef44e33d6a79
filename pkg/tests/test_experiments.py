import csv
import io
import json
import math

import numpy as np
import pytest

from cocyclestab import experiments as ex
from cocyclestab import zoo
from cocyclestab.errors import ConfigError, DegenerateGap


def small(name="showcase", **kw):
    base = dict(epsilon_list=(1e-1, 1e-2), n_trials=30, horizon=200, space_horizon=30,
                n_blocks=2, block_length=6, census_lengths=(1, 8))
    base.update(kw)
    return ex.ExperimentConfig(zoo.ZOO[name](), **base)


@pytest.fixture(scope="module")
def exponents():
    return ex.run_exponent_convergence(small())


@pytest.fixture(scope="module")
def spaces():
    return ex.run_space_convergence(small())


# -- config ---------------------------------------------------------------


@pytest.mark.parametrize("kw", [
    {"epsilon_list": ()},
    {"epsilon_list": (1e-2, 1e-1)},
    {"epsilon_list": (1e-1, 1e-1)},
    {"epsilon_list": (1.5, 1e-1)},
    {"epsilon_list": (1e-1, 0.0)},
    {"n_trials": 29},
    {"chi": 0.0},
    {"chi": 1.0},
    {"j_index": 3},
    {"j_index": 0},
    {"horizon": 0},
])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        small(**kw)


def test_config_round_trip():
    cfg = small()
    d = cfg.to_dict()
    assert ex.ExperimentConfig(**d) == cfg
    assert json.loads(json.dumps(d)) == d


# -- output formats -------------------------------------------------------


def test_format_csv():
    assert ex.format_csv(-math.inf) == "-inf"
    assert ex.format_csv(0.1) == "0.1"
    assert ex.format_csv(1 / 3) == "0.333333333333"
    assert ex.format_csv(7) == "7"


def test_json_flags_non_finite_values():
    row = ex._encode_row({"estimate": -math.inf, "stderr": math.nan, "n_trials": 5})
    assert row == {"estimate": None, "estimate_flag": "-inf", "stderr": None, "stderr_flag": "nan",
                   "n_trials": 5}
    assert ex.dumps({"x": ex.json_safe(np.float64(0.1))}) == '{\n  "x": 0.1\n}\n'


def test_spec_hash_is_git_blob_sha1():
    # git hash-object of the bytes '{}' is 9e26dfeeb6e641a33dae4961196235bdb965b21b
    assert ex.spec_hash({}) == "9e26dfeeb6e641a33dae4961196235bdb965b21b"
    assert ex.spec_hash({"a": 1, "b": 2}) == ex.spec_hash({"b": 2, "a": 1})


def test_trial_seeds_are_order_free():
    fwd = [ex.trial_seed(4, t) for t in range(10)]
    assert fwd[::-1] == [ex.trial_seed(4, t) for t in reversed(range(10))]
    assert len(set(fwd)) == 10
    assert ex.trial_seed(4, 0, 1) != ex.trial_seed(4, 0, 2)


# -- exponent convergence -------------------------------------------------


def test_exponent_table_shape(exponents):
    rows = exponents.rows
    cfg = small()
    assert len(rows) == 3 * (len(cfg.epsilon_list) + 1)
    for r in rows:
        assert r["n_trials"] == cfg.n_trials
        assert "stderr" in r
    reader = list(csv.reader(io.StringIO(exponents.to_csv())))
    assert tuple(reader[0]) == ex.CSV_COLUMNS
    assert len(reader) == len(rows) + 1
    assert ["0", "3", "-inf", "nan", "30", "neg_inf"] == reader[3]


def test_row_count_without_zero_row():
    t = ex.run_exponent_convergence(small(include_zero=False))
    for i in (1, 2, 3):
        assert len(t.select(index=i)) == 2


def test_zero_noise_row_matches_reference(exponents):
    for r in exponents.select(epsilon=0.0):
        if math.isfinite(r["estimate"]):
            assert r["abs_error"] <= 2 * r["stderr"]
        else:
            assert r["reference"] == -math.inf


def test_neg_inf_exponent_is_restored_by_noise(exponents):
    assert exponents.select(epsilon=0.0, index=3)[0]["estimate"] == -math.inf
    for eps in (1e-1, 1e-2):
        assert math.isfinite(exponents.select(epsilon=eps, index=3)[0]["estimate"])
    assert 0.7 <= exponents.summary["slopes"][3] <= 1.3


def test_json_envelope(exponents):
    cfg = small()
    doc = json.loads(ex.dumps(ex.envelope(cfg, exponents.to_dict())))
    assert doc["cocycle_sha1"] == ex.spec_hash(cfg.cocycle)
    assert doc["config"]["n_trials"] == 30
    row = next(r for r in doc["result"]["rows"] if r["index"] == 3 and r["epsilon"] == 0)
    assert row["estimate"] is None and row["estimate_flag"] == "-inf"


def test_reproducible_bytes():
    a = ex.run_exponent_convergence(small())
    b = ex.run_exponent_convergence(small(workers=3))
    assert a.to_csv() == b.to_csv()
    assert ex.dumps(a.to_dict()) == ex.dumps(b.to_dict())
    g1 = ex.dumps(ex.run_grassmann_conditional(small()))
    g2 = ex.dumps(ex.run_grassmann_conditional(small()))
    assert g1 == g2


def test_seed_changes_results():
    a = ex.run_exponent_convergence(small(seed=1))
    assert a.to_csv() != ex.run_exponent_convergence(small(seed=2)).to_csv()


@pytest.mark.parametrize("c", [0.5, 4.0])
def test_scaling_with_co_scaled_noise(c):
    cfg = small(epsilon_list=(2e-2, 2e-3), include_zero=False)
    scaled = zoo.get("showcase").scaled(c).to_dict()
    cfg_c = small(epsilon_list=tuple(c * e for e in cfg.epsilon_list), include_zero=False)
    cfg_c = ex.with_overrides(cfg_c, cocycle=scaled)
    a = ex.run_exponent_convergence(cfg)
    b = ex.run_exponent_convergence(cfg_c)
    for ra, rb in zip(a.rows, b.rows):
        assert ra["index"] == rb["index"]
        shift = rb["estimate"] - ra["estimate"]
        assert abs(shift - math.log(c)) <= 3 * math.hypot(ra["stderr"], rb["stderr"])
        # common random numbers make the shift exact up to roundoff
        assert shift == pytest.approx(math.log(c), abs=1e-9)


def test_unresolved_window_raises():
    with pytest.raises(DegenerateGap):
        ex.run_exponent_convergence(small(tau=1e-6))


def test_tied_reference_exponents_are_grouped():
    cfg = small("commuting_diagonal")
    ref, mu = ex.reference_spectrum(cfg.system(), ex.trial_states(cfg.system(), 0, 30), 200)
    assert ref.grouped[0][1] == 2
    # sorting biases the mean gap well beyond the standard error
    assert ref.exponents[0] - ref.exponents[1] > 6 * max(ref.stderr)


# -- space convergence ----------------------------------------------------


def test_space_table(spaces):
    cfg = small()
    assert {r["index"] for r in spaces.rows} == {"F1", "Y2"}
    for lab in ("F1", "Y2"):
        assert len(spaces.select(index=lab)) == len(cfg.epsilon_list) + 1
    for r in spaces.rows:
        assert 0.0 <= r["estimate"] <= 1.0
        assert r["n_trials"] == cfg.n_trials and r["stderr"] > 0
        assert r["max_angle"] <= 1.0 + 1e-12


def test_space_zero_noise_floor():
    t = ex.run_space_convergence(small(space_horizon=100, epsilon_list=(1e-2,)))
    for r in t.select(epsilon=0.0):
        assert r["median_angle"] < 1e-3


def test_space_bad_index():
    with pytest.raises(DegenerateGap):
        ex.run_space_convergence(small("commuting_diagonal", j_index=1))


# -- Grassmann and census -------------------------------------------------


def test_grassmann_chart_matches_direct():
    rep = ex.run_grassmann_conditional(small())
    assert [r["epsilon"] for r in rep["rows"]] == [0.0, 1e-1, 1e-2]
    for r in rep["rows"]:
        assert r["kept"] + r["escapes"] == r["n_trials"]
        assert r["max_chart_direct_angle"] <= 1e-6


def test_grassmann_zero_noise_is_deterministic():
    rep = ex.run_grassmann_conditional(small())
    r0 = rep["rows"][0]
    # with no noise every resample yields the same B_n
    lo, hi = r0["norm_B_quartiles"]
    assert hi - lo <= 1e-9 * max(1.0, hi)
    assert r0["mean_norm_B"] == pytest.approx(r0["median_norm_B"], rel=1e-12)
    assert r0["frac_angle_above_chi_stderr"] > 0


def test_good_block_census():
    rep = ex.run_good_block_census(small("invertible_bernoulli", census_lengths=(1, 4, 64)))
    freq = [r["frequency"] for r in rep["rows"]]
    assert freq[0] < 0.05 and freq[-1] > 0.9
    for r in rep["rows"]:
        assert r["n_trials"] == 30 and r["stderr"] > 0
    diag = small("constant_diagonal", census_lengths=(1, 2, 8, 16))
    rep = ex.run_good_block_census(ex.with_overrides(diag, cocycle=zoo.get("constant_diagonal").to_dict()))
    assert rep["rows"][-1]["frequency"] == 1.0
