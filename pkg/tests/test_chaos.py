import numpy as np
import pytest

from chaoskit import chaos, jumps, oracle
from chaoskit.chaos import (ChaosReport, REPORT_COLUMNS, fit_loglog,
                            fournier_guillin_beta, girsanov_entropy_rhs,
                            hs_block_bound_check, linear_drift_model,
                            omega_estimates, split_half_floor, sweep,
                            toy_linear_d2_check)
from chaoskit.core import DiffusionModel, RngStream
from chaoskit.mckean import nonlinear_reference
from chaoskit.metrics import get_kernel, tent_family

ROOT = RngStream(515)


# ---------------------------------------------------------------------------
# Slope fitting and noise floors
# ---------------------------------------------------------------------------

def test_fit_loglog_recovers_exact_power_law():
    ns = [10, 100, 1000, 10000]
    values = [np.full(50, float(n) ** -0.7) for n in ns]
    slope, intercept, lo, hi = fit_loglog(ns, values)
    assert abs(slope + 0.7) < 1e-12
    assert abs(intercept) < 1e-10
    assert lo <= slope <= hi


def test_fit_loglog_ci_covers_noisy_power_law():
    gen = np.random.default_rng(8)
    ns = [32, 128, 512, 2048]
    values = [float(n) ** -0.5 * (1.0 + 0.1 * gen.standard_normal(200))
              for n in ns]
    slope, _, lo, hi = fit_loglog(ns, values)
    assert lo <= -0.5 <= hi
    assert abs(slope + 0.5) < 0.05


def test_fit_loglog_rejects_nonpositive_means():
    with pytest.raises(ValueError):
        fit_loglog([10, 100], [np.zeros(5), np.ones(5)])


def test_fit_loglog_deterministic():
    ns = [10, 100]
    values = [np.random.default_rng(9).random(40) + 0.5,
              np.random.default_rng(10).random(40) * 0.1 + 0.05]
    assert fit_loglog(ns, values) == fit_loglog(ns, values)


def test_split_half_floor_zero_for_constant_sample():
    assert split_half_floor(np.full(100, 3.0)) == 0.0


def test_split_half_floor_tracks_sampling_noise():
    gen = np.random.default_rng(11)
    xs = gen.standard_normal(4000)
    ys = gen.standard_normal(4000)
    floor = split_half_floor(xs, ys)
    # same law: the full-sample distance is itself at the noise floor scale
    from chaoskit.metrics import w1_exact_1d
    assert 0 < floor < 0.2
    assert w1_exact_1d(xs[:, None], ys[:, None]) <= 3 * floor


# ---------------------------------------------------------------------------
# Reference rate curve
# ---------------------------------------------------------------------------

def test_rate_curve_high_moment_regimes():
    n = 100
    assert fournier_guillin_beta(n, 1, 1, 4) == pytest.approx(
        n ** -0.5 + n ** -0.75, rel=1e-12)
    assert fournier_guillin_beta(n, 3, 1, 4) == pytest.approx(
        n ** (-1.0 / 3.0) + n ** -0.75, rel=1e-12)
    assert fournier_guillin_beta(n, 2, 1, 4) == pytest.approx(
        n ** -0.5 * np.log(1.0 + n) + n ** -0.75, rel=1e-12)


def test_rate_curve_boundary_exclusions():
    with pytest.raises(ValueError):
        fournier_guillin_beta(100, 1, 1, 1)  # q <= p
    with pytest.raises(ValueError):
        fournier_guillin_beta(100, 1, 1, 2)  # q = 2p in the p > d/2 case
    with pytest.raises(ValueError):
        fournier_guillin_beta(100, 3, 1, 1.5)  # q = d/(d-p) in p < d/2 case


# ---------------------------------------------------------------------------
# Chaos functionals
# ---------------------------------------------------------------------------

def test_omega_estimates_requires_replicas():
    with pytest.raises(ValueError):
        omega_estimates(np.zeros((10, 4, 1)), np.zeros((100, 1)), k=2)


def test_omega_estimates_same_law_sanity():
    gen = np.random.default_rng(12)
    runs = gen.standard_normal((60, 16, 1))
    ref = gen.standard_normal((5000, 1))
    out = omega_estimates(runs, ref, k=2, p=1)
    assert set(out) == {"omega_k", "omega_n", "omega_inf"}
    assert all(v >= 0 for v in out.values())
    # i.i.d. from the limit law: the mean empirical distance is the pure
    # sampling floor, well below order one
    assert out["omega_inf"] < 0.5
    assert out["omega_k"] < out["omega_n"] * 1.5 + 1.0


def test_omega_estimates_deterministic():
    gen = np.random.default_rng(13)
    runs = gen.standard_normal((32, 8, 2))
    ref = gen.standard_normal((500, 2))
    assert omega_estimates(runs, ref, k=3) == omega_estimates(runs, ref, k=3)


def test_girsanov_zero_for_measure_independent_drift():
    model = DiffusionModel(drift=lambda xs, atoms: -xs, sigma=1.0)
    ref = nonlinear_reference(model, lambda g: g.standard_normal(1),
                              m_copies=64, t_final=0.25, dt=0.05,
                              picard_iters=1, root=ROOT.split(1))
    out = girsanov_entropy_rhs(model, 16, ref, 0.25, 0.05, reps=4,
                               root=ROOT.split(2))
    assert out["estimate"] == 0.0
    assert np.all(out["per_replica"] == 0.0)


def test_girsanov_requires_unit_diffusion():
    model = DiffusionModel(drift=lambda xs, atoms: -xs, sigma=0.5)
    ref = nonlinear_reference(model, lambda g: g.standard_normal(1),
                              m_copies=8, t_final=0.1, dt=0.05,
                              picard_iters=1, root=ROOT.split(3))
    with pytest.raises(ValueError):
        girsanov_entropy_rhs(model, 4, ref, 0.1, 0.05, 2, ROOT.split(4))


def test_hs_block_bound_trivial_and_random():
    kernel = get_kernel(1, 1.0)
    gen = np.random.default_rng(14)
    clouds = gen.standard_normal((50, 40, 1))
    trivial = hs_block_bound_check(clouds, 40, kernel)
    assert trivial["rhs"] == 0.0 and trivial["lhs"] == pytest.approx(0.0, abs=1e-12)
    assert trivial["pass"]
    out = hs_block_bound_check(clouds, 10, kernel)
    assert out["pass"]
    assert out["lhs"] > 0 and out["rhs"] > 0
    with pytest.raises(ValueError):
        hs_block_bound_check(clouds, 0, kernel)
    with pytest.raises(ValueError):
        hs_block_bound_check(clouds, 41, kernel)


def test_toy_linear_statistic_smoke():
    kernel = np.full((2, 2), 0.5)
    model = jumps.choose_leader_model(kernel)
    family = tent_family(-0.5, 1.5, levels=2)
    out = toy_linear_d2_check(model, ns=(16, 64), t_final=1.0, family=family,
                              root=ROOT.split(5), reps=24,
                              f_limit=np.array([0.5, 0.5]),
                              support=np.array([0.0, 1.0]))
    assert np.isfinite(out["slope"])
    assert all(np.all(v >= 0) for v in out["values"])
    # variance statistic must shrink with N
    assert np.mean(out["values"][1]) < np.mean(out["values"][0])


# ---------------------------------------------------------------------------
# Sweep driver and report
# ---------------------------------------------------------------------------

def test_sweep_validates_inputs():
    with pytest.raises(ValueError):
        sweep("iid_gauss_1d", [], 1.0, 0.1, 2, 0)
    with pytest.raises(ValueError):
        sweep("unheard_of_model", [8], 1.0, 0.1, 2, 0)


def test_sweep_iid_gauss_report_and_determinism(tmp_path):
    rep_a = sweep("iid_gauss_1d", [50, 200], 0.0, 0.0, 6, seed=77)
    rep_b = sweep("iid_gauss_1d", [50, 200], 0.0, 0.0, 6, seed=77)
    pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
    rep_a.to_csv(pa)
    rep_b.to_csv(pb)
    assert pa.read_bytes() == pb.read_bytes()
    lines = pa.read_text().splitlines()
    assert lines[0] == ",".join(REPORT_COLUMNS)
    assert len(lines) == 3
    # the same fitted slope is attached to every row
    slopes = {line.split(",")[10] for line in lines[1:]}
    assert len(slopes) == 1


def test_sweep_recollision_probability_monotone():
    rep = sweep("recollision", [20, 500], 1.0, 0.0, 300, seed=5)
    vals = [row["value"] for row in rep.rows]
    assert vals[1] < vals[0]
    assert all(0.0 <= v <= 1.0 for v in vals)


def test_report_rows_fill_missing_columns():
    rep = ChaosReport()
    rep.add(model="m", N=4, value=1.0)
    assert rep.rows[0]["metric"] == ""
    assert rep.rows[0]["N"] == 4


def test_linear_drift_model_pulls_to_mean():
    model = linear_drift_model()
    xs = np.array([[0.0], [2.0]])
    drift = model.drift(xs, xs)
    assert np.allclose(drift, [[1.0], [-1.0]])
