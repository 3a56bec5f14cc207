import numpy as np
import pytest
from scipy.stats import spearmanr

from plmx.core import ModelParams, NoiseSpec, RngStream
from plmx import field, mixing, scalar
from plmx.experiments import ou_analytic_w2
from plmx.field import InsufficientDataError


def _curve_from(times, raw, se=None):
    times = np.asarray(times, dtype=float)
    raw = np.asarray(raw, dtype=float)
    se = np.zeros_like(raw) if se is None else np.asarray(se, dtype=float)
    return mixing.DistanceCurve.build(times, raw, se, 2.0, np.zeros_like(raw))


def test_envelope_running_minimum():
    curve = _curve_from([0, 1, 2, 3], [1.0, 0.5, 0.8, 0.3])
    assert np.array_equal(curve.envelope, [1.0, 0.5, 0.5, 0.3])
    assert np.all(np.diff(curve.envelope) <= 0)


def test_mixing_time_analytic_inversion():
    t = np.linspace(0.0, 6.0, 6001)
    curve = _curve_from(t, np.exp(-t))
    tau = mixing.mixing_time(curve, np.exp(-3.0))
    assert tau == pytest.approx(3.0, abs=1e-3)


def test_mixing_time_edges():
    curve = _curve_from([0, 1, 2], [0.5, 0.3, 0.2])
    assert mixing.mixing_time(curve, 0.7) == 0.0
    assert mixing.mixing_time(curve, 0.1) is None
    with pytest.raises(ValueError):
        mixing.mixing_time(curve, 0.0)


def test_mixing_time_monotone_in_eps():
    gen = np.random.default_rng(0)
    raw = np.sort(gen.uniform(0.05, 2.0, size=40))[::-1]
    curve = _curve_from(np.linspace(0, 4, 40), raw)
    eps = np.linspace(1.5, 0.06, 25)
    taus = [mixing.mixing_time(curve, e) for e in eps]
    finite = [t for t in taus if t is not None]
    assert np.all(np.diff(finite) >= 0)


def test_fit_scaling_synthetic_families():
    eps = np.geomspace(1.0, 0.01, 12)
    fit = mixing.fit_scaling(eps, 5.0 * eps**-2.0)
    assert fit.family == "poly"
    assert fit.slope == pytest.approx(2.0, abs=1e-9)
    fit2 = mixing.fit_scaling(eps, 3.0 * np.log(1.0 / eps) + 1.0)
    assert fit2.family == "log-divergent"
    assert fit2.slope == pytest.approx(3.0, abs=1e-9)
    with pytest.raises(InsufficientDataError):
        mixing.fit_scaling([1.0, 0.5], [1.0, 2.0])


def test_theoretical_bounds_heat_value():
    # direct arithmetic double-check of the explicit p=2 bound at
    # ||x||=1, ||B||=0.1, lambda_noise=0.1, eps=0.01, c0^2 ~= pi^2
    pm = ModelParams(p=2.0, n_grid=4096, dt=1e-3)
    consts = mixing.BoundConstants(lam=1.0, c_big=1.0, lambda_noise=0.1)
    recs = mixing.theoretical_bounds(pm, NoiseSpec((0.1,)), 1.0, consts, 0.01)
    heat = next(r for r in recs if r.name == "heat-log-upper")
    assert heat.applicable
    c0sq = mixing.poincare_sq(pm)
    expected = (np.log(1.0 + 0.1 / (np.sqrt(1.8) * np.sqrt(c0sq))) + np.log(100.0)) / c0sq
    assert heat.value == pytest.approx(expected, rel=1e-12)
    assert heat.value == pytest.approx(0.46898, abs=5e-4)


def test_theoretical_bounds_noise_smallness_gate():
    pm = ModelParams(p=2.0, n_grid=64, dt=1e-3)
    consts = mixing.BoundConstants(lam=1.0, c_big=1.0, lambda_noise=0.1)
    recs = mixing.theoretical_bounds(pm, NoiseSpec((5.0,)), 1.0, consts, 0.01)
    heat = next(r for r in recs if r.name == "heat-log-upper")
    assert not heat.applicable
    assert heat.value is None


def test_theoretical_bounds_lower_clamp():
    pm = ModelParams(p=2.0, n_grid=64, dt=1e-3)
    consts = mixing.BoundConstants(lam=1.0, c_big=1.0, lambda_noise=0.5)
    recs = mixing.theoretical_bounds(pm, NoiseSpec(()), 1.0, consts, np.exp(-2.0))
    lower = next(r for r in recs if r.name == "deterministic-log-lower")
    assert lower.value == pytest.approx(2.0, rel=1e-12)
    recs2 = mixing.theoretical_bounds(pm, NoiseSpec(()), 1.0, consts, 1.5)
    lower2 = next(r for r in recs2 if r.name == "deterministic-log-lower")
    assert lower2.value == 0.0


def test_theoretical_bounds_polynomial_regimes():
    consts = mixing.BoundConstants(lam=1.0, c_big=2.0)
    pm4 = ModelParams(p=4.0, n_grid=16, dt=1e-3)
    rec = mixing.theoretical_bounds(pm4, NoiseSpec(()), 1.0, consts, 0.1)
    poly = next(r for r in rec if r.name == "polynomial-upper")
    assert poly.value == pytest.approx(2.0 * 0.1**-2.0, rel=1e-12)
    pm17 = ModelParams(p=1.7, n_grid=16, dt=1e-3, eps_reg=1e-8)
    rec = mixing.theoretical_bounds(pm17, NoiseSpec(()), 1.0, consts, 0.1)
    poly = next(r for r in rec if r.name == "polynomial-upper")
    assert poly.value == pytest.approx(2.0 * 0.1**-2.0, rel=1e-12)
    pm13 = ModelParams(p=1.3, n_grid=16, dt=1e-3, eps_reg=1e-8)
    rec = mixing.theoretical_bounds(pm13, NoiseSpec(()), 1.0, consts, 0.1)
    poly = next(r for r in rec if r.name == "polynomial-upper")
    assert poly.value == pytest.approx(2.0 * 0.1 ** (-4.0 / 1.3**2), rel=1e-12)


def test_fitted_constants_dominate_measurement():
    # self-consistency: plugging fitted constants back must clear every point
    pm = ModelParams(p=4.0, n_grid=16, dt=1e-3)
    eps = np.geomspace(8.0, 1.0, 6)
    taus = 0.5 * eps**-2.0 * (1.0 + 0.2 * np.sin(np.arange(6)))
    consts = mixing.fit_bound_constants(pm, eps, list(taus), 1.0)
    assert consts.provenance == "fitted"
    for e, t in zip(eps, taus):
        recs = mixing.theoretical_bounds(pm, NoiseSpec(()), 1.0, consts, float(e))
        upper = next(r for r in recs if r.name == "polynomial-upper")
        assert upper.value >= t - 1e-12


def test_scalar_curve_mean_gap_is_lower_bound():
    density = scalar.invariant_build(2.0)
    times = np.linspace(0.0, 1.5, 7)
    curve = mixing.scalar_distance_curve(
        2.0, 1.5, times, 2000, 2.0, seed=5, dt=2e-3, density=density
    )
    assert np.all(curve.mean_gap <= curve.raw + 1e-12)
    # t=0 value: Dirac vs empirical reference, direct formula
    ref = scalar.invariant_sample(density, 2000, RngStream(5, mixing.STATIONARY_STREAM))
    direct = float(np.mean(np.abs(1.5 - ref) ** 2) ** 0.5)
    assert curve.raw[0] == pytest.approx(direct, rel=1e-12)


def test_flat_curve_for_stationary_ensembles():
    # both ensembles stationary: the curve shows no trend (drawn fresh per
    # "time"), Spearman correlation stays inside the n=100 null band
    density = scalar.invariant_build(2.0)
    n = 1000
    vals = []
    for i in range(100):
        a = scalar.invariant_sample(density, n, RngStream(900, 2 * i))
        b = scalar.invariant_sample(density, n, RngStream(900, 2 * i + 1))
        from plmx.transport import wasserstein_1d

        vals.append(wasserstein_1d(a, b, 2.0))
    rho = spearmanr(np.arange(100), vals).statistic
    assert abs(rho) < 0.2


def test_scaling_fit_on_ou_curve():
    density = scalar.invariant_build(2.0)
    times = np.concatenate([[0.0], np.geomspace(0.05, 3.0, 18)])
    curve = mixing.scalar_distance_curve(
        2.0, 2.0, times, 4000, 2.0, seed=42, dt=1e-3, density=density
    )
    eps_grid = np.geomspace(1.2, 0.2, 6)
    taus = [mixing.mixing_time(curve, e) for e in eps_grid]
    fit = mixing.fit_scaling(eps_grid, taus)
    assert fit.family == "log-divergent"
    assert abs(fit.slope - 1.0) <= 0.1


def test_lower_bound_curve_scalar_analytic():
    # |x| e^-t <= sqrt(x^2 e^-2t + (s_t - s_inf)^2) holds identically, so the
    # analytic curve dominates the deterministic decay with zero allowance
    t = np.linspace(0.0, 4.0, 33)
    analytic = ou_analytic_w2(2.0, t)
    det = 2.0 * np.exp(-t)
    z = np.zeros_like(t)
    trace = field.NormTrace(times=t, l2=det, linf=det, w1p=z, diss_cum=z)
    curve = _curve_from(t, analytic)
    rep = mixing.lower_bound_curve(trace, curve, stationary_mean_norm=0.0)
    assert rep.violations == ()


def test_lower_bound_curve_flags_violation_and_grid_mismatch():
    t = np.linspace(0.0, 1.0, 5)
    det = np.array([1.0, 0.9, 0.8, 0.7, 0.6])
    trace = field.NormTrace(
        times=t, l2=det, linf=det, w1p=np.zeros(5), diss_cum=np.zeros(5)
    )
    curve = _curve_from(t, det - 0.05)
    rep = mixing.lower_bound_curve(trace, curve, stationary_mean_norm=0.1)
    assert len(rep.violations) == 5
    assert rep.stationary_mean_norm == pytest.approx(0.1)
    other = _curve_from(t + 0.5, det)
    with pytest.raises(ValueError):
        mixing.lower_bound_curve(trace, other, 0.0)


def test_rate_table_rows():
    tables = mixing.rate_table()
    conv, mix = tables["convergence"], tables["mixing"]
    assert len(conv) == 10 and len(mix) == 10
    r1 = next(r for r in mix if r.p_range == "(2,inf)" and r.noise == "0")
    assert r1.rate == "t^(-1/(p-2))" and r1.upper_bound == "C eps^(2-p)"
    r2 = next(r for r in mix if r.p_range == "{2}" and r.noise == "degenerate")
    assert r2.rate == "exp(-lambda t)"
    assert r2.upper_bound == "C + (1/lambda) log(1/eps)"
    r3 = next(
        r
        for r in mix
        if r.noise == "degenerate" and r.rate == "t^(-1/2)"
    )
    assert r3.upper_bound == "C eps^(-2)"
    assert all(r.source for r in conv + mix)


@pytest.mark.slow
def test_envelope_dominates_deterministic_norm_full_pipeline():
    # singular field with four forced modes: the measured distance envelope
    # plus two standard errors dominates the deterministic norm decay on the
    # shared grid; the stationary ensemble mean norm is reported alongside
    import dataclasses

    pm = ModelParams(p=1.7, dim=1, n_grid=32, dt=1e-3, eps_reg=1e-8, r_order=1.7)
    z = pm.interior_coords()
    x0 = np.sin(np.pi * z)
    noise = NoiseSpec((0.08, 0.05, 0.03, 0.02))
    n_ens = 256
    stat, _ = mixing.stationary_field_ensemble(
        dataclasses.replace(pm, dt=2e-3), noise, x0, n_ens, seed=55
    )
    times = np.concatenate([[0.0], np.geomspace(0.02, 5.0, 15)])
    curve = mixing.field_distance_curve(
        pm, noise, x0, times, n_ens, pm.r_order, seed=55, stationary_states=stat
    )
    _, det = field.evolve_deterministic(field.FieldState(x0, pm), 5.0, output_times=times)
    stat_mean_norm = float(
        np.sqrt(pm.quad_weight * np.sum(stat.mean(axis=0) ** 2))
    )
    rep = mixing.lower_bound_curve(det, curve, stat_mean_norm)
    assert rep.violations == ()
    assert rep.stationary_mean_norm < 0.05
