import io
import math

import numpy as np
import pytest
import scipy.special

from pilotnn.codec import truncated_normalizer
from pilotnn.estimator import EstimationProfile, analytic_profile, build_schedule, limit_profile
from pilotnn.gmi import (
    GMI_HEADER,
    digamma_closed_form,
    f_snr,
    gmi_lb_asymptotic,
    gmi_lb_digamma,
    gmi_lb_finite_T,
    gmi_lb_general_input,
    prelog_fit,
    profile_bound,
    theta_choice,
    wishart_logdet_samples,
    write_gmi_csv,
)
from pilotnn.spectrum import PsdModel

RECT_EIGHTH = PsdModel(1 / 8)
EULER_GAMMA = 0.5772156649015329
# Frozen from mpmath: psi sums minus one.
DIGAMMA_NT1 = -1.5772156649015329
DIGAMMA_NT2 = -1.1544313298030657
# E|x|^2 for a standard complex Gaussian conditioned on |x| <= 1.
TRUNCATED_POWER = 0.41802329313067355


def zero_profile(L, n_t):
    return EstimationProfile(L=L, n_t=n_t, T=None, snr=0.0, variances=np.zeros((L - n_t, n_t)))


def test_f_snr_examples():
    prof = limit_profile(RECT_EIGHTH, 4, 2, 100.0)
    assert f_snr(prof, 100.0, 2) == pytest.approx(2 + 100 * 2 * 2 * 2 * (8 / 408) / 4, rel=1e-9)
    assert f_snr(prof, 100.0, 2) == pytest.approx(5.921568627, rel=1e-9)
    assert f_snr(zero_profile(4, 2), 100.0, 3) == 3
    assert f_snr(prof, 0.0, 2) == 2


def test_theta_choice_examples():
    assert theta_choice(limit_profile(RECT_EIGHTH, 4, 2, 0.0), 0.0, 2) == -0.5
    assert theta_choice(zero_profile(4, 2), 1e6, 2) == -0.5


@pytest.mark.parametrize("L,n_t", [(4, 1), (4, 2), (3, 2)])
def test_theta_sandwich(L, n_t):
    n_r = 2
    for snr_db in np.linspace(-10, 80, 19):
        snr = 10 ** (snr_db / 10)
        theta = theta_choice(limit_profile(RECT_EIGHTH, L, n_t, snr), snr, n_r)
        assert 1 / (n_r * (1 + L * n_t)) <= abs(theta) <= 1 / n_r
        assert theta < 0


def test_finite_window_at_zero_snr():
    prof = analytic_profile(build_schedule(4, 2, 4, 2), RECT_EIGHTH, 0.0)
    est = gmi_lb_finite_T(prof, 0.0, 2, mc_samples=200)
    assert est.value == pytest.approx(-(4 - 2) / 4, abs=1e-15)
    assert est.theta == -0.5 and est.standard_error == 0.0


def test_finite_window_requires_square_channel():
    prof = limit_profile(RECT_EIGHTH, 4, 2, 10.0)
    with pytest.raises(ValueError):
        gmi_lb_finite_T(prof, 10.0, 3)
    # The profile-driven form accepts any n_r.
    assert profile_bound(prof, 10.0, 3, mc_samples=100).n_r == 3


@pytest.mark.parametrize("n_t", [1, 2])
def test_finite_window_high_snr_reduction(n_t):
    snr, L, mc = 1e10, 4, 20_000
    est = gmi_lb_finite_T(zero_profile(L, n_t), snr, n_t, mc_samples=mc, seed=3)
    wishart = float(scipy.special.digamma(np.arange(1, n_t + 1)).sum())
    expected = (L - n_t) / L * (n_t * math.log(snr) - n_t * math.log(n_t * n_t) + wishart - 1)
    assert abs(est.value - expected) <= 3 * est.standard_error + 1e-6


def test_monte_carlo_self_consistency():
    prof = limit_profile(RECT_EIGHTH, 4, 2, 1000.0)
    small = gmi_lb_finite_T(prof, 1000.0, 2, mc_samples=4000, seed=1)
    large = gmi_lb_finite_T(prof, 1000.0, 2, mc_samples=40_000, seed=2)
    assert abs(small.value - large.value) <= 3 * math.hypot(small.standard_error,
                                                           large.standard_error)


def test_bound_ordering_in_window_length():
    snr = 1000.0
    values = []
    for T in (1, 4, 16):
        prof = analytic_profile(build_schedule(4, 1, T, 3), RECT_EIGHTH, snr, with_limit=False)
        values.append(gmi_lb_finite_T(prof, snr, 1, mc_samples=20_000, seed=5))
    for short, long in zip(values, values[1:]):
        assert short.value <= long.value + 3 * math.hypot(short.standard_error,
                                                          long.standard_error)


def test_refined_theta_never_worse():
    prof = analytic_profile(build_schedule(4, 2, 8, 2), RECT_EIGHTH, 100.0, with_limit=False)
    base = gmi_lb_finite_T(prof, 100.0, 2, mc_samples=5000, seed=9)
    refined = gmi_lb_finite_T(prof, 100.0, 2, mc_samples=5000, seed=9, refine_theta=True)
    assert refined.value >= base.value
    assert refined.theta < 0


def test_digamma_values():
    assert digamma_closed_form(1, 0.0) == pytest.approx(DIGAMMA_NT1, abs=1e-14)
    assert digamma_closed_form(1, 0.0) == pytest.approx(-EULER_GAMMA - 1, abs=1e-14)
    assert digamma_closed_form(2, 0.0) == pytest.approx(DIGAMMA_NT2, abs=1e-14)
    assert digamma_closed_form(2, 0.0) == pytest.approx(-2 * EULER_GAMMA, abs=1e-14)
    assert digamma_closed_form(1, 1 - 1e-9) < -20
    with pytest.raises(ValueError):
        digamma_closed_form(1, 1.0)


@pytest.mark.parametrize("n_t", [1, 2, 3])
def test_digamma_against_wishart_samples(n_t):
    samples = wishart_logdet_samples(n_t, 100_000, seed=n_t)
    se = samples.std(ddof=1) / math.sqrt(samples.size)
    target = digamma_closed_form(n_t, 0.0) + 1.0
    assert abs(samples.mean() - target) <= 3 * se


def test_asymptotic_matches_digamma_substitution():
    for snr in (10.0, 1e4, 1e7):
        mc = gmi_lb_asymptotic(RECT_EIGHTH, 4, 2, snr, mc_samples=50_000, seed=4)
        closed = gmi_lb_digamma(RECT_EIGHTH, 4, 2, snr)
        assert abs(mc.value - closed.value) <= 3 * mc.standard_error
        assert closed.standard_error == 0.0 and closed.theta == mc.theta


def test_asymptotic_sign_and_domain():
    assert gmi_lb_asymptotic(RECT_EIGHTH, 4, 2, 1e6, mc_samples=2000).value > 0
    assert gmi_lb_asymptotic(RECT_EIGHTH, 4, 2, 1.0, mc_samples=2000).value < 0
    with pytest.raises(ValueError):
        gmi_lb_asymptotic(RECT_EIGHTH, 5, 2, 100.0, mc_samples=100)


def test_general_input_reduces_to_gaussian_case():
    a = gmi_lb_asymptotic(RECT_EIGHTH, 4, 2, 1e4, mc_samples=3000, seed=8)
    b = gmi_lb_general_input(RECT_EIGHTH, 4, 2, 1e4, K=1.0, mc_samples=3000, seed=8)
    assert b.value == a.value and b.theta == a.theta


def test_general_input_density_penalty():
    K = truncated_normalizer(1)
    assert K == pytest.approx(1 / (1 - math.exp(-1)), rel=1e-13)
    base = gmi_lb_general_input(RECT_EIGHTH, 4, 1, 1e6, E_norm_sq=TRUNCATED_POWER,
                                mc_samples=2000, seed=1)
    penal = gmi_lb_general_input(RECT_EIGHTH, 4, 1, 1e6, K=K, E_norm_sq=TRUNCATED_POWER,
                                 mc_samples=2000, seed=1)
    assert base.value - penal.value == pytest.approx(0.75 * math.log(K), rel=1e-12)
    ratios = [math.log(K) / math.log(10 ** (db / 10)) for db in (20, 40, 80, 160)]
    assert all(b < a for a, b in zip(ratios, ratios[1:]))
    with pytest.raises(ValueError):
        gmi_lb_general_input(RECT_EIGHTH, 4, 1, 10.0, K=0.5)
    with pytest.raises(ValueError):
        gmi_lb_general_input(RECT_EIGHTH, 4, 1, 10.0, E_norm_sq=2.0)


def test_prelog_fit_synthetic_and_validation():
    db = np.array([40.0, 50, 60, 70, 80])
    fit = prelog_fit(db, 2 * np.log(10 ** (db / 10)) + 3)
    assert fit.slope == pytest.approx(2.0, abs=1e-12)
    assert fit.intercept == pytest.approx(3.0, abs=1e-10)
    for bad in ([40, 50, 60], [40, 50, 50, 80], [40, 45, 50, 55]):
        with pytest.raises(ValueError):
            prelog_fit(bad, np.zeros(len(bad)))


def test_digamma_slope_matches_pilot_fraction():
    db = np.linspace(40, 80, 5)
    values = [gmi_lb_digamma(RECT_EIGHTH, 4, 2, 10 ** (d / 10)).value for d in db]
    assert prelog_fit(db, values).slope == pytest.approx(1.0, abs=0.01)


@pytest.mark.parametrize("L,n_t", [(2, 1), (3, 1), (4, 1), (3, 2), (4, 2), (4, 3)])
def test_slope_never_exceeds_pilot_fraction_ceiling(L, n_t):
    db = np.linspace(40, 80, 5)
    values = [gmi_lb_asymptotic(RECT_EIGHTH, L, n_t, 10 ** (d / 10), mc_samples=2000,
                                seed=0).value for d in db]
    assert prelog_fit(db, values).slope <= n_t * (1 - n_t / L) + 0.05


def test_aliased_slope_collapses():
    db = np.linspace(60, 100, 5)
    values = []
    for d in db:
        snr = 10 ** (d / 10)
        values.append(gmi_lb_finite_T(limit_profile(RECT_EIGHTH, 5, 2, snr), snr, 2,
                                      mc_samples=2000, seed=0).value)
    assert prelog_fit(db, values).slope <= 0.1


def test_csv_export():
    est = gmi_lb_digamma(RECT_EIGHTH, 4, 2, 100.0)
    buf = io.StringIO()
    write_gmi_csv([est], buf)
    header, row = buf.getvalue().splitlines()
    assert header.split(",") == GMI_HEADER
    fields = row.split(",")
    assert fields[0] == "digamma" and float(fields[1]) == pytest.approx(20.0)
    assert float(fields[-1]) == pytest.approx(est.value / math.log(2))
