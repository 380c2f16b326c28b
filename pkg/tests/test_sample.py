import json
import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from fibemit import sample as sm


@pytest.fixture(scope="module")
def two_step_wafer(profile_c13):
    w = sm.implant_broad(sm.Wafer(), "C", 13.0, 1e12, profile_c13)
    return sm.anneal(w, 500, 2)


def test_broad_implant_peak_depth(profile_c13):
    w = sm.implant_broad(sm.Wafer(), "C", 13.0, 1e12, profile_c13)
    smooth = np.convolve(w.implanted_c, np.ones(9) / 9, mode="same")
    peak = w.bin_centers[np.argmax(smooth)]
    assert 46 * 0.8 <= peak <= 46 * 1.2
    # areal density equals the retained fluence
    retained = profile_c13.stopped / profile_c13.histories
    assert np.sum(w.implanted_c * 1e-7) == pytest.approx(1e12 * retained, rel=1e-9)


def test_zero_fluence_is_identity(profile_c13):
    w = sm.Wafer()
    assert sm.implant_broad(w, "C", 13.0, 0.0, profile_c13) is w


def test_implant_additivity(profile_c13):
    one = sm.implant_broad(sm.Wafer(), "C", 13.0, 1e12, profile_c13)
    half = sm.implant_broad(sm.Wafer(), "C", 13.0, 5e11, profile_c13)
    half = sm.implant_broad(half, "C", 13.0, 5e11, profile_c13)
    np.testing.assert_allclose(half.implanted_c, one.implanted_c, rtol=1e-12)
    np.testing.assert_allclose(half.damage, one.damage, rtol=1e-12)


def test_profile_mismatch_rejected(profile_c13):
    with pytest.raises(ValueError):
        sm.implant_broad(sm.Wafer(), "C", 20.0, 1e12, profile_c13)
    with pytest.raises(ValueError):
        sm.implant_broad(sm.Wafer(), "Si", 13.0, 1e12, profile_c13)


def test_anneal_erases_broad_emitters(profile_c13):
    w = sm.implant_broad(sm.Wafer(), "C", 13.0, 1e12, profile_c13)
    before = sm.activate_emitters(w, seed=1)
    assert not before.empty
    after = sm.activate_emitters(sm.anneal(w, 500, 2), seed=1)
    assert after.empty


def test_anneal_converts_carbon_to_pairs(profile_c13):
    w = sm.implant_broad(sm.Wafer(), "C", 13.0, 1e12, profile_c13)
    a = sm.anneal(w, 500, 2, pair_efficiency=0.4)
    np.testing.assert_allclose(a.pairs, 0.4 * w.implanted_c)
    np.testing.assert_allclose(a.substitutional_c, 0.6 * w.implanted_c)
    assert not a.implanted_c.any() and not a.damage.any()


def test_anneal_duration_zero_and_idempotence(two_step_wafer):
    assert sm.anneal(two_step_wafer, 500, 0) is two_step_wafer
    again = sm.anneal(two_step_wafer, 500, 2)
    assert again.physical_state() == two_step_wafer.physical_state()


def test_anneal_off_calibration_warns(profile_c13):
    w = sm.implant_broad(sm.Wafer(), "C", 13.0, 1e12, profile_c13)
    with pytest.warns(sm.AnnealWarning):
        out = sm.anneal(w, 650, 1)
    assert out.flags


def test_anneal_needs_history():
    with pytest.raises(ValueError):
        sm.anneal(sm.Wafer(), 500, 2)


def test_poisson_single_ion_probability(profile_c20):
    # one spot per seed
    hits = []
    for seed in range(4000):
        w = sm.implant_spot(sm.Wafer(), (0.0, 0.0), "C", 20.0, 1.0, profile_c20, seed)
        hits.append(w.spots["n_actual"][0] >= 1)
    p = 1 - math.exp(-1)
    sd = math.sqrt(p * (1 - p) / len(hits))
    assert abs(np.mean(hits) - p) < 3 * sd


def test_poisson_mean_and_variance(profile_c20):
    n = 10000
    w = sm.implant_spots(sm.Wafer(), np.zeros(n), np.zeros(n), 1100.0, "C", 20.0, profile_c20, seed=5)
    x = w.spots["n_actual"]
    assert abs(x.mean() - 1100) < 3 * math.sqrt(1100 / n)
    # variance of the sample variance: 2 sigma^4 / (n-1) + kappa4 / n, with kappa4 = mu for Poisson
    sd_var = math.sqrt(2 * 1100**2 / (n - 1) + 1100 / n)
    assert abs(x.var(ddof=1) - 1100) < 3 * sd_var


def test_poisson_tail_never_reaches_threshold():
    tail = stats.poisson.sf(1599, 1100)
    assert tail < 1e-40
    mpmath.mp.dps = 50
    mu = mpmath.mpf(1100)
    # terms beyond k = 4000 are below 1e-600
    exact = mpmath.fsum(mpmath.exp(-mu + k * mpmath.log(mu) - mpmath.loggamma(k + 1))
                        for k in range(1600, 4000))
    assert exact < mpmath.mpf("1e-40")
    assert float(exact / tail) == pytest.approx(1.0, rel=1e-6)


def test_expected_counts_at_thresholds():
    m = sm.ActivationModel()
    assert m.expected_g(2000, two_step=False) == pytest.approx(1.0)
    assert m.expected_g(150, two_step=True) * m.brightness_g == pytest.approx(m.noise_floor)
    assert m.expected_g(0, two_step=True) == 0.0


@given(st.floats(0, 1e5), st.floats(0, 1e5), st.booleans())
def test_expected_g_monotone(a, b, two):
    m = sm.ActivationModel()
    lo, hi = sorted((a, b))
    assert m.expected_g(lo, two) <= m.expected_g(hi, two)


def test_model_parameters_validated():
    with pytest.raises(ValueError):
        sm.ActivationModel(yield_single=0)
    with pytest.raises(ValueError):
        sm.ActivationModel(brightness_g=-1)
    with pytest.raises(ValueError):
        sm.ActivationModel(pair_capture=1.5)


def test_empty_wafer_gives_empty_field():
    f = sm.activate_emitters(sm.Wafer(), seed=0)
    assert len(f) == 0 and f.empty


def test_spots_below_threshold_stay_dark(profile_c20):
    w = sm.implant_spots(sm.Wafer(), np.arange(200.0) * 1000, np.zeros(200), 1100.0, "C", 20.0,
                         profile_c20, seed=2)
    assert sm.activate_emitters(w, seed=3).empty


def test_two_step_spots_use_pair_layer(two_step_wafer, profile_c20):
    w = sm.implant_spots(two_step_wafer, np.arange(50.0) * 1000, np.zeros(50), 150.0, "C", 20.0,
                         profile_c20, seed=2)
    assert w.spots["pair_overlap"][0] > 0
    f = sm.activate_emitters(w, seed=3)
    assert np.all(f.two_step)
    n = w.spots["n_actual"].astype(float)
    np.testing.assert_allclose(f.meta["expected_g"], sm.ActivationModel().expected_g(n, True))


def test_count_rate_uses_brightness(profile_c20):
    m = sm.ActivationModel(brightness_w=3e3, brightness_g=7e3)
    w = sm.implant_spots(sm.Wafer(), np.arange(20.0) * 2000, np.zeros(20), 4000.0, "C", 20.0,
                         profile_c20, seed=1)
    f = sm.activate_emitters(w, m, seed=4)
    np.testing.assert_array_equal(f.rate, f.n_w * 3e3 + f.n_g * 7e3)
    assert np.all(f.n_w >= 0) and np.all(f.n_g >= 0)


def test_activation_deterministic(profile_c20):
    w = sm.implant_spots(sm.Wafer(), np.arange(30.0) * 2000, np.zeros(30), 3000.0, "C", 20.0,
                         profile_c20, seed=1)
    a = sm.activate_emitters(w, seed=8)
    b = sm.activate_emitters(w, seed=8)
    assert a.to_csv() == b.to_csv()


def test_fit_recovers_exact_power_law():
    n = np.array([100.0, 300.0, 1000.0, 3000.0, 6000.0])
    for k, a in ((3.7, 1.0), (250.0, 0.6), (0.01, 1.7)):
        fit = sm.fit_power_law(np.column_stack([n, k * n**a]), 1e-9)
        assert fit.k == pytest.approx(k, rel=1e-6)
        assert fit.alpha == pytest.approx(a, rel=1e-6)


@pytest.mark.parametrize("alpha", [1.0, 0.6])
def test_fit_noisy_power_law(alpha):
    rng = np.random.default_rng(int(alpha * 10))
    n = np.geomspace(100, 6000, 15)
    rate = 50.0 * n**alpha * rng.lognormal(0.0, 0.05, n.size)
    fit = sm.fit_power_law(np.column_stack([n, rate]), 1.0)
    assert fit.alpha == pytest.approx(alpha, abs=0.05)


def test_fit_threshold_extrapolation():
    n = np.array([3000.0, 4000.0, 5000.0])
    fit = sm.fit_power_law(np.column_stack([n, 10.0 * n]), noise_floor=20000.0)
    assert fit.n_min == pytest.approx(2000.0, rel=1e-9)


def test_fit_needs_three_usable_points():
    with pytest.raises(ValueError):
        sm.fit_power_law([(100, 5.0), (200, 10.0)], 1.0)
    with pytest.warns(UserWarning):
        fit = sm.fit_power_law([(100, 0.0), (200, 2.0), (300, 3.0), (400, 4.0)], 0.5)
    assert fit.alpha == pytest.approx(1.0)


def test_power_law_estimator_api():
    est = sm.PowerLawYield(noise_floor=1.0)
    X = np.array([[100.0], [200.0], [400.0]])
    est.fit(X, 2.0 * X[:, 0])
    np.testing.assert_allclose(est.predict(X), 2.0 * X[:, 0])
    assert est.get_params() == {"noise_floor": 1.0}


def test_wafer_json_and_presets(profile_c13):
    assert sm.Wafer.high_purity().residual_carbon < 1e15
    with pytest.raises(ValueError):
        sm.Wafer(residual_carbon=-1)
    w = sm.implant_broad(sm.Wafer(), "C", 13.0, 1e12, profile_c13)
    doc = json.loads(w.to_json())
    assert doc["history"][0]["op"] == "implant_broad"
    assert all(layer["implanted_C"] >= 0 for layer in doc["layers"])


def test_field_csv(profile_c20):
    w = sm.implant_spots(sm.Wafer(), [0.0, 2000.0], [0.0, 0.0], 5000.0, "C", 20.0, profile_c20, seed=1,
                         jitter_nm=0.0)
    text = sm.activate_emitters(w, seed=1).to_csv({"seed": 1})
    lines = text.splitlines()
    assert lines[1] == "x_nm,y_nm,n_W,n_G,rate_cps"
    assert len(lines) == 4


@given(st.lists(st.floats(0, 1e21), min_size=5, max_size=5), st.lists(st.floats(0, 1e21), min_size=5, max_size=5))
@settings(max_examples=50)
def test_overlap_integral_bounds(a, b):
    edges = np.arange(6.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ov = sm.overlap_integral(np.array(a), np.array(b), edges)
    assert 0.0 <= ov <= 1.0 + 1e-12
