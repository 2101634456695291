import math
import warnings

import numpy as np
import pytest
from sklearn.base import clone

from hfgyro import evolution as ev
from hfgyro import fitting as fit
from hfgyro import hamiltonian as ham
from hfgyro import metrology as met
from hfgyro.evolution import Scenario
from hfgyro.hamiltonian import FieldSpec, NVParams, RotationSpec

P = NVParams()
TWO_PI = 2 * math.pi
A50 = ham.enhancement_factor(P, 50.0)


def test_exp_envelope_recovers_tau():
    t = np.linspace(0, 25e-3, 500)
    S = 0.2 + 0.8 * np.exp(-t / 5e-3)
    r = fit.fit_decay(t, S)
    assert abs(r.tau / 5e-3 - 1) < 1e-3
    assert r.converged
    assert np.allclose(r.predict(t), S, atol=1e-6)


def test_stretched_exp_cos_fit():
    t = np.linspace(0, 30e-3, 3000)
    S = 0.5 + 0.4 * np.exp(-((t / 8e-3) ** 1.7)) * np.cos(TWO_PI * 400 * t)
    r = fit.fit_decay(t, S, model="stretched_exp_cos")
    assert abs(r.tau / 8e-3 - 1) < 0.01
    assert abs(r.params["c2"] - 1.7) < 0.02
    assert abs(r.params["omega"] / (TWO_PI * 400) - 1) < 1e-3


def test_decay_fit_input_errors():
    with pytest.raises(ValueError):
        fit.fit_decay(np.arange(5.0), np.arange(5.0))
    with pytest.raises(ValueError):
        fit.fit_decay(np.r_[0.0, np.arange(11.0)], np.arange(12.0))
    with pytest.raises(ValueError):
        fit.DecayFitter(model="poly").fit(np.arange(20.0), np.arange(20.0))


def test_estimators_follow_sklearn_conventions():
    est = fit.DecayFitter(model="stretched_exp_cos", max_nfev=50)
    c = clone(est)
    assert c.get_params() == est.get_params()
    r = fit.RotationRateEstimator(regime="inertial", B=10.0)
    assert clone(r).get_params()["B"] == 10.0
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        fit.DecayFitter().predict([0.0])


def test_enhanced_rate_from_synthetic_signal():
    w = TWO_PI * 100
    t = np.linspace(0, 2.5e-3, 400)
    got = fit.estimate_rotation_rate(t, met.signal_slow(w, A50, t), "enhanced", P, 50.0)
    assert abs(got / w - 1) < 0.01


def test_inertial_rate_from_synthetic_signal():
    w = TWO_PI * 1e6
    t = np.linspace(0, 10e-6, 4000)
    got = fit.estimate_rotation_rate(t, met.signal_fast(w, t), "inertial")
    assert abs(got / w - 1) < 1e-3


def test_regime_mismatch_is_flagged():
    w = TWO_PI * 100
    t = np.linspace(0, 5e-3, 400)
    S = met.signal_slow(w, A50, t)
    with pytest.warns(fit.FitWarning):
        est = fit.RotationRateEstimator(regime="inertial").fit(t, S)
    assert est.flagged_


def test_rate_from_full_trajectory():
    w = TWO_PI * 100
    s = Scenario(field=FieldSpec(B=50), rotation=RotationSpec(w), duration=2.5e-3, stride=20)
    tr = ev.propagate(s)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", fit.FitWarning)
        got = fit.estimate_rotation_rate(tr.times, tr.observables()["S_z"], "enhanced", P, 50.0)
    assert abs(got / w - 1) < 0.05


def test_slope_rate_conventions():
    w = TWO_PI * 10
    t = np.linspace(0, 1e-6, 50)  # alpha * theta stays below 0.01
    sx = met.signal_x(w, -100.0, t)
    assert abs(fit.slope_rotation_rate(t, 1 - sx, -100.0) / w - 1) < 1e-3
    lab = 0.5 + 0.5 * 101 * w * t
    assert math.isclose(fit.slope_rotation_rate(t, lab, 100.0, convention="lab"), w, rel_tol=1e-9)
    with pytest.raises(ValueError):
        fit.slope_rotation_rate(t, sx, 1.0, convention="x")


def test_spectral_peak_resolution():
    t = np.linspace(0, 1e-3, 5000)
    assert abs(fit.spectral_peak(t, np.cos(TWO_PI * 12.3e3 * t)) / (TWO_PI * 12.3e3) - 1) < 2e-3


def test_gaussian_decay_fit_and_prediction():
    x = np.linspace(0, 3e-3, 60)
    assert abs(fit.fit_gaussian_decay(x, np.exp(-((x / 1e-3) ** 2))) / 1e-3 - 1) < 1e-6
    assert math.isclose(fit.predicted_dephasing_time(P, 0.1), math.sqrt(2) / (P.gamma_n * 0.1))


def test_effective_time_limits():
    t = np.linspace(0, 1e-3, 1001)
    assert np.allclose(fit.effective_time(P, 50.0, 0.0, t), t)
    # with alpha = 1 the effective field magnitude is constant
    assert np.allclose(fit.effective_time(P, 50.0, TWO_PI * 100, t, alpha0=1.0), t)
