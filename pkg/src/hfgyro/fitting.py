"""Curve fits on simulated or measured signals.

The two estimators follow the scikit-learn conventions: hyperparameters go to
``__init__``, ``fit(t, S)`` learns attributes with a trailing underscore and
``predict(t)`` evaluates the fitted model. The time axis plays the role of
``X`` and is one-dimensional.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils import check_consistent_length, column_or_1d
from sklearn.utils.validation import check_is_fitted

from . import hamiltonian as ham
from . import metrology as met
from .hamiltonian import NVParams


class FitWarning(UserWarning):
    """A fit stopped without meeting its convergence or residual criteria."""


def _validate_series(t, S, min_points=10):
    t = column_or_1d(np.asarray(t, dtype=float), warn=True)
    S = column_or_1d(np.asarray(S, dtype=float), warn=True)
    check_consistent_length(t, S)
    if len(t) < min_points:
        raise ValueError(f"need at least {min_points} points, got {len(t)}")
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(S))):
        raise ValueError("series contains non-finite values")
    return t, S


def spectral_peak(t, S) -> float:
    """Angular frequency of the largest non-DC peak of ``S`` (resampled to a uniform grid)."""
    t = np.asarray(t, dtype=float)
    n = len(t)
    grid = np.linspace(t[0], t[-1], n)
    y = np.interp(grid, t, S)
    y = y - y.mean()
    spec = np.abs(np.fft.rfft(y * np.hanning(n)))
    freqs = np.fft.rfftfreq(n, grid[1] - grid[0])
    k = int(np.argmax(spec[1:])) + 1
    # parabolic refinement on the log spectrum
    if 1 < k < len(spec) - 1:
        a, b, c = np.log(spec[k - 1 : k + 2] + 1e-300)
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom != 0 else 0.0
    else:
        shift = 0.0
    return float(2 * math.pi * (freqs[k] + shift * (freqs[1] - freqs[0])))


# ------------------------------------------------------------- decay fits


def _exp_envelope(t, c0, c1, tau):
    return c0 + c1 * np.exp(-t / tau)


def _stretched_exp_cos(t, c0, c1, tau, c2, omega):
    return c0 + c1 * np.exp(-((t / tau) ** c2)) * np.cos(omega * t)


_MODELS = {
    "exp_envelope": (_exp_envelope, ("c0", "c1", "tau")),
    "stretched_exp_cos": (_stretched_exp_cos, ("c0", "c1", "tau", "c2", "omega")),
}


class DecayFitter(RegressorMixin, BaseEstimator):
    """Least-squares fit of a decaying signal.

    ``exp_envelope``: ``c0 + c1 exp(-t/tau)``.
    ``stretched_exp_cos``: ``c0 + c1 exp(-(t/tau)^c2) cos(omega t)``.

    Initial guesses are fixed from the data (tail mean, first value,
    duration / 3, ``c2 = 1``, spectral peak), so the fit is deterministic.
    """

    def __init__(self, model: str = "exp_envelope", c2_bounds=(0.5, 3.0), max_nfev: int = 2000, omega0=None):
        self.model = model
        self.c2_bounds = c2_bounds
        self.max_nfev = max_nfev
        self.omega0 = omega0

    def _initial(self, t, S):
        tail = S[int(0.9 * len(S)) :]
        c0 = float(np.mean(tail))
        c1 = float(S[0] - c0)
        tau = float((t[-1] - t[0]) / 3)
        if self.model == "exp_envelope":
            return np.array([c0, c1, tau])
        omega = float(self.omega0) if self.omega0 else spectral_peak(t, S)
        return np.array([c0, c1, tau, 1.0, omega])

    def fit(self, t, S):
        if self.model not in _MODELS:
            raise ValueError(f"model must be one of {sorted(_MODELS)}, not {self.model!r}")
        t, S = _validate_series(t, S)
        fn, names = _MODELS[self.model]
        x0 = self._initial(t, S)
        span = t[-1] - t[0]
        lo = [-np.inf, -np.inf, span * 1e-6]
        hi = [np.inf, np.inf, np.inf]
        if self.model == "stretched_exp_cos":
            lo += [self.c2_bounds[0], 0.5 * x0[4]]
            hi += [self.c2_bounds[1], 1.5 * x0[4]]
        lo_a, hi_a = np.array(lo), np.array(hi)
        # strictly interior start; infinite bounds stay untouched
        x0 = np.minimum(np.maximum(x0, np.where(np.isfinite(lo_a), lo_a * (1 + 1e-9), -np.inf)), hi_a * (1 - 1e-9))
        scale = np.abs(x0) + 1e-12
        res = least_squares(
            lambda x: fn(t, *x) - S, x0, bounds=(lo, hi), x_scale=scale, max_nfev=self.max_nfev, method="trf"
        )
        self.params_ = dict(zip(names, (float(v) for v in res.x)))
        self.tau_ = self.params_["tau"]
        self.residual_rms_ = float(np.sqrt(np.mean(res.fun**2)))
        self.converged_ = bool(res.success)
        self.n_iter_ = int(res.nfev)
        if not res.success:
            warnings.warn(f"decay fit did not converge: {res.message}", FitWarning, stacklevel=2)
        return self

    def predict(self, t):
        check_is_fitted(self, "params_")
        fn, names = _MODELS[self.model]
        return fn(np.asarray(t, dtype=float), *(self.params_[k] for k in names))


@dataclass(frozen=True)
class DecayFit:
    params: dict
    tau: float
    residual_rms: float
    converged: bool
    model: str = "exp_envelope"

    def predict(self, t):
        fn, names = _MODELS[self.model]
        return fn(np.asarray(t, dtype=float), *(self.params[k] for k in names))


def fit_decay(t, S, model: str = "exp_envelope", **kw) -> DecayFit:
    """Functional wrapper around :class:`DecayFitter`."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FitWarning)
        est = DecayFitter(model=model, **kw).fit(t, S)
    return DecayFit(est.params_, est.tau_, est.residual_rms_, est.converged_, model)


def following_envelope(traj, p: NVParams, B: float, alpha0: float | None = None) -> np.ndarray:
    """``(1 + n . e) / 2`` with ``e`` the instantaneous nuclear quantization axis.

    ``n`` is the NV-frame nuclear Bloch vector and ``e`` points along the
    effective field ``(alpha0 B_x, 0, B_z)``. This removes the slow rotation
    signal and leaves the relaxation envelope.
    """
    if alpha0 is None:
        alpha0 = ham.enhancement_factor(p, B)
    th = traj.theta
    e = np.stack([-alpha0 * np.sin(th), np.zeros_like(th), np.cos(th)], -1)
    e /= np.linalg.norm(e, axis=1)[:, None]
    n = traj.nuclear_bloch()
    return 0.5 * (1 + np.einsum("ti,ti->t", n, e))


# ---------------------------------------------------------- rotation rate


class RotationRateEstimator(BaseEstimator):
    """Recover the rotation rate from a population signal along z_NV.

    ``regime='enhanced'`` fits the adiabatic-following curve over the rate,
    ``regime='inertial'`` takes the spectral peak and refines it against
    ``(1 + cos(omega t)) / 2``. ``flagged_`` is set when the residual RMS
    exceeds ``residual_threshold``, which usually means the wrong regime.
    """

    def __init__(
        self,
        regime: str = "enhanced",
        params: NVParams | None = None,
        B: float = 50.0,
        alpha0: float | None = None,
        residual_threshold: float = 0.05,
    ):
        self.regime = regime
        self.params = params
        self.B = B
        self.alpha0 = alpha0
        self.residual_threshold = residual_threshold

    def _alpha(self):
        if self.alpha0 is not None:
            return self.alpha0
        return ham.enhancement_factor(self.params or NVParams(), self.B)

    def _model(self, omega, t):
        if self.regime == "enhanced":
            return met.signal_slow(omega, self._alpha(), t)
        return met.signal_fast(omega, t)

    def fit(self, t, S):
        if self.regime not in ("enhanced", "inertial"):
            raise ValueError(f"regime must be 'enhanced' or 'inertial', not {self.regime!r}")
        t, S = _validate_series(t, S)
        span = t[-1] - t[0]
        if self.regime == "inertial":
            w0 = spectral_peak(t, S)
        else:
            # coarse scan over rates whose half turn is between span/100 and 100 span
            grid = np.geomspace(math.pi / (100 * span), 100 * math.pi / span, 600)
            cost = [np.mean((self._model(w, t) - S) ** 2) for w in grid]
            w0 = float(grid[int(np.argmin(cost))])
        res = least_squares(lambda x: self._model(x[0], t) - S, [w0], x_scale=[w0], bounds=([0.0], [np.inf]))
        self.omega_ = float(res.x[0])
        self.residual_rms_ = float(np.sqrt(np.mean(res.fun**2)))
        self.flagged_ = self.residual_rms_ > self.residual_threshold
        if self.flagged_:
            warnings.warn(
                f"residual {self.residual_rms_:.3g} above {self.residual_threshold}; regime may not match",
                FitWarning,
                stacklevel=2,
            )
        return self

    def predict(self, t):
        check_is_fitted(self, "omega_")
        return self._model(self.omega_, np.asarray(t, dtype=float))


def estimate_rotation_rate(t, S, regime: str, p: NVParams | None = None, B: float = 50.0, **kw) -> float:
    """Functional wrapper returning the fitted rate in rad/s."""
    return RotationRateEstimator(regime=regime, params=p, B=B, **kw).fit(t, S).omega_


def slope_rotation_rate(t, S_x, alpha0: float, convention: str = "nv") -> float:
    """Rate from the early-time slope of the x_NV population.

    In the NV frame ``dS_x/dt = |alpha0| omega / 2`` at small angle; the lab
    convention uses ``1 + |alpha0|``. The slope is a linear least-squares fit
    over the supplied samples.
    """
    if convention not in ("nv", "lab"):
        raise ValueError("convention must be 'nv' or 'lab'")
    t = np.asarray(t, dtype=float)
    S_x = np.asarray(S_x, dtype=float)
    slope = np.polyfit(t, S_x, 1)[0]
    gain = abs(alpha0) if convention == "nv" else 1 + abs(alpha0)
    return float(2 * slope / gain)


# ------------------------------------------------------------- dephasing


def effective_time(p: NVParams, B: float, omega: float, t, alpha0: float | None = None) -> np.ndarray:
    """``int_0^t |B_eff| / B dt'`` with ``|B_eff| / B = sqrt(cos^2 + alpha0^2 sin^2)``.

    The nuclear precession phase is ``gamma_n B`` times this, so a static
    field error ``dB`` along the bias shifts the phase by ``gamma_n dB t_eff``.
    """
    if alpha0 is None:
        alpha0 = ham.enhancement_factor(p, B)
    t = np.asarray(t, dtype=float)
    th = omega * t
    g = np.sqrt(np.cos(th) ** 2 + alpha0**2 * np.sin(th) ** 2)
    return np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(t))])


def ripple(t, S, p: NVParams, B: float, omega: float, alpha0: float | None = None) -> np.ndarray:
    """The precession ripple ``S - <S>``, with ``<.>`` the local-period moving average."""
    period = met.precession_period(p, B, omega, t, alpha0)
    return np.asarray(S) - met.period_average(t, S, period)


def ripple_coherence(x, r_ens, r_ref, n_windows: int = 40, x_max=None, min_points: int = 20):
    """Windowed projection of the ensemble ripple onto a noise-free reference ripple.

    Returns ``(x_centers, coherence)`` where coherence is
    ``<r_ens, r_ref> / <r_ref, r_ref>`` inside each window of ``x``.
    """
    x = np.asarray(x, dtype=float)
    r_ens = np.asarray(r_ens, dtype=float)
    r_ref = np.asarray(r_ref, dtype=float)
    top = x[-1] if x_max is None else min(x_max, x[-1])
    edges = np.linspace(x[0], top, n_windows + 1)
    centers, coh = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = (x >= lo) & (x < hi)
        den = float(np.dot(r_ref[m], r_ref[m]))
        if m.sum() < min_points or den <= 0:
            continue
        centers.append(float(x[m].mean()))
        coh.append(float(np.dot(r_ens[m], r_ref[m]) / den))
    return np.array(centers), np.array(coh)


def fit_gaussian_decay(x, coherence, guess: float | None = None) -> float:
    """Fit ``exp(-(x / T)^2)`` and return ``T``."""
    x = np.asarray(x, dtype=float)
    c = np.asarray(coherence, dtype=float)
    if guess is None:
        below = np.nonzero(c < math.exp(-1))[0]
        guess = float(x[below[0]]) if len(below) else float(x[-1])
    res = least_squares(lambda v: np.exp(-((x / v[0]) ** 2)) - c, [guess], x_scale=[guess], bounds=([1e-30], [np.inf]))
    return float(res.x[0])


def predicted_dephasing_time(p: NVParams, sigma_B: float) -> float:
    """``sqrt(2) / (gamma_n sigma_B)`` for a Gaussian field spread ``sigma_B`` (G)."""
    return math.sqrt(2) / (p.gamma_n * sigma_B)
