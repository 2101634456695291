"""Closed-form gyroscope signals, adiabaticity, sensitivities and pulse errors.

Everything here is evaluated from formulas or small diagonalizations; nothing
propagates a density matrix. Sensitivities are computed in (rad/s)/sqrt(Hz)
and returned in (mdeg/s)/sqrt(Hz).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import bisect

from . import hamiltonian as ham
from .hamiltonian import FieldSpec, NVParams
from .linalg import eig_hermitian, spin_operators
from .units import RADPS_TO_MDEGPS, TWO_PI

# ---------------------------------------------------------------- signals


def signal_slow(omega, alpha0, t):
    """Population along z_NV when the nucleus adiabatically follows its axis."""
    th = np.asarray(omega * np.asarray(t, dtype=float))
    c, s = np.cos(th), np.sin(th)
    return 0.5 * (1 + c / np.sqrt(c**2 + alpha0**2 * s**2))


def signal_fast(omega, t):
    """Population along z_NV when the nucleus stays fixed in the lab."""
    return 0.5 * (1 + np.cos(omega * np.asarray(t, dtype=float)))


def signal_x(omega, alpha0, t):
    """Population along x_NV in the adiabatic regime."""
    th = omega * np.asarray(t, dtype=float)
    c, s = np.cos(th), np.sin(th)
    return 0.5 * (1 + alpha0 * s / np.sqrt(alpha0**2 * s**2 + c**2))


def signal_x_rate(omega, alpha0, t):
    """Analytic ``d signal_x / dt``; equals ``alpha0 * omega / 2`` at ``t = 0``."""
    th = omega * np.asarray(t, dtype=float)
    c, s = np.cos(th), np.sin(th)
    return 0.5 * alpha0 * omega * c / (alpha0**2 * s**2 + c**2) ** 1.5


def precession_period(p: NVParams, B: float, omega: float, t, alpha0: float | None = None):
    """Local nuclear precession period ``2 pi / (gamma_n B sqrt(cos^2 + alpha0^2 sin^2))``."""
    if alpha0 is None:
        alpha0 = ham.enhancement_factor(p, B)
    th = omega * np.asarray(t, dtype=float)
    return TWO_PI / (p.gamma_n * B * np.sqrt(np.cos(th) ** 2 + alpha0**2 * np.sin(th) ** 2))


def period_average(t, y, period):
    """Centered moving average of ``y`` over a time-dependent window ``period(t)``.

    Windows are clipped at the ends of the series. Uses the trapezoid running
    integral, so non-uniform sampling is fine.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    period = np.broadcast_to(np.asarray(period, dtype=float), t.shape)
    if len(t) < 2:
        return y.copy()
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))])
    lo = np.clip(t - period / 2, t[0], t[-1])
    hi = np.clip(t + period / 2, t[0], t[-1])
    width = hi - lo
    out = y.copy()
    ok = width > 0
    out[ok] = (np.interp(hi[ok], t, cum) - np.interp(lo[ok], t, cum)) / width[ok]
    return out


def signal_deviation(t, S, p: NVParams, B: float, omega: float, regime: str = "enhanced", alpha0=None) -> float:
    """Mean ``|<S> - <S_ideal>|`` after period-averaging both series.

    ``<.>`` is the moving average over the local precession period (capped
    at 1/20 of a rotation period), which removes the fast ripple but keeps the
    slow rotation signal. ``regime``
    picks the ideal curve: ``enhanced`` (adiabatic following) or
    ``inertial`` (nucleus fixed).
    """
    if alpha0 is None:
        alpha0 = ham.enhancement_factor(p, B)
    t = np.asarray(t, dtype=float)
    if regime == "enhanced":
        ideal = signal_slow(omega, alpha0, t)
    elif regime == "inertial":
        ideal = signal_fast(omega, t)
    else:
        raise ValueError(f"regime must be 'enhanced' or 'inertial', not {regime!r}")
    period = precession_period(p, B, omega, t, alpha0)
    if omega:
        # a window longer than the rotation itself would flatten the signal we compare
        period = np.minimum(period, 0.05 * TWO_PI / abs(omega))
    return float(np.mean(np.abs(period_average(t, S, period) - period_average(t, ideal, period))))


# ---------------------------------------------------------- adiabaticity


@dataclass(frozen=True)
class AdiabaticityQuery:
    B: float
    omega: float
    xi: float
    theta: float = math.pi / 2

    def __post_init__(self):
        if not 0 < self.xi < 1:
            raise ValueError("xi must lie in (0, 1)")


def _gauge_factor(psi_plus, psi_minus, gauge):
    if gauge == "normalized":
        return 1.0
    if gauge == "paper":
        # rescale both eigenvectors to unit second component
        return 1.0 / (abs(psi_plus[1]) ** 2 * abs(psi_minus[1]) ** 2)
    raise ValueError(f"gauge must be 'paper' or 'normalized', not {gauge!r}")


def eigenstate_deviation(p: NVParams, B: float, omega: float, t, alpha0=None, gauge: str = "paper"):
    """Non-adiabatic coupling ``M(t) = |<psi+|d psi-/dt>|^2 / E+^2`` of the nuclear 2x2 problem.

    Computed from the instantaneous eigenpairs of the effective nuclear
    Hamiltonian and the analytic ``dH/dt`` via
    ``|<psi+|dpsi-/dt>| = |<psi+|dH/dt|psi->| / (E+ - E-)``. ``gauge`` sets the
    eigenvector normalization: ``paper`` scales each eigenvector to unit
    second component (the closed-form ``M_min`` uses this), ``normalized``
    uses unit vectors. The two differ by ``4 R^2 / (alpha0^2 sin^2 + x^2)``,
    which is 4 at ``theta = pi/2``. Returns ``inf`` on a degenerate spectrum.
    """
    if alpha0 is None:
        alpha0 = ham.enhancement_factor(p, B)
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    ix, _, iz = spin_operators(0.5)
    h = ham.effective_nuclear_hamiltonian(p, 0, 0.0, B, omega, ts, alpha=alpha0)
    th = omega * ts
    dh = p.gamma_n * B * omega * (-np.sin(th)[:, None, None] * iz - alpha0 * np.cos(th)[:, None, None] * ix)
    w, v = eig_hermitian(h)
    out = np.empty(len(ts))
    for k in range(len(ts)):
        gap = w[k, 1] - w[k, 0]
        e_plus = w[k, 1]
        if gap <= 1e-300 or e_plus == 0:
            out[k] = math.inf
            continue
        psi_minus, psi_plus = v[k][:, 0], v[k][:, 1]
        coupling = abs(np.vdot(psi_plus, dh[k] @ psi_minus)) ** 2 / gap**2
        out[k] = coupling / e_plus**2 * _gauge_factor(psi_plus, psi_minus, gauge)
    return out if np.ndim(t) else float(out[0])


def m_min(alpha0: float, x, gauge: str = "paper"):
    """Closed-form ``M`` at ``theta = pi/2`` with ``x = omega / (B gamma_n)``."""
    x = np.asarray(x, dtype=float)
    base = x**2 / (alpha0**2 + x**2) ** 2
    if gauge == "paper":
        return 4 * base
    if gauge == "normalized":
        return base
    raise ValueError(f"gauge must be 'paper' or 'normalized', not {gauge!r}")


def omega_max(p: NVParams, B: float, xi: float, alpha0: float | None = None) -> float:
    """Largest adiabatic rotation rate ``xi alpha0^2 B gamma_n``."""
    if not 0 < xi < 1:
        raise ValueError("xi must lie in (0, 1)")
    if alpha0 is None:
        alpha0 = ham.enhancement_factor(p, B)
    return xi * alpha0**2 * B * p.gamma_n


def omega_min(p: NVParams, B: float, xi: float, alpha0: float | None = None, gauge: str = "paper") -> float:
    """Smallest rate for inertial sensing: ``M_min(x) = xi^2`` on the branch ``x > |alpha0|``.

    ``M_min`` decreases monotonically for ``x > |alpha0|``; the root is
    bracketed and refined by bisection.
    """
    if not 0 < xi < 1:
        raise ValueError("xi must lie in (0, 1)")
    if alpha0 is None:
        alpha0 = ham.enhancement_factor(p, B)
    a = abs(alpha0)
    f = lambda x: float(m_min(a, x, gauge)) - xi**2  # noqa: E731
    lo = a
    if f(lo) <= 0:
        return lo * B * p.gamma_n
    hi = 2 * a + 1
    while f(hi) > 0:
        hi *= 2
    return bisect(f, lo, hi, xtol=1e-13 * hi, rtol=1e-14, maxiter=500) * B * p.gamma_n


# ------------------------------------------------------------ sensitivity


@dataclass(frozen=True)
class SensitivityInputs:
    """Readout and timing inputs; times in seconds.

    ``t`` is the sensing time at which the full expressions are evaluated.
    """

    C: float = 0.02
    N: float = 2.5e14
    t_d: float = 0.5e-3
    tau: float = 7.5e-3
    t: float = 3.75e-3

    def __post_init__(self):
        for name in ("C", "N", "t_d", "tau", "t"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SensitivityInputs.{name} must be positive")
        if self.C > 1:
            raise ValueError("readout efficiency C must be <= 1")


class Sensitivity(NamedTuple):
    """``eta`` at the requested time, the optimum ``bound`` and its time ``t_opt``.

    Values are in (mdeg/s)/sqrt(Hz).
    """

    eta: float
    bound: float
    t_opt: float


def _mdeg(x):
    return x * RADPS_TO_MDEGPS


def _periodic_time(omega, t):
    # readout is synchronized to alignment: t + t_d rounded up to a half turn
    return np.ceil(abs(omega) * t / math.pi - 1e-12) * math.pi / abs(omega)


def _relative_bound(inp: SensitivityInputs, t, gain=1.0):
    return np.exp(t / inp.tau) / (inp.C * math.sqrt(inp.N) * gain * np.sqrt(t))


def _enhanced_raw(inp, omega, alpha0, t):
    th = omega * t
    slope = 0.5 * abs(alpha0) * np.abs(np.cos(th) / (alpha0**2 * np.sin(th) ** 2 + np.cos(th) ** 2) ** 1.5)
    return np.exp(t / inp.tau) * np.sqrt(_periodic_time(omega, t)) / (2 * inp.C * math.sqrt(inp.N) * t) / slope


def _inertial_raw(inp, omega, t):
    slope = 0.5 * np.abs(np.cos(omega * t))
    return np.exp(t / inp.tau) * np.sqrt(_periodic_time(omega, t)) / (2 * inp.C * math.sqrt(inp.N) * t) / slope


def _best_over_t(fn, omega, tau):
    """Minimize a sensitivity over t on half-turn multiples and a sub-turn grid."""
    cands = []
    half = math.pi / abs(omega)
    kmax = int(min(5 * tau / half, 1e5))
    if kmax >= 1:
        cands.append(np.arange(1, kmax + 1) * half)
    cands.append(np.geomspace(tau * 1e-4, min(half, 5 * tau), 400))
    ts = np.concatenate(cands)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = fn(ts)
    vals = np.where(np.isfinite(vals), vals, np.inf)
    k = int(np.argmin(vals))
    return float(vals[k]), float(ts[k])


def sensitivity_enhanced(inp: SensitivityInputs, omega: float, B: float, p: NVParams | None = None, alpha0=None):
    """Enhanced-regime sensitivity with the half-turn timing constraint.

    ``eta`` is the full expression at ``inp.t``; ``bound`` is
    ``sqrt(2e) / (C sqrt(N tau) |alpha0|)``, reached at ``t = tau/2``.
    """
    p = p or NVParams()
    if alpha0 is None:
        alpha0 = ham.enhancement_factor(p, B)
    eta = float(_enhanced_raw(inp, omega, alpha0, inp.t)) if omega else math.inf
    t_opt = inp.tau / 2
    bound = float(_relative_bound(inp, t_opt, abs(alpha0)))
    return Sensitivity(_mdeg(eta), _mdeg(bound), t_opt)


def sensitivity_inertial(inp: SensitivityInputs, omega: float | None = None):
    """Inertial-regime sensitivity; ``bound`` is ``sqrt(2e) / (C sqrt(N tau))``.

    Without ``omega`` the full expression is taken at a readout with
    ``cos(omega t) = 1`` and no timing penalty.
    """
    if omega:
        eta = float(_inertial_raw(inp, omega, inp.t))
    else:
        eta = float(_relative_bound(inp, inp.t))
    t_opt = inp.tau / 2
    return Sensitivity(_mdeg(eta), _mdeg(float(_relative_bound(inp, t_opt))), t_opt)


def _n_ramsey_raw(inp, omega, t):
    slope = 0.5 * np.abs(np.cos(omega * t)) if omega else 0.5
    return np.exp(t / inp.tau) * np.sqrt(t + inp.t_d) / (2 * inp.C * math.sqrt(inp.N) * t) / slope


def sensitivity_n_ramsey(inp: SensitivityInputs, omega: float | None = None):
    """Nuclear Ramsey; same bound as the inertial protocol."""
    eta = float(_n_ramsey_raw(inp, omega, inp.t))
    t_opt = inp.tau / 2
    return Sensitivity(_mdeg(eta), _mdeg(float(_relative_bound(inp, t_opt))), t_opt)


def _nv_ramsey_raw(inp, domega, t):
    return np.exp(t / inp.tau) * np.sqrt(t + inp.t_d) / (inp.C * math.sqrt(inp.N) * t**2 * abs(domega))


def sensitivity_nv_ramsey(inp: SensitivityInputs, domega_e_dtheta: float):
    """Electron Ramsey on the angle-dependent transition, at ``|cos(omega_e t)| = 1``.

    ``bound`` is the numerical minimum over t.
    """
    if domega_e_dtheta == 0:
        raise ValueError("domega_e_dtheta must be nonzero")
    eta = float(_nv_ramsey_raw(inp, domega_e_dtheta, inp.t))
    ts = np.geomspace(inp.tau * 1e-3, inp.tau * 20, 4001)
    vals = _nv_ramsey_raw(inp, domega_e_dtheta, ts)
    k = int(np.argmin(vals))
    # refine on a local grid
    fine = np.linspace(ts[max(k - 1, 0)], ts[min(k + 1, len(ts) - 1)], 2001)
    fv = _nv_ramsey_raw(inp, domega_e_dtheta, fine)
    j = int(np.argmin(fv))
    return Sensitivity(_mdeg(eta), _mdeg(float(fv[j])), float(fine[j]))


def sensitivity_gslac_form(inp: SensitivityInputs, p: NVParams | None = None):
    """Main-text bound ``(sqrt2 gamma_n / gamma_e) e^{t/tau} sqrt(t + t_d) / (C sqrt(N) t)`` at ``inp.t``.

    Equals the enhanced bound only where ``alpha0 = gamma_e / (sqrt2 gamma_n)``.
    """
    p = p or NVParams()
    t = inp.t
    val = math.sqrt(2) * p.gamma_n / p.gamma_e * math.exp(t / inp.tau) * math.sqrt(t + inp.t_d) / (inp.C * math.sqrt(inp.N) * t)
    return _mdeg(val)


# ---------------------------------------------------- pulses and spectra


def pulse_fidelity(rabi, detuning):
    """pi-pulse fidelity ``(rabi^2 / R^2) sin^2(R t / 2)`` with ``t = pi / rabi``, ``R = sqrt(rabi^2 + detuning^2)``."""
    rabi = np.asarray(rabi, dtype=float)
    if np.any(rabi <= 0):
        raise ValueError("rabi frequency must be positive")
    det = np.asarray(detuning, dtype=float)
    r = np.sqrt(rabi**2 + det**2)
    out = rabi**2 / r**2 * np.sin(r * (math.pi / rabi) / 2) ** 2
    return float(out) if out.ndim == 0 else out


class TrackingWarning(UserWarning):
    """Adiabatic state labels could not be followed reliably."""


_LABELS = [(ms, mi) for ms in (1, 0, -1) for mi in (0.5, -0.5)]


def _static_hamiltonian(p: NVParams, B: float, theta):
    # NV-frame Hamiltonian of a crystal held at angle theta (no rotation)
    return ham.nv_frame_hamiltonian(p, FieldSpec(B=B), 0.0, 0.0) if np.ndim(theta) == 0 and theta == 0 else (
        ham._static_nv(p) + ham.zeeman(p, ham.nv_field(FieldSpec(B=B), theta))
    )


def labelled_levels(p: NVParams, B: float, theta, max_step: float = 2e-3, min_overlap: float = 0.9):
    """Energies of the six levels, labelled ``(m_S, m_I)`` by continuity from ``theta = 0``.

    Walks from 0 to each requested angle in steps of at most ``max_step``
    and assigns each eigenvector to the previous one with largest overlap.
    Warns with :class:`TrackingWarning` if an overlap drops below
    ``min_overlap``. Returns an array of shape (len(theta), 6) ordered like
    the product basis.
    """
    thetas = np.atleast_1d(np.asarray(theta, dtype=float))
    order = np.argsort(np.abs(thetas))
    out = np.empty((len(thetas), 6))
    for sign in (1.0, -1.0):
        sel = [k for k in order if (thetas[k] >= 0) == (sign > 0)]
        if not sel:
            continue
        targets = np.abs(thetas[sel])
        top = float(targets.max())
        n = max(1, int(math.ceil(top / max_step)))
        path = np.union1d(np.linspace(0.0, top, n + 1), targets)
        w, v = eig_hermitian(_static_hamiltonian(p, B, sign * path))
        prev = np.eye(6, dtype=complex)
        energies = np.empty((len(path), 6))
        worst = 1.0
        for i in range(len(path)):
            ov = np.abs(prev.conj().T @ v[i]) ** 2
            perm = np.empty(6, dtype=int)
            taken = np.zeros(6, dtype=bool)
            for lab in np.argsort(-ov.max(axis=1)):
                cand = [j for j in np.argsort(-ov[lab]) if not taken[j]]
                perm[lab] = cand[0]
                taken[cand[0]] = True
                worst = min(worst, ov[lab, cand[0]])
            energies[i] = w[i][perm]
            prev = v[i][:, perm]
        if worst < min_overlap:
            warnings.warn(f"level tracking overlap fell to {worst:.3f} at B={B} G", TrackingWarning, stacklevel=2)
        for k, tgt in zip(sel, targets):
            out[k] = energies[np.searchsorted(path, tgt)]
    return out if np.ndim(theta) else out[0]


def transition_frequencies(p: NVParams, B: float, theta, **kw) -> dict[str, np.ndarray]:
    """Nuclear (``m_S = 0, -1``) and electron (``m_I = +-1/2``, ``0 -> -1``) transition frequencies.

    Angular frequencies (rad/s), upper minus lower level, so all four are
    positive at ``theta = 0`` below the level anti-crossing.
    """
    e = labelled_levels(p, B, theta, **kw)
    idx = {lab: i for i, lab in enumerate(_LABELS)}
    pick = lambda ms, mi: e[..., idx[(ms, mi)]]  # noqa: E731
    return {
        "nuclear_ms0": pick(0, 0.5) - pick(0, -0.5),
        "nuclear_ms-1": pick(-1, -0.5) - pick(-1, 0.5),
        "electron_mI+": pick(-1, 0.5) - pick(0, 0.5),
        "electron_mI-": pick(-1, -0.5) - pick(0, -0.5),
    }


def electron_frequency_slope(p: NVParams, B: float, theta, dtheta: float = 1e-4, branch: str = "electron_mI+"):
    """``d omega_e / d theta`` by central difference (rad/s per rad)."""
    theta = np.asarray(theta, dtype=float)
    up = transition_frequencies(p, B, theta + dtheta)[branch]
    dn = transition_frequencies(p, B, theta - dtheta)[branch]
    return (up - dn) / (2 * dtheta)


def max_electron_frequency_slope(p: NVParams, B: float, thetas=None, dtheta: float = 1e-4) -> float:
    """Largest ``|d omega_e / d theta|`` over ``thetas`` (default 0..pi/2) and both nuclear branches."""
    if thetas is None:
        thetas = np.linspace(dtheta, math.pi / 2 - dtheta, 181)
    best = 0.0
    for branch in ("electron_mI+", "electron_mI-"):
        best = max(best, float(np.max(np.abs(electron_frequency_slope(p, B, thetas, dtheta, branch)))))
    return best


# ------------------------------------------------------- sensitivity map

REGIME_CODES = {"enhanced": 0, "inertial": 1, "masked": 2}


@dataclass
class SensitivityMap:
    omega: np.ndarray
    B: np.ndarray
    eta: np.ndarray
    regime: np.ndarray
    masked: np.ndarray
    omega_max: np.ndarray
    omega_min: np.ndarray
    fidelity: np.ndarray

    def to_csv(self, path=None) -> str:
        """Rows ``omega_radps,B_gauss,eta_mdegps_sqrthz,regime,masked`` with B varying slowest."""
        names = {v: k for k, v in REGIME_CODES.items()}
        lines = ["omega_radps,B_gauss,eta_mdegps_sqrthz,regime,masked"]
        for j, b in enumerate(self.B):
            for i, w in enumerate(self.omega):
                lines.append(
                    f"{float(w)!r},{float(b)!r},{float(self.eta[j, i])!r},{names[int(self.regime[j, i])]},{int(self.masked[j, i])}"
                )
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def sensitivity_map(
    omega_grid,
    B_grid,
    inp: SensitivityInputs | None = None,
    xi: float = math.sqrt(1e-5),
    p: NVParams | None = None,
    rabi: float = TWO_PI * 1e6,
    pulse_time: float = 0.5e-6,
) -> SensitivityMap:
    """Best sensitivity over sensing time on an (omega, B) grid.

    A cell is ``enhanced`` below ``omega_max``, ``inertial`` above
    ``omega_min`` and ``masked`` in between (eta is still reported there,
    using whichever bound is lower, but flagged). Contrast is degraded to
    ``F C`` with ``F`` the fidelity of an electron pi-pulse detuned by the
    transition shift from the misalignment ``omega * pulse_time`` accrued
    during the pulse (capped at pi/2).
    """
    p = p or NVParams()
    inp = inp or SensitivityInputs()
    omegas = np.asarray(omega_grid, dtype=float)
    fields = np.asarray(B_grid, dtype=float)
    if omegas.size == 0 or fields.size == 0:
        raise ValueError("sensitivity_map needs nonempty grids")
    shape = (len(fields), len(omegas))
    eta = np.empty(shape)
    regime = np.empty(shape, dtype=int)
    fid = np.empty(shape)
    wmax = np.empty(len(fields))
    wmin = np.empty(len(fields))
    for j, b in enumerate(fields):
        alpha0 = ham.enhancement_factor(p, b)
        wmax[j] = omega_max(p, b, xi, alpha0)
        wmin[j] = omega_min(p, b, xi, alpha0)
        mis = np.minimum(np.abs(omegas) * pulse_time, math.pi / 2)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TrackingWarning)
            f0 = transition_frequencies(p, b, 0.0)["electron_mI+"]
            shifted = transition_frequencies(p, b, mis)["electron_mI+"]
        fid[j] = pulse_fidelity(rabi, shifted - f0)
        for i, w in enumerate(omegas):
            cell = SensitivityInputs(C=inp.C * max(fid[j, i], 1e-12), N=inp.N, t_d=inp.t_d, tau=inp.tau, t=inp.t)
            enh, _ = _best_over_t(lambda t: _enhanced_raw(cell, w, alpha0, t), w, inp.tau)
            ine, _ = _best_over_t(lambda t: _inertial_raw(cell, w, t), w, inp.tau)
            if w < wmax[j]:
                regime[j, i], eta[j, i] = REGIME_CODES["enhanced"], enh
            elif w > wmin[j]:
                regime[j, i], eta[j, i] = REGIME_CODES["inertial"], ine
            else:
                regime[j, i], eta[j, i] = REGIME_CODES["masked"], min(enh, ine)
    return SensitivityMap(
        omega=omegas,
        B=fields,
        eta=_mdeg(eta),
        regime=regime,
        masked=regime == REGIME_CODES["masked"],
        omega_max=wmax,
        omega_min=wmin,
        fidelity=fid,
    )
