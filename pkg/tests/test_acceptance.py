"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line (printed in the pytest terminal summary
and by ``python tests/test_acceptance.py``) before asserting, so criteria
that miss their tolerance still report the measured value.
"""

import dataclasses
import math
import sys
import time
from functools import lru_cache

import numpy as np
import pytest

from hfgyro import evolution as ev
from hfgyro import fitting as fit
from hfgyro import hamiltonian as ham
from hfgyro import metrology as met
from hfgyro import scenarios as sc
from hfgyro.evolution import Scenario
from hfgyro.hamiltonian import FieldSpec, NVParams, RotationSpec
from hfgyro.linalg import SPINS, commutator, dagger, eig_hermitian, exp_unitary, spin_operators
from hfgyro.parallel import available_workers

P = NVParams()
TWO_PI = 2 * math.pi

RESULTS: dict[int, list[tuple[str, bool, str]]] = {}


def record(criterion: int, name: str, passed: bool, detail: str) -> bool:
    RESULTS.setdefault(criterion, []).append((name, bool(passed), detail))
    return bool(passed)


def summary_lines() -> list[str]:
    lines = []
    for n in sorted(RESULTS):
        checks = RESULTS[n]
        ok = all(c[1] for c in checks)
        detail = "; ".join(f"{name}: {d}{'' if p else ' [miss]'}" for name, p, d in checks)
        lines.append(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return lines


def _check_all(n):
    misses = [f"{name}: {d}" for name, p, d in RESULTS[n] if not p]
    assert not misses, "; ".join(misses)


# ----------------------------------------------------------- 1, 2


def test_criterion_01_small_field_enhancement():
    a = ham.enhancement_factor(P, 0.0)
    k = 1 - 2 * P.kappa
    record(1, "|alpha0(0)|", abs(abs(a) - 15.5) <= 0.2, f"{abs(a):.4f} (15.5 +- 0.2)")
    record(1, "alpha0(0) / (1 - 2 kappa)", abs(a / k - 1) < 0.01, f"{a / k:.5f} (1 within 1%)")
    _check_all(1)


def test_criterion_02_gslac_limit():
    a = ham.enhancement_factor(P, 1024.0)
    target = P.gamma_e / (math.sqrt(2) * P.gamma_n)
    rel = abs(abs(a) / target - 1)
    record(2, "|alpha0(1024 G)|", rel < 0.05, f"{abs(a):.1f} vs {target:.1f} ({100 * rel:.2f}% < 5%)")
    _check_all(2)


# ----------------------------------------------------------- 3, 4, 5

SLOW = Scenario(field=FieldSpec(B=50.0), rotation=RotationSpec(TWO_PI * 100), duration=10e-3)
DT, STRIDE = 1e-8, 100
# lab frame: the library's off-resonant default step, shrunk so samples land
# on the same 1 us grid as the NV run
LAB_STRIDE = math.ceil(DT * STRIDE / ev.default_dt(dataclasses.replace(SLOW, frame="lab")))
LAB_DT = DT * STRIDE / LAB_STRIDE


@lru_cache(maxsize=None)
def _slow_nv():
    t0 = time.perf_counter()
    traj = ev.propagate(dataclasses.replace(SLOW, dt=DT, stride=STRIDE))
    return traj, time.perf_counter() - t0


def test_criterion_03_slow_rotation():
    traj, _ = _slow_nv()
    dev = met.signal_deviation(traj.times, ev.measure_signal(traj), P, 50.0, SLOW.omega, "enhanced")
    record(3, "mean |<S_z> - <slow closed form>|", dev < 0.01, f"{dev:.3g} (< 0.01)")
    _check_all(3)


def test_criterion_04_fast_rotation():
    omega = TWO_PI * 1e6
    s = Scenario(field=FieldSpec(B=50.0), rotation=RotationSpec(omega), duration=10 * TWO_PI / omega, stride=10)
    traj = ev.propagate(s)
    rms = float(np.sqrt(np.mean((ev.measure_signal(traj) - met.signal_fast(omega, traj.times)) ** 2)))
    record(4, "RMS |S_z - (1 + cos wt)/2| over 10 periods", rms < 0.02, f"{rms:.4f} (< 0.02)")
    _check_all(4)


def test_criterion_05_frame_equivalence():
    nv, nv_s = _slow_nv()
    t0 = time.perf_counter()
    lab = ev.propagate(dataclasses.replace(SLOW, frame="lab", dt=LAB_DT, stride=LAB_STRIDE))
    lab_s = time.perf_counter() - t0
    assert np.allclose(nv.times, lab.times, rtol=0, atol=1e-15)
    d = ev.measure_signal(nv) - ev.measure_signal(lab)
    rms = float(np.sqrt(np.mean(d**2)))
    record(5, "RMS S_z(NV frame) - S_z(lab frame)", rms < 1e-6, f"{rms:.2e} (< 1e-6)")
    record(5, "runtime, both frames", nv_s + lab_s < 120, f"{nv_s + lab_s:.0f} s (< 120 s)")
    _check_all(5)


# ----------------------------------------------------------- 6, 7


def test_criterion_06_relaxation():
    for T1e in (2e-3, 5e-3, 10e-3):
        res, _ = sc.slow_decay(T1e)
        r = res.tau / T1e
        record(6, f"slow tau/T1e at {T1e * 1e3:g} ms", abs(r - 1.5) <= 0.15, f"{r:.3f} (1.5 +- 0.15)")
    res, _ = sc.inertial_decay()
    r = res.tau / 20e-6
    record(6, "inertial tau/T1e (2pi x 10 MHz)", r > 1.5, f"{r:.3f} (> 1.5)")
    _check_all(6)


def test_criterion_07_ensemble_dephasing():
    for sigma in sc.FIG3B_SIGMAS:
        t_fit, t_pred, _, _ = sc.dephasing_time(sigma, samples=500, seed=0, workers=available_workers())
        r = t_fit / t_pred
        record(7, f"T2 fit / sqrt2/(gamma_n sigma) at {sigma} G", abs(r - 1) < 0.15, f"{r:.3f} (1 within 15%)")
    _check_all(7)


# ----------------------------------------------------------- 8


def test_criterion_08_sensitivities():
    inp = met.SensitivityInputs()
    a = abs(ham.enhancement_factor(P, 1024.0))
    enh = met.sensitivity_enhanced(inp, TWO_PI * 10, 1024.0, alpha0=-a).bound
    record(8, "enhanced bound near GSLAC", 1e-3 / 1.5 <= enh <= 1.5e-3, f"{enh:.3e} (1e-3 within x1.5)")
    ine = met.sensitivity_inertial(inp).bound
    record(8, "inertial optimum", abs(ine / 4.91 - 1) < 0.02, f"{ine:.4f} (4.91 within 2%)")
    domega = met.max_electron_frequency_slope(P, 1000.0)
    nvr = met.sensitivity_nv_ramsey(met.SensitivityInputs(tau=0.7e-6, t_d=0.05e-3, t=0.35e-6), domega).bound
    record(
        8,
        "NV Ramsey optimum",
        0.2 / 1.5 <= nvr <= 0.3,
        f"{nvr:.4f} (0.2 within x1.5; slope 2pi x {domega / TWO_PI / 1e6:.0f} MHz/rad)",
    )
    _check_all(8)


# ----------------------------------------------------------- 9


def test_criterion_09_adiabaticity():
    worst = 0.0
    for B in (10.0, 50.0, 200.0, 500.0, 1000.0):
        a = ham.enhancement_factor(P, B)
        for frac in (1e-3, 1e-2, 0.1, 0.5, 0.9):
            w = frac * P.gamma_n * B
            m = met.eigenstate_deviation(P, B, w, (math.pi / 2) / w, alpha0=a)
            worst = max(worst, abs(m / float(met.m_min(a, w / (P.gamma_n * B))) - 1))
    record(9, "tracked M(pi/2) vs closed form", worst < 1e-8, f"max rel err {worst:.1e} (< 1e-8)")
    wmax = met.omega_max(P, 50.0, math.sqrt(1e-5))
    _, d_lo, _, _ = sc.deviation_point(0.5 * wmax)
    _, d_hi, _, _ = sc.deviation_point(5 * wmax)
    record(9, "<dS> at 0.5 omega_max", d_lo < 0.01, f"{d_lo:.3g} (< 0.01)")
    record(9, "<dS> at 5 omega_max", d_hi >= 0.01, f"{d_hi:.3g} (>= 0.01)")
    _check_all(9)


# ----------------------------------------------------------- 10


def test_criterion_10_properties():
    # unitary propagation: 10^4 steps
    s = Scenario(field=FieldSpec(B=50.0, dB=(0.3, 0.1, -0.2)), rotation=RotationSpec(TWO_PI * 1e3), duration=1e-4, dt=1e-8, stride=100)
    traj = ev.propagate(s)
    assert traj.meta["steps"] == 10_000
    r = traj.rho
    tr = float(np.max(np.abs(np.real(np.einsum("tii->t", r)) - 1)))
    pur = float(np.max(np.abs(np.real(np.einsum("tij,tji->t", r, r)) - 1)))
    record(10, "trace and purity over 1e4 steps", max(tr, pur) < 1e-10, f"{max(tr, pur):.1e} (< 1e-10)")

    rng = np.random.default_rng(0)
    a = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    h = a + dagger(a)
    rho = SPINS.product_state(0, 0.5)
    u = exp_unitary(h, 1e-2)
    same = np.array_equal(ev.lindblad_step(rho, h, ev.relaxation_operators(math.inf), 1e-2), u @ rho @ dagger(u))
    record(10, "Gamma = 0 Lindblad step equals unitary", same, "exact" if same else "differs")

    err = 0.0
    for spin in (0.5, 1):
        x, y, z = spin_operators(spin)
        err = max(err, np.max(np.abs(commutator(x, y) - 1j * z)), np.max(np.abs(x @ x + y @ y + z @ z - spin * (spin + 1) * np.eye(len(x)))))
    record(10, "su(2) algebra", err < 1e-15, f"max err {err:.1e} (machine precision)")

    worst = 0.0
    for _ in range(50):
        a = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
        hm = a + dagger(a)
        w, v = eig_hermitian(hm)
        worst = max(worst, float(np.max(np.abs(v @ np.diag(w) @ dagger(v) - hm))))
    record(10, "eigendecomposition reconstruction", worst < 1e-12, f"{worst:.1e} (< 1e-12)")

    t = np.linspace(0, 1e-2, 1001)
    col = float(np.max(np.abs(met.signal_slow(TWO_PI * 100, 1.0, t) - met.signal_fast(TWO_PI * 100, t))))
    record(10, "slow form at alpha0 = 1 equals fast form", col < 1e-14, f"{col:.1e}")

    worst = 0.0
    for w in (1.0, 100.0, 1e4):
        for alpha in (-15.5, 2.0, 300.0):
            for theta in (0.0, 0.3, 1.0, 1.4):
                tt = theta / w
                # step scaled to the local variation length in theta: 1/|alpha| near 0, about theta later
                hstep = 1e-4 * min(1.0, max(1 / abs(alpha), theta)) / w
                fd = (met.signal_x(w, alpha, tt + hstep) - met.signal_x(w, alpha, tt - hstep)) / (2 * hstep)
                an = met.signal_x_rate(w, alpha, tt)
                worst = max(worst, abs(fd - an) / abs(an))
    record(10, "analytic vs finite-difference S_x slope", worst < 1e-6, f"max rel err {worst:.1e} (< 1e-6)")
    _check_all(10)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
