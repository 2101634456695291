"""Time propagation of the 6-level electron-nuclear density matrix.

Each step exponentiates the instantaneous Hamiltonian at the step midpoint
exactly, so the step size is set by how fast H(t) changes rather than by its
GHz-scale norm. Relaxation uses a first-order stepper that applies the dissipator to the
unitarily advanced state,

    sigma = U rho U^dagger
    rho  <- sigma + dt * sum_k (L sigma L^dagger - {L^dagger L, sigma} / 2)

and static field noise is handled by Monte Carlo averaging over Gaussian
field offsets.
"""

from __future__ import annotations

import dataclasses
import io
import math
import warnings
from dataclasses import dataclass
from dataclasses import field as dfield

import numba as nb
import numpy as np

from . import hamiltonian as ham
from .hamiltonian import FieldSpec, NVParams, RotationSpec
from .linalg import SPINS, TOTAL_DIM, dagger, exp_unitary, is_hermitian, partial_trace, spin_operators

CSV_HEADER = "t_s,S_z,S_x,nx,ny,nz,ex,ey,ez,trace_err"

_CHUNK = 20000

# lab-frame step ceiling; keeps lab and NV frames within 1e-7 at 50 G
LAB_DT_MAX = 2.5e-9


class NumericalError(RuntimeError):
    """Propagation produced a non-physical density matrix."""

    def __init__(self, message: str, step: int):
        self.step = step
        super().__init__(f"{message} (step {step})")


class StepSizeError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    """Static Gaussian field offsets (Gauss, one standard deviation per axis)."""

    sigma_Bx: float = 0.0
    sigma_By: float = 0.0
    sigma_Bz: float = 0.0
    samples: int = 1
    co_rotating: bool = False

    def __post_init__(self):
        if min(self.sigma_Bx, self.sigma_By, self.sigma_Bz) < 0:
            raise ValueError("noise sigmas must be >= 0")
        if self.samples < 1:
            raise ValueError("noise samples must be >= 1")

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([self.sigma_Bx, self.sigma_By, self.sigma_Bz])


@dataclass(frozen=True)
class Scenario:
    """One simulation run.

    ``initial_state`` is either an ``(m_S, m_I)`` label or an explicit 6x6
    density matrix. Give at most one of ``dt`` and ``angle_per_step``; with
    neither the default step policy applies (see :func:`default_dt`).
    ``stride`` is the output decimation in steps.
    """

    params: NVParams = dfield(default_factory=NVParams)
    field: FieldSpec = dfield(default_factory=FieldSpec)
    rotation: RotationSpec = dfield(default_factory=RotationSpec)
    frame: str = "nv"
    initial_state: object = (0, 0.5)
    duration: float = 1e-3
    dt: float | None = None
    angle_per_step: float | None = None
    T1e: float | None = None
    noise: NoiseModel | None = None
    seed: int = 0
    stride: int = 100
    tol: float = 1e-10

    def __post_init__(self):
        if self.frame not in ("nv", "lab"):
            raise ValueError(f"frame must be 'nv' or 'lab', not {self.frame!r}")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.dt is not None and self.angle_per_step is not None:
            raise ValueError("give dt or angle_per_step, not both")
        if self.dt is not None and not self.dt > 0:
            raise StepSizeError("dt must be positive")
        if self.angle_per_step is not None:
            if not self.angle_per_step > 0:
                raise StepSizeError("angle_per_step must be positive")
            if self.rotation.omega == 0:
                raise StepSizeError("angle_per_step needs a nonzero rotation rate")
        if self.T1e is not None and not self.T1e > 0:
            raise ValueError("T1e must be positive")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @property
    def omega(self) -> float:
        return self.rotation.omega

    def step_size(self) -> float:
        """Resolved step, shrunk so an integer number of steps spans ``duration``."""
        if self.dt is not None:
            dt = self.dt
        elif self.angle_per_step is not None:
            dt = self.angle_per_step / abs(self.omega)
        else:
            dt = default_dt(self)
        if dt > self.duration:
            raise StepSizeError(f"dt={dt:g} s exceeds duration={self.duration:g} s")
        n = math.ceil(self.duration / dt - 1e-9)
        dt = self.duration / n
        if self.T1e is not None and dt > self.T1e / 100:
            raise StepSizeError(f"dt={dt:g} s violates dt <= T1e/100 = {self.T1e / 100:g} s")
        return dt

    def n_steps(self) -> int:
        return round(self.duration / self.step_size())

    def initial_rho(self) -> np.ndarray:
        state = self.initial_state
        if isinstance(state, np.ndarray) and state.shape == (TOTAL_DIM, TOTAL_DIM):
            rho = state.astype(complex)
            if not is_hermitian(rho, self.tol) or abs(np.trace(rho) - 1) > 1e-8:
                raise ValueError("initial density matrix must be Hermitian with unit trace")
            return rho
        ms, mi = state
        return SPINS.product_state(int(ms), float(mi))


def default_dt(s: Scenario) -> float:
    """Step policy: min(rotation period / 1000, 1/(50 gamma_n B_eff_max), T1e/100).

    ``B_eff_max`` is the enhanced transverse field ``|alpha_0| B``. Falls back
    to ``duration / 1000`` when no scale applies. In the lab frame the
    zero-field splitting tensor itself rotates, so the step is further capped
    at ``min(period / 4000, 2.5 ns)`` and then moved off stroboscopic
    resonance (see :func:`off_resonant_dt`).
    """
    p = s.params
    candidates = []
    if s.omega != 0:
        candidates.append(2 * math.pi / abs(s.omega) / 1000)
    if s.field.B > 0:
        try:
            alpha = abs(ham.enhancement_factor(p, s.field.B))
        except ham.PoleError:
            alpha = p.gamma_e / (math.sqrt(2) * p.gamma_n)
        candidates.append(1 / (50 * p.gamma_n * max(alpha, 1.0) * s.field.B))
    if s.T1e is not None:
        candidates.append(s.T1e / 100)
    if s.frame == "lab" and s.omega != 0:
        candidates.append(min(2 * math.pi / abs(s.omega) / 4000, LAB_DT_MAX))
    if not candidates:
        candidates.append(s.duration / 1000)
    dt = min(min(candidates), s.duration)
    if s.frame == "lab":
        dt = off_resonant_dt(s, dt)
    return dt


def off_resonant_dt(s: Scenario, dt_max: float, margin: float = 0.1) -> float:
    """Largest step <= ``dt_max`` that keeps the electron band off resonance.

    With piecewise-constant steps, per-step errors on the ms = 0 <-> +-1
    coherences add up coherently whenever f dt is close to an integer. As the
    crystal turns, those transitions sweep through
    [D - gamma_e |B| - A, D + gamma_e |B| + A] / 2pi, so the whole band times
    ``dt`` must stay at least ``margin`` cycles clear of every integer.
    """
    p = s.params
    b = s.field.B + math.sqrt(sum(x * x for x in s.field.dB))
    spread = p.gamma_e * b + abs(p.A_zz) + abs(p.A_perp)
    f_lo = (p.D - spread) / (2 * math.pi)
    f_hi = (p.D + spread) / (2 * math.pi)
    k = math.floor(f_lo * dt_max) if f_lo > 0 else 0
    for k in range(k, 0, -1):
        lo, hi = (k + margin) / f_lo, (k + 1 - margin) / f_hi
        if lo < hi and lo <= dt_max:
            return min(dt_max, hi)
    return min(dt_max, (1 - margin) / f_hi)


def relaxation_operators(T1e: float, params: NVParams | None = None) -> np.ndarray:
    """The six electron flip operators ``sqrt(Gamma) |m><m'|`` (x 1 on the nucleus).

    ``Gamma = 1 / (3 T1e)``. Returned as a (6, 6, 6) stack; ``T1e = inf``
    gives zero operators.
    """
    if not T1e > 0:
        raise ValueError("T1e must be positive")
    gamma = 0.0 if math.isinf(T1e) else 1.0 / (3.0 * T1e)
    ops = []
    eye_n = np.eye(2)
    for m in range(3):
        for mp in range(3):
            if m == mp:
                continue
            flip = np.zeros((3, 3), dtype=complex)
            flip[m, mp] = math.sqrt(gamma)
            ops.append(np.kron(flip, eye_n))
    return np.array(ops)


def _jump_rate(jumps: np.ndarray) -> float:
    if len(jumps) == 0:
        return 0.0
    return float(max(np.linalg.norm(dagger(L) @ L, 2) for L in jumps))


def dissipator(rho: np.ndarray, jumps: np.ndarray) -> np.ndarray:
    out = np.zeros_like(rho)
    for L in jumps:
        ldl = dagger(L) @ L
        out += L @ rho @ dagger(L) - 0.5 * (ldl @ rho + rho @ ldl)
    return out


def lindblad_step(rho: np.ndarray, h: np.ndarray, jumps, dt: float, tol: float = 1e-10) -> np.ndarray:
    """One relaxation step: exact unitary, then a first-order dissipator.

    Rejects ``dt * Gamma >= 0.01`` where ``Gamma`` is the largest single-jump
    rate. The result is re-symmetrized to remove round-off anti-Hermitian
    drift. With no (or all-zero) jumps this is exactly ``U rho U^dagger``.
    """
    jumps = np.asarray(jumps, dtype=complex).reshape(-1, TOTAL_DIM, TOTAL_DIM) if len(jumps) else np.zeros(
        (0, TOTAL_DIM, TOTAL_DIM), dtype=complex
    )
    rate = _jump_rate(jumps)
    if rate * dt >= 0.01:
        raise StepSizeError(f"dt*Gamma = {rate * dt:.3g} >= 0.01; reduce dt below {0.01 / rate:.3g} s")
    u = exp_unitary(h, dt, tol=tol)
    out = u @ rho @ dagger(u)
    if rate == 0.0:
        return out
    out = out + dt * dissipator(out, jumps)
    return 0.5 * (out + dagger(out))


@nb.njit(cache=True)
def _mm(a, b, out):
    n = a.shape[0]
    for i in range(n):
        for j in range(n):
            acc = 0j
            for k in range(n):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc


@nb.njit(cache=True)
def _mmh(a, b, out):
    # a @ b^dagger
    n = a.shape[0]
    for i in range(n):
        for j in range(n):
            acc = 0j
            for k in range(n):
                acc += a[i, k] * b[j, k].conjugate()
            out[i, j] = acc


@nb.njit(cache=True)
def _mhm(a, b, out):
    # a^dagger @ b
    n = a.shape[0]
    for i in range(n):
        for j in range(n):
            acc = 0j
            for k in range(n):
                acc += a[k, i].conjugate() * b[k, j]
            out[i, j] = acc


@nb.njit(cache=True)
def _dissipate(rho, jumps, ldl, out, t1, t2):
    n = rho.shape[0]
    for i in range(n):
        for j in range(n):
            out[i, j] = 0j
    for k in range(jumps.shape[0]):
        _mm(jumps[k], rho, t1)
        _mmh(t1, jumps[k], t2)
        for i in range(n):
            for j in range(n):
                out[i, j] += t2[i, j]
    _mm(ldl, rho, t1)
    _mm(rho, ldl, t2)
    for i in range(n):
        for j in range(n):
            out[i, j] -= 0.5 * (t1[i, j] + t2[i, j])


@nb.njit(cache=True)
def _run_chain(us, rots, use_rots, rho, jumps, ldl, dt, stride, first_step, out, out_steps):
    """Advance ``rho`` through the step unitaries ``us``.

    Records rho after every step whose global index (1-based) is a multiple
    of ``stride``; returns the number of records written.
    """
    n = rho.shape[0]
    t1 = np.empty((n, n), dtype=np.complex128)
    t2 = np.empty((n, n), dtype=np.complex128)
    d = np.empty((n, n), dtype=np.complex128)
    r = np.empty((n, n), dtype=np.complex128)
    has_jumps = jumps.shape[0] > 0
    n_out = 0
    for k in range(us.shape[0]):
        # sigma = U rho U^dagger, then rho = sigma + dt * D(sigma)
        _mm(us[k], rho, t1)
        _mmh(t1, us[k], rho)
        if has_jumps:
            if use_rots:
                # dissipator acts in the NV frame: R D(R^dagger sigma R) R^dagger
                _mhm(rots[k], rho, t2)
                _mm(t2, rots[k], r)
                _dissipate(r, jumps, ldl, d, t2, t1)
                _mm(rots[k], d, t2)
                _mmh(t2, rots[k], d)
            else:
                _dissipate(rho, jumps, ldl, d, t2, r)
            for i in range(n):
                for j in range(i, n):
                    v = rho[i, j] + dt * d[i, j]
                    w = rho[j, i] + dt * d[j, i]
                    v = 0.5 * (v + w.conjugate())
                    rho[i, j] = v
                    rho[j, i] = v.conjugate()
        step = first_step + k + 1
        if step % stride == 0:
            for i in range(n):
                for j in range(n):
                    out[n_out, i, j] = rho[i, j]
            out_steps[n_out] = step
            n_out += 1
    return n_out


@dataclass
class Trajectory:
    """Decimated density-matrix series of one run (or an ensemble average).

    ``rho`` is stored in the propagation frame; observables are always
    reported in the NV frame.
    """

    times: np.ndarray
    rho: np.ndarray
    frame: str
    omega: float
    dt: float = float("nan")
    meta: dict = dfield(default_factory=dict)

    @property
    def theta(self) -> np.ndarray:
        return self.omega * self.times

    def rho_nv(self) -> np.ndarray:
        if self.frame == "nv":
            return self.rho
        u = ham.frame_rotation(self.theta)
        return dagger(u) @ self.rho @ u

    def nuclear_rho(self) -> np.ndarray:
        return partial_trace(self.rho_nv(), "nuclear")

    def electron_rho(self) -> np.ndarray:
        return partial_trace(self.rho_nv(), "electron")

    def nuclear_bloch(self) -> np.ndarray:
        """Nuclear Bloch vector ``2 <I>`` in the NV frame, shape (T, 3)."""
        rn = self.nuclear_rho()
        ops = spin_operators(0.5)
        return np.stack([2 * np.real(np.einsum("tij,ji->t", rn, op)) for op in ops], -1)

    def electron_bloch(self) -> np.ndarray:
        """Electron spin expectation ``<S>`` in the NV frame, shape (T, 3)."""
        re = self.electron_rho()
        ops = spin_operators(1)
        return np.stack([np.real(np.einsum("tij,ji->t", re, op)) for op in ops], -1)

    def trace_error(self) -> np.ndarray:
        return np.abs(np.real(np.einsum("tii->t", self.rho)) - 1.0)

    def observables(self) -> dict[str, np.ndarray]:
        n = self.nuclear_bloch()
        e = self.electron_bloch()
        return {
            "t_s": self.times,
            "S_z": 0.5 * (1 + n[:, 2]),
            "S_x": 0.5 * (1 + n[:, 0]),
            "nx": n[:, 0],
            "ny": n[:, 1],
            "nz": n[:, 2],
            "ex": e[:, 0],
            "ey": e[:, 1],
            "ez": e[:, 2],
            "trace_err": self.trace_error(),
        }

    def to_csv(self, path=None) -> str:
        """CSV with header ``t_s,S_z,S_x,nx,ny,nz,ex,ey,ez,trace_err``.

        Floats use Python's shortest round-trip repr, so output is byte-stable.
        """
        obs = self.observables()
        cols = CSV_HEADER.split(",")
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for row in zip(*(obs[c] for c in cols)):
            buf.write(",".join(repr(float(x)) for x in row) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _hamiltonian_stack(s: Scenario, t_mid: np.ndarray) -> np.ndarray:
    if s.frame == "nv":
        return ham.nv_frame_hamiltonian(s.params, s.field, s.omega, t_mid)
    return ham.lab_frame_hamiltonian(s.params, s.field, s.omega * t_mid)


def _check_physical(rho: np.ndarray, steps: np.ndarray, tol: float = 1e-8):
    tr = np.abs(np.real(np.einsum("tii->t", rho)) - 1)
    bad = np.nonzero(tr > tol)[0]
    if len(bad):
        raise NumericalError(f"trace drifted by {tr[bad[0]]:.3g}", int(steps[bad[0]]))
    herm = 0.5 * (rho + dagger(rho))
    lam = np.linalg.eigvalsh(herm)[:, 0]
    bad = np.nonzero(lam < -tol)[0]
    if len(bad):
        raise NumericalError(f"negative eigenvalue {lam[bad[0]]:.3g}", int(steps[bad[0]]))


def propagate(s: Scenario) -> Trajectory:
    """Propagate one scenario (ignoring ``s.noise``; see :func:`ensemble_average`).

    Output is recorded at ``t = 0``, every ``stride`` steps, and at the end.
    """
    dt = s.step_size()
    n = round(s.duration / dt)
    rho = np.ascontiguousarray(s.initial_rho().copy())
    if s.T1e is not None:
        jumps = relaxation_operators(s.T1e)
        rate = _jump_rate(jumps)
        if rate * dt >= 0.01:
            raise StepSizeError(f"dt*Gamma = {rate * dt:.3g} >= 0.01")
        if rate == 0.0:
            jumps = jumps[:0]
    else:
        jumps = np.zeros((0, TOTAL_DIM, TOTAL_DIM), dtype=complex)
    ldl = np.ascontiguousarray(np.einsum("kji,kjl->il", jumps.conj(), jumps)) if len(jumps) else np.zeros(
        (TOTAL_DIM, TOTAL_DIM), dtype=complex
    )
    use_rots = s.frame == "lab" and len(jumps) > 0

    rec_rho = [rho.copy()[None]]
    rec_steps = [np.array([0])]
    for start in range(0, n, _CHUNK):
        stop = min(n, start + _CHUNK)
        t_mid = (np.arange(start, stop) + 0.5) * dt
        us = np.ascontiguousarray(exp_unitary(_hamiltonian_stack(s, t_mid), dt, tol=s.tol))
        if use_rots:
            rots = np.ascontiguousarray(ham.frame_rotation(s.omega * t_mid))
        else:
            rots = np.zeros((1, TOTAL_DIM, TOTAL_DIM), dtype=complex)
        n_rec = (stop // s.stride) - (start // s.stride)
        out = np.empty((max(n_rec, 0), TOTAL_DIM, TOTAL_DIM), dtype=complex)
        out_steps = np.empty(max(n_rec, 0), dtype=np.int64)
        written = _run_chain(us, rots, use_rots, rho, jumps, ldl, dt, s.stride, start, out, out_steps)
        if written:
            _check_physical(out[:written], out_steps[:written])
            rec_rho.append(out[:written].copy())
            rec_steps.append(out_steps[:written].copy())
    if n % s.stride:
        _check_physical(rho[None], np.array([n]))
        rec_rho.append(rho.copy()[None])
        rec_steps.append(np.array([n]))
    steps = np.concatenate(rec_steps)
    return Trajectory(
        times=steps * dt,
        rho=np.concatenate(rec_rho),
        frame=s.frame,
        omega=s.omega,
        dt=dt,
        meta={"steps": n, "stride": s.stride},
    )


_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step; returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def sample_normals(seed: int, index: int, count: int) -> np.ndarray:
    """Standard normals for ensemble member ``index`` via splitmix64 + Box-Muller.

    The stream for member ``i`` starts from ``splitmix64(seed + i)``, so any
    member can be regenerated without drawing the others.
    """
    state, _ = splitmix64((seed + index) & _MASK64)
    out = []
    while len(out) < count:
        state, a = splitmix64(state)
        state, b = splitmix64(state)
        # 53-bit uniforms; u1 in (0, 1] keeps the log finite
        u1 = ((a >> 11) + 1) / 2.0**53
        u2 = (b >> 11) / 2.0**53
        r = math.sqrt(-2.0 * math.log(u1))
        out.append(r * math.cos(2 * math.pi * u2))
        out.append(r * math.sin(2 * math.pi * u2))
    return np.array(out[:count])


def noise_offsets(s: Scenario) -> np.ndarray:
    """Field offsets (samples, 3) in Gauss drawn for ``s.noise``."""
    noise = s.noise or NoiseModel()
    return np.array([sample_normals(s.seed, i, 3) * noise.sigmas for i in range(noise.samples)])


def _member_rho(task) -> Trajectory:
    s, db = task
    member_field = dataclasses.replace(s.field, dB=tuple(np.asarray(s.field.dB) + db), co_rotating=s.noise.co_rotating)
    return propagate(dataclasses.replace(s, field=member_field, noise=None))


def ensemble_average(s: Scenario, workers: int | None = 1) -> Trajectory:
    """Average ``propagate`` over static Gaussian field offsets.

    Members may run on several worker processes but are always reduced in
    index order, so the result is deterministic for a given seed.
    """
    from .parallel import map_ordered

    noise = s.noise
    if noise is None:
        return propagate(s)
    acc = None
    first = None
    offsets = noise_offsets(s)
    # batches bound memory when members run in parallel
    batch = max(1, 4 * (workers or 1))
    for start in range(0, len(offsets), batch):
        tasks = [(s, db) for db in offsets[start : start + batch]]
        for traj in map_ordered(_member_rho, tasks, workers):
            if acc is None:
                acc = traj.rho.copy()
                first = traj
            else:
                acc += traj.rho
    rho = acc / noise.samples
    rho = 0.5 * (rho + dagger(rho))
    return Trajectory(
        times=first.times,
        rho=rho,
        frame=first.frame,
        omega=first.omega,
        dt=first.dt,
        meta={**first.meta, "samples": noise.samples},
    )


def run(s: Scenario, workers: int | None = 1) -> Trajectory:
    """Dispatch to :func:`ensemble_average` when noise is configured."""
    if s.noise is not None and np.any(s.noise.sigmas > 0):
        return ensemble_average(s, workers)
    if s.noise is not None:
        warnings.warn("noise model with zero sigmas; running a single trajectory", stacklevel=2)
    return propagate(s)


def measure_signal(traj: Trajectory, axis: str = "z_NV") -> np.ndarray:
    """Population of the nuclear ``m_I = +1/2`` state along an NV-frame axis.

    For lab-frame trajectories the projector is co-rotated with the diamond,
    which is what :meth:`Trajectory.rho_nv` does.
    """
    n = traj.nuclear_bloch()
    if axis in ("z_NV", "z"):
        return 0.5 * (1 + n[:, 2])
    if axis in ("x_NV", "x"):
        return 0.5 * (1 + n[:, 0])
    raise ValueError(f"axis must be 'z_NV' or 'x_NV', not {axis!r}")
