"""NV ground-state Hamiltonian with a 15N nucleus, in the lab and NV frames.

All frequencies are angular (rad/s) and fields are in Gauss. The diamond
rotates about the lab y axis by ``theta = omega * t``; at ``theta = 0`` the NV
axis is parallel to the bias field along lab z.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .linalg import SPINS, spin_operators
from .units import TWO_PI


@dataclass(frozen=True)
class NVParams:
    D: float = TWO_PI * 2.87e9
    A_zz: float = TWO_PI * 3.03e6
    A_perp: float = TWO_PI * 3.65e6
    gamma_e: float = TWO_PI * 2.802e6
    gamma_n: float = TWO_PI * 0.432e3

    def __post_init__(self):
        for name in ("D", "A_zz", "A_perp", "gamma_e", "gamma_n"):
            if not getattr(self, name) > 0:
                raise ValueError(f"NVParams.{name} must be positive")

    @property
    def kappa(self) -> float:
        """Small-field mixing parameter gamma_e A_perp / (gamma_n D)."""
        return self.gamma_e * self.A_perp / (self.gamma_n * self.D)

    @property
    def zfs_tensor(self) -> np.ndarray:
        return np.diag([0.0, 0.0, self.D])

    @property
    def hyperfine_tensor(self) -> np.ndarray:
        return np.diag([self.A_perp, self.A_perp, self.A_zz])

    @property
    def gslac_field(self) -> float:
        """Field (G) where gamma_e B = D."""
        return self.D / self.gamma_e


@dataclass(frozen=True)
class FieldSpec:
    """Bias field ``B`` along lab z plus an optional static offset ``dB``.

    ``dB`` is fixed in the lab frame unless ``co_rotating`` is set, in which
    case it is fixed to the diamond (static in the NV frame).
    """

    B: float = 0.0
    dB: tuple[float, float, float] = (0.0, 0.0, 0.0)
    co_rotating: bool = False

    def __post_init__(self):
        if self.B < 0:
            raise ValueError("FieldSpec.B must be >= 0")
        object.__setattr__(self, "dB", tuple(float(x) for x in self.dB))
        if len(self.dB) != 3:
            raise ValueError("FieldSpec.dB must have three components")


@dataclass(frozen=True)
class RotationSpec:
    """Rotation of the diamond about lab y at a constant signed rate (rad/s)."""

    omega: float = 0.0
    axis: str = field(default="y", init=False)

    def angle(self, t):
        return self.omega * np.asarray(t, dtype=float)


class PoleError(ValueError):
    """A zero-quantum mixing denominator is too close to zero."""


class ApproximationWarning(UserWarning):
    pass


def rotation_y(beta) -> np.ndarray:
    """``R_y(beta)``; accepts an array of angles and returns a stack."""
    beta = np.asarray(beta, dtype=float)
    c, s = np.cos(beta), np.sin(beta)
    zero, one = np.zeros_like(c), np.ones_like(c)
    return np.stack(
        [np.stack([c, zero, s], -1), np.stack([zero, one, zero], -1), np.stack([-s, zero, c], -1)], -2
    )


def rotation_z(alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    c, s = np.cos(alpha), np.sin(alpha)
    zero, one = np.zeros_like(c), np.ones_like(c)
    return np.stack(
        [np.stack([c, -s, zero], -1), np.stack([s, c, zero], -1), np.stack([zero, zero, one], -1)], -2
    )


def euler_rotation_matrix(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Z-Y-Z Euler rotation ``R_z(gamma) @ R_y(beta) @ R_z(alpha)``."""
    return rotation_z(gamma) @ rotation_y(beta) @ rotation_z(alpha)


def rotate_tensor(t: np.ndarray, r: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Congruence ``r @ t @ r.T``; ``r`` may be a stack of rotations."""
    r = np.asarray(r, dtype=float)
    eye = np.eye(3)
    if np.max(np.abs(r @ np.swapaxes(r, -1, -2) - eye)) > tol:
        raise ValueError("rotate_tensor: r is not orthogonal")
    return r @ np.asarray(t, dtype=float) @ np.swapaxes(r, -1, -2)


def zeeman(p: NVParams, bvec) -> np.ndarray:
    """``gamma_e B.S + gamma_n B.I`` for field vector(s) ``bvec`` of shape (..., 3)."""
    bvec = np.asarray(bvec, dtype=float)
    return np.einsum("...i,iab->...ab", bvec, p.gamma_e * SPINS.S + p.gamma_n * SPINS.I)


def tensor_terms(dtensor, atensor) -> np.ndarray:
    """``S.D.S + S.A.I`` for (stacks of) 3x3 tensors."""
    return np.einsum("...ij,ijab->...ab", np.asarray(dtensor), SPINS.SS) + np.einsum(
        "...ij,ijab->...ab", np.asarray(atensor), SPINS.SI
    )


def _static_nv(p: NVParams) -> np.ndarray:
    return tensor_terms(p.zfs_tensor, p.hyperfine_tensor)


def lab_field(f: FieldSpec, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    bias = np.zeros(theta.shape + (3,))
    bias[..., 2] = f.B
    db = np.asarray(f.dB)
    if f.co_rotating:
        return bias + rotation_y(theta) @ db
    return bias + db


def nv_field(f: FieldSpec, theta) -> np.ndarray:
    """Field vector seen in the NV (diamond) frame at rotation angle(s) ``theta``."""
    theta = np.asarray(theta, dtype=float)
    bias = np.zeros(theta.shape + (3,))
    bias[..., 2] = f.B
    rt = np.swapaxes(rotation_y(theta), -1, -2)
    rotated_bias = np.einsum("...ij,...j->...i", rt, bias)
    db = np.asarray(f.dB)
    if f.co_rotating:
        return rotated_bias + db
    return rotated_bias + rt @ db


def lab_frame_hamiltonian(p: NVParams, f: FieldSpec, theta) -> np.ndarray:
    """Full 6x6 lab-frame Hamiltonian with the crystal rotated by ``theta`` about y.

    ``theta`` may be an array, giving a stack of Hamiltonians.
    """
    r = rotation_y(theta)
    d = rotate_tensor(p.zfs_tensor, r)
    a = rotate_tensor(p.hyperfine_tensor, r)
    return tensor_terms(d, a) + zeeman(p, lab_field(f, theta))


def nv_frame_hamiltonian(p: NVParams, f: FieldSpec, omega: float, t) -> np.ndarray:
    """Hamiltonian in the frame co-rotating with the diamond.

    Contains the counter-rotating field and the inertial term
    ``-omega (S_y + I_y)``. ``t`` may be an array.
    """
    theta = omega * np.asarray(t, dtype=float)
    h = _static_nv(p) + zeeman(p, nv_field(f, theta))
    return h - omega * (SPINS.S[1] + SPINS.I[1])


def frame_rotation(theta) -> np.ndarray:
    """``exp(-i theta (S_y + I_y))``, mapping NV-frame states to the lab frame."""
    theta = np.asarray(theta, dtype=float)
    # closed forms avoid an eigensolve per step
    c, s = np.cos(theta), np.sin(theta)
    ch, sh = np.cos(theta / 2), np.sin(theta / 2)
    ue = np.empty(theta.shape + (3, 3), dtype=complex)
    r2 = math.sqrt(2.0)
    ue[..., 0, 0] = (1 + c) / 2
    ue[..., 0, 1] = -s / r2
    ue[..., 0, 2] = (1 - c) / 2
    ue[..., 1, 0] = s / r2
    ue[..., 1, 1] = c
    ue[..., 1, 2] = -s / r2
    ue[..., 2, 0] = (1 - c) / 2
    ue[..., 2, 1] = s / r2
    ue[..., 2, 2] = (1 + c) / 2
    un = np.empty(theta.shape + (2, 2), dtype=complex)
    un[..., 0, 0] = ch
    un[..., 0, 1] = -sh
    un[..., 1, 0] = sh
    un[..., 1, 1] = ch
    return np.einsum("...ab,...ij->...aibj", ue, un).reshape(theta.shape + (6, 6))


def zq_mixing_angles(p: NVParams, Bz: float, pole_tol: float = 1e-6) -> tuple[float, float]:
    """Zero-quantum mixing angles ``(theta_plus, theta_minus)`` at axial field ``Bz``.

    Principal-branch arctangent; raises :class:`PoleError` when a denominator
    is within ``pole_tol * D`` of zero.
    """
    den_plus = p.D + p.gamma_e * Bz - p.gamma_n * Bz - p.A_zz / 2
    den_minus = p.D - p.gamma_e * Bz + p.gamma_n * Bz - p.A_zz / 2
    for name, den in (("theta_plus", den_plus), ("theta_minus", den_minus)):
        if abs(den) < pole_tol * p.D:
            raise PoleError(f"{name} denominator {den:.6g} rad/s is at a pole (Bz={Bz} G)")
    theta_plus = 0.5 * math.atan(2 * p.A_perp / den_plus)
    theta_minus = 0.5 * math.atan(-2 * p.A_perp / den_minus)
    return theta_plus, theta_minus


def enhancement_factor(p: NVParams, Bz: float, ms: int = 0) -> float:
    """Signed enhancement of the nuclear transverse Zeeman coupling.

    ``ms = 0`` uses the exact zero-quantum closed form. ``ms = +-1`` falls
    back to the small-field value ``1 + kappa`` and warns that it is
    approximate.
    """
    if ms == 0:
        tp, tm = zq_mixing_angles(p, Bz)
        return math.cos(tp) * math.cos(tm) - p.gamma_e / p.gamma_n * math.sin(tp - tm)
    if ms in (1, -1):
        warnings.warn("alpha for m_S=+-1 uses the small-field approximation", ApproximationWarning, stacklevel=2)
        return 1 - 2 * p.kappa + 3 * p.kappa * ms**2
    raise ValueError(f"ms must be -1, 0 or +1, not {ms!r}")


def first_order_enhancement(p: NVParams, B: float) -> float:
    """One-sided perturbative magnitude ``(gamma_e/gamma_n) A_perp / (D - gamma_e B)``."""
    return p.gamma_e / p.gamma_n * p.A_perp / (p.D - p.gamma_e * B)


def effective_nuclear_hamiltonian(
    p: NVParams,
    ms: int,
    B_x: float,
    B_z: float,
    omega: float = 0.0,
    t=0.0,
    alpha: float | None = None,
) -> np.ndarray:
    """2x2 nuclear Hamiltonian ``gamma_n (B_z I_z + alpha B_x I_x) + A_zz m_s I_z``.

    ``(B_x, B_z)`` is the NV-frame field at ``t = 0``; with ``omega != 0`` it
    counter-rotates as ``theta = omega t`` and ``-omega I_y`` is added.
    ``alpha`` defaults to the enhancement factor at the field magnitude.
    ``t`` may be an array.
    """
    ix, iy, iz = spin_operators(0.5)
    if alpha is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ApproximationWarning)
            alpha = enhancement_factor(p, math.hypot(B_x, B_z), ms)
    theta = omega * np.asarray(t, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    bx = B_x * c - B_z * s
    bz = B_x * s + B_z * c
    h = p.gamma_n * (bz[..., None, None] * iz + alpha * bx[..., None, None] * ix)
    return h + p.A_zz * ms * iz - omega * iy
