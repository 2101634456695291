"""Small dense complex linear algebra for the electron (spin-1) x nuclear
(spin-1/2) product space.

Matrices are plain ``numpy.ndarray`` values of complex dtype. Functions that
decompose or exponentiate accept either a single ``(n, n)`` matrix or a stack
``(..., n, n)``; the stacked path is what the propagators use.

The Hermitian eigensolver is a cyclic complex Jacobi iteration compiled with
numba. At the sizes used here (n <= 6) it converges in a handful of sweeps and
needs no tridiagonalization.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numba as nb
import numpy as np

DEFAULT_TOL = 1e-10

ELECTRON_DIM = 3
NUCLEAR_DIM = 2
TOTAL_DIM = ELECTRON_DIM * NUCLEAR_DIM


def spin_operators(s: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(Sx, Sy, Sz)`` for spin ``s`` in the descending-``m`` basis.

    Only ``s = 1/2`` and ``s = 1`` are supported.
    """
    if np.isclose(s, 0.5):
        s = 0.5
    elif np.isclose(s, 1.0):
        s = 1.0
    else:
        raise ValueError(f"unsupported spin s={s!r}; expected 1/2 or 1")
    m = np.arange(s, -s - 1, -1.0)
    dim = len(m)
    splus = np.zeros((dim, dim), dtype=complex)
    for k in range(1, dim):
        # <m+1| S+ |m> = sqrt(s(s+1) - m(m+1))
        splus[k - 1, k] = np.sqrt(s * (s + 1) - m[k] * (m[k] + 1))
    sminus = splus.conj().T
    sx = (splus + sminus) / 2
    sy = (splus - sminus) / 2j
    sz = np.diag(m).astype(complex)
    return sx, sy, sz


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise ValueError("kron expects two square matrices")
    return np.kron(a, b)


def dagger(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(np.conj(a), -1, -2)


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def is_hermitian(h: np.ndarray, tol: float = DEFAULT_TOL) -> bool:
    """True if ``h`` is square and ``||h - h^dagger|| <= tol * max(1, ||h||)``."""
    h = np.asarray(h)
    if h.ndim < 2 or h.shape[-1] != h.shape[-2]:
        return False
    scale = max(1.0, float(np.max(np.abs(h), initial=0.0)))
    return bool(np.max(np.abs(h - dagger(h)), initial=0.0) <= tol * scale)


def is_unitary(u: np.ndarray, tol: float = DEFAULT_TOL) -> bool:
    u = np.asarray(u)
    if u.ndim < 2 or u.shape[-1] != u.shape[-2]:
        return False
    eye = np.eye(u.shape[-1])
    return bool(np.max(np.abs(dagger(u) @ u - eye), initial=0.0) <= tol)


@nb.njit(cache=True)
def _jacobi_inplace(a, v, tol, max_sweeps):
    n = a.shape[0]
    for i in range(n):
        for j in range(n):
            v[i, j] = 1.0 if i == j else 0.0
    norm2 = 0.0
    for i in range(n):
        for j in range(n):
            norm2 += a[i, j].real ** 2 + a[i, j].imag ** 2
    thresh = tol * np.sqrt(norm2)
    for sweep in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off += a[p, q].real ** 2 + a[p, q].imag ** 2
        if np.sqrt(2.0 * off) <= thresh:
            return sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                b = abs(apq)
                if b == 0.0:
                    continue
                ph = apq / b
                zeta = (a[q, q].real - a[p, p].real) / (2.0 * b)
                if zeta == 0.0:
                    t = 1.0
                elif zeta > 0.0:
                    t = 1.0 / (zeta + np.sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # J = diag(1, conj(ph)) @ [[c, s], [-s, c]] on the (p, q) plane
                jqp = -s * ph.conjugate()
                jqq = c * ph.conjugate()
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = akp * c + akq * jqp
                    a[k, q] = akp * s + akq * jqq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk + jqp.conjugate() * aqk
                    a[q, k] = s * apk + jqq.conjugate() * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                a[p, p] = a[p, p].real
                a[q, q] = a[q, q].real
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = vkp * c + vkq * jqp
                    v[k, q] = vkp * s + vkq * jqq
    return -1


@nb.njit(cache=True)
def _jacobi_batch(h, tol, max_sweeps):
    m = h.shape[0]
    n = h.shape[1]
    w = np.empty((m, n))
    v = np.empty_like(h)
    a = h.copy()
    worst = 0
    for i in range(m):
        sweeps = _jacobi_inplace(a[i], v[i], tol, max_sweeps)
        if sweeps < 0:
            worst = -1
        for k in range(n):
            w[i, k] = a[i, k, k].real
        # ascending order, insertion sort keeps vectors paired
        for k in range(1, n):
            j = k
            while j > 0 and w[i, j - 1] > w[i, j]:
                tmp = w[i, j - 1]
                w[i, j - 1] = w[i, j]
                w[i, j] = tmp
                for r in range(n):
                    tv = v[i, r, j - 1]
                    v[i, r, j - 1] = v[i, r, j]
                    v[i, r, j] = tv
                j -= 1
        # phase convention: largest-magnitude component real and positive
        for k in range(n):
            best = 0
            bmag = -1.0
            for r in range(n):
                mag = abs(v[i, r, k])
                if mag > bmag * (1.0 + 1e-12):
                    bmag = mag
                    best = r
            ph = v[i, best, k] / bmag
            for r in range(n):
                v[i, r, k] = v[i, r, k] / ph
    return w, v, worst


def eig_hermitian(h: np.ndarray, tol: float = DEFAULT_TOL, check: bool = True):
    """Eigen-decomposition of a Hermitian matrix or stack of matrices.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and
    eigenvectors as columns. Within degenerate subspaces the basis is
    arbitrary. Raises ``ValueError`` for non-Hermitian input when ``check``.
    """
    h = np.asarray(h, dtype=complex)
    if h.ndim < 2 or h.shape[-1] != h.shape[-2]:
        raise ValueError(f"expected square matrix, got shape {h.shape}")
    if check and not is_hermitian(h, tol):
        raise ValueError("eig_hermitian: input is not Hermitian")
    batch_shape = h.shape[:-2]
    n = h.shape[-1]
    flat = np.ascontiguousarray(h.reshape(-1, n, n))
    w, v, status = _jacobi_batch(flat, 1e-14, 60)
    if status < 0:
        raise RuntimeError("Jacobi iteration did not converge")
    return w.reshape(*batch_shape, n), v.reshape(*batch_shape, n, n)


def exp_unitary(h: np.ndarray, dt, tol: float = DEFAULT_TOL) -> np.ndarray:
    """``exp(-i h dt)`` for Hermitian ``h`` (single matrix or stack).

    ``dt`` may be a scalar or an array broadcastable against the batch shape.
    """
    w, v = eig_hermitian(h, tol=tol)
    dt = np.asarray(dt, dtype=float)[..., None]
    phases = np.exp(-1j * w * dt)
    return (v * phases[..., None, :]) @ dagger(v)


def partial_trace(rho: np.ndarray, keep: str) -> np.ndarray:
    """Reduced density matrix of the electron (3x3) or nuclear (2x2) spin.

    Works on a single 6x6 matrix or a stack of them.
    """
    rho = np.asarray(rho)
    if rho.shape[-2:] != (TOTAL_DIM, TOTAL_DIM):
        raise ValueError(f"partial_trace expects 6x6 input, got {rho.shape[-2:]}")
    r = rho.reshape(*rho.shape[:-2], ELECTRON_DIM, NUCLEAR_DIM, ELECTRON_DIM, NUCLEAR_DIM)
    if keep == "electron":
        return np.einsum("...injn->...ij", r)
    if keep == "nuclear":
        return np.einsum("...aiaj->...ij", r)
    raise ValueError(f"keep must be 'electron' or 'nuclear', not {keep!r}")


def purity(rho: np.ndarray) -> np.ndarray:
    return np.real(np.einsum("...ij,...ji->...", rho, rho))


@dataclass(frozen=True)
class SpinSystem:
    """Operators of the NV electron spin-1 coupled to a spin-1/2 nucleus.

    Electron basis order is ``m_S = +1, 0, -1``; nuclear ``m_I = +1/2, -1/2``.
    Embedded operators act on the 6-dimensional product space.
    """

    electron_dim: int = ELECTRON_DIM
    nuclear_dim: int = NUCLEAR_DIM

    @property
    def total_dim(self) -> int:
        return self.electron_dim * self.nuclear_dim

    @cached_property
    def electron(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return spin_operators(1)

    @cached_property
    def nuclear(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return spin_operators(0.5)

    @cached_property
    def S(self) -> np.ndarray:
        """Embedded electron operators, shape (3, 6, 6) for x, y, z."""
        eye = np.eye(self.nuclear_dim)
        return np.array([np.kron(op, eye) for op in self.electron])

    @cached_property
    def I(self) -> np.ndarray:  # noqa: E743
        """Embedded nuclear operators, shape (3, 6, 6)."""
        eye = np.eye(self.electron_dim)
        return np.array([np.kron(eye, op) for op in self.nuclear])

    @cached_property
    def SS(self) -> np.ndarray:
        """Products ``S_i S_j``, shape (3, 3, 6, 6)."""
        return np.einsum("iab,jbc->ijac", self.S, self.S)

    @cached_property
    def SI(self) -> np.ndarray:
        """Products ``S_i I_j``, shape (3, 3, 6, 6)."""
        return np.einsum("iab,jbc->ijac", self.S, self.I)

    def basis_index(self, ms: int, mi: float) -> int:
        if ms not in (1, 0, -1):
            raise ValueError(f"m_S must be -1, 0 or +1, not {ms!r}")
        if mi not in (0.5, -0.5):
            raise ValueError(f"m_I must be +1/2 or -1/2, not {mi!r}")
        return (1 - ms) * self.nuclear_dim + (0 if mi > 0 else 1)

    def product_state(self, ms: int, mi: float) -> np.ndarray:
        """Density matrix of the product state ``|m_S, m_I><m_S, m_I|``."""
        rho = np.zeros((self.total_dim, self.total_dim), dtype=complex)
        k = self.basis_index(ms, mi)
        rho[k, k] = 1.0
        return rho


SPINS = SpinSystem()
