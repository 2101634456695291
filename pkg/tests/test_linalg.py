import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hfgyro.linalg import (
    SPINS,
    commutator,
    dagger,
    eig_hermitian,
    exp_unitary,
    is_hermitian,
    is_unitary,
    kron,
    partial_trace,
    purity,
    spin_operators,
)


def random_hermitian(seed, n=6, scale=1.0):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * (a + a.conj().T) / 2


def test_spin_half_sz():
    _, _, sz = spin_operators(0.5)
    assert np.array_equal(sz, np.diag([0.5, -0.5]))


def test_spin_one_sz():
    _, _, sz = spin_operators(1)
    assert np.array_equal(sz, np.diag([1.0, 0.0, -1.0]))


@pytest.mark.parametrize("s", [0.5, 1])
def test_su2_algebra_exact(s):
    sx, sy, sz = spin_operators(s)
    # entries are 0, 1/2 or 1/sqrt2 products, so the identities hold to rounding
    assert np.max(np.abs(commutator(sx, sy) - 1j * sz)) < 1e-15
    assert np.max(np.abs(commutator(sy, sz) - 1j * sx)) < 1e-15
    assert np.max(np.abs(commutator(sz, sx) - 1j * sy)) < 1e-15
    casimir = sx @ sx + sy @ sy + sz @ sz
    assert np.allclose(casimir, s * (s + 1) * np.eye(int(2 * s + 1)), atol=1e-15)


def test_unsupported_spin():
    with pytest.raises(ValueError):
        spin_operators(1.5)


def test_kron_identity_and_commuting_subsystems():
    assert np.array_equal(kron(np.eye(3), np.eye(2)), np.eye(6))
    _, _, sz = spin_operators(1)
    _, _, iz = spin_operators(0.5)
    a = kron(sz, np.eye(2))
    b = kron(np.eye(3), iz)
    assert np.allclose(commutator(a, b), 0)


def test_kron_raising_lowering_entries():
    sx, sy, _ = spin_operators(1)
    ix, iy, _ = spin_operators(0.5)
    sp = sx + 1j * sy
    im = ix - 1j * iy
    got = kron(sp, im)
    want = np.zeros((6, 6), dtype=complex)
    # basis (m_S, m_I) in order (+1,+), (+1,-), (0,+), (0,-), (-1,+), (-1,-)
    # S+ I- |0,+> = sqrt2 |+1,->; S+ I- |-1,+> = sqrt2 |0,->
    want[1, 2] = np.sqrt(2)
    want[3, 4] = np.sqrt(2)
    assert np.allclose(got, want, atol=1e-15)


def test_kron_rejects_non_square():
    with pytest.raises(ValueError):
        kron(np.zeros((2, 3)), np.eye(2))


def test_eig_diagonal():
    w, v = eig_hermitian(np.diag([1.0, 2.0, 3.0]))
    assert np.allclose(w, [1, 2, 3])
    assert np.allclose(v, np.eye(3))


def test_eig_spin_one_sx():
    sx, _, _ = spin_operators(1)
    w, _ = eig_hermitian(sx)
    assert np.allclose(w, [-1, 0, 1], atol=1e-14)


def test_eig_rejects_non_hermitian():
    with pytest.raises(ValueError):
        eig_hermitian(np.array([[0, 1], [0, 0]], dtype=complex))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e10))
def test_eig_reconstruction(seed, scale):
    h = random_hermitian(seed, scale=scale)
    w, v = eig_hermitian(h)
    assert np.all(np.diff(w) >= 0)
    assert np.max(np.abs(v @ np.diag(w) @ dagger(v) - h)) < 1e-12 * max(1.0, np.max(np.abs(h)))
    assert is_unitary(v, 1e-12)


def test_eig_batch_matches_single():
    hs = np.array([random_hermitian(k) for k in range(5)])
    w, v = eig_hermitian(hs)
    for k in range(5):
        w1, _ = eig_hermitian(hs[k])
        assert np.allclose(w[k], w1)


def test_exp_zero_is_identity():
    assert np.allclose(exp_unitary(np.zeros((6, 6)), 1.0), np.eye(6))


def test_exp_phase_rotation():
    _, _, sz = spin_operators(0.5)
    omega = 2.7
    u = exp_unitary(omega * sz, np.pi / omega)
    assert np.allclose(u, np.diag([np.exp(-1j * np.pi / 2), np.exp(1j * np.pi / 2)]), atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-12, 1e-6))
def test_exp_group_property(seed, dt):
    h = random_hermitian(seed, scale=1e7)
    u = exp_unitary(h, dt)
    half = exp_unitary(h, dt / 2)
    assert np.max(np.abs(dagger(u) @ u - np.eye(6))) < 1e-12
    assert np.max(np.abs(half @ half - u)) < 1e-12


def test_partial_trace_product_state():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    rho_e = a @ a.conj().T
    rho_e /= np.trace(rho_e)
    rho_n = np.array([[0.7, 0.2 - 0.1j], [0.2 + 0.1j, 0.3]])
    rho = np.kron(rho_e, rho_n)
    assert np.allclose(partial_trace(rho, "nuclear"), rho_n)
    assert np.allclose(partial_trace(rho, "electron"), rho_e)


def test_partial_trace_maximally_mixed():
    assert np.allclose(partial_trace(np.eye(6) / 6, "electron"), np.eye(3) / 3)


def test_partial_trace_entangled_purity():
    # (|0,+> + |-1,->)/sqrt2: each reduced state is diag(1/2, 1/2) on its two levels
    psi = np.zeros(6, dtype=complex)
    psi[SPINS.basis_index(0, 0.5)] = 1
    psi[SPINS.basis_index(-1, -0.5)] = 1
    psi /= np.sqrt(2)
    rho = np.outer(psi, psi.conj())
    rn = partial_trace(rho, "nuclear")
    re = partial_trace(rho, "electron")
    # hand expansion: Tr(rho_n^2) = (1/2)^2 + (1/2)^2
    assert np.isclose(purity(rn), 0.5)
    assert np.isclose(purity(re), 0.5)
    assert np.isclose(purity(rho), 1.0)


def test_partial_trace_bad_keep():
    with pytest.raises(ValueError):
        partial_trace(np.eye(6), "both")


def test_is_hermitian_tolerance():
    h = random_hermitian(1)
    assert is_hermitian(h)
    h[0, 1] += 1e-3
    assert not is_hermitian(h)


def test_product_state_and_basis_errors():
    rho = SPINS.product_state(0, 0.5)
    assert rho[2, 2] == 1 and np.trace(rho) == 1
    with pytest.raises(ValueError):
        SPINS.basis_index(2, 0.5)
    with pytest.raises(ValueError):
        SPINS.basis_index(0, 1.5)
