"""POD tests: orthonormality, the exact tail-energy identity, serialization.

The eigen-decomposition of X^T M X (method of snapshots) serves as an
independent oracle for singular values and subspaces.
"""

import numpy as np
import pytest
import scipy.sparse as sp

from xsdre.pod import (
    PodBasis,
    SnapshotSet,
    compute_pod,
    load_basis,
    projection_error,
    save_basis,
)


def decaying_snapshots(n, n_s, seed, decay=0.5, M=None):
    """Snapshots with geometrically decaying spectrum (the hard case)."""
    rng = np.random.default_rng(seed)
    U, _ = np.linalg.qr(rng.standard_normal((n, n_s)))
    W, _ = np.linalg.qr(rng.standard_normal((n_s, n_s)))
    s = decay ** np.arange(n_s)
    X = U @ np.diag(s) @ W.T
    if M is None:
        M = sp.diags(rng.uniform(0.5, 2.0, n))
    return SnapshotSet(X, M)


def test_identity_mass_hand_example():
    # X = diag(3, 1) zero-padded: modes are e1, e2 and sigma = (3, 1)
    X = np.array([[3.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    basis = compute_pod(SnapshotSet(X, sp.eye(3)), r=2)
    np.testing.assert_allclose(basis.sigma[:2], [3.0, 1.0], atol=1e-14)
    np.testing.assert_allclose(np.abs(basis.V), np.eye(3, 2), atol=1e-14)
    # sign convention: largest entry positive
    assert basis.V[0, 0] > 0 and basis.V[1, 1] > 0


def test_modes_are_mass_orthonormal():
    snaps = decaying_snapshots(40, 25, seed=0, decay=0.45)
    basis = compute_pod(snaps, r=20)
    assert basis.orthonormality_defect() <= 1e-10


def test_nondiagonal_mass_orthonormal():
    rng = np.random.default_rng(1)
    n = 30
    R = rng.standard_normal((n, n))
    M = sp.csr_matrix(R @ R.T + n * np.eye(n))
    snaps = decaying_snapshots(n, 18, seed=2, decay=0.5, M=M)
    basis = compute_pod(snaps, r=12)
    assert basis.orthonormality_defect() <= 1e-10


def test_tail_energy_identity():
    """Measured M-Frobenius truncation error equals sqrt(tail of sigma^2)."""
    snaps = decaying_snapshots(35, 20, seed=3, decay=0.6)
    full = compute_pod(snaps, r=18)
    for r in (1, 4, 9, 15):
        basis = full.truncated(r)
        measured = projection_error(basis, snaps.X)
        predicted = full.tail_energy(r)
        assert measured == pytest.approx(predicted, rel=1e-8)


def test_sigma_matches_snapshot_gramian_oracle():
    """Eigenvalues of X^T M X are the squared singular values."""
    snaps = decaying_snapshots(25, 12, seed=4, decay=0.7)
    basis = compute_pod(snaps, r=10)
    G = snaps.X.T @ (snaps.M @ snaps.X)
    ev = np.sort(np.linalg.eigvalsh(G))[::-1]
    np.testing.assert_allclose(basis.sigma**2, ev[: basis.sigma.size],
                               rtol=1e-10, atol=1e-12)


def test_encode_decode_roundtrip():
    snaps = decaying_snapshots(20, 10, seed=5)
    basis = compute_pod(snaps, r=6)
    rng = np.random.default_rng(6)
    rho = rng.standard_normal(6)
    np.testing.assert_allclose(basis.encode(basis.decode(rho)), rho,
                               rtol=1e-12, atol=1e-13)


def test_projection_is_m_orthogonal():
    """Residual v - P v is M-orthogonal to every mode."""
    snaps = decaying_snapshots(22, 12, seed=7)
    basis = compute_pod(snaps, r=5)
    v = np.random.default_rng(8).standard_normal(22)
    resid = v - basis.project(v)
    assert np.max(np.abs(basis.V.T @ (snaps.M @ resid))) <= 1e-12 * np.linalg.norm(v)


def test_full_rank_reconstruction_exact():
    snaps = decaying_snapshots(15, 8, seed=9, decay=0.9)
    basis = compute_pod(snaps, r=8)
    assert projection_error(basis, snaps.X) <= 1e-10


def test_rank_deficient_shrinks_with_warning():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((12, 1))
    X = np.hstack([x, 2 * x, -x, 0.5 * x])  # rank one
    with pytest.warns(UserWarning, match="numerical rank"):
        basis = compute_pod(SnapshotSet(X, sp.eye(12)), r=3)
    assert basis.r == 1


def test_requested_order_must_be_positive():
    snaps = decaying_snapshots(10, 5, seed=11)
    with pytest.raises(ValueError):
        compute_pod(snaps, r=0)


def test_serialization_roundtrip(tmp_path):
    snaps = decaying_snapshots(18, 9, seed=12)
    basis = compute_pod(snaps, r=5)
    save_basis(basis, tmp_path / "b")
    back = load_basis(tmp_path / "b")
    np.testing.assert_array_equal(back.V, basis.V)
    np.testing.assert_array_equal(back.sigma, basis.sigma)
    v = np.random.default_rng(13).standard_normal(18)
    np.testing.assert_allclose(back.encode(v), basis.encode(v), atol=1e-15)
    assert (tmp_path / "b" / "singular_values.csv").exists()


def test_truncated_keeps_full_sigma():
    snaps = decaying_snapshots(16, 8, seed=14)
    basis = compute_pod(snaps, r=7)
    t = basis.truncated(3)
    assert t.r == 3
    assert t.sigma.size == basis.sigma.size
    np.testing.assert_array_equal(t.V, basis.V[:, :3])
