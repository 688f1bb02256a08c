"""Sector bases, Slater states, reduced densities, and the lift maps.

Oracles here are deliberately independent of the library internals: explicit
permutation sums on full d**n tensors, dense partial traces, and dense
Kronecker embeddings.
"""

import itertools
from math import comb, factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fermiflow.errors import RangeError, ShapeError, ValidationError
from fermiflow.modes import ModeSystem
from fermiflow.sector import (PSectorOperator, antisymmetrize,
                              antisym_projector_dense, compound_matrix,
                              contract_pair_commutator, embedding_isometry,
                              gram, interaction_weights, lift_tables, marginal,
                              one_body_sector, pair_diagonal_sector,
                              permutation_sign, project_lift,
                              project_lift_pair_commutator, sector_basis,
                              slater, trace_norm)


def dense_antisymmetrizer(d, p):
    """Oracle: sum over permutations as an explicit d**p x d**p matrix."""
    dim = d ** p
    out = np.zeros((dim, dim))
    axes = list(range(p))
    eye = np.eye(dim).reshape((d,) * p + (dim,))
    for perm in itertools.permutations(axes):
        out += permutation_sign(perm) * np.transpose(
            eye, list(perm) + [p]).reshape(dim, dim)
    return out / factorial(p)


def haar_frame(rng, d, n):
    q, _ = np.linalg.qr(rng.normal(size=(d, n)) + 1j * rng.normal(size=(d, n)))
    return q


def test_permutation_sign():
    assert permutation_sign((0, 1, 2)) == 1
    assert permutation_sign((1, 0, 2)) == -1
    assert permutation_sign((1, 2, 0)) == 1


def test_basis_ordering_is_ascending_bitmask():
    basis = sector_basis(4, 2)
    assert basis.masks.tolist() == [3, 5, 6, 9, 10, 12]
    assert basis.occ.tolist() == [[0, 1], [0, 2], [1, 2], [0, 3], [1, 3], [2, 3]]
    assert basis.index[6] == 2


def test_basis_dimensions_and_range_checks():
    assert sector_basis(6, 3).dim == comb(6, 3)
    assert sector_basis(5, 0).dim == 1
    with pytest.raises(RangeError):
        sector_basis(4, 5)
    with pytest.raises(RangeError):
        sector_basis(4, -1)


def test_antisymmetrize_kills_symmetric_tensor():
    d = 3
    e1 = np.zeros(d)
    e1[1] = 1.0
    np.testing.assert_allclose(antisymmetrize(np.multiply.outer(e1, e1)), 0.0)


def test_antisymmetrize_two_basis_vectors():
    d = 3
    e1, e2 = np.eye(d)[1], np.eye(d)[2]
    got = antisymmetrize(np.multiply.outer(e1, e2))
    want = 0.5 * (np.multiply.outer(e1, e2) - np.multiply.outer(e2, e1))
    np.testing.assert_allclose(got, want, atol=1e-15)


def test_antisymmetrize_matches_dense_oracle():
    rng = np.random.default_rng(7)
    d, p = 3, 3
    t = rng.normal(size=(d,) * p) + 1j * rng.normal(size=(d,) * p)
    got = antisymmetrize(t).reshape(-1)
    want = dense_antisymmetrizer(d, p) @ t.reshape(-1)
    np.testing.assert_allclose(got, want, atol=1e-13)
    scaled = antisymmetrize(t, scaled=True).reshape(-1)
    np.testing.assert_allclose(scaled, factorial(p) * want, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_antisymmetrize_idempotent(seed):
    rng = np.random.default_rng(seed)
    t = rng.normal(size=(3, 3, 3))
    once = antisymmetrize(t)
    twice = antisymmetrize(once)
    np.testing.assert_allclose(once, twice, atol=1e-13)


def test_embedding_isometry_columns_orthonormal():
    for d, n in [(4, 2), (5, 3), (6, 1)]:
        iso = embedding_isometry(d, n)
        g = (iso.conj().T @ iso).todense()
        np.testing.assert_allclose(np.asarray(g), np.eye(comb(d, n)), atol=1e-13)


def test_embedding_matches_explicit_antisymmetrization():
    d, n = 4, 2
    basis = sector_basis(d, n)
    iso = embedding_isometry(d, n)
    for col in range(basis.dim):
        i, j = basis.occ[col]
        raw = np.zeros((d, d))
        raw[i, j] = 1.0
        want = np.sqrt(factorial(n)) * antisymmetrize(raw).reshape(-1)
        got = np.asarray(iso[:, col].todense()).reshape(-1)
        np.testing.assert_allclose(got, want, atol=1e-14)


def test_slater_canonical_orbitals():
    d = 4
    phi = np.eye(d)[:, :2]
    state = slater(phi)
    want = np.zeros(state.basis.dim)
    want[state.basis.index[0b11]] = 1.0
    np.testing.assert_allclose(state.coeffs, want, atol=1e-15)


def test_slater_unit_norm_for_orthonormal_frame():
    rng = np.random.default_rng(11)
    phi = haar_frame(rng, 6, 3)
    assert abs(slater(phi).norm() - 1.0) < 1e-12


def test_slater_matches_tensor_antisymmetrization_oracle():
    # Oracle: sqrt(N!) P_- (phi_1 ⊗ ... ⊗ phi_N) built on the full tensor grid.
    rng = np.random.default_rng(3)
    d, n = 4, 3
    phi = haar_frame(rng, d, n)
    prod = phi[:, 0]
    for k in range(1, n):
        prod = np.multiply.outer(prod, phi[:, k])
    want = np.sqrt(factorial(n)) * antisymmetrize(prod).reshape(-1)
    got = slater(phi).to_full_tensor()
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_slater_determinant_coefficients():
    rng = np.random.default_rng(5)
    d, n = 5, 2
    phi = haar_frame(rng, d, n)
    state = slater(phi)
    basis = state.basis
    for row in range(basis.dim):
        i, j = basis.occ[row]
        det = phi[i, 0] * phi[j, 1] - phi[j, 0] * phi[i, 1]
        np.testing.assert_allclose(state.coeffs[row], det, atol=1e-13)


def test_slater_rejects_dependent_columns():
    phi = np.ones((4, 2), dtype=complex)
    phi[:, 1] = phi[:, 0] * (1 + 1e-12)
    with pytest.raises(ValidationError):
        slater(phi)


def test_gram_and_trace_norm():
    rng = np.random.default_rng(13)
    phi = haar_frame(rng, 5, 3)
    np.testing.assert_allclose(gram(phi), np.eye(3), atol=1e-13)
    m = rng.normal(size=(4, 4))
    assert abs(trace_norm(m) - np.sum(np.linalg.svd(m, compute_uv=False))) < 1e-12
    with pytest.raises(ShapeError):
        trace_norm(np.ones(3))


def dense_partial_trace(psi_full, d, n, p):
    """Oracle: contract the last n-p tensor slots of |psi><psi| directly."""
    m = psi_full.reshape(d ** p, d ** (n - p))
    return m @ m.conj().T


def test_marginal_matches_dense_partial_trace():
    rng = np.random.default_rng(21)
    d, n = 5, 3
    phi = haar_frame(rng, d, n)
    state = slater(phi)
    iso_full = state.to_full_tensor()
    for p in (1, 2, 3):
        got = marginal(state, p)
        want_full = dense_partial_trace(iso_full, d, n, p)
        iso = embedding_isometry(d, p)
        want = np.asarray(iso.conj().T @ (iso.conj().T @ want_full.conj().T).conj().T)
        np.testing.assert_allclose(got.mat, want, atol=1e-12)
        np.testing.assert_allclose(got.trace(), 1.0, atol=1e-12)


def test_marginal_of_canonical_slater_is_diagonal():
    d, n, p = 5, 2, 1
    state = slater(np.eye(d)[:, :n])
    got = marginal(state, p)
    want = np.diag([1 / n if k < n else 0.0 for k in range(d)])
    np.testing.assert_allclose(got.mat, want, atol=1e-13)


def test_marginal_range_errors():
    state = slater(np.eye(4)[:, :2])
    with pytest.raises(RangeError):
        marginal(state, 0)
    with pytest.raises(RangeError):
        marginal(state, 3)


def test_mixture_one_particle_marginal_norm_bound():
    # ||tr_{2..n} Gamma|| <= 1/n for mixtures of Slater projectors.
    rng = np.random.default_rng(2)
    d, n = 6, 3
    for _ in range(5):
        weights = rng.dirichlet(np.ones(3))
        mats = [marginal(slater(haar_frame(rng, d, n)), 1).mat for _ in range(3)]
        mixed = sum(w * m for w, m in zip(weights, mats))
        assert np.linalg.norm(mixed, 2) <= 1 / n + 1e-12


def test_compound_matrix_is_sector_tensor_power():
    rng = np.random.default_rng(4)
    d, m = 4, 2
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    iso = embedding_isometry(d, m)
    full = np.kron(a, a)
    want = np.asarray(iso.conj().T @ (iso.T @ full.T).T)
    np.testing.assert_allclose(compound_matrix(a, m), want, atol=1e-12)


def test_compound_of_propagator_is_free_sector_propagator():
    from scipy.linalg import expm

    sys = ModeSystem.chain(5)
    t = 0.37
    f = sys.free_propagator(t)
    for m in (1, 2, 3):
        got = compound_matrix(f, m)
        h0 = one_body_sector(sys.h, sys.d, m)
        want = expm(-1j * t * h0)
        np.testing.assert_allclose(got, want, atol=1e-12)
        np.testing.assert_allclose(got @ got.conj().T,
                                   np.eye(got.shape[0]), atol=1e-12)


def test_one_body_sector_matches_first_quantized_oracle():
    rng = np.random.default_rng(9)
    d, n = 4, 2
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    iso = embedding_isometry(d, n)
    full = np.kron(a, np.eye(d)) + np.kron(np.eye(d), a)
    want = np.asarray(iso.conj().T @ (iso.T @ full.T).T)
    got = one_body_sector(a, d, n)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_pair_diagonal_matches_first_quantized_oracle():
    d, n = 5, 3
    sys = ModeSystem.chain(d)
    basis = sector_basis(d, n)
    want = np.array([
        sum(sys.wmat[i, j] for i, j in itertools.combinations(occ, 2))
        for occ in basis.occ])
    np.testing.assert_allclose(pair_diagonal_sector(sys.wmat, d, n), want,
                               atol=1e-13)


def test_project_lift_matches_dense_oracle():
    rng = np.random.default_rng(17)
    d, m = 4, 3
    small = sector_basis(d, m - 1)
    x = rng.normal(size=(small.dim, small.dim)) + 1j * rng.normal(
        size=(small.dim, small.dim))
    iso_small = embedding_isometry(d, m - 1)
    x_full = np.asarray(iso_small.todense()) @ x @ np.asarray(
        iso_small.conj().T.todense())
    proj = antisym_projector_dense(d, m)
    lifted_full = proj @ np.kron(x_full, np.eye(d)) @ proj
    iso_big = embedding_isometry(d, m)
    want = np.asarray(iso_big.conj().T.todense()) @ lifted_full @ np.asarray(
        iso_big.todense())
    got = project_lift(x, d, m)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_project_lift_identity_is_identity():
    d, m = 5, 3
    eye_small = np.eye(sector_basis(d, m - 1).dim)
    got = project_lift(eye_small, d, m)
    np.testing.assert_allclose(got, np.eye(sector_basis(d, m).dim), atol=1e-13)


def pair_interaction_full(wmat, d, m):
    """Oracle: sum_{i<m} W_{i,m} as a dense d**m matrix (last slot is m)."""
    dim = d ** m
    out = np.zeros((dim, dim))
    grids = np.indices((d,) * m).reshape(m, -1)
    for i in range(m - 1):
        out[np.arange(dim), np.arange(dim)] += wmat[grids[i], grids[m - 1]]
    return out


def test_project_lift_pair_commutator_matches_dense_oracle():
    rng = np.random.default_rng(23)
    d, m = 4, 3
    sys = ModeSystem.chain(d)
    small = sector_basis(d, m - 1)
    x = rng.normal(size=(small.dim, small.dim)) + 1j * rng.normal(
        size=(small.dim, small.dim))
    iso_small = embedding_isometry(d, m - 1)
    x_full = np.asarray(iso_small.todense()) @ x @ np.asarray(
        iso_small.conj().T.todense())
    w_full = pair_interaction_full(sys.wmat, d, m)
    comm = w_full @ np.kron(x_full, np.eye(d)) - np.kron(x_full, np.eye(d)) @ w_full
    proj = antisym_projector_dense(d, m)
    full = proj @ comm @ proj
    iso_big = embedding_isometry(d, m)
    want = np.asarray(iso_big.conj().T.todense()) @ full @ np.asarray(
        iso_big.todense())
    wbar = interaction_weights(sys.wmat, d, m)
    got = project_lift_pair_commutator(x, wbar, d, m)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_contract_is_adjoint_of_lift_commutator():
    rng = np.random.default_rng(29)
    d, m = 5, 3
    sys = ModeSystem.chain(d)
    wbar = interaction_weights(sys.wmat, d, m)
    small, big = sector_basis(d, m - 1), sector_basis(d, m)
    x = rng.normal(size=(small.dim, small.dim)) + 1j * rng.normal(
        size=(small.dim, small.dim))
    rho = rng.normal(size=(big.dim, big.dim)) + 1j * rng.normal(
        size=(big.dim, big.dim))
    lift = project_lift_pair_commutator(x, wbar, d, m)
    contr = contract_pair_commutator(rho, wbar, d, m)
    lhs = np.trace(lift.conj().T @ rho)
    rhs = np.trace(x.conj().T @ contr)
    np.testing.assert_allclose(lhs, rhs, atol=1e-11)


def test_lift_tables_cover_each_big_state_m_times():
    d, m = 6, 3
    counts = np.zeros(sector_basis(d, m).dim)
    for _, s_idx, _ in lift_tables(d, m):
        counts[s_idx] += 1
    np.testing.assert_array_equal(counts, m)


def test_sector_operator_shape_check():
    with pytest.raises(ShapeError):
        PSectorOperator(4, 2, np.eye(5))
