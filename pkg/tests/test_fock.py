import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from squarepump.fock import (annihilation_operator, build_basis, creation_operator, global_matrix,
                             number_operator)

from conftest import kron_annihilators, permutation


def test_single_site_sectors():
    b = build_basis(1, 3)
    assert b.dim == 4
    assert b.sector_sizes == [1, 1, 1, 1]


def test_two_site_enumeration_by_hand():
    b = build_basis(2, 2)
    assert b.dim == 9
    assert [tuple(s) for s in b.sector_states(2)] == [(0, 2), (1, 1), (2, 0)]


def test_counting_identity_l5():
    b = build_basis(5, 3, "periodic")
    assert b.dim == 1024
    assert sum(b.sector_sizes) == 1024
    assert b.sector_sizes[0] == 1


def test_index_is_bijection():
    b = build_basis(3, 2, "periodic")
    idx = sorted(b.index(s) for s in b.states)
    assert idx == list(range(b.dim))


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        build_basis(2, 2, "periodic")
    with pytest.raises(ValueError):
        build_basis(30, 3)
    with pytest.raises(ValueError):
        build_basis(2, 2, "twisted")
    b = build_basis(2, 2)
    with pytest.raises(IndexError):
        annihilation_operator(b, 2)
    with pytest.raises(IndexError):
        number_operator(b, -1)


def test_harmonic_matrix_element():
    b = build_basis(1, 3)
    a = annihilation_operator(b, 0)[2].toarray()
    assert a[0, 0] == pytest.approx(np.sqrt(2))
    assert a.shape == (1, 1)


def test_two_site_lowering_amplitude():
    b = build_basis(2, 3)
    blk = annihilation_operator(b, 1)[3]
    n_src, p_src = b.local_index((1, 2))
    n_dst, p_dst = b.local_index((1, 1))
    assert (blk.source, blk.target) == (n_src, n_dst)
    assert blk.matrix[p_dst, p_src] == pytest.approx(np.sqrt(2))
    assert blk.matrix.nnz == np.count_nonzero(b.sector_states(3)[:, 1])


def test_matches_kron_oracle():
    b = build_basis(3, 2)
    perm = permutation(b)
    for i, ref in enumerate(kron_annihilators(3, 2)):
        got = global_matrix(b, annihilation_operator(b, i)).toarray()
        np.testing.assert_array_equal(got[np.ix_(perm, perm)], ref)


def test_number_operators():
    b = build_basis(3, 2)
    tot = global_matrix(b, number_operator(b)).diagonal()
    assert tot[b.index((1, 1, 1))] == 3
    b2 = build_basis(2, 2)
    assert global_matrix(b2, number_operator(b2, 0)).diagonal()[b2.index((2, 0))] == 2


def test_creation_is_adjoint():
    b = build_basis(3, 2)
    a = global_matrix(b, annihilation_operator(b, 1)).toarray()
    ad = global_matrix(b, creation_operator(b, 1)).toarray()
    np.testing.assert_array_equal(ad, a.T)


def test_deterministic_enumeration():
    np.testing.assert_array_equal(build_basis(4, 2).states, build_basis(4, 2).states)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.data())
def test_canonical_commutator_below_cutoff(n_sites, n_max, data):
    b = build_basis(n_sites, n_max)
    i = data.draw(st.integers(0, n_sites - 1))
    j = data.draw(st.integers(0, n_sites - 1))
    ai = global_matrix(b, annihilation_operator(b, i)).toarray()
    aj = global_matrix(b, annihilation_operator(b, j)).toarray()
    comm = ai @ aj.T - aj.T @ ai
    inside = np.all(b.states < n_max, axis=1)
    expected = np.eye(b.dim) * (i == j)
    np.testing.assert_allclose(comm[np.ix_(inside, inside)], expected[np.ix_(inside, inside)], atol=1e-12)
