import numpy as np
import pytest
import scipy.sparse as sp

from squarepump.fock import build_basis, global_matrix, number_operator
from squarepump.hamiltonian import (BoseHubbardParams, assemble_hamiltonian, diagonalize,
                                    grand_canonical_ground_state, lowest_states,
                                    momentum_zero_operator)

from conftest import kron_hamiltonian, permutation


def _system(L, n_max, J, boundary="open", U=1.0, omega=0.0, cutoffs=None):
    basis = build_basis(L, n_max, boundary)
    params = BoseHubbardParams(omega, U, J, L, boundary)
    blocks = assemble_hamiltonian(params, basis)
    return basis, params, blocks, diagonalize(blocks, basis, params, cutoffs)


def test_single_site_spectrum():
    _, _, blocks, es = _system(1, 4, 0.0)
    assert blocks[2].toarray()[0, 0] == pytest.approx(1.0)
    np.testing.assert_allclose(es.all_energies(), [0, 0, 1, 3, 6])


def test_two_site_hopping_pair():
    _, _, _, es = _system(2, 2, 0.3, U=0.0)
    np.testing.assert_allclose(es.energies[1], [-0.3, 0.3], atol=1e-14)
    v = es.vectors[1][:, 0]
    np.testing.assert_allclose(np.abs(v), [1 / np.sqrt(2)] * 2, atol=1e-14)


@pytest.mark.parametrize("boundary", ["open", "periodic"])
def test_matches_kron_hamiltonian(boundary):
    basis, params, blocks, _ = _system(3, 2, 0.17, boundary, U=1.3, omega=0.4)
    full = sp.block_diag(blocks).toarray()
    perm = permutation(basis)
    ref = kron_hamiltonian(3, 2, 1.3, 0.17, 0.4, boundary)
    np.testing.assert_allclose(full[np.ix_(perm, perm)], ref, atol=1e-14)


def test_blocks_hermitian_and_number_conserving():
    basis, _, blocks, _ = _system(4, 2, 0.2, "periodic")
    for b in blocks:
        assert abs(b - b.T).max() == 0 if b.nnz else True
    h = sp.block_diag(blocks).tocsr()
    n = global_matrix(basis, number_operator(basis))
    assert abs(h @ n - n @ h).max() < 1e-14


def test_eigensystem_residual_and_orthonormality():
    _, _, blocks, es = _system(4, 3, 0.13, "periodic")
    for n, b in enumerate(blocks):
        v, w = es.vectors[n], es.energies[n]
        scale = max(1.0, np.abs(w).max())
        assert np.abs(b @ v - v * w).max() <= 1e-10 * scale
        np.testing.assert_allclose(v.T @ v, np.eye(len(w)), atol=1e-10)
        assert np.all(np.diff(w) >= 0)


def test_zero_hopping_eigenvectors_are_fock_states():
    _, _, _, es = _system(3, 2, 0.0, "periodic")
    for v in es.vectors:
        assert np.all(np.count_nonzero(np.abs(v) > 1e-12, axis=0) == 1)


def test_frequency_shift_moves_sectors_by_n_delta():
    _, _, _, es = _system(3, 2, 0.1, "periodic")
    _, _, _, es2 = _system(3, 2, 0.1, "periodic", omega=0.25)
    for n, (a, b) in enumerate(zip(es.energies, es2.energies)):
        np.testing.assert_allclose(b, a + 0.25 * n, atol=1e-12)


def test_cutoffs_keep_lowest_levels():
    _, _, _, full = _system(4, 2, 0.1, "periodic")
    cut = [e[0] + 0.5 for e in full.energies]
    _, _, _, part = _system(4, 2, 0.1, "periodic", cutoffs=cut)
    assert not part.complete
    for a, b, c in zip(full.energies, part.energies, cut):
        np.testing.assert_allclose(b, a[a <= c], atol=1e-12)


def test_lowest_states_agree_with_full():
    basis, params, blocks, full = _system(5, 3, 0.08, "periodic")
    low = lowest_states(blocks, basis, params)
    for a, b in zip(full.energies, low.energies):
        np.testing.assert_allclose(b, a[:len(b)], atol=1e-10)


@pytest.mark.parametrize("mu, n", [(0.5, 1), (1.5, 2), (-0.2, 0)])
def test_single_site_grand_canonical(mu, n):
    _, _, _, es = _system(1, 4, 0.0)
    gs = grand_canonical_ground_state(es, mu)
    assert gs.sector == n and not gs.degenerate


def test_tie_break_lowest_n_and_flag():
    _, _, _, es = _system(1, 4, 0.0)
    gs = grand_canonical_ground_state(es, 1.0)
    assert gs.sector == 1 and gs.degenerate


def test_k0_operator():
    basis = build_basis(4, 2, "periodic")
    nk0 = global_matrix(basis, momentum_zero_operator(basis)).toarray()
    one = np.zeros(basis.dim)
    for i in range(4):
        occ = [0] * 4
        occ[i] = 1
        one[basis.index(occ)] = 0.5
    assert one @ nk0 @ one == pytest.approx(1.0)
    mott = np.zeros(basis.dim)
    mott[basis.index((1, 1, 1, 1))] = 1
    assert mott @ nk0 @ mott == pytest.approx(1.0)
    b1 = build_basis(1, 3)
    np.testing.assert_allclose(global_matrix(b1, momentum_zero_operator(b1)).toarray(), np.diag([0, 1, 2, 3]))


def test_params_validation():
    with pytest.raises(ValueError):
        BoseHubbardParams(0.0, 1.0, -0.1, 3)
    basis = build_basis(3, 2)
    with pytest.raises(ValueError):
        assemble_hamiltonian(BoseHubbardParams(0.0, 1.0, 0.1, 3, "periodic"), basis)


def test_l5_isolated_mott_state():
    """At J=0.1, mu=0.38 the N=L ground state sits below the hole and doublon bands."""
    _, _, _, es = _system(5, 3, 0.1, "periodic")
    mu = 0.38
    eff = [e - mu * n for n, e in enumerate(es.energies)]
    gs = grand_canonical_ground_state(es, mu)
    assert gs.sector == 5
    gap = min(min(e[0] for n, e in enumerate(eff) if n != 5), eff[5][1]) - eff[5][0]
    assert gap > 0.05


def test_cutoff_below_a_whole_sector():
    """A sector lying entirely above the cutoff comes back empty."""
    basis = build_basis(3, 3, "periodic")
    params = BoseHubbardParams(0.0, 1.0, 0.02, 3, "periodic")
    blocks = assemble_hamiltonian(params, basis)
    cut = [np.inf] * len(blocks)
    cut[-1] = 7.0
    es = diagonalize(blocks, basis, params, cut)
    assert es.energies[-1].shape == (0,)
    assert es.vectors[-1].shape == (1, 0)
