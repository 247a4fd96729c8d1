"""Shared helpers: brute-force operators built from Kronecker products, independent of the package."""
import itertools

import numpy as np
import pytest


def product_states(n_sites, n_max):
    return list(itertools.product(range(n_max + 1), repeat=n_sites))


def kron_annihilators(n_sites, n_max):
    """Dense a_i in product order (site 0 most significant)."""
    a1 = np.diag(np.sqrt(np.arange(1, n_max + 1)), 1)
    eye = np.eye(n_max + 1)
    ops = []
    for i in range(n_sites):
        m = np.array([[1.0]])
        for j in range(n_sites):
            m = np.kron(m, a1 if j == i else eye)
        ops.append(m)
    return ops


def kron_hamiltonian(n_sites, n_max, U, J, omega, boundary):
    a = kron_annihilators(n_sites, n_max)
    h = np.zeros_like(a[0])
    for ai in a:
        n = ai.T @ ai
        h += omega * n + 0.5 * U * n @ (n - np.eye(len(n)))
    bonds = [(i, i + 1) for i in range(n_sites - 1)]
    if boundary == "periodic":
        bonds.append((n_sites - 1, 0))
    for i, j in bonds:
        h -= J * (a[i].T @ a[j] + a[j].T @ a[i])
    return h


def permutation(basis):
    """perm[k] = package index of the k-th product-ordered state."""
    return np.array([basis.index(s) for s in product_states(basis.n_sites, basis.n_max)])


def lindblad(h, gains, losses):
    """Row-major Lindblad superoperator; ``gains``/``losses`` are lists of (rate, c)."""
    d = len(h)
    eye = np.eye(d)
    out = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for rate, c in list(gains) + list(losses):
        cdc = c.conj().T @ c
        out += rate * (np.kron(c, c.conj()) - 0.5 * np.kron(cdc, eye) - 0.5 * np.kron(eye, cdc.T))
    return out


def eigensystem(n_sites, n_max, J, boundary="open", omega=0.0, U=1.0):
    from squarepump.fock import build_basis
    from squarepump.hamiltonian import BoseHubbardParams, assemble_hamiltonian, diagonalize
    basis = build_basis(n_sites, n_max, boundary)
    params = BoseHubbardParams(omega, U, J, n_sites, boundary)
    return diagonalize(assemble_hamiltonian(params, basis), basis, params)


def eigen_frame(es):
    """Eigenvector matrix with rows in product order, columns in package order, and energies."""
    perm = permutation(es.basis)
    V = np.zeros((es.basis.dim, es.basis.dim))
    off = es.offsets()
    for n, sl in enumerate(es.basis.sector_slices):
        V[sl, off[n]:off[n + 1]] = es.vectors[n]
    return V[perm], es.all_energies()


def random_hermitian(d, rng):
    m = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return 0.5 * (m + m.conj().T)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


#: one block of lines per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: slow end-to-end acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for block in sorted(ACCEPTANCE):
            terminalreporter.write_line(block)
