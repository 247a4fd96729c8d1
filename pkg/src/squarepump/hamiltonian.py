"""Bose-Hubbard Hamiltonian per number sector and its eigen-decomposition."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .fock import FockBasis, SectorOperator, _global_annihilation, _split

logger = logging.getLogger(__name__)

#: relative tolerance (in units of U) below which two sectors' minima count as degenerate
DEGENERACY_TOL = 1e-10


class EigenSolverError(RuntimeError):
    """Raised when a sector diagonalization fails."""

    def __init__(self, sector, reason):
        super().__init__(f"eigensolver failed in sector N={sector}: {reason}")
        self.sector = sector


@dataclass(frozen=True)
class BoseHubbardParams:
    """Parameters of the photonic Hamiltonian (angular frequencies)."""

    omega_cav: float
    U: float
    J: float
    n_sites: int
    boundary: str = "open"

    def __post_init__(self):
        if self.J < 0:
            raise ValueError("hopping J must be non-negative")
        if self.U <= 0:
            logger.warning("U=%g: the interacting regime assumes U > 0", self.U)

    def shifted(self, delta: float) -> "BoseHubbardParams":
        return BoseHubbardParams(self.omega_cav + delta, self.U, self.J, self.n_sites, self.boundary)


def _check_match(params: BoseHubbardParams, basis: FockBasis):
    if params.n_sites != basis.n_sites or params.boundary != basis.boundary:
        raise ValueError(
            f"params (L={params.n_sites}, {params.boundary}) do not match basis "
            f"(L={basis.n_sites}, {basis.boundary})")


def assemble_hamiltonian(params: BoseHubbardParams, basis: FockBasis) -> List[sp.csr_matrix]:
    """Return the Hamiltonian as a list of real symmetric sector blocks (index = N)."""
    _check_match(params, basis)
    n = basis.states.astype(float)
    diag = (params.omega_cav * n + 0.5 * params.U * n * (n - 1)).sum(axis=1)
    h = sp.diags(diag).tocsr()
    if params.J != 0:
        ann = [_global_annihilation(basis, i) for i in range(basis.n_sites)]
        hop = sp.csr_matrix((basis.dim, basis.dim))
        for i, j in basis.bonds():
            hop = hop + ann[i].T @ ann[j]
        h = h - params.J * (hop + hop.T)
    return [h[sl, sl].tocsr() for sl in basis.sector_slices]


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Sector-resolved eigenpairs.

    ``energies[N]`` is ascending; ``vectors[N]`` holds the matching eigenvectors
    as columns, expressed in the Fock states of sector ``N``.  A sector may be
    partial (only the eigenpairs at or below ``cutoffs[N]``) when energy
    cutoffs were requested.
    """

    basis: FockBasis
    params: BoseHubbardParams
    energies: List[np.ndarray]
    vectors: List[np.ndarray] = field(repr=False)
    cutoffs: Optional[Tuple[float, ...]] = None

    @property
    def complete(self) -> bool:
        return all(len(e) == n for e, n in zip(self.energies, self.basis.sector_sizes))

    @property
    def n_kept(self) -> List[int]:
        return [len(e) for e in self.energies]

    @property
    def dim(self) -> int:
        return sum(self.n_kept)

    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.n_kept)])

    def sector_of(self) -> np.ndarray:
        """Photon number of every kept eigenstate, in eigenbasis order."""
        return np.repeat(np.arange(len(self.energies)), self.n_kept)

    def all_energies(self) -> np.ndarray:
        return np.concatenate(self.energies)

    def to_fock(self, n: int, coeffs: np.ndarray) -> np.ndarray:
        """Map sector-``n`` eigenbasis coefficients to the global Fock basis."""
        out = np.zeros(self.basis.dim, dtype=np.result_type(coeffs, float))
        out[self.basis.sector_slices[n]] = self.vectors[n] @ coeffs
        return out

    def operator_in_eigenbasis(self, blocks: Dict[int, SectorOperator]) -> Dict[int, np.ndarray]:
        """Dense eigenbasis blocks ``V_target^T O V_source`` keyed by source sector."""
        return {k: self.vectors[b.target].T @ (b.matrix @ self.vectors[b.source])
                for k, b in blocks.items()}


def _sector_eigh(block: sp.spmatrix, sector: int, cutoff: Optional[float]):
    dense = block.toarray()
    try:
        if cutoff is None or not np.isfinite(cutoff):
            w, v = np.linalg.eigh(dense)
        else:
            # two-sided bound needed by LAPACK ?syevr: the lowest Gershgorin edge
            diag = np.diag(dense)
            lo = np.min(diag - (np.abs(dense).sum(axis=1) - np.abs(diag))) - 1.0
            if cutoff <= lo:
                return np.zeros(0), np.zeros((dense.shape[0], 0))
            w, v = sla.eigh(dense, subset_by_value=(lo, cutoff), driver="evr")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenSolverError(sector, exc) from exc
    return w, v


#: sectors larger than this use a sparse Lanczos solver for their lowest levels
SPARSE_MIN = 300


def _lowest(block: sp.spmatrix, k: int, vectors: bool):
    n = block.shape[0]
    if n <= SPARSE_MIN or k >= n - 1:
        w, v = np.linalg.eigh(block.toarray())
        return (w[:k], v[:, :k]) if vectors else w[:k]
    v0 = np.ones(n) / np.sqrt(n)
    res = eigsh(block, k=k, which="SA", tol=1e-14, v0=v0, return_eigenvectors=vectors)
    if not vectors:
        return np.sort(res)
    w, v = res
    order = np.argsort(w)
    return w[order], v[:, order]


def lowest_energies(blocks: Sequence[sp.spmatrix]) -> np.ndarray:
    """Smallest eigenvalue of every sector block."""
    return np.array([_lowest(b, 1, False)[0] for b in blocks])


def lowest_states(blocks: Sequence[sp.spmatrix], basis: FockBasis, params: BoseHubbardParams,
                  k: int = 2) -> EigenSystem:
    """Partial eigensystem holding the ``k`` lowest eigenpairs of every sector.

    Enough for ground-state (equilibrium) observables and for spotting a
    degenerate lowest level.
    """
    energies, vectors, cuts = [], [], []
    for n, blk in enumerate(blocks):
        w, v = _lowest(blk, min(k, blk.shape[0]), True)
        energies.append(w)
        vectors.append(v)
        cuts.append(w[-1])
    return EigenSystem(basis, params, energies, vectors, tuple(cuts))


def diagonalize(blocks: Sequence[sp.spmatrix], basis: FockBasis, params: BoseHubbardParams,
                cutoffs: Optional[Sequence[float]] = None) -> EigenSystem:
    """Diagonalize every sector block.

    Parameters
    ----------
    blocks : sequence of sparse matrices
        Output of :func:`assemble_hamiltonian`.
    cutoffs : sequence of float, optional
        Per-sector upper energy bound; only eigenpairs with energies at or
        below it are kept.  ``None`` keeps everything.
    """
    energies, vectors = [], []
    for n, blk in enumerate(blocks):
        asym = abs(blk - blk.T).max() if blk.nnz else 0.0
        if asym > 0:
            raise ValueError(f"sector {n} block is not symmetric")
        cut = None if cutoffs is None else cutoffs[n]
        w, v = _sector_eigh(blk, n, cut)
        energies.append(w)
        vectors.append(v)
    cut = None if cutoffs is None else tuple(float(c) for c in cutoffs)
    return EigenSystem(basis, params, energies, vectors, cut)


@dataclass(frozen=True)
class GroundStateInfo:
    """Ground state of ``H - omega_plus * N`` across all sectors."""

    mu: float
    sector: int
    position: int
    vector: np.ndarray
    energy: float
    degenerate: bool


def grand_canonical_ground_state(eigensystem: EigenSystem, omega_plus: float) -> GroundStateInfo:
    """Minimise ``omega_f - omega_plus * N`` over all eigenstates.

    Ties within ``DEGENERACY_TOL * U`` go to the lowest ``N`` and set the
    ``degenerate`` flag.
    """
    best = []
    for n, e in enumerate(eigensystem.energies):
        if len(e):
            best.append((e[0] - omega_plus * n, n))
    if not best:
        raise ValueError("empty eigensystem")
    values = np.array([b[0] for b in best])
    emin = values.min()
    tol = DEGENERACY_TOL * max(abs(eigensystem.params.U), 1.0)
    ties = [b for b in best if b[0] - emin <= tol]
    n_gs = min(t[1] for t in ties)
    degenerate = len(ties) > 1
    es = eigensystem.energies[n_gs]
    if len(es) > 1 and es[1] - es[0] <= tol:
        degenerate = True
    vec = eigensystem.to_fock(n_gs, np.eye(len(es))[:, 0])
    mu = omega_plus - eigensystem.params.omega_cav
    return GroundStateInfo(mu, n_gs, 0, vec, float(es[0] - omega_plus * n_gs), degenerate)


def momentum_zero_operator(basis: FockBasis) -> Dict[int, SectorOperator]:
    """Zero-momentum occupation ``(1/L) sum_ij a_i^dagger a_j`` as diagonal-sector blocks."""
    total = sum((_global_annihilation(basis, i) for i in range(basis.n_sites)),
                sp.csr_matrix((basis.dim, basis.dim)))
    return _split(basis, (total.T @ total) / basis.n_sites, 0)
