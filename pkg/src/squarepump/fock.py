"""Truncated occupation-number basis of an L-site bosonic chain.

States are grouped by total photon number ``N`` so that every
number-conserving operator is block diagonal and ladder operators only
connect neighbouring sectors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

BOUNDARIES = ("open", "periodic")

#: default cap on the number of many-body states a basis may hold
MAX_STATES = 1 << 18


@dataclass(frozen=True)
class SectorOperator:
    """One block of an operator, mapping sector ``source`` into sector ``target``.

    ``matrix`` is a ``scipy.sparse.csr_matrix`` indexed as
    ``(target_state, source_state)`` with positions local to each sector.
    """

    source: int
    target: int
    matrix: sp.csr_matrix

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    @property
    def H(self) -> "SectorOperator":
        return SectorOperator(self.target, self.source, self.matrix.conj().T.tocsr())


@dataclass(frozen=True, eq=False)
class FockBasis:
    """Enumerated Fock states of ``n_sites`` modes with per-site cutoff ``n_max``.

    Global ordering: by total number ``N`` first, lexicographically on the
    occupation vector within a sector.  ``sector_slices[N]`` is the slice of
    global indices belonging to sector ``N``.
    """

    n_sites: int
    n_max: int
    boundary: str
    states: np.ndarray = field(repr=False)
    sector_slices: Tuple[slice, ...] = field(repr=False)
    _code_to_index: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.states.shape[0]

    @property
    def n_sectors(self) -> int:
        return len(self.sector_slices)

    @property
    def sector_sizes(self) -> List[int]:
        return [s.stop - s.start for s in self.sector_slices]

    @property
    def totals(self) -> np.ndarray:
        return self.states.sum(axis=1)

    def sector_states(self, n: int) -> np.ndarray:
        return self.states[self.sector_slices[n]]

    def encode(self, occupations) -> np.ndarray:
        occ = np.asarray(occupations, dtype=np.int64)
        weights = (self.n_max + 1) ** np.arange(self.n_sites - 1, -1, -1, dtype=np.int64)
        return occ @ weights

    def index(self, occupation: Sequence[int]) -> int:
        """Global index of an occupation vector."""
        occ = np.asarray(occupation)
        if occ.shape != (self.n_sites,) or occ.min() < 0 or occ.max() > self.n_max:
            raise ValueError(f"invalid occupation vector {tuple(occupation)}")
        return int(self._code_to_index[self.encode(occ)])

    def local_index(self, occupation: Sequence[int]) -> Tuple[int, int]:
        """``(sector, position within sector)`` of an occupation vector."""
        g = self.index(occupation)
        n = int(np.sum(occupation))
        return n, g - self.sector_slices[n].start

    def bonds(self) -> List[Tuple[int, int]]:
        """Nearest-neighbour bonds, each listed once."""
        pairs = [(i, i + 1) for i in range(self.n_sites - 1)]
        if self.boundary == "periodic":
            pairs.append((self.n_sites - 1, 0))
        return pairs

    def check_site(self, site: int) -> int:
        if not 0 <= site < self.n_sites:
            raise IndexError(f"site {site} out of range for a {self.n_sites}-site chain")
        return int(site)


def build_basis(n_sites: int, n_max: int, boundary: str = "open",
                max_states: int = MAX_STATES) -> FockBasis:
    """Enumerate the ``(n_max + 1) ** n_sites`` Fock states of a chain.

    Raises
    ------
    ValueError
        For non-positive sizes, an unknown boundary, periodic chains shorter
        than three sites (the single bond would be counted twice), or a state
        count above ``max_states``.
    """
    if n_sites < 1 or n_max < 1:
        raise ValueError("need n_sites >= 1 and n_max >= 1")
    if boundary not in BOUNDARIES:
        raise ValueError(f"boundary must be one of {BOUNDARIES}, got {boundary!r}")
    if boundary == "periodic" and n_sites < 3:
        raise ValueError("periodic boundary needs at least 3 sites; use 'open' for L < 3")
    if n_sites * np.log(n_max + 1) > np.log(max_states):
        raise ValueError(
            f"{n_max + 1}**{n_sites} states exceeds the memory budget of {max_states}")

    base = n_max + 1
    dim = base ** n_sites
    codes = np.arange(dim, dtype=np.int64)
    # digit i is the occupation of site i, site 0 most significant
    states = np.empty((dim, n_sites), dtype=np.int16)
    rem = codes.copy()
    for i in range(n_sites - 1, -1, -1):
        states[:, i] = rem % base
        rem //= base
    totals = states.sum(axis=1)
    order = np.lexsort((codes, totals))  # stable: lexicographic inside a sector
    states = states[order]
    code_to_index = np.empty(dim, dtype=np.int64)
    code_to_index[order] = np.arange(dim)

    counts = np.bincount(totals, minlength=n_sites * n_max + 1)
    edges = np.concatenate([[0], np.cumsum(counts)])
    slices = tuple(slice(int(edges[k]), int(edges[k + 1])) for k in range(len(counts)))
    states.setflags(write=False)
    code_to_index.setflags(write=False)
    return FockBasis(n_sites, n_max, boundary, states, slices, code_to_index)


def _global_annihilation(basis: FockBasis, site: int) -> sp.csr_matrix:
    occ = basis.states[:, site].astype(np.int64)
    src = np.nonzero(occ > 0)[0]
    step = (basis.n_max + 1) ** (basis.n_sites - 1 - site)
    codes = basis.encode(basis.states[src]) - step
    dst = basis._code_to_index[codes]
    vals = np.sqrt(occ[src].astype(float))
    return sp.csr_matrix((vals, (dst, src)), shape=(basis.dim, basis.dim))


def _split(basis: FockBasis, op: sp.spmatrix, shift: int) -> Dict[int, SectorOperator]:
    op = sp.csr_matrix(op)
    blocks = {}
    for n, sl in enumerate(basis.sector_slices):
        m = n + shift
        if not 0 <= m < basis.n_sectors:
            continue
        blocks[n] = SectorOperator(n, m, op[basis.sector_slices[m], sl].tocsr())
    return blocks


def annihilation_operator(basis: FockBasis, site: int) -> Dict[int, SectorOperator]:
    """Blocks of ``a_site`` keyed by source sector ``N >= 1`` (each maps ``N -> N-1``)."""
    site = basis.check_site(site)
    return _split(basis, _global_annihilation(basis, site), -1)


def creation_operator(basis: FockBasis, site: int) -> Dict[int, SectorOperator]:
    """Blocks of ``a_site^dagger`` keyed by source sector (each maps ``N -> N+1``)."""
    return {op.target: op.H for op in annihilation_operator(basis, site).values()}


def number_operator(basis: FockBasis, site: Union[int, str] = "total") -> Dict[int, SectorOperator]:
    """Diagonal blocks of ``n_site`` or, with ``site="total"``, of ``N``."""
    if isinstance(site, str):
        if site != "total":
            raise ValueError(f"unknown selector {site!r}")
        diag = basis.totals.astype(float)
    else:
        diag = basis.states[:, basis.check_site(site)].astype(float)
    return _split(basis, sp.diags(diag), 0)


def global_matrix(basis: FockBasis, blocks: Dict[int, SectorOperator]) -> sp.csr_matrix:
    """Reassemble sector blocks into one ``dim x dim`` sparse matrix."""
    rows, cols, vals = [], [], []
    for blk in blocks.values():
        c = blk.matrix.tocoo()
        rows.append(c.row + basis.sector_slices[blk.target].start)
        cols.append(c.col + basis.sector_slices[blk.source].start)
        vals.append(c.data)
    if not rows:
        return sp.csr_matrix((basis.dim, basis.dim))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(basis.dim, basis.dim))
