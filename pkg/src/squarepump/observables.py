"""Steady-state diagnostics: density, condensed fraction, fluctuations, entropy, fidelity."""
from __future__ import annotations

import math
import weakref
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .fock import _global_annihilation
from .hamiltonian import EigenSystem, GroundStateInfo
from .liouvillian import DensityMatrix

CSV_COLUMNS = ("mu_over_U", "J_over_U", "n_ph", "x_bec", "delta_n", "entropy",
               "fidelity", "pi0", "overlap", "t_eff")

#: populations below this are dropped from the entropy sum
ENTROPY_FLOOR = 1e-12
#: two density-matrix eigenvalues closer than this make the top state ambiguous
TIE_TOL = 1e-10


def effective_temperature(delta_n: float, U: float = 1.0) -> float:
    """Temperature ``kT = (U/2) / ln(2 / delta_n**2)`` inferred from number fluctuations.

    Raises
    ------
    ValueError
        Unless ``0 < delta_n < sqrt(2)``.
    """
    if not 0 < delta_n < math.sqrt(2):
        raise ValueError(f"delta_n={delta_n!r} outside (0, sqrt(2))")
    log = math.log(2.0 / delta_n ** 2)
    if log <= 0:
        return math.inf
    return 0.5 * U / log


class _SectorData:
    """Per-eigensystem operator data shared by every report at that Hamiltonian."""

    def __init__(self, es: EigenSystem):
        basis = es.basis
        total = sum((_global_annihilation(basis, i) for i in range(basis.n_sites)),
                    0 * _global_annihilation(basis, 0))
        self.nk0 = []      # eigenbasis blocks of n_{k=0}
        self.occ = []      # per-state site occupations, shape (k_N, L)
        for n, sl in enumerate(basis.sector_slices):
            v = es.vectors[n]
            if n == 0 or v.shape[1] == 0:
                self.nk0.append(np.zeros((v.shape[1], v.shape[1])))
            else:
                b = total[basis.sector_slices[n - 1], sl] @ v
                self.nk0.append(b.T @ b / basis.n_sites)
            self.occ.append((v * v).T @ basis.sector_states(n).astype(float))


_CACHE: "weakref.WeakKeyDictionary[EigenSystem, _SectorData]" = weakref.WeakKeyDictionary()


def _data(es: EigenSystem) -> _SectorData:
    if es not in _CACHE:
        _CACHE[es] = _SectorData(es)
    return _CACHE[es]


@dataclass(frozen=True)
class SteadyStateReport:
    """Observables of one state.  ``None`` marks a value that is undefined there;
    the reason is listed in ``notes``."""

    n_ph: float
    x_bec: Optional[float]
    delta_n: Optional[float]
    entropy: float
    fidelity: float
    pi0: float
    overlap: float
    t_eff: Optional[float]
    top_sector: int = -1
    top_degenerate: bool = False
    gs_degenerate: bool = False
    profile: Optional[Tuple[float, ...]] = None
    notes: Tuple[str, ...] = field(default_factory=tuple)

    def to_row(self, mu_over_U: float, J_over_U: float) -> Dict[str, object]:
        row = {"mu_over_U": mu_over_U, "J_over_U": J_over_U}
        for key in CSV_COLUMNS[2:]:
            row[key] = getattr(self, key)
        return row

    def as_dict(self) -> dict:
        return asdict(self)


def _top_eigen(rho: DensityMatrix, n_gs: int, pos_gs: int):
    """Largest eigenvalue of ``rho``, its sector, overlap with the ground state,
    and whether it is tied; plus the full list of eigenvalues."""
    off = rho.offsets()
    best = (-1.0, -1, 0.0)
    values = []
    for n, size in enumerate(rho.sizes):
        if not size:
            continue
        if rho.representation == "diagonal":
            w = rho.data[off[n]:off[n + 1]]
            k = int(np.argmax(w))
            pos = rho.kept[n][k]
            ov = 1.0 if (n == n_gs and pos == pos_gs) else 0.0
            top = w[k]
        else:
            w, v = np.linalg.eigh(rho.sector_block(n))
            top = w[-1]
            ov = float(abs(v[pos_gs, -1]) ** 2) if n == n_gs else 0.0
        values.append(np.asarray(w, dtype=float))
        if top > best[0]:
            best = (float(top), n, ov)
    allv = np.sort(np.concatenate(values))[::-1]
    tie = len(allv) > 1 and allv[0] - allv[1] <= TIE_TOL
    return best, tie, allv


def compute_report(rho: DensityMatrix, ground_state: GroundStateInfo,
                   profile: bool = False) -> SteadyStateReport:
    """All diagnostics of ``rho``; ``ground_state`` must come from the same eigensystem."""
    es = rho.eigensystem
    data = _data(es)
    pops = rho.sector_populations()
    ns = np.arange(len(pops))
    mean = float(pops @ ns)
    var = max(float(pops @ ns ** 2) - mean ** 2, 0.0)
    notes = []
    L = es.basis.n_sites
    off = rho.offsets()

    nk0 = 0.0
    for n, size in enumerate(rho.sizes):
        if not size:
            continue
        kn = rho.kept[n]
        block = data.nk0[n][np.ix_(kn, kn)]
        if rho.representation == "diagonal":
            nk0 += float(rho.data[off[n]:off[n + 1]] @ np.diag(block))
        else:
            nk0 += float(np.real(np.sum(rho.sector_block(n) * block.T)))
    if mean > 0:
        x_bec, delta_n = nk0 / mean, math.sqrt(var) / mean
    else:
        x_bec = delta_n = None
        notes.append("empty state: x_bec and delta_n undefined")

    t_eff = None
    if delta_n is not None:
        if 0 < delta_n < math.sqrt(2):
            t_eff = effective_temperature(delta_n, es.params.U)
        else:
            notes.append("delta_n outside the temperature formula's domain")

    (pi0, top_sector, overlap), tie, evals = _top_eigen(rho, ground_state.sector, ground_state.position)
    if tie:
        notes.append("largest density-matrix eigenvalue is degenerate")
    p = evals[evals > ENTROPY_FLOOR]
    entropy = float(-(p * np.log(p)).sum())

    fid = 0.0
    gs_n = ground_state.sector
    if rho.sizes[gs_n]:
        hit = np.nonzero(rho.kept[gs_n] == ground_state.position)[0]
        if hit.size:
            k = off[gs_n] + hit[0]
            fid = float(np.real(rho.data[k, k] if rho.representation == "full" else rho.data[k]))
    if ground_state.degenerate:
        notes.append("ground state is degenerate; fidelity refers to the lowest-N choice")

    prof = tuple(density_profile(rho)) if profile else None
    return SteadyStateReport(mean / L, x_bec, delta_n, entropy, fid, pi0, overlap, t_eff,
                             top_sector, tie, ground_state.degenerate, prof, tuple(notes))


def density_profile(rho: DensityMatrix) -> np.ndarray:
    """Site-resolved densities ``<n_i>``."""
    data = _data(rho.eigensystem)
    off = rho.offsets()
    out = np.zeros(rho.eigensystem.basis.n_sites)
    for n, size in enumerate(rho.sizes):
        if not size:
            continue
        kn = rho.kept[n]
        if rho.representation == "diagonal":
            out += rho.data[off[n]:off[n + 1]] @ data.occ[n][kn]
        else:
            v = rho.eigensystem.vectors[n]
            fock = v @ rho.sector_block(n) @ v.T
            out += np.real(np.diag(fock)) @ rho.eigensystem.basis.sector_states(n)
    return out


def ground_state_report(eigensystem: EigenSystem, ground_state: GroundStateInfo) -> SteadyStateReport:
    """Observables of the pure grand-canonical ground state (equilibrium at T = 0)."""
    n = ground_state.sector
    L = eigensystem.basis.n_sites
    notes = ["pure state: temperature formula undefined at delta_n = 0"]
    if n == 0:
        return SteadyStateReport(0.0, None, None, 0.0, 1.0, 1.0, 1.0, None, 0, False,
                                 ground_state.degenerate, None,
                                 ("empty state: x_bec and delta_n undefined",))
    nk0 = float(_data(eigensystem).nk0[n][ground_state.position, ground_state.position])
    return SteadyStateReport(n / L, nk0 / n, 0.0, 0.0, 1.0, 1.0, 1.0, None, n, False,
                             ground_state.degenerate, None, tuple(notes))
