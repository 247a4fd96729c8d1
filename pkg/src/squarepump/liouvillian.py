"""Redfield generator in the Hamiltonian eigenbasis and steady-state solvers.

The generator conserves the difference of photon numbers between the two
sides of the density matrix, so blocks ``rho[N, M]`` only talk to blocks
``rho[N +- 1, M +- 1]``.  Steady states live in the ``N == M`` family, which
is what the solvers work with.

Block conventions: ``A[i][N]`` is the eigenbasis matrix of ``a_i`` from
sector ``N`` to ``N - 1`` (shape ``n_{N-1} x n_N``); transition frequencies of
that block are ``E_N[f'] - E_{N-1}[f]``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp
from scipy.sparse.csgraph import connected_components

from .fock import _global_annihilation
from .hamiltonian import EigenSystem
from .spectra import FlatSpectrum, LorentzianSpectrum, SpectrumSum, SquareSpectrum

logger = logging.getLogger(__name__)

#: Hilbert dimension up to which the dense superoperator route is used
DENSE_LIMIT = 128
#: Hilbert dimension up to which the matrix-free route is allowed
ITERATIVE_LIMIT = 1500
#: eigenfrequency spacing (in units of U) below which states count as degenerate
DEGENERACY_TOL = 1e-6
#: negative density-matrix eigenvalues above this are clipped silently
NEGATIVITY_TOL = 1e-8


class DegeneracyWarning(UserWarning):
    """Secular treatment applied to a spectrum with degenerate eigenfrequencies."""


class WeakDissipationWarning(UserWarning):
    """Rates are not small compared to the spectral scales."""


class SolverError(RuntimeError):
    """Steady-state or time-evolution solver failure."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class BudgetError(ValueError):
    """Requested solver route does not fit the configured size budget."""


class ReducibleRatesError(ValueError):
    """The rate graph has several closed classes, so no unique steady state exists."""

    def __init__(self, components):
        self.components = components
        desc = "; ".join(f"class {k}: {len(c)} states" for k, c in enumerate(components))
        super().__init__(f"rate graph has {len(components)} closed classes ({desc})")


# ---------------------------------------------------------------------------
# parameters

@dataclass(frozen=True)
class DissipationParams:
    """Reservoir configuration.

    Parameters
    ----------
    loss_rate : float
        Markovian single-photon loss rate, applied on every site.
    emission : spectrum
        Emission spectrum (square, Lorentzian, flat or a sum).
    loss : spectrum, optional
        Extra frequency-dependent loss spectrum, applied on every site.
    layout : tuple of int, optional
        Emitting sites; ``None`` means all sites.
    rescale_layout : bool
        Multiply the emission rate by ``L / len(layout)`` so that the total
        emitted power matches the uniform case.
    """

    loss_rate: float
    emission: object
    loss: Optional[object] = None
    layout: Optional[Tuple[int, ...]] = None
    rescale_layout: bool = True

    def __post_init__(self):
        if not self.loss_rate > 0:
            raise ValueError("the Markovian loss rate must be positive")
        if self.layout is not None:
            sites = tuple(sorted(set(int(s) for s in self.layout)))
            if not sites:
                raise ValueError("empty emitter layout")
            object.__setattr__(self, "layout", sites)
        spec = self.emission
        if isinstance(spec, SquareSpectrum):
            scale = min(spec.width, spec.omega_hi - spec.omega_lo)
            if max(self.loss_rate, spec.rate) > 0.1 * scale:
                warnings.warn(
                    f"rates (loss {self.loss_rate:g}, emission {spec.rate:g}) are not small "
                    f"compared with the spectral scale {scale:g}", WeakDissipationWarning,
                    stacklevel=2)

    def emitting_sites(self, n_sites: int) -> Tuple[int, ...]:
        if self.layout is None:
            return tuple(range(n_sites))
        bad = [s for s in self.layout if not 0 <= s < n_sites]
        if bad:
            raise IndexError(f"emitter sites {bad} outside a {n_sites}-site chain")
        return self.layout

    def emission_scale(self, n_sites: int) -> float:
        if self.layout is None or not self.rescale_layout:
            return 1.0
        return n_sites / len(self.emitting_sites(n_sites))

    def shifted(self, delta: float) -> "DissipationParams":
        """Every reservoir frequency moved by ``delta`` (rotating-frame gauge)."""
        loss = None if self.loss is None else self.loss.shifted(delta)
        return DissipationParams(self.loss_rate, self.emission.shifted(delta), loss,
                                 self.layout, self.rescale_layout)


def _with_lamb(spec, lamb):
    if spec is None or lamb is None or isinstance(spec, FlatSpectrum):
        return spec
    from dataclasses import replace
    if isinstance(spec, SpectrumSum):
        return SpectrumSum(tuple(_with_lamb(c, lamb) for c in spec.components), spec.rate, lamb)
    return replace(spec, lamb=lamb)


# ---------------------------------------------------------------------------
# jump operators

def _bare_blocks(eigensystem: EigenSystem, site: int) -> Dict[int, np.ndarray]:
    """Eigenbasis blocks of ``a_site``, keyed by source sector."""
    basis = eigensystem.basis
    a = _global_annihilation(basis, site)
    out = {}
    for n in range(1, basis.n_sectors):
        src, dst = basis.sector_slices[n], basis.sector_slices[n - 1]
        blk = a[dst, src]
        out[n] = eigensystem.vectors[n - 1].T @ (blk @ eigensystem.vectors[n])
    return out


def _frequencies(eigensystem: EigenSystem, n: int) -> np.ndarray:
    """Transition frequencies ``E_n[f'] - E_{n-1}[f]`` laid out like ``A[i][n]``."""
    return eigensystem.energies[n][None, :] - eigensystem.energies[n - 1][:, None]


@dataclass(frozen=True, eq=False)
class JumpOperatorSet:
    """Bare and modified jump operators in the eigenbasis.

    ``modified[i][N] = bare[i][N] * (2 / rate) * Gamma_em(w)`` for emitting
    sites, and likewise ``loss_modified`` with the loss spectrum on every site.
    """

    eigensystem: EigenSystem
    dissipation: DissipationParams
    sites: Tuple[int, ...]
    bare: List[Dict[int, np.ndarray]] = field(repr=False)
    modified: Dict[int, Dict[int, np.ndarray]] = field(repr=False)
    loss_modified: Optional[List[Dict[int, np.ndarray]]] = field(repr=False)
    emission_prefactor: float
    loss_prefactor: float


def build_jump_operators(eigensystem: EigenSystem, dissipation: DissipationParams,
                         lamb: Optional[bool] = None) -> JumpOperatorSet:
    """Assemble bare and modified jump blocks.

    ``lamb`` overrides the Lamb-shift toggle of the spectra when given.
    """
    if not eigensystem.complete:
        raise ValueError("jump operators need a complete eigensystem")
    n_sites = eigensystem.basis.n_sites
    sites = dissipation.emitting_sites(n_sites)
    emission = _with_lamb(dissipation.emission, lamb)
    loss = _with_lamb(dissipation.loss, lamb)
    bare = [_bare_blocks(eigensystem, i) for i in range(n_sites)]
    freqs = {n: _frequencies(eigensystem, n) for n in range(1, eigensystem.basis.n_sectors)}
    fac = {n: emission.modified_factor(w) for n, w in freqs.items()}
    modified = {i: {n: bare[i][n] * fac[n] for n in freqs} for i in sites}
    loss_modified = None
    loss_pref = 0.0
    if loss is not None:
        lfac = {n: loss.modified_factor(w) for n, w in freqs.items()}
        loss_modified = [{n: bare[i][n] * lfac[n] for n in freqs} for i in range(n_sites)]
        loss_pref = 0.5 * loss.rate
    pref = 0.5 * emission.rate * dissipation.emission_scale(n_sites)
    return JumpOperatorSet(eigensystem, dissipation, sites, bare, modified, loss_modified,
                           pref, loss_pref)


# ---------------------------------------------------------------------------
# generator

class RedfieldGenerator:
    """Matrix-free action of the Redfield generator on eigenbasis blocks.

    The generator is written as
    ``-i (Heff_N rho - rho Heff_M^H) + gains`` with
    ``Heff_N = diag(E_N) - i X_N`` collecting the Hamiltonian and all
    anticommutator terms.
    """

    def __init__(self, jumps: JumpOperatorSet):
        self.jumps = jumps
        es = jumps.eigensystem
        self.eigensystem = es
        self.sizes = es.n_kept
        self.n_sectors = len(self.sizes)
        gl = jumps.dissipation.loss_rate
        self.loss_rate = gl
        # emission: C_i = pref * modified, gain C^H r A + A^H r C into (N+1, M+1)
        self._em = {n: [(jumps.emission_prefactor * jumps.modified[i][n], jumps.bare[i][n])
                        for i in jumps.sites] for n in range(1, self.n_sectors)}
        # losses: B_i = (gl/2) A + prefL * Abar, gain B r A^H + A r B^H into (N-1, M-1)
        self._loss = {}
        for n in range(1, self.n_sectors):
            pairs = []
            for i in range(es.basis.n_sites):
                a = jumps.bare[i][n]
                b = 0.5 * gl * a
                if jumps.loss_modified is not None:
                    b = b + jumps.loss_prefactor * jumps.loss_modified[i][n]
                pairs.append((b, a))
            self._loss[n] = pairs
        self.heff = []
        for n in range(self.n_sectors):
            x = np.zeros((self.sizes[n], self.sizes[n]), dtype=complex)
            if n + 1 < self.n_sectors:
                for c, a in self._em[n + 1]:
                    x += a @ c.conj().T
            if n > 0:
                # sum_i a^H B_i covers both Markovian and frequency-dependent loss
                for b, a in self._loss[n]:
                    x += a.T @ b
            self.heff.append(np.diag(es.energies[n]).astype(complex) - 1j * x)
        self._heff_h = [h.conj().T for h in self.heff]
        self.offsets = np.concatenate([[0], np.cumsum([s * s for s in self.sizes])])

    # -- block actions -------------------------------------------------
    def apply_blocks(self, rho: Dict[Tuple[int, int], np.ndarray]) -> Dict[Tuple[int, int], np.ndarray]:
        out: Dict[Tuple[int, int], np.ndarray] = {}

        def add(key, val):
            if key in out:
                out[key] += val
            else:
                out[key] = val

        for (n, m), r in rho.items():
            add((n, m), -1j * (self.heff[n] @ r - r @ self._heff_h[m]))
            if n + 1 < self.n_sectors and m + 1 < self.n_sectors:
                acc = 0
                for (cn, an), (cm, am) in zip(self._em[n + 1], self._em[m + 1]):
                    acc = acc + cn.conj().T @ r @ am + an.T @ r @ cm
                add((n + 1, m + 1), acc)
            if n > 0 and m > 0:
                acc = 0
                for (bn, an), (bm, am) in zip(self._loss[n], self._loss[m]):
                    acc = acc + bn @ r @ am.T + an @ r @ bm.conj().T
                add((n - 1, m - 1), acc)
        return out

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """Action on a full ``dim x dim`` matrix in the eigenbasis."""
        rho = np.asarray(rho)
        d = self.eigensystem.dim
        if rho.shape != (d, d):
            raise ValueError(f"expected a full {d}x{d} matrix, got shape {rho.shape}; "
                             "diagonal representations are not accepted here")
        off = self.eigensystem.offsets()
        blocks = {}
        for n in range(self.n_sectors):
            for m in range(self.n_sectors):
                b = rho[off[n]:off[n + 1], off[m]:off[m + 1]]
                if np.any(b):
                    blocks[(n, m)] = b
        res = self.apply_blocks(blocks)
        out = np.zeros((d, d), dtype=complex)
        for (n, m), b in res.items():
            out[off[n]:off[n + 1], off[m]:off[m + 1]] = b
        return out

    # -- vector form on the N == M blocks --------------------------------
    @property
    def n_vars(self) -> int:
        return int(self.offsets[-1])

    def unpack(self, x: np.ndarray) -> Dict[Tuple[int, int], np.ndarray]:
        return {(n, n): x[self.offsets[n]:self.offsets[n + 1]].reshape(s, s)
                for n, s in enumerate(self.sizes)}

    def pack(self, blocks) -> np.ndarray:
        x = np.zeros(self.n_vars, dtype=complex)
        for n, s in enumerate(self.sizes):
            if (n, n) in blocks:
                x[self.offsets[n]:self.offsets[n + 1]] = np.asarray(blocks[(n, n)]).ravel()
        return x

    def apply_vector(self, x: np.ndarray) -> np.ndarray:
        return self.pack(self.apply_blocks(self.unpack(x)))

    def population_index(self) -> np.ndarray:
        """Positions of the diagonal entries ``rho[f, f]`` in the vector form."""
        return np.concatenate([self.offsets[n] + np.arange(s) * (s + 1)
                               for n, s in enumerate(self.sizes)])

    def diagonal_vector(self) -> np.ndarray:
        """Exact diagonal of the generator in the vector form."""
        parts = []
        for n in range(self.n_sectors):
            h = np.diag(self.heff[n])
            parts.append((-1j * (h[:, None] - h.conj()[None, :])).ravel())
        return np.concatenate(parts)

    def population_rates(self) -> sp.csr_matrix:
        """Population-to-population block (the secular rate generator)."""
        idx = self.population_index()
        starts = np.concatenate([[0], np.cumsum(self.sizes)])
        rows, cols, vals = [], [], []
        for n in range(1, self.n_sectors):
            up = sum(2.0 * np.real(c.conj() * a) for c, a in self._em[n])      # (n-1 -> n) as [f, f']
            down = sum(2.0 * np.real(b * a) for b, a in self._loss[n])        # (n -> n-1) as [f, f']
            f, fp = np.nonzero(up)
            rows.append(starts[n] + fp); cols.append(starts[n - 1] + f); vals.append(up[f, fp])
            f, fp = np.nonzero(down)
            rows.append(starts[n - 1] + f); cols.append(starts[n] + fp); vals.append(down[f, fp])
        diag = np.real(self.diagonal_vector()[idx])
        d = len(idx)
        rows.append(np.arange(d)); cols.append(np.arange(d)); vals.append(diag)
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(d, d))

    def dense_superoperator(self) -> np.ndarray:
        """Dense matrix of the generator in the vector form.

        Uses ``vec(X R Y) = kron(X, Y.T) vec(R)`` for row-major vectorization.
        """
        n = self.n_vars
        off = self.offsets
        out = np.zeros((n, n), dtype=complex)
        for k, s in enumerate(self.sizes):
            sl = slice(off[k], off[k + 1])
            eye = np.eye(s)
            out[sl, sl] = -1j * (np.kron(self.heff[k], eye) - np.kron(eye, self.heff[k].conj()))
            if k + 1 < self.n_sectors:
                dst = slice(off[k + 1], off[k + 2])
                for c, a in self._em[k + 1]:
                    out[dst, sl] += np.kron(c.conj().T, a.T) + np.kron(a.T, c.T)
            if k > 0:
                dst = slice(off[k - 1], off[k])
                for b, a in self._loss[k]:
                    out[dst, sl] += np.kron(b, a) + np.kron(a, b.conj())
        return out


def apply_generator(jumps: JumpOperatorSet, rho) -> np.ndarray:
    """``d rho / dt`` for a full eigenbasis density matrix (array or :class:`DensityMatrix`)."""
    if isinstance(rho, DensityMatrix):
        if rho.representation != "full":
            raise ValueError("apply_generator needs a full density matrix, got a diagonal one")
        rho = rho.data
    return RedfieldGenerator(jumps).apply(rho)


# ---------------------------------------------------------------------------
# density matrix

@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Steady or instantaneous state in the Hamiltonian eigenbasis.

    ``representation`` is ``"full"`` (``data`` is a square matrix over all
    eigenstates) or ``"diagonal"`` (``data`` holds populations of the states
    listed in ``kept``, sector by sector).
    """

    eigensystem: EigenSystem
    representation: str
    data: np.ndarray = field(repr=False)
    kept: Optional[Tuple[np.ndarray, ...]] = field(default=None, repr=False)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.representation not in ("full", "diagonal"):
            raise ValueError(f"unknown representation {self.representation!r}")
        if self.kept is None:
            object.__setattr__(self, "kept", tuple(np.arange(k) for k in self.eigensystem.n_kept))

    @property
    def sizes(self) -> List[int]:
        return [len(k) for k in self.kept]

    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    @property
    def trace(self) -> float:
        if self.representation == "full":
            return float(np.real(np.trace(self.data)))
        return float(np.sum(self.data))

    def sector_block(self, n: int) -> np.ndarray:
        off = self.offsets()
        sl = slice(off[n], off[n + 1])
        if self.representation == "full":
            return self.data[sl, sl]
        return np.diag(self.data[sl])

    def sector_populations(self) -> np.ndarray:
        off = self.offsets()
        diag = np.real(np.diag(self.data)) if self.representation == "full" else self.data
        return np.array([diag[off[n]:off[n + 1]].sum() for n in range(len(self.sizes))])

    def is_block_diagonal(self, tol: float = 0.0) -> bool:
        if self.representation == "diagonal":
            return True
        off = self.offsets()
        mask = np.ones_like(self.data, dtype=bool)
        for n in range(len(self.sizes)):
            mask[off[n]:off[n + 1], off[n]:off[n + 1]] = False
        return bool(np.all(np.abs(self.data[mask]) <= tol))


def _finalize(gen: RedfieldGenerator, x: np.ndarray, info: dict) -> DensityMatrix:
    """Hermitize, normalize and clip tiny negativity of a vector-form solution."""
    es = gen.eigensystem
    blocks = gen.unpack(x)
    tr = sum(np.trace(b).real for b in blocks.values())
    d = es.dim
    rho = np.zeros((d, d), dtype=complex)
    off = es.offsets()
    worst = 0.0
    clipped = False
    for n in range(gen.n_sectors):
        b = blocks[(n, n)] / tr
        b = 0.5 * (b + b.conj().T)
        if b.size:
            w, v = np.linalg.eigh(b)
            worst = min(worst, w.min())
            if w.min() < 0:
                if w.min() < -NEGATIVITY_TOL:
                    raise SolverError(f"steady state has eigenvalue {w.min():.3e} in sector {n}, "
                                      f"beyond the clipping tolerance {NEGATIVITY_TOL:g}")
                w = np.clip(w, 0.0, None)
                b = (v * w) @ v.conj().T
                clipped = True
        rho[off[n]:off[n + 1], off[n]:off[n + 1]] = b
    if clipped:
        rho /= np.trace(rho).real
        logger.info("clipped negative steady-state eigenvalues (most negative %.2e)", worst)
    info = dict(info, min_eigenvalue=float(worst), clipped=clipped)
    res = gen.apply(rho)
    info["residual"] = float(np.max(np.abs(res)))
    return DensityMatrix(es, "full", rho, None, info)


def _rate_scale(jumps: JumpOperatorSet) -> float:
    return max(2 * jumps.emission_prefactor, 2 * jumps.loss_prefactor, jumps.dissipation.loss_rate)


def steady_state_exact(jumps: JumpOperatorSet, method: str = "auto", tol: float = 1e-9,
                       maxiter: int = 100, restart: int = 60) -> DensityMatrix:
    """Steady state of the full Redfield generator.

    Parameters
    ----------
    method : {"auto", "dense", "iterative"}
        ``dense`` assembles the superoperator on the ``N == M`` blocks and
        solves it by LU with one equation replaced by the trace condition.
        ``iterative`` runs right-preconditioned GMRES.  The preconditioner
        solves populations and near-degenerate coherences directly (the
        generalized secular problem) and the remaining coherences through
        their exact no-jump evolution within each sector.
    tol : float
        Target residual relative to the largest rate.  Energies of order U
        next to rates of order 1e-8 U put the round-off floor near 1e-9, so
        the iterative route accepts up to ``10 * tol`` when GMRES stalls.
    maxiter : int
        GMRES restarts.
    """
    es = jumps.eigensystem
    dim = es.basis.dim
    if method == "auto":
        method = "dense" if dim <= DENSE_LIMIT else "iterative"
    if method == "dense" and dim > DENSE_LIMIT:
        raise BudgetError(f"dense route limited to dimension {DENSE_LIMIT}, got {dim}")
    if method == "iterative" and dim > ITERATIVE_LIMIT:
        raise BudgetError(f"matrix-free route limited to dimension {ITERATIVE_LIMIT}, got {dim}")
    if method not in ("dense", "iterative"):
        raise ValueError(f"unknown method {method!r}")
    gen = RedfieldGenerator(jumps)
    scale = _rate_scale(jumps)
    if method == "dense":
        mat = gen.dense_superoperator()
        trace_row = np.zeros(gen.n_vars)
        pops = gen.population_index()
        trace_row[pops] = 1.0
        mat[pops[0], :] = trace_row
        rhs = np.zeros(gen.n_vars, dtype=complex)
        rhs[pops[0]] = 1.0
        norms = np.abs(mat).max(axis=1)
        norms[norms == 0] = 1.0
        x = sla.solve(mat / norms[:, None], rhs / norms)
        return _finalize(gen, x, {"method": "dense"})
    return _solve_iterative(gen, scale, tol, maxiter, restart)


class _CoherenceSolver:
    """Exact inverse of the no-jump part ``-i (Heff X - X Heff^H)`` on each sector's
    off-diagonal entries, through an eigendecomposition of ``Heff``.  Sectors whose
    eigenvectors are ill-conditioned fall back to the diagonal."""

    COND_MAX = 1e8

    def __init__(self, gen: "RedfieldGenerator"):
        self.gen = gen
        self.parts = []
        diag = gen.diagonal_vector()
        for n, h in enumerate(gen.heff):
            s = gen.sizes[n]
            d, v = np.linalg.eig(h)
            if s > 1 and np.linalg.cond(v) < self.COND_MAX:
                vinv = np.linalg.inv(v)
                denom = d[:, None] - d.conj()[None, :]
                self.parts.append((v, vinv, denom))
            else:
                self.parts.append(diag[gen.offsets[n]:gen.offsets[n + 1]].reshape(s, s))

    def solve(self, r: np.ndarray) -> np.ndarray:
        out = np.empty_like(r)
        for n, part in enumerate(self.parts):
            sl = slice(self.gen.offsets[n], self.gen.offsets[n + 1])
            s = self.gen.sizes[n]
            rb = r[sl].reshape(s, s).copy()
            np.fill_diagonal(rb, 0.0)
            if isinstance(part, tuple):
                v, vinv, denom = part
                y = (vinv @ (1j * rb) @ vinv.conj().T) / denom
                x = v @ y @ v.conj().T
            else:
                x = rb / np.where(part == 0, 1.0, part)
            out[sl] = x.ravel()
        return out


#: coherences between levels closer than this many times the largest rate join the
#: directly solved part of the preconditioner
SLOW_GAP = 100.0
#: cap on the size of that directly solved part
SLOW_MAX = 4000


def _slow_variables(gen: "RedfieldGenerator", gap: float) -> List[np.ndarray]:
    """Per sector, flat positions ``i * k + j`` of populations and near-degenerate coherences."""
    out = []
    for n, e in enumerate(gen.eigensystem.energies):
        d = np.abs(e[:, None] - e[None, :])
        out.append(np.flatnonzero(d <= gap))
    total = sum(len(x) for x in out)
    if total > SLOW_MAX:
        # keep all populations and the closest pairs, ties broken by position
        keys, owner = [], []
        for n, (e, x) in enumerate(zip(gen.eigensystem.energies, out)):
            k = len(e)
            key = np.abs(e[:, None] - e[None, :]).ravel()[x]
            key[x // k == x % k] = -1.0
            keys.append(key)
            owner.append(np.full(len(x), n))
        keys, owner = np.concatenate(keys), np.concatenate(owner)
        n_pop = sum(len(e) for e in gen.eigensystem.energies)
        keep = np.zeros(len(keys), bool)
        keep[np.argsort(keys, kind="stable")[:max(SLOW_MAX, n_pop)]] = True
        out = [x[keep[owner == n]] for n, x in enumerate(out)]
    return out


def _slow_matrix(gen: "RedfieldGenerator", slow: List[np.ndarray]) -> np.ndarray:
    """Generator restricted to the slow variables, assembled from the block formulas."""
    sizes = gen.sizes
    pairs = [(x // max(s, 1), x % max(s, 1)) for x, s in zip(slow, sizes)]
    starts = np.concatenate([[0], np.cumsum([len(x) for x in slow])])
    m = np.zeros((starts[-1], starts[-1]), dtype=complex)
    for n in range(gen.n_sectors):
        if not sizes[n]:
            continue
        i, j = pairs[n]
        h = gen.heff[n]
        # -i (Heff r - r Heff^H): r[i, j] -> out[k, l]
        blk = h[np.ix_(i, i)] * (j[None, :] == j[:, None]) \
            - (i[:, None] == i[None, :]) * h.conj()[np.ix_(j, j)]
        m[starts[n]:starts[n + 1], starts[n]:starts[n + 1]] = -1j * blk
        if n + 1 < gen.n_sectors and sizes[n + 1]:
            k, l = pairs[n + 1]
            acc = 0
            for c, a in gen._em[n + 1]:
                acc = acc + c.conj()[np.ix_(i, k)] * a[np.ix_(j, l)] + a[np.ix_(i, k)] * c[np.ix_(j, l)]
            m[starts[n + 1]:starts[n + 2], starts[n]:starts[n + 1]] = acc.T
        if n > 0 and sizes[n - 1]:
            k, l = pairs[n - 1]
            acc = 0
            for bb, a in gen._loss[n]:
                acc = acc + bb[np.ix_(k, i)] * a[np.ix_(l, j)] + a[np.ix_(k, i)] * bb.conj()[np.ix_(l, j)]
            m[starts[n - 1]:starts[n], starts[n]:starts[n + 1]] = acc
    return m


def _solve_iterative(gen: RedfieldGenerator, scale: float, tol: float, maxiter: int,
                     restart: int) -> DensityMatrix:
    slow = _slow_variables(gen, SLOW_GAP * scale)
    index = np.concatenate([gen.offsets[n] + x for n, x in enumerate(slow)])
    m = _slow_matrix(gen, slow)
    pops = gen.population_index()
    is_pop = np.isin(index, pops)
    # replace the last population equation by the trace condition
    last = np.flatnonzero(is_pop)[-1]
    m[last] = is_pop.astype(float)
    lu = sla.lu_factor(m)
    rhs = np.zeros(len(index), dtype=complex)
    rhs[last] = 1.0
    coherent = _CoherenceSolver(gen)

    def precond(r):
        rs = np.array(r[index])
        rs[last] = 0.0
        out = coherent.solve(r)
        out[index] = sla.lu_solve(lu, rs)
        return out

    x0 = np.zeros(gen.n_vars, dtype=complex)
    x0[index] = sla.lu_solve(lu, rhs)
    b = -gen.apply_vector(x0)
    op = spla.LinearOperator((gen.n_vars, gen.n_vars), matvec=lambda y: gen.apply_vector(precond(y)),
                             dtype=complex)
    history: List[float] = []
    bnorm = np.linalg.norm(b)
    if bnorm <= tol * scale:
        return _finalize(gen, x0, {"method": "iterative", "iterations": 0})
    y, code = spla.gmres(op, b, rtol=0.0, atol=tol * scale, restart=restart, maxiter=maxiter,
                         callback=history.append, callback_type="pr_norm")
    x = x0 + precond(y)
    resid = np.linalg.norm(gen.apply_vector(x))
    if code != 0 and resid > 10 * tol * scale:
        raise SolverError(f"GMRES did not converge (code {code}, residual {resid:.3e})",
                          [h * bnorm for h in history])
    logger.debug("GMRES converged in %d inner steps, residual %.2e", len(history), resid)
    return _finalize(gen, x, {"method": "iterative", "iterations": len(history)})


# ---------------------------------------------------------------------------
# secular rates

def _sup_above(spec, w):
    """Upper bound of ``spec.value`` on ``[w, inf)`` (elementwise)."""
    w = np.asarray(w, dtype=float)
    if isinstance(spec, SquareSpectrum):
        return spec.value(np.maximum(w, spec.midpoint))
    if isinstance(spec, LorentzianSpectrum):
        return spec.value(np.maximum(w, spec.omega_at))
    if isinstance(spec, SpectrumSum):
        return sum(_sup_above(c, w) for c in spec.components)
    if isinstance(spec, FlatSpectrum):
        return np.full(w.shape, float(spec.rate))
    raise TypeError(f"no tail bound for {type(spec).__name__}")


def _sup_below(spec, w):
    """Upper bound of ``spec.value`` on ``(-inf, w]`` (elementwise)."""
    w = np.asarray(w, dtype=float)
    if isinstance(spec, SquareSpectrum):
        return spec.value(np.minimum(w, spec.midpoint))
    if isinstance(spec, LorentzianSpectrum):
        return spec.value(np.minimum(w, spec.omega_at))
    if isinstance(spec, SpectrumSum):
        return sum(_sup_below(c, w) for c in spec.components)
    if isinstance(spec, FlatSpectrum):
        return np.full(w.shape, float(spec.rate))
    raise TypeError(f"no tail bound for {type(spec).__name__}")


@dataclass(frozen=True, eq=False)
class TransitionStrengths:
    """Site-summed squared matrix elements between computed eigenstates.

    ``emit[N]`` (shape ``k_{N+1} x k_N``) sums ``|<f'|a_i^dagger|f>|**2`` over the
    emitting sites, ``lose[N]`` the same over all sites.  ``raise_total[N][f]``
    is ``sum_i <f|a_i a_i^dagger|f>`` over emitting sites, used to bound
    transitions into states that were never computed.
    """

    eigensystem: EigenSystem
    sites: Tuple[int, ...]
    emit: List[np.ndarray] = field(repr=False)
    lose: List[np.ndarray] = field(repr=False)
    raise_total: List[np.ndarray] = field(repr=False)


def transition_strengths(eigensystem: EigenSystem, sites: Optional[Sequence[int]] = None
                         ) -> TransitionStrengths:
    basis = eigensystem.basis
    all_sites = tuple(range(basis.n_sites))
    sites = all_sites if sites is None else tuple(sites)
    for s in sites:
        basis.check_site(s)
    same = set(sites) == set(all_sites)
    k = len(eigensystem.energies)
    emit, lose, rtot = [], [], []
    for n in range(k - 1):
        src, dst = basis.sector_slices[n], basis.sector_slices[n + 1]
        v_n, v_up = eigensystem.vectors[n], eigensystem.vectors[n + 1]
        e_acc = np.zeros((v_up.shape[1], v_n.shape[1]))
        l_acc = np.zeros_like(e_acc) if not same else None
        for i in all_sites:
            ad = _global_annihilation(basis, i).T.tocsr()[dst, src]
            x = v_up.T @ (ad @ v_n)
            x *= x
            if i in sites:
                e_acc += x
            if l_acc is not None:
                l_acc += x
        emit.append(e_acc)
        lose.append(e_acc if same else l_acc)
    for n in range(k):
        occ = basis.sector_states(n).astype(float)
        w = ((occ[:, list(sites)] + 1) * (occ[:, list(sites)] < basis.n_max)).sum(axis=1)
        v = eigensystem.vectors[n]
        rtot.append((v * v).T @ w)
    return TransitionStrengths(eigensystem, sites, emit, lose, rtot)


@dataclass(frozen=True)
class EnergyWindow:
    """Keep eigenstates with ``E_f - omega_plus * N <= E_GS_eff + cut``.

    Rates into dropped states are routed to an absorbing sink whose steady
    inflow is reported as a truncation diagnostic.
    """

    omega_plus: float
    cut: float

    def thresholds(self, eigensystem: EigenSystem) -> np.ndarray:
        e0 = min(e[0] - self.omega_plus * n for n, e in enumerate(eigensystem.energies) if len(e))
        return np.array([e0 + self.cut + self.omega_plus * n for n in range(len(eigensystem.energies))])


@dataclass(frozen=True, eq=False)
class RateMatrix:
    """Secular transition rates between kept eigenstates of adjacent sectors.

    ``up[N][f', f]`` is the rate ``f (N) -> f' (N+1)``, ``down[N][f, f']`` the
    rate ``f' (N+1) -> f (N)``.  ``leak[N][f]`` is the rate from ``f`` into states
    outside the kept set (exact for Markovian loss, an upper bound for the
    spectral terms).  ``kept[N]`` indexes ``eigensystem.energies[N]``.
    """

    eigensystem: EigenSystem
    kept: Tuple[np.ndarray, ...]
    up: Dict[int, np.ndarray] = field(repr=False)
    down: Dict[int, np.ndarray] = field(repr=False)
    leak: Tuple[np.ndarray, ...] = field(repr=False)

    @property
    def sizes(self) -> List[int]:
        return [len(k) for k in self.kept]

    @property
    def levels(self) -> List[int]:
        return [n for n, s in enumerate(self.sizes) if s]

    def exit_rates(self) -> List[np.ndarray]:
        out = [l.copy() for l in self.leak]
        for n, u in self.up.items():
            out[n] += u.sum(axis=0)
        for n, d in self.down.items():
            out[n + 1] += d.sum(axis=0)
        return out

    def dense(self) -> np.ndarray:
        """Full rate generator ``W`` (columns: source) without the sink."""
        sizes = self.sizes
        off = np.concatenate([[0], np.cumsum(sizes)])
        w = np.zeros((off[-1], off[-1]))
        for n, u in self.up.items():
            w[off[n + 1]:off[n + 2], off[n]:off[n + 1]] = u
        for n, d in self.down.items():
            w[off[n]:off[n + 1], off[n + 1]:off[n + 2]] = d
        ex = np.concatenate(self.exit_rates()) if off[-1] else np.zeros(0)
        w[np.diag_indices_from(w)] = -ex
        return w


def secular_rates(strengths, dissipation: DissipationParams,
                  window: Optional[EnergyWindow] = None, warn_degenerate: bool = True) -> RateMatrix:
    """Golden-rule rates between eigenstates.

    ``strengths`` is a :class:`TransitionStrengths` or a :class:`JumpOperatorSet`.
    """
    if isinstance(strengths, JumpOperatorSet):
        strengths = transition_strengths(strengths.eigensystem, strengths.sites)
    es = strengths.eigensystem
    n_sites = es.basis.n_sites
    if set(strengths.sites) != set(dissipation.emitting_sites(n_sites)):
        raise ValueError("transition strengths were computed for a different emitter layout")
    k = len(es.energies)
    if warn_degenerate:
        _check_degeneracy(es)
    if window is None:
        kept = tuple(np.arange(len(e)) for e in es.energies)
        thr = np.array([np.inf] * k)
    else:
        thr = window.thresholds(es)
        kept = tuple(np.nonzero(e <= thr[n])[0] for n, e in enumerate(es.energies))
    # lowest energy of any state outside the kept set, computed or not
    floor = np.full(k, np.inf)
    for n, e in enumerate(es.energies):
        if len(kept[n]) < len(e):
            floor[n] = e[len(kept[n])]
        if len(e) < es.basis.sector_sizes[n]:
            floor[n] = min(floor[n], es.cutoffs[n])
    emission = dissipation.emission
    scale = dissipation.emission_scale(n_sites)
    gl = dissipation.loss_rate
    up, down = {}, {}
    leak = [np.zeros(len(kn)) for kn in kept]
    for n in range(k - 1):
        kn, ku = kept[n], kept[n + 1]
        en, eu = es.energies[n][kn], es.energies[n + 1][ku]
        w = eu[:, None] - en[None, :]
        m_em = strengths.emit[n][np.ix_(ku, kn)]
        m_lo = strengths.lose[n][np.ix_(ku, kn)]
        if len(kn) and len(ku):
            up[n] = scale * emission.value(w) * m_em
            dn = gl * m_lo
            if dissipation.loss is not None:
                dn = dn + dissipation.loss.value(w) * m_lo
            down[n] = dn.T
        if len(kn) and np.isfinite(floor[n + 1]):
            rest = np.clip(strengths.raise_total[n][kn] - m_em.sum(axis=0), 0.0, None)
            leak[n] += scale * _sup_above(emission, floor[n + 1] - en) * rest
        if len(ku) and np.isfinite(floor[n]):
            rest = np.clip((n + 1) - m_lo.sum(axis=1), 0.0, None)
            out = gl * rest
            if dissipation.loss is not None:
                out = out + _sup_below(dissipation.loss, eu - floor[n]) * rest
            leak[n + 1] += out
    return RateMatrix(es, kept, up, down, tuple(leak))


def _check_degeneracy(es: EigenSystem):
    tol = DEGENERACY_TOL * max(abs(es.params.U), 1e-300)
    count = 0
    for e in es.energies:
        if len(e) > 1:
            count += int(np.sum(np.diff(e) < tol))
    if count:
        warnings.warn(f"{count} degenerate eigenfrequency pairs; the secular populations "
                      "are only reliable when the degeneracies are protected by a symmetry "
                      "of the dissipators", DegeneracyWarning, stacklevel=3)


def _closed_classes(rates: RateMatrix, max_edges: int = 2_000_000):
    sizes = rates.sizes
    off = np.concatenate([[0], np.cumsum(sizes)])
    nnz = sum(int(np.count_nonzero(u)) for u in rates.up.values()) + \
        sum(int(np.count_nonzero(d)) for d in rates.down.values())
    if nnz > max_edges:
        logger.debug("skipping reducibility check (%d edges)", nnz)
        return None
    rows, cols = [], []
    for n, u in rates.up.items():
        r, c = np.nonzero(u)
        rows.append(off[n] + c); cols.append(off[n + 1] + r)
    for n, d in rates.down.items():
        r, c = np.nonzero(d)
        rows.append(off[n + 1] + c); cols.append(off[n] + r)
    total = int(off[-1])
    if rows:
        rows, cols = np.concatenate(rows), np.concatenate(cols)
    else:
        rows = cols = np.array([], dtype=int)
    g = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(total, total))
    ncomp, labels = connected_components(g, directed=True, connection="strong")
    leaving = np.zeros(ncomp, dtype=bool)
    cross = labels[rows] != labels[cols]
    leaving[labels[rows][cross]] = True
    return [np.nonzero(labels == c)[0] for c in range(ncomp) if not leaving[c]]


def _gth_null(c: np.ndarray) -> np.ndarray:
    """Stationary vector of a small conservative generator (columns sum to zero)."""
    a = c.T.copy()  # row convention for the elimination
    n = a.shape[0]
    for k in range(n - 1, 0, -1):
        s = a[k, :k].sum()
        if s <= 0:
            raise ReducibleRatesError([np.arange(k + 1, n)])
        a[:k, :k] += np.outer(a[:k, k], a[k, :k]) / s
    p = np.zeros(n)
    p[0] = 1.0
    for k in range(1, n):
        p[k] = p[:k] @ a[:k, k] / a[k, :k].sum()
    return p / p.sum()


def steady_state_secular(rates: RateMatrix, check: bool = True) -> DensityMatrix:
    """Stationary populations by block level reduction from the top sector down.

    Each step censors the chain onto the sectors below, with diagonals rebuilt
    from non-negative quantities (Grassmann-Taksar-Heyman style) so the result
    stays non-negative.
    """
    levels = rates.levels
    if not levels:
        raise ValueError("no states kept")
    if check:
        closed = _closed_classes(rates)
        if closed is not None and len(closed) > 1:
            raise ReducibleRatesError(closed)
    lo, hi = levels[0], levels[-1]
    if levels != list(range(lo, hi + 1)):
        raise ValueError("kept sectors must be contiguous")
    leak = rates.leak
    down_exit = {n: rates.down[n - 1].sum(axis=0) if (n - 1) in rates.down else np.zeros(rates.sizes[n])
                 for n in levels}
    up_rates = rates.up
    r_maps: Dict[int, np.ndarray] = {}
    sigma = leak[hi].copy()
    c = np.zeros((rates.sizes[hi], rates.sizes[hi]))
    for n in range(hi, lo, -1):
        np.fill_diagonal(c, 0.0)
        diag = -(c.sum(axis=0) + down_exit[n] + sigma)
        np.fill_diagonal(c, diag)
        r = -np.linalg.solve(c, up_rates[n - 1])
        r = np.clip(r, 0.0, None)
        r_maps[n - 1] = r
        c = rates.down[n - 1] @ r
        sigma = leak[n - 1] + r.T @ sigma
    # bottom level: sink leak is dropped so the reduced generator is conservative
    np.fill_diagonal(c, 0.0)
    np.fill_diagonal(c, -c.sum(axis=0))
    p_lo = _gth_null(c) if c.shape[0] > 1 else np.ones(1)
    p = {lo: p_lo}
    for n in range(lo + 1, hi + 1):
        p[n] = r_maps[n - 1] @ p[n - 1]
    total = sum(x.sum() for x in p.values())
    pops = np.concatenate([p[n] / total for n in range(lo, hi + 1)])
    pieces = [np.zeros(0)] * lo + [p[n] / total for n in range(lo, hi + 1)] + \
        [np.zeros(0)] * (len(rates.sizes) - hi - 1)
    flux = float(sum(pieces[n] @ leak[n] for n in levels))
    kept = tuple(rates.kept[n] if lo <= n <= hi else np.zeros(0, dtype=int)
                 for n in range(len(rates.sizes)))
    info = {"method": "secular", "sink_flux": flux, "n_kept": int(len(pops))}
    return DensityMatrix(rates.eigensystem, "diagonal", pops, kept, info)


# ---------------------------------------------------------------------------
# time evolution

def time_evolve(jumps: JumpOperatorSet, rho0, t_grid: Sequence[float], method: str = "DOP853",
                rtol: float = 1e-9, atol: float = 1e-12, max_step: float = np.inf) -> List[DensityMatrix]:
    """Integrate the Redfield equation and return snapshots on ``t_grid``.

    ``rho0`` is a full eigenbasis matrix or a :class:`DensityMatrix`.
    """
    gen = RedfieldGenerator(jumps)
    if isinstance(rho0, DensityMatrix):
        if rho0.representation == "diagonal":
            rho0 = np.diag(rho0.data.astype(complex))
        else:
            rho0 = rho0.data
    rho0 = np.asarray(rho0, dtype=complex)
    d = rho0.shape[0]
    t_grid = np.asarray(t_grid, dtype=float)

    def rhs(_t, y):
        return gen.apply(y.reshape(d, d)).ravel()

    sol = solve_ivp(rhs, (t_grid[0], t_grid[-1]), rho0.ravel(), method=method, t_eval=t_grid,
                    rtol=rtol, atol=atol, max_step=max_step)
    if not sol.success:
        raise SolverError(f"integration failed: {sol.message}")
    out = []
    for k in range(len(t_grid)):
        m = sol.y[:, k].reshape(d, d)
        out.append(DensityMatrix(jumps.eigensystem, "full", 0.5 * (m + m.conj().T), None,
                                 {"t": float(t_grid[k])}))
    return out
