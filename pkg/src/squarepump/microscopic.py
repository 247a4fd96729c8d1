"""Emitter-resolved single-cavity model: photons plus incoherently pumped two-level emitters.

Used to check the photon-only Redfield description and to simulate one
emitter whose transition frequency is swept back and forth across
``[omega_minus, omega_plus]``.  Density matrices are stored row-major,
``vec(X rho Y) = kron(X, Y.T) vec(rho)``.

The generator conserves the total excitation number ``n + sum_k sigma+_k sigma-_k``
up to the dissipators, so any state diagonal in that number stays so.  All
propagation and steady-state work happens in that invariant block.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .spectra import LorentzianSpectrum, SpectrumSum

#: joint Hilbert dimension budget
MAX_JOINT_DIM = 512
#: integration step as a fraction of min(1/pump, pump/speed)
STEP_FRACTION = 1.0 / 20.0


class BudgetExceeded(ValueError):
    """Joint model larger than ``MAX_JOINT_DIM``."""


@dataclass(frozen=True)
class ModulationSpec:
    """Triangle wave between ``omega_minus`` and ``omega_plus`` at constant speed ``speed``."""

    omega_minus: float
    omega_plus: float
    speed: float

    def __post_init__(self):
        if not self.omega_minus < self.omega_plus:
            raise ValueError("need omega_minus < omega_plus")
        if not self.speed > 0:
            raise ValueError("modulation speed must be positive")

    @property
    def half_period(self) -> float:
        return (self.omega_plus - self.omega_minus) / self.speed

    @property
    def period(self) -> float:
        return 2.0 * self.half_period


def modulation_profile(spec: ModulationSpec, t):
    """Emitter frequency at time ``t``: ``omega_minus`` at ``t = 0``, ``omega_plus`` at ``t = T``."""
    T = spec.half_period
    phase = np.mod(np.asarray(t, dtype=float), 2.0 * T)
    rise = np.where(phase <= T, phase, 2.0 * T - phase)
    return spec.omega_minus + spec.speed * rise


@dataclass(frozen=True)
class EmitterConfig:
    """Emitters coupled to one cavity.

    ``omega_at`` holds one static frequency per emitter.  With a
    ``modulation`` every emitter follows the triangle wave instead.
    """

    omega_at: Tuple[float, ...]
    rabi: float
    pump: float
    modulation: Optional[ModulationSpec] = None

    def __post_init__(self):
        object.__setattr__(self, "omega_at", tuple(float(w) for w in np.atleast_1d(self.omega_at)))
        if not self.omega_at:
            raise ValueError("need at least one emitter")
        if not self.pump > 0:
            raise ValueError("pump rate must be positive")

    @property
    def n_emitters(self) -> int:
        return len(self.omega_at)

    def frequencies(self, t: float) -> np.ndarray:
        if self.modulation is None:
            return np.asarray(self.omega_at)
        return np.full(self.n_emitters, float(modulation_profile(self.modulation, t)))

    def redfield_spectrum(self, lamb: bool = True) -> SpectrumSum:
        """Photon-only emission spectrum of the static emitters: a sum of Lorentzians."""
        return SpectrumSum(tuple(LorentzianSpectrum.from_emitter(w, self.rabi, self.pump, lamb)
                                 for w in self.omega_at), lamb=lamb)


def _dissipator(c: sp.spmatrix) -> sp.csr_matrix:
    d = c.shape[0]
    eye = sp.identity(d, format="csr")
    cdc = (c.conj().T @ c).tocsr()
    return (sp.kron(c, c.conj()) - 0.5 * sp.kron(cdc, eye) - 0.5 * sp.kron(eye, cdc.T)).tocsr()


def _commutator(h: sp.spmatrix) -> sp.csr_matrix:
    eye = sp.identity(h.shape[0], format="csr")
    return (-1j * (sp.kron(h, eye) - sp.kron(eye, h.T))).tocsr()


class MicroscopicModel:
    """Cavity truncated at ``n_max`` photons with on-site interaction ``U``, plus emitters.

    The generator is affine in the emitter frequencies,
    ``L(t) = L_0 + sum_k omega_k(t) L_k``.
    """

    def __init__(self, n_max: int, emitters: EmitterConfig, loss_rate: float,
                 U: float = 1.0, omega_cav: float = 0.0):
        if n_max < 1:
            raise ValueError("n_max must be >= 1")
        if loss_rate < 0:
            raise ValueError("loss rate must be non-negative")
        self.n_max, self.emitters, self.loss_rate = int(n_max), emitters, float(loss_rate)
        self.U, self.omega_cav = float(U), float(omega_cav)
        m = emitters.n_emitters
        self.dim = (n_max + 1) * 2 ** m
        if self.dim > MAX_JOINT_DIM:
            raise BudgetExceeded(f"joint dimension {self.dim} exceeds {MAX_JOINT_DIM}")

        n = np.arange(n_max + 1)
        a_cav = sp.diags(np.sqrt(n[1:]), 1, format="csr")
        lower = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))   # basis (g, e)

        def embed(op, slot):
            mats = [sp.identity(n_max + 1, format="csr")] + [sp.identity(2, format="csr")] * m
            mats[slot] = op
            out = mats[0]
            for x in mats[1:]:
                out = sp.kron(out, x, format="csr")
            return out

        self.a = embed(a_cav, 0)
        self.sigma = [embed(lower, k + 1) for k in range(m)]
        n_ph = (self.a.T @ self.a).diagonal().real
        excited = [(s.T @ s).diagonal().real for s in self.sigma]
        h0 = sp.diags(self.omega_cav * n_ph + 0.5 * self.U * n_ph * (n_ph - 1))
        for s in self.sigma:
            h0 = h0 + emitters.rabi * (self.a.T @ s + s.T @ self.a)
        gen0 = _commutator(h0) + self.loss_rate * _dissipator(self.a)
        for s in self.sigma:
            gen0 = gen0 + emitters.pump * _dissipator(s.T.tocsr())
        self._gen0 = gen0.tocsr()
        self._gen_k = [_commutator(sp.diags(e)) for e in excited]

        self.photons = np.rint(n_ph).astype(int)
        self.excited = np.asarray(excited)
        total = self.photons + np.rint(self.excited.sum(axis=0)).astype(int)
        ii, jj = np.nonzero(total[:, None] == total[None, :])
        self.block = ii * self.dim + jj
        self._diag_pos = np.nonzero(ii == jj)[0]
        self._diag_state = ii[self._diag_pos]
        self.L0 = self._gen0[self.block][:, self.block].toarray()
        self.Lk = [g[self.block][:, self.block].toarray() for g in self._gen_k]

    # full-space generator, for inspection and tests
    def generator(self, t: float = 0.0) -> sp.csr_matrix:
        out = self._gen0
        for w, g in zip(self.emitters.frequencies(t), self._gen_k):
            out = out + w * g
        return out.tocsr()

    def block_generator(self, t: float = 0.0) -> np.ndarray:
        out = self.L0.copy()
        for w, g in zip(self.emitters.frequencies(t), self.Lk):
            out += w * g
        return out

    def with_rabi(self, rabi: float) -> "MicroscopicModel":
        return MicroscopicModel(self.n_max, replace(self.emitters, rabi=rabi), self.loss_rate,
                                self.U, self.omega_cav)

    def initial_state(self, photons: int = 0) -> np.ndarray:
        """Block vector of ``|photons> x |all excited>``."""
        state = photons * 2 ** self.emitters.n_emitters + 2 ** self.emitters.n_emitters - 1
        v = np.zeros(len(self.block), dtype=complex)
        v[self._diag_pos[self._diag_state == state]] = 1.0
        return v

    def full_matrix(self, v: np.ndarray) -> np.ndarray:
        rho = np.zeros(self.dim * self.dim, dtype=complex)
        rho[self.block] = v
        return rho.reshape(self.dim, self.dim)

    def diagonal(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self._diag_state] = v[self._diag_pos].real
        return out

    def photon_distribution(self, v: np.ndarray) -> np.ndarray:
        return np.bincount(self.photons, weights=self.diagonal(v), minlength=self.n_max + 1)

    def statistics(self, v: np.ndarray) -> Dict[str, float]:
        """Traced photon statistics plus the mean emitter excitation."""
        diag = self.diagonal(v)
        p = np.bincount(self.photons, weights=diag, minlength=self.n_max + 1)
        n = np.arange(self.n_max + 1)
        mean = float(p @ n)
        var = max(float(p @ n ** 2) - mean ** 2, 0.0)
        return {"trace": float(diag.sum()), "n": mean, "var": var,
                "delta_n": math.sqrt(var) / mean if mean > 0 else math.nan,
                "excited": float((self.excited @ diag).mean()),
                "p": p}


def assemble_microscopic_generator(n_max: int, emitters: EmitterConfig, loss_rate: float,
                                   t: float = 0.0, U: float = 1.0) -> sp.csr_matrix:
    """Sparse joint generator at time ``t`` acting on row-major ``vec(rho)``."""
    return MicroscopicModel(n_max, emitters, loss_rate, U).generator(t)


def _null_with_trace(gen: np.ndarray, trace_row: np.ndarray) -> np.ndarray:
    a = gen.copy()
    b = np.zeros(len(a), dtype=complex)
    k = int(np.argmax(np.abs(trace_row)))
    a[k] = trace_row
    b[k] = 1.0
    return np.linalg.solve(a, b)


def static_steady_state(model: MicroscopicModel) -> np.ndarray:
    """Steady state of a time-independent model, as a block vector."""
    if model.emitters.modulation is not None:
        raise ValueError("modulated model has no static steady state; use periodic_steady_state")
    trace = np.zeros(len(model.block), dtype=complex)
    trace[model._diag_pos] = 1.0
    return _null_with_trace(model.block_generator(0.0), trace)


def default_steps(spec: ModulationSpec, pump: float) -> int:
    """Steps per half period so that each step is at most ``STEP_FRACTION * min(1/pump, pump/speed)``."""
    dt = STEP_FRACTION * min(1.0 / pump, pump / spec.speed)
    return max(1, int(math.ceil(spec.half_period / dt)))


@dataclass
class PropagatorTable:
    """Midpoint exponential propagators for one rising half period; the falling
    half reuses them in reverse order."""

    model: MicroscopicModel
    steps: int
    dt: float
    props: np.ndarray

    @classmethod
    def build(cls, model: MicroscopicModel, steps: Optional[int] = None) -> "PropagatorTable":
        spec = model.emitters.modulation
        if spec is None:
            raise ValueError("model is not modulated")
        steps = steps or default_steps(spec, model.emitters.pump)
        dt = spec.half_period / steps
        n = len(model.block)
        props = np.empty((steps, n, n), dtype=complex)
        for k in range(steps):
            props[k] = sla.expm(model.block_generator((k + 0.5) * dt) * dt)
        return cls(model, steps, dt, props)

    def step(self, k: int) -> np.ndarray:
        """Propagator of step ``k`` counted from the start of a period."""
        k %= 2 * self.steps
        return self.props[k] if k < self.steps else self.props[2 * self.steps - 1 - k]

    def period(self) -> np.ndarray:
        out = np.eye(self.props.shape[1], dtype=complex)
        for k in range(2 * self.steps):
            out = self.step(k) @ out
        return out


def _record(model, v, t, rows):
    s = model.statistics(v)
    rows.append((t, s["n"], s["delta_n"], s["var"], s["p"], s["excited"], s["trace"]))


def _pack(rows) -> Dict[str, np.ndarray]:
    t, n, dn, var, p, exc, tr = zip(*rows)
    return {"t": np.array(t), "n": np.array(n), "delta_n": np.array(dn), "var": np.array(var),
            "p": np.array(p), "excited": np.array(exc), "trace": np.array(tr)}


def evolve_and_record(model: MicroscopicModel, v0: np.ndarray, horizon: float,
                      samples: int = 400, method: str = "midpoint",
                      table: Optional[PropagatorTable] = None,
                      rtol: float = 1e-8, atol: float = 1e-10) -> Dict[str, np.ndarray]:
    """Integrate from ``v0`` (block vector) to ``horizon`` and sample photon statistics.

    ``method="midpoint"`` steps with exact exponentials of the generator at
    each step midpoint (modulated models only); any other value is passed to
    ``solve_ivp`` with the step bounded by ``STEP_FRACTION * min(1/pump, pump/speed)``.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rows = []
    if method == "midpoint":
        if table is None:
            table = PropagatorTable.build(model)
        n_steps = int(round(horizon / table.dt))
        every = max(1, n_steps // samples)
        v = np.array(v0, dtype=complex)
        _record(model, v, 0.0, rows)
        for k in range(n_steps):
            v = table.step(k) @ v
            if (k + 1) % every == 0 or k + 1 == n_steps:
                _record(model, v, (k + 1) * table.dt, rows)
        return _pack(rows)

    spec = model.emitters.modulation
    pump = model.emitters.pump
    max_step = STEP_FRACTION * (min(1.0 / pump, pump / spec.speed) if spec else 1.0 / pump)
    t_eval = np.linspace(0.0, horizon, samples + 1)
    sol = solve_ivp(lambda t, y: model.block_generator(t) @ y, (0.0, horizon),
                    np.asarray(v0, dtype=complex), method=method, t_eval=t_eval,
                    rtol=rtol, atol=atol, max_step=max_step)
    if not sol.success:
        raise RuntimeError(f"integration failed: {sol.message}")
    for t, y in zip(sol.t, sol.y.T):
        _record(model, y, float(t), rows)
    return _pack(rows)


def periodic_steady_state(model: MicroscopicModel, table: Optional[PropagatorTable] = None,
                          samples: int = 200) -> Dict[str, object]:
    """Fixed point of the one-period map and the statistics along that period.

    Returns the recorded period (``t``, ``n``, ``delta_n``, ...) plus
    period averages: ``mean_n``, ``mean_delta_n``, ``mean_var`` and
    ``miss`` (probability of not holding ``round(mean_n)`` photons), and the
    peak-to-peak of ``n``.
    """
    if table is None:
        table = PropagatorTable.build(model)
    trace = np.zeros(len(model.block), dtype=complex)
    trace[model._diag_pos] = 1.0
    v0 = _null_with_trace(table.period() - np.eye(len(trace)), trace)
    spec = model.emitters.modulation
    out = evolve_and_record(model, v0, spec.period, samples=samples, table=table)
    n = out["n"][:-1]
    p = out["p"][:-1]
    target = int(round(n.mean()))
    out.update(mean_n=float(n.mean()), mean_delta_n=float(out["delta_n"][:-1].mean()),
               mean_var=float(out["var"][:-1].mean()),
               miss=float(1.0 - p[:, target].mean()) if target <= model.n_max else math.nan,
               peak_to_peak=float(n.max() - n.min()), state=v0)
    return out


def calibrate_rabi(model: MicroscopicModel, target_n: float, bracket=(1e-4, 1e-1),
                   steps: Optional[int] = None, xtol: float = 1e-4) -> Tuple[float, Dict[str, object]]:
    """Rabi coupling that makes the period-averaged photon number equal ``target_n``.

    ``bracket`` is in the model's frequency units, relative to nothing; it is
    widened geometrically if the target is not enclosed.
    """
    def mean_n(rabi):
        m = model.with_rabi(rabi)
        return periodic_steady_state(m, PropagatorTable.build(m, steps), samples=20)["mean_n"]

    lo, hi = bracket
    f_lo, f_hi = mean_n(lo) - target_n, mean_n(hi) - target_n
    for _ in range(6):
        if f_lo < 0 < f_hi:
            break
        if f_lo >= 0:
            lo /= 4
            f_lo = mean_n(lo) - target_n
        if f_hi <= 0:
            hi *= 4
            f_hi = mean_n(hi) - target_n
    else:
        raise RuntimeError("could not bracket the target photon number")
    rabi = brentq(lambda r: mean_n(r) - target_n, lo, hi, xtol=xtol * lo, rtol=1e-4)
    m = model.with_rabi(rabi)
    return rabi, periodic_steady_state(m, PropagatorTable.build(m, steps))


def crosscheck(n_max: int, emitters: EmitterConfig, loss_rate: float, U: float = 1.0,
               lamb: bool = True) -> Dict[str, float]:
    """Photon number of the joint steady state against the photon-only Redfield solve."""
    from .fock import build_basis
    from .hamiltonian import BoseHubbardParams, assemble_hamiltonian, diagonalize
    from .liouvillian import DissipationParams, build_jump_operators, steady_state_exact

    model = MicroscopicModel(n_max, emitters, loss_rate, U)
    joint = model.statistics(static_steady_state(model))

    basis = build_basis(1, n_max, "open")
    params = BoseHubbardParams(0.0, U, 0.0, 1, "open")
    es = diagonalize(assemble_hamiltonian(params, basis), basis, params)
    diss = DissipationParams(loss_rate, emitters.redfield_spectrum(lamb))
    rho = steady_state_exact(build_jump_operators(es, diss))
    p = rho.sector_populations()
    n = np.arange(len(p))
    mean = float(p @ n)
    return {"n_joint": joint["n"], "n_redfield": mean,
            "delta_n_joint": joint["delta_n"],
            "delta_n_redfield": math.sqrt(max(float(p @ n ** 2) - mean ** 2, 0.0)) / mean,
            "excited": joint["excited"],
            "relative_error": abs(joint["n"] - mean) / mean}
