"""Parameter sweeps over (mu/U, J/U) and table output.

Frame convention: the cavity frequency is pinned at zero and the chemical
potential moves the upper emission edge, ``omega_plus = mu``, with the lower
edge riding at ``omega_plus - emission_span``.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .fock import build_basis
from .hamiltonian import (BoseHubbardParams, EigenSystem, assemble_hamiltonian, diagonalize,
                          grand_canonical_ground_state, lowest_energies, lowest_states)
from .liouvillian import (DENSE_LIMIT, ITERATIVE_LIMIT, DegeneracyWarning, DissipationParams,
                          EnergyWindow, build_jump_operators, secular_rates, steady_state_exact,
                          steady_state_secular, transition_strengths)
from .observables import CSV_COLUMNS, compute_report, ground_state_report
from .presets import get_preset
from .spectra import SquareSpectrum

logger = logging.getLogger(__name__)

SOLVERS = ("secular", "exact", "exact-dense", "exact-iterative")
TABLE_COLUMNS = CSV_COLUMNS + ("status",)
_RATE_KEYS = ("loss_rate", "emission_rate", "emission_width", "emission_span",
              "loss_spectrum_rate", "loss_spectrum_width", "loss_span")


def _grid(spec) -> np.ndarray:
    start, stop, num = spec
    num = int(num)
    if num < 1:
        raise ValueError("grid needs at least one point")
    return np.linspace(float(start), float(stop), num)


@dataclass(frozen=True)
class SweepConfig:
    """Model, reservoir, solver and grid of a sweep; frequencies in units of U.

    ``mu`` and ``J`` are ``(start, stop, num)`` triples over inclusive ranges.
    ``window`` is the secular truncation width (units of U); ``None`` keeps
    every eigenstate.
    """

    n_sites: int = 7
    n_max: int = 3
    boundary: str = "periodic"
    loss_rate: float = 1e-11
    emission_rate: float = 1e-8
    emission_width: float = 1e-6
    emission_span: float = 40.0
    loss_spectrum_rate: Optional[float] = None
    loss_spectrum_width: Optional[float] = None
    loss_span: Optional[float] = None
    loss_anchor: str = "plus"
    layout: Optional[Tuple[int, ...]] = None
    rescale_layout: bool = True
    solver: str = "secular"
    window: Optional[float] = 4.0
    lamb: bool = True
    mu: Tuple[float, float, int] = (0.0, 2.5, 30)
    J: Tuple[float, float, int] = (0.0, 0.12, 30)
    out: Optional[str] = None
    workers: int = 0

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.loss_anchor not in ("plus", "cavity"):
            raise ValueError("loss_anchor must be 'plus' or 'cavity'")
        object.__setattr__(self, "mu", tuple(self.mu))
        object.__setattr__(self, "J", tuple(self.J))
        if self.layout is not None:
            object.__setattr__(self, "layout", tuple(int(s) for s in self.layout))
        _grid(self.mu), _grid(self.J)
        dim = (self.n_max + 1) ** self.n_sites
        if self.solver == "exact-dense" and dim > DENSE_LIMIT:
            raise ValueError(f"exact-dense solver needs dimension <= {DENSE_LIMIT}, got {dim}")
        if self.solver in ("exact", "exact-iterative") and dim > ITERATIVE_LIMIT:
            raise ValueError(f"exact solvers need dimension <= {ITERATIVE_LIMIT}, got {dim}")

    @classmethod
    def from_dict(cls, data: dict) -> "SweepConfig":
        """Build from a JSON-style mapping, converting ``units = "raw"`` rates to units of U."""
        data = dict(data)
        units = data.pop("units", "U")
        U = float(data.pop("U", 1.0))
        if units == "raw":
            for key in _RATE_KEYS:
                if data.get(key) is not None:
                    data[key] = float(data[key]) / U
        elif units != "U":
            raise ValueError(f"units must be 'U' or 'raw', got {units!r}")
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            logger.debug("ignoring config keys %s", sorted(extra))
        return cls(**{k: v for k, v in data.items() if k in known})

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "SweepConfig":
        data = get_preset(name)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data)

    @property
    def mu_grid(self) -> np.ndarray:
        return _grid(self.mu)

    @property
    def J_grid(self) -> np.ndarray:
        return _grid(self.J)

    def dissipation(self, mu: float) -> DissipationParams:
        """Reservoirs for chemical potential ``mu`` (cavity at zero, ``omega_plus = mu``)."""
        emission = SquareSpectrum(mu - self.emission_span, mu, self.emission_width,
                                  self.emission_rate, "emission", self.lamb)
        loss = None
        if self.loss_spectrum_rate:
            width = self.loss_spectrum_width or self.emission_width
            span = self.loss_span if self.loss_span is not None else self.emission_span
            top = mu + span if self.loss_anchor == "plus" else span
            loss = SquareSpectrum(mu, top, width, self.loss_spectrum_rate, "loss", self.lamb)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegeneracyWarning)
            return DissipationParams(self.loss_rate, emission, loss, self.layout, self.rescale_layout)

    def symmetric(self) -> bool:
        """Whether dissipators share the lattice symmetries of the Hamiltonian."""
        return self.boundary == "periodic" and (self.layout is None
                                                or len(self.layout) == self.n_sites)


@lru_cache(maxsize=4)
def _basis(n_sites, n_max, boundary):
    return build_basis(n_sites, n_max, boundary)


def _empty_row(mu, J, status):
    row = {c: math.nan for c in CSV_COLUMNS}
    row.update(mu_over_U=float(mu), J_over_U=float(J), status=status)
    return row


def _window_cutoffs(blocks, mus, cut):
    e0 = lowest_energies(blocks)
    ns = np.arange(len(blocks))
    best = np.full(len(blocks), -np.inf)
    for mu in mus:
        g = np.min(e0 - mu * ns)
        best = np.maximum(best, g + mu * ns)
    return best + cut + 1e-9 * max(1.0, np.abs(best).max())


def _solve_column(configs: Sequence[SweepConfig], J: float, mus: Sequence[float]):
    """All grid points of one ``J`` column for configs sharing model and grid."""
    base = configs[0]
    basis = _basis(base.n_sites, base.n_max, base.boundary)
    params = BoseHubbardParams(0.0, 1.0, float(J), base.n_sites, base.boundary)
    blocks = assemble_hamiltonian(params, basis)
    windows = [c.window for c in configs if c.solver == "secular" and c.window is not None]
    t0 = time.perf_counter()
    if windows and len(windows) == len(configs):
        es = diagonalize(blocks, basis, params, _window_cutoffs(blocks, mus, max(windows)))
    else:
        es = diagonalize(blocks, basis, params)
    logger.info("J=%.4g: diagonalized (%d of %d states) in %.1fs", J, es.dim, basis.dim,
                time.perf_counter() - t0)
    strengths = {}
    tables = []
    for cfg in configs:
        rows = []
        quiet = cfg.symmetric() or J == 0
        for mu in mus:
            try:
                with warnings.catch_warnings():
                    if quiet:
                        warnings.simplefilter("ignore", DegeneracyWarning)
                    rows.append(_solve_point(cfg, es, float(mu), strengths))
            except Exception as exc:  # recorded per row, the sweep goes on
                logger.warning("mu=%.4g J=%.4g failed: %s", mu, J, exc)
                rows.append(_empty_row(mu, J, f"error: {type(exc).__name__}: {exc}"))
        tables.append(rows)
    return tables


def _solve_point(cfg: SweepConfig, es: EigenSystem, mu: float, cache: dict) -> dict:
    diss = cfg.dissipation(mu)
    gs = grand_canonical_ground_state(es, mu)
    if cfg.solver == "secular":
        key = diss.emitting_sites(cfg.n_sites)
        if key not in cache:
            cache[key] = transition_strengths(es, key)
        window = EnergyWindow(mu, cfg.window) if cfg.window is not None else None
        rho = steady_state_secular(secular_rates(cache[key], diss, window))
    else:
        method = {"exact": "auto", "exact-dense": "dense", "exact-iterative": "iterative"}[cfg.solver]
        rho = steady_state_exact(build_jump_operators(es, diss), method)
    rep = compute_report(rho, gs)
    row = rep.to_row(mu, es.params.J)
    row["status"] = "ok"
    return row


def _column_task(args):
    configs, J, mus = args
    return _solve_column(configs, J, mus)


def _check_compatible(configs: Sequence[SweepConfig]):
    keys = ("n_sites", "n_max", "boundary", "mu", "J")
    first = configs[0]
    for c in configs[1:]:
        for k in keys:
            if getattr(c, k) != getattr(first, k):
                raise ValueError(f"configs differ in {k}; they cannot share a sweep")


def run_sweeps(configs: Sequence[SweepConfig], workers: Optional[int] = None) -> List[List[dict]]:
    """Run several configs that share model and grid, diagonalizing each ``J`` once.

    Rows come back in grid order (``J`` outer, ``mu`` inner) whatever the
    number of workers.
    """
    configs = list(configs)
    _check_compatible(configs)
    mus = configs[0].mu_grid
    Js = configs[0].J_grid
    if workers is None:
        workers = configs[0].workers
    if not workers:
        workers = os.cpu_count() or 1
    tasks = [(configs, float(J), mus) for J in Js]
    if workers == 1 or len(tasks) == 1:
        results = [_column_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_column_task, tasks))
    return [[row for col in results for row in col[k]] for k in range(len(configs))]


def run_sweep(config: SweepConfig, workers: Optional[int] = None) -> List[dict]:
    """One steady-state solve per grid point; failures are recorded per row."""
    rows = run_sweeps([config], workers)[0]
    if config.out:
        write_table(rows, config.out)
    return rows


def steady_point(config: SweepConfig, mu: float, J: float) -> dict:
    """Single grid point, same path as the sweep."""
    cfg = replace(config, mu=(mu, mu, 1), J=(J, J, 1))
    return run_sweeps([cfg], workers=1)[0][0]


def equilibrium_reference(config: SweepConfig) -> List[dict]:
    """Grand-canonical ground-state observables on the sweep grid."""
    basis = _basis(config.n_sites, config.n_max, config.boundary)
    rows = []
    for J in config.J_grid:
        params = BoseHubbardParams(0.0, 1.0, float(J), config.n_sites, config.boundary)
        es = lowest_states(assemble_hamiltonian(params, basis), basis, params)
        for mu in config.mu_grid:
            gs = grand_canonical_ground_state(es, float(mu))
            row = ground_state_report(es, gs).to_row(float(mu), float(J))
            row["status"] = "degenerate" if gs.degenerate else "ok"
            rows.append(row)
    return rows


def single_cavity_scan(config: SweepConfig, widths: Iterable[float]) -> List[dict]:
    """Photon number against mu for a single cavity, one block of rows per edge width."""
    if config.n_sites != 1:
        raise ValueError("single-cavity scan needs n_sites = 1")
    rows = []
    for w in widths:
        cfg = replace(config, emission_width=float(w), J=(0.0, 0.0, 1))
        for row in run_sweeps([cfg], workers=1)[0]:
            row["emission_width"] = float(w)
            rows.append(row)
    return rows


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return "nan" if math.isnan(value) else repr(float(value))
    return str(value)


def format_table(rows: Sequence[dict], columns: Sequence[str] = TABLE_COLUMNS,
                 header: Optional[str] = None) -> str:
    buf = io.StringIO()
    if header is None:
        header = f"# squarepump table written {time.strftime('%Y-%m-%dT%H:%M:%S')}"
    buf.write(header + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    extra = [k for k in (rows[0] if rows else {}) if k not in columns]
    cols = list(columns) + extra
    writer.writerow(cols)
    for r in rows:
        writer.writerow([_fmt(r.get(c)) for c in cols])
    return buf.getvalue()


def write_table(rows: Sequence[dict], path: str, columns: Sequence[str] = TABLE_COLUMNS):
    text = format_table(rows, columns)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write output table to {path!r}: {exc}") from exc


def all_ok(rows: Sequence[dict]) -> bool:
    return all(r.get("status") in ("ok", "degenerate") for r in rows)


MODULATED_COLUMNS = ("target_n", "speed", "rabi", "mean_n", "delta_n", "miss", "variance",
                     "peak_to_peak", "t_eff", "status")


def _modulated_setup(data: dict):
    """Frequency unit of a modulation preset and a private copy of it."""
    data = dict(data)
    raw = data.get("units", "U") == "raw"
    U = float(data.get("U", 1.0)) if raw else 1.0
    return U, data


def modulated_scan(data: dict, speeds: Optional[Sequence[float]] = None,
                   targets: Optional[Sequence[dict]] = None, trajectory: bool = False,
                   samples: int = 400) -> Tuple[List[dict], List[dict]]:
    """Calibrated periodic steady states of a single swept emitter.

    ``data`` follows the ``fig7`` preset layout.  Speeds and rates use the
    preset units; ``mu`` and ``span`` of each target are in units of U.
    Returns one summary row per (target, speed) and, with ``trajectory``,
    time-series rows of the transient from the photon vacuum (times in the
    preset units).
    """
    from .microscopic import (EmitterConfig, ModulationSpec, MicroscopicModel, PropagatorTable,
                              calibrate_rabi, evolve_and_record, periodic_steady_state)
    from .observables import effective_temperature

    U, data = _modulated_setup(data)
    speeds = list(speeds if speeds is not None else data["sweep_speeds"])
    targets = list(targets if targets is not None else data["targets"])
    pump, loss = float(data["pump_rate"]) / U, float(data["loss_rate"]) / U
    n_max = int(data.get("n_max", 5))
    summary, series = [], []
    for tgt in targets:
        for v in speeds:
            row = {"target_n": int(tgt["n"]), "speed": float(v)}
            try:
                spec = ModulationSpec(tgt["mu"] - tgt["span"], tgt["mu"], float(v) / U ** 2)
                guess = float(tgt.get("rabi", data.get("rabi", 1.0))) / U
                model = MicroscopicModel(n_max, EmitterConfig((tgt["mu"],), guess, pump, spec), loss)
                if "rabi" in tgt or "rabi" in data:
                    rabi = guess
                    res = periodic_steady_state(model)
                else:
                    rabi, res = calibrate_rabi(model, float(tgt["n"]), bracket=(0.2 * pump, 2.0 * pump))
                    model = model.with_rabi(rabi)
                dn = res["mean_delta_n"]
                row.update(rabi=rabi * U, mean_n=res["mean_n"], delta_n=dn, miss=res["miss"],
                           variance=res["mean_var"], peak_to_peak=res["peak_to_peak"],
                           t_eff=effective_temperature(dn) if 0 < dn < math.sqrt(2) else math.nan,
                           status="ok")
                if trajectory:
                    horizon = float(data.get("periods", 40)) * spec.period
                    rec = evolve_and_record(model, model.initial_state(0), horizon, samples=samples,
                                            table=PropagatorTable.build(model))
                    for t, n, d in zip(rec["t"], rec["n"], rec["delta_n"]):
                        series.append({"target_n": row["target_n"], "speed": float(v),
                                       "rabi": rabi * U, "t": t / U, "n": n, "delta_n": d})
            except Exception as exc:
                logger.warning("target %s speed %s failed: %s", tgt, v, exc)
                row["status"] = f"error: {type(exc).__name__}: {exc}"
            summary.append(row)
    return summary, series
