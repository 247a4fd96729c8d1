"""Closed-form reservoir spectra, Lamb shifts and memory kernels.

Conventions: for a reservoir spectrum ``S(w)`` the half-sided transform of
the memory kernel is ``Gamma(w) = S(w)/2 - i*delta(w)`` with the Lamb shift
``delta(w) = (1/2pi) P int S(w')/(w' - w) dw'``.  The kernel itself is
``K(tau) = (1/2pi) int S(w) exp(-i w tau) dw`` for ``tau > 0``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

__all__ = [
    "SquareSpectrum",
    "LorentzianSpectrum",
    "FlatSpectrum",
    "SpectrumSum",
    "time_averaged_spectrum",
]

#: below this value of |tau| * (frequency scale) the kernel uses its Taylor series
SMALL_TAU = 1e-6


class _Spectrum:
    """Shared interface.  Subclasses define ``rate``, ``value`` and ``lamb_shift``."""

    rate: float
    lamb: bool = True

    def shape(self, omega):
        """Dimensionless profile ``S(w) / rate``."""
        return self.value(omega) / self.rate

    def complex_rate(self, omega):
        """``Gamma(w) = S/2 - i*delta``; the shift is dropped when ``lamb`` is off."""
        out = 0.5 * np.asarray(self.value(omega), dtype=complex)
        if self.lamb:
            out = out - 1j * self.lamb_shift(omega)
        return out

    def modified_factor(self, omega):
        """Factor ``2 Gamma(w) / rate`` that turns a bare jump element into a modified one."""
        return 2.0 * self.complex_rate(omega) / self.rate

    def without_lamb_shift(self):
        return _replace(self, lamb=False)

    def shifted(self, delta: float):
        """Same spectrum translated by ``delta`` in frequency."""
        raise NotImplementedError


def _replace(obj, **changes):
    from dataclasses import replace
    return replace(obj, **changes)


@dataclass(frozen=True)
class SquareSpectrum(_Spectrum):
    """Flat window ``[omega_lo, omega_hi]`` with Lorentzian-smoothed edges of width ``width``.

    ``rate`` is the value at the window midpoint.  ``kind`` is a label
    (``"emission"`` or ``"loss"``) and does not change the formulas.
    """

    omega_lo: float
    omega_hi: float
    width: float
    rate: float
    kind: str = "emission"
    lamb: bool = True

    def __post_init__(self):
        if not self.omega_lo < self.omega_hi:
            raise ValueError(f"need omega_lo < omega_hi, got [{self.omega_lo}, {self.omega_hi}]")
        if not self.width > 0:
            raise ValueError("edge width must be positive")
        if self.rate < 0:
            raise ValueError("rate must be non-negative")
        if self.kind not in ("emission", "loss"):
            raise ValueError(f"unknown square spectrum kind {self.kind!r}")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.omega_lo + self.omega_hi)

    @property
    def _norm(self) -> float:
        # arctan((hi - lo) / width); A(midpoint) = 2 * _norm
        return float(np.arctan((self.omega_hi - self.omega_lo) / self.width))

    def _arc(self, omega):
        omega = np.asarray(omega, dtype=float)
        half = 0.5 * self.width
        return np.arctan((self.omega_hi - omega) / half) - np.arctan((self.omega_lo - omega) / half)

    def shape(self, omega):
        return self._arc(omega) / (2.0 * self._norm)

    def value(self, omega):
        return self.rate * self.shape(omega)

    def lamb_shift(self, omega):
        omega = np.asarray(omega, dtype=float)
        h2 = (0.5 * self.width) ** 2
        ratio = ((self.omega_hi - omega) ** 2 + h2) / ((self.omega_lo - omega) ** 2 + h2)
        return 0.5 * self.rate * np.log(ratio) / (4.0 * self._norm)

    def memory_kernel(self, tau):
        """Emission memory kernel for ``tau > 0``; a series is used for tiny ``tau``."""
        tau = np.asarray(tau, dtype=float)
        if np.any(tau <= 0):
            raise ValueError("the memory kernel is causal: tau must be > 0")
        a = -1j * self.omega_hi - 0.5 * self.width
        b = -1j * self.omega_lo - 0.5 * self.width
        pref = 0.25j * self.rate / self._norm
        scale = max(abs(a), abs(b), self.omega_hi - self.omega_lo)
        small = tau * scale < SMALL_TAU
        with np.errstate(invalid="ignore", divide="ignore"):
            closed = (np.exp(a * tau) - np.exp(b * tau)) / tau
        series = (a - b) + (a * a - b * b) * tau / 2 + (a ** 3 - b ** 3) * tau ** 2 / 6
        return pref * np.where(small, series, closed)

    def shifted(self, delta: float) -> "SquareSpectrum":
        return _replace(self, omega_lo=self.omega_lo + delta, omega_hi=self.omega_hi + delta)


@dataclass(frozen=True)
class LorentzianSpectrum(_Spectrum):
    """Single pumped two-level emitter: Lorentzian of FWHM ``linewidth`` and peak ``rate``."""

    omega_at: float
    linewidth: float
    rate: float
    lamb: bool = True

    def __post_init__(self):
        if not self.linewidth > 0:
            raise ValueError("linewidth must be positive")

    @classmethod
    def from_emitter(cls, omega_at: float, rabi: float, pump: float, lamb: bool = True):
        """Peak rate ``4 rabi**2 / pump`` for an emitter of Rabi frequency ``rabi``."""
        return cls(omega_at, pump, 4.0 * rabi ** 2 / pump, lamb)

    def _den(self, omega):
        return (np.asarray(omega, dtype=float) - self.omega_at) ** 2 + (0.5 * self.linewidth) ** 2

    def value(self, omega):
        return self.rate * (0.5 * self.linewidth) ** 2 / self._den(omega)

    def lamb_shift(self, omega):
        detuning = np.asarray(omega, dtype=float) - self.omega_at
        return -0.25 * self.rate * self.linewidth * detuning / self._den(omega)

    def memory_kernel(self, tau):
        tau = np.asarray(tau, dtype=float)
        if np.any(tau <= 0):
            raise ValueError("the memory kernel is causal: tau must be > 0")
        return 0.25 * self.rate * self.linewidth * np.exp((-1j * self.omega_at - 0.5 * self.linewidth) * tau)

    def shifted(self, delta: float) -> "LorentzianSpectrum":
        return _replace(self, omega_at=self.omega_at + delta)


@dataclass(frozen=True)
class FlatSpectrum(_Spectrum):
    """Frequency-independent (Markovian) spectrum: ``s = 1`` and no Lamb shift."""

    rate: float
    lamb: bool = False

    def value(self, omega):
        return np.full(np.shape(omega), float(self.rate))

    def shape(self, omega):
        return np.ones(np.shape(omega))

    def modified_factor(self, omega):
        # well defined for rate = 0 too
        return np.ones(np.shape(omega), dtype=complex)

    def lamb_shift(self, omega):
        return np.zeros(np.shape(omega))

    def memory_kernel(self, tau):
        raise ValueError("a flat spectrum has a delta-correlated kernel")

    def shifted(self, delta: float) -> "FlatSpectrum":
        return self


@dataclass(frozen=True)
class SpectrumSum(_Spectrum):
    """Incoherent sum of spectra, e.g. several independent emitters on one site.

    ``rate`` only sets the normalization of modified jump elements; it
    defaults to the sum of the component rates.
    """

    components: Tuple[_Spectrum, ...]
    rate: float = None
    lamb: bool = True

    def __post_init__(self):
        if not self.components:
            raise ValueError("need at least one component")
        object.__setattr__(self, "components", tuple(self.components))
        if self.rate is None:
            object.__setattr__(self, "rate", float(sum(c.rate for c in self.components)))

    def value(self, omega):
        return sum(c.value(omega) for c in self.components)

    def lamb_shift(self, omega):
        return sum(c.lamb_shift(omega) for c in self.components)

    def memory_kernel(self, tau):
        return sum(c.memory_kernel(tau) for c in self.components)

    def shifted(self, delta: float) -> "SpectrumSum":
        return SpectrumSum(tuple(c.shifted(delta) for c in self.components), self.rate, self.lamb)


def time_averaged_spectrum(spec: LorentzianSpectrum, omega_lo: float, omega_hi: float) -> SquareSpectrum:
    """Average of a Lorentzian whose centre sweeps uniformly across ``[omega_lo, omega_hi]``.

    The average is exactly a square spectrum with edge width equal to the
    Lorentzian linewidth and midpoint rate
    ``spec.rate * (linewidth / 2) * A(mid) / (omega_hi - omega_lo)``.
    """
    if not isinstance(spec, LorentzianSpectrum):
        raise TypeError("time averaging is defined for a Lorentzian emitter")
    if not omega_lo < omega_hi:
        raise ValueError("empty sweep interval")
    arc_mid = 2.0 * np.arctan((omega_hi - omega_lo) / spec.linewidth)
    rate = spec.rate * 0.5 * spec.linewidth * arc_mid / (omega_hi - omega_lo)
    return SquareSpectrum(omega_lo, omega_hi, spec.linewidth, rate, "emission", spec.lamb)


def lamb_shift_bound(spec: _Spectrum, frequencies: Sequence[float]) -> float:
    """Largest ``|delta(w)|`` over the given transition frequencies."""
    return float(np.max(np.abs(spec.lamb_shift(np.asarray(frequencies)))))
