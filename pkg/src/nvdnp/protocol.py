"""Background suppression by reversing the polarization sign.

Hyperpolarized diamond 13C flips sign with the MW sweep direction while the
thermal background from the surrounding compound does not, so half the
difference of an up/down pair isolates the diamond and half the sum the
background.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import trapezoid

from .errors import DomainError

LABELS = ("up", "down", "diamond", "background", "")

# defaults for the 13C count ratio
MOLAR_MASS_COMPOUND = 299.29  # g/mol
MOLAR_MASS_DIAMOND = 12.01  # g/mol
DIAMOND_DENSITY = 3.52  # g/cm^3
CRYSTAL_EDGE_CM = 87e-4  # truncated-octahedron edge, 87 um
NATURAL_ABUNDANCE_PCT = 1.1


@dataclass(frozen=True)
class NmrSpectrum:
    grid: NDArray[np.float64]
    values: NDArray[np.float64]
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if g.ndim != 1 or g.shape != v.shape or len(g) < 2:
            raise DomainError("grid and values must be 1-D arrays of equal length >= 2")
        if np.any(np.diff(g) <= 0):
            raise DomainError("grid must be strictly ascending")
        if not np.all(np.isfinite(v)):
            raise DomainError("spectrum values must be finite")
        if self.label not in LABELS:
            raise DomainError(f"unknown label {self.label!r}")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    def peak(self) -> float:
        """Largest absolute value."""
        return float(np.max(np.abs(self.values)))


def synth_spectrum(
    peaks: Sequence[tuple[float, float, float]], grid: ArrayLike, label: str = ""
) -> NmrSpectrum:
    """Sum of Lorentzian lines ``(center, fwhm, height)`` sampled on ``grid``."""
    g = np.asarray(grid, dtype=float)
    out = np.zeros_like(g)
    for center, width, amp in peaks:
        if not width > 0:
            raise DomainError("line widths must be positive")
        hw2 = 0.25 * width * width
        out += amp * hw2 / ((g - center) ** 2 + hw2)
    return NmrSpectrum(g, out, label)


def _check_pair(up: NmrSpectrum, down: NmrSpectrum) -> None:
    if up.grid.shape != down.grid.shape or not np.array_equal(up.grid, down.grid):
        raise DomainError("up and down spectra must share the same grid")


def band_amplitude(s: NmrSpectrum, band: tuple[float, float]) -> float:
    """Trapezoid integral of ``s`` over the closed interval ``band``."""
    lo, hi = sorted(band)
    m = (s.grid >= lo) & (s.grid <= hi)
    if m.sum() < 2:
        raise DomainError(f"band [{lo}, {hi}] covers fewer than two grid points")
    return float(trapezoid(s.values[m], s.grid[m]))


def inversion_fidelity(up: NmrSpectrum, down: NmrSpectrum, band: tuple[float, float]) -> float:
    """``1 - |a_up + a_down| / (|a_up| + |a_down|)`` on band-integrated amplitudes.

    1 for exact inversion, 0 when the signal does not change sign.
    """
    _check_pair(up, down)
    a_up, a_dn = band_amplitude(up, band), band_amplitude(down, band)
    den = abs(a_up) + abs(a_dn)
    if den == 0:
        raise DomainError("both spectra have zero amplitude in the band")
    return 1.0 - abs(a_up + a_dn) / den


def background_suppress(up: NmrSpectrum, down: NmrSpectrum) -> tuple[NmrSpectrum, NmrSpectrum]:
    """Split a sweep pair into ``(diamond, background) = ((u-d)/2, (u+d)/2)``."""
    _check_pair(up, down)
    return (
        NmrSpectrum(up.grid, 0.5 * (up.values - down.values), "diamond"),
        NmrSpectrum(up.grid, 0.5 * (up.values + down.values), "background"),
    )


class Suppression(NamedTuple):
    factor: float
    exact_cancel: bool


def suppression_factor(raw_background_peak: float, residual_background_peak: float) -> Suppression:
    """Ratio of the raw to the residual background peak.

    A residual of exactly zero returns ``inf`` with ``exact_cancel`` set.
    """
    raw, res = abs(raw_background_peak), abs(residual_background_peak)
    if raw == 0:
        raise DomainError("raw background peak must be non-zero")
    if res == 0:
        return Suppression(math.inf, True)
    return Suppression(raw / res, False)


@dataclass(frozen=True)
class SuppressionReport:
    fidelity: float | None
    suppression_factor: float
    background_ratio: float | None = None
    exact_cancel: bool = False

    def __post_init__(self):
        if self.fidelity is not None and not 0.0 <= self.fidelity <= 1.0:
            raise DomainError("fidelity must lie in [0, 1]")
        if not self.suppression_factor >= 1.0 - 1e-12 and not self.exact_cancel:
            raise DomainError("suppression factor below 1: subtraction amplified the background")


def background_ratio(
    m_f: float,
    n: float,
    a: float = CRYSTAL_EDGE_CM,
    molar_f: float = MOLAR_MASS_COMPOUND,
    molar_d: float = MOLAR_MASS_DIAMOND,
    rho_d: float = DIAMOND_DENSITY,
    abundance_pct: float = NATURAL_ABUNDANCE_PCT,
) -> float:
    """13C nuclei outside the diamond per 13C inside it.

    ``m_f`` grams of a compound (molar mass ``molar_f``, one 13C label per
    molecule) around ``n`` truncated-octahedral crystallites of edge ``a``
    in cm (volume ``8*sqrt(2)*a^3``), whose carbon holds ``abundance_pct``
    percent 13C.
    """
    vals = (m_f, n, a, molar_f, molar_d, rho_d, abundance_pct)
    if any(not v > 0 for v in vals):
        raise DomainError("all inputs must be positive")
    volume = 8 * math.sqrt(2) * a**3
    return (m_f * molar_d) / (volume * rho_d * n * molar_f) * (100.0 / abundance_pct)


# -- fixtures -----------------------------------------------------------------


def sweep_pair(
    diamond: NmrSpectrum,
    background: NmrSpectrum,
    background_error: float = 0.0,
    inversion_gain: float = 1.0,
    noise: float = 0.0,
    seed: int | None = None,
) -> tuple[NmrSpectrum, NmrSpectrum]:
    """Synthetic up/down pair from separate diamond and background parts.

    ``up = d + b`` and ``down = -g*d + (1 - e)*b``: ``g`` is the diamond
    inversion gain and ``e`` the fractional change of the background between
    the two sweeps, which is what leaks into the diamond channel
    (``e*b/2``). Optional white noise of standard deviation ``noise``.
    """
    if diamond.grid.shape != background.grid.shape or not np.array_equal(diamond.grid, background.grid):
        raise DomainError("diamond and background must share the same grid")
    up = diamond.values + background.values
    down = -inversion_gain * diamond.values + (1.0 - background_error) * background.values
    if noise > 0:
        rng = np.random.default_rng(seed)
        up = up + noise * rng.normal(size=up.shape)
        down = down + noise * rng.normal(size=down.shape)
    return NmrSpectrum(diamond.grid, up, "up"), NmrSpectrum(diamond.grid, down, "down")


def suppression_report(
    up: NmrSpectrum,
    down: NmrSpectrum,
    band: tuple[float, float] | None = None,
    background_band: tuple[float, float] | None = None,
    diamond_reference: NmrSpectrum | None = None,
) -> tuple[NmrSpectrum, NmrSpectrum, SuppressionReport]:
    """Subtract a sweep pair and score it.

    The fidelity is measured on ``band``, which should hold diamond signal
    only (``None`` skips it: under a dominant background the pair cannot
    tell inversion errors from background drift). The residual background is either
    ``diamond - diamond_reference`` (fixtures, where the true diamond line is
    known) or, for measured data, the diamond channel inside
    ``background_band``, a region holding background only. The raw peak is
    the largest magnitude of the unsubtracted ``up`` spectrum over the same
    region.
    """
    diamond, background = background_suppress(up, down)
    fid = None if band is None else min(max(inversion_fidelity(up, down, band), 0.0), 1.0)
    if diamond_reference is not None:
        _check_pair(diamond, diamond_reference)
        raw = up.peak()
        residual = float(np.max(np.abs(diamond.values - diamond_reference.values)))
    elif background_band is not None:
        lo, hi = sorted(background_band)
        m = (up.grid >= lo) & (up.grid <= hi)
        if not m.any():
            raise DomainError("background band holds no grid points")
        raw = float(np.max(np.abs(up.values[m])))
        residual = float(np.max(np.abs(diamond.values[m])))
    else:
        raise DomainError("need a background band or a diamond reference")
    sf = suppression_factor(raw, residual)
    report = SuppressionReport(fid, sf.factor, exact_cancel=sf.exact_cancel)
    return diamond, background, report
