"""Device calibration arithmetic: MW Rabi estimate, Hall probes, coil, sweep band."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.constants import mu_0

from .errors import DomainError
from .powder import DEFAULT_BROADENING, exact_manifold_edges, manifold_edges
from .spinsys import PhysicalConstants

HALL_SENSITIVITY = 65.0  # mV/mT
HALL_Z_OFFSET = 2.04  # mT, z-probe standoff overestimate
# coil calibration points, (A, mT)
COIL_POINTS = ((1.0, 7.02), (2.0, 14.27))
COIL_CONSTANT = 0.5 * sum(b / i for i, b in COIL_POINTS)  # mT/A
MAX_PLANNING_FIELD = 100.0  # mT
DEFAULT_MARGIN = 2 * DEFAULT_BROADENING  # MHz


def rabi_from_power(
    power_w: float, freq_ghz: float, radius_mm: float, gamma_e: float = PhysicalConstants().gamma_e
) -> tuple[float, float]:
    """Lumped estimate of the MW field and Rabi frequency in a loop resonator.

    The energy per cycle ``P/nu`` fills a sphere of radius ``R`` at density
    ``B^2/(2 mu0)``. Returns ``(B in mT, Rabi in kHz)`` with the Rabi frequency
    ``gamma_e B / (4 pi)``: the rotating half of a linearly polarized field,
    expressed in the angular units the quoted 430 kHz is reproduced from.
    """
    if not (power_w > 0 and freq_ghz > 0 and radius_mm > 0):
        raise DomainError("power, frequency and radius must be positive")
    energy = power_w / (freq_ghz * 1e9)
    volume = 4.0 / 3.0 * math.pi * (radius_mm * 1e-3) ** 3
    b_mt = math.sqrt(2 * mu_0 * energy / volume) * 1e3
    return b_mt, gamma_e * b_mt / (4 * math.pi) * 1e3


@dataclass(frozen=True)
class VectorField:
    bx: float
    by: float
    bz: float
    correction: float = 0.0  # mT, subtracted from the magnitude for planning

    @property
    def magnitude(self) -> float:
        return math.sqrt(self.bx**2 + self.by**2 + self.bz**2)

    @property
    def planning_magnitude(self) -> float:
        return max(self.magnitude - self.correction, 0.0)


def hall_to_field(
    readings: Sequence[float], sensitivity: float = HALL_SENSITIVITY, z_offset_correction: float = HALL_Z_OFFSET
) -> VectorField:
    """Three Hall voltages (V) to a field vector (mT)."""
    if not sensitivity > 0:
        raise DomainError("sensitivity must be positive")
    v = np.asarray(readings, dtype=float)
    if v.shape != (3,):
        raise DomainError("need exactly three readings")
    bx, by, bz = v * 1e3 / sensitivity
    return VectorField(float(bx), float(by), float(bz), z_offset_correction)


def helmholtz_field(current: float, coil_constant: float = COIL_CONSTANT) -> float:
    return current * coil_constant


def fit_coil_constant(points: Sequence[tuple[float, float]] = COIL_POINTS) -> float:
    """Least-squares slope through the origin of ``(current, field)`` pairs."""
    p = np.asarray(points, dtype=float)
    den = float(p[:, 0] @ p[:, 0])
    if den == 0:
        raise DomainError("need a non-zero current")
    return float(p[:, 0] @ p[:, 1]) / den


@dataclass(frozen=True)
class SweepBandPlan:
    manifold: str
    f_min: float
    f_max: float
    margin: float
    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.f_min < self.f_max:
            raise DomainError("empty sweep band")

    @property
    def width(self) -> float:
        """Total swept span, gaps excluded."""
        return sum(hi - lo for lo, hi in self.intervals)


def _union(iv):
    out = []
    for lo, hi in sorted(iv):
        if out and lo <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return tuple(out)


def plan_sweep_band(
    c: PhysicalConstants,
    field: VectorField | float,
    manifold: str = "+1",
    margin: float = DEFAULT_MARGIN,
    edges: str = "auto",
) -> SweepBandPlan:
    """MW band covering a manifold's powder pattern at the measured field.

    ``"both"`` returns the union of the two single-manifold bands; they stay
    separate intervals when they do not overlap.

    ``edges="closed"`` uses the closed-form branch ranges, ``"exact"`` the
    numerical extrema over orientation. ``"auto"`` (default) takes the closed
    forms while they are exact (``gamma_e*B <= delta/3``) and the numerical
    extrema above, where the closed ``+1`` maximum falls short and, past
    about 68 mT, the closed range is empty.
    """
    b = field.planning_magnitude if isinstance(field, VectorField) else abs(float(field))
    if b > MAX_PLANNING_FIELD:
        raise DomainError(f"|B| = {b:g} mT beyond the supported {MAX_PLANNING_FIELD:g} mT")
    if margin < 0:
        raise DomainError("margin must be non-negative")
    if edges == "auto":
        edges = "closed" if c.gamma_e * b <= c.delta / 3 else "exact"
    if edges == "closed":
        ranges = manifold_edges(c, b)
        if ranges["+1"][0] > ranges["+1"][1]:
            raise DomainError(f"closed-form +1 range is empty at {b:g} mT; use exact edges")
    elif edges == "exact":
        ranges = exact_manifold_edges(c, b)
    else:
        raise DomainError(f"edges must be 'auto', 'closed' or 'exact', got {edges!r}")
    keys = {"+1": ("+1",), "-1": ("-1",), "both": ("-1", "+1")}.get(manifold)
    if keys is None:
        raise DomainError(f"manifold must be '+1', '-1' or 'both', got {manifold!r}")
    iv = _union([(ranges[k][0] - margin, ranges[k][1] + margin) for k in keys])
    if iv[0][0] == iv[-1][1]:
        raise DomainError("zero-width band: use a positive margin at zero field")
    return SweepBandPlan(manifold, iv[0][0], iv[-1][1], margin, iv)
