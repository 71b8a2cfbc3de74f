"""Orientation-averaged (powder) NV electron spectra.

Spectra are densities in MHz^-1: each transition contributes a unit-area
Gaussian scaled by its intensity, averaged over crystallite orientations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.ndimage import correlate1d
from scipy.optimize import minimize_scalar

from .errors import DomainError
from .spinsys import Orientation, PhysicalConstants, electron_transitions

DEFAULT_BROADENING = 28.0  # MHz, Gaussian standard deviation
DEFAULT_GRID_STEP = 1.0  # MHz

# columns of electron_transitions
BRANCHES = {"all": (0, 1, 2), "-1": (0,), "+1": (1,), "dq": (2,)}

_CHUNK = 256


@dataclass(frozen=True)
class OrientationSample:
    """Crystallite orientations drawn uniformly over the sphere."""

    theta: NDArray[np.float64]
    phi: NDArray[np.float64]
    seed: int
    count: int

    @property
    def orientations(self) -> list[Orientation]:
        return [Orientation(float(t), float(p)) for t, p in zip(self.theta, self.phi)]


def sample_orientations(n: int, seed: int, method: str = "stratified") -> OrientationSample:
    """Draw ``n`` orientations uniformly distributed over the sphere.

    ``phi`` is uniform on ``[0, 2pi)`` and ``cos(theta)`` uniform on
    ``[-1, 1]``. With ``method="stratified"`` (default) one cosine is drawn
    uniformly inside each of ``n`` equal slices of ``[-1, 1]`` and the
    list is shuffled: every sample still has the uniform marginal, but the
    orientation-average converges far faster than for independent draws
    (``method="iid"``). Both use ``numpy.random.default_rng(seed)``.
    """
    if int(n) != n or n < 1:
        raise DomainError(f"need at least one orientation, got n={n}")
    n = int(n)
    rng = np.random.default_rng(seed)
    if method == "stratified":
        cos_t = rng.permutation(-1.0 + 2.0 * (np.arange(n) + rng.uniform(size=n)) / n)
    elif method == "iid":
        cos_t = rng.uniform(-1.0, 1.0, n)
    else:
        raise DomainError(f"unknown sampling method {method!r}")
    phi = rng.uniform(0.0, 2 * math.pi, n)
    return OrientationSample(np.arccos(np.clip(cos_t, -1.0, 1.0)), phi, int(seed), n)


@dataclass(frozen=True)
class Spectrum:
    grid: NDArray[np.float64]
    values: NDArray[np.float64]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if g.ndim != 1 or g.shape != v.shape or len(g) < 2:
            raise DomainError("grid and values must be 1-D arrays of equal length >= 2")
        d = np.diff(g)
        if np.any(d <= 0) or not np.allclose(d, d[0], rtol=1e-9, atol=0):
            raise DomainError("grid must be strictly ascending with a uniform step")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise DomainError("spectrum values must be finite and non-negative")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def area(self) -> float:
        return float(self.values.sum() * self.step)


def default_grid(
    c: PhysicalConstants, b_pol: float, broadening_mhz: float, grid_step: float
) -> NDArray[np.float64]:
    """Grid spanning ``delta -/+ (1.5*gamma_e*B + 5*sigma)``."""
    half = 1.5 * c.gamma_e * b_pol + 5 * broadening_mhz
    n = int(math.floor(2 * half / grid_step + 1e-9)) + 1
    return c.delta - half + grid_step * np.arange(n)


def powder_spectrum(
    c: PhysicalConstants,
    b_pol: float,
    sample: OrientationSample,
    broadening_mhz: float = DEFAULT_BROADENING,
    grid_step: float = DEFAULT_GRID_STEP,
    branch: str = "all",
    grid: ArrayLike | None = None,
) -> Spectrum:
    """Gaussian-broadened spectrum averaged over ``sample``.

    Parameters
    ----------
    branch
        ``"all"`` or a single manifold: ``"-1"``, ``"+1"``, ``"dq"``
        (double-quantum). Manifold-resolved spectra are used for edge
        location, where overlapping branches would otherwise blur features.
    grid
        Optional explicit uniform grid; by default :func:`default_grid`.
    """
    if broadening_mhz <= 0:
        raise DomainError("broadening must be positive")
    if grid_step <= 0 or grid_step > broadening_mhz:
        raise DomainError(
            f"grid step {grid_step} MHz undersamples a {broadening_mhz} MHz line"
        )
    if branch not in BRANCHES:
        raise DomainError(f"unknown branch {branch!r}; choose from {sorted(BRANCHES)}")
    grid = default_grid(c, b_pol, broadening_mhz, grid_step) if grid is None else np.asarray(grid, float)

    freqs, intens = electron_transitions(c, b_pol, sample.theta)
    cols = list(BRANCHES[branch])
    freqs, intens = freqs[:, cols], intens[:, cols]

    norm = 1.0 / (broadening_mhz * math.sqrt(2 * math.pi))
    acc = np.zeros_like(grid)
    # fixed chunk order keeps the summation order independent of n
    for start in range(0, sample.count, _CHUNK):
        f = freqs[start:start + _CHUNK].ravel()
        w = intens[start:start + _CHUNK].ravel()
        z = (grid[None, :] - f[:, None]) / broadening_mhz
        acc += w @ np.exp(-0.5 * z * z)
    values = acc * norm / sample.count
    meta = {
        "field_mT": b_pol,
        "broadening_mhz": broadening_mhz,
        "seed": sample.seed,
        "n_orient": sample.count,
    }
    return Spectrum(grid, values, meta)


def boxcar_kernel(window_mhz: float, step: float) -> NDArray[np.float64]:
    """Unit-sum boxcar of exact width ``window_mhz``, partial weights at the ends."""
    half = 0.5 * window_mhz / step
    m = int(math.ceil(half - 0.5 - 1e-12))
    j = np.arange(-m, m + 1)
    lo = np.maximum(j - 0.5, -half)
    hi = np.minimum(j + 0.5, half)
    w = np.clip(hi - lo, 0.0, None)
    return w / w.sum()


def convolve_sweep_window(s: Spectrum, window_mhz: float) -> Spectrum:
    """Moving average over a frequency sweep window (uniform dwell).

    Values beyond the grid are taken equal to the end values, so flat input
    stays flat; the area is conserved when the signal vanishes near the ends.
    """
    if window_mhz < s.step * (1 - 1e-9):
        raise DomainError(f"window {window_mhz} MHz is narrower than the grid step {s.step} MHz")
    k = boxcar_kernel(window_mhz, s.step)
    out = correlate1d(s.values, k, mode="nearest")
    meta = dict(s.meta, window_mhz=window_mhz)
    return Spectrum(s.grid, np.clip(out, 0.0, None), meta)


@dataclass(frozen=True)
class ManifoldSpread:
    spread_plus: float
    spread_minus: float
    field: float


def manifold_edges(c: PhysicalConstants, b_pol: float) -> dict[str, tuple[float, float]]:
    """Closed-form frequency ranges of the two single-quantum branches.

    ``m_s=-1``: ``[delta - b, (delta + r)/2]``; ``m_s=+1``: ``[r, delta + b]``,
    with ``b = gamma_e*B`` and ``r = sqrt(delta^2 + 4 b^2)``. These are the
    exact extrema over orientation while ``b <= delta/3`` (about 34 mT).
    Beyond that the ``+1`` maximum drifts above ``delta + b`` (by ~1 MHz at
    36 mT), and near 68 mT the closed-form ``+1`` range shrinks to zero.
    """
    b = c.gamma_e * b_pol
    r = math.sqrt(c.delta**2 + 4 * b * b)
    return {"-1": (c.delta - b, 0.5 * (c.delta + r)), "+1": (r, c.delta + b)}


def manifold_spread(c: PhysicalConstants, b_pol: float) -> ManifoldSpread:
    e = manifold_edges(c, b_pol)
    return ManifoldSpread(
        spread_plus=abs(e["+1"][1] - e["+1"][0]),
        spread_minus=abs(e["-1"][1] - e["-1"][0]),
        field=b_pol,
    )


def exact_manifold_edges(c: PhysicalConstants, b_pol: float, n_theta: int = 2001) -> dict[str, tuple[float, float]]:
    """Numerical frequency ranges of the single-quantum branches over orientation.

    Coarse scan of ``theta`` in ``[0, pi/2]`` (the spectrum is symmetric about
    ``pi/2``) refined by a bounded scalar search around each extremum. Valid
    at any field, unlike :func:`manifold_edges`.
    """
    th = np.linspace(0.0, 0.5 * math.pi, n_theta)
    freqs = electron_transitions(c, b_pol, th)[0]
    h = th[1] - th[0]
    out = {}
    for key, col in (("-1", 0), ("+1", 1)):
        f = freqs[:, col]
        ends = []
        for sign, i in ((1.0, int(np.argmin(f))), (-1.0, int(np.argmax(f)))):
            lo, hi = max(th[i] - h, 0.0), min(th[i] + h, th[-1])
            r = minimize_scalar(
                lambda t: sign * electron_transitions(c, b_pol, np.array([t]))[0][0, col],
                bounds=(lo, hi), method="bounded", options={"xatol": 1e-12},
            )
            ends.append(float(min(sign * f[i], r.fun) * sign))
        out[key] = (ends[0], ends[1])
    return out


def locate_edges(s: Spectrum, broadening_mhz: float = DEFAULT_BROADENING) -> tuple[float, float]:
    """Lower and upper support edges of a single-branch spectrum.

    A hard threshold sits about two widths outside a Gaussian-blurred edge,
    so it is only used to bracket: the edge is the steepest rise (fall)
    within ``4*sigma`` inside the first (last) point above 1% of the peak.
    """
    v = s.values
    above = np.flatnonzero(v > 0.01 * v.max())
    if len(above) == 0:
        raise DomainError("empty spectrum")
    i0, i1 = above[0], above[-1]
    w = max(int(round(4 * broadening_mhz / s.step)), 1)
    d = np.gradient(v, s.grid)
    lo = s.grid[i0 + np.argmax(d[i0:i0 + w + 1])]
    start = max(i1 - w, 0)
    hi = s.grid[start + np.argmin(d[start:i1 + 1])]
    return float(lo), float(hi)


def fit_amplitude(model: Spectrum, measured: ArrayLike) -> float:
    """Least-squares overall scale ``k`` minimizing ``|k*model - measured|``."""
    y = np.asarray(measured, dtype=float)
    m = model.values
    den = float(m @ m)
    if den == 0:
        raise DomainError("model spectrum is identically zero")
    return float(m @ y) / den


def transition_power(c: PhysicalConstants, b_pol: float, theta: ArrayLike) -> NDArray[np.float64]:
    """Summed transition intensity ``P(theta)`` at one field."""
    return electron_transitions(c, b_pol, theta)[1].sum(axis=1)


def integrated_intensity(c: PhysicalConstants, b_pol: float, n_theta: int = 256) -> float:
    """``int_0^{pi/2} P(theta) sin(theta) dtheta`` by Gauss-Legendre quadrature."""
    if n_theta < 64:
        raise DomainError("use at least 64 quadrature nodes")
    x, w = np.polynomial.legendre.leggauss(n_theta)
    theta = 0.25 * math.pi * (x + 1.0)
    p = transition_power(c, b_pol, theta)
    return float(0.25 * math.pi * np.sum(w * p * np.sin(theta)))
