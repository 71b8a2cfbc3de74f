"""13C relaxation: Lorentzian R1(B) profiles, decays and enhancement mapping.

Fields in mT, times in s, rates in Hz. The Lorentzian amplitude ``a_lor``
carries units of Hz*mT.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import stats
from scipy.optimize import least_squares

from .errors import DomainError, FitError

# fields above this count as "high" when averaging extrapolated enhancements
HIGH_FIELD_MT = 500.0
DELAY_S = 60.0


def r1_model(a_lor: float, w_lor: float, c_offset: float, b: ArrayLike):
    """``(2A/pi) W / (4B^2 + W^2) + c``."""
    if not w_lor > 0:
        raise DomainError("Lorentzian width must be positive")
    b = np.asarray(b, dtype=float)
    out = (2 * a_lor / math.pi) * w_lor / (4 * b * b + w_lor * w_lor) + c_offset
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class LorentzFit:
    a_lor: float
    w_lor: float
    c_offset: float
    covariance: NDArray[np.float64]
    chi2: float
    dof: int
    residuals: NDArray[np.float64]

    @property
    def errors(self) -> NDArray[np.float64]:
        return np.sqrt(np.diag(self.covariance))

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else float("nan")


@dataclass(frozen=True)
class RelaxationProfile:
    fields: NDArray[np.float64]
    r1: NDArray[np.float64]
    sigma: NDArray[np.float64]
    fit: LorentzFit | None = None

    def __post_init__(self):
        f, r, s = (np.asarray(x, dtype=float) for x in (self.fields, self.r1, self.sigma))
        if not (f.shape == r.shape == s.shape) or f.ndim != 1:
            raise DomainError("fields, r1 and sigma must be 1-D and equally long")
        if np.any(f <= 0) or np.any(r <= 0) or np.any(s <= 0):
            raise DomainError("fields, rates and sigmas must be positive")
        object.__setattr__(self, "fields", f)
        object.__setattr__(self, "r1", r)
        object.__setattr__(self, "sigma", s)

    @classmethod
    def from_samples(cls, samples: ArrayLike) -> "RelaxationProfile":
        s = np.asarray(samples, dtype=float)
        if s.ndim != 2 or s.shape[1] != 3:
            raise DomainError("samples must be rows of (field_mT, r1_hz, sigma_hz)")
        return cls(s[:, 0], s[:, 1], s[:, 2])


def _lorentz_jac(theta: NDArray, b: NDArray) -> NDArray:
    a, w, _ = theta
    d = 4 * b * b + w * w
    da = (2 / math.pi) * w / d
    dw = (2 * a / math.pi) * (d - 2 * w * w) / (d * d)
    return np.stack([da, dw, np.ones_like(b)], axis=1)


def fit_r1_profile(profile: RelaxationProfile | ArrayLike, n_starts: int = 8) -> RelaxationProfile:
    """Weighted least-squares Lorentzian-plus-offset fit in rate space.

    Starts from ``n_starts`` log-spaced widths across the sampled field range
    (trust-region reflective, all parameters bounded at zero). Raises
    :class:`FitError` if the fitted knee ``W/2`` does not lie inside the
    sampled fields, since then W is not constrained by the data.
    """
    if not isinstance(profile, RelaxationProfile):
        profile = RelaxationProfile.from_samples(profile)
    b, y, sig = profile.fields, profile.r1, profile.sigma
    if len(b) < 4:
        raise DomainError("need at least 4 samples")

    def resid(t):
        return (r1_model(t[0], t[1], t[2], b) - y) / sig

    def jac(t):
        return _lorentz_jac(t, b) / sig[:, None]

    best = None
    for w0 in np.geomspace(2 * b.min(), 2 * b.max(), n_starts):
        c0 = float(np.min(y))
        a0 = max((float(np.max(y)) - c0) * math.pi * w0 / 2, 1e-12)
        r = least_squares(resid, [a0, w0, 0.5 * c0], jac=jac, bounds=(0, np.inf), method="trf",
                          x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=5000)
        if best is None or r.cost < best.cost:
            best = r
    theta = best.x
    if theta[1] <= 0:
        raise FitError("Lorentzian width collapsed to zero", {"x": theta})
    knee = theta[1] / 2
    if not b.min() <= knee <= b.max():
        raise FitError(
            f"fitted knee {knee:.4g} mT outside the sampled fields "
            f"[{b.min():.4g}, {b.max():.4g}]; need data on both sides",
            {"x": theta, "cost": best.cost},
        )
    j = best.jac
    try:
        cov = np.linalg.inv(j.T @ j)
    except np.linalg.LinAlgError as exc:
        raise FitError("singular normal matrix", {"x": theta}) from exc
    chi2 = 2 * float(best.cost)
    fit = LorentzFit(float(theta[0]), float(theta[1]), float(theta[2]), cov, chi2, len(b) - 3, best.fun)
    return replace(profile, fit=fit)


def knee_field(fit: RelaxationProfile | LorentzFit | None) -> float:
    """Field (mT) where the Lorentzian term drops to half its zero-field value, ``W/2``."""
    if isinstance(fit, RelaxationProfile):
        fit = fit.fit
    if fit is None:
        raise DomainError("profile has not been fitted")
    return 0.5 * fit.w_lor


# -- decays -----------------------------------------------------------------


@dataclass(frozen=True)
class DecayRecord:
    times: NDArray[np.float64]
    signals: NDArray[np.float64]
    sigma: NDArray[np.float64] | None = None
    amplitude: float | None = None
    t1: float | None = None
    sigma_t1: float | None = None
    dof: int | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.signals, dtype=float)
        if t.shape != s.shape or t.ndim != 1:
            raise DomainError("times and signals must be 1-D and equally long")
        if np.any(np.diff(t) <= 0):
            raise DomainError("times must be strictly ascending")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "signals", s)
        if self.sigma is not None:
            sg = np.broadcast_to(np.asarray(self.sigma, dtype=float), t.shape).copy()
            if np.any(sg <= 0):
                raise DomainError("sigma must be positive")
            object.__setattr__(self, "sigma", sg)

    def t1_interval(self, level: float = 0.95) -> tuple[float, float]:
        """Two-sided confidence interval on the fitted T1."""
        if self.t1 is None:
            raise DomainError("decay has not been fitted")
        # known sigmas: normal quantile; otherwise Student-t on the residual scale
        q = stats.norm.ppf(0.5 + level / 2) if self.sigma is not None else stats.t.ppf(0.5 + level / 2, self.dof)
        return self.t1 - q * self.sigma_t1, self.t1 + q * self.sigma_t1


def fit_monoexponential(d: DecayRecord) -> DecayRecord:
    """Least squares of ``amplitude * exp(-t / T1)``.

    Weighted by ``d.sigma`` when present, in which case the covariance is
    taken as absolute; otherwise unweighted with the covariance scaled by the
    residual variance. Raises :class:`FitError` for non-decaying data.
    """
    t, s = d.times, d.signals
    if len(t) < 3:
        raise DomainError("need at least 3 time points")
    if np.any(s <= 0):
        raise DomainError("signals must be positive")
    sig = d.sigma if d.sigma is not None else np.ones_like(s)
    slope, icpt = np.polyfit(t, np.log(s), 1)

    def resid(p):
        return (p[0] * np.exp(-p[1] * t) - s) / sig

    def jac(p):
        e = np.exp(-p[1] * t)
        return np.stack([e, -p[0] * t * e], axis=1) / sig[:, None]

    r = least_squares(resid, [math.exp(icpt), -slope], jac=jac, method="lm",
                      xtol=1e-15, ftol=1e-15, gtol=1e-15)
    amp, k = r.x
    if not k > 0:
        raise FitError("data do not decay (fitted T1 <= 0)", {"rate": k, "amplitude": amp})
    dof = len(t) - 2
    if d.sigma is not None:
        s2 = 1.0
    else:
        s2 = 2 * r.cost / dof if dof > 0 else 0.0
    cov = np.linalg.inv(r.jac.T @ r.jac) * s2
    t1 = 1.0 / k
    sigma_t1 = math.sqrt(cov[1, 1]) / (k * k)
    return replace(d, amplitude=float(amp), t1=float(t1), sigma_t1=float(sigma_t1), dof=dof)


# -- enhancement extrapolation ----------------------------------------------


def epsilon0_map(eps60: float, t1: float, sigma_t1: float = 0.0, delay: float = DELAY_S):
    """Extrapolate an enhancement measured after ``delay`` s back to zero delay.

    Returns ``(eps0, sigma_eps0)`` with ``eps0 = eps60 * exp(delay/T1)`` and the
    first-order uncertainty propagated from ``sigma_t1``.
    """
    if not t1 > 0:
        raise DomainError("T1 must be positive")
    g = math.exp(delay / t1)
    return eps60 * g, delay * eps60 * sigma_t1 * g / (t1 * t1)


def weighted_mean_eps0(values: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Inverse-variance weighted mean and its standard error."""
    v = np.asarray(values, dtype=float).reshape(-1, 2)
    if len(v) == 0:
        raise DomainError("no values to average")
    if np.any(v[:, 1] <= 0):
        raise DomainError("every entry needs a positive sigma")
    w = v[:, 1] ** -2.0
    return float(w @ v[:, 0] / w.sum()), float(1.0 / math.sqrt(w.sum()))


def map_eps60_to_t1(eps60: float, mean_eps0: float, sigma_mean: float = 0.0, delay: float = DELAY_S):
    """Invert the extrapolation: ``T1 = delay / ln(eps0 / eps60)`` with its uncertainty."""
    if not eps60 > 0:
        raise DomainError("eps60 must be positive")
    if eps60 >= mean_eps0:
        raise DomainError(
            f"eps60={eps60:g} >= mean eps0={mean_eps0:g}: no decay, T1 undefined or negative"
        )
    lg = math.log(mean_eps0 / eps60)
    return delay / lg, delay * sigma_mean / mean_eps0 / (lg * lg)


@dataclass(frozen=True)
class FieldPoint:
    field_mt: float
    eps60: float
    t1: float | None = None
    sigma_t1: float | None = None


def accelerated_t1(points: Sequence[FieldPoint], high_field_mt: float = HIGH_FIELD_MT):
    """Estimate T1 at every field from single-delay enhancements.

    Points above ``high_field_mt`` with a measured T1 fix the common zero-delay
    enhancement (inverse-variance mean); every point then gets
    ``(field, T1, sigma_T1)``. Points with ``eps60 >= eps0`` raise.
    """
    anchors = [p for p in points if p.field_mt > high_field_mt and p.t1 is not None]
    if not anchors:
        raise DomainError(f"no points above {high_field_mt} mT with a measured T1")
    e0s = [epsilon0_map(p.eps60, p.t1, p.sigma_t1 or 0.0) for p in anchors]
    if any(s == 0 for _, s in e0s):
        raise DomainError("anchor points need a non-zero sigma_t1 for weighting")
    mean, sig = weighted_mean_eps0(e0s)
    return [(p.field_mt, *map_eps60_to_t1(p.eps60, mean, sig)) for p in points], (mean, sig)


def time_acceleration(eps: float, t1_high: float, t1_pol: float) -> float:
    """Averaging-time gain ``eps^2 * T1(detection) / T1(polarization)``."""
    if not (eps > 0 and t1_high > 0 and t1_pol > 0):
        raise DomainError("enhancement and lifetimes must be positive")
    return eps * eps * t1_high / t1_pol


# T1(detection)/T1(polarization) ratios implied by the quoted accelerations
IMPLIED_T1_RATIOS = {720.0: 9.8e6 / 720.0**2, 950.0: 5.3e7 / 950.0**2}
