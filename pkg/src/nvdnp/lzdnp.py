"""Frequency-swept Landau-Zener ("ratchet") polarization transfer.

The coupled NV-13C Hamiltonian is diagonalized once; a chirped microwave
field then drives the ``m_s = 0`` pair against one ``m_s = +/-1`` pair in a
frame rotating at the instantaneous microwave frequency. Time is in seconds
at the API surface and microseconds internally, frequencies in MHz.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import least_squares

from .errors import DomainError, FitError, FitQualityWarning, SubspaceError
from .spinsys import (
    SX,
    SZ,
    HyperfineTensor,
    Orientation,
    PhysicalConstants,
    build_coupled_hamiltonian,
    check_hermitian,
    eig_hermitian,
    field_vector,
)

_E2 = np.eye(2)
_PAULI = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)

# phase advanced per step, |spectral spread| * dt in MHz*us
MAX_PHASE_STEP = 0.05
DEFAULT_PHASE_STEP = 0.02
NORM_TOL = 1e-8
_CHUNK = 4096

# simulation defaults for the worked m_s=0 <-> -1 configuration
DEFAULT_RABI = 0.2  # MHz
DEFAULT_SLEW = 0.04  # MHz/us (40 MHz/ms)
DEFAULT_HALF_BAND = 3.0  # MHz either side of the transition centre

# optimal repetition rates (Hz) and quoted uncertainties, per swept manifold
OPTIMAL_RATES = {"+1": 147.0, "-1": 133.0, "both": 73.0}
OPTIMAL_RATE_UNCERTAINTY = {"+1": 53.0, "both": 29.0}


# -- data types -------------------------------------------------------------


@dataclass(frozen=True)
class SweepProgram:
    """One linear chirp per repetition period ``1 / repetition_rate``.

    ``rabi`` is the electron Rabi frequency in MHz (linear, not angular).
    """

    f_start: float
    f_end: float
    repetition_rate: float
    rabi: float
    n_sweeps: int = 1

    def __post_init__(self):
        if self.f_start == self.f_end:
            raise DomainError("f_start and f_end must differ")
        if not self.repetition_rate > 0:
            raise DomainError("repetition_rate must be positive")
        if self.rabi < 0:
            raise DomainError("rabi must be non-negative")
        if self.n_sweeps < 1:
            raise DomainError("need at least one sweep")

    @property
    def direction(self) -> int:
        return 1 if self.f_end > self.f_start else -1

    @property
    def band(self) -> float:
        return abs(self.f_end - self.f_start)

    @property
    def duration(self) -> float:
        """Sweep period t_r, s."""
        return 1.0 / self.repetition_rate

    @property
    def sweep_rate(self) -> float:
        """MHz/s."""
        return self.band * self.repetition_rate

    @property
    def slew(self) -> float:
        """MHz/us."""
        return self.sweep_rate * 1e-6

    def reversed(self) -> "SweepProgram":
        return SweepProgram(self.f_end, self.f_start, self.repetition_rate, self.rabi, self.n_sweeps)


@dataclass(frozen=True)
class PolarizationTrace:
    times: NDArray[np.float64]
    nuclear_polarization: NDArray[np.float64]
    electron_population_ms0: NDArray[np.float64]
    final_state: NDArray[np.complex128] | None = field(default=None, repr=False)
    norm_drift: float = 0.0

    def __post_init__(self):
        n = len(self.times)
        if len(self.nuclear_polarization) != n or len(self.electron_population_ms0) != n:
            raise DomainError("trace arrays must have equal length")
        tol = 1e-9
        if np.any(np.abs(self.nuclear_polarization) > 1 + tol):
            raise DomainError("nuclear polarization outside [-1, 1]")
        p = self.electron_population_ms0
        if np.any(p < -tol) or np.any(p > 1 + tol):
            raise DomainError("m_s=0 population outside [0, 1]")

    @property
    def final_polarization(self) -> float:
        return float(self.nuclear_polarization[-1])


@dataclass(frozen=True)
class RateModelParams:
    amplitude: float
    lam: float
    omega: float

    def __post_init__(self):
        if not (self.amplitude > 0 and self.lam > 0 and self.omega > 0):
            raise DomainError("rate-model parameters must all be positive")

    def as_array(self) -> NDArray[np.float64]:
        return np.array([self.amplitude, self.lam, self.omega])


# -- spin system and rotating frame -----------------------------------------


@dataclass(frozen=True)
class DNPSystem:
    """NV-13C pair under a static field; defaults are the worked 10 mT example."""

    constants: PhysicalConstants = PhysicalConstants()
    hyperfine: HyperfineTensor = HyperfineTensor(0.5, 0.15)
    field_mt: float = 10.0
    orientation: Orientation = Orientation(math.pi / 4)
    manifold: int = -1

    def __post_init__(self):
        if self.manifold not in (-1, 1):
            raise DomainError("manifold must be -1 or +1")

    def hamiltonian(self) -> NDArray:
        return build_coupled_hamiltonian(
            self.constants, field_vector(self.field_mt, self.orientation), self.hyperfine
        )

    def subspace(self) -> "CrossingSubspace":
        return addressed_subspace(self.hamiltonian(), self.manifold)

    def program(
        self,
        direction: int = 1,
        rabi: float = DEFAULT_RABI,
        slew: float = DEFAULT_SLEW,
        half_band: float = DEFAULT_HALF_BAND,
    ) -> SweepProgram:
        """Chirp centred on the addressed transition at ``slew`` MHz/us."""
        f0 = self.subspace().center
        lo, hi = f0 - half_band, f0 + half_band
        rate = slew * 1e6 / (2 * half_band)
        return SweepProgram(lo, hi, rate, rabi) if direction > 0 else SweepProgram(hi, lo, rate, rabi)


@dataclass(frozen=True)
class CrossingSubspace:
    """Eigenbasis of the coupled Hamiltonian ordered (m_s=0 pair, addressed pair, spectator pair).

    ``vectors`` columns are product-basis eigenvectors in that order and
    ``drive`` is the microwave coupling matrix in the same basis, scaled so
    that its largest singular value between the m_s=0 and addressed pairs
    is one.
    """

    energies: NDArray[np.float64]
    vectors: NDArray[np.complex128]
    drive: NDArray[np.complex128]
    manifold: int

    @property
    def center(self) -> float:
        """Mean addressed transition frequency, MHz."""
        return float(self.energies[2:4].mean() - self.energies[0:2].mean())


def addressed_subspace(h6: ArrayLike, manifold: int = -1, min_sz: float = 0.5) -> CrossingSubspace:
    """Split the 6-level spectrum into electron manifolds.

    Raises :class:`SubspaceError` when the ``m_s = +/-1`` levels cannot be
    told apart: the two highest pairs must carry ``<S_z>`` of opposite sign
    with magnitude at least ``min_sz``, and the addressed pair must not
    interleave in energy with the spectator pair.
    """
    h6 = check_hermitian(h6)
    if h6.shape != (6, 6):
        raise DomainError("expected the 6x6 coupled Hamiltonian")
    es = eig_hermitian(h6)
    e, v = es.energies, es.vectors
    sz = np.real(np.einsum("ik,ij,jk->k", v.conj(), np.kron(SZ, _E2), v))
    if np.any(np.abs(sz[:2]) > 1 - min_sz):
        raise SubspaceError("lowest pair is not an m_s=0 manifold")
    upper = np.arange(2, 6)
    want = upper[np.sign(sz[upper]) == manifold]
    other = upper[np.sign(sz[upper]) == -manifold]
    if len(want) != 2 or np.any(np.abs(sz[upper]) < min_sz):
        raise SubspaceError(
            f"m_s=+/-1 levels are mixed (<Sz> = {np.round(sz[upper], 3)}); "
            "the addressed manifold is not separable at this field and orientation"
        )
    if not (e[want].max() < e[other].min() or e[other].max() < e[want].min()):
        raise SubspaceError("addressed and spectator manifolds interleave in energy")
    idx = np.concatenate([[0, 1], want, other])
    e, v = e[idx], v[:, idx]
    x = v.conj().T @ np.kron(SX, _E2) @ v
    smax = np.linalg.svd(x[0:2, 2:4], compute_uv=False)[0]
    if smax == 0:
        raise SubspaceError("addressed transition carries no microwave coupling")
    return CrossingSubspace(e, v, x / smax, manifold)


def _generator6(sub: CrossingSubspace, mw_freq: ArrayLike, rabi: float, full: bool) -> NDArray:
    """Rotating-frame generators, shape ``(n, 6, 6)``, in the ordered eigenbasis."""
    f = np.atleast_1d(np.asarray(mw_freq, dtype=float))
    e = sub.energies - sub.energies[0:2].mean()
    diag = np.tile(e, (len(f), 1))
    diag[:, 2:4] -= f[:, None]
    coup = np.zeros((6, 6), complex)
    coup[0:2, 2:4] = 0.5 * rabi * sub.drive[0:2, 2:4]
    if full:
        # off-resonant drive of the spectator manifold, same frame
        diag[:, 4:6] -= f[:, None]
        coup[0:2, 4:6] = 0.5 * rabi * sub.drive[0:2, 4:6]
    else:
        # spectator uncoupled; its frame is arbitrary, so keep it near zero
        diag[:, 4:6] = e[4:6] - e[4:6].mean()
    coup = coup + coup.conj().T
    g = coup[None, :, :] + np.zeros((len(f), 1, 1))
    g[:, np.arange(6), np.arange(6)] += diag
    return g


def rotating_frame_generator(
    h6: ArrayLike, mw_freq: float, rabi: float, manifold: int = -1
) -> NDArray[np.complex128]:
    """4x4 rotating-frame generator of the m_s=0 pair and the addressed pair.

    Basis: eigenstates of ``h6`` (two m_s=0 levels, then two of the addressed
    manifold). Diagonal: level energies with ``mw_freq`` subtracted from the
    addressed pair; off-diagonal blocks: ``rabi/2`` times the normalized
    drive matrix elements.
    """
    if rabi < 0:
        raise DomainError("rabi must be non-negative")
    sub = addressed_subspace(h6, manifold)
    return _generator6(sub, mw_freq, rabi, full=False)[0, :4, :4]


# -- propagation ------------------------------------------------------------


def _step_unitaries(gens: NDArray, dt_us: float) -> tuple[NDArray, float]:
    """Exact step propagators and the largest spectral spread among ``gens``."""
    w, u = np.linalg.eigh(gens)
    phase = np.exp(-2j * np.pi * dt_us * w)
    return u @ (phase[..., None] * np.swapaxes(u.conj(), -2, -1)), float(np.max(w[:, -1] - w[:, 0]))


def _ordered_product(us: NDArray) -> NDArray:
    """``us[-1] @ ... @ us[0]`` by pairwise reduction."""
    while len(us) > 1:
        if len(us) % 2:
            us = np.concatenate([us, np.eye(us.shape[-1])[None]])
        us = us[1::2] @ us[0::2]
    return us[0]


def _spread(gens: NDArray) -> float:
    w = np.linalg.eigvalsh(gens)
    return float(np.max(w[:, -1] - w[:, 0]))


def _chirp(
    gen_at,
    f_start: float,
    f_end: float,
    duration_us: float,
    dt_us: float | None,
    record_every: int | None = None,
):
    """Piecewise-constant propagation of ``gen_at(freqs)`` along a linear chirp.

    Returns the total unitary and, if ``record_every`` is set, the partial
    products after every ``record_every`` steps (with their end times).
    """
    probe = gen_at(np.array([f_start, 0.5 * (f_start + f_end), f_end]))
    spread = _spread(probe)
    if dt_us is None:
        dt_us = DEFAULT_PHASE_STEP / max(spread, 1e-12)
    n = max(int(math.ceil(duration_us / dt_us - 1e-9)), 1)
    dt_us = duration_us / n
    chunk = record_every or _CHUNK
    dim = probe.shape[-1]
    total = np.eye(dim, dtype=complex)
    partial, stamps = [], []
    for start in range(0, n, chunk):
        k = np.arange(start, min(start + chunk, n))
        t_mid = (k + 0.5) * dt_us
        gens = gen_at(f_start + (f_end - f_start) * t_mid / duration_us)
        steps, sp = _step_unitaries(gens, dt_us)
        if sp * dt_us > MAX_PHASE_STEP * (1 + 1e-12):
            raise DomainError(
                f"time step {dt_us:.3g} us too coarse: spread*dt = {sp * dt_us:.3g} > {MAX_PHASE_STEP}"
            )
        total = _ordered_product(steps) @ total
        if record_every:
            partial.append(total.copy())
            stamps.append((k[-1] + 1) * dt_us)
    return total, partial, stamps, dt_us


def landau_zener_probability(gap: float, slew: float) -> float:
    """Transfer probability ``1 - exp(-pi G^2 / (2 V))`` for linear-frequency inputs.

    ``gap`` (MHz) is the minimum splitting and ``slew`` (MHz/us) the rate of
    change of the diabatic splitting; ``G = 2 pi gap`` and ``V = 2 pi slew``
    are the angular equivalents.
    """
    if slew <= 0:
        raise DomainError("slew must be positive")
    g, v = 2 * math.pi * gap, 2 * math.pi * slew
    return -math.expm1(-math.pi * g * g / (2 * v))


def two_level_transfer(
    gap: float, slew: float, span: float | None = None, dt_us: float | None = None
) -> float:
    """Numerically swept isolated crossing; returns the transfer probability.

    The diabatic splitting runs from ``-span`` to ``+span`` MHz. Transfer is
    measured as adiabatic following (start and end in the instantaneous
    lower eigenstate), which equals the diabatic-state transfer for an
    infinite sweep and converges much faster with ``span`` than projecting on
    the diabatic states.
    """
    if gap < 0 or slew <= 0:
        raise DomainError("need gap >= 0 and slew > 0")
    if span is None:
        span = 40.0 * max(gap, math.sqrt(slew / (2 * math.pi)))
    sz = np.diag([0.5, -0.5]).astype(complex)
    off = 0.5 * gap * np.array([[0, 1], [1, 0]], dtype=complex)

    def gen_at(d):
        return d[:, None, None] * sz[None] + off[None]

    u, *_ = _chirp(gen_at, -span, span, 2 * span / slew, dt_us)
    ends = gen_at(np.array([-span, span]))
    v0 = np.linalg.eigh(ends[0])[1][:, 0]
    v1 = np.linalg.eigh(ends[1])[1][:, 0]
    return float(abs(v1.conj() @ u @ v0) ** 2)


def _product_rho_m0() -> NDArray:
    return np.kron(np.diag([0.0, 1.0, 0.0]).astype(complex), 0.5 * _E2)


def _nuclear_reduced(rho: NDArray) -> NDArray:
    return np.einsum("aiaj->ij", rho.reshape(3, 2, 3, 2))


def _bloch(r2: NDArray) -> NDArray:
    return np.array([np.trace(r2 @ p).real for p in _PAULI])


def nuclear_axis(sub: CrossingSubspace) -> NDArray[np.float64]:
    """Unit Bloch axis of the 13C state in the lower m_s=0 eigenstate."""
    v0 = sub.vectors[:, 0].reshape(3, 2)
    n = _bloch(v0.T @ v0.conj())
    return n / np.linalg.norm(n)


def secular(rho: NDArray, sub: CrossingSubspace) -> NDArray:
    """Drop coherences between electron manifolds (eigenbasis blocks).

    Those coherences oscillate at GHz frequencies in the laboratory frame,
    so only this block-diagonal part is observable on slow time scales.
    """
    v = sub.vectors
    r = v.conj().T @ rho @ v
    mask = np.zeros((6, 6), bool)
    for b in (slice(0, 2), slice(2, 4), slice(4, 6)):
        mask[b, b] = True
    return v @ np.where(mask, r, 0.0) @ v.conj().T


def observables(rho: NDArray, sub: CrossingSubspace) -> tuple[float, float]:
    """``(<2 I.n>, P(m_s=0))`` of a product-basis 6x6 density matrix.

    ``n`` is :func:`nuclear_axis`; both are evaluated on :func:`secular`.
    """
    r = secular(rho, sub)
    pol = float(_bloch(_nuclear_reduced(r)) @ nuclear_axis(sub))
    p0 = float(np.trace(r.reshape(3, 2, 3, 2)[1, :, 1, :]).real)
    return float(np.clip(pol, -1.0, 1.0)), float(np.clip(p0, 0.0, 1.0))


def sweep_unitary(
    system: DNPSystem, program: SweepProgram, dt: float | None = None, full: bool = False
) -> NDArray[np.complex128]:
    """Product-basis propagator of one sweep of ``program``."""
    return _sweep(system.subspace(), program, dt, full)[0]


def _sweep(sub, program, dt, full, record_every=None):
    def gen_at(f):
        return _generator6(sub, f, program.rabi, full)

    dt_us = None if dt is None else dt * 1e6
    u, partial, stamps, dt_used = _chirp(
        gen_at, program.f_start, program.f_end, program.duration * 1e6, dt_us, record_every
    )
    v = sub.vectors
    to_prod = lambda m: v @ m @ v.conj().T  # noqa: E731
    return to_prod(u), [to_prod(p) for p in partial], stamps, dt_used


def propagate_chirp(
    system: DNPSystem,
    program: SweepProgram,
    dt: float | None = None,
    initial: ArrayLike | None = None,
    record_every: int | None = None,
    full: bool = False,
) -> PolarizationTrace:
    """Coherent evolution over ``program.n_sweeps`` back-to-back sweeps.

    Parameters
    ----------
    dt
        Step in seconds; by default chosen so that the generator's spectral
        spread times ``dt`` is 0.02 (in MHz*us). Steps with a product above
        0.05 raise :class:`DomainError`.
    initial
        6x6 product-basis density matrix; default electron in m_s=0 with an
        unpolarized 13C.
    record_every
        Record observables every this many steps (default: end of each sweep).
    full
        Also drive the spectator manifold off-resonantly (much smaller steps).
    """
    sub = system.subspace()
    rho = _product_rho_m0() if initial is None else np.asarray(initial, dtype=complex)
    u, partial, stamps, _ = _sweep(sub, program, dt, full, record_every)
    if not record_every:
        partial, stamps = [u], [program.duration * 1e6]
    times, pols, pops = [0.0], *[[x] for x in observables(rho, sub)]
    drift = abs(np.trace(rho).real - 1.0)
    tr0 = np.trace(rho).real
    for s in range(program.n_sweeps):
        for p, t in zip(partial, stamps):
            r = p @ rho @ p.conj().T
            a, b = observables(r, sub)
            times.append(s * program.duration + t * 1e-6)
            pols.append(a)
            pops.append(b)
        rho = u @ rho @ u.conj().T
        d = abs(np.trace(rho).real - tr0)
        if d > NORM_TOL:
            raise FloatingPointError(f"norm drift {d:.2e} exceeds {NORM_TOL} after sweep {s + 1}")
        drift = max(drift, d)
    return PolarizationTrace(np.array(times), np.array(pols), np.array(pops), rho, drift)


def repolarize(rho: NDArray, p: float) -> NDArray:
    """Reset the electron toward m_s=0: ``(1-p) rho + p |0><0| x Tr_e(rho)``."""
    if not 0.0 <= p <= 1.0:
        raise DomainError("repolarization efficiency must lie in [0, 1]")
    e0 = np.diag([0.0, 1.0, 0.0]).astype(complex)
    return (1 - p) * rho + p * np.kron(e0, _nuclear_reduced(rho))


def ratchet_cycle(
    system: DNPSystem,
    program: SweepProgram,
    repolarization: float = 1.0,
    n_cycles: int = 10,
    initial: ArrayLike | None = None,
    dt: float | None = None,
    full: bool = False,
) -> PolarizationTrace:
    """Repeated sweeps, each followed by an electron reset.

    One point per cycle, recorded after the reset at ``t = k * t_r``; the
    first point is the initial state. Pass ``trace.final_state`` as
    ``initial`` to continue a run, e.g. with the reversed program.
    """
    if n_cycles < 1:
        raise DomainError("need at least one cycle")
    sub = system.subspace()
    u = _sweep(sub, program, dt, full)[0]
    rho = _product_rho_m0() if initial is None else np.asarray(initial, dtype=complex)
    tr0 = np.trace(rho).real
    a, b = observables(rho, sub)
    times, pols, pops = [0.0], [a], [b]
    drift = 0.0
    for k in range(n_cycles):
        rho = repolarize(u @ rho @ u.conj().T, repolarization)
        drift = max(drift, abs(np.trace(rho).real - tr0))
        a, b = observables(rho, sub)
        times.append((k + 1) * program.duration)
        pols.append(a)
        pops.append(b)
    if drift > NORM_TOL * n_cycles:
        raise FloatingPointError(f"norm drift {drift:.2e} over {n_cycles} cycles")
    return PolarizationTrace(np.array(times), np.array(pols), np.array(pops), rho, drift)


# -- empirical rate model ---------------------------------------------------


def rate_model_eval(p: RateModelParams, omega_r: ArrayLike) -> NDArray[np.float64] | float:
    """``A exp(-lam^2/w) (1 - exp(-omega^2/w))`` at repetition rate ``w`` (Hz)."""
    w = np.asarray(omega_r, dtype=float)
    if np.any(w <= 0):
        raise DomainError("repetition rate must be positive")
    out = _model(p.as_array(), w)
    return float(out) if out.ndim == 0 else out


def _model(theta: NDArray, w: NDArray) -> NDArray:
    a, lam, om = theta
    return a * np.exp(-lam * lam / w) * -np.expm1(-om * om / w)


def rate_model_optimum(p: RateModelParams) -> float:
    """Repetition rate maximizing the model: ``omega^2 / ln(1 + omega^2/lam^2)``."""
    return _optimum(p.lam, p.omega)


def _optimum(lam, om):
    lam2, om2 = np.square(lam), np.square(om)
    return om2 / np.log1p(om2 / lam2)


@dataclass(frozen=True)
class RateFit:
    params: RateModelParams
    covariance: NDArray[np.float64]
    optimum_rate: float
    interval95: tuple[float, float]
    interval5: tuple[float, float]
    cost: float
    gradient_norm: float
    nfev: int


def _fit_success(jac: NDArray, resid: NDArray, scale: float) -> tuple[bool, float]:
    g = float(np.linalg.norm(jac.T @ resid))
    r = float(np.linalg.norm(resid))
    exact = r <= 1e-10 * scale
    return exact or g <= 1e-8 * np.linalg.norm(jac) * r, g


def rate_model_fit(
    samples: ArrayLike,
    n_starts: int = 8,
    seed: int = 0,
    n_resample: int = 4000,
    max_nfev: int = 2000,
) -> RateFit:
    """Weighted least-squares fit of the rate model.

    ``samples`` rows are ``(omega_r [Hz], enhancement, sigma)``. The fit runs
    Levenberg-Marquardt from ``n_starts`` log-spaced starting points in the
    log-parameters and keeps the lowest cost. The optimum interval comes from
    resampling parameters from the fitted covariance (seeded) and taking the
    optimum of each resampled curve; both the central 95% and central 5%
    ranges are returned.
    """
    s = np.asarray(samples, dtype=float)
    if s.ndim != 2 or s.shape[1] != 3:
        raise DomainError("samples must be rows of (omega_r, enhancement, sigma)")
    w, y, sig = s.T
    if len(w) < 5:
        raise DomainError("need at least 5 samples")
    if np.any(w <= 0) or np.any(sig <= 0):
        raise DomainError("rates and sigmas must be positive")
    if np.ptp(w) == 0:
        raise DomainError("degenerate design: all repetition rates equal")
    if n_starts < 1:
        raise DomainError("need at least one start")

    def resid(u):
        return (_model(np.exp(u), w) - y) / sig

    def jac(u):
        a, lam, om = np.exp(u)
        e_l = np.exp(-lam * lam / w)
        e_o = np.exp(-om * om / w)
        m = a * e_l * -np.expm1(-om * om / w)
        cols = [m, m * (-2 * lam * lam / w), a * e_l * e_o * (2 * om * om / w)]
        return np.stack(cols, axis=1) / sig[:, None]

    scale = float(np.linalg.norm(y / sig))
    wlo, whi = np.log(w.min()), np.log(w.max())
    best = None
    for k, frac in enumerate(np.linspace(-1.0, 2.0, n_starts)):
        # lam^2 and omega^2 bracket the data; ordering alternates between starts
        l2 = math.exp(wlo + frac * (whi - wlo) * 0.5)
        o2 = math.exp(whi + frac * (whi - wlo) * 0.5)
        if k % 2:
            l2, o2 = l2 * 0.1, o2 * 0.1
        u0 = np.log([1.0, math.sqrt(l2), math.sqrt(o2)])
        shape = _model(np.exp(u0), w)
        a0 = max(float((shape / sig**2) @ y / ((shape / sig**2) @ shape)), 1e-12)
        u0[0] = math.log(a0)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                r = least_squares(resid, u0, jac=jac, method="lm", xtol=1e-15, ftol=1e-15,
                                  gtol=1e-15, max_nfev=max_nfev)
        except (ValueError, FloatingPointError):
            continue
        if np.all(np.isfinite(r.x)) and (best is None or r.cost < best.cost):
            best = r
    if best is None:
        raise FitError("rate-model fit failed from every start", {"n_starts": n_starts})
    # LM stops on ftol once the cost is flat to rounding; a few undamped
    # Gauss-Newton steps then bring the gradient down to its rounding floor
    x, fx, jx = best.x, best.fun, best.jac
    for _ in range(5):
        ok, _g = _fit_success(jx, fx, scale)
        if ok:
            break
        step = np.linalg.lstsq(jx, -fx, rcond=None)[0]
        with np.errstate(over="ignore", invalid="ignore"):
            f_new = resid(x + step)
        if not np.all(np.isfinite(f_new)) or f_new @ f_new > fx @ fx * (1 + 1e-12):
            break
        x = x + step
        fx, jx = f_new, jac(x)
    best.x, best.fun, best.jac, best.cost = x, fx, jx, 0.5 * float(fx @ fx)
    ok, gnorm = _fit_success(best.jac, best.fun, scale)
    if not ok:
        raise FitError(
            "rate-model fit did not converge",
            {"cost": best.cost, "gradient_norm": gnorm, "nfev": best.nfev, "x": np.exp(best.x)},
        )
    theta = np.exp(best.x)
    jtj = best.jac.T @ best.jac
    try:
        cov_log = np.linalg.inv(jtj)
    except np.linalg.LinAlgError as exc:
        raise FitError("singular normal matrix", {"jtj": jtj}) from exc
    cov = cov_log * np.outer(theta, theta)
    opt = float(_optimum(theta[1], theta[2]))
    rng = np.random.default_rng(seed)
    draws = np.exp(rng.multivariate_normal(best.x, cov_log, size=n_resample, method="eigh"))
    opts = _optimum(draws[:, 1], draws[:, 2])
    opts = opts[np.isfinite(opts)]
    i95 = tuple(float(x) for x in np.percentile(opts, [2.5, 97.5]))
    i5 = tuple(float(x) for x in np.percentile(opts, [47.5, 52.5]))
    if not w.min() <= opt <= w.max():
        warnings.warn(
            f"fitted optimum {opt:.3g} Hz lies outside the sampled rates", FitQualityWarning, stacklevel=2
        )
    return RateFit(RateModelParams(*theta), cov, opt, i95, i5, float(best.cost), gnorm, int(best.nfev))


def halving_consistent(rates: dict | None = None, uncertainty: dict | None = None) -> bool:
    """Check the combined-manifold optimum is half the single-manifold one within the quoted error."""
    rates = OPTIMAL_RATES if rates is None else rates
    uncertainty = OPTIMAL_RATE_UNCERTAINTY if uncertainty is None else uncertainty
    return abs(rates["both"] - rates["+1"] / 2) <= uncertainty["both"]
