"""NV electron and electron-nuclear spin Hamiltonians.

Units throughout: MHz for energies and frequencies, mT for fields,
radians for angles. Spin-1 operators use the standard angular-momentum
matrices with ``S_z = diag(1, 0, -1)``; the ``13C`` spin-1/2 operators are
``I = sigma / 2``. Product-space operators are ordered electron (x) nucleus.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DomainError, PerturbativeValidityWarning

_S2 = math.sqrt(2.0)

SX = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex) / _S2
SY = np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=complex) / _S2
SZ = np.diag([1.0, 0.0, -1.0]).astype(complex)

IX = np.array([[0, 0.5], [0.5, 0]], dtype=complex)
IY = np.array([[0, -0.5j], [0.5j, 0]], dtype=complex)
IZ = np.diag([0.5, -0.5]).astype(complex)

_E3 = np.eye(3, dtype=complex)
_E2 = np.eye(2, dtype=complex)

HERMITIAN_RTOL = 1e-12
RESIDUAL_RTOL = 1e-9
ORTHONORMAL_TOL = 1e-10


@dataclass(frozen=True)
class PhysicalConstants:
    """Zero-field splitting and gyromagnetic ratios (MHz, MHz/mT)."""

    delta: float = 2870.0
    gamma_e: float = 28.0
    gamma_n: float = 0.01071

    def __post_init__(self):
        for name in ("delta", "gamma_e", "gamma_n"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class Orientation:
    """Direction of the polarizing field in the NV frame."""

    theta: float
    phi: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.theta <= math.pi:
            raise DomainError(f"theta={self.theta} outside [0, pi]")
        if not 0.0 <= self.phi < 2 * math.pi:
            raise DomainError(f"phi={self.phi} outside [0, 2pi)")

    def unit_vector(self) -> NDArray[np.float64]:
        st = math.sin(self.theta)
        return np.array(
            [st * math.cos(self.phi), st * math.sin(self.phi), math.cos(self.theta)]
        )


@dataclass(frozen=True)
class HyperfineTensor:
    """Electron-13C hyperfine components in the NV frame, MHz.

    ``a_zx`` defaults to ``0.3 * |a_zz|`` when omitted.
    """

    a_zz: float
    a_zx: float | None = None
    a_xx: float = 0.0
    a_yy: float = 0.0
    a_xz: float = 0.0

    def __post_init__(self):
        if abs(self.a_zz) > 10.0:
            raise DomainError(f"|a_zz|={abs(self.a_zz)} MHz outside supported range (<= 10)")
        if self.a_zx is None:
            object.__setattr__(self, "a_zx", 0.3 * abs(self.a_zz))

    @classmethod
    def zero(cls) -> "HyperfineTensor":
        return cls(0.0, 0.0)

    def flipped(self) -> "HyperfineTensor":
        """Same tensor with the sign of ``a_zz`` reversed."""
        return HyperfineTensor(-self.a_zz, self.a_zx, self.a_xx, self.a_yy, self.a_xz)


@dataclass(frozen=True)
class EigenSystem:
    """Ascending energies and matching eigenvectors (as columns)."""

    energies: NDArray[np.float64]
    vectors: NDArray[np.complex128]

    @property
    def dim(self) -> int:
        return len(self.energies)


class Transition(NamedTuple):
    frequency: float
    intensity: float
    pair: tuple[int, int]


@dataclass(frozen=True)
class TransitionTable:
    """All ``k < l`` eigenstate pairs with frequency ``E_l - E_k`` and intensity."""

    entries: tuple[Transition, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[Transition]:
        return iter(self.entries)

    def __getitem__(self, i) -> Transition:
        return self.entries[i]

    @property
    def frequencies(self) -> NDArray[np.float64]:
        return np.array([t.frequency for t in self.entries])

    @property
    def intensities(self) -> NDArray[np.float64]:
        return np.array([t.intensity for t in self.entries])

    def by_pair(self, k: int, l: int) -> Transition:
        for t in self.entries:
            if t.pair == (k, l):
                return t
        raise KeyError((k, l))


def field_vector(b: float, o: Orientation) -> NDArray[np.float64]:
    """Cartesian field (mT) of magnitude ``b`` along ``o`` in the NV frame."""
    if b < 0:
        raise DomainError("field magnitude must be non-negative")
    return b * o.unit_vector()


def check_hermitian(h: ArrayLike) -> NDArray[np.complex128]:
    """Return ``h`` as a complex square array, rejecting non-Hermitian input."""
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {h.shape}")
    scale = max(np.linalg.norm(h), np.finfo(float).tiny)
    if np.linalg.norm(h - h.conj().T) > HERMITIAN_RTOL * scale:
        raise DomainError("matrix is not Hermitian")
    return h


def _fix_phases(vectors: NDArray) -> NDArray:
    # first non-negligible component of every column made real-positive
    mags = np.abs(vectors)
    first = np.argmax(mags > 1e-10 * mags.max(axis=-2, keepdims=True), axis=-2)
    lead = np.take_along_axis(vectors, first[..., None, :], axis=-2)
    return vectors * (np.abs(lead) / lead)


def _check_eigensystem(h: NDArray, energies: NDArray, vectors: NDArray) -> None:
    norm_h = np.linalg.norm(h, ord=2, axis=(-2, -1))
    resid = np.linalg.norm(h @ vectors - vectors * energies[..., None, :], axis=-2)
    if np.any(resid > RESIDUAL_RTOL * np.maximum(norm_h, 1.0)[..., None]):
        raise np.linalg.LinAlgError("eigen-residual bound violated")
    dim = h.shape[-1]
    gram = np.swapaxes(vectors.conj(), -2, -1) @ vectors
    if np.any(np.abs(gram - np.eye(dim)) > ORTHONORMAL_TOL):
        raise np.linalg.LinAlgError("eigenvectors not orthonormal")


def eig_hermitian(h: ArrayLike) -> EigenSystem:
    """Diagonalize a Hermitian matrix.

    Energies are ascending; each eigenvector has its first non-negligible
    component real and positive, so the result is deterministic. The
    residual and orthonormality bounds are verified on every call.
    """
    h = check_hermitian(h)
    energies, vectors = np.linalg.eigh(h)
    vectors = _fix_phases(vectors)
    _check_eigensystem(h, energies, vectors)
    return EigenSystem(energies, vectors)


def eig_hermitian_batch(h: NDArray) -> tuple[NDArray, NDArray]:
    """Vectorized :func:`eig_hermitian` over a stack of matrices ``(..., d, d)``."""
    h = np.asarray(h, dtype=complex)
    energies, vectors = np.linalg.eigh(h)
    vectors = _fix_phases(vectors)
    _check_eigensystem(h, energies, vectors)
    return energies, vectors


def build_electron_hamiltonian(c: PhysicalConstants, b_pol: float, o: Orientation) -> NDArray:
    """Spin-1 NV Hamiltonian ``delta*Sz^2 + gamma_e*B*(Sx sin(theta) + Sz cos(theta))``.

    The field is taken in the x-z plane of the NV frame, so the result does
    not depend on ``o.phi``.
    """
    if b_pol < 0:
        raise DomainError("field magnitude must be non-negative")
    zeeman = c.gamma_e * b_pol * (SX * math.sin(o.theta) + SZ * math.cos(o.theta))
    return c.delta * (SZ @ SZ) + zeeman


def initial_electron_density(c: PhysicalConstants | None = None) -> NDArray:
    """Optically pumped electron state ``1 - Sz^2/3``, deliberately unnormalized."""
    return _E3 - (SZ @ SZ) / 3.0


def transition_table(es: EigenSystem, rho: ArrayLike) -> TransitionTable:
    """Transition frequencies and powder-averaged intensities.

    Intensity of pair ``(k, l)`` is ``sum_m |<k|S_m|l>|^2`` times the
    population difference ``<k|rho|k> - <l|rho|l>``; negative differences
    are clamped to zero.
    """
    rho = np.asarray(rho, dtype=complex)
    if es.dim != 3 or rho.shape != (3, 3):
        raise DomainError("transition_table needs a 3-level electron eigensystem and 3x3 rho")
    v = es.vectors
    pops = np.real(np.einsum("ik,ij,jk->k", v.conj(), rho, v))
    entries = []
    for k in range(3):
        for l in range(k + 1, 3):
            strength = sum(abs(v[:, k].conj() @ s @ v[:, l]) ** 2 for s in (SX, SY, SZ))
            weight = max(pops[k] - pops[l], 0.0)
            entries.append(
                Transition(float(es.energies[l] - es.energies[k]), float(strength * weight), (k, l))
            )
    return TransitionTable(tuple(entries))


# pair order used by the batched routine: (0,1), (0,2), (1,2)
PAIRS = ((0, 1), (0, 2), (1, 2))


def electron_transitions(
    c: PhysicalConstants, b_pol: float, theta: ArrayLike
) -> tuple[NDArray, NDArray]:
    """Vectorized transition table over many polar angles.

    Returns ``(frequencies, intensities)`` each of shape ``(n, 3)``, columns
    ordered as :data:`PAIRS`. For fields below ``delta / gamma_e`` column 0 is
    the ``m_s = -1`` branch, column 1 the ``m_s = +1`` branch and column 2 the
    double-quantum transition.
    """
    if b_pol < 0:
        raise DomainError("field magnitude must be non-negative")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    s, co = np.sin(theta), np.cos(theta)
    h = c.delta * (SZ @ SZ) + c.gamma_e * b_pol * (
        s[:, None, None] * SX + co[:, None, None] * SZ
    )
    energies, v = eig_hermitian_batch(h)
    rho = initial_electron_density(c)
    pops = np.real(np.einsum("nik,ij,njk->nk", v.conj(), rho, v))
    freqs = np.empty((len(theta), 3))
    intens = np.empty((len(theta), 3))
    vh = np.swapaxes(v.conj(), -2, -1)
    elems = [vh @ op @ v for op in (SX, SY, SZ)]
    strength = sum(np.abs(m) ** 2 for m in elems)
    for j, (k, l) in enumerate(PAIRS):
        freqs[:, j] = energies[:, l] - energies[:, k]
        intens[:, j] = strength[:, k, l] * np.clip(pops[:, k] - pops[:, l], 0.0, None)
    return freqs, intens


def build_coupled_hamiltonian(
    c: PhysicalConstants, b_vec: ArrayLike, hf: HyperfineTensor
) -> NDArray:
    """6x6 NV-13C Hamiltonian in the electron (x) nucleus product basis.

    ``delta*Sz^2 + gamma_e*B.S - gamma_n*B.I + A_zz SzIz + A_yy SyIy
    + A_xx SxIx + A_xz SxIz + A_zx SzIx``. The electron Zeeman term carries
    the electron's negative gyromagnetic sign, which puts ``m_s = -1`` below
    ``m_s = +1`` as in the electron-only Hamiltonian.
    """
    bx, by, bz = np.asarray(b_vec, dtype=float)
    b_dot_s = bx * SX + by * SY + bz * SZ
    b_dot_i = bx * IX + by * IY + bz * IZ
    h = c.delta * np.kron(SZ @ SZ, _E2)
    h = h + c.gamma_e * np.kron(b_dot_s, _E2) - c.gamma_n * np.kron(_E3, b_dot_i)
    h = h + hf.a_zz * np.kron(SZ, IZ) + hf.a_yy * np.kron(SY, IY) + hf.a_xx * np.kron(SX, IX)
    h = h + hf.a_xz * np.kron(SX, IZ) + hf.a_zx * np.kron(SZ, IX)
    return h


def nuclear_splittings(
    c: PhysicalConstants, hf: HyperfineTensor, b_pol: float, o: Orientation
) -> tuple[float, float]:
    """13C splittings ``(omega_plus, omega_minus)`` in the ``m_s = +1, -1`` manifolds."""
    gz = c.gamma_n * b_pol * math.cos(o.theta)
    return math.hypot(hf.a_zz - gz, hf.a_zx), math.hypot(hf.a_zz + gz, hf.a_zx)


def perturbative(c: PhysicalConstants, b_pol: float) -> bool:
    """True while ``gamma_e*B/delta < 0.5``, the validity guard of the m_s=0 expansion."""
    return c.gamma_e * b_pol / c.delta < 0.5


def effective_larmor(
    c: PhysicalConstants, hf: HyperfineTensor, b_pol: float, o: Orientation
) -> float:
    """Second-order 13C Larmor frequency in the ``m_s = 0`` manifold.

    Emits :class:`PerturbativeValidityWarning` (but still returns a value)
    when the field is outside the perturbative regime.
    """
    if not perturbative(c, b_pol):
        warnings.warn(
            f"gamma_e*B/delta = {c.gamma_e * b_pol / c.delta:.3g} >= 0.5; "
            "second-order estimate unreliable",
            PerturbativeValidityWarning,
            stacklevel=2,
        )
    transverse = math.hypot(hf.a_xx, hf.a_zx) * math.cos(o.phi) ** 2 + hf.a_yy * math.sin(o.phi) ** 2
    return c.gamma_n * b_pol + 2 * (c.gamma_e * b_pol / c.delta) * math.sin(o.theta) * transverse


def low_field_regime(
    c: PhysicalConstants, hf: HyperfineTensor, b_pol: float, o: Orientation
) -> bool:
    """Hierarchy predicate ``omega_L < |A_zz|`` using the second-order Larmor frequency."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PerturbativeValidityWarning)
        return effective_larmor(c, hf, b_pol, o) < abs(hf.a_zz)


@dataclass(frozen=True)
class ManifoldSplittings:
    """Nuclear splittings read off the 6x6 spectrum, keyed by electron manifold."""

    m0: float
    minus: float
    plus: float
    sz: NDArray = field(repr=False)


def coupled_manifold_splittings(
    c: PhysicalConstants, hf: HyperfineTensor, b_pol: float, o: Orientation
) -> ManifoldSplittings:
    """Exact per-manifold 13C splittings from diagonalizing the coupled Hamiltonian."""
    es = eig_hermitian(build_coupled_hamiltonian(c, field_vector(b_pol, o), hf))
    e = es.energies
    sz_op = np.kron(SZ, _E2)
    sz = np.real(np.einsum("ik,ij,jk->k", es.vectors.conj(), sz_op, es.vectors))
    # levels pair up as (m0, lower, upper); the lower pair is m_s=-1 for cos(theta) >= 0
    lower, upper = e[3] - e[2], e[5] - e[4]
    if sz[2] + sz[3] > sz[4] + sz[5]:
        lower, upper = upper, lower
    return ManifoldSplittings(float(e[1] - e[0]), float(lower), float(upper), sz)
