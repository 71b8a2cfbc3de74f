import math
import warnings

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from nvdnp.errors import DomainError, FitError, FitQualityWarning, SubspaceError
from nvdnp.lzdnp import (
    OPTIMAL_RATE_UNCERTAINTY,
    OPTIMAL_RATES,
    DNPSystem,
    PolarizationTrace,
    RateModelParams,
    SweepProgram,
    addressed_subspace,
    halving_consistent,
    landau_zener_probability,
    propagate_chirp,
    rate_model_eval,
    rate_model_fit,
    rate_model_optimum,
    ratchet_cycle,
    repolarize,
    rotating_frame_generator,
    sweep_unitary,
    two_level_transfer,
)
from nvdnp.spinsys import SX, HyperfineTensor, Orientation, electron_transitions

SYS = DNPSystem()


@pytest.fixture(scope="module")
def up_unitary():
    return sweep_unitary(SYS, SYS.program(1))


# -- programs ---------------------------------------------------------------


def test_program_rates():
    p = SweepProgram(2580.0, 2586.0, 100.0, 0.2)
    assert p.direction == 1 and p.reversed().direction == -1
    assert p.sweep_rate == pytest.approx(600.0)
    assert p.duration == pytest.approx(0.01)
    assert p.slew == pytest.approx(6e-4)


@pytest.mark.parametrize(
    "args", [(1.0, 1.0, 10.0, 0.1), (1.0, 2.0, 0.0, 0.1), (1.0, 2.0, 10.0, -0.1)]
)
def test_program_validation(args):
    with pytest.raises(DomainError):
        SweepProgram(*args)


def test_default_program_is_40_mhz_per_ms():
    p = SYS.program(1)
    assert p.slew == pytest.approx(0.04)
    assert 0.5 * (p.f_start + p.f_end) == pytest.approx(SYS.subspace().center)


def test_trace_bounds_enforced():
    with pytest.raises(DomainError):
        PolarizationTrace(np.zeros(2), np.array([0.0, 1.5]), np.zeros(2))
    with pytest.raises(DomainError):
        PolarizationTrace(np.zeros(2), np.zeros(2), np.zeros(3))


# -- rotating frame ---------------------------------------------------------


def test_generator_hermitian_and_diagonal_without_drive():
    h6 = SYS.hamiltonian()
    g = rotating_frame_generator(h6, 2590.0, 0.3)
    assert g.shape == (4, 4)
    np.testing.assert_allclose(g, g.conj().T, atol=1e-14)
    g0 = rotating_frame_generator(h6, 2590.0, 0.0)
    np.testing.assert_array_equal(g0, np.diag(np.diag(g0)))


def test_generator_gap_equals_rabi_without_hyperfine():
    system = DNPSystem(hyperfine=HyperfineTensor.zero())
    sub = system.subspace()
    g = rotating_frame_generator(system.hamiltonian(), sub.center, 0.37)
    w = np.linalg.eigvalsh(g)
    # two nuclear copies of a resonant two-level system
    gaps = sorted([w[2] - w[0], w[3] - w[1]])
    np.testing.assert_allclose(gaps, [0.37, 0.37], rtol=1e-9)


def test_crossing_diagram_matches_perturbative_scan():
    # eigenvalue-vs-detuning scan at weak drive: four avoided crossings at
    # f = E(-1, x) - E(0, y) with gaps rabi * |<0y|Sx|-1x>| / max overlap
    rabi = 0.002
    sub = SYS.subspace()
    h6 = SYS.hamiltonian()
    e = sub.energies
    x = sub.vectors.conj().T @ np.kron(SX, np.eye(2)) @ sub.vectors
    c = np.abs(x[0:2, 2:4])
    c = c / np.linalg.svd(x[0:2, 2:4], compute_uv=False)[0]
    for y in range(2):
        for k in range(2):
            f_cross = e[2 + k] - e[y]
            fs = f_cross + np.linspace(-0.02, 0.02, 801)
            gaps = []
            for f in fs:
                w = np.linalg.eigvalsh(rotating_frame_generator(h6, f, rabi))
                gaps.append(np.min(np.diff(w)))
            i = int(np.argmin(gaps))
            assert fs[i] == pytest.approx(f_cross, abs=1e-4)
            assert gaps[i] == pytest.approx(rabi * c[y, k], rel=2e-2, abs=2e-5)
    # the worked configuration has two wide and two narrow crossings
    flat = np.sort(c.ravel())
    assert flat[1] < 0.5 * flat[2]


def test_subspace_ordering_and_center():
    sub = SYS.subspace()
    f_minus = electron_transitions(SYS.constants, 10.0, [math.pi / 4])[0][0, 0]
    assert sub.center == pytest.approx(f_minus, abs=0.5)
    plus = DNPSystem(manifold=1).subspace()
    assert plus.center > 2870 > sub.center


def test_subspace_errors_when_manifolds_mix():
    with pytest.raises(SubspaceError):
        DNPSystem(orientation=Orientation(math.pi / 2)).subspace()
    with pytest.raises(SubspaceError):
        DNPSystem(field_mt=0.0).subspace()
    with pytest.raises(DomainError):
        addressed_subspace(np.eye(3))


# -- Landau-Zener oracle ----------------------------------------------------

LZ_PAIRS = [
    (0.05, 0.01), (0.3, 0.2), (0.5, 1.0), (0.2, 0.5), (0.15, 0.3),
    (0.1, 0.2), (0.05, 0.1), (0.1, 1.0), (0.2, 4.0), (0.4, 10.0),
]


@pytest.mark.parametrize("gap,slew", LZ_PAIRS)
def test_two_level_crossing_matches_landau_zener(gap, slew):
    assert two_level_transfer(gap, slew) == pytest.approx(landau_zener_probability(gap, slew), rel=1e-2)


def test_landau_zener_regimes_covered():
    p = [landau_zener_probability(g, v) for g, v in LZ_PAIRS]
    assert min(p) < 0.1 and max(p) > 0.98


def test_landau_zener_closed_form():
    # angular form with G = 2 pi g, V = 2 pi v reduces to pi^2 g^2 / v
    assert landau_zener_probability(0.2, 0.5) == pytest.approx(1 - math.exp(-math.pi**2 * 0.04 / 0.5))
    with pytest.raises(DomainError):
        landau_zener_probability(0.1, 0.0)


# -- coherent sweeps --------------------------------------------------------


def test_no_drive_freezes_everything():
    p = SYS.program(1)
    p = SweepProgram(p.f_start, p.f_end, p.repetition_rate, 0.0)
    tr = propagate_chirp(SYS, p, record_every=1000)
    # m_s=0 eigenstates are not exact products, leaving ~1e-7 precession along n
    np.testing.assert_allclose(tr.nuclear_polarization, tr.nuclear_polarization[0], atol=1e-6)
    np.testing.assert_allclose(tr.electron_population_ms0, tr.electron_population_ms0[0], atol=1e-9)
    assert tr.electron_population_ms0[0] > 0.98


def test_sweep_unitary_is_unitary(up_unitary):
    np.testing.assert_allclose(up_unitary.conj().T @ up_unitary, np.eye(6), atol=1e-10)


def test_norm_preserved_per_sweep():
    p = SYS.program(1)
    p = SweepProgram(p.f_start, p.f_end, p.repetition_rate, p.rabi, n_sweeps=3)
    tr = propagate_chirp(SYS, p, record_every=2000)
    assert tr.norm_drift <= 1e-8
    assert np.all(np.diff(tr.times) > 0)
    assert tr.times[-1] == pytest.approx(3 * p.duration)


def test_direction_reverses_polarization_sign():
    up = propagate_chirp(SYS, SYS.program(1)).final_polarization
    down = propagate_chirp(SYS, SYS.program(-1)).final_polarization
    assert up > 0.5 and down < -0.5
    assert abs(up + down) <= 0.05 * abs(up - down) / 2


def test_step_size_convergence():
    p = SYS.program(1)
    base = propagate_chirp(SYS, p, dt=1e-8).final_polarization
    half = propagate_chirp(SYS, p, dt=5e-9).final_polarization
    assert abs(base - half) < 1e-4
    default = propagate_chirp(SYS, p).final_polarization
    assert abs(default - half) < 1e-4


def test_coarse_step_rejected():
    with pytest.raises(DomainError):
        propagate_chirp(SYS, SYS.program(1), dt=1e-7)


def test_sign_coupling_duality():
    # positive A_zz polarizes through the -1 manifold, negative through +1,
    # with the same sign for the same sweep direction
    a = DNPSystem()
    b = DNPSystem(hyperfine=HyperfineTensor(-0.5, 0.15), manifold=1)
    for d in (1, -1):
        pa = ratchet_cycle(a, a.program(d), 1.0, 30).final_polarization
        pb = ratchet_cycle(b, b.program(d), 1.0, 30).final_polarization
        assert np.sign(pa) == np.sign(pb) == d


def test_full_six_level_close_to_subspace():
    # spectator manifold is ~490 MHz off resonance; its effect is tiny
    p = SYS.program(1, slew=1.0, half_band=1.0)
    a = propagate_chirp(SYS, p).final_polarization
    b = propagate_chirp(SYS, p, full=True).final_polarization
    assert abs(a - b) < 1e-2


# -- ratchet ----------------------------------------------------------------


def superoperator(u, p):
    """36x36 map of one cycle built column by column from basis matrices."""
    cols = []
    for k in range(36):
        e = np.zeros(36, complex)
        e[k] = 1
        r = e.reshape(6, 6)
        cols.append(repolarize(u @ r @ u.conj().T, p).ravel())
    return np.array(cols).T


def pol_of(rho, sub):
    from nvdnp.lzdnp import observables

    return observables(rho, sub)[0]


def test_reset_preserves_nuclear_state():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    rho = a @ a.conj().T
    rho /= np.trace(rho)
    out = repolarize(rho, 0.7)
    nuc = lambda r: np.einsum("aiaj->ij", r.reshape(3, 2, 3, 2))  # noqa: E731
    np.testing.assert_allclose(nuc(out), nuc(rho), atol=1e-14)
    assert np.trace(out).real == pytest.approx(1.0)
    with pytest.raises(DomainError):
        repolarize(rho, 1.5)


@pytest.mark.parametrize("p", [1.0, 0.5])
def test_ratchet_matches_superoperator_composition(up_unitary, p):
    tr = ratchet_cycle(SYS, SYS.program(1), p, 12)
    s = superoperator(up_unitary, p)
    rho = np.kron(np.diag([0, 1, 0]), np.eye(2) / 2).astype(complex).ravel()
    sub = SYS.subspace()
    for k in range(1, 13):
        rho = s @ rho
        assert tr.nuclear_polarization[k] == pytest.approx(pol_of(rho.reshape(6, 6), sub), abs=1e-9)


def test_ratchet_monotone_to_fixed_point(up_unitary):
    tr = ratchet_cycle(SYS, SYS.program(1), 1.0, 40)
    s = superoperator(up_unitary, 1.0)
    w, v = np.linalg.eig(s)
    fixed = v[:, np.argmin(np.abs(w - 1))].reshape(6, 6)
    fixed /= np.trace(fixed)
    p_fix = pol_of(fixed, SYS.subspace())
    assert tr.final_polarization == pytest.approx(p_fix, abs=1e-6)
    # grows monotonically until it is within 1e-3 of saturation
    mag = np.abs(tr.nuclear_polarization)
    rising = mag[:-1] < p_fix - 1e-3
    assert np.all(np.diff(mag)[rising] > 0)
    assert np.all(np.abs(mag - p_fix)[1:] <= np.abs(mag - p_fix)[1] + 1e-12)


def test_ratchet_sign_flip_antisymmetry():
    up = ratchet_cycle(SYS, SYS.program(1), 1.0, 30).final_polarization
    down = ratchet_cycle(SYS, SYS.program(-1), 1.0, 30).final_polarization
    assert up > 0 > down
    assert abs(up + down) <= 0.05 * abs(up - down) / 2


def test_no_repolarization_is_coherent_orbit(up_unitary):
    tr = ratchet_cycle(SYS, SYS.program(1), 0.0, 6)
    rho = np.kron(np.diag([0, 1, 0]), np.eye(2) / 2).astype(complex)
    sub = SYS.subspace()
    for k in range(1, 7):
        rho = up_unitary @ rho @ up_unitary.conj().T
        assert tr.nuclear_polarization[k] == pytest.approx(pol_of(rho, sub), abs=1e-9)
    # without fresh electron polarization nothing accumulates beyond one sweep's worth
    assert np.max(np.abs(tr.nuclear_polarization)) < np.abs(ratchet_cycle(SYS, SYS.program(1), 1.0, 6).nuclear_polarization).max()


def test_direction_reversal_mid_run():
    first = ratchet_cycle(SYS, SYS.program(1), 1.0, 10)
    second = ratchet_cycle(SYS, SYS.program(-1), 1.0, 10, initial=first.final_state)
    assert first.final_polarization > 0.9
    assert second.final_polarization < -0.9
    assert second.nuclear_polarization[0] == pytest.approx(first.final_polarization)


def test_ratchet_needs_cycles():
    with pytest.raises(DomainError):
        ratchet_cycle(SYS, SYS.program(1), 1.0, 0)


# -- rate model -------------------------------------------------------------

P0 = RateModelParams(1000.0, 10.0, 20.0)


def test_rate_model_limits():
    assert rate_model_eval(P0, 1e-3) < 1e-300 or rate_model_eval(P0, 1e-3) == 0.0
    assert rate_model_eval(P0, 1e9) < 1e-3
    assert rate_model_eval(P0, 100.0) > 0
    with pytest.raises(DomainError):
        rate_model_eval(P0, 0.0)
    with pytest.raises(DomainError):
        RateModelParams(1.0, -1.0, 1.0)


@pytest.mark.parametrize("lam,om", [(10.0, 20.0), (3.0, 40.0), (20.0, 5.0), (8.0, 30.0)])
def test_optimum_matches_dense_grid_and_golden_section(lam, om):
    p = RateModelParams(1.0, lam, om)
    grid = np.geomspace(1e-2, 1e6, 200001)
    w0 = grid[np.argmax(rate_model_eval(p, grid))]
    res = minimize_scalar(
        lambda lw: -rate_model_eval(p, math.exp(lw)),
        bracket=(math.log(w0) - 0.01, math.log(w0), math.log(w0) + 0.01),
        method="golden",
        tol=1e-12,
    )
    assert rate_model_optimum(p) == pytest.approx(math.exp(res.x), rel=1e-6)


def test_fit_noiseless_recovery():
    w = np.geomspace(5, 3000, 20)
    y = rate_model_eval(P0, w)
    f = rate_model_fit(np.c_[w, y, 0.05 * y])
    np.testing.assert_allclose(f.params.as_array(), P0.as_array(), rtol=1e-6)
    assert f.optimum_rate == pytest.approx(rate_model_optimum(P0), rel=1e-9)


def test_fit_noisy_example_seed3():
    w = np.geomspace(5, 3000, 20)
    y = rate_model_eval(P0, w)
    rng = np.random.default_rng(3)
    f = rate_model_fit(np.c_[w, y * (1 + 0.05 * rng.normal(size=20)), 0.05 * y])
    np.testing.assert_allclose(f.params.as_array(), P0.as_array(), rtol=0.05)
    opt = rate_model_optimum(P0)
    assert f.interval95[0] <= opt <= f.interval95[1]
    assert f.interval95[0] <= f.interval5[0] <= f.optimum_rate * 1.01
    assert f.interval5[1] <= f.interval95[1]
    assert f.covariance.shape == (3, 3)


def test_fit_interval_is_seeded():
    w = np.geomspace(5, 3000, 20)
    y = rate_model_eval(P0, w) * (1 + 0.05 * np.random.default_rng(1).normal(size=20))
    data = np.c_[w, y, 0.05 * y]
    assert rate_model_fit(data, seed=4).interval95 == rate_model_fit(data, seed=4).interval95


def test_fit_design_errors():
    with pytest.raises(DomainError):
        rate_model_fit(np.c_[np.full(6, 100.0), np.ones(6), np.ones(6)])
    with pytest.raises(DomainError):
        rate_model_fit(np.c_[np.arange(1.0, 5.0), np.ones(4), np.ones(4)])


def test_fit_reports_nonconvergence():
    w = np.geomspace(5, 3000, 20)
    y = rate_model_eval(P0, w)
    with pytest.raises(FitError) as err:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rate_model_fit(np.c_[w, y, 0.05 * y], n_starts=1, max_nfev=1)
    assert "gradient_norm" in err.value.diagnostics or "n_starts" in err.value.diagnostics


def test_fit_warns_when_optimum_outside_data():
    w = np.geomspace(1000, 5000, 8)
    y = rate_model_eval(P0, w)
    with pytest.warns(FitQualityWarning):
        rate_model_fit(np.c_[w, y, 0.05 * y])


def test_shipped_rate_defaults():
    assert OPTIMAL_RATES == {"+1": 147.0, "-1": 133.0, "both": 73.0}
    assert OPTIMAL_RATE_UNCERTAINTY["both"] == 29.0
    assert halving_consistent()
    assert not halving_consistent({"+1": 147.0, "both": 120.0}, {"both": 29.0})
