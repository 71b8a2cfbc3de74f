"""Command-line entry point: ``nvdnp <subcommand> [flags]``.

Exit status 0 on success, 2 on usage errors, 1 when a computation fails.
Every flag can also be given in a ``--config`` file as ``flag_name = value``;
flags on the command line win.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from typing import Sequence

import numpy as np

from . import __version__
from .calib import (
    COIL_CONSTANT,
    DEFAULT_MARGIN,
    HALL_SENSITIVITY,
    HALL_Z_OFFSET,
    hall_to_field,
    helmholtz_field,
    plan_sweep_band,
    rabi_from_power,
)
from .csvio import fmt, read_config, read_table, write_table
from .errors import DomainError, FitError
from .lzdnp import (
    DEFAULT_HALF_BAND,
    DEFAULT_RABI,
    DEFAULT_SLEW,
    OPTIMAL_RATE_UNCERTAINTY,
    OPTIMAL_RATES,
    DNPSystem,
    RateModelParams,
    SweepProgram,
    halving_consistent,
    propagate_chirp,
    ratchet_cycle,
    rate_model_eval,
    rate_model_fit,
    rate_model_optimum,
)
from .powder import (
    BRANCHES,
    DEFAULT_BROADENING,
    DEFAULT_GRID_STEP,
    convolve_sweep_window,
    powder_spectrum,
    sample_orientations,
)
from .protocol import (
    CRYSTAL_EDGE_CM,
    MOLAR_MASS_COMPOUND,
    MOLAR_MASS_DIAMOND,
    NATURAL_ABUNDANCE_PCT,
    NmrSpectrum,
    background_ratio,
    suppression_report,
)
from .relaxo import (
    DecayRecord,
    RelaxationProfile,
    fit_monoexponential,
    fit_r1_profile,
    knee_field,
    r1_model,
    time_acceleration,
)
from .spinsys import HyperfineTensor, Orientation, PhysicalConstants

SEED_ENV = "NV_DNP_SEED"


class UsageError(Exception):
    pass


def _emit(pairs) -> None:
    for k, v in pairs:
        print(f"{k}={fmt(v)}")


def _constants(a) -> PhysicalConstants:
    return PhysicalConstants(a.delta, a.gamma_e, a.gamma_n)


def _resolve_seed(a) -> int:
    if a.seed is not None:
        return a.seed
    env = os.environ.get(SEED_ENV)
    if env is None or env.strip() == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={env!r} is not an integer") from None


# -- subcommands ---------------------------------------------------------------


def cmd_spectrum(a) -> None:
    c = _constants(a)
    seed = _resolve_seed(a)
    sample = sample_orientations(a.n_orient, seed, a.sampling)
    s = powder_spectrum(c, a.field_mt, sample, a.broadening_mhz, a.grid_step, a.branch)
    if a.window_mhz is not None:
        s = convolve_sweep_window(s, a.window_mhz)
    write_table(a.out, ["freq_mhz", "intensity"], [s.grid, s.values], s.meta)
    _emit([("rows", len(s.grid)), ("area", s.area()), ("peak_mhz", s.grid[np.argmax(s.values)])])


def cmd_dnp_sim(a) -> None:
    _resolve_seed(a)  # deterministic; accepted for a uniform interface
    hf = HyperfineTensor(a.azz, a.azx, a.axx, a.ayy)
    system = DNPSystem(_constants(a), hf, a.field_mt, Orientation(math.radians(a.theta_deg)), a.manifold)
    direction = 1 if a.direction == "up" else -1
    prog = system.program(direction, a.rabi, a.slew, a.half_band)
    if a.rep_rate is not None:
        lo, hi = sorted((prog.f_start, prog.f_end))
        start, end = (lo, hi) if direction > 0 else (hi, lo)
        prog = SweepProgram(start, end, a.rep_rate, a.rabi)
    if a.mode == "ratchet":
        tr = ratchet_cycle(system, prog, a.repolarization, a.cycles, dt=a.dt)
    else:
        prog = SweepProgram(prog.f_start, prog.f_end, prog.repetition_rate, prog.rabi, a.cycles)
        tr = propagate_chirp(system, prog, dt=a.dt, record_every=a.record_every)
    meta = {
        "field_mT": a.field_mt,
        "theta_deg": a.theta_deg,
        "a_zz": a.azz,
        "a_zx": hf.a_zx,
        "manifold": a.manifold,
        "direction": a.direction,
        "rabi_mhz": a.rabi,
        "rep_rate_hz": prog.repetition_rate,
        "band_mhz": prog.band,
        "mode": a.mode,
    }
    write_table(a.out, ["t_s", "nuc_pol", "e_ms0"],
                [tr.times, tr.nuclear_polarization, tr.electron_population_ms0], meta)
    _emit([("final_nuc_pol", tr.final_polarization), ("norm_drift", tr.norm_drift)])


def cmd_sweep_opt(a) -> None:
    seed = _resolve_seed(a)
    if a.input is not None:
        header, data, _ = read_table(a.input)
        if data.shape[1] != 3:
            raise DomainError("sweep-opt input needs columns omega_hz,eps,sigma")
        fit = rate_model_fit(data, n_starts=a.n_starts, seed=seed, n_resample=a.n_resample)
        p = fit.params
        _emit([
            ("amplitude", p.amplitude), ("lambda_hz", p.lam), ("omega_hz", p.omega),
            ("optimum_hz", fit.optimum_rate),
            ("optimum_lo95_hz", fit.interval95[0]), ("optimum_hi95_hz", fit.interval95[1]),
            ("optimum_lo5_hz", fit.interval5[0]), ("optimum_hi5_hz", fit.interval5[1]),
            ("cost", fit.cost),
        ])
    elif None not in (a.amplitude, a.lam, a.omega):
        p = RateModelParams(a.amplitude, a.lam, a.omega)
        _emit([("optimum_hz", rate_model_optimum(p))])
    else:
        _emit([(f"optimal_rate_{k}_hz", v) for k, v in OPTIMAL_RATES.items()]
              + [(f"uncertainty_{k}_hz", v) for k, v in OPTIMAL_RATE_UNCERTAINTY.items()]
              + [("halving_consistent", halving_consistent())])
        return
    if a.out is not None:
        w = np.geomspace(a.curve_min_hz, a.curve_max_hz, a.curve_points)
        write_table(a.out, ["omega_hz", "eps"], [w, rate_model_eval(p, w)],
                    {"amplitude": p.amplitude, "lambda_hz": p.lam, "omega_hz": p.omega})


def cmd_t1fit(a) -> None:
    header, data, _ = read_table(a.input)
    h = [x.lower() for x in header]
    if h[:3] == ["field_mt", "r1_hz", "sigma_hz"]:
        prof = fit_r1_profile(RelaxationProfile(data[:, 0], data[:, 1], data[:, 2]))
        f = prof.fit
        err = f.errors
        _emit([
            ("a_lor", f.a_lor), ("a_lor_err", err[0]), ("w_lor_mt", f.w_lor), ("w_lor_err", err[1]),
            ("c_offset_hz", f.c_offset), ("c_offset_err", err[2]),
            ("knee_field_mt", knee_field(f)), ("reduced_chi2", f.reduced_chi2),
        ])
        if a.out is not None:
            b = np.geomspace(data[:, 0].min(), data[:, 0].max(), a.curve_points)
            write_table(a.out, ["field_mT", "r1_hz"], [b, r1_model(f.a_lor, f.w_lor, f.c_offset, b)],
                        {"knee_field_mT": knee_field(f)})
    elif h[:2] == ["t_s", "signal"]:
        sigma = data[:, 2] if len(h) > 2 and h[2] == "sigma" else None
        d = fit_monoexponential(DecayRecord(data[:, 0], data[:, 1], sigma))
        lo, hi = d.t1_interval()
        _emit([("amplitude", d.amplitude), ("t1_s", d.t1), ("sigma_t1_s", d.sigma_t1),
               ("t1_lo95_s", lo), ("t1_hi95_s", hi)])
        if a.out is not None:
            t = np.linspace(data[0, 0], data[-1, 0], a.curve_points)
            write_table(a.out, ["t_s", "signal"], [t, d.amplitude * np.exp(-t / d.t1)], {"t1_s": d.t1})
    else:
        raise DomainError("t1fit input needs header field_mT,r1_hz,sigma_hz or t_s,signal[,sigma]")


def _read_nmr(path, label) -> NmrSpectrum:
    header, data, _ = read_table(path)
    if data.shape[1] != 2:
        raise DomainError(f"{path}: expected two columns (shift, amplitude)")
    return NmrSpectrum(data[:, 0], data[:, 1], label)


def cmd_suppress(a) -> None:
    up, down = _read_nmr(a.up, "up"), _read_nmr(a.down, "down")
    ref = None if a.reference is None else _read_nmr(a.reference, "diamond")
    band = None if a.band is None else tuple(a.band)
    bgb = None if a.background_band is None else tuple(a.background_band)
    diamond, background, rep = suppression_report(up, down, band, bgb, ref)
    write_table(a.out_diamond, ["shift", "amplitude"], [diamond.grid, diamond.values], {"label": "diamond"})
    write_table(a.out_background, ["shift", "amplitude"], [background.grid, background.values],
                {"label": "background"})
    fid = float("nan") if rep.fidelity is None else rep.fidelity
    cols = [[fid], [rep.suppression_factor], [int(rep.exact_cancel)]]
    write_table(a.out_report, ["fidelity", "suppression_factor", "exact_cancel"], cols)
    _emit([("fidelity", fid), ("suppression_factor", rep.suppression_factor),
           ("exact_cancel", rep.exact_cancel)])


def cmd_calib(a) -> None:
    if a.calc == "rabi":
        b, rabi = rabi_from_power(a.power_w, a.freq_ghz, a.radius_mm, a.gamma_e)
        _emit([("b_field_mt", b), ("rabi_khz", rabi)])
    elif a.calc == "hall":
        v = hall_to_field(a.volts, a.sensitivity, a.z_offset)
        _emit([("bx_mt", v.bx), ("by_mt", v.by), ("bz_mt", v.bz), ("magnitude_mt", v.magnitude),
               ("planning_magnitude_mt", v.planning_magnitude)])
    elif a.calc == "band":
        if a.hall is not None:
            field = hall_to_field(a.hall, a.sensitivity, a.z_offset)
        elif a.field_mt is not None:
            field = a.field_mt
        else:
            raise UsageError("calib band needs --field-mt or --hall")
        plan = plan_sweep_band(_constants(a), field, a.manifold, a.margin_mhz, a.edges)
        rows = [("f_min_mhz", plan.f_min), ("f_max_mhz", plan.f_max), ("width_mhz", plan.width)]
        for i, (lo, hi) in enumerate(plan.intervals):
            rows += [(f"interval{i}_lo_mhz", lo), (f"interval{i}_hi_mhz", hi)]
        _emit(rows)
    elif a.calc == "coil":
        _emit([("field_mt", helmholtz_field(a.current_a, a.coil_constant))])
    elif a.calc == "bgratio":
        r = background_ratio(a.mass_g, a.n_crystals, a.edge_um * 1e-4, a.molar_f, a.molar_d,
                             a.rho_d, a.abundance_pct)
        _emit([("background_ratio", r)])
    elif a.calc == "accel":
        _emit([("time_acceleration", time_acceleration(a.eps, a.t1_high, a.t1_pol))])


# -- parser ----------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help=f"RNG seed (fallback: ${SEED_ENV}, then 0)")
    p.add_argument("--config", default=None, help="flat key = value file supplying flag defaults")


def _add_constants(p: argparse.ArgumentParser) -> None:
    d = PhysicalConstants()
    p.add_argument("--delta", type=float, default=d.delta, help="zero-field splitting, MHz")
    p.add_argument("--gamma-e", type=float, default=d.gamma_e, help="electron gyromagnetic ratio, MHz/mT")
    p.add_argument("--gamma-n", type=float, default=d.gamma_n, help="13C gyromagnetic ratio, MHz/mT")


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="nvdnp", description="NV-diamond 13C DNP models and calculators.")
    top.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = top.add_subparsers(dest="command", metavar="SUBCOMMAND", required=True)

    p = sub.add_parser("spectrum", help="orientation-averaged ESR powder spectrum")
    p.add_argument("--field-mt", type=float, required=True)
    p.add_argument("--n-orient", type=int, default=300)
    p.add_argument("--broadening-mhz", type=float, default=DEFAULT_BROADENING)
    p.add_argument("--grid-step", type=float, default=DEFAULT_GRID_STEP)
    p.add_argument("--branch", choices=sorted(BRANCHES), default="all")
    p.add_argument("--sampling", choices=["stratified", "iid"], default="stratified")
    p.add_argument("--window-mhz", type=float, default=None, help="sweep-window moving average")
    p.add_argument("--out", required=True)
    _add_constants(p)
    _add_common(p)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("dnp-sim", help="chirped-sweep NV-13C polarization transfer")
    p.add_argument("--field-mt", type=float, default=10.0)
    p.add_argument("--theta-deg", type=float, default=45.0)
    p.add_argument("--azz", type=float, default=0.5, help="MHz")
    p.add_argument("--azx", type=float, default=0.15, help="MHz")
    p.add_argument("--axx", type=float, default=0.0, help="MHz")
    p.add_argument("--ayy", type=float, default=0.0, help="MHz")
    p.add_argument("--manifold", type=int, choices=[-1, 1], default=-1)
    p.add_argument("--direction", choices=["up", "down"], default="up")
    p.add_argument("--half-band", type=float, default=DEFAULT_HALF_BAND, help="MHz either side of the line")
    p.add_argument("--slew", type=float, default=DEFAULT_SLEW, help="MHz/us")
    p.add_argument("--rep-rate", type=float, default=None, help="sweeps per second; overrides --slew")
    p.add_argument("--rabi", type=float, default=DEFAULT_RABI, help="MHz")
    p.add_argument("--cycles", type=int, default=10)
    p.add_argument("--mode", choices=["ratchet", "coherent"], default="ratchet")
    p.add_argument("--repolarization", type=float, default=1.0)
    p.add_argument("--record-every", type=int, default=None, help="coherent mode: keep every n-th step")
    p.add_argument("--dt", type=float, default=None, help="time step, s")
    p.add_argument("--out", required=True)
    _add_constants(p)
    _add_common(p)
    p.set_defaults(func=cmd_dnp_sim)

    p = sub.add_parser("sweep-opt", help="fit or evaluate the repetition-rate model")
    p.add_argument("--input", default=None, help="CSV omega_hz,eps,sigma")
    p.add_argument("--amplitude", type=float, default=None)
    p.add_argument("--lam", type=float, default=None, help="Hz")
    p.add_argument("--omega", type=float, default=None, help="Hz")
    p.add_argument("--n-starts", type=int, default=8)
    p.add_argument("--n-resample", type=int, default=4000)
    p.add_argument("--curve-min-hz", type=float, default=1.0)
    p.add_argument("--curve-max-hz", type=float, default=1e4)
    p.add_argument("--curve-points", type=int, default=200)
    p.add_argument("--out", default=None, help="model curve CSV")
    _add_common(p)
    p.set_defaults(func=cmd_sweep_opt)

    p = sub.add_parser("t1fit", help="fit an R1(B) profile or a single decay")
    p.add_argument("--input", required=True, help="CSV field_mT,r1_hz,sigma_hz or t_s,signal[,sigma]")
    p.add_argument("--curve-points", type=int, default=200)
    p.add_argument("--out", default=None, help="fitted curve CSV")
    _add_common(p)
    p.set_defaults(func=cmd_t1fit)

    p = sub.add_parser("suppress", help="split an up/down sweep pair into diamond and background")
    p.add_argument("--up", required=True)
    p.add_argument("--down", required=True)
    p.add_argument("--band", type=float, nargs=2, metavar=("LO", "HI"), default=None,
                   help="diamond-only region for the fidelity")
    p.add_argument("--background-band", type=float, nargs=2, metavar=("LO", "HI"), default=None)
    p.add_argument("--reference", default=None, help="known diamond spectrum (fixtures)")
    p.add_argument("--out-diamond", required=True)
    p.add_argument("--out-background", required=True)
    p.add_argument("--out-report", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_suppress)

    p = sub.add_parser("calib", help="device calibration calculators")
    calc = p.add_subparsers(dest="calc", metavar="CALC", required=True)

    q = calc.add_parser("rabi", help="MW field and Rabi frequency from power")
    q.add_argument("--power-w", type=float, required=True)
    q.add_argument("--freq-ghz", type=float, required=True)
    q.add_argument("--radius-mm", type=float, required=True)
    q.add_argument("--gamma-e", type=float, default=PhysicalConstants().gamma_e)
    _add_common(q)

    q = calc.add_parser("hall", help="field vector from three Hall voltages")
    q.add_argument("--volts", type=float, nargs=3, required=True, metavar=("VX", "VY", "VZ"))
    q.add_argument("--sensitivity", type=float, default=HALL_SENSITIVITY, help="mV/mT")
    q.add_argument("--z-offset", type=float, default=HALL_Z_OFFSET, help="mT")
    _add_common(q)

    q = calc.add_parser("band", help="MW sweep band for a manifold")
    q.add_argument("--field-mt", type=float, default=None)
    q.add_argument("--hall", type=float, nargs=3, default=None, metavar=("VX", "VY", "VZ"))
    q.add_argument("--sensitivity", type=float, default=HALL_SENSITIVITY)
    q.add_argument("--z-offset", type=float, default=HALL_Z_OFFSET)
    q.add_argument("--manifold", choices=["+1", "-1", "both"], default="+1")
    q.add_argument("--margin-mhz", type=float, default=DEFAULT_MARGIN)
    q.add_argument("--edges", choices=["auto", "closed", "exact"], default="auto")
    _add_constants(q)
    _add_common(q)

    q = calc.add_parser("coil", help="Helmholtz field from current")
    q.add_argument("--current-a", type=float, required=True)
    q.add_argument("--coil-constant", type=float, default=COIL_CONSTANT, help="mT/A")
    _add_common(q)

    q = calc.add_parser("bgratio", help="13C outside/inside ratio")
    q.add_argument("--mass-g", type=float, required=True)
    q.add_argument("--n-crystals", type=float, required=True)
    q.add_argument("--edge-um", type=float, default=CRYSTAL_EDGE_CM * 1e4)
    q.add_argument("--molar-f", type=float, default=MOLAR_MASS_COMPOUND)
    q.add_argument("--molar-d", type=float, default=MOLAR_MASS_DIAMOND)
    q.add_argument("--rho-d", type=float, default=3.52)
    q.add_argument("--abundance-pct", type=float, default=NATURAL_ABUNDANCE_PCT)
    _add_common(q)

    q = calc.add_parser("accel", help="averaging-time acceleration")
    q.add_argument("--eps", type=float, required=True)
    q.add_argument("--t1-high", type=float, required=True)
    q.add_argument("--t1-pol", type=float, required=True)
    _add_common(q)
    p.set_defaults(func=cmd_calib)
    return top


def _leaf_parser(top: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.ArgumentParser:
    """Follow subcommand names in ``argv`` down to the innermost parser."""
    p = top
    for tok in argv:
        subs = [a for a in p._actions if isinstance(a, argparse._SubParsersAction)]
        if not subs:
            break
        if tok in subs[0].choices:
            p = subs[0].choices[tok]
    return p


def _apply_config(top, argv) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return
    leaf = _leaf_parser(top, argv)
    try:
        cfg = read_config(known.config)
    except OSError as exc:
        leaf.error(f"cannot read config: {exc}")
    except DomainError as exc:
        leaf.error(str(exc))
    actions = {a.dest: a for a in leaf._actions if a.option_strings}
    defaults = {}
    for key, raw in cfg.items():
        act = actions.get(key)
        if act is None or key in ("config", "help"):
            leaf.error(f"unknown config key {key!r}")
        vals = raw.split() if act.nargs not in (None, "?") else [raw]
        try:
            conv = [act.type(v) if act.type else v for v in vals]
        except ValueError:
            leaf.error(f"config key {key!r}: bad value {raw!r}")
        if act.choices is not None and any(v not in act.choices for v in conv):
            leaf.error(f"config key {key!r}: {raw!r} not in {list(act.choices)}")
        defaults[key] = conv if act.nargs not in (None, "?") else conv[0]
        act.required = False
    leaf.set_defaults(**defaults)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        a.func(a)
    except UsageError as exc:
        print(f"nvdnp: error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, FitError, OSError, ValueError) as exc:
        print(f"nvdnp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
