"""Command-line interface: ``hfgyro {simulate,sweep,metrology,figures,fit}``.

Exit codes: 0 ok, 1 expectation failure, 2 usage or config error,
3 numerical abort. Errors are printed to stderr as one line starting with
``error[<code>:<kind>]``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import evolution as ev
from . import fitting as fit
from . import metrology as met
from . import scenarios as sc
from .config import Config, ConfigError, build_config, load_config, sweep_points
from .hamiltonian import NVParams, PoleError
from .parallel import available_workers, map_ordered
from .units import TWO_PI, UnitError, parse_quantity

EXIT_OK, EXIT_EXPECTATION, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(code: int, kind: str, message: str) -> int:
    text = " ".join(str(message).split())
    print(f"error[{code}:{kind}] {text}", file=sys.stderr)
    return code


def _quantity(text: str, kind: str, key: str) -> float:
    # a bare zero is unambiguous in any unit
    if text.strip() in ("0", "0.0"):
        return 0.0
    return parse_quantity(text, kind, key)


def _emit(text: str, path: str | None):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def _rows_json(columns, rows) -> str:
    return json.dumps([dict(zip(columns, r)) for r in rows], indent=2) + "\n"


# ----------------------------------------------------------------- simulate


def _observable(traj, cfg: Config, name: str):
    if name == "envelope":
        return fit.following_envelope(traj, cfg.scenario.params, cfg.scenario.field.B)
    return ev.measure_signal(traj, "x_NV" if name == "S_x" else "z_NV")


def _summary(traj, cfg: Config, want_fit: bool) -> dict:
    S_z = ev.measure_signal(traj, "z_NV")
    S_x = ev.measure_signal(traj, "x_NV")
    out = {
        "frame": traj.frame,
        "steps": int(round(traj.times[-1] / traj.dt)),
        "dt_s": traj.dt,
        "final_t_s": float(traj.times[-1]),
        "final_S_z": float(S_z[-1]),
        "final_S_x": float(S_x[-1]),
        "max_trace_err": float(np.max(traj.trace_error())),
    }
    spec = cfg.fit or (want_fit and _default_fit(cfg))
    if spec:
        res = fit.fit_decay(traj.times, _observable(traj, cfg, spec.observable), spec.model)
        out["fit"] = {"model": spec.model, "observable": spec.observable, **res.params, "residual_rms": res.residual_rms, "converged": res.converged}
        if cfg.scenario.T1e:
            out["fit"]["tau_over_T1e"] = res.tau / cfg.scenario.T1e
    return out


def _default_fit(cfg: Config):
    from .config import FitSpec

    return FitSpec("exp_envelope", "envelope")


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    s = cfg.scenario
    changes = {}
    if args.frame:
        changes["frame"] = args.frame
    if args.seed is not None:
        changes["seed"] = args.seed
    if changes:
        s = dataclasses.replace(s, **changes)
        cfg = dataclasses.replace(cfg, scenario=s)
    traj = ev.run(s, workers=args.workers)
    out = args.output or str(Path(args.out_dir) / "trajectory.csv")
    _emit(traj.to_csv(), out)
    if args.format == "json" or args.fit:
        print(json.dumps(_summary(traj, cfg, args.fit), indent=2))
    return EXIT_OK


# -------------------------------------------------------------------- sweep

SWEEP_COLUMNS = ("S_z_final", "S_x_final", "deviation_enhanced", "deviation_inertial", "tau_s", "tau_over_T1e", "fit_residual")


def _sweep_task(task):
    raw, = task
    cfg = build_config(raw)
    traj = ev.run(cfg.scenario)
    s = cfg.scenario
    S_z = ev.measure_signal(traj)
    dev_e = dev_i = math.nan
    if s.omega and s.field.B > 0:
        dev_e = met.signal_deviation(traj.times, S_z, s.params, s.field.B, s.omega, "enhanced")
        dev_i = met.signal_deviation(traj.times, S_z, s.params, s.field.B, s.omega, "inertial")
    tau = ratio = resid = math.nan
    if cfg.fit:
        res = fit.fit_decay(traj.times, _observable(traj, cfg, cfg.fit.observable), cfg.fit.model)
        tau, resid = res.tau, res.residual_rms
        if s.T1e:
            ratio = tau / s.T1e
    return (float(S_z[-1]), float(ev.measure_signal(traj, "x_NV")[-1]), dev_e, dev_i, tau, ratio, resid)


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    raw = cfg.raw
    if args.seed is not None:
        raw = dict(raw, scenario=dict(raw["scenario"], seed=args.seed))
        cfg = build_config(raw)
    points = list(sweep_points(cfg))
    keys = [ax.key for ax in cfg.sweep]
    results = map_ordered(_sweep_task, [({k: v for k, v in p.raw.items() if k != "sweep"},) for _, p in points], args.workers)
    columns = keys + list(SWEEP_COLUMNS)
    rows = [[str(assign[k]) for k in keys] + list(r) for (assign, _), r in zip(points, results)]
    text = _rows_json(columns, rows) if args.format == "json" else sc.table_csv(columns, rows)
    _emit(text, args.output or str(Path(args.out_dir) / "sweep.csv"))
    return EXIT_OK


# --------------------------------------------------------------- metrology


def _sens_inputs(args) -> met.SensitivityInputs:
    base = met.SensitivityInputs()
    if args.config:
        cfg = load_config(args.config)
        base = cfg.sensitivity or base
    kw = dataclasses.asdict(base)
    if args.C is not None:
        kw["C"] = args.C
    if args.N is not None:
        kw["N"] = args.N
    for name in ("t_d", "tau", "t"):
        v = getattr(args, name)
        if v is not None:
            kw[name] = parse_quantity(v, "time", name)
    return met.SensitivityInputs(**kw)


def cmd_metrology(args) -> int:
    p = NVParams()
    if args.what == "fidelity":
        rabi = _quantity(args.rabi, "frequency", "rabi")
        det = _quantity(args.detuning, "frequency", "detuning")
        f = float(met.pulse_fidelity(rabi, det))
        text = json.dumps({"rabi_radps": rabi, "detuning_radps": det, "fidelity": f}) + "\n" if args.format == "json" else sc.table_csv(["rabi_radps", "detuning_radps", "fidelity"], [(rabi, det, f)])
        _emit(text, args.output)
        return EXIT_OK
    if args.what == "adiabatic":
        B = _quantity(args.B, "field", "B")
        xi = math.sqrt(args.xi2)
        alpha0 = met.ham.enhancement_factor(p, B)
        row = {"B_gauss": B, "xi2": args.xi2, "alpha0": alpha0, "omega_max_radps": met.omega_max(p, B, xi, alpha0)}
        try:
            row["omega_min_radps"] = met.omega_min(p, B, xi, alpha0)
        except ValueError:
            row["omega_min_radps"] = math.nan
        if args.omega:
            w = _quantity(args.omega, "frequency", "omega")
            row["omega_radps"] = w
            row["M_half_turn"] = float(met.eigenstate_deviation(p, B, w, math.pi / 2 / w, alpha0))
        text = json.dumps(row) + "\n" if args.format == "json" else sc.table_csv(list(row), [tuple(row.values())])
        _emit(text, args.output)
        return EXIT_OK
    inp = _sens_inputs(args)
    if args.what == "sensitivity":
        rows, domega = sc.protocol_table(inp, p)
        if args.protocol != "all":
            rows = [r for r in rows if r[0] == args.protocol]
        columns = ["protocol", "eta_mdegps_sqrthz", "bound_mdegps_sqrthz", "t_opt_s"]
        text = _rows_json(columns, rows) if args.format == "json" else sc.table_csv(columns, rows)
        _emit(text, args.output)
        return EXIT_OK
    # map
    omegas = np.geomspace(_quantity(args.omega_min, "frequency", "omega-min"), _quantity(args.omega_max, "frequency", "omega-max"), args.n_omega)
    fields = np.linspace(_quantity(args.B_min, "field", "B-min"), _quantity(args.B_max, "field", "B-max"), args.n_B)
    m = met.sensitivity_map(omegas, fields, inp, xi=math.sqrt(args.xi2), p=p)
    _emit(m.to_csv(), args.output or str(Path(args.out_dir) / "map.csv"))
    return EXIT_OK


# ----------------------------------------------------------------- figures


def cmd_figures(args) -> int:
    ids = list(sc.FIGURES) if args.all else list(args.ids)
    if not ids:
        raise UsageError("give figure ids or --all")
    unknown = [i for i in ids if i not in sc.FIGURES]
    if unknown:
        return _fail(EXIT_USAGE, "usage", f"unknown figure id(s) {', '.join(unknown)}; known ids: {', '.join(sc.FIGURES)}")
    failed = []
    summary = []
    for fig_id in ids:
        res = sc.run_figure(fig_id, args.out_dir, seed=args.seed or 0, workers=args.workers)
        summary.append({"id": fig_id, "passed": res.passed, "runtime_s": round(res.runtime_s, 2)})
        if args.format != "json":
            print(f"{fig_id}: {'PASS' if res.passed else 'FAIL'} ({res.runtime_s:.1f} s)")
        if not res.passed:
            failed.append(res)
    if args.format == "json":
        print(json.dumps(summary, indent=2))
    for res in failed:
        print(res.diff_report(), file=sys.stderr)
    return EXIT_EXPECTATION if failed else EXIT_OK


# --------------------------------------------------------------------- fit


def _read_csv(path):
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except OSError as exc:
        raise ConfigError(f"cannot read: {exc.strerror}", str(path)) from None
    except ValueError as exc:
        raise ConfigError(f"bad CSV: {exc}", str(path)) from None
    return header, data


def cmd_fit(args) -> int:
    header, data = _read_csv(args.csv)
    for col in ("t_s", args.column):
        if col not in header:
            raise ConfigError(f"column {col!r} not in header", str(args.csv))
    t = data[:, header.index("t_s")]
    y = data[:, header.index(args.column)]
    if args.rate:
        B = _quantity(args.B, "field", "B")
        est = fit.RotationRateEstimator(regime=args.rate, B=B).fit(t, y)
        row = {"regime": args.rate, "omega_radps": est.omega_, "omega_hz": est.omega_ / TWO_PI, "residual_rms": est.residual_rms_, "flagged": bool(est.flagged_)}
    else:
        res = fit.fit_decay(t, y, args.model)
        row = {"model": args.model, **res.params, "residual_rms": res.residual_rms, "converged": res.converged}
    if args.format == "json":
        text = json.dumps(row) + "\n"
    else:
        text = sc.table_csv(list(row), [tuple(row.values())])
    _emit(text, args.output)
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _globals(parser, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=d, help="override the scenario seed")
    parser.add_argument("--workers", type=int, default=d, help="worker processes (default: available CPUs)")
    parser.add_argument("--out-dir", default=argparse.SUPPRESS if suppress else "out", help="output directory (default: out)")
    parser.add_argument("--format", choices=("csv", "json"), default=argparse.SUPPRESS if suppress else "csv")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hfgyro", description="Hyperfine-enhanced NV gyroscope simulator")
    _globals(parser, False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    sim = sub.add_parser("simulate", help="run one scenario and write its trajectory CSV")
    _globals(sim, True)
    sim.add_argument("config")
    sim.add_argument("--frame", choices=("nv", "lab"))
    sim.add_argument("--output", "-o", help="CSV path, '-' for stdout (default: <out-dir>/trajectory.csv)")
    sim.add_argument("--fit", action="store_true", help="fit a decay to the following envelope and print a summary")
    sim.set_defaults(func=cmd_simulate)

    sw = sub.add_parser("sweep", help="run a 1-D or 2-D sweep from the config's sweep section")
    _globals(sw, True)
    sw.add_argument("config")
    sw.add_argument("--output", "-o")
    sw.set_defaults(func=cmd_sweep)

    mt = sub.add_parser("metrology", help="sensitivity map, adiabaticity bounds, protocol table, pulse fidelity")
    _globals(mt, True)
    msub = mt.add_subparsers(dest="what", parser_class=_Parser)
    msub.required = True
    for name in ("map", "sensitivity"):
        q = msub.add_parser(name)
        _globals(q, True)
        q.add_argument("--config", help="YAML file with a sensitivity section")
        q.add_argument("--C", type=float)
        q.add_argument("--N", type=float)
        q.add_argument("--t-d", dest="t_d")
        q.add_argument("--tau")
        q.add_argument("--t")
        q.add_argument("--output", "-o")
        if name == "map":
            q.add_argument("--omega-min", default="2pi*1 Hz")
            q.add_argument("--omega-max", default="2pi*10 MHz")
            q.add_argument("--n-omega", type=int, default=20)
            q.add_argument("--B-min", default="10 G")
            q.add_argument("--B-max", default="1020 G")
            q.add_argument("--n-B", type=int, default=20)
            q.add_argument("--xi2", type=float, default=1e-5)
        else:
            q.add_argument("--protocol", choices=("enhanced", "inertial", "nuclear_ramsey", "nv_ramsey", "all"), default="all")
    ad = msub.add_parser("adiabatic")
    _globals(ad, True)
    ad.add_argument("--B", required=True)
    ad.add_argument("--xi2", type=float, default=1e-5)
    ad.add_argument("--omega", help="also report M at a half turn for this rate")
    ad.add_argument("--output", "-o")
    fd = msub.add_parser("fidelity")
    _globals(fd, True)
    fd.add_argument("--rabi", required=True)
    fd.add_argument("--detuning", required=True)
    fd.add_argument("--output", "-o")
    mt.set_defaults(func=cmd_metrology)

    fg = sub.add_parser("figures", help="run figure scenarios and check their expectations")
    _globals(fg, True)
    fg.add_argument("ids", nargs="*")
    fg.add_argument("--all", action="store_true")
    fg.set_defaults(func=cmd_figures)

    ft = sub.add_parser("fit", help="fit a decay or rotation rate to a trajectory CSV column")
    _globals(ft, True)
    ft.add_argument("csv")
    ft.add_argument("--column", default="S_z")
    ft.add_argument("--model", choices=("exp_envelope", "stretched_exp_cos"), default="exp_envelope")
    ft.add_argument("--rate", choices=("enhanced", "inertial"), help="estimate the rotation rate instead of a decay")
    ft.add_argument("--B", default="50 G")
    ft.add_argument("--output", "-o")
    ft.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.workers is None:
            args.workers = available_workers()
        elif args.workers < 1:
            raise UsageError("--workers must be >= 1")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except (ConfigError, UnitError, PoleError, ev.StepSizeError) as exc:
        return _fail(EXIT_USAGE, "config", exc)
    except sc.UnknownFigureError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except ev.NumericalError as exc:
        return _fail(EXIT_NUMERICAL, "numerical", exc)
    except ValueError as exc:
        return _fail(EXIT_USAGE, "config", exc)
    except FloatingPointError as exc:
        return _fail(EXIT_NUMERICAL, "numerical", exc)


if __name__ == "__main__":
    sys.exit(main())
