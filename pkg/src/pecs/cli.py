"""Command-line front end: ``pecs <subcommand> [options]``.

Every run writes its artifacts to ``--out-dir``, together with
``config.json`` (the fully resolved options, re-runnable with
``pecs --config config.json``) and ``report.json`` (status, outputs,
results and any warnings). Exit status is 0 on success, 1 when a module
raises, and 2 for usage or configuration errors.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, PecsError, PlotError

DEFAULT_SEED = 0
REPORT = "report.json"
CONFIG = "config.json"
PATH_KEYS = ("input", "g2", "line_trace", "saturation", "irf", "out", "model_file", "inputs")
FIGURES = ("fig2b", "fig4", "fig5a", "fig5b", "fig5c", "fig5d")


class UsageError(Exception):
    """Bad flags or configuration; mapped to exit status 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# argument helpers
# --------------------------------------------------------------------------

def _float_list(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ranges(text):
    out = []
    for part in str(text).split(","):
        lo, sep, hi = part.partition(":")
        if not sep:
            raise argparse.ArgumentTypeError(f"range {part!r} must look like low:high")
        try:
            out.append((float(lo), float(hi)))
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"range {part!r} is not numeric") from exc
    return out


def _levels(text):
    text = str(text)
    if ".." in text:
        lo, hi = text.split("..", 1)
        values = list(range(int(lo), int(hi) + 1))
    else:
        values = [int(v) for v in text.split(",") if v.strip()]
    if not values or min(values) < 2:
        raise argparse.ArgumentTypeError("levels must be integers >= 2, e.g. 3 or 2..5 or 2,3")
    return values


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="output directory (default: pecs-out)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help=f"random seed where randomness exists (default: {DEFAULT_SEED})")

    parser = _Parser(prog="pecs", description="Photon emission correlation spectroscopy toolkit.",
                     parents=[common])
    parser.add_argument("--config", help="JSON file of options; explicit flags take precedence")
    parser.add_argument("--version", action="version", version=f"pecs {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("import", parents=[common], help="convert a time-tag file to TTAG1")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--format", choices=("ttag1", "csv"), default="ttag1")
    p.add_argument("--resolution", type=float, help="tick resolution (s); required for csv")
    p.add_argument("--lenient", action="store_true", help="skip malformed csv lines instead of failing")
    p.add_argument("--out", help="output TTAG1 path (default: <out-dir>/record.ttag1)")

    p = sub.add_parser("trace", parents=[common], help="intensity trace and rate partitions")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--t-res", type=float, required=True, help="trace bin width (s)")
    p.add_argument("--partition-ranges", type=_ranges, help="summed-rate ranges lo:hi,... (counts/s)")

    p = sub.add_parser("correlate", parents=[common], help="cross-correlate a TTAG1 record")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--tau-min", type=float, required=True)
    p.add_argument("--tau-max", type=float, required=True)
    p.add_argument("--tau-res", type=float, required=True)
    p.add_argument("--scale", choices=("lin", "log"), default="lin")
    p.add_argument("--partition-ranges", type=_ranges)
    p.add_argument("--t-res", type=float, default=0.01, help="trace bin width for partitions (s)")
    p.add_argument("--method", choices=("auto", "edges", "pairs"), default="auto")
    p.add_argument("--threads", type=int)

    p = sub.add_parser("correct", parents=[common], help="background-correct a g2 curve")
    p.add_argument("--g2", required=True)
    p.add_argument("--rho", default="1", help="signal fraction, or 'auto' with --line-trace/--saturation")
    p.add_argument("--rho-err", type=float, default=0.0, help="uncertainty of a given rho")
    p.add_argument("--line-trace", help="csv of position,intensity")
    p.add_argument("--saturation", help="csv of power,intensity")
    p.add_argument("--power", type=float, help="excitation power of the g2 measurement (saturation route)")
    p.add_argument("--irf", help="IRF csv (time_s,weight); validated and rebinned for fit")

    p = sub.add_parser("fit", parents=[common], help="fit empirical models and rank them by AIC")
    p.add_argument("--g2", required=True)
    p.add_argument("--n", type=_levels, default=[2, 3, 4], help="levels, e.g. 3, 2..5 or 2,3")
    p.add_argument("--irf")
    p.add_argument("--tau-min", type=float)
    p.add_argument("--tau-max", type=float)
    p.add_argument("--signed", action="store_true", help="let every amplitude take either sign")
    p.add_argument("--starts", type=int, default=5)

    for name, text in (("simulate", "rate-equation g2 of a model"),
                       ("gillespie", "stochastic photon stream of a model")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--model", required=True, help="template name or model JSON path")
        p.add_argument("--kex", type=float, default=50.0, help="excitation rate (MHz)")
        p.add_argument("--b-amp", type=float, help="field amplitude (G)")
        p.add_argument("--b-angle", type=float, default=0.0, help="field angle (deg)")
        p.add_argument("--ceff", type=float, default=1.0, help="collection efficiency")
        if name == "simulate":
            p.add_argument("--t-max", type=float, help="end of the delay grid (s)")
            p.add_argument("--n-points", type=int, default=1001)
            p.add_argument("--grid", choices=("lin", "log"), default="lin")
            p.add_argument("--method", choices=("eigen", "ode"), default="eigen")
        else:
            p.add_argument("--duration", type=float, required=True, help="acquisition time (s)")
            p.add_argument("--dead-time", type=float, default=0.0)
            p.add_argument("--dark-rate", type=float, default=0.0)
            p.add_argument("--out", help="output TTAG1 path (default: <out-dir>/stream.ttag1)")

    p = sub.add_parser("waiting", parents=[common], help="waiting-time distribution")
    p.add_argument("--model", choices=("two-level", "three-level"), default="two-level")
    p.add_argument("--rates", type=_float_list, required=True,
                   help="MHz: ge,eg (two-level) or ge,eg,em,mg (three-level)")
    p.add_argument("--ceff", type=float, default=1.0)
    p.add_argument("--t-max", type=float, required=True)
    p.add_argument("--dt", type=float, help="grid step (s); default t_max/20000")
    p.add_argument("--g2", dest="with_g2", action="store_true", help="also rebuild g2 from W")

    p = sub.add_parser("reproduce", parents=[common], help="regenerate a figure's data from simulation")
    p.add_argument("target", nargs="?", choices=FIGURES + ("all",))

    p = sub.add_parser("plot", parents=[common], help="SVG plot of CSV curves")
    p.add_argument("inputs", nargs="*")
    p.add_argument("--out", help="SVG path (default: <out-dir>/plot.svg)")
    p.add_argument("--logx", action="store_true")
    p.add_argument("--labels", help="comma-separated legend labels")
    p.add_argument("--title")
    return parser


def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices.get(command)
    return None


def _dests(subparser):
    return {a.dest for a in subparser._actions if a.dest not in ("help",)}


def _load_config(path):
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    return data


def _is_number(tok):
    try:
        float(tok)
    except ValueError:
        return False
    return True


def _join_negative(argv):
    """Attach values such as ``-1e-7`` to their flag so argparse does not read them as options."""
    out = []
    for tok in argv:
        if (out and tok.startswith("-") and _is_number(tok) and out[-1].startswith("--")
                and "=" not in out[-1]):
            out[-1] = f"{out[-1]}={tok}"
        else:
            out.append(tok)
    return out


def parse_args(argv):
    """Parse ``argv`` and merge ``--config``; unknown config keys are rejected.

    Config values become subcommand defaults, so explicit flags still win.
    """
    parser = build_parser()
    argv = _join_negative(list(argv))
    cfg_path = _config_path(argv)
    cfg = _load_config(cfg_path) if cfg_path else {}
    given = next((tok for tok in argv if tok in COMMANDS), None)
    command = given or cfg.get("command")
    if cfg and cfg.get("command") not in (None, command):
        raise UsageError(f"config is for {cfg['command']!r}, not {command!r}")
    if command is not None:
        sub = _subparser(parser, command)
        if sub is None:
            raise UsageError(f"pecs: unknown subcommand {command!r}")
        unknown = sorted(set(cfg) - (_dests(sub) | {"command", "version"}))
        if unknown:
            raise UsageError(f"unknown config keys for {command!r}: {unknown}")
        defaults = {k: v for k, v in cfg.items() if k not in ("command", "version")}
        if defaults:
            for action in sub._actions:
                if action.dest in defaults:
                    action.required = False
            sub.set_defaults(**defaults)
        if given is None:
            argv = ["--config", cfg_path, command] + _without_config(argv)
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("pecs: a subcommand is required")
    if getattr(args, "out_dir", None) is None:
        args.out_dir = "pecs-out"
    if getattr(args, "seed", None) is None:
        args.seed = DEFAULT_SEED
    return args


def _config_path(argv):
    for k, tok in enumerate(argv):
        if tok == "--config" and k + 1 < len(argv):
            return argv[k + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _without_config(argv):
    out, skip = [], False
    for tok in argv:
        if skip:
            skip = False
        elif tok == "--config":
            skip = True
        elif not tok.startswith("--config="):
            out.append(tok)
    return out


def _resolved(args) -> dict:
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in ("config",):
            continue
        if key in PATH_KEYS and value is not None:
            value = [str(Path(v).resolve()) for v in value] if isinstance(value, list) else str(Path(value).resolve())
        elif key == "out_dir":
            value = str(Path(value).resolve())
        elif key == "partition_ranges" and value is not None:
            value = ",".join(f"{lo!r}:{hi!r}" for lo, hi in value)
        elif key in ("rates", "n") and value is not None:
            value = ",".join(repr(v) for v in value)
        out[key] = value
    return out


def _as_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _as_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_as_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _as_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _write_json(path, data):
    Path(path).write_text(json.dumps(_as_jsonable(data), indent=2, sort_keys=True) + "\n")


def _write_columns(path, header, columns):
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*[np.asarray(c).tolist() for c in columns]):
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    return path


class _Run:
    """Collects outputs and results of one subcommand."""

    def __init__(self, args):
        self.args = args
        self.out_dir = Path(args.out_dir)
        self.outputs: list[str] = []
        self.results: dict = {}

    def path(self, name) -> Path:
        return self.out_dir / name

    def wrote(self, *paths):
        for p in paths:
            p = Path(p)
            try:
                self.outputs.append(str(p.relative_to(self.out_dir)))
            except ValueError:
                self.outputs.append(str(p))


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def _cmd_import(run: _Run):
    from .timetag import export_binary, import_binary, import_csv

    a = run.args
    if a.format == "csv":
        if a.resolution is None:
            raise ConfigError("--resolution is required for csv input")
        rec = import_csv(a.input, a.resolution, strict=not a.lenient)
    else:
        rec = import_binary(a.input)
    out = Path(a.out) if a.out else run.path("record.ttag1")
    export_binary(rec, out)
    run.wrote(out)
    run.results.update(_record_summary(rec))


def _record_summary(rec):
    return {"counts_a": rec.counts_a, "counts_b": rec.counts_b, "total_time_s": rec.total_time,
            "tick_resolution_s": rec.tick_resolution, "time_source": rec.time_source,
            "flags": list(rec.flags), "rejected_lines": rec.rejected_lines}


def _cmd_trace(run: _Run):
    from .correlator import intensity_trace, partition_by_threshold
    from .timetag import import_binary

    a = run.args
    rec = import_binary(a.input)
    tr = intensity_trace(rec, a.t_res)
    e = tr.time_edges
    out = _write_columns(run.path("trace.csv"),
                         ["t_start_s", "t_stop_s", "counts_a", "counts_b", "rate_total_per_s"],
                         [e[:-1], e[1:], tr.counts_a, tr.counts_b, tr.total_rates])
    run.wrote(out)
    run.results.update(_record_summary(rec))
    run.results["mean_rate_per_s"] = float(np.mean(tr.total_rates))
    if a.partition_ranges:
        parts = partition_by_threshold(tr, a.partition_ranges)
        run.results["partitions"] = [
            {"label": p.label, "intervals_s": p.intervals.tolist(), "accepted_time_s": p.accepted_time(rec.total_time)}
            for p in parts]


def _cmd_correlate(run: _Run):
    from .correlator import build_tau_axis, cross_correlate, intensity_trace, partition_by_threshold
    from .timetag import import_binary

    a = run.args
    rec = import_binary(a.input)
    scale = "linear" if a.scale == "lin" else "logarithmic"
    axis = build_tau_axis((a.tau_min, a.tau_max), a.tau_res, scale=scale, tick=rec.tick_resolution)
    parts = [None]
    if a.partition_ranges:
        parts = partition_by_threshold(intensity_trace(rec, a.t_res), a.partition_ranges)
    summaries = []
    for part in parts:
        res = cross_correlate(rec, axis, partition=part, method=a.method, threads=a.threads)
        name = "g2.csv" if part is None else f"g2_{_slug(part.label)}.csv"
        res.to_csv(run.path(name))
        run.wrote(run.path(name), run.path(name).with_suffix(".json"))
        summaries.append({"label": res.label, "file": name, "I_A": res.rate_a, "I_B": res.rate_b,
                          "T": res.acquisition_time, "bins": len(res), "pairs": int(res.raw_counts.sum())})
    run.results["curves"] = summaries


def _slug(label):
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in label)


def _cmd_correct(run: _Run):
    from .corrections import (IrfHistogram, RhoEstimate, background_correct, fit_line_trace,
                              fit_saturation)
    from .correlator import CorrelationResult

    a = run.args
    data = CorrelationResult.from_csv(a.g2)
    if str(a.rho).lower() == "auto":
        if a.line_trace:
            xy = np.loadtxt(a.line_trace, delimiter=",", skiprows=1, ndmin=2)
            lt = fit_line_trace(xy[:, 0], xy[:, 1])
            est = lt.rho
            run.results["line_trace"] = {"amplitude": lt.amplitude, "offset": lt.offset,
                                         "center": lt.center, "width": lt.width}
        elif a.saturation:
            if a.power is None:
                raise ConfigError("--power is required with --saturation")
            pi = np.loadtxt(a.saturation, delimiter=",", skiprows=1, ndmin=2)
            sat = fit_saturation(pi[:, 0], pi[:, 1])
            est = sat.rho_estimate(a.power)
            run.results["saturation"] = {"I_sat": sat.I_sat, "p_sat": sat.p_sat, "C_bg": sat.C_bg}
        else:
            raise ConfigError("--rho auto needs --line-trace or --saturation")
    else:
        try:
            rho = float(a.rho)
        except ValueError as exc:
            raise ConfigError(f"--rho must be a number or 'auto', got {a.rho!r}") from exc
        est = RhoEstimate(rho, "given", a.rho_err)
    corrected = background_correct(data, est)
    out = run.path("g2_corrected.csv")
    if a.irf:
        irf = IrfHistogram.from_csv(a.irf).centered()
        widths = data.widths
        if widths is not None and np.ptp(widths) <= 1e-9 * widths.mean():
            irf = irf.rebin(float(widths.mean()))
        irf.to_csv(run.path("irf.csv"))
        run.wrote(run.path("irf.csv"))
        corrected = corrected.with_values(meta={**corrected.meta, "irf": "irf.csv", "irf_sigma_s": irf.sigma})
        run.results["irf_sigma_s"] = irf.sigma
    corrected.to_csv(out)
    run.wrote(out, out.with_suffix(".json"))
    run.results["rho"] = {"value": est.rho, "method": est.method, "uncertainty": est.uncertainty}


def _cmd_fit(run: _Run):
    from .corrections import IrfHistogram
    from .correlator import CorrelationResult
    from .errors import FitError
    from .fitting import compare_models, evaluate_model, fit

    a = run.args
    data = CorrelationResult.from_csv(a.g2)
    irf = IrfHistogram.from_csv(a.irf) if a.irf else None
    tau_range = None
    if a.tau_min is not None or a.tau_max is not None:
        tau_range = (-math.inf if a.tau_min is None else a.tau_min, math.inf if a.tau_max is None else a.tau_max)
    fits, failures = [], {}
    for n in a.n:
        try:
            fits.append(fit(data, n, irf=irf, seed=a.seed, tau_range=tau_range, signed=a.signed,
                            starts=a.starts))
        except FitError as exc:
            failures[str(n)] = str(exc)
    if not fits:
        raise FitError(f"no model converged: {failures}")
    ranked = compare_models(fits)
    per_n = {}
    for r in ranked:
        f = r.fit
        d = f.to_dict()
        d.update({"aic": r.aic, "delta_aic": r.delta_aic, "relative_likelihood": r.relative_likelihood,
                  "reduced_chi2": r.reduced_chi2})
        per_n[str(f.n_levels)] = d
        curve = evaluate_model(f.model, data.tau_centers)
        name = f"fit_n{f.n_levels}.csv"
        _write_columns(run.path(name), ["tau_s", "g2"], [data.tau_centers, curve])
        run.wrote(run.path(name))
    report = {"fits": per_n, "ranking": [r.fit.n_levels for r in ranked], "best_n": ranked[0].fit.n_levels,
              "failed": failures}
    _write_json(run.path("fit.json"), report)
    run.wrote(run.path("fit.json"))
    run.results.update(report)


def _model_from_args(a):
    from .dynamics import RateModel, build_model
    from .dynamics.templates import TEMPLATES

    if a.model in TEMPLATES:
        return build_model(a.model, a.kex, b_amplitude=a.b_amp, b_angle=a.b_angle, collection=a.ceff)
    path = Path(a.model)
    if not path.exists():
        raise ConfigError(f"--model must be one of {TEMPLATES} or a model JSON file; {a.model!r} is neither")
    model = RateModel.from_json(path)
    if a.ceff != 1.0:
        model = RateModel(model.G, np.where(model.C > 0, a.ceff, 0.0), model.labels, model.name, model.meta)
    return model


def _simulation_report(sim):
    dec = sim.decomposition
    return {**sim.summary(), "timescales_s": dec.timescales.tolist(),
            "g2_mode_amplitudes": [[float(np.real(v)), float(np.imag(v))] for v in sim.g2_mode_amplitudes()]}


def _cmd_simulate(run: _Run):
    from .dynamics import default_time_grid, simulate_g2

    a = run.args
    model = _model_from_args(a)
    if a.t_max is None:
        times = default_time_grid(model, n_points=a.n_points)
    elif a.grid == "lin":
        times = np.linspace(0.0, a.t_max, a.n_points)
    else:
        times = np.concatenate([[0.0], np.geomspace(a.t_max * 1e-4, a.t_max, a.n_points - 1)])
    sim = simulate_g2(model, times, method=a.method)
    out = _write_columns(run.path("g2.csv"), ["tau_s", "g2"], [sim.times, sim.g2])
    run.wrote(out)
    rep = _simulation_report(sim)
    rep["model_json"] = model.to_json()
    _write_json(run.path("simulate.json"), rep)
    run.wrote(run.path("simulate.json"))
    run.results.update({k: rep[k] for k in ("g2_0", "I_PL_per_s", "p_err", "conservation_error", "steady_state",
                                             "timescales_s")})


def _cmd_gillespie(run: _Run):
    from .dynamics import generate_photon_stream
    from .timetag import export_binary

    a = run.args
    model = _model_from_args(a)
    rec = generate_photon_stream(model, a.duration, seed=a.seed, dead_time=a.dead_time, dark_rate=a.dark_rate)
    out = Path(a.out) if a.out else run.path("stream.ttag1")
    export_binary(rec, out)
    run.wrote(out)
    run.results.update(_record_summary(rec))
    run.results["model"] = model.name


def _cmd_waiting(run: _Run):
    from .waiting_time import g2_from_waiting, uniform_grid, waiting_three_level, waiting_two_level

    a = run.args
    rates = [r * 1e6 for r in a.rates]
    dt = a.dt if a.dt is not None else a.t_max / 20000
    grid = uniform_grid(a.t_max, dt=dt)
    if a.model == "two-level":
        if len(rates) != 2:
            raise ConfigError("two-level needs --rates ge,eg")
        curve = waiting_two_level(rates[0], rates[1], a.ceff, grid)
    else:
        if len(rates) != 4:
            raise ConfigError("three-level needs --rates ge,eg,em,mg")
        if a.ceff != 1.0:
            raise ConfigError("the three-level waiting time is only available at --ceff 1")
        keys = ("gamma_ge", "gamma_eg", "gamma_em", "gamma_mg")
        curve = waiting_three_level(dict(zip(keys, rates)), grid)
    curve.to_csv(run.path("waiting.csv"))
    run.wrote(run.path("waiting.csv"))
    run.results.update({"integral": curve.integral(), "mean_s": curve.mean(), "meta": curve.meta})
    if a.with_g2:
        rec = g2_from_waiting(curve)
        _write_columns(run.path("g2_from_waiting.csv"), ["tau_s", "g2"], [rec.tau, rec.g2])
        run.wrote(run.path("g2_from_waiting.csv"))
        run.results.update({"detected_rate_per_s": rec.detected_rate, "series_terms": rec.n_terms})


# --------------------------------------------------------------------------
# figure reproduction
# --------------------------------------------------------------------------

def reproduce_fig2b(run: _Run):
    """Two-level W/(C I) against g² for several C and pump/decay ratios."""
    from .waiting_time import alpha, shape_distance, two_level_g2, uniform_grid, waiting_two_level

    gamma_eg = 50e6
    ratios = (1.0, 1 / 3, 0.1, 0.01)  # Γ_ge/Γ_eg, from α = 0 towards 1
    out = {}
    for C in (1.0, 0.5, 0.1, 0.01):
        cols, header, dist = [], [], {}
        tau = None
        for r in ratios:
            ge = r * gamma_eg
            S = ge + gamma_eg
            grid = uniform_grid(8.0 / S, n=801)
            w = waiting_two_level(ge, gamma_eg, C, grid)
            # compare on the dimensionless delay τ (Γ_ge + Γ_eg)
            if tau is None:
                tau = grid * S
                cols.append(tau)
                header.append("tau_scaled")
                cols.append(two_level_g2(ge, gamma_eg, grid))
                header.append("g2")
            emission = ge * gamma_eg / S
            a_val = alpha(ge, gamma_eg)
            cols.append(w.W / (C * emission))
            header.append(f"W_norm_alpha_{a_val:.3f}")
            dist[f"{a_val:.6f}"] = shape_distance(w)
        name = f"fig2b_C{C:g}.csv"
        _write_columns(run.path(name), header, cols)
        run.wrote(run.path(name))
        out[f"{C:g}"] = dist
    run.results["fig2b_shape_distance"] = out


def reproduce_fig4(run: _Run):
    """Apparent g²(0) of the three-level curve after Gaussian jitter."""
    from .corrections import convolve_model, gaussian_irf
    from .fitting import EmpiricalModel

    sigma = 1e-9
    irf = gaussian_irf(sigma, sigma / 50)
    rows = []
    for C2 in (0.5, 1.0, 1.5, 2.0, 3.0):
        for t2 in (10.0, 30.0, 100.0):
            for t1 in np.geomspace(10.0, 1.0, 10):
                m = EmpiricalModel.three_level(C2, t1 * sigma, t2 * sigma)
                rows.append((C2, t2, float(t1), float(convolve_model(m, irf, 0.0)[0])))
    cols = list(zip(*rows))
    _write_columns(run.path("fig4.csv"), ["C2", "tau2_over_sigma", "tau1_over_sigma", "g2_0"], cols)
    run.wrote(run.path("fig4.csv"))
    g0 = np.array(cols[3])
    run.results["fig4"] = {"rows": len(rows), "min_g2_0": float(g0.min()), "max_g2_0": float(g0.max()),
                           "fraction_above_half": float(np.mean(g0 >= 0.5))}


def _fig5_curves(template):
    from .dynamics.templates import ANGLE_SWEEPS, FIELD_AMPLITUDES, POWER_SWEEPS

    powers = POWER_SWEEPS[template]
    mid = powers[1]
    curves = [(f"kex{k:g}", dict(k_ex=k)) for k in powers]
    if template in ANGLE_SWEEPS:
        B = FIELD_AMPLITUDES[template]
        curves += [(f"B{B:g}G_angle{ang:g}", dict(k_ex=mid, b_amplitude=B, b_angle=ang))
                   for ang in ANGLE_SWEEPS[template]]
    return curves


def reproduce_fig5(run: _Run, panel):
    from .dynamics import build_model, default_time_grid, simulate_g2

    template = {"fig5a": "three-level-spontaneous", "fig5b": "three-level-pumped",
                "fig5c": "five-level-spin", "fig5d": "nv-nine-level"}[panel]
    summary = {}
    for tag, kw in _fig5_curves(template):
        model = build_model(template, **kw)
        sim = simulate_g2(model, default_time_grid(model, n_points=600))
        name = f"{panel}_{tag}.csv"
        _write_columns(run.path(name), ["tau_s", "g2"], [sim.times, sim.g2])
        run.wrote(run.path(name))
        rep = _simulation_report(sim)
        summary[tag] = {"params": kw, "g2_max": float(np.max(sim.g2)), "g2_0": rep["g2_0"],
                        "timescales_s": rep["timescales_s"], "g2_mode_amplitudes": rep["g2_mode_amplitudes"],
                        "p_err": rep["p_err"]}
    run.results[panel] = {"template": template, "curves": summary}


def _cmd_reproduce(run: _Run):
    if run.args.target is None:
        raise ConfigError(f"reproduce needs a target: one of {FIGURES + ('all',)}")
    targets = FIGURES if run.args.target == "all" else (run.args.target,)
    for t in targets:
        if t == "fig2b":
            reproduce_fig2b(run)
        elif t == "fig4":
            reproduce_fig4(run)
        else:
            reproduce_fig5(run, t)


# --------------------------------------------------------------------------
# plotting
# --------------------------------------------------------------------------

def _read_table(path):
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
    except OSError as exc:
        raise PlotError(f"cannot read {path}: {exc}") from exc
    if not header or header == [""]:
        raise PlotError(f"{path} is empty")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        raise PlotError(f"{path} has no rows")
    return {h: data[:, i] for i, h in enumerate(header)}


def plot_curves(inputs, out, logx=False, labels=None, title=None):
    """Write an SVG of one or more CSV curves; returns the figure's series count."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not inputs:
        raise PlotError("nothing to plot: no input files")
    tables = [_read_table(p) for p in inputs]
    labels = labels or [Path(p).stem for p in inputs]
    if len(labels) != len(tables):
        raise PlotError("need one label per input")
    xs = {t_key for t in tables for t_key in t if t_key in ("tau_s", "tau_scaled")}
    if not xs:
        raise PlotError("inputs need a tau_s column")
    matplotlib.rcParams["svg.hashsalt"] = "pecs"
    fig, ax = plt.subplots(figsize=(6, 4))
    is_g2 = False
    for table, label in zip(tables, labels):
        x = table.get("tau_s", table.get("tau_scaled"))
        ycol = next((k for k in ("g2", "W_per_s") if k in table), None)
        if ycol is None:
            ycol = next(k for k in table if k not in ("tau_s", "tau_scaled"))
        is_g2 |= ycol == "g2"
        y = table[ycol]
        if "err_plus" in table and "err_minus" in table:
            ax.errorbar(x, y, yerr=np.vstack([table["err_minus"], table["err_plus"]]), fmt="o", ms=2,
                        lw=0.6, label=label)
        else:
            ax.plot(x, y, lw=1.2, label=label)
    if is_g2:
        ax.axhline(1.0, color="0.4", ls="--", lw=0.8)
        ax.set_ylabel("g2")
    ax.set_xlabel("tau (s)")
    if logx:
        ax.set_xscale("symlog" if any(np.any(t.get("tau_s", np.ones(1)) <= 0) for t in tables) else "log")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return len(tables)


def _cmd_plot(run: _Run):
    a = run.args
    out = Path(a.out) if a.out else run.path("plot.svg")
    labels = a.labels.split(",") if a.labels else None
    run.results["series"] = plot_curves(a.inputs, out, logx=a.logx, labels=labels, title=a.title)
    run.wrote(out)


COMMANDS = {
    "import": _cmd_import, "trace": _cmd_trace, "correlate": _cmd_correlate, "correct": _cmd_correct,
    "fit": _cmd_fit, "simulate": _cmd_simulate, "gillespie": _cmd_gillespie, "waiting": _cmd_waiting,
    "reproduce": _cmd_reproduce, "plot": _cmd_plot,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    run = _Run(args)
    run.out_dir.mkdir(parents=True, exist_ok=True)
    config = {"command": args.command, **_resolved(args)}
    _write_json(run.path(CONFIG), config)
    report = {"command": args.command, "version": __version__}
    status = 0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            COMMANDS[args.command](run)
            report["status"] = "ok"
        except (PecsError, ValueError, OSError) as exc:
            status = 1
            report["status"] = "error"
            report["error"] = {"type": type(exc).__name__, "message": str(exc)}
            print(f"pecs {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
    report["outputs"] = run.outputs
    report["results"] = run.results
    report["warnings"] = sorted({f"{w.category.__name__}: {w.message}" for w in caught})
    _write_json(run.path(REPORT), report)
    return status


if __name__ == "__main__":
    sys.exit(main())
