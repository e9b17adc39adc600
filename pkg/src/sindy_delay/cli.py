"""Command-line interface: ``sindy-delay <command> [options]``.

Every option may also come from ``--config FILE.json`` (keys are the option
names with dashes replaced by underscores); explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dde_sim import HistorySpec, IntegrationError, integrate, write_trajectory_csv
from .delay_opt import (DelayGrid, FitConfig, ToyProblem, reconstruction_error,
                        refine_minimum, sweep, write_profile_csv)
from .denoise import SmootherSpec, estimate_derivatives
from .library import LibrarySpec, format_term
from .models import (BioConfig, BioFitProblem, BioProblem, EnsoSpec,
                     delay_concentration_slope, generate_enso, load_reference_models,
                     synthesize_bio, reference_model, bio_term_names)
from .serialize import (SchemaError, bio_from_dict, bio_to_dict, dumps, model_from_dict,
                        model_to_dict, sha256_file, sha256_json)
from .sparsify import write_trace_csv
from .timeseries import DataError, NoiseSpec, TimeSeries, load_csv, shift_to_zero, write_csv

log = logging.getLogger("sindy_delay")

EXPECTED_ERRORS = (DataError, SchemaError, IntegrationError, ValueError, KeyError, OSError)


class Outputs:
    """Tracks files written by a command so they can be removed on failure."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.written = []

    def path(self, name) -> Path:
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(p)
        return p

    def text(self, name, content: str) -> Path:
        p = self.path(name)
        p.write_text(content)
        return p

    def discard(self):
        for p in self.written:
            p.unlink(missing_ok=True)

    def hashes(self) -> dict:
        return {str(p.relative_to(self.dir)): sha256_file(p)
                for p in self.written if p.exists()}


def _fmt(v: float) -> str:
    return f"{v:g}"


def _config_record(args) -> dict:
    skip = {"func", "config", "command", "verbose"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# paths are covered by input hashes; worker count does not change results
_NOT_HASHED = {"out", "input", "derivs", "wt", "dczc", "dcad", "batch", "model",
               "observations", "values_out", "workers"}


def _provenance(args, inputs) -> dict:
    settings = {k: v for k, v in _config_record(args).items() if k not in _NOT_HASHED}
    return {
        "config_hash": sha256_json(settings),
        "input_hashes": {str(k): sha256_file(v) for k, v in inputs.items()},
        "tool_version": __version__,
    }


def _manifest(out: Outputs, args, inputs) -> None:
    doc = {
        "command": args.command,
        "config": _config_record(args),
        "seed": getattr(args, "seed", None),
        "tool_version": __version__,
        "input_hashes": {str(k): sha256_file(v) for k, v in inputs.items()},
        "outputs": out.hashes(),
    }
    out.text("manifest.json", dumps(doc))


def _smoother(args) -> SmootherSpec:
    return SmootherSpec(args.smooth_r, args.smooth_degree)


def _delay_grid(args) -> DelayGrid:
    if args.grid is not None:
        values = [float(v) for v in str(args.grid).split(",") if v.strip()]
        return DelayGrid((values,))
    return DelayGrid.from_range(args.grid_max, args.grid_step, args.grid_min)


# ------------------------------------------------------------------ commands

def cmd_generate(args) -> int:
    spec = EnsoSpec(args.alpha, args.tau, args.n_samples, args.dt,
                    NoiseSpec(args.gamma, args.seed), args.burn_in)
    truth, observed = generate_enso(spec, args.h)
    out = Outputs(args.out)
    write_csv(truth.with_values(truth.values), out.path("truth.csv"))
    write_csv(truth.with_values(truth.derivs), out.path("truth_derivs.csv"))
    write_csv(observed.with_values(observed.values), out.path("observed.csv"))
    _manifest(out, args, {})
    return 0


def cmd_denoise(args) -> int:
    series = load_csv(args.input)
    est = estimate_derivatives(series, _smoother(args), smooth_values=args.smooth_values)
    out = Outputs(Path(args.out).parent)
    write_csv(est.with_values(est.derivs), out.path(Path(args.out).name))
    if args.values_out:
        write_csv(est.with_values(est.values), out.path(Path(args.values_out).name))
    return 0


def _toy_series(args):
    series = load_csv(args.input)
    inputs = {"input": args.input}
    if args.derivs:
        d = load_csv(args.derivs)
        if not np.array_equal(d.times, series.times) or d.dim != series.dim:
            raise DataError("derivative file does not match the input series")
        inputs["derivs"] = args.derivs
        return series.with_derivs(d.values), inputs
    return estimate_derivatives(series, _smoother(args)), inputs


def _fit_config(args, series) -> FitConfig:
    library = LibrarySpec(series.dim, args.max_degree, True, args.cross_policy)
    return FitConfig(library, _smoother(args), args.stop_increase, args.stop_mode,
                     args.h, args.bound, args.smooth_regressors, args.workers)


def _write_traces(out, problem, taus, names):
    for tau in taus:
        _, traces = problem.fit(float(tau))
        term_names = [format_term(t, names) for t in problem.config.library.terms()]
        for k, trace in enumerate(traces):
            suffix = "" if len(traces) == 1 else f"_{names[k]}"
            write_trace_csv(trace, out.path(f"trace_tau={_fmt(float(tau))}{suffix}.csv"),
                            term_names)


def _run_toy(args, grid, taus_for_traces) -> int:
    series, inputs = _toy_series(args)
    config = _fit_config(args, series)
    problem = ToyProblem(series, config)
    result = sweep(problem, grid, config.workers)
    if result.best_model is None or not math.isfinite(result.best_error):
        raise DataError("no delay produced a finite reconstruction error")
    out = Outputs(args.out)
    try:
        write_profile_csv(result, out.path("profile.csv"))
        _write_traces(out, problem, taus_for_traces, series.channels)
        model = result.best_model
        extra = {
            "error": result.best_error,
            "scoring": {
                "h": problem.h,
                "smooth_r": config.smoother.radius,
                "smooth_degree": config.smoother.degree,
                "bound": config.bound,
                "t_start": float(series.times[0] + model.max_lag),
            },
        }
        if getattr(args, "refine", False):
            extra["tau_refined"] = refine_minimum(result)
        doc = model_to_dict(model, _provenance(args, inputs), extra)
        out.text("model.json", dumps(doc))
        _manifest(out, args, inputs)
    except BaseException:
        out.discard()
        raise
    names = [format_term(t, series.channels) for t in model.terms]
    active = {n: float(c) for n, c in zip(names, model.coeffs[:, 0]) if c != 0}
    print(f"tau*={_fmt(result.best[0])} error={result.best_error:.6g} terms={active}")
    return 0


def cmd_sweep(args) -> int:
    grid = _delay_grid(args)
    return _run_toy(args, grid, args.trace_tau or [])


def cmd_fit(args) -> int:
    return _run_toy(args, DelayGrid(((args.tau,),)), [args.tau])


def cmd_simulate(args) -> int:
    doc = json.loads(Path(args.model).read_text())
    if "f" in doc and "g" in doc:
        bio = bio_from_dict(doc, args.model)
        t_end = args.horizon if args.horizon is not None else 160.0
        traj = bio.simulate(args.strain, t_end, args.h or 0.5)
        out = Outputs(Path(args.out).parent)
        write_trajectory_csv(traj, out.path(Path(args.out).name), ["cadA", "czcA"])
        return 0 if not traj.diverged else 1

    model = model_from_dict(doc, args.model)
    scoring = doc.get("scoring", {})
    if args.observations:
        obs = load_csv(args.observations)
        smoother = SmootherSpec(scoring.get("smooth_r", args.smooth_r),
                                scoring.get("smooth_degree", args.smooth_degree))
        history = HistorySpec.sampled(obs, smoother)
        t0 = float(scoring.get("t_start", obs.times[0] + model.max_lag))
        t_end = args.horizon if args.horizon is not None else float(obs.times[-1])
        h = args.h or scoring.get("h") or obs.spacing() / 10.0
        bound = scoring.get("bound", args.bound)
        channels = obs.channels
        err = reconstruction_error(model, obs, history, h, t_start=t0, bound=bound)
        print(f"error={err!r}")
    else:
        values = args.history_constant or [0.0] * model.dim
        history = HistorySpec.constant(values)
        t0 = args.t0
        if args.horizon is None:
            raise DataError("--horizon is required without --observations")
        t_end = args.horizon
        h = args.h or 0.01
        bound = args.bound
        channels = None
    traj = integrate(model, history, t0, t_end, h, bound)
    out = Outputs(Path(args.out).parent)
    write_trajectory_csv(traj, out.path(Path(args.out).name), channels)
    return 0 if not traj.diverged else 1


def _load_strain(path, expected):
    s = load_csv(path)
    if s.channels != expected:
        raise DataError(f"{path}: expected columns t,{','.join(expected)}")
    return shift_to_zero(s)


def _bio_config(args) -> BioConfig:
    return BioConfig(_smoother(args), args.stop_increase, args.stop_mode, args.h,
                     args.bound, args.error_mode, args.workers)


def _bio_grid(args) -> DelayGrid:
    axis = DelayGrid.from_range(args.grid_max, args.grid_step, args.grid_min or 0.0).axes[0]
    return DelayGrid((axis, axis))


def _biofit_one(args, run: dict, out: Outputs, prefix: str, grid: DelayGrid):
    problem = BioProblem(_load_strain(run["wt"], ["cadA", "czcA"]),
                         _load_strain(run["dczc"], ["cadA"]),
                         _load_strain(run["dcad"], ["czcA"]),
                         float(run.get("zinc_mM", math.nan)))
    fitter = BioFitProblem(problem, _bio_config(args))
    result = sweep(fitter, grid, args.workers)
    model = result.best_model
    if model is None or not math.isfinite(result.best_error):
        raise DataError("no delay pair produced a finite reconstruction error")
    inputs = {k: run[k] for k in ("wt", "dczc", "dcad")}
    doc = bio_to_dict(model, _provenance(args, inputs), {"error": result.best_error})
    out.text(f"{prefix}bio_model.json", dumps(doc))
    with out.path(f"{prefix}surface.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["tau_wt", "tau_dca", "error"])
        for point in grid.points():
            writer.writerow([_fmt(point[0]), _fmt(point[1]), f"{result.errors[point]:.17g}"])
    names = bio_term_names()
    f_trace, g_trace = result.traces[result.best]
    write_trace_csv(f_trace, out.path(f"{prefix}trace_f.csv"), names)
    write_trace_csv(g_trace, out.path(f"{prefix}trace_g.csv"), names)
    return model, result.best_error


def cmd_biofit(args) -> int:
    grid = _bio_grid(args)
    if args.batch:
        base = Path(args.batch).parent
        runs = json.loads(Path(args.batch).read_text())["runs"]
        for run in runs:
            for key in ("wt", "dczc", "dcad"):
                run[key] = str(base / run[key])
    else:
        if not (args.wt and args.dczc and args.dcad):
            raise DataError("biofit needs --wt, --dczc and --dcad (or --batch)")
        runs = [{"zinc_mM": args.zinc, "wt": args.wt, "dczc": args.dczc, "dcad": args.dcad}]

    out = Outputs(args.out)
    rows, failures = [], []
    for run in runs:
        prefix = f"zinc={_fmt(run['zinc_mM'])}/" if args.batch else ""
        mark = len(out.written)
        try:
            model, err = _biofit_one(args, run, out, prefix, grid)
        except EXPECTED_ERRORS as exc:
            for p in out.written[mark:]:
                p.unlink(missing_ok=True)
            del out.written[mark:]
            failures.append((run.get("zinc_mM"), str(exc)))
            log.error("zinc=%s failed: %s", run.get("zinc_mM"), exc)
            continue
        rows.append((run.get("zinc_mM"), model.tau_wt, model.tau_dca, err))
        print(f"zinc={run.get('zinc_mM')} tau_wt={_fmt(model.tau_wt)} "
              f"tau_dca={_fmt(model.tau_dca)} error={err:.6g} {model.named()}")
    if args.batch:
        with out.path("delays_vs_zinc.csv").open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["zinc_mM", "tau_wt", "tau_dca", "error"])
            for zinc, tw, tc, err in rows:
                writer.writerow([_fmt(zinc), _fmt(tw), _fmt(tc), f"{err:.17g}"])
            for zinc, msg in failures:
                fh.write(f"# failed zinc={zinc}: {msg}\n")
            usable = [(z, tc) for z, _, tc, _ in rows if z is not None and z > 0]
            if len(usable) >= 2:
                slope = delay_concentration_slope(usable)
                fh.write(f"# slope_tau_dca_min_per_mM={slope:.17g}\n")
                print(f"slope={slope:.6g} min/mM")
    inputs = {f"{r['zinc_mM']}/{k}": r[k] for r in runs for k in ("wt", "dczc", "dcad")}
    _manifest(out, args, inputs)
    return 1 if failures else 0


def _read_slope_rows(path):
    with Path(path).open(newline="") as fh:
        lines = [ln for ln in fh if not ln.lstrip().startswith("#")]
    reader = csv.DictReader(lines)
    if not reader.fieldnames or not {"zinc_mM", "tau_dca"} <= set(reader.fieldnames):
        raise DataError(f"{path}: needs columns zinc_mM and tau_dca")
    return [(float(r["zinc_mM"]), float(r["tau_dca"])) for r in reader]


def cmd_slope(args) -> int:
    if args.input:
        rows = _read_slope_rows(args.input)
    else:
        rows = [(r["zinc_mM"], r["tau_dca"]) for r in load_reference_models()]
    print(f"{delay_concentration_slope(rows):.6g}")
    return 0


def cmd_synth_bio(args) -> int:
    zincs = args.zinc or [r["zinc_mM"] for r in load_reference_models()]
    out = Outputs(args.out)
    runs = []
    for i, zinc in enumerate(zincs):
        model = reference_model(zinc)
        noise = NoiseSpec(args.gamma, args.seed + 3 * i) if args.gamma > 0 else None
        problem = synthesize_bio(model, args.t_end, args.dt, noise)
        sub = f"zinc={_fmt(zinc)}"
        for name, series in (("wt", problem.wt), ("dczc", problem.delta_czc),
                             ("dcad", problem.delta_cad)):
            write_csv(series, out.path(f"{sub}/{name}.csv"))
        runs.append({"zinc_mM": zinc, "wt": f"{sub}/wt.csv", "dczc": f"{sub}/dczc.csv",
                     "dcad": f"{sub}/dcad.csv"})
    out.text("batch.json", dumps({"runs": runs}))
    _manifest(out, args, {})
    return 0


# -------------------------------------------------------------------- parser

def _add_smoother(p, r, degree):
    p.add_argument("--smooth-r", type=int, default=r, help="window half-width in samples")
    p.add_argument("--smooth-degree", type=int, default=degree)


def _add_sparsify(p):
    p.add_argument("--stop-increase", type=float, default=0.10)
    p.add_argument("--stop-mode", choices=["baseline", "previous"], default="baseline")


def _add_sim(p, h=None):
    p.add_argument("--h", type=float, default=h, help="integration step")
    p.add_argument("--bound", type=float, default=1e6, help="divergence bound")


def _add_toy_fit(p):
    p.add_argument("--input", required=True)
    p.add_argument("--derivs", help="CSV of derivative values (skips denoising)")
    p.add_argument("--max-degree", type=int, default=3)
    p.add_argument("--cross-policy", choices=["full", "exclude-mixed"],
                   default="exclude-mixed")
    p.add_argument("--smooth-regressors", action="store_true",
                   help="use smoothed values in the library matrix")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    _add_smoother(p, 25, 3)
    _add_sparsify(p)
    _add_sim(p)


def build_parser():
    parser = argparse.ArgumentParser(prog="sindy-delay", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON file with option values")
        p.add_argument("-v", "--verbose", action="store_true")
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = add("generate", cmd_generate, "simulate the ENSO toy model")
    p.add_argument("--alpha", type=float, default=0.75)
    p.add_argument("--tau", type=float, default=7.0)
    p.add_argument("--n-samples", type=int, default=4000)
    p.add_argument("--dt", type=float, default=0.025)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--burn-in", type=float, default=200.0)
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--out", required=True)

    p = add("denoise", cmd_denoise, "estimate derivatives by local polynomial fits")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="derivative CSV")
    p.add_argument("--values-out", help="also write (optionally smoothed) values")
    p.add_argument("--smooth-values", action="store_true")
    _add_smoother(p, 25, 3)

    p = add("fit", cmd_fit, "fit a sparse model at one delay")
    p.add_argument("--tau", type=float, required=True)
    _add_toy_fit(p)

    p = add("sweep", cmd_sweep, "fit and score every candidate delay")
    _add_toy_fit(p)
    p.add_argument("--grid-max", type=float, default=8.5)
    p.add_argument("--grid-step", type=float, default=0.025)
    p.add_argument("--grid-min", type=float, default=None)
    p.add_argument("--grid", default=None, help="explicit comma-separated delays")
    p.add_argument("--trace-tau", type=float, action="append",
                   help="write the elimination trace at this delay (repeatable)")
    p.add_argument("--refine", action="store_true",
                   help="add a parabolic sub-grid estimate of the best delay")

    p = add("simulate", cmd_simulate, "simulate a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--horizon", type=float, default=None, help="end time")
    p.add_argument("--observations", help="observed CSV: history and scoring")
    p.add_argument("--history-constant", type=float, nargs="+")
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--strain", choices=["wt", "dczc", "dcad"], default="wt")
    _add_smoother(p, 25, 3)
    _add_sim(p)

    p = add("biofit", cmd_biofit, "joint two-strain fit over a 2-D delay grid")
    p.add_argument("--wt")
    p.add_argument("--dczc")
    p.add_argument("--dcad")
    p.add_argument("--zinc", type=float, default=math.nan)
    p.add_argument("--batch", help="JSON listing runs for several concentrations")
    p.add_argument("--grid-max", type=float, default=160.0)
    p.add_argument("--grid-step", type=float, default=5.0)
    p.add_argument("--grid-min", type=float, default=0.0)
    p.add_argument("--error-mode", choices=["sum", "concatenated"], default="sum")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    _add_smoother(p, 2, 2)
    _add_sparsify(p)
    _add_sim(p)

    p = add("slope", cmd_slope, "delay-vs-concentration slope through the origin")
    p.add_argument("--input", help="CSV with zinc_mM and tau_dca columns")

    p = add("synth-bio", cmd_synth_bio, "synthesize strain datasets from shipped models")
    p.add_argument("--zinc", type=float, action="append")
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t-end", type=float, default=160.0)
    p.add_argument("--dt", type=float, default=5.0)
    p.add_argument("--out", required=True)

    return parser, subs


def _apply_config(parser, subs, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config or known.command not in subs:
        return
    try:
        overrides = json.loads(Path(known.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read config: {exc}")
    sp = subs[known.command]
    dests = {a.dest for a in sp._actions}
    unknown = set(overrides) - dests
    if unknown:
        parser.error(f"unknown config keys: {sorted(unknown)}")
    sp.set_defaults(**overrides)
    for action in sp._actions:
        if action.dest in overrides:
            action.required = False


def main(argv=None) -> int:
    parser, subs = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    _apply_config(parser, subs, argv)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _check_usage(parser, args)
        return args.func(args)
    except EXPECTED_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _check_usage(parser, args):
    if getattr(args, "grid_step", None) is not None and not args.grid_step > 0:
        parser.error("--grid-step must be positive")
    if getattr(args, "grid_max", None) is not None:
        start = args.grid_min if args.grid_min is not None else args.grid_step
        if args.grid_max < start and getattr(args, "grid", None) is None:
            parser.error("delay grid axis is empty")
    if getattr(args, "grid", None) is not None and not str(args.grid).strip(","):
        parser.error("delay grid axis is empty")


if __name__ == "__main__":
    sys.exit(main())
