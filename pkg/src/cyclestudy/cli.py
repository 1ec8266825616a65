"""``cyclestudy`` command line: simulate, estimate, iw, magnitude, cycle.

Exit codes: 0 success, 2 input error (unreadable or invalid files, bad
flags), 3 estimation error (unidentified cells, rank problems, undefined
magnitudes).  Every run ends by writing ``manifest.json``, so its presence
means the other outputs are complete.
"""

import argparse
import json
import logging
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, cohortiw, cyclefit, dgp, eventstudy, magnitude, panel, regress

log = logging.getLogger("cyclestudy")

EXIT_OK, EXIT_INPUT, EXIT_ESTIMATION = 0, 2, 3

OUTCOME_LABELS = {
    "admissions_per_1000": ("Admissions / 1000 Pop.", "All Offenses"),
    "months_per_1000": ("Sentenced Months / 1000 Pop.", "All Offenses"),
}


class InputError(Exception):
    pass


def _json_default(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _clean(o):
    """Replace NaN/inf with None so the JSON stays standard."""
    if isinstance(o, float):
        return o if math.isfinite(o) else None
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    return o


def write_json(path: Path, obj) -> None:
    text = json.dumps(_clean(obj), indent=2, sort_keys=False, default=_json_default)
    path.write_text(text + "\n", encoding="utf-8")


class Run:
    """Collects outputs and writes the manifest last."""

    def __init__(self, sub: str, args, out: Path):
        self.sub = sub
        self.args = args
        self.out = out
        self.files = []
        self.inputs = []
        self.spec = {}
        self.seed = None
        self.t0 = getattr(args, "t0", time.perf_counter())
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise InputError(f"cannot create output directory {out}: {exc}")
        if not os.access(out, os.W_OK):
            raise InputError(f"output directory {out} is not writable")

    def path(self, name: str) -> Path:
        p = self.out / name
        self.files.append(name)
        return p

    def finish(self) -> None:
        manifest = {
            "subcommand": self.sub,
            "inputs": [str(p) for p in self.inputs],
            "outputs": list(self.files),
            "spec": self.spec,
            "seed": self.seed,
            "version": __version__,
            "wall_time": round(time.perf_counter() - self.t0, 6),
        }
        write_json(self.out / "manifest.json", manifest)


def _threads(args) -> int:
    n = args.threads
    if n is None:
        env = os.environ.get("CYCLESTUDY_THREADS")
        if env:
            try:
                n = int(env)
            except ValueError:
                raise InputError(f"CYCLESTUDY_THREADS must be an integer, got {env!r}")
    n = 1 if n is None else n
    if n < 1:
        raise InputError("--threads must be at least 1")
    return n


def _load_panel(path) -> panel.PanelDataset:
    p = Path(path)
    if not p.exists():
        raise InputError(f"input file not found: {p}")
    return panel.load_csv(p)


def _csv_list(text):
    return tuple(x.strip() for x in text.split(",") if x.strip()) if text else ()


def _transform(args):
    if getattr(args, "log1p", False) and getattr(args, "log", False):
        raise InputError("--log and --log1p are mutually exclusive")
    if getattr(args, "log1p", False):
        return "log1p"
    if getattr(args, "log", False):
        return "log"
    return None


def _spec(args, outcome=None) -> eventstudy.EventStudySpec:
    fe = _csv_list(args.fe)
    for f in fe:
        if f not in ("state", "county", "district", "year", "period"):
            raise InputError(f"unknown fixed effect {f!r} in --fe")
    return eventstudy.EventStudySpec(
        outcome=outcome or args.outcome,
        normalize=getattr(args, "normalize", 0),
        fe=fe,
        controls=_csv_list(getattr(args, "controls", None)),
        weights=args.weights,
        cluster=args.cluster,
        transform=_transform(args),
    )


# --- subcommands -------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg_path = Path(args.config)
    if not cfg_path.exists():
        raise InputError(f"config file not found: {cfg_path}")
    cfg = dgp.load_config(cfg_path)
    cfg.validate()
    run = Run("simulate", args, Path(args.out))
    run.inputs.append(cfg_path)
    run.seed = cfg.seed
    run.spec = {"config": dgp.dump_config(cfg)}
    res = dgp.simulate_panel(cfg)
    panel.write_csv(res.dataset, run.path("panel.csv"))
    write_json(run.path("truth.json"), res.truth.to_dict())
    res.da_map.to_csv(run.path("da_map.csv"), index=False, lineterminator="\n")
    run.finish()
    print(f"wrote {len(res.dataset)} rows to {run.out / 'panel.csv'}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    ds = _load_panel(args.input)
    spec = _spec(args)
    run = Run("estimate", args, Path(args.out))
    run.inputs.append(args.input)
    run.spec = spec.to_dict() | {"mode": args.mode}
    if args.mode == "dynamic":
        if ds.frequency == panel.MONTHLY:
            est = eventstudy.monthly_path(ds, spec)
        else:
            est = eventstudy.fit_dynamic(ds, spec)
    else:
        est = eventstudy.fit_static(ds, spec)
    write_json(run.path("estimate.json"), est.to_dict())
    eventstudy.write_plot_csv(est, run.path("plot.csv"))
    run.finish()
    for r in est.rows():
        print(f"k={r['k']:>4}  {r['estimate']: .5f}  ({r['se']:.5f})")
    return EXIT_OK


def cmd_iw(args) -> int:
    ds = _load_panel(args.input)
    if args.reps < 2:
        raise InputError("--reps must be at least 2")
    outcomes = _csv_list(args.outcome) or tuple(ds.outcomes)
    threads = _threads(args)
    run = Run("iw", args, Path(args.out))
    run.inputs.append(args.input)
    run.seed = args.seed
    results = {}
    groups = {}
    for outcome in outcomes:
        spec = _spec(args, outcome)
        agg = cohortiw.estimate_iw(ds, spec, reps=args.reps, seed=args.seed, threads=threads)
        results[outcome] = agg.to_dict()
        header, label = OUTCOME_LABELS.get(outcome, (outcome, "All Offenses"))
        groups.setdefault(header, []).append((label, agg.vg, agg.se))
        run.spec[outcome] = spec.to_dict()
    write_json(run.path("iw.json"), {"outcomes": results})
    table = cohortiw.render_table(list(groups.items()))
    run.path("table.txt").write_text(table, encoding="utf-8")
    run.finish()
    print(table, end="")
    return EXIT_OK


def cmd_magnitude(args) -> int:
    run_inputs = []
    sv = None
    if args.from_panel:
        if not args.da_map:
            raise InputError("--from-panel needs --da-map")
        ds = _load_panel(args.from_panel)
        dm_path = Path(args.da_map)
        if not dm_path.exists():
            raise InputError(f"DA map not found: {dm_path}")
        da_map = pd.read_csv(dm_path, dtype={"county_id": str, "da_id": str})
        eff = magnitude.da_fixed_effects(ds, da_map, outcome=args.outcome, transform="log")
        sv = magnitude.signal_variance(eff)
        gamma_sq = sv.gamma_sq
        run_inputs += [args.from_panel, args.da_map]
        if args.effect is None:
            spec = eventstudy.EventStudySpec(outcome=args.outcome, transform="log")
            effect = eventstudy.fit_static(ds, spec).estimate
        else:
            effect = args.effect
    else:
        if args.effect is None or args.gamma_sq is None:
            raise InputError("give --effect and --gamma-sq, or --from-panel and --da-map")
        effect, gamma_sq = args.effect, args.gamma_sq
    if args.out is None:
        report = magnitude.to_sd_and_percentile(effect, gamma_sq, bool(sv and sv.clamped))
        print(json.dumps(_clean(report.to_dict()), indent=2))
        return EXIT_OK
    run = Run("magnitude", args, Path(args.out))
    run.inputs += run_inputs
    if sv is not None:
        write_json(run.path("signal_variance.json"), sv.to_dict())
    report = magnitude.to_sd_and_percentile(effect, gamma_sq, bool(sv and sv.clamped))
    write_json(run.path("magnitude.json"), report.to_dict())
    run.spec = {"outcome": args.outcome, "from_panel": bool(args.from_panel)}
    run.finish()
    print(f"{report.sd_units:.4f} SD -> {report.percentile:.2f}th percentile")
    return EXIT_OK


def cmd_cycle(args) -> int:
    ds = _load_panel(args.input)
    if args.frequency and args.frequency != ds.frequency:
        raise InputError(f"--frequency {args.frequency} but the panel is {ds.frequency}")
    spec = _spec(args)
    if ds.frequency == panel.MONTHLY and "year" in spec.fe:
        spec = replace(spec, fe=tuple("period" if f == "year" else f for f in spec.fe))
    run = Run("cycle", args, Path(args.out))
    run.inputs.append(args.input)
    rep = cyclefit.fit_cycle(ds, spec, span=args.span, degree=args.degree,
                             second_stage=args.second_stage)
    run.spec = spec.to_dict() | {"span": rep.loess.span, "degree": args.degree}
    write_json(run.path("cycle.json"), rep.to_dict())
    cyclefit.write_curve_csv(rep, run.path("curve.csv"))
    run.finish()
    print(f"A = {rep.sinusoid.A:.5f} ({rep.sinusoid.se_A:.5f}), phi = {rep.sinusoid.phi:.4f}")
    return EXIT_OK


# --- parser --------------------------------------------------------------------


def _add_spec_flags(p, outcome_default="admissions_per_1000"):
    p.add_argument("--outcome", default=outcome_default)
    p.add_argument("--fe", default="state,year", help="comma list from state,county,district,year,period")
    p.add_argument("--weights", choices=("population", "unit"), default="population")
    p.add_argument("--cluster", choices=("district", "state", "county"), default="district")
    p.add_argument("--log1p", action="store_true", help="regress log(1 + outcome)")
    p.add_argument("--log", action="store_true", help="regress log(outcome)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cyclestudy", description=__doc__.splitlines()[0])
    ap.add_argument("--threads", type=int, default=None, help="worker cap (env CYCLESTUDY_THREADS)")
    ap.add_argument("--version", action="version", version=f"cyclestudy {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic panel from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="dynamic or static event study")
    p.add_argument("--input", required=True)
    p.add_argument("--mode", choices=("dynamic", "static"), default="dynamic")
    p.add_argument("--normalize", type=int, default=0)
    p.add_argument("--controls", default=None)
    p.add_argument("--out", required=True)
    _add_spec_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("iw", help="interaction-weighted cohort aggregate with bootstrap SEs")
    p.add_argument("--input", required=True)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--controls", default=None)
    p.add_argument("--out", required=True)
    _add_spec_flags(p, outcome_default=None)
    p.set_defaults(func=cmd_iw)

    p = sub.add_parser("magnitude", help="express an effect in SDs and percentiles of DA behaviour")
    p.add_argument("--effect", type=float, default=None)
    p.add_argument("--gamma-sq", type=float, default=None)
    p.add_argument("--from-panel", default=None)
    p.add_argument("--da-map", default=None)
    p.add_argument("--outcome", default="admissions_per_1000")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_magnitude)

    p = sub.add_parser("cycle", help="sinusoid and LOESS fit over the election cycle")
    p.add_argument("--input", required=True)
    p.add_argument("--frequency", choices=("annual", "monthly"), default=None)
    p.add_argument("--span", type=float, default=None, help="LOESS span (default 0.3 monthly, 1.0 annual)")
    p.add_argument("--degree", type=int, choices=(1, 2), default=1)
    p.add_argument("--second-stage", action="store_true", help="also regress the outcome on the LOESS curve")
    p.add_argument("--controls", default=None)
    p.add_argument("--out", required=True)
    _add_spec_flags(p)
    p.set_defaults(func=cmd_cycle)
    return ap


INPUT_ERRORS = (InputError, FileNotFoundError, panel.PanelValidationError, dgp.ConfigError,
                PermissionError, IsADirectoryError, pd.errors.ParserError, pd.errors.EmptyDataError,
                UnicodeDecodeError)
ESTIMATION_ERRORS = (eventstudy.EstimationError, regress.RegressionError, cyclefit.LoessError,
                     magnitude.MagnitudeError, np.linalg.LinAlgError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.t0 = time.perf_counter()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "iw" or args.threads is not None:
            _threads(args)
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"cyclestudy {args.command}: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ESTIMATION_ERRORS as exc:
        print(f"cyclestudy {args.command}: estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (ValueError, KeyError) as exc:
        print(f"cyclestudy {args.command}: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - the exit-code contract has no "crash" code
        print(f"cyclestudy {args.command}: estimation error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
