"""Command-line entry point.

Every subcommand reads center CSV (``--in``, ``-`` for stdin) and writes a
JSON report envelope ``<subcommand>.report.json`` plus, where it makes
sense, plot-ready ``<subcommand>.plot.csv`` into ``--out``. Without
``--out`` the envelope goes to stdout (``synth`` writes its CSV there
instead, so it can be piped into another subcommand).

Exit codes: 0 success, 1 usage error, 2 data validation failure,
3 undefined statistic.
"""
from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import math
import sys
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .audit import (cold_audit_compare, county20_comparison, hot_audit_report, rep_variation,
                    stem_and_leaf, write_dist_csv, write_rep_csv)
from .correlation import (geo_aggregates, median_split_rs, r_star, table1, windowed_correlation,
                          write_geo_csv, write_window_csv)
from .errors import DataValidationError, UndefinedStatistic
from .ingest import COMPUTERIZED, EVENTS, MANUAL, RR, Dataset, Filter, read_centers, write_centers
from .metrics import metrics_table, write_metrics_csv
from .significance import ks_pvalue, ks_two_sample, perm_test_rstar, write_replicate_histogram
from .synth import DETECTORS, SynthConfig, detector_power, generate_with_report

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_UNDEFINED = 0, 1, 2, 3
CHANNEL_ARG = {"computerized": COMPUTERIZED, "manual": MANUAL, "all": None}

log = logging.getLogger("rrforensics")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        if hasattr(obj, "to_dict"):
            return _jsonable(obj.to_dict())
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return None if math.isnan(f) or math.isinf(f) else f
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


class Run:
    """Collects inputs, parameters and warnings for one invocation."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.args = args
        self.inputs: list[dict] = []
        self.warnings: list[str] = []
        skip = {"func", "command", "input", "out", "verbose"}
        self.parameters = {k: v for k, v in vars(args).items() if k not in skip}

    def load(self, path: str, required=(RR,)) -> Dataset:
        if path == "-":
            data = sys.stdin.buffer.read()
        else:
            try:
                data = Path(path).read_bytes()
            except OSError as exc:
                raise UsageError(f"cannot read {path}: {exc.strerror}") from None
        self.inputs.append({"path": path, "sha256": hashlib.sha256(data).hexdigest()})
        text = data.decode("utf-8-sig")
        return read_centers(io.StringIO(text, newline=""), required=required, source=path)

    def envelope(self, results) -> dict:
        return _jsonable({
            "command": self.command,
            "inputs": self.inputs,
            "parameters": self.parameters,
            "results": results,
            "warnings": self.warnings,
        })

    def finish(self, results, plot=None, extra_files=None):
        """Write the envelope and optional plot CSV (a callable taking a file handle)."""
        env = self.envelope(results)
        text = json.dumps(env, indent=2, sort_keys=True) + "\n"
        out = self.args.out
        if out is None:
            sys.stdout.write(text)
            return
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{self.command}.report.json").write_text(text, encoding="utf-8")
        if plot is not None:
            with open(out / f"{self.command}.plot.csv", "w", newline="", encoding="utf-8") as fh:
                plot(fh)
        for name, writer in (extra_files or {}).items():
            with open(out / name, "w", newline="", encoding="utf-8") as fh:
                writer(fh)


# -- subcommands ------------------------------------------------------------------

def cmd_ingest(run: Run):
    schema = run.args.events.split(",") if run.args.events else None
    ds = run.load(run.args.input)
    if schema is not None:
        unknown = sorted(set(schema) - set(EVENTS))
        if unknown:
            raise UsageError(f"unknown event ids: {', '.join(unknown)}")
        missing = sorted(set(schema) - set(ds.events()))
        if missing:
            raise DataValidationError(f"no tallies present for {', '.join(missing)}")
    flags = {name: sum(bool(getattr(c, attr)) for c in ds) for name, attr in (
        ("hamlet", "hamlet"), ("consular", "consular"), ("in20", "in_20_counties"),
        ("sel192", "selected_192"), ("aud26", "audited_26"), ("coldaud", "cold_audited"))}
    results = {
        "n_centers": len(ds),
        "channels": {"computerized": sum(c.computerized for c in ds),
                     "manual": sum(not c.computerized for c in ds)},
        "events": {e: sum(e in c.tallies for c in ds) for e in ds.events()},
        "flags": flags,
        "rr_totals": sum(c.tally(RR).total for c in ds),
    }
    run.finish(results, extra_files={"ingest.csv": lambda fh: write_centers(ds, fh)})


def cmd_metrics(run: Run):
    ds = run.load(run.args.input)
    rows, excl = metrics_table(ds)
    results = {"n_rows": len(rows), "n_exclusions": len(excl), "exclusions": excl}
    run.finish(results, extra_files={"metrics.csv": lambda fh: write_metrics_csv(rows, fh)})


def cmd_table1(run: Run):
    ds = run.load(run.args.input)
    grid = table1(ds, run.args.split)
    results = {ch: {st: {"r": grid[(ch, st)].r, "n": grid[(ch, st)].n} for st in ("low", "high", "all")}
               for ch in ("manual", "computerized", "both")}
    for (ch, st), cell in grid.items():
        if cell.r is None and cell.n:
            run.warnings.append(f"{ch}/{st}: correlation undefined for {cell.n} centers")
    run.finish(results)


def cmd_windowed(run: Run):
    ds = run.load(run.args.input)
    chans = {"both": (MANUAL, COMPUTERIZED), "manual": (MANUAL,), "computerized": (COMPUTERIZED,)}
    series = windowed_correlation(ds, run.args.window, run.args.scale, chans[run.args.channel])
    results = {}
    for name, ser in series.items():
        r = ser.r_values()
        results[name] = {
            "n_points": len(ser.points),
            "min_r": float(np.nanmin(r)) if np.isfinite(r).any() else None,
            "low_quartile_min_r": ser.quartile_min("low"),
            "high_quartile_min_r": ser.quartile_min("high"),
            "n_excluded": len(ser.excluded),
        }
    run.finish(results, plot=lambda fh: write_window_csv(series.values(), fh))


def _aggregates(run: Run, ds: Dataset):
    geo = geo_aggregates(ds, run.args.level, CHANNEL_ARG[run.args.channel])
    if geo.skipped:
        run.warnings.append(f"{len(geo.skipped)} units skipped (too few centers or constant percentages)")
    return geo


def cmd_geo(run: Run):
    ds = run.load(run.args.input, required=(RR, "E1998"))
    geo = _aggregates(run, ds)
    results = {"level": geo.level, "n_units": len(geo.aggregates), "r_star": r_star(geo.aggregates),
               "skipped": geo.skipped, "aggregates": [
                   {k: v for k, v in asdict(a).items() if k != "codes"} for a in geo.aggregates]}
    run.finish(results, plot=lambda fh: write_geo_csv(geo.aggregates, fh))


def cmd_permtest(run: Run):
    ds = run.load(run.args.input, required=(RR, "E1998"))
    geo = _aggregates(run, ds)
    res = perm_test_rstar(geo.aggregates, run.args.replicates, run.args.seed, run.args.stream,
                          run.args.workers)
    run.finish({"level": geo.level, "n_units": len(geo.aggregates), "test": res},
               plot=lambda fh: write_replicate_histogram(res, fh))


def cmd_splitcorr(run: Run):
    ds = run.load(run.args.input)
    events = [run.args.event] if run.args.event else ds.events()
    results = {}
    for e in events:
        try:
            sp = median_split_rs(ds, e)
        except UndefinedStatistic as exc:
            if run.args.event:
                raise
            run.warnings.append(f"{e}: {exc}")
            continue
        results[e] = {"median_s": sp.median_s, "r_low": sp.r_low, "r_high": sp.r_high, "diff": sp.diff,
                      "n_low": sp.n_low, "n_high": sp.n_high}
    run.finish(results)


def cmd_ks(run: Run):
    a = run.args
    if a.d is not None:
        if a.n1 is None or a.n2 is None:
            raise UsageError("--d needs --n1 and --n2")
        run.finish({"statistic": a.d, "n1": a.n1, "n2": a.n2, "p_value": ks_pvalue(a.d, a.n1, a.n2)})
        return
    if a.input is None:
        raise UsageError("ks needs --in or --d/--n1/--n2")
    ds = run.load(a.input)
    if a.group_flag == "in20":
        dist, means = county20_comparison(ds, a.event, a.variable)
        run.finish({"ks": dist.ks, "means": means})
        return
    from .metrics import compute_k, compute_s
    attr = {"sel192": "selected_192", "aud26": "audited_26", "coldaud": "cold_audited",
            "hamlet": "hamlet"}[a.group_flag]
    groups = {True: [], False: []}
    for c in ds:
        if not c.computerized:
            continue
        try:
            v = compute_k(c, a.event) if a.variable == "k" else compute_s(c)
        except UndefinedStatistic:
            continue
        groups[bool(getattr(c, attr))].append(v)
    if not groups[True] or not groups[False]:
        raise UndefinedStatistic(f"group {a.group_flag} or its complement is empty")
    run.finish({"ks": ks_two_sample(groups[True], groups[False])})


def cmd_hotaudit(run: Run):
    ds = run.load(run.args.input)
    n_aud = sum(c.audited_26 for c in ds)
    if n_aud and run.args.subset_size != n_aud:
        run.warnings.append(f"subset size {run.args.subset_size} differs from {n_aud} audited centers")
    summary = hot_audit_report(ds, run.args.replicates, run.args.seed, run.args.stream,
                               run.args.subset_size, run.args.workers)
    run.finish(summary, plot=lambda fh: write_replicate_histogram(summary.mc, fh))


def cmd_coldaud(run: Run):
    ds = run.load(run.args.input)
    run.finish(cold_audit_compare(ds))


def cmd_county20(run: Run):
    ds = run.load(run.args.input)
    dist, means = county20_comparison(ds, run.args.event, run.args.variable)
    run.finish({"distribution": dist, "means": means}, plot=lambda fh: write_dist_csv(dist, fh))


def cmd_repvar(run: Run):
    ds = run.load(run.args.input, required=(RR, "E1998"))
    group = {"all": None, "in20": Filter(in20=True), "out": Filter(in20=False)}[run.args.group]
    rv = rep_variation(ds, CHANNEL_ARG[run.args.channel], group)
    if rv.fit is None:
        raise UndefinedStatistic("least-squares line undefined (fewer than 2 distinct x values)")
    results = {"n_points": len(rv.points), "fit": rv.fit, "n_excluded": len(rv.excluded),
               "excluded": rv.excluded}
    if run.args.rect:
        d0, d1, g0, g1 = run.args.rect
        codes, any_sel = rv.rectangle((d0, d1), (g0, g1))
        results["rectangle"] = {"codes": codes, "n_inside": len(codes), "any_selected": any_sel}
    run.finish(results, plot=lambda fh: write_rep_csv(rv, fh))


_GROUP_ATTR = {"sel192": "selected_192", "aud26": "audited_26", "coldaud": "cold_audited",
               "in20": "in_20_counties", "hamlet": "hamlet"}


def cmd_stemleaf(run: Run):
    from .metrics import compute_s
    ds = run.load(run.args.input)

    def s_values(flag):
        out = []
        for c in ds:
            if getattr(c, _GROUP_ATTR[flag]):
                try:
                    out.append(compute_s(c))
                except UndefinedStatistic:
                    pass
        return out

    right = s_values(run.args.group)
    left = s_values(run.args.back_to_back) if run.args.back_to_back != "none" else None
    text = stem_and_leaf(right, left)
    results = {"group": run.args.group, "n": len(right), "back_to_back": run.args.back_to_back,
               "n_back": None if left is None else len(left), "text": text}
    if run.args.out is None:
        sys.stdout.write(text)
    run.finish(results, extra_files={"stemleaf.txt": lambda fh: fh.write(text)})


def _synth_config(a, model=None, **over) -> SynthConfig:
    kw = dict(n_centers=a.n_centers, model=model or a.model, seed=a.seed)
    if a.noise_sigma is not None:
        kw["noise_sigma"] = a.noise_sigma
    if a.lam is not None:
        kw["lam"] = a.lam
    kw.update(over)
    return SynthConfig(**kw)


def cmd_synth(run: Run):
    cfg = _synth_config(run.args)
    ds, rep = generate_with_report(cfg)
    results = {"config": cfg.to_dict(), "n_centers": len(ds), "clamped_signers": rep.clamped_signers,
               "clamped_forced": rep.clamped_forced, "clamp_rate": rep.clamp_rate}
    if rep.clamp_rate > 0.01:
        run.warnings.append(f"clamp rate {rep.clamp_rate:.3%} exceeds 1%")
    if run.args.out is None:
        write_centers(ds, sys.stdout)
        return
    run.finish(results, extra_files={"synth.csv": lambda fh: write_centers(ds, fh)})


def cmd_power(run: Run):
    a = run.args
    models = a.models.split(",")
    sigmas = [float(x) for x in a.noise_sigmas.split(",")] if a.noise_sigmas else [None]
    detectors = [d for d in a.detectors.split(",") if d] if a.detectors else []
    grid = []
    for m in models:
        for sg in sigmas:
            over = {} if sg is None else {"noise_sigma": sg}
            grid.append(_synth_config(a, model=m, **over))
    rows = detector_power(grid, detectors, a.datasets, a.seed, window=a.window, threshold=a.threshold,
                          perm_replicates=a.perm_replicates)
    run.finish({"rows": rows})


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="rrforensics", description="Signature/vote forensics for center-level referendum data.",
                formatter_class=fmt)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_, needs_input=True):
        sp = sub.add_parser(name, help=help_, description=help_, formatter_class=fmt)
        if needs_input:
            sp.add_argument("--in", dest="input", required=True, help="center CSV path, or - for stdin")
        sp.add_argument("--out", help="output directory (default: report to stdout)")
        sp.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        sp.set_defaults(func=func)
        return sp

    def seeded(sp, replicates=True):
        sp.add_argument("--seed", type=int, required=True, help="64-bit seed (required)")
        sp.add_argument("--stream", type=int, default=0, help="stream index under the seed")
        if replicates:
            sp.add_argument("--replicates", type=int, default=100_000, help="Monte Carlo replicates")
            sp.add_argument("--workers", type=int, default=1, help="worker threads")

    def geo_opts(sp):
        sp.add_argument("--level", choices=("state", "county", "township"), default="township")
        sp.add_argument("--channel", choices=tuple(CHANNEL_ARG), default="computerized")

    sp = add("ingest", cmd_ingest, "validate a center file and emit it in canonical form")
    sp.add_argument("--events", help="comma-separated event ids the header must carry")

    add("metrics", cmd_metrics, "per-center k, s, k_max, opposition shares and change")

    sp = add("table1", cmd_table1, "r(signatures, si) by channel and s stratum")
    sp.add_argument("--split", type=float, default=0.5, help="s threshold between strata")

    sp = add("windowed", cmd_windowed, "moving-window correlation along sorted s")
    sp.add_argument("--window", type=int, default=150, help="centers per window")
    sp.add_argument("--scale", choices=("linear", "log"), default="linear")
    sp.add_argument("--channel", choices=("both", "manual", "computerized"), default="both",
                    help="which channel series to compute")

    sp = add("geo", cmd_geo, "per-unit r_1998, r_si, pooled change and r_star")
    geo_opts(sp)

    sp = add("permtest", cmd_permtest, "permutation test of r_star")
    geo_opts(sp)
    seeded(sp)

    sp = add("splitcorr", cmd_splitcorr, "median-split r(s, opposition %) per event")
    sp.add_argument("--event", choices=EVENTS, help="single event (default: every event present)")

    sp = add("ks", cmd_ks, "two-sample Kolmogorov-Smirnov test", needs_input=False)
    sp.add_argument("--in", dest="input", help="center CSV path, or - for stdin")
    sp.add_argument("--event", choices=EVENTS, default=RR)
    sp.add_argument("--variable", choices=("k", "s"), default="k")
    sp.add_argument("--group-flag", choices=("in20", "sel192", "aud26", "coldaud", "hamlet"), default="in20",
                    help="computerized centers with the flag set vs not set")
    sp.add_argument("--d", type=float, help="evaluate the p-value of a given statistic D")
    sp.add_argument("--n1", type=int)
    sp.add_argument("--n2", type=int)

    sp = add("hotaudit", cmd_hotaudit, "audited vs selected s, skewness and subsample Monte Carlo")
    seeded(sp)
    sp.add_argument("--subset-size", type=int, default=26, help="centers drawn per replicate")

    add("coldaudit", cmd_coldaud, "r(signatures, si) in the universe vs the cold-audit sample")

    sp = add("county20", cmd_county20, "inside vs outside the 20 hot-audit counties")
    sp.add_argument("--event", choices=EVENTS, default=RR)
    sp.add_argument("--variable", choices=("k", "s"), default="k")

    sp = add("repvar", cmd_repvar, "registry growth vs opposition change with least-squares line")
    sp.add_argument("--channel", choices=tuple(CHANNEL_ARG), default="computerized")
    sp.add_argument("--group", choices=("all", "in20", "out"), default="all")
    sp.add_argument("--rect", type=float, nargs=4, metavar=("D0", "D1", "G0", "G1"),
                    help="rectangle query: delta range then growth range")

    sp = add("stemleaf", cmd_stemleaf, "back-to-back stem-and-leaf of s (stem 0.1, leaf 0.01)")
    sp.add_argument("--group", choices=tuple(_GROUP_ATTR), default="sel192", help="right-hand sample")
    sp.add_argument("--back-to-back", choices=tuple(_GROUP_ATTR) + ("none",), default="aud26",
                    help="left-hand sample")

    def synth_opts(sp):
        sp.add_argument("--n-centers", type=int, default=SynthConfig.n_centers)
        sp.add_argument("--lam", type=float, default=None, help=f"forced-linear slope (default {SynthConfig.lam})")

    sp = add("synth", cmd_synth, "generate a synthetic center file", needs_input=False)
    sp.add_argument("--model", choices=("honest", "forced_linear"), default="honest")
    sp.add_argument("--noise-sigma", type=float, default=None,
                    help=f"forced-linear noise in votes (default {SynthConfig.noise_sigma})")
    synth_opts(sp)
    seeded(sp, replicates=False)

    sp = add("power", cmd_power, "detector flag rates on synthetic data", needs_input=False)
    sp.add_argument("--models", default="honest,forced_linear")
    sp.add_argument("--noise-sigmas", default=None, help="comma-separated noise_sigma sweep")
    sp.add_argument("--noise-sigma", type=float, default=None, help=argparse.SUPPRESS)
    sp.add_argument("--detectors", default=",".join(DETECTORS))
    sp.add_argument("--datasets", type=int, default=100, help="synthetic datasets per config cell")
    sp.add_argument("--window", type=int, default=150)
    sp.add_argument("--threshold", type=float, default=0.9, help="windowed-flatness threshold")
    sp.add_argument("--perm-replicates", type=int, default=2000, help="replicates per r_star test")
    synth_opts(sp)
    seeded(sp, replicates=False)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"rrforensics: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = Run(args.command, args)
    try:
        args.func(run)
    except UsageError as exc:
        print(f"rrforensics {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataValidationError as exc:
        print(f"rrforensics {args.command}: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except UndefinedStatistic as exc:
        print(f"rrforensics {args.command}: undefined statistic: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED
    except ValueError as exc:
        print(f"rrforensics {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


run = main
