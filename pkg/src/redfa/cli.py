"""Command-line interface: ``redfa fit | simulate | compare | regress``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .exceptions import NumericError, RedfaError, UsageError
from .sampler import SamplerConfig
from .spectra import RunConfig, read_bands



def _sampler_from_args(args) -> SamplerConfig:
    return SamplerConfig(n_iter=args.iters, burn_in=args.burn_in, thin=args.thin, seed=args.seed,
                         moves_per_sweep=args.moves_per_sweep)


def _label_map(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"--label-map expects OLD=NEW, got {item!r}")
        old, new = item.split("=", 1)
        out[old] = new
    return out


def cmd_fit(args) -> int:
    from .pipeline import analyze

    config = RunConfig(
        input_path=args.input,
        group_by=args.group_by,
        exclude_bands=read_bands(args.exclude_bands),
        label_map=_label_map(args.label_map),
        transpose=args.transpose,
        sigma_lambda=args.sigma_lambda,
        alpha=args.alpha,
        alpha_z=args.alpha_z,
        sampler=_sampler_from_args(args),
        K_max=args.kmax,
        G_max=args.gmax,
        search_budget=args.search_budget,
        axis_neighbors=args.axis_neighbors,
        out_dir=args.out,
        jobs=args.jobs,
    )
    outcomes = analyze(config)
    for o in outcomes:
        if o.ok:
            print(f"{o.group}: K={o.K} G={o.G} -> {o.directory}")
        else:
            print(f"{o.group}: FAILED ({o.error})", file=sys.stderr)
    if not any(o.ok for o in outcomes):
        return NumericError.exit_code
    return 0


def cmd_simulate(args) -> int:
    from .pipeline import file_header
    from .synth import SimDesign, run_study

    cfg = {}
    if args.design:
        with open(args.design) as fh:
            cfg = json.load(fh)
    design = SimDesign.from_dict(cfg.get("design", {}))
    if args.replicates is not None:
        design = replace(design, B=args.replicates)
    sampler = SamplerConfig(**cfg.get("sampler", {}))
    report = run_study(design, sampler, n_jobs=args.jobs)
    manifest = report.manifest()
    report.write(args.out, header=file_header(design.seed, manifest["config_hash"]))
    for metric in ("ari", "mse", "rv"):
        table = report.summary(metric)
        print(f"{metric.upper()} mean (sd) by K, G")
        for row in table.itertuples():
            print(f"  K={row.K} G={row.G}: {row.mean:.3f} ({row.sd:.3f})")
    sel = report.selection_table()
    if not sel.empty:
        print("selection proportions")
        for row in sel.itertuples():
            print(f"  K={row.K} G={row.G}: {row.proportion:.3f}")
    if report.failures:
        print(f"{len(report.failures)} failed fits recorded in manifest.json", file=sys.stderr)
    return 0


def _parse_range(text):
    if text is None:
        return None
    try:
        lo, hi = (int(v) for v in text.split(":"))
    except ValueError:
        raise UsageError(f"--range expects lo:hi, got {text!r}")
    return lo, hi


def cmd_compare(args) -> int:
    from .pipeline import compare_groups

    report = compare_groups(args.a, args.b, _parse_range(args.range))
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def cmd_regress(args) -> int:
    from .pipeline import FLOAT_FMT, load_result, regress_traits

    fit = load_result(args.fit)
    table = regress_traits(fit, args.responses)
    out = args.out or os.path.join(args.fit, "regression.csv")
    meta = fit.summary.get("_meta", {})
    with open(out, "w", newline="") as fh:
        fh.write(f"# redfa {__version__} seed={meta.get('seed')} "
                 f"config_hash={meta.get('config_hash')}\n")
        table.to_csv(fh, index=False, float_format=FLOAT_FMT, lineterminator="\n")
    print(table.to_string(index=False))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="redfa", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"redfa {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="select (K, G) and fit each group of a spectra CSV")
    fit.add_argument("--input", required=True)
    fit.add_argument("--group-by")
    fit.add_argument("--label-map", action="append", metavar="OLD=NEW",
                     help="merge group labels, e.g. GRS=Pasture (repeatable)")
    fit.add_argument("--exclude-bands", default="defaults",
                     help="'defaults', 'none', or a file of lo,hi lines")
    fit.add_argument("--transpose", action="store_true", help="input rows are wavenumbers")
    fit.add_argument("--kmax", type=int, default=10)
    fit.add_argument("--gmax", type=int, default=None)
    fit.add_argument("--iters", type=int, default=3000)
    fit.add_argument("--burn-in", type=int, default=1000)
    fit.add_argument("--thin", type=int, default=2)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--moves-per-sweep", type=int, default=None)
    fit.add_argument("--sigma-lambda", type=float, default=5.0)
    fit.add_argument("--alpha", type=float, default=2.5)
    fit.add_argument("--alpha-z", type=float, default=1.0)
    fit.add_argument("--search-budget", type=int, default=10)
    fit.add_argument("--axis-neighbors", action="store_true")
    fit.add_argument("--jobs", type=int, default=1)
    fit.add_argument("--out", required=True)
    fit.set_defaults(func=cmd_fit)

    sim = sub.add_parser("simulate", help="run the synthetic replication study")
    sim.add_argument("--design", help="JSON file with 'design' and 'sampler' sections")
    sim.add_argument("--replicates", type=int, default=None, help="override B")
    sim.add_argument("--jobs", type=int, default=1)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    cmp_ = sub.add_parser("compare", help="compare two fitted groups")
    cmp_.add_argument("--a", required=True)
    cmp_.add_argument("--b", required=True)
    cmp_.add_argument("--range", help="1-based inclusive variable range lo:hi")
    cmp_.add_argument("--out", help="write the JSON report here as well")
    cmp_.set_defaults(func=cmd_compare)

    reg = sub.add_parser("regress", help="cluster-wise regression of traits on spectra")
    reg.add_argument("--fit", required=True, help="a group directory written by 'fit'")
    reg.add_argument("--responses", required=True)
    reg.add_argument("--out")
    reg.set_defaults(func=cmd_regress)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RedfaError as exc:
        print(f"redfa: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"redfa: numeric failure: {exc}", file=sys.stderr)
        return NumericError.exit_code
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"redfa: error: {exc}", file=sys.stderr)
        return UsageError.exit_code


if __name__ == "__main__":
    sys.exit(main())
