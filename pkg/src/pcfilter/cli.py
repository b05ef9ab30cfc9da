"""Command-line surface: analyze, simulate, tune-kappa, diagnose-kappa-star, enrich.

Every subcommand writes CSV outputs plus a JSON run manifest (inputs with
content hashes, seed, library versions, parameters) into --out.  Outputs
carry no timestamps, so the same invocation with the same seed reproduces
every file byte for byte.  Exit codes: 0 success, 1 invalid input or usage,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys

import numpy as np
import scipy

import matplotlib

from . import __version__
from .calibrate import TUNABLE_PROCEDURES, tune_kappa
from .combine import COMBINERS, METRICS, PCHSpec
from .diagnose import diagnostics_rows, kappa_star_curve
from .enrich import DEFAULT_PERMUTATIONS, ENRICH_COLUMNS, enrich_gene_list, load_membership
from .errors import PCFilterError, ValidationError
from .io import (
    DIAG_COLUMNS,
    TUNE_COLUMNS,
    analyze,
    ingest,
    write_metrics_csv,
    write_report,
    write_rows,
)
from .select import PROCEDURES
from .simulate import SCENARIOS, NR_GRID, ScenarioConfig, rep_generator, run_experiment, run_nr_grid

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_CONFIG_KEYS = (
    "scenario", "m", "n", "r", "rho", "pi00", "pi1", "mu_set", "q", "s",
    "B", "alpha", "metric", "seed", "procedures", "nr_grid",
)


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _kappa_arg(text: str):
    if text == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"--kappa must be 'auto' or a number in (0, 1), got {text!r}"
        ) from None
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"--kappa must lie in (0, 1), got {text!r}")
    return value


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _versions() -> dict:
    return {
        "matplotlib": matplotlib.__version__,
        "numpy": np.__version__,
        "pcfilter": __version__,
        "python": platform.python_version(),
        "scipy": scipy.__version__,
    }


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    return value


def _write_manifest(out_dir, command, parameters, inputs, outputs, seed) -> str:
    data = {
        "command": command,
        "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in inputs],
        "outputs": sorted(os.path.basename(str(o)) for o in outputs),
        "parameters": _jsonable(parameters),
        "seed": seed,
        "versions": _versions(),
    }
    path = os.path.join(str(out_dir), "manifest.json")
    with open(path, "w") as handle:
        json.dump(data, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return path


def _out_dir(args) -> str:
    out = str(args.out)
    os.makedirs(out, exist_ok=True)
    return out


def _cmd_analyze(args) -> int:
    out = _out_dir(args)
    result = ingest(args.studies, args.format)
    spec = PCHSpec(
        n=result.pmatrix.n,
        r=args.r,
        alpha=args.alpha,
        metric=args.metric,
        combiner=args.combiner,
    )
    report = analyze(
        result.pmatrix,
        spec,
        procedure=args.procedure,
        kappa=args.kappa,
        dropped_count=result.dropped_count,
        coords=result.coords,
    )
    csv_path, sidecar = write_report(report, os.path.join(out, "report.csv"))
    outputs = [csv_path, sidecar]
    if not args.no_figures:
        from .figures import render_analysis_figure

        outputs.append(render_analysis_figure(report, os.path.join(out, "analysis.png")))
    parameters = {
        "alpha": args.alpha,
        "combiner": args.combiner,
        "format": args.format,
        "kappa": args.kappa,
        "metric": args.metric,
        "procedure": args.procedure,
        "r": args.r,
    }
    outputs.append(
        _write_manifest(out, "analyze", parameters, args.studies, outputs, args.seed)
    )
    print(
        f"analyze: rejected {report.n_rejected} of {report.m} hypotheses "
        f"({report.dropped_count} dropped in alignment)"
    )
    return 0


def _load_config(path) -> dict:
    path = str(path)
    try:
        if path.lower().endswith(".json"):
            with open(path) as handle:
                config = json.load(handle)
        else:
            with open(path, "rb") as handle:
                config = tomllib.load(handle)
    except OSError as exc:
        raise ValidationError(f"{path}: {exc.strerror or exc}") from exc
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ValidationError(f"{path}: cannot parse config ({exc})") from exc
    if not isinstance(config, dict):
        raise ValidationError(f"{path}: config must be a table of keys")
    unknown = sorted(set(config) - set(_CONFIG_KEYS))
    if unknown:
        raise ValidationError(f"{path}: unknown config keys {unknown}")
    return config


def _sweep_values(config) -> tuple[str, list]:
    """The swept field (rho or q) and its values; scalars become one-element sweeps."""
    if "q" in config and isinstance(config["q"], (list, tuple)):
        return "q", list(config["q"])
    if "rho" in config and isinstance(config["rho"], (list, tuple)):
        return "rho", list(config["rho"])
    if "q" in config:
        return "q", [config["q"]]
    return "rho", [config.get("rho", 0.0)]


def _cmd_simulate(args) -> int:
    out = _out_dir(args)
    config = _load_config(args.config)
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    procedures = config.get("procedures", list(PROCEDURES))
    procedures = [tuple(p) if isinstance(p, (list, tuple)) else p for p in procedures]
    sweep_key, sweep = _sweep_values(config)
    base = {
        key: config[key]
        for key in ("scenario", "m", "n", "r", "pi00", "pi1", "s", "B", "alpha", "metric")
        if key in config
    }
    if "mu_set" in config:
        base["mu_set"] = tuple(config["mu_set"])
    rows: list = []
    for value in sweep:
        cfg = ScenarioConfig(seed=seed, **base, **{sweep_key: value})
        if config.get("nr_grid", False):
            for result in run_nr_grid(cfg, procedures, NR_GRID):
                rows.extend(result.rows())
        else:
            rows.extend(run_experiment(cfg, procedures).rows())
    csv_path = write_metrics_csv(os.path.join(out, "metrics.csv"), rows)
    outputs = [csv_path]
    if not args.no_figures:
        from .figures import render_metrics_figure

        outputs.append(render_metrics_figure(rows, os.path.join(out, "metrics.png")))
    parameters = {"config": config, "config_path": str(args.config)}
    outputs.append(
        _write_manifest(out, "simulate", parameters, [args.config], outputs, seed)
    )
    print(f"simulate: wrote {len(rows)} metric rows")
    return 0


def _cmd_tune_kappa(args) -> int:
    out = _out_dir(args)
    result = ingest(args.studies, args.format)
    spec = PCHSpec(
        n=result.pmatrix.n,
        r=args.r,
        alpha=args.alpha,
        metric=args.metric,
        combiner=args.combiner,
    )
    kappa = tune_kappa(result.pmatrix, spec, procedure=args.procedure)
    csv_path = write_rows(
        os.path.join(out, "kappa.csv"), TUNE_COLUMNS, [(args.procedure, kappa)]
    )
    parameters = {
        "alpha": args.alpha,
        "combiner": args.combiner,
        "format": args.format,
        "metric": args.metric,
        "procedure": args.procedure,
        "r": args.r,
    }
    outputs = [csv_path]
    outputs.append(
        _write_manifest(out, "tune-kappa", parameters, args.studies, outputs, args.seed)
    )
    print(f"tune-kappa: {args.procedure} kappa = {kappa!r}")
    return 0


def _cmd_diagnose(args) -> int:
    out = _out_dir(args)
    diags = kappa_star_curve(
        args.mu, args.rho_grid, r=args.r, mc_samples=args.mc, seed=args.seed
    )
    rows = diagnostics_rows(diags)
    csv_path = write_rows(os.path.join(out, "diagnostics.csv"), DIAG_COLUMNS, rows)
    outputs = [csv_path]
    if not args.no_figures:
        from .figures import render_diagnostics_figure

        outputs.append(
            render_diagnostics_figure(rows, os.path.join(out, "diagnostics.png"))
        )
    parameters = {
        "mc": args.mc,
        "mu": list(args.mu),
        "r": args.r,
        "rho_grid": list(args.rho_grid),
    }
    outputs.append(
        _write_manifest(out, "diagnose-kappa-star", parameters, [], outputs, args.seed)
    )
    worst = max(row["kappa_star"] for row in rows)
    print(f"diagnose-kappa-star: max kappa threshold {worst:.4f} over {len(rows)} rho values")
    return 0


def _read_gene_list(path) -> list[str]:
    try:
        with open(path, encoding="utf-8") as handle:
            lines = handle.read().splitlines()
    except OSError as exc:
        raise ValidationError(f"{path}: {exc.strerror or exc}") from exc
    genes = [line.strip() for line in lines]
    return [g for g in genes if g and not g.startswith("#")]


def _cmd_enrich(args) -> int:
    out = _out_dir(args)
    membership = load_membership(args.membership)
    genes = _read_gene_list(args.genes)
    universe = _read_gene_list(args.universe) if args.universe else None
    rows = enrich_gene_list(
        genes,
        membership,
        universe=universe,
        rng=rep_generator(args.seed, 0),
        n_permutations=args.permutations,
        magnitude=args.magnitude,
    )
    csv_path = write_rows(os.path.join(out, "enrichment.csv"), ENRICH_COLUMNS, rows)
    outputs = [csv_path]
    if not args.no_figures:
        from .figures import render_enrichment_figure

        outputs.append(
            render_enrichment_figure(rows, os.path.join(out, "enrichment.png"))
        )
    inputs = [args.membership, args.genes] + ([args.universe] if args.universe else [])
    parameters = {
        "magnitude": args.magnitude,
        "permutations": args.permutations,
        "universe": args.universe,
    }
    outputs.append(_write_manifest(out, "enrich", parameters, inputs, outputs, args.seed))
    print(f"enrich: scored {len(rows)} pathways")
    return 0


def _add_io_args(sub, with_figures: bool = True) -> None:
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--seed", type=int, default=0, help="RNG seed recorded in the manifest")
    if with_figures:
        sub.add_argument(
            "--no-figures", action="store_true", help="skip the PNG next to the CSV output"
        )


def _add_spec_args(sub) -> None:
    sub.add_argument("studies", nargs="+", help="two or more study files (id, pvalue)")
    sub.add_argument("--r", type=int, required=True, help="replicability threshold r")
    sub.add_argument("--alpha", type=float, default=0.05, help="error budget (default 0.05)")
    sub.add_argument("--metric", choices=METRICS, default="fdr")
    sub.add_argument("--combiner", choices=COMBINERS, default="bonferroni")
    sub.add_argument("--format", choices=("tsv", "csv"), default=None,
                     help="override the per-file extension sniffing")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="pcfilter",
        description="Replicability analysis across dependent studies with e-value selection.",
    )
    parser.add_argument("--version", action="version", version=f"pcfilter {__version__}")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = subs.add_parser("analyze", help="align studies and run one selection procedure")
    _add_spec_args(p)
    p.add_argument("--procedure", choices=PROCEDURES, default="e-filter")
    p.add_argument("--kappa", type=_kappa_arg, default="auto",
                   help="'auto' (data-driven) or a fixed value in (0, 1)")
    _add_io_args(p)
    p.set_defaults(func=_cmd_analyze)

    p = subs.add_parser("simulate", help="run a scenario experiment from a config file")
    p.add_argument("--config", required=True, help="TOML or JSON scenario config")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed (default: use the config's)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-figures", action="store_true",
                   help="skip the PNG next to the CSV output")
    p.set_defaults(func=_cmd_simulate)

    p = subs.add_parser("tune-kappa", help="pick the calibrator exponent on real data")
    _add_spec_args(p)
    p.add_argument("--procedure", choices=TUNABLE_PROCEDURES, default="e-filter-fdr")
    _add_io_args(p, with_figures=False)
    p.set_defaults(func=_cmd_tune_kappa)

    p = subs.add_parser(
        "diagnose-kappa-star",
        help="estimate the calibrator exponent threshold over a dependence grid",
    )
    p.add_argument("--mu", type=_float_list, required=True,
                   help="comma-separated study means, e.g. 0,0,0,3")
    p.add_argument("--rho-grid", type=_float_list, required=True,
                   help="comma-separated equicorrelation values")
    p.add_argument("--mc", type=int, default=200_000, help="Monte Carlo samples per rho")
    p.add_argument("--r", type=int, default=None,
                   help="replicability threshold (default: all studies)")
    _add_io_args(p)
    p.set_defaults(func=_cmd_diagnose)

    p = subs.add_parser("enrich", help="pathway enrichment for a rejected gene list")
    p.add_argument("membership", help="two-column gene/pathway membership file")
    p.add_argument("genes", help="gene list, one id per line")
    p.add_argument("--universe", default=None, help="background gene list file")
    p.add_argument("--permutations", type=int, default=DEFAULT_PERMUTATIONS)
    p.add_argument("--magnitude", action="store_true",
                   help="score by |z| ln p instead of the signed product")
    _add_io_args(p)
    p.set_defaults(func=_cmd_enrich)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"pcfilter: error: {exc}", file=sys.stderr)
        return 1
    except PCFilterError as exc:
        print(f"pcfilter: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"pcfilter: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
