"""Command-line interface.

Exit codes: 0 success, 2 invalid input, 3 estimation did not converge.
JSON output is written with sorted keys and carries no timings, so a rerun
with the same seed is byte-identical whatever ``--threads`` is.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import inference, patents, synthetic
from .mnl import fit_mnl
from .model import FitResult, MixingSpec, ThetaVector, read_dataset, validate_dataset, write_dataset
from .optimize import OptimizerOptions, SingularInformationError
from .rc import RCOptions, SimulationUnderflowError, fit_rc
from .rng import Stream
from .sequences import AlternativePolicy, build_sequences, read_edges

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED = 0, 2, 3
log = logging.getLogger("netchoice")


class CLIError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# Output helpers


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _clean(obj):
    """Replace non-finite floats with None so JSON output stays strict."""
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _emit(args, payload: dict, table: str | None = None, rows: list[dict] | None = None) -> None:
    fmt = args.out_format
    if fmt == "table" and table is not None:
        text = table
    elif fmt == "csv" and rows is not None:
        text = _csv(rows)
    else:
        text = _dumps(_clean(payload))
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _load_json_arg(value: str) -> dict:
    """Inline JSON (starting with ``{``) or a path to a JSON file."""
    try:
        if value.lstrip().startswith("{"):
            return json.loads(value)
        return json.loads(Path(value).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CLIError(f"invalid JSON in {value!r}: {exc}") from None


def _load_dataset(path: str):
    data = read_dataset(path)
    problems = validate_dataset(data)
    if problems:
        raise CLIError("invalid dataset: " + "; ".join(problems[:10]))
    return data


def _fit_output(args, fit: FitResult) -> int:
    if args.out:
        Path(args.out).write_text(_dumps(_clean(fit.to_dict())) + "\n", encoding="utf-8")
    _emit(args, fit.to_dict(), inference.format_table(fit), inference.table_rows(fit))
    if not fit.converged:
        log.error("estimation did not converge: %s", fit.message)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


# ---------------------------------------------------------------------------
# Subcommands


def cmd_ingest(args) -> int:
    if args.format == "nber":
        corpus = patents.convert_nber(args.patents, args.citations)
    else:
        corpus = patents.load_corpus(args.patents, args.citations)
    errors = corpus.validate((args.year_min, args.year_max))
    years = corpus.years()
    summary = {
        "n_patents": len(corpus.patents),
        "n_citations": len(corpus.citations),
        "years": [years[0], years[-1]] if years else None,
        "n_categories": len({p.category for p in corpus.patents.values()}),
        "n_subcategories": len({p.subcategory for p in corpus.patents.values()}),
        "errors": errors[:100],
        "n_errors": len(errors),
    }
    if errors:
        _emit(args, summary)
        raise CLIError(f"corpus has {len(errors)} validation error(s), first: {errors[0]}")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        patents.write_corpus(corpus, out / "patents.csv", out / "citations.csv")
    _emit(args, summary, rows=[{k: v for k, v in summary.items() if k not in ("errors", "years")}])
    return EXIT_OK


def _read_attributes(path: str) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) != 2:
            raise CLIError("attribute CSV needs two columns: node,value")
        return {r[0].strip(): r[1].strip() for r in reader if r}


def cmd_build_dataset(args) -> int:
    stream = Stream(args.seed)
    if args.edges:
        attrs = _read_attributes(args.attributes) if args.attributes else None
        policy = AlternativePolicy(args.policy, args.negatives, attributes=attrs)
        data = build_sequences(read_edges(args.edges), policy, stream=stream)
        summary = {"source": "edges", "policy": policy.mode.value, "negatives": args.negatives}
    elif args.patents and args.citations:
        if args.cohort_year is None:
            raise CLIError("--cohort-year is required with --patents/--citations")
        corpus = patents.load_corpus(args.patents, args.citations)
        errors = corpus.validate()
        if errors:
            raise CLIError(f"corpus has {len(errors)} validation error(s), first: {errors[0]}")
        data, report = patents.build_patent_dataset_with_report(
            corpus, args.cohort_year, args.choosers, None if args.all_candidates else (args.negatives or 6),
            not args.no_category_restriction, stream)
        summary = {"source": "patents", "cohort_year": args.cohort_year,
                   "negatives": None if args.all_candidates else (args.negatives or 6), **report.to_dict()}
        if report.skipped_situations:
            log.warning("skipped %d situation(s): candidate pool too small", report.skipped_situations)
    else:
        raise CLIError("give either --edges or both --patents and --citations")
    write_dataset(data, args.out)
    summary.update(n_sequences=len(data), n_situations=data.n_situations,
                   characteristics=list(data.characteristic_names), out=str(args.out))
    _emit(args, summary)
    return EXIT_OK


def cmd_fit_mnl(args) -> int:
    data = _load_dataset(args.data)
    opts = OptimizerOptions(tol=args.tol, max_iter=args.max_iter, threads=args.threads)
    return _fit_output(args, fit_mnl(data, opts=opts))


def cmd_fit_rc(args) -> int:
    data = _load_dataset(args.data)
    spec_obj = _load_json_arg(args.spec)
    if args.correlated:
        spec_obj["correlated"] = True
    spec = MixingSpec.from_json(spec_obj)
    if spec.n_coefficients != len(data.characteristic_names):
        raise CLIError(f"spec has {spec.n_coefficients} coefficients, data has "
                       f"{len(data.characteristic_names)} characteristics")
    init = ThetaVector.from_json(_load_json_arg(args.init)) if args.init else None
    opts = RCOptions(tol=args.tol, max_iter=args.max_iter, threads=args.threads, n_draws=args.draws,
                     seed=args.seed, draw_scheme=args.draw_scheme, halton_skip=args.halton_skip)
    return _fit_output(args, fit_rc(data, spec, init=init, opts=opts))


def cmd_report(args) -> int:
    fit = FitResult.from_dict(_load_json_arg(args.fit))
    payload = {"fit": fit.to_dict(), "table": inference.table_rows(fit),
               "interpretation": patents.interpret_fit(fit, args.mass)}
    text = [inference.format_table(fit), ""]
    interp = payload["interpretation"]
    text.append("Medians: " + ", ".join(f"{r['characteristic']} {r['median']:.4f}" for r in interp["medians"]))
    for r in interp["substitution_rates"]:
        if r["rate"] is not None:
            text.append(f"Substitution rate {r['numerator']}/{r['denominator']}: {r['rate']:.4f}")
    for r in interp.get("intervals", []):
        text.append(f"{r['mass']:.0%} interval for {r['characteristic']}: ({r['lo']:.4f}, {r['hi']:.4f})")
    if "randomness" in interp:
        rd = interp["randomness"]
        text.append(f"Randomness diagnostic ({rd['caveat']}; threshold p > {rd['threshold']}):")
        for v in rd["coefficients"]:
            text.append(f"  {v['characteristic']}: {v['verdict']} (p = {inference.format_p(v['p_value'])})")
    if "wald_correlations" in interp:
        w = interp["wald_correlations"]
        text.append("Wald test, no correlation: " + (
            w["error"] if "error" in w else f"W = {w['statistic']:.4f}, dof {w['dof']}, p = {w['p_value']:.4g}"))
    if args.wald:
        res = inference.wald_test(fit, inference.restriction_matrix(fit, args.wald))
        payload["wald"] = {"parameters": list(args.wald), **res.to_dict()}
        text.append(f"Wald test {', '.join(args.wald)} = 0: W = {res.statistic:.4f}, dof {res.dof}, "
                    f"p = {res.p_value:.4g}")
    if args.restricted:
        restricted = FitResult.from_dict(_load_json_arg(args.restricted))
        res = inference.lr_test(fit, restricted)
        payload["lr"] = res.to_dict()
        text.append(f"Likelihood-ratio test: LR = {res.statistic:.4f}, dof {res.dof}, p = {res.p_value:.4g}")
    _emit(args, payload, "\n".join(text), payload["table"])
    return EXIT_OK


def _recovery_rows(name: str, est: str, res: synthetic.RecoveryResult) -> list[dict]:
    return [{"table": name, "estimator": est, **p.to_dict()} for p in res.parameters]


def _recovery_table(name: str, results: dict) -> str:
    out = []
    for est, res in results.items():
        out.append(f"{name} / {est}: {len(res.rows) - len(res.excluded)} converged of {len(res.rows)}")
        header = ("Parameter", "Truth", "Mean", "Median", "Min", "Max", "Bias", "Std. Error")
        out.append("  ".join(f"{h:>10}" for h in header))
        for p in res.parameters:
            cells = [p.name] + ["-" if v is None else f"{v:.4f}" for v in
                                (p.truth, p.mean, p.median, p.minimum, p.maximum, p.bias, p.std_error)]
            out.append("  ".join(f"{c:>10}" for c in cells))
        if res.misclassified_fraction is not None:
            out.append(f"networks with a scale judged random (p <= 0.10): {res.misclassified_fraction:.2%}")
        out.append("")
    return "\n".join(out)


def cmd_experiment(args) -> int:
    results = synthetic.run_preset(args.table, args.seed, desk=args.desk, threads=args.threads,
                                   results_dir=args.results_dir, n_networks=args.networks,
                                   n_nodes=args.nodes, n_draws=args.draws, draw_scheme=args.draw_scheme)
    payload = {"table": args.table, "desk": args.desk, "seed": args.seed,
               "results": {k: v.to_dict() for k, v in results.items()}}
    rows = [r for est, res in results.items() for r in _recovery_rows(args.table, est, res)]
    _emit(args, payload, _recovery_table(args.table, results), rows)
    return EXIT_OK


def cmd_robustness(args) -> int:
    corpus = patents.load_corpus(args.patents, args.citations)
    errors = corpus.validate()
    if errors:
        raise CLIError(f"corpus has {len(errors)} validation error(s), first: {errors[0]}")
    restrict = {"on": (True,), "off": (False,), "both": (True, False)}[args.restrict]
    opts = patents.StudyOptions(n_draws=args.draws, draw_scheme=args.draw_scheme, threads=args.threads)
    cells = patents.robustness_grid(corpus, args.years, args.choosers, args.negatives, restrict,
                                    args.seeds or [args.seed], opts=opts)
    payload = {"cells": [c.to_dict() for c in cells]}
    rows = []
    for c in cells:
        base = {"cohort_year": c.cohort_year, "n_choosers": c.n_choosers, "k_negatives": c.k_negatives,
                "restrict_category": c.restrict_category, "seed": c.seed, "error": c.error or ""}
        if c.fit is None:
            rows.append({**base, "parameter": "", "coefficient": "", "std_error": "", "p_value": ""})
        for r in (inference.table_rows(c.fit) if c.fit is not None else []):
            rows.append({**base, "parameter": r["parameter"], "coefficient": r["coefficient"],
                         "std_error": r["std_error"], "p_value": r["p_value"]})
    _emit(args, payload, patents.format_grid(cells), rows)
    return EXIT_OK


def cmd_study(args) -> int:
    data = _load_dataset(args.data)
    spec = MixingSpec.from_json(_load_json_arg(args.spec)) if args.spec else patents.PATENT_SPEC
    opts = patents.StudyOptions(n_draws=args.draws, seed=args.seed, draw_scheme=args.draw_scheme,
                                threads=args.threads, tol=args.tol, max_iter=args.max_iter)
    study = patents.run_patent_study(data, spec, opts)
    table = "\n".join([inference.format_table(study.fit), "", "MNL comparison:",
                       inference.format_table(study.mnl), "",
                       f"LR, MNL vs RC: {study.lr_mnl}", f"LR, correlations: {study.lr_correlations}"])
    _emit(args, study.to_dict(), table, inference.table_rows(study.fit))
    return EXIT_OK if study.fit.converged else EXIT_NOT_CONVERGED


def cmd_generate(args) -> int:
    if args.kind == "patents":
        if not (args.patents_out and args.citations_out):
            raise CLIError("--patents-out and --citations-out are required for --kind patents")
        spec = MixingSpec.from_json(_load_json_arg(args.spec)) if args.spec else patents.PATENT_SPEC
        theta = ThetaVector.from_json(_load_json_arg(args.theta)) if args.theta else patents.PATENT_TRUTH
        theta.check(spec)
        corpus = patents.generate_patent_corpus(args.n_patents, args.cohort_year, spec=spec, theta=theta,
                                                stream=Stream(args.seed))
        patents.write_corpus(corpus, args.patents_out, args.citations_out)
        _emit(args, {"kind": "patents", "n_patents": len(corpus.patents), "n_citations": len(corpus.citations),
                     "cohort_year": args.cohort_year, "spec": spec.to_json(), "theta": theta.to_json()})
        return EXIT_OK
    if not (args.spec and args.theta and args.out):
        raise CLIError("--spec, --theta and --out are required for --kind network")
    spec = MixingSpec.from_json(_load_json_arg(args.spec))
    theta = ThetaVector.from_json(_load_json_arg(args.theta))
    theta.check(spec)
    laws = synthetic.DEFAULT_LAWS if spec.n_coefficients == 2 else (synthetic.UniformLaw(-1.0, 1.0),) * spec.n_coefficients
    data = synthetic.generate_network(args.nodes, spec, theta, tuple(args.degree_range), tuple(args.altset_range),
                                      laws, Stream(args.seed), names=spec.names)
    write_dataset(data, args.out)
    _emit(args, {"kind": "network", "n_sequences": len(data), "n_situations": data.n_situations,
                 "out": str(args.out), "spec": spec.to_json(), "theta": theta.to_json()})
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def _global_options(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=_u64, default=d(0), help="master seed (unsigned 64-bit)")
    parser.add_argument("--threads", type=_positive, default=d(1), help="worker threads")
    parser.add_argument("--out-format", choices=("json", "table", "csv"), default=d("json"))
    parser.add_argument("-v", "--verbose", action="store_true", default=d(False))


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netchoice", description=__doc__.splitlines()[0])
    _global_options(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        _global_options(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "validate (and normalize) a patent corpus")
    p.add_argument("--patents", required=True)
    p.add_argument("--citations", required=True)
    p.add_argument("--format", choices=("csv", "nber"), default="csv")
    p.add_argument("--out-dir")
    p.add_argument("--year-min", type=int, default=patents.YEAR_BOUNDS[0])
    p.add_argument("--year-max", type=int, default=patents.YEAR_BOUNDS[1])

    p = add("build-dataset", cmd_build_dataset, "build choice sequences from edges or a patent corpus")
    p.add_argument("--edges")
    p.add_argument("--policy", default="AllOthers",
                   help="AllOthers, PredecessorsOnly or FilteredByAttribute")
    p.add_argument("--attributes", help="node,value CSV for FilteredByAttribute")
    p.add_argument("--patents")
    p.add_argument("--citations")
    p.add_argument("--cohort-year", type=int)
    p.add_argument("--choosers", type=int, default=10000)
    p.add_argument("--negatives", type=int)
    p.add_argument("--no-category-restriction", action="store_true")
    p.add_argument("--all-candidates", action="store_true",
                   help="keep every eligible candidate instead of sampling negatives")
    p.add_argument("--out", required=True)

    def fit_args(p):
        p.add_argument("--data", required=True)
        p.add_argument("--tol", type=float, default=1e-6)
        p.add_argument("--max-iter", type=int, default=200)
        p.add_argument("--out", help="also write the FitResult JSON here")

    p = add("fit-mnl", cmd_fit_mnl, "fit the multinomial logit")
    fit_args(p)

    p = add("fit-rc", cmd_fit_rc, "fit the repeated-choice mixed logit")
    fit_args(p)
    p.add_argument("--spec", required=True, help="MixingSpec JSON (inline or path)")
    p.add_argument("--init", help="starting ThetaVector JSON")
    p.add_argument("--draws", type=_positive, default=100)
    p.add_argument("--draw-scheme", choices=("pseudo", "halton"), default="pseudo")
    p.add_argument("--halton-skip", type=int, default=0)
    p.add_argument("--correlated", action="store_true")

    p = add("report", cmd_report, "render a fit with its inference")
    p.add_argument("--fit", required=True)
    p.add_argument("--restricted", help="nested restricted fit for a likelihood-ratio test")
    p.add_argument("--wald", nargs="+", metavar="PARAM", help="parameters jointly tested equal to zero")
    p.add_argument("--mass", type=float, default=0.90)

    p = add("experiment", cmd_experiment, "run a parameter-recovery experiment preset")
    p.add_argument("table", choices=sorted(synthetic.PRESETS))
    p.add_argument("--networks", type=_positive)
    p.add_argument("--nodes", type=_positive)
    p.add_argument("--draws", type=_positive)
    p.add_argument("--draw-scheme", choices=("pseudo", "halton"))
    p.add_argument("--desk", action="store_true", help="reduced sizes")
    p.add_argument("--results-dir", help="append-only per-network results (resumable)")

    p = add("robustness", cmd_robustness, "patent study over a grid of sampling choices")
    p.add_argument("--patents", required=True)
    p.add_argument("--citations", required=True)
    p.add_argument("--years", type=int, nargs="+", required=True)
    p.add_argument("--choosers", type=int, nargs="+", default=[10000])
    p.add_argument("--negatives", type=int, nargs="+", default=[6])
    p.add_argument("--restrict", choices=("on", "off", "both"), default="on")
    p.add_argument("--seeds", type=_u64, nargs="+")
    p.add_argument("--draws", type=_positive, default=100)
    p.add_argument("--draw-scheme", choices=("pseudo", "halton"), default="pseudo")

    p = add("study", cmd_study, "patent study: RC fit, inference suite and MNL comparison")
    fit_args(p)
    p.add_argument("--spec", help="MixingSpec JSON (default: the patent specification)")
    p.add_argument("--draws", type=_positive, default=100)
    p.add_argument("--draw-scheme", choices=("pseudo", "halton"), default="pseudo")

    p = add("generate", cmd_generate, "generate a synthetic network or patent corpus")
    p.add_argument("--kind", choices=("network", "patents"), default="network")
    p.add_argument("--nodes", type=_positive, default=1000)
    p.add_argument("--spec")
    p.add_argument("--theta")
    p.add_argument("--degree-range", type=int, nargs=2, default=[1, 20])
    p.add_argument("--altset-range", type=int, nargs=2, default=[1, 10])
    p.add_argument("--out")
    p.add_argument("--n-patents", type=_positive, default=500)
    p.add_argument("--cohort-year", type=int, default=1975)
    p.add_argument("--patents-out")
    p.add_argument("--citations-out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (SingularInformationError, SimulationUnderflowError) as exc:
        print(f"error: estimation failed: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (ValueError, KeyError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
