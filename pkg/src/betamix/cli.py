"""Command-line interface: ``betamix <subcommand> [options]``.

Exit codes: 0 success, 1 input error, 2 numeric failure or EM non-convergence
(outputs are still written in the latter case).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .angles import ZVector, ingest, pairwise_z, standardize, z_to_abs_r
from .exceptions import BetaMixError, InputError, NumericError
from .graph import (
    bayes_edges,
    centrality_clusters,
    classify_majority,
    frequentist_edges,
    format_clusters,
    format_edges,
    read_labels,
)
from .mixture import FitOptions, MixtureParams, bayes_threshold, fit, fit_summary
from .simulation import CorrelationSpec, Scenario, format_results, parse_scenarios, run_scenario
from .special import beta_quantile, reg_inc_beta

log = logging.getLogger("betamix")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2
DEFAULT_TAU = 0.01
DEFAULT_EPSILON = 1e-5


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 is reserved for numeric failures here
    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


def _write_text(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _npz_path(json_path) -> Path:
    p = Path(json_path)
    stem = p.name[:-5] if p.name.endswith(".json") else p.name
    return p.with_name(stem + ".z.npz")


def _fit_options(args) -> FitOptions:
    return FitOptions(
        estimate_ess=args.estimate_ess,
        estimate_c_delta=args.estimate_cdelta,
        delta=args.delta,
    )


def _load_z(args) -> ZVector:
    data = ingest(args.input, transpose=args.transpose, na_policy=args.na_policy)
    if data.P * (data.P - 1) // 2 < 10:
        raise InputError(f"{args.input}: {data.P} variables give fewer than 10 pairs")
    return pairwise_z(standardize(data, center=not args.no_center), threads=args.threads)


def _edge_graph(args, zv):
    """Graph by the Bayes rule (default) or, with --epsilon, the screening rule.

    Returns (graph, fit result or None).
    """
    if args.epsilon is not None:
        result = fit(zv, _fit_options(args)) if args.estimate_ess else None
        nu = result.params.nu if result else float(zv.n_samples)
        return frequentist_edges(zv, nu, args.epsilon), result
    result = fit(zv, _fit_options(args))
    tau = DEFAULT_TAU if args.tau is None else args.tau
    return bayes_edges(zv, result.posteriors, tau), result


def _status(result) -> int:
    if result is not None and not result.converged:
        log.warning("EM did not converge in %d iterations", result.iterations)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_fit(args) -> int:
    zv = _load_z(args)
    result = fit(zv, _fit_options(args))
    tau = DEFAULT_TAU if args.tau is None else args.tau
    eps = DEFAULT_EPSILON if args.epsilon is None else args.epsilon
    summary = fit_summary(result, zv, tau=tau, epsilon=eps)
    text = json.dumps(summary, indent=2) + "\n"
    if args.output and args.output != "-":
        npz = _npz_path(args.output)
        tmp = f"{npz}.tmp{os.getpid()}"
        with open(tmp, "wb") as fh:
            np.savez(fh, z=zv.z, r=zv.r, posteriors=result.posteriors, n_samples=zv.n_samples)
        os.replace(tmp, npz)
    _write_text(args.output, text)
    return _status(result)


def cmd_edges(args) -> int:
    if args.tau is not None and args.epsilon is not None:
        raise InputError("edges: give exactly one of --tau and --epsilon")
    zv = _load_z(args)
    g, result = _edge_graph(args, zv)
    _write_text(args.output, format_edges(g))
    return _status(result)


DESK_SCENARIOS = [
    CorrelationSpec("clusters", 500, 0.3, 25, seed=1),
    CorrelationSpec("clusters", 500, 0.9, 25, seed=1),
    CorrelationSpec("cycle", 500, 0.9, 25, seed=1),
]


def cmd_simulate(args) -> int:
    defaults = {
        "center": not args.no_center,
        "estimate_ess": args.estimate_ess,
        "estimate_c_delta": args.estimate_cdelta,
        "delta": args.delta,
        "tau": DEFAULT_TAU if args.tau is None else args.tau,
        "reps": 30 if args.full else 5,
    }
    if args.input:
        try:
            text = Path(args.input).read_text()
        except OSError as exc:
            raise InputError(f"cannot read {args.input}: {exc}") from exc
        scenarios = parse_scenarios(text, defaults)
        if args.full:
            scenarios = [Scenario(s.spec, s.n, 30, s.tau, s.center, s.options) for s in scenarios]
    else:
        options = FitOptions(estimate_ess=args.estimate_ess, estimate_c_delta=args.estimate_cdelta, delta=args.delta)
        scenarios = [
            Scenario(spec, 200, defaults["reps"], defaults["tau"], defaults["center"], options) for spec in DESK_SCENARIOS
        ]
    if args.seed is not None:
        scenarios = [replace(s, spec=replace(s.spec, seed=args.seed)) for s in scenarios]
    results = [run_scenario(s, threads=args.threads or 1) for s in scenarios]
    _write_text(args.output, format_results(results))
    if any(not rep["converged"] for res in results for rep in res.per_rep):
        log.warning("EM did not converge in at least one repetition")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_cluster(args) -> int:
    zv = _load_z(args)
    g, result = _edge_graph(args, zv)
    assignment = centrality_clusters(g, min_centrality=args.min_centrality, overlap=not args.no_overlap)
    _write_text(args.output, format_clusters(assignment, g.node_names))
    log.info("%d clusters, %d unassigned nodes", len(assignment.clusters), len(assignment.unassigned))
    return _status(result)


def cmd_classify(args) -> int:
    if not args.labels:
        raise InputError("classify needs --labels PATH (node,label file for the training nodes)")
    zv = _load_z(args)
    g, result = _edge_graph(args, zv)
    train = read_labels(args.labels)
    predicted = classify_majority(g, train, min_neighbors=args.min_neighbors, default_label=args.default_label)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node", "label"])
    for node in sorted(predicted):
        w.writerow([g.node_names[node], predicted[node]])
    _write_text(args.output, buf.getvalue())
    return _status(result)


def plot_table(summary: dict, z, bins: int = 100) -> str:
    """Bin-averaged histogram and fitted densities over [min z, 1] as CSV text."""
    params = MixtureParams(
        p0=summary["p0"], a=summary["a"], b=summary["b"], nu=summary["nu"], c_delta=summary["c_delta"]
    )
    z = np.asarray(z, dtype=float)
    edges = np.linspace(float(z.min()), 1.0, bins + 1)
    width = np.diff(edges)
    counts, _ = np.histogram(z, bins=edges)
    hist = counts / (z.size * width)
    s, _ = params.null_shape
    null_cdf = reg_inc_beta(edges, s, 0.5)
    w = np.minimum(edges / params.c_delta, 1.0)
    nonnull_cdf = reg_inc_beta(w, params.a, params.b)
    null = params.p0 * np.diff(null_cdf) / width
    nonnull = (1.0 - params.p0) * np.diff(nonnull_cdf) / width
    thr = summary.get("z_threshold_bayes")
    thr_text = "NA" if thr is None else repr(float(thr))
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["bin_center", "histogram_density", "null_density", "nonnull_density", "mixture_density", "threshold"])
    centers = 0.5 * (edges[:-1] + edges[1:])
    for row in zip(centers, hist, null, nonnull, null + nonnull):
        out.writerow([f"{v:.10g}" for v in row] + [thr_text])
    return buf.getvalue()


def cmd_plotdata(args) -> int:
    if not args.input:
        raise InputError("plotdata needs --input FIT.json (written by `betamix fit --output`)")
    try:
        summary = json.loads(Path(args.input).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read fit summary {args.input}: {exc}") from exc
    npz = _npz_path(args.input)
    try:
        with np.load(npz) as data:
            z = data["z"]
    except (OSError, KeyError, ValueError) as exc:
        raise InputError(f"cannot read z values {npz}: {exc}") from exc
    if args.bins < 1:
        raise InputError("--bins must be positive")
    _write_text(args.output, plot_table(summary, z, args.bins))
    return EXIT_OK


def cmd_threshold(args) -> int:
    if args.tau is not None and args.epsilon is not None:
        raise InputError("threshold: give at most one of --tau and --epsilon")
    zv = _load_z(args)
    result = None
    if args.tau is None:
        eps = DEFAULT_EPSILON if args.epsilon is None else args.epsilon
        if args.estimate_ess:
            result = fit(zv, _fit_options(args))
        nu = result.params.nu if result else float(zv.n_samples)
        rule, param, zt = "frequentist", eps, beta_quantile(eps, (nu - 1.0) / 2.0, 0.5)
    else:
        result = fit(zv, _fit_options(args))
        nu = result.params.nu
        rule, param, zt = "bayes", args.tau, bayes_threshold(zv, result.posteriors, args.tau)
    abs_r = math.nan if math.isnan(zt) else z_to_abs_r(zt)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rule", "parameter", "nu", "z_threshold", "abs_r_threshold"])
    w.writerow([rule, repr(param), repr(nu), "NA" if math.isnan(zt) else repr(zt), "NA" if math.isnan(abs_r) else repr(abs_r)])
    _write_text(args.output, buf.getvalue())
    return _status(result)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="betamix", description="Correlation networks from a beta mixture on squared sines.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--input", help="input file")
    common.add_argument("--output", help="output file (default: stdout)")
    common.add_argument("--transpose", action="store_true", help="variables are rows of the input")
    common.add_argument("--no-center", action="store_true", help="do not center columns before scaling")
    common.add_argument("--na-policy", default="error", choices=["error", "drop_rows", "impute_zero"])
    common.add_argument("--estimate-ess", action="store_true", help="estimate the effective sample size")
    common.add_argument("--estimate-cdelta", action="store_true", help="truncate the non-null support at C_delta")
    common.add_argument("--delta", type=float, default=1e-3, help="tolerance for C_delta (default 1e-3)")
    common.add_argument("--tau", type=float, help="posterior null threshold for the Bayes edge rule (default 0.01)")
    common.add_argument("--epsilon", type=float, help="null quantile level for the screening rule (default 1e-5)")
    common.add_argument("--seed", type=int, help="random seed (simulate)")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(func=func)
        return p

    add("fit", cmd_fit, "fit the mixture and write a JSON summary")
    add("edges", cmd_edges, "write the detected edge list")
    p = add("simulate", cmd_simulate, "run simulation scenarios and print a TPR/FDR table")
    p.add_argument("--full", action="store_true", help="30 repetitions per scenario instead of 5")
    p = add("cluster", cmd_cluster, "centrality-seeded clustering of the graph")
    p.add_argument("--min-centrality", type=float, default=3.0)
    p.add_argument("--no-overlap", action="store_true", help="clusters do not share members")
    p = add("classify", cmd_classify, "majority-vote labels for unlabeled nodes")
    p.add_argument("--labels", help="node,label file with the training labels")
    p.add_argument("--min-neighbors", type=int, default=1)
    p.add_argument("--default-label", default="bad")
    p = add("plotdata", cmd_plotdata, "histogram and fitted densities for plotting")
    p.add_argument("--bins", type=int, default=100)
    add("threshold", cmd_threshold, "report the z and |r| edge thresholds")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(format="betamix: %(message)s", stream=sys.stderr)
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_INPUT
        log.setLevel(logging.INFO if args.verbose else logging.WARNING)
        for name in ("delta", "tau", "epsilon"):
            val = getattr(args, name)
            if val is None:
                continue
            if name == "tau" and not val > 0:
                raise InputError("--tau must be positive")
            if name != "tau" and not 0 < val < 1:
                raise InputError(f"--{name} must lie in (0, 1)")
        if args.threads is not None and args.threads < 1:
            raise InputError("--threads must be positive")
        if args.command not in ("simulate", "plotdata") and not args.input:
            raise InputError(f"{args.command} needs --input PATH")
        return args.func(args)
    except NumericError as exc:
        print(f"betamix: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (BetaMixError, ValueError, OSError) as exc:
        print(f"betamix: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
