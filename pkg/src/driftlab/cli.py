"""Command-line entry point.

Subcommands: train, sweep, ot, cmi, friedman, bound. Exit codes are
shared across subcommands: 0 success, 2 invalid input or configuration,
3 numeric failure, 4 infeasible transport problem. All output is
deterministic: identical inputs produce byte-identical stdout.
"""

import argparse
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .cmi import (
    BilinearScorer,
    cnce_terms,
    contrastive_from_features,
    exact_cmi,
    load_joint,
    optimal_scorer,
    sample_contrastive,
)
from .errors import (
    ContractError,
    DomainError,
    InfeasibleError,
    NumericError,
    ParseError,
)
from .evalstats import (
    BoundInputs,
    bayes_bound,
    competition_ranks,
    emit_report,
    friedman,
    load_accuracy_table,
    load_rank_table,
)
from .ot import (
    CostMatrix,
    DiscreteMeasure,
    ar_wwd_primal,
    nested_cost,
    wasserstein_exact,
)
from .pipeline import (
    apply_overrides,
    load_config,
    run_experiment,
    run_sweep,
)
from .tensorcore import SplitMix64, as_tensor, backward, step, OptimState


def _fmt(value):
    """Ten significant digits, plain positional notation."""
    return np.format_float_positional(float(value), precision=10,
                                      unique=False, fractional=False)


def _fmt_rank(r):
    r = float(r)
    if r == int(r):
        return str(int(r))
    return repr(round(r, 4))


# ---------------------------------------------------------------------
# train / sweep
# ---------------------------------------------------------------------

def cmd_train(args):
    """Exit codes: 0 success, 2 invalid config, 3 numeric failure."""
    config = load_config(args.config)
    if args.set:
        config = apply_overrides(config, args.set)
    report_path = args.report
    if report_path is None:
        report_path = str(Path(args.config).with_suffix(".report.json"))
    report = run_experiment(config, report_path=report_path,
                            checkpoint_path=args.checkpoint)
    if args.format == "structured":
        sys.stdout.write(emit_report(report))
    else:
        print(f"config_hash {report['config_hash']}")
        print(f"final_target_acc {_fmt(report['final']['target_acc'])}")
        print(f"report {report_path}")
    return 0


def cmd_sweep(args):
    """Exit codes: 0 success, 2 invalid config or values, 3 numeric."""
    config = load_config(args.config)
    if args.set:
        config = apply_overrides(config, args.set)
    values = [v for v in args.values.split(",") if v.strip()]
    if not values:
        raise ContractError("sweep needs at least one value")
    results = run_sweep(config, values, field_name=args.field,
                        out_dir=args.out_dir)
    if args.format == "structured":
        sys.stdout.write(emit_report({"runs": results}))
    else:
        for r in results:
            path = r["report_path"] or "-"
            print(f"{r['run_id']} {r['config_hash'][:16]} "
                  f"{_fmt(r['final_target_acc'])} {path}")
    return 0


# ---------------------------------------------------------------------
# ot
# ---------------------------------------------------------------------

def _euclidean_cost(mu, nu):
    a = mu.atoms if mu.atoms.ndim == 2 else mu.atoms[:, None]
    b = nu.atoms if nu.atoms.ndim == 2 else nu.atoms[:, None]
    diff = a[:, None, :] - b[None, :, :]
    return CostMatrix(np.sqrt((diff ** 2).sum(axis=2)), p=1.0)


def _save_plan(plan, path):
    with open(path, "w", encoding="ascii") as fh:
        for i, j in zip(*np.nonzero(plan.matrix > 0)):
            fh.write(f"{i},{j},{repr(float(plan.matrix[i, j]))}\n")


def cmd_ot(args):
    """Exit codes: 0 success, 2 invalid input, 4 infeasible problem.

    --beta 0 solves the balanced problem; 0 < beta < 1 relaxes the
    source marginal. Without --nested the ground cost is the Euclidean
    distance between atoms (outer exponent 1); with --nested each atom
    is a feature vector and the ground cost is the 1-D quadratic
    transport distance between dimension measures.
    """
    from .ot import load_measure
    mu = load_measure(args.source)
    nu = load_measure(args.target)
    if args.nested:
        A = mu.atoms if mu.atoms.ndim == 2 else mu.atoms[:, None]
        B = nu.atoms if nu.atoms.ndim == 2 else nu.atoms[:, None]
        cost = nested_cost(A, B)
        mu = DiscreteMeasure(np.arange(A.shape[0], dtype=np.float64),
                             mu.weights)
        nu = DiscreteMeasure(np.arange(B.shape[0], dtype=np.float64),
                             nu.weights)
    else:
        cost = _euclidean_cost(mu, nu)
    if args.beta == 0.0:
        value, plan = wasserstein_exact(mu, nu, cost, p=cost.p)
    else:
        value, plan = ar_wwd_primal(mu, nu, cost, args.beta)
    if args.format == "structured":
        sys.stdout.write(emit_report({"distance": float(value),
                                      "beta": args.beta,
                                      "nested": bool(args.nested)}))
    else:
        print(_fmt(value))
    if args.plan:
        _save_plan(plan, args.plan)
    return 0


# ---------------------------------------------------------------------
# cmi
# ---------------------------------------------------------------------

def _load_features(path):
    rows = []
    width = None
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                values = [float(p) for p in line.split(",")]
            except ValueError:
                raise ParseError(f"non-numeric field in {line!r}", line=lineno)
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise ParseError(f"expected {width} fields, got {len(values)}",
                                 line=lineno)
            rows.append(values)
    if not rows:
        raise ContractError(f"no rows in feature file {path}")
    return np.array(rows)


def _terms_summary(terms):
    est = float(terms.mean())
    if terms.size > 1:
        se = float(terms.std(ddof=1) / np.sqrt(terms.size))
    else:
        se = 0.0
    return est, se


def cmd_cmi(args):
    """Exit codes: 0 success, 2 invalid input (including --k < 1).

    A --joint file always gets its exact value printed; adding
    --samples also draws a Monte-Carlo contrastive estimate under the
    optimal scorer. Feature-batch mode (--source/--target) scores the
    in-batch contrastive structure with a bilinear scorer, optionally
    trained for --train-steps ascent steps first.
    """
    if args.k < 1:
        raise ContractError("need k >= 1 candidates")
    out = {}
    if args.joint:
        if args.source or args.target:
            raise ContractError("--joint excludes --source/--target")
        joint = load_joint(args.joint)
        out["exact"] = exact_cmi(joint)
        if args.samples:
            batches = sample_contrastive(joint, args.samples, args.k,
                                         seed=args.seed, chunk=4096)
            scorer = optimal_scorer(joint)
            terms = np.concatenate([cnce_terms(scorer, b) for b in batches])
            out["cnce"], out["se"] = _terms_summary(terms)
            out["k"] = args.k
            out["samples"] = args.samples
    elif args.source and args.target:
        Zs = _load_features(args.source)
        Zt = _load_features(args.target)
        if Zs.shape[1] != Zt.shape[1]:
            raise ContractError("feature widths differ between domains")
        scorer = BilinearScorer(Zs.shape[1], SplitMix64(args.seed))
        if args.train_steps:
            optim = OptimState(scorer.parameters(), lr=1e-3, method="adam")
            paired = as_tensor(Zs[_nearest_rows(Zt, Zs)])
            anchors = as_tensor(Zt)
            for _ in range(args.train_steps):
                obj = scorer.objective_graph(paired, anchors)
                grads = backward(obj, wrt=scorer.parameters())
                step(optim, [-g for g in grads])
        terms = cnce_terms(scorer, contrastive_from_features(Zs, Zt))
        out["cnce"], out["se"] = _terms_summary(terms)
        out["k"] = int(Zt.shape[0])
        out["samples"] = int(Zt.shape[0])
    else:
        raise ContractError("pass --joint FILE or both --source and --target")

    if args.format == "structured":
        sys.stdout.write(emit_report(out))
    else:
        for key in ("exact", "cnce", "se"):
            if key in out:
                print(f"{key} {_fmt(out[key])}")
    return 0


def _nearest_rows(Zt, Zs):
    from .cmi import pair_positive
    return pair_positive(Zt, Zs)


# ---------------------------------------------------------------------
# friedman
# ---------------------------------------------------------------------

def _sniff_rank_table(path):
    with open(path, "r", encoding="ascii") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields_ = line.replace("\t", ",").split(",")
            return fields_ and fields_[-1].strip() == "avg_rank"
    return False


def cmd_friedman(args):
    """Exit codes: 0 success (even when F is undefined), 2 malformed table.

    Accuracy tables are ranked per task first; rank tables are used as
    shipped, preferring their printed rank averages for the statistic
    when present.
    """
    if _sniff_rank_table(args.table):
        rnk = load_rank_table(args.table)
        averages = "reported" if rnk.printed_avg is not None else "exact"
    else:
        rnk = competition_ranks(load_accuracy_table(args.table))
        averages = "exact"

    try:
        res = friedman(rnk, averages=averages)
        stats = res.as_report()
    except DomainError as exc:
        m, n = rnk.num_methods, rnk.num_tasks
        stats = {"chi2": float(exc.chi2), "f_stat": None,
                 "dof_between": m - 1, "dof_residual": (m - 1) * (n - 1)}

    if args.format == "structured":
        sys.stdout.write(emit_report(stats))
        return 0

    header = ["method"] + list(rnk.tasks) + ["avg_rank"]
    print(",".join(header))
    avgs = rnk.printed_avg if rnk.printed_avg is not None else rnk.avg_ranks
    for i, name in enumerate(rnk.methods):
        cells = [_fmt_rank(r) for r in rnk.ranks[i]]
        print(",".join([name] + cells + [_fmt_rank(avgs[i])]))
    print(f"chi2 {_fmt(stats['chi2'])}")
    if stats["f_stat"] is None:
        print("f_stat undefined")
    else:
        print(f"f_stat {_fmt(stats['f_stat'])}")
    print(f"dof {stats['dof_between']} {stats['dof_residual']}")
    return 0


# ---------------------------------------------------------------------
# bound
# ---------------------------------------------------------------------

def _load_bound_inputs(path):
    names = {f.name for f in fields(BoundInputs)}
    values = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError("expected key=value", line=lineno)
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in names:
                raise ParseError(f"unknown bound input {key!r}", line=lineno)
            if key in values:
                raise ParseError(f"duplicate key {key!r}", line=lineno)
            try:
                values[key] = int(val) if key == "num_classes" else float(val)
            except ValueError:
                raise ParseError(f"bad value for {key!r}: {val.strip()!r}",
                                 line=lineno)
    return BoundInputs(**values)


def cmd_bound(args):
    """Exit codes: 0 success, 2 invalid input file."""
    bounds = bayes_bound(_load_bound_inputs(args.inputs))
    if args.format == "structured":
        sys.stdout.write(emit_report(bounds))
    else:
        for key in sorted(bounds):
            print(f"{key} {_fmt(bounds[key])}")
    return 0


# ---------------------------------------------------------------------
# parser plumbing
# ---------------------------------------------------------------------

def _add_format(sub):
    sub.add_argument("--format", choices=("text", "structured"),
                     default="text",
                     help="text lines or the report-file key schema")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="driftlab",
        description="Domain-shift laboratory: training, transport "
                    "distances, contrastive estimates, and benchmark "
                    "statistics.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("train", help="run one training experiment")
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VAL",
                   help="override a config field (repeatable)")
    p.add_argument("--report", help="report path (default: config stem "
                                    "+ .report.json)")
    p.add_argument("--checkpoint", help="write final parameters here")
    _add_format(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("sweep", help="independent runs over one field")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VAL")
    p.add_argument("--field", default="beta", help="config field to vary")
    p.add_argument("--values", required=True,
                   help="comma-separated field values")
    p.add_argument("--out-dir", help="write one report file per run")
    _add_format(p)
    p.set_defaults(func=cmd_sweep)

    p = subs.add_parser("ot", help="transport distance between measures")
    p.add_argument("source", help="measure file: weight,coord1[,coord2,...]")
    p.add_argument("target")
    p.add_argument("--beta", type=float, default=0.0,
                   help="source-marginal relaxation in [0, 1)")
    p.add_argument("--nested", action="store_true",
                   help="treat atoms as feature vectors with the nested "
                        "dimension-measure ground cost")
    p.add_argument("--plan", help="write the optimal plan as i,j,flow rows")
    _add_format(p)
    p.set_defaults(func=cmd_ot)

    p = subs.add_parser("cmi", help="conditional-information estimates")
    p.add_argument("--joint", help="joint file: x_s,x_t,z,probability")
    p.add_argument("--source", help="feature rows for the paired domain")
    p.add_argument("--target", help="feature rows for the anchor domain")
    p.add_argument("--k", type=int, default=64,
                   help="candidates per anchor (joint sampling)")
    p.add_argument("--samples", type=int,
                   help="Monte-Carlo sample count (joint mode)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-steps", type=int, default=0,
                   help="scorer ascent steps before estimating "
                        "(feature mode)")
    _add_format(p)
    p.set_defaults(func=cmd_cmi)

    p = subs.add_parser("friedman", help="rank statistics for a benchmark "
                                         "table")
    p.add_argument("table", help="accuracy or rank table (csv/tsv)")
    _add_format(p)
    p.set_defaults(func=cmd_friedman)

    p = subs.add_parser("bound", help="evaluate error bounds from a "
                                      "key=value file")
    p.add_argument("inputs", help="key=value file of bound inputs")
    _add_format(p)
    p.set_defaults(func=cmd_bound)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
        return 2
    except (ParseError, ContractError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
