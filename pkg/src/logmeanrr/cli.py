"""Command-line interface.

    logmeanrr fit       --data D --model M [--bic-convention full|paper-compat]
    logmeanrr compare   --data D --model M [--against M2]
    logmeanrr decompose (--params P | --data D --model M) [--over Z1,Z2] [--singletons]
    logmeanrr stepwise  --data D --model M [--candidates C]

``--format json`` prints a structured report with full precision; the
default text report rounds to three decimals. Paths of the form
``builtin:<name>`` refer to fixtures shipped with the package (for
instance ``builtin:smoking.csv``).

Exit status: 0 on success, 1 when fitting or evaluating the model fails,
2 on bad input.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from typing import Sequence

from . import __version__
from .decomposition import brute_force_marginal, conditional_rr, decompose, decompose_fit
from .estimation import (
    BIC_CONVENTIONS,
    GRAD_TOL,
    MAX_ITER,
    bic,
    bic_parameter_count,
    compare,
    fit,
    standard_errors,
    stepwise_select,
)
from .exceptions import InputError, ModelError
from .model import INTERMEDIATE_BLOCK, RESPONSE_BLOCK, build_design
from .modelspec import (
    interaction_candidates,
    load_model_spec,
    parse_candidates,
    resolve_path,
)
from .tables import load_records

EXPECT_TOL = 0.005


def _load_data(path, spec):
    return load_records(resolve_path(path), columns=list(spec.structure.variables))


def _fit_block_report(b, ses):
    d = b.params.design
    rows = []
    se_map = dict(zip(ses.labels[b.name], ses.se[b.name])) if ses else {}
    for (dm, t), f, value in zip(d.pairs, b.free, b.params.values):
        label = d.label(dm, t)
        rows.append({
            "label": label,
            "estimate": float(value),
            "se": float(se_map[label]) if label in se_map else None,
            "fixed": not bool(f),
        })
    return {
        "name": b.name,
        "responses": list(d.responses.names),
        "covariates": list(d.covariates.names),
        "closed_form": b.closed_form,
        "converged": b.converged,
        "iterations": b.iterations,
        "gradient_norm": b.gradient_norm,
        "loglik": b.loglik,
        "free_parameters": b.free_param_count,
        "coefficients": rows,
    }


def _fit_report(args, table, result, convention):
    ses = standard_errors(result, table)
    return {
        "command": "fit",
        "data": args.data,
        "model": args.model,
        "n": table.n,
        "blocks": [_fit_block_report(b, ses) for b in result.blocks],
        "constraints": result.constraints.labels(result.design),
        "loglik": result.loglik,
        "loglik_joint": result.loglik_joint,
        "bic": bic(result, k_convention=convention),
        "bic_convention": convention,
        "bic_parameters": bic_parameter_count(result, convention),
    }


def _f3(x):
    return "-" if x is None else f"{x:.3f}"


def _render_fit(rep):
    out = [f"Log-mean regression fit of {rep['model']} to {rep['data']} (n = {rep['n']})", ""]
    for b in rep["blocks"]:
        how = "closed form" if b["closed_form"] else f"{b['iterations']} Newton iterations"
        out.append(f"Block {','.join(b['responses'])} | {','.join(b['covariates'])}  ({how})")
        out.append(f"  {'Parameter':<24}{'Estimate':>10}{'s.e.':>10}")
        for c in b["coefficients"]:
            est = "0 (fixed)" if c["fixed"] else _f3(c["estimate"])
            out.append(f"  {c['label']:<24}{est:>10}{_f3(c['se']):>10}")
        out.append("")
    out.append(f"log-likelihood (block regressions) {rep['loglik']:.3f}")
    out.append(f"log-likelihood (joint)             {rep['loglik_joint']:.3f}")
    out.append(
        f"BIC {rep['bic']:.3f}  (convention {rep['bic_convention']}, "
        f"k = {rep['bic_parameters']})"
    )
    return "\n".join(out)


def cmd_fit(args) -> dict:
    spec = load_model_spec(args.model)
    table = _load_data(args.data, spec)
    design = spec.design()
    result = fit(design, table, spec.constraints(design), args.max_iter, args.tol)
    return _fit_report(args, table, result, args.bic_convention)


def cmd_compare(args) -> dict:
    spec = load_model_spec(args.model)
    table = _load_data(args.data, spec)
    design = spec.design()
    reduced = fit(design, table, spec.constraints(design), args.max_iter, args.tol)
    if args.against:
        full_spec = load_model_spec(args.against)
        full_design = full_spec.design()
        full = fit(full_design, table, full_spec.constraints(full_design), args.max_iter, args.tol)
        against = args.against
    else:
        full_design = build_design(spec.structure, True)
        full = fit(full_design, table, None, args.max_iter, args.tol)
        against = "saturated"
    cmp = compare(reduced, full)
    return {
        "command": "compare",
        "data": args.data,
        "model": args.model,
        "against": against,
        "n": table.n,
        "deviance": cmp.deviance,
        "df": cmp.df,
        "p_value": cmp.p_value,
        "delta_bic": cmp.delta_bic,
        "bic_reduced": bic(reduced, k_convention=args.bic_convention),
        "bic_full": bic(full, k_convention=args.bic_convention),
        "bic_convention": args.bic_convention,
    }


def _render_compare(rep):
    return "\n".join([
        f"{rep['model']} against {rep['against']} (n = {rep['n']})",
        f"  deviance  {rep['deviance']:.3f} on {rep['df']} df, p-value {rep['p_value']:.3f}",
        f"  BIC       {rep['bic_reduced']:.3f} vs {rep['bic_full']:.3f} "
        f"(convention {rep['bic_convention']})",
        f"  delta BIC {rep['delta_bic']:.3f} (negative favours {rep['model']})",
    ])


def _split_names(text):
    return [p.strip() for p in text.split(",") if p.strip()] if text else None


def cmd_decompose(args) -> dict:
    over = _split_names(args.over)
    if args.params:
        spec = load_model_spec(args.params)
        params = spec.params()
        source = {"params": args.params}
        rows = None
    elif args.data and args.model:
        spec = load_model_spec(args.model)
        table = _load_data(args.data, spec)
        design = spec.design()
        result = fit(design, table, spec.constraints(design), args.max_iter, args.tol)
        params = result.params
        source = {"data": args.data, "model": args.model}
        rows = decompose_fit(result, table, over=over, singletons_only=args.singletons)
    else:
        raise InputError("decompose needs --params, or both --data and --model")
    py = params[RESPONSE_BLOCK]
    pz = params.get(INTERMEDIATE_BLOCK)
    if rows is None:
        rows = decompose(py, pz, over=over, singletons_only=args.singletons)
    x = spec.structure.background

    table_rows = []
    for r in rows:
        oracle = brute_force_marginal(py, pz, r.subset)
        table_rows.append({
            "subset": list(r.subset),
            "rr_conditional": r.rr_conditional,
            "deviation": r.deviation,
            "rr_marginal": r.rr_marginal,
            "weighted_rr_treated": r.weighted_rr_treated,
            "weighted_rr_control": r.weighted_rr_control,
            "log_rr_conditional": r.log_rr_conditional,
            "log_deviation": r.log_deviation,
            "log_rr_marginal": r.log_rr_marginal,
            "se_log_deviation": r.se_log_deviation,
            "se_log_marginal": r.se_log_marginal,
            "oracle_log_rr_marginal": oracle,
            "oracle_gap": abs(oracle - r.log_rr_marginal),
        })

    intermediate = []
    effects = []
    if pz is not None:
        u = pz.design.responses
        for e in range(1, 1 << u.arity):
            names = u.subset_names(e)
            intermediate.append({"subset": list(names), "rr": conditional_rr(pz, names, x)})
        used = over if over is not None else list(u.names)
        for r in rows:
            for name in used:
                effects.append({
                    "subset": list(r.subset),
                    "intermediate": name,
                    "rr": conditional_rr(py, r.subset, name),
                })

    checks = []
    by_subset = {tuple(row["subset"]): row for row in table_rows}
    for exp in spec.expectations:
        row = by_subset.get(tuple(py.design.responses.sub(exp.subset).names))
        if row is None:
            continue
        got = row[exp.quantity]
        ok = abs(round(got, 3) - exp.value) <= EXPECT_TOL
        checks.append({
            "quantity": exp.quantity,
            "subset": list(exp.subset),
            "reference": exp.value,
            "computed": got,
            "status": "ok" if ok else "MISMATCH",
        })
    return {
        "command": "decompose",
        **source,
        "background": x,
        "over": over,
        "rows": table_rows,
        "intermediate_rr": intermediate,
        "intermediate_effects": effects,
        "reference_checks": checks,
    }


def _render_decompose(rep):
    x = rep["background"]
    src = rep.get("params") or f"{rep['model']} fitted to {rep['data']}"
    out = [f"Relative risk decomposition for {x} ({src})", ""]
    head = (f"  {'D':<14}{'RR cond':>9}{'deviation':>11}{'RR marg':>9}"
            f"{'avg RR x=1':>12}{'avg RR x=0':>12}")
    out.append(head)
    for r in rep["rows"]:
        label = "{" + ",".join(r["subset"]) + "}"
        out.append(
            f"  {label:<14}{_f3(r['rr_conditional']):>9}{_f3(r['deviation']):>11}"
            f"{_f3(r['rr_marginal']):>9}{_f3(r['weighted_rr_treated']):>12}"
            f"{_f3(r['weighted_rr_control']):>12}"
        )
    if any(r["se_log_marginal"] is not None for r in rep["rows"]):
        out.append("")
        out.append("  delta-method s.e. (log scale): " + ", ".join(
            "{" + ",".join(r["subset"]) + f"}} deviation {_f3(r['se_log_deviation'])}"
            f" marginal {_f3(r['se_log_marginal'])}"
            for r in rep["rows"]
        ))
    worst = max((r["oracle_gap"] for r in rep["rows"]), default=0.0)
    out.append(f"  direct marginalization agrees to {worst:.1e} on the log scale")
    if rep["intermediate_rr"]:
        out.append("")
        out.append(f"Intermediate relative risks for {x}: " + ", ".join(
            "{" + ",".join(r["subset"]) + f"}} {_f3(r['rr'])}" for r in rep["intermediate_rr"]
        ))
    if rep["intermediate_effects"]:
        out.append("Intermediate effects on the responses: " + ", ".join(
            "{" + ",".join(e["subset"]) + f"}}|{e['intermediate']} {_f3(e['rr'])}"
            for e in rep["intermediate_effects"]
        ))
    if rep["reference_checks"]:
        out.append("")
        out.append("Reference values:")
        for c in rep["reference_checks"]:
            out.append(
                f"  {c['quantity']}[{','.join(c['subset'])}] reference {c['reference']:.3f}"
                f" computed {c['computed']:.3f}  {c['status']}"
            )
        if any(c["status"] != "ok" for c in rep["reference_checks"]):
            out.append("  MISMATCH: the reference disagrees with the closed form and with "
                       "direct marginalization; the computed value is reported.")
    return "\n".join(out)


def cmd_stepwise(args) -> dict:
    spec = load_model_spec(args.model)
    table = _load_data(args.data, spec)
    design = spec.design()
    if args.candidates:
        with open(resolve_path(args.candidates)) as fh:
            candidates = parse_candidates(fh.read(), design, args.candidates)
    else:
        candidates = interaction_candidates(design)
    result = stepwise_select(
        design, table, candidates, spec.constraints(design), args.bic_convention
    )
    return {
        "command": "stepwise",
        "data": args.data,
        "model": args.model,
        "n": table.n,
        "candidates": [c.label for c in candidates],
        "start_bic": bic(result.start, k_convention=args.bic_convention),
        "trace": [
            {
                "applied": s.applied.label,
                "deviance": s.comparison.deviance,
                "df": s.comparison.df,
                "delta_bic": s.comparison.delta_bic,
                "bic": s.bic,
                "considered": [{"candidate": c, "delta_bic": v} for c, v in s.considered],
            }
            for s in result.trace
        ],
        "final_constraints": result.fit.constraints.labels(design),
        "final_bic": bic(result.fit, k_convention=args.bic_convention),
        "bic_convention": args.bic_convention,
    }


def _render_stepwise(rep):
    out = [f"Backward stepwise selection on {rep['data']} from {rep['model']} (n = {rep['n']})",
           f"  start BIC {rep['start_bic']:.3f}"]
    for i, s in enumerate(rep["trace"], start=1):
        out.append(
            f"  step {i}: fix {s['applied']} = 0   deviance {s['deviance']:.3f} "
            f"({s['df']} df)  delta BIC {s['delta_bic']:.3f}  BIC {s['bic']:.3f}"
        )
    if not rep["trace"]:
        out.append("  no candidate lowers BIC")
    final = ", ".join(rep["final_constraints"]) or "none"
    out.append(f"  final zero constraints: {final}")
    out.append(f"  final BIC {rep['final_bic']:.3f} (convention {rep['bic_convention']})")
    return "\n".join(out)


COMMANDS = {
    "fit": (cmd_fit, _render_fit),
    "compare": (cmd_compare, _render_compare),
    "decompose": (cmd_decompose, _render_decompose),
    "stepwise": (cmd_stepwise, _render_stepwise),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="logmeanrr",
        description="Recursive log-mean regressions and relative risk decompositions.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("text", "json"), default="text")
    common.add_argument("--bic-convention", choices=BIC_CONVENTIONS, default="full")
    common.add_argument("--max-iter", type=int, default=MAX_ITER)
    common.add_argument("--tol", type=float, default=GRAD_TOL)

    p = sub.add_parser("fit", parents=[common], help="fit a model and report estimates")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)

    p = sub.add_parser("compare", parents=[common], help="deviance test against a larger model")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--against", help="larger model spec (default: saturated)")

    p = sub.add_parser("decompose", parents=[common], help="relative risk decomposition")
    p.add_argument("--params", help="parameter fixture")
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--over", help="comma-separated intermediates to marginalize")
    p.add_argument("--singletons", action="store_true", help="only single-outcome rows")

    p = sub.add_parser("stepwise", parents=[common], help="backward selection by BIC")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--candidates", help="file of candidate constraints "
                   "(default: every interaction coefficient)")
    return parser


def _json_default(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    raise TypeError(type(obj).__name__)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    run, render = COMMANDS[args.command]
    try:
        report = run(args)
    except (InputError, OSError) as exc:
        print(f"logmeanrr: error: {exc}", file=sys.stderr)
        return 2
    except ModelError as exc:
        print(f"logmeanrr: model error: {exc}", file=sys.stderr)
        return 1
    if args.format == "json":
        print(json.dumps(report, indent=2, sort_keys=True, default=_json_default))
    else:
        print(render(report))
    return 0


if __name__ == "__main__":
    sys.exit(main())
