"""Command-line interface: ``gfigs <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data or schema error,
4 degenerate statistics (single-class labels, zero total weight).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from gfigs.errors import ConfigError, DataError, DegenerateError, GFigsError
from gfigs.export import export_ascii, export_json
from gfigs.metrics import evaluate, format_sensitivity_table
from gfigs.pipeline import POOLED_KEY, PipelineConfig, fit_pipeline
from gfigs.select import SelectionGrid, aggregate_reports, run_selection, validation_summary
from gfigs.serialize import load_model, save_model
from gfigs.sim import RARE_SCHEMA, SimConfig, gen_rare_outcome_data, gen_sim_data, run_sim_experiment
from gfigs.sim import sim_schema, write_dataset_csv
from gfigs.tabular import FeatureSchema, Preprocessor, SplitSpec, read_csv_table, split_indices

EXIT_CONFIG, EXIT_DATA, EXIT_DEGENERATE = 2, 3, 4


def _load_json(path, what: str, exc=ConfigError):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise exc(f"cannot read {what} {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise exc(f"{what} {path} is not valid JSON: {e}") from None


def _load_schema(path) -> FeatureSchema:
    return FeatureSchema.from_json(_load_json(path, "schema", DataError))


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _parse_levels(s: str) -> tuple[float, ...]:
    try:
        levels = tuple(float(v) / 100 if float(v) > 1 else float(v) for v in s.split(","))
    except ValueError:
        raise ConfigError(f"bad --levels {s!r}") from None
    if not all(0 < v <= 1 for v in levels):
        raise ConfigError("sensitivity levels must lie in (0, 100]")
    return levels


# ---------------------------------------------------------------- fit

def build_config(args) -> PipelineConfig:
    """Merge ``--config`` (PipelineConfig field names) with flags; flags win."""
    d = dict(_load_json(args.config, "config file")) if args.config else {}
    if not isinstance(d, dict):
        raise ConfigError("config file must hold a JSON object")
    if args.learner is not None:
        d["outcome_learner"] = args.learner
    if args.variant is not None:
        d["variant"] = args.variant
    if args.max_splits is not None:
        d["max_splits"] = args.max_splits
    if args.seed is not None:
        d["seed"] = args.seed
    if args.no_class_weighting:
        d["class_weighting"] = False
    variant = d.get("variant", "group-weighted")
    variant = {"sep": "separate", "gw": "group-weighted", "g": "group-weighted"}.get(variant, variant)
    memb_flags = any(v is not None for v in (args.membership, args.membership_c, args.membership_n))
    if variant == "group-weighted":
        m = dict(d.get("membership") or {"kind": "logreg"})
        if args.membership is not None and args.membership != m.get("kind"):
            m = {"kind": args.membership}
        if args.membership_c is not None:
            m["C"] = args.membership_c
        if args.membership_n is not None:
            m["n_trees"] = args.membership_n
        if m.get("kind") == "logreg":
            m.pop("n_trees", None)
        elif m.get("kind") == "gbt":
            m.pop("C", None)
        d["membership"] = m
    else:
        if memb_flags:
            _warn(f"membership options are ignored by the {variant} variant")
        d["membership"] = None
    return PipelineConfig.from_dict(d)


def cmd_fit(args) -> int:
    cfg = build_config(args)
    schema = _load_schema(args.schema)
    if cfg.variant == "pooled" and args.group_col:
        _warn("--group-col is ignored by the pooled variant")
    if cfg.variant != "pooled" and not args.group_col:
        raise ConfigError(f"variant {cfg.variant!r} needs --group-col")
    raw = read_csv_table(args.data, schema, args.outcome_col, args.group_col, args.weight_col)
    pre = Preprocessor(schema).fit(raw)
    train = pre.transform(raw)
    memb_view = pre.transform(raw, for_membership=True) if cfg.variant == "group-weighted" else None
    model = fit_pipeline(train, cfg, membership_data=memb_view)
    model.preprocessor = pre
    model.data_columns = {"outcome": args.outcome_col, "group": args.group_col,
                          "weight": args.weight_col}
    save_model(model, args.out)
    splits = ", ".join(f"{g}={k}" for g, k in model.total_splits().items())
    print(f"{cfg.method_name}: {len(model.models)} model(s); splits {splits}; wrote {args.out}")
    return 0


# ---------------------------------------------------------------- predict / evaluate

def _model_and_data(args, require_outcome: bool):
    model = load_model(args.model)
    if model.schema is None or model.preprocessor is None:
        raise DataError("model file carries no schema or preprocessing statistics")
    cols = model.data_columns
    outcome = args.outcome_col or cols.get("outcome") or "outcome"
    group = args.group_col or cols.get("group")
    raw = read_csv_table(args.data, model.schema, outcome, group, cols.get("weight"),
                         require_outcome=require_outcome)
    data = model.preprocessor.transform(raw)
    return model, data


def cmd_predict(args) -> int:
    model, data = _model_and_data(args, require_outcome=False)
    p = model.predict(data)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "group", "probability"])
    routed = [POOLED_KEY] * data.n_rows if model.pooled else list(data.group)
    for i in range(data.n_rows):
        w.writerow([i, routed[i], repr(float(p[i]))])
    _emit(buf.getvalue(), args.out)
    return 0


def cmd_evaluate(args) -> int:
    levels = _parse_levels(args.levels)
    model, data = _model_and_data(args, require_outcome=True)
    report = evaluate(model.predict(data), data.y, levels)
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    sys.stdout.write(format_sensitivity_table({model.config.method_name: report}, levels))
    return 0


def cmd_export(args) -> int:
    model = load_model(args.model)
    _emit(export_ascii(model) if args.format == "ascii" else export_json(model), args.out)
    return 0


# ---------------------------------------------------------------- select

def cmd_select(args) -> int:
    levels = _parse_levels(args.levels)
    grid_d = dict(_load_json(args.grid, "grid file")) if args.grid else {}
    if args.variant:
        grid_d["variants"] = args.variant
    if args.learner:
        grid_d["learners"] = args.learner
    if args.variant and "membership" not in grid_d and not any(
            v in ("group-weighted", "gw", "g") for v in args.variant):
        grid_d["membership"] = []
    grid = SelectionGrid.from_dict(grid_d)
    schema = _load_schema(args.schema)
    raw = read_csv_table(args.data, schema, args.outcome_col, args.group_col, args.weight_col)
    seeds = list(range(args.seed, args.seed + args.seeds))
    results = run_selection(raw, grid, seeds, levels=levels)

    lines = ["per-seed winners"]
    seed_rows = []
    for r in results:
        for method, sel in r.selections.items():
            budgets = ", ".join(f"{g}:{k}" for g, k in sorted(sel.max_splits.items()))
            stage2 = "skipped" if list(sel.stage2) == [None] else (sel.membership or "-")
            lines.append(f"  seed {r.seed}  {method:<10} budgets {budgets}  membership {stage2}")
            seed_rows.append({
                "seed": r.seed, "method": method, "membership": sel.membership,
                "stage2": "skipped" if stage2 == "skipped" else "run",
                "max_splits": dict(sorted(sel.max_splits.items())),
                "config": r.models[method].config.to_dict(),
                "test": r.test_reports[method].to_dict(),
            })
    means, errs = aggregate_reports([r.test_reports for r in results], levels)
    text = "\n".join(lines) + "\n\nvalidation summary\n" + validation_summary(results)
    text += "\ntest specificity at sensitivity level, mean (stderr) over seeds\n"
    text += format_sensitivity_table(means, levels, stderr=errs)
    sys.stdout.write(text)
    if args.out:
        doc = {"seeds": seeds, "criterion": grid.criterion, "winners": seed_rows,
               "test_mean": {m: rep.to_dict() for m, rep in means.items()}}
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return 0


# ---------------------------------------------------------------- simulation and data

def cmd_simulate(args) -> int:
    cfg = SimConfig(n_per_cluster=args.n_per_cluster, seed=args.seed)
    res = run_sim_experiment(cfg, replicates=args.replicates)
    eq = all(all(e.values()) for e in res.equivalences)
    text = res.format_table() + f"budget-1 equivalences hold in every replicate: {eq}\n"
    _emit(text, args.out)
    if args.csv:
        res.write_csv(args.csv)
    return 0


def cmd_gen_data(args) -> int:
    if args.kind == "sim":
        cfg = SimConfig(n_per_cluster=args.n or 250, seed=args.seed)
        write_dataset_csv(gen_sim_data(cfg), args.out, "outcome", "group")
        schema = sim_schema(cfg)
    else:
        gen_rare_outcome_data(args.out, n=args.n or 8000, prevalence=args.prevalence, seed=args.seed)
        schema = RARE_SCHEMA
    if args.schema_out:
        Path(args.schema_out).write_text(json.dumps(schema, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_split(args) -> int:
    path = Path(args.data)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as e:
        raise DataError(f"cannot read {path}: {e.strerror}") from None
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    parts = split_indices(len(body), SplitSpec(args.train, args.validation, args.test, seed=args.seed))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, idx in zip(("train", "validation", "test"), parts):
        with (out / f"{name}.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(body[i] for i in idx)
    print(f"train={len(parts[0])} validation={len(parts[1])} test={len(parts[2])}")
    return 0


# ---------------------------------------------------------------- parser

def _data_flags(p, outcome_required=True):
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--outcome-col", required=outcome_required)
    p.add_argument("--group-col")
    p.add_argument("--weight-col")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gfigs", description="Group-weighted tree-sum models.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model and write a model file")
    _data_flags(p)
    p.add_argument("--config", help="JSON file with PipelineConfig fields; flags override it")
    p.add_argument("--variant", choices=["pooled", "sep", "separate", "group-weighted"])
    p.add_argument("--learner", choices=["figs", "cart"])
    p.add_argument("--max-splits", type=int)
    p.add_argument("--membership", choices=["logreg", "gbt"])
    p.add_argument("--membership-c", type=float)
    p.add_argument("--membership-n", type=int)
    p.add_argument("--no-class-weighting", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    for name, func, help_ in (("predict", cmd_predict, "write per-row probabilities"),
                              ("evaluate", cmd_evaluate, "score a model on labelled data")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--model", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--outcome-col")
        p.add_argument("--group-col")
        p.add_argument("--out")
        if name == "evaluate":
            p.add_argument("--levels", default="92,94,96,98")
        p.set_defaults(func=func)

    p = sub.add_parser("export", help="render a model as ASCII rules or JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--format", choices=["ascii", "json"], default="ascii")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("select", help="two-stage hyperparameter selection over seeds")
    _data_flags(p)
    p.add_argument("--grid", help="JSON grid: learners, variants, max_splits, membership, criterion")
    p.add_argument("--variant", nargs="+", choices=["pooled", "sep", "separate", "group-weighted"])
    p.add_argument("--learner", nargs="+", choices=["figs", "cart"])
    p.add_argument("--seeds", type=int, default=10, help="number of random splits")
    p.add_argument("--seed", type=int, default=0, help="first split seed")
    p.add_argument("--levels", default="92,94,96,98")
    p.add_argument("--out")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", help="run the four-cluster simulation experiment")
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--n-per-cluster", type=int, default=250)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", help="write per-replicate metrics here")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen-data", help="write a synthetic CSV (and its schema)")
    p.add_argument("--kind", choices=["sim", "rare"], default="sim")
    p.add_argument("--n", type=int, help="rows per cluster (sim) or total rows (rare)")
    p.add_argument("--prevalence", type=float, default=0.009)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--schema-out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("split", help="split a CSV into train/validation/test files")
    p.add_argument("--data", required=True)
    p.add_argument("--train", type=float, default=0.6)
    p.add_argument("--validation", type=float, default=0.2)
    p.add_argument("--test", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_split)
    return ap


def _exit_code(e: BaseException) -> int:
    while e is not None:
        if isinstance(e, ConfigError):
            return EXIT_CONFIG
        if isinstance(e, DegenerateError):
            return EXIT_DEGENERATE
        if isinstance(e, DataError):
            return EXIT_DATA
        e = e.__cause__
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GFigsError as e:
        print(f"error: {e}", file=sys.stderr)
        return _exit_code(e)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
