"""Command-line pipelines: fit, detect, generate, evaluate, bench.

Every command is deterministic given --seed (timings excluded) and writes a
manifest next to its outputs with enough context to re-run it exactly.
Exit codes: 0 success, 1 numeric failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    DataError,
    FeatureSchema,
    encode,
    encode_with_vocab,
    load_csv,
    load_odds_mat,
)
from .detect import FRAUD_MODES, anomaly_scores, build_report
from .em import FitConfig, NumericFailure, e_step, fit, fit_annealed
from .metrics import (
    MetricError,
    clustering_scores,
    pr_curve,
    roc_auc,
    roc_points,
    write_pr_csv,
    write_roc_csv,
)
from .model import ModelFormatError, load_model, save_model
from .synth import (
    GenConfig,
    PRESETS,
    dataset_schema,
    generate,
    load_truth,
    paper_analysis_preset,
    sweep_configs,
    write_dataset_csv,
)

USAGE_ERROR = 2
NUMERIC_ERROR = 1


def _default_threads() -> int:
    env = os.environ.get("FIRD_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _write_manifest(
    path: Path, command: str, args: argparse.Namespace,
    inputs: list[str], outputs: list[str], started: float,
) -> None:
    config = {
        k: v for k, v in vars(args).items() if k not in ("func", "command")
    }
    doc = {
        "command": command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "inputs": inputs,
        "outputs": outputs,
        "wall_time_s": time.perf_counter() - started,
        "version": __version__,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _fit_config(args: argparse.Namespace) -> FitConfig:
    return FitConfig(
        G=args.groups,
        lambda1=args.lambda1,
        lambda2=args.lambda2,
        tol=args.tol,
        max_outer_iters=args.max_iter,
        seed=args.seed,
    )


def cmd_fit(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    schema = FeatureSchema.load(args.schema)
    table = load_csv(args.input, schema)
    ds = encode(table, schema, bin_count=args.bins)
    cfg = _fit_config(args)
    fit_fn = fit_annealed if args.anneal else fit
    result = fit_fn(ds, cfg, threads=args.threads, keep_responsibilities=False)

    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(str(out), result.params, ds.vocab, cfg.lambda1, cfg.lambda2, cfg.seed)
    trace_path = Path(args.trace) if args.trace else out.with_suffix(".trace.csv")
    result.trace.to_csv(str(trace_path))
    manifest = out.with_suffix(".manifest.json")
    _write_manifest(
        manifest, "fit", args,
        inputs=[args.input, args.schema],
        outputs=[str(out), str(trace_path)],
        started=started,
    )
    last = result.trace.rows[-1]
    print(
        f"fit: {ds.n_rows} rows, {ds.n_features} features; "
        f"{last.active_components}/{cfg.G} active components after "
        f"{result.trace.n_iterations} iterations "
        f"({'converged' if result.trace.converged else 'max iterations'}); "
        f"objective {last.objective:.6f}"
    )
    print(f"fit: wrote {out}, {trace_path}, {manifest}")
    return 0


def cmd_detect(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    loaded = load_model(args.model)
    schema = FeatureSchema.load(args.schema)
    table = load_csv(args.input, schema)
    ds = encode_with_vocab(table, schema, loaded.vocab, bin_count=args.bins)
    if ds.n_features != loaded.params.n_features:
        raise DataError(
            f"model expects {loaded.params.n_features} features, "
            f"data has {ds.n_features}"
        )
    if args.decision == "auto":
        decision = None
    else:
        try:
            with open(args.decision, encoding="utf-8") as fh:
                decision = np.asarray(json.load(fh), dtype=float)
        except FileNotFoundError:
            raise DataError(f"decision file not found: {args.decision}") from None
        except (json.JSONDecodeError, TypeError) as exc:
            raise DataError(f"{args.decision}: invalid decision JSON: {exc}") from None

    resp = e_step(ds, loaded.params, threads=args.threads, want_gamma=False)
    report = build_report(
        ds, loaded.params, resp=resp,
        epsilon=args.epsilon, mode=args.fraud_mode, decision=decision,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows_path = out_dir / "rows.csv"
    groups_path = out_dir / "groups.csv"
    report.write_rows(str(rows_path))
    report.write_groups(str(groups_path), loaded.params)
    _write_manifest(
        out_dir / "manifest.json", "detect", args,
        inputs=[args.model, args.input, args.schema],
        outputs=[str(rows_path), str(groups_path)],
        started=started,
    )
    print(
        f"detect: {ds.n_rows} rows; {int(report.outlier_mask.sum())} outliers; "
        f"{int(report.groups.flags.sum())} flagged groups"
    )
    print(f"detect: wrote {rows_path}, {groups_path}")
    return 0


def _gen_config(args: argparse.Namespace) -> GenConfig:
    if args.preset:
        cfg = paper_analysis_preset(args.preset)
    else:
        cfg = GenConfig(
            n_rows=args.n if args.n is not None else 1000,
            n_features=args.features if args.features is not None else 10,
            g_true=args.groups_true if args.groups_true is not None else 5,
            dims=args.dim if args.dim is not None else 50,
            support_size=args.support if args.support is not None else 2,
        )
    overrides = {}
    if args.preset:
        # explicit flags refine a preset
        if args.n is not None:
            overrides["n_rows"] = args.n
        if args.features is not None:
            overrides["n_features"] = args.features
        if args.groups_true is not None:
            overrides["g_true"] = args.groups_true
        if args.dim is not None:
            overrides["dims"] = args.dim
        if args.support is not None:
            overrides["support_size"] = args.support
    if args.mu is not None:
        overrides["mu"] = args.mu
    overrides["nfr"] = args.nfr
    overrides["seed"] = args.seed
    return replace(cfg, **overrides)


def _write_generated(cfg: GenConfig, out_dir: Path) -> list[str]:
    ds, truth = generate(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    data_path = out_dir / "data.csv"
    schema_path = out_dir / "schema.json"
    truth_path = out_dir / "truth.csv"
    write_dataset_csv(ds, str(data_path))
    dataset_schema(ds).save(str(schema_path))
    truth.to_csv(str(truth_path))
    return [str(data_path), str(schema_path), str(truth_path)]


def cmd_generate(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    cfg = _gen_config(args)
    out_dir = Path(args.out_dir)
    outputs: list[str] = []
    configs = sweep_configs(cfg)
    if len(configs) == 1:
        outputs += _write_generated(configs[0], out_dir)
    else:
        for sub in configs:
            outputs += _write_generated(sub, out_dir / f"m{sub.n_features:03d}")
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_manifest(
        out_dir / "manifest.json", "generate", args,
        inputs=[], outputs=outputs, started=started,
    )
    total = cfg.n_rows + int(np.floor(cfg.nfr * cfg.n_rows))
    print(
        f"generate: {len(configs)} dataset(s) under {out_dir} "
        f"({total} rows each at M={configs[0].n_features}"
        + (f"..{configs[-1].n_features}" if len(configs) > 1 else "")
        + ")"
    )
    return 0


def _read_detect_rows(path: str) -> dict[str, np.ndarray]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"rows report not found: {path}") from None
    with fh:
        reader = csv.DictReader(fh)
        needed = {"row", "assignment", "outlier", "label_score", "anomaly_score"}
        if reader.fieldnames is None or not needed <= set(reader.fieldnames):
            raise DataError(f"{path}: expected detect row-report columns")
        recs = list(reader)
    return {
        "assignment": np.asarray([int(r["assignment"]) for r in recs]),
        "outlier": np.asarray([int(r["outlier"]) for r in recs], dtype=bool),
        "label_score": np.asarray([float(r["label_score"]) for r in recs]),
        "anomaly_score": np.asarray([float(r["anomaly_score"]) for r in recs]),
    }


def _evaluate_end_to_end(args: argparse.Namespace) -> dict:
    if args.input.endswith(".mat"):
        table, schema, labels = load_odds_mat(args.input)
    else:
        if not args.schema:
            raise DataError("end-to-end evaluation on CSV requires --schema")
        schema = FeatureSchema.load(args.schema)
        if schema.label is None:
            raise DataError("schema must declare a label column for evaluation")
        table = load_csv(args.input, schema)
        raw = table.columns[schema.label]
        try:
            labels = np.asarray([int(float(v)) for v in raw])
        except ValueError:
            raise DataError(f"label column {schema.label!r} is not binary") from None
    if args.groups is None:
        raise DataError("end-to-end evaluation requires --groups")

    bin_counts = [5, 10, 20] if args.sweep_bins else [args.bins]
    runs = []
    for bins in bin_counts:
        ds = encode(table, schema, bin_count=bins)
        cfg = _fit_config(args)
        result = fit(ds, cfg, threads=args.threads)
        scores = anomaly_scores(ds, result.params, resp=result.responsibilities)
        runs.append(
            {
                "bins": bins,
                "roc_auc": roc_auc(labels, scores),
                "pr_auc": pr_curve(labels, scores).auc,
                "iterations": result.trace.n_iterations,
                "active_components": result.trace.rows[-1].active_components,
            }
        )
    best = max(runs, key=lambda r: r["roc_auc"])
    return {
        "mode": "end_to_end",
        "input": args.input,
        "groups": args.groups,
        "runs": runs,
        "best_roc_auc": best["roc_auc"],
        "best_bins": best["bins"],
    }


def _evaluate_reports(args: argparse.Namespace) -> dict:
    truth = load_truth(args.truth)
    rows = _read_detect_rows(args.rows)
    if truth.d.shape[0] != rows["assignment"].shape[0]:
        raise DataError("truth and rows reports differ in length")
    report: dict = {"mode": "reports", "truth": args.truth, "rows": args.rows}
    want = args.kind
    if want in ("auto", "both", "clustering"):
        cs = clustering_scores(truth.d, rows["assignment"])
        report["clustering"] = {
            "homogeneity": cs.homogeneity,
            "completeness": cs.completeness,
            "v_score": cs.v_score,
        }
    classes = np.unique(truth.fraud)
    if want in ("both", "ranking") or (want == "auto" and classes.size == 2):
        scores = rows[args.score_column]
        report["ranking"] = {
            "score_column": args.score_column,
            "roc_auc": roc_auc(truth.fraud, scores),
            "pr_auc": pr_curve(truth.fraud, scores).auc,
        }
        if args.curves:
            out_dir = Path(args.out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            write_pr_csv(pr_curve(truth.fraud, scores), str(out_dir / "pr.csv"))
            write_roc_csv(roc_points(truth.fraud, scores), str(out_dir / "roc.csv"))
            report["curves"] = [str(out_dir / "pr.csv"), str(out_dir / "roc.csv")]
    return report


def cmd_evaluate(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    if args.input:
        report = _evaluate_end_to_end(args)
        inputs = [args.input] + ([args.schema] if args.schema else [])
    else:
        if not (args.truth and args.rows):
            raise DataError("evaluate needs either --input or --truth with --rows")
        report = _evaluate_reports(args)
        inputs = [args.truth, args.rows]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "evaluation.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    _write_manifest(
        out_dir / "manifest.json", "evaluate", args,
        inputs=inputs, outputs=[str(report_path)], started=started,
    )
    print(json.dumps(report, indent=2))
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    base = paper_analysis_preset("runtime")
    overrides = {"seed": args.seed}
    if args.n is not None:
        overrides["n_rows"] = args.n
    if args.m_values:
        overrides["m_sweep"] = tuple(
            int(v) for v in args.m_values.split(",") if v.strip()
        )
    base = replace(base, **overrides)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    timings_path = out_dir / "timings.csv"
    with open(timings_path, "w", encoding="utf-8") as fh:
        fh.write("M,seconds\n")
        for cfg in sweep_configs(base):
            ds, _ = generate(cfg)
            for _rep in range(args.repeat):
                fit_cfg = FitConfig(
                    G=args.groups, tol=0.0, max_outer_iters=args.iters, seed=args.seed
                )
                result = fit(ds, fit_cfg, threads=args.threads, keep_responsibilities=False)
                rows = result.trace.rows
                if len(rows) >= 2:
                    per_iter = (rows[-1].seconds - rows[0].seconds) / (len(rows) - 1)
                else:
                    per_iter = rows[0].seconds
                fh.write(f"{cfg.n_features},{per_iter:.6f}\n")
                print(f"bench: M={cfg.n_features} per-iteration {per_iter:.4f}s")
    _write_manifest(
        out_dir / "manifest.json", "bench", args,
        inputs=[], outputs=[str(timings_path)], started=started,
    )
    print(f"bench: wrote {timings_path}")
    return 0


def _add_fit_options(p: argparse.ArgumentParser, require_groups: bool = True) -> None:
    p.add_argument("--groups", "-g", type=int, required=require_groups,
                   default=None, help="number of mixture components G")
    p.add_argument("--lambda1", type=float, default=0.5,
                   help="mixture-weight sparsity strength (default 0.5)")
    p.add_argument("--lambda2", type=float, default=0.5,
                   help="alpha/beta disentanglement strength (default 0.5)")
    p.add_argument("--tol", type=float, default=1e-6,
                   help="relative objective improvement to stop at (default 1e-6)")
    p.add_argument("--max-iter", type=int, default=500,
                   help="outer EM iteration cap (default 500)")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: FIRD_THREADS or all cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fird",
        description="Mixture-model synchronization analysis for categorical data",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model to a CSV dataset")
    p.add_argument("--input", required=True, help="input CSV path")
    p.add_argument("--schema", required=True, help="feature schema JSON path")
    p.add_argument("--output", required=True, help="model JSON output path")
    p.add_argument("--trace", default=None, help="trace CSV path (default: beside model)")
    p.add_argument("--anneal", action="store_true",
                   help="fit through a lambda1 continuation ladder; slower but "
                        "merges redundant components when --groups is generous")
    p.add_argument("--bins", type=int, default=10,
                   help="default bins for continuous features (default 10)")
    _add_fit_options(p)
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("detect", help="score rows and groups under a fitted model")
    p.add_argument("--model", required=True, help="model JSON path")
    p.add_argument("--input", required=True, help="input CSV path")
    p.add_argument("--schema", required=True, help="feature schema JSON path")
    p.add_argument("--out-dir", required=True, help="directory for report files")
    p.add_argument("--epsilon", type=float, default=0.05,
                   help="relative information slack (default 0.05)")
    p.add_argument("--fraud-mode", choices=FRAUD_MODES, default="binomial",
                   help="group randomness model (default binomial)")
    p.add_argument("--decision", default="auto",
                   help="'auto' or a JSON file with per-group p(fraud|g)")
    p.add_argument("--bins", type=int, default=10,
                   help="default bins for continuous features (default 10)")
    _add_common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("generate", help="write a synthetic dataset with ground truth")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.add_argument("--preset", choices=PRESETS, default=None,
                   help="named preset configuration; explicit flags refine it")
    p.add_argument("--n", type=int, default=None, help="structured rows (default 1000)")
    p.add_argument("--features", type=int, default=None, help="feature count (default 10)")
    p.add_argument("--groups-true", type=int, default=None,
                   help="generating cluster count (default 5)")
    p.add_argument("--dim", type=int, default=None,
                   help="categories per feature (default 50)")
    p.add_argument("--support", type=int, default=None,
                   help="values carrying sync mass (default 2)")
    p.add_argument("--mu", type=float, default=None,
                   help="uniform sync rate (default: 0.8/0.2 pattern)")
    p.add_argument("--nfr", type=float, default=0.0,
                   help="noise rows per structured row (default 0)")
    _add_common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--truth", default=None, help="ground-truth CSV (row,d,fraud)")
    p.add_argument("--rows", default=None, help="detect row report CSV")
    p.add_argument("--score-column", choices=("label_score", "anomaly_score"),
                   default="label_score", help="ranking score column")
    p.add_argument("--kind", choices=("auto", "clustering", "ranking", "both"),
                   default="auto", help="which metrics to compute (default auto)")
    p.add_argument("--curves", action="store_true", help="also write PR/ROC CSVs")
    p.add_argument("--input", default=None,
                   help="end-to-end mode: dataset CSV or ODDS .mat file")
    p.add_argument("--schema", default=None,
                   help="schema JSON with a label column (CSV end-to-end mode)")
    p.add_argument("--bins", type=int, default=10,
                   help="bins for continuous features (default 10)")
    p.add_argument("--sweep-bins", action="store_true",
                   help="end-to-end mode: try bin counts 5, 10, 20")
    p.add_argument("--out-dir", required=True, help="directory for the report")
    _add_fit_options(p, require_groups=False)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="time EM iterations over the runtime preset")
    p.add_argument("--out-dir", required=True, help="directory for timings.csv")
    p.add_argument("--groups", type=int, default=10, help="fit components (default 10)")
    p.add_argument("--iters", type=int, default=3,
                   help="EM iterations to time per dataset (default 3)")
    p.add_argument("--repeat", type=int, default=1, help="timing rows per M (default 1)")
    p.add_argument("--n", type=int, default=None, help="override preset row count")
    p.add_argument("--m-values", default=None,
                   help="comma-separated M values (default 10..100)")
    _add_common(p)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None) is None:
        args.threads = _default_threads()
    try:
        return args.func(args)
    except NumericFailure as exc:
        print(f"fird: numeric failure: {exc}", file=sys.stderr)
        return NUMERIC_ERROR
    except (DataError, ModelFormatError, MetricError) as exc:
        print(f"fird: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (ValueError, OSError) as exc:
        print(f"fird: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
