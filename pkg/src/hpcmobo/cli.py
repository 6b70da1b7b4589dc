"""Command-line entry points.

Subcommands: synthgen, preprocess, sample, embed, train, optimize, report,
run. Exit codes: 0 success, 2 config error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .core import (
    ConfigError,
    PipelineError,
    RunConfig,
    load_config_file,
    run_config_from_sections,
)
from .embedding import train_mask
from .ingest import preprocess_fit, read_table, write_table
from .optimizer import (
    ALL_METHODS,
    CandidateSet,
    mobo_run,
    random_run,
    report_to_dict,
    sobo_run,
)
from .pipeline import (
    load_context,
    parse_settings,
    report_h1,
    run_pipeline,
    train_single_surrogate,
)
from .sampler import sample_table
from .surrogate import FeatureScaler, load_surrogate, save_surrogate, surrogate_features
from .synthgen import (
    DURATION_PAIRS,
    SyntheticSpec,
    generate,
    load_truth,
    save_truth,
    table_schema,
)

log = logging.getLogger("hpcmobo")


def _add_global_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file (key = value with [sections])")
    p.add_argument("--out-dir", default=None, help="override the output directory")
    p.add_argument("--log-level", default="INFO",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    # every run-config field can be overridden from the command line
    run = p.add_argument_group("run config overrides")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--mobo-iterations", type=int, default=None)
    run.add_argument("--q", type=int, default=None)
    run.add_argument("--mc-samples", type=int, default=None)
    run.add_argument("--acq-restarts", type=int, default=None)
    run.add_argument("--raw-candidates", type=int, default=None)
    run.add_argument("--random-seeds", type=int, default=None)
    run.add_argument("--sampling-fraction", "--tau", type=float, default=None,
                     dest="sampling_fraction")
    run.add_argument("--run-p-min", type=float, default=None, dest="run_p_min")


def _overrides(args) -> dict:
    return {
        "seed": args.seed,
        "mobo_iterations": args.mobo_iterations,
        "q": args.q,
        "mc_samples": args.mc_samples,
        "acq_restarts": args.acq_restarts,
        "raw_candidates": args.raw_candidates,
        "random_seeds": args.random_seeds,
        "sampling_fraction": args.sampling_fraction,
        "p_min": args.run_p_min,
    }


def _load(args, require_config: bool = True):
    if args.config is None:
        if require_config:
            raise ConfigError("this command needs --config")
        return {}, run_config_from_sections({}, _overrides(args))
    sections = load_config_file(args.config)
    cfg = run_config_from_sections(sections, _overrides(args))
    return sections, cfg


def _cmd_synthgen(args) -> int:
    spec = SyntheticSpec(
        n_jobs=args.jobs,
        n_noise_features=args.noise_features,
        node_range=(args.nodes_min, args.nodes_max),
        noise_sigma=args.noise_sigma,
        seed=args.seed if args.seed is not None else 0,
    )
    table, truth = generate(spec)
    write_table(table, args.out)
    save_truth(truth, args.truth)
    if args.emit_config:
        _write_pipeline_config(args, spec)
    log.info("wrote %s rows to %s", table.n_rows, args.out)
    return 0


def _write_pipeline_config(args, spec: SyntheticSpec) -> None:
    out = Path(args.out)
    lines = [
        "[run]",
        "mobo_iterations = 40",
        "mc_samples = 64",
        "random_seeds = 5",
        f"seed = {spec.seed}",
        "sampling_fraction = 0.75",
        "p_min = 0.01",
        "",
        "[pipeline]",
        f"input = {out.name}",
        f"truth = {Path(args.truth).name}",
        "out_dir = out",
        "runtime_target = runtime_seconds",
        "power_target = node_power",
        "n_job_contexts = 1",
        "use_embedding = true",
        "n_estimators = 40",
        "max_depth = 8",
        "",
        "[durations]",
    ]
    for start, end, name in DURATION_PAIRS:
        lines.append(f"{name} = {start},{end}")
    lines.append("")
    lines.append("[schema]")
    for s in table_schema(spec.n_noise_features):
        lines.append(f"{s.name} = {s.kind}:{s.role}")
    Path(args.emit_config).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cmd_preprocess(args) -> int:
    sections, cfg = _load(args)
    settings = parse_settings(sections, Path(args.config).parent, args.out_dir)
    settings.out_dir.mkdir(parents=True, exist_ok=True)
    table = read_table(args.input or settings.input_path, settings.specs)
    processed, recipe = preprocess_fit(table, settings.duration_pairs)
    write_table(processed, settings.out_dir / "preprocessed.csv")
    recipe.save(settings.out_dir / "recipe.json")
    log.info("preprocessed %d rows, %d columns", processed.n_rows, len(processed.columns))
    return 0


def _cmd_sample(args) -> int:
    sections, cfg = _load(args)
    table = read_table(args.input)
    tau = args.fraction if args.fraction is not None else cfg.sampling_fraction
    p_min = args.p_min if args.p_min is not None else cfg.p_min
    seed = args.seed if args.seed is not None else cfg.seed
    subset, plan = sample_table(table, tau, p_min, seed)
    write_table(subset, args.out)
    plan.save(args.plan)
    log.info("kept %d of %d rows (target %.3f, realized %.3f)",
             subset.n_rows, table.n_rows, tau, subset.n_rows / table.n_rows)
    return 0


def _cmd_embed(args) -> int:
    sections, cfg = _load(args)
    table = read_table(args.input)
    features = surrogate_features(table)
    X = table.numeric_matrix(features)
    y = table.numeric_matrix([args.target])[:, 0]
    scaler = FeatureScaler.fit(X)
    mask = train_mask(scaler.transform(X), y, epochs=args.epochs, lr=args.lr,
                      seed=args.seed if args.seed is not None else cfg.seed)
    mask.save(args.out, scaler_mean=scaler.mean, scaler_std=scaler.std)
    log.info("trained mask over %d features; top weight %s",
             len(features), features[int(np.argmax(mask.m))])
    return 0


def _cmd_train(args) -> int:
    sections, cfg = _load(args)
    settings = parse_settings(sections, Path(args.config).parent, args.out_dir)
    settings.out_dir.mkdir(parents=True, exist_ok=True)
    if args.no_embedding:
        settings.use_embedding = False
    table = read_table(args.input)
    metrics = {}
    for key, target in (("runtime", settings.runtime_target),
                        ("power", settings.power_target)):
        model, entry = train_single_surrogate(table, settings, target, seed=cfg.seed)
        save_surrogate(model, settings.out_dir / f"{key}_model.json")
        metrics[target] = entry
    (settings.out_dir / "surrogate_metrics.json").write_text(
        json.dumps(metrics, indent=2, sort_keys=True), encoding="utf-8")
    return 0


def _cmd_optimize(args) -> int:
    sections, cfg = _load(args, require_config=False)
    if args.iters is not None:
        cfg = run_config_from_sections(
            sections, {**_overrides(args), "mobo_iterations": args.iters})
    surr_dir = Path(args.surrogates)
    surr_r = load_surrogate(surr_dir / "runtime_model.json")
    surr_p = load_surrogate(surr_dir / "power_model.json")
    context = load_context(Path(args.job_context), surr_r.design_feature)
    lo, hi = surr_r.design_bounds
    candidates = CandidateSet.from_bounds(lo, hi, context)
    start = time.perf_counter()
    if args.method == "mobo":
        report = mobo_run(surr_r, surr_p, candidates, cfg)
    elif args.method == "sobo-runtime":
        report = sobo_run(surr_r, surr_p, candidates, "runtime", cfg)
    elif args.method == "sobo-power":
        report = sobo_run(surr_r, surr_p, candidates, "power", cfg)
    else:
        report = random_run(surr_r, surr_p, candidates, cfg)
    elapsed = time.perf_counter() - start
    payload = report_to_dict(report)
    payload["wall_clock_seconds"] = {"optimize": elapsed}
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True),
                              encoding="utf-8")
    log.info("%s: %d evaluations, HV %.6g, spread %.6g",
             report.method, report.n_evaluations, report.hv, report.spread)
    return 0


def _cmd_report(args) -> int:
    sections, cfg = _load(args)
    settings = parse_settings(sections, Path(args.config).parent, args.out_dir)
    if args.h1:
        table = read_table(Path(args.input))
        truth = None
        if settings.truth_path is not None:
            truth = load_truth(settings.truth_path)
        result = report_h1(table, settings, cfg,
                           out_dir=settings.out_dir / "reports", truth=truth)
        log.info("H1 report written; downstream space: %s", result["downstream_space"])
        return 0
    # rebuild the comparison from per-method report files
    reports_dir = settings.out_dir / "reports"
    missing = []
    stage_names = {"MOBO": "mobo", "SOBO (Runtime)": "sobo_runtime",
                   "SOBO (Power)": "sobo_power", "Random": "random"}
    for method in ALL_METHODS:
        if not (reports_dir / f"{stage_names[method]}_ctx0.json").exists():
            missing.append(method)
    if missing:
        raise PipelineError(f"missing method report(s): {missing}")
    log.info("all method reports present under %s", reports_dir)
    return 0


def _cmd_run(args) -> int:
    if args.config is None:
        raise ConfigError("run needs --config")
    manifest = run_pipeline(args.config, overrides=_overrides(args),
                            out_dir_override=args.out_dir)
    total = manifest["timing_table"]["TOTAL"]
    log.info("pipeline complete in %.2fs; %d artifacts", total, len(manifest["artifacts"]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hpcmobo",
        description="Runtime-power trade-off optimization for HPC job node counts",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthgen", help="generate a synthetic job log with ground truth")
    _add_global_flags(p)
    p.add_argument("--jobs", type=int, default=1000)
    p.add_argument("--noise-features", type=int, default=5)
    p.add_argument("--nodes-min", type=int, default=1)
    p.add_argument("--nodes-max", type=int, default=64)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--emit-config", default=None,
                   help="also write a ready-to-run pipeline config")
    p.set_defaults(fn=_cmd_synthgen)

    p = sub.add_parser("preprocess", help="build the numeric view of a raw job log")
    _add_global_flags(p)
    p.add_argument("--in", dest="input", default=None)
    p.set_defaults(fn=_cmd_preprocess)

    p = sub.add_parser("sample", help="loss-proportional subset sampling")
    _add_global_flags(p)
    p.add_argument("--fraction", type=float, default=None, help="target rate tau")
    p.add_argument("--p-min", type=float, default=None)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plan", required=True)
    p.set_defaults(fn=_cmd_sample)

    p = sub.add_parser("embed", help="train an attentive feature mask")
    _add_global_flags(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--epochs", type=int, default=400)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_embed)

    p = sub.add_parser("train", help="train runtime and power surrogates")
    _add_global_flags(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--no-embedding", action="store_true")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("optimize", help="run one optimizer against frozen surrogates")
    _add_global_flags(p)
    p.add_argument("--method", required=True,
                   choices=["mobo", "sobo-runtime", "sobo-power", "random"])
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--surrogates", required=True, help="directory with *_model.json")
    p.add_argument("--job-context", required=True, help="one-row CSV of feature values")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_optimize)

    p = sub.add_parser("report", help="verify or rebuild comparison reports")
    _add_global_flags(p)
    p.add_argument("--h1", action="store_true",
                   help="produce the embedded-vs-raw comparison")
    p.add_argument("--in", dest="input", default=None,
                   help="preprocessed table for --h1")
    p.set_defaults(fn=_cmd_report)

    p = sub.add_parser("run", help="execute the full pipeline")
    _add_global_flags(p)
    p.set_defaults(fn=_cmd_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
