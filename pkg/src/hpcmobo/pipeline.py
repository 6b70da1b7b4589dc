"""End-to-end pipeline orchestration.

Stages run in order (preprocess -> sample -> runtime model -> power model ->
optimizer prep -> MOBO -> SOBO x2 -> random -> report), each reading and
writing file artifacts so any stage can be rerun in isolation. A manifest
records every artifact with its content hash, per-stage wall-clock timings,
and the dataset fingerprint; stage inputs are fingerprint-checked before the
stage runs.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .core import (
    ColumnSpec,
    ConfigError,
    DataError,
    JobTable,
    RunConfig,
    StageTimings,
    load_config_file,
    run_config_from_sections,
)
from .ingest import preprocess_fit, read_table, write_table
from .optimizer import (
    ALL_METHODS,
    METHOD_MOBO,
    METHOD_RANDOM,
    METHOD_SOBO_POWER,
    METHOD_SOBO_RUNTIME,
    CandidateSet,
    ComparisonTable,
    JobContext,
    ParetoReport,
    compare_methods,
    mobo_run,
    random_run,
    save_report,
    sobo_run,
)
from .pareto import (
    ParetoFront,
    front_to_csv,
    fronts_to_svg,
    hypervolume,
    infer_reference,
    nondominated,
    spread,
)
from .sampler import sample_table
from .surrogate import (
    SurrogateModel,
    TreeParams,
    mape,
    save_surrogate,
    surrogate_features,
    train_objective_surrogate,
)
from .synthgen import load_truth, runtime_law, power_law

TIMING_ROWS = (
    "Preprocessing",
    "Runtime Model",
    "Power Model",
    "Preproc. MOBO",
    "MOBO",
    "SOBO Runtime",
    "SOBO Power",
)

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_bool(value: str, key: str) -> bool:
    v = value.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ConfigError(f"config field {key}={value!r} is not a boolean")


@dataclass
class PipelineSettings:
    """Dataset- and model-level knobs read from the config file sections
    outside [run]."""

    input_path: Path
    out_dir: Path
    runtime_target: str
    power_target: str
    specs: list[ColumnSpec]
    duration_pairs: list[tuple[str, str, str]] = field(default_factory=list)
    n_job_contexts: int = 1
    use_embedding: bool = True
    surrogate_mode: str = "bagged"
    n_estimators: int = 100
    max_depth: int = 10
    learning_rate: float = 0.1
    mask_epochs: int = 400
    mask_lr: float = 0.05
    spread_method: str = "polyline"
    sat_cap: float = 0.10
    log_runtime_gp: bool = True
    validation_fraction: float = 0.2
    h1_seeds: int = 3
    truth_path: Path | None = None


def parse_schema_sections(sections) -> tuple[list[ColumnSpec], list[tuple[str, str, str]]]:
    schema = sections.get("schema", {})
    if not schema:
        raise ConfigError("config has no [schema] section describing the input columns")
    specs = []
    for name, value in schema.items():
        parts = value.split(":")
        if len(parts) != 2:
            raise ConfigError(f"schema entry {name} = {value!r} is not kind:role")
        specs.append(ColumnSpec(name, parts[0].strip(), parts[1].strip()))
    pairs = []
    for out_col, value in sections.get("durations", {}).items():
        parts = [p.strip() for p in value.split(",")]
        if len(parts) != 2:
            raise ConfigError(
                f"duration entry {out_col} = {value!r} must be start_col,end_col"
            )
        pairs.append((parts[0], parts[1], out_col))
    return specs, pairs


def parse_settings(sections, config_dir: Path,
                   out_dir_override: str | None = None) -> PipelineSettings:
    pipe = sections.get("pipeline", {})
    for key in ("input", "runtime_target", "power_target"):
        if key not in pipe:
            raise ConfigError(f"[pipeline] section is missing required key {key!r}")
    specs, pairs = parse_schema_sections(sections)

    def resolve(p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else config_dir / path

    settings = PipelineSettings(
        input_path=resolve(pipe["input"]),
        out_dir=resolve(out_dir_override or pipe.get("out_dir", "out")),
        runtime_target=pipe["runtime_target"],
        power_target=pipe["power_target"],
        specs=specs,
        duration_pairs=pairs,
    )
    casts: dict[str, Callable[[str, str], object]] = {
        "n_job_contexts": lambda v, k: int(v),
        "use_embedding": _parse_bool,
        "surrogate_mode": lambda v, k: v.strip(),
        "n_estimators": lambda v, k: int(v),
        "max_depth": lambda v, k: int(v),
        "learning_rate": lambda v, k: float(v),
        "mask_epochs": lambda v, k: int(v),
        "mask_lr": lambda v, k: float(v),
        "spread_method": lambda v, k: v.strip(),
        "sat_cap": lambda v, k: float(v),
        "log_runtime_gp": _parse_bool,
        "validation_fraction": lambda v, k: float(v),
        "h1_seeds": lambda v, k: int(v),
    }
    for key, cast in casts.items():
        if key in pipe:
            setattr(settings, key, cast(pipe[key], key))
    if "truth" in pipe:
        settings.truth_path = resolve(pipe["truth"])
    return settings


def tree_params(settings: PipelineSettings, seed: int) -> TreeParams:
    return TreeParams(
        mode=settings.surrogate_mode,
        n_estimators=settings.n_estimators,
        max_depth=settings.max_depth,
        learning_rate=settings.learning_rate,
        seed=seed,
    )


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class PipelineRun:
    """Stage runner that owns one output directory, times every stage, and
    verifies input fingerprints before a stage executes."""

    def __init__(self, settings: PipelineSettings, cfg: RunConfig, sections):
        self.settings = settings
        self.cfg = cfg
        self.sections = {k: dict(v) for k, v in sections.items()}
        self.out_dir = settings.out_dir
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.artifacts: dict[str, str] = {}
        self.stage_records: list[dict] = []
        self.stage_seconds: dict[str, float] = {}

    def rel(self, path: Path) -> str:
        return str(Path(path).relative_to(self.out_dir))

    def register(self, *paths: Path) -> None:
        for p in paths:
            self.artifacts[self.rel(p)] = file_sha256(p)

    def check_inputs(self, paths: list[Path]) -> None:
        for p in paths:
            p = Path(p)
            if not p.exists():
                raise DataError(f"stage input missing: {p}")
            rel = self.rel(p) if p.is_relative_to(self.out_dir) else None
            if rel is not None and rel in self.artifacts:
                if file_sha256(p) != self.artifacts[rel]:
                    raise DataError(f"stage input fingerprint mismatch: {p}")

    def stage(self, name: str, inputs: list[Path], fn: Callable[[], list[Path]]):
        self.check_inputs(inputs)
        start = time.perf_counter()
        outputs = fn()
        seconds = time.perf_counter() - start
        self.stage_seconds[name] = self.stage_seconds.get(name, 0.0) + seconds
        self.register(*outputs)
        self.stage_records.append({
            "name": name,
            "inputs": [str(p) if not Path(p).is_relative_to(self.out_dir) else self.rel(p)
                       for p in inputs],
            "outputs": [self.rel(p) for p in outputs],
            "seconds": seconds,
        })
        return outputs


def manifest_comparable(manifest: dict) -> dict:
    """The manifest with every timing-derived field removed, for run-to-run
    reproducibility comparisons (timings differ by nature; all other content
    is seed-deterministic)."""
    out = json.loads(json.dumps(manifest))
    out.pop("timing_table", None)
    for stage in out.get("stages", []):
        stage.pop("seconds", None)
    out.get("artifacts", {}).pop("timing_table.csv", None)
    return out


def timing_table(stage_seconds: dict[str, float]) -> StageTimings:
    """Fold granular stage timings into the fixed 7-row report layout; the
    sampler is part of Preprocessing and the random baseline is manifest-only."""
    rows = {
        "Preprocessing": stage_seconds.get("preprocess", 0.0) + stage_seconds.get("sample", 0.0),
        "Runtime Model": stage_seconds.get("runtime_model", 0.0),
        "Power Model": stage_seconds.get("power_model", 0.0),
        "Preproc. MOBO": stage_seconds.get("preproc_mobo", 0.0),
        "MOBO": stage_seconds.get("mobo", 0.0),
        "SOBO Runtime": stage_seconds.get("sobo_runtime", 0.0),
        "SOBO Power": stage_seconds.get("sobo_power", 0.0),
    }
    return StageTimings.from_entries([(name, rows[name]) for name in TIMING_ROWS])


def write_timing_csv(timings: StageTimings, path: Path) -> None:
    lines = ["Step,Seconds"]
    for name, seconds in timings.entries:
        lines.append(f"{name},{seconds:.6f}")
    lines.append(f"TOTAL,{timings.total:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def true_front_for_job(job: dict, bounds: tuple[int, int]) -> ParetoFront:
    pts = [
        (runtime_law(job["base"], job["serial_frac"], n),
         power_law(job["idle"], job["per_node"], n))
        for n in range(bounds[0], bounds[1] + 1)
    ]
    return nondominated(pts)


def report_h2(reports: dict[str, ParetoReport], out_dir: Path, tag: str,
              truth_front: ParetoFront | None = None,
              spread_method: str = "polyline") -> ComparisonTable:
    """Comparison table plus the overlaid Pareto scatter for one context."""
    missing = [m for m in ALL_METHODS if m not in reports]
    if missing:
        raise DataError(f"missing method reports: {missing}")
    table = compare_methods(reports, spread_method)
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / f"comparison_{tag}.csv")
    fronts = {name: rep.front for name, rep in reports.items()}
    fronts_to_svg(fronts, out_dir / f"pareto_{tag}.svg", true_front=truth_front,
                  title=f"Pareto fronts ({tag})")
    return table


def _train_val_split(table: JobTable, fraction: float, seed: int):
    n = table.n_rows
    rng = np.random.default_rng([seed, 77])
    order = rng.permutation(n)
    n_val = max(1, int(round(fraction * n))) if n > 4 else 0
    val_idx = np.sort(order[:n_val])
    train_idx = np.sort(order[n_val:])
    return table.select_rows(train_idx), table.select_rows(val_idx)


def train_single_surrogate(table: JobTable, settings: PipelineSettings, target: str,
                           use_embedding: bool | None = None,
                           seed: int = 0) -> tuple[SurrogateModel, dict]:
    """Train one objective predictor on a train split; report validation
    MSE/MAPE on the held-out rows."""
    embedding = settings.use_embedding if use_embedding is None else use_embedding
    train, val = _train_val_split(table, settings.validation_fraction, seed)
    model = train_objective_surrogate(
        train, target, use_embedding=embedding,
        params=tree_params(settings, seed),
        mask_epochs=settings.mask_epochs, mask_lr=settings.mask_lr, seed=seed,
    )
    entry: dict = {"mse": None, "mape": None,
                   "n_train": train.n_rows, "n_val": val.n_rows,
                   "mape_units": "fraction"}
    if val.n_rows:
        X = val.numeric_matrix(model.feature_names)
        y = val.numeric_matrix([target])[:, 0]
        pred = model.predict(X)
        entry["mse"] = float(np.mean((pred - y) ** 2))
        entry["mape"] = mape(y, pred)
    return model, entry


def train_surrogate_pair(table: JobTable, settings: PipelineSettings, cfg: RunConfig,
                         use_embedding: bool | None = None,
                         seed: int | None = None) -> tuple[SurrogateModel, SurrogateModel, dict]:
    """Runtime and power predictors trained independently on the same split;
    two calls, no shared state."""
    seed = cfg.seed if seed is None else seed
    surr_r, m_r = train_single_surrogate(table, settings, settings.runtime_target,
                                         use_embedding, seed)
    surr_p, m_p = train_single_surrogate(table, settings, settings.power_target,
                                         use_embedding, seed)
    metrics = {
        "n_train": m_r["n_train"], "n_val": m_r["n_val"],
        "targets": {settings.runtime_target: {"mse": m_r["mse"], "mape": m_r["mape"]},
                    settings.power_target: {"mse": m_p["mse"], "mape": m_p["mape"]}},
        "mape_units": "fraction",
    }
    return surr_r, surr_p, metrics


def context_from_row(table: JobTable, row: int) -> JobContext:
    names = surrogate_features(table)
    values = table.numeric_matrix(names)[row]
    return JobContext(feature_names=tuple(names), values=values,
                      design_feature=table.design_column().name)


def save_context(context: JobContext, path: Path) -> None:
    lines = [",".join(context.feature_names),
             ",".join(repr(float(v)) for v in context.values)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_context(path: Path, design_feature: str) -> JobContext:
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if len(lines) < 2:
        raise DataError(f"job context file {path} needs a header and one row")
    names = tuple(n.strip() for n in lines[0].split(","))
    values = np.array([float(v) for v in lines[1].split(",")])
    if design_feature not in names:
        raise DataError(f"design feature {design_feature!r} not in context columns")
    return JobContext(feature_names=names, values=values, design_feature=design_feature)


def run_pipeline(config_path: str | Path, overrides: dict | None = None,
                 out_dir_override: str | None = None) -> dict:
    """Execute every stage and return the manifest (also written to disk)."""
    config_path = Path(config_path)
    sections = load_config_file(config_path)
    cfg = run_config_from_sections(sections, overrides)
    settings = parse_settings(sections, config_path.parent, out_dir_override)
    run = PipelineRun(settings, cfg, sections)
    out = run.out_dir

    state: dict = {}

    def preprocess_stage():
        table = read_table(settings.input_path, settings.specs)
        processed, recipe = preprocess_fit(table, settings.duration_pairs)
        state["processed"] = processed
        outputs = write_table(processed, out / "preprocessed.csv")
        recipe.save(out / "recipe.json")
        return outputs + [out / "recipe.json"]

    run.stage("preprocess", [settings.input_path], preprocess_stage)

    def sample_stage():
        subset, plan = sample_table(
            state["processed"], cfg.sampling_fraction, cfg.p_min, cfg.seed,
            settings.sat_cap,
        )
        state["subset"] = subset
        state["plan"] = plan
        outputs = write_table(subset, out / "subset.csv")
        plan.save(out / "plan.json")
        return outputs + [out / "plan.json"]

    run.stage("sample", [out / "preprocessed.csv"], sample_stage)

    state["metrics"] = {}

    def model_stage(target_key: str, target: str):
        def fn():
            model, entry = train_single_surrogate(state["subset"], settings, target,
                                                  seed=cfg.seed)
            state[f"surr_{target_key}"] = model
            state["metrics"][target] = entry
            path = out / f"{target_key}_model.json"
            save_surrogate(model, path)
            return [path]
        return fn

    run.stage("runtime_model", [out / "subset.csv"],
              model_stage("runtime", settings.runtime_target))
    run.stage("power_model", [out / "subset.csv"],
              model_stage("power", settings.power_target))
    metrics_path = out / "surrogate_metrics.json"
    metrics_path.write_text(json.dumps(state["metrics"], indent=2, sort_keys=True),
                            encoding="utf-8")
    run.register(metrics_path)

    def preproc_mobo_stage():
        subset = state["subset"]
        surr_r = state["surr_runtime"]
        rng = np.random.default_rng([cfg.seed, 42])
        n_ctx = min(settings.n_job_contexts, subset.n_rows)
        rows = np.sort(rng.choice(subset.n_rows, size=n_ctx, replace=False))
        contexts = [context_from_row(subset, int(r)) for r in rows]
        state["contexts"] = contexts
        # map subset rows back to original dataset rows for truth lookup
        mask = state["plan"].mask
        original = np.flatnonzero(mask)[rows] if mask is not None else rows
        state["context_rows"] = [int(i) for i in original]
        outputs = []
        for i, ctx in enumerate(contexts):
            path = out / f"context_{i}.csv"
            save_context(ctx, path)
            outputs.append(path)
        bounds = surr_r.design_bounds
        state["candidates"] = [CandidateSet.from_bounds(bounds[0], bounds[1], c)
                               for c in contexts]
        return outputs

    run.stage("preproc_mobo", [out / "subset.csv"], preproc_mobo_stage)

    truth = load_truth(settings.truth_path) if settings.truth_path else None
    reports_dir = out / "reports"
    method_stage_names = {
        METHOD_MOBO: "mobo",
        METHOD_SOBO_RUNTIME: "sobo_runtime",
        METHOD_SOBO_POWER: "sobo_power",
        METHOD_RANDOM: "random",
    }
    per_context_reports: list[dict[str, ParetoReport]] = [
        {} for _ in state["contexts"]
    ]

    surr_r = state["surr_runtime"]
    surr_p = state["surr_power"]
    for method, stage_name in method_stage_names.items():
        def method_fn(method=method):
            outputs = []
            for i, candidates in enumerate(state["candidates"]):
                if method == METHOD_MOBO:
                    rep = mobo_run(surr_r, surr_p, candidates, cfg,
                                   settings.log_runtime_gp, settings.spread_method)
                elif method == METHOD_SOBO_RUNTIME:
                    rep = sobo_run(surr_r, surr_p, candidates, "runtime", cfg,
                                   settings.log_runtime_gp, settings.spread_method)
                elif method == METHOD_SOBO_POWER:
                    rep = sobo_run(surr_r, surr_p, candidates, "power", cfg,
                                   settings.log_runtime_gp, settings.spread_method)
                else:
                    rep = random_run(surr_r, surr_p, candidates, cfg,
                                     settings.spread_method)
                per_context_reports[i][method] = rep
                path = reports_dir / f"{stage_name}_ctx{i}.json"
                save_report(rep, path)
                outputs.append(path)
                front_path = reports_dir / f"{stage_name}_ctx{i}_front.csv"
                front_to_csv(rep.front, front_path, node_counts=rep.front_nodes,
                             iterations=rep.front_found_at)
                outputs.append(front_path)
            return outputs
        run.stage(stage_name, [out / "runtime_model.json", out / "power_model.json"],
                  method_fn)

    def report_stage():
        outputs = []
        aggregate: dict[str, dict[str, list[float]]] = {
            m: {"hv": [], "spread": []} for m in ALL_METHODS
        }
        for i, reports in enumerate(per_context_reports):
            truth_front = None
            if truth is not None:
                job = truth["jobs"][state["context_rows"][i]]
                truth_front = true_front_for_job(job, state["candidates"][i].bounds)
            table = report_h2(reports, reports_dir, f"ctx{i}", truth_front,
                              settings.spread_method)
            outputs.append(reports_dir / f"comparison_ctx{i}.csv")
            outputs.append(reports_dir / f"pareto_ctx{i}.svg")
            for m in ALL_METHODS:
                aggregate[m]["hv"].append(table.hv[m])
                aggregate[m]["spread"].append(table.spread[m])
        agg_path = reports_dir / "comparison_aggregate.csv"
        lines = ["Metric," + ",".join(ALL_METHODS)]
        lines.append("Hypervolume (mean over contexts),"
                     + ",".join(repr(float(np.mean(aggregate[m]["hv"]))) for m in ALL_METHODS))
        lines.append("Spread (mean over contexts),"
                     + ",".join(repr(float(np.mean(aggregate[m]["spread"]))) for m in ALL_METHODS))
        agg_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        outputs.append(agg_path)
        return outputs

    run.stage("report", [], report_stage)

    timings = timing_table(run.stage_seconds)
    write_timing_csv(timings, out / "timing_table.csv")
    run.register(out / "timing_table.csv")

    manifest = {
        "config": run.sections,
        "run_config": asdict(cfg),
        "dataset": {
            "path": str(settings.input_path),
            "rows": state["processed"].n_rows,
            "columns": len(state["processed"].columns),
            "sha256": file_sha256(settings.input_path),
        },
        "subset_rows": state["subset"].n_rows,
        "context_rows": state["context_rows"],
        "aggregation": f"mean over {len(state['contexts'])} sampled job contexts",
        "stages": run.stage_records,
        "artifacts": dict(sorted(run.artifacts.items())),
        "timing_table": {name: s for name, s in timings.entries} | {"TOTAL": timings.total},
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True),
                             encoding="utf-8")
    return manifest


def truth_capture(report: ParetoReport, job: dict, bounds: tuple[int, int],
                  spread_method: str = "polyline") -> dict:
    """Score a run's recommended front on the exact laws: fraction of the
    exhaustive true-front hypervolume captured, plus the truth-space spread."""
    enum = [
        (runtime_law(job["base"], job["serial_frac"], n),
         power_law(job["idle"], job["per_node"], n))
        for n in range(bounds[0], bounds[1] + 1)
    ]
    ref = infer_reference(enum)
    true_hv = hypervolume(nondominated(enum), ref)
    rec = [
        (runtime_law(job["base"], job["serial_frac"], n),
         power_law(job["idle"], job["per_node"], n))
        for n in report.front_nodes
    ]
    front = nondominated(rec)
    hv = hypervolume(front, ref)
    return {
        "hv": hv / true_hv if true_hv > 0 else 0.0,
        "spread": spread(front, spread_method),
    }


def report_h1(table: JobTable, settings: PipelineSettings, cfg: RunConfig,
              out_dir: Path | None = None, truth: dict | None = None,
              context_rows: list[int] | None = None,
              methods: tuple[str, ...] = ALL_METHODS) -> dict:
    """Embedded-vs-raw surrogate comparison: validation MSE/MAPE per seed plus
    downstream optimizer metrics per method, in a two-block layout.

    With ground-truth laws available, each run's recommended front is
    re-scored on the exact laws and reported as the captured fraction of the
    true-front hypervolume, averaged over the sampled job contexts; otherwise
    each variant reports the hypervolume of its own predicted objective space.
    """
    variants = ("raw", "embedded")
    context_rows = list(context_rows) if context_rows else [0]
    per_seed: list[dict] = []
    downstream: dict[str, dict[str, dict[str, list[float]]]] = {
        v: {m: {"hv": [], "spread": []} for m in methods} for v in variants
    }

    def method_run(method, surr_r, surr_p, candidates, seed_cfg):
        if method == METHOD_MOBO:
            return mobo_run(surr_r, surr_p, candidates, seed_cfg,
                            settings.log_runtime_gp, settings.spread_method)
        if method == METHOD_SOBO_RUNTIME:
            return sobo_run(surr_r, surr_p, candidates, "runtime", seed_cfg,
                            settings.log_runtime_gp, settings.spread_method)
        if method == METHOD_SOBO_POWER:
            return sobo_run(surr_r, surr_p, candidates, "power", seed_cfg,
                            settings.log_runtime_gp, settings.spread_method)
        return random_run(surr_r, surr_p, candidates, seed_cfg, settings.spread_method)

    for s in range(settings.h1_seeds):
        seed = cfg.seed + s
        seed_cfg = RunConfig(**{**asdict(cfg), "seed": seed})
        entry: dict = {"seed": seed}
        for variant in variants:
            surr_r, surr_p, metrics = train_surrogate_pair(
                table, settings, seed_cfg, use_embedding=(variant == "embedded"),
                seed=seed)
            entry[variant] = metrics["targets"]
            scores: dict[str, dict[str, list[float]]] = {
                m: {"hv": [], "spread": []} for m in methods
            }
            for row in context_rows:
                candidates = CandidateSet.from_bounds(
                    surr_r.design_bounds[0], surr_r.design_bounds[1],
                    context_from_row(table, row))
                for method in methods:
                    rep = method_run(method, surr_r, surr_p, candidates, seed_cfg)
                    if truth is not None:
                        scored = truth_capture(rep, truth["jobs"][row],
                                               candidates.bounds,
                                               settings.spread_method)
                        scores[method]["hv"].append(scored["hv"])
                        scores[method]["spread"].append(scored["spread"])
                    else:
                        scores[method]["hv"].append(rep.hv)
                        scores[method]["spread"].append(rep.spread)
            for method in methods:
                downstream[variant][method]["hv"].append(
                    float(np.mean(scores[method]["hv"])))
                downstream[variant][method]["spread"].append(
                    float(np.mean(scores[method]["spread"])))
        per_seed.append(entry)

    def median_metric(variant: str, target: str, key: str) -> float:
        return float(np.median([e[variant][target][key] for e in per_seed]))

    result = {
        "seeds": [e["seed"] for e in per_seed],
        "context_rows": context_rows,
        "per_seed": per_seed,
        "median_validation": {
            v: {
                t: {
                    "mse": median_metric(v, t, "mse"),
                    "mape": median_metric(v, t, "mape"),
                }
                for t in (settings.runtime_target, settings.power_target)
            }
            for v in variants
        },
        "downstream_per_seed": {
            v: {m: downstream[v][m]["hv"] for m in methods} for v in variants
        },
        "downstream_median": {
            v: {
                m: {
                    "hv": float(np.median(downstream[v][m]["hv"])),
                    "spread": float(np.median(downstream[v][m]["spread"])),
                }
                for m in methods
            }
            for v in variants
        },
        "downstream_space": (
            "true-front hypervolume capture, mean over contexts"
            if truth is not None else "per-variant predicted objectives"
        ),
        "mape_units": "fraction",
    }
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "h1_report.json").write_text(
            json.dumps(result, indent=2, sort_keys=True), encoding="utf-8")
        lines = [f"# downstream metric: {result['downstream_space']}"]
        for v in variants:
            lines.append(f"# block: {v} features")
            lines.append("Metric," + ",".join(methods))
            lines.append("Hypervolume," + ",".join(
                repr(result["downstream_median"][v][m]["hv"]) for m in methods))
            lines.append("Spread," + ",".join(
                repr(result["downstream_median"][v][m]["spread"]) for m in methods))
        (out_dir / "h1_blocks.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return result
