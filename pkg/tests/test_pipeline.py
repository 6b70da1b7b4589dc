from pathlib import Path

import numpy as np
import pytest

from hpcmobo.core import RunConfig
from hpcmobo.ingest import preprocess_fit, write_table
from hpcmobo.pipeline import (
    PipelineSettings,
    manifest_comparable,
    parse_schema_sections,
    report_h1,
    run_pipeline,
    timing_table,
    train_surrogate_pair,
)
from hpcmobo.synthgen import (
    DURATION_PAIRS,
    SyntheticSpec,
    generate,
    save_truth,
    table_schema,
)

TIMING_ROW_SET = ["Preprocessing", "Runtime Model", "Power Model", "Preproc. MOBO",
                  "MOBO", "SOBO Runtime", "SOBO Power"]


def _write_config(tmp_path, n_noise=2, extra_run=(), extra_pipe=()):
    spec = SyntheticSpec(n_jobs=220, n_noise_features=n_noise, noise_sigma=1.0, seed=5)
    table, truth = generate(spec)
    write_table(table, tmp_path / "data.csv")
    save_truth(truth, tmp_path / "truth.json")
    lines = [
        "[run]",
        "mobo_iterations = 6",
        "mc_samples = 32",
        "random_seeds = 3",
        "seed = 1",
        "sampling_fraction = 0.8",
        *extra_run,
        "",
        "[pipeline]",
        "input = data.csv",
        "truth = truth.json",
        "out_dir = out",
        "runtime_target = runtime_seconds",
        "power_target = node_power",
        "n_job_contexts = 1",
        "n_estimators = 12",
        "max_depth = 5",
        "mask_epochs = 120",
        "h1_seeds = 2",
        *extra_pipe,
        "",
        "[durations]",
    ]
    for start, end, name in DURATION_PAIRS:
        lines.append(f"{name} = {start},{end}")
    lines.append("")
    lines.append("[schema]")
    for s in table_schema(n_noise):
        lines.append(f"{s.name} = {s.kind}:{s.role}")
    cfg_path = tmp_path / "config.ini"
    cfg_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return cfg_path, truth


def test_schema_section_parsing():
    sections = {
        "schema": {"a": "numeric:feature", "b": "categorical:ignored"},
        "durations": {"wait": "s,e"},
    }
    specs, pairs = parse_schema_sections(sections)
    assert [s.name for s in specs] == ["a", "b"]
    assert specs[1].role == "ignored"
    assert pairs == [("s", "e", "wait")]


def test_timing_table_has_exact_row_set_and_total():
    seconds = {"preprocess": 1.0, "sample": 0.5, "runtime_model": 2.0,
               "power_model": 2.0, "preproc_mobo": 0.1, "mobo": 3.0,
               "sobo_runtime": 1.0, "sobo_power": 1.0, "random": 9.9}
    timings = timing_table(seconds)
    assert [name for name, _ in timings.entries] == TIMING_ROW_SET
    assert dict(timings.entries)["Preprocessing"] == 1.5
    # random baseline time is manifest-only, never a table row
    assert timings.total == pytest.approx(sum(dict(timings.entries).values()))


def test_run_pipeline_writes_expected_artifacts(tmp_path):
    cfg_path, _ = _write_config(tmp_path)
    manifest = run_pipeline(cfg_path)
    out = tmp_path / "out"
    for name in ("preprocessed.csv", "subset.csv", "plan.json", "recipe.json",
                 "runtime_model.json", "power_model.json", "surrogate_metrics.json",
                 "context_0.csv", "timing_table.csv", "manifest.json"):
        assert (out / name).exists(), name
    for stem in ("mobo", "sobo_runtime", "sobo_power", "random"):
        assert (out / "reports" / f"{stem}_ctx0.json").exists()
    assert (out / "reports" / "comparison_ctx0.csv").exists()
    assert (out / "reports" / "pareto_ctx0.svg").exists()
    # manifest completeness: every artifact hashed
    for rel in manifest["artifacts"]:
        assert (out / rel).exists()
    # every written report file appears in the manifest
    listed = set(manifest["artifacts"])
    for path in out.rglob("*"):
        if path.is_file() and path.name != "manifest.json":
            assert str(path.relative_to(out)) in listed, path


def test_timing_csv_matches_table9_layout(tmp_path):
    cfg_path, _ = _write_config(tmp_path)
    run_pipeline(cfg_path)
    lines = (tmp_path / "out" / "timing_table.csv").read_text().strip().splitlines()
    names = [line.split(",")[0] for line in lines[1:]]
    assert names == TIMING_ROW_SET + ["TOTAL"]
    seconds = [float(line.split(",")[1]) for line in lines[1:]]
    assert seconds[-1] == pytest.approx(sum(seconds[:-1]), rel=1e-4)


def test_pipeline_rerun_is_deterministic(tmp_path):
    cfg_path, _ = _write_config(tmp_path)
    m1 = run_pipeline(cfg_path, out_dir_override=str(tmp_path / "o1"))
    m2 = run_pipeline(cfg_path, out_dir_override=str(tmp_path / "o2"))
    assert manifest_comparable(m1) == manifest_comparable(m2)
    for p in sorted((tmp_path / "o1").rglob("*")):
        if not p.is_file() or p.name in ("manifest.json", "timing_table.csv"):
            continue
        q = tmp_path / "o2" / p.relative_to(tmp_path / "o1")
        assert p.read_bytes() == q.read_bytes(), p.name


def test_sampled_run_trains_on_fewer_rows(tmp_path):
    cfg_path, _ = _write_config(tmp_path)
    half = run_pipeline(cfg_path, overrides={"sampling_fraction": 0.5},
                        out_dir_override=str(tmp_path / "half"))
    full = run_pipeline(cfg_path, overrides={"sampling_fraction": 1.0},
                        out_dir_override=str(tmp_path / "full"))
    assert half["subset_rows"] < full["subset_rows"]


def test_surrogate_pair_reports_validation_metrics(tmp_path):
    spec = SyntheticSpec(n_jobs=150, n_noise_features=2, noise_sigma=1.0, seed=2)
    table, _ = generate(spec)
    processed, _ = preprocess_fit(table, DURATION_PAIRS)
    settings = PipelineSettings(
        input_path=Path("x"), out_dir=tmp_path, runtime_target="runtime_seconds",
        power_target="node_power", specs=[], n_estimators=10, max_depth=4,
        mask_epochs=60,
    )
    surr_r, surr_p, metrics = train_surrogate_pair(processed, settings, RunConfig(seed=0))
    assert metrics["n_train"] + metrics["n_val"] == 150
    for target in ("runtime_seconds", "node_power"):
        assert metrics["targets"][target]["mse"] > 0
        assert metrics["targets"][target]["mape"] > 0
    assert surr_r.target == "runtime_seconds"
    assert surr_p.target == "node_power"


def test_report_h1_direction_and_blocks(tmp_path):
    spec = SyntheticSpec(n_jobs=240, n_noise_features=6, noise_sigma=1.5, seed=4)
    table, truth = generate(spec)
    processed, _ = preprocess_fit(table, DURATION_PAIRS)
    settings = PipelineSettings(
        input_path=Path("x"), out_dir=tmp_path, runtime_target="runtime_seconds",
        power_target="node_power", specs=[], n_estimators=16, max_depth=5,
        mask_epochs=150, h1_seeds=2,
    )
    cfg = RunConfig(mobo_iterations=5, mc_samples=32, random_seeds=2, seed=0)
    result = report_h1(processed, settings, cfg, out_dir=tmp_path / "reports",
                       truth=truth, context_rows=[0], methods=("MOBO",))
    assert set(result["median_validation"]) == {"raw", "embedded"}
    assert (tmp_path / "reports" / "h1_report.json").exists()
    blocks = (tmp_path / "reports" / "h1_blocks.csv").read_text()
    assert "# block: raw features" in blocks
    assert "# block: embedded features" in blocks
    assert 0.0 <= result["downstream_median"]["embedded"]["MOBO"]["hv"] <= 1.0


def test_report_h1_all_method_columns(tmp_path):
    spec = SyntheticSpec(n_jobs=150, n_noise_features=1, noise_sigma=1.0, seed=6)
    table, truth = generate(spec)
    processed, _ = preprocess_fit(table, DURATION_PAIRS)
    settings = PipelineSettings(
        input_path=Path("x"), out_dir=tmp_path, runtime_target="runtime_seconds",
        power_target="node_power", specs=[], n_estimators=8, max_depth=4,
        mask_epochs=60, h1_seeds=1,
    )
    cfg = RunConfig(mobo_iterations=3, mc_samples=32, random_seeds=2, seed=0)
    result = report_h1(processed, settings, cfg, out_dir=tmp_path / "r",
                       truth=truth, context_rows=[0])
    header = (tmp_path / "r" / "h1_blocks.csv").read_text().splitlines()[2]
    assert header == "Metric,MOBO,SOBO (Runtime),SOBO (Power),Random"


def test_stage_input_fingerprint_guard(tmp_path):
    from hpcmobo.core import DataError
    from hpcmobo.pipeline import PipelineRun, parse_settings
    from hpcmobo.core import load_config_file, run_config_from_sections
    cfg_path, _ = _write_config(tmp_path)
    sections = load_config_file(cfg_path)
    cfg = run_config_from_sections(sections, None)
    settings = parse_settings(sections, tmp_path)
    run = PipelineRun(settings, cfg, sections)
    artifact = settings.out_dir / "a.txt"

    def produce():
        artifact.write_text("v1")
        return [artifact]

    run.stage("one", [], produce)
    artifact.write_text("tampered")
    with pytest.raises(DataError, match="fingerprint"):
        run.stage("two", [artifact], lambda: [])
