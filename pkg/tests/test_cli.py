import json

from hpcmobo.cli import main


def _synth(tmp_path, jobs=200, seed=3):
    rc = main([
        "synthgen", "--jobs", str(jobs), "--noise-features", "2", "--seed", str(seed),
        "--nodes-max", "32", "--out", str(tmp_path / "data.csv"),
        "--truth", str(tmp_path / "truth.json"),
        "--emit-config", str(tmp_path / "config.ini"),
    ])
    assert rc == 0
    # tighten budgets for test speed
    text = (tmp_path / "config.ini").read_text()
    text = text.replace("mobo_iterations = 40", "mobo_iterations = 5")
    text = text.replace("n_estimators = 40", "n_estimators = 10")
    (tmp_path / "config.ini").write_text(text)
    return tmp_path / "config.ini"


def test_synthgen_writes_dataset_truth_and_config(tmp_path):
    _synth(tmp_path)
    assert (tmp_path / "data.csv").exists()
    assert (tmp_path / "truth.json").exists()
    assert (tmp_path / "config.ini").exists()
    truth = json.loads((tmp_path / "truth.json").read_text())
    assert len(truth["jobs"]) == 200


def test_full_run_and_exit_code(tmp_path):
    cfg = _synth(tmp_path)
    rc = main(["run", "--config", str(cfg)])
    assert rc == 0
    assert (tmp_path / "out" / "manifest.json").exists()
    assert (tmp_path / "out" / "reports" / "comparison_aggregate.csv").exists()


def test_sample_subcommand_writes_plan(tmp_path):
    cfg = _synth(tmp_path)
    rc = main(["preprocess", "--config", str(cfg)])
    assert rc == 0
    rc = main([
        "sample", "--config", str(cfg), "--fraction", "0.5", "--p-min", "0.01",
        "--seed", "7", "--in", str(tmp_path / "out" / "preprocessed.csv"),
        "--out", str(tmp_path / "out" / "half.csv"),
        "--plan", str(tmp_path / "out" / "plan_half.json"),
    ])
    assert rc == 0
    plan = json.loads((tmp_path / "out" / "plan_half.json").read_text())
    assert {"lambda", "expected_rate", "saturated_fraction", "mask"} <= set(plan)
    assert abs(plan["expected_rate"] - 0.5) <= 1e-3


def test_embed_and_train_subcommands(tmp_path):
    cfg = _synth(tmp_path)
    assert main(["preprocess", "--config", str(cfg)]) == 0
    rc = main([
        "embed", "--config", str(cfg), "--in", str(tmp_path / "out" / "preprocessed.csv"),
        "--target", "runtime_seconds", "--epochs", "50",
        "--out", str(tmp_path / "out" / "mask.json"),
    ])
    assert rc == 0
    mask = json.loads((tmp_path / "out" / "mask.json").read_text())
    assert mask["d"] == len(mask["theta"])
    rc = main(["train", "--config", str(cfg),
               "--in", str(tmp_path / "out" / "preprocessed.csv")])
    assert rc == 0
    assert (tmp_path / "out" / "runtime_model.json").exists()
    assert (tmp_path / "out" / "power_model.json").exists()


def test_optimize_subcommand_from_artifacts(tmp_path):
    cfg = _synth(tmp_path)
    assert main(["run", "--config", str(cfg)]) == 0
    out = tmp_path / "out"
    rc = main([
        "optimize", "--config", str(cfg), "--method", "mobo", "--iters", "4",
        "--seed", "2", "--surrogates", str(out),
        "--job-context", str(out / "context_0.csv"),
        "--out", str(out / "opt_report.json"),
    ])
    assert rc == 0
    payload = json.loads((out / "opt_report.json").read_text())
    assert payload["method"] == "MOBO"
    assert payload["config"]["mobo_iterations"] == 4
    assert payload["config"]["seed"] == 2
    assert "wall_clock_seconds" in payload
    assert len(payload["history"]) == 4
    assert payload["hv"] > 0


def test_report_h1_subcommand(tmp_path):
    cfg = _synth(tmp_path, jobs=120)
    text = (tmp_path / "config.ini").read_text()
    text = text.replace("n_estimators = 10", "n_estimators = 6\nh1_seeds = 1\nmask_epochs = 40")
    text = text.replace("mobo_iterations = 5", "mobo_iterations = 2")
    (tmp_path / "config.ini").write_text(text)
    assert main(["preprocess", "--config", str(cfg)]) == 0
    rc = main(["report", "--config", str(cfg), "--h1",
               "--in", str(tmp_path / "out" / "preprocessed.csv")])
    assert rc == 0
    payload = json.loads((tmp_path / "out" / "reports" / "h1_report.json").read_text())
    assert set(payload["median_validation"]) == {"raw", "embedded"}
    assert (tmp_path / "out" / "reports" / "h1_blocks.csv").exists()


def test_report_subcommand_checks_method_files(tmp_path):
    cfg = _synth(tmp_path)
    assert main(["run", "--config", str(cfg)]) == 0
    assert main(["report", "--config", str(cfg)]) == 0
    (tmp_path / "out" / "reports" / "mobo_ctx0.json").unlink()
    assert main(["report", "--config", str(cfg)]) == 1


def test_run_config_cli_overrides(tmp_path):
    cfg = _synth(tmp_path)
    rc = main(["run", "--config", str(cfg), "--mobo-iterations", "3",
               "--mc-samples", "16", "--random-seeds", "2",
               "--sampling-fraction", "0.9", "--seed", "11"])
    assert rc == 0
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    run_cfg = manifest["run_config"]
    assert run_cfg["mobo_iterations"] == 3
    assert run_cfg["mc_samples"] == 16
    assert run_cfg["random_seeds"] == 2
    assert run_cfg["sampling_fraction"] == 0.9
    assert run_cfg["seed"] == 11


def test_config_error_exit_code(tmp_path):
    cfg = _synth(tmp_path)
    text = (tmp_path / "config.ini").read_text().replace(
        "sampling_fraction = 0.75", "sampling_fraction = 0")
    (tmp_path / "config.ini").write_text(text)
    assert main(["run", "--config", str(cfg)]) == 2


def test_data_error_exit_code(tmp_path):
    cfg = _synth(tmp_path)
    (tmp_path / "data.csv").unlink()
    assert main(["run", "--config", str(cfg)]) == 3


def test_missing_config_is_config_error(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.ini")]) == 2
