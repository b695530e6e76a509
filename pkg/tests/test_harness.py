import json
import math

import jsonschema
import numpy as np
import pytest

from labelshift.cli import main
from labelshift.data import LabeledLogitSet
from labelshift.errors import ConfigError, DatasetError
from labelshift.harness import (
    COLUMNS,
    RECORDS_SCHEMA,
    ExperimentConfig,
    TrialRecord,
    load_dataset,
    load_experiment_data,
    load_logits,
    read_records_csv,
    read_records_json,
    run_experiment,
    run_trial,
    save_dataset,
    write_report,
)
from labelshift.harness.report import compare_methods, summarize_markdown


def small_config(**overrides):
    doc = {
        "dataset": {"synthetic": {"num_classes": 3, "separation": 2.0,
                                  "true_temperature": 2.0, "true_biases": [0.5, 0.0, -0.5],
                                  "seed": 3, "n_valid": 600, "n_pool": 600}},
        "calibration_families": ["None", "BCTS"],
        "estimators": ["EM", "BBSL-soft"],
        "shift_grid": [{"kind": "dirichlet", "alpha": 1.0},
                       {"kind": "tweak_one", "class_index": 0, "rho": 0.6}],
        "n_grid": [100, 200],
        "trials": 2,
        "master_seed": 5,
    }
    doc.update(overrides)
    return ExperimentConfig.from_dict(doc)


def sample_record(**overrides):
    base = dict(
        trial_id=0, shift="alpha=1", shift_kind="dirichlet", shift_param=1.0, n=100,
        calibration="BCTS", estimator="EM", source_prior_mode="MeanPrediction",
        mse=0.125, mse_nominal=0.5, delta_acc=2.5, nll_unshifted=0.7, ece_unshifted=0.01,
        js_bias=1e-4, em_iterations=12, true_weights=(1.0, 0.5), nominal_weights=(0.9, 1.1),
        estimated_weights=(1.1, 0.4), flags=(),
    )
    base.update(overrides)
    return TrialRecord(**base)


class TestDatasetIo:
    def test_minimal_csv(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("label,logit_0,logit_1\n0,1.5,-0.5\n")
        data = load_dataset(path)
        assert data.n == 1 and data.num_classes == 2
        np.testing.assert_array_equal(data.logits, [[1.5, -0.5]])

    def test_label_out_of_range_names_row(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("label,logit_0,logit_1\n0,1,2\n7,1.5,-0.5\n")
        with pytest.raises(DatasetError, match="row 1") as info:
            load_dataset(path)
        assert info.value.row == 1

    def test_empty_file(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("")
        with pytest.raises(DatasetError, match="empty"):
            load_dataset(path)

    def test_bad_number_names_line(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("label,logit_0,logit_1\n0,1,2\n1,x,2\n")
        with pytest.raises(DatasetError, match="line 3"):
            load_dataset(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,a,b\n0,1,2\n")
        with pytest.raises(DatasetError, match="label"):
            load_dataset(path)

    def test_non_finite_rejected(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("label,logit_0,logit_1\n0,nan,2\n")
        with pytest.raises(DatasetError, match="non-finite"):
            load_dataset(path)

    @pytest.mark.parametrize("name", ["d.csv", "d.jsonl"])
    def test_round_trip(self, tmp_path, rng, name):
        data = LabeledLogitSet(rng.normal(size=(20, 3)), rng.integers(0, 3, 20))
        save_dataset(data, tmp_path / name)
        back = load_dataset(tmp_path / name)
        np.testing.assert_array_equal(back.logits, data.logits)
        np.testing.assert_array_equal(back.labels, data.labels)

    def test_unlabelled_logits(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("logit_0,logit_1\n1,2\n3,4\n")
        logits, labels = load_logits(path)
        assert labels is None and logits.shape == (2, 2)
        with pytest.raises(DatasetError):
            load_dataset(path)


class TestRecords:
    def test_csv_round_trip(self, tmp_path):
        records = [
            sample_record(),
            sample_record(mse=None, delta_acc=None, estimated_weights=None,
                          flags=("estimator_failed: SingularMatrixError", "x")),
            sample_record(true_weights=(math.nan, 1.0), mse=None, em_iterations=None),
        ]
        write_report(records, tmp_path / "r.csv", "csv")
        back = read_records_csv(tmp_path / "r.csv")
        assert len(back) == 3
        for a, b in zip(records, back):
            for name in COLUMNS:
                va, vb = getattr(a, name), getattr(b, name)
                if isinstance(va, tuple) and va and isinstance(va[0], float):
                    np.testing.assert_array_equal(np.array(va), np.array(vb))
                else:
                    assert va == vb, name

    def test_json_round_trip_and_schema(self, tmp_path):
        records = [sample_record(), sample_record(mse=None, true_weights=(math.inf, 0.0))]
        write_report(records, tmp_path / "r.json", "json")
        doc = json.loads((tmp_path / "r.json").read_text())
        jsonschema.validate(doc, RECORDS_SCHEMA)
        back = read_records_json(tmp_path / "r.json")
        assert back[0] == records[0]
        assert back[1].true_weights[0] == math.inf

    def test_empty_records_rejected(self, tmp_path):
        with pytest.raises(Exception):
            write_report([], tmp_path / "r.csv")


class TestConfig:
    def test_unknown_field(self):
        with pytest.raises(ConfigError, match="unknown"):
            small_config(colour="blue")

    def test_bad_values(self):
        with pytest.raises(ConfigError):
            small_config(trials=0)
        with pytest.raises(ConfigError):
            small_config(estimators=["MLE"])
        with pytest.raises(ConfigError):
            small_config(shift_grid=[{"kind": "dirichlet", "alpha": -1}])

    def test_round_trip(self):
        cfg = small_config()
        assert ExperimentConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()

    def test_relative_paths(self, tmp_path):
        (tmp_path / "cfg.json").write_text(json.dumps({
            "dataset": {"path": "data.csv"}, "shift_grid": [{"kind": "dirichlet", "alpha": 1}],
            "n_grid": [10]}))
        cfg = ExperimentConfig.load(tmp_path / "cfg.json")
        assert cfg.dataset.path == str(tmp_path / "data.csv")

    def test_invalid_json(self, tmp_path):
        (tmp_path / "cfg.json").write_text("{not json")
        with pytest.raises(ConfigError, match="line 1"):
            ExperimentConfig.load(tmp_path / "cfg.json")


class TestTrials:
    def test_deterministic(self):
        cfg = small_config()
        data = load_experiment_data(cfg)
        assert run_trial(cfg, 1, data) == run_trial(cfg, 1, data)

    def test_trials_independent_of_count(self):
        few = run_experiment(small_config(trials=1)).records
        many = run_experiment(small_config(trials=3)).records
        assert few == [r for r in many if r.trial_id == 0]

    def test_record_fields(self):
        cfg = small_config()
        records = run_trial(cfg, 0)
        assert len(records) == 2 * 2 * 2 * 2
        for r in records:
            assert r.mse is not None and r.mse >= 0
            assert len(r.estimated_weights) == 3
            if r.estimator == "EM":
                assert r.delta_acc is not None and r.em_iterations >= 1
            else:
                assert r.delta_acc is None

    def test_no_shift_perfect_classifier(self, tmp_path):
        # with separable logits EM recovers realised label ratios exactly
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 3, 400)
        logits = 30.0 * np.eye(3)[labels] + rng.normal(scale=0.1, size=(400, 3))
        save_dataset(LabeledLogitSet(logits, labels), tmp_path / "d.csv")
        freq = np.bincount(labels, minlength=3) / 400
        cfg = ExperimentConfig.from_dict({
            "dataset": {"path": str(tmp_path / "d.csv")},
            "calibration_families": ["None"], "estimators": ["EM"],
            "shift_grid": [{"kind": "explicit", "priors": freq.tolist()}],
            "n_grid": [100], "trials": 3})
        for r in run_experiment(cfg).records:
            assert r.mse <= 1e-6

    def test_sample_size_too_large(self):
        with pytest.raises(ConfigError, match="exceed"):
            run_experiment(small_config(n_grid=[10_000]))

    def test_parallel_matches_serial(self):
        cfg = small_config(n_grid=[100], shift_grid=[{"kind": "dirichlet", "alpha": 1}])
        assert run_experiment(cfg, jobs=2).records == run_experiment(cfg, jobs=1).records

    def test_moment_estimator_adaptation_flag(self):
        records = run_trial(small_config(adapt_moment_estimators=True), 0)
        assert all(r.delta_acc is not None for r in records)


class TestReport:
    def test_identical_methods_both_bold(self):
        scores = np.tile([[0.1], [0.2], [0.3]], (1, 2))
        _, ranks, bold, _ = compare_methods(scores)
        assert bold.tolist() == [True, True]
        np.testing.assert_allclose(ranks, [0.5, 0.5])

    def test_clear_winner(self):
        rng = np.random.default_rng(1)
        a = rng.random(30)
        scores = np.stack([a, a + 1.0], axis=1)
        medians, ranks, bold, best = compare_methods(scores)
        assert best == 0 and bold.tolist() == [True, False]
        np.testing.assert_allclose(ranks, [0, 1])

    def test_markdown_layout(self):
        records = run_experiment(small_config()).records
        text = summarize_markdown(records)
        assert "| EM | BCTS |" in text and "alpha=1, n=100" in text
        assert "**" in text and "## Calibration quality" in text


class TestCli:
    def test_pipeline(self, tmp_path, capsys):
        out = tmp_path / "sim"
        assert main(["simulate", "--classes", "3", "--temperature", "2", "--bias-scale", "0.5",
                     "--n-valid", "500", "--n-pool", "500", "--alpha", "1",
                     "--out", str(out)]) == 0
        assert (out / "target.csv").exists()
        assert main(["calibrate", "--valid", str(out / "valid.csv"), "--family", "BCTS",
                     "--out", str(tmp_path / "cal")]) == 0
        params = tmp_path / "cal" / "calibration.json"
        assert main(["estimate", "--valid", str(out / "valid.csv"), "--target",
                     str(out / "target.csv"), "--params", str(params)]) == 0
        doc = json.loads(capsys.readouterr().out)
        truth = json.loads((out / "task.json").read_text())["target_priors"]
        assert np.abs(np.array(doc["target_priors"]) - truth).sum() < 0.2
        assert main(["adapt", "--input", str(out / "target.csv"), "--params", str(params),
                     "--weights", ",".join(map(str, doc["weights"])),
                     "--out", str(tmp_path / "ad")]) == 0
        assert (tmp_path / "ad" / "adapted.csv").read_text().startswith("label,prob_0")

    def test_validation_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("label,logit_0,logit_1\n7,1.5,-0.5\n")
        assert main(["calibrate", "--valid", str(bad), "--family", "TS"]) == 2
        assert "row 0" in capsys.readouterr().err

    def test_missing_config_exit_code(self):
        assert main(["experiment"]) == 2

    def test_numerical_error_exit_code(self, tmp_path):
        # every validation row predicts class 0, so the hard confusion matrix is singular
        path = tmp_path / "v.csv"
        path.write_text("label,logit_0,logit_1\n0,5,0\n1,4,0\n0,6,0\n1,3,0\n")
        assert main(["estimate", "--valid", str(path), "--target", str(path),
                     "--family", "None", "--estimator", "BBSL-hard"]) == 3

    def test_argparse_error_exit_code(self):
        with pytest.raises(SystemExit) as info:
            main(["calibrate", "--family", "nope", "--valid", "x"])
        assert info.value.code == 2

    def test_experiment_outputs_identical(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(small_config(trials=1).to_dict()))
        for name in ("a", "b"):
            assert main(["--config", str(cfg), "--seed", "11", "experiment",
                         "--out", str(tmp_path / name)]) == 0
        a = (tmp_path / "a" / "records.csv").read_bytes()
        assert a == (tmp_path / "b" / "records.csv").read_bytes()
        assert (tmp_path / "a" / "summary.md").exists()
        assert (tmp_path / "a" / "records.json").exists()
