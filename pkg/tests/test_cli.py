"""End-to-end CLI tests: JSON output, file handling, exit codes."""

import csv
import json
import shutil
import subprocess

import numpy as np
import pytest

from transport_synth import cli
from transport_synth.data import write_study_csv
from transport_synth.datagen import GenerationConfig, generate_study, true_risk_difference
from transport_synth.dists import SeededRng

SMALL = GenerationConfig(n_target=300, n_trial=300)


@pytest.fixture(scope="module")
def study():
    return generate_study(SeededRng(88), SMALL)


@pytest.fixture(scope="module")
def study_csv(study, tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "study.csv"
    write_study_csv(study, str(path))
    return str(path)


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def run_json(capsys, *argv):
    code, out, err = run_cli(capsys, *argv)
    assert code == 0, err
    return json.loads(out)


# ---------------------------------------------------------------------------
# estimate: restriction methods and inputs


def test_estimate_restriction_json(capsys, study_csv):
    record = run_json(capsys, "estimate", "--method", "restrict-pop-g",
                      "--data", study_csv, "--outcome-design", "1,A,V")
    assert record["method"] == "restrict-pop-g"
    assert set(record) == {"method", "rd", "ci_lower", "ci_upper",
                           "risk1", "risk0", "se"}
    assert record["rd"] == pytest.approx(record["risk1"] - record["risk0"])
    assert record["ci_lower"] < record["rd"] < record["ci_upper"]


def test_estimate_two_file_matches_combined(capsys, study, study_csv, tmp_path):
    trial_path = tmp_path / "trial.csv"
    target_path = tmp_path / "target.csv"
    with open(trial_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["A", "Y", "V", "W"])
        for i in np.flatnonzero(study.trial):
            writer.writerow([int(study.a[i]), int(study.y[i]),
                             int(study.v[i]), int(study.w[i])])
    with open(target_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["V", "W"])
        for i in np.flatnonzero(study.target):
            writer.writerow([int(study.v[i]), int(study.w[i])])

    combined = run_json(capsys, "estimate", "--method", "restrict-cov-ipw",
                        "--data", study_csv, "--selection-design", "1,V")
    split = run_json(capsys, "estimate", "--method", "restrict-cov-ipw",
                     "--trial", str(trial_path), "--target", str(target_path),
                     "--selection-design", "1,V")
    assert split["rd"] == pytest.approx(combined["rd"], rel=1e-9)
    assert split["se"] == pytest.approx(combined["se"], rel=1e-9)


def test_estimate_output_file(capsys, study_csv, tmp_path):
    out = tmp_path / "est.json"
    code, stdout, _ = run_cli(capsys, "estimate", "--method", "restrict-pop-ipw",
                              "--data", study_csv, "--output", str(out))
    assert code == 0
    assert stdout == ""
    record = json.loads(out.read_text())
    assert record["method"] == "restrict-pop-ipw"


# ---------------------------------------------------------------------------
# estimate: synthesis


def test_estimate_synth_g_bundled_config(capsys, study_csv, tmp_path):
    draws_path = tmp_path / "draws.txt"
    argv = ("estimate", "--method", "synth-g", "--data", study_csv,
            "--outcome-design", "1,A,V", "--config", "gcomp_accurate",
            "--reps", "60", "--seed", "7", "--draws-out", str(draws_path))
    record = run_json(capsys, *argv)
    assert record["method"] == "synth-g"
    assert record["n_failed_reps"] == 0
    assert record["n_draws"] == 60
    draws = np.loadtxt(draws_path)
    assert draws.shape == (60,)
    assert record["ci_lower"] <= record["rd"] <= record["ci_upper"]

    # identical invocation reproduces both the summary and the draws
    again = run_json(capsys, *argv)
    assert again == record
    npt_draws = np.loadtxt(draws_path)
    np.testing.assert_array_equal(npt_draws, draws)


def test_estimate_synth_ipw_joint_config(capsys, study_csv, tmp_path):
    config_path = tmp_path / "joint.json"
    config_path.write_text(json.dumps({
        "joint": {
            "kind": "multivariate_normal",
            "mu": [0.05, -0.4],
            "cov": [[0.04, 0.01], [0.01, 0.09]],
        }
    }))
    record = run_json(capsys, "estimate", "--method", "synth-ipw",
                      "--data", study_csv, "--config", str(config_path),
                      "--reps", "40", "--seed", "5")
    assert record["method"] == "synth-ipw"
    assert record["n_draws"] == 40
    assert -1.0 <= record["rd"] <= 1.0


# ---------------------------------------------------------------------------
# estimate: bounds and diagnostics


def test_estimate_bounds(capsys, study, study_csv):
    record = run_json(capsys, "estimate", "--method", "bounds",
                      "--data", study_csv, "--outcome-design", "1,A,V")
    women_share = float(np.mean(study.w[study.target]))
    assert record["method"] == "bounds"
    assert record["width"] == pytest.approx(2.0 * women_share, abs=1e-12)
    assert record["lower"] < record["upper"]


def test_estimate_diagnose(capsys, study_csv):
    record = run_json(capsys, "estimate", "--method", "diagnose",
                      "--data", study_csv, "--strata", "W")
    assert record["strata"] == ["W"]
    assert record["n_gaps"] == 1
    gap = record["gaps"][0]
    assert gap["W"] == 1.0
    assert gap["trial_count"] == 0
    assert gap["target_count"] > 0


# ---------------------------------------------------------------------------
# truth


def test_truth_matches_library_call(capsys):
    record = run_json(capsys, "truth", "--n", "20000", "--seed", "5")
    expected = true_risk_difference(20000, SeededRng(5).child(0))
    assert record == {"risk_difference": expected, "n": 20000, "seed": 5}
    assert abs(record["risk_difference"] - 0.2167) < 0.05


def test_truth_output_file(capsys, tmp_path):
    out = tmp_path / "truth.json"
    code, stdout, _ = run_cli(capsys, "truth", "--n", "5000", "--seed", "2",
                              "--output", str(out))
    assert code == 0 and stdout == ""
    assert set(json.loads(out.read_text())) == {"risk_difference", "n", "seed"}


# ---------------------------------------------------------------------------
# simulate


def test_simulate_tiny(capsys, tmp_path):
    csv_path = tmp_path / "rows.csv"
    table_path = tmp_path / "table.txt"
    code, stdout, stderr = run_cli(
        capsys, "simulate", "--iterations", "2", "--reps", "20", "--seed", "11",
        "--n-target", "120", "--n-trial", "120", "--n-evidence", "300",
        "--truth-n", "20000", "--quiet",
        "--output-csv", str(csv_path), "--output-table", str(table_path),
    )
    assert code == 0
    assert stderr == ""  # --quiet suppresses progress
    assert "True target risk difference:" in stdout
    assert table_path.read_text() == stdout
    with open(csv_path, newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 14
    assert rows[0]["method"] == "restrict-pop-g"
    assert rows[-1]["method"] == "synth-ipw"
    assert {row["scenario"] for row in rows[4:9]} == {
        "strict_null", "uncertain_null", "accurate", "inaccurate",
        "accurate_with_covariance",
    }


def test_simulate_progress_on_stderr(capsys):
    code, _, stderr = run_cli(
        capsys, "simulate", "--iterations", "2", "--reps", "10", "--seed", "11",
        "--n-target", "120", "--n-trial", "120", "--n-evidence", "300",
        "--truth-n", "5000", "--scenario", "strict_null",
    )
    assert code == 0
    assert "2/2 iterations" in stderr


# ---------------------------------------------------------------------------
# failure modes and exit codes


def test_usage_error_exits_1(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["estimate", "--data", "x.csv"])  # --method is required
    assert exc.value.code == 1


def test_unknown_method_exits_1(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["estimate", "--method", "magic", "--data", "x.csv"])
    assert exc.value.code == 1


def test_missing_config_exits_1(capsys, study_csv):
    code, _, err = run_cli(capsys, "estimate", "--method", "synth-g",
                           "--data", study_csv)
    assert code == 1
    assert "--config is required" in err


def test_unknown_bundled_config_exits_1(capsys, study_csv):
    code, _, err = run_cli(capsys, "estimate", "--method", "synth-g",
                           "--data", study_csv, "--config", "no_such_config")
    assert code == 1
    assert "bundled configs:" in err
    assert "gcomp_accurate" in err


def test_conflicting_inputs_exit_1(capsys, study_csv):
    code, _, err = run_cli(capsys, "estimate", "--method", "restrict-pop-g",
                           "--data", study_csv, "--trial", study_csv)
    assert code == 1
    assert "not both" in err

    code, _, err = run_cli(capsys, "estimate", "--method", "restrict-pop-g")
    assert code == 1
    assert "provide --data" in err


def test_missing_file_exits_2(capsys, tmp_path):
    code, _, err = run_cli(capsys, "estimate", "--method", "restrict-pop-g",
                           "--data", str(tmp_path / "absent.csv"))
    assert code == 2
    assert "i/o error" in err


def test_malformed_csv_exits_2(capsys, tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("R,A,Y,V,W\n2,0,zero,25,0\n")
    code, _, err = run_cli(capsys, "estimate", "--method", "restrict-pop-g",
                           "--data", str(path))
    assert code == 2
    assert "data error" in err and "line 2" in err


def test_estimation_failure_exits_3(capsys, tmp_path):
    # trial outcome is a step in age, so the logistic fit separates
    path = tmp_path / "separated.csv"
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["R", "A", "Y", "V", "W"])
        rng = np.random.default_rng(3)
        for _ in range(80):
            v = int(rng.integers(20, 31))
            writer.writerow([2, int(rng.integers(0, 2)), int(v > 25), v, 0])
        for _ in range(80):
            writer.writerow([1, "", "", int(rng.integers(18, 31)), 0])
    code, _, err = run_cli(capsys, "estimate", "--method", "restrict-pop-g",
                           "--data", str(path), "--outcome-design", "1,A,V")
    assert code == 3
    assert "estimation error" in err


def test_bad_design_term_exits_1(capsys, study_csv):
    code, _, err = run_cli(capsys, "estimate", "--method", "restrict-pop-g",
                           "--data", study_csv, "--outcome-design", "1,A,V**2")
    assert code == 1
    assert "cannot parse design term" in err


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0
    assert "transport-synth" in capsys.readouterr().out


def test_installed_entry_point(study_csv):
    exe = shutil.which("transport-synth")
    assert exe is not None, "entry point should be installed with the package"
    proc = subprocess.run(
        [exe, "estimate", "--method", "restrict-pop-g", "--data", study_csv,
         "--outcome-design", "1,A,V"],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    record = json.loads(proc.stdout)
    assert record["method"] == "restrict-pop-g"
