"""Simulation harness: scenario wiring, metrics, determinism, reporting."""

import numpy as np
import numpy.testing as npt
import pytest

from transport_synth import simstudy
from transport_synth.datagen import GenerationConfig, generate_evidence_trial
from transport_synth.dists import (
    MultivariateNormal,
    Normal,
    PointMass,
    SeededRng,
    Trapezoid,
)
from transport_synth.simstudy import (
    RESTRICTION_METHODS,
    SCENARIO_ORDER,
    SimulationConfig,
    SimulationResult,
    SimulationResultRow,
    compute_metrics,
    render_table,
    result_records,
    run_simulation,
    scenario_shift_kwargs,
)

TINY_GENERATION = GenerationConfig(n_target=150, n_trial=150, n_evidence=400)


def tiny_config(**overrides):
    defaults = dict(
        iterations=3, mc_reps=40, seed=91, n_truth=50_000,
        generation=TINY_GENERATION,
    )
    defaults.update(overrides)
    return SimulationConfig(**defaults)


@pytest.fixture(scope="module")
def tiny_result():
    return run_simulation(tiny_config())


# ---------------------------------------------------------------------------
# scenario wiring


@pytest.fixture(scope="module")
def evidence():
    return generate_evidence_trial(SeededRng(44), TINY_GENERATION)


def test_scenario_strict_null(evidence):
    kwargs = scenario_shift_kwargs("strict_null", evidence, "g")
    assert kwargs == {"b0": PointMass(0.0), "b1": PointMass(0.0)}


def test_scenario_uncertain_null(evidence):
    kwargs = scenario_shift_kwargs("uncertain_null", evidence, "ipw")
    assert kwargs["b0"] == Trapezoid(-2.0, -1.0, 1.0, 2.0)
    assert kwargs["b1"] == kwargs["b0"]


def test_scenario_accurate_reads_the_matching_evidence(evidence):
    for flavor, mean, cov in (
        ("g", evidence.gcomp_mean, evidence.gcomp_cov),
        ("ipw", evidence.ipw_mean, evidence.ipw_cov),
    ):
        kwargs = scenario_shift_kwargs("accurate", evidence, flavor)
        assert kwargs["b0"] == Normal(float(mean[0]), float(np.sqrt(cov[0, 0])))
        assert kwargs["b1"] == Normal(float(mean[1]), float(np.sqrt(cov[1, 1])))


def test_scenario_inaccurate_flips_means_keeps_spread(evidence):
    accurate = scenario_shift_kwargs("accurate", evidence, "g")
    inaccurate = scenario_shift_kwargs("inaccurate", evidence, "g")
    assert inaccurate["b0"].mu == -accurate["b0"].mu
    assert inaccurate["b1"].mu == -accurate["b1"].mu
    assert inaccurate["b0"].sigma == accurate["b0"].sigma
    assert inaccurate["b1"].sigma == accurate["b1"].sigma


def test_scenario_with_covariance_is_joint(evidence):
    kwargs = scenario_shift_kwargs("accurate_with_covariance", evidence, "ipw")
    joint = kwargs["joint"]
    assert isinstance(joint, MultivariateNormal)
    npt.assert_array_equal(joint.mean, evidence.ipw_mean)
    npt.assert_array_equal(joint.cov, evidence.ipw_cov)


def test_scenario_errors(evidence):
    with pytest.raises(ValueError, match="flavor"):
        scenario_shift_kwargs("accurate", evidence, "both")
    with pytest.raises(ValueError, match="unknown scenario"):
        scenario_shift_kwargs("exact", evidence, "g")


# ---------------------------------------------------------------------------
# config validation


def test_config_validation():
    with pytest.raises(ValueError):
        SimulationConfig(iterations=0)
    with pytest.raises(ValueError):
        SimulationConfig(mc_reps=0)
    with pytest.raises(ValueError):
        SimulationConfig(n_truth=0)
    with pytest.raises(ValueError, match="unknown scenario"):
        SimulationConfig(scenarios=("strict_null", "mystery"))


# ---------------------------------------------------------------------------
# metrics


def test_compute_metrics_hand_values():
    rd = np.array([0.1, 0.3, 0.5])
    lo = np.array([0.0, 0.1, 0.3])
    hi = np.array([0.4, 0.5, 0.6])
    bias, width, coverage = compute_metrics(rd, lo, hi, truth=0.25)
    assert bias == pytest.approx(0.3 - 0.25)
    assert width == pytest.approx((0.4 + 0.4 + 0.3) / 3.0)
    assert coverage == pytest.approx(2.0 / 3.0)  # third interval sits above 0.25


def test_compute_metrics_empty_is_nan():
    bias, width, coverage = compute_metrics(
        np.array([]), np.array([]), np.array([]), truth=0.2
    )
    assert np.isnan(bias) and np.isnan(width) and np.isnan(coverage)


# ---------------------------------------------------------------------------
# full runs (tiny scale)


def test_run_produces_fourteen_ordered_rows(tiny_result):
    keys = [(row.method, row.scenario) for row in tiny_result.rows]
    expected = [(m, "") for m in RESTRICTION_METHODS]
    expected += [("synth-g", s) for s in SCENARIO_ORDER]
    expected += [("synth-ipw", s) for s in SCENARIO_ORDER]
    assert keys == expected
    assert tiny_result.iterations == 3
    for row in tiny_result.rows:
        assert row.n_iterations + row.n_failed == 3


def test_run_rows_have_finite_metrics(tiny_result):
    for row in tiny_result.rows:
        assert row.n_failed == 0, row
        assert np.isfinite(row.bias)
        assert np.isfinite(row.ci_width) and row.ci_width > 0
        assert 0.0 <= row.coverage <= 1.0
        assert not row.flagged


def test_run_is_deterministic(tiny_result):
    again = run_simulation(tiny_config())
    assert again.truth == tiny_result.truth
    for a, b in zip(again.rows, tiny_result.rows):
        assert a == b


def test_run_matches_across_worker_counts(tiny_result):
    parallel = run_simulation(tiny_config(), workers=2)
    assert parallel.truth == tiny_result.truth
    for a, b in zip(parallel.rows, tiny_result.rows):
        assert a == b


def test_scenario_subset_reproduces_full_run_rows(tiny_result):
    subset = run_simulation(tiny_config(scenarios=("accurate",)))
    assert len(subset.rows) == 4 + 2
    full = {(row.method, row.scenario): row for row in tiny_result.rows}
    for row in subset.rows:
        assert row == full[(row.method, row.scenario)]


def test_progress_callback_sees_every_iteration():
    seen = []
    run_simulation(tiny_config(), progress=lambda done, total: seen.append((done, total)))
    assert seen == [(1, 3), (2, 3), (3, 3)]


def test_failures_are_counted_and_flagged(monkeypatch):
    def always_fails(*args, **kwargs):
        raise simstudy.mest.MEstimationError("forced failure")

    monkeypatch.setattr(simstudy, "restrict_population_ipw", always_fails)
    result = run_simulation(tiny_config())
    by_key = {(row.method, row.scenario): row for row in result.rows}
    broken = by_key[("restrict-pop-ipw", "")]
    assert broken.n_failed == 3 and broken.n_iterations == 0
    assert broken.flagged
    assert np.isnan(broken.bias)
    # other rows unaffected
    assert by_key[("restrict-pop-g", "")].n_failed == 0


# ---------------------------------------------------------------------------
# reporting


def test_result_records_shape(tiny_result):
    records = result_records(tiny_result)
    assert len(records) == 14
    first = records[0]
    assert first["method"] == "restrict-pop-g"
    assert set(first) >= {"method", "scenario", "bias", "ci_width", "coverage",
                          "n_iterations", "n_failed"}


def test_row_labels():
    row = SimulationResultRow(
        method="synth-g", scenario="uncertain_null", bias=0.0, ci_width=0.1,
        coverage=1.0, n_iterations=5, n_failed=0, flagged=False,
    )
    assert row.label() == "Synthesis, g-computation: Uncertain null"
    bare = SimulationResultRow(
        method="restrict-cov-ipw", scenario="", bias=0.0, ci_width=0.1,
        coverage=1.0, n_iterations=5, n_failed=0, flagged=False,
    )
    assert bare.label() == "Restrict covariates, weighted"


def test_render_table_contents(tiny_result):
    text = render_table(tiny_result)
    assert f"True target risk difference: {tiny_result.truth:.4f}" in text
    assert "Restrict population, g-computation" in text
    assert "Synthesis, weighted: Accurate w/ covariance" in text
    assert "*" not in text  # nothing flagged in a clean run


def test_render_table_marks_flagged_rows():
    row = SimulationResultRow(
        method="synth-g", scenario="accurate", bias=0.01, ci_width=0.2,
        coverage=0.9, n_iterations=80, n_failed=20, flagged=True,
    )
    result = SimulationResult(truth=0.2167, rows=(row,), iterations=100)
    text = render_table(result)
    assert "20*" in text
    assert "* more than 5% of iterations failed for this row" in text
