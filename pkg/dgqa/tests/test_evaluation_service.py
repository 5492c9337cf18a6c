import numpy as np
import pytest
from scipy.optimize import curve_fit

from dgqa.constants import PLCC_LOGISTIC_MAX_ITER
from dgqa.errors import InputValidationError, UndefinedMetricError
from dgqa.models import DomainDataset, DomainSample, RasterImage, TargetSet
from dgqa.services import evaluation_service
from dgqa.services.evaluation_service import (
    RESULT_COLUMNS, MetricPair, evaluate, fit_plcc, jaccard, logistic4, logistic4_jacobian, plcc,
    repeated_experiment, split_by_reference, split_dataset, split_target, srcc, subgroup_metrics,
)


class TestSRCC:
    def test_perfect_and_reversed(self):
        assert srcc([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
        assert srcc([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)

    def test_two_swaps(self):
        assert srcc([1, 2, 3, 4, 5], [2, 1, 4, 3, 5]) == pytest.approx(0.8)

    def test_ties_use_average_ranks(self):
        assert srcc([1, 1, 2], [1, 2, 3]) == pytest.approx(0.8660, abs=1e-4)

    def test_invariant_under_monotone_maps(self):
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=30), rng.normal(size=30)
        assert srcc(np.exp(x), y) == pytest.approx(srcc(x, y))

    def test_constant_input_is_undefined(self):
        with pytest.raises(UndefinedMetricError):
            srcc([1, 1, 1], [1, 2, 3])

    def test_size_validation(self):
        with pytest.raises(InputValidationError):
            srcc([1, 2], [1, 2])
        with pytest.raises(InputValidationError):
            srcc([1, 2, 3], [1, 2, 3, 4])


class TestPLCC:
    def test_raw(self):
        assert plcc([1, 2, 3], [1, 2, 4], mode="raw") == pytest.approx(0.9820, abs=1e-4)

    def test_logistic_on_linear_data(self):
        x = np.linspace(0, 10, 25)
        result = fit_plcc(x, 3.0 * x + 2.0)
        assert result.mode == "logistic"
        assert result.value > 0.999

    def test_logistic_on_saturating_data(self):
        x = np.linspace(-5, 5, 40)
        y = 100.0 / (1.0 + np.exp(-x)) + np.random.default_rng(0).normal(0.0, 1.0, size=40)
        assert plcc(x, y) > plcc(x, y, mode="raw")

    def test_logistic_jacobian_matches_differences(self):
        x = np.linspace(-3.0, 4.0, 15)
        beta = np.array([80.0, 5.0, 0.5, 1.7])
        analytic = logistic4_jacobian(x, *beta)
        for j in range(4):
            step = np.zeros(4)
            step[j] = 1e-6
            numeric = (logistic4(x, *(beta + step)) - logistic4(x, *(beta - step))) / 2e-6
            assert analytic[:, j] == pytest.approx(numeric, rel=1e-6, abs=1e-6)

    def test_fit_budget(self, monkeypatch):
        """The logistic fit gets exactly the configured number of evaluations"""
        seen = {}

        def recording_fit(*args, **kwargs):
            seen.update(kwargs)
            return curve_fit(*args, **kwargs)

        monkeypatch.setattr(evaluation_service, "curve_fit", recording_fit)
        fit_plcc(np.linspace(0, 10, 25), np.linspace(0, 10, 25) ** 2)
        assert seen["maxfev"] == PLCC_LOGISTIC_MAX_ITER == 200
        assert seen["jac"] is logistic4_jacobian

    def test_unknown_mode(self):
        with pytest.raises(InputValidationError):
            plcc([1, 2, 3], [1, 2, 3], mode="cubic")

    def test_evaluate(self):
        pair = evaluate([1, 2, 3, 4], [1, 3, 2, 4], plcc_mode="raw")
        assert isinstance(pair, MetricPair)
        assert pair.n == 4
        assert pair.srcc == pytest.approx(0.8)
        assert pair.plcc_mode == "raw"


class TestSubgroupsAndJaccard:
    def test_small_group_is_undefined(self):
        out = subgroup_metrics([1, 2, 3, 4, 5], [1, 2, 3, 5, 4], ["a", "a", "a", "b", "b"], plcc_mode="raw")
        assert out["a"].srcc == pytest.approx(1.0)
        assert out["b"] is None

    def test_jaccard(self):
        assert jaccard({1, 2, 3}, {2, 3, 4}) == pytest.approx(0.5)
        assert jaccard([], []) == 1.0
        assert jaccard({1}, set()) == 0.0


def _dataset(reference_ids):
    samples = tuple(
        DomainSample(sample_id=f"s{i}", image=RasterImage.constant(0.5), quality=float(i), reference_id=rid)
        for i, rid in enumerate(reference_ids)
    )
    return DomainDataset(1, samples)


class TestSplitByReference:
    def test_disjoint_and_complete(self):
        ids = [f"r{i}" for i in range(10)]
        plan = split_by_reference(ids, ratio=0.8, seed=1)
        assert len(plan.train_reference_ids) == 8
        assert not set(plan.train_reference_ids) & set(plan.val_reference_ids)
        assert set(plan.train_reference_ids) | set(plan.val_reference_ids) == set(ids)

    def test_seeded(self):
        ids = [f"r{i}" for i in range(10)]
        assert split_by_reference(ids, seed=3) == split_by_reference(ids, seed=3)

    def test_two_references_split_one_each(self):
        plan = split_by_reference(["a", "b"], ratio=0.8)
        assert len(plan.train_reference_ids) == len(plan.val_reference_ids) == 1

    def test_no_content_on_both_sides(self):
        dataset = _dataset(["a", "a", "b", "c", "c", "d"])
        train, val = split_dataset(dataset, split_by_reference(dataset, ratio=0.5, seed=0))
        assert not set(train.reference_ids) & set(val.reference_ids)
        assert len(train) + len(val) == len(dataset)

    def test_split_target(self):
        images = [RasterImage.constant(0.5)] * 4
        target = TargetSet("t", ("a", "b", "c", "d"), images, ("r0", "r0", "r1", "r1"), labels=[1, 2, 3, 4])
        first, second = split_target(target, split_by_reference(target, ratio=0.5, seed=0))
        assert len(first) == len(second) == 2
        assert set(first.reference_ids).isdisjoint(second.reference_ids)

    def test_validation(self):
        with pytest.raises(InputValidationError):
            split_by_reference(["a", "b"], ratio=1.0)
        with pytest.raises(InputValidationError):
            split_by_reference([])
        unreferenced = TargetSet("t", ("a",), (RasterImage.constant(0.5),))
        with pytest.raises(InputValidationError):
            split_by_reference(unreferenced)


class TestRepeatedExperiment:
    def test_medians_over_seeds(self):
        seen = []

        def experiment(seed):
            seen.append(seed)
            return MetricPair(srcc=seed / 10.0, plcc=seed / 20.0, n=10)

        result = repeated_experiment(experiment, n_repeats=5, base_seed=3)
        assert seen == [3, 4, 5, 6, 7]
        assert result.median.srcc == pytest.approx(0.5)
        assert result.median.plcc == pytest.approx(0.25)
        assert list(result.to_frame().columns) == RESULT_COLUMNS

    def test_failed_runs_are_counted(self):
        def experiment(seed):
            if seed == 1:
                raise UndefinedMetricError("constant predictions")
            return MetricPair(srcc=0.5, plcc=0.6, n=8)

        result = repeated_experiment(experiment, n_repeats=3, base_seed=0)
        assert result.failures["default"] == 1
        assert result.median.srcc == pytest.approx(0.5)
        assert sum(r.failed for r in result.records) == 1

    def test_per_setting_outcomes(self):
        def experiment(seed):
            return {"dgqa": MetricPair(0.9, 0.9, 5), "baseline": None if seed == 0 else MetricPair(0.7, 0.7, 5)}

        result = repeated_experiment(experiment, n_repeats=2, settings=("dgqa", "baseline"))
        assert result.failures == {"dgqa": 0, "baseline": 1}
        assert result.medians["baseline"].srcc == pytest.approx(0.7)
        assert result.summary()["dgqa"]["runs"] == 2

    def test_all_failed(self):
        def experiment(seed):
            raise UndefinedMetricError("always")

        assert repeated_experiment(experiment, n_repeats=2).median is None

    def test_threads_match_serial(self):
        def experiment(seed):
            return MetricPair(srcc=float(seed), plcc=float(seed), n=3)

        serial = repeated_experiment(experiment, n_repeats=4)
        threaded = repeated_experiment(experiment, n_repeats=4, max_workers=2)
        assert serial.to_frame().equals(threaded.to_frame())

    def test_needs_a_run(self):
        with pytest.raises(InputValidationError):
            repeated_experiment(lambda s: MetricPair(1, 1, 3), n_repeats=0)
