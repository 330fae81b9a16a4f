"""Levenshtein similarity, cross-validation drivers, confusion matrices."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventabs.abstraction import AbstractionConfig
from eventabs.evaluation import (
    AbstractionReport,
    ConfusionMatrix,
    EvalConfig,
    collapse_runs,
    confusion_restricted,
    k_fold,
    leave_one_trace_out,
    levenshtein_distance,
    levenshtein_similarity,
)
from eventabs.features import CatalogConfig
from eventabs.owlqn import OwlqnConfig

from factories import make_log, sequence_trace
from oracles import recursive_edit_distance

FAST = EvalConfig(
    abstraction=AbstractionConfig(
        catalog=CatalogConfig(ngram_sizes=(1,), time_views=(), gmm_max_components=1),
        optimizer=OwlqnConfig(max_iterations=40),
    )
)

SYMBOLS = st.lists(st.sampled_from("abcd"), max_size=8).map(tuple)


class TestLevenshtein:
    def test_identical(self):
        assert levenshtein_similarity(["A", "B"], ["A", "B"]) == 1.0

    def test_fully_different(self):
        assert levenshtein_similarity(["A", "B", "C"], ["X", "Y", "Z"]) == 0.0

    def test_kitten_sitting(self):
        assert levenshtein_distance(tuple("kitten"), tuple("sitting")) == 3
        assert levenshtein_similarity(tuple("kitten"), tuple("sitting")) == pytest.approx(
            1 - 3 / 7
        )

    def test_both_empty(self):
        assert levenshtein_similarity([], []) == 1.0

    def test_one_empty(self):
        assert levenshtein_similarity([], ["A", "B"]) == 0.0

    @given(SYMBOLS, SYMBOLS)
    @settings(max_examples=100, deadline=None)
    def test_matches_recursive_oracle(self, a, b):
        assert levenshtein_distance(a, b) == recursive_edit_distance(a, b)

    @given(SYMBOLS, SYMBOLS)
    @settings(max_examples=60, deadline=None)
    def test_symmetry(self, a, b):
        assert levenshtein_similarity(a, b) == levenshtein_similarity(b, a)

    @given(SYMBOLS, SYMBOLS)
    @settings(max_examples=60, deadline=None)
    def test_identity_of_indiscernibles(self, a, b):
        sim = levenshtein_similarity(a, b)
        if a == b:
            assert sim == 1.0
        else:
            assert sim < 1.0

    @given(SYMBOLS, SYMBOLS, SYMBOLS)
    @settings(max_examples=100, deadline=None)
    def test_triangle_inequality(self, a, b, c):
        assert levenshtein_distance(a, c) <= (
            levenshtein_distance(a, b) + levenshtein_distance(b, c)
        )

    def test_result_in_unit_interval(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = [str(x) for x in rng.integers(0, 4, rng.integers(0, 9))]
            b = [str(x) for x in rng.integers(0, 4, rng.integers(0, 9))]
            assert 0.0 <= levenshtein_similarity(a, b) <= 1.0


def learnable_log(n_traces: int = 6):
    rows = [("MC", "Taking medicine"), ("W", "Taking medicine"), ("D", "Eating")]
    return make_log([sequence_trace(rows, with_time=False) for _ in range(n_traces)])


class TestLeaveOneTraceOut:
    def test_perfectly_learnable_log_scores_one(self):
        report = leave_one_trace_out(learnable_log(), FAST)
        assert report.mean_similarity == 1.0
        assert np.trace(report.confusion.counts) == report.confusion.total

    def test_two_traces_two_folds(self):
        report = leave_one_trace_out(learnable_log(2), FAST)
        assert len(report.per_trace) == 2

    def test_single_trace_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            leave_one_trace_out(learnable_log(1), FAST)

    def test_mean_equals_recomputation(self):
        report = leave_one_trace_out(learnable_log(5), FAST)
        values = [sim for _, sim in report.per_trace]
        assert report.mean_similarity == pytest.approx(
            sum(values) / len(values), abs=1e-12
        )

    def test_parallel_folds_identical_report(self):
        log = learnable_log(4)
        sequential = leave_one_trace_out(log, FAST)
        parallel = leave_one_trace_out(
            log,
            EvalConfig(
                abstraction=FAST.abstraction,
                similarity_on=FAST.similarity_on,
                n_jobs=2,
            ),
        )
        assert parallel.per_trace == sequential.per_trace
        assert np.array_equal(parallel.confusion.counts, sequential.confusion.counts)


class TestKFold:
    def test_fold_sizes_near_equal(self):
        report = k_fold(learnable_log(7), k=3, seed=1, config=FAST)
        assert len(report.per_trace) == 7

    def test_k_equal_to_traces_matches_loocv_structure(self):
        log = learnable_log(4)
        loocv = leave_one_trace_out(log, FAST)
        kf = k_fold(log, k=4, seed=0, config=FAST)
        assert sorted(kf.per_trace) == sorted(loocv.per_trace)

    def test_union_of_test_folds_is_all_traces(self):
        report = k_fold(learnable_log(9), k=4, seed=3, config=FAST)
        cases = [case for case, _ in report.per_trace]
        assert sorted(cases) == sorted(t.case_id for t in learnable_log(9).traces)
        assert len(set(cases)) == len(cases)

    def test_k_exceeding_traces_rejected(self):
        with pytest.raises(ValueError, match="exceeds"):
            k_fold(learnable_log(3), k=5, seed=0, config=FAST)

    def test_k_below_two_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            k_fold(learnable_log(3), k=1, seed=0, config=FAST)

    def test_reproducible_for_fixed_seed(self):
        a = k_fold(learnable_log(8), k=3, seed=11, config=FAST)
        b = k_fold(learnable_log(8), k=3, seed=11, config=FAST)
        assert a.per_trace == b.per_trace
        assert np.array_equal(a.confusion.counts, b.confusion.counts)


class TestSimilarityModes:
    def test_runs_mode_collapses_before_scoring(self):
        assert collapse_runs(["A", "A", "B", "B", "A"]) == ["A", "B", "A"]
        report = leave_one_trace_out(
            learnable_log(4),
            EvalConfig(abstraction=FAST.abstraction, similarity_on="runs"),
        )
        assert report.similarity_on == "runs"
        assert report.mean_similarity == 1.0

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError, match="events.*runs|runs.*events"):
            EvalConfig(similarity_on="chunks")


class TestConfusion:
    def make_report(self, records) -> AbstractionReport:
        from eventabs.evaluation import EventRecord

        labels = tuple(sorted({r[1] for r in records} | {r[2] for r in records}))
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for _, t, p in records:
            counts[labels.index(t), labels.index(p)] += 1
        return AbstractionReport(
            per_trace=[("case_0", 1.0)],
            mean_similarity=1.0,
            confusion=ConfusionMatrix(labels, counts),
            precision={},
            recall={},
            records=[EventRecord(*r) for r in records],
        )

    def test_perfect_predictor_diagonal(self):
        report = self.make_report([
            ("Drum Spin Start", "Developing", "Developing"),
            ("Drum Spin Start", "Developing", "Developing"),
            ("Drum Spin Stop", "Writing", "Writing"),
        ])
        matrix = confusion_restricted(
            report, {"Drum Spin Start", "Drum Spin Stop"}, {"Developing", "Writing"}
        )
        assert matrix.count("Developing", "Developing") == 2
        assert matrix.count("Writing", "Writing") == 1
        assert matrix.counts.sum() == np.trace(matrix.counts)

    def test_restriction_to_absent_names_is_zero(self):
        report = self.make_report([("A", "X", "X")])
        matrix = confusion_restricted(report, {"absent"}, {"X"})
        assert matrix.total == 0

    def test_restriction_filters_by_concept_name(self):
        report = self.make_report([
            ("keep", "X", "Y"),
            ("drop", "X", "X"),
        ])
        matrix = confusion_restricted(report, {"keep"}, {"X", "Y"})
        assert matrix.count("X", "Y") == 1
        assert matrix.total == 1

    def test_precision_recall(self):
        matrix = ConfusionMatrix(
            ("A", "B"), np.array([[8, 2], [1, 9]], dtype=np.int64)
        )
        assert matrix.precision()["A"] == pytest.approx(8 / 9)
        assert matrix.recall()["A"] == pytest.approx(8 / 10)
        assert matrix.total == 20

    def test_report_json_roundtrip_fields(self):
        report = self.make_report([("A", "X", "X")])
        data = report.to_dict()
        assert set(data) >= {
            "mean_similarity", "per_trace", "confusion", "precision", "recall"
        }
        assert report.to_json()
        assert "confusion" in report.to_json()
