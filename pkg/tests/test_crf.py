"""Inference against exhaustive enumeration, gradients against finite
differences, and training behavior."""

import numpy as np
import pytest

from eventabs import crf
from eventabs.features import CatalogConfig, FeatureCatalog, FeatureDef, build_catalog

from factories import make_log, sequence_trace
from oracles import (
    argmax_lexicographic,
    enumerate_sequence_scores,
    log_sum_exp,
)

LABEL_POOL = ("alpha", "beta", "gamma", "delta")


def random_model(
    rng: np.random.Generator, n_labels: int, n_obs_features: int
) -> crf.CrfModel:
    labels = LABEL_POOL[:n_labels]
    defs = tuple(
        FeatureDef("bias", labels[int(rng.integers(n_labels))])
        for _ in range(n_obs_features)
    )
    catalog = FeatureCatalog(
        labels=labels, observation_features=defs, config=CatalogConfig()
    )
    weights = rng.normal(0.0, 1.5, catalog.n_features)
    return crf.CrfModel(catalog, weights)


def oracle_inputs(model: crf.CrfModel, obs: np.ndarray):
    idx = [model.catalog.label_index[d.label] for d in model.catalog.observation_features]
    return enumerate_sequence_scores(
        obs, model.weights, idx, model.catalog.n_labels
    )


class TestLogPartition:
    def test_zero_weights_uniform(self):
        rng = np.random.default_rng(0)
        model = random_model(rng, 3, 4)
        model.weights[:] = 0.0
        for T in (1, 2, 5):
            obs = rng.normal(0, 1, (T, 4))
            assert crf.log_partition(model, obs) == pytest.approx(
                T * np.log(3), rel=1e-12
            )

    def test_matches_enumeration(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            L = int(rng.integers(2, 5))
            T = int(rng.integers(1, 7))
            F = int(rng.integers(1, 7))
            model = random_model(rng, L, F)
            obs = rng.normal(0, 1, (T, F))
            _, scores = oracle_inputs(model, obs)
            expected = log_sum_exp(scores)
            assert crf.log_partition(model, obs) == pytest.approx(expected, rel=1e-9)

    def test_single_position_is_logsumexp(self):
        rng = np.random.default_rng(2)
        model = random_model(rng, 4, 3)
        obs = rng.normal(0, 1, (1, 3))
        emissions, trans = model.potentials(obs)
        scores = trans[4] + emissions[0]
        assert crf.log_partition(model, obs) == pytest.approx(
            log_sum_exp(scores), rel=1e-12
        )

    def test_forward_equals_backward(self):
        from eventabs.crf import _log_partition_backward, _log_partition_forward

        rng = np.random.default_rng(3)
        for _ in range(10):
            model = random_model(rng, 3, 5)
            obs = rng.normal(0, 1, (int(rng.integers(1, 9)), 5))
            emissions, trans = model.potentials(obs)
            forward = _log_partition_forward(emissions, trans)
            backward = _log_partition_backward(emissions, trans)
            assert forward == pytest.approx(backward, rel=1e-9)


class TestSequenceLogProb:
    def test_zero_weights(self):
        rng = np.random.default_rng(4)
        model = random_model(rng, 3, 4)
        model.weights[:] = 0.0
        obs = rng.normal(0, 1, (4, 4))
        lp = crf.sequence_log_prob(model, obs, ["alpha", "beta", "gamma", "alpha"])
        assert lp == pytest.approx(-4 * np.log(3), rel=1e-12)

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(5)
        import itertools

        for _ in range(5):
            L = int(rng.integers(2, 5))
            T = int(rng.integers(1, 6))
            model = random_model(rng, L, 4)
            obs = rng.normal(0, 1, (T, 4))
            labels = model.labels
            total = sum(
                np.exp(crf.sequence_log_prob(model, obs, list(seq)))
                for seq in itertools.product(labels, repeat=T)
            )
            assert total == pytest.approx(1.0, abs=1e-9)

    def test_constant_shift_at_one_position_cancels_in_z(self):
        # shifting every label's potential at one position shifts every
        # sequence score equally, so p(y|x) is unchanged
        from eventabs.crf import _log_partition_forward, _sequence_score

        rng = np.random.default_rng(6)
        model = random_model(rng, 3, 4)
        obs = rng.normal(0, 1, (5, 4))
        emissions, trans = model.potentials(obs)
        y = np.array([0, 2, 1, 1, 0])
        base = _sequence_score(emissions, trans, y) - _log_partition_forward(
            emissions, trans
        )
        shifted = emissions.copy()
        shifted[2, :] += 3.7
        moved = _sequence_score(shifted, trans, y) - _log_partition_forward(
            shifted, trans
        )
        assert moved == pytest.approx(base, rel=1e-12)

    def test_unknown_label_rejected(self):
        rng = np.random.default_rng(7)
        model = random_model(rng, 2, 3)
        obs = rng.normal(0, 1, (2, 3))
        with pytest.raises(ValueError, match="outside the model alphabet"):
            crf.sequence_log_prob(model, obs, ["alpha", "nope"])

    def test_length_mismatch_rejected(self):
        rng = np.random.default_rng(8)
        model = random_model(rng, 2, 3)
        obs = rng.normal(0, 1, (2, 3))
        with pytest.raises(ValueError, match="length"):
            crf.sequence_log_prob(model, obs, ["alpha"])


class TestMarginals:
    def test_zero_weights_uniform(self):
        rng = np.random.default_rng(9)
        model = random_model(rng, 4, 3)
        model.weights[:] = 0.0
        obs = rng.normal(0, 1, (5, 3))
        node, edge = crf.posterior_marginals(model, obs)
        assert np.allclose(node, 0.25)
        assert np.allclose(edge, 1 / 16)

    def test_matches_enumeration(self):
        rng = np.random.default_rng(10)
        for _ in range(10):
            L = int(rng.integers(2, 5))
            T = int(rng.integers(2, 7))
            model = random_model(rng, L, 5)
            obs = rng.normal(0, 1, (T, 5))
            sequences, scores = oracle_inputs(model, obs)
            log_z = log_sum_exp(scores)
            probs = np.exp(scores - log_z)
            node_oracle = np.zeros((T, L))
            edge_oracle = np.zeros((T - 1, L, L))
            for seq, p in zip(sequences, probs):
                for t, y in enumerate(seq):
                    node_oracle[t, y] += p
                    if t:
                        edge_oracle[t - 1, seq[t - 1], y] += p
            node, edge = crf.posterior_marginals(model, obs)
            assert np.allclose(node, node_oracle, atol=1e-9)
            assert np.allclose(edge, edge_oracle, atol=1e-9)

    def test_marginals_normalize_and_marginalize(self):
        rng = np.random.default_rng(11)
        model = random_model(rng, 3, 4)
        obs = rng.normal(0, 1, (6, 4))
        node, edge = crf.posterior_marginals(model, obs)
        assert np.allclose(node.sum(axis=1), 1.0, atol=1e-9)
        assert np.allclose(edge.sum(axis=(1, 2)), 1.0, atol=1e-9)
        assert np.allclose(edge.sum(axis=1), node[1:], atol=1e-9)
        assert np.allclose(edge.sum(axis=2), node[:-1], atol=1e-9)


class TestViterbi:
    def test_matches_enumeration_with_tiebreak(self):
        rng = np.random.default_rng(12)
        for _ in range(25):
            L = int(rng.integers(2, 5))
            T = int(rng.integers(1, 7))
            model = random_model(rng, L, 4)
            obs = rng.normal(0, 1, (T, 4))
            sequences, scores = oracle_inputs(model, obs)
            expected = argmax_lexicographic(sequences, scores)
            decoded = crf.viterbi_decode(model, obs)
            assert tuple(model.catalog.label_index[l] for l in decoded) == expected

    def test_zero_weights_all_first_label(self):
        rng = np.random.default_rng(13)
        model = random_model(rng, 3, 4)
        model.weights[:] = 0.0
        obs = rng.normal(0, 1, (5, 4))
        assert crf.viterbi_decode(model, obs) == ["alpha"] * 5

    def test_positive_scaling_invariance(self):
        rng = np.random.default_rng(14)
        model = random_model(rng, 3, 4)
        obs = rng.normal(0, 1, (6, 4))
        before = crf.viterbi_decode(model, obs)
        scaled = crf.CrfModel(model.catalog, model.weights * 3.5)
        assert crf.viterbi_decode(scaled, obs) == before

    def test_decode_score_dominates_observed(self):
        rng = np.random.default_rng(15)
        model = random_model(rng, 3, 4)
        obs = rng.normal(0, 1, (6, 4))
        decoded = crf.viterbi_decode(model, obs)
        observed = [model.labels[int(i)] for i in rng.integers(0, 3, 6)]
        assert crf.sequence_log_prob(model, obs, decoded) >= crf.sequence_log_prob(
            model, obs, observed
        )


def test_log_space_stability_long_sequence_large_weights():
    rng = np.random.default_rng(99)
    model = random_model(rng, 2, 3)
    model.weights[:] = np.where(model.weights > 0, 1e3, -1e3)
    obs = rng.uniform(0, 1, (10_000, 3))
    log_z = crf.log_partition(model, obs)
    assert np.isfinite(log_z)
    node, edge = crf.posterior_marginals(model, obs)
    assert np.all(np.isfinite(node)) and np.all(np.isfinite(edge))
    decoded = crf.viterbi_decode(model, obs)
    assert len(decoded) == 10_000


class TestGradient:
    def finite_difference(self, weights, pairs, layout, eps=1e-6):
        grad = np.zeros_like(weights)
        for i in range(len(weights)):
            plus, minus = weights.copy(), weights.copy()
            plus[i] += eps
            minus[i] -= eps
            grad[i] = (
                crf.nll_and_gradient(plus, pairs, layout)[0]
                - crf.nll_and_gradient(minus, pairs, layout)[0]
            ) / (2 * eps)
        return grad

    def test_matches_central_differences(self):
        rng = np.random.default_rng(16)
        for _ in range(20):
            L = int(rng.integers(2, 4))
            F = int(rng.integers(1, 6))
            model = random_model(rng, L, F)
            layout = crf.FeatureLayout.from_catalog(model.catalog)
            assert layout.n_features <= 50
            pairs = []
            for _ in range(int(rng.integers(1, 4))):
                T = int(rng.integers(1, 6))
                pairs.append(crf.LabeledPair(
                    rng.normal(0, 1, (T, F)),
                    rng.integers(0, L, T).astype(np.intp),
                ))
            weights = rng.normal(0, 1, layout.n_features)
            _, analytic = crf.nll_and_gradient(weights, pairs, layout)
            numeric = self.finite_difference(weights, pairs, layout)
            scale = np.maximum(np.abs(numeric), 1.0)
            assert np.max(np.abs(analytic - numeric) / scale) < 1e-5

    def test_value_at_zero_weights(self):
        rng = np.random.default_rng(17)
        model = random_model(rng, 3, 4)
        layout = crf.FeatureLayout.from_catalog(model.catalog)
        pairs = [
            crf.LabeledPair(rng.normal(0, 1, (4, 4)), np.array([0, 1, 2, 0])),
            crf.LabeledPair(rng.normal(0, 1, (2, 4)), np.array([2, 2])),
        ]
        value, _ = crf.nll_and_gradient(np.zeros(layout.n_features), pairs, layout)
        assert value == pytest.approx((4 + 2) * np.log(3), rel=1e-12)

    def test_duplicating_pairs_doubles(self):
        rng = np.random.default_rng(18)
        model = random_model(rng, 2, 3)
        layout = crf.FeatureLayout.from_catalog(model.catalog)
        pairs = [
            crf.LabeledPair(rng.normal(0, 1, (3, 3)), np.array([0, 1, 1])),
            crf.LabeledPair(rng.normal(0, 1, (5, 3)), np.array([1, 0, 0, 1, 0])),
        ]
        weights = rng.normal(0, 1, layout.n_features)
        v1, g1 = crf.nll_and_gradient(weights, pairs, layout)
        v2, g2 = crf.nll_and_gradient(weights, pairs + pairs, layout)
        assert v2 == pytest.approx(2 * v1, rel=1e-12)
        assert np.allclose(g2, 2 * g1, rtol=1e-12, atol=1e-12)

    def test_batched_equals_sequential_sum(self):
        rng = np.random.default_rng(19)
        model = random_model(rng, 3, 5)
        layout = crf.FeatureLayout.from_catalog(model.catalog)
        pairs = []
        for _ in range(7):
            T = int(rng.integers(1, 8))
            pairs.append(crf.LabeledPair(
                rng.normal(0, 1, (T, 5)), rng.integers(0, 3, T).astype(np.intp)
            ))
        weights = rng.normal(0, 1, layout.n_features)
        batched_v, batched_g = crf.nll_and_gradient(weights, pairs, layout)
        seq_v = 0.0
        seq_g = np.zeros(layout.n_features)
        for pair in pairs:
            v, g = crf.nll_and_gradient(weights, [pair], layout)
            seq_v += v
            seq_g += g
        assert batched_v == pytest.approx(seq_v, rel=1e-9)
        assert np.allclose(batched_g, seq_g, rtol=1e-9, atol=1e-9)


class TestTraining:
    def separable_log(self):
        rows = [("MC", "Taking medicine"), ("W", "Taking medicine"), ("D", "Eating")]
        return make_log([
            sequence_trace(rows, with_time=False),
            sequence_trace(rows[::-1], with_time=False),
            sequence_trace(rows + rows, with_time=False),
        ])

    def test_separable_data_reaches_perfect_training_accuracy(self):
        log = self.separable_log()
        catalog = build_catalog(log, CatalogConfig(ngram_sizes=(1,)))
        model = crf.train(log, catalog, l1_coefficient=0.1)
        from eventabs.features import evaluate_observations

        for trace in log.traces:
            decoded = crf.viterbi_decode(model, evaluate_observations(catalog, trace))
            assert decoded == [ev.label for ev in trace.events]

    def test_huge_penalty_zeroes_weights_and_uniform_tiebreak(self):
        log = self.separable_log()
        catalog = build_catalog(log, CatalogConfig(ngram_sizes=(1,)))
        model = crf.train(log, catalog, l1_coefficient=1e6)
        assert model.nonzero_weight_count == 0
        from eventabs.features import evaluate_observations

        decoded = crf.viterbi_decode(
            model, evaluate_observations(catalog, log.traces[0])
        )
        assert decoded == ["Eating"] * 3  # first label in sorted alphabet

    def test_training_deterministic(self):
        log = self.separable_log()
        catalog = build_catalog(log, CatalogConfig(ngram_sizes=(1,)))
        a = crf.train(log, catalog, l1_coefficient=0.05)
        b = crf.train(log, catalog, l1_coefficient=0.05)
        assert np.array_equal(a.weights, b.weights)

    def test_weight_vector_length_checked(self):
        rng = np.random.default_rng(20)
        model = random_model(rng, 2, 3)
        with pytest.raises(ValueError, match="catalog size"):
            crf.CrfModel(model.catalog, np.zeros(model.catalog.n_features + 1))

    def test_sparsity_increases_with_penalty(self):
        from eventabs.petri import generate_annotated_log, medicine_eating_process

        log = generate_annotated_log(medicine_eating_process(), 20, seed=3)
        catalog = build_catalog(log, CatalogConfig(ngram_sizes=(1, 2), time_views=("day",)))
        relaxed = crf.train(log, catalog, l1_coefficient=0.01)
        strict = crf.train(log, catalog, l1_coefficient=100.0)
        assert strict.nonzero_weight_count < relaxed.nonzero_weight_count
