"""Skipgram objective: probabilities, likelihood, gradients, training."""

import math

import numpy as np
import pytest

from mvstm import graph2vec as g2v
from mvstm.errors import CheckpointError, ConfigError
from mvstm.graph2vec import EmbeddingState, SkipgramConfig
from mvstm.roadgraph import SubgraphCorpus


def make_corpus(walks, num_graphs, vocab_size):
    return SubgraphCorpus(num_graphs=num_graphs, vocab_size=vocab_size,
                          walks=[(g, tuple(ns)) for g, ns in walks])


def naive_log_likelihood(state, corpus):
    """Double loop with unstabilized softmax; valid at small scales."""
    total = 0.0
    for graph_id, nodes in corpus.walks:
        G = state.graph_vectors[graph_id]
        denom = sum(
            math.exp(float(np.dot(G, w))) for w in state.node_vectors
        )
        for node in nodes:
            numer = math.exp(float(np.dot(G, state.node_vectors[node])))
            total += math.log(numer / denom)
    return total


def oracle_log_prob(graph_vec, node_vectors, node_id):
    logits = node_vectors @ graph_vec
    m = logits.max()
    lse = m + math.log(np.exp(logits - m).sum())
    return float(logits[node_id] - lse)


class TestInit:
    def test_entries_within_initializer_range(self):
        state = g2v.init_embeddings(3, 7, delta=4, seed=0)
        assert np.abs(state.graph_vectors).max() <= 0.125
        assert np.abs(state.node_vectors).max() <= 0.125

    def test_shapes(self):
        state = g2v.init_embeddings(3, 7, delta=4, seed=0)
        assert state.graph_vectors.shape == (3, 4)
        assert state.node_vectors.shape == (7, 4)

    def test_same_seed_identical(self):
        a = g2v.init_embeddings(2, 5, 3, seed=42)
        b = g2v.init_embeddings(2, 5, 3, seed=42)
        np.testing.assert_array_equal(a.graph_vectors, b.graph_vectors)
        np.testing.assert_array_equal(a.node_vectors, b.node_vectors)

    def test_zero_counts_rejected(self):
        with pytest.raises(ConfigError):
            g2v.init_embeddings(0, 5, 3, seed=0)
        with pytest.raises(ConfigError):
            g2v.init_embeddings(2, 0, 3, seed=0)


class TestProb:
    def test_vocab_of_one(self):
        state = EmbeddingState(np.random.default_rng(0).normal(size=(2, 3)),
                               np.random.default_rng(1).normal(size=(1, 3)))
        assert g2v.prob(state, 0, 0) == 1.0

    def test_zero_vectors_give_uniform(self):
        state = EmbeddingState(np.zeros((2, 4)), np.zeros((5, 4)))
        for node in range(5):
            assert g2v.prob(state, 1, node) == pytest.approx(0.2, abs=1e-15)

    def test_distribution_sums_to_one(self):
        rng = np.random.default_rng(3)
        state = EmbeddingState(rng.normal(size=(3, 6)), rng.normal(size=(11, 6)))
        for graph_id in range(3):
            total = sum(g2v.prob(state, graph_id, w) for w in range(11))
            assert abs(total - 1.0) < 1e-12

    def test_out_of_range(self):
        state = EmbeddingState(np.zeros((2, 3)), np.zeros((4, 3)))
        with pytest.raises(IndexError):
            g2v.prob(state, 2, 0)
        with pytest.raises(IndexError):
            g2v.prob(state, 0, 4)


class TestLogLikelihood:
    def test_vocab_of_one_is_zero(self):
        state = EmbeddingState(np.ones((2, 3)), np.ones((1, 3)))
        corpus = make_corpus([(0, [0, 0]), (1, [0])], 2, 1)
        assert g2v.log_likelihood(state, corpus) == 0.0

    def test_uniform_case(self):
        state = EmbeddingState(np.zeros((1, 4)), np.zeros((5, 4)))
        corpus = make_corpus([(0, [1, 2, 3])], 1, 5)
        assert g2v.log_likelihood(state, corpus) == pytest.approx(
            3 * math.log(1 / 5), abs=1e-12
        )

    def test_matches_naive_double_loop(self):
        rng = np.random.default_rng(8)
        state = EmbeddingState(rng.normal(size=(3, 4)), rng.normal(size=(7, 4)))
        corpus = make_corpus(
            [(0, [1, 2]), (1, [0, 3, 6]), (2, [5]), (0, [4, 4])], 3, 7
        )
        assert g2v.log_likelihood(state, corpus) == pytest.approx(
            naive_log_likelihood(state, corpus), abs=1e-9
        )

    def test_never_positive(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            state = EmbeddingState(rng.normal(size=(2, 3)), rng.normal(size=(6, 3)))
            corpus = make_corpus([(0, [1, 5]), (1, [2])], 2, 6)
            assert g2v.log_likelihood(state, corpus) <= 0.0


class TestTrainStep:
    def test_zero_learning_rate_is_identity(self):
        state = g2v.init_embeddings(2, 5, 3, seed=1)
        before = (state.graph_vectors.copy(), state.node_vectors.copy())
        g2v.train_step(state, 0, 2, learning_rate=0.0)
        np.testing.assert_array_equal(state.graph_vectors, before[0])
        np.testing.assert_array_equal(state.node_vectors, before[1])

    def test_gradient_matches_central_differences(self):
        """Applied update with lr=1 equals the finite-difference gradient of
        the log-probability, relative error < 1e-6 at h=1e-5."""
        rng = np.random.default_rng(5)
        h = 1e-5
        graph_vec = rng.normal(size=(2,))
        node_vectors = rng.normal(size=(3, 2))

        state = EmbeddingState(graph_vec[None, :].copy(), node_vectors.copy())
        g2v.train_step(state, 0, 1, learning_rate=1.0)
        analytic_G = state.graph_vectors[0] - graph_vec
        analytic_W = state.node_vectors - node_vectors

        def rel(a, n):
            return abs(a - n) / max(1.0, abs(a), abs(n))

        for i in range(2):
            plus, minus = graph_vec.copy(), graph_vec.copy()
            plus[i] += h
            minus[i] -= h
            numeric = (
                oracle_log_prob(plus, node_vectors, 1)
                - oracle_log_prob(minus, node_vectors, 1)
            ) / (2 * h)
            assert rel(analytic_G[i], numeric) < 1e-6

        for k in range(3):
            for i in range(2):
                plus, minus = node_vectors.copy(), node_vectors.copy()
                plus[k, i] += h
                minus[k, i] -= h
                numeric = (
                    oracle_log_prob(graph_vec, plus, 1)
                    - oracle_log_prob(graph_vec, minus, 1)
                ) / (2 * h)
                assert rel(analytic_W[k, i], numeric) < 1e-6

    def test_repeated_steps_drive_probability_up(self):
        state = g2v.init_embeddings(1, 6, 4, seed=3)
        previous = g2v.prob(state, 0, 2)
        for _ in range(3000):
            g2v.train_step(state, 0, 2, learning_rate=0.1)
            current = g2v.prob(state, 0, 2)
            assert current > previous
            previous = current
            if current > 0.99:
                break
        assert previous > 0.99


class TestTrain:
    def desk_corpus(self):
        rng = np.random.default_rng(17)
        walks = []
        for graph_id in range(3):
            for _ in range(4):
                walks.append((graph_id, rng.integers(0, 20, size=8).tolist()))
        return make_corpus(walks, 3, 20)

    def test_trace_non_decreasing(self):
        corpus = self.desk_corpus()
        _, trace = g2v.train(corpus, SkipgramConfig(delta=8, learning_rate=0.025,
                                                    epochs=20, seed=0))
        assert len(trace) == 20
        for earlier, later in zip(trace[:-1], trace[1:]):
            assert later >= earlier - 1e-6

    def test_exact_step_count(self, monkeypatch):
        corpus = make_corpus(
            [(g % 3, list(range(8))) for g in range(12)], 3, 8
        )
        calls = []
        original = g2v.train_step
        monkeypatch.setattr(
            g2v, "train_step", lambda *a, **k: (calls.append(1), original(*a, **k))[1]
        )
        g2v.train(corpus, SkipgramConfig(delta=4, epochs=1, seed=0))
        assert len(calls) == 96

    def test_deterministic(self):
        corpus = self.desk_corpus()
        cfg = SkipgramConfig(delta=4, epochs=3, seed=9)
        a, trace_a = g2v.train(corpus, cfg)
        b, trace_b = g2v.train(corpus, cfg)
        np.testing.assert_array_equal(a.graph_vectors, b.graph_vectors)
        np.testing.assert_array_equal(a.node_vectors, b.node_vectors)
        assert trace_a == trace_b

    def test_cooccurrence_saturates(self):
        """A graph that always co-occurs with one node ends up assigning it
        probability near 1."""
        walks = [(0, [4] * 6) for _ in range(5)]
        walks += [(1, [1, 2, 3] * 2) for _ in range(5)]
        corpus = make_corpus(walks, 2, 8)
        state, _ = g2v.train(corpus, SkipgramConfig(delta=8, learning_rate=0.025,
                                                    epochs=50, seed=2))
        assert g2v.prob(state, 0, 4) > 0.99

    def test_negative_sampling_path_runs_and_is_deterministic(self):
        corpus = self.desk_corpus()
        cfg = SkipgramConfig(delta=4, epochs=2, seed=1,
                             objective="negative_sampling", negatives=3)
        a, _ = g2v.train(corpus, cfg)
        b, _ = g2v.train(corpus, cfg)
        np.testing.assert_array_equal(a.graph_vectors, b.graph_vectors)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ConfigError):
            g2v.train(make_corpus([], 1, 1), SkipgramConfig())


class TestSpatialFeature:
    def test_readback_after_init(self):
        state = g2v.init_embeddings(3, 5, 4, seed=8)
        np.testing.assert_array_equal(
            g2v.spatial_feature(state, 1), state.graph_vectors[1]
        )
        assert g2v.spatial_feature(state, 1).shape == (4,)

    def test_untouched_by_other_graphs_updates(self):
        state = g2v.init_embeddings(3, 5, 4, seed=8)
        before = g2v.spatial_feature(state, 2)
        for _ in range(10):
            g2v.train_step(state, 0, 3, 0.05)
            g2v.train_step(state, 1, 1, 0.05)
        np.testing.assert_array_equal(g2v.spatial_feature(state, 2), before)

    def test_out_of_range(self):
        state = g2v.init_embeddings(2, 5, 4, seed=8)
        with pytest.raises(IndexError):
            g2v.spatial_feature(state, 2)


class TestSerialization:
    def test_round_trip_is_bit_exact(self, tmp_path):
        state = g2v.init_embeddings(4, 9, 5, seed=13)
        g2v.train_step(state, 1, 3, 0.5)
        path = tmp_path / "emb.json"
        g2v.save_embeddings(state, path)
        back = g2v.load_embeddings(path)
        np.testing.assert_array_equal(back.graph_vectors, state.graph_vectors)
        np.testing.assert_array_equal(back.node_vectors, state.node_vectors)
        assert back.delta == state.delta

    def test_corrupt_file_raises(self, tmp_path):
        path = tmp_path / "emb.json"
        path.write_text("{not json")
        with pytest.raises(CheckpointError):
            g2v.load_embeddings(path)
        path.write_text('{"delta": 3}')
        with pytest.raises(CheckpointError):
            g2v.load_embeddings(path)
