import math

import numpy as np
import pytest

from fuzzqe.logic import Logic
from fuzzqe.model import (GMode, ModelConfig, NormMode, Parameters,
                          embed_query, entity_embedding, entity_matrix,
                          init_parameters, load_checkpoint, project,
                          relation_map, save_checkpoint, score, score_all,
                          top_k)
from fuzzqe.query import And, Anchor, Not, Or, Proj, instantiate


class TestModelConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(d=1, K=1)
        with pytest.raises(ValueError):
            ModelConfig(d=4, K=0)
        with pytest.raises(ValueError):
            ModelConfig(d=4, K=1, ln_eps=0.0)

    def test_lukasiewicz_rejected_with_explanation(self):
        with pytest.raises(ValueError, match="Lukasiewicz"):
            ModelConfig(d=4, K=1, logic=Logic.LUKASIEWICZ)


class TestEntityEmbedding:
    def test_l1_zero_theta_is_uniform(self, model_factory):
        params, config = model_factory(d=4, norm_mode=NormMode.L1)
        params.entity_theta[0] = 0.0
        assert np.array_equal(entity_embedding(params, config, 0), [0.25] * 4)

    def test_l2_zero_theta(self, model_factory):
        params, config = model_factory(d=4, norm_mode=NormMode.L2)
        params.entity_theta[0] = 0.0
        np.testing.assert_allclose(entity_embedding(params, config, 0),
                                   [0.5] * 4, atol=1e-15)

    def test_l1_hand_computed_softmax(self, model_factory):
        params, config = model_factory(d=2, norm_mode=NormMode.L1)
        params.entity_theta[3] = [math.log(3.0), 0.0]
        np.testing.assert_allclose(entity_embedding(params, config, 3),
                                   [0.75, 0.25], atol=1e-15)

    def test_normalization_invariants(self, model_factory, rng):
        p1, c1 = model_factory(d=16, norm_mode=NormMode.L1)
        p2, c2 = model_factory(d=16, norm_mode=NormMode.L2)
        m1 = entity_matrix(p1, c1)
        m2 = entity_matrix(p2, c2)
        np.testing.assert_allclose(m1.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose((m2 ** 2).sum(axis=1), 1.0, atol=1e-12)
        assert np.all(m1 > 0) and np.all(m1 <= 1)
        assert np.all(m2 > 0) and np.all(m2 <= 1)

    def test_out_of_range_and_non_finite(self, model_factory):
        params, config = model_factory()
        with pytest.raises(IndexError):
            entity_embedding(params, config, 999)
        params.entity_theta[1, 0] = np.inf
        with pytest.raises(FloatingPointError):
            entity_embedding(params, config, 1)


class TestRelationMap:
    def test_single_basis_identity(self, model_factory):
        params, config = model_factory(K=1)
        params.rel_coeff[2] = [1.0]
        W, b = relation_map(params, 2)
        assert np.array_equal(W, params.bases_M[0])
        assert np.array_equal(b, params.bases_v[0])

    def test_zero_coefficients(self, model_factory):
        params, config = model_factory(K=2)
        params.rel_coeff[1] = 0.0
        W, b = relation_map(params, 1)
        assert not W.any() and not b.any()

    def test_cancellation(self, model_factory):
        params, config = model_factory(K=2)
        params.bases_M[1] = params.bases_M[0]
        params.rel_coeff[0] = [1.0, -1.0]
        W, _ = relation_map(params, 0)
        np.testing.assert_allclose(W, 0.0, atol=1e-16)


class TestProject:
    def _constant_setup(self, model_factory, g_mode):
        params, config = model_factory(d=6, g_mode=g_mode)
        params.bases_M[:] = 0.0
        params.bases_v[:] = 0.0
        params.ln_gain[:] = 1.0
        params.ln_bias[:] = 0.0
        return params, config

    def test_zero_map_logistic_gives_half(self, model_factory):
        params, config = self._constant_setup(model_factory, GMode.LOGISTIC)
        out = project(params, config, 0, np.full(6, 0.3))
        assert np.array_equal(out, np.full(6, 0.5))

    def test_zero_map_bounded_rectifier_gives_zero(self, model_factory):
        params, config = self._constant_setup(model_factory, GMode.BOUNDED_RECTIFIER)
        out = project(params, config, 0, np.full(6, 0.3))
        assert np.array_equal(out, np.zeros(6))

    @pytest.mark.parametrize("g", [GMode.LOGISTIC, GMode.BOUNDED_RECTIFIER])
    def test_outputs_stay_in_unit_cube(self, rng, g):
        for _ in range(1000):
            config = ModelConfig(d=5, K=2, g_mode=g)
            params = init_parameters(rng, config, 4, 3)
            params.ln_gain = rng.normal(0, 2, size=5)
            params.ln_bias = rng.normal(0, 2, size=5)
            s = rng.uniform(size=5)
            out = project(params, config, int(rng.integers(3)), s)
            assert np.all(out >= 0.0) and np.all(out <= 1.0)

    def test_relation_cache_reused(self, model_factory):
        params, config = model_factory()
        cache = {}
        s = np.full(config.d, 0.5)
        a = project(params, config, 1, s, cache)
        assert 1 in cache
        b = project(params, config, 1, s, cache)
        assert np.array_equal(a, b)


class TestEmbedQuery:
    def test_1p_is_single_projection(self, model_factory):
        params, config = model_factory()
        q = instantiate("1p", [3], [1])
        expected = project(params, config, 1,
                           entity_embedding(params, config, 3))
        assert np.array_equal(embed_query(params, config, q), expected)

    def test_double_negation_bit_exact(self, model_factory, rng):
        params, config = model_factory()
        base = instantiate("2p", [2], [0, 1]).root
        assert np.array_equal(embed_query(params, config, Not(Not(base))),
                              embed_query(params, config, base))

    def test_godel_intersection_idempotent(self, model_factory):
        params, config = model_factory(logic=Logic.GODEL)
        branch = instantiate("1p", [1], [2]).root
        assert np.array_equal(embed_query(params, config, And((branch, branch))),
                              embed_query(params, config, branch))

    def test_all_structures_stay_in_unit_cube(self, model_factory, rng):
        from fuzzqe.query import CANONICAL_TAGS, template_slots
        params, config = model_factory(d=8, E=12, R=5)
        for tag in CANONICAL_TAGS:
            na, nr = template_slots(tag)
            q = instantiate(tag, list(rng.integers(12, size=na)),
                            list(rng.integers(5, size=nr)))
            s = embed_query(params, config, q)
            assert np.all(s >= 0.0) and np.all(s <= 1.0)


class TestScore:
    def test_one_hot_reads_coordinate(self):
        s_q = np.array([0.2, 0.9, 0.4])
        p = np.array([0.0, 1.0, 0.0])
        assert score(s_q, p) == 0.9

    def test_universe_and_empty(self, model_factory):
        params, config = model_factory(norm_mode=NormMode.L1)
        p = entity_embedding(params, config, 0)
        assert score(np.ones(config.d), p) == pytest.approx(1.0, abs=1e-12)
        assert score(np.zeros(config.d), p) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            score(np.zeros(3), np.zeros(4))


class TestScoreAll:
    def test_matches_per_entity_scoring(self, model_factory):
        params, config = model_factory(E=9)
        q = instantiate("2p", [1], [0, 1])
        s_q = embed_query(params, config, q)
        scores = score_all(params, config, s_q)
        for e in range(9):
            expected = score(s_q, entity_embedding(params, config, e))
            assert abs(scores[e] - expected) < 1e-12

    def test_empty_set_scores_zero(self, model_factory):
        params, config = model_factory(E=5)
        assert not score_all(params, config, np.zeros(config.d)).any()

    def test_argmax_matches_brute_force(self, model_factory, rng):
        params, config = model_factory(E=5)
        s_q = rng.uniform(size=config.d)
        scores = score_all(params, config, s_q)
        brute = max(range(5), key=lambda e: score(
            s_q, entity_embedding(params, config, e)))
        assert int(np.argmax(scores)) == brute


class TestTopK:
    def test_basic(self):
        assert top_k(np.array([0.1, 0.9, 0.5]), 2) == [(1, 0.9), (2, 0.5)]

    def test_exclusion(self):
        out = top_k(np.array([0.1, 0.9, 0.5]), 2, exclude={1})
        assert out == [(2, 0.5), (0, 0.1)]

    def test_ties_ascend_by_id(self):
        assert top_k(np.full(4, 0.7), 3) == [(0, 0.7), (1, 0.7), (2, 0.7)]

    def test_k_larger_than_pool_truncates(self):
        assert top_k(np.array([0.4, 0.2]), 10, exclude={0}) == [(1, 0.2)]


class TestCheckpoint:
    def test_round_trip_bit_exact(self, model_factory, tmp_path):
        params, config = model_factory(d=6, E=7, R=3, K=2,
                                       norm_mode=NormMode.L1,
                                       g_mode=GMode.BOUNDED_RECTIFIER,
                                       ln_eps=3e-6)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, config)
        params2, config2 = load_checkpoint(path)
        assert config2 == config
        for name, t in params.tensors():
            assert np.array_equal(t, getattr(params2, name)), name

    def test_header_is_readable_text(self, model_factory, tmp_path):
        params, config = model_factory()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, config)
        header = open(path, "rb").readline().decode()
        assert header.startswith("FZQE1 ")
        assert f"d={config.d}" in header

    def test_truncated_payload_rejected(self, model_factory, tmp_path):
        params, config = model_factory()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, config)
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        with pytest.raises(ValueError, match="payload"):
            load_checkpoint(path)
