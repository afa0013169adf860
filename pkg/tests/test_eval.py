import numpy as np
import pytest

from fuzzqe.eval import (EvalReport, evaluate, filtered_rank,
                         random_baseline_mrr)
from fuzzqe.model import ModelConfig, init_parameters
from fuzzqe.query import LabeledQuery, instantiate


class TestFilteredRank:
    def test_plain_sort_position(self):
        scores = np.array([0.9, 0.5, 0.1])
        assert filtered_rank(scores, 1, set()) == 2.0

    def test_filter_removes_competitor(self):
        scores = np.array([0.9, 0.5, 0.1])
        assert filtered_rank(scores, 2, {1}) == 2.0

    def test_all_ties_average(self):
        scores = np.full(5, 0.3)
        for target in range(5):
            assert filtered_rank(scores, target, set()) == 3.0

    def test_target_in_filter_rejected(self):
        with pytest.raises(ValueError):
            filtered_rank(np.array([0.1, 0.2]), 1, {1})

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            filtered_rank(np.array([0.1, 0.2]), 5, set())

    def test_unique_scores_match_naive_sort(self, rng):
        for _ in range(50):
            scores = rng.permutation(np.linspace(0, 1, 30))
            target = int(rng.integers(30))
            naive = 1 + int(np.sum(scores > scores[target]))
            assert filtered_rank(scores, target, set()) == naive


def _labeled_1p(ent, rel, easy, hard):
    return LabeledQuery(instantiate("1p", [ent], [rel]), tuple(easy), tuple(hard))


class TestEvaluate:
    def _model(self, rng, E=10):
        config = ModelConfig(d=6, K=2)
        return init_parameters(rng, config, E, 3), config

    def test_rank_one_gives_unit_mrr(self, rng):
        params, config = self._model(rng)
        from fuzzqe.model import embed_query, entity_matrix
        lq = _labeled_1p(0, 0, [], [0])
        s_q = embed_query(params, config, lq.query)
        scores = entity_matrix(params, config) @ s_q
        best = int(np.argmax(scores))
        report = evaluate(params, config, {"1p": [_labeled_1p(0, 0, [], [best])]})
        assert report.per_structure["1p"].mrr == 1.0
        assert report.per_structure["1p"].hits1 == 1.0

    def test_macro_mean_over_queries(self, rng):
        params, config = self._model(rng)
        from fuzzqe.model import embed_query, entity_matrix
        lq = _labeled_1p(0, 0, [], [0])
        scores = entity_matrix(params, config) @ embed_query(params, config, lq.query)
        order = np.argsort(-scores)
        first, second = int(order[0]), int(order[1])
        qs = [_labeled_1p(0, 0, [], [first]), _labeled_1p(0, 0, [], [second])]
        report = evaluate(params, config, {"1p": qs})
        assert report.per_structure["1p"].mrr == pytest.approx(0.75)

    def test_monotone_transform_invariance(self, rng):
        # any strictly increasing transform of the scores leaves ranks alone
        for _ in range(25):
            scores = rng.uniform(size=20)
            target = int(rng.integers(20))
            filt = {int(x) for x in rng.integers(20, size=3)} - {target}
            r1 = filtered_rank(scores, target, filt)
            r2 = filtered_rank(np.exp(5 * scores), target, filt)
            assert r1 == r2

    def test_unknown_tag_excluded_with_report(self, rng):
        params, config = self._model(rng)
        report = evaluate(params, config, {
            "1p": [_labeled_1p(0, 0, [], [1])],
            "7x": [_labeled_1p(0, 0, [], [1])]})
        assert report.unknown_tags == ["7x"]
        assert "7x" not in report.per_structure

    def test_empty_hard_rejected(self, rng):
        params, config = self._model(rng)
        with pytest.raises(ValueError):
            evaluate(params, config, {"1p": [_labeled_1p(0, 0, [1], [])]})

    def test_aggregates(self, rng):
        params, config = self._model(rng)
        queries = {
            "1p": [_labeled_1p(0, 0, [], [1])],
            "2in": [LabeledQuery(instantiate("2in", [0, 1], [0, 1]), (), (2,))],
        }
        report = evaluate(params, config, queries)
        assert report.avg_epfo == report.per_structure["1p"].mrr
        assert report.avg_neg == report.per_structure["2in"].mrr

    def test_json_and_csv_emission(self, rng):
        params, config = self._model(rng)
        report = evaluate(params, config, {"1p": [_labeled_1p(0, 0, [], [1])]})
        assert '"avg_epfo"' in report.to_json()
        lines = report.to_csv().strip().splitlines()
        assert lines[0] == "tag,mrr,hits1,hits3,hits10,n"
        assert lines[1].startswith("1p,")


class TestRandomBaseline:
    def test_harmonic_sum_oracle_no_filter(self):
        # uniform scorer on 100 entities, 1 answer: E[RR] = H_100 / 100
        H100 = sum(1.0 / r for r in range(1, 101))
        got = random_baseline_mrr(100, [_labeled_1p(0, 0, [], [5])])
        assert got == pytest.approx(H100 / 100, abs=1e-12)
        assert got == pytest.approx(0.0519, abs=5e-4)

    def test_two_entities(self):
        assert random_baseline_mrr(2, [_labeled_1p(0, 0, [], [1])]) == \
            pytest.approx(0.75)

    def test_filtering_raises_baseline(self):
        loose = random_baseline_mrr(50, [_labeled_1p(0, 0, [], [1])])
        tight = random_baseline_mrr(50, [_labeled_1p(0, 0, list(range(2, 22)), [1])])
        assert tight > loose

    def test_matches_monte_carlo(self, rng):
        # simulate a uniform random scorer and compare the measured MRR
        E = 40
        lq = _labeled_1p(0, 0, list(range(1, 6)), [10, 11])
        exact = random_baseline_mrr(E, [lq])
        known = set(lq.easy) | set(lq.hard)
        total, n = 0.0, 4000
        for _ in range(n):
            scores = rng.uniform(size=E)
            rr = np.mean([1.0 / filtered_rank(scores, a, known - {a})
                          for a in lq.hard])
            total += rr
        mc = total / n
        se = exact / np.sqrt(n)   # loose scale for the stderr
        assert abs(mc - exact) < 5 * max(se, 0.01)
