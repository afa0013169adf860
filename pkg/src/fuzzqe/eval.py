"""Filtered-rank evaluation: per-structure MRR / HITS and the two headline
averages (EPFO structures and negation structures).

Protocol: for every hard answer of a query, all other known answers (easy
and hard) are removed from the candidate pool before ranking.  Ties share
rank mass equally (0.5 per tied competitor), which keeps the metric
deterministic and unbiased under arbitrary score ties.  Reciprocal ranks
are averaged per query first, then across queries (macro averaging).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .model import ModelConfig, Parameters, embed_query, entity_matrix
from .query import EPFO_TAGS, NEGATION_TAGS, LabeledQuery

__all__ = ["StructureMetrics", "EvalReport", "filtered_rank", "evaluate",
           "random_baseline_mrr"]


@dataclass
class StructureMetrics:
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    n_queries: int


@dataclass
class EvalReport:
    per_structure: dict[str, StructureMetrics]
    avg_epfo: float
    avg_neg: float
    unknown_tags: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        obj = {
            "avg_epfo": self.avg_epfo,
            "avg_neg": self.avg_neg,
            "per_structure": {
                tag: vars(m) for tag, m in self.per_structure.items()
            },
        }
        if self.unknown_tags:
            obj["unknown_tags"] = self.unknown_tags
        return json.dumps(obj, indent=2)

    def to_csv(self) -> str:
        lines = ["tag,mrr,hits1,hits3,hits10,n"]
        for tag, m in self.per_structure.items():
            lines.append(f"{tag},{m.mrr:.6f},{m.hits1:.6f},{m.hits3:.6f},"
                         f"{m.hits10:.6f},{m.n_queries}")
        return "\n".join(lines) + "\n"


def filtered_rank(scores: np.ndarray, target: int, filter_out) -> float:
    """Rank of the target among entities not filtered out.

    rank = 1 + (# competitors scoring strictly higher) + 0.5 * (# ties).
    """
    scores = np.asarray(scores)
    if not (0 <= target < scores.shape[0]):
        raise IndexError(f"target out of range: {target}")
    if target in filter_out:
        raise ValueError("target must not be in the filter set")
    keep = np.ones(scores.shape[0], dtype=bool)
    if filter_out:
        keep[np.fromiter(filter_out, dtype=np.int64)] = False
    keep[target] = False
    competitors = scores[keep]
    t = scores[target]
    return 1.0 + np.count_nonzero(competitors > t) \
               + 0.5 * np.count_nonzero(competitors == t)


def _query_metrics(scores: np.ndarray, lq: LabeledQuery) -> tuple[float, ...]:
    """Mean reciprocal rank and hit indicators over the query's hard answers."""
    known = set(lq.easy) | set(lq.hard)
    rr, h1, h3, h10 = 0.0, 0.0, 0.0, 0.0
    for a in lq.hard:
        rank = filtered_rank(scores, a, known - {a})
        rr += 1.0 / rank
        h1 += rank <= 1
        h3 += rank <= 3
        h10 += rank <= 10
    n = len(lq.hard)
    return rr / n, h1 / n, h3 / n, h10 / n


def evaluate(params: Parameters, config: ModelConfig,
             queries_by_tag: dict[str, list[LabeledQuery]]) -> EvalReport:
    """Score every query once against all entities, then rank hard answers."""
    ent = entity_matrix(params, config)
    per_structure: dict[str, StructureMetrics] = {}
    unknown: list[str] = []
    rel_cache: dict = {}
    for tag, items in queries_by_tag.items():
        if tag not in EPFO_TAGS and tag not in NEGATION_TAGS:
            unknown.append(tag)
            continue
        if not items:
            continue
        sums = np.zeros(4)
        for lq in items:
            if not lq.hard:
                raise ValueError(f"{tag}: evaluation query with empty hard answers")
            s_q = embed_query(params, config, lq.query, rel_cache)
            scores = ent @ s_q
            sums += np.asarray(_query_metrics(scores, lq))
        mrr, h1, h3, h10 = sums / len(items)
        per_structure[tag] = StructureMetrics(mrr, h1, h3, h10, len(items))

    def _avg(tags):
        vals = [per_structure[t].mrr for t in tags if t in per_structure]
        return float(np.mean(vals)) if vals else float("nan")

    return EvalReport(per_structure, _avg(EPFO_TAGS), _avg(NEGATION_TAGS), unknown)


def random_baseline_mrr(num_entities: int,
                        queries: list[LabeledQuery]) -> float:
    """Exact expected filtered MRR of a uniformly random scorer.

    With m competitors left after filtering, the target's rank is uniform
    on 1..m+1, so its expected reciprocal rank is H_{m+1} / (m+1).
    Aggregation mirrors `evaluate` (per query, then across queries).
    """
    if not queries:
        return float("nan")
    # harmonic prefix sums up to the largest possible candidate count
    H = np.concatenate(([0.0], np.cumsum(1.0 / np.arange(1, num_entities + 1))))
    total = 0.0
    for lq in queries:
        known = len(set(lq.easy) | set(lq.hard))
        m = num_entities - known          # competitors after filtering
        expected_rr = H[m + 1] / (m + 1)
        total += expected_rr              # identical for every hard answer
    return total / len(queries)
