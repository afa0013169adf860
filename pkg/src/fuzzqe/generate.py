"""Sampling labeled queries of the 14 canonical structures from a graph.

Instances are built answer-first: pick an entity that will be an answer,
then walk inverse edges to instantiate each projection chain, so positive
branches are non-empty by construction.  Negated branches are seeded from
the positive branch's answer set so the negation actually bites, then the
whole query is checked against the traversal oracle; dead ends retry up to
a budget.  Shortfalls are reported, never papered over.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kg import GraphView, KnowledgeGraph
from .oracle import answer_query, split_answers
from .query import (CANONICAL_TAGS, LabeledQuery, Query, encode_query,
                    instantiate, write_labeled_jsonl)

__all__ = ["GenConfig", "generate", "sample_structure_instance", "DeadEndWalk"]


class DeadEndWalk(Exception):
    """Backward walk hit an entity without the required incoming edges."""


@dataclass
class GenConfig:
    # counts[split][tag] = number of queries to emit
    counts: dict[str, dict[str, int]]
    max_answers: int = 100      # cap on |easy| + |hard| for eval queries
    seed: int = 0
    max_retries: int = 128      # sampling attempts per requested query

    def __post_init__(self):
        for split, per_tag in self.counts.items():
            if split not in _SPLIT_VIEWS:
                raise ValueError(f"unknown split {split!r}")
            for tag, n in per_tag.items():
                if tag not in CANONICAL_TAGS:
                    raise ValueError(f"unknown structure tag {tag!r}")
                if n < 0:
                    raise ValueError("counts must be >= 0")
        if self.max_answers < 1:
            raise ValueError("max_answers must be >= 1")


_SPLIT_VIEWS = {"train": GraphView.TRAIN,
                "valid": GraphView.TRAIN_VALID,
                "test": GraphView.FULL}


def _pick_edge(rng, kg: KnowledgeGraph, view: GraphView) -> tuple[int, int, int]:
    edges = kg.view_edges(view)
    if len(edges) == 0:
        raise DeadEndWalk("view has no edges")
    h, r, t = edges[rng.integers(len(edges))]
    return int(h), int(r), int(t)


def _inv_step(rng, kg: KnowledgeGraph, view: GraphView, e: int) -> tuple[int, int]:
    """Uniform incoming (head, relation) of e in the view."""
    incoming = [(int(h), r) for r in range(kg.num_relations)
                for h in kg.neighbors(view, e, r, "inv")]
    if not incoming:
        raise DeadEndWalk(f"no incoming edges at entity {e}")
    return incoming[rng.integers(len(incoming))]


def _inv_chain(rng, kg, view, e: int, hops: int) -> tuple[int, list[int]]:
    """Walk `hops` inverse steps from e; returns (anchor, relations fwd-order)."""
    rels: list[int] = []
    cur = e
    for _ in range(hops):
        cur, r = _inv_step(rng, kg, view, cur)
        rels.append(r)
    return cur, rels[::-1]


def _negated_branch(rng, kg, view, positive_answers: np.ndarray) -> tuple[int, int]:
    """(anchor, relation) for a branch that will sit under a negation.

    Alternates between seeding from the positive branch's answers, which
    makes the negation bite into them, and an unrelated random edge; either
    way the final instance is checked for non-vacuousness and retried.
    """
    if rng.integers(2) and len(positive_answers):
        seed = int(positive_answers[rng.integers(len(positive_answers))])
        return _inv_step(rng, kg, view, seed)
    h, r, _ = _pick_edge(rng, kg, view)
    return h, r


def _nonvacuous(kg, view, q: Query) -> Query:
    # the negated branch may swallow the whole positive set; retry then
    if len(answer_query(kg, view, q)) == 0:
        raise DeadEndWalk(f"{q.tag} instance has empty answers")
    return q


def sample_structure_instance(rng: np.random.Generator, kg: KnowledgeGraph,
                              view: GraphView, tag: str) -> Query:
    """One random instance of a canonical structure with answers on the view."""
    if tag == "1p":
        h, r, _ = _pick_edge(rng, kg, view)
        return instantiate(tag, [h], [r])
    if tag in ("2p", "3p"):
        hops = 2 if tag == "2p" else 3
        _, _, t = _pick_edge(rng, kg, view)
        a, rels = _inv_chain(rng, kg, view, t, hops)
        return instantiate(tag, [a], rels)
    if tag in ("2i", "3i"):
        n = 2 if tag == "2i" else 3
        _, _, t = _pick_edge(rng, kg, view)
        anchors, rels = [], []
        for _ in range(n):
            a, r = _inv_step(rng, kg, view, t)
            anchors.append(a)
            rels.append(r)
        return instantiate(tag, anchors, rels)
    if tag == "ip":
        m, r3, _ = _pick_edge(rng, kg, view)
        a1, r1 = _inv_step(rng, kg, view, m)
        a2, r2 = _inv_step(rng, kg, view, m)
        return instantiate(tag, [a1, a2], [r1, r2, r3])
    if tag == "pi":
        _, _, t = _pick_edge(rng, kg, view)
        a1, chain = _inv_chain(rng, kg, view, t, 2)
        a2, r3 = _inv_step(rng, kg, view, t)
        return instantiate(tag, [a1, a2], chain + [r3])
    if tag == "2u":
        h1, r1, _ = _pick_edge(rng, kg, view)
        h2, r2, _ = _pick_edge(rng, kg, view)
        return instantiate(tag, [h1, h2], [r1, r2])
    if tag == "up":
        m, r3, _ = _pick_edge(rng, kg, view)
        a1, r1 = _inv_step(rng, kg, view, m)
        h2, r2, _ = _pick_edge(rng, kg, view)
        return instantiate(tag, [a1, h2], [r1, r2, r3])
    if tag in ("2in", "3in"):
        n_pos = 1 if tag == "2in" else 2
        _, _, t = _pick_edge(rng, kg, view)
        anchors, rels = [], []
        for _ in range(n_pos):
            a, r = _inv_step(rng, kg, view, t)
            anchors.append(a)
            rels.append(r)
        pos = instantiate("1p", anchors[:1], rels[:1]) if n_pos == 1 \
            else instantiate("2i", anchors, rels)
        a_neg, r_neg = _negated_branch(rng, kg, view,
                                       answer_query(kg, view, pos))
        return _nonvacuous(kg, view, instantiate(tag, anchors + [a_neg],
                                                 rels + [r_neg]))
    if tag == "inp":
        m, r3, _ = _pick_edge(rng, kg, view)
        a1, r1 = _inv_step(rng, kg, view, m)
        pos = instantiate("1p", [a1], [r1])
        a2, r2 = _negated_branch(rng, kg, view, answer_query(kg, view, pos))
        return _nonvacuous(kg, view, instantiate(tag, [a1, a2], [r1, r2, r3]))
    if tag == "pin":
        _, _, t = _pick_edge(rng, kg, view)
        a1, chain = _inv_chain(rng, kg, view, t, 2)
        pos = instantiate("2p", [a1], chain)
        a2, r3 = _negated_branch(rng, kg, view, answer_query(kg, view, pos))
        return _nonvacuous(kg, view, instantiate(tag, [a1, a2], chain + [r3]))
    if tag == "pni":
        _, _, t = _pick_edge(rng, kg, view)
        a2, r3 = _inv_step(rng, kg, view, t)
        pos = instantiate("1p", [a2], [r3])
        pos_answers = answer_query(kg, view, pos)
        if rng.integers(2) and len(pos_answers):
            seed = int(pos_answers[rng.integers(len(pos_answers))])
        else:
            _, _, seed = _pick_edge(rng, kg, view)
        a1, chain = _inv_chain(rng, kg, view, seed, 2)
        return _nonvacuous(kg, view, instantiate(tag, [a1, a2], chain + [r3]))
    raise ValueError(f"unknown structure tag {tag!r}")


def _label(kg: KnowledgeGraph, q: Query, split: str) -> LabeledQuery | None:
    """Easy/hard answers per split convention; None when unusable."""
    if split == "train":
        easy = answer_query(kg, GraphView.TRAIN, q)
        if len(easy) == 0:
            return None
        return LabeledQuery(q, tuple(easy.tolist()), ())
    smaller = GraphView.TRAIN if split == "valid" else GraphView.TRAIN_VALID
    easy, hard = split_answers(kg, q, smaller)
    if len(hard) == 0:
        return None
    return LabeledQuery(q, tuple(easy.tolist()), tuple(hard.tolist()))


def generate(kg: KnowledgeGraph, cfg: GenConfig, out_dir) -> dict:
    """Emit `<split>-<tag>.jsonl` files plus a manifest of achieved counts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"seed": cfg.seed, "max_answers": cfg.max_answers,
                "requested": {}, "achieved": {}, "shortfall": {}}
    split_names = sorted(cfg.counts)
    for split in split_names:
        view = _SPLIT_VIEWS[split]
        for tag_idx, tag in enumerate(CANONICAL_TAGS):
            want = cfg.counts[split].get(tag, 0)
            if want == 0:
                continue
            rng = np.random.default_rng(np.random.SeedSequence(
                cfg.seed, spawn_key=(split_names.index(split), tag_idx)))
            seen: set[str] = set()
            got: list[LabeledQuery] = []
            budget = want * cfg.max_retries
            while len(got) < want and budget > 0:
                budget -= 1
                try:
                    q = sample_structure_instance(rng, kg, view, tag)
                except DeadEndWalk:
                    continue
                key = encode_query(q)
                if key in seen:
                    continue
                lq = _label(kg, q, split)
                if lq is None:
                    continue
                if split != "train" and len(lq.easy) + len(lq.hard) > cfg.max_answers:
                    continue
                seen.add(key)
                got.append(lq)
            write_labeled_jsonl(out / f"{split}-{tag}.jsonl", got)
            manifest["requested"].setdefault(split, {})[tag] = want
            manifest["achieved"].setdefault(split, {})[tag] = len(got)
            if len(got) < want:
                manifest["shortfall"].setdefault(split, {})[tag] = want - len(got)
                warnings.warn(f"{split}/{tag}: produced {len(got)} of {want} "
                              f"requested queries before retry budget ran out")
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest
