"""Ground-truth query answering by graph traversal.

`answer_query` evaluates a query under crisp set semantics: projection is
edge traversal, conjunction is intersection, disjunction union, negation
complement against the full entity set.

`symbolic_fuzzy_eval` evaluates the same query over explicit fuzzy sets in
[0,1]^|E|, folding each projection target over its incoming sources with
the t-conorm of the chosen logic.  On {0,1} inputs it reproduces the crisp
answer indicator exactly, which is what the cross-checking tests rely on.
"""

from __future__ import annotations

import numpy as np

from .kg import GraphView, KnowledgeGraph
from .logic import Logic
from .query import And, Anchor, Node, Not, Or, Proj, Query

__all__ = ["answer_query", "split_answers", "symbolic_fuzzy_eval"]

# The fuzzy evaluator materializes |E|-sized vectors per node; it is a
# desk-scale testing tool, not a production scoring path.
MAX_SYMBOLIC_ENTITIES = 100_000


def _answer(kg: KnowledgeGraph, view: GraphView, node: Node) -> set[int]:
    if isinstance(node, Anchor):
        return {node.ent}
    if isinstance(node, Proj):
        src = _answer(kg, view, node.arg)
        out: set[int] = set()
        for x in src:
            out.update(kg.neighbors(view, x, node.rel, "fwd").tolist())
        return out
    if isinstance(node, And):
        sets = [_answer(kg, view, a) for a in node.args]
        out = sets[0]
        for s in sets[1:]:
            out = out & s
        return out
    if isinstance(node, Or):
        out = set()
        for a in node.args:
            out |= _answer(kg, view, a)
        return out
    if isinstance(node, Not):
        return set(range(kg.num_entities)) - _answer(kg, view, node.arg)
    raise TypeError(f"unknown node {type(node).__name__}")


def answer_query(kg: KnowledgeGraph, view: GraphView, q: Query | Node) -> np.ndarray:
    """Sorted entity ids satisfying the query on the given view."""
    node = q.root if isinstance(q, Query) else q
    return np.asarray(sorted(_answer(kg, view, node)), dtype=np.int64)


_NEXT_VIEW = {GraphView.TRAIN: GraphView.TRAIN_VALID,
              GraphView.TRAIN_VALID: GraphView.FULL}


def split_answers(kg: KnowledgeGraph, q: Query | Node,
                  eval_view: GraphView) -> tuple[np.ndarray, np.ndarray]:
    """Easy/hard answer split for evaluation queries.

    `eval_view` is the smaller view the easy answers are derivable on:
    Train for validation queries, TrainValid for test queries.  Hard
    answers are those appearing only once the next split's edges are added.
    """
    if eval_view not in _NEXT_VIEW:
        raise ValueError("eval_view must be Train (valid queries) or "
                         "TrainValid (test queries)")
    easy = answer_query(kg, eval_view, q)
    larger = answer_query(kg, _NEXT_VIEW[eval_view], q)
    hard = np.setdiff1d(larger, easy, assume_unique=True)
    return easy, hard


def _project_fuzzy(kg: KnowledgeGraph, view: GraphView, logic: Logic,
                   rel: int, src: np.ndarray) -> np.ndarray:
    """Fold source memberships into each target with the logic's t-conorm."""
    edges = kg.view_edges(view)
    mask = edges[:, 1] == rel
    heads, tails = edges[mask, 0], edges[mask, 2]
    s = src[heads]
    out = np.zeros(kg.num_entities)
    if logic is Logic.PRODUCT:
        # fold of a+b-ab over sources i is 1 - prod(1 - s_i)
        comp = np.ones(kg.num_entities)
        np.multiply.at(comp, tails, 1.0 - s)
        out = 1.0 - comp
    elif logic is Logic.GODEL:
        np.maximum.at(out, tails, s)
    else:  # Lukasiewicz: min(sum, 1)
        np.add.at(out, tails, s)
        out = np.minimum(out, 1.0)
    return out


def _fuzzy_eval(kg: KnowledgeGraph, view: GraphView, logic: Logic,
                node: Node) -> np.ndarray:
    if isinstance(node, Anchor):
        v = np.zeros(kg.num_entities)
        v[node.ent] = 1.0
        return v
    if isinstance(node, Proj):
        return _project_fuzzy(kg, view, logic, node.rel,
                              _fuzzy_eval(kg, view, logic, node.arg))
    if isinstance(node, Not):
        return 1.0 - _fuzzy_eval(kg, view, logic, node.arg)
    vs = [_fuzzy_eval(kg, view, logic, a) for a in node.args]
    out = vs[0]
    for v in vs[1:]:
        if isinstance(node, And):
            out = out * v if logic is Logic.PRODUCT else (
                np.minimum(out, v) if logic is Logic.GODEL
                else np.maximum(out + v - 1.0, 0.0))
        else:
            out = out + v - out * v if logic is Logic.PRODUCT else (
                np.maximum(out, v) if logic is Logic.GODEL
                else np.minimum(out + v, 1.0))
    return out


def symbolic_fuzzy_eval(kg: KnowledgeGraph, view: GraphView, q: Query | Node,
                        logic: Logic = Logic.PRODUCT) -> np.ndarray:
    """Exact fuzzy membership of every entity in the query's answer set."""
    if kg.num_entities > MAX_SYMBOLIC_ENTITIES:
        raise ValueError(
            f"symbolic evaluation refuses |E| > {MAX_SYMBOLIC_ENTITIES}")
    node = q.root if isinstance(q, Query) else q
    return _fuzzy_eval(kg, view, logic, node)
