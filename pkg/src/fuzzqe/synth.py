"""Synthetic knowledge graphs for verification suites and smoke testing.

`random_kg` draws unstructured random triples and is good for exercising
machinery.  `type_cycle_kg` builds a compositional graph whose edges follow
latent entity types: relation r links every entity of type t to every
entity of type (t + shift_r) mod T.  Held-out edges are then fully implied
by the visible ones, so an embedding model that recovers the type structure
can predict them; relation composition corresponds to composing the type
shifts, which is what makes multi-hop and set-algebra queries answerable.
"""

from __future__ import annotations

import numpy as np

from .kg import KnowledgeGraph

__all__ = ["random_kg", "type_cycle_kg"]


def random_kg(rng: np.random.Generator, num_entities: int, num_relations: int,
              n_edges: int, split=(0.8, 0.1, 0.1)) -> KnowledgeGraph:
    """Uniform random triples split into train/valid/test."""
    edges = np.stack([rng.integers(num_entities, size=n_edges),
                      rng.integers(num_relations, size=n_edges),
                      rng.integers(num_entities, size=n_edges)], axis=1)
    edges = np.unique(edges, axis=0)
    perm = rng.permutation(len(edges))
    n_train = int(len(edges) * split[0])
    n_valid = int(len(edges) * split[1])
    return KnowledgeGraph(num_entities, num_relations,
                          edges[perm[:n_train]],
                          edges[perm[n_train:n_train + n_valid]],
                          edges[perm[n_train + n_valid:]])


def type_cycle_kg(rng: np.random.Generator, num_entities: int = 300,
                  num_relations: int = 6, num_types: int = 6,
                  holdout: float = 0.10) -> KnowledgeGraph:
    """Compositional typed graph with roughly `holdout` of edges held out.

    Holding out individual edges of a type-complete graph almost never
    creates hard multi-hop answers (every surviving intermediate still
    reaches the target), so edges are withheld in (relation, tail) bundles:
    all in-edges of a chosen tail under a chosen relation move together to
    the valid or test split.  A bundled tail becomes genuinely unreachable
    by that relation on the smaller views, yet its type membership stays
    observable through every other relation, so the held-out edges remain
    predictable from structure.
    """
    if num_entities % num_types:
        raise ValueError("num_entities must be divisible by num_types")
    cell = num_entities // num_types
    types = rng.permutation(np.repeat(np.arange(num_types), cell))
    # each relation shifts types by a fixed nonzero offset
    shifts = 1 + rng.permutation(num_types - 1)[:num_relations] \
        if num_relations <= num_types - 1 else \
        1 + rng.integers(num_types - 1, size=num_relations)
    rows = []
    members = [np.flatnonzero(types == t) for t in range(num_types)]
    for r in range(num_relations):
        for t in range(num_types):
            target = (t + shifts[r]) % num_types
            hs = members[t]
            ts = members[target]
            grid = np.stack(np.meshgrid(hs, ts, indexing="ij"), axis=-1).reshape(-1, 2)
            rel = np.full((len(grid), 1), r, dtype=np.int64)
            rows.append(np.concatenate([grid[:, :1], rel, grid[:, 1:]], axis=1))
    edges = np.concatenate(rows, axis=0)

    n_bundles = max(2, round(holdout * len(edges) / cell))
    pairs = np.stack([np.repeat(np.arange(num_relations), num_entities),
                      np.tile(np.arange(num_entities), num_relations)], axis=1)
    chosen = pairs[rng.choice(len(pairs), size=n_bundles, replace=False)]
    held_mask = np.zeros(len(edges), dtype=bool)
    to_valid = np.zeros(len(edges), dtype=bool)
    for i, (r, tail) in enumerate(chosen):
        bundle = (edges[:, 1] == r) & (edges[:, 2] == tail)
        held_mask |= bundle
        if i % 2 == 0:
            to_valid |= bundle
    return KnowledgeGraph(num_entities, num_relations,
                          edges[~held_mask],
                          edges[to_valid],
                          edges[held_mask & ~to_valid])
