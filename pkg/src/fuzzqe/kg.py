"""Knowledge graph loading and adjacency indexing.

A graph is a set of (head, relation, tail) triples over dense 0-based ids,
split into train / valid / test edge files.  Three nested views are served:
Train, TrainValid (train + valid) and Full (all splits).  Forward and
inverse adjacency are materialized per (view, relation) at load time; the
structure is immutable afterwards and safe for concurrent reads.
"""

from __future__ import annotations

import enum
from pathlib import Path

import numpy as np

__all__ = ["GraphView", "KnowledgeGraph", "GraphFormatError", "load_graph"]


class GraphFormatError(ValueError):
    """Malformed vocabulary or edge input; message carries file and line."""


class GraphView(enum.IntEnum):
    # Ordered by inclusion: every Train edge is in TrainValid, etc.
    TRAIN = 0
    TRAIN_VALID = 1
    FULL = 2


def _dedup_sort(edges: np.ndarray) -> np.ndarray:
    if edges.size == 0:
        return edges.reshape(0, 3)
    return np.unique(edges, axis=0)   # unique sorts lexicographically


class KnowledgeGraph:
    """Immutable triple store with per-(view, relation) adjacency."""

    def __init__(self, num_entities: int, num_relations: int,
                 train_edges, valid_edges, test_edges,
                 entity_names: list[str] | None = None,
                 relation_names: list[str] | None = None):
        self.num_entities = int(num_entities)
        self.num_relations = int(num_relations)
        self.entity_names = entity_names or [f"e{i}" for i in range(num_entities)]
        self.relation_names = relation_names or [f"r{i}" for i in range(num_relations)]
        self.train_edges = _dedup_sort(np.asarray(train_edges, dtype=np.int64).reshape(-1, 3))
        self.valid_edges = _dedup_sort(np.asarray(valid_edges, dtype=np.int64).reshape(-1, 3))
        self.test_edges = _dedup_sort(np.asarray(test_edges, dtype=np.int64).reshape(-1, 3))
        for name, edges in (("train", self.train_edges), ("valid", self.valid_edges),
                            ("test", self.test_edges)):
            self._check_ranges(name, edges)
        self._view_edges: dict[GraphView, np.ndarray] = {}
        self._fwd: dict[GraphView, list[dict[int, np.ndarray]]] = {}
        self._inv: dict[GraphView, list[dict[int, np.ndarray]]] = {}
        for view in GraphView:
            self._build_view(view)

    def _check_ranges(self, split: str, edges: np.ndarray) -> None:
        if edges.size == 0:
            return
        if edges.min() < 0 or edges[:, 0].max() >= self.num_entities \
                or edges[:, 2].max() >= self.num_entities \
                or edges[:, 1].max() >= self.num_relations:
            raise GraphFormatError(f"{split} split contains out-of-range ids")

    def _build_view(self, view: GraphView) -> None:
        parts = [self.train_edges]
        if view >= GraphView.TRAIN_VALID:
            parts.append(self.valid_edges)
        if view >= GraphView.FULL:
            parts.append(self.test_edges)
        edges = _dedup_sort(np.concatenate(parts, axis=0))
        self._view_edges[view] = edges
        fwd = [dict() for _ in range(self.num_relations)]
        inv = [dict() for _ in range(self.num_relations)]
        # group by (relation, head) for forward and (relation, tail) for inverse
        for adj, key_col, val_col in ((fwd, 0, 2), (inv, 2, 0)):
            if edges.size == 0:
                continue
            order = np.lexsort((edges[:, val_col], edges[:, key_col], edges[:, 1]))
            e = edges[order]
            boundaries = np.flatnonzero(
                (np.diff(e[:, 1]) != 0) | (np.diff(e[:, key_col]) != 0)) + 1
            for chunk in np.split(e, boundaries):
                r, k = int(chunk[0, 1]), int(chunk[0, key_col])
                adj[r][k] = np.unique(chunk[:, val_col])
        self._fwd[view] = fwd
        self._inv[view] = inv

    def view_edges(self, view: GraphView) -> np.ndarray:
        """Deduplicated (n, 3) edge array of the view, lexicographically sorted."""
        return self._view_edges[view]

    def neighbors(self, view: GraphView, e: int, r: int,
                  direction: str = "fwd") -> np.ndarray:
        """Sorted tails of (e, r, *) for "fwd", heads of (*, r, e) for "inv"."""
        if not (0 <= e < self.num_entities):
            raise IndexError(f"entity id out of range: {e}")
        if not (0 <= r < self.num_relations):
            raise IndexError(f"relation id out of range: {r}")
        if direction == "fwd":
            table = self._fwd[view]
        elif direction == "inv":
            table = self._inv[view]
        else:
            raise ValueError(f"direction must be 'fwd' or 'inv', got {direction!r}")
        return table[r].get(e, _EMPTY)

    def heads_with_relation(self, view: GraphView, r: int) -> np.ndarray:
        """Sorted entity ids that have at least one outgoing r-edge in the view."""
        return np.fromiter(sorted(self._fwd[view][r].keys()), dtype=np.int64)

    def save(self, out_dir) -> None:
        """Write the TSV directory format read by `load_graph`."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "entities.tsv", "w", encoding="utf-8") as fh:
            for i, name in enumerate(self.entity_names):
                fh.write(f"{i}\t{name}\n")
        with open(out / "relations.tsv", "w", encoding="utf-8") as fh:
            for i, name in enumerate(self.relation_names):
                fh.write(f"{i}\t{name}\n")
        for split, edges in (("train", self.train_edges), ("valid", self.valid_edges),
                             ("test", self.test_edges)):
            with open(out / f"{split}.tsv", "w", encoding="utf-8") as fh:
                for h, r, t in edges:
                    fh.write(f"{h}\t{r}\t{t}\n")


_EMPTY = np.empty(0, dtype=np.int64)


def _read_vocab(path: Path) -> list[str]:
    names: dict[int, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise GraphFormatError(f"{path}:{ln}: expected 'id<TAB>name'")
            try:
                idx = int(parts[0])
            except ValueError:
                raise GraphFormatError(f"{path}:{ln}: non-integer id {parts[0]!r}") from None
            if idx in names:
                raise GraphFormatError(f"{path}:{ln}: duplicate vocabulary id {idx}")
            names[idx] = parts[1]
    if sorted(names) != list(range(len(names))):
        raise GraphFormatError(f"{path}: ids are not contiguous from 0")
    return [names[i] for i in range(len(names))]


def _read_edges(path: Path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise GraphFormatError(f"{path}:{ln}: expected 'head<TAB>rel<TAB>tail'")
            try:
                rows.append((int(parts[0]), int(parts[1]), int(parts[2])))
            except ValueError:
                raise GraphFormatError(f"{path}:{ln}: non-integer field") from None
    return np.asarray(rows, dtype=np.int64).reshape(-1, 3)


def load_graph(dir_path) -> KnowledgeGraph:
    """Load entities.tsv / relations.tsv / {train,valid,test}.tsv from a directory."""
    d = Path(dir_path)
    for fname in ("entities.tsv", "relations.tsv", "train.tsv", "valid.tsv", "test.tsv"):
        if not (d / fname).exists():
            raise GraphFormatError(f"missing {fname} in {d}")
    entity_names = _read_vocab(d / "entities.tsv")
    relation_names = _read_vocab(d / "relations.tsv")
    splits = {}
    for split in ("train", "valid", "test"):
        edges = _read_edges(d / f"{split}.tsv")
        if edges.size:
            if edges[:, [0, 2]].max() >= len(entity_names) or edges.min() < 0:
                bad = edges[(edges[:, 0] >= len(entity_names))
                            | (edges[:, 2] >= len(entity_names))
                            | (edges < 0).any(axis=1)][0]
                raise GraphFormatError(
                    f"{d / (split + '.tsv')}: dangling id in edge {tuple(bad)}")
            if edges[:, 1].max() >= len(relation_names):
                raise GraphFormatError(f"{d / (split + '.tsv')}: dangling relation id")
        splits[split] = edges
    return KnowledgeGraph(len(entity_names), len(relation_names),
                          splits["train"], splits["valid"], splits["test"],
                          entity_names, relation_names)
