"""First-order query trees: anchors, relation projections, and/or/not.

Queries are immutable trees.  Anchors sit at the leaves, the root is the
free target variable.  And/Or take two or more children and are treated as
unordered; canonicalization sorts children by a structural key so that two
commutatively-equal queries serialize identically.

The 14 benchmark structure templates (1p ... pni) are provided both as
shape signatures for classification and as instantiable builders.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Union

__all__ = [
    "Anchor", "Proj", "And", "Or", "Not", "Node",
    "Query", "LabeledQuery",
    "CANONICAL_TAGS", "EPFO_TAGS", "NEGATION_TAGS", "TRAIN_TAGS", "EVAL_ONLY_TAGS",
    "canonical_templates", "instantiate", "template_slots",
    "classify", "validate_node",
    "parse_query", "encode_query", "canonicalize",
    "read_labeled_jsonl", "write_labeled_jsonl",
    "QueryFormatError",
]


class QueryFormatError(ValueError):
    """Raised for malformed or invalid query encodings."""


@dataclass(frozen=True)
class Anchor:
    ent: int


@dataclass(frozen=True)
class Proj:
    rel: int
    arg: "Node"


@dataclass(frozen=True)
class And:
    args: tuple["Node", ...]


@dataclass(frozen=True)
class Or:
    args: tuple["Node", ...]


@dataclass(frozen=True)
class Not:
    arg: "Node"


Node = Union[Anchor, Proj, And, Or, Not]


@dataclass(frozen=True)
class Query:
    root: Node
    tag: str = "custom"


@dataclass(frozen=True)
class LabeledQuery:
    query: Query
    easy: tuple[int, ...]   # answers derivable on the smaller graph view
    hard: tuple[int, ...]   # answers requiring at least one held-out edge

    def __post_init__(self):
        if set(self.easy) & set(self.hard):
            raise QueryFormatError("easy and hard answer sets overlap")


# Shape signatures ignore entity/relation ids; And/Or children are sorted so
# classification is invariant to child order.
def shape_key(node: Node):
    if isinstance(node, Anchor):
        return ("anchor",)
    if isinstance(node, Proj):
        return ("proj", shape_key(node.arg))
    if isinstance(node, Not):
        return ("not", shape_key(node.arg))
    op = "and" if isinstance(node, And) else "or"
    return (op,) + tuple(sorted(shape_key(a) for a in node.args))


def struct_key(node: Node):
    """Full structural key including ids; used for canonical child ordering."""
    if isinstance(node, Anchor):
        return ("anchor", node.ent)
    if isinstance(node, Proj):
        return ("proj", node.rel, struct_key(node.arg))
    if isinstance(node, Not):
        return ("not", struct_key(node.arg))
    op = "and" if isinstance(node, And) else "or"
    return (op,) + tuple(sorted(struct_key(a) for a in node.args))


def canonicalize(node: Node) -> Node:
    """Sort And/Or children by structural key, recursively."""
    if isinstance(node, (Anchor,)):
        return node
    if isinstance(node, Proj):
        return Proj(node.rel, canonicalize(node.arg))
    if isinstance(node, Not):
        return Not(canonicalize(node.arg))
    args = tuple(sorted((canonicalize(a) for a in node.args), key=struct_key))
    return And(args) if isinstance(node, And) else Or(args)


# ---------------------------------------------------------------------------
# Canonical benchmark structures.
#
# Each template is written as a builder over anchor slots a0,a1,... and
# relation slots r0,r1,... in the order a backward sampler instantiates them.
# ---------------------------------------------------------------------------

def _t_1p(a, r):  return Proj(r[0], Anchor(a[0]))
def _t_2p(a, r):  return Proj(r[1], Proj(r[0], Anchor(a[0])))
def _t_3p(a, r):  return Proj(r[2], Proj(r[1], Proj(r[0], Anchor(a[0]))))
def _t_2i(a, r):  return And((Proj(r[0], Anchor(a[0])), Proj(r[1], Anchor(a[1]))))
def _t_3i(a, r):  return And((Proj(r[0], Anchor(a[0])), Proj(r[1], Anchor(a[1])),
                              Proj(r[2], Anchor(a[2]))))
def _t_ip(a, r):  return Proj(r[2], _t_2i(a, r))
def _t_pi(a, r):  return And((_t_2p(a, r), Proj(r[2], Anchor(a[1]))))
def _t_2u(a, r):  return Or((Proj(r[0], Anchor(a[0])), Proj(r[1], Anchor(a[1]))))
def _t_up(a, r):  return Proj(r[2], _t_2u(a, r))
def _t_2in(a, r): return And((Proj(r[0], Anchor(a[0])), Not(Proj(r[1], Anchor(a[1])))))
def _t_3in(a, r): return And((Proj(r[0], Anchor(a[0])), Proj(r[1], Anchor(a[1])),
                              Not(Proj(r[2], Anchor(a[2])))))
def _t_inp(a, r): return Proj(r[2], _t_2in(a, r))
def _t_pin(a, r): return And((_t_2p(a, r), Not(Proj(r[2], Anchor(a[1])))))
def _t_pni(a, r): return And((Not(_t_2p(a, r)), Proj(r[2], Anchor(a[1]))))

_BUILDERS = {
    "1p": _t_1p, "2p": _t_2p, "3p": _t_3p,
    "2i": _t_2i, "3i": _t_3i, "ip": _t_ip, "pi": _t_pi,
    "2u": _t_2u, "up": _t_up,
    "2in": _t_2in, "3in": _t_3in, "inp": _t_inp, "pin": _t_pin, "pni": _t_pni,
}

# (n_anchors, n_relations) per template.
_SLOTS = {
    "1p": (1, 1), "2p": (1, 2), "3p": (1, 3),
    "2i": (2, 2), "3i": (3, 3), "ip": (2, 3), "pi": (2, 3),
    "2u": (2, 2), "up": (2, 3),
    "2in": (2, 2), "3in": (3, 3), "inp": (2, 3), "pin": (2, 3), "pni": (2, 3),
}

CANONICAL_TAGS = tuple(_BUILDERS)
EPFO_TAGS = ("1p", "2p", "3p", "2i", "3i", "pi", "ip", "2u", "up")
NEGATION_TAGS = ("2in", "3in", "inp", "pin", "pni")
TRAIN_TAGS = ("1p", "2p", "3p", "2i", "3i", "2in", "3in", "inp", "pin", "pni")
EVAL_ONLY_TAGS = ("ip", "pi", "2u", "up")


def template_slots(tag: str) -> tuple[int, int]:
    """Number of (anchor, relation) slots a template consumes."""
    return _SLOTS[tag]


def instantiate(tag: str, anchors: list[int], rels: list[int]) -> Query:
    """Fill a canonical template with concrete ids."""
    na, nr = _SLOTS[tag]
    if len(anchors) != na or len(rels) != nr:
        raise QueryFormatError(
            f"template {tag} needs {na} anchors / {nr} relations, "
            f"got {len(anchors)} / {len(rels)}")
    return Query(_BUILDERS[tag]([int(a) for a in anchors],
                                [int(r) for r in rels]), tag)


def canonical_templates() -> dict[str, Query]:
    """Representative instance of each of the 14 canonical shapes.

    Anchor and relation slots get distinct placeholder ids so that e.g.
    the 2u template shows two distinct anchors.
    """
    out = {}
    for tag, (na, nr) in _SLOTS.items():
        out[tag] = instantiate(tag, list(range(na)), list(range(nr)))
    return out


_SHAPE_TO_TAG = {shape_key(q.root): t for t, q in canonical_templates().items()}


def classify(q: Query) -> str:
    """Canonical tag of the query's shape, or "custom"."""
    return _SHAPE_TO_TAG.get(shape_key(q.root), "custom")


# ---------------------------------------------------------------------------
# Validation and JSON wire format
# ---------------------------------------------------------------------------

def validate_node(node: Node, num_entities: int | None = None,
                  num_relations: int | None = None, *, is_root: bool = True) -> None:
    """Check arities and id ranges; reject bare-Anchor and bare-Not roots.

    A root-level Not denotes a near-universe complement and is rejected at
    the query level; negation below the root is unrestricted.
    """
    if is_root and isinstance(node, Anchor):
        raise QueryFormatError("root must not be a bare anchor")
    if is_root and isinstance(node, Not):
        raise QueryFormatError("root-level negation is not answerable")
    if isinstance(node, Anchor):
        if node.ent < 0 or (num_entities is not None and node.ent >= num_entities):
            raise QueryFormatError(f"entity id out of range: {node.ent}")
        return
    if isinstance(node, Proj):
        if node.rel < 0 or (num_relations is not None and node.rel >= num_relations):
            raise QueryFormatError(f"relation id out of range: {node.rel}")
        validate_node(node.arg, num_entities, num_relations, is_root=False)
        return
    if isinstance(node, Not):
        validate_node(node.arg, num_entities, num_relations, is_root=False)
        return
    if isinstance(node, (And, Or)):
        if len(node.args) < 2:
            op = "and" if isinstance(node, And) else "or"
            raise QueryFormatError(f"{op} needs >= 2 children, got {len(node.args)}")
        for a in node.args:
            validate_node(a, num_entities, num_relations, is_root=False)
        return
    raise QueryFormatError(f"unknown node type {type(node).__name__}")


def _node_to_obj(node: Node) -> dict:
    if isinstance(node, Anchor):
        return {"op": "anchor", "ent": node.ent}
    if isinstance(node, Proj):
        return {"op": "proj", "rel": node.rel, "arg": _node_to_obj(node.arg)}
    if isinstance(node, Not):
        return {"op": "not", "arg": _node_to_obj(node.arg)}
    op = "and" if isinstance(node, And) else "or"
    return {"op": op, "args": [_node_to_obj(a) for a in node.args]}


def _node_from_obj(obj) -> Node:
    if not isinstance(obj, dict) or "op" not in obj:
        raise QueryFormatError(f"expected query object, got {obj!r}")
    op = obj["op"]
    if op == "anchor":
        ent = obj.get("ent")
        if not isinstance(ent, int) or isinstance(ent, bool):
            raise QueryFormatError(f"anchor needs integer 'ent', got {ent!r}")
        return Anchor(ent)
    if op == "proj":
        rel = obj.get("rel")
        if not isinstance(rel, int) or isinstance(rel, bool):
            raise QueryFormatError(f"proj needs integer 'rel', got {rel!r}")
        if "arg" not in obj:
            raise QueryFormatError("proj needs exactly one 'arg'")
        return Proj(rel, _node_from_obj(obj["arg"]))
    if op == "not":
        if "arg" not in obj:
            raise QueryFormatError("not needs exactly one 'arg'")
        return Not(_node_from_obj(obj["arg"]))
    if op in ("and", "or"):
        args = obj.get("args")
        if not isinstance(args, list) or len(args) < 2:
            raise QueryFormatError(f"{op} needs a list of >= 2 children")
        children = tuple(_node_from_obj(a) for a in args)
        return And(children) if op == "and" else Or(children)
    raise QueryFormatError(f"unknown op tag {op!r}")


def parse_query(text: str | dict, num_entities: int | None = None,
                num_relations: int | None = None) -> Query:
    """Parse the JSON wire format into a validated Query."""
    obj = json.loads(text) if isinstance(text, str) else text
    root = _node_from_obj(obj)
    validate_node(root, num_entities, num_relations)
    q = Query(root)
    return Query(root, classify(q))


def encode_query(q: Query) -> str:
    """Serialize to canonical JSON (And/Or children in canonical order)."""
    return json.dumps(_node_to_obj(canonicalize(q.root)), separators=(",", ":"))


def read_labeled_jsonl(path) -> list[LabeledQuery]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                q = parse_query(rec["query"])
                if rec.get("tag") and rec["tag"] != "custom":
                    q = Query(q.root, rec["tag"])
                out.append(LabeledQuery(q, tuple(sorted(rec["easy"])),
                                        tuple(sorted(rec["hard"]))))
            except (KeyError, json.JSONDecodeError, QueryFormatError) as exc:
                raise QueryFormatError(f"{path}:{ln}: {exc}") from exc
    return out


def write_labeled_jsonl(path, items: list[LabeledQuery]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lq in items:
            rec = {"tag": lq.query.tag,
                   "query": json.loads(encode_query(lq.query)),
                   "easy": sorted(lq.easy), "hard": sorted(lq.hard)}
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
