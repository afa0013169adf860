#!/usr/bin/env python3
"""Convert the public BetaE-style benchmark dataset files (pickled query and
answer dictionaries plus id maps) into the TSV / JSON-Lines layout used by
the query-embedding pipeline.

Usage:
    convert.py <dataset_dir> <out_dir> [--verify] [--sample N]

Expected inputs in <dataset_dir>:
    id2ent.pkl, id2rel.pkl            id -> name maps
    train.txt, valid.txt, test.txt    tab-separated integer triples
    train-queries.pkl                 {structure: set of query tuples}
    train-answers.pkl                 {query: answer-id set}
    valid-queries.pkl, valid-easy-answers.pkl, valid-hard-answers.pkl
    test-queries.pkl,  test-easy-answers.pkl,  test-hard-answers.pkl

Outputs in <out_dir>:
    entities.tsv, relations.tsv, train.tsv, valid.tsv, test.tsv
    <split>-<tag>.jsonl               one labeled query per line
    conversion-summary.json

Entity and relation ids pass through unchanged.  Query tuples use the
benchmark's sentinels inside relation chains: -2 applies negation, and a
final (-1,) member marks a union of the preceding branches.

--verify re-answers a sample of converted eval queries with a standalone
set-semantics traversal over the emitted TSVs and compares the easy/hard
sets against the stored ones; any mismatch fails the run.
"""

from __future__ import annotations

import argparse
import json
import pickle
import random
import sys
from collections import defaultdict
from pathlib import Path

NEGATION = -2
UNION = -1

# Observed structure signatures of the published datasets.  'e' entity slot,
# 'r' relation slot, 'n' negation sentinel, 'u' union sentinel.  Anything
# else is reported and skipped.
SIGNATURE_TAGS = {
    ("e", ("r",)): "1p",
    ("e", ("r", "r")): "2p",
    ("e", ("r", "r", "r")): "3p",
    (("e", ("r",)), ("e", ("r",))): "2i",
    (("e", ("r",)), ("e", ("r",)), ("e", ("r",))): "3i",
    ((("e", ("r",)), ("e", ("r",))), ("r",)): "ip",
    (("e", ("r", "r")), ("e", ("r",))): "pi",
    (("e", ("r",)), ("e", ("r", "n"))): "2in",
    (("e", ("r",)), ("e", ("r",)), ("e", ("r", "n"))): "3in",
    ((("e", ("r",)), ("e", ("r", "n"))), ("r",)): "inp",
    (("e", ("r", "r")), ("e", ("r", "n"))): "pin",
    (("e", ("r", "r", "n")), ("e", ("r",))): "pni",
    (("e", ("r",)), ("e", ("r",)), ("u",)): "2u",
    ((("e", ("r",)), ("e", ("r",)), ("u",)), ("r",)): "up",
}


def signature(t):
    """Abstract a query tuple into its structure signature.

    Idempotent: the benchmark keys its query dicts by the abstract
    signature itself ('e'/'r'/'n'/'u' strings), while instances carry ids
    and sentinels; both map to the same signature.
    """
    if isinstance(t, str):
        return t
    if isinstance(t, int):
        return "e"
    if all(isinstance(v, int) for v in t):
        out = []
        for v in t:
            if v == NEGATION:
                out.append("n")
            elif v == UNION:
                out.append("u")
            else:
                out.append("r")
        return tuple(out)
    return tuple(signature(v) for v in t)


def _is_chain(t) -> bool:
    return (isinstance(t, tuple) and len(t) > 0
            and all(isinstance(v, int) for v in t))


def _apply_chain(node: dict, chain) -> dict:
    for v in chain:
        if v == NEGATION:
            node = {"op": "not", "arg": node}
        elif v >= 0:
            node = {"op": "proj", "rel": v, "arg": node}
        else:
            raise ValueError(f"unexpected sentinel {v} in relation chain")
    return node


def tuple_to_query(t) -> dict:
    """Translate a benchmark query tuple into the JSON query object."""
    if len(t) == 2 and isinstance(t[0], int) and _is_chain(t[1]):
        return _apply_chain({"op": "anchor", "ent": t[0]}, t[1])
    if len(t) == 2 and isinstance(t[0], tuple) and _is_chain(t[1]):
        return _apply_chain(tuple_to_query(t[0]), t[1])
    branches = list(t)
    op = "and"
    if branches[-1] == (UNION,):
        op = "or"
        branches = branches[:-1]
    return {"op": op, "args": [tuple_to_query(b) for b in branches]}


def _load_pickle(path: Path):
    with open(path, "rb") as fh:
        return pickle.load(fh)


def _write_vocab(path: Path, id2name: dict) -> int:
    n = len(id2name)
    if sorted(id2name) != list(range(n)):
        raise ValueError(f"{path.name}: ids are not contiguous from 0")
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(n):
            fh.write(f"{i}\t{id2name[i]}\n")
    return n


def _copy_edges(src: Path, dst: Path) -> int:
    n = 0
    with open(src, "r", encoding="utf-8") as fin, \
            open(dst, "w", encoding="utf-8") as fout:
        for line in fin:
            line = line.strip()
            if not line:
                continue
            h, r, t = line.split("\t")
            fout.write(f"{int(h)}\t{int(r)}\t{int(t)}\n")
            n += 1
    return n


def convert(dataset_dir, out_dir) -> dict:
    """Run the conversion; returns a summary dict (also written to disk)."""
    src = Path(dataset_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"entities": 0, "relations": 0, "edges": {}, "queries": {},
               "skipped_signatures": {}}

    summary["entities"] = _write_vocab(out / "entities.tsv",
                                       _load_pickle(src / "id2ent.pkl"))
    summary["relations"] = _write_vocab(out / "relations.tsv",
                                        _load_pickle(src / "id2rel.pkl"))
    for split in ("train", "valid", "test"):
        summary["edges"][split] = _copy_edges(src / f"{split}.txt",
                                              out / f"{split}.tsv")

    skipped = defaultdict(int)
    for split in ("train", "valid", "test"):
        queries = _load_pickle(src / f"{split}-queries.pkl")
        if split == "train":
            easy_answers = _load_pickle(src / "train-answers.pkl")
            hard_answers = {}
        else:
            easy_answers = _load_pickle(src / f"{split}-easy-answers.pkl")
            hard_answers = _load_pickle(src / f"{split}-hard-answers.pkl")
        per_tag = defaultdict(list)
        for structure, instances in queries.items():
            tag = SIGNATURE_TAGS.get(signature(structure))
            if tag is None:
                skipped[repr(structure)] += len(instances)
                continue
            for inst in sorted(instances):
                easy = sorted(easy_answers.get(inst, ()))
                hard = sorted(hard_answers.get(inst, ())) if hard_answers else []
                per_tag[tag].append({"tag": tag,
                                     "query": tuple_to_query(inst),
                                     "easy": easy, "hard": hard})
        for tag, records in sorted(per_tag.items()):
            path = out / f"{split}-{tag}.jsonl"
            with open(path, "w", encoding="utf-8") as fh:
                for rec in records:
                    fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
            summary["queries"].setdefault(split, {})[tag] = len(records)
    summary["skipped_signatures"] = dict(skipped)

    with open(out / "conversion-summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    return summary


# ---------------------------------------------------------------------------
# Independent verification: re-answer converted queries from the TSVs alone
# ---------------------------------------------------------------------------

class Traversal:
    """Set-semantics query answering over edge lists, separate on purpose
    from the main pipeline so conversion errors cannot hide behind shared
    code."""

    def __init__(self, num_entities: int, edge_files):
        self.num_entities = num_entities
        self.adj = defaultdict(set)   # (relation, head) -> {tails}
        for path in edge_files:
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    h, r, t = (int(x) for x in line.split("\t"))
                    self.adj[(r, h)].add(t)

    def answers(self, node: dict) -> set[int]:
        op = node["op"]
        if op == "anchor":
            return {node["ent"]}
        if op == "proj":
            src = self.answers(node["arg"])
            out = set()
            for x in src:
                out |= self.adj.get((node["rel"], x), set())
            return out
        if op == "not":
            return set(range(self.num_entities)) - self.answers(node["arg"])
        parts = [self.answers(a) for a in node["args"]]
        result = parts[0]
        for p in parts[1:]:
            result = result & p if op == "and" else result | p
        return result


def verify_conversion(out_dir, sample: int = 500, seed: int = 0) -> dict:
    """Re-derive easy/hard sets for sampled eval queries; count mismatches."""
    out = Path(out_dir)
    num_entities = sum(1 for _ in open(out / "entities.tsv", encoding="utf-8"))
    smaller = {
        "valid": Traversal(num_entities, [out / "train.tsv"]),
        "test": Traversal(num_entities, [out / "train.tsv", out / "valid.tsv"]),
    }
    larger = {
        "valid": smaller["test"],
        "test": Traversal(num_entities, [out / "train.tsv", out / "valid.tsv",
                                         out / "test.tsv"]),
    }
    rng = random.Random(seed)
    report = {"checked": 0, "mismatches": 0, "splits": {}}
    for split in ("valid", "test"):
        files = sorted(out.glob(f"{split}-*.jsonl"))
        if not files:
            report["splits"][split] = "absent"
            continue
        records = []
        for f in files:
            with open(f, "r", encoding="utf-8") as fh:
                records.extend((f.name, json.loads(line)) for line in fh)
        rng.shuffle(records)
        take = records[:sample // 2] if len(records) > sample // 2 else records
        bad = 0
        for fname, rec in take:
            easy = smaller[split].answers(rec["query"])
            full = larger[split].answers(rec["query"])
            hard = full - easy
            if sorted(easy) != rec["easy"] or sorted(hard) != rec["hard"]:
                bad += 1
        report["checked"] += len(take)
        report["mismatches"] += bad
        report["splits"][split] = {"checked": len(take), "mismatches": bad}
    return report


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("dataset_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--verify", action="store_true",
                    help="re-answer a sample of converted queries and "
                         "compare against the stored answer sets")
    ap.add_argument("--sample", type=int, default=500)
    args = ap.parse_args(argv)
    try:
        summary = convert(args.dataset_dir, args.out_dir)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"entities={summary['entities']} relations={summary['relations']} "
          f"edges={summary['edges']}")
    for split, tags in summary["queries"].items():
        print(f"{split}: " + " ".join(f"{t}={n}" for t, n in sorted(tags.items())))
    if summary["skipped_signatures"]:
        print("skipped unknown signatures:", file=sys.stderr)
        for sig, n in summary["skipped_signatures"].items():
            print(f"  {n:8d} x {sig}", file=sys.stderr)
    if args.verify:
        report = verify_conversion(args.out_dir, sample=args.sample)
        print(f"verification: {report['checked']} queries checked, "
              f"{report['mismatches']} mismatches")
        if report["mismatches"]:
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
