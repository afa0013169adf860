"""Command-line pipeline: query generation, training, evaluation, answering,
and the verification suites.

One executable with subcommands.  Options may come from a JSON config file
(sections "model", "train", "gen"); command-line flags win over the file.
The fully resolved configuration is echoed into the output directory so a
run can be reproduced from its artifacts alone.

Exit codes: 0 success, 1 usage or config error, 2 data error,
3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERIFY = 3


def _set_threads(n: int | None) -> None:
    # Must happen before numpy loads its BLAS; keep 1 for bit-reproducible runs.
    if n is None:
        n = int(os.environ.get("FUZZQE_THREADS", "0") or 0) or None
    if n is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config file must hold a JSON object")
    return cfg


def _build_model_config(section: dict, args):
    from .logic import Logic
    from .model import GMode, ModelConfig, NormMode
    merged = dict(section)
    for key, attr in (("d", "d"), ("K", "k_bases"), ("logic", "logic"),
                      ("norm", "norm"), ("g", "g"), ("ln_eps", "ln_eps")):
        val = getattr(args, attr, None)
        if val is not None:
            merged[key] = val
    return ModelConfig(
        d=int(merged.get("d", 32)),
        K=int(merged.get("K", 6)),
        logic=Logic.parse(str(merged.get("logic", "product"))),
        norm_mode=NormMode.parse(str(merged.get("norm", "l2"))),
        g_mode=GMode.parse(str(merged.get("g", "logistic"))),
        ln_eps=float(merged.get("ln_eps", 1e-5)),
    )


def _build_train_config(section: dict, args):
    from .train import TrainConfig
    merged = dict(section)
    for key in ("batch_size", "k_neg", "gamma", "lr", "weight_decay",
                "max_steps", "patience_steps", "eval_every", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    if getattr(args, "structures", None):
        merged["structures"] = [s.strip() for s in args.structures.split(",")]
    kwargs = {k: merged[k] for k in ("batch_size", "k_neg", "gamma", "lr",
                                     "weight_decay", "max_steps",
                                     "patience_steps", "eval_every", "seed",
                                     "zq_eps") if k in merged}
    if "structures" in merged:
        kwargs["structures"] = tuple(merged["structures"])
    return TrainConfig(**kwargs)


def _echo_config(out_dir: Path, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=2, default=str)


def _load_query_dir(queries_dir: Path, split: str):
    from .query import CANONICAL_TAGS, read_labeled_jsonl
    found = {}
    for tag in CANONICAL_TAGS:
        path = queries_dir / f"{split}-{tag}.jsonl"
        if path.exists():
            items = read_labeled_jsonl(path)
            if items:
                found[tag] = items
    return found


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_queries(args) -> int:
    from .generate import GenConfig, generate
    from .kg import load_graph
    cfg_file = _load_config_file(args.config)
    section = dict(cfg_file.get("gen", {}))
    if args.counts:
        section["counts"] = json.loads(args.counts)
    if args.seed is not None:
        section["seed"] = args.seed
    if args.max_answers is not None:
        section["max_answers"] = args.max_answers
    if "counts" not in section:
        print("error: no generation counts given (config 'gen.counts' or --counts)",
              file=sys.stderr)
        return EXIT_USAGE
    cfg = GenConfig(**section)
    kg = load_graph(args.kg)
    out = Path(args.out)
    _echo_config(out, {"gen": section, "kg": str(args.kg)})
    manifest = generate(kg, cfg, out)
    print(json.dumps(manifest, indent=2))
    return EXIT_OK


def cmd_train(args) -> int:
    from .kg import load_graph
    from .train import make_1p_queries, train
    from .kg import GraphView
    cfg_file = _load_config_file(args.config)
    model_config = _build_model_config(cfg_file.get("model", {}), args)
    train_config = _build_train_config(cfg_file.get("train", {}), args)
    kg = load_graph(args.kg)
    out = Path(args.out)

    train_queries = {}
    valid_queries = {}
    if args.queries:
        qdir = Path(args.queries)
        train_queries = _load_query_dir(qdir, "train")
        valid_queries = _load_query_dir(qdir, "valid")
    if list(train_config.structures) == ["1p"] and "1p" not in train_queries:
        # link-prediction-only regime straight from the graph's edges
        train_queries["1p"] = make_1p_queries(kg, GraphView.TRAIN)
    if not valid_queries:
        print("error: no validation queries found; generate them first",
              file=sys.stderr)
        return EXIT_DATA

    _echo_config(out, {
        "model": {"d": model_config.d, "K": model_config.K,
                  "logic": model_config.logic.value,
                  "norm": model_config.norm_mode.value,
                  "g": model_config.g_mode.value, "ln_eps": model_config.ln_eps},
        "train": {k: getattr(train_config, k) for k in (
            "batch_size", "k_neg", "gamma", "lr", "weight_decay", "max_steps",
            "patience_steps", "eval_every", "seed", "structures", "zq_eps")},
        "kg": str(args.kg), "queries": str(args.queries),
    })
    result = train(model_config, train_config, kg, train_queries, valid_queries,
                   out, resume=args.resume,
                   log_fn=lambda rec: print(
                       f"step {rec['step']}: loss={rec['train_loss']:.4f} "
                       f"valid_avg_mrr={rec['valid_avg_mrr']:.4f}"))
    print(f"best checkpoint: {result.checkpoint} "
          f"(step {result.best_step}, valid avg MRR {result.best_valid_mrr:.4f})")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .eval import evaluate
    from .model import load_checkpoint
    params, config = load_checkpoint(args.checkpoint)
    queries = _load_query_dir(Path(args.queries), args.split)
    if not queries:
        print(f"error: no {args.split} query files under {args.queries}",
              file=sys.stderr)
        return EXIT_DATA
    report = evaluate(params, config, queries)
    for tag in report.unknown_tags:
        print(f"warning: unknown structure tag {tag!r} excluded", file=sys.stderr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    print(report.to_csv().rstrip())
    print(f"avg_epfo={report.avg_epfo:.4f} avg_neg={report.avg_neg:.4f}")
    return EXIT_OK


def cmd_answer(args) -> int:
    from .model import embed_query, entity_matrix, load_checkpoint, score_all, top_k
    from .query import parse_query
    text = args.query
    if text.strip().startswith("@"):
        text = Path(text.strip()[1:]).read_text(encoding="utf-8")
    kg = None
    if args.kg:
        from .kg import load_graph
        kg = load_graph(args.kg)
    params, config = load_checkpoint(args.checkpoint) if args.checkpoint else (None, None)

    bounds = (kg.num_entities, kg.num_relations) if kg else \
        ((params.num_entities(), params.num_relations()) if params else (None, None))
    q = parse_query(text, *bounds)

    def name_of(i):
        return kg.entity_names[i] if kg else f"e{i}"

    exact_ids = None
    if args.exact:
        if kg is None:
            print("error: --exact needs --kg", file=sys.stderr)
            return EXIT_USAGE
        from .kg import GraphView
        from .oracle import answer_query
        exact_ids = answer_query(kg, GraphView.FULL, q)
        print(f"exact answers ({len(exact_ids)}):")
        for i in exact_ids:
            print(f"  {i}\t{name_of(int(i))}")

    if params is not None:
        s_q = embed_query(params, config, q)
        scores = score_all(params, config, s_q, entity_matrix(params, config))
        ranked = top_k(scores, args.k)
        print(f"top {len(ranked)} by embedding score:")
        for i, s in ranked:
            print(f"  {i}\t{name_of(i)}\t{s:.6f}")
        if exact_ids is not None:
            hits = len(set(i for i, _ in ranked) & set(exact_ids.tolist()))
            denom = min(args.k, max(1, len(exact_ids)))
            print(f"overlap@{args.k}: {hits}/{denom} = {hits / denom:.3f}")
    elif exact_ids is None:
        print("error: answer needs --checkpoint and/or --exact with --kg",
              file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import verify
    seed = args.seed if args.seed is not None else 0
    if args.mode == "laws":
        vec = verify.check_vector_laws(seed=seed)
        print(f"vector laws    {vec}")
        score = verify.check_score_laws(per_structure=args.rounds or 200, seed=seed)
        print(f"score laws     {score}")
        return EXIT_OK if vec.ok and score.ok else EXIT_VERIFY
    if args.mode == "gradcheck":
        rep = verify.check_gradients(seed=seed)
        print(f"gradient check {rep}")
        return EXIT_OK if rep.ok else EXIT_VERIFY
    if args.mode == "oracle":
        rep = verify.check_oracle_agreement(n_queries=args.rounds or 1000, seed=seed)
        print(f"oracle check   {rep}")
        return EXIT_OK if rep.ok else EXIT_VERIFY
    print(f"error: unknown verify mode {args.mode!r}", file=sys.stderr)
    return EXIT_USAGE


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fuzzqe",
        description="Fuzzy-set query embeddings over knowledge graphs")
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS threads (default: FUZZQE_THREADS env; "
                        "use 1 for bit-reproducible runs)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-queries", help="sample labeled queries from a graph")
    g.add_argument("--kg", required=True, help="graph directory (TSV format)")
    g.add_argument("--out", required=True)
    g.add_argument("--config", help="JSON config with a 'gen' section")
    g.add_argument("--counts", help="inline JSON counts {split: {tag: n}}")
    g.add_argument("--seed", type=int)
    g.add_argument("--max-answers", dest="max_answers", type=int)
    g.set_defaults(fn=cmd_gen_queries)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--kg", required=True)
    t.add_argument("--queries", help="directory of <split>-<tag>.jsonl files")
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="JSON config with 'model'/'train' sections")
    t.add_argument("--structures", help="comma-separated tags; '1p' alone gives "
                                        "the link-prediction-only regime")
    t.add_argument("--resume", action="store_true")
    t.add_argument("--d", type=int)
    t.add_argument("--k-bases", dest="k_bases", type=int)
    t.add_argument("--logic"), t.add_argument("--norm"), t.add_argument("--g")
    t.add_argument("--ln-eps", dest="ln_eps", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--k-neg", dest="k_neg", type=int)
    t.add_argument("--gamma", type=float)
    t.add_argument("--lr", type=float)
    t.add_argument("--weight-decay", dest="weight_decay", type=float)
    t.add_argument("--max-steps", dest="max_steps", type=int)
    t.add_argument("--patience-steps", dest="patience_steps", type=int)
    t.add_argument("--eval-every", dest="eval_every", type=int)
    t.add_argument("--seed", type=int)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="filtered-rank evaluation of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--queries", required=True)
    e.add_argument("--split", default="test", choices=["valid", "test"])
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("answer", help="answer one query (embedding and/or exact)")
    a.add_argument("--checkpoint")
    a.add_argument("--kg", help="graph directory; needed for --exact and names")
    a.add_argument("--query", required=True,
                   help="query JSON, or @path to read it from a file")
    a.add_argument("-k", type=int, default=10)
    a.add_argument("--exact", action="store_true",
                   help="also/only answer by exact traversal")
    a.set_defaults(fn=cmd_answer)

    v = sub.add_parser("verify", help="run a verification suite")
    v.add_argument("mode", choices=["laws", "gradcheck", "oracle"])
    v.add_argument("--seed", type=int)
    v.add_argument("--rounds", type=int, help="cases per structure (laws) or "
                                              "total queries (oracle)")
    v.set_defaults(fn=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _set_threads(args.threads)
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"error: missing file or directory: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (json.JSONDecodeError,) as exc:
        print(f"error: bad JSON input: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        from .kg import GraphFormatError
        from .query import QueryFormatError
        if isinstance(exc, (GraphFormatError, QueryFormatError)):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
