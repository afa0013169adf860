"""Negative-sampled margin training over mixed query structures.

Each step draws one batch of a single structure, cycling the configured
structures round-robin, so every structure sees the same number of update
steps.  Validation average MRR is computed every `eval_every` steps; the
best checkpoint is kept and training stops early after `patience_steps`
without improvement.  With a fixed seed the whole run is bit-reproducible
in the default 64-bit arithmetic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diff import DEFAULT_ZQ_EPS, AdamW, BatchItem, backward
from .eval import evaluate
from .kg import GraphView, KnowledgeGraph
from .model import (ModelConfig, Parameters, init_parameters, load_checkpoint,
                    save_checkpoint)
from .query import TRAIN_TAGS, LabeledQuery, Query, instantiate

__all__ = ["TrainConfig", "TrainResult", "loss_one", "sample_negatives",
           "make_1p_queries", "train"]


@dataclass
class TrainConfig:
    batch_size: int = 512
    k_neg: int = 128                 # negative samples per positive
    gamma: float = 0.375             # score margin, tuned not prescribed
    lr: float = 1e-3
    weight_decay: float = 0.01
    max_steps: int = 450_000
    patience_steps: int = 15_000     # early stop after this many steps w/o gain
    eval_every: int = 5_000
    seed: int = 0
    structures: tuple[str, ...] = TRAIN_TAGS
    zq_eps: float = DEFAULT_ZQ_EPS

    def __post_init__(self):
        if self.k_neg < 1:
            raise ValueError("k_neg must be >= 1")
        if self.patience_steps > self.max_steps:
            raise ValueError("patience_steps must not exceed max_steps")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass
class TrainResult:
    steps_run: int
    best_step: int
    best_valid_mrr: float
    final_train_loss: float
    checkpoint: Path
    log_path: Path


def loss_one(params: Parameters, config: ModelConfig, q: Query, pos: int,
             negs, *, gamma: float, zq_eps: float = DEFAULT_ZQ_EPS) -> float:
    """Margin loss of a single (query, positive, negatives) example."""
    loss, _ = backward(params, config,
                       [BatchItem(q, pos, tuple(int(n) for n in negs))],
                       gamma=gamma, zq_eps=zq_eps)
    return loss


def sample_negatives(rng: np.random.Generator, kg: KnowledgeGraph,
                     answers, k: int) -> np.ndarray:
    """k uniform draws from the entities outside the query's answer set.

    Equivalent to rejection sampling against the answer set; duplicates
    across draws are allowed.  Raises when the answers cover every entity.
    """
    answers = np.asarray(sorted(answers), dtype=np.int64)
    if len(answers) >= kg.num_entities:
        raise ValueError("answer set covers all entities; no negatives exist")
    pool = np.setdiff1d(np.arange(kg.num_entities, dtype=np.int64), answers,
                        assume_unique=True)
    return pool[rng.integers(len(pool), size=k)]


def make_1p_queries(kg: KnowledgeGraph, view: GraphView) -> list[LabeledQuery]:
    """One single-hop query per (head, relation) with outgoing edges in the view.

    Answers on the Train view are attached for negative-sample filtering.
    """
    out = []
    for r in range(kg.num_relations):
        for h in kg.heads_with_relation(view, r):
            q = instantiate("1p", [int(h)], [r])
            train_answers = kg.neighbors(GraphView.TRAIN, int(h), r, "fwd")
            out.append(LabeledQuery(q, tuple(train_answers.tolist()), ()))
    return out


def _draw_batch(rng: np.random.Generator, kg: KnowledgeGraph,
                pool: list[LabeledQuery], cfg: TrainConfig) -> list[BatchItem]:
    items = []
    picks = rng.integers(len(pool), size=cfg.batch_size)
    for idx in picks:
        lq = pool[idx]
        answers = lq.easy          # train-view answers by construction
        pos = int(answers[rng.integers(len(answers))])
        negs = sample_negatives(rng, kg, answers, cfg.k_neg)
        items.append(BatchItem(lq.query, pos, tuple(negs.tolist())))
    return items


def train(model_config: ModelConfig, train_cfg: TrainConfig,
          kg: KnowledgeGraph,
          train_queries: dict[str, list[LabeledQuery]],
          valid_queries: dict[str, list[LabeledQuery]],
          out_dir, resume: bool = False,
          log_fn=None) -> TrainResult:
    """Run the optimization loop; returns paths to the best checkpoint and log.

    `train_queries` maps structure tag to labeled queries whose easy sets
    are their Train-view answers.  `valid_queries` must carry hard answers.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"
    best_path = out / "best.ckpt"
    last_path = out / "last.ckpt"
    state_path = out / "train_state.json"

    structures = list(train_cfg.structures)
    missing = [s for s in structures if not train_queries.get(s)]
    if not structures or missing:
        raise ValueError(f"structures without training queries: {missing or 'all'}")

    rng = np.random.default_rng(train_cfg.seed)
    params = init_parameters(rng, model_config, kg.num_entities, kg.num_relations)
    opt = AdamW(params, lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    start_step, best_mrr, best_step = 0, -np.inf, -1
    log_mode = "w"

    if resume and last_path.exists() and state_path.exists():
        params, _ = load_checkpoint(last_path)
        with open(state_path, "r", encoding="utf-8") as fh:
            st = json.load(fh)
        start_step = st["step"]
        best_mrr, best_step = st["best_valid_mrr"], st["best_step"]
        rng.bit_generator.state = st["rng_state"]
        moments = np.load(out / "optimizer.npz")
        opt.load_state_dict({
            "step": st["opt_step"],
            "m": {n: moments[f"m_{n}"] for n in Parameters.FIELDS},
            "v": {n: moments[f"v_{n}"] for n in Parameters.FIELDS}})
        log_mode = "a"

    loss = float("nan")
    log_fh = open(log_path, log_mode, encoding="utf-8")
    try:
        step = start_step
        while step < train_cfg.max_steps:
            step += 1
            tag = structures[(step - 1) % len(structures)]
            batch = _draw_batch(rng, kg, train_queries[tag], train_cfg)
            loss, grads = backward(params, model_config, batch,
                                   gamma=train_cfg.gamma, zq_eps=train_cfg.zq_eps)
            opt.step(params, grads)

            if step % train_cfg.eval_every == 0 or step == train_cfg.max_steps:
                report = evaluate(params, model_config, valid_queries)
                mrrs = {t: m.mrr for t, m in report.per_structure.items()}
                avg_mrr = float(np.mean(list(mrrs.values()))) if mrrs else float("nan")
                rec = {"step": step, "train_loss": loss,
                       "valid_avg_mrr": avg_mrr, "per_structure_mrr": mrrs}
                log_fh.write(json.dumps(rec) + "\n")
                log_fh.flush()
                if log_fn:
                    log_fn(rec)
                if avg_mrr > best_mrr:
                    best_mrr, best_step = avg_mrr, step
                    save_checkpoint(best_path, params, model_config)
                save_checkpoint(last_path, params, model_config)
                st = opt.state_dict()
                np.savez(out / "optimizer.npz",
                         **{f"m_{n}": st["m"][n] for n in Parameters.FIELDS},
                         **{f"v_{n}": st["v"][n] for n in Parameters.FIELDS})
                with open(state_path, "w", encoding="utf-8") as fh:
                    json.dump({"step": step, "best_valid_mrr": best_mrr,
                               "best_step": best_step, "opt_step": st["step"],
                               "rng_state": rng.bit_generator.state}, fh)
                if step - best_step >= train_cfg.patience_steps:
                    break
    finally:
        log_fh.close()

    if not best_path.exists():           # no eval point improved on -inf
        save_checkpoint(best_path, params, model_config)
    return TrainResult(step, best_step, best_mrr, loss, best_path, log_path)
