"""Fuzzy-set query embeddings for first-order logical query answering over
incomplete knowledge graphs.

Queries with existential quantification, conjunction, disjunction, and
negation are embedded into [0,1]^d; the logical connectives are executed as
t-norm algebra (product or Godel), so they need no learned parameters, and
candidate answers rank by a single dot product.
"""

from .kg import GraphView, KnowledgeGraph, load_graph
from .logic import Logic, fold_conj, fold_disj, fuzzy_vec, negate, tconorm, tnorm
from .model import (GMode, ModelConfig, NormMode, Parameters, embed_query,
                    entity_embedding, entity_matrix, init_parameters,
                    load_checkpoint, relation_map, save_checkpoint, score,
                    score_all, top_k, project)
from .query import (And, Anchor, LabeledQuery, Not, Or, Proj, Query,
                    canonical_templates, classify, encode_query, instantiate,
                    parse_query)
from .oracle import answer_query, split_answers, symbolic_fuzzy_eval
from .diff import AdamW, BatchItem, Gradients, backward, grad_check
from .eval import EvalReport, evaluate, filtered_rank, random_baseline_mrr
from .train import TrainConfig, loss_one, make_1p_queries, sample_negatives, train
from .generate import GenConfig, generate, sample_structure_instance

__version__ = "0.1.0"
