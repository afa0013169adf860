"""Entity and query embeddings in the fuzzy space [0,1]^d.

Entities are parameterized by free vectors mapped onto the fuzzy space by
construction (softmax for the L1 regime, normalized logistic for L2), so
the membership constraint holds exactly at all times without projection
steps.  Relation projection is a basis-decomposed affine map followed by
layer normalization and a squashing function g.  Logical structure is
evaluated bottom-up with the t-norm algebra of `fuzzqe.logic`.

Scoring a query embedding S_q against an entity embedding p_e is the dot
product: the expected probability that the entity falls in the query's
fuzzy answer set.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

import numpy as np

from .logic import Logic, fold_conj, fold_disj, negate
from .query import And, Anchor, Node, Not, Proj, Query

__all__ = [
    "NormMode", "GMode", "ModelConfig", "Parameters",
    "init_parameters", "entity_embedding", "entity_matrix", "relation_map",
    "project", "embed_query", "score", "score_all", "top_k",
    "save_checkpoint", "load_checkpoint",
    "softmax_rows", "sigmoid", "unit_rows", "layer_norm_rows",
]


class NormMode(enum.Enum):
    L1 = "l1"   # softmax rows: entries sum to 1
    L2 = "l2"   # normalized logistic rows: squared entries sum to 1

    @classmethod
    def parse(cls, name: str) -> "NormMode":
        return cls(name.strip().lower())


class GMode(enum.Enum):
    LOGISTIC = "logistic"
    BOUNDED_RECTIFIER = "bounded_rectifier"

    @classmethod
    def parse(cls, name: str) -> "GMode":
        return cls(name.strip().lower())


@dataclass(frozen=True)
class ModelConfig:
    d: int
    K: int
    logic: Logic = Logic.PRODUCT
    norm_mode: NormMode = NormMode.L2
    g_mode: GMode = GMode.LOGISTIC
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("embedding dimension d must be >= 2")
        if self.K < 1:
            raise ValueError("number of bases K must be >= 1")
        if not self.ln_eps > 0:
            raise ValueError("ln_eps must be positive")
        if self.logic is Logic.LUKASIEWICZ:
            raise ValueError(
                "Lukasiewicz logic is not supported for query embedding: its "
                "outputs concentrate on {0,1} and stall learning; use the "
                "algebra in fuzzqe.logic directly if you need it")


@dataclass
class Parameters:
    """Learnable tensors; shapes fixed by (config, |E|, |R|)."""
    entity_theta: np.ndarray   # (E, d) free entity parameters
    bases_M: np.ndarray        # (K, d, d) basis transformation matrices
    bases_v: np.ndarray        # (K, d) basis bias vectors
    rel_coeff: np.ndarray      # (R, K) per-relation basis coefficients
    ln_gain: np.ndarray        # (d,) shared layer-norm gain
    ln_bias: np.ndarray        # (d,) shared layer-norm bias

    FIELDS = ("entity_theta", "bases_M", "bases_v", "rel_coeff", "ln_gain", "ln_bias")

    def tensors(self):
        return [(name, getattr(self, name)) for name in self.FIELDS]

    def num_entities(self) -> int:
        return self.entity_theta.shape[0]

    def num_relations(self) -> int:
        return self.rel_coeff.shape[0]

    def copy(self) -> "Parameters":
        return Parameters(*(getattr(self, n).copy() for n in self.FIELDS))

    def check_finite(self) -> None:
        for name, t in self.tensors():
            if not np.all(np.isfinite(t)):
                raise FloatingPointError(f"non-finite values in {name}")


def init_parameters(rng: np.random.Generator, config: ModelConfig,
                    num_entities: int, num_relations: int) -> Parameters:
    """Random initialization; basis matrices scaled so projections start tame."""
    d, K = config.d, config.K
    return Parameters(
        entity_theta=rng.normal(0.0, 1.0, size=(num_entities, d)),
        bases_M=rng.normal(0.0, 1.0 / np.sqrt(d), size=(K, d, d)),
        bases_v=rng.normal(0.0, 0.1, size=(K, d)),
        rel_coeff=rng.normal(0.0, 1.0 / np.sqrt(K), size=(num_relations, K)),
        ln_gain=np.ones(d),
        ln_bias=np.zeros(d),
    )


# ---------------------------------------------------------------------------
# Forward math, shared by inference here and the training tape in autodiff
# ---------------------------------------------------------------------------

def softmax_rows(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def layer_norm_rows(x: np.ndarray, eps: float) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = np.mean((x - mu) ** 2, axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def normalize_rows(theta: np.ndarray, norm_mode: NormMode) -> np.ndarray:
    if norm_mode is NormMode.L1:
        return softmax_rows(theta)
    return unit_rows(sigmoid(theta))


def apply_g(x: np.ndarray, g_mode: GMode) -> np.ndarray:
    if g_mode is GMode.LOGISTIC:
        return sigmoid(x)
    return np.clip(x, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Model operations
# ---------------------------------------------------------------------------

def entity_embedding(params: Parameters, config: ModelConfig, e: int) -> np.ndarray:
    """Fuzzy-space embedding p_e of one entity."""
    if not (0 <= e < params.num_entities()):
        raise IndexError(f"entity id out of range: {e}")
    theta = params.entity_theta[e]
    if not np.all(np.isfinite(theta)):
        raise FloatingPointError(f"non-finite parameters for entity {e}")
    return normalize_rows(theta, config.norm_mode)


def entity_matrix(params: Parameters, config: ModelConfig,
                  dtype=np.float64) -> np.ndarray:
    """All entity embeddings as an (E, d) matrix, row e = p_e.

    `dtype=np.float32` halves the memory the scoring matvec streams; use it
    for latency-sensitive serving, keep the float64 default when exact
    agreement with per-entity scoring matters.
    """
    P = normalize_rows(params.entity_theta, config.norm_mode)
    return P if dtype == np.float64 else P.astype(dtype)


def relation_map(params: Parameters, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Materialize (W_r, b_r) as coefficient-weighted sums of the bases."""
    if not (0 <= r < params.num_relations()):
        raise IndexError(f"relation id out of range: {r}")
    alpha = params.rel_coeff[r]
    W = np.tensordot(alpha, params.bases_M, axes=(0, 0))
    b = alpha @ params.bases_v
    return W, b


def project(params: Parameters, config: ModelConfig, r: int, s: np.ndarray,
            rel_cache: dict | None = None) -> np.ndarray:
    """One relation-projection step: g(LN(W_r s + b_r)) with shared affine.

    `rel_cache` memoizes materialized (W_r, b_r) per relation id; repeated
    queries over few relations then cost one matvec per hop.
    """
    if s.shape != (config.d,):
        raise ValueError(f"expected input of shape ({config.d},), got {s.shape}")
    if rel_cache is not None and r in rel_cache:
        W, b = rel_cache[r]
    else:
        W, b = relation_map(params, r)
        if rel_cache is not None:
            rel_cache[r] = (W, b)
    x = W @ s + b
    y = layer_norm_rows(x, config.ln_eps) * params.ln_gain + params.ln_bias
    out = apply_g(y, config.g_mode)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"non-finite projection output for relation {r}")
    return out


def _strip_double_not(node: Node) -> Node:
    # Involution makes paired negations the identity; collapsing them keeps
    # the identity exact instead of leaving two 1-x roundings behind.
    while isinstance(node, Not) and isinstance(node.arg, Not):
        node = node.arg.arg
    return node


def embed_query(params: Parameters, config: ModelConfig, q: Query | Node,
                rel_cache: dict | None = None) -> np.ndarray:
    """Bottom-up query embedding S_q in [0,1]^d."""
    node = q.root if isinstance(q, Query) else q
    return _embed_node(params, config, node, rel_cache)


def _embed_node(params: Parameters, config: ModelConfig, node: Node,
                rel_cache: dict | None) -> np.ndarray:
    node = _strip_double_not(node)
    if isinstance(node, Anchor):
        return entity_embedding(params, config, node.ent)
    if isinstance(node, Proj):
        s = _embed_node(params, config, node.arg, rel_cache)
        return project(params, config, node.rel, s, rel_cache)
    if isinstance(node, Not):
        return negate(_embed_node(params, config, node.arg, rel_cache))
    parts = [_embed_node(params, config, a, rel_cache) for a in node.args]
    if isinstance(node, And):
        return fold_conj(config.logic, parts)
    return fold_disj(config.logic, parts)


def score(s_q: np.ndarray, p_e: np.ndarray) -> float:
    """Expected membership of the entity in the query's fuzzy answer set."""
    if s_q.shape != p_e.shape:
        raise ValueError(f"dimension mismatch: {s_q.shape} vs {p_e.shape}")
    return float(s_q @ p_e)


def score_all(params: Parameters, config: ModelConfig, s_q: np.ndarray,
              ent_matrix: np.ndarray | None = None) -> np.ndarray:
    """Scores of every entity, one matrix-vector product.

    Pass a precomputed `entity_matrix` result to amortize it across queries;
    the product runs in that matrix's dtype.
    """
    P = entity_matrix(params, config) if ent_matrix is None else ent_matrix
    return P @ s_q.astype(P.dtype, copy=False)


def top_k(scores: np.ndarray, k: int, exclude: set[int] | None = None
          ) -> list[tuple[int, float]]:
    """k best (entity, score) pairs, ties broken by ascending id.

    Excluded ids never appear; fewer than k remaining candidates truncates.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    s = np.asarray(scores, dtype=np.float64)
    valid = np.ones(s.shape[0], dtype=bool)
    if exclude:
        valid[np.fromiter(exclude, dtype=np.int64)] = False
    n_valid = int(valid.sum())
    k = min(k, n_valid)
    if k == 0:
        return []
    masked = np.where(valid, s, -np.inf)
    # kth largest value bounds the candidate pool; ties at the boundary are
    # resolved towards ascending ids below
    kth = np.partition(masked, len(masked) - k)[len(masked) - k]
    cand = np.flatnonzero(masked >= kth)
    order = np.lexsort((cand, -masked[cand]))
    chosen = cand[order[:k]]
    return [(int(i), float(s[i])) for i in chosen]


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------

_MAGIC = "FZQE1"


def save_checkpoint(path, params: Parameters, config: ModelConfig) -> None:
    """Header line + raw little-endian float64 arrays in fixed order."""
    E, d = params.entity_theta.shape
    R = params.rel_coeff.shape[0]
    header = (f"{_MAGIC} d={config.d} K={config.K} E={E} R={R} "
              f"logic={config.logic.value} norm={config.norm_mode.value} "
              f"g={config.g_mode.value} ln_eps={config.ln_eps!r}\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        for _, t in params.tensors():
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[Parameters, ModelConfig]:
    with open(path, "rb") as fh:
        header = fh.readline().decode("utf-8").strip()
        blob = fh.read()
    fields = dict(m.group(1, 2) for m in re.finditer(r"(\w+)=(\S+)", header))
    if not header.startswith(_MAGIC + " "):
        raise ValueError(f"{path}: not a {_MAGIC} checkpoint")
    d, K = int(fields["d"]), int(fields["K"])
    E, R = int(fields["E"]), int(fields["R"])
    config = ModelConfig(d=d, K=K, logic=Logic.parse(fields["logic"]),
                         norm_mode=NormMode.parse(fields["norm"]),
                         g_mode=GMode.parse(fields["g"]),
                         ln_eps=float(fields["ln_eps"]))
    shapes = [("entity_theta", (E, d)), ("bases_M", (K, d, d)),
              ("bases_v", (K, d)), ("rel_coeff", (R, K)),
              ("ln_gain", (d,)), ("ln_bias", (d,))]
    expected = sum(int(np.prod(shape)) for _, shape in shapes) * 8
    if len(blob) != expected:
        raise ValueError(f"{path}: payload is {len(blob)} bytes, expected {expected}")
    arrays = {}
    offset = 0
    for name, shape in shapes:
        n = int(np.prod(shape))
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=n,
                                     offset=offset).reshape(shape).copy()
        offset += n * 8
    return Parameters(**arrays), config
