"""Training losses with exact reverse-mode gradients, a finite-difference
verifier, and the AdamW optimizer.

The batch loss is the margin objective over one positive and k sampled
negatives per query, scaled per query by the floor-guarded L2 norm of the
query embedding.  Queries of identical tree shape are embedded together as
one tensorized tape pass; gradients from the per-shape groups accumulate in
a fixed order so the result is bit-deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Var
from .logic import Logic
from .model import GMode, ModelConfig, NormMode, Parameters
from .query import And, Anchor, Node, Not, Or, Proj, Query

__all__ = [
    "BatchItem", "Gradients", "backward", "loss_value",
    "GradCheckReport", "grad_check", "AdamW",
]

DEFAULT_ZQ_EPS = 1e-9


@dataclass(frozen=True)
class BatchItem:
    query: Query
    pos: int
    negs: tuple[int, ...]


@dataclass
class Gradients:
    entity_theta: np.ndarray
    bases_M: np.ndarray
    bases_v: np.ndarray
    rel_coeff: np.ndarray
    ln_gain: np.ndarray
    ln_bias: np.ndarray

    FIELDS = Parameters.FIELDS

    @classmethod
    def zeros_like(cls, params: Parameters) -> "Gradients":
        return cls(*(np.zeros_like(getattr(params, n)) for n in cls.FIELDS))

    def tensors(self):
        return [(name, getattr(self, name)) for name in self.FIELDS]

    def add_(self, other: "Gradients") -> None:
        for name in self.FIELDS:
            getattr(self, name).__iadd__(getattr(other, name))

    def check_finite(self) -> None:
        for name, t in self.tensors():
            if not np.all(np.isfinite(t)):
                raise FloatingPointError(f"non-finite gradient in {name}")


def _strip_nots(node: Node) -> Node:
    """Collapse paired negations everywhere, keeping involution exact."""
    while isinstance(node, Not) and isinstance(node.arg, Not):
        node = node.arg.arg
    if isinstance(node, Proj):
        return Proj(node.rel, _strip_nots(node.arg))
    if isinstance(node, Not):
        return Not(_strip_nots(node.arg))
    if isinstance(node, (And, Or)):
        args = tuple(_strip_nots(a) for a in node.args)
        return And(args) if isinstance(node, And) else Or(args)
    return node


def _ordered_shape(node: Node):
    # Positional (not sorted) shape: group members must align child-by-child.
    if isinstance(node, Anchor):
        return ("anchor",)
    if isinstance(node, Proj):
        return ("proj", _ordered_shape(node.arg))
    if isinstance(node, Not):
        return ("not", _ordered_shape(node.arg))
    op = "and" if isinstance(node, And) else "or"
    return (op,) + tuple(_ordered_shape(a) for a in node.args)


class _ParamVars:
    """Leaf tape variables for every parameter tensor."""

    def __init__(self, tape: Tape, params: Parameters):
        for name in Parameters.FIELDS:
            setattr(self, name, tape.leaf(getattr(params, name)))

    def grad_of(self, name: str) -> np.ndarray:
        return getattr(self, name).grad


def _normalize(tape: Tape, theta_rows: Var, norm_mode: NormMode) -> Var:
    if norm_mode is NormMode.L1:
        return tape.softmax_rows(theta_rows)
    return tape.unit_rows(tape.sigmoid(theta_rows))


def _embed_nodes(tape: Tape, pv: _ParamVars, config: ModelConfig,
                 nodes: list[Node]) -> Var:
    n0 = nodes[0]
    if isinstance(n0, Anchor):
        ids = np.fromiter((n.ent for n in nodes), dtype=np.int64)
        return _normalize(tape, tape.gather(pv.entity_theta, ids), config.norm_mode)
    if isinstance(n0, Proj):
        child = _embed_nodes(tape, pv, config, [n.arg for n in nodes])
        rel_ids = np.fromiter((n.rel for n in nodes), dtype=np.int64)
        alpha = tape.gather(pv.rel_coeff, rel_ids)
        x = tape.basis_project(pv.bases_M, pv.bases_v, alpha, child)
        y = tape.scale_shift(tape.layer_norm_rows(x, config.ln_eps),
                             pv.ln_gain, pv.ln_bias)
        return tape.sigmoid(y) if config.g_mode is GMode.LOGISTIC else tape.clip01(y)
    if isinstance(n0, Not):
        return tape.one_minus(_embed_nodes(tape, pv, config, [n.arg for n in nodes]))
    parts = [_embed_nodes(tape, pv, config, [n.args[i] for n in nodes])
             for i in range(len(n0.args))]
    out = parts[0]
    for part in parts[1:]:
        if isinstance(n0, And):
            out = tape.mul(out, part) if config.logic is Logic.PRODUCT \
                else tape.minimum(out, part)
        else:
            out = tape.prob_sum(out, part) if config.logic is Logic.PRODUCT \
                else tape.maximum(out, part)
    return out


def _group_loss(tape: Tape, pv: _ParamVars, config: ModelConfig,
                items: list[BatchItem], gamma: float, zq_eps: float) -> Var:
    """Sum of per-item losses for one shape-aligned group."""
    k = len(items[0].negs)
    s_q = _embed_nodes(tape, pv, config, [it.query.root for it in items])
    z = tape.max_const(tape.l2norm_rows(s_q), zq_eps)

    pos_ids = np.fromiter((it.pos for it in items), dtype=np.int64)
    p_pos = _normalize(tape, tape.gather(pv.entity_theta, pos_ids), config.norm_mode)
    phi_pos = tape.div_by_col(tape.rowdot(s_q, p_pos), z)
    pos_term = tape.logsigmoid(tape.add_const(phi_pos, -gamma))

    neg_ids = np.fromiter((n for it in items for n in it.negs), dtype=np.int64)
    p_neg = _normalize(tape, tape.gather(pv.entity_theta, neg_ids), config.norm_mode)
    phi_neg = tape.div_by_col(tape.dot_groups(s_q, p_neg, k), z)
    neg_term = tape.mean_last(tape.logsigmoid(tape.const_minus(gamma, phi_neg)))

    return tape.sum_all(tape.neg(tape.add(pos_term, neg_term)))


def _run_batch(params: Parameters, config: ModelConfig, batch: list[BatchItem],
               gamma: float, zq_eps: float, with_grads: bool
               ) -> tuple[float, Gradients | None, bytes]:
    if not batch:
        raise ValueError("empty batch")
    groups: dict[tuple, list[BatchItem]] = {}
    for it in batch:
        if not it.negs:
            raise ValueError("every batch item needs at least one negative")
        stripped = BatchItem(Query(_strip_nots(it.query.root), it.query.tag),
                             it.pos, it.negs)
        key = (_ordered_shape(stripped.query.root), len(it.negs))
        groups.setdefault(key, []).append(stripped)

    n = len(batch)
    total = 0.0
    grads = Gradients.zeros_like(params) if with_grads else None
    pattern = []
    for key in sorted(groups, key=repr):   # fixed accumulation order
        items = groups[key]
        tape = Tape()
        pv = _ParamVars(tape, params)
        group_sum = _group_loss(tape, pv, config, items, gamma, zq_eps)
        total += float(group_sum.value)
        pattern.append(tape.pattern_key())
        if with_grads:
            tape.backward(group_sum, seed=1.0 / n)
            for name in Gradients.FIELDS:
                getattr(grads, name).__iadd__(pv.grad_of(name))
    loss = total / n
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite batch loss: {loss}")
    if with_grads:
        grads.check_finite()
    return loss, grads, b"".join(pattern)


def backward(params: Parameters, config: ModelConfig, batch: list[BatchItem],
             *, gamma: float, zq_eps: float = DEFAULT_ZQ_EPS
             ) -> tuple[float, Gradients]:
    """Mean batch loss and its exact gradient for every parameter tensor."""
    loss, grads, _ = _run_batch(params, config, batch, gamma, zq_eps, True)
    return loss, grads


def loss_value(params: Parameters, config: ModelConfig, batch: list[BatchItem],
               *, gamma: float, zq_eps: float = DEFAULT_ZQ_EPS
               ) -> tuple[float, bytes]:
    """Forward-only batch loss plus the branch pattern of the evaluation."""
    loss, _, pattern = _run_batch(params, config, batch, gamma, zq_eps, False)
    return loss, pattern


# ---------------------------------------------------------------------------
# Finite-difference verification
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    per_tensor: dict[str, float]
    n_checked: int
    n_skipped: int

    def __str__(self):
        per = ", ".join(f"{k}={v:.3e}" for k, v in self.per_tensor.items())
        return (f"max_rel_err={self.max_rel_err:.3e} "
                f"({self.n_checked} coords, {self.n_skipped} skipped near kinks; {per})")


def grad_check(params: Parameters, config: ModelConfig, batch: list[BatchItem],
               *, gamma: float, zq_eps: float = DEFAULT_ZQ_EPS, h: float = 1e-6,
               n_coords: int = 240, rng: np.random.Generator | None = None
               ) -> GradCheckReport:
    """Central finite differences against the analytic gradient.

    Samples coordinates from every parameter tensor; the relative error is
    |a - n| / max(|a|, |n|, 1e-8).  Two kinds of coordinate cannot be
    compared meaningfully and are handled specially: those whose +/-h
    evaluations disagree on a branch decision (rectifier kink, min/max tie,
    norm floor) are skipped, and those where analytic and numeric agree
    within the finite-difference resolution limit (forward rounding of the
    loss divided by 2h) count as exact, since the quotient there is noise
    over noise.
    """
    rng = rng or np.random.default_rng(0)
    loss, grads = backward(params, config, batch, gamma=gamma, zq_eps=zq_eps)
    # absolute resolution of a central difference at this loss scale
    noise_tol = 32 * np.finfo(np.float64).eps * max(1.0, abs(loss)) / (2.0 * h)

    per_tensor: dict[str, float] = {}
    max_err, checked, skipped = 0.0, 0, 0
    per = max(1, n_coords // len(Parameters.FIELDS))
    for name in Parameters.FIELDS:
        tensor = getattr(params, name)
        flat = tensor.reshape(-1)
        take = min(per, flat.size)
        idxs = rng.choice(flat.size, size=take, replace=False)
        t_max = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            lp, pat_p = loss_value(params, config, batch, gamma=gamma, zq_eps=zq_eps)
            flat[i] = orig - h
            lm, pat_m = loss_value(params, config, batch, gamma=gamma, zq_eps=zq_eps)
            flat[i] = orig
            if pat_p != pat_m:
                skipped += 1
                continue
            numeric = (lp - lm) / (2.0 * h)
            analytic = getattr(grads, name).reshape(-1)[i]
            checked += 1
            if abs(analytic - numeric) <= noise_tol:
                continue
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            t_max = max(t_max, err)
        per_tensor[name] = t_max
        max_err = max(max_err, t_max)
    return GradCheckReport(max_err, per_tensor, checked, skipped)


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------

class AdamW:
    """Decoupled-weight-decay Adam over the parameter tensors.

    Decay applies to the shared bases and relation coefficients only; the
    entity parameters feed a normalization that removes scale anyway, and
    the layer-norm affine is conventionally left undecayed.
    """

    DECAYED = ("bases_M", "bases_v", "rel_coeff")

    def __init__(self, params: Parameters, lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {n: np.zeros_like(getattr(params, n)) for n in Parameters.FIELDS}
        self.v = {n: np.zeros_like(getattr(params, n)) for n in Parameters.FIELDS}

    def step(self, params: Parameters, grads: Gradients) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name in Parameters.FIELDS:
            p = getattr(params, name)
            g = getattr(grads, name)
            if name in self.DECAYED and self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_dict(self) -> dict:
        return {"step": self.step_count,
                "m": {k: v.copy() for k, v in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}}

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step"])
        for k in self.m:
            self.m[k][...] = state["m"][k]
            self.v[k][...] = state["v"][k]
