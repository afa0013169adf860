"""Minimal reverse-mode differentiation tape over numpy arrays.

The tape records operations in execution order; since the graph is built
forward, reversing that order is a valid topological order for the backward
sweep.  Gradients are accumulated with `+=` in this fixed order, so runs on
identical inputs produce bit-identical gradients.

Only the operations this model's loss pipeline needs are provided.  Ops
whose derivative has branch points (bounded rectifier, min/max, norm floor)
record their branch masks on `tape.pattern`; the finite-difference checker
compares those masks between perturbed evaluations to skip coordinates that
cross a kink.
"""

from __future__ import annotations

import numpy as np

from .model import layer_norm_rows, sigmoid, softmax_rows

__all__ = ["Var", "Tape"]


class Var:
    __slots__ = ("value", "grad", "_backward")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = None
        self._backward = None


class Tape:
    def __init__(self):
        self._nodes: list[Var] = []
        self.pattern: list[bytes] = []

    def leaf(self, value: np.ndarray) -> Var:
        v = Var(np.asarray(value, dtype=np.float64))
        self._nodes.append(v)
        return v

    def _node(self, value: np.ndarray, backward) -> Var:
        v = Var(value)
        v._backward = backward
        self._nodes.append(v)
        return v

    def backward(self, root: Var, seed: float = 1.0) -> None:
        """Accumulate d(root)/d(node) into every node's .grad."""
        for n in self._nodes:
            n.grad = np.zeros_like(n.value)
        root.grad = root.grad + seed
        for n in reversed(self._nodes):
            if n._backward is not None:
                n._backward(n.grad)

    def pattern_key(self) -> bytes:
        """Concatenated branch masks of the recorded forward pass."""
        return b"".join(self.pattern)

    # -- structural ---------------------------------------------------------

    def gather(self, a: Var, idx: np.ndarray) -> Var:
        idx = np.asarray(idx, dtype=np.int64)
        out = a.value[idx]

        def back(g):
            np.add.at(a.grad, idx, g)
        return self._node(out, back)

    # -- normalizations -----------------------------------------------------

    def softmax_rows(self, x: Var) -> Var:
        p = softmax_rows(x.value)

        def back(g):
            x.grad += p * (g - np.sum(g * p, axis=-1, keepdims=True))
        return self._node(p, back)

    def sigmoid(self, x: Var) -> Var:
        s = sigmoid(x.value)

        def back(g):
            x.grad += g * s * (1.0 - s)
        return self._node(s, back)

    def unit_rows(self, x: Var) -> Var:
        norm = np.linalg.norm(x.value, axis=-1, keepdims=True)
        n = x.value / norm

        def back(g):
            x.grad += (g - n * np.sum(g * n, axis=-1, keepdims=True)) / norm
        return self._node(n, back)

    def layer_norm_rows(self, x: Var, eps: float) -> Var:
        mu = x.value.mean(axis=-1, keepdims=True)
        var = np.mean((x.value - mu) ** 2, axis=-1, keepdims=True)
        s = np.sqrt(var + eps)
        y = (x.value - mu) / s

        def back(g):
            gm = g.mean(axis=-1, keepdims=True)
            gy = np.mean(g * y, axis=-1, keepdims=True)
            x.grad += (g - gm - y * gy) / s
        return self._node(y, back)

    def scale_shift(self, x: Var, gain: Var, bias: Var) -> Var:
        # gain/bias are (d,), broadcast over leading axes of x
        out = x.value * gain.value + bias.value
        lead = tuple(range(x.value.ndim - 1))

        def back(g):
            x.grad += g * gain.value
            gain.grad += np.sum(g * x.value, axis=lead)
            bias.grad += np.sum(g, axis=lead)
        return self._node(out, back)

    # -- squashing ----------------------------------------------------------

    def clip01(self, x: Var) -> Var:
        out = np.clip(x.value, 0.0, 1.0)
        active = (x.value > 0.0) & (x.value < 1.0)
        self.pattern.append(np.packbits(active.ravel()).tobytes())

        def back(g):
            x.grad += g * active
        return self._node(out, back)

    # -- fuzzy operators ----------------------------------------------------

    def mul(self, a: Var, b: Var) -> Var:
        out = a.value * b.value

        def back(g):
            a.grad += g * b.value
            b.grad += g * a.value
        return self._node(out, back)

    def prob_sum(self, a: Var, b: Var) -> Var:
        """a + b - a*b, the product-logic disjunction."""
        out = a.value + b.value - a.value * b.value

        def back(g):
            a.grad += g * (1.0 - b.value)
            b.grad += g * (1.0 - a.value)
        return self._node(out, back)

    def minimum(self, a: Var, b: Var) -> Var:
        take_a = a.value <= b.value   # ties route to the first argument
        self.pattern.append(np.packbits(take_a.ravel()).tobytes())
        out = np.where(take_a, a.value, b.value)

        def back(g):
            a.grad += g * take_a
            b.grad += g * ~take_a
        return self._node(out, back)

    def maximum(self, a: Var, b: Var) -> Var:
        take_a = a.value >= b.value
        self.pattern.append(np.packbits(take_a.ravel()).tobytes())
        out = np.where(take_a, a.value, b.value)

        def back(g):
            a.grad += g * take_a
            b.grad += g * ~take_a
        return self._node(out, back)

    def one_minus(self, x: Var) -> Var:
        def back(g):
            x.grad -= g
        return self._node(1.0 - x.value, back)

    # -- projection ---------------------------------------------------------

    def basis_project(self, M: Var, v: Var, alpha: Var, p: Var) -> Var:
        """x = (sum_k alpha_k M_k) p + sum_k alpha_k v_k, batched over rows."""
        mp = np.einsum("kij,bj->bki", M.value, p.value)
        out = np.einsum("bk,bki->bi", alpha.value, mp) + alpha.value @ v.value

        def back(g):
            alpha.grad += np.einsum("bi,bki->bk", g, mp) + g @ v.value.T
            d_mp = alpha.value[:, :, None] * g[:, None, :]
            M.grad += np.einsum("bki,bj->kij", d_mp, p.value)
            p.grad += np.einsum("bki,kij->bj", d_mp, M.value)
            v.grad += np.einsum("bk,bi->ki", alpha.value, g)
        return self._node(out, back)

    # -- scoring and loss ---------------------------------------------------

    def rowdot(self, a: Var, b: Var) -> Var:
        out = np.sum(a.value * b.value, axis=-1)

        def back(g):
            a.grad += g[..., None] * b.value
            b.grad += g[..., None] * a.value
        return self._node(out, back)

    def dot_groups(self, s: Var, p: Var, k: int) -> Var:
        """Scores of k candidate rows per batch item.

        s is (B, d); p is (B*k, d) with item b's candidates at rows
        [b*k, (b+1)*k).  Returns (B, k).
        """
        B = s.value.shape[0]
        p3 = p.value.reshape(B, k, -1)
        out = np.einsum("bd,bkd->bk", s.value, p3)

        def back(g):
            s.grad += np.einsum("bk,bkd->bd", g, p3)
            p.grad += (g[:, :, None] * s.value[:, None, :]).reshape(p.value.shape)
        return self._node(out, back)

    def l2norm_rows(self, x: Var) -> Var:
        z = np.linalg.norm(x.value, axis=-1)
        # an all-zero row has zero norm; its rescaled value is zero anyway,
        # so divide by 1 there instead of producing 0/0
        safe = np.where(z > 0.0, z, 1.0)

        def back(g):
            x.grad += (g / safe)[..., None] * x.value
        return self._node(z, back)

    def max_const(self, x: Var, c: float) -> Var:
        above = x.value > c
        self.pattern.append(np.packbits(above.ravel()).tobytes())
        out = np.maximum(x.value, c)

        def back(g):
            x.grad += g * above
        return self._node(out, back)

    def div_by_col(self, x: Var, z: Var) -> Var:
        """x / z with z of shape (B,) broadcast over x's trailing axes."""
        zb = z.value if x.value.ndim == 1 else z.value[:, None]
        out = x.value / zb

        def back(g):
            x.grad += g / zb
            contrib = g * x.value / zb ** 2
            z.grad -= contrib if x.value.ndim == 1 else contrib.sum(axis=-1)
        return self._node(out, back)

    def add_const(self, x: Var, c: float) -> Var:
        def back(g):
            x.grad += g
        return self._node(x.value + c, back)

    def const_minus(self, c: float, x: Var) -> Var:
        def back(g):
            x.grad -= g
        return self._node(c - x.value, back)

    def logsigmoid(self, x: Var) -> Var:
        v = x.value
        out = np.where(v >= 0, -np.log1p(np.exp(-np.abs(v))),
                       v - np.log1p(np.exp(-np.abs(v))))

        def back(g):
            x.grad += g * sigmoid(-v)
        return self._node(out, back)

    def add(self, a: Var, b: Var) -> Var:
        def back(g):
            a.grad += g
            b.grad += g
        return self._node(a.value + b.value, back)

    def neg(self, x: Var) -> Var:
        def back(g):
            x.grad -= g
        return self._node(-x.value, back)

    def mean_last(self, x: Var) -> Var:
        k = x.value.shape[-1]

        def back(g):
            x.grad += g[..., None] / k
        return self._node(x.value.mean(axis=-1), back)

    def sum_all(self, x: Var) -> Var:
        shape = x.value.shape

        def back(g):
            x.grad += np.broadcast_to(g, shape)
        return self._node(np.asarray(x.value.sum()), back)
