import numpy as np
import pytest

from fuzzqe.autodiff import Tape
from fuzzqe.diff import AdamW, BatchItem, Gradients, backward, grad_check
from fuzzqe.logic import Logic
from fuzzqe.model import GMode, ModelConfig, NormMode, init_parameters
from fuzzqe.query import Not, instantiate


class TestTapePrimitives:
    def test_logistic_derivative_at_zero(self):
        t = Tape()
        x = t.leaf(np.array([0.0]))
        y = t.sum_all(t.sigmoid(x))
        t.backward(y)
        assert x.grad[0] == pytest.approx(0.25, abs=1e-15)

    def test_one_minus_propagates_negative_one(self):
        t = Tape()
        x = t.leaf(np.array([0.3, 0.8]))
        y = t.sum_all(t.one_minus(x))
        t.backward(y)
        assert np.array_equal(x.grad, [-1.0, -1.0])

    def test_linear_gradcheck_is_machine_precision(self):
        # f(w) = w . x is exactly captured by central differences
        rng = np.random.default_rng(0)
        w0, x0 = rng.normal(size=(2, 8))
        t = Tape()
        w = t.leaf(w0)
        x = t.leaf(x0)
        y = t.sum_all(t.mul(w, x))
        t.backward(y)
        h = 1e-6
        for i in range(8):
            wp, wm = w0.copy(), w0.copy()
            wp[i] += h
            wm[i] -= h
            numeric = (wp @ x0 - wm @ x0) / (2 * h)
            assert abs(numeric - w.grad[i]) < 1e-9

    def test_clip01_derivative_zero_outside_and_at_kinks(self):
        t = Tape()
        x = t.leaf(np.array([-0.5, 0.0, 0.5, 1.0, 1.5]))
        y = t.sum_all(t.clip01(x))
        t.backward(y)
        assert x.grad.tolist() == [0.0, 0.0, 1.0, 0.0, 0.0]

    def test_minimum_routes_ties_to_first(self):
        t = Tape()
        a = t.leaf(np.array([0.5, 0.2]))
        b = t.leaf(np.array([0.5, 0.7]))
        y = t.sum_all(t.minimum(a, b))
        t.backward(y)
        assert a.grad.tolist() == [1.0, 1.0]
        assert b.grad.tolist() == [0.0, 0.0]


def _random_batch(rng, tag, E, R, k=4, n=2):
    from fuzzqe.query import template_slots
    items = []
    for _ in range(n):
        na, nr = template_slots(tag)
        q = instantiate(tag, list(rng.integers(E, size=na)),
                        list(rng.integers(R, size=nr)))
        items.append(BatchItem(q, int(rng.integers(E)),
                               tuple(int(x) for x in rng.integers(E, size=k))))
    return items


class TestBackward:
    def test_deterministic_bit_identical(self, rng):
        config = ModelConfig(d=8, K=2)
        params = init_parameters(rng, config, 20, 4)
        batch = _random_batch(rng, "pin", 20, 4)
        l1, g1 = backward(params, config, batch, gamma=0.375)
        l2, g2 = backward(params, config, batch, gamma=0.375)
        assert l1 == l2
        for name, t in g1.tensors():
            assert np.array_equal(t, getattr(g2, name)), name

    def test_gradients_cover_all_tensors(self, rng):
        config = ModelConfig(d=8, K=2)
        params = init_parameters(rng, config, 20, 4)
        batch = _random_batch(rng, "2p", 20, 4)
        _, grads = backward(params, config, batch, gamma=0.375)
        for name, t in grads.tensors():
            assert np.any(t != 0.0), f"no gradient reached {name}"

    def test_double_negation_matches_plain(self, rng):
        config = ModelConfig(d=8, K=2)
        params = init_parameters(rng, config, 20, 4)
        q = instantiate("1p", [3], [1])
        qnn = q.__class__(Not(Not(q.root)), "custom")
        li = [BatchItem(q, 5, (1, 2)), ]
        lnn = [BatchItem(qnn, 5, (1, 2)), ]
        l1, g1 = backward(params, config, li, gamma=0.375)
        l2, g2 = backward(params, config, lnn, gamma=0.375)
        assert l1 == l2
        for name, t in g1.tensors():
            assert np.array_equal(t, getattr(g2, name))

    def test_mixed_structure_batch(self, rng):
        config = ModelConfig(d=8, K=2)
        params = init_parameters(rng, config, 20, 4)
        batch = _random_batch(rng, "1p", 20, 4) + _random_batch(rng, "3in", 20, 4)
        loss, grads = backward(params, config, batch, gamma=0.375)
        assert np.isfinite(loss)
        grads.check_finite()

    def test_empty_batch_rejected(self, rng):
        config = ModelConfig(d=8, K=2)
        params = init_parameters(rng, config, 20, 4)
        with pytest.raises(ValueError):
            backward(params, config, [], gamma=0.375)


class TestGradCheck:
    @pytest.mark.parametrize("g_mode", [GMode.LOGISTIC, GMode.BOUNDED_RECTIFIER])
    @pytest.mark.parametrize("norm", [NormMode.L1, NormMode.L2])
    def test_representative_structure(self, rng, g_mode, norm):
        config = ModelConfig(d=8, K=2, g_mode=g_mode, norm_mode=norm)
        params = init_parameters(rng, config, 20, 4)
        batch = _random_batch(rng, "pni", 20, 4)
        report = grad_check(params, config, batch, gamma=0.375,
                            n_coords=120, rng=rng)
        assert report.max_rel_err < 1e-4, str(report)

    def test_godel_logic_gradients(self, rng):
        config = ModelConfig(d=8, K=2, logic=Logic.GODEL)
        params = init_parameters(rng, config, 20, 4)
        batch = _random_batch(rng, "2i", 20, 4)
        report = grad_check(params, config, batch, gamma=0.375,
                            n_coords=120, rng=rng)
        assert report.max_rel_err < 1e-4, str(report)


def adamw_scalar_reference(w0, grad_fn, lr, steps, beta1=0.9, beta2=0.999,
                           eps=1e-8, wd=0.0):
    """Independent scalar recursion used as the optimizer oracle."""
    w, m, v = w0, 0.0, 0.0
    history = []
    for t in range(1, steps + 1):
        g = grad_fn(w)
        w *= (1.0 - lr * wd)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        w -= lr * (m / (1 - beta1 ** t)) / (np.sqrt(v / (1 - beta2 ** t)) + eps)
        history.append(w)
    return history


class TestAdamW:
    def _single(self, value):
        config = ModelConfig(d=2, K=1)
        params = init_parameters(np.random.default_rng(0), config, 2, 1)
        params.bases_v[:] = value
        return params

    def test_zero_gradient_zero_decay_fixed_point(self, rng):
        config = ModelConfig(d=4, K=2)
        params = init_parameters(rng, config, 5, 2)
        before = params.copy()
        opt = AdamW(params, lr=0.1, weight_decay=0.0)
        opt.step(params, Gradients.zeros_like(params))
        for name, t in params.tensors():
            assert np.array_equal(t, getattr(before, name))

    def test_zero_gradient_decay_shrinks_multiplicatively(self, rng):
        config = ModelConfig(d=4, K=2)
        params = init_parameters(rng, config, 5, 2)
        before = params.copy()
        opt = AdamW(params, lr=0.1, weight_decay=0.01)
        opt.step(params, Gradients.zeros_like(params))
        for name in AdamW.DECAYED:
            np.testing.assert_allclose(getattr(params, name),
                                       getattr(before, name) * (1 - 0.1 * 0.01),
                                       rtol=1e-15)
        # entity parameters and the affine are never decayed
        for name in ("entity_theta", "ln_gain", "ln_bias"):
            assert np.array_equal(getattr(params, name), getattr(before, name))

    def test_quadratic_descent_matches_reference(self):
        # f(w) = w^2 from w=1: the scalar recursion shows |w| strictly
        # decreasing until momentum overshoots zero at step 12, then a
        # damped oscillation into the optimum; assert exactly that.
        params = self._single(1.0)
        opt = AdamW(params, lr=0.1, weight_decay=0.0)
        ref = adamw_scalar_reference(1.0, lambda w: 2 * w, lr=0.1, steps=100)
        traj = []
        for t in range(100):
            grads = Gradients.zeros_like(params)
            grads.bases_v[:] = 2.0 * params.bases_v
            opt.step(params, grads)
            w = params.bases_v[0, 0]
            assert w == pytest.approx(ref[t], rel=1e-12)
            traj.append(w)
        for prev, cur in zip([1.0] + traj[:10], traj[:11]):
            assert abs(cur) < abs(prev)
        assert abs(traj[-1]) < 0.05
