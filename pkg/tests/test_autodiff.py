import numpy as np
import pytest

from st4d import autodiff as ad
from st4d.autodiff import (GradTape, GradientError, Tensor, attention,
                           finite_diff_check, grad)

from oracles import attention_ref, conv2d_ref, bilinear_ref


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


class TestGrad:
    def test_square(self):
        x = Tensor(3.0, requires_grad=True)
        with GradTape():
            y = x * x
        assert grad(y, [x])[x].data == pytest.approx(6.0)

    def test_softmax_sum_is_constant(self):
        x = Tensor(_rng(0).normal(size=5), requires_grad=True)
        with GradTape():
            y = ad.tsum(ad.softmax(x))
        g = grad(y, [x])[x].data
        assert np.allclose(g, 0.0, atol=1e-12)

    def test_sumsq_gradient(self):
        x = Tensor([0.3, -1.2, 0.5], requires_grad=True)
        with GradTape():
            y = ad.tsum(x * x)
        g = grad(y, [x])[x].data
        assert np.allclose(g, [0.6, -2.4, 1.0], atol=1e-12)
        err = finite_diff_check(lambda t: ad.tsum(t * t), x, step=1e-5)
        assert err < 1e-6

    def test_non_scalar_loss_raises(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with GradTape():
            y = x * x
        with pytest.raises(GradientError):
            grad(y, [x])

    def test_param_not_on_tape_raises(self):
        x = Tensor(2.0, requires_grad=True)
        stranger = Tensor(1.0, requires_grad=True)
        with GradTape():
            y = x * x
        with pytest.raises(GradientError):
            grad(y, [stranger])

    def test_on_tape_but_disconnected_gets_zeros(self):
        x = Tensor(2.0, requires_grad=True)
        z = Tensor(5.0, requires_grad=True)
        with GradTape():
            _side = z * z  # on the tape but not feeding the loss
            y = x * x
        assert grad(y, [z])[z].data == 0.0

    def test_loss_without_tape_raises(self):
        x = Tensor(2.0, requires_grad=True)
        y = x * x  # no tape active
        with pytest.raises(GradientError):
            grad(y, [x])

    def test_gradient_linearity(self):
        rng = _rng(4)
        x = Tensor(rng.normal(size=6), requires_grad=True)
        with GradTape():
            l1 = ad.tsum(ad.exp(x * Tensor(0.3)))
            l2 = ad.tsum(x * x * x)
            both = l1 + l2
        g1 = grad(l1, [x])[x].data
        g2 = grad(l2, [x])[x].data
        gb = grad(both, [x])[x].data
        assert np.allclose(g1 + g2, gb, atol=1e-12)


class TestFiniteDiff:
    def test_quadratic(self):
        err = finite_diff_check(lambda t: ad.tsum(t * t), Tensor(np.array(3.0)), 1e-5)
        assert err < 1e-6

    def test_exp_sum(self):
        x = Tensor([0.1, 0.2])
        err = finite_diff_check(lambda t: ad.exp(ad.tsum(t)), x, 1e-5)
        assert err < 1e-5

    def test_softmax_matmul_chain(self):
        rng = _rng(42)
        x = Tensor(rng.normal(size=(3, 4)))
        w = Tensor(rng.normal(size=(4, 2)))

        def f(t):
            h = ad.softmax(ad.matmul(t, w), axis=-1)
            return ad.tsum(h * h)
        assert finite_diff_check(f, x, 1e-5) < 1e-4

    def test_step_validation(self):
        with pytest.raises(ValueError):
            finite_diff_check(lambda t: ad.tsum(t), Tensor([1.0]), step=0.5)

    @pytest.mark.parametrize("seed", range(10))
    def test_primitives_random_inputs(self, seed):
        # every supported primitive, 10 seeds, rel error < 1e-4
        rng = _rng(1000 + seed)
        x = Tensor(rng.normal(size=(3, 4)) * 0.7)
        y = Tensor(rng.normal(size=(3, 4)) * 0.7 + 2.5)
        m = Tensor(rng.normal(size=(4, 3)))
        grid = Tensor(rng.normal(size=(5, 5, 2)))
        u = Tensor(rng.uniform(0.2, 3.8, size=4))
        v = Tensor(rng.uniform(0.2, 3.8, size=4))
        cases = {
            "add": (lambda t: ad.tsum(ad.add(t, y) * y), x),
            "mul": (lambda t: ad.tsum(ad.mul(t, y)), x),
            "div": (lambda t: ad.tsum(ad.div(t, y)), x),
            "matmul": (lambda t: ad.tsum(ad.matmul(t, m) ** 2), x),
            "exp": (lambda t: ad.tsum(ad.exp(t)), x),
            "log": (lambda t: ad.tsum(ad.log(t)), y),
            "power": (lambda t: ad.tsum(t ** 3), x),
            "sum": (lambda t: ad.tsum(ad.tsum(t, axis=1) ** 2), x),
            "mean": (lambda t: ad.tsum(ad.tmean(t, axis=0) ** 2), x),
            "sorted_mean": (lambda t: ad.tsum(ad.sorted_mean(t, 0) ** 2), x),
            "softmax": (lambda t: ad.tsum(ad.softmax(t, axis=-1) ** 2), x),
            "concat": (lambda t: ad.tsum(ad.concatenate([t, y], axis=0) ** 2), x),
            "slice": (lambda t: ad.tsum(t[1:, :2] ** 2), x),
            "l2norm": (lambda t: ad.l2norm(t), x),
            "inner": (lambda t: ad.dot(t, y), x),
            "tanh": (lambda t: ad.tsum(ad.tanh(t)), x),
            "sigmoid": (lambda t: ad.tsum(ad.sigmoid(t) ** 2), x),
            "abs": (lambda t: ad.tsum(ad.absolute(t)), x),
            "bilinear_grid": (lambda t: ad.tsum(ad.grid_sample2d(t, u, v) ** 2), grid),
            "bilinear_coord": (lambda t: ad.tsum(ad.grid_sample2d(grid, t, v) ** 2), u),
            "take_rows": (lambda t: ad.tsum(ad.take_rows(t, np.array([2, 0, 1])) * y), x),
            "expand_axis": (lambda t: ad.tsum(ad.expand_axis(t, 0, 3) ** 2), x),
            "cumprod": (lambda t: ad.tsum(ad.exclusive_cumprod(t, axis=0) ** 2), y),
        }
        attn_v = Tensor(rng.normal(size=(4, 2)))
        cases["attention"] = (
            lambda t: ad.tsum(attention(t, m, attn_v) ** 2),
            Tensor(rng.normal(size=(2, 3))),
        )
        for name, (f, inp) in cases.items():
            err = finite_diff_check(f, inp, 1e-5)
            assert err < 1e-4, f"{name}: rel err {err}"


class TestPrimitives:
    def test_attention_single_key(self):
        rng = _rng(1)
        q = Tensor(rng.normal(size=(3, 4)))
        k = Tensor(rng.normal(size=(1, 4)))
        v = Tensor(rng.normal(size=(1, 2)))
        out = attention(q, k, v)
        assert np.allclose(out.data, np.broadcast_to(v.data, (3, 2)))

    def test_attention_uniform_logits(self):
        # q k^T all equal -> softmax uniform -> mean of v rows
        q = Tensor(np.ones((2, 4)))
        k = Tensor(np.ones((3, 4)))
        v = Tensor(_rng(2).normal(size=(3, 2)))
        out = attention(q, k, v)
        assert np.allclose(out.data, v.data.mean(axis=0), atol=1e-14)

    def test_attention_matches_scalar_loop(self):
        rng = _rng(7)
        q = rng.normal(size=(2, 4))
        k = rng.normal(size=(3, 4))
        v = rng.normal(size=(3, 2))
        out = attention(Tensor(q), Tensor(k), Tensor(v))
        ref = attention_ref(q.tolist(), k.tolist(), v.tolist())
        assert np.allclose(out.data, ref, atol=1e-12)

    def test_attention_shape_mismatch(self):
        with pytest.raises(ValueError):
            attention(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))),
                      Tensor(np.ones((2, 2))))

    def test_conv2d_matches_scalar_loop(self):
        rng = _rng(11)
        x = rng.normal(size=(1, 2, 5, 6))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        for stride, pad in [(1, 1), (2, 1), (1, 0), (2, 0)]:
            out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad)
            ref = conv2d_ref(x[0].tolist(), w.tolist(), b.tolist(), stride, pad)
            assert np.allclose(out.data[0], ref, atol=1e-12), (stride, pad)

    def test_conv2d_gradients(self):
        rng = _rng(12)
        x = Tensor(rng.normal(size=(2, 2, 5, 5)))
        w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)
        for probe in (x, w, b):
            def f(t, probe=probe):
                args = {id(x): x, id(w): w, id(b): b}
                args[id(probe)] = t
                return ad.tsum(ad.conv2d(args[id(x)], args[id(w)], args[id(b)],
                                         stride=2, pad=1) ** 2)
            assert finite_diff_check(f, probe, 1e-5) < 1e-4

    def test_bilinear_matches_scalar_loop(self):
        rng = _rng(37)
        grid = rng.normal(size=(6, 6, 3))
        out = ad.grid_sample2d(Tensor(grid), Tensor([0.3 * 5]), Tensor([0.7 * 5]))
        ref = bilinear_ref(grid.tolist(), 0.3 * 5, 0.7 * 5)
        assert np.allclose(out.data[0], ref, atol=1e-13)

    def test_bilinear_exact_at_lattice(self):
        rng = _rng(38)
        grid = rng.normal(size=(4, 4, 2))
        out = ad.grid_sample2d(Tensor(grid), Tensor([2.0]), Tensor([3.0]))
        assert np.array_equal(out.data[0], grid[2, 3])

    def test_bilinear_clamps(self):
        grid = Tensor(np.arange(8.0).reshape(2, 2, 2))
        out = ad.grid_sample2d(grid, Tensor([-5.0]), Tensor([9.0]))
        assert np.array_equal(out.data[0], grid.data[0, 1])

    def test_exclusive_cumprod_values(self):
        x = Tensor([2.0, 3.0, 4.0])
        out = ad.exclusive_cumprod(x, axis=0)
        assert np.allclose(out.data, [1.0, 2.0, 6.0])

    def test_upsample_nearest(self):
        x = Tensor(np.arange(4.0).reshape(1, 1, 2, 2))
        up = ad.upsample_nearest2(x)
        assert up.shape == (1, 1, 4, 4)
        assert np.array_equal(up.data[0, 0, :2, :2],
                              np.full((2, 2), x.data[0, 0, 0, 0]))
        err = finite_diff_check(lambda t: ad.tsum(ad.upsample_nearest2(t) ** 2), x, 1e-5)
        assert err < 1e-6

    def test_broadcast_rules(self):
        a = Tensor(np.ones((2, 3)))
        with pytest.raises(ValueError):
            ad.add(a, Tensor(np.ones((3, 2))))
        # suffix broadcast is the allowed batch form
        out = ad.add(a, Tensor(np.ones(3)))
        assert out.shape == (2, 3)
        # explicit size-1 dims allowed at equal rank
        out = ad.mul(a, Tensor(np.ones((2, 1))))
        assert out.shape == (2, 3)

    def test_sorted_mean_is_permutation_invariant(self):
        rng = _rng(13)
        x = rng.normal(size=(4, 8, 3))
        perm = rng.permutation(8)
        a = ad.sorted_mean(Tensor(x), 1).data
        b = ad.sorted_mean(Tensor(x[:, perm]), 1).data
        assert np.array_equal(a, b)

    def test_matmul_batched(self):
        rng = _rng(14)
        a = rng.normal(size=(3, 2, 4))
        b = rng.normal(size=(3, 4, 5))
        out = ad.matmul(Tensor(a), Tensor(b))
        assert np.allclose(out.data, a @ b)
        w = rng.normal(size=(4, 5))
        out2 = ad.matmul(Tensor(a), Tensor(w))
        assert np.allclose(out2.data, a @ w)
        err = finite_diff_check(
            lambda t: ad.tsum(ad.matmul(t, Tensor(w)) ** 2), Tensor(a), 1e-5)
        assert err < 1e-4


class TestDeterminism:
    def test_forward_bit_reproducible(self):
        def run():
            rng = _rng(99)
            x = Tensor(rng.normal(size=(4, 4)))
            w = Tensor(rng.normal(size=(4, 4)))
            return ad.tsum(ad.softmax(ad.matmul(ad.tanh(x), w))).data.tobytes()
        assert run() == run()

    def test_tape_replay_single_visit(self):
        # reusing one intermediate twice must accumulate, not double-visit
        x = Tensor(2.0, requires_grad=True)
        with GradTape() as tape:
            h = x * x
            y = h * h  # dy/dx = 4 x^3 = 32
        assert tape.gradient(y, [x])[x].data == pytest.approx(32.0)
