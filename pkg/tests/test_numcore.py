import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import sggen.numcore as nc
from sggen.errors import ShapeError
from sggen.gradcheck import check_gradients, rel_err
from sggen.proposals import Box


def t(data, rg=False):
    return nc.Tensor(np.asarray(data, dtype=np.float64), requires_grad=rg)


class TestMatmul:
    def test_identity(self):
        a = t(np.eye(2))
        b = t([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(nc.matmul(a, b).data, b.data)

    def test_hand_computed_inner_product(self):
        # [1,2] (1x2) @ [3,4]^T (2x1) = 1*3 + 2*4 = 11
        a = t([[1.0, 2.0]])
        b = t([[3.0], [4.0]])
        assert nc.matmul(a, b).item() == 11.0

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError) as ei:
            nc.matmul(t(np.zeros((2, 3))), t(np.zeros((2, 3))))
        assert "(2, 3)" in str(ei.value)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        a = t(rng.uniform(-1, 1, (3, 4)), rg=True)
        b = t(rng.uniform(-1, 1, (4, 2)), rg=True)
        errs = check_gradients(lambda: nc.tsum(nc.matmul(a, b)), {"a": a, "b": b})
        assert max(errs.values()) < 1e-5


class TestSoftmax:
    def test_symmetry(self):
        y = nc.softmax(t([0.0, 0.0, 0.0]), axis=0)
        np.testing.assert_allclose(y.data, [1 / 3] * 3, atol=1e-15)

    def test_shift_invariance_no_overflow(self):
        y = nc.softmax(t([1000.0, 0.0]), axis=0)
        assert np.isfinite(y.data).all()
        np.testing.assert_allclose(y.data[0], 1.0, atol=1e-12)
        np.testing.assert_allclose(y.data[1], 0.0, atol=1e-12)

    @given(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False))
    def test_singleton_is_one(self, x):
        assert nc.softmax(t([x]), axis=0).data[0] == 1.0

    @given(
        st.lists(st.floats(min_value=-50, max_value=50, allow_nan=False), min_size=1, max_size=12)
    )
    @settings(max_examples=60)
    def test_sums_to_one(self, xs):
        y = nc.softmax(t(xs), axis=0)
        assert abs(y.data.sum() - 1.0) < 1e-12
        assert (y.data >= 0).all()

    def test_axis_sums_on_matrix(self):
        rng = np.random.default_rng(3)
        m = t(rng.normal(size=(4, 5)))
        for axis in (0, 1):
            y = nc.softmax(m, axis=axis)
            np.testing.assert_allclose(y.data.sum(axis=axis), 1.0, atol=1e-12)

    def test_empty_errors(self):
        with pytest.raises(ShapeError):
            nc.softmax(t(np.zeros((0,))), axis=0)


class TestElementwise:
    def test_relu_sign_cases(self):
        np.testing.assert_array_equal(nc.relu(t([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_tanh_odd(self):
        assert nc.tanh(t(0.0)).item() == 0.0
        x = t([0.3, -0.3])
        y = nc.tanh(x)
        assert y.data[0] == -y.data[1]

    def test_concat_and_backward_split(self):
        a = t([1.0], rg=True)
        b = t([2.0], rg=True)
        y = nc.concat([a, b], axis=0)
        np.testing.assert_array_equal(y.data, [1.0, 2.0])
        loss = nc.tsum(nc.mul(y, t([3.0, 5.0])))
        nc.backward(loss)
        np.testing.assert_array_equal(a.grad, [3.0])
        np.testing.assert_array_equal(b.grad, [5.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            nc.add(t([1.0, 2.0]), t([1.0, 2.0, 3.0]))

    def test_scalar_broadcast(self):
        y = nc.mul(t([1.0, 2.0]), t(3.0))
        np.testing.assert_array_equal(y.data, [3.0, 6.0])


class TestConv2d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = t(rng.normal(size=(1, 4, 4)))
        k = t(np.ones((1, 1, 1, 1)))
        np.testing.assert_array_equal(nc.conv2d(x, k).data, x.data)

    def test_all_ones_3x3_center_is_nine(self):
        x = t(np.ones((1, 5, 5)))
        k = t(np.ones((1, 1, 3, 3)))
        y = nc.conv2d(x, k, stride=1, pad=1)
        assert y.shape == (1, 5, 5)
        np.testing.assert_array_equal(y.data[0, 1:4, 1:4], 9.0)
        assert y.data[0, 0, 0] == 4.0

    def test_kernel_gradient_matches_fd(self):
        rng = np.random.default_rng(5)
        x = t(rng.uniform(-1, 1, (2, 5, 5)), rg=True)
        k = t(rng.uniform(-1, 1, (3, 2, 3, 3)), rg=True)
        w = t(rng.uniform(-1, 1, (3, 5, 5)))
        errs = check_gradients(
            lambda: nc.tsum(nc.mul(nc.conv2d(x, k, stride=1, pad=1), w)), {"x": x, "k": k}
        )
        assert max(errs.values()) < 1e-5

    def test_stride_and_nonintegral_output_errors(self):
        x = t(np.zeros((1, 5, 5)))
        k = t(np.zeros((1, 1, 2, 2)))
        with pytest.raises(ShapeError):
            nc.conv2d(x, k, stride=2, pad=0)


class TestBilinearWarp:
    def test_constant_full_canvas(self):
        emb = t(np.full((3, 8, 8), 2.5))
        out = nc.bilinear_warp(emb, Box(0, 0, 16, 16), 16, 16)
        np.testing.assert_allclose(out.data, 2.5)

    def test_zero_embedding(self):
        emb = t(np.zeros((2, 8, 8)))
        out = nc.bilinear_warp(emb, Box(2, 2, 6, 6), 16, 16)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_left_half_box_zeroes_right_half(self):
        rng = np.random.default_rng(1)
        emb = t(rng.normal(size=(2, 8, 8)))
        out = nc.bilinear_warp(emb, Box(0, 0, 8, 16), 16, 16)
        np.testing.assert_array_equal(out.data[:, :, 8:], 0.0)
        assert np.abs(out.data[:, :, :8]).sum() > 0

    def test_zero_area_box_errors(self):
        with pytest.raises((ShapeError, ValueError)):
            nc.bilinear_warp(t(np.zeros((1, 8, 8))), Box(0, 0, 0.0, 5.0), 8, 8)

    def test_disjoint_box_errors(self):
        with pytest.raises(ShapeError):
            nc.bilinear_warp(t(np.zeros((1, 8, 8))), Box(20, 20, 4, 4), 8, 8)

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(2)
        emb = t(rng.uniform(-1, 1, (2, 8, 8)), rg=True)
        w = t(rng.uniform(-1, 1, (2, 8, 8)))
        errs = check_gradients(
            lambda: nc.tsum(nc.mul(nc.bilinear_warp(emb, Box(1.5, 2.0, 5.0, 4.5), 8, 8), w)),
            {"emb": emb},
        )
        assert max(errs.values()) < 1e-5


class TestUpsampleNearest:
    def test_single_cell(self):
        y = nc.upsample_nearest(t([[[1.0]]]))
        np.testing.assert_array_equal(y.data, [[[1.0, 1.0], [1.0, 1.0]]])

    def test_constant_roundtrip(self):
        x = t(np.full((2, 3, 3), 4.0))
        up = nc.upsample_nearest(x)
        down = nc.avg_pool2d(up, 2)
        np.testing.assert_array_equal(down.data, x.data)

    def test_sum_is_four_times_input(self):
        rng = np.random.default_rng(4)
        x = t(rng.normal(size=(3, 4, 5)))
        assert abs(nc.upsample_nearest(x).data.sum() - 4 * x.data.sum()) < 1e-9


class TestBackward:
    def test_quadratic(self):
        x = t([1.0, -2.0, 3.0], rg=True)
        nc.backward(nc.tsum(nc.mul(x, x)))
        np.testing.assert_allclose(x.grad, 2 * x.data)

    def test_disconnected_leaf_grad_zero(self):
        x = t([1.0, 2.0], rg=True)
        y = t([3.0], rg=True)
        nc.backward(nc.tsum(nc.mul(y, y)))
        np.testing.assert_array_equal(nc.grad_value(x), [0.0, 0.0])

    def test_non_scalar_loss_errors(self):
        with pytest.raises(ShapeError):
            nc.backward(t([1.0, 2.0], rg=True))

    def test_three_layer_composite_vs_central_differences(self):
        rng = np.random.default_rng(11)
        w1 = t(rng.uniform(-1, 1, (5, 4)), rg=True)
        b1 = t(rng.uniform(-1, 1, (5,)), rg=True)
        w2 = t(rng.uniform(-1, 1, (3, 5)), rg=True)
        b2 = t(rng.uniform(-1, 1, (3,)), rg=True)
        w3 = t(rng.uniform(-1, 1, (1, 3)), rg=True)
        x = t(rng.uniform(-1, 1, (4,)), rg=True)

        def f():
            h1 = nc.tanh(nc.linear(w1, x, b1))
            h2 = nc.sigmoid(nc.linear(w2, h1, b2))
            return nc.tsum(nc.matvec(w3, h2))

        errs = check_gradients(f, {"w1": w1, "b1": b1, "w2": w2, "b2": b2, "w3": w3, "x": x})
        assert max(errs.values()) < 1e-5

    def test_fanout_accumulates(self):
        x = t([2.0], rg=True)
        y = nc.add(nc.mul(x, t([3.0])), nc.mul(x, x))  # 3x + x^2
        nc.backward(nc.tsum(y))
        np.testing.assert_allclose(x.grad, [3.0 + 2 * 2.0])

    def test_repeated_backward_accumulates_into_grad(self):
        x = t([1.0], rg=True)
        nc.backward(nc.tsum(nc.mul(x, x)))
        nc.backward(nc.tsum(nc.mul(x, x)))
        np.testing.assert_allclose(x.grad, [4.0])


def _random_op_cases(rng):
    """One (closure, leaves) pair per differentiable op, at a random shape."""
    m, k, n = (int(rng.integers(1, 5)) for _ in range(3))
    a = t(rng.uniform(-1, 1, (m, k)), rg=True)
    b = t(rng.uniform(-1, 1, (k, n)), rg=True)
    v = t(rng.uniform(-1, 1, (4,)), rg=True)
    u = t(rng.uniform(-1, 1, (4,)), rg=True)
    # keep kink-free margins for relu/abs/smooth_l1 inputs
    s = t(np.where(np.abs(z := rng.uniform(-1, 1, (3, 3))) < 0.05, z + 0.1, z), rg=True)
    img = t(rng.uniform(-1, 1, (2, 4, 4)), rg=True)
    ker = t(rng.uniform(-1, 1, (2, 2, 3, 3)), rg=True)
    wimg = t(rng.uniform(-1, 1, (2, 4, 4)))
    wv = t(rng.uniform(-1, 1, (4,)))
    wmat = t(rng.uniform(-1, 1, (3, 4)))
    w33 = t(rng.uniform(-1, 1, (3, 3)))
    w34 = t(rng.uniform(-1, 1, (3, 4)))
    cases = {
        "matmul": (lambda: nc.tsum(nc.matmul(a, b)), {"a": a, "b": b}),
        "matvec": (lambda: nc.tsum(nc.matvec(wmat, v)), {"v": v}),
        "add": (lambda: nc.tsum(nc.mul(nc.add(v, u), wv)), {"v": v, "u": u}),
        "sub": (lambda: nc.tsum(nc.mul(nc.sub(v, u), wv)), {"v": v, "u": u}),
        "mul": (lambda: nc.tsum(nc.mul(v, u)), {"v": v, "u": u}),
        "tanh": (lambda: nc.tsum(nc.mul(nc.tanh(s), w33)), {"s": s}),
        "relu": (lambda: nc.tsum(nc.relu(s)), {"s": s}),
        "leaky_relu": (lambda: nc.tsum(nc.leaky_relu(s)), {"s": s}),
        "sigmoid": (lambda: nc.tsum(nc.sigmoid(s)), {"s": s}),
        "abs": (lambda: nc.tsum(nc.absval(s)), {"s": s}),
        "exp": (lambda: nc.tsum(nc.exp(s)), {"s": s}),
        "smooth_l1": (lambda: nc.tsum(nc.smooth_l1(s)), {"s": s}),
        "softmax": (lambda: nc.tsum(nc.mul(nc.softmax(v, axis=0), wv)), {"v": v}),
        "concat": (lambda: nc.tsum(nc.mul(nc.concat([v, u], axis=0), nc.concat([wv, wv], axis=0))), {"v": v, "u": u}),
        "conv2d": (lambda: nc.tsum(nc.mul(nc.conv2d(img, ker, stride=1, pad=1), wimg)), {"img": img, "ker": ker}),
        "avg_pool": (lambda: nc.tsum(nc.avg_pool2d(img, 2)), {"img": img}),
        "upsample": (lambda: nc.tsum(nc.upsample_nearest(img)), {"img": img}),
        "warp": (
            lambda: nc.tsum(nc.mul(nc.bilinear_warp(img, Box(0.5, 0.5, 3.0, 2.5), 4, 4), wimg)),
            {"img": img},
        ),
        "spatial_mean": (lambda: nc.tsum(nc.spatial_mean(img)), {"img": img}),
        "tile_rows": (lambda: nc.tsum(nc.mul(nc.tile_rows(v, 3), w34)), {"v": v}),
        "tile_spatial": (lambda: nc.tsum(nc.tile_spatial(v, 2, 3)), {"v": v}),
        "row": (lambda: nc.tsum(nc.row(a, 0)), {"a": a}),
        "softmax_log": (lambda: nc.neg(nc.log(nc.at(nc.softmax(v, axis=0), 1))), {"v": v}),
    }
    return cases


def test_all_ops_gradient_sweep_20_random_shapes():
    """Every differentiable op matches central differences over >= 20 seeds."""
    worst = {}
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        for name, (f, leaves) in _random_op_cases(rng).items():
            errs = check_gradients(f, leaves)
            worst[name] = max(worst.get(name, 0.0), max(errs.values()))
    bad = {k: v for k, v in worst.items() if v >= 1e-5}
    assert not bad, f"gradient mismatches: {bad}"


def test_forward_determinism():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(3, 6, 6))
    k = rng.normal(size=(2, 3, 3, 3))
    r1 = nc.conv2d(t(x), t(k), pad=1).data
    r2 = nc.conv2d(t(x), t(k), pad=1).data
    np.testing.assert_array_equal(r1, r2)


def test_tape_reverse_topological_order():
    x = t([1.0], rg=True)
    y = nc.mul(x, x)
    z = nc.add(y, x)
    loss = nc.tsum(z)
    tape = nc.ComputeTape.trace(loss)
    order = tape._order
    pos = {id(n): i for i, n in enumerate(order)}
    for node in order:
        for p in node._node.parents:
            if p._node is not None:
                assert pos[id(p)] < pos[id(node)]


def test_rel_err_floor():
    assert rel_err(0.0, 1e-9) < 1e-5
    assert rel_err(100.0, 100.002) > 1e-5
