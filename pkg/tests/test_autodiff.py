import numpy as np
import pytest

from motkit import autodiff as ad
from motkit.autodiff import ContractError, ShapeError, Tensor


# -- independent oracles (plain loops, no shared code with the implementation)

def conv2d_oracle(x, k, stride, bias):
    H, W, cin = x.shape
    kk, _, _, cout = k.shape
    hp = (H - kk) // stride + 1
    wp = (W - kk) // stride + 1
    out = np.zeros((hp, wp, cout))
    for r in range(hp):
        for c in range(wp):
            for co in range(cout):
                acc = 0.0
                for i in range(kk):
                    for j in range(kk):
                        for ci in range(cin):
                            acc += x[r * stride + i, c * stride + j, ci] * k[i, j, ci, co]
                out[r, c, co] = acc + bias[co]
    return out


def max_pool_oracle(x, win, stride):
    H, W, C = x.shape
    hp = (H - win) // stride + 1
    wp = (W - win) // stride + 1
    out = np.zeros((hp, wp, C))
    for r in range(hp):
        for c in range(wp):
            for ch in range(C):
                out[r, c, ch] = x[r * stride:r * stride + win,
                                  c * stride:c * stride + win, ch].max()
    return out


def bilinear_oracle(f, box, out_side):
    H, W, C = f.shape
    x, y, w, h = box
    out = np.zeros((out_side, out_side, C))
    for r in range(out_side):
        for c in range(out_side):
            u = x + (c + 0.5) * w / out_side - 0.5
            v = y + (r + 0.5) * h / out_side - 0.5
            x0, y0 = int(np.floor(u)), int(np.floor(v))
            tx, ty = u - x0, v - y0
            for ch in range(C):
                def at(yy, xx):
                    return f[min(max(yy, 0), H - 1), min(max(xx, 0), W - 1), ch]
                out[r, c, ch] = ((1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x0 + 1))
                                 + ty * ((1 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1)))
    return out


# -- conv2d -----------------------------------------------------------------

def test_conv2d_one_by_one_identity():
    x = Tensor(np.random.default_rng(0).normal(size=(4, 4, 1)))
    k = Tensor(np.ones((1, 1, 1, 1)))
    out = ad.conv2d(x, k, 1, Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, x.data)


def test_conv2d_zero_input_passes_bias():
    out = ad.conv2d(Tensor(np.zeros((5, 5, 2))), Tensor(np.zeros((3, 3, 2, 4))), 1,
                    Tensor(np.full(4, 0.7)))
    assert out.data.shape == (3, 3, 4)
    np.testing.assert_array_equal(out.data, np.full((3, 3, 4), 0.7))


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_matches_loop_oracle(stride):
    rng = np.random.default_rng(7)
    x = rng.normal(size=(5, 5, 2))
    k = rng.normal(size=(3, 3, 2, 1))
    b = rng.normal(size=1)
    got = ad.conv2d(Tensor(x), Tensor(k), stride, Tensor(b)).data
    np.testing.assert_allclose(got, conv2d_oracle(x, k, stride, b), atol=1e-12)


def test_conv2d_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as err:
        ad.conv2d(Tensor(np.zeros((5, 5, 2))), Tensor(np.zeros((3, 3, 3, 1))), 1,
                  Tensor(np.zeros(1)))
    assert "(5, 5, 2)" in str(err.value) and "(3, 3, 3, 1)" in str(err.value)


def test_conv2d_input_smaller_than_kernel():
    with pytest.raises(ShapeError):
        ad.conv2d(Tensor(np.zeros((2, 2, 1))), Tensor(np.zeros((3, 3, 1, 1))), 1,
                  Tensor(np.zeros(1)))


# -- elementwise -------------------------------------------------------------

def test_relu_values():
    out = ad.relu(Tensor([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])


def test_sigmoid_zero_is_half():
    assert ad.sigmoid(Tensor([0.0])).data[0] == 0.5


def test_sigmoid_log3_is_three_quarters():
    np.testing.assert_allclose(ad.sigmoid(Tensor([np.log(3.0)])).data, [0.75], atol=1e-15)


def test_sigmoid_finite_on_extremes():
    out = ad.sigmoid(Tensor([-1e4, 1e4])).data
    assert np.all(np.isfinite(out)) and out[0] >= 0.0 and out[1] <= 1.0


# -- max pool -----------------------------------------------------------------

def test_max_pool_constant_input():
    out = ad.max_pool2d(Tensor(np.full((4, 4, 2), 3.5)), 2, 2)
    np.testing.assert_array_equal(out.data, np.full((2, 2, 2), 3.5))


def test_max_pool_two_by_two():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1)
    assert ad.max_pool2d(Tensor(x), 2, 2).data[0, 0, 0] == 4.0


def test_max_pool_matches_loop_oracle():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(6, 6, 3))
    got = ad.max_pool2d(Tensor(x), 2, 2).data
    np.testing.assert_allclose(got, max_pool_oracle(x, 2, 2), atol=1e-12)


def test_max_pool_tie_routes_gradient_to_first_cell():
    x = Tensor(np.ones((2, 2, 1)), requires_grad=True)
    ad.backward(ad.max_pool2d(x, 2, 2).sum())
    np.testing.assert_array_equal(x.grad[:, :, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_max_pool_window_too_large():
    with pytest.raises(ShapeError):
        ad.max_pool2d(Tensor(np.zeros((3, 3, 1))), 4, 1)


# -- pooling / affine ---------------------------------------------------------

def test_global_avg_pool_one_by_one_is_identity():
    x = np.random.default_rng(1).normal(size=(1, 1, 5))
    np.testing.assert_array_equal(ad.global_avg_pool(Tensor(x)).data, x[0, 0])


def test_global_avg_pool_constant_channel():
    x = np.zeros((3, 4, 2))
    x[:, :, 1] = 5.0
    np.testing.assert_array_equal(ad.global_avg_pool(Tensor(x)).data, [0.0, 5.0])


def test_global_avg_pool_matches_mean_oracle():
    x = np.random.default_rng(2).normal(size=(6, 6, 4))
    want = [x[:, :, c].sum() / 36.0 for c in range(4)]
    np.testing.assert_allclose(ad.global_avg_pool(Tensor(x)).data, want, atol=1e-12)


def test_fully_connected_identity_and_zero():
    x = np.random.default_rng(3).normal(size=4)
    out = ad.fully_connected(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4)))
    np.testing.assert_array_equal(out.data, x)
    out = ad.fully_connected(Tensor(x), Tensor(np.zeros((3, 4))), Tensor([1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(out.data, [1.0, 2.0, 3.0])


def test_fully_connected_matches_loop_oracle():
    rng = np.random.default_rng(4)
    x, w, b = rng.normal(size=4), rng.normal(size=(3, 4)), rng.normal(size=3)
    want = [sum(w[i, j] * x[j] for j in range(4)) + b[i] for i in range(3)]
    got = ad.fully_connected(Tensor(x), Tensor(w), Tensor(b)).data
    np.testing.assert_allclose(got, want, atol=1e-12)


# -- softmax ------------------------------------------------------------------

def test_softmax_uniform():
    np.testing.assert_allclose(ad.softmax(Tensor([3.0] * 4)).data, [0.25] * 4, atol=1e-15)


def test_softmax_closed_form():
    np.testing.assert_allclose(ad.softmax(Tensor([0.0, np.log(3.0)])).data,
                               [0.25, 0.75], atol=1e-15)


def test_softmax_shift_invariance_and_normalization():
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = rng.normal(size=6)
        p = ad.softmax(Tensor(x)).data
        q = ad.softmax(Tensor(x + 100.0)).data
        assert abs(p.sum() - 1.0) < 1e-12
        np.testing.assert_allclose(p, q, atol=1e-12)
        assert np.all(p > 0)


# -- backward / tape ----------------------------------------------------------

def test_backward_sum_gives_ones():
    w = Tensor(np.random.default_rng(6).normal(size=(3, 4)), requires_grad=True)
    ad.backward(w.sum())
    np.testing.assert_array_equal(w.grad, np.ones((3, 4)))


def test_backward_dot_square():
    w = Tensor([1.0, -2.0, 0.5], requires_grad=True)
    ad.backward(ad.dot(w, w))
    np.testing.assert_allclose(w.grad, 2 * w.data, atol=1e-15)


def test_backward_requires_scalar():
    w = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        ad.backward(w * 2.0)


def test_tape_visits_shared_node_once():
    w = Tensor([2.0], requires_grad=True)
    y = w * 3.0
    out = (y + y).sum()
    tape = ad.Tape.trace(out)
    names = [t.op.name for t in tape.nodes]
    assert names.count("mul") == 1  # the shared node is recorded once
    ad.backward(out)
    np.testing.assert_allclose(w.grad, [6.0])


def test_tape_order_is_execution_order():
    a = Tensor([1.0], requires_grad=True)
    b = ad.relu(a)
    c = ad.sigmoid(b)
    d = c.sum()
    tape = ad.Tape.trace(d)
    assert [t.op.name for t in tape.nodes] == ["relu", "sigmoid", "sum"]


def test_grad_accumulates_over_multiple_uses():
    w = Tensor([1.0, 2.0], requires_grad=True)
    out = (w * 2.0 + w * 3.0).sum()
    ad.backward(out)
    np.testing.assert_allclose(w.grad, [5.0, 5.0])


# -- grad_check ---------------------------------------------------------------

def test_grad_check_quadratic_bowl():
    w = Tensor(np.random.default_rng(8).normal(size=5), requires_grad=True)
    assert ad.grad_check(lambda: ad.dot(w, w), [w]) < 1e-9


def test_grad_check_conv_relu_composite():
    rng = np.random.default_rng(9)
    x = Tensor(rng.normal(size=(5, 5, 2)), requires_grad=True)
    k = Tensor(rng.normal(size=(3, 3, 2, 2)), requires_grad=True)
    b = Tensor(rng.normal(size=2), requires_grad=True)
    err = ad.grad_check(lambda: ad.relu(ad.conv2d(x, k, 1, b)).sum(), [x, k, b])
    assert err < 1e-4


def test_grad_check_flags_corrupted_backward():
    x = Tensor(np.random.default_rng(10).normal(size=4), requires_grad=True)

    def broken_double():
        # forward computes 2x but the recorded rule claims d/dx = 3
        return ad._result(2.0 * x.data, "broken", (x,), lambda g: (3.0 * g,)).sum()

    assert ad.grad_check(broken_double, [x]) > 1e-2


def test_grad_check_reports_nonfinite():
    x = Tensor([1e308], requires_grad=True)
    with np.errstate(over="ignore"), pytest.raises(ContractError, match="parameter 0"):
        ad.grad_check(lambda: (x * x).sum(), [x], h=1e300)


# -- roi_align ----------------------------------------------------------------

def test_roi_align_aligned_box_is_a_crop():
    f = np.random.default_rng(12).normal(size=(10, 10, 2))
    out = ad.roi_align(Tensor(f), (2.0, 3.0, 6.0, 6.0), 6).data
    np.testing.assert_allclose(out, f[3:9, 2:8, :], atol=1e-12)


def test_roi_align_constant_map():
    f = np.full((8, 8, 3), 2.5)
    out = ad.roi_align(Tensor(f), (1.3, 0.7, 4.9, 5.3), 6).data
    np.testing.assert_allclose(out, np.full((6, 6, 3), 2.5), atol=1e-12)


def test_roi_align_matches_bilinear_oracle():
    rng = np.random.default_rng(13)
    f = rng.normal(size=(10, 10, 2))
    for _ in range(10):
        box = (rng.uniform(-1, 6), rng.uniform(-1, 6), rng.uniform(1, 5), rng.uniform(1, 5))
        got = ad.roi_align(Tensor(f), box, 6).data
        np.testing.assert_allclose(got, bilinear_oracle(f, box, 6), atol=1e-12)


def test_roi_align_rejects_degenerate_and_outside_boxes():
    f = Tensor(np.zeros((5, 5, 1)))
    with pytest.raises(ContractError):
        ad.roi_align(f, (1.0, 1.0, 0.0, 2.0), 4)
    with pytest.raises(ContractError):
        ad.roi_align(f, (10.0, 10.0, 2.0, 2.0), 4)


# -- vector helpers -----------------------------------------------------------

def test_l2_normalize_unit_norm_and_zero_rejection():
    v = ad.l2_normalize(Tensor([3.0, 4.0]))
    np.testing.assert_allclose(v.data, [0.6, 0.8], atol=1e-15)
    with pytest.raises(ContractError):
        ad.l2_normalize(Tensor(np.zeros(4)))


def test_channel_scale():
    f = np.ones((2, 2, 3))
    out = ad.channel_scale(Tensor(f), Tensor([1.0, 2.0, 3.0])).data
    np.testing.assert_array_equal(out[0, 0], [1.0, 2.0, 3.0])


def test_log1p_sum_exp_matches_naive():
    rng = np.random.default_rng(14)
    for _ in range(20):
        v = rng.normal(size=5) * 2
        got = ad.log1p_sum_exp(Tensor(v)).item()
        np.testing.assert_allclose(got, np.log(1.0 + np.exp(v).sum()), atol=1e-12)


def test_log1p_sum_exp_stable_for_large_inputs():
    got = ad.log1p_sum_exp(Tensor([1000.0, 999.0])).item()
    assert np.isfinite(got) and abs(got - 1000.31326168752) < 1e-6


def test_cross_entropy_matches_softmax_log():
    rng = np.random.default_rng(15)
    for _ in range(20):
        logits = rng.normal(size=5)
        label = int(rng.integers(5))
        p = np.exp(logits - logits.max())
        p /= p.sum()
        got = ad.cross_entropy(Tensor(logits), label).item()
        np.testing.assert_allclose(got, -np.log(p[label]), atol=1e-12)
    with pytest.raises(ContractError):
        ad.cross_entropy(Tensor(np.zeros(3)), 3)


# -- forward finiteness --------------------------------------------------------

def test_forward_ops_stay_finite_on_finite_inputs():
    rng = np.random.default_rng(16)
    for _ in range(50):
        x = Tensor(rng.normal(size=(6, 6, 2)) * 100.0)
        k = Tensor(rng.normal(size=(3, 3, 2, 2)))
        b = Tensor(rng.normal(size=2))
        for t in (ad.conv2d(x, k, 1, b), ad.relu(x), ad.sigmoid(x), ad.softplus(x),
                  ad.max_pool2d(x, 2, 2), ad.global_avg_pool(x)):
            assert np.all(np.isfinite(t.data))
        v = Tensor(rng.normal(size=8) * 500.0)
        for t in (ad.softmax(v), ad.log1p_sum_exp(v), ad.cross_entropy(v, 0)):
            assert np.all(np.isfinite(t.data))


# -- checkpoints ----------------------------------------------------------------

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(17)
    named = {
        "conv1.kernel": Tensor(rng.normal(size=(3, 3, 2, 4))),
        "bias": Tensor(rng.normal(size=4)),
        "scalar": Tensor(rng.normal(size=1)),
    }
    path = tmp_path / "params.bin"
    ad.save_tensors(path, named)
    loaded = ad.load_tensors(path)
    assert list(loaded) == list(named)
    for name, t in named.items():
        assert loaded[name].dtype == np.float64
        np.testing.assert_array_equal(loaded[name], t.data)
    # writing the loaded dict reproduces the same bytes
    path2 = tmp_path / "params2.bin"
    ad.save_tensors(path2, loaded)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ContractError):
        ad.load_tensors(path)
