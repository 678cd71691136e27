import numpy as np
import pytest

from motkit import network as net
from motkit.autodiff import ContractError, ShapeError, Tensor, grad_check


@pytest.fixture(scope="module")
def toy():
    return net.toy_config()


@pytest.fixture(scope="module")
def toy_params(toy):
    return net.init_params(toy, np.random.default_rng(0))


# -- shape contracts ----------------------------------------------------------

def test_toy_feature_sides(toy):
    assert net.feature_side(toy, toy.exemplar_size) == 10
    assert net.feature_side(toy, toy.instance_size_train) == 22
    assert net.feature_side(toy, toy.instance_size_track) == 26


def test_full_scale_feature_sides():
    full = net.full_config()
    assert net.feature_side(full, 127) == 6
    assert net.feature_side(full, 239) == 20
    assert net.feature_side(full, 255) == 22
    stride, _ = net.feature_geometry(full)
    assert stride == 8


def test_toy_backbone_output_shapes(toy, toy_params):
    rng = np.random.default_rng(1)
    for size, side in ((31, 10), (55, 22), (62, 26)):
        f = net.backbone_forward(Tensor(rng.uniform(0, 1, (size, size, 3))),
                                 toy_params, toy)
        assert f.data.shape == (side, side, 32)


def test_backbone_rejects_unconfigured_patch_size(toy, toy_params):
    with pytest.raises(ShapeError):
        net.backbone_forward(Tensor(np.zeros((33, 33, 3))), toy_params, toy)


def test_tsa_reduction_must_divide_embed_dim():
    with pytest.raises(ContractError):
        net.toy_config().__class__(
            layers=net.toy_config().layers, exemplar_size=31, instance_size_train=55,
            instance_size_track=62, embed_dim=32, tsa_reduction=5,
            num_identities=4, identity_hidden=8)


# -- cross correlation ----------------------------------------------------------

def test_cross_correlation_zero_exemplar_gives_bias():
    rng = np.random.default_rng(2)
    f_x = Tensor(rng.normal(size=(5, 5, 3)))
    f_z = Tensor(np.zeros((2, 2, 3)))
    resp = net.cross_correlation(f_x, f_z, Tensor([0.37]))
    assert resp.v.data.shape == (4, 4)
    np.testing.assert_allclose(resp.v.data, 0.37, atol=1e-15)


def test_cross_correlation_self_is_inner_product_plus_bias():
    rng = np.random.default_rng(3)
    f = rng.normal(size=(3, 3, 4))
    resp = net.cross_correlation(Tensor(f), Tensor(f), Tensor([0.5]))
    assert resp.v.data.shape == (1, 1)
    np.testing.assert_allclose(resp.v.data[0, 0], (f * f).sum() + 0.5, atol=1e-12)


def test_cross_correlation_matches_sliding_window_oracle():
    rng = np.random.default_rng(4)
    f_x = rng.normal(size=(4, 4, 2))
    f_z = rng.normal(size=(2, 2, 2))
    resp = net.cross_correlation(Tensor(f_x), Tensor(f_z), Tensor([0.0]))
    want = np.zeros((3, 3))
    for r in range(3):
        for c in range(3):
            want[r, c] = (f_x[r:r + 2, c:c + 2, :] * f_z).sum()
    np.testing.assert_allclose(resp.v.data, want, atol=1e-12)


def test_cross_correlation_is_bilinear_in_search_feature():
    rng = np.random.default_rng(5)
    f_x = rng.normal(size=(5, 5, 2))
    f_z = rng.normal(size=(3, 3, 2))
    zero_b = Tensor([0.0])
    base = net.cross_correlation(Tensor(f_x), Tensor(f_z), zero_b).v.data
    scaled = net.cross_correlation(Tensor(2.5 * f_x), Tensor(f_z), zero_b).v.data
    np.testing.assert_allclose(scaled, 2.5 * base, atol=1e-12)


def test_cross_correlation_channel_mismatch():
    with pytest.raises(ShapeError):
        net.cross_correlation(Tensor(np.zeros((5, 5, 3))), Tensor(np.zeros((2, 2, 2))),
                              Tensor([0.0]))


# -- attention -------------------------------------------------------------------

def test_tsa_zero_weights_halves_the_feature(toy, toy_params):
    params = dict(toy_params)
    params["tsa.sot.w1"] = Tensor(np.zeros((8, 32)))
    params["tsa.sot.w2"] = Tensor(np.zeros((32, 8)))
    f = Tensor(np.random.default_rng(6).normal(size=(10, 10, 32)))
    out = net.tsa_attention(f, "sot", params)
    np.testing.assert_allclose(out.data, f.data / 2.0, atol=1e-15)


def test_tsa_zero_feature_stays_zero(toy, toy_params):
    out = net.tsa_attention(Tensor(np.zeros((10, 10, 32))), "aff", toy_params)
    np.testing.assert_array_equal(out.data, np.zeros((10, 10, 32)))


def test_tsa_matches_composition_of_primitives(toy, toy_params):
    from motkit.autodiff import _sigmoid_arr
    rng = np.random.default_rng(7)
    f = rng.normal(size=(10, 10, 32))
    out = net.tsa_attention(Tensor(f), "aff", toy_params).data
    s = f.mean(axis=(0, 1))
    hidden = np.maximum(0.0, toy_params["tsa.aff.w1"].data @ s)
    a = _sigmoid_arr(toy_params["tsa.aff.w2"].data @ hidden)
    assert np.all(a > 0.0) and np.all(a < 1.0)
    np.testing.assert_allclose(out, f * a, atol=1e-12)


def test_tsa_rejects_unknown_task(toy_params):
    with pytest.raises(ContractError):
        net.tsa_attention(Tensor(np.zeros((4, 4, 32))), "both", toy_params)


# -- embedding / identity ----------------------------------------------------------

def test_embed_is_unit_norm():
    rng = np.random.default_rng(8)
    w = net.embed(Tensor(rng.normal(size=(6, 6, 16))))
    assert abs(np.linalg.norm(w.data) - 1.0) < 1e-12


def test_embed_rejects_all_zero_feature():
    with pytest.raises(ContractError):
        net.embed(Tensor(np.zeros((6, 6, 16))))


def test_affinity_bounds_and_trivial_values():
    w = net.embed(Tensor(np.random.default_rng(9).normal(size=(6, 6, 8))))
    assert abs(net.affinity(w, w).item() - 1.0) < 1e-12
    a = Tensor(np.eye(4)[0])
    b = Tensor(np.eye(4)[1])
    assert net.affinity(a, b).item() == 0.0
    c = Tensor(-np.eye(4)[0])
    assert net.affinity(a, c).item() == -1.0


def test_affinity_in_range_for_random_patches(toy, toy_params):
    rng = np.random.default_rng(10)
    for _ in range(5):
        f1 = net.backbone_forward(Tensor(rng.uniform(0, 1, (31, 31, 3))), toy_params, toy)
        f2 = net.backbone_forward(Tensor(rng.uniform(0, 1, (31, 31, 3))), toy_params, toy)
        w1 = net.embed(net.tsa_attention(f1, "aff", toy_params))
        w2 = net.embed(net.tsa_attention(f2, "aff", toy_params))
        assert -1.0 - 1e-12 <= net.affinity(w1, w2).item() <= 1.0 + 1e-12


def test_identity_logits_shapes_and_uniformity(toy, toy_params):
    w = Tensor(np.random.default_rng(11).normal(size=32))
    logits = net.identity_logits(w, toy_params)
    assert logits.data.shape == (20,)
    zeroed = dict(toy_params)
    zeroed["ident.fc1.weight"] = Tensor(np.zeros((64, 32)))
    zeroed["ident.fc1.bias"] = Tensor(np.zeros(64))
    zeroed["ident.fc2.weight"] = Tensor(np.zeros((20, 64)))
    zeroed["ident.fc2.bias"] = Tensor(np.zeros(20))
    from motkit.autodiff import softmax
    p = softmax(net.identity_logits(w, zeroed)).data
    np.testing.assert_allclose(p, np.full(20, 0.05), atol=1e-15)


def test_identity_logits_respects_config_size():
    cfg = net.toy_config(num_identities=7)
    params = net.init_params(cfg, np.random.default_rng(12))
    w = Tensor(np.random.default_rng(13).normal(size=32))
    assert net.identity_logits(w, params).data.shape == (7,)


# -- parameter checking --------------------------------------------------------------

def test_check_params_flags_mismatches(toy, toy_params):
    bad = dict(toy_params)
    bad["conv1.kernel"] = Tensor(np.zeros((5, 5, 3, 16)))
    del bad["corr.bias"]
    with pytest.raises(ContractError) as err:
        net.check_params(toy, bad)
    msg = str(err.value)
    assert "conv1.kernel" in msg and "corr.bias" in msg


def test_init_params_deterministic(toy):
    a = net.init_params(toy, np.random.default_rng(3))
    b = net.init_params(toy, np.random.default_rng(3))
    for name in a:
        np.testing.assert_array_equal(a[name].data, b[name].data)


# -- composed forward gradient --------------------------------------------------------

def test_attended_correlation_and_embedding_pass_grad_check(toy):
    rng = np.random.default_rng(14)
    cfg = toy
    params = net.init_params(cfg, rng)
    z = Tensor(rng.uniform(0, 1, (cfg.exemplar_size, cfg.exemplar_size, 3)))
    x = Tensor(rng.uniform(0, 1, (cfg.instance_size_train, cfg.instance_size_train, 3)))
    roi_box = net.centered_roi_box(cfg, cfg.instance_size_train)

    def fn():
        fz = net.backbone_forward(z, params, cfg)
        fx = net.backbone_forward(x, params, cfg)
        resp = net.correlation_response(net.tsa_attention(fx, "sot", params),
                                        net.tsa_attention(fz, "sot", params), params)
        w_z = net.embed(net.tsa_attention(fz, "aff", params))
        w_x = net.instance_embedding(net.tsa_attention(fx, "aff", params), roi_box, cfg)
        return resp.v.mean() + net.affinity(w_z, w_x)

    err = grad_check(fn, list(params.values()), h=1e-5, sample_per_param=2,
                     rng=np.random.default_rng(0))
    assert err < 1e-4
