import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spdpool import gradcheck as G
from spdpool import network as N
from spdpool.network import BiMap, CovPool, Dense, GaussPool, LogEig, ReEig, Softmax, Vectorize


def kinds(spec):
    return [type(layer) for layer in spec.layers]


def test_model1_layout():
    spec = N.build_preset("model1", 256, 7)
    assert spec.layers == [CovPool(), BiMap(128), ReEig(), LogEig(), Vectorize(), Dense(2000), Dense(7), Softmax(7)]


def test_model2_and_model4_hidden_widths():
    assert [l.units for l in N.build_preset("model2", 256, 7).layers if isinstance(l, Dense)] == [2000, 128, 7]
    assert [l.units for l in N.build_preset("model4", 256, 7).layers if isinstance(l, Dense)] == [2000, 512, 7]


def test_model3_has_two_bire_blocks():
    spec = N.build_preset("model3", 256, 7)
    assert kinds(spec)[:6] == [CovPool, BiMap, ReEig, BiMap, ReEig, LogEig]
    assert [l.d_out for l in spec.layers if isinstance(l, BiMap)] == [128, 64]


def test_bire4_dims():
    spec = N.build_preset("bire4", 128, 7)
    assert [l.d_out for l in spec.layers if isinstance(l, BiMap)] == [64, 32, 16, 8]
    assert kinds(spec).count(ReEig) == 4
    assert spec.layers[-2:] == [Dense(7), Softmax(7)]


@pytest.mark.parametrize("d, blocks, want", [(8, 4, [4, 4, 4, 4]), (3, 2, [3, 3]), (20, 3, [10, 5, 4])])
def test_halving_floors_at_four(d, blocks, want):
    assert N.bire_dims(d, blocks) == want


def test_unknown_preset():
    with pytest.raises(N.SpecError, match="unknown preset"):
        N.build_preset("model9", 8, 2)


def test_gauss_preset_grows_input():
    spec = N.build_preset("bire2", 8, 3, pool="gauss")
    assert isinstance(spec.layers[0], GaussPool)
    assert spec.spd_input_dim == 9
    assert spec.layers[1] == BiMap(4)


@pytest.mark.parametrize("layers, msg", [
    ([BiMap(2), CovPool(), LogEig(), Vectorize(), Dense(2), Softmax(2)], "first layer"),
    ([CovPool(), BiMap(2), Vectorize(), Dense(2), Softmax(2)], "LogEig"),
    ([CovPool(), LogEig(), Dense(2), Vectorize(), Dense(2), Softmax(2)], "follow"),
    ([CovPool(), LogEig(), BiMap(2), Vectorize(), Dense(2), Softmax(2)], "follow"),
    ([CovPool(), LogEig(), Vectorize(), Dense(3), Softmax(2)], "Softmax expects"),
    ([CovPool(), BiMap(9), LogEig(), Vectorize(), Dense(2), Softmax(2)], "cannot follow"),
    ([CovPool(), CovPool(), LogEig(), Vectorize(), Dense(2), Softmax(2)], "pooling"),
    ([CovPool(), LogEig(), Vectorize(), Dense(2)], "Softmax"),
])
def test_spec_validation(layers, msg):
    with pytest.raises(N.SpecError, match=msg):
        N.NetworkSpec(layers, input_dim=4)


def test_spec_dict_round_trip():
    spec = N.build_preset("model2", 10, 5, lam=1e-3, eps=1e-5, seed=9)
    again = N.NetworkSpec.from_dict(spec.to_dict())
    assert again == spec


def test_init_params_shapes():
    spec = N.build_preset("model2", 16, 5)
    params = N.init_params(spec, np.random.default_rng(0))
    assert params[1]["W"].shape == (8, 16)
    assert params[5]["W"].shape == (2000, 36)
    assert params[6]["W"].shape == (128, 2000)
    assert params[7]["W"].shape == (5, 128)
    assert not params[7]["b"].any()


# --- forward


@pytest.fixture
def small():
    spec = N.build_preset("bire2", 6, 3, hidden=(5,))
    rng = np.random.default_rng(11)
    params = G.random_network_params(spec, rng)
    x = G.random_features(20, 6, rng)
    return spec, params, x


def test_zero_dense_weights_give_uniform(small):
    spec, params, x = small
    for p in params:
        if p is not None and "b" in p:
            p["W"][:] = 0
            p["b"][:] = 0
    pred, _ = N.forward(spec, params, x)
    np.testing.assert_array_equal(pred.probs, np.full(3, 1 / 3))


def test_forward_is_deterministic(small):
    spec, params, x = small
    a, _ = N.forward(spec, params, x)
    b, _ = N.forward(spec, params, x)
    assert np.array_equal(a.probs, b.probs)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 1e3))
def test_probabilities_on_simplex(seed, scale):
    spec = N.build_preset("model3", 6, 4, hidden=(7,))
    rng = np.random.default_rng(seed)
    params = G.random_network_params(spec, rng)
    pred, _ = N.forward(spec, params, scale * G.random_features(15, 6, rng))
    assert np.all(pred.probs >= 0) and np.all(pred.probs <= 1)
    assert abs(pred.probs.sum() - 1) <= 1e-9


def test_tape_matches_layers(small):
    spec, params, x = small
    _, tape = N.forward(spec, params, x)
    assert len(tape.entries) == len(spec.layers)


def test_forward_rejects_wrong_dim(small):
    spec, params, _ = small
    with pytest.raises(ValueError, match="input_dim"):
        N.forward(spec, params, np.ones((5, 4)))


def test_pooled_input_matches_inline(small):
    spec, params, x = small
    from spdpool.pooling import pool_temporal
    a, _ = N.forward(spec, params, x)
    b, _ = N.forward(spec, params, pool_temporal(x, spec.layers[0].lam), pooled=True)
    assert np.array_equal(a.probs, b.probs)


def test_feature_map_input(small):
    spec, params, x = small
    fmap = x.reshape(4, 5, 6)
    a, tape = N.forward(spec, params, fmap)
    b, _ = N.forward(spec, params, x)
    assert np.array_equal(a.probs, b.probs)
    grads = N.backward(spec, params, tape, 1)
    assert grads.input.shape == fmap.shape


# --- backward


def test_certain_prediction_has_zero_gradients(small):
    spec, params, x = small
    params[-2]["W"][:] = 0
    params[-2]["b"][:] = [0.0, 1000.0, 0.0]
    pred, tape = N.forward(spec, params, x)
    assert pred.probs[1] == 1.0
    grads = N.backward(spec, params, tape, 1)
    assert grads.loss == 0.0
    assert not grads.input.any()
    for g in grads.params:
        if g is not None:
            assert not any(v.any() for v in g.values())


def test_loss_is_negative_log_probability(small):
    spec, params, x = small
    pred, tape = N.forward(spec, params, x)
    for label in range(3):
        grads = N.backward(spec, params, tape, label)
        assert abs(grads.loss + np.log(pred.probs[label])) <= 1e-12


def test_backward_rejects_bad_label(small):
    spec, params, x = small
    _, tape = N.forward(spec, params, x)
    with pytest.raises(ValueError):
        N.backward(spec, params, tape, 3)


def test_small_net_every_coordinate():
    spec = N.build_preset("bire2", 6, 2, hidden=(4,))
    rng = np.random.default_rng(5)
    result = G.check_network(spec, rng, max_coords=10_000)
    assert result.max_error < 1e-4, result.errors


@pytest.mark.parametrize("name", sorted(N.PRESETS))
def test_preset_gradients_at_dim_8(name):
    spec = N.build_preset(name, 8, 7)
    result = G.check_network(spec, np.random.default_rng(abs(hash(name)) % 1000))
    assert result.max_error < 1e-4, result.errors


def test_gauss_pooling_gradients():
    spec = N.build_preset("model1", 5, 3, pool="gauss", hidden=(6,))
    result = G.check_network(spec, np.random.default_rng(8), max_coords=10_000)
    assert result.max_error < 1e-4, result.errors


def test_gradients_with_active_rectification():
    # put the ReEig threshold inside the spectrum so some eigenvalues get clamped
    rng = np.random.default_rng(21)
    base = N.build_preset("bire2", 8, 3, hidden=())
    for _ in range(50):
        params = G.random_network_params(base, rng)
        x = G.random_features(24, 8, rng)
        _, tape = N.forward(base, params, x)
        s = tape.entries[2].s
        gaps = -np.diff(s)
        k = int(np.argmax(gaps))
        eps = 0.5 * (s[k] + s[k + 1])
        # the square second BiMap keeps the clamped values, so its ReEig needs a lower threshold
        spec = N.NetworkSpec([CovPool(), BiMap(4), ReEig(eps), BiMap(4), ReEig(eps / 2), LogEig(), Vectorize(),
                              Dense(3), Softmax(3)], input_dim=8)
        _, tape = N.forward(spec, params, x)
        margins = [np.abs(tape.entries[2].s - eps).min(), np.abs(tape.entries[4].s - eps / 2).min()]
        if min(margins) > 1e-3 and np.min(-np.diff(tape.entries[4].s)) > 1e-3:
            break
    else:
        pytest.fail("no instance with a well-separated spectrum")
    clamped = (tape.entries[2].s < eps).sum()
    assert clamped >= 1
    result = G.check_network(spec, rng, params=params, x=x, max_coords=10_000)
    assert result.max_error < 1e-4, result.errors
