import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dspp_dlm import nn


def test_init_deterministic():
    spec = nn.MLPSpec(2, 1, 10)
    a = nn.init_params(spec, 7)
    b = nn.init_params(spec, 7)
    np.testing.assert_array_equal(a.params, b.params)
    c = nn.init_params(spec, 8)
    assert not np.array_equal(a.params, c.params)


def test_init_biases_zero():
    spec = nn.MLPSpec(2, 3, 10)
    model = nn.init_params(spec, 1)
    for i in range(spec.hidden_layers + 1):
        _w, b = model.layer(i)
        np.testing.assert_array_equal(b, 0.0)


def test_param_count_paper_architecture():
    # (2*10+10) + 19*(10*10+10) + (10*1+1)
    assert nn.MLPSpec(2, 20, 10).n_params == 2131


def test_init_glorot_bounds():
    spec = nn.MLPSpec(2, 2, 10)
    model = nn.init_params(spec, 3)
    for i, (fi, fo) in enumerate(spec.layer_shapes()):
        w, _b = model.layer(i)
        bound = np.sqrt(6.0 / (fi + fo))
        assert np.all(np.abs(w) <= bound)


def test_forward_zero_network():
    model = nn.zero_model(nn.MLPSpec(2, 2, 5))
    assert nn.forward(model, [3.0, -1.0]) == 0.0


def test_forward_bias_passthrough():
    spec = nn.MLPSpec(2, 2, 5)
    model = nn.zero_model(spec)
    params = model.params.copy()
    params[-1] = 3.5  # output bias is the last coordinate
    model = model.with_params(params)
    assert nn.forward(model, [1.0, 2.0]) == pytest.approx(3.5)


def test_forward_closed_form_single_unit():
    # 1-hidden-layer width-1 net, all weights 1, biases 0, input (0.5, 0.5)
    spec = nn.MLPSpec(2, 1, 1)
    model = nn.MLPModel(spec, np.array([1.0, 1.0, 0.0, 1.0, 0.0]))
    assert nn.forward(model, [0.5, 0.5]) == pytest.approx(np.tanh(1.0))


def test_forward_dimension_mismatch():
    model = nn.zero_model(nn.MLPSpec(2, 1, 4))
    with pytest.raises(ValueError):
        nn.forward(model, [1.0, 2.0, 3.0])


def test_grad_output_bias_is_one():
    model = nn.init_params(nn.MLPSpec(2, 3, 6), 11)
    g = nn.grad_params(model, [0.3, -0.7])
    assert g[-1] == 1.0


def test_grad_zero_weight_model():
    model = nn.zero_model(nn.MLPSpec(2, 2, 4))
    g = nn.grad_params(model, [1.0, 2.0])
    w0, b0, _ = model.spec.param_offsets()[0]
    np.testing.assert_array_equal(g[w0:b0], 0.0)
    np.testing.assert_array_equal(nn.grad_input(model, [1.0, 2.0]), 0.0)


def test_grad_input_exact_linear_case():
    # net(x) = tanh(a*x0 + c*x1); at the origin tanh'(0) = 1 exactly, so the
    # input gradient equals (a, c) with no approximation error.
    a, c = 1.7, -0.4
    spec = nn.MLPSpec(2, 1, 1)
    model = nn.MLPModel(spec, np.array([a, c, 0.0, 1.0, 0.0]))
    np.testing.assert_array_equal(nn.grad_input(model, [0.0, 0.0]), [a, c])


def _fd_param_grad(model, x, h=1e-5):
    out = np.empty(model.spec.n_params)
    for i in range(model.spec.n_params):
        p = model.params.copy()
        p[i] += h
        up = nn.forward(model.with_params(p), x)
        p[i] -= 2 * h
        dn = nn.forward(model.with_params(p), x)
        out[i] = (up - dn) / (2 * h)
    return out


def test_gradients_match_finite_differences_many():
    # 100 random (model, input) pairs across small architectures
    rng = np.random.default_rng(0)
    checked = 0
    for trial in range(100):
        spec = nn.MLPSpec(2, int(rng.integers(1, 4)), int(rng.integers(1, 7)))
        model = nn.init_params(spec, int(rng.integers(0, 2**31)))
        x = rng.normal(size=2) * 2.0
        g = nn.grad_params(model, x)
        fd = _fd_param_grad(model, x)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)
        gi = nn.grad_input(model, x)
        h = 1e-5
        for i in range(2):
            xp = x.copy()
            xp[i] += h
            xm = x.copy()
            xm[i] -= h
            fdi = (nn.forward(model, xp) - nn.forward(model, xm)) / (2 * h)
            assert gi[i] == pytest.approx(fdi, rel=1e-6, abs=1e-9)
        checked += 1
    assert checked == 100


@given(
    seed=st.integers(0, 2**32 - 1),
    x0=st.floats(-50, 50),
    x1=st.floats(-50, 50),
    layers=st.integers(1, 4),
    width=st.integers(1, 8),
)
@settings(max_examples=60, deadline=None)
def test_output_bounded_by_last_layer(seed, x0, x1, layers, width):
    model = nn.init_params(nn.MLPSpec(2, layers, width), seed)
    assert abs(nn.forward(model, [x0, x1])) <= nn.output_bound(model) + 1e-12


def test_forward_pure_and_deterministic():
    model = nn.init_params(nn.MLPSpec(2, 2, 8), 9)
    x = [0.5, 1.5]
    assert nn.forward(model, x) == nn.forward(model, x)
    np.testing.assert_array_equal(nn.grad_params(model, x), nn.grad_params(model, x))


def test_batch_matches_scalar():
    model = nn.init_params(nn.MLPSpec(2, 3, 5), 13)
    xs = np.random.default_rng(1).normal(size=(20, 2))
    outs = nn.forward_batch(model, xs)
    gps = nn.grad_params_batch(model, xs)
    gis = nn.grad_input_batch(model, xs)
    for i in range(20):
        assert outs[i] == pytest.approx(nn.forward(model, xs[i]), abs=1e-12)
        np.testing.assert_allclose(gps[i], nn.grad_params(model, xs[i]), atol=1e-12)
        np.testing.assert_allclose(gis[i], nn.grad_input(model, xs[i]), atol=1e-12)


def test_invalid_specs_rejected():
    with pytest.raises(ValueError):
        nn.MLPSpec(0, 1, 1)
    with pytest.raises(ValueError):
        nn.MLPSpec(2, 0, 1)
    with pytest.raises(ValueError):
        nn.MLPSpec(2, 1, 0)
    with pytest.raises(ValueError):
        nn.MLPModel(nn.MLPSpec(2, 1, 2), np.zeros(3))
    with pytest.raises(ValueError):
        nn.MLPModel(nn.MLPSpec(2, 1, 2), np.full(nn.MLPSpec(2, 1, 2).n_params, np.nan))
