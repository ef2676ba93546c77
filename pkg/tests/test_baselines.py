import itertools

import numpy as np
import pytest

from dspp_dlm import baselines, dspp, sde


def make_dataset(count_rows, epochs=(2.0, 4.0)):
    scheme = dspp.ObservationScheme(epochs)
    samples = tuple(dspp.CountSample(tuple(r)) for r in count_rows)
    return dspp.Dataset(scheme, samples)


def test_pc_mle_zero_counts():
    data = make_dataset([(0, 0)] * 4)
    fit = baselines.pc_mle(data)
    assert set(fit.values) == {0.0}


def test_pc_mle_closed_form():
    data = make_dataset([(10, 30)])
    fit = baselines.pc_mle(data)
    assert fit.values[0] == pytest.approx(5.0)
    assert fit.values[1] == pytest.approx(10.0)


def test_pc_mle_consistency():
    grid = sde.TimeGrid(4.0, 60)
    scheme = dspp.default_scheme(4.0)
    data = dspp.generate_dataset(sde.ode_model(1e9, 80.0), 80.0, grid, scheme, 200, 4)
    fit = baselines.pc_mle(data)
    # constant-rate-80 NHPP (kappa huge pins z at 80): both rates near 80
    x = data.increment_matrix().astype(float)
    for j in range(2):
        se = x[:, j].std(ddof=1) / np.sqrt(len(x)) / 2.0
        assert abs(fit.values[j] - 80.0) <= 3 * se


def test_pl_mle_flat_optimum_symmetric():
    # equal mean increments (160, 160) -> flat 80 from the flat start
    data = make_dataset([(160, 320)])
    fit = baselines.pl_mle(data, 2)
    np.testing.assert_allclose(fit.values, 80.0, rtol=1e-6)
    # grid-search oracle: no nodal triple beats the flat solution
    bounds = np.array([0.0, 2.0, 4.0])
    c = baselines._interval_coefficients(np.array(fit.knots), bounds)
    mean_inc = np.array([160.0, 160.0])
    best = baselines._pl_objective(np.array(fit.values), c, mean_inc)
    for v in itertools.product(range(0, 161, 8), repeat=3):
        assert baselines._pl_objective(np.array(v, float), c, mean_inc) <= best + 1e-9


def test_pl_mle_degenerate_single_piece():
    # d=1, counts (k, 2k): flat fit equal to the pc common value k/2 (T=4)
    data = make_dataset([(30, 60)])
    fit = baselines.pl_mle(data, 1)
    np.testing.assert_allclose(fit.values, 15.0, rtol=1e-6)
    pc = baselines.pc_mle(data)
    assert fit.values[0] == pytest.approx(pc.values[0], rel=1e-6)


def test_pl_mle_objective_monotone():
    grid = sde.TimeGrid(4.0, 60)
    scheme = dspp.default_scheme(4.0)
    data = dspp.generate_dataset(sde.cir_model(0.3, 80.0, 1.0), 5.0, grid, scheme, 50, 21)
    trace = []
    baselines.pl_mle(data, 4, trace=trace)
    diffs = np.diff(np.array(trace))
    assert np.all(diffs >= -1e-12)


def test_pl_mle_first_order_optimality():
    # with d matching the observation intervals, the fitted interval
    # integrals reproduce the empirical mean increments
    grid = sde.TimeGrid(4.0, 60)
    scheme = dspp.default_scheme(4.0)
    data = dspp.generate_dataset(sde.cir_model(0.3, 80.0, 1.0), 5.0, grid, scheme, 100, 33)
    fit = baselines.pl_mle(data, 2)
    c = baselines._interval_coefficients(np.array(fit.knots), np.array([0.0, 2.0, 4.0]))
    integrals = c @ np.array(fit.values)
    # precision implied by the 1e-8 objective-change stopping rule at the
    # log-likelihood's curvature scale
    np.testing.assert_allclose(integrals, data.increment_matrix().mean(axis=0), rtol=1e-3)


def test_pl_mle_nonnegative_nodes():
    # strongly decreasing counts push the first node toward the boundary
    data = make_dataset([(0, 400)])
    fit = baselines.pl_mle(data, 2)
    assert all(v >= 0.0 for v in fit.values)


def test_evaluate_linear_midpoint():
    fit = baselines.PiecewiseIntensity((0.0, 4.0), (0.0, 4.0), "linear")
    assert baselines.evaluate(fit, 2.0) == pytest.approx(2.0)


def test_evaluate_constant_tie_break():
    fit = baselines.PiecewiseIntensity((0.0, 2.0, 4.0), (1.0, 9.0, 9.0), "constant")
    assert baselines.evaluate(fit, 2.0) == 9.0  # right-piece convention
    assert baselines.evaluate(fit, 1.999) == 1.0
    assert baselines.evaluate(fit, 4.0) == 9.0  # horizon uses the last piece


def test_evaluate_constant_everywhere_flat():
    fit = baselines.PiecewiseIntensity((0.0, 1.0, 2.0), (3.0, 3.0, 3.0), "linear")
    for t in np.linspace(0, 2, 21):
        assert baselines.evaluate(fit, float(t)) == pytest.approx(3.0)


def test_evaluate_out_of_range():
    fit = baselines.PiecewiseIntensity((0.0, 4.0), (1.0, 1.0), "linear")
    with pytest.raises(ValueError):
        baselines.evaluate(fit, 4.5)
    with pytest.raises(ValueError):
        baselines.evaluate(fit, -0.1)


def test_validation_errors():
    with pytest.raises(ValueError):
        baselines.PiecewiseIntensity((0.0, 4.0), (-1.0, 1.0), "linear")
    with pytest.raises(ValueError):
        baselines.PiecewiseIntensity((4.0, 0.0), (1.0, 1.0), "linear")
    with pytest.raises(ValueError):
        baselines.PiecewiseIntensity((0.0, 4.0), (1.0, 1.0), "cubic")
    with pytest.raises(ValueError):
        baselines.pl_mle(make_dataset([(1, 2)]), 0)
