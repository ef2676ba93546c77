import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dspp_dlm import dspp, sde
from dspp_dlm.seeds import COUNTS, PATH, derive


def flat_path(c, horizon=4.0, steps=60):
    grid = sde.TimeGrid(horizon, steps)
    return sde.IntensityPath(grid, np.full(steps + 1, float(c)))


def test_sample_counts_zero_path():
    path = flat_path(0.0)
    s = dspp.sample_counts(path, dspp.default_scheme(4.0), 1)
    assert s.cumulative == (0, 0)


def test_sample_counts_deterministic():
    path = flat_path(3.0)
    scheme = dspp.default_scheme(4.0)
    assert dspp.sample_counts(path, scheme, 5) == dspp.sample_counts(path, scheme, 5)


def test_sample_counts_poisson_mean():
    # constant path 80, T=4: X(T) ~ Poisson(320)
    path = flat_path(80.0)
    scheme = dspp.default_scheme(4.0)
    n = 100_000
    totals = np.fromiter(
        (dspp.sample_counts(path, scheme, s).cumulative[-1] for s in range(n)),
        dtype=np.int64,
        count=n,
    )
    assert abs(totals.mean() - 320.0) <= 3 * np.sqrt(320.0 / n)


def test_dspp_overdispersion():
    # latent CIR noise makes the count index of dispersion exceed 1
    grid = sde.TimeGrid(4.0, 60)
    scheme = dspp.default_scheme(4.0)
    data = dspp.generate_dataset(sde.cir_model(0.3, 80.0, 1.0), 5.0, grid, scheme, 10_000, 99)
    x = data.count_matrix()[:, -1].astype(float)
    disp = x.var(ddof=1) / x.mean()
    # influence-function standard error of the dispersion estimate
    inf = ((x - x.mean()) ** 2 - x.var(ddof=1)) / x.mean() - disp / x.mean() * (x - x.mean())
    se = inf.std(ddof=1) / np.sqrt(len(x))
    assert disp - 3 * se > 1.0


def test_nhpp_dispersion_is_one():
    grid = sde.TimeGrid(4.0, 60)
    scheme = dspp.default_scheme(4.0)
    data = dspp.generate_dataset(sde.ode_model(0.3, 80.0), 5.0, grid, scheme, 10_000, 7)
    x = data.count_matrix()[:, -1].astype(float)
    disp = x.var(ddof=1) / x.mean()
    inf = ((x - x.mean()) ** 2 - x.var(ddof=1)) / x.mean() - disp / x.mean() * (x - x.mean())
    se = inf.std(ddof=1) / np.sqrt(len(x))
    assert abs(disp - 1.0) <= 3 * se


def test_log_likelihood_zero_counts():
    # constant path c, counts (0,0): log P = -c*T exactly
    path = flat_path(1.5, horizon=4.0)
    scheme = dspp.default_scheme(4.0)
    ll = dspp.log_likelihood(dspp.CountSample((0, 0)), path, scheme)
    assert ll == pytest.approx(-6.0)


def test_log_likelihood_direct_substitution():
    # c=1, T=4, counts (1,1): log(Z(0,2)) - 4 = log 2 - 4
    path = flat_path(1.0, horizon=4.0)
    scheme = dspp.default_scheme(4.0)
    ll = dspp.log_likelihood(dspp.CountSample((1, 1)), path, scheme)
    assert ll == pytest.approx(np.log(2.0) - 4.0)


def test_log_likelihood_zero_mean_positive_count():
    path = flat_path(0.0)
    scheme = dspp.default_scheme(4.0)
    assert dspp.log_likelihood(dspp.CountSample((1, 1)), path, scheme) == -np.inf
    assert dspp.log_likelihood(dspp.CountSample((0, 0)), path, scheme) == 0.0


def test_log_likelihood_normalizes():
    # brute-force sum of exp(log L) over the truncated outcome lattice
    path = flat_path(0.5, horizon=2.0, steps=30)
    scheme = dspp.ObservationScheme((1.0, 2.0))
    total = 0.0
    for k1 in range(21):
        for k2 in range(k1, 21):
            total += np.exp(dspp.log_likelihood(dspp.CountSample((k1, k2)), path, scheme))
    assert total == pytest.approx(1.0, abs=1e-6)


def test_log_likelihood_interval_splitting():
    grid = sde.TimeGrid(4.0, 60)
    path = sde.euler_maruyama(sde.cir_model(0.3, 80.0, 1.0), 5.0, grid, sde.sample_noise(grid, 8))
    coarse = dspp.ObservationScheme((2.0, 4.0))
    fine = dspp.ObservationScheme((1.0, 2.0, 4.0))
    counts_c = dspp.CountSample((40, 130))
    # the fine scheme adds an epoch at t=1 carrying k arrivals; summing the
    # binomial split probabilities over k recovers the coarse likelihood
    m1 = sde.integrated_intensity(path, 0.0, 1.0)
    m2 = sde.integrated_intensity(path, 1.0, 2.0)
    tot = 0.0
    for k in range(0, 41):
        tot += np.exp(dspp.log_likelihood(dspp.CountSample((k, 40, 130)), path, fine))
    assert np.log(tot) == pytest.approx(
        dspp.log_likelihood(counts_c, path, coarse), rel=1e-10
    )
    assert m1 + m2 == pytest.approx(sde.integrated_intensity(path, 0.0, 2.0), rel=1e-12)


def test_counts_nondecreasing_property():
    with pytest.raises(ValueError):
        dspp.CountSample((3, 2))
    with pytest.raises(ValueError):
        dspp.CountSample((-1, 2))


@given(seed=st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_sample_counts_always_nondecreasing(seed):
    grid = sde.TimeGrid(4.0, 60)
    path = sde.euler_maruyama(sde.cir_model(0.3, 80.0, 1.0), 5.0, grid, sde.sample_noise(grid, seed))
    s = dspp.sample_counts(path, dspp.ObservationScheme((1.0, 2.0, 3.0, 4.0)), seed)
    assert all(b >= a for a, b in zip(s.cumulative, s.cumulative[1:]))


def test_generate_dataset_composition():
    # n=1 equals sample_counts of one euler_maruyama path under the
    # documented seed-splitting rule
    grid = sde.TimeGrid(4.0, 60)
    scheme = dspp.default_scheme(4.0)
    truth = sde.cir_model(0.3, 80.0, 1.0)
    master = 1234
    data = dspp.generate_dataset(truth, 5.0, grid, scheme, 1, master)
    path = sde.euler_maruyama(truth, 5.0, grid, sde.sample_noise(grid, derive(master, PATH, 0)))
    manual = dspp.sample_counts(path, scheme, derive(master, COUNTS, 0))
    assert data.samples[0] == manual


def test_generate_dataset_deterministic():
    grid = sde.TimeGrid(4.0, 60)
    scheme = dspp.default_scheme(4.0)
    truth = sde.cir_model(0.3, 80.0, 1.0)
    a = dspp.generate_dataset(truth, 5.0, grid, scheme, 5, 77)
    b = dspp.generate_dataset(truth, 5.0, grid, scheme, 5, 77)
    assert a.samples == b.samples


def test_generate_dataset_mean_counts():
    # mean of X(T) matches the discretized mean-intensity integral; the
    # analytic value of int_0^4 (80 - 75 exp(-0.3 t)) dt is 145.30
    grid = sde.TimeGrid(4.0, 60)
    scheme = dspp.default_scheme(4.0)
    truth = sde.cir_model(0.3, 80.0, 1.0)
    data = dspp.generate_dataset(truth, 5.0, grid, scheme, 2000, 5150)
    x = data.count_matrix()[:, -1].astype(float)
    se = x.std(ddof=1) / np.sqrt(len(x))
    # discretized-scheme population mean: left sum of the Euler ODE mean path
    z, acc = 5.0, 0.0
    for _ in range(60):
        acc += z * grid.dt
        z += 0.3 * (80.0 - z) * grid.dt
    assert abs(x.mean() - acc) <= 3 * se
    assert abs(acc - 145.2985529780505) <= 1.5  # O(dt) discretization gap


def test_keep_paths_flag():
    grid = sde.TimeGrid(4.0, 60)
    scheme = dspp.default_scheme(4.0)
    truth = sde.cir_model(0.3, 80.0, 1.0)
    without = dspp.generate_dataset(truth, 5.0, grid, scheme, 3, 9)
    with_paths = dspp.generate_dataset(truth, 5.0, grid, scheme, 3, 9, keep_paths=True)
    assert without.paths is None
    assert len(with_paths.paths) == 3
    assert with_paths.samples == without.samples
