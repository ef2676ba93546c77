"""Run-through experiments: infinite-server queues fed by model traffic.

Each replication draws a fresh intensity path from a traffic source (the
true model, a fitted deep latent model, or a deterministic piecewise fit),
converts it to arrival epochs by per-cell Poisson counts with uniform
placement (matching the count law of the observation model at grid
resolution), attaches independent service durations, and records the
number of busy servers at the probe epochs. Summary statistics carry 95%
normal confidence intervals for means and chi-square intervals for
variances.

Replications own derived seeds (stage tags: 0 prior path noise, 1 count
context, 2 controlled path noise, 3 arrivals, 4 services), so results are
independent of execution order and worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln
from scipy.stats import chi2

from . import seeds
from .baselines import PiecewiseIntensity, evaluate
from .dspp import CountSample, ObservationScheme, interval_means
from .inference import VariationalModel, _control_grid
from .sde import DriftSpec, IntensityPath, TimeGrid, simulate_batch


@dataclass(frozen=True)
class Exponential:
    """Exponential service with rate mu (mean 1/mu)."""

    mu: float

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError(f"need mu > 0, got {self.mu}")

    def sample(self, gen: np.random.Generator, size: int) -> np.ndarray:
        return gen.exponential(1.0 / self.mu, size=size)

    def mean(self) -> float:
        return 1.0 / self.mu

    def tail(self, x: float) -> float:
        return float(np.exp(-self.mu * x))


@dataclass(frozen=True)
class Erlang:
    """Erlang service: sum of ``shape`` exponential phases of rate ``rate``."""

    shape: int
    rate: float

    def __post_init__(self):
        if self.shape < 1 or self.rate <= 0:
            raise ValueError(f"need shape >= 1 and rate > 0, got {self}")

    def sample(self, gen: np.random.Generator, size: int) -> np.ndarray:
        return gen.gamma(self.shape, scale=1.0 / self.rate, size=size)

    def mean(self) -> float:
        return self.shape / self.rate

    def tail(self, x: float) -> float:
        lx = self.rate * x
        j = np.arange(self.shape)
        return float(np.exp(-lx) * np.sum(np.exp(j * np.log(max(lx, 1e-300)) - gammaln(j + 1.0))))


ServiceDist = Exponential | Erlang


@dataclass(frozen=True)
class ArrivalStream:
    """Increasing arrival epochs in [0, T] derived from one intensity path."""

    times: np.ndarray
    horizon: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        object.__setattr__(self, "times", t)


def arrivals_from_path(path: IntensityPath, seed: int) -> ArrivalStream:
    """Per-cell Poisson counts with uniform (order-statistic) placement."""
    gen = seeds.rng(seed)
    grid = path.grid
    counts = gen.poisson(path.values[:-1] * grid.dt)
    total = int(counts.sum())
    cells = np.repeat(np.arange(grid.steps), counts)
    times = np.sort((cells + gen.uniform(size=total)) * grid.dt)
    return ArrivalStream(times, grid.horizon)


def simulate_infinite_server(
    stream: ArrivalStream,
    service: ServiceDist,
    probe_epochs,
    seed: int,
) -> np.ndarray:
    """Busy-server counts at the probes; every arrival starts service at once."""
    probes = np.atleast_1d(np.asarray(probe_epochs, dtype=np.float64))
    if np.any(probes < 0) or np.any(probes > stream.horizon):
        raise ValueError(f"probes must lie in [0, {stream.horizon}]")
    gen = seeds.rng(seed)
    durations = service.sample(gen, len(stream.times))
    a = stream.times
    return np.array(
        [int(np.sum((a <= p) & (a + durations > p))) for p in probes], dtype=np.int64
    )


# --- summary statistics -------------------------------------------------------


@dataclass(frozen=True)
class SummaryStats:
    n: int
    mean: float
    ci_half: float  # 95% normal half-width
    variance: float  # unbiased
    var_lo: float  # 95% chi-square interval
    var_hi: float


def summarize(x: np.ndarray) -> SummaryStats:
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < 2:
        raise ValueError("need at least 2 samples")
    s2 = float(np.var(x, ddof=1))
    half = 1.96 * np.sqrt(s2 / n)
    lo = (n - 1) * s2 / chi2.ppf(0.975, n - 1)
    hi = (n - 1) * s2 / chi2.ppf(0.025, n - 1)
    return SummaryStats(n, float(np.mean(x)), float(half), s2, float(lo), float(hi))


@dataclass(frozen=True)
class OccupancyStats:
    probes: tuple[float, ...]
    stats: tuple[SummaryStats, ...]

    def at(self, probe: float) -> SummaryStats:
        for p, s in zip(self.probes, self.stats):
            if abs(p - probe) < 1e-9:
                return s
        raise KeyError(probe)


def occupancy_stats(samples: np.ndarray, probes) -> OccupancyStats:
    """Per-probe summaries of an (R, n_probes) occupancy matrix."""
    samples = np.asarray(samples)
    probes = tuple(float(p) for p in np.atleast_1d(probes))
    return OccupancyStats(probes, tuple(summarize(samples[:, j]) for j in range(len(probes))))


# --- traffic sources ----------------------------------------------------------


@dataclass(frozen=True)
class TrueModelSource:
    """Fresh latent paths from a known drift spec."""

    spec: DriftSpec
    z0: float
    grid: TimeGrid

    def intensity_paths(self, n: int, seed: int) -> np.ndarray:
        dw = _noise_rows(self.grid, seed, n, stage=0)
        return simulate_batch(self.spec, self.z0, self.grid, dw).z


@dataclass(frozen=True)
class DlmSource:
    """Paths from a fitted model.

    mode "self_generated": draw a prior path, sample a count context from
    it, then run the controlled SDE conditioned on that context (the
    run-through usage where counts are generated rather than observed).
    mode "prior": unconditional prior simulation.
    """

    model: VariationalModel
    grid: TimeGrid
    scheme: ObservationScheme
    mode: str = "self_generated"

    def __post_init__(self):
        if self.mode not in ("self_generated", "prior"):
            raise ValueError(f"unknown mode {self.mode!r}")

    def intensity_paths(self, n: int, seed: int) -> np.ndarray:
        model = self.model
        dw = _noise_rows(self.grid, seed, n, stage=0)
        prior = simulate_batch(model.prior_spec(), model.z0, self.grid, dw).z
        if self.mode == "prior":
            return prior
        contexts = np.empty((n, 1 if model.context_mode == "terminal" else len(self.scheme)))
        for r in range(n):
            gen = seeds.rng(seed, seeds.RUNTHROUGH, r, 1)
            inc = gen.poisson(interval_means(IntensityPath(self.grid, prior[r]), self.scheme))
            contexts[r] = model.context_of(CountSample(tuple(np.cumsum(inc))))
        u, _ = _control_grid(model, contexts, self.grid, want_grads=False)
        dw2 = _noise_rows(self.grid, seed, n, stage=2)
        spec = model.controlled_spec(CountSample((0,) * len(self.scheme)))
        return simulate_batch(
            spec, model.z0, self.grid, dw2, control_values=u
        ).z


@dataclass(frozen=True)
class PlSource:
    """Deterministic piecewise intensity; the same path every replication."""

    fit: PiecewiseIntensity
    grid: TimeGrid

    def intensity_paths(self, n: int, seed: int) -> np.ndarray:
        z = np.asarray(evaluate(self.fit, self.grid.times()), dtype=np.float64)
        return np.broadcast_to(z, (n, len(z))).copy()


def _noise_rows(grid: TimeGrid, seed: int, n: int, stage: int) -> np.ndarray:
    sq = np.sqrt(grid.dt)
    return np.stack(
        [
            seeds.rng(seed, seeds.RUNTHROUGH, r, stage).standard_normal(grid.steps) * sq
            for r in range(n)
        ]
    )


# --- run-through --------------------------------------------------------------


def run_through(
    source,
    service: ServiceDist,
    replications: int,
    seed: int,
    probes=None,
    grid: TimeGrid | None = None,
    threads: int = 1,
) -> OccupancyStats:
    """R independent replications of path -> arrivals -> occupancy."""
    if replications < 2:
        raise ValueError("need at least 2 replications")
    grid = grid or source.grid
    probes = tuple(
        float(p) for p in (probes if probes is not None else (grid.horizon / 2, grid.horizon))
    )
    z = source.intensity_paths(replications, seed)
    occ = np.empty((replications, len(probes)), dtype=np.int64)

    def one(r: int) -> None:
        stream = arrivals_from_path(
            IntensityPath(grid, z[r]), seeds.derive(seed, seeds.RUNTHROUGH, r, 3)
        )
        occ[r] = simulate_infinite_server(
            stream, service, probes, seeds.derive(seed, seeds.RUNTHROUGH, r, 4)
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(one, range(replications)))
    else:
        for r in range(replications):
            one(r)
    return occupancy_stats(occ, probes)


def simulate_count_samples(
    source,
    scheme: ObservationScheme,
    replications: int,
    seed: int,
    grid: TimeGrid | None = None,
) -> np.ndarray:
    """(R, n_epochs) cumulative counts from fresh source paths (traffic
    count prediction; per-replication seeds at stage 1)."""
    grid = grid or source.grid
    z = source.intensity_paths(replications, seed)
    out = np.empty((replications, len(scheme)), dtype=np.int64)
    for r in range(replications):
        gen = seeds.rng(seed, seeds.RUNTHROUGH, r, 1)
        inc = gen.poisson(interval_means(IntensityPath(grid, z[r]), scheme))
        out[r] = np.cumsum(inc)
    return out
