"""Observation model: interval counts of a conditionally Poisson process.

Given a latent intensity path, arrival counts over non-overlapping
intervals are independent Poisson with means equal to the interval
integrated intensities. Cumulative counts at the observation epochs are
the observable; latent paths are kept only for diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import seeds
from .sde import DriftSpec, IntensityPath, TimeGrid, sample_noise, simulate_batch


@dataclass(frozen=True)
class ObservationScheme:
    """Strictly increasing grid-aligned observation epochs in (0, T]."""

    epochs: tuple[float, ...]

    def __post_init__(self):
        e = tuple(float(t) for t in self.epochs)
        if len(e) == 0 or any(b <= a for a, b in zip((0.0,) + e, e)):
            raise ValueError(f"epochs must be strictly increasing and positive, got {e}")
        object.__setattr__(self, "epochs", e)

    def __len__(self) -> int:
        return len(self.epochs)

    def boundaries(self) -> tuple[float, ...]:
        return (0.0,) + self.epochs

    def interval_index(self, grid: TimeGrid) -> np.ndarray:
        """Observation-interval id of each grid cell [t_m, t_{m+1})."""
        idx = [grid.index_of(t) for t in self.boundaries()]
        if idx[-1] > grid.steps:
            raise ValueError("scheme extends past the grid horizon")
        out = np.full(grid.steps, -1, dtype=np.intp)
        for k, (i, j) in enumerate(zip(idx[:-1], idx[1:])):
            out[i:j] = k
        if np.any(out[: idx[-1]] < 0):
            raise ValueError("scheme does not tile the grid")
        return out


def default_scheme(horizon: float) -> ObservationScheme:
    """Counts observed at T/2 and T."""
    return ObservationScheme((horizon / 2.0, horizon))


@dataclass(frozen=True)
class CountSample:
    """Cumulative arrival counts at the scheme epochs."""

    cumulative: tuple[int, ...]

    def __post_init__(self):
        c = tuple(int(k) for k in self.cumulative)
        if any(k < 0 for k in c) or any(b < a for a, b in zip(c, c[1:])):
            raise ValueError(f"cumulative counts must be nonnegative and nondecreasing: {c}")
        object.__setattr__(self, "cumulative", c)

    def increments(self) -> np.ndarray:
        return np.diff(np.concatenate([[0], self.cumulative]))


@dataclass(frozen=True)
class Dataset:
    scheme: ObservationScheme
    samples: tuple[CountSample, ...]
    provenance: dict = field(default_factory=dict)
    paths: tuple[IntensityPath, ...] | None = None

    def __post_init__(self):
        if any(len(s.cumulative) != len(self.scheme) for s in self.samples):
            raise ValueError("all samples must conform to the scheme")

    def __len__(self) -> int:
        return len(self.samples)

    def count_matrix(self) -> np.ndarray:
        """(n, n_epochs) cumulative counts."""
        return np.array([s.cumulative for s in self.samples], dtype=np.int64)

    def increment_matrix(self) -> np.ndarray:
        cum = self.count_matrix()
        return np.diff(np.concatenate([np.zeros((len(self), 1), dtype=np.int64), cum], axis=1))


def interval_means(path: IntensityPath, scheme: ObservationScheme) -> np.ndarray:
    """Integrated intensity over each observation interval (left-Riemann)."""
    c = path.cumulative()
    idx = [path.grid.index_of(t) for t in scheme.boundaries()]
    return np.diff(c[idx])


def sample_counts(path: IntensityPath, scheme: ObservationScheme, seed: int) -> CountSample:
    """Draw one count vector: independent Poisson interval increments."""
    gen = seeds.rng(seed)
    inc = gen.poisson(interval_means(path, scheme))
    return CountSample(tuple(np.cumsum(inc)))


def log_likelihood(counts: CountSample, path: IntensityPath, scheme: ObservationScheme) -> float:
    """Conditional Poisson log-likelihood of interval increments.

    sum_i [ dx_i * log(m_i) - m_i - log(dx_i!) ] with m_i the interval
    integrated intensities. Uses log-gamma for the factorials; 0*log(0)
    is 0 and a positive count on a zero-mean interval gives -inf.
    """
    if len(counts.cumulative) != len(scheme):
        raise ValueError("counts do not conform to the scheme")
    m = interval_means(path, scheme)
    dx = counts.increments()
    out = 0.0
    for mi, ki in zip(m, dx):
        if mi == 0.0:
            if ki > 0:
                return float("-inf")
            continue  # Poi(0) puts all mass at 0
        out += ki * np.log(mi) - mi - gammaln(ki + 1.0)
    return float(out)


def generate_dataset(
    truth: DriftSpec,
    z0: float,
    grid: TimeGrid,
    scheme: ObservationScheme,
    n: int,
    master_seed: int,
    keep_paths: bool = False,
) -> Dataset:
    """n independent (latent path, counts) draws; counts retained.

    Per-sample seeds derive from the master seed via the documented
    splitting rule: path noise uses key (PATH, i), count draws (COUNTS, i),
    so sample i is reproducible in isolation.
    """
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    dw = np.stack(
        [sample_noise(grid, seeds.derive(master_seed, seeds.PATH, i)).increments for i in range(n)]
    )
    z = simulate_batch(truth, z0, grid, dw).z
    samples = []
    paths = []
    for i in range(n):
        path = IntensityPath(grid, z[i])
        samples.append(sample_counts(path, scheme, seeds.derive(master_seed, seeds.COUNTS, i)))
        if keep_paths:
            paths.append(path)
    provenance = {
        "truth": repr(truth),
        "z0": z0,
        "grid": {"horizon": grid.horizon, "steps": grid.steps},
        "scheme_epochs": list(scheme.epochs),
        "n": n,
        "master_seed": master_seed,
    }
    return Dataset(scheme, tuple(samples), provenance, tuple(paths) if keep_paths else None)
