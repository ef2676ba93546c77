"""Deep latent model: controlled variational SDE, ELBO, and training.

The generative model is a neural-drift intensity SDE plus conditionally
Poisson interval counts. Inference maximizes a Girsanov-derived evidence
lower bound over the prior drift parameters and a deterministic control
that depends only on the observed count context and time (mean-field
restriction), with the quadratic control penalty evaluated by the same
left-Riemann rule as the simulation.

Gradients are pathwise: the Brownian increments do not depend on the
parameters, so the derivative passes through the expectation and reduces
to sensitivities of the discretized paths (sde.simulate_batch) combined
with the explicit penalty derivative.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln

from . import nn, seeds
from .dspp import CountSample, Dataset, ObservationScheme
from .nn import MLPModel, MLPSpec
from .sde import (
    EPS_Z,
    ControlledDrift,
    DriftSpec,
    FixedSqrtDiffusion,
    IntensityPath,
    NeuralDiffusion,
    NeuralDrift,
    TimeGrid,
    simulate_batch,
)

UPDATE_TAG = 7
POSTERIOR_TAG = 8


class TrainingDivergedError(RuntimeError):
    def __init__(self, update_index: int, message: str):
        super().__init__(f"update {update_index}: {message}")
        self.update_index = update_index


@dataclass(frozen=True)
class VariationalModel:
    """Prior drift net, control net, diffusion spec, and conditioning scales.

    The control net consumes (count context / count_scale, t) and never
    reads the latent state. The diffusion is either the fixed eta*sqrt(z)
    coefficient or a learned strictly positive net on (z / z_scale, t).
    """

    prior: MLPModel
    control: MLPModel
    eta: float = 1.0
    sigma: MLPModel | None = None
    z0: float = 5.0
    z_scale: float = 100.0
    t_scale: float = 4.0
    z_loc: float = 0.0
    t_loc: float = 0.0
    drift_scale: float = 1.0
    sigma_scale: float = 1.0
    sigma_shift: float = 0.0
    count_scale: float = 100.0
    context_mode: str = "terminal"  # "terminal" -> X(T); "all" -> every epoch

    def __post_init__(self):
        if self.context_mode not in ("terminal", "all"):
            raise ValueError(f"unknown context_mode {self.context_mode!r}")

    def context_of(self, counts: CountSample) -> tuple[float, ...]:
        if self.context_mode == "terminal":
            return (float(counts.cumulative[-1]),)
        return tuple(float(k) for k in counts.cumulative)

    def diffusion(self):
        if self.sigma is not None:
            return NeuralDiffusion(
                self.sigma,
                self.z_scale,
                self.t_scale,
                self.z_loc,
                self.t_loc,
                self.sigma_scale,
                self.sigma_shift,
            )
        return FixedSqrtDiffusion(self.eta)

    def _neural_drift(self) -> NeuralDrift:
        return NeuralDrift(
            self.prior, self.z_scale, self.t_scale, self.z_loc, self.t_loc, self.drift_scale
        )

    def prior_spec(self) -> DriftSpec:
        return DriftSpec(self._neural_drift(), self.diffusion())

    def controlled_spec(self, counts: CountSample) -> DriftSpec:
        drift = ControlledDrift(
            self._neural_drift(),
            self.control,
            self.context_of(counts),
            self.count_scale,
        )
        return DriftSpec(drift, self.diffusion())


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and conditioning choices for a fresh model."""

    hidden_layers: int = 20
    hidden_width: int = 10
    diffusion: str = "fixed"  # "fixed" | "learned"
    eta: float = 1.0
    z0: float = 5.0
    z_scale: float = 100.0
    t_scale: float = 4.0
    z_loc: float = 0.0
    t_loc: float = 0.0
    drift_scale: float = 1.0
    sigma_scale: float = 1.0
    sigma_shift: float = 0.0
    count_scale: float = 100.0
    context_mode: str = "terminal"


def initial_model(cfg: ModelConfig, scheme: ObservationScheme, init_seed: int) -> VariationalModel:
    """Glorot-initialized nets; per-net seeds derive from init_seed."""
    n_ctx = 1 if cfg.context_mode == "terminal" else len(scheme)
    arch = dict(hidden_layers=cfg.hidden_layers, hidden_width=cfg.hidden_width)
    prior = nn.init_params(MLPSpec(input_dim=2, **arch), seeds.derive(init_seed, seeds.INIT, 0))
    control = nn.init_params(
        MLPSpec(input_dim=n_ctx + 1, **arch), seeds.derive(init_seed, seeds.INIT, 1)
    )
    sigma = None
    if cfg.diffusion == "learned":
        sigma = nn.init_params(MLPSpec(input_dim=2, **arch), seeds.derive(init_seed, seeds.INIT, 2))
    elif cfg.diffusion != "fixed":
        raise ValueError(f"unknown diffusion mode {cfg.diffusion!r}")
    return VariationalModel(
        prior,
        control,
        eta=cfg.eta,
        sigma=sigma,
        z0=cfg.z0,
        z_scale=cfg.z_scale,
        t_scale=cfg.t_scale,
        z_loc=cfg.z_loc,
        t_loc=cfg.t_loc,
        drift_scale=cfg.drift_scale,
        sigma_scale=cfg.sigma_scale,
        sigma_shift=cfg.sigma_shift,
        count_scale=cfg.count_scale,
        context_mode=cfg.context_mode,
    )


# --- flat parameter vector over (theta | control [| sigma]) ------------------


def block_slices(model: VariationalModel) -> dict[str, slice]:
    sizes = [("theta", model.prior.spec.n_params), ("control", model.control.spec.n_params)]
    if model.sigma is not None:
        sizes.append(("sigma", model.sigma.spec.n_params))
    out, pos = {}, 0
    for name, size in sizes:
        out[name] = slice(pos, pos + size)
        pos += size
    return out


def param_vector(model: VariationalModel) -> np.ndarray:
    parts = [model.prior.params, model.control.params]
    if model.sigma is not None:
        parts.append(model.sigma.params)
    return np.concatenate(parts)


def with_param_vector(model: VariationalModel, vec: np.ndarray) -> VariationalModel:
    sl = block_slices(model)
    kw = dict(
        prior=model.prior.with_params(vec[sl["theta"]]),
        control=model.control.with_params(vec[sl["control"]]),
    )
    if model.sigma is not None:
        kw["sigma"] = model.sigma.with_params(vec[sl["sigma"]])
    return replace(model, **kw)


def controlled_drift(z: float, t: float, k, model: VariationalModel) -> float:
    """Drift of the controlled SDE: b(z,t) + sigma(z,t) * u(k,t)."""
    if z < 0:
        raise ValueError(f"need z >= 0, got {z}")
    zi = (z - model.z_loc) / model.z_scale
    ti = (t - model.t_loc) / model.t_scale
    b = model.drift_scale * nn.forward(model.prior, [zi, ti])
    ctx = np.atleast_1d(np.asarray(k, dtype=np.float64)) / model.count_scale
    u = nn.forward(model.control, [*ctx, ti])
    if model.sigma is not None:
        y = nn.forward(model.sigma, [zi, ti]) + model.sigma_shift
        sig = float(model.sigma_scale * np.logaddexp(0.0, y) + 1e-4)
    else:
        sig = model.eta * np.sqrt(z)
    return float(b + sig * u)


# --- ELBO and its pathwise gradient ------------------------------------------


def _control_grid(model: VariationalModel, contexts: np.ndarray, grid: TimeGrid, want_grads: bool):
    """Control values (n, N) and optionally parameter grads (n, N, P_beta)
    on the full time grid, one row per sample context."""
    n, N = contexts.shape[0], grid.steps
    tt = np.tile((grid.times()[:N] - model.t_loc) / model.t_scale, n)
    ctx = np.repeat(contexts / model.count_scale, N, axis=0)
    x = np.column_stack([ctx, tt])
    if want_grads:
        u, gu, _ = nn.eval_with_grads(model.control, x, need_params=True, need_input=False)
        return u.reshape(n, N), gu.reshape(n, N, -1)
    return nn.forward_batch(model.control, x).reshape(n, N), None


def _penalty_and_grad(u: np.ndarray, gu: np.ndarray | None, dt: float):
    """Left-Riemann control penalty per sample and its beta-gradient.

    penalty_i = 0.5 * sum_m u(k_i, t_m)^2 * dt; gradient averaged over i.
    """
    pen = 0.5 * np.sum(u**2, axis=1) * dt
    if gu is None:
        return pen, None
    gpen = np.einsum("inm,in->m", gu, u) * dt / u.shape[0]
    return pen, gpen


def _inner_noise(seed: int, n_b: int, m: int, grid: TimeGrid) -> np.ndarray:
    """(n_b * m, N) Brownian increments; row (i, j) owns stream (INNER, i, j)."""
    sq = np.sqrt(grid.dt)
    rows = [
        seeds.rng(seed, seeds.INNER, i, j).standard_normal(grid.steps) * sq
        for i in range(n_b)
        for j in range(m)
    ]
    return np.stack(rows) if rows else np.empty((0, grid.steps))


def _loglik_terms(iz: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """Poisson interval log-likelihood per path, with 0*log(0) = 0.

    The log argument is floored at EPS_Z so that paths absorbed at zero
    (a truncation artifact with probability-zero continuous analogue)
    contribute a large finite penalty instead of collapsing the whole
    sample average to -inf; the pathwise gradient differentiates exactly
    this floored objective.
    """
    terms = np.where(dx > 0, dx * np.log(np.maximum(iz, EPS_Z)), 0.0) - iz - gammaln(dx + 1.0)
    return np.sum(terms, axis=1)


def _elbo_core(
    model: VariationalModel,
    batch: list[CountSample],
    scheme: ObservationScheme,
    grid: TimeGrid,
    m: int,
    seed: int,
    want_grads: bool,
):
    if m < 1:
        raise ValueError(f"need m >= 1 inner paths, got {m}")
    if not batch:
        raise ValueError("batch is empty")
    n_b = len(batch)
    contexts = np.array([model.context_of(c) for c in batch])
    u, gu = _control_grid(model, contexts, grid, want_grads)
    pen, gpen = _penalty_and_grad(u, gu, grid.dt)

    dw = _inner_noise(seed, n_b, m, grid)
    spec = model.controlled_spec(batch[0])  # context is overridden per row below
    bucket = scheme.interval_index(grid)
    res = simulate_batch(
        spec,
        model.z0,
        grid,
        dw,
        want_sens=want_grads,
        interval_index=bucket,
        n_intervals=len(scheme),
        control_values=np.repeat(u, m, axis=0),
        control_grads=np.repeat(gu, m, axis=0) if want_grads else None,
    )
    dx = np.repeat(np.stack([c.increments() for c in batch]), m, axis=0)
    loglik = _loglik_terms(res.iz, dx)
    elbo = float(np.mean(loglik) - np.mean(pen))
    if not want_grads:
        return elbo, None

    w = np.where(res.iz > EPS_Z, dx / np.maximum(res.iz, EPS_Z), 0.0) - 1.0
    grad = np.einsum("bl,blp->p", w, res.diz) / (n_b * m)
    grad[res.block_slice("control")] -= gpen
    return elbo, grad


def elbo_saa(
    model: VariationalModel,
    batch: list[CountSample],
    scheme: ObservationScheme,
    grid: TimeGrid,
    m: int,
    seed: int,
) -> float:
    """Sample-average ELBO over m controlled paths per sample.

    Deterministic per seed: path (i, j) owns noise stream (seed, INNER, i, j)
    independent of the parameters, so common-random-number comparisons and
    pathwise differentiation are valid.
    """
    return _elbo_core(model, batch, scheme, grid, m, seed, want_grads=False)[0]


def elbo_gradient(
    model: VariationalModel,
    batch: list[CountSample],
    scheme: ObservationScheme,
    grid: TimeGrid,
    m: int,
    seed: int,
) -> np.ndarray:
    """Pathwise gradient of elbo_saa at the same seed, over (theta | control [| sigma])."""
    return _elbo_core(model, batch, scheme, grid, m, seed, want_grads=True)[1]


def posterior_paths(
    model: VariationalModel,
    counts: CountSample,
    grid: TimeGrid,
    m: int,
    seed: int,
) -> list[IntensityPath]:
    """m controlled-SDE paths conditioned on the sample's count context."""
    if m == 0:
        return []
    sq = np.sqrt(grid.dt)
    dw = np.stack(
        [seeds.rng(seed, POSTERIOR_TAG, j).standard_normal(grid.steps) * sq for j in range(m)]
    )
    res = simulate_batch(model.controlled_spec(counts), model.z0, grid, dw)
    return [IntensityPath(grid, res.z[j]) for j in range(m)]


def posterior_mean_curve(
    model: VariationalModel,
    samples,
    grid: TimeGrid,
    m: int,
    seed: int,
) -> np.ndarray:
    """Mean of m posterior paths per count sample, averaged over samples.

    Batched equivalent of averaging ``posterior_paths`` over the samples;
    path (i, j) owns noise stream (seed, POSTERIOR_TAG, i, j).
    """
    n = len(samples)
    contexts = np.array([model.context_of(c) for c in samples])
    u, _ = _control_grid(model, contexts, grid, want_grads=False)
    sq = np.sqrt(grid.dt)
    dw = np.stack(
        [
            seeds.rng(seed, POSTERIOR_TAG, i, j).standard_normal(grid.steps) * sq
            for i in range(n)
            for j in range(m)
        ]
    )
    spec = model.controlled_spec(samples[0])
    res = simulate_batch(
        spec, model.z0, grid, dw, control_values=np.repeat(u, m, axis=0)
    )
    return res.z.mean(axis=0)


# --- training -----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    n_inner: int = 5
    minibatch: int = 10
    epochs: int = 35
    lr_theta: float = 0.01
    lr_beta: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grid: TimeGrid = TimeGrid(4.0, 60)
    seed: int = 0
    fixed_inner_seed: bool = False

    def __post_init__(self):
        if min(self.n_inner, self.minibatch, self.epochs) < 1:
            raise ValueError("n_inner, minibatch, epochs must be positive")
        if min(self.lr_theta, self.lr_beta) <= 0:
            raise ValueError("learning rates must be positive")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


@dataclass
class TrainReport:
    elbo: np.ndarray
    grad_norm: np.ndarray
    wallclock_ms: np.ndarray
    updates: np.ndarray  # global update indices (continue across resumes)
    adam: AdamState = field(repr=False, default=None)

    def n_updates(self) -> int:
        return len(self.elbo)


def train(
    dataset: Dataset,
    config: TrainConfig,
    init_seed: int = 0,
    model_config: ModelConfig = ModelConfig(),
    model: VariationalModel | None = None,
    adam: AdamState | None = None,
) -> tuple[VariationalModel, TrainReport]:
    """Adam ascent on the SAA ELBO over shuffled minibatches.

    Runs epochs * ceil(n / minibatch) updates. Inner Monte Carlo seeds are
    fresh per update (derived from config.seed and the global update index)
    unless config.fixed_inner_seed is set. Pass ``model``/``adam`` to resume
    from a checkpoint; update numbering then continues.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    if config.minibatch > n:
        raise ValueError(f"minibatch {config.minibatch} exceeds dataset size {n}")
    if model is None:
        model = initial_model(model_config, dataset.scheme, init_seed)
    vec = param_vector(model)
    sl = block_slices(model)
    lr = np.empty_like(vec)
    lr[sl["theta"]] = config.lr_theta
    lr[sl["control"]] = config.lr_beta
    if "sigma" in sl:
        lr[sl["sigma"]] = config.lr_theta
    if adam is None:
        adam = AdamState(np.zeros_like(vec), np.zeros_like(vec))
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps

    n_batches = -(-n // config.minibatch)
    elbos, gnorms, clocks, upd_ids = [], [], [], []
    samples = dataset.samples
    for epoch in range(config.epochs):
        order = seeds.rng(config.seed, seeds.SHUFFLE, epoch).permutation(n)
        for bi in range(n_batches):
            t0 = time.perf_counter()
            idx = order[bi * config.minibatch : (bi + 1) * config.minibatch]
            batch = [samples[i] for i in idx]
            update = adam.t
            inner_seed = (
                config.seed
                if config.fixed_inner_seed
                else seeds.derive(config.seed, UPDATE_TAG, update)
            )
            elbo, grad = _elbo_core(
                model, batch, dataset.scheme, config.grid, config.n_inner, inner_seed, True
            )
            if not np.isfinite(elbo) or not np.all(np.isfinite(grad)):
                raise TrainingDivergedError(update, f"non-finite objective (elbo={elbo})")
            adam.t += 1
            adam.m = b1 * adam.m + (1 - b1) * grad
            adam.v = b2 * adam.v + (1 - b2) * grad**2
            mhat = adam.m / (1 - b1**adam.t)
            vhat = adam.v / (1 - b2**adam.t)
            vec = vec + lr * mhat / (np.sqrt(vhat) + eps)
            model = with_param_vector(model, vec)
            elbos.append(elbo)
            gnorms.append(float(np.linalg.norm(grad)))
            clocks.append((time.perf_counter() - t0) * 1e3)
            upd_ids.append(update)

    report = TrainReport(
        np.array(elbos), np.array(gnorms), np.array(clocks), np.array(upd_ids), adam
    )
    return model, report
