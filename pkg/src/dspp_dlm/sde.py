"""Euler-Maruyama integration of intensity SDEs and their sensitivities.

The latent intensity is a nonnegative diffusion on a uniform grid over
[0, T]. Supported drifts: mean-reverting (kappa * (beta - z)), a neural
drift net on (z, t), and the controlled variant that adds a deterministic
control term keyed to an observed count context. Supported diffusion
coefficients: eta * sqrt(z), the eta * beta**alpha * sqrt(z) form, and a
learned positive net on (z, t).

Negativity is handled by full truncation: coefficients are evaluated at
the current (already nonnegative) state and the post-step state is clamped
at zero, so every emitted path is nonnegative at all epochs.

Sensitivities are computed by differentiating the discrete recursion
itself (not the formal continuous-time derivative SDE), which makes them
consistent with common-random-number finite differences of the simulated
paths to first order in the step size. Coefficients involving 1/sqrt(z)
are zeroed below ``EPS_Z`` where the continuous equation is only formal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import nn, seeds
from .nn import MLPModel

EPS_Z = 1e-8


class IntegrationError(RuntimeError):
    """Non-finite drift/diffusion during integration; carries the step index."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_m = m * horizon / steps, m = 0..steps."""

    horizon: float
    steps: int

    def __post_init__(self):
        if self.horizon <= 0 or self.steps < 1:
            raise ValueError(f"need horizon > 0 and steps >= 1, got {self}")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def index_of(self, t: float) -> int:
        """Grid index of an epoch; raises for off-grid times."""
        m = int(round(t / self.dt))
        if m < 0 or m > self.steps or abs(t - m * self.dt) > 1e-9 * max(1.0, self.horizon):
            raise ValueError(f"t={t} is not on the grid (dt={self.dt})")
        return m


@dataclass(frozen=True)
class NoisePath:
    """Brownian increments sqrt(dt) * N(0,1), one per grid cell."""

    grid: TimeGrid
    increments: np.ndarray

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=np.float64)
        if inc.shape != (self.grid.steps,):
            raise ValueError(f"increments shape {inc.shape} != ({self.grid.steps},)")
        object.__setattr__(self, "increments", inc)


@dataclass(frozen=True)
class IntensityPath:
    """Intensity values on the grid epochs (arrivals per unit time)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.grid.steps + 1,):
            raise ValueError(f"values shape {v.shape} != ({self.grid.steps + 1},)")
        if not np.all(np.isfinite(v)):
            raise ValueError("path values must be finite")
        if np.any(v < 0):
            raise ValueError("path values must be nonnegative")
        object.__setattr__(self, "values", v)

    def cumulative(self) -> np.ndarray:
        """Left-Riemann cumulative integral at every epoch (length steps+1)."""
        c = np.empty(self.grid.steps + 1)
        c[0] = 0.0
        np.cumsum(self.values[:-1] * self.grid.dt, out=c[1:])
        return c


@dataclass(frozen=True)
class SensitivityPath:
    """d Z(t_m) / d p for one scalar parameter p of the drift spec."""

    grid: TimeGrid
    values: np.ndarray
    which: tuple[str, int]


# --- drift and diffusion specifications -------------------------------------


@dataclass(frozen=True)
class CirDrift:
    """Mean reversion kappa * (beta - z)."""

    kappa: float
    beta: float

    def __post_init__(self):
        if self.kappa <= 0 or self.beta <= 0:
            raise ValueError(f"need kappa > 0 and beta > 0, got {self}")


@dataclass(frozen=True)
class NeuralDrift:
    """Drift b = out_scale * net((z - z_loc) / z_scale, (t - t_loc) / t_scale).

    Input standardization and the output scale are conditioning choices:
    they keep the tanh layers in their responsive range and let the drift
    reach the tens-per-unit-time magnitudes of arrival intensities within
    a short Adam schedule. The output stays bounded (Novikov holds).
    """

    net: MLPModel
    z_scale: float = 100.0
    t_scale: float = 4.0
    z_loc: float = 0.0
    t_loc: float = 0.0
    out_scale: float = 1.0


@dataclass(frozen=True)
class ControlledDrift:
    """Neural prior drift plus a control term keyed to a count context.

    The control net consumes (context / count_scale, t) only; it never
    reads z, so the controlled noise keeps independent increments. The
    control enters the drift multiplied by the diffusion coefficient.
    """

    prior: NeuralDrift
    control: MLPModel
    context: tuple[float, ...]
    count_scale: float = 100.0

    def control_input(self, t: np.ndarray) -> np.ndarray:
        ctx = np.asarray(self.context, dtype=np.float64) / self.count_scale
        ts = (t - self.prior.t_loc) / self.prior.t_scale
        return np.column_stack([np.broadcast_to(ctx, (len(ts), len(ctx))), ts])


@dataclass(frozen=True)
class FixedSqrtDiffusion:
    """eta * sqrt(z)."""

    eta: float

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError(f"need eta >= 0, got {self.eta}")

    @property
    def coefficient(self) -> float:
        return self.eta


@dataclass(frozen=True)
class CirPaperDiffusion:
    """eta * beta**alpha * sqrt(z)."""

    eta: float
    beta: float
    alpha: float

    def __post_init__(self):
        if self.eta < 0 or self.beta <= 0 or not (0 < self.alpha <= 0.5):
            raise ValueError(f"need eta >= 0, beta > 0, alpha in (0, 1/2], got {self}")

    @property
    def coefficient(self) -> float:
        return self.eta * self.beta**self.alpha


@dataclass(frozen=True)
class NeuralDiffusion:
    """Learned positive diffusion on standardized (z, t) inputs:
    out_scale * softplus(net + shift) + floor.

    The output scale and softplus shift set the starting magnitude of the
    coefficient (conditioning; the net itself still has zero biases at
    initialization).
    """

    net: MLPModel
    z_scale: float = 100.0
    t_scale: float = 4.0
    z_loc: float = 0.0
    t_loc: float = 0.0
    out_scale: float = 1.0
    shift: float = 0.0
    floor: float = 1e-4


Drift = CirDrift | NeuralDrift | ControlledDrift
Diffusion = FixedSqrtDiffusion | CirPaperDiffusion | NeuralDiffusion


@dataclass(frozen=True)
class DriftSpec:
    """A drift kind paired with a diffusion coefficient."""

    drift: Drift
    diffusion: Diffusion


def cir_model(kappa: float, beta: float, eta: float) -> DriftSpec:
    return DriftSpec(CirDrift(kappa, beta), FixedSqrtDiffusion(eta))


def ode_model(kappa: float, beta: float) -> DriftSpec:
    """Deterministic mean-reverting intensity (zero noise)."""
    return DriftSpec(CirDrift(kappa, beta), FixedSqrtDiffusion(0.0))


def param_blocks(spec: DriftSpec) -> list[tuple[str, int]]:
    """Sensitivity coordinate layout: theta, then control, then sigma."""
    blocks: list[tuple[str, int]] = []
    if isinstance(spec.drift, NeuralDrift):
        blocks.append(("theta", spec.drift.net.spec.n_params))
    elif isinstance(spec.drift, ControlledDrift):
        blocks.append(("theta", spec.drift.prior.net.spec.n_params))
        blocks.append(("control", spec.drift.control.spec.n_params))
    if isinstance(spec.diffusion, NeuralDiffusion):
        blocks.append(("sigma", spec.diffusion.net.spec.n_params))
    return blocks


# --- simulation engine -------------------------------------------------------


@dataclass
class SimResult:
    z: np.ndarray  # (B, N+1)
    iz: np.ndarray | None = None  # (B, L) interval-integrated intensity
    diz: np.ndarray | None = None  # (B, L, P)
    sens_history: np.ndarray | None = None  # (B, N+1, P)
    blocks: list[tuple[str, int]] = field(default_factory=list)

    def block_slice(self, name: str) -> slice:
        pos = 0
        for bname, size in self.blocks:
            if bname == name:
                return slice(pos, pos + size)
            pos += size
        raise KeyError(name)


def _drift_terms(drift: Drift, z: np.ndarray, t: float, want_sens: bool):
    """Returns (b, db_dz, db_dtheta) at state z, time t."""
    if isinstance(drift, CirDrift):
        dz = np.full_like(z, -drift.kappa) if want_sens else None
        return drift.kappa * (drift.beta - z), dz, None
    part = drift if isinstance(drift, NeuralDrift) else drift.prior
    net, zs, s_out = part.net, part.z_scale, part.out_scale
    x = np.column_stack(
        [(z - part.z_loc) / zs, np.full_like(z, (t - part.t_loc) / part.t_scale)]
    )
    b, gp, gx = nn.eval_with_grads(net, x, need_params=want_sens, need_input=want_sens)
    if want_sens:
        return s_out * b, s_out * gx[:, 0] / zs, s_out * gp
    return s_out * b, None, None


def _diffusion_terms(diff: Diffusion, z: np.ndarray, t: float, want_sens: bool):
    """Returns (sigma, dsigma_dz, dsigma_dparams) at state z, time t."""
    if isinstance(diff, (FixedSqrtDiffusion, CirPaperDiffusion)):
        c = diff.coefficient
        sqz = np.sqrt(z)
        dz = None
        if want_sens:
            dz = np.where(z > EPS_Z, c / (2.0 * np.maximum(sqz, np.sqrt(EPS_Z))), 0.0)
        return c * sqz, dz, None
    x = np.column_stack(
        [(z - diff.z_loc) / diff.z_scale, np.full_like(z, (t - diff.t_loc) / diff.t_scale)]
    )
    y, gp, gx = nn.eval_with_grads(diff.net, x, need_params=want_sens, need_input=want_sens)
    y = y + diff.shift
    sig = diff.out_scale * np.logaddexp(0.0, y) + diff.floor  # scaled softplus + floor
    if not want_sens:
        return sig, None, None
    s = diff.out_scale * expit(y)
    return sig, s * gx[:, 0] / diff.z_scale, gp * s[:, None]


def simulate_batch(
    spec: DriftSpec,
    z0,
    grid: TimeGrid,
    dw: np.ndarray,
    *,
    want_sens: bool = False,
    interval_index: np.ndarray | None = None,
    n_intervals: int = 0,
    keep_sens_history: bool = False,
    control_values: np.ndarray | None = None,
    control_grads: np.ndarray | None = None,
) -> SimResult:
    """Integrate a batch of paths sharing one drift spec.

    dw has shape (B, N). ``interval_index`` maps each grid cell to an
    observation interval for left-Riemann accumulation of the integrated
    intensity (and its parameter sensitivities when ``want_sens``).
    ``control_values``/``control_grads`` let callers precompute the control
    term per step, shapes (B, N) and (B, N, P_control).
    """
    dw = np.asarray(dw, dtype=np.float64)
    if dw.ndim != 2 or dw.shape[1] != grid.steps:
        raise ValueError(f"dw shape {dw.shape} incompatible with grid steps {grid.steps}")
    B, N = dw.shape
    dt = grid.dt
    times = grid.times()

    blocks = param_blocks(spec) if want_sens else []
    P = sum(size for _, size in blocks)
    offsets: dict[str, slice] = {}
    pos = 0
    for name, size in blocks:
        offsets[name] = slice(pos, pos + size)
        pos += size

    controlled = isinstance(spec.drift, ControlledDrift)
    if controlled and control_values is None:
        xs = spec.drift.control_input(times[:N])  # (N, ctx+1)
        if want_sens:
            u_all, gu_all, _ = nn.eval_with_grads(
                spec.drift.control, xs, need_params=True, need_input=False
            )
            control_grads = np.broadcast_to(gu_all, (B, N, gu_all.shape[1]))
        else:
            u_all = nn.forward_batch(spec.drift.control, xs)
        control_values = np.broadcast_to(u_all, (B, N))

    z = np.full(B, float(z0)) if np.isscalar(z0) else np.asarray(z0, dtype=np.float64).copy()
    zpath = np.empty((B, N + 1))
    zpath[:, 0] = z

    D = np.zeros((B, P)) if want_sens else None
    iz = np.zeros((B, n_intervals)) if interval_index is not None else None
    diz = np.zeros((B, n_intervals, P)) if (interval_index is not None and want_sens) else None
    hist = np.zeros((B, N + 1, P)) if (want_sens and keep_sens_history) else None

    for m in range(N):
        t = times[m]
        b, db_dz, db_dth = _drift_terms(spec.drift, z, t, want_sens)
        sig, dsig_dz, dsig_dp = _diffusion_terms(spec.diffusion, z, t, want_sens)
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(sig))):
            raise IntegrationError(m, "non-finite drift or diffusion value")

        u = control_values[:, m] if controlled else 0.0
        shock = (u * dt + dw[:, m]) if controlled else dw[:, m]

        if interval_index is not None and interval_index[m] >= 0:
            iz[:, interval_index[m]] += z * dt
            if want_sens:
                diz[:, interval_index[m], :] += D * dt

        pre = z + (b + sig * u) * dt + sig * dw[:, m]

        if want_sens:
            coef = 1.0 + db_dz * dt + dsig_dz * shock
            drive = np.zeros((B, P))
            if db_dth is not None and "theta" in offsets:
                drive[:, offsets["theta"]] = db_dth * dt
            if controlled and "control" in offsets:
                drive[:, offsets["control"]] = control_grads[:, m, :] * (sig * dt)[:, None]
            if dsig_dp is not None and "sigma" in offsets:
                drive[:, offsets["sigma"]] = dsig_dp * shock[:, None]
            D = (pre > 0)[:, None] * (coef[:, None] * D + drive)
            if hist is not None:
                hist[:, m + 1, :] = D

        z = np.maximum(pre, 0.0)
        zpath[:, m + 1] = z

    return SimResult(zpath, iz, diz, hist, blocks)


# --- public operations -------------------------------------------------------


def sample_noise(grid: TimeGrid, seed: int) -> NoisePath:
    """Brownian increments for one path; deterministic per seed."""
    gen = seeds.rng(seed)
    return NoisePath(grid, gen.standard_normal(grid.steps) * np.sqrt(grid.dt))


def euler_maruyama(spec: DriftSpec, z0: float, grid: TimeGrid, noise: NoisePath) -> IntensityPath:
    """One full-truncation Euler-Maruyama path of the intensity SDE."""
    if noise.grid != grid:
        raise ValueError("noise grid does not match integration grid")
    if z0 < 0:
        raise ValueError(f"need z0 >= 0, got {z0}")
    res = simulate_batch(spec, z0, grid, noise.increments[None, :])
    return IntensityPath(grid, res.z[0])


def simulate_sensitivity(
    spec: DriftSpec,
    path: IntensityPath,
    noise: NoisePath,
    which: tuple[str, int],
) -> SensitivityPath:
    """Pathwise derivative of the discretized recursion for one coordinate.

    ``which`` is (block, index) with block in {"theta", "control", "sigma"}
    and index into that network's flat parameter vector. The path must have
    been produced by ``euler_maruyama`` with exactly this spec and noise.
    """
    if path.grid != noise.grid:
        raise ValueError("path and noise grids do not match")
    blocks = dict(param_blocks(spec))
    name, idx = which
    if name not in blocks:
        raise ValueError(f"spec has no parameter block {name!r} (has {sorted(blocks)})")
    if not 0 <= idx < blocks[name]:
        raise ValueError(f"coordinate {idx} out of range for block {name!r} ({blocks[name]})")
    res = simulate_batch(
        spec,
        path.values[0],
        path.grid,
        noise.increments[None, :],
        want_sens=True,
        keep_sens_history=True,
    )
    if not np.allclose(res.z[0], path.values, rtol=1e-10, atol=1e-10):
        raise ValueError("path was not generated by this drift spec and noise")
    col = res.block_slice(name).start + idx
    return SensitivityPath(path.grid, res.sens_history[0, :, col], which)


def integrated_intensity(path: IntensityPath, s: float, t: float) -> float:
    """Left-Riemann integral of the path over [s, t), both epochs on-grid.

    Computed from one shared cumulative array, so interval additivity holds
    up to float rounding (the rule itself introduces no splitting error).
    """
    i, j = path.grid.index_of(s), path.grid.index_of(t)
    if i > j:
        raise ValueError(f"need s <= t, got s={s} > t={t}")
    c = path.cumulative()
    return float(c[j] - c[i])
