"""Classical NHPP intensity estimators used as comparison baselines.

Both estimators treat the traffic as a nonhomogeneous Poisson process
(no latent randomness) and maximize the standard NHPP log-likelihood
sum_l [dx_l * log(int Z) - int Z] over nonnegative piecewise intensities.
The piecewise-linear family couples nodal values through the continuity
constraint, so that fit is done by projected gradient ascent; the
objective is concave because interval integrals are linear in the nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dspp import Dataset


class ConvergenceError(RuntimeError):
    """Optimizer hit the iteration cap; carries the last iterate."""

    def __init__(self, message: str, last_iterate: np.ndarray):
        super().__init__(message)
        self.last_iterate = last_iterate


@dataclass(frozen=True)
class PiecewiseIntensity:
    """Nonnegative piecewise intensity on knots spanning [0, T].

    kind "constant": value of the piece containing t (right-piece
    convention at interior knots; the final entry mirrors the last piece).
    kind "linear": continuous interpolation between nodal values.
    """

    knots: tuple[float, ...]
    values: tuple[float, ...]
    kind: str

    def __post_init__(self):
        k = tuple(float(t) for t in self.knots)
        v = tuple(float(x) for x in self.values)
        if self.kind not in ("constant", "linear"):
            raise ValueError(f"kind must be 'constant' or 'linear', got {self.kind!r}")
        if len(k) < 2 or any(b <= a for a, b in zip(k, k[1:])):
            raise ValueError("knots must be strictly increasing, length >= 2")
        if len(v) != len(k):
            raise ValueError("need one value per knot")
        if any(x < 0 for x in v):
            raise ValueError("values must be nonnegative")
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "values", v)


def evaluate(pi: PiecewiseIntensity, t) -> np.ndarray | float:
    """Evaluate the fitted intensity at times in [0, T]."""
    t_arr = np.asarray(t, dtype=np.float64)
    knots = np.array(pi.knots)
    if np.any(t_arr < knots[0]) or np.any(t_arr > knots[-1]):
        raise ValueError(f"t outside [{knots[0]}, {knots[-1]}]")
    if pi.kind == "linear":
        out = np.interp(t_arr, knots, np.array(pi.values))
    else:
        seg = np.minimum(np.searchsorted(knots, t_arr, side="right") - 1, len(knots) - 2)
        out = np.array(pi.values)[seg]
    return float(out) if np.isscalar(t) else out


def pc_mle(dataset: Dataset) -> PiecewiseIntensity:
    """Piecewise-constant NHPP MLE: mean increment over interval length."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    bounds = np.array(dataset.scheme.boundaries())
    rates = dataset.increment_matrix().mean(axis=0) / np.diff(bounds)
    return PiecewiseIntensity(tuple(bounds), tuple(rates) + (rates[-1],), "constant")


def _interval_coefficients(knots: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    """c[l, a] such that the integral of the linear interpolant over
    observation interval l equals c[l] . nodal_values."""
    L, K = len(bounds) - 1, len(knots)
    c = np.zeros((L, K))
    for l in range(L):
        s, e = bounds[l], bounds[l + 1]
        for a in range(K - 1):
            lo, hi = max(knots[a], s), min(knots[a + 1], e)
            if hi <= lo:
                continue
            h = knots[a + 1] - knots[a]
            w = (0.5 * (lo + hi) - knots[a]) / h
            c[l, a] += (hi - lo) * (1.0 - w)
            c[l, a + 1] += (hi - lo) * w
    return c


def _pl_objective(v: np.ndarray, c: np.ndarray, mean_inc: np.ndarray) -> float:
    m = c @ v
    if np.any((m <= 0) & (mean_inc > 0)):
        return float("-inf")
    terms = np.where(mean_inc > 0, mean_inc * np.log(np.maximum(m, 1e-300)), 0.0)
    return float(np.sum(terms - m))


def pl_mle(
    dataset: Dataset,
    d: int,
    tol: float = 1e-8,
    max_iter: int = 100_000,
    trace: list | None = None,
) -> PiecewiseIntensity:
    """Continuous piecewise-linear NHPP MLE with d uniform pieces.

    Projected gradient ascent with backtracking from a flat start at the
    grand mean rate; the flat start also pins the solution on the flat
    optimum ridge that arises when the pieces outnumber the constraints.
    """
    if d < 1:
        raise ValueError(f"need d >= 1, got {d}")
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    bounds = np.array(dataset.scheme.boundaries())
    horizon = bounds[-1]
    knots = np.linspace(0.0, horizon, d + 1)
    mean_inc = dataset.increment_matrix().mean(axis=0)
    c = _interval_coefficients(knots, bounds)

    v = np.full(d + 1, max(mean_inc.sum() / horizon, 1e-8))
    f = _pl_objective(v, c, mean_inc)
    if trace is not None:
        trace.append(f)
    step = 1.0
    for _ in range(max_iter):
        m = np.maximum(c @ v, 1e-12)
        grad = c.T @ (mean_inc / m - 1.0)
        improved = False
        while step > 1e-16:
            v_new = np.maximum(v + step * grad, 0.0)
            f_new = _pl_objective(v_new, c, mean_inc)
            if f_new >= f:
                improved = True
                break
            step *= 0.5
        if not improved:
            # stationary to float precision
            return PiecewiseIntensity(tuple(knots), tuple(v), "linear")
        converged = abs(f_new - f) <= tol * max(1.0, abs(f))
        v, f = v_new, f_new
        if trace is not None:
            trace.append(f)
        step *= 2.0
        if converged:
            return PiecewiseIntensity(tuple(knots), tuple(v), "linear")
    raise ConvergenceError(
        f"piecewise-linear MLE did not converge within {max_iter} iterations", v
    )
