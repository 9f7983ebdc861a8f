"""Time stepping for the base SDE under super-linear drifts, plus moment and
stability estimators.

Schemes
-------
euler_maruyama      X' = X + b dt + sigma dW
tamed_euler         X' = X + b dt / (1 + dt |b|) + sigma dW
split_step_implicit solve Y = X + b(t', Y) dt by damped Newton, X' = Y + sigma(X) dW

The implicit equation has a unique root whenever dt * L_mono < 1 by the
one-sided Lipschitz property.  Any state with |X| > DIVERGENCE_BOUND or a
non-finite entry is tagged diverged at the first bad step; divergence is never
silent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    History,
    MCEstimate,
    NoisePath,
    StatePath,
    TimeGrid,
    mc_estimate,
    run_chunks,
    sample_increments,
    sample_theta,
)
from .errors import (
    DivergenceError,
    InvalidParameterError,
    NewtonFailureError,
)
from .models import CoefficientField, ModelSpec

DIVERGENCE_BOUND = 1e150

EULER = "euler_maruyama"
TAMED = "tamed_euler"
IMPLICIT = "split_step_implicit"
SCHEMES = (EULER, TAMED, IMPLICIT)


@dataclass(frozen=True)
class SchemeChoice:
    kind: str = TAMED
    newton_tol: float = 1e-10
    newton_max_iter: int = 50

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise InvalidParameterError(
                f"unknown scheme {self.kind!r}; choose from {SCHEMES}"
            )
        if not (self.newton_tol > 0):
            raise InvalidParameterError("newton_tol must be > 0")
        if self.newton_max_iter < 1:
            raise InvalidParameterError("newton_max_iter must be >= 1")


@dataclass
class SimBatch:
    """Batched simulation output: values (B, N+1, d) with diverged paths frozen
    at their last finite state from first_bad onward."""

    grid: TimeGrid
    values: np.ndarray
    diverged: np.ndarray  # (B,) bool
    first_bad: np.ndarray  # (B,) int, N+1 when the path never diverged
    hist: History


def _check_implicit_dt(field: CoefficientField, grid: TimeGrid):
    if field.monotone_const > 0 and grid.dt * field.monotone_const >= 1.0:
        raise InvalidParameterError(
            "split_step_implicit requires dt * L_mono < 1 "
            f"(dt={grid.dt:.3g}, L_mono={field.monotone_const:.3g})"
        )


def _newton_solve(field, t_next, hist, x, dt, scheme, step_index):
    """Solve Y = x + dt b(t_next, Y) with damped Newton, batched over paths."""
    B, d = x.shape
    eye = np.eye(d)
    y = x.copy()
    tol = scheme.newton_tol
    res = y - x - dt * field.drift(t_next, hist, y)
    for _ in range(scheme.newton_max_iter):
        norm = np.max(np.abs(res), axis=1)
        if np.all(norm <= tol):
            return y
        jac = eye - dt * field.grad_drift(t_next, hist, y)
        step = np.linalg.solve(jac, -res[..., None])[..., 0]
        lam = np.ones((B, 1))
        for _ in range(30):
            y_try = y + lam * step
            res_try = y_try - x - dt * field.drift(t_next, hist, y_try)
            worse = (np.max(np.abs(res_try), axis=1) > norm) & (norm > tol)
            if not np.any(worse):
                break
            lam[worse] *= 0.5
        y = y + lam * step
        res = y - x - dt * field.drift(t_next, hist, y)
    norm = float(np.max(np.abs(res)))
    if norm > tol:
        raise NewtonFailureError(step_index, norm, tol)
    return y


def simulate_batch(
    field: CoefficientField,
    grid: TimeGrid,
    increments: np.ndarray,
    theta: np.ndarray,
    scheme: SchemeChoice,
) -> SimBatch:
    """Core stepping kernel over a batch of paths.

    increments: (B, N, m); theta: (d,) or (B, d).
    """
    inc = np.asarray(increments, dtype=float)
    B, N, m = inc.shape
    d = field.d
    theta = np.broadcast_to(np.asarray(theta, dtype=float).reshape(-1, d), (B, d))
    if not np.all(np.isfinite(theta)):
        raise InvalidParameterError("theta must be finite")
    if scheme.kind == IMPLICIT:
        _check_implicit_dt(field, grid)

    hist = History(grid, inc)
    dt = grid.dt
    values = np.empty((B, N + 1, d))
    values[:, 0] = theta
    diverged = np.zeros(B, dtype=bool)
    first_bad = np.full(B, N + 1, dtype=np.int64)
    x = theta.copy()

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for i in range(N):
            t = i * dt
            dw = inc[:, i]
            if scheme.kind == IMPLICIT:
                sig = field.diffusion(t, hist, x)
                y = _newton_solve(field, t + dt, hist, x, dt, scheme, i)
                x_next = y + np.einsum("bdm,bm->bd", sig, dw)
            else:
                b = field.drift(t, hist, x)
                sig = field.diffusion(t, hist, x)
                if scheme.kind == TAMED:
                    denom = 1.0 + dt * np.linalg.norm(b, axis=1, keepdims=True)
                    drift_step = b * (dt / denom)
                    # |b| dt / (1 + dt |b|) < 1 for every finite drift value
                    _n = np.linalg.norm(drift_step, axis=1)
                    assert not np.any(_n[np.isfinite(_n)] > 1.0 + 1e-12)
                else:
                    drift_step = b * dt
                x_next = x + drift_step + np.einsum("bdm,bm->bd", sig, dw)

            bad = ~np.all(np.isfinite(x_next), axis=1)
            bad |= np.max(np.abs(x_next), axis=1) > DIVERGENCE_BOUND
            new_bad = bad & ~diverged
            if np.any(new_bad):
                first_bad[new_bad] = i + 1
                diverged |= new_bad
            # freeze diverged paths at their last finite state
            x_next[diverged] = x[diverged]
            x = x_next
            values[:, i + 1] = x

    return SimBatch(grid, values, diverged, first_bad, hist)


def simulate(
    spec: ModelSpec,
    grid: TimeGrid,
    w: NoisePath,
    theta: Optional[np.ndarray] = None,
    scheme: SchemeChoice = SchemeChoice(EULER),
) -> StatePath:
    """Simulate one path of the base SDE; raises DivergenceError on blow-up."""
    if w.grid != grid:
        raise InvalidParameterError("noise path lives on a different grid")
    if w.m != spec.m:
        raise InvalidParameterError("noise dimension does not match the model")
    theta = spec.theta0 if theta is None else np.asarray(theta, dtype=float)
    out = simulate_batch(spec.field, grid, w.increments[None], theta, scheme)
    if out.diverged[0]:
        raise DivergenceError(out.first_bad[0])
    return StatePath(grid, spec.d, out.values[0])


def sup_norms(values: np.ndarray) -> np.ndarray:
    """Pathwise sup of |X(t_i)| over the grid, values (B, N+1, d) -> (B,)."""
    return np.max(np.linalg.norm(values, axis=2), axis=1)


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


@dataclass
class MomentReport:
    estimate: MCEstimate
    p: float
    n_diverged: int
    nonconvergent: bool
    prefix_means: np.ndarray  # running means over n/4, n/2, n prefixes
    max_share: float  # largest sample's share of the total mass


def estimate_sup_moment(
    spec: ModelSpec,
    grid: TimeGrid,
    scheme: SchemeChoice,
    p: float,
    n_paths: int,
    seed: int,
    theta_sampler=None,
    workers: int = 1,
) -> MomentReport:
    """Monte Carlo estimate of E[ sup_t |X(t)|^p ].

    Diverged paths are excluded from the estimate and counted separately.
    The nonconvergent flag fires when the running mean keeps growing by more
    than one combined stderr over the n/4 -> n/2 -> n prefix ladder, or when
    a single sample carries more than 20% of the total mass; both are
    fingerprints of an infinite-moment (heavy-tailed) target.
    """
    if p < 1:
        raise InvalidParameterError("p must be >= 1")

    def chunk(start, count):
        inc = sample_increments(grid, spec.m, seed, start, count)
        if theta_sampler is None:
            theta = np.broadcast_to(spec.theta0, (count, spec.d))
        else:
            theta = sample_theta(theta_sampler, spec.d, seed, start, count)
        out = simulate_batch(spec.field, grid, inc, theta, scheme)
        vals = sup_norms(out.values) ** p
        return vals, out.diverged

    parts = run_chunks(chunk, n_paths, workers)
    vals = np.concatenate([v for v, _ in parts])
    div = np.concatenate([d for _, d in parts])
    good = vals[~div]
    if len(good) < 2:
        raise DivergenceError(0)
    est = mc_estimate(good)

    prefix_means = np.array(
        [good[: max(2, len(good) // k)].mean() for k in (4, 2, 1)]
    )
    prefix_se = np.array(
        [
            good[: max(2, len(good) // k)].std(ddof=1)
            / math.sqrt(max(2, len(good) // k))
            for k in (4, 2, 1)
        ]
    )
    grows = [
        prefix_means[i + 1] - prefix_means[i]
        > math.hypot(prefix_se[i], prefix_se[i + 1])
        for i in range(2)
    ]
    max_share = float(good.max() / good.sum()) if good.sum() > 0 else 0.0
    return MomentReport(
        estimate=est,
        p=p,
        n_diverged=int(div.sum()),
        nonconvergent=all(grows) or max_share > 0.2,
        prefix_means=prefix_means,
        max_share=max_share,
    )


def stability_ratio(
    spec: ModelSpec,
    grid: TimeGrid,
    scheme: SchemeChoice,
    theta: np.ndarray,
    xi: np.ndarray,
    p: float,
    n_paths: int,
    seed: int,
    workers: int = 1,
) -> MCEstimate:
    """E[ sup_t |X_xi - X_theta|^p ] / |xi - theta|^p with common random numbers."""
    theta = np.asarray(theta, dtype=float).reshape(spec.d)
    xi = np.asarray(xi, dtype=float).reshape(spec.d)
    gap = float(np.linalg.norm(xi - theta))
    if gap == 0.0:
        raise InvalidParameterError("theta and xi must differ")

    def chunk(start, count):
        inc = sample_increments(grid, spec.m, seed, start, count)
        a = simulate_batch(spec.field, grid, inc, theta, scheme)
        b = simulate_batch(spec.field, grid, inc, xi, scheme)
        if np.any(a.diverged) or np.any(b.diverged):
            step = min(
                a.first_bad[a.diverged].min() if a.diverged.any() else grid.N + 1,
                b.first_bad[b.diverged].min() if b.diverged.any() else grid.N + 1,
            )
            raise DivergenceError(step)
        return sup_norms(b.values - a.values) ** p

    vals = np.concatenate(run_chunks(chunk, n_paths, workers))
    return mc_estimate(vals / gap**p)
