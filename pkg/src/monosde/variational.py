"""First-variation machinery: the Jacobian SDE, its inverse process, the
stochastic Wronskian, Gateaux directions F[h], and general linear SDEs.

All variational equations share the base scheme's drift treatment: the
grad_drift * (state) term is tamed with the same 1 + dt |b(X_i)| denominator,
or solved with the same implicit factor, as the base SDE step.

Discretization of the inverse process K and the Wronskian D
-----------------------------------------------------------
Writing one J-step as J_{i+1} = (I + A_i) J_i with A_i = Dmat_i + S_i
(Dmat the treated drift matrix, S_i = sum_j grad_sigma^j dW^j), the inverse
SDE is discretized multiplicatively,

    K_{i+1} = K_i (I - A_i + A_i^2 - A_i^3),

whose mean increment reproduces the -(grad b - <grad sigma, grad sigma>) dt
drift and -K grad sigma dW diffusion of the continuous inverse equation.  A
plain Euler step (keeping only the mean of A^2) leaves an O(sqrt(dt))
quadratic-variation fluctuation in K J - I; the expansion above keeps the
identity at O(dt) pathwise.  For the same reason the Wronskian's Ito
correction integral is weighted by the realized quadratic variation
dW^j dW^k instead of dt, so log det J - log D stays O(dt) pathwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import History, NoisePath, StatePath, TimeGrid
from .errors import (
    DegenerateWronskianError,
    DivergenceError,
    InvalidParameterError,
    MissingGradientsError,
)
from .models import CoefficientField, ModelSpec
from .solver import EULER, TAMED, SchemeChoice, SimBatch, simulate_batch


# ---------------------------------------------------------------------------
# Per-step variational factors
# ---------------------------------------------------------------------------


class VariationalFactors:
    """Builds the per-step matrices of the linearized flow along a solved batch.

    For step i (state X_i, increment dW_i) it provides
        dmat(i): treated drift matrix (B, d, d)
        smat(i): sum_j grad_sigma^j(X_i) dW_i^j as a (B, d, d) matrix
        amat(i): dmat + smat (the one-step flow is I + amat)
    plus the raw gradients for forcing terms.
    """

    def __init__(self, field: CoefficientField, out: SimBatch, scheme: SchemeChoice):
        if field.grad_drift is None or field.grad_diffusion is None:
            raise MissingGradientsError("model does not supply coefficient gradients")
        self.field = field
        self.out = out
        self.scheme = scheme
        self.grid = out.grid
        self.hist = out.hist
        self.dt = out.grid.dt
        self._eye = np.eye(field.d)
        self._i = None

    def load(self, i: int):
        """Evaluate gradients at step i; call once per step in order."""
        field, dt = self.field, self.dt
        t = i * dt
        x = self.out.values[:, i]
        dw = self.hist.increments[:, i]
        self.gb = field.grad_drift(t, self.hist, x)  # (B, d, d)
        self.gs = field.grad_diffusion(t, self.hist, x)  # (B, d, m, d)
        self.sig = field.diffusion(t, self.hist, x)  # (B, d, m)
        self.dw = dw
        # S = sum_j grad_sigma^{(.,j)} dW^j
        self.smat = np.einsum("bimj,bm->bij", self.gs, dw)
        if self.scheme.kind == EULER:
            self.dmat = self.gb * dt
            self.tame = np.ones(x.shape[0])
        elif self.scheme.kind == TAMED:
            b = field.drift(t, self.hist, x)
            self.tame = 1.0 / (1.0 + dt * np.linalg.norm(b, axis=1))
            self.dmat = self.gb * (dt * self.tame[:, None, None])
        else:  # IMPLICIT: (I - dt grad_b(t_{i+1}, Y))^{-1} - I, Y from the stored step
            y = self.out.values[:, i + 1] - np.einsum("bdm,bm->bd", self.sig, dw)
            gby = field.grad_drift(t + dt, self.hist, y)
            inv = np.linalg.solve(self._eye - dt * gby, np.broadcast_to(
                self._eye, gby.shape).copy())
            self.dmat = inv - self._eye
            self.tame = np.ones(x.shape[0])
        self.amat = self.dmat + self.smat
        self._i = i

    def inverse_factor(self) -> np.ndarray:
        """(I + A)^{-1} to third order: I - A + A^2 - A^3."""
        a = self.amat
        a2 = a @ a
        return self._eye - a + a2 - a @ a2

    def wronskian_increment(self) -> np.ndarray:
        """Per-step increment of log D, shape (B,)."""
        tr_d = np.einsum("bii->b", self.dmat)
        tr_s = np.einsum("biji->bj", self.gs)  # (B, m): trace of grad_sigma^j
        lin = np.einsum("bj,bj->b", tr_s, self.dw)
        # realized-QV weighting of the Ito correction keeps det J - D at O(dt)
        trmat = np.einsum("bijl,blki->bjk", self.gs, self.gs)
        qv = np.einsum("bjk,bj,bk->b", trmat, self.dw, self.dw)
        return tr_d + lin - 0.5 * qv


# ---------------------------------------------------------------------------
# Jacobian bundle
# ---------------------------------------------------------------------------


@dataclass
class JacobianBundle:
    """The flow derivative J, its inverse process K, and the Wronskian D,
    computed on the same noise as the base path."""

    grid: TimeGrid
    J: np.ndarray  # (N+1, d, d)
    K: np.ndarray  # (N+1, d, d)
    D: np.ndarray  # (N+1,)
    base: StatePath

    @property
    def d(self) -> int:
        return self.J.shape[1]

    def inverse_defect(self) -> float:
        """max_i || K_i J_i - I ||_F, the discrete shadow of K J = I."""
        eye = np.eye(self.d)
        return float(
            np.max(np.linalg.norm(self.K @ self.J - eye, axis=(1, 2)))
        )

    def wronskian_defect(self) -> float:
        """max_i |det J_i - D_i| / |D_i|."""
        det = np.linalg.det(self.J)
        return float(np.max(np.abs(det - self.D) / np.abs(self.D)))

    def flow_between(self, s_idx: int, t_idx: int) -> np.ndarray:
        """J_s(t) = J(t) K(s), the flow derivative from s to t."""
        return self.J[t_idx] @ self.K[s_idx]


def _jacobian_arrays(field, out: SimBatch, scheme):
    """Batched J, K (B, N+1, d, d) and D (B, N+1) along solved paths."""
    B = out.values.shape[0]
    N = out.grid.N
    d = field.d
    eye = np.eye(d)
    J = np.empty((B, N + 1, d, d))
    K = np.empty((B, N + 1, d, d))
    logD = np.empty((B, N + 1))
    J[:, 0] = eye
    K[:, 0] = eye
    logD[:, 0] = 0.0
    vf = VariationalFactors(field, out, scheme)
    for i in range(N):
        vf.load(i)
        J[:, i + 1] = J[:, i] + vf.amat @ J[:, i]
        K[:, i + 1] = K[:, i] @ vf.inverse_factor()
        logD[:, i + 1] = logD[:, i] + vf.wronskian_increment()
    return J, K, np.exp(logD)


def jacobian(
    spec: ModelSpec,
    grid: TimeGrid,
    w: NoisePath,
    scheme: SchemeChoice = SchemeChoice(EULER),
    theta: Optional[np.ndarray] = None,
) -> JacobianBundle:
    """Solve the base SDE and its first-variation system on one noise path."""
    theta = spec.theta0 if theta is None else np.asarray(theta, dtype=float)
    out = simulate_batch(spec.field, grid, w.increments[None], theta, scheme)
    if out.diverged[0]:
        raise DivergenceError(out.first_bad[0])
    J, K, D = _jacobian_arrays(spec.field, out, scheme)
    if not np.all(np.isfinite(D[0])) or np.any(D[0] <= 0.0):
        raise DegenerateWronskianError("Wronskian non-positive along the path")
    return JacobianBundle(
        grid, J[0], K[0], D[0], StatePath(grid, spec.d, out.values[0])
    )


def gateaux_direction(
    spec: ModelSpec,
    grid: TimeGrid,
    w: NoisePath,
    scheme: SchemeChoice,
    h: np.ndarray,
    theta: Optional[np.ndarray] = None,
) -> StatePath:
    """The parametric Gateaux direction F(t)[h]: the linear SDE with initial
    value h driven along the base path; equals J(t) h up to rounding."""
    h = np.asarray(h, dtype=float).reshape(spec.d)
    theta = spec.theta0 if theta is None else np.asarray(theta, dtype=float)
    out = simulate_batch(spec.field, grid, w.increments[None], theta, scheme)
    if out.diverged[0]:
        raise DivergenceError(out.first_bad[0])
    vf = VariationalFactors(spec.field, out, scheme)
    f = np.empty((grid.N + 1, spec.d))
    f[0] = h
    cur = np.broadcast_to(h, (1, spec.d)).copy()
    for i in range(grid.N):
        vf.load(i)
        cur = cur + np.einsum("bij,bj->bi", vf.amat, cur)
        f[i + 1] = cur[0]
    if not np.all(np.isfinite(f)):
        raise DivergenceError(int(np.argmax(~np.all(np.isfinite(f), axis=1))))
    return StatePath(grid, spec.d, f)


def finite_difference_jacobian(
    spec: ModelSpec,
    grid: TimeGrid,
    w: NoisePath,
    scheme: SchemeChoice,
    eps: float,
    theta: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Central-difference flow derivative (X_{x+eps e_k} - X_{x-eps e_k}) / 2 eps
    per basis direction on common noise; shape (N+1, d, d)."""
    if not (eps > 0):
        raise InvalidParameterError("eps must be > 0")
    theta = spec.theta0 if theta is None else np.asarray(theta, dtype=float)
    d = spec.d
    fd = np.empty((grid.N + 1, d, d))
    for k in range(d):
        bump = np.zeros(d)
        bump[k] = eps
        up = simulate_batch(spec.field, grid, w.increments[None], theta + bump, scheme)
        dn = simulate_batch(spec.field, grid, w.increments[None], theta - bump, scheme)
        if up.diverged[0] or dn.diverged[0]:
            raise DivergenceError(min(up.first_bad[0], dn.first_bad[0]))
        fd[:, :, k] = (up.values[0] - dn.values[0]) / (2.0 * eps)
    return fd


# ---------------------------------------------------------------------------
# General linear SDE with explicit d = 1 cross-check
# ---------------------------------------------------------------------------


@dataclass
class LinearSDECoeffs:
    """Coefficients of dX = (B X + b) dt + sum_j (Sigma^j X + sigma^j) dW^j.

    Callbacks take (t, hist) and return, per path batch:
        B -> (B?, d, d); Sigma -> (B?, d, m, d); b -> (B?, d); sigma -> (B?, d, m)
    Leading batch axes optional (deterministic coefficients may return
    unbatched arrays, which broadcast).
    """

    d: int
    m: int
    B: callable
    Sigma: callable
    b: callable
    sigma: callable


@dataclass
class LinearSolveResult:
    numeric: StatePath
    explicit: Optional[StatePath]  # fundamental-matrix solution, d = 1 only


def probe_linear_quadratic_bound(
    coeffs: LinearSDECoeffs,
    bound: float,
    n_probes: int = 500,
    seed: int = 0,
    horizon: float = 1.0,
    scale: float = 3.0,
):
    """Statistically probe x^T B(t) x <= bound |x|^2 for the linear system.

    Returns (max_quotient, ok); a violated bound is reported, not raised.
    """
    from .core import make_grid, sample_noise, _path_generator

    gen = _path_generator(seed, 0)
    grid = make_grid(horizon, 64)
    hist = History.from_path(sample_noise(grid, coeffs.m, seed, 0))
    worst = -np.inf
    for _ in range(n_probes):
        t = grid.left_times[int(gen.integers(0, grid.N))]
        z = gen.uniform(-scale, scale, size=coeffs.d)
        n2 = float(z @ z)
        if n2 == 0.0:
            continue
        bmat = np.asarray(coeffs.B(t, hist), dtype=float).reshape(-1, coeffs.d, coeffs.d)[0]
        worst = max(worst, float(z @ bmat @ z) / n2)
    return worst, worst <= bound + 1e-9 * max(1.0, abs(bound))


def linear_sde_solve(
    coeffs: LinearSDECoeffs,
    grid: TimeGrid,
    w: NoisePath,
    theta: np.ndarray,
    scheme: SchemeChoice = SchemeChoice(EULER),
) -> LinearSolveResult:
    """Numerically integrate the inhomogeneous linear SDE; for d = 1 also
    evaluate the fundamental-matrix (exponential) solution as a cross-check.

    The exponential formula solves the matrix equation only when the
    coefficient matrices commute, so it is evaluated for d = 1 alone.
    """
    theta = np.asarray(theta, dtype=float).reshape(coeffs.d)
    hist = History.from_path(w)
    d, m = coeffs.d, coeffs.m
    dt = grid.dt
    N = grid.N
    vals = np.empty((N + 1, d))
    vals[0] = theta
    x = theta.copy()
    for i in range(N):
        t = i * dt
        Bm = np.asarray(coeffs.B(t, hist), dtype=float).reshape(-1, d, d)[0]
        Sm = np.asarray(coeffs.Sigma(t, hist), dtype=float).reshape(-1, d, m, d)[0]
        bv = np.asarray(coeffs.b(t, hist), dtype=float).reshape(-1, d)[0]
        sv = np.asarray(coeffs.sigma(t, hist), dtype=float).reshape(-1, d, m)[0]
        dw = w.increments[i]
        drift = Bm @ x + bv
        if scheme.kind == TAMED:
            drift = drift / (1.0 + dt * np.linalg.norm(drift))
        noise = np.einsum("imj,j,m->i", Sm, x, dw) + sv @ dw
        x = x + drift * dt + noise
        vals[i + 1] = x
        if not np.all(np.isfinite(x)):
            raise DivergenceError(i + 1)
    numeric = StatePath(grid, d, vals)

    explicit = None
    if d == 1:
        t_axis = np.arange(N)
        Bs = np.array([float(np.asarray(coeffs.B(i * dt, hist)).reshape(-1)[0]) for i in t_axis])
        Ss = np.array([float(np.asarray(coeffs.Sigma(i * dt, hist)).reshape(-1)[0]) for i in t_axis])
        bs = np.array([float(np.asarray(coeffs.b(i * dt, hist)).reshape(-1)[0]) for i in t_axis])
        ss = np.array([float(np.asarray(coeffs.sigma(i * dt, hist)).reshape(-1)[0]) for i in t_axis])
        dwf = w.increments[:, 0]
        log_psi = np.zeros(N + 1)
        np.cumsum((Bs - 0.5 * Ss**2) * dt + Ss * dwf, out=log_psi[1:])
        psi = np.exp(log_psi)
        integ = np.zeros(N + 1)
        np.cumsum(
            (bs - Ss * ss) / psi[:-1] * dt + ss / psi[:-1] * dwf, out=integ[1:]
        )
        explicit = StatePath(grid, 1, (psi * (theta[0] + integ))[:, None])

    return LinearSolveResult(numeric, explicit)
