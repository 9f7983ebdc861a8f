"""The Malliavin derivative field D_s X(t), the flow representation
D_s X(t) = J_s(t) A(s, t), directional derivatives D^h X, and the Malliavin
covariance matrix.

The field solves, for each lattice time s and t >= s,

    M_s(t) = sigma(s, X(s)) + int_s^t U(s, r) dr + int_s^t V(s, r) dW(r)
           + int_s^t grad_b(r, X(r)) M_s(r) dr
           + int_s^t grad_sigma(r, X(r)) M_s(r) dW(r),

with M_s(t) = 0 for s > t.  U and V are the model's noise-derivative
processes; deterministic coefficient fields have U = V = 0.  All s-rows share
the base path and step in lockstep, so the field costs O(n_s * N).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import CameronMartinPath, History, NoisePath, StatePath, TimeGrid
from .errors import DivergenceError, InvalidParameterError
from .models import CoefficientField, ModelSpec
from .solver import EULER, SchemeChoice, SimBatch, simulate_batch
from .variational import JacobianBundle, VariationalFactors


def _resolve_s_indices(grid: TimeGrid, s_stride: int, s_indices) -> np.ndarray:
    if s_indices is not None:
        idx = np.asarray(s_indices, dtype=np.int64)
        if idx.ndim != 1 or len(idx) == 0 or np.any(np.diff(idx) <= 0):
            raise InvalidParameterError("s_indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] > grid.N:
            raise InvalidParameterError("s_indices out of range")
        return idx
    if s_stride < 1:
        raise InvalidParameterError("s_stride must be >= 1")
    return np.arange(0, grid.N + 1, s_stride, dtype=np.int64)


@dataclass
class MalliavinField:
    """Lower-triangular array M[j][i] ~ D_{s_j} X(t_i) for s_j <= t_i."""

    grid: TimeGrid
    s_indices: np.ndarray  # (k,)
    entries: np.ndarray  # (k, N+1, d, m); zero where t < s
    base: StatePath

    @property
    def d(self) -> int:
        return self.entries.shape[2]

    @property
    def m(self) -> int:
        return self.entries.shape[3]

    def value(self, s_idx: int, t_idx: int) -> np.ndarray:
        """D_s X(t) at lattice nodes; the zero matrix when s > t."""
        pos = np.searchsorted(self.s_indices, s_idx)
        if pos == len(self.s_indices) or self.s_indices[pos] != s_idx:
            raise InvalidParameterError(f"s index {s_idx} not on the s-lattice")
        if s_idx > t_idx:
            return np.zeros((self.d, self.m))
        return self.entries[pos, t_idx]

    def export_csv(self, path):
        """Rows (s, t, i, j, value) over the computed lattice."""
        dt = self.grid.dt
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["s", "t", "i", "j", "value"])
            for pos, sj in enumerate(self.s_indices):
                for ti in range(sj, self.grid.N + 1):
                    mat = self.entries[pos, ti]
                    for a in range(self.d):
                        for b in range(self.m):
                            wr.writerow(
                                [
                                    f"{sj * dt:.17g}",
                                    f"{ti * dt:.17g}",
                                    a,
                                    b,
                                    f"{mat[a, b]:.17g}",
                                ]
                            )


def _field_batch(
    field: CoefficientField,
    out: SimBatch,
    scheme: SchemeChoice,
    s_idx: np.ndarray,
    t_keep: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Batched Malliavin field along solved paths.

    Returns (B, k, N+1, d, m), or (B, k, len(t_keep), d, m) when t_keep (a
    sorted array of node indices) restricts which t-columns are stored.
    """
    grid = out.grid
    B = out.values.shape[0]
    d, m = field.d, field.m
    k = len(s_idx)
    N = grid.N
    dt = grid.dt
    hist = out.hist
    use_uv = field.mall_drift is not None or field.mall_diffusion is not None
    s_times = s_idx * dt

    col_of = np.full(N + 1, -1, dtype=np.int64)
    if t_keep is None:
        col_of[:] = np.arange(N + 1)
        n_cols = N + 1
    else:
        t_keep = np.asarray(t_keep, dtype=np.int64)
        col_of[t_keep] = np.arange(len(t_keep))
        n_cols = len(t_keep)

    entries = np.zeros((B, k, n_cols, d, m))
    vf = VariationalFactors(field, out, scheme)
    active = 0
    cur = np.zeros((B, k, d, m))
    for i in range(N + 1):
        t = i * dt
        # activate rows whose s equals the current node: M_s(s) = sigma(s, X(s))
        while active < k and s_idx[active] == i:
            cur[:, active] = field.diffusion(t, hist, out.values[:, i])
            active += 1
        if col_of[i] >= 0:
            entries[:, :active, col_of[i]] = cur[:, :active]
        if i == N:
            break
        vf.load(i)
        upd = cur[:, :active] + vf.amat[:, None] @ cur[:, :active]
        if use_uv:
            sv = s_times[:active]
            if field.mall_drift is not None:
                u = np.asarray(field.mall_drift(sv, t, hist), dtype=float)
                upd = upd + np.broadcast_to(u, (B, active, d, m)) * dt
            if field.mall_diffusion is not None:
                # V^{(i,j,k)} dW^j: contract the middle (Brownian) index
                v = np.broadcast_to(
                    np.asarray(field.mall_diffusion(sv, t, hist), dtype=float),
                    (B, active, d, m, m),
                )
                upd = upd + np.einsum("bsijk,bj->bsik", v, vf.dw)
        cur[:, :active] = upd
    return entries


def malliavin_field(
    spec: ModelSpec,
    grid: TimeGrid,
    w: NoisePath,
    scheme: SchemeChoice = SchemeChoice(EULER),
    s_stride: int = 1,
    s_indices: Optional[Sequence[int]] = None,
    theta: Optional[np.ndarray] = None,
) -> MalliavinField:
    """Compute D_s X(t) on the (s_lattice x grid) lattice for one noise path."""
    s_idx = _resolve_s_indices(grid, s_stride, s_indices)
    theta = spec.theta0 if theta is None else np.asarray(theta, dtype=float)
    out = simulate_batch(spec.field, grid, w.increments[None], theta, scheme)
    if out.diverged[0]:
        raise DivergenceError(out.first_bad[0])
    entries = _field_batch(spec.field, out, scheme, s_idx)[0]
    if not np.all(np.isfinite(entries)):
        raise DivergenceError(grid.N)
    return MalliavinField(grid, s_idx, entries, StatePath(grid, spec.d, out.values[0]))


# ---------------------------------------------------------------------------
# Representation parts: D_s X(t) = J_s(t) A(s, t)
# ---------------------------------------------------------------------------


@dataclass
class RepresentationParts:
    """J_s(t) = J(t) K(s) and the forcing part A(s, t) of the representation."""

    bundle: JacobianBundle
    s_indices: np.ndarray
    A: np.ndarray  # (k, N+1, d, m); A(s, t) defined for t >= s

    def predicted(self, s_idx: int, t_idx: int) -> np.ndarray:
        """J_s(t) A(s, t), the representation's value for D_s X(t)."""
        pos = int(np.searchsorted(self.s_indices, s_idx))
        if pos == len(self.s_indices) or self.s_indices[pos] != s_idx:
            raise InvalidParameterError(f"s index {s_idx} not on the s-lattice")
        if s_idx > t_idx:
            return np.zeros_like(self.A[pos, t_idx])
        return self.bundle.flow_between(s_idx, t_idx) @ self.A[pos, t_idx]


def representation_parts(
    spec: ModelSpec,
    bundle: JacobianBundle,
    w: NoisePath,
    scheme: SchemeChoice = SchemeChoice(EULER),
    s_stride: int = 1,
    s_indices: Optional[Sequence[int]] = None,
) -> RepresentationParts:
    """A(s, t) = sigma(s, X(s)) + int_s^t J_s(r)^{-1} (U - <grad_sigma, V>) dr
    + int_s^t J_s(r)^{-1} V dW(r), with J_s(r)^{-1} = J(s) K(r).

    For deterministic coefficients both integrals vanish and
    A(s, t) = sigma(s, X(s)) exactly.
    """
    grid = bundle.grid
    field = spec.field
    s_idx = _resolve_s_indices(grid, s_stride, s_indices)
    hist = History.from_path(w)
    d, m = field.d, field.m
    k = len(s_idx)
    N = grid.N
    dt = grid.dt
    values = bundle.base.values[None]

    A = np.zeros((k, N + 1, d, m))
    use_uv = field.mall_drift is not None or field.mall_diffusion is not None
    s_times = s_idx * dt

    sig_at = {}
    for pos, sj in enumerate(s_idx):
        sig_at[pos] = field.diffusion(sj * dt, hist, values[:, sj])[0]
        A[pos, sj] = sig_at[pos]

    if not use_uv:
        for pos, sj in enumerate(s_idx):
            A[pos, sj:] = sig_at[pos]
        return RepresentationParts(bundle, s_idx, A)

    gs_cache = VariationalFactors(field, SimBatch(grid, values, np.zeros(1, bool),
                                                  np.full(1, N + 1), hist), scheme)
    cur = np.zeros((k, d, m))
    active = 0
    for i in range(N + 1):
        while active < k and s_idx[active] == i:
            cur[active] = sig_at[active]
            active += 1
        if i == N:
            break
        gs_cache.load(i)
        t = i * dt
        sv = s_times[:active]
        u = np.zeros((active, d, m))
        if field.mall_drift is not None:
            u = np.broadcast_to(
                np.asarray(field.mall_drift(sv, t, hist), dtype=float),
                (1, active, d, m),
            )[0]
        vmat = np.zeros((active, d, m, m))
        if field.mall_diffusion is not None:
            vmat = np.broadcast_to(
                np.asarray(field.mall_diffusion(sv, t, hist), dtype=float),
                (1, active, d, m, m),
            )[0]
        # <grad_sigma(r), V(s, r)>^{(i,k)} = sum_{j,l} gs[i,j,l] V[l,j,k]
        gsr = gs_cache.gs[0]  # (d, m, d)
        contr = np.einsum("ijl,sljk->sik", gsr, vmat)
        v_dw = np.einsum("sijk,j->sik", vmat, w.increments[i])
        jinv = np.einsum(
            "sab,sbc->sac",
            np.broadcast_to(bundle.J[s_idx[:active]], (active, d, d)),
            np.broadcast_to(bundle.K[i], (active, d, d)),
        )
        cur[:active] = cur[:active] + jinv @ ((u - contr) * dt + v_dw)
        A[:active, i + 1] = cur[:active]
    # J_s(t) A(s, t) uses A propagated to each t; rows keep their running value
    return RepresentationParts(bundle, s_idx, A)


# ---------------------------------------------------------------------------
# Directional derivative D^h X
# ---------------------------------------------------------------------------


def directional_derivative(
    spec: ModelSpec,
    grid: TimeGrid,
    w: NoisePath,
    scheme: SchemeChoice,
    h: CameronMartinPath,
    theta: Optional[np.ndarray] = None,
) -> StatePath:
    """D^h X = int_0^. M_s(.) hdot(s) ds computed as one linear SDE."""
    theta = spec.theta0 if theta is None else np.asarray(theta, dtype=float)
    out = simulate_batch(spec.field, grid, w.increments[None], theta, scheme)
    if out.diverged[0]:
        raise DivergenceError(out.first_bad[0])
    vals = _directional_batch(spec.field, out, scheme, h)[0]
    if not np.all(np.isfinite(vals)):
        raise DivergenceError(grid.N)
    return StatePath(grid, spec.d, vals)


def _directional_batch(
    field: CoefficientField, out: SimBatch, scheme: SchemeChoice, h: CameronMartinPath
) -> np.ndarray:
    """Batched D^h X along solved paths, shape (B, N+1, d)."""
    grid = out.grid
    if h.grid != grid or h.m != field.m:
        raise InvalidParameterError("direction h lives on a different grid")
    B = out.values.shape[0]
    d, m = field.d, field.m
    N, dt = grid.N, grid.dt
    hist = out.hist
    hd = h.density  # (N, m)
    use_u = field.mall_drift is not None
    use_v = field.mall_diffusion is not None

    vals = np.zeros((B, N + 1, d))
    y = np.zeros((B, d))
    vf = VariationalFactors(field, out, scheme)
    left = grid.left_times
    for i in range(N):
        t = i * dt
        vf.load(i)
        force_dt = np.einsum("bdm,m->bd", vf.sig, hd[i]) * dt
        if use_u and i > 0:
            # int_0^{t_i} U(s, t_i) hdot(s) ds, left-point in s
            u = np.asarray(field.mall_drift(left[:i], t, hist), dtype=float)
            u = np.broadcast_to(u, (B, i, d, m))
            force_dt = force_dt + np.einsum("bsdm,sm->bd", u, hd[:i]) * dt * dt
        force_dw = np.zeros((B, d))
        if use_v and i > 0:
            v = np.asarray(field.mall_diffusion(left[:i], t, hist), dtype=float)
            v = np.broadcast_to(v, (B, i, d, m, m))
            # (int_0^{t_i} V(s, t_i) hdot(s) ds)^{(d, j)} then contract with dW^j
            iv = np.einsum("bsdjk,sk->bdj", v, hd[:i]) * dt
            force_dw = np.einsum("bdj,bj->bd", iv, hist.increments[:, i])
        y = y + np.einsum("bij,bj->bi", vf.amat, y) + force_dt + force_dw
        vals[:, i + 1] = y
    return vals


# ---------------------------------------------------------------------------
# Malliavin covariance matrix
# ---------------------------------------------------------------------------


@dataclass
class MalliavinMatrix:
    t: float
    Q: np.ndarray  # (d, d) symmetric PSD up to tolerance
    min_eigenvalue: float

    @property
    def asymmetry(self) -> float:
        return float(np.max(np.abs(self.Q - self.Q.T)))


def malliavin_matrix(field: MalliavinField, t_index: int) -> MalliavinMatrix:
    """Q(t) = int_0^t D_s X(t) D_s X(t)^T ds by trapezoidal quadrature over the
    s-lattice; near-degeneracy is reported via the minimum eigenvalue."""
    s_idx = field.s_indices[field.s_indices <= t_index]
    if len(s_idx) < 2 or s_idx[-1] != t_index:
        raise InvalidParameterError(
            "t_index must be covered by the s-lattice (including s = t)"
        )
    dt = field.grid.dt
    s_times = s_idx * dt
    mats = field.entries[: len(s_idx), t_index]  # (k, d, m)
    outer = np.einsum("kim,kjm->kij", mats, mats)
    weights = np.zeros(len(s_idx))
    gaps = np.diff(s_times)
    weights[:-1] += 0.5 * gaps
    weights[1:] += 0.5 * gaps
    q = np.einsum("k,kij->ij", weights, outer)
    mineig = float(np.linalg.eigvalsh(q).min())
    return MalliavinMatrix(t_index * dt, q, mineig)
