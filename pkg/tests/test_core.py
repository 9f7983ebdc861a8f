import math

import numpy as np
import pytest

from monosde import (
    CameronMartinPath,
    DimensionMismatchError,
    History,
    InvalidParameterError,
    MCEstimate,
    coarsen_noise,
    make_grid,
    mc_estimate,
    sample_noise,
    shift_noise,
)
from monosde.core import chunk_ranges, run_chunks, sample_increments


def test_make_grid_nodes():
    g = make_grid(1.0, 4)
    assert np.allclose(g.nodes, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert np.allclose(np.diff(g.nodes), g.dt, atol=1e-15)


def test_make_grid_minimal():
    g = make_grid(1.0, 1)
    assert np.allclose(g.nodes, [0.0, 1.0])


def test_make_grid_fine():
    g = make_grid(2.0, 1000)
    assert g.dt == pytest.approx(0.002)
    assert g.nodes[500] == pytest.approx(1.0)
    assert abs(g.nodes[-1] - g.T) < 1e-12


@pytest.mark.parametrize("T,N", [(0.0, 4), (-1.0, 4), (1.0, 0)])
def test_make_grid_invalid(T, N):
    with pytest.raises(InvalidParameterError):
        make_grid(T, N)


def test_sample_noise_deterministic():
    g = make_grid(1.0, 32)
    a = sample_noise(g, 2, seed=7, path_index=3)
    b = sample_noise(g, 2, seed=7, path_index=3)
    assert np.array_equal(a.increments, b.increments)
    c = sample_noise(g, 2, seed=7, path_index=4)
    assert not np.array_equal(a.increments, c.increments)


def test_sample_noise_marginals():
    # first-increment mean within 4 sqrt(dt/n) and variance within 5% of dt
    g = make_grid(0.5, 2)
    inc = sample_increments(g, 1, seed=11, start=0, count=100_000)[:, 0, 0]
    n = len(inc)
    assert abs(inc.mean()) <= 4.0 * math.sqrt(g.dt / n)
    assert abs(inc.var(ddof=1) - g.dt) <= 0.05 * g.dt


def test_sample_noise_sum_is_brownian_at_T():
    g = make_grid(2.0, 16)
    inc = sample_increments(g, 1, seed=12, start=0, count=10_000)
    w_T = inc.sum(axis=(1, 2))
    n = len(w_T)
    assert abs(w_T.mean()) <= 4.0 * math.sqrt(g.T / n)
    assert abs(w_T.var(ddof=1) - g.T) <= 4.0 * g.T * math.sqrt(2.0 / (n - 1))


def test_shift_noise_identity():
    g = make_grid(1.0, 16)
    w = sample_noise(g, 1, seed=1)
    h = CameronMartinPath.constant(g, 1.5)
    assert np.array_equal(shift_noise(w, h, 0.0).increments, w.increments)


def test_shift_noise_inverse():
    g = make_grid(1.0, 16)
    w = sample_noise(g, 1, seed=1)
    h = CameronMartinPath.constant(g, 1.5)
    back = shift_noise(shift_noise(w, h, 0.7), h, -0.7)
    assert np.max(np.abs(back.increments - w.increments)) < 1e-15


def test_shift_noise_arithmetic():
    g = make_grid(1.6, 16)  # dt = 0.1
    w = sample_noise(g, 1, seed=2)
    h = CameronMartinPath.constant(g, 1.0)
    shifted = shift_noise(w, h, 2.0)
    assert np.allclose(shifted.increments - w.increments, 0.2)


def test_shift_noise_additive_in_eps():
    g = make_grid(1.0, 16)
    w = sample_noise(g, 1, seed=3)
    h = CameronMartinPath.constant(g, 0.8)
    once = shift_noise(w, h, 0.3 + 0.4)
    twice = shift_noise(shift_noise(w, h, 0.3), h, 0.4)
    assert np.max(np.abs(once.increments - twice.increments)) < 1e-15


def test_shift_noise_dimension_mismatch():
    w = sample_noise(make_grid(1.0, 16), 1, seed=1)
    h = CameronMartinPath.constant(make_grid(1.0, 8), 1.0)
    with pytest.raises(DimensionMismatchError):
        shift_noise(w, h, 1.0)


def test_cameron_martin_path_runs_from_zero():
    g = make_grid(1.0, 10)
    h = CameronMartinPath.constant(g, 2.0)
    path = h.path()
    assert path[0, 0] == 0.0
    assert path[-1, 0] == pytest.approx(2.0)
    assert h.norm_sq() == pytest.approx(4.0)


def test_coarsen_noise_sums_increments():
    g = make_grid(1.0, 16)
    w = sample_noise(g, 1, seed=5)
    c = coarsen_noise(w, 4)
    assert c.grid.N == 4
    assert np.allclose(c.increments[0], w.increments[:4].sum(axis=0))
    with pytest.raises(InvalidParameterError):
        coarsen_noise(w, 5)


def test_mc_estimate_basic():
    est = mc_estimate(np.array([1.0, 2.0, 3.0, 4.0]))
    assert est.mean[0] == pytest.approx(2.5)
    assert est.ci95_halfwidth[0] == pytest.approx(1.96 * est.stderr[0])
    with pytest.raises(InvalidParameterError):
        mc_estimate(np.array([1.0]))
    with pytest.raises(InvalidParameterError):
        MCEstimate(np.array([1.0]), np.array([-1.0]), 10)


def test_history_cum_ito():
    g = make_grid(1.0, 8)
    w = sample_noise(g, 1, seed=6)
    hist = History.from_path(w)
    gvals = np.arange(8, dtype=float)
    s = hist.cum_ito("k", gvals)
    manual = np.concatenate([[0.0], np.cumsum(gvals * w.increments[:, 0])])
    assert np.allclose(s[0], manual, atol=1e-15)
    assert s is hist.cum_ito("k", gvals)  # cached


def test_run_chunks_worker_independent():
    def work(start, count):
        return np.arange(start, start + count, dtype=float) ** 2

    a = np.concatenate(run_chunks(work, 5000, workers=1, chunk=256))
    b = np.concatenate(run_chunks(work, 5000, workers=4, chunk=256))
    assert np.array_equal(a, b)
    assert chunk_ranges(5000, 256)[-1] == (4864, 136)
