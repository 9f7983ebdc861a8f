import numpy as np
import pytest

from monosde import (
    History,
    InvalidParameterError,
    LinearSDECoeffs,
    finite_difference_jacobian,
    gateaux_direction,
    jacobian,
    linear_sde_solve,
    make_grid,
    sample_noise,
    zoo_lookup,
)
from monosde.solver import EULER, TAMED, SchemeChoice


def test_gbm_jacobian_is_scaled_state():
    x0 = 1.3
    spec = zoo_lookup("gbm", {"mu": 0.05, "sigma": 0.2, "x0": x0})
    g = make_grid(1.0, 1024)
    w = sample_noise(g, 1, seed=1)
    bun = jacobian(spec, g, w, SchemeChoice(EULER))
    ref = bun.base.values[:, 0] / x0
    assert np.max(np.abs(bun.J[:, 0, 0] - ref) / np.abs(ref)) < 1e-12


def test_ou_bundle_recursions():
    spec = zoo_lookup("ou", {"kappa": 1.0, "sigma": 0.5})
    g = make_grid(1.0, 512)
    w = sample_noise(g, 1, seed=2)
    bun = jacobian(spec, g, w, SchemeChoice(EULER))
    i = np.arange(g.N + 1, dtype=float)
    assert np.max(np.abs(bun.J[:, 0, 0] - (1 - g.dt) ** i)) < 1e-14
    # K matches the inverse recursion up to the O(N dt^4) expansion remainder
    assert np.max(np.abs(bun.K[:, 0, 0] - (1 - g.dt) ** (-i))) < 1e-7
    # Wronskian agrees with J at O(dt) and is positive
    assert np.max(np.abs(bun.D - bun.J[:, 0, 0])) < 2 * g.dt
    assert np.all(bun.D > 0)


def test_gl_inverse_and_wronskian_defects_halve():
    spec = zoo_lookup("ginzburg_landau")
    cs_inv, cs_wro = [], []
    for N in (512, 1024):
        g = make_grid(1.0, N)
        inv_d, wro_d = [], []
        for p in range(4):
            w = sample_noise(g, 1, seed=3, path_index=p)
            bun = jacobian(spec, g, w, SchemeChoice(TAMED))
            inv_d.append(bun.inverse_defect())
            wro_d.append(bun.wronskian_defect())
            assert np.all(bun.D > 0)
        cs_inv.append(np.mean(inv_d) / g.dt)
        cs_wro.append(np.mean(wro_d) / g.dt)
    assert cs_inv[1] <= 2.0 * cs_inv[0]
    assert cs_wro[1] <= 2.0 * cs_wro[0]


def test_flow_semigroup():
    spec = zoo_lookup("ginzburg_landau")
    g = make_grid(1.0, 256)
    w = sample_noise(g, 1, seed=4)
    bun = jacobian(spec, g, w, SchemeChoice(TAMED))
    assert np.array_equal(bun.flow_between(0, g.N), bun.J[g.N])
    for s in (32, 128, 255):
        assert abs(bun.flow_between(s, s)[0, 0] - 1.0) < 5 * g.dt


def test_gateaux_zero_direction():
    spec = zoo_lookup("ginzburg_landau")
    g = make_grid(1.0, 128)
    w = sample_noise(g, 1, seed=5)
    f = gateaux_direction(spec, g, w, SchemeChoice(TAMED), np.array([0.0]))
    assert np.all(f.values == 0.0)


def test_gateaux_equals_jacobian_action():
    spec = zoo_lookup("ginzburg_landau")
    g = make_grid(1.0, 256)
    w = sample_noise(g, 1, seed=6)
    bun = jacobian(spec, g, w, SchemeChoice(TAMED))
    f = gateaux_direction(spec, g, w, SchemeChoice(TAMED), np.array([0.7]))
    ref = bun.J[:, 0, 0] * 0.7
    assert np.max(np.abs(f.values[:, 0] - ref)) < 1e-12 * np.max(np.abs(ref))


def test_gateaux_linearity():
    spec = zoo_lookup("ginzburg_landau")
    g = make_grid(1.0, 256)
    w = sample_noise(g, 1, seed=7)
    scheme = SchemeChoice(TAMED)
    f1 = gateaux_direction(spec, g, w, scheme, np.array([0.3]))
    f2 = gateaux_direction(spec, g, w, scheme, np.array([-0.4]))
    f12 = gateaux_direction(spec, g, w, scheme, np.array([0.3 - 0.8]))
    combo = f1.values + 2.0 * f2.values
    scale = np.max(np.abs(f12.values)) + 1e-30
    assert np.max(np.abs(f12.values - combo)) / scale < 1e-12


def test_linear_sde_deterministic_forcing():
    coeffs = LinearSDECoeffs(
        d=1,
        m=1,
        B=lambda t, h: np.zeros((1, 1)),
        Sigma=lambda t, h: np.zeros((1, 1, 1)),
        b=lambda t, h: np.array([2.0]),
        sigma=lambda t, h: np.zeros((1, 1)),
    )
    g = make_grid(1.0, 64)
    w = sample_noise(g, 1, seed=8)
    res = linear_sde_solve(coeffs, g, w, np.array([1.0]))
    assert np.allclose(res.numeric.values[:, 0], 1.0 + 2.0 * g.nodes, atol=1e-12)
    assert np.allclose(res.explicit.values[:, 0], 1.0 + 2.0 * g.nodes, atol=1e-12)


def test_linear_sde_pure_brownian():
    coeffs = LinearSDECoeffs(
        d=1,
        m=1,
        B=lambda t, h: np.zeros((1, 1)),
        Sigma=lambda t, h: np.zeros((1, 1, 1)),
        b=lambda t, h: np.zeros(1),
        sigma=lambda t, h: np.ones((1, 1)),
    )
    g = make_grid(1.0, 64)
    w = sample_noise(g, 1, seed=9)
    res = linear_sde_solve(coeffs, g, w, np.array([0.5]))
    ref = 0.5 + w.brownian()[:, 0]
    assert np.allclose(res.numeric.values[:, 0], ref, atol=1e-12)
    assert np.allclose(res.explicit.values[:, 0], ref, atol=1e-12)


def test_linear_sde_gbm_numeric_vs_fundamental_matrix():
    mu, sig = 0.1, 0.3
    coeffs = LinearSDECoeffs(
        d=1,
        m=1,
        B=lambda t, h: np.array([[mu]]),
        Sigma=lambda t, h: np.array([[[sig]]]),
        b=lambda t, h: np.zeros(1),
        sigma=lambda t, h: np.zeros((1, 1)),
    )
    errs = []
    for N in (256, 1024):
        g = make_grid(1.0, N)
        w = sample_noise(g, 1, seed=10)
        res = linear_sde_solve(coeffs, g, w, np.array([1.0]))
        errs.append(
            float(np.max(np.abs(res.numeric.values - res.explicit.values)))
        )
    assert errs[1] < errs[0]  # strong error shrinks under refinement
    assert errs[1] < 5.0 * np.sqrt(1.0 / 1024)


def test_finite_difference_gbm_exact_for_any_eps():
    spec = zoo_lookup("gbm", {"mu": 0.05, "sigma": 0.2})
    g = make_grid(1.0, 256)
    w = sample_noise(g, 1, seed=11)
    bun = jacobian(spec, g, w, SchemeChoice(EULER))
    for eps in (1e-1, 1e-3):
        fd = finite_difference_jacobian(spec, g, w, SchemeChoice(EULER), eps)
        assert np.max(np.abs(fd[:, 0, 0] - bun.J[:, 0, 0])) < 1e-9


def test_finite_difference_ladder_on_gl():
    spec = zoo_lookup("ginzburg_landau")
    g = make_grid(1.0, 256)
    w = sample_noise(g, 1, seed=12)
    bun = jacobian(spec, g, w, SchemeChoice(TAMED))
    errs = [
        np.max(
            np.abs(
                finite_difference_jacobian(spec, g, w, SchemeChoice(TAMED), eps)[:, 0, 0]
                - bun.J[:, 0, 0]
            )
        )
        for eps in (1e-2, 1e-3, 1e-4)
    ]
    assert errs[1] < errs[0]
    assert errs[2] < errs[1]


def test_finite_difference_rejects_zero_eps():
    spec = zoo_lookup("gbm")
    g = make_grid(1.0, 8)
    w = sample_noise(g, 1, seed=13)
    with pytest.raises(InvalidParameterError):
        finite_difference_jacobian(spec, g, w, SchemeChoice(EULER), 0.0)


def test_probe_linear_quadratic_bound():
    from monosde.variational import probe_linear_quadratic_bound

    coeffs = LinearSDECoeffs(
        d=1,
        m=1,
        B=lambda t, h: np.array([[-1.0 + 0.5 * t]]),
        Sigma=lambda t, h: np.zeros((1, 1, 1)),
        b=lambda t, h: np.zeros(1),
        sigma=lambda t, h: np.zeros((1, 1)),
    )
    worst, ok = probe_linear_quadratic_bound(coeffs, bound=0.0, seed=1)
    assert ok and worst <= -0.5
    worst, ok = probe_linear_quadratic_bound(coeffs, bound=-0.9, seed=1)
    assert not ok
