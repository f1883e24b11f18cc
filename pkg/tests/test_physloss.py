import numpy as np
import pytest

from vesseltwin import physloss as L
from vesseltwin.hemo1d import HEALTHY, LESION, Geometry1D, HemoConstants, Segment

C = HemoConstants()


def geom(n=100, area=None, lesion=None):
    a = np.full(n, 0.07) if area is None else np.asarray(area, float)
    segs = [Segment(0, n, HEALTHY)]
    if lesion:
        lo, hi = lesion
        segs = [Segment(0, lo, HEALTHY), Segment(lo, hi, LESION), Segment(hi, n, HEALTHY)]
    return Geometry1D(a, 3.0 / (n - 1), segs)


def narrowed(n=100):
    x = np.linspace(0, 1, n)
    return geom(n, 0.07 * (1 - 0.6 * np.exp(-((x - 0.5) / 0.08) ** 2)), lesion=(35, 65))


def fd(fun, x, h):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


class TestDerivative:
    def test_exact_on_quadratic(self):
        x = np.linspace(0, 2, 11)
        np.testing.assert_allclose(L.ddx(x**2, 0.2), 2 * x, atol=1e-12)

    def test_adjoint(self):
        rng = np.random.default_rng(0)
        f, g = rng.normal(size=12), rng.normal(size=12)
        assert np.dot(L.ddx(f, 0.3), g) == pytest.approx(np.dot(f, L.ddx_adjoint(g, 0.3)), rel=1e-12)


class TestResidual:
    def test_uniform_printed_sign(self):
        a, q0 = 0.07, 1.2
        r = L.momentum_residual(np.full(30, 5.0), np.full(30, q0), np.full(30, a), 0.1, C, printed_sign=True)
        np.testing.assert_allclose(r, -2 * (C.zeta + 2) * C.mu * np.pi * q0 / (C.rho * a), rtol=1e-12)

    def test_uniform_default_sign(self):
        r = L.momentum_residual(np.full(30, 5.0), np.full(30, 1.2), np.full(30, 0.07), 0.1, C)
        assert np.all(r > 0)

    def test_zero_state(self):
        loss, gp, gq = L.residual_loss(np.zeros(10), np.zeros(10), np.full(10, 0.1), 0.1, C)
        assert loss == 0.0 and not gp.any() and not gq.any()

    def test_poiseuille_profile_is_zero(self):
        q, a = 1.0, 0.07
        x = np.linspace(0, 3, 50)
        p = 1e5 - C.healthy_viscous * q / a**2 * x
        loss, _, _ = L.residual_loss(p, np.full(50, q), np.full(50, a), x[1], C)
        assert loss < 1e-16 * np.max(p) ** 2

    def test_convergence(self):
        a0, c, q = 0.07, 0.3, 1.5
        kappa = C.healthy_viscous / C.rho

        def loss(n):
            x = np.linspace(0, 3, n)
            area = a0 * (1 + c * x)
            p = 1e5 - C.rho * q * q / (2 * area**2) + C.rho * kappa * q / (a0**2 * c * (1 + c * x))
            return L.residual_loss(p, np.full(n, q), area, x[1], C)[0]

        losses = [loss(n) for n in (41, 81, 161)]
        assert losses[0] > losses[1] > losses[2]
        assert losses[1] / losses[2] > 8

    def test_short(self):
        with pytest.raises(ValueError):
            L.residual_loss(np.zeros(2), np.zeros(2), np.ones(2), 0.1)


class TestDropLosses:
    def test_exact_prediction(self):
        g = narrowed()
        q = np.full(100, 1.3)
        a, b = L.drop_coefficients(g, C)
        p = np.full(100, 1e5)
        p[50:] -= a * 1.3 + b * 1.3**2
        assert L.global_drop_loss(p, q, g, L.LossConfig(epsilon=1e-12))[0] < 1e-24

    def test_double_drop(self):
        g = geom()
        q = np.full(100, 1.0)
        a, b = L.drop_coefficients(g, C)
        phys = a + b
        p = np.zeros(100)
        p[:5], p[95:] = 2 * phys, 0.0
        cfg = L.LossConfig(epsilon=1e-12)
        assert L.global_drop_loss(p, q, g, cfg)[0] == pytest.approx(np.log(2) ** 2, rel=1e-9)
        assert np.log(2) ** 2 == pytest.approx(0.4805, abs=1e-4)

    def test_offsets(self):
        assert L.window_offsets(100, 50, 25) == [0, 25, 50]
        assert L.window_offsets(100, 40, 25) == [0, 25, 50, 60]
        assert L.window_offsets(100, 100, 7) == [0]
        with pytest.raises(ValueError):
            L.window_offsets(10, 11, 1)

    def test_full_window_matches_global(self):
        g = narrowed()
        rng = np.random.default_rng(1)
        p = 1e5 - np.cumsum(rng.uniform(0, 50, 100))
        q = rng.uniform(0.8, 1.2, 100)
        cfg = L.LossConfig(window=100, stride=100, averaged_window_edges=True)
        glo = L.global_drop_loss(p, q, g, cfg)
        loc = L.local_drop_loss(p, q, g, cfg)
        assert loc[0] == pytest.approx(glo[0], rel=1e-12)
        np.testing.assert_allclose(loc[1], glo[1], rtol=1e-10, atol=1e-20)
        np.testing.assert_allclose(loc[2], glo[2], rtol=1e-10, atol=1e-20)

    def test_weights_select_residual(self):
        g = narrowed()
        rng = np.random.default_rng(2)
        p, q = 1e5 + rng.normal(size=100), 1 + 0.1 * rng.normal(size=100)
        rep = L.total_loss(p, q, g, L.LossConfig(weights=(1.0, 0.0, 0.0)))
        res = L.residual_loss(p, q, g.area, g.dx, C)
        assert rep.total == res[0]
        np.testing.assert_array_equal(rep.grad_p, res[1])

    def test_negative_denominator(self):
        with pytest.raises(ValueError):
            L.global_drop_loss(np.zeros(100), np.full(100, 1.0), geom(), L.LossConfig(epsilon=-1e9))

    @pytest.mark.parametrize("kw", [dict(k_end=0), dict(k_end=51), dict(window=1), dict(window=101),
                                    dict(stride=0), dict(stride=60), dict(epsilon=0.0)])
    def test_config_bounds(self, kw):
        with pytest.raises(ValueError):
            L.LossConfig(**kw).check(100)


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("edges", [False, True])
@pytest.mark.parametrize("printed", [False, True])
def test_gradients(seed, edges, printed):
    n = 40
    x = np.linspace(0, 1, n)
    g = Geometry1D(0.07 * (1 - 0.5 * np.exp(-((x - 0.5) / 0.1) ** 2)), 3.0 / (n - 1),
                   [Segment(0, 15, HEALTHY), Segment(15, 25, LESION), Segment(25, n, HEALTHY)])
    rng = np.random.default_rng(seed)
    p = 1.3e5 - 2e3 * x + rng.normal(0, 50, n)
    q = 1.5 + 0.2 * rng.normal(size=n)
    cfg = L.LossConfig(k_end=3, window=12, stride=5, averaged_window_edges=edges, printed_friction_sign=printed)
    rep = L.total_loss(p, q, g, cfg)
    gp = fd(lambda v: L.total_loss(v, q, g, cfg).total, p, 1e-2)
    gq = fd(lambda v: L.total_loss(p, v, g, cfg).total, q, 1e-6)
    for got, want in ((rep.grad_p, gp), (rep.grad_q, gq)):
        assert np.max(np.abs(got - want)) <= 1e-4 * max(np.max(np.abs(want)), 1e-12)
