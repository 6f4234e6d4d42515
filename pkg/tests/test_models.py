import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pmle_lab import models as md
from pmle_lab.errors import InvalidInput, LinkOverflow
from pmle_lab.numerics import inv_sqrtm_pd

FAMS = md.FAMILIES


def make_spec(family, n=40, p=3, seed=0, sigma=0.7):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    th = 0.4 * rng.standard_normal(p)
    return md.ModelSpec(family, x, th, sigma)


def central_grad(f, th, h=1e-5):
    out = np.empty_like(th)
    for i in range(th.size):
        e = np.zeros_like(th)
        e[i] = h * (1 + abs(th[i]))
        out[i] = (f(th + e) - f(th - e)) / (2 * e[i])
    return out


class TestSpec:
    def test_validation(self):
        x = np.ones((3, 2))
        with pytest.raises(InvalidInput):
            md.ModelSpec("probit", np.eye(2), [0, 0])
        with pytest.raises(InvalidInput):
            md.ModelSpec("logistic", np.eye(2)[:1], [0, 0])
        with pytest.raises(InvalidInput):
            md.ModelSpec("logistic", x, [0, 0])  # rank one
        with pytest.raises(InvalidInput):
            md.ModelSpec("logistic", np.eye(2), [0, 0, 0])

    def test_immutable(self):
        s = make_spec("logistic")
        with pytest.raises(ValueError):
            s.design[0, 0] = 1.0

    def test_dict_round_trip(self):
        s = make_spec("poisson")
        t = md.ModelSpec.from_dict(s.to_dict())
        np.testing.assert_array_equal(t.design, s.design)
        np.testing.assert_array_equal(t.theta_star, s.theta_star)
        with pytest.raises(InvalidInput):
            md.ModelSpec.from_dict(dict(s.to_dict(), extra=1))


class TestSimulate:
    def test_zero_noise(self):
        s = make_spec("gaussian-linear", sigma=0.0)
        np.testing.assert_array_equal(md.simulate(s, 3).responses, s.design @ s.theta_star)

    def test_logistic_lln(self):
        n = 100_000
        s = md.ModelSpec("logistic", np.ones((n, 1)), [0.0])
        assert abs(md.simulate(s, 11).responses.mean() - 0.5) <= 0.01

    @pytest.mark.parametrize("family", FAMS)
    def test_deterministic(self, family):
        s = make_spec(family)
        a, b = md.simulate(s, 99), md.simulate(s, 99)
        assert a.responses.tobytes() == b.responses.tobytes()

    def test_support(self):
        s = make_spec("logistic")
        with pytest.raises(InvalidInput):
            md.Dataset(np.full(s.n, 0.5), None, s)
        sp = make_spec("poisson")
        with pytest.raises(InvalidInput):
            md.Dataset(np.full(sp.n, -1.0), None, sp)

    def test_csv_round_trip(self):
        s = make_spec("gaussian-nonlinear")
        d = md.simulate(s, 5)
        back = md.Dataset.from_csv(d.to_csv(), s)
        np.testing.assert_array_equal(back.responses, d.responses)

    def test_poisson_overflow(self):
        s = md.ModelSpec("poisson", np.eye(2), [40.0, 0.0])
        with pytest.raises(LinkOverflow):
            md.simulate(s, 0)


class TestDerivatives:
    """Gradients and Hessians against central differences."""

    @pytest.mark.parametrize("family", FAMS)
    def test_finite_differences(self, family):
        s = make_spec(family)
        data = md.simulate(s, 1)
        rng = np.random.default_rng(2)
        for _ in range(50):
            th = s.theta_star + 0.3 * rng.standard_normal(s.p)
            g = md.grad(s, data, th)
            fd = central_grad(lambda t: md.loglik(s, data, t), th)
            assert np.all(np.abs(g - fd) <= 1e-6 * (1 + np.abs(g)))
            h = md.hessian(s, data, th)
            fdh = np.array([central_grad(lambda t: md.grad(s, data, t)[i], th) for i in range(s.p)])
            np.testing.assert_allclose(h, fdh, rtol=1e-6, atol=1e-6 * (1 + np.abs(h).max()))

    @pytest.mark.parametrize("family", FAMS)
    def test_expected_hessian_fd(self, family):
        s = make_spec(family)
        th = s.theta_star + 0.2
        h = md.expected_hessian(s, th)
        fdh = np.array([central_grad(lambda t: md.expected_grad(s, t)[i], th) for i in range(s.p)])
        np.testing.assert_allclose(h, fdh, rtol=1e-6, atol=1e-6 * (1 + np.abs(h).max()))
        g = md.expected_grad(s, th)
        np.testing.assert_allclose(g, central_grad(lambda t: md.expected_loglik(s, t), th), rtol=1e-6, atol=1e-6)

    @pytest.mark.parametrize("family", FAMS)
    def test_score_identity(self, family):
        s = make_spec(family)
        np.testing.assert_allclose(md.expected_grad(s, s.theta_star), 0.0, atol=1e-10)

    def test_gaussian_linear_closed_form(self):
        s = make_spec("gaussian-linear", sigma=2.0)
        d = md.simulate(s, 4)
        th = np.array([0.1, -0.2, 0.3])
        r = d.responses - s.design @ th
        assert md.loglik(s, d, th) == pytest.approx(-r @ r / 8.0)
        np.testing.assert_allclose(md.grad(s, d, th), s.design.T @ r / 4.0)
        e = s.design @ (th - s.theta_star)
        assert md.expected_loglik(s, th) == pytest.approx(-e @ e / 8.0 - s.n / 2.0)

    def test_logistic_at_zero(self):
        s = make_spec("logistic")
        d = md.simulate(s, 0)
        assert md.loglik(s, d, np.zeros(s.p)) == pytest.approx(-s.n * math.log(2))

    def test_logistic_extreme_is_finite(self):
        s = md.ModelSpec("logistic", np.eye(2), [0.0, 0.0])
        d = md.Dataset([1.0, 0.0], None, s)
        assert np.isfinite(md.loglik(s, d, np.array([-800.0, 800.0])))

    @given(st.floats(-3, 3), st.floats(-3, 3))
    def test_batched_terms_match(self, a, b):
        s = make_spec("gaussian-nonlinear", n=10, p=2)
        d = md.simulate(s, 0)
        thetas = np.array([[a, b], [b, a]])
        batch = md.point_terms(s, d.responses[:, None], s.design @ thetas.T)
        for k in range(2):
            one = md.point_terms(s, d.responses, s.design @ thetas[k])
            np.testing.assert_allclose(batch.d2[:, k], one.d2)


class TestInfoMatrices:
    def test_gaussian_linear(self):
        s = make_spec("gaussian-linear", sigma=1.5)
        info = md.info_matrices(s, s.theta_star)
        xtx = s.design.T @ s.design / 2.25
        np.testing.assert_allclose(info.d0_sq, xtx, rtol=1e-12)
        np.testing.assert_allclose(info.v0_sq, info.d0_sq, rtol=1e-12)
        assert info.omega == 0.0

    def test_logistic(self):
        s = make_spec("logistic")
        info = md.info_matrices(s, s.theta_star)
        m = 1 / (1 + np.exp(-s.design @ s.theta_star))
        np.testing.assert_allclose(info.d0_sq, (s.design.T * m * (1 - m)) @ s.design, rtol=1e-12)
        np.testing.assert_allclose(info.v0_sq, info.d0_sq, rtol=1e-12)
        assert info.omega == 0.0 and info.nu0 >= 1.0

    def test_poisson_flags(self):
        info = md.info_matrices(make_spec("poisson"), make_spec("poisson").theta_star)
        assert info.nu0 is None and info.g is None

    def test_nonlinear_omega_scaling(self):
        s = make_spec("gaussian-nonlinear", n=20)
        base = md.info_matrices(s, s.theta_star).omega
        assert base > 0
        for k in (2, 4, 16):
            sk = md.ModelSpec(s.family, np.tile(s.design, (k, 1)), s.theta_star, s.noise_sigma)
            assert md.info_matrices(sk, s.theta_star).omega * math.sqrt(k * 20) == pytest.approx(
                base * math.sqrt(20), rel=1e-10)

    def test_nonlinear_hessian_variance(self):
        """Sampled variance of the normalized stochastic Hessian stays below omega^2."""
        s = make_spec("gaussian-nonlinear", n=60, p=2, sigma=0.5)
        info = md.info_matrices(s, s.theta_star)
        vinv = inv_sqrtm_pd(info.v2_bound)
        eh = md.expected_hessian(s, s.theta_star)
        rng = np.random.default_rng(3)
        gam = rng.standard_normal((8, 2))
        gam /= np.linalg.norm(gam, axis=1, keepdims=True)
        vals = []
        for i in range(3000):
            d = md.simulate(s, i)
            m = vinv @ (md.hessian(s, d, s.theta_star) - eh) @ vinv
            vals.append(np.einsum("ki,ij,kj->k", gam, m, gam))
        var = np.var(np.array(vals), axis=0)
        assert np.all(var <= info.omega**2 * 1.1)
        assert var.max() > 0
