"""Loss derivatives vs finite differences, and the corrector's gradient identity."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctgbp.robust import LossFunction, loss_eval, triggs_correct


class TestLossEval:
    def test_trivial(self):
        assert loss_eval(LossFunction.trivial(), 2.5) == (2.5, 1.0, 0.0)

    def test_huber_inlier_region(self):
        loss = LossFunction.huber(2.0)
        for s in (0.0, 1.0, 3.9999):
            assert loss_eval(loss, s) == (s, 1.0, 0.0)

    def test_invariants_at_zero(self):
        for loss in (LossFunction.trivial(), LossFunction.huber(1.3), LossFunction.cauchy(0.7)):
            rho, d1, d2 = loss_eval(loss, 0.0)
            assert rho == 0.0
            assert d1 == 1.0
            assert d2 <= 0.0

    @pytest.mark.parametrize("loss", [LossFunction.huber(1.5), LossFunction.cauchy(0.8)])
    def test_derivatives_match_finite_differences(self, loss):
        rng = np.random.default_rng(0)
        h = 1e-6
        for s in rng.uniform(h, 10.0, 300):
            if abs(s - loss.param ** 2) < 10 * h:
                continue  # huber switch point is only C1 in s
            rho_p, d1_p, _ = loss_eval(loss, s + h)
            rho_m, d1_m, _ = loss_eval(loss, s - h)
            _, d1, d2 = loss_eval(loss, s)
            assert d1 == pytest.approx((rho_p - rho_m) / (2 * h), abs=1e-7)
            assert d2 == pytest.approx((d1_p - d1_m) / (2 * h), abs=1e-7)

    @given(st.floats(1e-6, 1e3))
    def test_monotone_and_concave(self, s):
        for loss in (LossFunction.huber(1.0), LossFunction.cauchy(1.0)):
            _, d1, d2 = loss_eval(loss, s)
            assert d1 > 0.0
            assert d2 <= 0.0

    def test_parse(self):
        assert LossFunction.parse("trivial").kind == "trivial"
        assert LossFunction.parse("huber:2.5") == LossFunction.huber(2.5)
        assert LossFunction.parse("cauchy:0.3") == LossFunction.cauchy(0.3)
        with pytest.raises(ValueError):
            LossFunction.parse("tukey:1.0")


def robust_energy(r_fn, theta, loss):
    r = r_fn(theta)
    return 0.5 * loss_eval(loss, float(r @ r))[0]


class TestTriggsCorrect:
    def test_trivial_loss_is_identity(self):
        rng = np.random.default_rng(1)
        r = rng.standard_normal(4)
        J = rng.standard_normal((4, 3))
        rc, Jc = triggs_correct(r, J, LossFunction.trivial())
        np.testing.assert_allclose(rc, r)
        np.testing.assert_allclose(Jc, J)

    def test_zero_residual(self):
        rng = np.random.default_rng(2)
        J = rng.standard_normal((3, 2))
        loss = LossFunction.cauchy(0.5)
        rc, Jc = triggs_correct(np.zeros(3), J, loss)
        np.testing.assert_allclose(rc, np.zeros(3))
        np.testing.assert_allclose(Jc, J)  # rho'(0) = 1

    def test_huber_inlier_identity(self):
        rng = np.random.default_rng(3)
        loss = LossFunction.huber(10.0)
        r = rng.standard_normal(3) * 0.1
        J = rng.standard_normal((3, 4))
        rc, Jc = triggs_correct(r, J, loss)
        np.testing.assert_allclose(rc, r)
        np.testing.assert_allclose(Jc, J)

    def test_scaling_stays_finite_and_positive(self):
        """1 - alpha must stay strictly positive across the whole input range,
        including Huber's outlier region and Cauchy far beyond its scale."""
        rng = np.random.default_rng(4)
        for loss in (LossFunction.huber(0.5), LossFunction.cauchy(0.5)):
            for scale in (1e-3, 0.5, 1.0, 5.0, 1e3):
                r = rng.standard_normal(4) * scale
                J = rng.standard_normal((4, 3))
                rc, Jc = triggs_correct(r, J, loss)
                assert np.all(np.isfinite(rc)) and np.all(np.isfinite(Jc))
                s = float(r @ r)
                _, d1, _ = loss_eval(loss, s)
                # corrected residual norm = sqrt(rho')/(1-alpha) * ||r|| > 0
                assert np.linalg.norm(rc) > 0.0
                assert np.linalg.norm(rc) < 1e6 * np.sqrt(d1) * np.linalg.norm(r) + 1e-12

    @pytest.mark.parametrize("loss", [LossFunction.huber(1.2), LossFunction.cauchy(0.9)])
    def test_gradient_identity(self, loss):
        """J'^T r' must equal half the gradient of rho(||r(theta)||^2), checked
        against central finite differences on random affine residual models."""
        rng = np.random.default_rng(5)
        h = 1e-6
        for _ in range(200):
            m, n = rng.integers(2, 6), rng.integers(1, 5)
            A = rng.standard_normal((m, n))
            b = rng.standard_normal(m)
            theta = rng.standard_normal(n)

            def r_fn(th):
                return A @ th + b

            rc, Jc = triggs_correct(r_fn(theta), A, loss)
            grad = Jc.T @ rc
            grad_num = np.zeros(n)
            for j in range(n):
                e = np.zeros(n)
                e[j] = h
                grad_num[j] = (robust_energy(r_fn, theta + e, loss)
                               - robust_energy(r_fn, theta - e, loss)) / (2 * h)
            np.testing.assert_allclose(grad, grad_num, rtol=1e-5, atol=1e-6)

    def test_gauss_newton_model_psd(self):
        rng = np.random.default_rng(6)
        for loss in (LossFunction.huber(1.0), LossFunction.cauchy(1.0)):
            for _ in range(100):
                r = rng.standard_normal(5) * rng.uniform(0.1, 4.0)
                J = rng.standard_normal((5, 3))
                _, Jc = triggs_correct(r, J, loss)
                eigs = np.linalg.eigvalsh(Jc.T @ Jc)
                assert eigs.min() >= -1e-12
