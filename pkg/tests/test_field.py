import math

import numpy as np
import pytest

from ahlsim.field import (
    CalibrationError,
    DriftField,
    UncalibratedRho0Error,
    calibrate_rho0,
    second_moment_integral,
)
from ahlsim.measure import make_measure_fourier, make_measure_uniform
from ahlsim.particle import SlitParticle

COSINE = make_measure_fourier([(1, 0.5, 0.0)])


class TestHilbertDrift:
    def test_uniform_drift_vanishes(self):
        f = DriftField(make_measure_uniform(), b_mode="quadrature")
        xs = np.linspace(0, 1, 257, endpoint=False)
        assert np.max(np.abs(f.b(xs))) < 1e-12

    def test_cosine_closed_form_value(self):
        exact = DriftField(COSINE, b_mode="fourier_exact")
        quad = DriftField(COSINE, b_mode="quadrature")
        target = 0.5 / (2 * math.pi)
        assert exact.b(0.25) == pytest.approx(target, rel=1e-14)
        assert quad.b(0.25) == pytest.approx(target, rel=1e-10)

    def test_mode_shift(self):
        k, a, phi = 3, 0.4, 0.2
        m = make_measure_fourier(
            [(k, a * math.cos(2 * math.pi * k * phi), a * math.sin(2 * math.pi * k * phi))]
        )
        quad = DriftField(m, b_mode="quadrature")
        xs = np.linspace(0, 1, 512, endpoint=False)
        target = (a / (2 * math.pi)) * np.sin(2 * np.pi * k * (xs - phi))
        assert np.max(np.abs(quad.b(xs) - target)) < 1e-8

    def test_mode_agreement_multimode(self):
        m = make_measure_fourier([(1, 0.3, 0.0), (2, 0.1, 0.05), (3, 0.0, 0.2)])
        quad, exact = DriftField(m, "quadrature"), DriftField(m, "fourier_exact")
        xs = np.linspace(0, 1, 4096, endpoint=False)
        assert np.max(np.abs(quad.b(xs) - exact.b(xs))) < 1e-8

    def test_zero_mean(self):
        m = make_measure_fourier([(1, 0.2, 0.1), (2, 0.15, 0.0)])
        f = DriftField(m, b_mode="quadrature")
        xs = np.linspace(0, 1, 2048, endpoint=False)
        assert abs(np.mean(f.b(xs))) < 1e-9

    def test_oddness_for_even_density(self):
        f = DriftField(COSINE)
        xs = np.linspace(0.01, 0.49, 25)
        assert np.max(np.abs(f.b(-xs) + f.b(xs))) < 1e-10

    def test_derivatives(self):
        exact = DriftField(COSINE, b_mode="fourier_exact")
        quad = DriftField(COSINE, b_mode="quadrature")
        assert exact.b_deriv(0.0) == pytest.approx(0.5, rel=1e-14)
        assert exact.b_deriv(0.5) == pytest.approx(-0.5, rel=1e-14)
        assert quad.b_deriv(0.0) == pytest.approx(0.5, rel=1e-10)
        assert quad.b_deriv(0.1, 2) == pytest.approx(exact.b_deriv(0.1, 2), rel=1e-10)
        uni = DriftField(make_measure_uniform(), b_mode="quadrature")
        assert abs(uni.b_deriv(0.3)) < 1e-12

    def test_sup_b_deriv(self):
        f = DriftField(COSINE)
        assert f.sup_b_deriv(1) == pytest.approx(0.5, rel=1e-6)
        assert f.sup_b_deriv(2) == pytest.approx(math.pi, rel=1e-6)


class TestBetaNu:
    def test_uniform_measure_zero(self):
        f = DriftField(make_measure_uniform())
        p = SlitParticle.from_capacity(1e-3)
        xs = np.array([0.0, 0.2, 0.5, 0.9])
        assert np.max(np.abs(f.beta_nu(p, xs))) < 1e-9

    def test_drift_consistency_bound(self):
        f = DriftField(COSINE)
        sup_h1 = 0.5 * 2 * math.pi
        pts = np.array([0.0, 0.13, 0.25])
        for c in (1e-2, 1e-3, 1e-4):
            p = SlitParticle.from_capacity(c)
            err = np.max(np.abs(f.beta_nu(p, pts) - c * f.b(pts)))
            assert err <= 1.0 * c**1.5 * math.log(1 / c) * (1 + sup_h1)

    def test_beta_over_c_bounded(self):
        f = DriftField(COSINE)
        xs = np.linspace(0, 1, 256, endpoint=False)
        deltas = []
        for c in (1e-2, 1e-3, 1e-4):
            p = SlitParticle.from_capacity(c)
            deltas.append(np.max(np.abs(f.beta_nu(p, xs))) / c)
        # sup|b| = 1/(4 pi) for this measure; the fitted constants hover there
        assert max(deltas) < 0.12
        assert max(deltas) / min(deltas) < 1.5

    def test_beta_over_c_converges_to_b(self):
        f = DriftField(COSINE)
        pts = np.array([0.05, 0.13, 0.25, 0.4, 0.6])
        errs = []
        for c in (1e-2, 1e-3, 1e-4):
            p = SlitParticle.from_capacity(c)
            errs.append(np.max(np.abs(f.beta_nu(p, pts) / c - f.b(pts))))
        assert errs[2] < errs[1] < errs[0]
        assert errs[2] < 5e-3

    def test_beta_table_matches_direct(self):
        f = DriftField(COSINE)
        p = SlitParticle.from_capacity(1e-3)
        spline = f.beta_nu_table(p)
        rng = np.random.default_rng(4)
        xs = rng.uniform(0, 1, 64)
        assert np.max(np.abs(spline(xs) - f.beta_nu(p, xs))) < 1e-9


class TestSecondMoment:
    def test_uniform_independent_of_x(self):
        f = DriftField(make_measure_uniform())
        p = SlitParticle.from_capacity(1e-3)
        vals = f.gamma_second_moment(p, np.array([0.0, 0.2, 0.4, 0.6, 0.8]))
        ref = second_moment_integral(p)
        assert np.max(np.abs(vals - ref)) / ref < 1e-8

    def test_scaling_to_rho0(self):
        f = DriftField(COSINE)
        x = 0.13
        h_x = float(COSINE.density(np.array(x)))
        vals = {}
        for c in (1e-4, 1e-5):
            p = SlitParticle.from_capacity(c)
            vals[c] = f.gamma_second_moment(p, x) / (c**1.5 * h_x)
        assert abs(vals[1e-5] - vals[1e-4]) / vals[1e-5] < 0.05

    def test_error_bound_fitted_constant(self):
        rho0, _ = calibrate_rho0([1e-3, 1e-4, 1e-5, 1e-6])
        f = DriftField(COSINE)
        sup_h1 = 0.5 * 2 * math.pi
        x = 0.13
        h_x = float(COSINE.density(np.array(x)))
        fitted = []
        for c in (1e-3, 1e-4, 1e-5):
            p = SlitParticle.from_capacity(c)
            err = abs(f.gamma_second_moment(p, x) - rho0 * c**1.5 * h_x)
            fitted.append(err / (c**2 * math.log(1 / c) * sup_h1))
        assert max(fitted) < 1.0  # stays bounded across the sweep


class TestCalibration:
    def test_standard_sweep(self):
        rho0, unc = calibrate_rho0([1e-3, 1e-4, 1e-5, 1e-6])
        assert rho0 > 0
        assert unc < 0.02 * rho0

    def test_matches_independent_asymptotics(self):
        # closed-form small-capacity analysis of the displacement profile
        # gives the limit 4 / (3 pi^3); calibration must land on it
        rho0, _ = calibrate_rho0([1e-3, 1e-4, 1e-5, 1e-6])
        assert rho0 == pytest.approx(4.0 / (3.0 * math.pi**3), rel=1e-4)

    def test_appending_decade_tightens(self):
        _, unc1 = calibrate_rho0([1e-3, 1e-4, 1e-5, 1e-6])
        _, unc2 = calibrate_rho0([1e-3, 1e-4, 1e-5, 1e-6, 1e-7])
        assert unc2 < unc1

    def test_coarse_sweep_flagged(self):
        with pytest.warns(UserWarning, match="coarse"):
            _, unc = calibrate_rho0([1e-1, 1e-2])
        _, unc_fine = calibrate_rho0([1e-3, 1e-4, 1e-5, 1e-6])
        assert unc > unc_fine

    def test_non_cauchy_rejected(self):
        with pytest.raises(CalibrationError, match="Cauchy"):
            calibrate_rho0([0.45, 0.2, 0.05])

    def test_field_refuses_variance_before_calibration(self):
        f = DriftField(COSINE)
        with pytest.raises(UncalibratedRho0Error):
            f.require_rho0()
        calibrate_rho0([1e-3, 1e-4, 1e-5], field=f)
        assert f.require_rho0() == pytest.approx(4.0 / (3.0 * math.pi**3), rel=1e-3)

    def test_cache_round_trip(self, tmp_path):
        cache = tmp_path / "rho0.json"
        r1, u1 = calibrate_rho0([1e-3, 1e-4, 1e-5], cache_path=cache)
        assert cache.exists()
        r2, u2 = calibrate_rho0([1e-3, 1e-4, 1e-5], cache_path=cache)
        assert (r1, u1) == (r2, u2)
