import math
from fractions import Fraction

import numpy as np
import pytest

from qnvp import bounds as bd
from qnvp.core import GriddedField, make_grid


class TestScalars:
    def test_a_of_t(self):
        # 1 + sqrt(4 * 9) / 0.25 + 0.5 / 0.25
        assert bd.a_of_t(4.0, 9.0, 0.5, 0.5) == pytest.approx(27.0, rel=1e-15)
        assert bd.a_of_t(0.0, 0.0, 0.0, 0.1) == 1.0
        with pytest.raises(ValueError):
            bd.a_of_t(-1.0, 1.0, 0.0, 0.5)
        with pytest.raises(ValueError):
            bd.a_of_t(1.0, 1.0, 0.0, 0.0)

    def test_h_of_z(self):
        assert bd.h_of_z(0.0, 2) == 0.0
        assert bd.h_of_z(1.0, 2) == pytest.approx(math.log(32) ** 2)
        # frozen above d, continuous at d
        assert bd.h_of_z(5.0, 2) == bd.h_of_z(2.0, 2) == pytest.approx(2 * math.log(16) ** 2)
        assert bd.h_of_z(2.0 - 1e-12, 2) == pytest.approx(bd.h_of_z(2.0, 2), rel=1e-10)
        with pytest.raises(ValueError):
            bd.h_of_z(-0.1, 2)

    def test_cumulative_integral(self):
        t = np.array([0.0, 0.5, 1.5])
        np.testing.assert_allclose(bd.cumulative_integral(t, [1.0, 3.0, 3.0]), [0.0, 1.0, 4.0])
        assert bd.cumulative_integral([0.0], [2.0]).tolist() == [0.0]


class TestGronwall:
    def test_f_t_solves_log_ode(self):
        # constant A: Q(t) = F_t[z] with int A = A t, below the switch
        d, c0, a = 2, 1.5, 0.8
        times = np.linspace(0, 1, 11)
        z = 1e-3
        oracle = bd.gronwall_oracle(z, times, np.full(11, a), c0, d)
        exact = bd.f_t(z, a * times, c0, d)
        assert np.max(exact) < d
        np.testing.assert_allclose(exact, oracle, rtol=1e-8)

    def test_f_t_identity_at_zero(self):
        assert bd.f_t(0.3, 0.0, 2.0, 2) == 0.3
        assert bd.f_t(0.3, [0.0, 0.1], 2.0, 2).shape == (2,)

    def test_positive_exponent_does_not_solve_ode(self):
        times = np.linspace(0, 0.5, 6)
        z = 1e-3
        oracle = bd.gronwall_oracle(z, times, np.ones(6), 1.0, 2)
        flipped = bd.f_t(z, times, 1.0, 2, positive_exponent=True)
        assert np.max(np.abs(flipped / oracle - 1)) > 1e-2

    def test_f_t_errors(self):
        with pytest.raises(ValueError):
            bd.f_t(0.0, 1.0, 1.0, 2)
        with pytest.raises(ValueError):
            bd.f_t(33.0, 1.0, 1.0, 2)
        with pytest.raises(ValueError):
            bd.f_t(1.0, -1.0, 1.0, 2)

    def test_envelope_matches_oracle_across_switch(self):
        # z small, A varying: the flow crosses d inside the window
        d, c0 = 2, 2.0
        times = np.linspace(0, 1, 21)
        a = 1 + 3 * times**2
        z = 0.5
        env = bd.stability_envelope(math.sqrt(z), times, a, c0, d, with_oracle=True)
        star = bd.crossing_integral(z, c0, d)
        assert env.a_integral[0] < star < env.a_integral[-1]
        np.testing.assert_allclose(env.envelope_w2**2, env.q_oracle, rtol=1e-6)

    def test_switch_continuity(self):
        d, c0, z = 3, 1.7, 0.2
        star = bd.crossing_integral(z, c0, d)
        lo, hi = bd.envelope_squared(z, [star * (1 - 1e-12), star * (1 + 1e-12)], c0, d)
        assert lo == pytest.approx(d, rel=1e-8)
        assert abs(hi - lo) < 1e-8

    def test_envelope_initial_value(self):
        assert bd.envelope_squared(0.04, 0.0, 2.0, 2) == pytest.approx(0.04, rel=1e-14)
        assert bd.envelope_squared(0.0, [0.0, 5.0], 2.0, 2).tolist() == [0.0, 0.0]
        # above d the exponential regime applies from the start
        assert bd.envelope_squared(3.0, 1.0, 0.5, 2) == pytest.approx(3.0 * math.exp(0.5))

    def test_coarse_form(self):
        d, c0 = 2, 1.0
        ai = np.linspace(0, 3, 7)
        # crosses d: whole coarse envelope is d e^{c0 I}
        np.testing.assert_allclose(bd.envelope_squared(0.5, ai, c0, d, coarse=True), d * np.exp(c0 * ai))
        # stays below d: coarse equals the flow
        small = np.linspace(0, 0.05, 4)
        np.testing.assert_allclose(bd.envelope_squared(0.01, small, c0, d, coarse=True),
                                   bd.f_t(0.01, small, c0, d), rtol=1e-15)
        with pytest.raises(ValueError):
            bd.envelope_squared(0.01, small, c0, d, positive_exponent=True)

    def test_oracle_errors(self):
        with pytest.raises(ValueError):
            bd.gronwall_oracle(0.0, [0, 1], [1, 1], 1.0, 2)
        with pytest.raises(ValueError):
            bd.gronwall_oracle(0.1, [0, 1], [1], 1.0, 2)
        with pytest.raises(ValueError):
            bd.gronwall_oracle(0.1, [0, 0], [1, 1], 1.0, 2)


class TestCalibration:
    def test_c0_minimal(self):
        d = 2
        times = np.linspace(0, 1, 11)
        a = 1 + times
        w2 = np.sqrt(bd.envelope_squared(0.01, bd.cumulative_integral(times, a), 3.0, d))
        c = bd.calibrate_c0(times, a, w2, d, safety=1.0)
        assert c == pytest.approx(3.0, rel=1e-9)
        assert bd.calibrate_c0(times, a, w2, d, safety=2.0) == pytest.approx(2 * c)

    def test_c0_floor(self):
        times = np.linspace(0, 1, 5)
        flat = np.full(5, 0.1)
        assert bd.calibrate_c0(times, np.ones(5), flat, 2, safety=2.0, floor=1.0) == 2.0

    def test_c0_explicit_integral(self):
        times = np.linspace(0, 1, 5)
        ai = np.array([0.0, 0.3, 0.7, 1.0, 1.2])
        w2 = np.sqrt(bd.envelope_squared(0.02, ai, 2.5, 2))
        assert bd.calibrate_c0(times, np.zeros(5), w2, 2, safety=1.0, a_integral=ai) == pytest.approx(2.5, rel=1e-9)

    def test_support_envelope(self):
        assert bd.support_envelope_2d(1.5, 0.0, 0.25, 0.5, 3.0) == pytest.approx(1.5, rel=1e-15)
        t = np.linspace(0, 2, 5)
        env = bd.support_envelope_2d(1.0, t, 0.5, 0.5, 1.0)
        assert np.all(np.diff(env) > 0)
        with pytest.raises(ValueError):
            bd.support_envelope_2d(1.0, 1.0, 0.5, 1.0, 1.0)

    def test_c_alpha_minimal(self):
        eps, alpha = 0.25, 0.5
        times = np.linspace(0, 1, 9)
        v = bd.support_envelope_2d(0.8, times / eps, eps, alpha, 0.7)
        c = bd.calibrate_c_alpha(times, v, eps, alpha, safety=1.0)
        assert c == pytest.approx(0.7, rel=1e-9)
        assert np.all(bd.support_envelope_2d(0.8, times / eps, eps, alpha, c) >= v * (1 - 1e-12))


class TestExponents:
    def test_batt_rein_chain(self):
        chain = bd.batt_rein_chain()
        assert chain == [Fraction(4, 9), Fraction(8, 27), Fraction(16, 81), Fraction(32, 243)]
        assert chain[-1] < Fraction(1, 6) <= chain[-2]

    def test_exponent_map(self):
        assert bd.batt_rein_exponent(Fraction(3, 2)) == 1
        with pytest.raises(ValueError):
            bd.batt_rein_exponent(0)

    def test_phi_threshold(self):
        th = bd.phi_threshold(0.25, 2, 1.0)
        assert th.exponent == 8.0
        assert th.value == 0.0  # exp(-exp(4^8)) underflows
        assert th.log_log == pytest.approx(8 * math.log(4))
        assert bd.phi_threshold(0.5, 3, 1.0).exponent == 40.0
        mild = bd.phi_threshold(1.0, 2, 1.0, k=0.5)
        assert mild.value == pytest.approx(math.exp(-math.exp(0.5)))
        with pytest.raises(ValueError):
            bd.phi_threshold(0.5, 2, 1.0, beta=2.0)
        with pytest.raises(ValueError):
            bd.phi_threshold(0.5, 1, 1.0)

    def test_support_3d(self):
        v = bd.support_envelope_3d(1.0, 0.5, 1.0, 1.0, 0.1)
        assert v >= 1.0 * 0.5**-1.0 + 1.0
        with pytest.raises(ValueError):
            bd.support_envelope_3d(1.0, 0.5, 1.0, 0.0, 0.1)

    def test_field_bound(self):
        fb = bd.field_bound_2d(eta_l2=1.0, eta_inf=1.0, epsilon=0.5, c2=1.0, support=1.0, c=1.0, big_c=math.e)
        assert fb.point2 == pytest.approx(1 + math.sqrt(math.log(4.0)) / 0.5)
        # R = 1/2: 1 + (1 + 2) sqrt(log(4 e))
        assert fb.intermediate == pytest.approx(1 + 3 * math.sqrt(math.log(4 * math.e)))


class TestLoeper:
    def _pair(self):
        g = make_grid(2, 64)
        x, y = g.coordinates
        r1 = GriddedField(g, 1 + 0.3 * np.cos(2 * np.pi * x))
        r2 = GriddedField(g, 1 + 0.3 * np.cos(2 * np.pi * (x - 0.05)) + 0.1 * np.sin(2 * np.pi * y))
        return r1, r2

    def test_estimate_holds(self):
        rep = bd.loeper_field_check(*self._pair(), 0.5)
        assert rep.holds
        assert 0 < rep.ratio < 1
        assert all(c > 0 for c in rep.log_lipschitz)

    def test_identical(self):
        r1, _ = self._pair()
        rep = bd.loeper_field_check(r1, r1, 0.5)
        assert rep.lhs == 0.0 and rep.w2 == 0.0 and rep.holds

    def test_lattice_measure(self):
        r1, _ = self._pair()
        m = bd.lattice_measure(r1, 16)
        assert m.n == 256
        assert m.mass == pytest.approx(1.0, rel=1e-14)
        with pytest.raises(ValueError):
            bd.lattice_measure(r1, 24)

    def test_rejects_non_unit_mean(self):
        r1, _ = self._pair()
        bad = GriddedField(r1.grid, r1.scalar * 2)
        with pytest.raises(ValueError):
            bd.loeper_field_check(r1, bad, 0.5)
