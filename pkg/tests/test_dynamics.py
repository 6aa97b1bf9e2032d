import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from platoongain.dynamics import (
    DomainError,
    PlatoonSizeError,
    PlatoonState,
    feedback,
    gain_g,
    gains_k,
    in_state_space,
    kernel_f,
    potential,
    potential_deriv,
)
from platoongain.params import ControllerParams

P = ControllerParams()
G0 = 35 * 0.1 / 150  # gain function at zero coupling


class TestPotential:
    @pytest.mark.parametrize("s, expected", [(25.0, 0.0), (10.0, 200.0), (20.0, 0.0)])
    def test_values(self, s, expected):
        assert potential(s, P) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("s, expected", [(30.0, 0.0), (10.0, -100.0), (20.0, 0.0)])
    def test_derivative_values(self, s, expected):
        assert potential_deriv(s, P) == pytest.approx(expected, abs=1e-12)

    def test_derivative_matches_central_difference_at_ten(self):
        h = 1e-6
        fd = (potential(10 + h, P) - potential(10 - h, P)) / (2 * h)
        assert potential_deriv(10.0, P) == pytest.approx(fd, rel=1e-4)

    def test_domain(self):
        for bad in (5.0, 4.0, -1.0):
            with pytest.raises(DomainError):
                potential(bad, P)
            with pytest.raises(DomainError):
                potential_deriv(bad, P)

    def test_diverges_near_L(self):
        assert potential(5.0 + 1e-9, P) > 1e12

    def test_vectorized(self):
        out = potential(np.array([10.0, 25.0]), P)
        np.testing.assert_allclose(out, [200.0, 0.0])

    def test_sign_and_fd_on_grid(self):
        s = np.linspace(P.L + 0.1, 2 * P.lam, 4000)
        assert np.all(potential(s, P) >= 0.0)
        assert np.all(potential_deriv(s, P) <= 0.0)
        h = 1e-6
        fd = (potential(s + h, P) - potential(s - h, P)) / (2 * h)
        d = potential_deriv(s, P)
        mask = np.abs(d) > 1e-8
        np.testing.assert_allclose(d[mask], fd[mask], rtol=1e-4)
        assert np.all(np.abs(fd[~mask]) < 1e-6)

    def test_continuous_at_lambda(self):
        assert potential(P.lam - 1e-7, P) == pytest.approx(0.0, abs=1e-18)
        assert potential_deriv(P.lam - 1e-7, P) == pytest.approx(0.0, abs=1e-12)


class TestKernel:
    @pytest.mark.parametrize("x, expected", [(-0.3, 0.0), (-0.1, 0.025), (0.1, 0.2)])
    def test_values(self, x, expected):
        assert kernel_f(x, P) == pytest.approx(expected, abs=1e-15)

    def test_lower_bound_and_monotone(self):
        eps = P.epsilon
        x = np.concatenate([np.linspace(-5 * eps, 5 * eps, 10_000), [-1e3, 1e3]])
        f = kernel_f(x, P)
        assert np.all(f >= np.maximum(x, 0.0))
        order = np.argsort(x)
        assert np.all(np.diff(f[order]) >= 0.0)

    @pytest.mark.parametrize("x0", [-0.2, 0.0])
    def test_continuity_and_slope(self, x0):
        d = 1e-9
        assert abs(kernel_f(x0 - d, P) - kernel_f(x0 + d, P)) < 1e-8
        assert abs(kernel_f(np.nextafter(x0, -1), P) - kernel_f(x0, P)) < 1e-12
        h = 1e-5
        left = (kernel_f(x0, P) - kernel_f(x0 - h, P)) / h
        right = (kernel_f(x0 + h, P) - kernel_f(x0, P)) / h
        assert left == pytest.approx(right, abs=1e-4)

    @given(st.floats(-1e3, 1e3))
    def test_bound_property(self, x):
        assert kernel_f(x, P) >= max(x, 0.0)


class TestGain:
    def test_values(self):
        assert gain_g(0.0, P) == pytest.approx(G0, rel=1e-12)
        assert gain_g(-0.3, P) == pytest.approx(0.01, rel=1e-12)

    @given(st.floats(-500, 500))
    def test_lower_bounds(self, x):
        g = gain_g(x, P)
        assert g >= -x / P.v_star - 1e-12
        assert g >= x / (P.v_max - P.v_star) - 1e-12

    def test_envelope_nonnegative_for_positive_args(self):
        x = np.linspace(0.0, 50.0, 101)
        envelope = P.v_max * np.maximum(x, 0) / (P.v_star * (P.v_max - P.v_star)) - x / P.v_star
        assert np.all(envelope >= 0.0)


class TestGainsAndFeedback:
    def test_gains_far_apart(self):
        s = PlatoonState.from_spacings([25, 30, 40], [30, 31, 29, 30])
        np.testing.assert_allclose(gains_k(s, P), 0.5 + G0, rtol=1e-12)
        np.testing.assert_allclose(gains_k(s, P), 0.5233333333333333, rtol=1e-6)

    def test_gains_two_vehicles_close(self):
        s = PlatoonState.from_spacings([10.0], [30, 30])
        k = gains_k(s, P)
        assert k[0] == pytest.approx(0.5 + gain_g(100.0, P), rel=1e-12)
        assert k[1] == pytest.approx(0.5 + gain_g(-100.0, P), rel=1e-12)
        assert np.all(k > 0)

    def test_feedback_equilibrium_zero(self):
        s = PlatoonState.from_spacings([20, 25, 40, 21, 33, 20], [30.0] * 7)
        assert np.all(feedback(s, P) == 0.0)

    def test_feedback_action_reaction(self):
        s = PlatoonState.from_spacings([10.0], [30, 30])
        np.testing.assert_allclose(feedback(s, P), [100.0, -100.0], rtol=1e-12)

    def test_feedback_speed_error_only(self):
        s = PlatoonState.from_spacings([25.0], [31, 30])
        np.testing.assert_allclose(feedback(s, P), [-(0.5 + G0), 0.0], rtol=1e-12, atol=1e-15)

    def test_feedback_interior_formula(self):
        s = PlatoonState.from_spacings([12.0, 9.0], [29.0, 31.0, 30.5])
        d2, d3 = potential_deriv(12.0, P), potential_deriv(9.0, P)
        coupling = np.array([-d2, d2 - d3, d3])
        k = 0.5 + gain_g(coupling, P)
        expected = -k * (s.speeds - 30.0) + coupling
        np.testing.assert_allclose(feedback(s, P), expected, rtol=1e-12)
        np.testing.assert_allclose(gains_k(s, P), k, rtol=1e-12)

    def test_per_vehicle_mu(self):
        s = PlatoonState.from_spacings([25.0], [31, 29])
        a = feedback(s, P, mu=np.array([0.1, 1.0]))
        np.testing.assert_allclose(a, [-(0.1 + G0), (1.0 + G0)], rtol=1e-12)

    def test_size_errors(self):
        single = PlatoonState([0.0], [30.0])
        with pytest.raises(PlatoonSizeError):
            feedback(single, P)
        with pytest.raises(PlatoonSizeError):
            gains_k(single, P)

    def test_domain_error(self):
        with pytest.raises(DomainError):
            feedback(PlatoonState.from_spacings([5.0], [30, 30]), P)

    @given(st.lists(st.floats(20.0, 60.0), min_size=1, max_size=8))
    def test_equilibrium_property(self, spacings):
        s = PlatoonState.from_spacings(spacings, [30.0] * (len(spacings) + 1))
        assert np.max(np.abs(feedback(s, P))) <= 1e-12

    @given(st.floats(5.01, 40.0))
    def test_two_vehicle_symmetry(self, gap):
        a = feedback(PlatoonState.from_spacings([gap], [30, 30]), P)
        assert a[0] == pytest.approx(-a[1], abs=1e-12)


class TestStateSpace:
    def test_examples(self):
        assert in_state_space(PlatoonState.from_spacings([16, 18], [30, 30, 30]), P)
        assert not in_state_space(PlatoonState.from_spacings([16, 5.0], [30, 30, 30]), P)
        assert in_state_space(PlatoonState.from_spacings([16, 18], [35, 30, 30]), P)
        assert not in_state_space(PlatoonState.from_spacings([16, 18], [35.1, 30, 30]), P)
        assert not in_state_space(PlatoonState.from_spacings([16, 18], [30, -0.1, 30]), P)

    def test_state_record(self):
        s = PlatoonState.from_spacings([10, 20], [1, 2, 3], lead_position=100.0)
        np.testing.assert_array_equal(s.positions, [100, 90, 70])
        np.testing.assert_array_equal(s.spacings, [10, 20])
        assert s.n == 3
        np.testing.assert_array_equal(s.shifted(5).positions, [105, 95, 75])
        with pytest.raises(ValueError):
            s.positions[0] = 1.0
        with pytest.raises(ValueError):
            PlatoonState([0.0, 1.0], [1.0])
