import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonreg_minimax import InputError, Loss, Transform, a_hat, f_bar_prime, f_eval, loss_eval
from nonreg_minimax.transform import LinearPiece, SmoothPiece

CLAMP = Transform.clamp(0.0, 1.0)


def smooth_kinked():
    """x^2/2 for x < 1, then the tangent-free continuation 0.5 + 2 (x - 1)."""
    return Transform([1.0], [SmoothPiece(lambda x: 0.5 * x * x, lambda x: x, 1.0), LinearPiece(2.0, -1.5)])


class TestEval:
    def test_clamp_inside(self):
        assert f_eval(CLAMP, 0.5) == 0.5

    def test_clamp_censored(self):
        assert f_eval(CLAMP, -3.0) == 0.0

    def test_abs(self):
        assert f_eval(Transform.absolute(), -2.0) == 2.0

    def test_at_kink_continuous(self):
        assert f_eval(CLAMP, 1.0) == 1.0
        assert f_eval(smooth_kinked(), 1.0) == pytest.approx(0.5)

    def test_vectorized(self):
        np.testing.assert_array_equal(f_eval(CLAMP, np.array([-1.0, 0.25, 2.0])), [0.0, 0.25, 1.0])

    def test_huge_input_warns(self):
        with pytest.warns(RuntimeWarning):
            assert f_eval(Transform.identity(), 1e308) == 1e300

    def test_hinge_encoding(self):
        f = Transform.hinge(2.0, -1.0)
        assert f_eval(f, 0.7) == pytest.approx(0.4)
        assert f_eval(f, 0.2) == 0.0

    def test_piecewise_linear(self):
        f = Transform.piecewise_linear([0, 1, 2], [0, 1, 0], left_slope=0, right_slope=0)
        np.testing.assert_allclose(f_eval(f, np.array([-1, 0.5, 1.5, 3])), [0, 0.5, 0.5, 0])


class TestValidation:
    def test_discontinuous(self):
        with pytest.raises(InputError):
            Transform([0.0], [LinearPiece(1.0, 0.0), LinearPiece(1.0, 1.0)])

    def test_constant(self):
        with pytest.raises(InputError):
            Transform([], [LinearPiece(0.0, 3.0)])

    def test_derivative_lipschitz_spot_check(self):
        with pytest.raises(InputError):
            Transform([], [SmoothPiece(lambda x: x ** 3, lambda x: 3 * x * x, 1.0)])

    def test_unsorted_kinks(self):
        with pytest.raises(InputError):
            Transform([1.0, 0.0], [LinearPiece(1, 0)] * 3)

    @pytest.mark.parametrize("desc", [
        {"kind": "identity"}, {"kind": "abs"}, {"kind": "relu"}, {"kind": "clamp", "lo": -1, "hi": 2},
        {"kind": "hinge", "slope": 2.0, "intercept": -1.0},
        {"kind": "piecewise_linear", "x": [0, 1], "y": [0, 2], "left_slope": 0.0, "right_slope": 1.0},
    ])
    def test_descriptor_roundtrip(self, desc):
        f = Transform.from_dict(desc)
        g = Transform.from_dict(f.to_dict())
        xs = np.linspace(-3, 3, 31)
        np.testing.assert_array_equal(f_eval(f, xs), f_eval(g, xs))

    def test_unknown_descriptor(self):
        with pytest.raises(InputError):
            Transform.from_dict({"kind": "sigmoid"})


class TestEnvelope:
    def test_relu_kink(self):
        assert f_bar_prime(Transform.relu(), 0.0) == 1.0

    def test_relu_flat(self):
        assert f_bar_prime(Transform.relu(), -1.0) == 0.0

    @pytest.mark.parametrize("x", [-5.0, -1e-9, 0.0, 1e-9, 3.0])
    def test_abs_everywhere_one(self, x):
        assert f_bar_prime(Transform.absolute(), x) == 1.0

    def test_smooth_piece(self):
        f = smooth_kinked()
        assert f_bar_prime(f, 0.5) == pytest.approx(0.5)
        assert f_bar_prime(f, 1.0) == 2.0

    def test_a_hat_examples(self):
        assert a_hat(CLAMP, 0.5, 0.1) == 1.0
        assert a_hat(CLAMP, 1.2, 0.1) == 0.0
        assert a_hat(CLAMP, 1.05, 0.1) == 1.0

    def test_a_hat_slack(self):
        res = a_hat(smooth_kinked(), 0.0, 0.5, return_slack=True)
        assert res.value == pytest.approx(0.5)
        assert 0 < res.slack <= 1.0 * (1.0 / 32) / 2 + 1e-15
        assert a_hat(CLAMP, 0.5, 0.1, return_slack=True).slack == 0.0

    def test_a_hat_bad_eps(self):
        with pytest.raises(InputError):
            a_hat(CLAMP, 0.0, 0.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(1e-3, 2), st.floats(1e-3, 2))
def test_a_hat_monotone_and_dominates_envelope(g_val, e1, e2):
    for f in (CLAMP, Transform.relu(), smooth_kinked()):
        lo, hi = sorted((e1, e2))
        assert a_hat(f, g_val, lo) <= a_hat(f, g_val, hi) + 1e-12
        assert a_hat(f, g_val, lo) >= f_bar_prime(f, g_val) - 1e-12


@settings(max_examples=100, deadline=None)
@given(st.floats(-0.5, 0.99), st.floats(-0.5, 0.99))
def test_envelope_dominance_within_piece(x, y):
    f = smooth_kinked()
    assert f_bar_prime(f, x) >= abs(y) - 1.0 * abs(x - y) - 1e-12


class TestLoss:
    def test_examples(self):
        assert loss_eval(Loss.power(2), 3.0) == 9.0
        assert loss_eval(Loss.power(2, trunc=5), 3.0) == 5.0
        assert loss_eval(Loss.power(1), -2.0) == 2.0

    def test_invalid(self):
        with pytest.raises(InputError):
            Loss.power(0.5)
        with pytest.raises(InputError):
            Loss.custom(lambda x: np.cos(x))
        with pytest.raises(InputError):
            Loss.custom(lambda x: x + 1)
        with pytest.raises(InputError):
            Loss.power(2, trunc=0)

    def test_descriptor(self):
        L = Loss.from_dict({"kind": "power_loss", "p": 2, "trunc": 10})
        assert L == Loss.power(2, 10) and Loss.from_dict(L.to_dict()) == L

    def test_truncated_takes_smaller(self):
        assert Loss.power(2, trunc=5).truncated(10).trunc == 5
        assert Loss.power(2).truncated(10).trunc == 10

    def test_custom(self):
        L = Loss.custom(lambda x: np.log1p(x), trunc=1.0)
        assert L(0.0) == 0.0 and L(100.0) == 1.0

    @pytest.mark.parametrize("loss", [Loss.power(1, 3), Loss.power(2, 10), Loss.custom(np.sqrt, 2.0)])
    def test_lipschitz_constant_is_upper_bound(self, loss):
        xs = np.linspace(0, 20, 20001)
        vals = loss(xs)
        assert np.max(np.abs(np.diff(vals)) / np.diff(xs)) <= loss.lipschitz_constant() * (1 + 1e-6)


@settings(max_examples=100, deadline=None)
@given(st.floats(1, 4), st.floats(0, 10), st.lists(st.floats(-20, 20), min_size=2, max_size=20))
def test_power_loss_properties(p, a, xs):
    L = Loss.power(p)
    xs = np.array(xs)
    assert L(0.0) == 0.0
    ax = np.sort(np.abs(xs))
    assert np.all(np.diff(L(ax)) >= 0)
    np.testing.assert_allclose(L(a * xs), a ** p * L(xs), rtol=1e-9, atol=1e-12)
