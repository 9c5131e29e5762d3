import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hkb_delay.model import (BETA_CAPTION, BETA_KAY, HkbParams, ModeKind, jacobians,
                             multilinear_forms, nonlinear_part, rhs_derivatives, rhs_full,
                             rhs_normal_mode, rhs_param_derivative, swap)

finite = st.floats(-3, 3, allow_nan=False)
states = st.lists(finite, min_size=4, max_size=4).map(np.array)
params = st.builds(HkbParams, gamma=st.floats(-2, 2), alpha=st.floats(0, 20),
                   beta=st.floats(0, 0.1), a=st.floats(-3, 3), b=st.floats(-2, 2),
                   omega=st.floats(0.5, 20), tau=st.floats(0, 2))


def hand_rhs(now, delayed, p):
    # direct transcription of the two second-order equations
    x1, x2, v1, v2 = now
    y1, y2, u1, u2 = delayed
    acc1 = (p.gamma * v1 - p.alpha * x1 ** 2 * v1 - p.beta * v1 ** 3 - p.omega ** 2 * x1
            + p.a * (v1 - u2) + p.b * (x1 - y2) ** 2 * (v1 - u2))
    acc2 = (p.gamma * v2 - p.alpha * x2 ** 2 * v2 - p.beta * v2 ** 3 - p.omega ** 2 * x2
            + p.a * (v2 - u1) + p.b * (x2 - y1) ** 2 * (v2 - u1))
    return np.array([v1, v2, acc1, acc2])


def test_defaults_and_validation():
    p = HkbParams()
    assert p.beta == BETA_KAY and BETA_CAPTION == 0.007095
    assert p.omega == pytest.approx(2.6 * math.pi)
    with pytest.raises(ValueError):
        HkbParams(omega=0.0)
    with pytest.raises(ValueError):
        HkbParams(tau=-1.0)
    with pytest.raises(ValueError):
        HkbParams(a=float("nan"))


def test_config_round_trip():
    p = HkbParams(a=-0.3, tau=0.25)
    assert HkbParams.from_config(p.to_config()) == p
    with pytest.raises(KeyError):
        HkbParams.from_config("delta = 1\n")
    with pytest.raises(ValueError):
        HkbParams.from_config("gamma 1\n")


def test_origin_is_equilibrium():
    assert np.all(rhs_full(np.zeros(4), np.zeros(4), HkbParams()) == 0)


def test_hand_expanded_value():
    p = HkbParams(beta=BETA_CAPTION, a=-2.0, b=1.0)
    now, delayed = np.array([0.1, 0, 0, 0]), np.zeros(4)
    got = rhs_full(now, delayed, p)
    assert np.allclose(got, hand_rhs(now, delayed, p), rtol=1e-14, atol=1e-14)
    assert got[2] == pytest.approx(-p.omega ** 2 * 0.1)


@settings(max_examples=60, deadline=None)
@given(params, states, states)
def test_matches_hand_transcription(p, now, delayed):
    assert np.allclose(rhs_full(now, delayed, p), hand_rhs(now, delayed, p), rtol=1e-12, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(params, states, states)
def test_swap_and_negation_equivariance(p, now, delayed):
    f = rhs_full(now, delayed, p)
    assert np.allclose(rhs_full(swap(now), swap(delayed), p), swap(f), atol=1e-9)
    assert np.allclose(rhs_full(-now, -delayed, p), -f, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(params, finite, finite, finite, finite)
def test_invariant_subspaces(p, x, v, y, u):
    f = rhs_full(np.array([x, x, v, v]), np.array([y, y, u, u]), p)
    assert f[0] == f[1] and f[2] == pytest.approx(f[3], abs=1e-12)
    g = rhs_full(np.array([x, -x, v, -v]), np.array([y, -y, u, -u]), p)
    assert g[0] == -g[1] and g[2] == pytest.approx(-g[3], abs=1e-12)


def test_normal_mode_limits():
    p = HkbParams(a=0.0)
    for mode in ModeKind:
        assert rhs_normal_mode(mode, 0.0, 0.0, 0.0, p) == 0.0
        assert rhs_normal_mode(mode, 0.3, 0.2, 0.7, p) == pytest.approx(p.gamma * 0.2 - p.omega ** 2 * 0.3)


@settings(max_examples=40, deadline=None)
@given(params, finite, finite, finite, finite)
def test_normal_mode_matches_linearised_full(p, x, v, y, u):
    lin = jacobians(p)
    for mode in ModeKind:
        s = mode.sign
        now = np.array([x, s * x, v, s * v])
        dl = np.array([y, s * y, u, s * u])
        acc = (lin.A0 @ now + lin.A1 @ dl)[2]
        # eta = x1 + s x2 = 2 x1
        assert rhs_normal_mode(mode, 2 * x, 2 * v, 2 * u, p) == pytest.approx(2 * acc, abs=1e-9)


def test_uncoupled_delayed_jacobian_vanishes():
    assert np.all(jacobians(HkbParams(a=0.0)).A1 == 0)


def test_tau_zero_stability_split():
    # at tau = 0 the in-phase mode has trace gamma, the anti-phase mode gamma + 2a
    p = HkbParams(a=-0.5)
    lin = jacobians(p)
    A = lin.A0 + lin.A1
    ev = np.linalg.eigvals(A)
    traces = sorted({round(2 * e.real, 10) for e in ev})
    assert traces == sorted([round(p.gamma, 10), round(p.gamma + 2 * p.a, 10)])


@settings(max_examples=100, deadline=None)
@given(params)
def test_jacobians_match_finite_differences(p):
    lin = jacobians(p)
    h = 1e-6
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        d0 = (rhs_full(e, np.zeros(4), p) - rhs_full(-e, np.zeros(4), p)) / (2 * h)
        d1 = (rhs_full(np.zeros(4), e, p) - rhs_full(np.zeros(4), -e, p)) / (2 * h)
        scale = max(1.0, np.max(np.abs(lin.A0)))
        assert np.allclose(d0, lin.A0[:, k], atol=1e-6 * scale)
        assert np.allclose(d1, lin.A1[:, k], atol=1e-6 * scale)


@settings(max_examples=40, deadline=None)
@given(params, states, states)
def test_state_derivatives_match_finite_differences(p, now, delayed):
    jn, jd = rhs_derivatives(now, delayed, p)
    h = 1e-6
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        dn = (rhs_full(now + e, delayed, p) - rhs_full(now - e, delayed, p)) / (2 * h)
        dd = (rhs_full(now, delayed + e, p) - rhs_full(now, delayed - e, p)) / (2 * h)
        scale = max(1.0, np.max(np.abs(jn)), np.max(np.abs(jd)))
        assert np.allclose(dn, jn[:, k], atol=1e-6 * scale)
        assert np.allclose(dd, jd[:, k], atol=1e-6 * scale)


@pytest.mark.parametrize("name", ["gamma", "alpha", "beta", "a", "b", "omega", "tau"])
def test_param_derivatives(name):
    p = HkbParams(a=-0.7, tau=0.2)
    rng = np.random.default_rng(3)
    now, delayed = rng.normal(size=4), rng.normal(size=4)
    h = 1e-6
    up = p.replace(**{name: getattr(p, name) + h})
    dn = p.replace(**{name: getattr(p, name) - h})
    fd = (rhs_full(now, delayed, up) - rhs_full(now, delayed, dn)) / (2 * h)
    assert np.allclose(rhs_param_derivative(now, delayed, p, name), fd, atol=1e-5)


def test_quadratic_form_vanishes_and_linear_limit():
    forms = multilinear_forms(HkbParams())
    assert np.all(forms.quadratic_table == 0)
    lin_forms = multilinear_forms(HkbParams(alpha=0.0, beta=0.0, b=0.0))
    assert np.max(np.abs(lin_forms.cubic_table)) < 1e-9


@settings(max_examples=30, deadline=None)
@given(params, st.integers(0, 2 ** 31 - 1))
def test_cubic_form_symmetric_and_matches_remainder(p, seed):
    forms = multilinear_forms(p)
    C = forms.cubic_table
    assert np.allclose(C, C.transpose(0, 2, 1, 3), atol=1e-9)
    assert np.allclose(C, C.transpose(0, 1, 3, 2), atol=1e-9)
    rng = np.random.default_rng(seed)
    X, Y, Z = rng.normal(size=(3, 8))
    # f is a homogeneous cubic: f(X) = C(X, X, X)
    fx = nonlinear_part(X, p)
    assert np.allclose(forms.cubic(X, X, X), fx, rtol=1e-5, atol=1e-8 * max(1.0, np.max(np.abs(fx))))
    # mixed third derivative by finite differences
    h = 1e-2
    fd = sum(s1 * s2 * s3 * nonlinear_part(s1 * h * X + s2 * h * Y + s3 * h * Z, p)
             for s1 in (1, -1) for s2 in (1, -1) for s3 in (1, -1)) / (8 * h ** 3) / 6
    ref = forms.cubic(X, Y, Z)
    assert np.allclose(fd, ref, rtol=1e-5, atol=1e-6 * max(1.0, np.max(np.abs(ref))))
