import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from conftest import warped_grid
from mfgchar import torus
from mfgchar.characteristics import SolverConfig, solve
from mfgchar.errors import InvalidInputError, InversionError
from mfgchar.inversion import (InverseFlowQuery, audit_jacobians, forward, invert_flow,
                               jacobian_audit, pinned_inverse, vee_field)
from mfgchar.measure import EmpiricalMeasure

A, S = 0.05, 0.1


def oracle_inverse(q, t):
    """Closed-form composition for the cosine-force case: ``(X_t(q), V(t, q))``."""
    y0 = np.array([brentq(lambda y: y + t * A * np.cos(2 * np.pi * y) - qi, qi - 1, qi + 1,
                          xtol=1e-15) for qi in q])
    v = A * np.cos(2 * np.pi * y0)
    return y0 + S * v, v


@pytest.fixture
def oracle_field(oracle_triple, cfg):
    return solve(oracle_triple, S, EmpiricalMeasure([[0.3]]), torus.uniform_grid(16, 1), cfg)


@pytest.fixture
def conv_field(conv_triple, cfg):
    return solve(conv_triple, S, warped_grid(6), torus.uniform_grid(8, 1), cfg)


def test_query_validation(oracle_field):
    with pytest.raises(InvalidInputError):
        InverseFlowQuery(oracle_field, 0.0123, [[0.1]])
    with pytest.raises(InvalidInputError):
        InverseFlowQuery(oracle_field, 0.05, [[0.1, 0.2]])


def test_identity_at_terminal_time(conv_field):
    q = np.array([[0.13], [0.77]])
    assert np.array_equal(invert_flow(InverseFlowQuery(conv_field, S, q)), q)
    V = vee_field(conv_field, S, q)
    assert np.allclose(V, conv_field.trace(q).p[conv_field.s_index], atol=1e-13)


def test_stationary_scenario(trivial_triple, cfg):
    field = solve(trivial_triple, S, EmpiricalMeasure([[0.2, 0.4]]), torus.uniform_grid(3, 2), cfg)
    q = np.array([[0.1, 0.9], [0.5, 0.5]])
    for t in (0.0, 0.05):
        assert np.allclose(invert_flow(InverseFlowQuery(field, t, q)), q, atol=1e-15)
        assert np.max(np.abs(vee_field(field, t, q))) == 0.0
    rep = jacobian_audit(field, 0.0)
    assert rep.clean
    assert abs(rep.min_det - 1) < 1e-12
    assert abs(rep.max_inverse_norm - np.sqrt(2)) < 1e-10


def test_oracle_round_trip_and_closed_form(oracle_field):
    q = np.linspace(0, 1, 11, endpoint=False)[:, None]
    for t in (0.0, 0.025, 0.05):
        k = oracle_field.cfg.index_of(t)
        x = invert_flow(InverseFlowQuery(oracle_field, t, q))
        assert np.max(torus.torus_dist(forward(oracle_field, x, k), q)) <= 1e-10
        X_exact, V_exact = oracle_inverse(q[:, 0], t)
        assert np.max(torus.torus_dist(x, X_exact[:, None])) < 1e-6
        for method in ("pinned", "newton"):
            V = vee_field(oracle_field, t, q, method=method)
            assert np.max(np.abs(V[:, 0] - V_exact)) < 1e-6
    with pytest.raises(InvalidInputError):
        vee_field(oracle_field, 0.0, q, method="bogus")


def test_round_trip_both_directions(conv_field):
    cfg = conv_field.cfg
    probes = np.random.default_rng(0).random((12, 1))
    for t in (0.0, 0.03):
        k = cfg.index_of(t)
        x = invert_flow(InverseFlowQuery(conv_field, t, probes))
        assert np.max(torus.torus_dist(forward(conv_field, x, k), probes)) <= cfg.newton_tol
        back = invert_flow(InverseFlowQuery(conv_field, t, forward(conv_field, probes, k)))
        assert np.max(torus.torus_dist(back, probes)) <= 10 * cfg.newton_tol


def test_pinned_agrees_with_newton(conv2d_triple):
    cfg = SolverConfig(T=0.1, s=0.1, K=16)
    mu = EmpiricalMeasure(np.random.default_rng(1).random((5, 2)))
    field = solve(conv2d_triple, S, mu, None, cfg)
    q = np.random.default_rng(2).random((6, 2))
    X, V, _ = pinned_inverse(field, 0.025, q)
    Xn = invert_flow(InverseFlowQuery(field, 0.025, q))
    assert np.max(torus.torus_dist(X, Xn)) < 1e-10
    assert np.allclose(V, vee_field(field, 0.025, q, method="newton"), atol=1e-10)


def test_inverse_jacobian_identity(conv_field):
    t, h = 0.025, 1e-5
    q = np.array([[0.21], [0.64]])
    Xp = pinned_inverse(conv_field, t, q + h)[0]
    Xm = pinned_inverse(conv_field, t, q - h)[0]
    dX = torus.wrap_displacement(Xp - Xm)[:, 0] / (2 * h)
    X = pinned_inverse(conv_field, t, q)[0]
    J, _ = conv_field.jacobians(X, conv_field.cfg.index_of(t))
    assert np.max(np.abs(dX - 1 / J[:, 0, 0])) < 1e-5


def test_time_derivative_of_inverse(conv_field):
    cfg = conv_field.cfg
    k, dt, h = 12, cfg.dt, 1e-5
    q = np.array([[0.37], [0.81]])
    Xa = pinned_inverse(conv_field, (k + 1) * dt, q)[0]
    Xb = pinned_inverse(conv_field, (k - 1) * dt, q)[0]
    dtX = torus.wrap_displacement(Xa - Xb)[:, 0] / (2 * dt)
    t = k * dt
    gradX = torus.wrap_displacement(pinned_inverse(conv_field, t, q + h)[0]
                                    - pinned_inverse(conv_field, t, q - h)[0])[:, 0] / (2 * h)
    V = vee_field(conv_field, t, q)
    v = conv_field.triple.hamiltonian.grad_p(q, V)[:, 0]
    assert np.max(np.abs(dtX + gradX * v)) < 1e-5


def test_jacobian_audit_oracle(oracle_field):
    rep = jacobian_audit(oracle_field, 0.0)
    assert 0.5 < rep.min_det < 1.5 and rep.clean


def test_audit_flags_constructed_violation(conv_field):
    J, _ = conv_field.jacobians(conv_field.queries, 0)
    assert audit_jacobians(J).clean
    shrunk = audit_jacobians(0.4 * J)
    assert "det_at_most_half" in shrunk.flags and not shrunk.clean
    tiny = audit_jacobians(np.full((1, 2, 2), 0.05) * np.eye(2))
    assert "inverse_norm_bound" in tiny.flags
    assert np.isclose(tiny.inverse_bound, 4 * (1 + np.sqrt(2)))


def test_newton_failure_is_reported(conv_field):
    with pytest.raises(InversionError):
        invert_flow(InverseFlowQuery(conv_field, 0.0, [[0.4]]), newton_tol=1e-30,
                    newton_max_iters=2)


@settings(max_examples=20)
@given(st.floats(-2, 2), st.sampled_from([0, 10, 20, 30]))
def test_pinned_round_trip_property(q0, k):
    from mfgchar import coefficients as co
    quad = co.builtin_quadratic_hamiltonian()
    F = co.builtin_convolution_coupling(co.cosine_kernel(0.5, 1))
    triple = co.CoefficientTriple(quad, F, F, theta=1.1 * co.theta_threshold(F.kappa))
    cfg = SolverConfig(T=0.1, s=0.1, K=40)
    field = solve(triple, S, EmpiricalMeasure([[0.1], [0.55], [0.8]]), None, cfg)
    X, _, _ = pinned_inverse(field, k * cfg.dt, [[q0]])
    assert np.all((X >= 0) & (X < 1))
    assert torus.torus_dist(forward(field, X, k), torus.wrap([[q0]]))[0] < 1e-10
