import numpy as np
import pytest
from scipy.optimize import brentq

from conftest import warped_grid
from mfgchar import coefficients as co
from mfgchar import torus
from mfgchar.characteristics import SolverConfig, solve
from mfgchar.errors import InvalidInputError
from mfgchar.measure import EmpiricalMeasure, wasserstein
from mfgchar.mfg import (build_solution, continuity_residual, flow_identity_check,
                         gradient_identity_check, grid_gradient, hjb_residual,
                         initial_value_gap, mass_conserved, quadratic_specialization_check,
                         symmetry_check, terminal_measure_gap, trig_test_functions,
                         uniqueness_consistency, value_at)

A, S = 0.05, 0.1


def oracle_value(q, t):
    """Closed-form value for quadratic H, F = 0, g = a sin(2 pi q) / (2 pi)."""
    y0 = np.array([brentq(lambda y: y + t * A * np.cos(2 * np.pi * y) - qi, qi - 1, qi + 1,
                          xtol=1e-15) for qi in q])
    p = A * np.cos(2 * np.pi * y0)
    return A * np.sin(2 * np.pi * y0) / (2 * np.pi) + t * 0.5 * p ** 2


def solution(triple, mu, m, K=40, s=S):
    cfg = SolverConfig(T=0.1, s=s, K=K)
    field = solve(triple, s, mu, torus.uniform_grid(m, mu.d), cfg)
    return build_solution(field)


def test_trivial_solution_is_constant(trivial_triple):
    sol = solution(trivial_triple, EmpiricalMeasure([[0.2], [0.6]]), 8)
    assert np.all(sol.U == 0.7)
    assert hjb_residual(sol) <= 1e-10
    assert gradient_identity_check(sol) <= 1e-12
    assert continuity_residual(sol) <= 1e-12
    assert initial_value_gap(sol) == 0.0


def test_trivial_2d(quad):
    t = co.CoefficientTriple(quad, co.builtin_zero_coupling(), co.builtin_constant_coupling(1.0),
                             theta=1.1)
    sol = solution(t, EmpiricalMeasure([[0.2, 0.1], [0.6, 0.9]]), 4, K=8)
    assert symmetry_check(sol) <= 1e-12
    assert hjb_residual(sol) <= 1e-10


def test_build_requires_uniform_grid(conv_triple, cfg):
    field = solve(conv_triple, S, warped_grid(4), [[0.1], [0.2], [0.5]], cfg)
    with pytest.raises(InvalidInputError):
        build_solution(field)
    assert build_solution(field, m=4).U.shape == (cfg.K + 1, 4)


def test_oracle_value_closed_form(oracle_triple):
    sol = solution(oracle_triple, EmpiricalMeasure([[0.4]]), 16)
    for k in (0, 10, 25, 40):
        t = sol.times[k]
        assert np.max(np.abs(sol.U[k] - oracle_value(sol.grid[:, 0], t))) < 1e-6
    off = np.array([[0.123], [0.877]])
    U, _, _ = value_at(sol.field, 0.05, off)
    assert np.max(np.abs(U - oracle_value(off[:, 0], 0.05))) < 1e-6


def test_initial_value_and_terminal_measure(conv_triple):
    mu = warped_grid(5)
    sol = solution(conv_triple, mu, 8)
    assert initial_value_gap(sol) <= 1e-12
    assert terminal_measure_gap(sol) == 0.0
    assert sol.sigma_path[sol.field.s_index] == mu
    assert mass_conserved(sol)


def test_velocity_at_particles_is_exact(conv_triple):
    sol = solution(conv_triple, warped_grid(5), 4)
    f = sol.field
    assert np.array_equal(sol.velocity, f.triple.hamiltonian.grad_p(f.Q_particles, f.p_particles))


def test_hjb_refinement_oracle(oracle_triple):
    res = [hjb_residual(solution(oracle_triple, warped_grid(4), m, K=K))
           for K, m in ((20, 8), (40, 16), (80, 32))]
    assert res[0] / res[1] >= 2 and res[1] / res[2] >= 2, res


def test_gradient_identity_refinement(conv_triple):
    res = [gradient_identity_check(solution(conv_triple, warped_grid(4), m, K=K))
           for K, m in ((20, 8), (40, 16), (80, 32))]
    assert res[0] / res[1] >= 2 and res[1] / res[2] >= 2, res


def test_hjb_gauge_shift(conv_triple):
    shifted = co.CoefficientTriple(
        conv_triple.hamiltonian, conv_triple.running_cost,
        co.combine_couplings(conv_triple.initial_cost, co.builtin_constant_coupling(3.0)),
        conv_triple.theta)
    mu = warped_grid(4)
    a = solution(conv_triple, mu, 16)
    b = solution(shifted, mu, 16)
    assert np.allclose(b.U - a.U, 3.0, atol=1e-12)
    assert abs(hjb_residual(a) - hjb_residual(b)) < 1e-9


def test_continuity_translation(quad):
    a = 0.2
    t = co.CoefficientTriple(quad, co.builtin_zero_coupling(),
                             co.builtin_constant_gradient_coupling([a]), theta=2.0)
    mu = warped_grid(5)
    sol = solution(t, mu, 8)
    for k, tk in enumerate(sol.times):
        shifted = EmpiricalMeasure(mu.particles + (tk - S) * a)
        assert wasserstein(sol.sigma_path[k], shifted).distance < 1e-12
    # linear-in-time particles make the centred difference exact up to rounding
    assert continuity_residual(sol) <= 1e-5


def test_constant_test_function_has_zero_residual(conv_triple):
    sol = solution(conv_triple, warped_grid(5), 4)
    one = trig_test_functions(1)[:1]
    assert continuity_residual(sol, test_functions=one) == 0.0
    assert len(trig_test_functions(1)) == 1 + 2 * 2
    assert len(trig_test_functions(2)) == 1 + 2 * 12


def test_symmetry_d1_is_zero(conv_triple):
    assert symmetry_check(solution(conv_triple, warped_grid(3), 4, K=8)) == 0.0


def test_symmetry_refinement_2d(conv2d_triple):
    mu = EmpiricalMeasure(np.random.default_rng(1).random((6, 2)))
    res = [symmetry_check(solution(conv2d_triple, mu, m, K=m)) for m in (4, 8, 16)]
    assert res[0] / res[1] >= 2 and res[1] / res[2] >= 2, res


def test_grid_gradient_exact_on_low_modes():
    m, d = 16, 2
    g = torus.uniform_grid(m, d)
    f = np.sin(2 * np.pi * g[:, 0]) * np.cos(2 * np.pi * g[:, 1])
    exact = np.stack([2 * np.pi * np.cos(2 * np.pi * g[:, 0]) * np.cos(2 * np.pi * g[:, 1]),
                      -2 * np.pi * np.sin(2 * np.pi * g[:, 0]) * np.sin(2 * np.pi * g[:, 1])], -1)
    h = 1 / m
    # centred differences scale a sine mode by sin(2 pi h) / (2 pi h)
    assert np.allclose(grid_gradient(f, m, d), exact * np.sin(2 * np.pi * h) / (2 * np.pi * h))


def test_quadratic_specialization(conv_triple, cfg):
    field = solve(conv_triple, S, warped_grid(4), None, cfg)
    assert quadratic_specialization_check(field, [[0.15], [0.6]]) < 1e-6


def test_flow_identities(oracle_triple, conv_triple, trivial_triple, cfg):
    mu = warped_grid(4)
    for triple in (oracle_triple, conv_triple):
        same = flow_identity_check(triple, S, mu, S, cfg)
        assert same.worst <= cfg.tol_fixed_point
        half = flow_identity_check(triple, S, mu, S / 2, cfg)
        assert half.worst <= 10 * cfg.tol_fixed_point + 1e-9
    assert flow_identity_check(trivial_triple, S, mu, 0.025, cfg).worst == 0.0


def test_uniqueness_consistency(oracle_triple, conv_triple, trivial_triple, cfg):
    mu = warped_grid(4)
    for r in uniqueness_consistency(trivial_triple, S, mu, cfg):
        assert r.value_gap == 0.0 and r.measure_gap == 0.0
    reps = uniqueness_consistency(oracle_triple, S, mu, cfg)
    assert all(max(r.value_gap, r.measure_gap) <= 10 * cfg.tol_fixed_point + 1e-9 for r in reps)
    a = uniqueness_consistency(conv_triple, S, mu, cfg)
    b = uniqueness_consistency(conv_triple, S, EmpiricalMeasure(mu.particles[::-1]), cfg)
    for ra, rb in zip(a, b):
        assert ra.value_gap == rb.value_gap and ra.measure_gap == rb.measure_gap
