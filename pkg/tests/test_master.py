import numpy as np
import pytest
from scipy.optimize import brentq

from conftest import warped_grid
from mfgchar import coefficients as co
from mfgchar import torus
from mfgchar.characteristics import SolverConfig, solve
from mfgchar.errors import InvalidInputError
from mfgchar.master import (MasterContext, evaluate_master, evaluate_u, flow_consistency,
                            grad_q_u, master_residual, partial_s_u, pathwise_gradients,
                            upsilon)
from mfgchar.measure import EmpiricalMeasure
from mfgchar.mfg import build_solution

A = 0.05
CFG = SolverConfig(T=0.1, s=0.05, K=40)


def test_initial_node_returns_g(conv_triple):
    cfg = CFG.with_(s=0.0)
    mu = warped_grid(5)
    q = np.random.default_rng(0).random((7, 1))
    u = evaluate_u(conv_triple, 0.0, q, mu, cfg)
    assert np.max(np.abs(u - conv_triple.initial_cost.value(q, mu.particles))) <= 1e-10


def test_trivial_scenario(trivial_triple):
    mu = warped_grid(3)
    q = [[0.2], [0.7]]
    assert np.all(evaluate_u(trivial_triple, 0.05, q, mu, CFG) == 0.7)
    gq = grad_q_u(trivial_triple, 0.05, q, mu, CFG)
    assert np.all(gq.value == 0.0) and gq.consistent
    assert np.all(partial_s_u(trivial_triple, 0.05, q, mu, CFG) == 0.0)
    assert abs(master_residual(trivial_triple, 0.05, [0.3], mu, CFG)) <= 1e-8
    assert np.all(upsilon(trivial_triple, 0.05, [0.3], mu, 1, CFG) == 0.0)
    pg = pathwise_gradients(trivial_triple, 0.05, mu, [0.3], 0.025, 0, CFG)
    assert np.all(pg.nabla_mu_H == 0.0) and pg.finite


def test_oracle_u_matches_solution(oracle_triple):
    mu = warped_grid(3)
    grid = torus.uniform_grid(8, 1)
    field = solve(oracle_triple, 0.05, mu, grid, CFG)
    sol = build_solution(field)
    u = evaluate_u(oracle_triple, 0.05, grid, mu, CFG, field)
    assert np.max(np.abs(u - sol.U[field.s_index])) <= 1e-8


def test_oracle_grad_q(oracle_triple):
    s = 0.05
    y0 = brentq(lambda y: y - 0.3 + s * A * np.cos(2 * np.pi * y), -1, 1, xtol=1e-15)
    gq = grad_q_u(oracle_triple, s, [[0.3]], warped_grid(2), CFG)
    assert abs(gq.value[0, 0] - A * np.cos(2 * np.pi * y0)) <= 1e-6
    assert gq.consistent


def test_grad_q_cross_check_random_probes(conv2d_triple):
    cfg = SolverConfig(T=0.1, s=0.05, K=16)
    mu = EmpiricalMeasure(np.random.default_rng(3).random((4, 2)))
    q = np.random.default_rng(4).random((5, 2))
    gq = grad_q_u(conv2d_triple, 0.05, q, mu, cfg)
    assert gq.discrepancy <= max(1e-5, 10 * cfg.h_q ** 2)


def test_grad_q_warns_on_inconsistency(quad, oracle_triple):
    # value depends on q but the declared grad_q ignores it
    bad = co.HamiltonianModel(
        lambda q, p: quad.value(q, p) + 0.05 * np.sin(2 * np.pi * q[..., 0]),
        quad.grad_q, quad.grad_p)
    triple = co.CoefficientTriple(bad, oracle_triple.running_cost,
                                  oracle_triple.initial_cost, oracle_triple.theta)
    with pytest.warns(RuntimeWarning):
        gq = grad_q_u(triple, 0.05, [[0.3]], warped_grid(4), CFG)
    assert not gq.consistent


def test_measure_independent_couplings(oracle_triple):
    pg = pathwise_gradients(oracle_triple, 0.05, warped_grid(4), [0.4], 0.0, 2, CFG)
    assert np.max(np.abs(pg.N_F)) <= 1e-6 and np.max(np.abs(pg.N_g)) <= 1e-6


def test_coupling_gradients_match_resolve(conv_triple):
    ctx = MasterContext(conv_triple, 0.05, warped_grid(4), CFG)
    q = [0.35]
    for j in (0, 3):
        pg = ctx.pathwise(q, j)
        assert np.max(np.abs(pg.N_F - ctx.coupling_fd(q, j, "F"))) <= 1e-4
        assert np.max(np.abs(pg.N_g - ctx.coupling_fd(q, j, "g"))) <= 1e-4


def test_upsilon_matches_resolve(conv_triple, conv2d_triple):
    ctx = MasterContext(conv_triple, 0.05, warped_grid(4), CFG)
    for j in range(4):
        ups, fd = ctx.upsilon([0.35], j), ctx.upsilon_fd([0.35], j)
        assert np.max(np.abs(ups - fd)) <= 1e-3 * np.max(np.abs(fd))
    cfg2 = SolverConfig(T=0.1, s=0.05, K=16)
    ctx2 = MasterContext(conv2d_triple, 0.05,
                         EmpiricalMeasure(np.random.default_rng(1).random((4, 2))), cfg2)
    ev = evaluate_master(conv2d_triple, 0.05, [0.3, 0.6], ctx2.mu, cfg2, with_fd=True,
                         context=ctx2)
    assert ev.upsilon_rel_error <= 1e-3


def test_upsilon_at_first_node_is_initial_term(conv_triple):
    ctx = MasterContext(conv_triple, 0.0, warped_grid(4), CFG.with_(s=0.0))
    pg = ctx.pathwise([0.2], 1)
    assert np.array_equal(ctx.upsilon([0.2], 1), pg.N_g)


def test_partial_s_bounds_and_gauge(conv_triple):
    mu = warped_grid(4)
    with pytest.raises(InvalidInputError):
        partial_s_u(conv_triple, 0.0, [[0.3]], mu, CFG.with_(s=0.0))
    with pytest.raises(InvalidInputError):
        partial_s_u(conv_triple, 0.1, [[0.3]], mu, CFG.with_(s=0.1))
    shifted = co.CoefficientTriple(
        conv_triple.hamiltonian, conv_triple.running_cost,
        co.combine_couplings(conv_triple.initial_cost, co.builtin_constant_coupling(2.5)),
        conv_triple.theta)
    a = partial_s_u(conv_triple, 0.05, [[0.3]], mu, CFG)
    b = partial_s_u(shifted, 0.05, [[0.3]], mu, CFG)
    assert np.allclose(a, b, atol=1e-9)


def test_oracle_residual_is_hjb_closure(oracle_triple):
    ev = evaluate_master(oracle_triple, 0.05, [0.3], warped_grid(3), CFG)
    assert np.max(np.abs(ev.grad_mu_u)) <= 1e-6
    assert abs(ev.residual) <= 1e-5


def test_convolution_residual_small(conv_triple):
    ev = evaluate_master(conv_triple, 0.05, [0.3], warped_grid(4), CFG, with_fd=True)
    assert abs(ev.residual) <= 1e-8
    assert ev.upsilon_rel_error <= 1e-3
    assert ev.grad_q_fd_discrepancy <= 1e-5


def test_permutation_equivariance(conv_triple):
    x = warped_grid(4).particles
    perm = np.array([2, 0, 3, 1])
    a = evaluate_master(conv_triple, 0.05, [0.3], EmpiricalMeasure(x), CFG)
    b = evaluate_master(conv_triple, 0.05, [0.3], EmpiricalMeasure(x[perm]), CFG)
    assert a.u == b.u
    assert np.allclose(b.grad_mu_u, a.grad_mu_u[perm], rtol=1e-9, atol=1e-12)
    assert np.isclose(a.residual, b.residual, rtol=1e-9, atol=1e-14)
    assert np.isclose(a.partial_s_u, b.partial_s_u, rtol=1e-12)


def test_flow_consistency(conv_triple):
    cfg = SolverConfig(T=0.1, s=0.1, K=40)
    r = flow_consistency(conv_triple, 0.1, warped_grid(4), [[0.3], [0.8]], cfg,
                         nodes=(5, 20, 35))
    assert r <= 1e-5
    with pytest.raises(InvalidInputError):
        flow_consistency(conv_triple, 0.1, warped_grid(4), [[0.3]], cfg, nodes=(0,))
