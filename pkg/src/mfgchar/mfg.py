"""Value function and mass path of the mean-field game, plus residual checks.

The value ``U(t, x)`` is stored on a regular ``m``-per-axis grid at every
time node.  Each entry comes from the characteristic pinned at ``(t, x)``:
``z`` is integrated along it from ``z(0) = g(Q_0, sigma_0)`` with
``z' = P . grad_p H - H - F(Q, sigma_t)``, and its momentum at ``t`` is the
momentum field ``V(t, x)``.  Residual checks use centred grid differences
with step ``1/m`` in space and the grid step in time.
"""

from dataclasses import dataclass

import numpy as np

from . import torus
from .characteristics import cumulative_trapezoid, solve
from .errors import InvalidInputError
from .measure import wasserstein


@dataclass
class MfgSolution:
    field: object
    m: int
    grid: np.ndarray  # (M, d) with M = m**d
    U: np.ndarray  # (K+1, M)
    V: np.ndarray  # (K+1, M, d)
    X: np.ndarray  # (K+1, M, d) preimages at time s
    velocity: np.ndarray  # (K+1, n, d) at the particle images

    @property
    def triple(self):
        return self.field.triple

    @property
    def cfg(self):
        return self.field.cfg

    @property
    def times(self):
        return self.field.times

    @property
    def sigma_path(self):
        return [self.field.measure_at(k) for k in range(self.cfg.K + 1)]


def value_at(field, t, points):
    """``(U(t, x), V(t, x), X_t(x))`` at arbitrary points via pinned characteristics."""
    k = field.cfg.index_of(t)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tr = field.trace(pts, pin=k)
    z = z_along(field, tr)
    cols = np.arange(pts.shape[0])
    kk = tr.pin
    return z[kk, cols], tr.p[kk, cols], torus.wrap(pts + tr.theta[field.s_index])


def z_along(field, tr):
    """Integrate the value along traced characteristics; returns ``(K+1, N)``."""
    triple = field.triple
    H = triple.hamiltonian
    parts = field.Q_particles
    Q = tr.Q
    P = tr.p
    rhs = (np.sum(P * H.grad_p(Q, P), axis=-1) - H.value(Q, P)
           - triple.running_cost.value(Q, parts))
    z0 = triple.initial_cost.value(Q[0], parts[0])
    return z0[None] + cumulative_trapezoid(rhs, field.cfg.dt)


def _grid_size(field, m):
    if m is not None:
        return int(m)
    M, d = field.m, field.d
    mm = int(round(M ** (1.0 / d))) if M else 0
    if mm < 1 or mm ** d != M or not np.allclose(field.queries, torus.uniform_grid(mm, d)):
        raise InvalidInputError("field queries are not a uniform grid; pass m explicitly")
    return mm


def build_solution(field, m=None):
    """Assemble ``(U, V, X)`` on the ``m``-per-axis grid and the particle velocities."""
    m = _grid_size(field, m)
    grid = torus.uniform_grid(m, field.d)
    K = field.cfg.K
    M = grid.shape[0]
    U = np.empty((K + 1, M))
    V = np.empty((K + 1, M, field.d))
    X = np.empty((K + 1, M, field.d))
    for k in range(K + 1):
        tr = field.trace(grid, pin=k)
        U[k] = z_along(field, tr)[k]
        V[k] = tr.p[k]
        X[k] = torus.wrap(grid + tr.theta[field.s_index])
    H = field.triple.hamiltonian
    vel = H.grad_p(field.Q_particles, field.p_particles)
    return MfgSolution(field, m, grid, U, V, X, vel)


# ---------------------------------------------------------------------------
# grid differences


def grid_gradient(values, m, d):
    """Periodic centred differences over the trailing grid axis.

    ``values`` has shape ``(..., m**d)`` or ``(..., m**d, c)``; the result
    appends a derivative axis of length ``d``.
    """
    v = np.asarray(values)
    lead = v.shape[:-1] if v.shape[-1] == m ** d else v.shape[:-2]
    tail = () if v.shape[-1] == m ** d else v.shape[-1:]
    g = v.reshape(lead + (m,) * d + tail)
    h = 1.0 / m
    out = []
    for a in range(d):
        ax = len(lead) + a
        out.append((np.roll(g, -1, axis=ax) - np.roll(g, 1, axis=ax)) / (2 * h))
    res = np.stack(out, axis=-1)
    return res.reshape(lead + (m ** d,) + tail + (d,))


def hjb_residual(sol):
    """Sup over interior time nodes and the grid of ``|dU/dt + H(x, grad U) + F(x, sigma_t)|``."""
    f = sol.field
    K = sol.cfg.K
    dU = np.gradient(sol.U, sol.cfg.dt, axis=0, edge_order=2)
    gU = grid_gradient(sol.U, sol.m, f.d)
    x = np.broadcast_to(sol.grid, (K + 1,) + sol.grid.shape)
    res = (dU + f.triple.hamiltonian.value(x, gU)
           + f.triple.running_cost.value(x, f.Q_particles))
    return float(np.max(np.abs(res[1:K]), initial=0.0))


def trig_test_functions(d, cap=2):
    """``1`` and ``sin``/``cos(2 pi k.x)`` for nonzero ``|k|_inf <= cap`` up to sign."""
    funcs = [("one", lambda x: np.ones(x.shape[:-1]), lambda x: np.zeros(x.shape))]
    rng = range(-cap, cap + 1)
    for k in np.stack(np.meshgrid(*[rng] * d, indexing="ij"), -1).reshape(-1, d):
        nz = np.flatnonzero(k)
        if nz.size == 0 or k[nz[0]] < 0:
            continue
        kk = k.astype(float)
        name = ",".join(str(int(c)) for c in k)

        def s(x, kk=kk):
            return np.sin(2 * np.pi * (x @ kk))

        def ds(x, kk=kk):
            return (2 * np.pi * np.cos(2 * np.pi * (x @ kk)))[..., None] * kk

        def c(x, kk=kk):
            return np.cos(2 * np.pi * (x @ kk))

        def dc(x, kk=kk):
            return (-2 * np.pi * np.sin(2 * np.pi * (x @ kk)))[..., None] * kk

        funcs.append((f"sin({name})", s, ds))
        funcs.append((f"cos({name})", c, dc))
    return funcs


def continuity_residual(sol, test_functions=None, cap=2):
    """Max over test functions and interior nodes of the weak continuity residual."""
    f = sol.field
    Q = f.Q_particles
    v = sol.velocity
    dt = sol.cfg.dt
    K = sol.cfg.K
    funcs = test_functions or trig_test_functions(f.d, cap)
    worst = 0.0
    for _, phi, dphi in funcs:
        mass = np.mean(phi(Q), axis=-1)
        rate = (mass[2:] - mass[:-2]) / (2 * dt)
        flux = np.mean(np.sum(dphi(Q) * v, axis=-1), axis=-1)[1:K]
        worst = max(worst, float(np.max(np.abs(rate - flux), initial=0.0)))
    return worst


def gradient_identity_check(sol):
    """Sup of ``|grad U - V|`` over all time nodes and grid points."""
    gU = grid_gradient(sol.U, sol.m, sol.field.d)
    return float(np.max(np.linalg.norm(gU - sol.V, axis=-1), initial=0.0))


def symmetry_check(sol):
    """Max Frobenius norm of the antisymmetric part of the grid Jacobian of ``V``."""
    d = sol.field.d
    if d == 1:
        return 0.0
    J = grid_gradient(sol.V, sol.m, d)
    return float(np.max(np.linalg.norm(J - np.swapaxes(J, -1, -2), axis=(-2, -1)),
                        initial=0.0))


def quadratic_specialization_check(field, points, h=1e-4):
    """Pointwise spread between ``v_t``, ``V_t`` and ``grad U`` at interior nodes.

    ``v_t`` is the centred time difference of the pinned characteristic and
    ``grad U`` a central difference of the on-demand value with step ``h``.
    Meaningful for ``H = |p|^2 / 2`` where the three fields coincide.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    cfg = field.cfg
    N, d = pts.shape
    worst = 0.0
    for k in range(1, cfg.K):
        stencil = [pts]
        for b in range(d):
            e = np.zeros(d)
            e[b] = h
            stencil += [pts + e, pts - e]
        allp = np.concatenate(stencil)
        tr = field.trace(allp, pin=k)
        z = z_along(field, tr)[k].reshape(2 * d + 1, N)
        V = tr.p[k, :N]
        vel = (tr.theta[k + 1, :N] - tr.theta[k - 1, :N]) / (2 * cfg.dt)
        gU = np.stack([(z[1 + 2 * b] - z[2 + 2 * b]) / (2 * h) for b in range(d)], -1)
        spread = max(np.max(np.abs(vel - V)), np.max(np.abs(gU - V)),
                     np.max(np.abs(gU - vel)))
        worst = max(worst, float(spread))
    return worst


# ---------------------------------------------------------------------------
# flow identities


@dataclass
class FlowIdentityReport:
    t0: float
    composition: float
    inverse_forward: float
    inverse_backward: float
    momentum_field: float

    @property
    def worst(self):
        return max(self.composition, self.inverse_forward, self.inverse_backward,
                   self.momentum_field)


def flow_identity_check(triple, s, mu, t0, cfg, m=8, base=None):
    """Re-solve with parameters ``(t0, sigma_t0)`` and compare with ``(s, mu)``.

    Checks composition of the flows at every node, the two inverse relations
    between ``Sigma^1_t0[s, mu]`` and ``Sigma^1_s[t0, sigma_t0]`` and the
    agreement of the momentum fields on an ``m``-per-axis grid.
    """
    base = base or solve(triple, s, mu, None, cfg)
    k0 = cfg.index_of(t0)
    ks = cfg.index_of(s)
    other = solve(triple, t0, base.measure_at(k0), None, cfg)
    grid = torus.uniform_grid(m, base.d)
    probes = np.concatenate([base.particles, grid])

    tr = base.trace(probes)
    y = probes + tr.theta[k0]
    tr2 = other.trace(y)
    comp = max(float(np.max(np.abs(y[None] + tr2.theta - probes[None] - tr.theta))),
               float(np.max(np.abs(tr2.p - tr.p))))
    inv_f = float(np.max(torus.torus_dist(y + tr2.theta[ks], probes)))
    tr3 = other.trace(probes)
    w = probes + tr3.theta[ks]
    tr4 = base.trace(w)
    inv_b = float(np.max(torus.torus_dist(w + tr4.theta[k0], probes)))
    mom = 0.0
    for k in range(cfg.K + 1):
        a = base.trace(grid, pin=k).p[k]
        b = other.trace(grid, pin=k).p[k]
        mom = max(mom, float(np.max(np.abs(a - b))))
    return FlowIdentityReport(t0, comp, inv_f, inv_b, mom)


@dataclass
class UniquenessReport:
    t0: float
    value_gap: float
    measure_gap: float


def uniqueness_consistency(triple, s, mu, cfg, m=8, fractions=(0.25, 0.5), base=None):
    """Rebuild ``(U, sigma)`` from the re-solved field at ``t0 = s * fraction``."""
    base = base or solve(triple, s, mu, None, cfg)
    sol = build_solution(base, m)
    out = []
    for frac in fractions:
        t0 = s * frac
        k0 = cfg.index_of(t0)
        other = solve(triple, t0, base.measure_at(k0), None, cfg)
        sol2 = build_solution(other, m)
        ugap = float(np.max(np.abs(sol.U - sol2.U)))
        wgap = max(wasserstein(base.measure_at(k), other.measure_at(k)).distance
                   for k in range(cfg.K + 1))
        out.append(UniquenessReport(t0, ugap, float(wgap)))
    return out


def mass_conserved(sol):
    return all(mk.n == sol.field.n for mk in sol.sigma_path)


def initial_value_gap(sol):
    """``max |U(0, x) - g(x, sigma_0)|`` on the grid."""
    g = sol.triple.initial_cost.value(sol.grid, sol.field.Q_particles[0])
    return float(np.max(np.abs(sol.U[0] - g)))


def terminal_measure_gap(sol):
    """Wasserstein distance between ``sigma_s`` and ``mu``."""
    f = sol.field
    return wasserstein(f.measure_at(f.s_index), f.measure).distance


__all__ = [
    "MfgSolution", "build_solution", "value_at", "z_along", "grid_gradient",
    "hjb_residual", "continuity_residual", "trig_test_functions",
    "gradient_identity_check", "symmetry_check", "quadratic_specialization_check",
    "FlowIdentityReport", "flow_identity_check", "UniquenessReport",
    "uniqueness_consistency", "mass_conserved", "initial_value_gap",
    "terminal_measure_gap",
]
