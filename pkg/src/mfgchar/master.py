"""Full value function ``u(s, q, mu)`` on empirical measures and its derivatives.

``u(s, q, mu) = g(q, sigma_0) - int_0^s [H(q, V(tau, q)) + F(q, sigma_tau)] dtau``
where ``sigma`` and ``V`` come from the characteristic field with parameters
``(s, mu)``.  Measure derivatives are realised per particle: for
``mu = (1/n) sum_j delta_{x_j}`` the gradient at ``x_j`` is ``n d u / d x_j``.

The per-particle gradient is assembled from the pathwise gradients of the
couplings and of ``H(q, V)``, each built from the particle sensitivities of
the field.  A direct re-solve finite difference of ``u`` is provided as an
independent check.
"""

import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from .characteristics import MeasureSensitivity, solve
from .errors import InvalidInputError
from .measure import EmpiricalMeasure


def _measure(mu):
    return mu if isinstance(mu, EmpiricalMeasure) else EmpiricalMeasure(mu)


def _trap_weights(ks, dt):
    w = np.full(ks + 1, dt)
    if ks == 0:
        return np.zeros(1)
    w[0] = w[-1] = dt / 2
    return w


def evaluate_u(triple, s, q, mu, cfg, field=None):
    """Values of ``u(s, q, mu)`` at the points ``q`` (shape ``(N,)``)."""
    mu = _measure(mu)
    field = field or solve(triple, s, mu, None, cfg)
    ks = field.s_index
    pts = np.atleast_2d(np.asarray(q, dtype=float))
    N = pts.shape[0]
    # momentum field at (t_k, q) for k = 0..ks from characteristics pinned at t_k
    tr = field.trace(np.tile(pts, (ks + 1, 1)), pin=np.repeat(np.arange(ks + 1), N))
    V = tr.p[tr.pin, np.arange(tr.pin.size)].reshape(ks + 1, N, -1)
    parts = field.Q_particles[:ks + 1]
    qq = np.broadcast_to(pts, (ks + 1,) + pts.shape)
    integrand = triple.hamiltonian.value(qq, V) + triple.running_cost.value(qq, parts)
    g = triple.initial_cost.value(pts, parts[0])
    return g - _trap_weights(ks, field.cfg.dt) @ integrand


@dataclass
class GradQ:
    value: np.ndarray  # (N, d), momentum at time s
    fd: np.ndarray  # (N, d), central difference of u
    discrepancy: float
    tolerance: float

    @property
    def consistent(self):
        return self.discrepancy <= self.tolerance


def grad_q_u(triple, s, q, mu, cfg, field=None, warn=True):
    """``grad_q u`` as the momentum at ``t = s``, cross-checked against a central difference."""
    mu = _measure(mu)
    field = field or solve(triple, s, mu, None, cfg)
    pts = np.atleast_2d(np.asarray(q, dtype=float))
    N, d = pts.shape
    value = field.trace(pts).p[field.s_index]
    h = cfg.h_q
    stencil = []
    for b in range(d):
        e = np.zeros(d)
        e[b] = h
        stencil += [pts + e, pts - e]
    u = evaluate_u(triple, s, np.concatenate(stencil), mu, cfg, field).reshape(2 * d, N)
    fd = np.stack([(u[2 * b] - u[2 * b + 1]) / (2 * h) for b in range(d)], -1)
    disc = float(np.max(np.abs(fd - value)))
    tol = max(1e-5, 10 * h * h)
    if warn and disc > tol:
        warnings.warn(f"grad_q u cross-check discrepancy {disc:.2e} exceeds {tol:.1e}",
                      RuntimeWarning, stacklevel=2)
    return GradQ(value, fd, disc, tol)


@dataclass
class PathwiseGradientSample:
    """Per-particle gradients along the time grid for one ``(q, j)``.

    Arrays are indexed by time node; ``sigma_sensitivities`` holds the
    ``n d Sigma / d x_j`` blocks used, as ``(d, K+1, n, 2d)`` at the particles.
    """

    times: np.ndarray
    q: np.ndarray
    j: int
    N_F: np.ndarray  # (K+1, d)
    N_g: np.ndarray  # (d,)
    nabla_mu_H: np.ndarray  # (K+1, d)
    sigma_sensitivities: np.ndarray = dc_field(repr=False)

    def at(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        return self.N_F[k], self.N_g, self.nabla_mu_H[k]

    @property
    def finite(self):
        return bool(np.all(np.isfinite(self.N_F)) and np.all(np.isfinite(self.N_g))
                    and np.all(np.isfinite(self.nabla_mu_H)))


class MasterContext:
    """Shared solves for repeated master-equation evaluations at ``(s, mu)``."""

    def __init__(self, triple, s, mu, cfg):
        self.triple = triple
        self.s = s
        self.mu = _measure(mu)
        self.cfg = cfg
        self.field = solve(triple, s, self.mu, None, cfg)
        self.sens = MeasureSensitivity(triple, s, self.mu, cfg)
        self._particle_cache = None

    @property
    def n(self):
        return self.mu.n

    @property
    def d(self):
        return self.mu.d

    def _particles(self):
        if self._particle_cache is None:
            x = np.array(self.mu.particles)
            tr = self.field.trace(x)
            J1, _ = self.field.jacobian_path(x)
            self._particle_cache = (x, x[None] + tr.theta, J1)
        return self._particle_cache

    def _coupling_term(self, coupling, q, j, S1, kmax):
        """``n d/dx_j`` of ``coupling(q, sigma_t)`` for ``t_0..t_kmax``, shape ``(kmax+1, d)``."""
        x, Y, J1 = self._particles()
        n = self.n
        Yk = Y[:kmax + 1]
        qq = np.broadcast_to(q, (kmax + 1, 1, self.d))
        gm = coupling.wasserstein_grad(qq, Yk)[:, 0]  # (k, n, d)
        own = np.einsum("kc,kca->ka", gm[:, j], J1[:kmax + 1, j])
        through = np.einsum("krc,akrc->ka", gm, S1[:, :kmax + 1]) / n
        return own + through

    def pathwise(self, q, j):
        q = np.asarray(q, dtype=float).reshape(self.d)
        field = self.field
        K, d = self.cfg.K, self.d
        x, _, _ = self._particles()
        S1, S2 = self.sens.derivative(j, x)
        N_F = self._coupling_term(self.triple.running_cost, q, j, S1, K)
        N_g = self._coupling_term(self.triple.initial_cost, q, j, S1, 0)[0]

        # measure derivative of H(q, V(t, q)) through the momentum field
        ks = np.arange(K + 1)
        trq = field.trace(np.tile(q, (K + 1, 1)), pin=ks)
        V = trq.p[ks, ks]
        X = q[None] + trq.theta[field.s_index]
        J1, J2 = field.jacobian_path(X)
        J1, J2 = J1[ks, ks], J2[ks, ks]
        D1, D2 = self.sens.derivative(j, X)
        D1 = D1[:, ks, ks]  # (a, k, d)
        D2 = D2[:, ks, ks]
        dX = -np.linalg.solve(J1[None], D1[..., None])[..., 0]
        dV = D2 + np.einsum("kcb,akb->akc", J2, dX)
        gp = self.triple.hamiltonian.grad_p(q[None], V)  # (k, d)
        nabla_H = np.einsum("kc,akc->ka", gp, dV)
        sens = np.concatenate([S1, S2], axis=-1)
        return PathwiseGradientSample(field.times, q, j, N_F, N_g, nabla_H, sens)

    def upsilon(self, q, j):
        """Per-particle gradient of ``u(s, q, .)`` at ``x_j`` from the pathwise pieces."""
        pg = self.pathwise(q, j)
        ks = self.field.s_index
        w = _trap_weights(ks, self.cfg.dt)
        return pg.N_g - w @ (pg.nabla_mu_H[:ks + 1] + pg.N_F[:ks + 1])

    def upsilon_fd(self, q, j):
        """``n d u / d x_j`` by re-solving at ``x_j +- h_x e_a``."""
        q = np.atleast_2d(np.asarray(q, dtype=float))
        out = np.empty(self.d)
        for a, (plus, minus) in enumerate(self.sens.perturbed_fields(j)):
            up = evaluate_u(self.triple, self.s, q, plus.measure, self.cfg, plus)[0]
            um = evaluate_u(self.triple, self.s, q, minus.measure, self.cfg, minus)[0]
            out[a] = self.n * (up - um) / (2 * self.cfg.h_x)
        return out

    def coupling_fd(self, q, j, which="F"):
        """``n d/dx_j`` of ``F(q, sigma_t)`` (or ``g`` at ``t = 0``) by re-solve, ``(K+1, d)``."""
        coupling = self.triple.running_cost if which == "F" else self.triple.initial_cost
        q = np.asarray(q, dtype=float).reshape(1, 1, self.d)
        vals = []
        for plus, minus in self.sens.perturbed_fields(j):
            K1 = self.cfg.K + 1
            qq = np.broadcast_to(q[0], (K1, 1, self.d))
            fp = coupling.value(qq, plus.Q_particles)[:, 0]
            fm = coupling.value(qq, minus.Q_particles)[:, 0]
            vals.append(self.n * (fp - fm) / (2 * self.cfg.h_x))
        out = np.stack(vals, -1)
        return out if which == "F" else out[0]

    def partial_s(self, q):
        """Central difference of ``u`` in ``s`` with step equal to the grid step."""
        cfg = self.cfg
        ds = cfg.dt
        if self.s - ds < -1e-12 or self.s + ds > cfg.T + 1e-12:
            raise InvalidInputError("partial_s needs s +- dt inside [0, T]")
        q = np.atleast_2d(np.asarray(q, dtype=float))
        up = evaluate_u(self.triple, self.s + ds, q, self.mu, cfg)
        um = evaluate_u(self.triple, self.s - ds, q, self.mu, cfg)
        return (up - um) / (2 * ds)

    def residual(self, q, upsilons=None):
        """Master-equation residual at ``q`` with the pathwise per-particle gradients."""
        q = np.asarray(q, dtype=float).reshape(self.d)
        field = self.field
        H = self.triple.hamiltonian
        x = np.array(self.mu.particles)
        if upsilons is None:
            upsilons = np.stack([self.upsilon(q, j) for j in range(self.n)])
        P_part = field.trace(x).p[field.s_index]
        transport = np.mean(np.sum(upsilons * H.grad_p(x, P_part), axis=-1))
        p_q = field.trace(q[None]).p[field.s_index, 0]
        ds_u = self.partial_s(q[None])[0]
        f = self.triple.running_cost.value(q[None], x)[0]
        return float(ds_u + transport + H.value(q, p_q) + f)


@dataclass
class MasterEvaluation:
    s: float
    q: np.ndarray
    mu: EmpiricalMeasure
    u: float
    grad_q_u: np.ndarray
    grad_mu_u: np.ndarray  # (n, d)
    partial_s_u: float
    residual: float
    grad_mu_u_fd: np.ndarray = None
    grad_q_fd_discrepancy: float = 0.0

    @property
    def upsilon_rel_error(self):
        if self.grad_mu_u_fd is None:
            return None
        scale = max(float(np.max(np.abs(self.grad_mu_u_fd))), 1e-300)
        return float(np.max(np.abs(self.grad_mu_u - self.grad_mu_u_fd))) / scale


def evaluate_master(triple, s, q, mu, cfg, with_fd=False, context=None):
    """All master-equation quantities at ``(s, q, mu)``."""
    ctx = context or MasterContext(triple, s, mu, cfg)
    q = np.asarray(q, dtype=float).reshape(ctx.d)
    u = float(evaluate_u(triple, s, q[None], ctx.mu, cfg, ctx.field)[0])
    gq = grad_q_u(triple, s, q[None], ctx.mu, cfg, ctx.field)
    ups = np.stack([ctx.upsilon(q, j) for j in range(ctx.n)])
    res = ctx.residual(q, ups)
    ds_u = float(ctx.partial_s(q[None])[0])
    fd = np.stack([ctx.upsilon_fd(q, j) for j in range(ctx.n)]) if with_fd else None
    return MasterEvaluation(s, q, ctx.mu, u, gq.value[0], ups, ds_u, res, fd,
                            gq.discrepancy)


def pathwise_gradients(triple, s, mu, q, t, j, cfg, context=None):
    ctx = context or MasterContext(triple, s, mu, cfg)
    sample = ctx.pathwise(q, j)
    cfg.index_of(t)
    return sample


def upsilon(triple, s, q, mu, j, cfg, context=None):
    ctx = context or MasterContext(triple, s, mu, cfg)
    return ctx.upsilon(q, j)


def upsilon_fd(triple, s, q, mu, j, cfg, context=None):
    ctx = context or MasterContext(triple, s, mu, cfg)
    return ctx.upsilon_fd(q, j)


def partial_s_u(triple, s, q, mu, cfg):
    mu = _measure(mu)
    ds = cfg.dt
    if s - ds < -1e-12 or s + ds > cfg.T + 1e-12:
        raise InvalidInputError("partial_s needs s +- dt inside [0, T]")
    q = np.atleast_2d(np.asarray(q, dtype=float))
    return (evaluate_u(triple, s + ds, q, mu, cfg)
            - evaluate_u(triple, s - ds, q, mu, cfg)) / (2 * ds)


def master_residual(triple, s, q, mu, cfg, context=None):
    ctx = context or MasterContext(triple, s, mu, cfg)
    return ctx.residual(q)


def flow_consistency(triple, s, mu, q, cfg, nodes=None):
    """Residual of ``d/dt u(t, q, sigma_t) + H(q, grad_q u) + F(q, sigma_t)`` along the path.

    Each ``u(t_k, q, sigma_k)`` comes from a fresh solve with parameters
    ``(t_k, sigma_k)``; returns the max over the interior ``nodes``.
    """
    mu = _measure(mu)
    base = solve(triple, s, mu, None, cfg)
    q = np.atleast_2d(np.asarray(q, dtype=float))
    K = cfg.K
    nodes = list(range(1, K)) if nodes is None else list(nodes)
    cache = {}

    def at(k):
        if k not in cache:
            sigma = base.measure_at(k)
            f = solve(triple, k * cfg.dt, sigma, None, cfg)
            u = evaluate_u(triple, k * cfg.dt, q, sigma, cfg, f)
            p = f.trace(q).p[k]
            cache[k] = (u, p, sigma)
        return cache[k]

    worst = 0.0
    for k in nodes:
        if not 1 <= k <= K - 1:
            raise InvalidInputError("nodes must be interior time indices")
        du = (at(k + 1)[0] - at(k - 1)[0]) / (2 * cfg.dt)
        _, p, sigma = at(k)
        r = (du + triple.hamiltonian.value(q, p)
             + triple.running_cost.value(q, sigma.particles))
        worst = max(worst, float(np.max(np.abs(r))))
    return worst
