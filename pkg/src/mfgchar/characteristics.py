"""Characteristic fixed point for the Hamiltonian system with parameters (s, mu).

For a point ``q`` the characteristic ``(Q, P)`` on ``[0, T]`` satisfies::

    Q(t) = q + int_s^t grad_p H(Q, P) dtau
    P(t) = grad_q g(Q(0), Q(0)#mu) - int_0^t [grad_q H(Q, P) + grad_q F(Q, Q(tau)#mu)] dtau

where ``Q(tau)#mu`` is formed from the particle characteristics.  Time
integrals are composite trapezoid sums on the uniform grid ``t_k = k T / K``
and the map is iterated from ``(q, 0)`` until the sup-norm change, measured
in the scaled variables ``(Q, P / theta)``, drops below the tolerance.

Positions are carried as displacements ``Theta = Q - q`` so that spatial
finite differences do not cancel the identity part.
"""

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import torus
from .errors import DivergenceError, InvalidInputError, NoConvergenceError
from .measure import EmpiricalMeasure


@dataclass(frozen=True)
class SolverConfig:
    T: float = 0.1
    s: float = 0.1
    K: int = 40
    tol_fixed_point: float = 1e-12
    max_iters: int = 200
    h_q: float = 1e-5
    h_x: float = 1e-4
    newton_tol: float = 1e-12
    newton_max_iters: int = 30
    divergence_window: int = 5
    # cap on elements of the (time, point, particle, d) work arrays
    chunk_elements: int = 2_000_000

    def __post_init__(self):
        if not (self.T > 0 and np.isfinite(self.T)):
            raise InvalidInputError("T must be positive")
        if not (0.0 <= self.s <= self.T * (1 + 1e-12)):
            raise InvalidInputError("s must lie in [0, T]")
        if self.K < 2:
            raise InvalidInputError("K must be at least 2")
        for name in ("tol_fixed_point", "h_q", "h_x", "newton_tol"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.max_iters < 1 or self.newton_max_iters < 1:
            raise InvalidInputError("iteration caps must be positive")
        self.index_of(self.s)

    @property
    def dt(self):
        return self.T / self.K

    @property
    def times(self):
        return np.arange(self.K + 1) * self.dt

    def index_of(self, t):
        """Grid index of time ``t``; raises when ``t`` is not a grid node."""
        k = int(round(t / self.dt))
        if k < 0 or k > self.K or abs(k * self.dt - t) > 1e-9 * max(1.0, self.T):
            raise InvalidInputError(f"time {t!r} is not on the grid T/K*k (K={self.K})")
        return k

    def with_(self, **changes):
        return replace(self, **changes)


class Trajectory(NamedTuple):
    """Characteristics of a batch of points; arrays are ``(K+1, N, d)``."""

    starts: np.ndarray
    pin: np.ndarray
    theta: np.ndarray
    p: np.ndarray

    @property
    def Q(self):
        return self.starts[None] + self.theta

    def at(self, k):
        """``(Q, P)`` at per-point time indices ``k`` (scalar or ``(N,)``)."""
        k = np.broadcast_to(np.asarray(k), self.pin.shape)
        cols = np.arange(self.pin.shape[0])
        return self.starts + self.theta[k, cols], self.p[k, cols]


@dataclass
class IterationLog:
    diffs: list = field(default_factory=list)
    ratios: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.diffs)


def cumulative_trapezoid(a, dt):
    """Running trapezoid integral along axis 0, starting at zero."""
    out = np.empty_like(a)
    out[0] = 0.0
    np.cumsum(0.5 * (a[1:] + a[:-1]), axis=0, out=out[1:])
    out[1:] *= dt
    return out


def _operator(triple, dt, starts, pin, theta, P, particles):
    """One application of the characteristic map; returns ``(Theta, P)``."""
    H = triple.hamiltonian
    Q = starts[None] + theta
    A = H.grad_p(Q, P)
    B = H.grad_q(Q, P) + triple.running_cost.grad_q(Q, particles)
    CA = cumulative_trapezoid(A, dt)
    theta_new = CA - CA[pin, np.arange(starts.shape[0])][None]
    G = triple.initial_cost.grad_q(Q[0], particles[0])
    P_new = G[None] - cumulative_trapezoid(B, dt)
    return theta_new, P_new


def _iterate(triple, cfg, starts, pin, n_coupled=0, frozen=None, polish=False,
             log=None):
    """Picard iteration from ``(q, 0)``.

    With ``frozen=None`` the first ``n_coupled`` rows are the particles whose
    images form the measure path; otherwise ``frozen`` (``(K+1, n, d)``
    lifted particle positions) supplies it and every row is independent.
    """
    K, dt, th = cfg.K, cfg.dt, triple.theta
    N, d = starts.shape
    theta = np.zeros((K + 1, N, d))
    P = np.zeros((K + 1, N, d))
    log = log if log is not None else IterationLog()
    prev = None
    converged = False
    extra = 0
    for _ in range(cfg.max_iters + (10 if polish else 0)):
        particles = starts[None, :n_coupled] + theta[:, :n_coupled] if frozen is None else frozen
        theta_new, P_new = _operator(triple, dt, starts, pin, theta, P, particles)
        if not (np.all(np.isfinite(theta_new)) and np.all(np.isfinite(P_new))):
            raise DivergenceError("non-finite value in characteristic iteration",
                                  log.diffs, log.ratios)
        diff = max(float(np.max(np.abs(theta_new - theta), initial=0.0)),
                   float(np.max(np.abs(P_new - P), initial=0.0)) / th)
        if converged:
            # polishing past the tolerance; stop at the round-off floor
            if diff >= 0.5 * prev:
                break
            theta, P = theta_new, P_new
            prev = diff
            extra += 1
            if diff == 0.0 or extra >= 10:
                break
            continue
        log.diffs.append(diff)
        if prev is not None and prev > 0:
            log.ratios.append(diff / prev)
        theta, P = theta_new, P_new
        prev = diff
        if diff < cfg.tol_fixed_point:
            converged = True
            if not polish or diff == 0.0:
                break
            continue
        w = cfg.divergence_window
        if len(log.ratios) >= w and all(r >= 1.0 for r in log.ratios[-w:]):
            raise DivergenceError(
                f"{w} consecutive contraction ratios >= 1; T is likely too large",
                log.diffs, log.ratios)
        if log.iterations >= cfg.max_iters:
            break
    if not converged:
        raise NoConvergenceError(
            f"no convergence after {log.iterations} iterations "
            f"(last diff {log.diffs[-1]:.3e})", log.diffs, log.ratios)
    return theta, P, log


@dataclass(frozen=True)
class Candidate:
    """Values ``(Q, P)`` on the grid for tracked points; particles come first."""

    starts: np.ndarray
    n_particles: int
    s_index: int
    Q: np.ndarray
    P: np.ndarray


def apply_operator(candidate, triple, cfg):
    """Apply the characteristic map once to ``candidate``.

    The measure path is read from the particle rows of the candidate.
    """
    Q = np.asarray(candidate.Q, dtype=float)
    P = np.asarray(candidate.P, dtype=float)
    starts = np.asarray(candidate.starts, dtype=float)
    if Q.shape != (cfg.K + 1,) + starts.shape or P.shape != Q.shape:
        raise InvalidInputError("candidate arrays must have shape (K+1, N, d)")
    theta = Q - starts[None]
    pin = np.full(starts.shape[0], candidate.s_index)
    particles = Q[:, :candidate.n_particles]
    theta_new, P_new = _operator(triple, cfg.dt, starts, pin, theta, P, particles)
    if not (np.all(np.isfinite(theta_new)) and np.all(np.isfinite(P_new))):
        raise DivergenceError("non-finite value in characteristic map")
    return Candidate(starts, candidate.n_particles, candidate.s_index,
                     starts[None] + theta_new, P_new)


def scaled_distance(a, b, theta):
    """Sup-norm distance between two candidates in ``(Q, P / theta)``."""
    return max(float(np.max(np.abs(a.Q - b.Q), initial=0.0)),
               float(np.max(np.abs(a.P - b.P), initial=0.0)) / theta)


class CharacteristicField:
    """Converged characteristics for parameters ``(s, mu)``.

    Particles are held in canonical (sorted) order so that the result does not
    depend on how the caller labelled them; ``user_index`` maps the caller's
    particle index to the stored row.
    """

    def __init__(self, triple, cfg, s_index, measure, order, queries,
                 theta_particles, p_particles, theta_queries, p_queries, log):
        self.triple = triple
        self.cfg = cfg
        self.s_index = s_index
        self.measure = measure
        self.order = order
        self.queries = queries
        self.theta_particles = theta_particles
        self.p_particles = p_particles
        self.theta_queries = theta_queries
        self.p_queries = p_queries
        self.log = log
        self._inverse_order = np.argsort(order)

    # -- basic geometry --------------------------------------------------
    @property
    def s(self):
        return self.s_index * self.cfg.dt

    @property
    def times(self):
        return self.cfg.times

    @property
    def K(self):
        return self.cfg.K

    @property
    def n(self):
        return self.measure.n

    @property
    def d(self):
        return self.measure.d

    @property
    def m(self):
        return self.queries.shape[0]

    @property
    def particles(self):
        return self.measure.particles

    @property
    def iterations(self):
        return self.log.iterations

    def user_index(self, j):
        """Stored row of the caller's particle ``j``."""
        return int(self._inverse_order[j])

    @property
    def Q_particles(self):
        """Lifted particle characteristics, ``(K+1, n, d)``, canonical order."""
        return self.particles[None] + self.theta_particles

    @property
    def Q_queries(self):
        return self.queries[None] + self.theta_queries

    def sigma1(self):
        """Wrapped positions of all tracked points (particles then queries)."""
        Q = np.concatenate([self.Q_particles, self.Q_queries], axis=1)
        return torus.wrap(Q)

    def sigma2(self):
        return np.concatenate([self.p_particles, self.p_queries], axis=1)

    def tracked_starts(self):
        return np.concatenate([self.particles, self.queries], axis=0)

    def tracked_theta(self):
        return np.concatenate([self.theta_particles, self.theta_queries], axis=1)

    def measure_at(self, k):
        """Pushed-forward measure ``Sigma^1_{t_k} # mu`` (canonical order)."""
        return EmpiricalMeasure(self.Q_particles[k])

    def candidate(self):
        starts = self.tracked_starts()
        return Candidate(starts, self.n, self.s_index,
                         starts[None] + self.tracked_theta(), self.sigma2())

    # -- evaluation off the tracked set ----------------------------------
    def trace(self, points, pin=None):
        """Characteristics of arbitrary points with the particle path frozen.

        ``pin`` is the grid index at which ``Q`` equals the given point
        (default ``s``).  Pinning at ``k`` makes ``Q(s)`` the preimage of the
        point under ``Sigma^1_{t_k}``.
        """
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(1, -1)
        if pts.shape[-1] != self.d:
            raise InvalidInputError("point dimension does not match the field")
        N = pts.shape[0]
        pin = np.broadcast_to(np.asarray(self.s_index if pin is None else pin,
                                         dtype=int), (N,)).copy()
        K = self.cfg.K
        theta = np.empty((K + 1, N, self.d))
        P = np.empty((K + 1, N, self.d))
        frozen = self.Q_particles
        per_point = (K + 1) * max(self.n, 1) * self.d
        chunk = max(1, self.cfg.chunk_elements // per_point)
        for lo in range(0, N, chunk):
            hi = min(N, lo + chunk)
            th, pp, _ = _iterate(self.triple, self.cfg, pts[lo:hi], pin[lo:hi],
                                 frozen=frozen, polish=True)
            theta[:, lo:hi] = th
            P[:, lo:hi] = pp
        return Trajectory(pts, pin, theta, P)

    def jacobian_path(self, points, h=None):
        """Central-difference ``grad_q Sigma^1`` and ``grad_q Sigma^2`` at every node.

        Returns two arrays of shape ``(K+1, N, d, d)`` with entry
        ``[k, i, a, b] = d Sigma_a(t_k, q_i) / d q_b``.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        h = self.cfg.h_q if h is None else h
        N, d = pts.shape
        stencil = []
        for b in range(d):
            e = np.zeros(d)
            e[b] = h
            stencil += [pts + e, pts - e]
        tr = self.trace(np.concatenate(stencil))
        th = tr.theta.reshape(self.cfg.K + 1, 2 * d, N, d)
        pp = tr.p.reshape(self.cfg.K + 1, 2 * d, N, d)
        J1 = np.stack([(th[:, 2 * b] - th[:, 2 * b + 1]) / (2 * h) for b in range(d)], -1)
        J2 = np.stack([(pp[:, 2 * b] - pp[:, 2 * b + 1]) / (2 * h) for b in range(d)], -1)
        return J1 + np.eye(d), J2

    def jacobians(self, points, k, h=None):
        """Jacobians at time index ``k`` (scalar or per point), shape ``(N, d, d)``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        J1, J2 = self.jacobian_path(pts, h)
        k = np.broadcast_to(np.asarray(k, dtype=int), (pts.shape[0],))
        cols = np.arange(pts.shape[0])
        return J1[k, cols], J2[k, cols]

    def __repr__(self):
        return (f"CharacteristicField(s={self.s:g}, n={self.n}, m={self.m}, d={self.d}, "
                f"K={self.K}, iterations={self.iterations})")


def solve(triple, s, mu, queries=None, cfg=None):
    """Fixed point of the characteristic map for parameters ``(s, mu)``.

    Raises :class:`NoConvergenceError` (or its subclass
    :class:`DivergenceError`) with the ratio history when the iteration does
    not contract, which signals that ``T`` is too large for the coefficients.
    """
    cfg = cfg or SolverConfig()
    s = cfg.s if s is None else s
    s_index = cfg.index_of(s)
    if not isinstance(mu, EmpiricalMeasure):
        mu = EmpiricalMeasure(mu)
    order = mu.canonical_order()
    measure = mu.permuted(order)
    if queries is None:
        queries = np.zeros((0, mu.d))
    queries = torus.wrap(np.asarray(queries, dtype=float).reshape(-1, mu.d)) \
        if np.size(queries) else np.zeros((0, mu.d))
    starts = np.concatenate([measure.particles, queries], axis=0)
    pin = np.full(starts.shape[0], s_index)
    theta, P, log = _iterate(triple, cfg, starts, pin, n_coupled=measure.n)
    n = measure.n
    return CharacteristicField(triple, cfg, s_index, measure, order, queries,
                               theta[:, :n], P[:, :n], theta[:, n:], P[:, n:], log)


# ---------------------------------------------------------------------------
# Diagnostics


@dataclass(frozen=True)
class ContractionReport:
    ratios: tuple
    max_ratio: float

    @property
    def contractive(self):
        return all(r < 1.0 for r in self.ratios)


def contraction_report(field_or_log):
    """Successive ratios ``|Z^{k+1} - Z^k| / |Z^k - Z^{k-1}|`` of the solve."""
    log = getattr(field_or_log, "log", field_or_log)
    ratios = tuple(float(r) for r in log.ratios)
    return ContractionReport(ratios, max(ratios) if ratios else 0.0)


@dataclass
class BoundsLedger:
    observed: dict
    caps: dict
    violations: list

    @property
    def finite(self):
        return all(np.isfinite(v) for v in self.observed.values())


def _fro(a, naxes):
    return np.sqrt(np.sum(a * a, axis=tuple(range(-naxes, 0))))


def bounds_audit(field, caps=None, h2=1e-3):
    """Finite-difference sup norms of the field and its derivatives.

    Spatial derivatives are taken at every tracked point; ``h2`` is the step
    for second derivatives.  ``caps`` maps ledger keys to declared bounds.
    """
    cfg = field.cfg
    dt = cfg.dt
    starts = field.tracked_starts()
    # time derivatives of the displacement equal those of Sigma^1 and avoid
    # rounding from the absolute positions
    Q = field.tracked_theta()
    P = field.sigma2()
    obs = {}
    obs["sup_sigma2"] = float(np.max(np.linalg.norm(P, axis=-1), initial=0.0))
    dQ = np.gradient(Q, dt, axis=0, edge_order=2)
    dP = np.gradient(P, dt, axis=0, edge_order=2)
    obs["sup_dt_sigma1"] = float(np.max(np.linalg.norm(dQ, axis=-1), initial=0.0))
    obs["sup_dt_sigma2"] = float(np.max(np.linalg.norm(dP, axis=-1), initial=0.0))
    d2Q = (Q[2:] - 2 * Q[1:-1] + Q[:-2]) / dt ** 2
    d2P = (P[2:] - 2 * P[1:-1] + P[:-2]) / dt ** 2
    obs["sup_dtt_sigma"] = float(np.sqrt(np.max(
        np.sum(d2Q * d2Q, -1) + np.sum(d2P * d2P, -1), initial=0.0)))

    d = field.d
    N = starts.shape[0]
    h = cfg.h_q
    # first derivatives with step h, second with h2 on a 3x3 stencil per pair
    stencil = [starts]
    for b in range(d):
        e = np.zeros(d)
        e[b] = h
        stencil += [starts + e, starts - e]
    offsets = []
    for a in range(d):
        for b in range(d):
            for sa in (1, -1):
                for sb in (1, -1):
                    e = np.zeros(d)
                    e[a] += sa * h2
                    e[b] += sb * h2
                    offsets.append(e)
    for e in offsets:
        stencil.append(starts + e)
    tr = field.trace(np.concatenate(stencil))
    th = tr.theta.reshape(cfg.K + 1, -1, N, d)
    pp = tr.p.reshape(cfg.K + 1, -1, N, d)
    J1 = np.empty((cfg.K + 1, N, d, d))
    J2 = np.empty((cfg.K + 1, N, d, d))
    for b in range(d):
        J1[..., b] = (th[:, 1 + 2 * b] - th[:, 2 + 2 * b]) / (2 * h)
        J2[..., b] = (pp[:, 1 + 2 * b] - pp[:, 2 + 2 * b]) / (2 * h)
    J1 += np.eye(d)
    obs["sup_grad_sigma1"] = float(np.max(_fro(J1, 2), initial=0.0))
    obs["sup_grad_sigma2"] = float(np.max(_fro(J2, 2), initial=0.0))
    base = 1 + 2 * d
    H1 = np.empty((cfg.K + 1, N, d, d, d))
    H2 = np.empty((cfg.K + 1, N, d, d, d))
    idx = 0
    for a in range(d):
        for b in range(d):
            vals1 = [th[:, base + idx + i] for i in range(4)]
            vals2 = [pp[:, base + idx + i] for i in range(4)]
            idx += 4
            if a == b:
                # stencil degenerates to q +- 2 h2 e_a
                c1 = th[:, 0]
                c2 = pp[:, 0]
                H1[..., a, b] = (vals1[0] - 2 * c1 + vals1[3]) / (4 * h2 ** 2)
                H2[..., a, b] = (vals2[0] - 2 * c2 + vals2[3]) / (4 * h2 ** 2)
            else:
                H1[..., a, b] = (vals1[0] - vals1[1] - vals1[2] + vals1[3]) / (4 * h2 ** 2)
                H2[..., a, b] = (vals2[0] - vals2[1] - vals2[2] + vals2[3]) / (4 * h2 ** 2)
    obs["sup_hess_sigma1"] = float(np.max(_fro(H1, 3), initial=0.0))
    obs["sup_hess_sigma2"] = float(np.max(_fro(H2, 3), initial=0.0))

    caps = dict(caps or {})
    violations = [k for k, v in caps.items() if k in obs and obs[k] > v]
    unknown = [k for k in caps if k not in obs]
    if unknown:
        raise InvalidInputError(f"unknown ledger keys: {unknown}")
    return BoundsLedger(obs, caps, violations)


# ---------------------------------------------------------------------------
# Finite-particle sensitivities


class MeasureSensitivity:
    """Central differences of the field with respect to one particle.

    For particle ``j`` and direction ``a`` the measure is re-solved at
    ``x_j +- h_x e_a``; the returned derivatives are scaled by ``n`` and
    evaluated at fixed points, so they capture only the dependence through
    the measure.
    """

    def __init__(self, triple, s, mu, cfg):
        self.triple = triple
        self.cfg = cfg
        self.s = s
        self.mu = mu if isinstance(mu, EmpiricalMeasure) else EmpiricalMeasure(mu)
        self._fields = {}

    def perturbed_fields(self, j):
        if j not in self._fields:
            h = self.cfg.h_x
            pairs = []
            for a in range(self.mu.d):
                out = []
                for sign in (1.0, -1.0):
                    x = np.array(self.mu.particles)
                    x[j, a] += sign * h
                    out.append(solve(self.triple, self.s, EmpiricalMeasure(x), None, self.cfg))
                pairs.append(tuple(out))
            self._fields[j] = pairs
        return self._fields[j]

    def derivative(self, j, points, pin=None):
        """``n d/dx_j^a`` of ``(Sigma^1, Sigma^2)`` at fixed ``points``.

        Returns two arrays of shape ``(d, K+1, N, d)`` indexed by perturbation
        direction, time, point and component.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n, h = self.mu.n, self.cfg.h_x
        d1, d2 = [], []
        for plus, minus in self.perturbed_fields(j):
            tp = plus.trace(pts, pin)
            tm = minus.trace(pts, pin)
            d1.append(n * (tp.theta - tm.theta) / (2 * h))
            d2.append(n * (tp.p - tm.p) / (2 * h))
        return np.stack(d1), np.stack(d2)


def particle_sensitivity(triple, s, mu, j, t, q, cfg, sensitivity=None):
    """Estimate of ``n grad_{x_j} Sigma(t, q)`` as a ``(d, 2d)`` matrix.

    Row ``a`` holds the derivative in the direction of ``x_j^a``; the first
    ``d`` columns are the ``Sigma^1`` components, the rest ``Sigma^2``.
    """
    sens = sensitivity or MeasureSensitivity(triple, s, mu, cfg)
    k = cfg.index_of(t)
    d1, d2 = sens.derivative(j, np.atleast_2d(q))
    return np.concatenate([d1[:, k, 0, :], d2[:, k, 0, :]], axis=-1)


@dataclass(frozen=True)
class TaylorReport:
    scales: tuple
    max_ratios: tuple

    @property
    def worst(self):
        return max(self.max_ratios)


def taylor_remainder_check(triple, s, mu, cfg, t=None, q=None, trials=6,
                           scales=(1e-2, 5e-3, 2.5e-3), seed=0, vary=("t", "q", "x")):
    """First-order expansion remainder of ``Sigma`` divided by the squared increment.

    The expansion uses grid differences for ``d/dt``, central differences for
    ``grad_q`` and the particle sensitivities for ``grad_x``.  Time increments
    are rounded to whole grid steps.
    """
    if not isinstance(mu, EmpiricalMeasure):
        mu = EmpiricalMeasure(mu)
    n, d = mu.n, mu.d
    rng = np.random.default_rng(seed)
    base = solve(triple, s, mu, None, cfg)
    kt = cfg.index_of(cfg.T / 2 if t is None else t)
    kt = min(max(kt, 1), cfg.K - 1)
    q0 = np.full(d, 0.3) if q is None else np.asarray(q, dtype=float).reshape(d)
    tr = base.trace(q0[None])
    dt = cfg.dt
    dQt = (tr.theta[kt + 1, 0] - tr.theta[kt - 1, 0]) / (2 * dt)
    dPt = (tr.p[kt + 1, 0] - tr.p[kt - 1, 0]) / (2 * dt)
    J1, J2 = base.jacobians(q0[None], kt)
    J1, J2 = J1[0], J2[0]
    use_x = "x" in vary and triple.measure_dependent
    S1 = np.zeros((n, d, d))
    S2 = np.zeros((n, d, d))
    if use_x:
        sens = MeasureSensitivity(triple, s, mu, cfg)
        for j in range(n):
            a1, a2 = sens.derivative(j, q0[None])
            S1[j] = a1[:, kt, 0, :].T
            S2[j] = a2[:, kt, 0, :].T
    ratios = []
    for eps in scales:
        worst = 0.0
        for _ in range(trials):
            v = rng.normal(size=1 + d + n * d)
            if "t" not in vary:
                v[0] = 0.0
            if "q" not in vary:
                v[1:1 + d] = 0.0
            if "x" not in vary:
                v[1 + d:] = 0.0
            v *= eps / np.linalg.norm(v)
            steps = int(round(v[0] / dt))
            k2 = min(max(kt + steps, 0), cfg.K)
            dtau = (k2 - kt) * dt
            dq = v[1:1 + d]
            dx = v[1 + d:].reshape(n, d)
            if np.any(dx):
                field2 = solve(triple, s, EmpiricalMeasure(mu.particles + dx), None, cfg)
            else:
                field2 = base
            tr2 = field2.trace((q0 + dq)[None])
            pred1 = tr.theta[kt, 0] + dQt * dtau + (J1 - np.eye(d)) @ dq
            pred2 = tr.p[kt, 0] + dPt * dtau + J2 @ dq
            if use_x:
                pred1 = pred1 + np.einsum("jab,jb->a", S1, dx) / n
                pred2 = pred2 + np.einsum("jab,jb->a", S2, dx) / n
            r1 = tr2.theta[k2, 0] - pred1
            r2 = tr2.p[k2, 0] - pred2
            rem = np.sqrt(np.sum(r1 * r1) + np.sum(r2 * r2))
            denom = dtau ** 2 + np.sum(dq * dq) + np.mean(np.sum(dx * dx, axis=-1))
            if denom > 0:
                worst = max(worst, float(rem / denom))
        ratios.append(worst)
    return TaylorReport(tuple(scales), tuple(ratios))
