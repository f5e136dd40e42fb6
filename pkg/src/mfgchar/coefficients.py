"""Hamiltonians, measure couplings, and their derivative audits.

All evaluators are vectorised.  A Hamiltonian takes ``q`` and ``p`` of shape
``(..., d)``.  A coupling takes query points ``q`` of shape ``(..., N, d)`` and
particles of shape ``(..., n, d)`` (the empirical measure, with matching
leading axes) and returns one value per query point.

Conventions for measure derivatives on ``mu = 1/n sum_r delta_{x_r}``:

* ``grad_mu(q, x)[..., i, r, :]`` is the Wasserstein gradient
  ``nabla_mu F(q_i, mu)(x_r)``, equal to ``n`` times the partial gradient of
  ``F(q_i, mu^x)`` with respect to ``x_r``;
* ``grad_mu_grad_q(q, x)[..., i, r, a, b]`` is ``d/dx_r^b`` of
  ``d F/dq^a`` scaled by ``n``.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidInputError

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# Hamiltonians


@dataclass(frozen=True)
class HamiltonianModel:
    """``H(q, p)``, 1-periodic in each ``q`` coordinate."""

    value: Callable
    grad_q: Callable
    grad_p: Callable
    hessian: Optional[Callable] = None
    fd_step: float = 1e-5
    name: str = "custom"

    def full_hessian(self, q, p):
        """``(..., 2d, 2d)`` Hessian in ``(q, p)``; central differences of the
        analytic gradients when no analytic Hessian was supplied."""
        if self.hessian is not None:
            return self.hessian(q, p)
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        d = q.shape[-1]
        h = self.fd_step
        out = np.empty(q.shape[:-1] + (2 * d, 2 * d))
        for a in range(2 * d):
            e = np.zeros(d)
            e[a % d] = h
            if a < d:
                gp = np.concatenate([self.grad_q(q + e, p), self.grad_p(q + e, p)], -1)
                gm = np.concatenate([self.grad_q(q - e, p), self.grad_p(q - e, p)], -1)
            else:
                gp = np.concatenate([self.grad_q(q, p + e), self.grad_p(q, p + e)], -1)
                gm = np.concatenate([self.grad_q(q, p - e), self.grad_p(q, p - e)], -1)
            out[..., :, a] = (gp - gm) / (2 * h)
        return out


def builtin_quadratic_hamiltonian():
    """``H = |p|^2 / 2``."""

    def value(q, p):
        p = np.asarray(p, dtype=float)
        return 0.5 * np.sum(p * p, axis=-1)

    def grad_q(q, p):
        return np.zeros(np.broadcast_shapes(np.shape(q), np.shape(p)))

    def grad_p(q, p):
        return np.broadcast_to(np.asarray(p, dtype=float),
                               np.broadcast_shapes(np.shape(q), np.shape(p))).copy()

    def hessian(q, p):
        shape = np.broadcast_shapes(np.shape(q), np.shape(p))
        d = shape[-1]
        out = np.zeros(shape[:-1] + (2 * d, 2 * d))
        out[..., d:, d:] = np.eye(d)
        return out

    return HamiltonianModel(value, grad_q, grad_p, hessian, name="quadratic")


def builtin_nonconvex_hamiltonian(eps):
    """``H = |p|^2/2 + eps cos(2 pi p.1) + eps cos(2 pi q.1)``.

    Non-convex in ``p`` once ``eps (2 pi)^2 d > 1``.
    """
    if eps < 0:
        raise InvalidInputError("eps must be nonnegative")
    eps = float(eps)

    def value(q, p):
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        return (0.5 * np.sum(p * p, axis=-1)
                + eps * np.cos(TWO_PI * np.sum(p, axis=-1))
                + eps * np.cos(TWO_PI * np.sum(q, axis=-1)))

    def grad_q(q, p):
        q = np.asarray(q, dtype=float)
        shape = np.broadcast_shapes(q.shape, np.shape(p))
        s = -TWO_PI * eps * np.sin(TWO_PI * np.sum(q, axis=-1, keepdims=True))
        return np.broadcast_to(s, shape).copy()

    def grad_p(q, p):
        p = np.asarray(p, dtype=float)
        shape = np.broadcast_shapes(np.shape(q), p.shape)
        s = -TWO_PI * eps * np.sin(TWO_PI * np.sum(p, axis=-1, keepdims=True))
        return np.broadcast_to(p + s, shape).copy()

    def hessian(q, p):
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        shape = np.broadcast_shapes(q.shape, p.shape)
        d = shape[-1]
        cq = -(TWO_PI ** 2) * eps * np.cos(TWO_PI * np.sum(q, axis=-1))
        cp = -(TWO_PI ** 2) * eps * np.cos(TWO_PI * np.sum(p, axis=-1))
        out = np.zeros(shape[:-1] + (2 * d, 2 * d))
        out[..., :d, :d] = cq[..., None, None]
        out[..., d:, d:] = cp[..., None, None] + np.eye(d)
        return out

    return HamiltonianModel(value, grad_q, grad_p, hessian,
                            name=f"nonconvex(eps={eps:g})")


# ---------------------------------------------------------------------------
# Couplings


@dataclass(frozen=True)
class CouplingModel:
    """A smooth functional ``F(q, mu)`` of a point and an empirical measure.

    ``kappa`` is the declared bound on ``|grad_q F|`` and on the joint
    Lipschitz constant of ``grad_q F`` in ``(q, mu)``.  Missing measure
    derivatives fall back to central differences in the particle positions.
    """

    value: Callable
    grad_q: Callable
    kappa: float
    grad_mu: Optional[Callable] = None
    grad_mu_grad_q: Optional[Callable] = None
    measure_dependent: bool = True
    name: str = "custom"
    fd_step: float = 1e-6

    def wasserstein_grad(self, q, x):
        """``nabla_mu F(q, mu^x)(x_r)`` with shape ``(..., N, n, d)``."""
        q = np.asarray(q, dtype=float)
        x = np.asarray(x, dtype=float)
        if not self.measure_dependent:
            return np.zeros(q.shape[:-1] + x.shape[-2:])
        if self.grad_mu is not None:
            return self.grad_mu(q, x)
        n, d = x.shape[-2:]
        h = self.fd_step
        out = np.empty(q.shape[:-1] + (n, d))
        for r in range(n):
            for b in range(d):
                xp = np.array(x)
                xm = np.array(x)
                xp[..., r, b] += h
                xm[..., r, b] -= h
                out[..., r, b] = n * (self.value(q, xp) - self.value(q, xm)) / (2 * h)
        return out

    def wasserstein_grad_q(self, q, x):
        """``nabla_mu nabla_q F(q, mu^x)(x_r)``, shape ``(..., N, n, d, d)``."""
        q = np.asarray(q, dtype=float)
        x = np.asarray(x, dtype=float)
        d = q.shape[-1]
        if not self.measure_dependent:
            return np.zeros(q.shape[:-1] + x.shape[-2:] + (d,))
        if self.grad_mu_grad_q is not None:
            return self.grad_mu_grad_q(q, x)
        n = x.shape[-2]
        h = self.fd_step
        out = np.empty(q.shape[:-1] + (n, d, d))
        for r in range(n):
            for b in range(d):
                xp = np.array(x)
                xm = np.array(x)
                xp[..., r, b] += h
                xm[..., r, b] -= h
                out[..., r, :, b] = n * (self.grad_q(q, xp) - self.grad_q(q, xm)) / (2 * h)
        return out


def _query_shape(q):
    q = np.asarray(q, dtype=float)
    return q, q.shape[:-1]


def builtin_zero_coupling():
    def value(q, x):
        q, shape = _query_shape(q)
        return np.zeros(shape)

    def grad_q(q, x):
        return np.zeros(np.shape(q))

    return CouplingModel(value, grad_q, kappa=0.0, measure_dependent=False,
                         name="zero")


def builtin_constant_coupling(c):
    c = float(c)

    def value(q, x):
        q, shape = _query_shape(q)
        return np.full(shape, c)

    def grad_q(q, x):
        return np.zeros(np.shape(q))

    return CouplingModel(value, grad_q, kappa=0.0, measure_dependent=False,
                         name=f"constant({c:g})")


def builtin_constant_gradient_coupling(a):
    """``F(q) = a . q`` evaluated on lifted coordinates.

    Not periodic; it produces a rigid translation of every characteristic
    and is meant for transport tests that never compare values across the
    0/1 seam.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))

    def value(q, x):
        q = np.asarray(q, dtype=float)
        return q @ a

    def grad_q(q, x):
        return np.broadcast_to(a, np.shape(q)).copy()

    return CouplingModel(value, grad_q, kappa=float(np.linalg.norm(a)),
                         measure_dependent=False, name="constant_gradient")


def _modes_array(modes, d):
    ks = np.array([m[0] for m in modes], dtype=float).reshape(len(modes), d)
    return ks


@dataclass(frozen=True)
class FourierKernel:
    """Even periodic kernel ``phi(y) = sum_k c_k cos(2 pi k.y) / (2 pi)^2``."""

    wavevectors: np.ndarray  # (M, d) integer-valued
    coefficients: np.ndarray  # (M,)

    @classmethod
    def from_modes(cls, modes, d):
        """``modes``: iterable of ``(wavevector, coefficient)``."""
        modes = list(modes)
        ks = _modes_array(modes, d)
        cs = np.array([float(m[1]) for m in modes])
        return cls(ks, cs)

    @property
    def d(self):
        return self.wavevectors.shape[1]

    def _phase(self, y):
        return TWO_PI * np.tensordot(y, self.wavevectors, axes=([-1], [1]))

    def __call__(self, y):
        return np.cos(self._phase(y)) @ self.coefficients / TWO_PI ** 2

    def grad(self, y):
        s = np.sin(self._phase(y)) * self.coefficients
        return -(s @ self.wavevectors) / TWO_PI

    def hess(self, y):
        c = np.cos(self._phase(y)) * self.coefficients
        kk = self.wavevectors[:, :, None] * self.wavevectors[:, None, :]
        return -np.tensordot(c, kk, axes=([-1], [0]))

    def grad_bound(self):
        return float(np.sum(np.abs(self.coefficients)
                            * np.linalg.norm(self.wavevectors, axis=1)) / TWO_PI)

    def hess_bound(self):
        return float(np.sum(np.abs(self.coefficients)
                            * np.sum(self.wavevectors ** 2, axis=1)))


def cosine_kernel(amplitude=1.0, d=1):
    """``phi(y) = amplitude * sum_i cos(2 pi y_i) / (2 pi)^2``."""
    return FourierKernel(np.eye(d), np.full(d, float(amplitude)))


def builtin_convolution_coupling(phi):
    """``F(q, mu) = int phi(q - y) mu(dy)`` for an even kernel ``phi``."""

    def value(q, x):
        diff = np.asarray(q)[..., :, None, :] - np.asarray(x)[..., None, :, :]
        return np.mean(phi(diff), axis=-1)

    def grad_q(q, x):
        diff = np.asarray(q)[..., :, None, :] - np.asarray(x)[..., None, :, :]
        return np.mean(phi.grad(diff), axis=-2)

    def grad_mu(q, x):
        diff = np.asarray(q)[..., :, None, :] - np.asarray(x)[..., None, :, :]
        return -phi.grad(diff)

    def grad_mu_grad_q(q, x):
        diff = np.asarray(q)[..., :, None, :] - np.asarray(x)[..., None, :, :]
        return -phi.hess(diff)

    gb, hb = phi.grad_bound(), phi.hess_bound()
    kappa = max(gb, np.sqrt(2.0) * hb)
    return CouplingModel(value, grad_q, kappa=kappa, grad_mu=grad_mu,
                         grad_mu_grad_q=grad_mu_grad_q, name="convolution")


@dataclass(frozen=True)
class FourierPotential:
    """``V(q) = sum_k a_k cos(2 pi k.q) + b_k sin(2 pi k.q)``."""

    wavevectors: np.ndarray
    cos_coefficients: np.ndarray
    sin_coefficients: np.ndarray

    @classmethod
    def from_modes(cls, modes, d):
        """``modes``: iterable of ``(wavevector, a, b)``."""
        modes = list(modes)
        ks = _modes_array(modes, d)
        a = np.array([float(m[1]) for m in modes])
        b = np.array([float(m[2]) for m in modes])
        return cls(ks, a, b)

    def _phase(self, q):
        return TWO_PI * np.tensordot(q, self.wavevectors, axes=([-1], [1]))

    def __call__(self, q):
        ph = self._phase(q)
        return np.cos(ph) @ self.cos_coefficients + np.sin(ph) @ self.sin_coefficients

    def grad(self, q):
        ph = self._phase(q)
        w = -np.sin(ph) * self.cos_coefficients + np.cos(ph) * self.sin_coefficients
        return TWO_PI * (w @ self.wavevectors)

    def hess(self, q):
        ph = self._phase(q)
        w = -(np.cos(ph) * self.cos_coefficients + np.sin(ph) * self.sin_coefficients)
        kk = self.wavevectors[:, :, None] * self.wavevectors[:, None, :]
        return TWO_PI ** 2 * np.tensordot(w, kk, axes=([-1], [0]))

    def grad_bound(self):
        amp = np.abs(self.cos_coefficients) + np.abs(self.sin_coefficients)
        return float(TWO_PI * np.sum(amp * np.linalg.norm(self.wavevectors, axis=1)))

    def hess_bound(self):
        amp = np.abs(self.cos_coefficients) + np.abs(self.sin_coefficients)
        return float(TWO_PI ** 2 * np.sum(amp * np.sum(self.wavevectors ** 2, axis=1)))


def builtin_potential_coupling(potential, name="potential"):
    """Measure-independent coupling ``F(q, mu) = V(q)``."""

    def value(q, x):
        return potential(np.asarray(q, dtype=float))

    def grad_q(q, x):
        return potential.grad(np.asarray(q, dtype=float))

    kappa = max(potential.grad_bound(), potential.hess_bound())
    return CouplingModel(value, grad_q, kappa=kappa, measure_dependent=False,
                         name=name)


def builtin_cosine_force(amplitude, d=1):
    """Measure-independent ``g`` with ``grad_q g(q)_i = amplitude cos(2 pi q_i)``."""
    pot = FourierPotential(np.eye(d), np.zeros(d), np.full(d, amplitude / TWO_PI))
    return builtin_potential_coupling(pot, name=f"cosine_force({amplitude:g})")


def combine_couplings(*parts):
    """Pointwise sum of couplings; ``kappa`` adds."""
    parts = tuple(parts)
    if not parts:
        return builtin_zero_coupling()
    if len(parts) == 1:
        return parts[0]

    def value(q, x):
        return sum(c.value(q, x) for c in parts)

    def grad_q(q, x):
        return sum(c.grad_q(q, x) for c in parts)

    def grad_mu(q, x):
        return sum(c.wasserstein_grad(q, x) for c in parts)

    def grad_mu_grad_q(q, x):
        return sum(c.wasserstein_grad_q(q, x) for c in parts)

    return CouplingModel(
        value, grad_q, kappa=float(sum(c.kappa for c in parts)),
        grad_mu=grad_mu, grad_mu_grad_q=grad_mu_grad_q,
        measure_dependent=any(c.measure_dependent for c in parts),
        name="+".join(c.name for c in parts))


# ---------------------------------------------------------------------------
# Triple


def theta_threshold(kappa):
    return max(1.0, 5.0 * np.sqrt(2.0) * kappa)


@dataclass(frozen=True)
class CoefficientTriple:
    """``(H, F, g)`` plus the momentum scaling ``theta``.

    ``theta`` must exceed ``max(1, 5 sqrt(2) kappa)`` where ``kappa`` is the
    larger declared coupling budget.  Pass ``check_theta=False`` only to build
    deliberately invalid triples for audits.
    """

    hamiltonian: HamiltonianModel
    running_cost: CouplingModel
    initial_cost: CouplingModel
    theta: float
    check_theta: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if not np.isfinite(self.theta) or self.theta <= 0:
            raise InvalidInputError("theta must be a positive real")
        if self.check_theta and self.theta <= self.theta_bound:
            raise InvalidInputError(
                f"theta={self.theta:g} must exceed max(1, 5*sqrt(2)*kappa)="
                f"{self.theta_bound:g}")

    @property
    def kappa(self):
        return max(self.running_cost.kappa, self.initial_cost.kappa)

    @property
    def theta_bound(self):
        return theta_threshold(self.kappa)

    @property
    def measure_dependent(self):
        return self.running_cost.measure_dependent or self.initial_cost.measure_dependent


# ---------------------------------------------------------------------------
# Derivative audit


@dataclass
class DerivativeReport:
    errors: dict
    flags: list

    @property
    def ok(self):
        return not self.flags


def _rel(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a)))) if a.size else 0.0


def _fd_grad(f, z, h):
    z = np.asarray(z, dtype=float)
    out = np.empty(z.shape)
    for a in range(z.shape[-1]):
        e = np.zeros(z.shape[-1])
        e[a] = h
        out[..., a] = (f(z + e) - f(z - e)) / (2 * h)
    return out


def check_derivatives(triple, probes=20, h=1e-5, d=1, n=5, seed=0, tol=1e-6,
                      periodic_tol=1e-10):
    """Compare analytic derivatives with central differences on random probes.

    Returns a :class:`DerivativeReport` with the maximum mixed relative error
    per evaluator and a list of violation flags.  The report never raises.
    """
    if probes < 1 or h <= 0:
        raise InvalidInputError("probes must be >= 1 and h > 0")
    rng = np.random.default_rng(seed)
    q = rng.random((probes, d))
    p = rng.uniform(-1.0, 1.0, (probes, d))
    x = rng.random((probes, n, d))
    H = triple.hamiltonian
    errors = {}
    flags = []

    errors["H.grad_q"] = _rel(H.grad_q(q, p), _fd_grad(lambda z: H.value(z, p), q, h))
    errors["H.grad_p"] = _rel(H.grad_p(q, p), _fd_grad(lambda z: H.value(q, z), p, h))
    per = 0.0
    for a in range(d):
        e = np.zeros(d)
        e[a] = 1.0
        per = max(per, float(np.max(np.abs(H.value(q + e, p) - H.value(q, p)))))
    errors["H.periodicity"] = per

    for label, c in (("F", triple.running_cost), ("g", triple.initial_cost)):
        qq = q[:, None, :]
        errors[f"{label}.grad_q"] = _rel(
            c.grad_q(qq, x), _fd_grad(lambda z: c.value(z, x), qq, h))
        if c.measure_dependent:
            gm = c.wasserstein_grad(qq, x)[:, 0]
            fd = np.empty_like(gm)
            gmq = c.wasserstein_grad_q(qq, x)[:, 0]
            fdq = np.empty_like(gmq)
            for r in range(n):
                for b in range(d):
                    xp = np.array(x)
                    xm = np.array(x)
                    xp[:, r, b] += h
                    xm[:, r, b] -= h
                    fd[:, r, b] = n * (c.value(qq, xp) - c.value(qq, xm))[:, 0] / (2 * h)
                    fdq[:, r, :, b] = n * (c.grad_q(qq, xp) - c.grad_q(qq, xm))[:, 0] / (2 * h)
            errors[f"{label}.grad_mu"] = _rel(gm, fd)
            errors[f"{label}.grad_mu_grad_q"] = _rel(gmq, fdq)
        per = 0.0
        for a in range(d):
            e = np.zeros(d)
            e[a] = 1.0
            per = max(per, float(np.max(np.abs(c.value(qq + e, x) - c.value(qq, x)))),
                      float(np.max(np.abs(c.value(qq, x + e) - c.value(qq, x)))))
        errors[f"{label}.periodicity"] = per
        if per > periodic_tol:
            flags.append(f"not_periodic:{label}")

        gq = c.grad_q(qq, x)
        gmax = float(np.max(np.linalg.norm(gq, axis=-1)))
        errors[f"{label}.grad_sup"] = gmax
        if gmax > c.kappa + 1e-12:
            flags.append(f"kappa_violation:{label}")
        # joint Lipschitz probe on nearby pairs; the identity assignment
        # bounds W from above, so the test is conservative
        dq = rng.normal(scale=1e-3, size=q.shape)[:, None, :]
        dx = rng.normal(scale=1e-3, size=x.shape)
        w_upper = np.sqrt(np.mean(np.sum(dx * dx, axis=-1), axis=-1))
        lhs = np.linalg.norm(c.grad_q(qq + dq, x + dx) - gq, axis=-1)[:, 0]
        rhs = c.kappa * np.sqrt(np.sum(dq[:, 0] ** 2, axis=-1) + w_upper ** 2)
        lip = float(np.max(lhs - rhs))
        errors[f"{label}.lipschitz_excess"] = max(lip, 0.0)
        if lip > 1e-12:
            flags.append(f"lipschitz_violation:{label}")

    for key in ("H.grad_q", "H.grad_p", "F.grad_q", "g.grad_q", "F.grad_mu",
                "g.grad_mu", "F.grad_mu_grad_q", "g.grad_mu_grad_q"):
        if key in errors and errors[key] > tol:
            flags.append(f"derivative_mismatch:{key}")
    if errors["H.periodicity"] > periodic_tol:
        flags.append("not_periodic:H")
    if triple.theta <= triple.theta_bound:
        flags.append("theta_too_small")
    return DerivativeReport(errors, flags)
