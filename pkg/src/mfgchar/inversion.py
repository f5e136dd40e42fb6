"""Inverse of the forward flow ``q -> Sigma^1_t(q)`` and the momentum field on space.

Two routes are provided.  :func:`invert_flow` runs Newton's method on the
wrapped residual with finite-difference Jacobians.  :func:`pinned_inverse`
instead solves the characteristic whose position equals ``q`` at time ``t``;
its position at ``s`` is the preimage directly and its momentum at ``t`` is
the value of the momentum field.  The pinned route is what the bulk
assembly uses; Newton is kept as the reference and as a cross-check.
"""

from dataclasses import dataclass

import numpy as np

from . import torus
from .errors import InvalidInputError, InversionError


@dataclass(frozen=True)
class InverseFlowQuery:
    field: object
    t: float
    q: np.ndarray

    def __post_init__(self):
        self.field.cfg.index_of(self.t)
        q = np.atleast_2d(np.asarray(self.q, dtype=float))
        if q.shape[-1] != self.field.d:
            raise InvalidInputError("query dimension does not match the field")
        object.__setattr__(self, "q", q)


def forward(field, points, k):
    """Lifted ``Sigma^1_{t_k}`` at ``points`` (frozen-particle characteristics)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tr = field.trace(pts)
    return pts + tr.theta[k]


def invert_flow(query, newton_tol=None, newton_max_iters=None):
    """Preimage ``x`` (canonical coordinates) with ``Sigma^1_t(x) = q``.

    Returns an array of shape ``(N, d)``.  Raises :class:`InversionError`
    when a Jacobian is singular or Newton does not converge.
    """
    field = query.field
    cfg = field.cfg
    tol = cfg.newton_tol if newton_tol is None else newton_tol
    max_iters = cfg.newton_max_iters if newton_max_iters is None else newton_max_iters
    k = cfg.index_of(query.t)
    q = query.q
    if k == field.s_index:
        return torus.wrap(q)
    x = np.array(q)
    active = np.ones(len(x), dtype=bool)
    for _ in range(max_iters):
        img = forward(field, x[active], k)
        r = torus.wrap_displacement(img - q[active])
        done = np.linalg.norm(r, axis=-1) <= tol
        idx = np.flatnonzero(active)
        active[idx[done]] = False
        if not active.any():
            return torus.wrap(x)
        J, _ = field.jacobians(x[active], k)
        det = np.linalg.det(J)
        if np.any(~np.isfinite(det)) or np.any(np.abs(det) < 1e-12):
            raise InversionError("singular Jacobian in flow inversion")
        step = np.linalg.solve(J, r[~done][..., None])[..., 0]
        x[active] -= step
    img = forward(field, x, k)
    res = np.max(torus.torus_dist(img, q))
    if res <= tol:
        return torus.wrap(x)
    raise InversionError(f"Newton inversion did not converge (residual {res:.3e})")


def pinned_inverse(field, t, points):
    """``(X_t(q), V(t, q), trajectory)`` by solving the characteristic pinned at ``t``."""
    k = field.cfg.index_of(t)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tr = field.trace(pts, pin=k)
    X = torus.wrap(pts + tr.theta[field.s_index])
    return X, tr.p[k], tr


def vee_field(field, t, q, method="pinned"):
    """Momentum field ``V(t, q) = Sigma^2_t(X_t(q))``, shape ``(N, d)``."""
    k = field.cfg.index_of(t)
    pts = np.atleast_2d(np.asarray(q, dtype=float))
    if method == "pinned":
        return pinned_inverse(field, t, pts)[1]
    if method != "newton":
        raise InvalidInputError(f"unknown method {method!r}")
    x = invert_flow(InverseFlowQuery(field, t, pts))
    return field.trace(x).p[k]


@dataclass(frozen=True)
class JacobianAudit:
    min_det: float
    max_inverse_norm: float
    det_bound: float
    inverse_bound: float
    flags: tuple

    @property
    def clean(self):
        return not self.flags


def audit_jacobians(jacobians):
    """Determinant and inverse-norm audit of a stack of ``(d, d)`` Jacobians.

    The inverse norm is the Frobenius norm.  Flags are raised when the
    determinant is at most 1/2 or the inverse norm reaches
    ``4 (1 + sqrt(d))^(d-1)``.
    """
    J = np.asarray(jacobians, dtype=float)
    d = J.shape[-1]
    det = np.linalg.det(J)
    min_det = float(np.min(det))
    inv_bound = 4.0 * (1.0 + np.sqrt(d)) ** (d - 1)
    flags = []
    if min_det <= 0.5:
        flags.append("det_at_most_half")
    if np.any(np.abs(det) < 1e-300):
        inv_norm = np.inf
    else:
        inv_norm = float(np.max(np.linalg.norm(np.linalg.inv(J), axis=(-2, -1))))
    if inv_norm >= inv_bound:
        flags.append("inverse_norm_bound")
    return JacobianAudit(min_det, inv_norm, 0.5, inv_bound, tuple(flags))


def jacobian_audit(field, t, points=None, m=8):
    """Audit ``grad_q Sigma^1_t`` over the query grid (or an ``m``-per-axis grid)."""
    k = field.cfg.index_of(t)
    if points is None:
        points = field.queries if field.m else torus.uniform_grid(m, field.d)
    J, _ = field.jacobians(points, k)
    return audit_jacobians(J)
