"""Empirical measures on the torus and their optimal transport.

Every measure is an average of ``n`` Dirac masses.  Between two such measures
with the same ``n`` the quadratic Wasserstein distance is attained by a
permutation, so the optimal plan is an assignment problem.
"""

import csv
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import torus
from .errors import InvalidInputError, UnsupportedCaseError


class EmpiricalMeasure:
    """Uniform average of Dirac masses at ``particles`` (shape ``(n, d)``).

    Coordinates are stored canonically in ``[0, 1)``.  Equality ignores the
    particle order.
    """

    __slots__ = ("particles",)

    def __init__(self, particles):
        p = np.asarray(particles, dtype=float)
        if p.ndim == 1:
            p = p.reshape(-1, 1)
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise InvalidInputError("particles must have shape (n, d) with n, d >= 1")
        p = torus.wrap(p)
        p.setflags(write=False)
        self.particles = p

    @property
    def n(self):
        return self.particles.shape[0]

    @property
    def d(self):
        return self.particles.shape[1]

    def canonical_order(self):
        """Permutation sorting particles lexicographically (first coordinate first)."""
        keys = tuple(self.particles[:, i] for i in reversed(range(self.d)))
        return np.lexsort(keys)

    def sorted(self):
        return EmpiricalMeasure(self.particles[self.canonical_order()])

    def permuted(self, perm):
        return EmpiricalMeasure(self.particles[np.asarray(perm)])

    def __eq__(self, other):
        if not isinstance(other, EmpiricalMeasure):
            return NotImplemented
        if self.particles.shape != other.particles.shape:
            return False
        a = self.sorted().particles
        b = other.sorted().particles
        if np.all(torus.torus_dist(a, b) <= torus.COORD_ATOL):
            return True
        # sorting is not robust to points sitting on the 0/1 seam
        return wasserstein(self, other).distance <= torus.COORD_ATOL

    __hash__ = None

    def __repr__(self):
        return f"EmpiricalMeasure(n={self.n}, d={self.d})"

    def to_csv(self, path):
        write_particles_csv(path, self.particles)

    @classmethod
    def from_csv(cls, path):
        return cls(read_particles_csv(path))


@dataclass(frozen=True)
class TransportPlan:
    """Optimal assignment ``source[j] -> target[assignment[j]]``."""

    source: EmpiricalMeasure
    target: EmpiricalMeasure
    assignment: np.ndarray
    cost: float

    @property
    def distance(self):
        return float(np.sqrt(self.cost))


def cost_matrix(mu, nu):
    """Squared torus distances ``C[i, j] = |x_i - y_j|^2``."""
    w = torus.wrap_displacement(nu.particles[None, :, :] - mu.particles[:, None, :])
    return np.sum(w * w, axis=-1)


def _check_pair(mu, nu):
    if mu.d != nu.d:
        raise InvalidInputError(f"dimension mismatch: {mu.d} vs {nu.d}")
    if mu.n != nu.n:
        raise UnsupportedCaseError(
            "only measures with equal particle counts are supported")


def wasserstein(mu, nu, brute_force=False):
    """Optimal plan between two empirical measures with the same ``n``.

    ``brute_force=True`` enumerates all ``n!`` permutations (``n <= 8``); it is
    kept as an independent check on the assignment solver.
    """
    _check_pair(mu, nu)
    c = cost_matrix(mu, nu)
    if brute_force:
        perm, total = brute_force_assignment(c)
    else:
        rows, perm = linear_sum_assignment(c)
        perm = np.asarray(perm)
        total = float(c[rows, perm].sum())
    cost = max(total / mu.n, 0.0)
    return TransportPlan(mu, nu, np.asarray(perm, dtype=int), cost)


def brute_force_assignment(c):
    n = c.shape[0]
    if n > 8:
        raise UnsupportedCaseError("brute-force assignment is limited to n <= 8")
    idx = np.arange(n)
    best, best_perm = np.inf, None
    for perm in itertools.permutations(range(n)):
        total = float(c[idx, perm].sum())
        if total < best:
            best, best_perm = total, perm
    return np.array(best_perm, dtype=int), best


def pushforward(mu, f):
    """Apply ``f`` particle by particle; order is preserved.

    ``f`` receives the full ``(n, d)`` particle array and must return an array
    of the same shape.
    """
    return EmpiricalMeasure(f(np.array(mu.particles)))


def geodesic_interpolate(plan, tau):
    """Point ``tau`` of the constant-speed geodesic from source to target."""
    if not (0.0 <= tau <= 1.0):
        raise InvalidInputError("tau must lie in [0, 1]")
    x = plan.source.particles
    y = plan.target.particles[plan.assignment]
    if tau == 1.0:
        return EmpiricalMeasure(y)
    return EmpiricalMeasure(x + tau * torus.min_displacement(x, y))


def displacement_velocity(plan, tau):
    """Velocity of each interpolated particle; constant along the geodesic."""
    if not (0.0 <= tau <= 1.0):
        raise InvalidInputError("tau must lie in [0, 1]")
    x = plan.source.particles
    y = plan.target.particles[plan.assignment]
    return torus.min_displacement(x, y)


def l2_norm(vectors):
    """``(1/n sum_j |w_j|^2)^{1/2}`` for a per-particle vector field."""
    v = np.asarray(vectors, dtype=float)
    return float(np.sqrt(np.mean(np.sum(v * v, axis=-1))))


def write_particles_csv(path, particles):
    p = np.asarray(particles, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(p.shape[1])])
        for row in p:
            w.writerow([repr(float(v)) for v in row])


def read_particles_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidInputError(f"{path}: empty particle file")
    header, body = rows[0], rows[1:]
    if header != [f"x{i}" for i in range(len(header))]:
        raise InvalidInputError(f"{path}: header must be x0,...,x{{d-1}}")
    return np.array([[float(v) for v in r] for r in body], dtype=float)
