"""Geometry of the flat torus R^d / Z^d.

Points are plain float arrays whose last axis is the dimension ``d``.  The
canonical representative of a point has every coordinate in ``[0, 1)``; the
canonical representative of a displacement has every component in
``[-1/2, 1/2)``.
"""

import numpy as np

from .errors import InvalidInputError

#: absolute tolerance used when comparing canonical coordinates
COORD_ATOL = 1e-12


def _as_array(v):
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1)
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("torus coordinates must be finite")
    return a


def wrap(v):
    """Reduce ``v`` modulo 1 to the canonical cube ``[0, 1)^d``."""
    a = _as_array(v)
    w = a - np.floor(a)
    # floor can leave exactly 1.0 for tiny negative inputs
    return np.where(w >= 1.0, 0.0, w)


def wrap_displacement(v):
    """Reduce a displacement to the half-open box ``[-1/2, 1/2)^d``."""
    a = np.asarray(v, dtype=float)
    w = a - np.floor(a + 0.5)
    return np.where(w >= 0.5, w - 1.0, w)


def _check_dims(x, y):
    if x.shape[-1] != y.shape[-1]:
        raise InvalidInputError(
            f"dimension mismatch: {x.shape[-1]} vs {y.shape[-1]}")


def min_displacement(x, y):
    """Shortest vector ``w`` with ``wrap(x + w) == y``.

    Antipodal ties (a component exactly 1/2 away) resolve to ``-1/2``.
    """
    x = _as_array(x)
    y = _as_array(y)
    _check_dims(x, y)
    return wrap_displacement(y - x)


def torus_dist(x, y):
    """Euclidean length of :func:`min_displacement`; vectorised over leading axes."""
    w = min_displacement(x, y)
    return np.sqrt(np.sum(w * w, axis=-1))


def same_point(x, y, atol=COORD_ATOL):
    """True when ``x`` and ``y`` name the same torus point up to ``atol``."""
    return bool(np.all(torus_dist(x, y) <= atol))


def uniform_grid(m, d):
    """Regular ``m``-per-axis grid on the torus, shape ``(m**d, d)``.

    Ordering is C-order with the last coordinate varying fastest.
    """
    if m < 1 or d < 1:
        raise InvalidInputError("grid size and dimension must be positive")
    axes = [np.arange(m) / m] * d
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)
