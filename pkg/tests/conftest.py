"""Shared helpers for the test suite."""

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_simplex(rng, n, floor=0.01):
    """Random interior point of the simplex, bounded away from the faces."""
    w = rng.dirichlet(np.ones(n))
    w = w + floor
    return w / w.sum()


def tangent(g):
    """Project a gradient onto the simplex tangent space (zero-mean part)."""
    g = np.asarray(g, dtype=float)
    return g - g.mean()


def fd_tangent_error(f, y, grad, eps=1e-6):
    """Max abs deviation between analytic and central-difference gradients.

    Both sides are projected onto the simplex tangent space, where the
    gradient of a loss over probability vectors is well defined.
    """
    y = np.asarray(y, dtype=float)
    numeric = np.zeros_like(y)
    for i in range(y.size):
        up = y.copy()
        up[i] += eps
        down = y.copy()
        down[i] -= eps
        numeric[i] = (f(up) - f(down)) / (2 * eps)
    return float(np.max(np.abs(tangent(grad) - tangent(numeric))))
