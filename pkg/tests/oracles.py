"""Independent oracles shared by the unit and acceptance tests."""

from itertools import combinations

import numpy as np

from steinbound.functionals import table_functional
from steinbound.laws import FiniteLaw

ATOMS = {1: (0.0,), 2: (0.0, 1.0), 3: (-1.0, 0.5, 2.0)}


def random_instance(seed, dim_out=1):
    rng = np.random.default_rng(seed)
    s, n = int(rng.integers(2, 4)), int(rng.integers(1, 5))
    probs = rng.dirichlet(np.ones(s))
    law = FiniteLaw(np.array(ATOMS[s]), probs)
    g = table_functional(law.values, rng.normal(size=(s,) * n + (dim_out,)), n)
    h = table_functional(law.values, rng.normal(size=(s,) * n + (dim_out,)), n)
    return law, n, g, h


def grid_area(centers, R, h):
    lo = centers.min(axis=0) - R
    hi = centers.max(axis=0) + R
    xs = np.arange(lo[0], hi[0], h) + h / 2
    ys = np.arange(lo[1], hi[1], h) + h / 2
    covered = np.zeros((len(xs), len(ys)), bool)
    for c in centers:
        covered |= ((xs[:, None] - c[0]) ** 2 + (ys[None, :] - c[1]) ** 2) <= R * R
    return covered, covered.sum() * h * h


def exposed_half_perimeter(centers, R, m=20_000):
    t = (np.arange(m) + 0.5) / m * 2 * np.pi
    total = 0.0
    for i, c in enumerate(centers):
        p = c + R * np.stack([np.cos(t), np.sin(t)], axis=1)
        others = np.delete(centers, i, axis=0)
        inside = np.any(np.sum((p[:, None] - others[None]) ** 2, axis=-1) < R * R, axis=1)
        total += (~inside).mean() * 2 * np.pi * R
    return total / 2


def enclosing_radius(p):
    """Radius of the smallest circle containing three points."""
    a, b, c = (np.linalg.norm(p[i] - p[j]) for i, j in ((1, 2), (0, 2), (0, 1)))
    sides = sorted((a, b, c))
    if sides[2] ** 2 >= sides[0] ** 2 + sides[1] ** 2:
        return sides[2] / 2
    u, v = p[1] - p[0], p[2] - p[0]
    area = abs(u[0] * v[1] - u[1] * v[0]) / 2
    return a * b * c / (4 * area)


def nerve_euler(centers, R):
    """Euler characteristic of the nerve of the discs.

    A subset of planar convex sets meets iff each of its triples meets, and
    equal discs meet iff the smallest circle enclosing their centres has
    radius at most ``R``.
    """
    m = len(centers)
    meets2 = {(i, j) for i, j in combinations(range(m), 2)
              if np.linalg.norm(centers[i] - centers[j]) <= 2 * R}
    meets3 = {t for t in combinations(range(m), 3)
              if all(p in meets2 for p in combinations(t, 2))
              and enclosing_radius(centers[list(t)]) <= R}
    chi = m - len(meets2) + len(meets3)
    for size in range(4, m + 1):
        count = sum(all(t in meets3 for t in combinations(s, 3))
                    for s in combinations(range(m), size))
        chi += (-1) ** (size - 1) * count
    return chi
