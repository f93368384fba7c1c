"""Nearest-neighbour statistics, interaction graphs and local-dependence bounds.

A k-NN statistic is ``f(x) = n^{-1/2} sum_l (g_l(x) - c)`` where ``g_l``
depends only on the sorted distances from ``x_l`` to its ``k`` nearest
neighbours. Resampling one point changes only a few summands, which
:func:`knn_differences` exploits to get every ``Delta_j f`` of a sample
in one pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .bounds import SmoothnessBudget, matrix_norms
from .laws import UniformBoxLaw
from .resample import ContractError, Functional
from .seeding import derive_rng

TIE_JITTER = 1e-12
RULES = ("shared-neighbourhood", "mutual-union")


@dataclass(frozen=True)
class NeighbourLists:
    """Indices of the ``k`` nearest neighbours of every point (0-based)."""

    index: np.ndarray
    distance: np.ndarray
    jittered: bool


def knn_graph(points, k: int, rng: np.random.Generator | None = None) -> NeighbourLists:
    """Directed k-NN lists under Euclidean distance.

    Tied distances (including duplicated points) violate generic position;
    they are broken by a ``1e-12``-scale jitter and flagged.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if n <= k or k < 1:
        raise ContractError(f"need 1 <= k < n, got k={k}, n={n}")
    jittered = False
    for attempt in range(4):
        dist, idx = cKDTree(x).query(x, k + 1)
        dist, idx = _drop_self(dist, idx)
        if not _has_ties(x, dist):
            break
        jittered = True
        rng = derive_rng(0, "jitter", attempt) if rng is None else rng
        scale = TIE_JITTER * max(1.0, float(np.max(np.abs(x))))
        x = np.asarray(points, dtype=float).reshape(x.shape) + scale * rng.standard_normal(x.shape)
    return NeighbourLists(idx, dist, jittered)


def _drop_self(dist: np.ndarray, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, kk = idx.shape
    own = idx == np.arange(n)[:, None]
    keep = ~own
    # rows where self did not show up lose their last entry instead
    missing = ~own.any(axis=1)
    keep[missing, -1] = False
    return (dist[keep].reshape(n, kk - 1), idx[keep].reshape(n, kk - 1))


def _has_ties(x: np.ndarray, dist: np.ndarray) -> bool:
    if np.any(dist == 0):
        return True
    if dist.shape[1] + 1 >= len(x):
        return False
    # only a tie between the k-th and the (k+1)-th neighbour changes the lists
    nxt = cKDTree(x).query(x, dist.shape[1] + 2)[0][:, -1]
    return bool(np.any(nxt == dist[:, -1]))


@dataclass(frozen=True)
class InteractionGraph:
    """Undirected graph on ``n_vertices`` with its rule descriptor."""

    n_vertices: int
    edges: frozenset
    rule: str
    k: int

    def degree(self, v: int) -> int:
        return sum(1 for e in self.edges if v in e)

    def relabel(self, perm) -> "InteractionGraph":
        p = np.asarray(perm)
        return InteractionGraph(self.n_vertices,
                                frozenset(frozenset((int(p[a]), int(p[b]))) for a, b in
                                          map(tuple, self.edges)), self.rule, self.k)


def _cliques(points, k: int) -> np.ndarray:
    """Rows ``{l} ∪ (k+1)NN(l)``; the groups of the shared-neighbourhood rule."""
    nl = knn_graph(points, min(k + 1, len(np.atleast_1d(points)) - 1))
    return np.concatenate([np.arange(len(nl.index))[:, None], nl.index], axis=1)


def interaction_rule_graph(points, k: int, rule: str = "shared-neighbourhood") -> InteractionGraph:
    """Interaction graph of a k-NN statistic.

    ``"shared-neighbourhood"`` joins ``i`` and ``j`` when both belong to
    ``{l} ∪ (k+1)NN(l)`` for some ``l``; ``"mutual-union"`` joins them when
    one is among the ``k`` nearest neighbours of the other.
    """
    if rule not in RULES:
        raise ContractError(f"unknown rule {rule!r}; choose from {RULES}")
    nl = knn_graph(points, k)
    n = len(nl.index)
    edges = set()
    if rule == "mutual-union":
        for i in range(n):
            for j in nl.index[i]:
                edges.add(frozenset((i, int(j))))
    else:
        for row in _cliques(points, k):
            row = [int(v) for v in row]
            for a in range(len(row)):
                for b in range(a + 1, len(row)):
                    edges.add(frozenset((row[a], row[b])))
    return InteractionGraph(n, frozenset(edges), rule, k)


def delta_statistic(points_extended, k: int, rule: str = "shared-neighbourhood") -> int:
    """``1 +`` degree of the first point in the graph on the extended sample."""
    x = np.asarray(points_extended, dtype=float)
    if rule == "mutual-union":
        nl = knn_graph(x, k)
        nb = set(int(j) for j in nl.index[0])
        nb |= set(np.nonzero(np.any(nl.index == 0, axis=1))[0].tolist())
        nb.discard(0)
        return 1 + len(nb)
    if rule != "shared-neighbourhood":
        raise ContractError(f"unknown rule {rule!r}")
    c = _cliques(x, k)
    rows = c[np.any(c == 0, axis=1)]
    return int(np.unique(rows).size)  # includes vertex 0 itself, which is the "+1"


# Cone coverings --------------------------------------------------------------

@dataclass(frozen=True)
class ConeCovering:
    """Directions whose 30-degree caps cover the sphere ``S^{m-1}``."""

    m: int
    centers: np.ndarray
    verified_directions: int

    @property
    def count(self) -> int:
        return len(self.centers)


def _fibonacci_sphere(count: int) -> np.ndarray:
    i = np.arange(count) + 0.5
    z = 1.0 - 2.0 * i / count
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (1.0 + 5 ** 0.5) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _random_directions(rng, count: int, m: int) -> np.ndarray:
    v = rng.standard_normal((count, m))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@lru_cache(maxsize=None)
def cone_covering(m: int, verify: int = 1_000_000, seed: int = 0) -> ConeCovering:
    """Greedy covering of ``S^{m-1}`` by caps of angular radius 30 degrees.

    In the plane the greedy sweep places arcs of width 60 degrees end to end
    and stops after six. For ``m >= 3`` candidate caps are centred at test
    directions and chosen greedily by how many uncovered test directions
    they capture; the result is then checked on ``verify`` fresh random
    directions and any uncovered one is repaired by adding its own cap.
    """
    if m < 1:
        raise ContractError("m must be positive")
    if m == 1:
        return ConeCovering(1, np.array([[1.0], [-1.0]]), 0)
    cos_r = np.cos(np.pi / 6)
    if m == 2:
        centres, start = [], 0.0
        while start < 2 * np.pi - 1e-12:
            mid = start + np.pi / 6
            centres.append([np.cos(mid), np.sin(mid)])
            start += np.pi / 3
        return ConeCovering(2, np.array(centres), 0)
    rng = derive_rng(seed, "knn", m)
    test = _random_directions(rng, 20000, m) if m > 3 else _fibonacci_sphere(20000)
    cand = test[:: max(1, len(test) // 2000)]
    hit = (cand @ test.T) >= cos_r
    covered = np.zeros(len(test), bool)
    chosen = []
    while not covered.all():
        gain = (hit & ~covered).sum(axis=1)
        b = int(np.argmax(gain))
        if gain[b] == 0:
            chosen.append(test[np.argmin(covered)])
            covered |= (test @ chosen[-1]) >= cos_r
            continue
        chosen.append(cand[b])
        covered |= hit[b]
    centres = np.array(chosen)
    for _ in range(100):
        probe = _random_directions(rng, verify, m)
        miss = np.max(probe @ centres.T, axis=1) < cos_r
        if not miss.any():
            break
        centres = np.vstack([centres, probe[np.argmax(miss)]])
    return ConeCovering(m, centres, verify)


def alpha_cones(m: int, override: int | None = None) -> int:
    """Number of 60-degree cones used to cover ``R^m`` (an upper bound for ``m >= 3``)."""
    if m < 1:
        raise ContractError("m must be positive")
    if override is not None:
        if override < m + 1:
            raise ContractError(f"override {override} is below the lower bound {m + 1}")
        return int(override)
    return cone_covering(m).count


# k-NN statistics -------------------------------------------------------------

@dataclass(frozen=True)
class KnnFeatures:
    """Summands ``g_l = phi(sorted k-NN distances of x_l)``.

    ``phi`` maps an array ``(..., k)`` of ascending distances to
    ``(..., dim_out)``. Integer-valued ``phi`` keeps every difference exact.
    """

    phi: Callable[[np.ndarray], np.ndarray]
    k: int
    dim_out: int
    name: str = "knn-features"

    def local_values(self, points) -> np.ndarray:
        """``g_l`` for every point, shape ``(n, dim_out)``."""
        x = np.asarray(points, dtype=float)
        dist, _ = _drop_self(*cKDTree(x).query(x, self.k + 1))
        return np.asarray(self.phi(dist), dtype=float).reshape(len(x), self.dim_out)

    def local_sum(self, points) -> np.ndarray:
        """Unnormalised ``sum_l g_l``; exact for integer-valued features."""
        return self.local_values(points).sum(axis=0)

    def functional(self, n: int, center=None) -> Functional:
        """``f(x) = n^{-1/2} sum_l (g_l(x) - center)`` on point arrays ``(..., n, m)``."""
        c = np.zeros(self.dim_out) if center is None else np.asarray(center, float)
        scale = 1.0 / np.sqrt(n)

        def fn(x):
            batch = x.shape[:-2]
            flat = x.reshape((-1,) + x.shape[-2:])
            out = np.array([self.local_sum(p) - n * c for p in flat]) * scale
            return out.reshape(batch + (self.dim_out,))

        return Functional(fn, self.dim_out, 1, True, 0.0, self.name)


def degree_sum_features(k: int, radii=(0.5, 0.8)) -> KnnFeatures:
    """Counts of k-NN distances within each radius: degree sums of r-graphs."""
    r = np.asarray(radii, float)

    def phi(dist):
        return np.sum(dist[..., None, :] <= r[:, None], axis=-1).astype(float)

    return KnnFeatures(phi, k, len(r), f"degree-sum(k={k})")


@dataclass(frozen=True)
class KnnDifferences:
    """All first-order differences of one sample.

    Attributes
    ----------
    delta_sums : ndarray, shape ``(n, dim_out)``
        ``sum_l g_l(x) - sum_l g_l(x^j)`` for every ``j``.
    local : ndarray, shape ``(n, dim_out)``
        ``g_l(x)``.
    max_resampled : float
        ``max_{j,l} ||g_l(x^j) - c||`` over the summands that change.
    """

    delta_sums: np.ndarray
    local: np.ndarray
    max_resampled: float


def knn_differences(features: KnnFeatures, x, x_prime, center=None) -> KnnDifferences:
    """Every ``Delta_j`` of the unnormalised sum by local updates.

    Moving ``x_j`` to ``x'_j`` changes ``g_j`` and the summands of points
    whose neighbour list loses ``x_j`` or gains ``x'_j``. Their new lists
    are rebuilt from the ``k + 1`` nearest neighbours in ``x``.
    """
    x = np.asarray(x, float)
    y = np.asarray(x_prime, float)
    n, k = len(x), features.k
    c = np.zeros(features.dim_out) if center is None else np.asarray(center, float)
    tree = cKDTree(x)
    D, I = tree.query(x, k + 2)
    D, I = _drop_self(D, I)                      # (n, k+1)
    g0 = np.asarray(features.phi(D[:, :k]), float).reshape(n, -1)
    # the resampled point's own summand
    Dy, Iy = tree.query(y, k + 1)
    own = Iy == np.arange(n)[:, None]
    keep = ~own
    keep[~own.any(axis=1), -1] = False
    g_self = np.asarray(features.phi(Dy[keep].reshape(n, k)), float).reshape(n, -1)
    # pairs (l, j): x_j among the k-NN of x_l, or x'_j closer than the (k+1)-th
    rem_l = np.repeat(np.arange(n), k)
    rem_j = I[:, :k].ravel()
    hits = cKDTree(y).sparse_distance_matrix(tree, float(D[:, k].max()), output_type="ndarray")
    ins_j, ins_l = hits["i"].astype(np.int64), hits["j"].astype(np.int64)
    near = (ins_l != ins_j) & (np.linalg.norm(x[ins_l] - y[ins_j], axis=1) < D[ins_l, k])
    ins_l, ins_j = ins_l[near], ins_j[near]
    code = np.unique(np.concatenate([rem_l * n + rem_j, ins_l * n + ins_j]))
    pl, pj = np.divmod(code, n)
    pl, pj = pl[pl != pj], pj[pl != pj]
    base = D[pl]                                  # (P, k+1)
    drop = I[pl] == pj[:, None]
    drop[~drop.any(axis=1), -1] = True
    kept = base[~drop].reshape(len(pl), k)
    new = np.linalg.norm(x[pl] - y[pj], axis=1)
    lists = np.sort(np.concatenate([kept, new[:, None]], axis=1), axis=1)[:, :k]
    g_new = np.asarray(features.phi(lists), float).reshape(len(pl), -1)
    delta = g0 - g_self
    np.add.at(delta, pj, g0[pl] - g_new)
    m_res = max(float(np.max(np.linalg.norm(g_self - c, axis=1))),
                float(np.max(np.linalg.norm(g_new - c, axis=1), initial=0.0)))
    return KnnDifferences(delta, g0, m_res)


# Bound report ----------------------------------------------------------------

@dataclass
class LocalDependenceReport:
    """Moment estimates and assembled local-dependence bounds."""

    n: int
    k: int
    p: int
    m: int
    dim_out: int
    alpha: int
    constant: float
    delta_moment4: float
    delta_max: int
    m_moments: dict[int, float]
    eta_p: float
    gamma1: float
    gamma2: float
    m_bound_fraction: float
    bounds: dict[str, float | None]
    flags: list[str] = field(default_factory=list)
    reps: int = 0
    seed: str | None = None

    def __post_init__(self) -> None:
        vals = [self.delta_moment4, self.eta_p, self.gamma1, self.gamma2,
                *self.m_moments.values()]
        if any(v < 0 for v in vals):
            raise ContractError("moment estimates must be non-negative")
        if self.alpha < 2:
            raise ContractError("alpha must be at least 2")

    def to_json(self) -> str:
        d = dict(self.__dict__)
        d["m_moments"] = {str(q): v for q, v in self.m_moments.items()}
        d["schema"] = "knn-report/1"
        return json.dumps(d, sort_keys=True)


def knn_rate_terms(alpha: float, k: int, eta: float, p: int, n: int) -> dict[str, float]:
    """The five rate terms of the nearest-neighbour bounds (without constants)."""
    return {
        "t1": alpha ** 3 * k ** 4 * eta ** (2 / p) * n ** (-(p - 8) / (2 * p)),
        "t2": alpha ** 3 * k ** 3 * eta ** (3 / p) * n ** (-(p - 6) / (2 * p)),
        "t3": alpha ** 2 * k ** 2 * eta ** (2 / p) * n ** (-(p - 4) / (2 * p)),
        "t4": alpha ** (10 / 3) * k ** (4 / 3) * eta ** (5 / (3 * p)) * n ** (-(3 * p - 20) / (6 * p)),
        "t5": alpha ** 2 * k ** 2.5 * eta ** (3 / (2 * p)) * n ** (-(p - 6) / (2 * p)),
    }


def knn_bound_report(features: KnnFeatures, n: int, m: int, p: int, reps: int,
                     rng: np.random.Generator, constant: float = 1.0, sigma=None,
                     budget: SmoothnessBudget | None = None, center=None,
                     pilot: int = 200, delta_reps: int | None = None,
                     rule: str = "shared-neighbourhood", alpha: int | None = None,
                     seed: str | None = None) -> LocalDependenceReport:
    """Estimate the ingredients of the local-dependence bounds and assemble them.

    Points are uniform in the centred cube of volume ``n`` in ``R^m``. The
    smooth nearest-neighbour bound needs ``p >= 8``; the convex one needs
    ``p >= 12`` and a positive definite ``sigma``. When ``sigma`` is omitted
    the empirical covariance of ``W`` is used and flagged.
    """
    if p < 8:
        raise ContractError(f"p={p}: the nearest-neighbour bounds require p >= 8")
    k = features.k
    law = UniformBoxLaw(dim=m, volume=float(n))
    a = alpha_cones(m, alpha)
    flags: list[str] = []
    if center is None:
        pts = law.sample(rng, (pilot, n))
        center = np.mean([features.local_values(q).mean(axis=0) for q in pts], axis=0)
        flags.append(f"center from {pilot}-sample pilot")
    c = np.asarray(center, float)
    scale = 1.0 / np.sqrt(n)
    Ms, ws, g3, g4, eta, ok = [], [], [], [], [], 0
    for _ in range(reps):
        x = law.sample(rng, (n,))
        xp = law.sample(rng, (n,))
        res = knn_differences(features, x, xp, c)
        nd = np.linalg.norm(res.delta_sums, axis=1) * scale
        M = float(nd.max())
        Ms.append(M)
        g3.append(np.sum(nd ** 3))
        g4.append(np.sum(nd ** 4))
        centred = res.local - c
        ws.append(centred.sum(axis=0) * scale)
        eta.append(np.mean(np.linalg.norm(centred, axis=1) ** p))
        m_f = max(float(np.max(np.linalg.norm(centred, axis=1))), res.max_resampled)
        ok += M <= 4.0 * scale * a * k * m_f * (1 + 1e-12)
    Ms = np.array(Ms)
    moments = {q: float(np.mean(Ms ** q)) for q in (8, 10, 12)}
    deltas = np.array([delta_statistic(law.sample(rng, (n + 4,)), k, rule)
                       for _ in range(delta_reps or reps)])
    d4 = float(np.mean(deltas.astype(float) ** 4))
    eta_p = float(np.mean(eta))
    gamma1, gamma2 = float(np.mean(g3)), float(np.sqrt(np.mean(g4)))
    W = np.array(ws)
    if sigma is None:
        sigma = np.atleast_2d(np.cov(W.T, ddof=1))
        flags.append("sigma: empirical covariance of W")
    norms = matrix_norms(sigma)
    dim = features.dim_out
    local = moments[8] ** 0.25 * d4 ** 0.25 * np.sqrt(n)
    g3t = moments[10] ** (1 / 6) * d4 ** (1 / 6) * n ** (1 / 3)
    g4t = moments[12] ** (1 / 8) * d4 ** (1 / 8) * n ** 0.25
    inv = norms.inv_op_norm
    conv_factor = dim ** 4 * max(1.0, inv ** 2)
    bounds: dict[str, float | None] = {}
    if budget is not None:
        bounds["local-smooth-nonneg"] = constant * budget.m2_tilde * local + budget.m3 / 12 * gamma1
        bounds["local-smooth-posdef"] = (constant * budget.m1 * inv * local
                                         + budget.m2 * np.sqrt(2 * np.pi) / 16 * inv * gamma1)
    bounds["local-convex"] = constant * conv_factor * max(local, gamma1, gamma2, g3t, g4t)
    terms = knn_rate_terms(a, k, eta_p, p, n)
    bounds["knn-smooth"] = constant * (terms["t1"] + terms["t2"])
    if p >= 12 and np.isfinite(inv):
        bounds["knn-convex"] = constant * conv_factor * max(terms.values())
    else:
        bounds["knn-convex"] = None
        flags.append("knn-convex needs p >= 12 and positive definite sigma")
    frac = ok / reps
    if frac < 1.0:
        flags.append(f"M <= 4 n^-1/2 alpha k M_f held in {frac:.4f} of replicates")
    return LocalDependenceReport(n, k, p, m, dim, a, constant, d4, int(deltas.max()), moments,
                                 eta_p, gamma1, gamma2, frac, bounds, flags, reps, seed)


def noninteraction_check(features: KnnFeatures, x, x_prime, i: int, j: int,
                         rule: str = "shared-neighbourhood") -> tuple[bool, bool]:
    """``(applicable, holds)`` for one quadruple ``(x, x', i, j)``.

    ``applicable`` is true when ``{i, j}`` is absent from the graphs of
    ``x, x^i, x^j, x^{ij}``; ``holds`` compares the two differences of the
    unnormalised sum exactly.
    """
    x = np.asarray(x, float)
    xi, xj, xij = x.copy(), x.copy(), x.copy()
    xi[i] = x_prime[i]
    xj[j] = x_prime[j]
    xij[i], xij[j] = x_prime[i], x_prime[j]
    e = frozenset((i, j))
    absent = all(e not in interaction_rule_graph(v, features.k, rule).edges
                 for v in (x, xi, xj, xij))
    s = [features.local_sum(v) for v in (x, xj, xi, xij)]
    holds = bool(np.array_equal(s[0] - s[1], s[2] - s[3]))
    return absent, holds
