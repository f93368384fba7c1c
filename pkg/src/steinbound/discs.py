"""Intrinsic volumes of unions and intersections of equal discs.

Boundaries are decomposed into circular arcs. Lengths come from arc
spans, areas from the divergence theorem applied arc by arc, and the Euler
characteristic from the Gauss-Bonnet sum of arc turning plus the exterior
angles at arc junctions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .seeding import derive_rng

TWO_PI = 2.0 * np.pi
GB_TOL = 1e-6
DEGENERATE_REL = 1e-12
MAX_JITTER_ROUNDS = 8


class DegenerateConfiguration(RuntimeError):
    """Gauss-Bonnet residual too large; carries the scene seed for replay."""

    def __init__(self, message: str, seed=None, residual: float | None = None):
        super().__init__(f"{message} (seed={seed}, residual={residual})")
        self.seed = seed
        self.residual = residual


@dataclass(frozen=True)
class UnionMeasures:
    """``(V_0, V_1, V_2)`` of a union of discs with diagnostics."""

    v0: int
    v1: float
    v2: float
    residual: float
    jittered: bool

    @property
    def vector(self) -> np.ndarray:
        return np.array([float(self.v0), self.v1, self.v2])


def _arc_area(cx: float, cy: float, R: float, t1: np.ndarray, t2: np.ndarray) -> float:
    """``(1/2) closed-integral (x dy - y dx)`` along arcs ``[t1, t2]`` of a circle."""
    return float(0.5 * np.sum(R * R * (t2 - t1) + R * cx * (np.sin(t2) - np.sin(t1))
                              - R * cy * (np.cos(t2) - np.cos(t1))))


def _uncovered_arcs(beta: np.ndarray, alpha: np.ndarray):
    """Complement of the covered arcs ``[beta - alpha, beta + alpha]`` on the circle.

    Returns the start angles, end angles and the half-angles of the covering
    arcs that bound each gap at its start and at its end.
    """
    theta0 = beta[0]
    s = np.mod(beta - alpha - theta0, TWO_PI)
    e = s + 2.0 * alpha
    wrap = e > TWO_PI
    s = np.concatenate([s, s[wrap] - TWO_PI])
    e = np.concatenate([e, e[wrap] - TWO_PI])
    a = np.concatenate([alpha, alpha[wrap]])
    order = np.argsort(s, kind="stable")
    s, e, a = s[order], e[order], a[order]
    starts, ends, a_start, a_end = [], [], [], []
    cur_e, cur_a = e[0], a[0]
    for si, ei, ai in zip(s[1:], e[1:], a[1:]):
        if si > cur_e:
            starts.append(cur_e)
            ends.append(si)
            a_start.append(cur_a)
            a_end.append(ai)
            cur_e, cur_a = ei, ai
        elif ei > cur_e:
            cur_e, cur_a = ei, ai
    # the reference point 0 (mod 2 pi) is interior to a covering arc, so no
    # gap crosses the artificial cut
    return (np.array(starts) + theta0, np.array(ends) + theta0,
            np.array(a_start), np.array(a_end))


def _union_once(centers: np.ndarray, R: float):
    n = len(centers)
    origin = centers.mean(axis=0)
    c = centers - origin
    tree = cKDTree(c)
    pairs = tree.query_pairs(2.0 * R, output_type="ndarray")
    nbrs: list[list[int]] = [[] for _ in range(n)]
    for i, j in pairs:
        nbrs[i].append(j)
        nbrs[j].append(i)
    tol = DEGENERATE_REL * R
    v1 = v2 = turning = 0.0
    for i in range(n):
        cx, cy = c[i]
        if not nbrs[i]:
            v1 += np.pi * R
            v2 += np.pi * R * R
            turning += TWO_PI
            continue
        diff = c[nbrs[i]] - c[i]
        dist = np.hypot(diff[:, 0], diff[:, 1])
        if np.any(dist < tol) or np.any(np.abs(dist - 2.0 * R) < tol):
            return None
        beta = np.arctan2(diff[:, 1], diff[:, 0])
        alpha = np.arccos(np.clip(dist / (2.0 * R), -1.0, 1.0))
        t1, t2, a1, a2 = _uncovered_arcs(beta, alpha)
        if t1.size == 0:
            continue
        span = t2 - t1
        v1 += 0.5 * R * span.sum()
        v2 += _arc_area(cx, cy, R, t1, t2)
        turning += span.sum() - 0.5 * np.sum(np.pi - 2.0 * a1) - 0.5 * np.sum(np.pi - 2.0 * a2)
    chi = turning / TWO_PI
    v0 = int(np.rint(chi))
    return v0, float(v1), float(v2), float(abs(chi - v0))


def union_measures(centers, R: float, seed=None) -> UnionMeasures:
    """Euler characteristic, half perimeter and area of a union of discs.

    Parameters
    ----------
    centers : array_like, shape ``(n, 2)``
        Disc centres.
    R : float
        Common radius.
    seed : optional
        Scene seed; drives the deterministic jitter applied when a tangency
        or a pair of coincident discs is detected, and is attached to any
        :class:`DegenerateConfiguration`.

    Raises
    ------
    DegenerateConfiguration
        If the Gauss-Bonnet residual is at least ``1e-6``.
    """
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    if R <= 0:
        raise ValueError("R must be positive")
    if len(centers) == 0:
        return UnionMeasures(0, 0.0, 0.0, 0.0, False)
    jittered = False
    pts = centers
    for rnd in range(MAX_JITTER_ROUNDS + 1):
        res = _union_once(pts, R)
        if res is not None:
            break
        jittered = True
        key = seed if isinstance(seed, (int, np.integer)) and seed >= 0 else 0
        rng = derive_rng(int(key), "jitter", rnd)
        pts = centers + DEGENERATE_REL * R * rng.standard_normal(centers.shape)
    else:
        raise DegenerateConfiguration("jitter did not resolve a degenerate scene", seed)
    v0, v1, v2, resid = res
    if resid >= GB_TOL:
        raise DegenerateConfiguration("Gauss-Bonnet residual too large", seed, resid)
    return UnionMeasures(v0, v1, v2, resid, jittered)


def intersection_measures(centers, R: float) -> np.ndarray:
    """``(V_0, V_1, V_2)`` of intersections of equal discs, vectorised.

    Parameters
    ----------
    centers : array_like, shape ``batch + (k, 2)``
        Centres of the ``k`` discs of each intersection.
    R : float
        Common radius.

    Returns
    -------
    ndarray, shape ``batch + (3,)``
    """
    c = np.asarray(centers, dtype=float)
    batch, k = c.shape[:-2], c.shape[-2]
    c = c.reshape(-1, k, 2)
    out = np.zeros((c.shape[0], 3))
    if k == 1:
        out[:] = (1.0, np.pi * R, np.pi * R * R)
        return out.reshape(batch + (3,))
    diff = c[:, None, :, :] - c[:, :, None, :]          # (M, a, b, 2): from a to b
    dist = np.hypot(diff[..., 0], diff[..., 1])
    empty = np.any(dist > 2.0 * R, axis=(1, 2))
    beta = np.arctan2(diff[..., 1], diff[..., 0])
    alpha = np.arccos(np.clip(dist / (2.0 * R), -1.0, 1.0))
    same = dist < 1e-14
    alpha = np.where(same, np.pi, alpha)
    # reference: the farthest other disc gives the tightest interval
    ref = np.argmax(dist, axis=2)                        # (M, a)
    beta_ref = np.take_along_axis(beta, ref[..., None], axis=2)
    delta = np.mod(beta - beta_ref + np.pi, TWO_PI) - np.pi
    delta = np.where(same, 0.0, delta)
    lo = np.max(delta - alpha, axis=2)
    hi = np.min(delta + alpha, axis=2)
    span = np.maximum(hi - lo, 0.0)
    # a disc coinciding with an earlier one adds no boundary of its own
    dup = np.any(same & np.tril(np.ones((k, k), bool), -1), axis=2)
    span = np.where(dup, 0.0, span)
    all_same = np.all(same, axis=2)
    lo = np.where(all_same, -np.pi, lo)
    span = np.where(all_same & ~dup, TWO_PI, span)
    span = np.where(empty[:, None], 0.0, span)
    t1 = beta_ref[..., 0] + lo
    t2 = t1 + span
    cx, cy = c[..., 0], c[..., 1]
    area = 0.5 * np.sum(R * R * span + R * cx * (np.sin(t2) - np.sin(t1))
                        - R * cy * (np.cos(t2) - np.cos(t1)), axis=1)
    v1 = 0.5 * R * span.sum(axis=1)
    nonempty = np.any(span > 0, axis=1)
    out[:, 0] = nonempty
    out[:, 1] = np.where(nonempty, v1, 0.0)
    out[:, 2] = np.where(nonempty, np.maximum(area, 0.0), 0.0)
    return out.reshape(batch + (3,))
