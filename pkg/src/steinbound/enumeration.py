"""Exact oracles by full enumeration over finitely supported coordinates.

Every quantity the Monte Carlo estimators target has an exact counterpart
here, computed by summing over all configurations of the independent
copies ``(X, X', X~)`` with their probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np

from .laws import FiniteLaw
from .resample import (
    EXACT_CAP, ContractError, Functional, compose, k_weight_table,
    second_order_sources, subset_source_table, t_from_table,
)

SUPPORT_CAP = 3
CONFIG_CAP = 2_000_000
CELL_CAP = 20_000_000
CHUNK = 4096


def _check(law: FiniteLaw, n: int, copies: int, support_cap: int, n_cap: int) -> None:
    if not isinstance(law, FiniteLaw):
        raise ContractError("enumeration needs a FiniteLaw")
    if law.support_size > support_cap:
        raise ContractError(
            f"support size {law.support_size} exceeds enumeration cap {support_cap}")
    if n > n_cap:
        raise ContractError(f"n={n} exceeds enumeration cap {n_cap}")
    total = law.support_size ** (copies * n)
    if total > CONFIG_CAP:
        raise ContractError(f"{total} configurations exceed the cap {CONFIG_CAP}")


def enumerate_inputs(law: FiniteLaw, n: int, copies: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """All configurations of ``copies`` independent length-``n`` vectors.

    Returns
    -------
    values : ndarray, shape ``(N, copies, n) + event_shape``
    weights : ndarray, shape ``(N,)``
    """
    s = law.support_size
    idx = np.array(list(product(range(s), repeat=copies * n)), dtype=np.int64)
    idx = idx.reshape(-1, copies, n)
    weights = np.prod(law.probs[idx], axis=(1, 2))
    return law.values[idx], weights


@lru_cache(maxsize=None)
def ternary_source_table(n: int) -> np.ndarray:
    """Source codes of all ``3^n`` recombinations, pattern ``p = sum_i src_i 3^i``."""
    p = np.arange(3 ** n)
    table = ((p[:, None] // 3 ** np.arange(n)) % 3).astype(np.int8)
    table.setflags(write=False)
    return table


def pattern_index(src) -> int:
    """Index of a source-code vector in :func:`ternary_source_table`."""
    src = np.asarray(src, dtype=np.int64)
    return int(src @ (3 ** np.arange(src.size)))


def _evaluate_table(f: Functional, cfg: np.ndarray, table: np.ndarray) -> np.ndarray:
    """``f`` at every recombination in ``table`` for each configuration."""
    ev = cfg.ndim - 3
    x, xp = cfg[:, None, 0], cfg[:, None, 1]
    xt = cfg[:, None, 2] if cfg.shape[1] > 2 else x
    views = compose(x, xp, xt, table[None], ev)
    return f(views)


def lemma_covariance_decomposition(g: Functional, h: Functional, law: FiniteLaw, n: int,
                                   support_cap: int = SUPPORT_CAP,
                                   n_cap: int = EXACT_CAP) -> tuple[np.ndarray, np.ndarray]:
    """Exact covariance of ``(g(X), h(X))`` and its subset-sum decomposition.

    Returns
    -------
    lhs : ndarray, shape ``(dim_g, dim_h)``
        ``Cov(g(X), h(X))`` by enumeration of ``X``.
    rhs : ndarray, shape ``(dim_g, dim_h)``
        ``(1/2) sum_A k_{n,A} sum_{j not in A} E[Delta_j g(X) Delta_j h(X^A)^T]``
        by enumeration of ``(X, X')``.
    """
    _check(law, n, 2, support_cap, n_cap)
    vals, w = enumerate_inputs(law, n, 1)
    gv, hv = g(vals[:, 0]), h(vals[:, 0])
    lhs = (gv * w[:, None]).T @ hv - np.outer(w @ gv, w @ hv)
    vals, w = enumerate_inputs(law, n, 2)
    table = subset_source_table(n)
    rhs = np.zeros_like(lhs)
    for start in range(0, len(w), CHUNK):
        cfg = vals[start:start + CHUNK]
        G = _evaluate_table(g, cfg, table)
        H = _evaluate_table(h, cfg, table)
        rhs += np.einsum("c,cij->ij", w[start:start + CHUNK], t_from_table(G, H))
    return lhs, rhs


def exact_expected_t(f: Functional, law: FiniteLaw, n: int,
                     support_cap: int = SUPPORT_CAP,
                     n_cap: int = EXACT_CAP) -> tuple[np.ndarray, np.ndarray]:
    """``E T`` by enumeration of ``(X, X')`` next to ``Cov(f(X))``."""
    cov, et = lemma_covariance_decomposition(f, f, law, n, support_cap, n_cap)
    return et, cov


def _conditional_t(f: Functional, law: FiniteLaw, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``E[T | X = x]`` for every configuration ``x`` and its probability."""
    xs, wx = enumerate_inputs(law, n, 1)
    table = subset_source_table(n)
    m = len(wx)
    cond = np.zeros((m, f.dim_out, f.dim_out))
    for a in range(m):
        cfg = np.stack([np.broadcast_to(xs[a, 0], xs[:, 0].shape), xs[:, 0]], axis=1)
        T = t_from_table(_evaluate_table(f, cfg, table))
        cond[a] = np.einsum("b,bij->ij", wx, T)
    return cond, wx


def exact_sigma_term_squared(f: Functional, law: FiniteLaw, n: int, sigma,
                             support_cap: int = SUPPORT_CAP) -> float:
    """``E ||E[T | X] - sigma||_HS^2`` by enumeration."""
    _check(law, n, 2, support_cap, EXACT_CAP)
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    cond, wx = _conditional_t(f, law, n)
    return float(wx @ np.sum((cond - sigma) ** 2, axis=(1, 2)))


@dataclass(frozen=True)
class ExactGammaTotals:
    """Exact targets of the gamma estimators.

    ``cube_sum`` is ``sum_j E||Delta_j f||^3`` (equal to gamma_1) and
    ``fourth_sum`` is ``sum_j E||Delta_j f||^4`` (gamma_2 squared). ``q[p]``
    holds the four values ``sum_i E S_g(i)^2`` for ``p = 1, 2``.
    """

    cube_sum: float
    fourth_sum: float
    q: dict[int, np.ndarray]

    @property
    def gamma3_cubed(self) -> float:
        return combine_gamma_groups(self.q[1], 1)

    @property
    def gamma4_fourth(self) -> float:
        return combine_gamma_groups(self.q[2], 2)


def combine_gamma_groups(q: np.ndarray, p: int) -> float:
    """``gamma_{p+2}^{p+2}`` from the four summand groups."""
    lead, rest = 1.5, (9.0 if p == 1 else 27.0 / 4.0)
    return float(lead * q[0] + rest * (q[1] + q[2] + q[3]))


def second_order_terms(f: Functional, F: np.ndarray, n: int, i: int, j: int,
                       base: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``Delta~_i Delta_j f`` at recombination ``base`` from a ternary table ``F``.

    Returns the difference vectors and the per-configuration scale used by
    the zero test.
    """
    idx = [pattern_index(s) for s in second_order_sources(base, i, j)]
    v = F[:, idx]
    diff = v[:, 0] - v[:, 1] - v[:, 2] + v[:, 3]
    scale = np.max(np.abs(v), axis=(1, 2))
    return diff, scale


def exact_gamma_totals(f: Functional, law: FiniteLaw, n: int,
                       support_cap: int = SUPPORT_CAP, n_cap: int = 4) -> ExactGammaTotals:
    """Exact ``gamma`` ingredients by enumeration of ``(X, X', X~)``."""
    _check(law, n, 3, support_cap, n_cap)
    if law.support_size ** (3 * n) * 3 ** n > CELL_CAP:
        raise ContractError(f"enumeration table exceeds {CELL_CAP} cells")
    vals, w = enumerate_inputs(law, n, 3)
    table = ternary_source_table(n)
    weights = k_weight_table(n)
    cube = fourth = 0.0
    q = {1: np.zeros(4), 2: np.zeros(4)}
    subsets = range(1 << n)
    for start in range(0, len(w), CHUNK):
        cfg, wc = vals[start:start + CHUNK], w[start:start + CHUNK]
        F = _evaluate_table(f, cfg, table)
        base0 = np.zeros(n, np.int8)
        for j in range(n):
            a = np.linalg.norm(F[:, 0] - F[:, 3 ** j], axis=-1)
            cube += wc @ a ** 3
            fourth += wc @ a ** 4
        for i in range(n):
            S = {1: np.zeros((len(wc), 4)), 2: np.zeros((len(wc), 4))}
            for mask in subsets:
                members = [b for b in range(n) if mask >> b & 1]
                if len(members) == n:
                    continue
                base = np.zeros(n, np.int8)
                base[members] = 1
                ia = pattern_index(base)
                kw = weights[len(members)]
                for j in range(n):
                    if mask >> j & 1:
                        continue
                    a = np.linalg.norm(F[:, 0] - F[:, 3 ** j], axis=-1)
                    ia_j = ia + 3 ** j
                    a_A = np.linalg.norm(F[:, ia] - F[:, ia_j], axis=-1)
                    d0, s0 = second_order_terms(f, F, n, i, j, base0)
                    dA, _ = second_order_terms(f, F, n, i, j, base)
                    b = np.linalg.norm(d0, axis=-1)
                    b_A = np.linalg.norm(dA, axis=-1)
                    ind = ~f.is_zero(d0, s0)
                    for p, wgt in ((1, np.sqrt(a + b)), (2, np.sqrt(a ** 2 + b ** 2))):
                        S[p][:, 0] += kw * ind * wgt * a_A * a
                        S[p][:, 1] += kw * wgt * b_A * a
                        S[p][:, 2] += kw * wgt * a_A * b
                        S[p][:, 3] += kw * wgt * b_A * b
            for p in (1, 2):
                q[p] += wc @ S[p] ** 2
    return ExactGammaTotals(float(cube), float(fourth), q)


@dataclass(frozen=True)
class ExactBnTerms:
    """Exact suprema over all recombinations and the assembled bound."""

    bn: float
    bn_prime: float
    delta_fourth: float
    bound: float
    argmax_bn: tuple[int, int, int]
    argmax_bn_prime: tuple[int, int, int, int]


def recombination_features(f: Functional, x: np.ndarray, xp: np.ndarray, xt: np.ndarray,
                           patterns: np.ndarray, event_ndim: int = 0) -> dict[str, np.ndarray]:
    """Integrand pieces of the recombination suprema.

    Parameters
    ----------
    x, xp, xt : ndarray, shape ``(B, n) + event_shape``
        Draws of ``X``, ``X'`` and ``X~``.
    patterns : ndarray, shape ``(P, n)``
        Source codes of the candidate recombinations.

    Returns
    -------
    dict
        Arrays of shape ``(B, P)``: indicators ``i12``, ``i13`` of
        ``Delta_{1,2} f != 0`` and ``Delta_{1,3} f != 0`` and squared norms
        ``a1``, ``a2``, ``a3`` of ``Delta_1 f``, ``Delta_2 f``, ``Delta_3 f``
        (coordinates 1, 2, 3 are indices 0, 1, 2).
    """
    pats = np.asarray(patterns, dtype=np.int8)
    n = pats.shape[1]
    if n < 3:
        raise ContractError("recombination features need n >= 3")
    variants = {(): pats}
    for coords in ((0,), (1,), (2,), (0, 1), (0, 2)):
        v = pats.copy()
        v[:, list(coords)] = 1
        variants[coords] = v
    keys = list(variants)
    src = np.concatenate([variants[k] for k in keys])
    vals = f(compose(x[:, None], xp[:, None], xt[:, None], src[None], event_ndim))
    P = pats.shape[0]
    F = {k: vals[:, i * P:(i + 1) * P] for i, k in enumerate(keys)}
    out: dict[str, np.ndarray] = {}
    for name, c in (("a1", 0), ("a2", 1), ("a3", 2)):
        out[name] = np.sum((F[()] - F[(c,)]) ** 2, axis=-1)
    for name, c in (("i12", 1), ("i13", 2)):
        v = [F[()], F[(0,)], F[(c,)], F[(0, c)]]
        diff = v[0] - v[1] - v[2] + v[3]
        scale = np.max(np.abs(np.stack(v)), axis=(0, -1))
        out[name] = (~f.is_zero(diff, scale)).astype(float)
    return out


def exact_bn_terms(f: Functional, law: FiniteLaw, n: int, support_cap: int = SUPPORT_CAP,
                   n_cap: int = 3) -> ExactBnTerms:
    """Exact recombination suprema by enumeration of ``(X, X', X~)``.

    Requires ``n >= 3`` and a symmetric ``f``. The supremum over quadruples
    is exhaustive over all ``3^n`` patterns, which keeps ``n = 3`` the
    practical limit.
    """
    if not f.symmetric:
        raise ContractError("recombination bound requires a symmetric functional")
    if n < 3:
        raise ContractError("recombination bound requires n >= 3")
    _check(law, n, 3, support_cap, n_cap)
    vals, w = enumerate_inputs(law, n, 3)
    ev = vals.ndim - 3
    feats = recombination_features(f, vals[:, 0], vals[:, 1], vals[:, 2],
                                   ternary_source_table(n), ev)
    bn, arg_bn = maximise_bn(feats, w)
    bnp, arg_bnp = maximise_bn_prime(feats, w)
    d4 = float(w @ feats["a1"][:, 0] ** 2)
    return ExactBnTerms(bn, bnp, d4, bn_bound(n, bn, bnp, d4), arg_bn, arg_bnp)


def maximise_bn(feats: dict[str, np.ndarray], w: np.ndarray) -> tuple[float, tuple[int, int, int]]:
    """``max_{Y,Z,Z'} sum_c w_c i12[c,Y] a1[c,Z] a2[c,Z']`` over the columns."""
    best, arg = -np.inf, (0, 0, 0)
    b = feats["a2"]
    for y in range(feats["i12"].shape[1]):
        left = (w * feats["i12"][:, y])[:, None] * feats["a1"]
        m = left.T @ b
        k = int(np.argmax(m))
        if m.flat[k] > best:
            best, arg = float(m.flat[k]), (y,) + divmod(k, m.shape[1])
    return max(best, 0.0), arg


def maximise_bn_prime(feats: dict[str, np.ndarray],
                      w: np.ndarray) -> tuple[float, tuple[int, int, int, int]]:
    """``max sum_c w_c i12[c,Y] i13[c,Y'] a2[c,Z] a3[c,Z']`` over the columns."""
    best, arg = -np.inf, (0, 0, 0, 0)
    i12, i13, a2, a3 = feats["i12"], feats["i13"], feats["a2"], feats["a3"]
    for y in range(i12.shape[1]):
        wy = w * i12[:, y]
        if not wy.any():
            if best < 0.0:
                best, arg = 0.0, (y, 0, 0, 0)
            continue
        for y2 in range(i13.shape[1]):
            wyy = wy * i13[:, y2]
            if not wyy.any():
                if best < 0.0:
                    best, arg = 0.0, (y, y2, 0, 0)
                continue
            m = (wyy[:, None] * a2).T @ a3
            k = int(np.argmax(m))
            if m.flat[k] > best:
                best, arg = float(m.flat[k]), (y, y2) + divmod(k, m.shape[1])
    return max(best, 0.0), arg


def bn_bound(n: int, bn: float, bn_prime: float, delta_fourth: float) -> float:
    """``4 sqrt(n) (sqrt(n B) + sqrt(n^2 B') + sqrt(E||Delta_1 f||^4))``."""
    return float(4.0 * np.sqrt(n) * (np.sqrt(n * bn) + np.sqrt(n * n * bn_prime)
                                     + np.sqrt(delta_fourth)))
