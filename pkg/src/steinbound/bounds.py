"""Monte Carlo estimation of the bound ingredients and bound assembly.

The estimators target

* ``gamma_1 = sum_j E||Delta_j f||^3`` and ``gamma_2^2 = sum_j E||Delta_j f||^4``,
* the four summand groups of ``gamma_3^3`` and ``gamma_4^4``,
* ``E||E[T - Sigma | X]||_HS^2`` (the conditional covariance term),
* the recombination suprema ``B_n`` and ``B_n'`` for symmetric statistics,

and every estimator has an exact enumeration counterpart in
:mod:`steinbound.enumeration`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .enumeration import bn_bound, combine_gamma_groups, recombination_features
from .resample import (
    SRC_XP, SRC_XT, ContractError, Functional, FunctionalError, compose,
    sample_subset_masks,
)

CONVEX_CONSTANT = 541.0
LINEAR_CONVEX_CONSTANT = 8656.0


def _rng_tag(rng: np.random.Generator) -> str:
    seq = getattr(rng.bit_generator, "seed_seq", None)
    if isinstance(seq, np.random.SeedSequence):
        return f"{seq.entropy}:{'.'.join(map(str, seq.spawn_key))}"
    return "unknown"


def _check_finite(vals: np.ndarray, start: int, rng: np.random.Generator, op: str) -> None:
    bad = ~np.isfinite(vals).reshape(vals.shape[0], -1).all(axis=1)
    if bad.any():
        raise FunctionalError("non-finite functional output",
                              {"operator": op, "replicate": start + int(np.flatnonzero(bad)[0]),
                               "seed": _rng_tag(rng)})


def _chunk_for(reps: int, cost: int, budget: int = 1 << 22) -> int:
    return int(max(1, min(reps, budget // max(1, cost))))


def _mean_se(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    values = np.asarray(values, dtype=float)
    mean = values.mean(axis=0)
    if values.shape[0] < 2:
        return mean, np.full_like(mean, np.inf)
    return mean, values.std(axis=0, ddof=1) / np.sqrt(values.shape[0])


def _root(total: float, se: float, q: float) -> tuple[float, float, bool]:
    """``total^{1/q}`` with a delta-method stderr; negative totals clamp to 0."""
    clamped = total < 0
    total = max(total, 0.0)
    value = total ** (1.0 / q)
    se_root = se * value / (q * total) if total > 0 else 0.0
    return value, se_root, clamped


@dataclass(frozen=True)
class Estimate:
    """A Monte Carlo estimate with its standard error."""

    value: float
    stderr: float
    reps: int


@dataclass(frozen=True)
class Gamma12:
    """Estimates of ``gamma_1`` and ``gamma_2``.

    ``fourth_sum`` estimates ``sum_j E||Delta_j f||^4 = gamma_2^2``.
    """

    gamma1: Estimate
    gamma2: Estimate
    fourth_sum: Estimate
    flags: tuple[str, ...] = ()


def estimate_gamma12(f: Functional, law, n: int, reps: int,
                     rng: np.random.Generator, chunk: int | None = None) -> Gamma12:
    """Unbiased estimates of ``sum_j E||Delta_j f||^3`` and ``sum_j E||Delta_j f||^4``.

    Each replicate draws fresh ``(X, X')`` and ``j`` uniform on ``[n]`` and
    records ``n ||Delta_j f(X)||^q``.
    """
    if reps < 2:
        raise ContractError("estimate_gamma12 needs reps >= 2")
    ev = len(law.event_shape)
    chunk = chunk or _chunk_for(reps, 2 * n * law.event_size)
    out = np.empty((reps, 2))
    for start in range(0, reps, chunk):
        b = min(chunk, reps - start)
        x = law.sample(rng, (b, n))
        xp = law.sample(rng, (b, n))
        j = rng.integers(0, n, size=b)
        src = np.zeros((b, 2, n), np.int8)
        src[np.arange(b), 1, j] = SRC_XP
        vals = f(compose(x[:, None], xp[:, None], x[:, None], src, ev),
                 {"operator": "gamma12"})
        _check_finite(vals, start, rng, "gamma12")
        a = np.linalg.norm(vals[:, 0] - vals[:, 1], axis=-1)
        out[start:start + b, 0] = n * a ** 3
        out[start:start + b, 1] = n * a ** 4
    mean, se = _mean_se(out)
    g2, g2_se, clamped = _root(float(mean[1]), float(se[1]), 2.0)
    return Gamma12(Estimate(float(mean[0]), float(se[0]), reps), Estimate(g2, g2_se, reps),
                   Estimate(float(mean[1]), float(se[1]), reps),
                   ("gamma2-clamped",) if clamped else ())


@dataclass(frozen=True)
class Gamma34:
    """Estimates of ``gamma_3`` and ``gamma_4`` with their summand groups.

    ``groups[p]`` holds the four estimated values of ``sum_i E S_g(i)^2``
    for ``p = 1`` (``gamma_3``) and ``p = 2`` (``gamma_4``).
    """

    gamma3: Estimate
    gamma4: Estimate
    groups: dict[int, np.ndarray]
    groups_se: dict[int, np.ndarray]
    totals: dict[int, Estimate]
    flags: tuple[str, ...] = ()


def second_order_batch(base: np.ndarray, i: np.ndarray, j: np.ndarray) -> list[np.ndarray]:
    """Vectorised source codes of ``Y``, ``Y^j``, ``Y_(i)``, ``(Y_(i))^j``.

    ``base`` has shape ``batch + (n,)``; ``i`` and ``j`` have shape ``batch``.
    """
    ii = i[..., None]
    jj = j[..., None]
    cols = np.arange(base.shape[-1])
    at_i = cols == ii
    at_j = cols == jj
    y = base
    yj = np.where(at_j, SRC_XP, y)
    yi = np.where(at_i & (y == 0), SRC_XT, y)
    yij = np.where(at_j, SRC_XP, yi)
    return [y.astype(np.int8), yj.astype(np.int8), yi.astype(np.int8), yij.astype(np.int8)]


def estimate_gamma34(f: Functional, law, n: int, reps_outer: int, reps_inner: int,
                     rng: np.random.Generator, stratify: bool = False,
                     chunk: int | None = None) -> Gamma34:
    """Nested Monte Carlo estimates of ``gamma_3`` and ``gamma_4``.

    The outer loop draws ``(X, X', X~)`` and ``i`` uniform on ``[n]``. The
    inner sum over ``(A, j)`` is estimated twice independently from
    ``reps_inner`` draws each (probability ``k_{n,A}/n``, rescaled by ``n``);
    the product of the two estimates is unbiased for its square.

    Parameters
    ----------
    stratify : bool
        Draw the inner subset sizes by systematic sampling within each of
        the two groups (variance reduction, still unbiased).
    """
    if reps_inner < 2:
        raise ContractError("estimate_gamma34 needs reps_inner >= 2")
    if reps_outer < 2:
        raise ContractError("estimate_gamma34 needs reps_outer >= 2")
    m = reps_inner
    ev = len(law.event_shape)
    chunk = chunk or _chunk_for(reps_outer, 2 * m * 8 * n * law.event_size)
    out = np.empty((reps_outer, 2, 4))
    for start in range(0, reps_outer, chunk):
        b = min(chunk, reps_outer - start)
        x = law.sample(rng, (b, n))
        xp = law.sample(rng, (b, n))
        xt = law.sample(rng, (b, n))
        i = rng.integers(0, n, size=b)
        mask, j = sample_subset_masks(n, (b, 2, m), rng, stratify=stratify)
        ib = np.broadcast_to(i[:, None, None], j.shape)
        zero = np.zeros(mask.shape, np.int8)
        src0 = second_order_batch(zero, ib, j)
        srcA = second_order_batch(mask.astype(np.int8), ib, j)
        # f(X) is shared by all inner draws of an outer replicate
        src = np.stack(src0[1:] + srcA, axis=-2).reshape(b, -1, n)
        vals = f(compose(x[:, None], xp[:, None], xt[:, None], src, ev),
                 {"operator": "gamma34"})
        fx = f(x, {"operator": "gamma34"})
        _check_finite(vals, start, rng, "gamma34")
        _check_finite(fx, start, rng, "gamma34")
        vals = vals.reshape(b, 2, m, 7, -1)
        f0 = np.broadcast_to(fx[:, None, None, :], (b, 2, m, fx.shape[-1]))
        fj, fi, fij = vals[..., 0, :], vals[..., 1, :], vals[..., 2, :]
        fA, fAj, fAi, fAij = (vals[..., k, :] for k in range(3, 7))
        d0 = f0 - fj - fi + fij
        scale = np.max(np.abs(np.stack([f0, fj, fi, fij])), axis=(0, -1))
        ind = ~f.is_zero(d0, scale)
        a = np.linalg.norm(f0 - fj, axis=-1)
        bb = np.linalg.norm(d0, axis=-1)
        aA = np.linalg.norm(fA - fAj, axis=-1)
        bA = np.linalg.norm(fA - fAj - fAi + fAij, axis=-1)
        for p, w in ((1, np.sqrt(a + bb)), (2, np.sqrt(a ** 2 + bb ** 2))):
            h = np.stack([ind * w * aA * a, w * bA * a, w * aA * bb, w * bA * bb], axis=-1)
            s_hat = n * h.mean(axis=2)  # (b, 2 groups, 4)
            out[start:start + b, p - 1] = n * s_hat[:, 0] * s_hat[:, 1]
    mean, se = _mean_se(out)
    groups = {1: mean[0], 2: mean[1]}
    groups_se = {1: se[0], 2: se[1]}
    totals, roots, flags = {}, {}, []
    for p in (1, 2):
        coef = np.array([1.5] + [9.0 if p == 1 else 6.75] * 3)
        per_rep = out[:, p - 1] @ coef
        t_mean, t_se = _mean_se(per_rep)
        total = combine_gamma_groups(mean[p - 1], p)
        totals[p] = Estimate(total, float(t_se), reps_outer)
        value, r_se, clamped = _root(total, float(t_se), p + 2.0)
        roots[p] = Estimate(value, r_se, reps_outer)
        if clamped:
            flags.append(f"gamma{p + 2}-clamped")
    return Gamma34(roots[1], roots[2], groups, groups_se, totals, tuple(flags))


def estimate_sigma_term(f: Functional, sigma, law, n: int, reps_outer: int, reps_inner: int,
                        rng: np.random.Generator, chunk: int | None = None
                        ) -> tuple[Estimate, Estimate, tuple[str, ...]]:
    """Nested Monte Carlo estimate of ``sqrt(E||E[T - Sigma | X]||_HS^2)``.

    For each outer ``X`` two independent inner estimates of ``E[T | X]``
    are built from ``reps_inner`` draws each of a fresh ``X'`` and ``(A, j)``;
    the Hilbert--Schmidt inner product of the centred pair is unbiased for
    the squared norm.

    Returns
    -------
    value : Estimate
        Square root of the clamped mean.
    squared : Estimate
        The unbiased estimate of the squared term.
    flags : tuple of str
    """
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if sigma.shape != (f.dim_out, f.dim_out):
        raise ContractError(f"sigma has shape {sigma.shape}, functional has dimension {f.dim_out}")
    if not np.allclose(sigma, sigma.T, atol=1e-10):
        raise ContractError("sigma must be symmetric")
    if reps_inner < 2:
        raise ContractError("estimate_sigma_term needs reps_inner >= 2")
    if reps_outer < 2:
        raise ContractError("estimate_sigma_term needs reps_outer >= 2")
    m = reps_inner
    ev = len(law.event_shape)
    chunk = chunk or _chunk_for(reps_outer, 2 * m * 4 * n * law.event_size)
    out = np.empty(reps_outer)
    for start in range(0, reps_outer, chunk):
        b = min(chunk, reps_outer - start)
        x = law.sample(rng, (b, n))
        xp = law.sample(rng, (b, 2, m, n))
        mask, j = sample_subset_masks(n, (b, 2, m), rng)
        at_j = np.arange(n) == j[..., None]
        src_j = np.where(at_j, SRC_XP, 0)
        src_a = mask.astype(np.int8)
        src_aj = np.where(at_j, SRC_XP, src_a)
        src = np.stack([src_j, src_a, src_aj], axis=-2).astype(np.int8)  # (b,2,m,3,n)
        xb = x[:, None, None, None]
        vals = f(compose(xb, xp[:, :, :, None], xb, src, ev), {"operator": "sigma_term"})
        fx = f(x, {"operator": "sigma_term"})
        _check_finite(vals, start, rng, "sigma_term")
        fj, fa, faj = vals[..., 0, :], vals[..., 1, :], vals[..., 2, :]
        dj = fx[:, None, None, :] - fj
        da = fa - faj
        t_hat = 0.5 * n * np.einsum("bgmk,bgml->bgkl", dj, da) / m
        c = t_hat - sigma
        out[start:start + b] = np.sum(c[:, 0] * c[:, 1], axis=(-2, -1))
    mean, se = _mean_se(out)
    value, r_se, clamped = _root(float(mean), float(se), 2.0)
    return (Estimate(value, r_se, reps_outer), Estimate(float(mean), float(se), reps_outer),
            ("sigma-term-clamped",) if clamped else ())


@dataclass(frozen=True)
class BnEstimate:
    """Recombination suprema, the fourth moment of ``Delta_1 f`` and the bound."""

    bn: Estimate
    bn_prime: Estimate
    delta_fourth: Estimate
    bound: float
    patterns_bn: np.ndarray
    patterns_bn_prime: np.ndarray
    candidates: int
    strategy: str


def touched_slot_patterns(n: int) -> np.ndarray:
    """Recombinations free on coordinates 1-3 with a common source elsewhere.

    For ``n <= 4`` every one of the ``3^n`` recombinations is returned.
    """
    if n <= 4:
        p = np.arange(3 ** n)
        return ((p[:, None] // 3 ** np.arange(n)) % 3).astype(np.int8)
    head = ((np.arange(27)[:, None] // 3 ** np.arange(3)) % 3).astype(np.int8)
    rows = []
    for rest in range(3):
        block = np.full((27, n), rest, np.int8)
        block[:, :3] = head
        rows.append(block)
    return np.concatenate(rows)


def _ascent_bn_prime(feats: dict[str, np.ndarray], w: np.ndarray, rng: np.random.Generator,
                     restarts: int = 16, sweeps: int = 12) -> tuple[float, tuple[int, ...]]:
    """Coordinate ascent over ``(Y, Y', Z, Z')`` column choices."""
    cols = [feats["i12"], feats["i13"], feats["a2"], feats["a3"]]
    P = cols[0].shape[1]
    starts = [tuple(int(np.argmax(w @ c)) for c in cols)]
    starts += [tuple(int(v) for v in rng.integers(0, P, size=4)) for _ in range(restarts - 1)]
    best, arg = -np.inf, starts[0]
    for choice in starts:
        choice = list(choice)
        cur = -np.inf
        for _ in range(sweeps):
            improved = False
            for slot in range(4):
                rest = w.copy()
                for other in range(4):
                    if other != slot:
                        rest = rest * cols[other][:, choice[other]]
                scores = rest @ cols[slot]
                k = int(np.argmax(scores))
                if scores[k] > cur + 1e-15:
                    cur, choice[slot], improved = float(scores[k]), k, True
            if not improved:
                break
        if cur > best:
            best, arg = cur, tuple(choice)
    return max(best, 0.0), arg


def estimate_bn_terms(f: Functional, law, n: int, reps: int, rng: np.random.Generator,
                      strategy: str = "touched-slots", pilot: int = 5000,
                      n_random: int = 32, chunk: int | None = None,
                      shortlist: int = 64) -> BnEstimate:
    """Estimate the recombination suprema and the symmetric-statistic bound.

    A pilot sample ranks the recombinations of a candidate family
    (touched-slot patterns plus ``n_random`` random recombinations for
    ``strategy="touched-slots"``; random ones only for ``strategy="random"``)
    and keeps the ``shortlist`` best tuples. Each shortlisted expectation and
    ``E||Delta_1 f||^4`` is re-estimated on ``reps`` fresh draws and the
    largest mean is reported. Picking a single tuple on the pilot alone lets
    a near-tie win on noise and biases the supremum downwards; the maximum
    over the shortlist errs upwards instead, by at most the spread of
    ``shortlist`` correlated means, which keeps the bound conservative.
    """
    if not f.symmetric:
        raise ContractError("recombination bound requires a symmetric functional")
    if n < 3:
        raise ContractError("recombination bound requires n >= 3")
    if reps < 2:
        raise ContractError("estimate_bn_terms needs reps >= 2")
    ev = len(law.event_shape)
    if strategy == "touched-slots":
        family = [touched_slot_patterns(n)]
    elif strategy == "random":
        family = []
    else:
        raise ContractError(f"unknown recombination strategy {strategy!r}")
    if n_random:
        family.append(rng.integers(0, 3, size=(n_random, n)).astype(np.int8))
    cand = np.unique(np.concatenate(family), axis=0)
    P = cand.shape[0]

    def features(size, patterns):
        x, xp, xt = (law.sample(rng, (size, n)) for _ in range(3))
        return recombination_features(f, x, xp, xt, patterns, ev)

    feats = features(pilot, cand)
    w = np.full(pilot, 1.0 / pilot)
    if P <= 64:
        short_bn = _shortlist(_bn_scores(feats, w), shortlist)
    else:
        short_bn = np.array([_greedy_bn(feats, w)[1]])
    if P <= 32:
        short_bnp = _shortlist(_bn_prime_scores(feats, w), shortlist)
    else:
        short_bnp = np.array([_ascent_bn_prime(feats, w, rng)[1]])
    used = np.unique(np.concatenate([short_bn.ravel(), short_bnp.ravel()]))
    col = {int(k): c for c, k in enumerate(used)}
    sb = np.vectorize(col.get)(short_bn)
    sp = np.vectorize(col.get)(short_bnp)
    sel = np.concatenate([cand[used], np.zeros((1, n), np.int8)])
    chunk = chunk or _chunk_for(reps, 6 * sel.shape[0] * n * law.event_size)
    vals_bn = np.empty((reps, len(sb)))
    vals_bnp = np.empty((reps, len(sp)))
    vals_d4 = np.empty((reps, 1))
    for start in range(0, reps, chunk):
        b = min(chunk, reps - start)
        fe = features(b, sel)
        vals_bn[start:start + b] = (fe["i12"][:, sb[:, 0]] * fe["a1"][:, sb[:, 1]]
                                    * fe["a2"][:, sb[:, 2]])
        vals_bnp[start:start + b] = (fe["i12"][:, sp[:, 0]] * fe["i13"][:, sp[:, 1]]
                                     * fe["a2"][:, sp[:, 2]] * fe["a3"][:, sp[:, 3]])
        vals_d4[start:start + b, 0] = fe["a1"][:, -1] ** 2
    out = []
    for v in (vals_bn, vals_bnp, vals_d4):
        mean, se = _mean_se(v)
        k = int(np.argmax(mean))
        out.append((Estimate(float(mean[k]), float(se[k]), reps), k))
    (bn, kb), (bnp, kp), (d4, _) = out
    return BnEstimate(bn, bnp, d4, bn_bound(n, bn.value, bnp.value, d4.value),
                      cand[short_bn[kb]], cand[short_bnp[kp]], P, strategy)


def _bn_scores(feats, w) -> np.ndarray:
    """Pilot objective of every ``(Y, Z, Z')`` column triple, shape ``(P, P, P)``."""
    a1, a2 = feats["a1"], feats["a2"]
    return np.stack([((w * feats["i12"][:, y])[:, None] * a1).T @ a2
                     for y in range(a1.shape[1])])


def _bn_prime_scores(feats, w) -> np.ndarray:
    """Pilot objective of every ``(Y, Y', Z, Z')`` column quadruple."""
    i12, i13, a2, a3 = feats["i12"], feats["i13"], feats["a2"], feats["a3"]
    P = i12.shape[1]
    out = np.zeros((P, P, P, P))
    for y in range(P):
        wy = w * i12[:, y]
        if not wy.any():
            continue
        for y2 in range(P):
            wyy = wy * i13[:, y2]
            if wyy.any():
                out[y, y2] = (wyy[:, None] * a2).T @ a3
    return out


def _shortlist(scores: np.ndarray, size: int) -> np.ndarray:
    """Index tuples of the ``size`` largest scores, best first."""
    flat = scores.ravel()
    size = min(size, flat.size)
    top = np.argpartition(-flat, size - 1)[:size]
    top = top[np.argsort(-flat[top], kind="stable")]
    return np.stack(np.unravel_index(top, scores.shape), axis=1)


def _greedy_bn(feats, w):
    i12, a1, a2 = feats["i12"], feats["a1"], feats["a2"]
    y = int(np.argmax(w @ (i12 * a1 * a2)))
    best, arg = -np.inf, (y, 0, 0)
    for y in np.argsort(-(w @ i12))[:8]:
        m = ((w * i12[:, y])[:, None] * a1).T @ a2
        k = int(np.argmax(m))
        if m.flat[k] > best:
            best, arg = float(m.flat[k]), (int(y),) + divmod(k, m.shape[1])
    return best, arg


@dataclass(frozen=True)
class GammaEstimates:
    """All ingredients of the convex bound.

    ``stderr`` maps field names to standard errors; ``flags`` lists clamped
    estimates. ``method`` is ``exact``, ``nested-mc`` or ``symmetric-lemma``
    (``sigma_term`` replaced by the recombination bound).
    """

    gamma1: float
    gamma2: float
    gamma3: float
    gamma4: float
    sigma_term: float
    stderr: dict = field(default_factory=dict)
    method: str = "nested-mc"
    flags: tuple[str, ...] = ()
    reps: dict = field(default_factory=dict)
    seed: str | None = None

    def __post_init__(self) -> None:
        for name in ("gamma1", "gamma2", "gamma3", "gamma4", "sigma_term"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ContractError(f"{name} must be a non-negative finite value, got {v}")

    @property
    def gamma_max(self) -> tuple[str, float]:
        names = ("sigma_term", "gamma1", "gamma2", "gamma3", "gamma4")
        vals = [getattr(self, k) for k in names]
        k = int(np.argmax(vals))
        return names[k], float(vals[k])

    def scaled(self, c: float) -> "GammaEstimates":
        """Ingredients of ``c f`` (homogeneity of each ingredient)."""
        powers = {"gamma1": 3, "gamma2": 2, "gamma3": 5 / 3, "gamma4": 1.5, "sigma_term": 2}
        vals = {k: getattr(self, k) * c ** p for k, p in powers.items()}
        return GammaEstimates(**vals, stderr={k: v * c ** powers.get(k, 1)
                                               for k, v in self.stderr.items()},
                              method=self.method, flags=self.flags, reps=self.reps,
                              seed=self.seed)

    def to_records(self) -> list[dict]:
        """JSON records with the fields ``name, value, stderr, method, seed, reps``."""
        return [{"name": k, "value": float(getattr(self, k)),
                 "stderr": float(self.stderr.get(k, 0.0)), "method": self.method,
                 "seed": self.seed, "reps": self.reps.get(k)}
                for k in ("gamma1", "gamma2", "gamma3", "gamma4", "sigma_term")]


def estimate_all(f: Functional, law, n: int, sigma, reps: int, reps_outer: int,
                 reps_inner: int, rng: np.random.Generator, seed: str | None = None,
                 stratify: bool = False) -> GammaEstimates:
    """Run every gamma estimator with a shared generator."""
    g12 = estimate_gamma12(f, law, n, reps, rng)
    g34 = estimate_gamma34(f, law, n, reps_outer, reps_inner, rng, stratify=stratify)
    st, _, st_flags = estimate_sigma_term(f, sigma, law, n, reps_outer, reps_inner, rng)
    return GammaEstimates(
        g12.gamma1.value, g12.gamma2.value, g34.gamma3.value, g34.gamma4.value, st.value,
        stderr={"gamma1": g12.gamma1.stderr, "gamma2": g12.gamma2.stderr,
                "gamma3": g34.gamma3.stderr, "gamma4": g34.gamma4.stderr,
                "sigma_term": st.stderr},
        method="nested-mc", flags=g12.flags + g34.flags + st_flags,
        reps={"gamma1": reps, "gamma2": reps, "gamma3": reps_outer, "gamma4": reps_outer,
              "sigma_term": reps_outer},
        seed=seed)


@dataclass(frozen=True)
class SmoothnessBudget:
    """Suprema of derivative norms of a test function.

    ``m1``, ``m2``, ``m3`` bound the operator norms of the first three
    derivatives and ``m2_tilde`` the Hilbert--Schmidt norm of the Hessian.
    """

    m1: float
    m2: float
    m3: float
    m2_tilde: float
    dim: int | None = None

    def __post_init__(self) -> None:
        for k in ("m1", "m2", "m3", "m2_tilde"):
            if getattr(self, k) < 0:
                raise ContractError(f"{k} must be non-negative")
        if self.dim is not None and self.m2_tilde > np.sqrt(self.dim) * self.m2 * (1 + 1e-12):
            raise ContractError("m2_tilde cannot exceed sqrt(d) * m2")


@dataclass(frozen=True)
class MatrixNorms:
    hs_norm: float
    op_norm: float
    min_eig: float
    inv_op_norm: float
    posdef: bool
    symmetrized: bool


def matrix_norms(sigma, tol: float = 1e-10) -> MatrixNorms:
    """Norms of a symmetric matrix from its spectral decomposition.

    Non-symmetric input (beyond ``tol``) is symmetrised and flagged.
    ``inv_op_norm`` is ``inf`` unless the matrix is positive definite.
    """
    s = np.atleast_2d(np.asarray(sigma, dtype=float))
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ContractError(f"sigma must be square, got shape {s.shape}")
    symmetrized = not np.allclose(s, s.T, atol=tol, rtol=0)
    s = 0.5 * (s + s.T)
    eig = np.linalg.eigvalsh(s)
    min_eig = float(eig[0])
    posdef = min_eig > 0
    return MatrixNorms(float(np.sqrt(np.sum(s ** 2))), float(np.max(np.abs(eig))), min_eig,
                       1.0 / min_eig if posdef else float("inf"), posdef, symmetrized)


# Bound formulas keyed by report tag. Each takes the recorded breakdown.
def _smooth_nonneg(b: dict) -> float:
    return b["m2_tilde"] / 2.0 * b["sigma_term"] + b["m3"] / 12.0 * b["gamma1"]


def _smooth_posdef(b: dict) -> float:
    return (np.sqrt(2.0) / np.sqrt(np.pi) * b["m1"] * b["inv_op_norm"] * b["sigma_term"]
            + np.sqrt(2.0 * np.pi) / 16.0 * b["m2"] * b["inv_op_norm"] * b["gamma1"])


def _convex(b: dict) -> float:
    return (b["constant"] * b["d"] ** 4 * max(1.0, b["inv_op_norm"] ** 2)
            * max(b["sigma_term"], b["gamma1"], b["gamma2"], b["gamma3"], b["gamma4"]))


def _linear_smooth_nonneg(b: dict) -> float:
    return (8.0 * b["m2_tilde"] * np.sqrt(b["moment4"])
            + 0.75 * b["m3"] * b["moment3"]) / np.sqrt(b["n"])


def _linear_smooth_posdef(b: dict) -> float:
    return b["inv_op_norm"] * (16.0 * np.sqrt(2.0) * b["m1"] / np.sqrt(np.pi) * np.sqrt(b["moment4"])
                               + b["m2"] * np.sqrt(2.0 * np.pi) / 2.0 * b["moment3"]) / np.sqrt(b["n"])


def _linear_convex(b: dict) -> float:
    return (b["constant"] * b["d"] ** 4 * max(1.0, b["inv_op_norm"] ** 2)
            * max(np.sqrt(b["moment4"]), b["moment3"], b["moment5"] ** (1 / 3),
                  b["moment6"] ** 0.25) / np.sqrt(b["n"]))


def _recombination(b: dict) -> float:
    return bn_bound(int(b["n"]), b["bn"], b["bn_prime"], b["delta_fourth"])


FORMULAS = {
    "smooth-nonneg": _smooth_nonneg,
    "smooth-posdef": _smooth_posdef,
    "convex": _convex,
    "linear-smooth-nonneg": _linear_smooth_nonneg,
    "linear-smooth-posdef": _linear_smooth_posdef,
    "linear-convex": _linear_convex,
    "symmetric-recombination": _recombination,
}


@dataclass(frozen=True)
class BoundReport:
    """An assembled bound with every ingredient it was computed from."""

    bound_value: float
    theorem: str
    breakdown: dict
    sigma: np.ndarray
    sigma_inv_opnorm: float

    def recompute(self) -> float:
        return float(FORMULAS[self.theorem](self.breakdown))

    def audit(self, tol: float = 1e-10) -> bool:
        """True when the stored value re-derives from the breakdown."""
        again = self.recompute()
        return abs(again - self.bound_value) <= tol * max(1.0, abs(self.bound_value))

    def to_json(self) -> str:
        payload = {"bound_value": self.bound_value, "theorem": self.theorem,
                   "breakdown": {k: (v if isinstance(v, (str, int)) else float(v))
                                 for k, v in self.breakdown.items()},
                   "sigma": np.asarray(self.sigma).tolist(),
                   "sigma_inv_opnorm": self.sigma_inv_opnorm}
        return json.dumps(payload, sort_keys=True)


def _report(tag: str, breakdown: dict, sigma, inv: float) -> BoundReport:
    value = float(FORMULAS[tag](breakdown))
    return BoundReport(value, tag, breakdown, np.atleast_2d(np.asarray(sigma, float)), inv)


def assemble_smooth_bound(gamma: GammaEstimates, budget: SmoothnessBudget, sigma,
                          posdef: bool = False) -> BoundReport:
    """Smooth test-function bound.

    Without ``posdef`` the bound is ``M~2/2 * sigma_term + M3/12 * gamma_1``.
    With ``posdef`` it is
    ``sqrt(2/pi) M1 ||Sigma^-1|| sigma_term + sqrt(2 pi)/16 M2 ||Sigma^-1|| gamma_1``.
    ``sigma_term`` is a root mean square and so dominates the mean norm the
    bound is stated with.
    """
    norms = matrix_norms(sigma)
    b = {"sigma_term": gamma.sigma_term, "gamma1": gamma.gamma1}
    if not posdef:
        b.update(m2_tilde=budget.m2_tilde, m3=budget.m3)
        return _report("smooth-nonneg", b, sigma, norms.inv_op_norm)
    if not norms.posdef:
        raise ContractError(f"sigma is not positive definite (min eigenvalue {norms.min_eig:.3e})")
    b.update(m1=budget.m1, m2=budget.m2, inv_op_norm=norms.inv_op_norm)
    return _report("smooth-posdef", b, sigma, norms.inv_op_norm)


def assemble_convex_bound(gamma: GammaEstimates, sigma) -> BoundReport:
    """``541 d^4 max(1, ||Sigma^-1||^2) max(sigma_term, gamma_1..gamma_4)``."""
    norms = matrix_norms(sigma)
    if not norms.posdef:
        raise ContractError(f"sigma is not positive definite (min eigenvalue {norms.min_eig:.3e})")
    d = np.atleast_2d(sigma).shape[0]
    argmax, _ = gamma.gamma_max
    b = {"constant": CONVEX_CONSTANT, "d": d, "inv_op_norm": norms.inv_op_norm,
         "sigma_term": gamma.sigma_term, "gamma1": gamma.gamma1, "gamma2": gamma.gamma2,
         "gamma3": gamma.gamma3, "gamma4": gamma.gamma4, "argmax": argmax}
    return _report("convex", b, sigma, norms.inv_op_norm)


def assemble_recombination_bound(est: BnEstimate, n: int) -> BoundReport:
    """Report for the symmetric-statistic bound on the conditional covariance term."""
    b = {"n": n, "bn": est.bn.value, "bn_prime": est.bn_prime.value,
         "delta_fourth": est.delta_fourth.value, "strategy": est.strategy}
    return _report("symmetric-recombination", b, np.zeros((1, 1)), float("nan"))


@dataclass(frozen=True)
class LinearBounds:
    """Closed-form ingredient bounds and assembled bounds for ``n^{-1/2} sum X_i``."""

    gamma1: float
    gamma2: float
    gamma3: float
    gamma4: float
    sigma_term: float
    reports: dict[str, BoundReport]


def linear_gamma_bounds(moments: dict[int, float], n: int) -> dict[str, float]:
    """Upper bounds on the ingredients of the linear statistic.

    ``moments[q]`` is ``E||X_1||^q`` for ``q = 3..6``; coordinates are
    assumed centred.
    """
    r = 1.0 / np.sqrt(n)
    out = {"gamma1": 8.0 * moments[3] * r, "gamma2": 4.0 * np.sqrt(moments[4]) * r,
           "sigma_term": 16.0 * np.sqrt(moments[4]) * r}
    for p in (1, 2):
        q = p + 2.0
        out[f"gamma{p + 2}"] = (2.0 ** (1 + 1 / q) * (30.0 + 27.0 / p) ** (1 / q)
                               * moments[p + 4] ** (1 / q) * r)
    return out


def linear_clt_bounds(moments: dict[int, float], n: int, sigma,
                      budget: SmoothnessBudget | None = None) -> LinearBounds:
    """Closed-form bounds for the standardised sum of centred i.i.d. vectors."""
    g = linear_gamma_bounds(moments, n)
    norms = matrix_norms(sigma)
    d = np.atleast_2d(sigma).shape[0]
    reports = {}
    base = {"n": n, "moment3": moments[3], "moment4": moments[4]}
    if budget is not None:
        reports["linear-smooth-nonneg"] = _report(
            "linear-smooth-nonneg", dict(base, m2_tilde=budget.m2_tilde, m3=budget.m3),
            sigma, norms.inv_op_norm)
        if norms.posdef:
            reports["linear-smooth-posdef"] = _report(
                "linear-smooth-posdef", dict(base, m1=budget.m1, m2=budget.m2,
                                             inv_op_norm=norms.inv_op_norm),
                sigma, norms.inv_op_norm)
    if norms.posdef:
        reports["linear-convex"] = _report(
            "linear-convex", dict(base, moment5=moments[5], moment6=moments[6],
                                  constant=LINEAR_CONVEX_CONSTANT, d=d,
                                  inv_op_norm=norms.inv_op_norm),
            sigma, norms.inv_op_norm)
    return LinearBounds(g["gamma1"], g["gamma2"], g["gamma3"], g["gamma4"], g["sigma_term"],
                        reports)


def law_moments(law, orders=(3, 4, 5, 6)) -> dict[int, float]:
    """``E||X_1||^q`` from a law's closed forms."""
    return {q: float(law.norm_moment(q)) for q in orders}
