"""Binomial Boolean model with ball grains and its intrinsic-volume functional.

``n`` germs are uniform in the centred cube ``E_n`` of volume ``n``; each
carries a ball of radius ``R``. Grains are not clipped to the window.
Exact geometry is available for ``d = 1`` (interval merging) and ``d = 2``
(arc decomposition, see :mod:`steinbound.discs`).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import comb

import numpy as np

from .discs import union_measures
from .laws import UniformBoxLaw
from .resample import ContractError, Functional
from .seeding import derive_rng

BOOLEAN_ZERO_TOL = 1e-9
INCLUSION_EXCLUSION_CAP = 400


class UnsupportedDimension(ContractError):
    """Geometry kernel only covers ``d`` in ``{1, 2}``."""


def _check_dim(d: int) -> None:
    if d not in (1, 2):
        raise UnsupportedDimension(f"d={d} not supported; exact geometry exists for d in (1, 2)")


@dataclass(frozen=True, eq=False)
class IntrinsicVolumes:
    """``(V_0, ..., V_d)`` of a union of grains."""

    v: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.v, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "v", v)

    @property
    def d(self) -> int:
        return self.v.size - 1

    @property
    def euler(self) -> int:
        return int(round(self.v[0]))


@dataclass(frozen=True, eq=False)
class GermGrainScene:
    """Germs of one Boolean-model realisation.

    Attributes
    ----------
    d, n : int
        Ambient dimension and germ count.
    R : float
        Grain radius.
    germs : ndarray, shape ``(n, d)``
    seed : int or None
    """

    d: int
    n: int
    R: float
    germs: np.ndarray
    seed: int | None = None

    def __post_init__(self) -> None:
        g = np.array(self.germs, dtype=float).reshape(self.n, self.d)
        g.setflags(write=False)
        object.__setattr__(self, "germs", g)

    @property
    def half_side(self) -> float:
        return 0.5 * self.n ** (1.0 / self.d)

    def volumes(self) -> IntrinsicVolumes:
        if self.d == 1:
            return intrinsic_volumes_1d(self)
        return intrinsic_volumes_2d(self)

    def to_text(self) -> str:
        """Plain-text replay record with coordinates at 17 significant digits."""
        head = f"boolean-scene d={self.d} n={self.n} R={self.R!r} seed={self.seed}"
        rows = [" ".join(format(v, ".17g") for v in row) for row in self.germs]
        return "\n".join([head] + rows) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GermGrainScene":
        lines = text.strip().splitlines()
        fields = dict(tok.split("=", 1) for tok in lines[0].split()[1:])
        d, n = int(fields["d"]), int(fields["n"])
        seed = None if fields["seed"] == "None" else int(fields["seed"])
        germs = np.array([[float(t) for t in ln.split()] for ln in lines[1:1 + n]])
        return cls(d, n, float(fields["R"]), germs.reshape(n, d), seed)


def germ_law(d: int, n: int) -> UniformBoxLaw:
    """Uniform law on ``E_n`` (event shape ``(d,)``)."""
    _check_dim(d)
    return UniformBoxLaw(dim=d, volume=float(n))


def sample_scene(d: int, n: int, R: float, seed: int) -> GermGrainScene:
    """Draw ``n`` i.i.d. uniform germs in ``E_n``; bit-identical for a fixed seed."""
    _check_dim(d)
    if n < 1 or not R > 0:
        raise ContractError("need n >= 1 and R > 0")
    rng = derive_rng(seed, "boolean-model", d, n)
    germs = germ_law(d, n).sample(rng, (n,))
    return GermGrainScene(d, n, float(R), germs, seed)


def union_volumes_1d(x: np.ndarray, R: float) -> np.ndarray:
    """``(V_0, V_1)`` of unions of intervals ``[x_i - R, x_i + R]``.

    Parameters
    ----------
    x : ndarray, shape ``batch + (n,)``

    Returns
    -------
    ndarray, shape ``batch + (2,)``
    """
    s = np.sort(np.asarray(x, dtype=float), axis=-1)
    gaps = np.diff(s, axis=-1)
    a = 2.0 * R
    v1 = a + np.sum(np.minimum(gaps, a), axis=-1)
    v0 = 1.0 + np.sum(gaps > a, axis=-1)
    return np.stack([v0, v1], axis=-1)


def intrinsic_volumes_1d(scene: GermGrainScene) -> IntrinsicVolumes:
    """Component count and total length of the merged grains."""
    if scene.d != 1:
        raise ContractError("scene is not one-dimensional")
    return IntrinsicVolumes(union_volumes_1d(scene.germs[:, 0], scene.R))


def intrinsic_volumes_2d(scene: GermGrainScene) -> IntrinsicVolumes:
    """Euler characteristic, half perimeter and area of the union of discs."""
    if scene.d != 2:
        raise ContractError("scene is not two-dimensional")
    m = union_measures(scene.germs, scene.R, seed=scene.seed)
    return IntrinsicVolumes(m.vector)


def union_volumes(x: np.ndarray, d: int, R: float) -> np.ndarray:
    """Batched intrinsic volumes for germ arrays of shape ``batch + (n, d)``."""
    _check_dim(d)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != d:
        raise ContractError(f"germ arrays must end in dimension {d}, got {x.shape}")
    if d == 1:
        return union_volumes_1d(x[..., 0], R)
    batch = x.shape[:-2]
    flat = x.reshape((-1,) + x.shape[-2:])
    out = np.array([union_measures(g, R).vector for g in flat])
    return out.reshape(batch + (3,))


def boolean_functional(d: int, n: int, R: float, center) -> Functional:
    """``f(x) = n^{-1/2} (V(union of B(x_i, R)) - center)``.

    Coordinates of the input are germ positions with event shape ``(d,)``.
    Differences of ``f`` do not depend on ``center``. The zero test of
    second-order differences uses a relative tolerance because the volumes
    are sums of floating-point terms.
    """
    _check_dim(d)
    c = np.asarray(center, dtype=float)
    if c.shape != (d + 1,):
        raise ContractError(f"center must have shape ({d + 1},), got {c.shape}")
    scale = 1.0 / np.sqrt(n)

    def fn(x):
        if x.shape[-2] != n:
            raise ContractError(f"expected {n} germs, got {x.shape[-2]}")
        return scale * (union_volumes(x, d, R) - c)

    return Functional(fn, d + 1, 1, True, BOOLEAN_ZERO_TOL, f"boolean[d={d},R={R}]")


def pilot_center(d: int, n: int, R: float, reps: int, seed: int) -> np.ndarray:
    """Empirical mean of ``V`` from an independent pilot stream."""
    rng = derive_rng(seed, "boolean-pilot", d, n)
    x = germ_law(d, n).sample(rng, (reps, n))
    return union_volumes(x, d, R).mean(axis=0)


@dataclass(frozen=True)
class CovarianceEstimate:
    """Unbiased sample covariance of ``f(X)`` with entrywise standard errors."""

    matrix: np.ndarray
    stderr: np.ndarray
    mean: np.ndarray
    mean_stderr: np.ndarray
    replicates: int


def empirical_covariance(functional: Functional, law, n: int, replicates: int,
                         rng: np.random.Generator, block: int = 2048) -> CovarianceEstimate:
    """Sample covariance of ``W = f(X)`` over independent inputs."""
    if replicates < 2:
        raise ContractError("need at least two replicates")
    parts = []
    for start in range(0, replicates, block):
        m = min(block, replicates - start)
        parts.append(functional(law.sample(rng, (m, n))))
    w = np.concatenate(parts)
    mean = w.mean(axis=0)
    c = w - mean
    cov = c.T @ c / (replicates - 1)
    prod = c[:, :, None] * c[:, None, :]
    se = prod.std(axis=0, ddof=1) / np.sqrt(replicates)
    return CovarianceEstimate(cov, se, mean, w.std(axis=0, ddof=1) / np.sqrt(replicates),
                              replicates)


def volume_rows(scenes) -> list[dict]:
    """CSV-ready records ``(seed, V_0, ..., V_d)``."""
    rows = []
    for sc in scenes:
        v = sc.volumes().v
        row = {"seed": sc.seed}
        row.update({f"V_{i}": format(float(x), ".17g") for i, x in enumerate(v)})
        rows.append(row)
    return rows


# Exact first and second moments for d = 1 -------------------------------------

def _check_1d(n: int, R: float) -> tuple[float, float]:
    L, a = float(n), 2.0 * R
    if n < 1 or not R > 0:
        raise ContractError("need n >= 1 and R > 0")
    if a > L:
        raise ContractError(f"exact formulas need 2R <= n (got R={R}, n={n})")
    return L, a


def exact_mean_1d(n: int, R: float, method: str = "spacings") -> np.ndarray:
    """Exact ``E(V_0, V_1)`` for ``d = 1``.

    ``method="spacings"`` uses the law of the spacings of uniform points;
    ``method="inclusion-exclusion"`` sums the alternating series over
    intersections of ``l`` grains in exact rational arithmetic.
    """
    L, a = _check_1d(n, R)
    if method == "spacings":
        b = a / L
        tail = np.exp(n * np.log1p(-b))
        emin = -L / (n + 1) * np.expm1((n + 1) * np.log1p(-b))
        return np.array([1.0 + (n - 1) * tail, a + (n - 1) * emin])
    if method != "inclusion-exclusion":
        raise ContractError(f"unknown method {method!r}")
    if n > INCLUSION_EXCLUSION_CAP:
        raise ContractError(f"inclusion-exclusion limited to n <= {INCLUSION_EXCLUSION_CAP}")
    q = Fraction(a) / Fraction(L)
    Lf = Fraction(L)
    e0 = e1 = Fraction(0)
    for l in range(1, n + 1):
        sgn = comb(n, l) * (1 if l % 2 else -1)
        # P(l grains intersect) and E|intersection of l grains|
        e0 += sgn * (l * q ** (l - 1) - (l - 1) * q ** l)
        e1 += sgn * Lf * (q ** l - Fraction(l - 1, l + 1) * q ** (l + 1))
    return np.array([float(e0), float(e1)])


def exact_covariance_1d(n: int, R: float) -> np.ndarray:
    """Exact ``Sigma_n = Cov(V_0, V_1) / n`` for ``d = 1``.

    With ``V_0 = 1 + sum 1{S_i > 2R}`` and ``V_1 = 2R + sum min(S_i, 2R)``
    over the ``n - 1`` inner spacings, the covariance follows from the
    one- and two-spacing tail functions ``(1 - s/L)^n`` and
    ``(1 - (s + t)/L)_+^n``.
    """
    L, a = _check_1d(n, R)
    if n == 1:
        return np.zeros((2, 2))
    lb = np.log1p(-a / L)
    b = lambda p: np.exp(p * lb)  # noqa: E731
    c = 1.0 - 2.0 * a / L
    cp = (lambda p: c ** p) if c > 0 else (lambda p: 0.0)
    e0 = b(n)
    e1 = -L / (n + 1) * np.expm1((n + 1) * lb)
    same = np.empty((2, 2))
    same[0, 0] = e0 - e0 * e0
    same[0, 1] = same[1, 0] = a * e0 - e0 * e1
    # E min(S, a)^2 = 2 L^2 [u^{n+1}/(n+1) - u^{n+2}/(n+2)] from u = b to 1
    m2 = 2.0 * L * L * (-np.expm1((n + 1) * lb) / (n + 1) + np.expm1((n + 2) * lb) / (n + 2))
    same[1, 1] = m2 - e1 * e1
    cross = np.empty((2, 2))
    cross[0, 0] = cp(n) - e0 * e0
    cross[0, 1] = cross[1, 0] = L / (n + 1) * (b(n + 1) - cp(n + 1)) - e0 * e1
    cross[1, 1] = (L * L / ((n + 1) * (n + 2)) * (1.0 - 2.0 * b(n + 2) + cp(n + 2))
                   - e1 * e1)
    cov = (n - 1) * same + (n - 1) * (n - 2) * cross
    return cov / n
