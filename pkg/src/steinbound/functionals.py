"""Built-in functionals used by examples, oracles and tests."""

from __future__ import annotations

import numpy as np

from .resample import Functional, ContractError


def linear_statistic(n: int, dim: int | None = None, zero_tol: float = 1e-12) -> Functional:
    """``f(x) = n^{-1/2} sum_i x_i`` for scalar (``dim=None``) or vector coordinates.

    Sums of floats are exact only for dyadic inputs, so the default zero
    test carries a relative tolerance. Pass ``zero_tol=0`` for dyadic inputs
    with ``n`` a power of four, where every second-order difference of the
    statistic vanishes bit for bit.
    """
    if n < 1:
        raise ContractError("n must be positive")
    scale = 1.0 / np.sqrt(n)
    if dim is None:
        return Functional(lambda x: scale * np.sum(x, axis=-1), 1, 0, True, zero_tol,
                          "linear")
    return Functional(lambda x: scale * np.sum(x, axis=-2), dim, 1, True, zero_tol,
                      f"linear[{dim}]")


def constant_functional(value, event_ndim: int = 0) -> Functional:
    """``f(x) = value`` for every input."""
    c = np.atleast_1d(np.asarray(value, dtype=float))

    def fn(x):
        batch = np.shape(x)[: np.ndim(x) - 1 - event_ndim]
        return np.broadcast_to(c, batch + c.shape).copy()

    return Functional(fn, c.size, event_ndim, True, 0.0, "constant")


def max_functional() -> Functional:
    """``f(x) = max_i x_i`` for scalar coordinates."""
    return Functional(lambda x: np.max(x, axis=-1), 1, 0, True, 0.0, "max")


def coordinate_product(i: int = 0, j: int = 1) -> Functional:
    """``f(x) = x_i x_j`` for scalar coordinates."""
    return Functional(lambda x: x[..., i] * x[..., j], 1, 0, False, 0.0, f"x{i}*x{j}")


def identity_functional() -> Functional:
    """``f(x) = x_0``; the identity when ``n = 1``."""
    return Functional(lambda x: x[..., 0], 1, 0, False, 0.0, "identity")


def table_functional(atoms, table, n: int | None = None) -> Functional:
    """Arbitrary function of finitely supported scalar coordinates.

    Parameters
    ----------
    atoms : array_like
        Sorted support of the coordinate law, length ``s``.
    table : array_like
        Values with shape ``(s,) * n + (dim_out,)``; entry
        ``table[a_1, ..., a_n]`` is ``f`` at ``(atoms[a_1], ..., atoms[a_n])``.
    n : int, optional
        Number of coordinates. Inferred from the leading axes of length
        ``s`` when omitted, which is ambiguous if ``dim_out == s``.
    """
    atoms = np.asarray(atoms, dtype=float)
    table = np.asarray(table, dtype=float)
    s = atoms.size
    if n is None:
        n = 0
        while n < table.ndim and table.shape[n] == s:
            n += 1
    elif table.shape[:n] != (s,) * n:
        raise ContractError(f"table shape {table.shape} does not start with {(s,) * n}")
    if table.ndim == n:
        table = table[..., None]
    dim_out = table.shape[-1]
    flat = table.reshape(-1, dim_out)
    radix = s ** np.arange(n - 1, -1, -1)

    def fn(x):
        idx = np.searchsorted(atoms, x)
        if np.any(idx >= s) or np.any(atoms[np.minimum(idx, s - 1)] != x):
            raise ValueError("input outside the table support")
        return flat[idx @ radix]

    return Functional(fn, dim_out, 0, False, 0.0, "table")


def polynomial_functional(coeffs, powers) -> Functional:
    """Sum of monomials ``sum_t coeffs[t] prod_i x_i^{powers[t, i]}`` (scalar output)."""
    coeffs = np.asarray(coeffs, dtype=float)
    powers = np.asarray(powers, dtype=int)

    def fn(x):
        terms = np.prod(x[..., None, :] ** powers, axis=-1)
        return terms @ coeffs

    return Functional(fn, 1, 0, False, 0.0, "polynomial")
