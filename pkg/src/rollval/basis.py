"""Cosine basis on [0,1]^p and product-ordered tensor multi-indices.

The univariate family is ``phi_k(x) = cos((k-1) * pi * x)``, used exactly in
this unnormalized form (so the Lebesgue second moment is 1 for k=1 and 1/2
for k >= 2).  Multivariate basis functions are tensor products indexed by
vectors ``l`` of positive integers, enumerated in increasing order of
``prod(l)`` with lexicographic tie-breaking; the ordering is prefix-stable,
so a catalog can be extended lazily without reordering earlier entries.
"""
from __future__ import annotations

import math
from typing import List, Sequence, Tuple

import numpy as np

from .core import ConfigError, DataError

MultiIndex = Tuple[int, ...]


def cosine_eval(k: int, x: float) -> float:
    """Evaluate the k-th univariate cosine basis function (k >= 1)."""
    if k < 1:
        raise DataError(f"basis order k must be >= 1, got {k}")
    return math.cos((k - 1) * math.pi * x)


def tensor_basis_eval(index: Sequence[int], x: Sequence[float]) -> float:
    """Product of univariate cosines; scalar path, useful as a cross-check."""
    if len(index) != len(x):
        raise DataError(
            f"multi-index length {len(index)} != covariate length {len(x)}"
        )
    out = 1.0
    for k, xm in zip(index, x):
        out *= cosine_eval(k, float(xm))
    return out


def _indices_with_product_upto(p: int, cap: int) -> List[MultiIndex]:
    """All multi-indices in (N+)^p with prod(l) <= cap."""
    if p == 1:
        return [(v,) for v in range(1, cap + 1)]
    out: List[MultiIndex] = []

    def rec(prefix: Tuple[int, ...], dims_left: int, budget: int) -> None:
        if dims_left == 1:
            out.extend(prefix + (v,) for v in range(1, budget + 1))
            return
        for v in range(1, budget + 1):
            rec(prefix + (v,), dims_left - 1, budget // v)

    rec((), p, cap)
    return out


def _sort_key(index: MultiIndex) -> Tuple[int, MultiIndex]:
    return (math.prod(index), index)


def multi_index_sequence(p: int, count: int) -> List[MultiIndex]:
    """First ``count`` multi-indices of dimension ``p`` in canonical order.

    Enumerates all indices with product <= cap for doubling caps until at
    least ``count`` are available, then sorts by (product, lexicographic).
    The bounded enumeration makes the prefix property immediate: every index
    with product <= cap precedes all indices with a larger product.
    """
    if p < 1:
        raise ConfigError(f"dimension must be >= 1, got {p}")
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    cap = 1
    while True:
        found = _indices_with_product_upto(p, cap)
        if len(found) >= count:
            found.sort(key=_sort_key)
            return found[:count]
        cap *= 2


class BasisCatalog:
    """Lazily extended, product-ordered tensor cosine basis for one dimension.

    Extension is not thread-safe; confine a catalog to one worker (reads of
    the already-materialized prefix are safe).
    """

    def __init__(self, dimension: int):
        if dimension < 1:
            raise ConfigError(f"dimension must be >= 1, got {dimension}")
        self.dimension = int(dimension)
        self._indices: List[MultiIndex] = []
        self._lm1 = np.zeros((0, self.dimension))  # (l - 1) as float rows
        self._cap = 0

    @property
    def size(self) -> int:
        return len(self._indices)

    def ensure(self, count: int) -> None:
        """Materialize at least ``count`` ordered basis indices."""
        if count <= len(self._indices):
            return
        cap = max(self._cap, 1)
        found = _indices_with_product_upto(self.dimension, cap)
        while len(found) < count:
            cap *= 2
            found = _indices_with_product_upto(self.dimension, cap)
        found.sort(key=_sort_key)
        self._indices = found
        self._lm1 = np.asarray(found, dtype=np.float64) - 1.0
        self._cap = cap

    def indices(self, count: int) -> List[MultiIndex]:
        self.ensure(count)
        return self._indices[:count]

    def basis_vector(self, J: int, x) -> np.ndarray:
        """Evaluate the first J ordered basis functions at one point."""
        if J < 1:
            raise ConfigError(f"J must be >= 1, got {J}")
        self.ensure(J)
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.dimension:
            raise DataError(
                f"covariate length {x.shape[0]} != catalog dimension "
                f"{self.dimension}"
            )
        if self.dimension == 1:
            return np.cos(self._lm1[:J, 0] * (math.pi * x[0]))
        return np.cos(self._lm1[:J] * (math.pi * x)).prod(axis=1)

    def basis_matrix(self, J: int, X, block: int = 1024) -> np.ndarray:
        """Evaluate the first J basis functions at each row of X: (n, J)."""
        if J < 1:
            raise ConfigError(f"J must be >= 1, got {J}")
        self.ensure(J)
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.shape[1] != self.dimension:
            raise DataError(
                f"covariate width {X.shape[1]} != catalog dimension "
                f"{self.dimension}"
            )
        if self.dimension == 1:
            return np.cos(np.multiply.outer(X[:, 0] * math.pi, self._lm1[:J, 0]))
        out = np.empty((X.shape[0], J))
        scaled = self._lm1[:J] * math.pi  # (J, p)
        for start in range(0, X.shape[0], block):
            chunk = X[start : start + block]
            np.cos(chunk[:, None, :] * scaled[None, :, :]).prod(
                axis=2, out=out[start : start + chunk.shape[0]]
            )
        return out


def basis_vector(catalog: BasisCatalog, J: int, x) -> np.ndarray:
    """Module-level alias for :meth:`BasisCatalog.basis_vector`."""
    return catalog.basis_vector(J, x)
