import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rollval.basis import (
    BasisCatalog,
    basis_vector,
    cosine_eval,
    multi_index_sequence,
    tensor_basis_eval,
)
from rollval.core import ConfigError, DataError


def brute_force_sequence(p, count):
    """Independent oracle: enumerate indices up to a generous product bound,
    sort by (product, lexicographic), truncate."""
    cap = 1
    while True:
        pool = [
            idx
            for idx in itertools.product(range(1, cap + 1), repeat=p)
            if math.prod(idx) <= cap
        ]
        if len(pool) >= count:
            pool.sort(key=lambda idx: (math.prod(idx), idx))
            return pool[:count]
        cap += 1


class TestCosineEval:
    def test_examples(self):
        assert cosine_eval(1, 0.37) == 1.0
        assert cosine_eval(2, 0.0) == pytest.approx(1.0)
        assert cosine_eval(3, 0.5) == pytest.approx(-1.0)

    def test_rejects_bad_order(self):
        with pytest.raises(DataError):
            cosine_eval(0, 0.5)

    @given(st.integers(min_value=1, max_value=50), st.floats(0.0, 1.0))
    def test_bounded(self, k, x):
        assert abs(cosine_eval(k, x)) <= 1.0 + 1e-15


class TestMultiIndexSequence:
    def test_examples(self):
        assert multi_index_sequence(1, 4) == [(1,), (2,), (3,), (4,)]
        assert multi_index_sequence(2, 5) == [(1, 1), (1, 2), (2, 1), (1, 3), (3, 1)]
        assert multi_index_sequence(3, 1) == [(1, 1, 1)]

    @pytest.mark.parametrize("p", [1, 2, 3])
    @pytest.mark.parametrize("count", [1, 7, 50, 200])
    def test_matches_brute_force(self, p, count):
        assert multi_index_sequence(p, count) == brute_force_sequence(p, count)

    @given(
        st.integers(min_value=1, max_value=4),
        st.integers(min_value=1, max_value=60),
        st.integers(min_value=1, max_value=60),
    )
    @settings(max_examples=40, deadline=None)
    def test_prefix_property(self, p, n, m):
        lo, hi = sorted((n, m))
        assert multi_index_sequence(p, hi)[:lo] == multi_index_sequence(p, lo)

    def test_no_duplicates(self):
        seq = multi_index_sequence(3, 200)
        assert len(set(seq)) == 200

    def test_validation(self):
        with pytest.raises(ConfigError):
            multi_index_sequence(0, 5)
        with pytest.raises(ConfigError):
            multi_index_sequence(2, 0)


class TestTensorBasisEval:
    def test_examples(self):
        assert tensor_basis_eval((1, 1), (0.2, 0.9)) == pytest.approx(1.0)
        assert tensor_basis_eval((2, 1), (0.0, 0.5)) == pytest.approx(1.0)
        assert tensor_basis_eval((2, 2), (0.5, 0.5)) == pytest.approx(0.0, abs=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            tensor_basis_eval((1, 2), (0.5,))

    @given(
        st.integers(min_value=1, max_value=3),
        st.integers(min_value=1, max_value=30),
        st.floats(0.0, 1.0),
    )
    @settings(max_examples=50, deadline=None)
    def test_bounded(self, p, count, u):
        index = multi_index_sequence(p, count)[-1]
        x = [u] * p
        assert abs(tensor_basis_eval(index, x)) <= 1.0 + 1e-12


class TestBasisCatalog:
    def test_basis_vector_examples(self):
        cat = BasisCatalog(1)
        np.testing.assert_allclose(cat.basis_vector(2, [0.0]), [1.0, 1.0])
        np.testing.assert_allclose(
            cat.basis_vector(3, [0.5]), [1.0, 0.0, -1.0], atol=1e-15
        )
        cat2 = BasisCatalog(2)
        np.testing.assert_allclose(cat2.basis_vector(3, [0.0, 0.0]), [1.0, 1.0, 1.0])

    def test_vector_agrees_with_scalar_path(self):
        cat = BasisCatalog(3)
        rng = np.random.default_rng(5)
        x = rng.random(3)
        vec = cat.basis_vector(40, x)
        for k, index in enumerate(cat.indices(40)):
            assert vec[k] == pytest.approx(tensor_basis_eval(index, x), abs=1e-12)

    def test_matrix_agrees_with_vector(self):
        cat = BasisCatalog(2)
        rng = np.random.default_rng(6)
        X = rng.random((17, 2))
        mat = cat.basis_matrix(25, X)
        for row, x in zip(mat, X):
            np.testing.assert_allclose(row, cat.basis_vector(25, x), atol=1e-14)

    def test_extension_is_prefix_stable(self):
        cat = BasisCatalog(2)
        first = list(cat.indices(10))
        cat.ensure(150)
        assert cat.indices(150)[:10] == first

    def test_dimension_mismatch(self):
        cat = BasisCatalog(2)
        with pytest.raises(DataError):
            cat.basis_vector(3, [0.1])

    def test_module_level_alias(self):
        cat = BasisCatalog(1)
        np.testing.assert_allclose(basis_vector(cat, 2, [0.0]), [1.0, 1.0])

    def test_monte_carlo_second_moments(self):
        # unnormalized basis: E[phi_k(U)^2] = 1 for k = 1 and 1/2 for k >= 2,
        # cross moments vanish; 1e6 uniform draws, tolerance 5e-3
        rng = np.random.default_rng(123)
        u = rng.random(1_000_000)
        cat = BasisCatalog(1)
        phis = {k: np.cos((k - 1) * math.pi * u) for k in (1, 2, 3, 5)}
        for k, vals in phis.items():
            second = float(np.mean(vals * vals))
            target = 1.0 if k == 1 else 0.5
            assert abs(second - target) < 5e-3
        for k, kp in [(1, 2), (2, 3), (2, 5), (3, 5)]:
            cross = float(np.mean(phis[k] * phis[kp]))
            assert abs(cross) < 5e-3
