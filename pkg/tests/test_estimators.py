import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rollval.basis import BasisCatalog, multi_index_sequence, tensor_basis_eval
from rollval.core import ConfigError, DivergenceError, SQUARED, Sample, pinball
from rollval.estimators import (
    GaussianKernel,
    KernelSgd,
    ParametricSgd,
    ScheduleSieve,
    SieveSgd,
    SupportStore,
    ZeroEstimator,
    batch_sieve_fit,
    estimator_from_snapshot,
    shared_kernel_row,
)


class ConstSchedule:
    """Fixed step size and basis count, for hand-checkable recursions."""

    def __init__(self, gamma=1.0, J=1, omega=0.51):
        self._gamma = gamma
        self._J = J
        self.omega = omega

    def gamma(self, i):
        return self._gamma

    def basis_count(self, i):
        return self._J


# ---------------------------------------------------------------------------
# naive dense re-implementations (oracles)
# ---------------------------------------------------------------------------


class NaiveSieve:
    """Full-history sieve recursion with scalar basis evaluation: stores every
    trajectory vector and averages by brute force."""

    def __init__(self, schedule, dimension, loss=SQUARED):
        self.schedule = schedule
        self.dimension = dimension
        self.loss = loss
        self.history = []

    def update(self, x, y):
        i = len(self.history) + 1
        J = self.schedule.basis_count(i)
        indices = multi_index_sequence(self.dimension, J)
        prev = list(self.history[-1]) if self.history else []
        prev = prev + [0.0] * (J - len(prev))
        phi = [tensor_basis_eval(indices[k], x) for k in range(J)]
        pred = sum(b * f for b, f in zip(prev, phi))
        factor = self.loss.residual_factor(pred, y)
        gamma = self.schedule.gamma(i)
        omega = self.schedule.omega
        new = [
            prev[k] + gamma * factor * (k + 1) ** (-2.0 * omega) * phi[k]
            for k in range(J)
        ]
        self.history.append(new)

    def averaged(self):
        n = len(self.history)
        J = len(self.history[-1])
        return [
            sum(h[k] if k < len(h) else 0.0 for h in self.history) / n
            for k in range(J)
        ]

    def predict(self, x):
        avg = self.averaged()
        indices = multi_index_sequence(self.dimension, len(avg))
        return sum(
            b * tensor_basis_eval(idx, x) for b, idx in zip(avg, indices)
        )


def kernel_function_space(bandwidth, X, Y, step_constant, step_exponent, grid):
    """Dense simulation of the kernel update in function space: tracks the
    trajectory's values at all sample points and on a query grid, plus the
    running-mean function on the grid.  No coefficient bookkeeping."""

    def gram(U, V):
        diff = U[:, None, :] - V[None, :, :]
        return np.exp(-0.5 * np.einsum("abc,abc->ab", diff, diff) / bandwidth**2)

    n = X.shape[0]
    G = gram(X, X)
    Kg = gram(X, grid)
    traj_at_samples = np.zeros(n)
    traj_on_grid = np.zeros(grid.shape[0])
    avg_on_grid = np.zeros(grid.shape[0])
    for m in range(1, n + 1):
        idx = m - 1
        resid = Y[idx] - traj_at_samples[idx]
        c = step_constant * m ** (-step_exponent) * resid
        traj_at_samples = traj_at_samples + c * G[idx]
        traj_on_grid = traj_on_grid + c * Kg[idx]
        avg_on_grid = ((m - 1) / m) * avg_on_grid + traj_on_grid / m
    return avg_on_grid


# ---------------------------------------------------------------------------
# sieve-SGD
# ---------------------------------------------------------------------------


class TestSieveSgd:
    def test_one_step_hand_recursion(self):
        est = SieveSgd(ScheduleSieve(A=1.0, B=1.0, s=1.0), BasisCatalog(1))
        est.update(Sample(np.array([0.0]), 2.0))
        np.testing.assert_array_equal(est.beta_traj, [2.0])
        np.testing.assert_array_equal(est.beta_avg, [2.0])

    def test_two_step_hand_recursion_constant_schedule(self):
        est = SieveSgd(ConstSchedule(gamma=1.0, J=1), BasisCatalog(1))
        est.update(Sample(np.array([0.0]), 2.0))
        est.update(Sample(np.array([0.0]), 1.0))
        np.testing.assert_array_equal(est.beta_traj, [1.0])
        np.testing.assert_array_equal(est.beta_avg, [1.5])
        assert est.predict(np.array([0.0])) == 1.5

    def test_zero_residual_is_fixed_point(self):
        est = SieveSgd(ConstSchedule(gamma=0.7, J=3), BasisCatalog(1))
        rng = np.random.default_rng(0)
        for _ in range(5):
            est.update(Sample(rng.random(1), rng.normal()))
        x = np.array([0.3])
        phi = est.catalog.basis_vector(3, x)
        y = float(est.beta_traj @ phi)  # trajectory prediction, zero residual
        before = est.beta_traj
        est.update(Sample(x, y))
        np.testing.assert_array_equal(est.beta_traj, before)

    def test_fresh_state_predicts_zero(self):
        est = SieveSgd(ScheduleSieve(A=1.0, B=1.0, s=2.0), BasisCatalog(2))
        assert est.predict(np.array([0.1, 0.9])) == 0.0

    def test_basis_zero_crossing(self):
        est = SieveSgd(ConstSchedule(gamma=1.0, J=2), BasisCatalog(1))
        est.update(Sample(np.array([0.0]), 1.0))
        a = est.beta_avg
        # phi_2(0.5) = cos(pi/2) = 0, so the prediction is the constant term
        assert est.predict(np.array([0.5])) == pytest.approx(a[0], abs=1e-15)

    @pytest.mark.parametrize("p,loss", [(1, SQUARED), (2, SQUARED), (1, pinball(0.8))])
    def test_matches_naive_replay(self, p, loss):
        sched = ScheduleSieve(A=0.5, B=2.0, s=1.0, omega=0.6)
        est = SieveSgd(sched, BasisCatalog(p), loss)
        naive = NaiveSieve(sched, p, loss)
        rng = np.random.default_rng(42)
        n = 60
        for _ in range(n):
            x = rng.random(p)
            y = float(rng.normal())
            est.update(Sample(x, y))
            naive.update(x, y)
        np.testing.assert_allclose(est.beta_traj, naive.history[-1], rtol=1e-10)
        np.testing.assert_allclose(est.beta_avg, naive.averaged(), rtol=1e-10)
        for _ in range(5):
            x = rng.random(p)
            assert est.predict(x) == pytest.approx(naive.predict(x), rel=1e-8, abs=1e-12)

    def test_averaging_identity_against_history(self):
        sched = ScheduleSieve(A=0.3, B=1.5, s=2.0)
        est = SieveSgd(sched, BasisCatalog(1))
        rng = np.random.default_rng(7)
        history = []
        for _ in range(200):
            est.update(Sample(rng.random(1), float(rng.normal())))
            history.append(est.beta_traj)
        J = history[-1].shape[0]
        padded = np.zeros((len(history), J))
        for row, h in zip(padded, history):
            row[: h.shape[0]] = h
        np.testing.assert_allclose(est.beta_avg, padded.mean(axis=0), rtol=1e-10)

    def test_zero_padding_of_new_slots(self):
        # when J jumps, untouched slots must have been exactly zero before the
        # step: the new trajectory entries equal the bare gradient increment
        sched = ScheduleSieve(A=0.5, B=3.0, s=1.0, omega=0.51)
        est = SieveSgd(sched, BasisCatalog(1))
        rng = np.random.default_rng(11)
        prev_size = 0
        for i in range(1, 40):
            x = rng.random(1)
            y = float(rng.normal())
            J = sched.basis_count(i)
            phi = est.catalog.basis_vector(J, x)
            traj_before = est.beta_traj
            pred = float(traj_before @ phi[:prev_size]) if prev_size else 0.0
            est.update(Sample(x, y))
            gamma = sched.gamma(i)
            shrink = np.arange(1, J + 1, dtype=np.float64) ** (-2.0 * sched.omega)
            # same association as the update, so new slots match exactly iff
            # their pre-step value was exactly zero
            expected_new = (gamma * (y - pred)) * (shrink * phi)
            got = est.beta_traj
            for k in range(prev_size, J):
                assert got[k] == expected_new[k]
            prev_size = J

    def test_divergence_guard(self):
        est = SieveSgd(ConstSchedule(gamma=1e9, J=1), BasisCatalog(1))
        with pytest.raises(DivergenceError) as err:
            for i in range(10):
                est.update(Sample(np.array([0.0]), 1.0))
        assert err.value.step is not None

    def test_snapshot_roundtrip(self):
        sched = ScheduleSieve(A=0.5, B=2.0, s=1.0)
        est = SieveSgd(sched, BasisCatalog(2), pinball(0.9))
        rng = np.random.default_rng(3)
        for _ in range(25):
            est.update(Sample(rng.random(2), float(rng.normal())))
        clone = estimator_from_snapshot(est.snapshot())
        x = rng.random(2)
        assert clone.predict(x) == est.predict(x)
        clone.update(Sample(x, 0.5))
        est.update(Sample(x, 0.5))
        np.testing.assert_array_equal(clone.beta_traj, est.beta_traj)


class TestScheduleSieve:
    def test_validation(self):
        with pytest.raises(ConfigError):
            ScheduleSieve(A=0.0, B=1.0, s=1.0)
        with pytest.raises(ConfigError):
            ScheduleSieve(A=1.0, B=1.0, s=1.0, omega=0.5)

    @given(
        st.floats(min_value=0.05, max_value=5.0),
        st.floats(min_value=0.5, max_value=8.0),
        st.floats(min_value=0.5, max_value=4.0),
    )
    @settings(max_examples=25, deadline=None)
    def test_monotone(self, A, B, s):
        sched = ScheduleSieve(A=A, B=B, s=s)
        ii = np.arange(1, 2001)
        J = np.array([sched.basis_count(int(i)) for i in ii])
        g = np.array([sched.gamma(int(i)) for i in ii])
        assert (np.diff(J) >= 0).all()
        assert (np.diff(g) <= 0).all()
        assert J[0] >= 1


# ---------------------------------------------------------------------------
# kernel-SGD
# ---------------------------------------------------------------------------


class TestKernelSgd:
    def test_hand_recursion(self):
        kern = GaussianKernel(1.0)
        est = KernelSgd(kern, 1, step_constant=0.5, step_exponent=0.0)
        x = np.array([0.4])
        est.update(Sample(x, 3.0))
        np.testing.assert_array_equal(est.coef_traj, [1.5])
        np.testing.assert_array_equal(est.coef_avg, [1.5])
        est.update(Sample(x, 3.0))  # K(x, x) = 1, gamma_2 = 0.5
        np.testing.assert_allclose(est.coef_traj, [1.5, 0.75])
        np.testing.assert_allclose(est.coef_avg, [1.5, 0.375])

    def test_zero_residual_appends_zero(self):
        kern = GaussianKernel(0.7)
        est = KernelSgd(kern, 1, 0.5, 0.25)
        rng = np.random.default_rng(1)
        for _ in range(4):
            est.update(Sample(rng.random(1), float(rng.normal())))
        x = rng.random(1)
        y = float(est.coef_traj @ kern.row(est.support.matrix(est.i), x))
        est.update(Sample(x, y))
        assert est.coef_traj[-1] == 0.0

    def test_predict_examples(self):
        kern = GaussianKernel(0.1)
        est = KernelSgd(kern, 1, 1.0, 0.25)
        assert est.predict(np.array([0.2])) == 0.0
        est.update(Sample(np.array([0.5]), 2.0))
        assert est.predict(np.array([0.5])) == pytest.approx(2.0)
        assert abs(est.predict(np.array([0.5 + 10 * 0.1]))) < 1e-6

    def test_matches_function_space_simulation(self):
        bandwidth, A, zeta = 0.3, 0.8, 0.25
        rng = np.random.default_rng(9)
        n = 100
        X = rng.random((n, 2))
        Y = rng.normal(size=n)
        grid = rng.random((37, 2))
        oracle = kernel_function_space(bandwidth, X, Y, A, zeta, grid)
        est = KernelSgd(GaussianKernel(bandwidth), 2, A, zeta)
        for x, y in zip(X, Y):
            est.update(Sample(x, float(y)))
        got = np.array([est.predict(g) for g in grid])
        np.testing.assert_allclose(got, oracle, atol=1e-8)
        np.testing.assert_allclose(est.predict_batch(grid), got, atol=1e-12)

    def test_averaging_identity_against_history(self):
        est = KernelSgd(GaussianKernel(0.5), 1, 0.6, 0.3)
        rng = np.random.default_rng(13)
        history = []
        for _ in range(150):
            est.update(Sample(rng.random(1), float(rng.normal())))
            history.append(est.coef_traj)
        n = len(history)
        padded = np.zeros((n, n))
        for row, h in zip(padded, history):
            row[: h.shape[0]] = h
        np.testing.assert_allclose(est.coef_avg, padded.mean(axis=0), rtol=1e-10)

    def test_snapshot_roundtrip(self):
        est = KernelSgd(GaussianKernel(0.4), 2, 0.5, 0.2)
        rng = np.random.default_rng(21)
        for _ in range(12):
            est.update(Sample(rng.random(2), float(rng.normal())))
        clone = estimator_from_snapshot(est.snapshot())
        x = rng.random(2)
        assert clone.predict(x) == est.predict(x)


class TestSharedKernelRow:
    def _shared_pair(self, n=3):
        kern = GaussianKernel(0.5)
        store = SupportStore(1)
        a = KernelSgd(kern, 1, 0.5, 0.2, support=store)
        b = KernelSgd(kern, 1, 0.9, 0.3, support=store)
        rng = np.random.default_rng(2)
        for _ in range(n):
            x, y = rng.random(1), float(rng.normal())
            row = shared_kernel_row([a, b], x)
            a.update_xy(x, y, row=row)
            b.update_xy(x, y, row=row)
        return kern, a, b

    def test_evaluation_count(self):
        kern, a, b = self._shared_pair(3)
        x = np.random.default_rng(3).random(1)
        before = kern.eval_count
        row = shared_kernel_row([a, b], x)
        assert row.shape == (3,)
        assert kern.eval_count - before == 3  # once, not per candidate

    def test_single_candidate_identical_to_unshared(self):
        kern = GaussianKernel(0.5)
        est = KernelSgd(kern, 1, 0.5, 0.2)
        rng = np.random.default_rng(4)
        xs = [rng.random(1) for _ in range(5)]
        ys = [float(rng.normal()) for _ in range(5)]
        for x, y in zip(xs, ys):
            est.update_xy(x, y, row=shared_kernel_row([est], x))
        alone = KernelSgd(GaussianKernel(0.5), 1, 0.5, 0.2)
        for x, y in zip(xs, ys):
            alone.update(Sample(x, y))
        q = rng.random(1)
        assert est.predict(q) == alone.predict(q)

    def test_kernel_mismatch_rejected(self):
        a = KernelSgd(GaussianKernel(0.5), 1, 0.5, 0.2)
        b = KernelSgd(GaussianKernel(0.5), 1, 0.5, 0.2)
        with pytest.raises(ConfigError):
            shared_kernel_row([a, b], np.array([0.1]))

    def test_support_mismatch_rejected(self):
        kern = GaussianKernel(0.5)
        a = KernelSgd(kern, 1, 0.5, 0.2)
        b = KernelSgd(kern, 1, 0.5, 0.2)
        a.update_xy(np.array([0.1]), 1.0)
        b.update_xy(np.array([0.9]), 1.0)
        with pytest.raises(ConfigError):
            shared_kernel_row([a, b], np.array([0.2]))


# ---------------------------------------------------------------------------
# parametric SGD
# ---------------------------------------------------------------------------


class TestParametricSgd:
    def test_hand_recursion(self):
        est = ParametricSgd(1, 0.5)
        est.update(Sample(np.array([1.0]), 1.0))
        np.testing.assert_array_equal(est.beta, [0.5])
        np.testing.assert_array_equal(est.beta_avg, [0.5])
        est.update(Sample(np.array([2.0]), 1.0))  # residual exactly 0
        np.testing.assert_array_equal(est.beta, [0.5])
        np.testing.assert_array_equal(est.beta_avg, [0.5])

    def test_zero_covariate_is_noop(self):
        est = ParametricSgd(2, 0.3)
        est.update(Sample(np.array([1.0, -1.0]), 2.0))
        before = est.beta
        est.update(Sample(np.zeros(2), 17.0))
        np.testing.assert_array_equal(est.beta, before)

    def test_predict_examples(self):
        est = ParametricSgd(1, 0.5)
        assert est.predict(np.array([4.0])) == 0.0
        est.update(Sample(np.array([1.0]), 1.0))
        assert est.predict(np.array([3.0])) == pytest.approx(1.5)
        est2 = ParametricSgd(2, 0.1)
        est2._avg[:] = [1.0, -1.0]
        assert est2.predict(np.array([2.0, 2.0])) == 0.0

    def test_matches_full_history_replay(self):
        rng = np.random.default_rng(14)
        est = ParametricSgd(3, 0.2)
        beta = np.zeros(3)
        history = []
        for _ in range(200):
            x = rng.normal(size=3) * 0.5
            y = float(x @ np.array([1.0, -2.0, 0.5]) + rng.normal())
            est.update(Sample(x, y))
            beta = beta + 0.2 * (y - beta @ x) * x
            history.append(beta.copy())
        np.testing.assert_allclose(est.beta, history[-1], rtol=1e-10)
        np.testing.assert_allclose(est.beta_avg, np.mean(history, axis=0), rtol=1e-10)

    def test_divergence_guard_carries_step(self):
        est = ParametricSgd(1, 3.0)  # step far beyond stability
        with pytest.raises(DivergenceError) as err:
            for i in range(200):
                est.update(Sample(np.array([2.0]), 1.0))
        assert isinstance(err.value.step, int)

    def test_snapshot_roundtrip(self):
        est = ParametricSgd(2, 0.4)
        rng = np.random.default_rng(15)
        for _ in range(9):
            est.update(Sample(rng.normal(size=2) * 0.3, float(rng.normal())))
        clone = estimator_from_snapshot(est.snapshot())
        x = rng.normal(size=2)
        assert clone.predict(x) == est.predict(x)


# ---------------------------------------------------------------------------
# batch sieve
# ---------------------------------------------------------------------------


class TestBatchSieve:
    def test_examples(self):
        cat = BasisCatalog(1)
        est = batch_sieve_fit([Sample(np.array([0.0]), 2.0)], 1, cat)
        np.testing.assert_allclose(est.coefficients, [2.0])
        est2 = batch_sieve_fit(
            [Sample(np.array([0.0]), 1.0), Sample(np.array([0.0]), 3.0)], 2, cat
        )
        np.testing.assert_allclose(est2.coefficients, [2.0, 2.0])
        est3 = batch_sieve_fit(
            [Sample(np.array([0.3]), 0.0), Sample(np.array([0.8]), 0.0)], 4, cat
        )
        np.testing.assert_array_equal(est3.coefficients, np.zeros(4))

    def test_recompute_invariant(self):
        cat = BasisCatalog(2)
        rng = np.random.default_rng(8)
        samples = [Sample(rng.random(2), float(rng.normal())) for _ in range(30)]
        est = batch_sieve_fit(samples, 7, cat)
        indices = cat.indices(7)
        for k in range(7):
            manual = np.mean(
                [s.y * tensor_basis_eval(indices[k], s.x) for s in samples]
            )
            assert est.coefficients[k] == pytest.approx(manual, rel=1e-12)
        x = rng.random(2)
        manual_pred = sum(
            c * tensor_basis_eval(idx, x) for c, idx in zip(est.coefficients, indices)
        )
        assert est.predict(x) == pytest.approx(manual_pred, rel=1e-12)

    def test_empty_data_rejected(self):
        from rollval.core import DataError

        with pytest.raises(DataError):
            batch_sieve_fit([], 2, BasisCatalog(1))


class TestZeroEstimator:
    def test_is_inert(self):
        est = ZeroEstimator(3)
        est.update(Sample(np.ones(3), 5.0))
        assert est.predict(np.ones(3)) == 0.0
        assert est.i == 1
        clone = estimator_from_snapshot(est.snapshot())
        assert clone.i == 1
