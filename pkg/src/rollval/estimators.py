"""Online SGD estimator families and the batch orthogonal-series estimator.

All online families follow the same contract: ``update`` consumes one sample
(advancing an internal counter), ``predict`` evaluates the Polyak-averaged
estimate (the raw SGD trajectory is internal), and a fresh estimator predicts
0 everywhere.  States serialize to plain-dict snapshots for checkpoint/resume.

Coefficients are hard-capped at ``COEF_LIMIT``; beyond that an update raises
:class:`~rollval.core.DivergenceError` carrying the step index rather than
propagating Inf into validation scores.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .basis import BasisCatalog
from .core import (
    SQUARED,
    ConfigError,
    DataError,
    DivergenceError,
    LossKind,
    Sample,
    SequencingError,
)

COEF_LIMIT = 1e12


# ---------------------------------------------------------------------------
# sieve-SGD
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleSieve:
    """Power-law schedule: step size A * i^(-1/(2s+1)), basis count
    ceil(B * i^(1/(2s+1))) (never below 1).

    ``s`` is the assumed smoothness, ``omega`` the per-coordinate shrinkage
    exponent (must exceed 1/2 so the shrinkage weights are summable).
    """

    A: float
    B: float
    s: float
    omega: float = 0.51

    def __post_init__(self):
        if not (self.A > 0 and self.B > 0 and self.s > 0):
            raise ConfigError(
                f"schedule constants must be positive: A={self.A}, "
                f"B={self.B}, s={self.s}"
            )
        if not self.omega > 0.5:
            raise ConfigError(f"omega must exceed 0.5, got {self.omega}")

    @property
    def zeta(self) -> float:
        return 1.0 / (2.0 * self.s + 1.0)

    def gamma(self, i: int) -> float:
        return self.A * i ** (-self.zeta)

    def basis_count(self, i: int) -> int:
        return max(1, math.ceil(self.B * i**self.zeta))


class SieveSgd:
    """Online regression on a growing orthogonal-series expansion.

    Processing sample i evaluates the first J_i basis functions, zero-pads
    the trajectory to length J_i, takes one shrunken gradient step

        beta_i = beta_{i-1}^pad + gamma_i * factor * D * phi(X_i),

    with D = diag(k^(-2*omega)) and ``factor`` the loss residual factor
    (``Y_i - phi^T beta`` for squared loss, the subgradient sign for
    pinball), then folds beta_i into the running mean used for prediction.
    """

    family = "sieve"

    def __init__(
        self,
        schedule: ScheduleSieve,
        catalog: BasisCatalog,
        loss: LossKind = SQUARED,
    ):
        self.schedule = schedule
        self.catalog = catalog
        self.loss = loss
        self.i = 0
        self._traj = np.zeros(0)
        self._avg = np.zeros(0)
        self._shrink = np.zeros(0)  # k^(-2*omega), k = 1..size

    @property
    def dimension(self) -> int:
        return self.catalog.dimension

    @property
    def basis_size(self) -> int:
        return self._traj.shape[0]

    @property
    def beta_traj(self) -> np.ndarray:
        return self._traj.copy()

    @property
    def beta_avg(self) -> np.ndarray:
        return self._avg.copy()

    def _grow(self, J: int) -> None:
        size = self._traj.shape[0]
        if J <= size:
            return
        pad = np.zeros(J - size)
        self._traj = np.concatenate([self._traj, pad])
        self._avg = np.concatenate([self._avg, pad])
        ks = np.arange(size + 1, J + 1, dtype=np.float64)
        self._shrink = np.concatenate(
            [self._shrink, ks ** (-2.0 * self.schedule.omega)]
        )

    def predict(self, x, phi: Optional[np.ndarray] = None) -> float:
        size = self._traj.shape[0]
        if size == 0:
            return 0.0
        if phi is None:
            phi = self.catalog.basis_vector(size, x)
        return float(self._avg @ phi[:size])

    def predict_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        n = X.shape[0]
        size = self._traj.shape[0]
        if size == 0:
            return np.zeros(n)
        return self.catalog.basis_matrix(size, X) @ self._avg

    def update(self, sample: Sample) -> None:
        self.update_xy(sample.x, sample.y)

    def update_xy(self, x, y: float, phi: Optional[np.ndarray] = None) -> None:
        i = self.i + 1
        J = self.schedule.basis_count(i)
        if J < self._traj.shape[0]:
            raise ConfigError(
                f"basis schedule shrank from {self._traj.shape[0]} to {J} "
                f"at step {i}; basis counts must be nondecreasing"
            )
        if phi is None:
            phi = self.catalog.basis_vector(J, x)
        elif phi.shape[0] < J:
            raise DataError(
                f"precomputed basis row has {phi.shape[0]} entries, "
                f"need {J} at step {i}"
            )
        phi = phi[:J]
        self._grow(J)
        traj = self._traj
        pred = float(traj @ phi)
        factor = self.loss.residual_factor(pred, y)
        if not math.isfinite(factor):
            raise DivergenceError(
                f"non-finite residual at step {i}", step=i
            )
        traj += (self.schedule.gamma(i) * factor) * (self._shrink * phi)
        peak = float(np.max(np.abs(traj)))
        if not (peak <= COEF_LIMIT):
            raise DivergenceError(
                f"trajectory coefficient magnitude {peak:.3e} exceeds "
                f"{COEF_LIMIT:.0e} at step {i}",
                step=i,
            )
        avg = self._avg
        avg *= (i - 1.0) / i
        avg += traj * (1.0 / i)
        self.i = i

    def snapshot(self) -> dict:
        return {
            "family": self.family,
            "dimension": self.dimension,
            "schedule": {
                "A": self.schedule.A,
                "B": self.schedule.B,
                "s": self.schedule.s,
                "omega": self.schedule.omega,
            },
            "loss": self.loss.to_dict(),
            "i": self.i,
            "traj": self._traj.tolist(),
            "avg": self._avg.tolist(),
        }

    @classmethod
    def from_snapshot(
        cls, snap: dict, catalog: Optional[BasisCatalog] = None
    ) -> "SieveSgd":
        sched = ScheduleSieve(**snap["schedule"])
        catalog = catalog or BasisCatalog(snap["dimension"])
        est = cls(sched, catalog, LossKind.from_dict(snap["loss"]))
        est.i = int(snap["i"])
        est._grow(len(snap["traj"]))
        est._traj[:] = snap["traj"]
        est._avg[:] = snap["avg"]
        return est


# ---------------------------------------------------------------------------
# kernel-SGD
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class GaussianKernel:
    """Gaussian RBF ``k(u, v) = exp(-||u - v||^2 / (2 * bandwidth^2))``.

    ``eval_count`` tallies scalar kernel evaluations, which is how the
    shared-evaluation tests assert the per-sample cost.
    """

    bandwidth: float
    eval_count: int = field(default=0, compare=False)

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ConfigError(f"bandwidth must be positive, got {self.bandwidth}")

    def row(self, support: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Kernel values of one point against every support row."""
        m = support.shape[0]
        self.eval_count += m
        if m == 0:
            return np.zeros(0)
        diff = support - x
        sq = np.einsum("ij,ij->i", diff, diff)
        return np.exp(sq * (-0.5 / self.bandwidth**2))

    def matrix(self, support: np.ndarray, X: np.ndarray, block: int = 512) -> np.ndarray:
        m = support.shape[0]
        self.eval_count += m * X.shape[0]
        out = np.empty((X.shape[0], m))
        scale = -0.5 / self.bandwidth**2
        for start in range(0, X.shape[0], block):
            chunk = X[start : start + block]
            diff = chunk[:, None, :] - support[None, :, :]
            out[start : start + chunk.shape[0]] = np.exp(
                np.einsum("nij,nij->ni", diff, diff) * scale
            )
        return out

    def pair(self, u, v) -> float:
        u = np.asarray(u, dtype=np.float64).reshape(1, -1)
        return float(self.row(u, np.asarray(v, dtype=np.float64).reshape(-1))[0])


class FunctionKernel:
    """Adapter for a user-supplied positive-definite function k(u, v)."""

    def __init__(self, func):
        self.func = func
        self.eval_count = 0

    def row(self, support: np.ndarray, x: np.ndarray) -> np.ndarray:
        self.eval_count += support.shape[0]
        return np.array([self.func(s, x) for s in support], dtype=np.float64)

    def matrix(self, support: np.ndarray, X: np.ndarray) -> np.ndarray:
        self.eval_count += support.shape[0] * X.shape[0]
        return np.array(
            [[self.func(s, x) for s in support] for x in X], dtype=np.float64
        )

    def pair(self, u, v) -> float:
        self.eval_count += 1
        return float(self.func(np.asarray(u), np.asarray(v)))


class SupportStore:
    """Append-only covariate history, shareable across kernel candidates.

    ``ensure(index, x)`` is idempotent for a given step, so several candidates
    advancing in lockstep can all call it and the point is stored once.
    """

    def __init__(self, dimension: int, capacity: int = 64):
        self.dimension = int(dimension)
        self._buf = np.empty((capacity, self.dimension))
        self.count = 0

    def ensure(self, index: int, x: np.ndarray) -> None:
        if self.count >= index:
            return
        if self.count != index - 1:
            raise SequencingError(
                f"support store holds {self.count} points, cannot ensure "
                f"index {index}"
            )
        if self.count == self._buf.shape[0]:
            grown = np.empty((2 * self._buf.shape[0], self.dimension))
            grown[: self.count] = self._buf[: self.count]
            self._buf = grown
        self._buf[self.count] = x
        self.count += 1

    def matrix(self, upto: Optional[int] = None) -> np.ndarray:
        end = self.count if upto is None else upto
        return self._buf[:end]


class _GrowableVector:
    __slots__ = ("_buf", "size")

    def __init__(self, capacity: int = 64):
        self._buf = np.zeros(capacity)
        self.size = 0

    def append(self, value: float) -> None:
        if self.size == self._buf.shape[0]:
            grown = np.zeros(2 * self._buf.shape[0])
            grown[: self.size] = self._buf[: self.size]
            self._buf = grown
        self._buf[self.size] = value
        self.size += 1

    def view(self) -> np.ndarray:
        return self._buf[: self.size]


class KernelSgd:
    """Online kernel regression: the trajectory is a growing kernel expansion
    over past covariates, updated with step sizes A * i^(-zeta).

    Predictions use the running mean of the trajectory expansion, maintained
    coefficient-wise.  The support may be a shared :class:`SupportStore` so
    several candidates differing only in learning rate reuse one kernel row
    per incoming sample.
    """

    family = "kernel"

    def __init__(
        self,
        kernel,
        dimension: int,
        step_constant: float,
        step_exponent: float,
        support: Optional[SupportStore] = None,
    ):
        if not step_constant > 0:
            raise ConfigError(
                f"step constant must be positive, got {step_constant}"
            )
        # zero (constant step size) is allowed so fixed-rate test oracles
        # are expressible; rate-optimal choices use small positive exponents
        if not 0.0 <= step_exponent < 1.0:
            raise ConfigError(
                f"step exponent must lie in [0, 1), got {step_exponent}"
            )
        self.kernel = kernel
        self.dimension = int(dimension)
        self.step_constant = float(step_constant)
        self.step_exponent = float(step_exponent)
        self.support = support if support is not None else SupportStore(dimension)
        self._traj = _GrowableVector()
        self._avg = _GrowableVector()
        self.i = 0

    @property
    def coef_traj(self) -> np.ndarray:
        return self._traj.view().copy()

    @property
    def coef_avg(self) -> np.ndarray:
        return self._avg.view().copy()

    def gamma(self, i: int) -> float:
        return self.step_constant * i ** (-self.step_exponent)

    def kernel_row(self, x) -> np.ndarray:
        """Kernel evaluations of x against this state's i support points."""
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        return self.kernel.row(self.support.matrix(self.i), x)

    def predict(self, x, row: Optional[np.ndarray] = None) -> float:
        if self.i == 0:
            return 0.0
        if row is None:
            row = self.kernel_row(x)
        return float(self._avg.view() @ row[: self.i])

    def predict_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.i == 0:
            return np.zeros(X.shape[0])
        gram = self.kernel.matrix(self.support.matrix(self.i), X)
        return gram @ self._avg.view()

    def update(self, sample: Sample) -> None:
        self.update_xy(sample.x, sample.y)

    def update_xy(self, x, y: float, row: Optional[np.ndarray] = None) -> None:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.dimension:
            raise DataError(
                f"covariate length {x.shape[0]} != estimator dimension "
                f"{self.dimension}"
            )
        i = self.i
        m = i + 1
        if row is None:
            row = self.kernel_row(x)
        traj = self._traj.view()
        pred = float(traj @ row[:i]) if i else 0.0
        if not math.isfinite(pred):
            raise DivergenceError(f"non-finite prediction at step {m}", step=m)
        c_new = self.gamma(m) * (y - pred)
        if not (abs(c_new) <= COEF_LIMIT):
            raise DivergenceError(
                f"trajectory coefficient magnitude {abs(c_new):.3e} exceeds "
                f"{COEF_LIMIT:.0e} at step {m}",
                step=m,
            )
        self.support.ensure(m, x)
        avg = self._avg.view()
        avg *= i / m
        avg += traj * (1.0 / m)
        self._traj.append(c_new)
        self._avg.append(c_new / m)
        self.i = m

    def snapshot(self) -> dict:
        if not isinstance(self.kernel, GaussianKernel):
            raise ConfigError("only Gaussian-kernel states are serializable")
        return {
            "family": self.family,
            "dimension": self.dimension,
            "bandwidth": self.kernel.bandwidth,
            "step_constant": self.step_constant,
            "step_exponent": self.step_exponent,
            "i": self.i,
            "traj": self._traj.view().tolist(),
            "avg": self._avg.view().tolist(),
            "support": self.support.matrix(self.i).tolist(),
        }

    @classmethod
    def from_snapshot(
        cls,
        snap: dict,
        kernel: Optional[GaussianKernel] = None,
        support: Optional[SupportStore] = None,
    ) -> "KernelSgd":
        kernel = kernel or GaussianKernel(snap["bandwidth"])
        est = cls(
            kernel,
            snap["dimension"],
            snap["step_constant"],
            snap["step_exponent"],
            support=support,
        )
        for idx, point in enumerate(snap["support"], start=1):
            est.support.ensure(idx, np.asarray(point, dtype=np.float64))
        for c in snap["traj"]:
            est._traj.append(float(c))
        for c in snap["avg"]:
            est._avg.append(float(c))
        est.i = int(snap["i"])
        return est


def shared_kernel_row(states: Sequence[KernelSgd], x) -> np.ndarray:
    """One kernel row serving every candidate that shares kernel and support.

    The row is computed once, so the per-sample kernel-evaluation count is
    the support length rather than (number of candidates) times it.
    """
    if not states:
        raise ConfigError("shared_kernel_row needs at least one state")
    first = states[0]
    for st in states[1:]:
        if st.kernel is not first.kernel:
            raise ConfigError(
                "candidates passed to shared_kernel_row must share one "
                "kernel instance"
            )
        if st.i != first.i:
            raise ConfigError(
                f"support mismatch: candidate counters differ "
                f"({st.i} != {first.i})"
            )
        if st.support is not first.support and not np.array_equal(
            st.support.matrix(st.i), first.support.matrix(first.i)
        ):
            raise ConfigError("support mismatch across shared-kernel candidates")
    return first.kernel_row(x)


# ---------------------------------------------------------------------------
# parametric SGD
# ---------------------------------------------------------------------------


class ParametricSgd:
    """Linear SGD with a constant learning rate and Polyak averaging:
    ``beta_i = beta_{i-1} + gamma * (Y_i - X_i^T beta_{i-1}) * X_i``.
    """

    family = "parametric"

    def __init__(self, dimension: int, gamma: float):
        if dimension < 1:
            raise ConfigError(f"dimension must be >= 1, got {dimension}")
        if not gamma > 0:
            raise ConfigError(f"gamma must be positive, got {gamma}")
        self.dimension = int(dimension)
        self.gamma = float(gamma)
        self.beta = np.zeros(self.dimension)
        self._avg = np.zeros(self.dimension)
        self.i = 0

    @property
    def beta_avg(self) -> np.ndarray:
        return self._avg.copy()

    def predict(self, x) -> float:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.dimension:
            raise DataError(
                f"covariate length {x.shape[0]} != estimator dimension "
                f"{self.dimension}"
            )
        return float(self._avg @ x)

    def predict_batch(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self._avg

    def update(self, sample: Sample) -> None:
        self.update_xy(sample.x, sample.y)

    def update_xy(self, x, y: float) -> None:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.dimension:
            raise DataError(
                f"covariate length {x.shape[0]} != estimator dimension "
                f"{self.dimension}"
            )
        i = self.i + 1
        resid = y - float(x @ self.beta)
        if not math.isfinite(resid):
            raise DivergenceError(f"non-finite residual at step {i}", step=i)
        self.beta += (self.gamma * resid) * x
        peak = float(np.max(np.abs(self.beta))) if self.dimension else 0.0
        if not (peak <= COEF_LIMIT):
            raise DivergenceError(
                f"coefficient magnitude {peak:.3e} exceeds {COEF_LIMIT:.0e} "
                f"at step {i}",
                step=i,
            )
        self._avg *= (i - 1.0) / i
        self._avg += self.beta * (1.0 / i)
        self.i = i

    def snapshot(self) -> dict:
        return {
            "family": self.family,
            "dimension": self.dimension,
            "gamma": self.gamma,
            "i": self.i,
            "beta": self.beta.tolist(),
            "avg": self._avg.tolist(),
        }

    @classmethod
    def from_snapshot(cls, snap: dict) -> "ParametricSgd":
        est = cls(snap["dimension"], snap["gamma"])
        est.i = int(snap["i"])
        est.beta[:] = snap["beta"]
        est._avg[:] = snap["avg"]
        return est


# ---------------------------------------------------------------------------
# baseline and batch estimators
# ---------------------------------------------------------------------------


class ZeroEstimator:
    """Null model: predicts 0 everywhere and ignores updates."""

    family = "zero"

    def __init__(self, dimension: int):
        self.dimension = int(dimension)
        self.i = 0

    def predict(self, x) -> float:
        return 0.0

    def predict_batch(self, X) -> np.ndarray:
        return np.zeros(np.asarray(X).shape[0])

    def update(self, sample: Sample) -> None:
        self.i += 1

    def update_xy(self, x, y: float) -> None:
        self.i += 1

    def snapshot(self) -> dict:
        return {"family": self.family, "dimension": self.dimension, "i": self.i}

    @classmethod
    def from_snapshot(cls, snap: dict) -> "ZeroEstimator":
        est = cls(snap["dimension"])
        est.i = int(snap["i"])
        return est


@dataclass
class BatchSieveEstimate:
    """Orthogonal-series estimate with coefficients averaged over a batch."""

    catalog: BasisCatalog
    coefficients: np.ndarray

    @property
    def J(self) -> int:
        return self.coefficients.shape[0]

    def predict(self, x) -> float:
        return float(self.catalog.basis_vector(self.J, x) @ self.coefficients)

    def predict_batch(self, X) -> np.ndarray:
        return self.catalog.basis_matrix(self.J, X) @ self.coefficients


def batch_sieve_fit(data, J: int, catalog: BasisCatalog) -> BatchSieveEstimate:
    """Fit ``coef_k = mean(Y_i * phi_k(X_i))`` over a batch.

    ``data`` is either a sequence of :class:`Sample` or an ``(X, y)`` pair of
    arrays.
    """
    if J < 1:
        raise ConfigError(f"J must be >= 1, got {J}")
    if isinstance(data, tuple):
        X, y = data
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
    else:
        samples: List[Sample] = list(data)
        if not samples:
            raise DataError("batch sieve fit needs at least one sample")
        X = np.stack([s.x for s in samples])
        y = np.array([s.y for s in samples])
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[0] == 0:
        raise DataError("batch sieve fit needs at least one sample")
    phi = catalog.basis_matrix(J, X)
    coef = phi.T @ y / X.shape[0]
    return BatchSieveEstimate(catalog, coef)


def estimator_from_snapshot(snap: dict, **kwargs):
    """Rebuild any serialized estimator state from its snapshot dict."""
    family = snap.get("family")
    if family == "sieve":
        return SieveSgd.from_snapshot(snap, **kwargs)
    if family == "kernel":
        return KernelSgd.from_snapshot(snap, **kwargs)
    if family == "parametric":
        return ParametricSgd.from_snapshot(snap)
    if family == "zero":
        return ZeroEstimator.from_snapshot(snap)
    raise ConfigError(f"unknown estimator family {family!r}")
