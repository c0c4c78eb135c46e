"""Shared domain types, loss functions, and the sample-stream abstraction.

Everything downstream (estimators, selection harness, experiments, CLI)
builds on the types here.  All scalar arithmetic is 64-bit floating point.

Error taxonomy (also drives CLI exit codes):

* :class:`ConfigError`   -- bad parameters or candidate configuration (exit 1)
* :class:`DataError`     -- malformed or non-finite sample data (exit 2)
* :class:`DivergenceError` -- an estimator's coefficients blew up (exit 3)
* :class:`SequencingError` -- out-of-order use of a tracker/harness
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np


class RollvalError(Exception):
    """Base class for all library errors."""


class ConfigError(RollvalError):
    """Invalid configuration: bad hyperparameters, candidate tables, flags."""


class DataError(RollvalError):
    """Invalid input data: non-finite values, dimension mismatch, bad rows."""


class DivergenceError(RollvalError):
    """An estimator produced coefficients beyond the allowed magnitude."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


class SequencingError(RollvalError):
    """A tracker or harness was driven out of its required call order."""


def _check_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise DataError(f"{name} must be finite, got {value!r}")
    return value


# ---------------------------------------------------------------------------
# samples and streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    """One covariate vector and its scalar response from a data stream.

    Instances are immutable; the covariate array is marked read-only so a
    sample can be shared freely across candidates and threads.
    """

    x: np.ndarray
    y: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim == 0:
            x = x.reshape(1)
        x.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", float(self.y))

    @property
    def dimension(self) -> int:
        return self.x.shape[0]


class LabeledStream:
    """Single-pass, ordered producer of :class:`Sample` with fixed dimension.

    A stream may only be iterated once; replaying requires re-instantiating
    it from the same seed or source.  When ``validate`` is set, every sample
    is checked for dimension and finiteness and rejected with its 1-based
    index (synthetic generators validate in bulk instead, for speed).
    """

    def __init__(
        self,
        dimension: int,
        source: Iterable[Sample],
        seed: Optional[int] = None,
        validate: bool = False,
    ):
        if dimension < 1:
            raise ConfigError(f"stream dimension must be >= 1, got {dimension}")
        self.dimension = int(dimension)
        self.seed = seed
        self._source = source
        self._consumed = False
        self._validate = validate

    def __iter__(self) -> Iterator[Sample]:
        if self._consumed:
            raise DataError(
                "stream already consumed; re-instantiate from the same "
                "seed/source to replay"
            )
        self._consumed = True
        return self._generate()

    def _generate(self) -> Iterator[Sample]:
        for index, sample in enumerate(self._source, start=1):
            if self._validate:
                if sample.dimension != self.dimension:
                    raise DataError(
                        f"sample {index}: dimension {sample.dimension} != "
                        f"stream dimension {self.dimension}"
                    )
                if not (np.isfinite(sample.x).all() and math.isfinite(sample.y)):
                    raise DataError(f"sample {index}: non-finite value")
            yield sample


def stream_from_arrays(X: np.ndarray, y: np.ndarray, seed=None) -> LabeledStream:
    """Wrap pre-drawn arrays as a stream (bulk-validated once)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] != y.shape[0]:
        raise DataError(f"covariate rows {X.shape[0]} != responses {y.shape[0]}")
    if not np.isfinite(X).all():
        bad = int(np.argwhere(~np.isfinite(X).all(axis=1))[0, 0]) + 1
        raise DataError(f"sample {bad}: non-finite covariate")
    if not np.isfinite(y).all():
        bad = int(np.argwhere(~np.isfinite(y))[0, 0]) + 1
        raise DataError(f"sample {bad}: non-finite response")
    samples = (Sample(X[i], y[i]) for i in range(X.shape[0]))
    return LabeledStream(X.shape[1], samples, seed=seed)


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian observation-noise level for synthetic streams."""

    sigma: float

    def __post_init__(self):
        if not (self.sigma >= 0.0 and math.isfinite(self.sigma)):
            raise ConfigError(f"noise sigma must be >= 0, got {self.sigma}")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def squared_loss(prediction: float, y: float) -> float:
    """Squared error ``(prediction - y)**2``."""
    prediction = _check_finite("prediction", prediction)
    y = _check_finite("y", y)
    d = prediction - y
    return d * d


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not (0.0 < alpha < 1.0):
        raise ConfigError(f"pinball alpha must lie strictly in (0, 1), got {alpha}")
    return alpha


def pinball_loss(prediction: float, y: float, alpha: float) -> float:
    """Asymmetric quantile loss.

    ``alpha * (y - prediction)`` when ``y > prediction``, otherwise
    ``(1 - alpha) * (prediction - y)``; ties fall to the second branch.
    """
    alpha = _check_alpha(alpha)
    prediction = _check_finite("prediction", prediction)
    y = _check_finite("y", y)
    if y > prediction:
        return alpha * (y - prediction)
    return (1.0 - alpha) * (prediction - y)


def pinball_subgradient_sign(prediction: float, y: float, alpha: float) -> float:
    """Descent-direction factor for a pinball-loss gradient step.

    Returns ``alpha`` when ``y > prediction`` and ``-(1 - alpha)`` otherwise
    (ties included), i.e. the negative loss-subgradient factor that multiplies
    the basis vector in an SGD update.
    """
    alpha = _check_alpha(alpha)
    if y > prediction:
        return alpha
    return -(1.0 - alpha)


@dataclass(frozen=True)
class LossKind:
    """Loss selector: plain squared error or pinball (quantile) loss."""

    kind: str
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("squared", "pinball"):
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if self.kind == "pinball":
            object.__setattr__(self, "alpha", _check_alpha(self.alpha))
        elif self.alpha is not None:
            raise ConfigError("squared loss takes no alpha")

    def loss(self, prediction: float, y: float) -> float:
        if self.kind == "squared":
            return squared_loss(prediction, y)
        return pinball_loss(prediction, y, self.alpha)

    def residual_factor(self, prediction: float, y: float) -> float:
        """Factor multiplying ``gamma * D * phi`` in a descent update.

        Squared loss uses the raw residual ``y - prediction``; pinball loss
        substitutes the subgradient sign while leaving the rest of the update
        untouched.
        """
        if self.kind == "squared":
            return y - prediction
        return pinball_subgradient_sign(prediction, y, self.alpha)

    def to_dict(self) -> dict:
        if self.kind == "squared":
            return {"kind": "squared"}
        return {"kind": "pinball", "alpha": self.alpha}

    @staticmethod
    def from_dict(d: dict) -> "LossKind":
        return LossKind(d["kind"], d.get("alpha"))


SQUARED = LossKind("squared")


def pinball(alpha: float) -> LossKind:
    return LossKind("pinball", alpha)
