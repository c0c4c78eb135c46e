"""Weighted rolling-validation trackers and the lockstep selection harness.

The rolling-validation score of a candidate after i samples is

    RV_i = sum_{l=1}^{i-1} l^xi * loss(fhat_l(X_{l+1}), Y_{l+1}),

i.e. each incoming sample first scores the current estimate (trained on the
previous l samples), then trains it.  The l = 0 term is excluded for every
xi, keeping xi = 0 and xi > 0 on the same index set.  Accumulation uses
Neumaier compensated summation so heavily weighted long runs stay accurate.

The harness drives K candidates in lockstep over one stream:
predict -> score -> update, per candidate, per sample; candidates never see
a sample before scoring it (no leakage).  Candidates sharing a basis catalog
or a kernel instance share per-sample evaluations.
"""
from __future__ import annotations

import csv
import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    SQUARED,
    ConfigError,
    DivergenceError,
    LossKind,
    RollvalError,
    Sample,
    SequencingError,
)
from .estimators import KernelSgd, SieveSgd, shared_kernel_row


class RvTracker:
    """Accumulated weighted rolling-validation score with weight exponent xi.

    ``steps`` counts stream samples witnessed; the score for weight index l
    may only be recorded when exactly l samples have been seen, which guards
    the off-by-one contract between training and scoring.
    """

    __slots__ = ("xi", "steps", "_sum", "_comp")

    def __init__(self, xi: float):
        xi = float(xi)
        if not xi >= 0.0:
            raise ConfigError(f"weight exponent xi must be >= 0, got {xi}")
        self.xi = xi
        self.steps = 0
        self._sum = 0.0
        self._comp = 0.0

    @property
    def value(self) -> float:
        return self._sum + self._comp

    def _add(self, term: float) -> None:
        s = self._sum
        t = s + term
        if abs(s) >= abs(term):
            self._comp += (s - t) + term
        else:
            self._comp += (term - t) + s
        self._sum = t

    def skip_unscored(self) -> None:
        """Witness the stream's first sample, whose prediction is unscored."""
        if self.steps != 0:
            raise SequencingError(
                f"first sample already witnessed (steps={self.steps})"
            )
        self.steps = 1

    def record(self, l: int, prediction: float, y: float, loss: LossKind) -> None:
        self.record_value(l, loss.loss(prediction, y))

    def record_value(self, l: int, loss_value: float) -> None:
        """Accumulate a precomputed holdout loss (caller guarantees it came
        from this tracker's loss function on finite inputs)."""
        if l < 1:
            raise SequencingError(f"weight index must be >= 1, got {l}")
        if l != self.steps:
            raise SequencingError(
                f"weight index {l} does not match witnessed samples "
                f"{self.steps}"
            )
        if self.xi == 0.0:
            w = 1.0
        elif self.xi == 1.0:
            w = float(l)
        else:
            w = float(l) ** self.xi
        self._add(w * loss_value)
        self.steps = l + 1

    def snapshot(self) -> dict:
        return {
            "xi": self.xi,
            "steps": self.steps,
            "sum": self._sum,
            "comp": self._comp,
        }

    @classmethod
    def from_snapshot(cls, snap: dict) -> "RvTracker":
        tr = cls(snap["xi"])
        tr.steps = int(snap["steps"])
        tr._sum = float(snap["sum"])
        tr._comp = float(snap["comp"])
        return tr


def rv_update(
    tracker: RvTracker, l: int, prediction: float, y: float, loss: LossKind
) -> RvTracker:
    """Record one weighted holdout loss; returns the (mutated) tracker."""
    tracker.record(l, prediction, y, loss)
    return tracker


def competition_ranks(values: Sequence[float]) -> List[int]:
    """Ranks 1..K where ties share the lower rank: 1 + #{strictly smaller}."""
    return [1 + sum(1 for w in values if w < v) for v in values]


def geometric_checkpoints(
    n_max: int, factor_log10: float = 0.1, start: int = 10
) -> List[int]:
    """Sample counts spaced by a constant log10 factor, ending at n_max."""
    if n_max < 1:
        raise ConfigError(f"n_max must be >= 1, got {n_max}")
    points = set()
    k = 0
    base = math.log10(start)
    while True:
        n = round(10.0 ** (base + k * factor_log10))
        if n > n_max:
            break
        if n >= start:
            points.add(int(n))
        k += 1
    points.add(int(n_max))
    return sorted(points)


# ---------------------------------------------------------------------------
# shared-evaluation plumbing (used by both the harness and the experiment
# runner, so candidates sharing a catalog or kernel pay for one evaluation
# per incoming sample)
# ---------------------------------------------------------------------------


class _SharedBasisGroup:
    __slots__ = ("catalog", "members")

    def __init__(self, catalog, members: List[SieveSgd]):
        self.catalog = catalog
        self.members = members

    def row(self, x) -> np.ndarray:
        need = max(m.schedule.basis_count(m.i + 1) for m in self.members)
        return self.catalog.basis_vector(need, x)


class _SharedKernelGroup:
    __slots__ = ("members",)

    def __init__(self, members: List[KernelSgd]):
        self.members = members

    def row(self, x) -> np.ndarray:
        if len(self.members) == 1:
            return self.members[0].kernel_row(x)
        return shared_kernel_row(self.members, x)


def build_shared_groups(estimators: Sequence) -> Tuple[list, dict]:
    """Group estimators that can share per-sample evaluations.

    Returns (groups, index) where ``index`` maps ``id(estimator)`` to its
    group so the per-sample loop can look up the precomputed row.
    """
    groups: list = []
    index: dict = {}
    basis_groups: dict = {}
    kernel_groups: dict = {}
    for est in estimators:
        if isinstance(est, SieveSgd):
            key = id(est.catalog)
            if key not in basis_groups:
                basis_groups[key] = _SharedBasisGroup(est.catalog, [])
                groups.append(basis_groups[key])
            basis_groups[key].members.append(est)
            index[id(est)] = basis_groups[key]
        elif isinstance(est, KernelSgd):
            key = (id(est.kernel), id(est.support))
            if key not in kernel_groups:
                kernel_groups[key] = _SharedKernelGroup([])
                groups.append(kernel_groups[key])
            kernel_groups[key].members.append(est)
            index[id(est)] = kernel_groups[key]
    return groups, index


# ---------------------------------------------------------------------------
# harness
# ---------------------------------------------------------------------------


class SelectionHarness:
    """K candidates plus K trackers advanced in lockstep over one stream.

    Candidate order is the tie-break order: the current selection is the
    lowest-index candidate among those with minimal rolling-validation score.
    """

    def __init__(
        self,
        candidates: Sequence[Tuple[str, object]],
        xi: float,
        loss: LossKind = SQUARED,
    ):
        if not candidates:
            raise ConfigError("harness needs at least one candidate")
        labels = [label for label, _ in candidates]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"candidate labels must be unique, got {labels}")
        self.labels = labels
        self.estimators = [est for _, est in candidates]
        self.loss = loss
        self.trackers = [RvTracker(xi) for _ in candidates]
        self.xi = float(xi)
        self.i = 0
        self._groups, self._group_of = build_shared_groups(self.estimators)

    def step(self, sample: Sample) -> None:
        """Process one sample: predict, score, then update each candidate."""
        x, y = sample.x, sample.y
        l = self.i
        rows = {id(g): g.row(x) for g in self._groups}
        for label, est, tracker in zip(self.labels, self.estimators, self.trackers):
            group = self._group_of.get(id(est))
            row = rows[id(group)] if group is not None else None
            try:
                if row is None:
                    pred = est.predict(x)
                elif isinstance(est, SieveSgd):
                    pred = est.predict(x, phi=row)
                else:
                    pred = est.predict(x, row=row)
                if l == 0:
                    tracker.skip_unscored()
                else:
                    tracker.record(l, pred, y, self.loss)
                if row is None:
                    est.update(sample)
                elif isinstance(est, SieveSgd):
                    est.update_xy(x, y, phi=row)
                else:
                    est.update_xy(x, y, row=row)
            except DivergenceError as err:
                raise DivergenceError(
                    f"candidate {label!r}: {err}", step=err.step
                ) from err
            except RollvalError as err:
                raise type(err)(f"candidate {label!r}: {err}") from err
        self.i += 1

    def rv_values(self) -> List[float]:
        return [t.value for t in self.trackers]

    def current_selection(self) -> str:
        """Label of the candidate with minimal score (lowest index on ties)."""
        if not self.labels:
            raise ConfigError("empty harness")
        values = self.rv_values()
        best = min(range(len(values)), key=lambda k: (values[k], k))
        return self.labels[best]

    def run(
        self,
        stream,
        checkpoints: Optional[Sequence[int]] = None,
        trace: Optional["SelectionTrace"] = None,
        on_checkpoint: Optional[Callable[["SelectionHarness"], None]] = None,
    ) -> "SelectionTrace":
        """Consume a stream, recording a trace at the given sample counts."""
        if trace is None:
            trace = SelectionTrace(self.labels)
        marks = set(checkpoints) if checkpoints is not None else set()
        for sample in stream:
            self.step(sample)
            if self.i in marks:
                record_checkpoint(self, trace)
                if on_checkpoint is not None:
                    on_checkpoint(self)
        return trace

    def snapshot(self) -> dict:
        return {
            "version": 1,
            "i": self.i,
            "xi": self.xi,
            "loss": self.loss.to_dict(),
            "candidates": [
                {
                    "label": label,
                    "estimator": est.snapshot(),
                    "tracker": tracker.snapshot(),
                }
                for label, est, tracker in zip(
                    self.labels, self.estimators, self.trackers
                )
            ],
        }

    @classmethod
    def from_snapshot(cls, snap: dict) -> "SelectionHarness":
        from .estimators import estimator_from_snapshot

        pairs = []
        trackers = []
        for entry in snap["candidates"]:
            pairs.append((entry["label"], estimator_from_snapshot(entry["estimator"])))
            trackers.append(RvTracker.from_snapshot(entry["tracker"]))
        harness = cls(pairs, snap["xi"], LossKind.from_dict(snap["loss"]))
        harness.trackers = trackers
        harness.i = int(snap["i"])
        return harness


def harness_step(harness: SelectionHarness, sample: Sample) -> SelectionHarness:
    """Module-level alias for :meth:`SelectionHarness.step`."""
    harness.step(sample)
    return harness


class SelectionTrace:
    """Checkpointed rolling-validation values and candidate ranks."""

    def __init__(self, labels: Sequence[str]):
        self.labels = list(labels)
        self.checkpoints: List[int] = []
        self.rv_rows: List[List[float]] = []
        self.rank_rows: List[List[int]] = []

    def __len__(self) -> int:
        return len(self.checkpoints)

    def record(self, harness: SelectionHarness) -> None:
        values = harness.rv_values()
        self.checkpoints.append(harness.i)
        self.rv_rows.append(values)
        self.rank_rows.append(competition_ranks(values))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["checkpoint_n", "candidate_label", "rv", "rank"])
            for n, rvs, ranks in zip(self.checkpoints, self.rv_rows, self.rank_rows):
                for label, rv, rank in zip(self.labels, rvs, ranks):
                    writer.writerow([n, label, repr(rv), rank])


def record_checkpoint(
    harness: SelectionHarness, trace: SelectionTrace
) -> SelectionTrace:
    """Append the harness's current sample count, scores, and ranks."""
    trace.record(harness)
    return trace
