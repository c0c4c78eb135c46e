"""Synthetic generators, replicated selection experiments, and stability runs.

Two stock generators mirror the simulation settings the toolkit targets:

* univariate: X ~ U[0,1], Y = sum_{k=1}^{30} k^(-2.5) cos((k-1) pi X) + eps,
  eps ~ N(0, 0.5^2);
* ten-dimensional: X ~ U([0,1]^10), eps ~ N(0, 2^2), with a mean function
  mixing tent maps on odd coordinates and exponentials on even ones.

``run_replicates`` drives K candidates over independently seeded streams and
aggregates ranks, selection frequencies, and (optionally) oracle risk per
checkpoint.  ``stability_curve`` measures perturb-one stability: train twin
estimators on streams differing in a single sample and regress the log mean
squared prediction difference on log sample size.

All randomness derives from ``default_rng([seed, tag, ...])`` so replicates
are independent, individually seeded, and reproducible regardless of
execution order or worker count.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .basis import BasisCatalog
from .core import (
    SQUARED,
    ConfigError,
    DivergenceError,
    LossKind,
    NoiseModel,
    LabeledStream,
    stream_from_arrays,
)
from .estimators import (
    GaussianKernel,
    KernelSgd,
    ParametricSgd,
    ScheduleSieve,
    SieveSgd,
    SupportStore,
    ZeroEstimator,
    batch_sieve_fit,
)
from .selection import (
    RvTracker,
    build_shared_groups,
    competition_ranks,
    geometric_checkpoints,
)

# purpose tags mixed into the seed entropy so distinct draws never collide
_TAG_TRAIN = 1
_TAG_ORACLE = 2
_TAG_STAB_TRAIN = 3
_TAG_STAB_REPLACE = 4
_TAG_STAB_TEST = 5
_TAG_QUANTILE_TEST = 6


def child_seed(base: int, *keys: int) -> List[int]:
    """Entropy list for ``default_rng`` derived from a base seed and tags."""
    base = int(base)
    if base < 0:
        raise ConfigError(f"seed must be >= 0, got {base}")
    return [base, *[int(k) for k in keys]]


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


class _SyntheticGenerator:
    """Common plumbing: draw covariates and noisy responses, wrap as stream."""

    dimension: int
    noise: NoiseModel

    def sample_x(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def f0(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def draw(self, rng: np.random.Generator, n: int) -> Tuple[np.ndarray, np.ndarray]:
        X = self.sample_x(rng, n)
        y = self.f0(X) + rng.normal(0.0, self.noise.sigma, n)
        return X, y

    def stream(self, seed, n: int) -> LabeledStream:
        if n < 1:
            raise ConfigError(f"stream length must be >= 1, got {n}")
        rng = np.random.default_rng(seed)
        X, y = self.draw(rng, n)
        return stream_from_arrays(X, y, seed=seed)


class Example1Generator(_SyntheticGenerator):
    """Univariate truncated-cosine regression with N(0, 0.5^2) noise."""

    name = "example1"
    dimension = 1
    noise = NoiseModel(0.5)
    _ks = np.arange(1, 31, dtype=np.float64)
    _coeffs = _ks ** (-2.5)

    def sample_x(self, rng, n):
        return rng.random((n, 1))

    def f0(self, X):
        X = np.asarray(X, dtype=np.float64)
        x = X.reshape(-1) if X.ndim == 1 else X[:, 0]
        return np.cos(np.multiply.outer(x * math.pi, self._ks - 1.0)) @ self._coeffs

    def describe(self) -> dict:
        return {"variant": "example1"}


class Example2Generator(_SyntheticGenerator):
    """Ten-dimensional regression mixing tent maps (odd 1-based coordinates)
    and exponentials (even coordinates), with N(0, 2^2) noise."""

    name = "example2"
    dimension = 10
    noise = NoiseModel(2.0)

    def sample_x(self, rng, n):
        return rng.random((n, 10))

    def f0(self, X):
        X = np.asarray(X, dtype=np.float64)
        odd = X[:, 0::2]  # 1-based odd coordinates
        even = X[:, 1::2]
        return (0.5 - np.abs(odd - 0.5)).sum(axis=1) + np.exp(-even).sum(axis=1)

    def describe(self) -> dict:
        return {"variant": "example2"}


class CustomLinearGenerator(_SyntheticGenerator):
    """Linear truth with covariates uniform on a box of bounded norm.

    Covariates are ``radius * U / sqrt(p)`` with U uniform on [-1, 1]^p, so
    ``||X|| <= radius`` always and E[X X^T] is a well-conditioned multiple of
    the identity.
    """

    name = "linear"

    def __init__(self, beta: Sequence[float], sigma: float = 0.5, radius: float = 1.0):
        self.beta = np.asarray(beta, dtype=np.float64).reshape(-1)
        if self.beta.shape[0] < 1:
            raise ConfigError("linear generator needs at least one coefficient")
        if not radius > 0:
            raise ConfigError(f"covariate radius must be positive, got {radius}")
        self.dimension = self.beta.shape[0]
        self.noise = NoiseModel(sigma)
        self.radius = float(radius)

    def sample_x(self, rng, n):
        p = self.dimension
        return rng.uniform(-1.0, 1.0, (n, p)) * (self.radius / math.sqrt(p))

    def f0(self, X):
        return np.asarray(X, dtype=np.float64) @ self.beta

    def describe(self) -> dict:
        return {
            "variant": "linear",
            "beta": self.beta.tolist(),
            "sigma": self.noise.sigma,
            "radius": self.radius,
        }


def make_generator(spec: dict) -> _SyntheticGenerator:
    variant = spec.get("variant")
    if variant == "example1":
        return Example1Generator()
    if variant == "example2":
        return Example2Generator()
    if variant == "linear":
        return CustomLinearGenerator(
            spec["beta"], spec.get("sigma", 0.5), spec.get("radius", 1.0)
        )
    raise ConfigError(f"unknown generator variant {variant!r}")


def gen_example1(seed, n: int) -> LabeledStream:
    return Example1Generator().stream(seed, n)


def gen_example2(seed, n: int) -> LabeledStream:
    return Example2Generator().stream(seed, n)


def oracle_mse(estimator, generator, n_test: int, seed) -> float:
    """Monte-Carlo risk against the generator's known mean function."""
    if n_test < 1:
        raise ConfigError(f"n_test must be >= 1, got {n_test}")
    rng = np.random.default_rng(seed)
    X = generator.sample_x(rng, n_test)
    pred = estimator.predict_batch(X)
    diff = pred - generator.f0(X)
    return float(np.mean(diff * diff))


# ---------------------------------------------------------------------------
# candidate tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SieveCandidate:
    label: str
    s: float
    A: float
    B: float
    omega: float = 0.51
    family: str = field(default="sieve", init=False)

    def to_dict(self) -> dict:
        return {
            "family": "sieve",
            "label": self.label,
            "s": self.s,
            "A": self.A,
            "B": self.B,
            "omega": self.omega,
        }


@dataclass(frozen=True)
class KernelCandidate:
    label: str
    bandwidth: float
    step_constant: float
    step_exponent: float
    family: str = field(default="kernel", init=False)

    def to_dict(self) -> dict:
        return {
            "family": "kernel",
            "label": self.label,
            "bandwidth": self.bandwidth,
            "step_constant": self.step_constant,
            "step_exponent": self.step_exponent,
        }


@dataclass(frozen=True)
class ParametricCandidate:
    label: str
    gamma: float
    family: str = field(default="parametric", init=False)

    def to_dict(self) -> dict:
        return {"family": "parametric", "label": self.label, "gamma": self.gamma}


@dataclass(frozen=True)
class ZeroCandidate:
    label: str
    family: str = field(default="zero", init=False)

    def to_dict(self) -> dict:
        return {"family": "zero", "label": self.label}


CandidateSpec = Union[SieveCandidate, KernelCandidate, ParametricCandidate, ZeroCandidate]


def candidate_from_dict(d: dict) -> CandidateSpec:
    family = d.get("family")
    if family == "sieve":
        return SieveCandidate(
            str(d["label"]), d["s"], d["A"], d["B"], d.get("omega", 0.51)
        )
    if family == "kernel":
        return KernelCandidate(
            str(d["label"]), d["bandwidth"], d["step_constant"], d["step_exponent"]
        )
    if family == "parametric":
        return ParametricCandidate(str(d["label"]), d["gamma"])
    if family == "zero":
        return ZeroCandidate(str(d["label"]))
    raise ConfigError(f"unknown candidate family {family!r}")


def example1_candidates() -> Tuple[SieveCandidate, ...]:
    """Four smoothness levels with A = 0.1, B = 1, omega = 0.51."""
    return tuple(
        SieveCandidate(f"s={s}", s=float(s), A=0.1, B=1.0, omega=0.51)
        for s in (1, 2, 3, 4)
    )


def example2_candidates() -> Tuple[SieveCandidate, ...]:
    """The eight (s, A, B) combinations used for the 10-d study."""
    rows = [
        (1, 0.1, 2),
        (2, 0.1, 2),
        (1, 1.0, 2),
        (2, 1.0, 2),
        (1, 0.1, 8),
        (2, 0.1, 8),
        (1, 1.0, 8),
        (2, 1.0, 8),
    ]
    return tuple(
        SieveCandidate(str(k + 1), s=float(s), A=float(A), B=float(B), omega=0.51)
        for k, (s, A, B) in enumerate(rows)
    )


def build_estimators(
    candidates: Sequence[CandidateSpec],
    dimension: int,
    loss: LossKind = SQUARED,
) -> List[Tuple[str, object]]:
    """Instantiate estimator states for a candidate table.

    Sieve candidates share one basis catalog; kernel candidates with the same
    bandwidth share one kernel instance and one support store, so the harness
    can share per-sample evaluations.
    """
    catalog: Optional[BasisCatalog] = None
    kernels: dict = {}
    out: List[Tuple[str, object]] = []
    for cand in candidates:
        if isinstance(cand, SieveCandidate):
            if catalog is None:
                catalog = BasisCatalog(dimension)
            sched = ScheduleSieve(A=cand.A, B=cand.B, s=cand.s, omega=cand.omega)
            out.append((cand.label, SieveSgd(sched, catalog, loss)))
        elif isinstance(cand, KernelCandidate):
            if cand.bandwidth not in kernels:
                kernels[cand.bandwidth] = (
                    GaussianKernel(cand.bandwidth),
                    SupportStore(dimension),
                )
            kernel, store = kernels[cand.bandwidth]
            out.append(
                (
                    cand.label,
                    KernelSgd(
                        kernel,
                        dimension,
                        cand.step_constant,
                        cand.step_exponent,
                        support=store,
                    ),
                )
            )
        elif isinstance(cand, ParametricCandidate):
            out.append((cand.label, ParametricSgd(dimension, cand.gamma)))
        elif isinstance(cand, ZeroCandidate):
            out.append((cand.label, ZeroEstimator(dimension)))
        else:
            raise ConfigError(f"unknown candidate spec {cand!r}")
    return out


# ---------------------------------------------------------------------------
# replicated selection experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    generator: _SyntheticGenerator
    candidates: Tuple[CandidateSpec, ...]
    xi_values: Tuple[float, ...]
    n_max: int
    replicates: int
    seed: int
    loss: LossKind = SQUARED
    checkpoints: Optional[Tuple[int, ...]] = None
    checkpoint_factor_log10: float = 0.1
    oracle_test_size: Optional[int] = None
    jobs: int = 1

    def resolved_checkpoints(self) -> Tuple[int, ...]:
        if self.checkpoints is not None:
            marks = tuple(
                n for n in sorted(set(int(n) for n in self.checkpoints))
                if 1 <= n <= self.n_max
            )
            if not marks:
                raise ConfigError("no checkpoints fall within 1..n_max")
            return marks
        return tuple(
            geometric_checkpoints(self.n_max, self.checkpoint_factor_log10)
        )


def _loss_value_fn(loss: LossKind) -> Callable[[float, float], float]:
    """Fast scalar loss mirroring :meth:`LossKind.loss` on finite inputs."""
    if loss.kind == "squared":

        def value(pred: float, y: float) -> float:
            d = pred - y
            return d * d

    else:
        alpha = loss.alpha

        def value(pred: float, y: float) -> float:
            if y > pred:
                return alpha * (y - pred)
            return (1.0 - alpha) * (pred - y)

    return value


def _run_selection_replicate(cfg: ExperimentConfig, r: int) -> dict:
    """One replicate: all candidates, all weight exponents, one stream pass.

    Estimator trajectories do not depend on the weight exponent, so every xi
    shares the same predictions; only the trackers differ.
    """
    gen = cfg.generator
    pairs = build_estimators(cfg.candidates, gen.dimension, cfg.loss)
    labels = [label for label, _ in pairs]
    ests = [est for _, est in pairs]
    groups, group_of = build_shared_groups(ests)
    loss_value = _loss_value_fn(cfg.loss)

    checkpoints = cfg.resolved_checkpoints()
    cp_index = {n: c for c, n in enumerate(checkpoints)}
    n_xi, K, C = len(cfg.xi_values), len(ests), len(checkpoints)
    trackers = [[RvTracker(xi) for _ in range(K)] for xi in cfg.xi_values]

    rv = np.empty((n_xi, C, K))
    ranks = np.empty((n_xi, C, K), dtype=np.int64)
    selected = np.empty((n_xi, C), dtype=np.int64)
    mse = np.empty((C, K)) if cfg.oracle_test_size else None

    # (est, kind, group) with kind 0=sieve, 1=kernel, 2=generic
    dispatch = []
    for est in ests:
        if isinstance(est, SieveSgd):
            dispatch.append((est, 0, group_of[id(est)]))
        elif isinstance(est, KernelSgd):
            dispatch.append((est, 1, group_of[id(est)]))
        else:
            dispatch.append((est, 2, None))

    stream = gen.stream(child_seed(cfg.seed, _TAG_TRAIN, r), cfg.n_max)
    i = 0
    for sample in stream:
        x, y = sample.x, sample.y
        l = i
        rows = {id(g): g.row(x) for g in groups}
        for k, (est, kind, group) in enumerate(dispatch):
            row = rows[id(group)] if group is not None else None
            try:
                if kind == 0:
                    pred = est.predict(x, phi=row)
                elif kind == 1:
                    pred = est.predict(x, row=row)
                else:
                    pred = est.predict(x)
                if l == 0:
                    for per_xi in trackers:
                        per_xi[k].skip_unscored()
                else:
                    lv = loss_value(pred, y)
                    for per_xi in trackers:
                        per_xi[k].record_value(l, lv)
                if kind == 0:
                    est.update_xy(x, y, phi=row)
                elif kind == 1:
                    est.update_xy(x, y, row=row)
                else:
                    est.update(sample)
            except DivergenceError as err:
                raise DivergenceError(
                    f"replicate {r}, candidate {labels[k]!r}, step {l + 1}: {err}",
                    step=err.step,
                ) from err
        i += 1
        c = cp_index.get(i)
        if c is not None:
            for xi_idx, per_xi in enumerate(trackers):
                values = [t.value for t in per_xi]
                rv[xi_idx, c] = values
                ranks[xi_idx, c] = competition_ranks(values)
                selected[xi_idx, c] = min(
                    range(K), key=lambda kk: (values[kk], kk)
                )
            if mse is not None:
                test_seed = child_seed(cfg.seed, _TAG_ORACLE, r, i)
                rng = np.random.default_rng(test_seed)
                Xtest = gen.sample_x(rng, cfg.oracle_test_size)
                truth = gen.f0(Xtest)
                for k, est in enumerate(ests):
                    diff = est.predict_batch(Xtest) - truth
                    mse[c, k] = float(np.mean(diff * diff))
    return {"replicate": r, "rv": rv, "ranks": ranks, "selected": selected, "mse": mse}


def _selection_task(args):
    cfg, r = args
    return _run_selection_replicate(cfg, r)


@dataclass
class XiAggregate:
    """Per-weight-exponent aggregate over replicates."""

    xi: float
    checkpoints: Tuple[int, ...]
    labels: Tuple[str, ...]
    mean_rank: np.ndarray  # (checkpoints, candidates)
    selection_freq: np.ndarray  # (checkpoints, candidates)


@dataclass
class ExperimentResult:
    checkpoints: Tuple[int, ...]
    labels: Tuple[str, ...]
    per_xi: List[XiAggregate]
    mean_oracle_mse: Optional[np.ndarray]  # (checkpoints, candidates)
    mean_oracle_rank: Optional[np.ndarray]
    replicates: int

    def aggregate_rows(self):
        """Rows for the aggregate CSV, one per (xi, checkpoint, candidate)."""
        for agg in self.per_xi:
            for c, n in enumerate(self.checkpoints):
                for k, label in enumerate(self.labels):
                    row = [
                        agg.xi,
                        n,
                        label,
                        agg.mean_rank[c, k],
                        agg.selection_freq[c, k],
                    ]
                    if self.mean_oracle_mse is not None:
                        row.append(self.mean_oracle_mse[c, k])
                    yield row


def run_replicates(
    cfg: ExperimentConfig,
    on_replicate: Optional[Callable[[dict], None]] = None,
) -> ExperimentResult:
    """Run independently seeded replicates and aggregate in replicate order.

    ``on_replicate`` receives each replicate's raw result in index order
    (even when executed out of order across workers), which lets callers
    flush partial results incrementally.
    """
    if cfg.replicates < 1:
        raise ConfigError(f"replicates must be >= 1, got {cfg.replicates}")
    if not cfg.xi_values:
        raise ConfigError("at least one weight exponent is required")
    checkpoints = cfg.resolved_checkpoints()
    labels = tuple(c.label for c in cfg.candidates)
    if len(set(labels)) != len(labels):
        raise ConfigError(f"candidate labels must be unique, got {list(labels)}")
    K, C = len(labels), len(checkpoints)
    n_xi = len(cfg.xi_values)

    rank_sum = np.zeros((n_xi, C, K))
    sel_count = np.zeros((n_xi, C, K))
    mse_sum = np.zeros((C, K)) if cfg.oracle_test_size else None
    mse_rank_sum = np.zeros((C, K)) if cfg.oracle_test_size else None

    def consume(result: dict) -> None:
        rank_sum[...] += result["ranks"]
        for xi_idx in range(n_xi):
            for c in range(C):
                sel_count[xi_idx, c, result["selected"][xi_idx, c]] += 1.0
        if mse_sum is not None:
            mse_sum[...] += result["mse"]
            for c in range(C):
                mse_rank_sum[c] += competition_ranks(result["mse"][c].tolist())
        if on_replicate is not None:
            on_replicate(result)

    tasks = [(cfg, r) for r in range(cfg.replicates)]
    if cfg.jobs > 1 and cfg.replicates > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            for result in pool.map(_selection_task, tasks, chunksize=1):
                consume(result)
    else:
        for task in tasks:
            consume(_selection_task(task))

    R = float(cfg.replicates)
    per_xi = [
        XiAggregate(
            xi=xi,
            checkpoints=checkpoints,
            labels=labels,
            mean_rank=rank_sum[xi_idx] / R,
            selection_freq=sel_count[xi_idx] / R,
        )
        for xi_idx, xi in enumerate(cfg.xi_values)
    ]
    return ExperimentResult(
        checkpoints=checkpoints,
        labels=labels,
        per_xi=per_xi,
        mean_oracle_mse=None if mse_sum is None else mse_sum / R,
        mean_oracle_rank=None if mse_rank_sum is None else mse_rank_sum / R,
        replicates=cfg.replicates,
    )


# ---------------------------------------------------------------------------
# perturb-one stability
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BatchSieveFamily:
    """Batch orthogonal-series refits with basis count ceil(n^growth)."""

    growth: float

    def __post_init__(self):
        if not 0.0 < self.growth < 1.0:
            raise ConfigError(f"growth exponent must lie in (0, 1), got {self.growth}")

    def to_dict(self) -> dict:
        return {"family": "batch-sieve", "growth": self.growth}


StabilityFamily = Union[
    SieveCandidate, ParametricCandidate, ZeroCandidate, BatchSieveFamily
]


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    stderr: float
    n_used: int
    n_excluded: int

    @property
    def degenerate(self) -> bool:
        return not math.isfinite(self.stderr)


def fit_loglog_slope(points: Sequence[Tuple[float, float]]) -> SlopeFit:
    """Least squares of log(msd) on log(i); non-positive msd points are
    excluded and counted rather than silently crashing the log."""
    usable = [(i, m) for i, m in points if m > 0 and math.isfinite(m)]
    excluded = len(points) - len(usable)
    if len(usable) < 2:
        return SlopeFit(math.nan, math.nan, len(usable), excluded)
    lx = np.log([i for i, _ in usable])
    ly = np.log([m for _, m in usable])
    n = len(usable)
    xc = lx - lx.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ ly) / sxx
    intercept = float(ly.mean() - slope * lx.mean())
    if n == 2:
        return SlopeFit(slope, math.nan, n, excluded)
    resid = ly - (intercept + slope * lx)
    sigma2 = float(resid @ resid) / (n - 2)
    return SlopeFit(slope, math.sqrt(sigma2 / sxx), n, excluded)


@dataclass
class StabilityReport:
    family: dict
    j_rule: str
    grid: Tuple[int, ...]
    msd: np.ndarray
    msd_stderr: np.ndarray
    per_replicate: np.ndarray  # (replicates, grid), NaN where aborted
    diverged: int
    slope: SlopeFit

    def write_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["i", "msd", "msd_stderr"])
            for i, m, se in zip(self.grid, self.msd, self.msd_stderr):
                writer.writerow([i, repr(float(m)), repr(float(se))])
            writer.writerow([])
            writer.writerow(["slope", "slope_stderr", "excluded_points"])
            writer.writerow(
                [repr(self.slope.slope), repr(self.slope.stderr), self.slope.n_excluded]
            )


@dataclass(frozen=True)
class _StabilityTaskConfig:
    family: StabilityFamily
    generator: _SyntheticGenerator
    grid: Tuple[int, ...]
    j_rule: str
    n_test: int
    seed: int
    coupled_identical: bool


def _stability_j(rule: str, i: int) -> int:
    if rule == "first":
        return 1
    if rule == "middle":
        return math.ceil(i / 2)
    raise ConfigError(f"unknown j rule {rule!r}")


def _online_pair(family, generator, catalog):
    if isinstance(family, SieveCandidate):
        sched = ScheduleSieve(A=family.A, B=family.B, s=family.s, omega=family.omega)
        return SieveSgd(sched, catalog), SieveSgd(sched, catalog)
    if isinstance(family, ParametricCandidate):
        p = generator.dimension
        return ParametricSgd(p, family.gamma), ParametricSgd(p, family.gamma)
    if isinstance(family, ZeroCandidate):
        p = generator.dimension
        return ZeroEstimator(p), ZeroEstimator(p)
    raise ConfigError(f"family {family!r} has no online trainer")


def _sieve_msd(catalog, est_a, est_b, phi_test) -> float:
    size = est_a.basis_size
    diff = est_a.beta_avg - est_b.beta_avg
    pred = phi_test[:, :size] @ diff
    return float(np.mean(pred * pred))


def _stability_replicate(cfg: _StabilityTaskConfig, r: int):
    """One replicate's msd estimates over the whole grid.

    For ``j_rule='first'`` the twin estimators are trained once along a
    nested sample path, emitting the mean squared prediction difference at
    each grid size in passing; each grid size still sees training sets with
    the stated distribution.  Other rules retrain per grid size since the
    replaced index changes with i.
    """
    gen = cfg.generator
    grid = cfg.grid
    n_max = grid[-1]
    rng_train = np.random.default_rng(child_seed(cfg.seed, _TAG_STAB_TRAIN, r))
    X, Y = gen.draw(rng_train, n_max)
    rng_rep = np.random.default_rng(child_seed(cfg.seed, _TAG_STAB_REPLACE, r))
    Xr, Yr = gen.draw(rng_rep, 1)
    rng_test = np.random.default_rng(child_seed(cfg.seed, _TAG_STAB_TEST, r))
    Xtest = gen.sample_x(rng_test, cfg.n_test)

    msd_row = np.full(len(grid), np.nan)
    diverged = False

    if isinstance(cfg.family, BatchSieveFamily):
        catalog = BasisCatalog(gen.dimension)
        j_max = max(1, math.ceil(n_max**cfg.family.growth))
        phi_test = catalog.basis_matrix(j_max, Xtest)
        for gi, n in enumerate(grid):
            j = _stability_j(cfg.j_rule, n)
            Xb = X[:n].copy()
            Yb = Y[:n].copy()
            if not cfg.coupled_identical:
                Xb[j - 1] = Xr[0]
                Yb[j - 1] = Yr[0]
            J = max(1, math.ceil(n**cfg.family.growth))
            est_a = batch_sieve_fit((X[:n], Y[:n]), J, catalog)
            est_b = batch_sieve_fit((Xb, Yb), J, catalog)
            diff = phi_test[:, :J] @ (est_a.coefficients - est_b.coefficients)
            msd_row[gi] = float(np.mean(diff * diff))
        return msd_row, diverged

    catalog = BasisCatalog(gen.dimension)
    is_sieve = isinstance(cfg.family, SieveCandidate)
    if is_sieve:
        sched = ScheduleSieve(
            A=cfg.family.A, B=cfg.family.B, s=cfg.family.s, omega=cfg.family.omega
        )
        phi_test = catalog.basis_matrix(sched.basis_count(n_max), Xtest)

    if cfg.j_rule == "first":
        est_a, est_b = _online_pair(cfg.family, gen, catalog)
        grid_pos = {n: gi for gi, n in enumerate(grid)}
        try:
            for i in range(1, n_max + 1):
                xa, ya = X[i - 1], Y[i - 1]
                if i == 1 and not cfg.coupled_identical:
                    xb, yb = Xr[0], Yr[0]
                else:
                    xb, yb = xa, ya
                if is_sieve:
                    J = est_a.schedule.basis_count(i)
                    phi_a = catalog.basis_vector(J, xa)
                    phi_b = phi_a if xb is xa else catalog.basis_vector(J, xb)
                    est_a.update_xy(xa, ya, phi=phi_a)
                    est_b.update_xy(xb, yb, phi=phi_b)
                else:
                    est_a.update_xy(xa, ya)
                    est_b.update_xy(xb, yb)
                gi = grid_pos.get(i)
                if gi is not None:
                    if is_sieve:
                        msd_row[gi] = _sieve_msd(catalog, est_a, est_b, phi_test)
                    else:
                        pred = est_a.predict_batch(Xtest) - est_b.predict_batch(Xtest)
                        msd_row[gi] = float(np.mean(pred * pred))
        except DivergenceError:
            diverged = True
        return msd_row, diverged

    for gi, n in enumerate(grid):
        j = _stability_j(cfg.j_rule, n)
        est_a, est_b = _online_pair(cfg.family, gen, catalog)
        try:
            for i in range(1, n + 1):
                xa, ya = X[i - 1], Y[i - 1]
                if i == j and not cfg.coupled_identical:
                    xb, yb = Xr[0], Yr[0]
                else:
                    xb, yb = xa, ya
                if is_sieve:
                    J = est_a.schedule.basis_count(i)
                    phi_a = catalog.basis_vector(J, xa)
                    phi_b = phi_a if xb is xa else catalog.basis_vector(J, xb)
                    est_a.update_xy(xa, ya, phi=phi_a)
                    est_b.update_xy(xb, yb, phi=phi_b)
                else:
                    est_a.update_xy(xa, ya)
                    est_b.update_xy(xb, yb)
        except DivergenceError:
            diverged = True
            continue
        if is_sieve:
            msd_row[gi] = _sieve_msd(catalog, est_a, est_b, phi_test)
        else:
            pred = est_a.predict_batch(Xtest) - est_b.predict_batch(Xtest)
            msd_row[gi] = float(np.mean(pred * pred))
    return msd_row, diverged


def _stability_task(args):
    cfg, r = args
    return _stability_replicate(cfg, r)


def stability_curve(
    family: StabilityFamily,
    generator: _SyntheticGenerator,
    grid: Sequence[int],
    j_rule: str = "first",
    replicates: int = 100,
    n_test: int = 2000,
    seed: int = 0,
    coupled_identical: bool = False,
    jobs: int = 1,
) -> StabilityReport:
    """Estimate perturb-one stability over a grid of sample sizes.

    For each grid size and replicate, twin estimators are trained on sample
    sets differing only in the ``j_rule``-chosen sample; the mean squared
    prediction difference over fresh test covariates approximates the
    perturbation's L2 norm.  The log-log slope of the averaged curve is the
    empirical stability exponent.
    """
    grid = tuple(sorted(set(int(i) for i in grid)))
    if not grid or grid[0] < 2:
        raise ConfigError("grid values must be >= 2")
    if replicates < 2:
        raise ConfigError(f"replicates must be >= 2, got {replicates}")
    _stability_j(j_rule, 2)  # validates the rule
    cfg = _StabilityTaskConfig(
        family=family,
        generator=generator,
        grid=grid,
        j_rule=j_rule,
        n_test=int(n_test),
        seed=int(seed),
        coupled_identical=coupled_identical,
    )
    per = np.full((replicates, len(grid)), np.nan)
    diverged = 0
    tasks = [(cfg, r) for r in range(replicates)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for r, (row, bad) in enumerate(pool.map(_stability_task, tasks, chunksize=1)):
                per[r] = row
                diverged += int(bad)
    else:
        for r, task in enumerate(tasks):
            row, bad = _stability_task(task)
            per[r] = row
            diverged += int(bad)

    with np.errstate(invalid="ignore"):
        counts = np.sum(~np.isnan(per), axis=0)
        msd = np.nanmean(per, axis=0)
        msd_std = np.nanstd(per, axis=0, ddof=1)
    stderr = np.where(counts > 1, msd_std / np.sqrt(np.maximum(counts, 1)), np.nan)
    slope = fit_loglog_slope(list(zip(grid, msd)))
    family_desc = family.to_dict() if hasattr(family, "to_dict") else {"family": str(family)}
    return StabilityReport(
        family=family_desc,
        j_rule=j_rule,
        grid=grid,
        msd=msd,
        msd_stderr=stderr,
        per_replicate=per,
        diverged=diverged,
        slope=slope,
    )


# ---------------------------------------------------------------------------
# quantile band demo
# ---------------------------------------------------------------------------


@dataclass
class QuantileBandResult:
    alphas: Tuple[float, float]
    n_train: int
    coverage: float
    selected: Tuple[str, str]
    lower: object
    upper: object
    generator: _SyntheticGenerator


def quantile_band(
    alphas: Tuple[float, float] = (0.05, 0.95),
    n_train: int = 1000,
    xi: float = 1.0,
    seed: int = 0,
    test_size: int = 10000,
    candidates: Optional[Sequence[SieveCandidate]] = None,
    generator: Optional[_SyntheticGenerator] = None,
) -> QuantileBandResult:
    """Online quantile band: train pinball-loss candidate sets for a lower
    and an upper quantile level on the same stream, select each by weighted
    rolling validation, and evaluate P(lower < Y < upper) on fresh samples.
    """
    from .selection import SelectionHarness

    if generator is None:
        generator = Example1Generator()
    if candidates is None:
        candidates = example1_candidates()
    lo_alpha, hi_alpha = (float(alphas[0]), float(alphas[1]))

    chosen = []
    for alpha in (lo_alpha, hi_alpha):
        loss = LossKind("pinball", alpha)
        pairs = build_estimators(candidates, generator.dimension, loss)
        harness = SelectionHarness(pairs, xi=xi, loss=loss)
        stream = generator.stream(child_seed(seed, _TAG_TRAIN, 0), n_train)
        for sample in stream:
            harness.step(sample)
        label = harness.current_selection()
        est = harness.estimators[harness.labels.index(label)]
        chosen.append((label, est))

    rng = np.random.default_rng(child_seed(seed, _TAG_QUANTILE_TEST, 0))
    Xtest, Ytest = generator.draw(rng, test_size)
    lower = chosen[0][1].predict_batch(Xtest)
    upper = chosen[1][1].predict_batch(Xtest)
    coverage = float(np.mean((lower < Ytest) & (Ytest < upper)))
    return QuantileBandResult(
        alphas=(lo_alpha, hi_alpha),
        n_train=n_train,
        coverage=coverage,
        selected=(chosen[0][0], chosen[1][0]),
        lower=chosen[0][1],
        upper=chosen[1][1],
        generator=generator,
    )
