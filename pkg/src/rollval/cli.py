"""Command-line surface: experiment presets, user-data streaming selection,
stability studies, and the online quantile-band demo.

Every command resolves its settings as ``defaults < config file < explicit
flags`` and echoes the fully-resolved configuration to ``config.json`` in the
output directory; re-running with ``--config <that file>`` reproduces the
outputs byte for byte.  Exit codes: 0 success, 1 configuration error, 2 data
error, 3 numeric divergence.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from typing import List, Optional, Sequence

import numpy as np

from .core import (
    SQUARED,
    ConfigError,
    DataError,
    DivergenceError,
    LossKind,
    RollvalError,
    Sample,
)
from .experiments import (
    ExperimentConfig,
    BatchSieveFamily,
    Example1Generator,
    Example2Generator,
    ParametricCandidate,
    SieveCandidate,
    candidate_from_dict,
    example1_candidates,
    example2_candidates,
    make_generator,
    quantile_band,
    run_replicates,
    stability_curve,
)
from .selection import SelectionHarness
from .svgplot import Series, line_chart


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); keep our exit codes
        raise ConfigError(message)


def _parse_floats(text: str) -> List[float]:
    try:
        return [float(tok) for tok in str(text).split(",") if tok.strip() != ""]
    except ValueError as err:
        raise ConfigError(f"cannot parse float list {text!r}") from err


def _parse_ints(text: str) -> List[int]:
    try:
        return [int(tok) for tok in str(text).split(",") if tok.strip() != ""]
    except ValueError as err:
        raise ConfigError(f"cannot parse int list {text!r}") from err


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {path} is not valid JSON: {err}") from err
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return cfg


def _resolve(defaults: dict, config: dict, flags: dict) -> dict:
    resolved = dict(defaults)
    for key, value in config.items():
        if key in ("command",):
            continue
        resolved[key] = value
    for key, value in flags.items():
        if value is not None:
            resolved[key] = value
    return resolved


def _echo_config(out_dir: str, command: str, resolved: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    payload = {"command": command, **resolved}
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: str, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _default_jobs() -> int:
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# example presets
# ---------------------------------------------------------------------------


def _run_example(args, which: str) -> None:
    config = _load_config(args.config)
    preset = example1_candidates() if which == "example1" else example2_candidates()
    defaults = {
        "xi": [0.0, 1.0, 2.0],
        "reps": 100,
        "n": 10000,
        "seed": 0,
        "out": f"{which}-out",
        "jobs": _default_jobs(),
        "oracle_tests": 1000,
        "checkpoint_factor": 0.1,
        "candidates": [c.to_dict() for c in preset],
    }
    flags = {
        "xi": _parse_floats(args.xi) if args.xi is not None else None,
        "reps": args.reps,
        "n": args.n,
        "seed": args.seed,
        "out": args.out,
        "jobs": args.jobs,
        "oracle_tests": args.oracle_tests,
        "checkpoint_factor": args.checkpoint_factor,
    }
    resolved = _resolve(defaults, config, flags)
    if args.no_oracle:
        resolved["oracle_tests"] = 0
    if args.paper_scale:
        resolved["reps"] = 500
        resolved["n"] = 31623
    out_dir = resolved["out"]
    _echo_config(out_dir, which, resolved)

    generator = Example1Generator() if which == "example1" else Example2Generator()
    candidates = tuple(candidate_from_dict(d) for d in resolved["candidates"])
    oracle = int(resolved["oracle_tests"]) or None
    cfg = ExperimentConfig(
        generator=generator,
        candidates=candidates,
        xi_values=tuple(float(x) for x in resolved["xi"]),
        n_max=int(resolved["n"]),
        replicates=int(resolved["reps"]),
        seed=int(resolved["seed"]),
        checkpoint_factor_log10=float(resolved["checkpoint_factor"]),
        oracle_test_size=oracle,
        jobs=int(resolved["jobs"]),
    )
    checkpoints = cfg.resolved_checkpoints()
    labels = [c.label for c in candidates]

    rep_path = os.path.join(out_dir, "replicates.csv")
    with open(rep_path, "w", newline="") as rep_file:
        rep_writer = csv.writer(rep_file)
        rep_header = ["xi", "replicate", "checkpoint_n", "candidate_label", "rv", "rank"]
        if oracle:
            rep_header.append("oracle_mse")
        rep_writer.writerow(rep_header)

        def flush_replicate(result: dict) -> None:
            r = result["replicate"]
            for xi_idx, xi in enumerate(cfg.xi_values):
                for c, n in enumerate(checkpoints):
                    for k, label in enumerate(labels):
                        row = [
                            _cell(float(xi)),
                            r,
                            n,
                            label,
                            _cell(float(result["rv"][xi_idx, c, k])),
                            int(result["ranks"][xi_idx, c, k]),
                        ]
                        if oracle:
                            row.append(_cell(float(result["mse"][c, k])))
                        rep_writer.writerow(row)
            rep_file.flush()

        result = run_replicates(cfg, on_replicate=flush_replicate)

    header = ["xi", "checkpoint_n", "candidate_label", "mean_rank", "selection_freq"]
    if oracle:
        header.append("oracle_mse")
    _write_csv(os.path.join(out_dir, "aggregate.csv"), header, result.aggregate_rows())

    log_n = [math.log10(n) for n in checkpoints]
    for agg in result.per_xi:
        series = [
            Series(label, log_n, agg.mean_rank[:, k])
            for k, label in enumerate(labels)
        ]
        tag = "%g" % agg.xi
        line_chart(
            os.path.join(out_dir, f"rank_xi{tag}.svg"),
            series,
            f"{which}: mean candidate rank (xi={tag}, {cfg.replicates} replicates)",
            "log10(samples)",
            "mean rank (1 = selected)",
        )
    if oracle:
        series = [
            Series(
                label,
                log_n,
                [math.log10(v) if v > 0 else math.nan for v in result.mean_oracle_mse[:, k]],
            )
            for k, label in enumerate(labels)
        ]
        line_chart(
            os.path.join(out_dir, "oracle_mse.svg"),
            series,
            f"{which}: oracle risk against the true mean function",
            "log10(samples)",
            "log10(mean squared error)",
        )
    print(f"{which}: wrote {out_dir}/aggregate.csv ({cfg.replicates} replicates)")


def cmd_example1(args) -> None:
    _run_example(args, "example1")


def cmd_example2(args) -> None:
    _run_example(args, "example2")


# ---------------------------------------------------------------------------
# stability
# ---------------------------------------------------------------------------

_DEFAULT_GRID = [32, 64, 128, 256, 512, 1024, 2048, 4096]
_DEFAULT_LINEAR_BETA = [1.0, -0.5, 0.25]


def cmd_stability(args) -> None:
    config = _load_config(args.config)
    defaults = {
        "family": "parametric",
        "grid": list(_DEFAULT_GRID),
        "reps": 100,
        "j_rule": "first",
        "n_test": 2000,
        "seed": 0,
        "out": "stability-out",
        "jobs": _default_jobs(),
        "self_test": False,
        "gamma": 0.5,
        "s": 1.0,
        "A": 0.1,
        "B": 1.0,
        "omega": 0.51,
        "growth": 1.0 / 3.0,
        "generator": None,
    }
    flags = {
        "family": args.family,
        "grid": _parse_ints(args.grid) if args.grid is not None else None,
        "reps": args.reps,
        "j_rule": args.j_rule,
        "n_test": args.n_test,
        "seed": args.seed,
        "out": args.out,
        "jobs": args.jobs,
        "gamma": args.gamma,
        "s": args.s,
        "A": args.A,
        "B": args.B,
        "omega": args.omega,
        "growth": args.growth,
    }
    resolved = _resolve(defaults, config, flags)
    if args.self_test:
        resolved["self_test"] = True
    family_name = resolved["family"]
    if family_name == "parametric":
        family = ParametricCandidate("parametric", float(resolved["gamma"]))
        default_gen = {
            "variant": "linear",
            "beta": list(_DEFAULT_LINEAR_BETA),
            "sigma": 0.5,
            "radius": 1.0,
        }
    elif family_name == "sieve":
        family = SieveCandidate(
            "sieve",
            float(resolved["s"]),
            float(resolved["A"]),
            float(resolved["B"]),
            float(resolved["omega"]),
        )
        default_gen = {"variant": "example1"}
    elif family_name == "batch-sieve":
        family = BatchSieveFamily(float(resolved["growth"]))
        default_gen = {"variant": "example1"}
    else:
        raise ConfigError(f"unknown stability family {family_name!r}")
    if resolved["generator"] is None:
        resolved["generator"] = default_gen
    out_dir = resolved["out"]
    _echo_config(out_dir, "stability", resolved)

    generator = make_generator(resolved["generator"])
    report = stability_curve(
        family,
        generator,
        resolved["grid"],
        j_rule=resolved["j_rule"],
        replicates=int(resolved["reps"]),
        n_test=int(resolved["n_test"]),
        seed=int(resolved["seed"]),
        coupled_identical=bool(resolved["self_test"]),
        jobs=int(resolved["jobs"]),
    )
    report.write_csv(os.path.join(out_dir, "stability.csv"))

    fit = report.slope
    notes = []
    if math.isfinite(fit.slope):
        stderr_txt = "%.3g" % fit.stderr if math.isfinite(fit.stderr) else "degenerate"
        notes.append(f"fitted slope = {fit.slope:.4g} (stderr {stderr_txt})")
    else:
        notes.append("fitted slope undefined (no positive msd points)")
    if fit.n_excluded:
        notes.append(f"excluded points: {fit.n_excluded}")
    if report.diverged:
        notes.append(f"diverged replicates: {report.diverged}")
    pts = [
        (math.log10(i), math.log10(m))
        for i, m in zip(report.grid, report.msd)
        if m > 0 and math.isfinite(m)
    ]
    series = [Series("measured msd", [p[0] for p in pts], [p[1] for p in pts])]
    if pts and math.isfinite(fit.slope):
        x0, x1 = pts[0][0], pts[-1][0]
        y0 = pts[0][1]
        series.append(
            Series(
                "fitted power law",
                [x0, x1],
                [y0, y0 + fit.slope * (x1 - x0)],
                dashed=True,
            )
        )
    line_chart(
        os.path.join(out_dir, "stability.svg"),
        series,
        f"perturb-one stability ({family_name}, j rule: {resolved['j_rule']})",
        "log10(samples)",
        "log10(mean squared perturbation)",
        annotations=notes,
    )
    print(f"stability: slope {fit.slope!r} (stderr {fit.stderr!r}) -> {out_dir}")


# ---------------------------------------------------------------------------
# streaming selection over user data
# ---------------------------------------------------------------------------


def _geometric_marks(factor_log10: float = 0.1, start: int = 10):
    """Strictly increasing sample counts spaced by a constant log10 factor."""
    k = 0
    last = 0
    while True:
        n = round(10.0 ** (math.log10(start) + k * factor_log10))
        k += 1
        if n > last:
            last = n
            yield n


def _parse_stream_row(row: List[str], row_num: int, dimension: Optional[int]):
    if dimension is not None and len(row) != dimension + 1:
        raise DataError(
            f"row {row_num}: expected {dimension + 1} fields, got {len(row)}"
        )
    if len(row) < 2:
        raise DataError(f"row {row_num}: expected at least 2 fields (x..., y)")
    try:
        values = [float(tok) for tok in row]
    except ValueError:
        raise DataError(f"row {row_num}: non-numeric field") from None
    if not all(math.isfinite(v) for v in values):
        raise DataError(f"row {row_num}: non-finite value")
    return np.array(values[:-1]), values[-1]


def cmd_stream(args) -> None:
    out_dir = args.out or "stream-out"
    snapshot = None
    if args.resume:
        try:
            with open(args.resume) as fh:
                snapshot = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read snapshot {args.resume}: {err}") from err
        harness = SelectionHarness.from_snapshot(snapshot)
        skip = int(snapshot["i"])
        config = snapshot.get("config", {})
    else:
        if not args.config:
            raise ConfigError("--config is required unless resuming from a snapshot")
        config = _load_config(args.config)
        if "candidates" not in config:
            raise ConfigError("stream config must declare a candidates list")
        loss = LossKind.from_dict(config.get("loss", {"kind": "squared"}))
        xi = float(config.get("xi", 0.0))
        candidates = [candidate_from_dict(d) for d in config["candidates"]]
        dimension = config.get("dimension")
        if dimension is None:
            raise ConfigError(
                "stream config must declare the covariate dimension"
            )
        from .experiments import build_estimators

        pairs = build_estimators(candidates, int(dimension), loss)
        harness = SelectionHarness(pairs, xi=xi, loss=loss)
        skip = 0

    checkpoint_every = args.checkpoint_every
    if checkpoint_every is None:
        checkpoint_every = int(config.get("checkpoint_every", 0)) or None
    resolved = {
        "input": args.input,
        "checkpoint_every": checkpoint_every,
        "resume": args.resume,
        "snapshot_out": args.snapshot_out,
        **{k: v for k, v in config.items() if k not in ("command",)},
    }
    _echo_config(out_dir, "stream", resolved)

    dimension = harness.estimators[0].dimension
    k_count = len(harness.labels)

    if args.input == "-":
        source = sys.stdin
        close_source = False
    else:
        try:
            source = open(args.input, newline="")
        except OSError as err:
            raise ConfigError(f"cannot open input {args.input}: {err}") from err
        close_source = True

    log_path = os.path.join(out_dir, "selection_log.csv")
    try:
        reader = csv.reader(source)
        with open(log_path, "w", newline="") as log_file:
            writer = csv.writer(log_file)
            writer.writerow(
                ["n", "selected_label"] + [f"rv_{k + 1}" for k in range(k_count)]
            )

            def log_row():
                writer.writerow(
                    [harness.i, harness.current_selection()]
                    + [_cell(v) for v in harness.rv_values()]
                )
                log_file.flush()

            marks = None
            next_mark = None
            if not checkpoint_every:
                marks = _geometric_marks()
                next_mark = next(marks)
                while next_mark <= skip:
                    next_mark = next(marks)

            last_logged = -1
            for row_num, row in enumerate(reader, start=1):
                x, y = _parse_stream_row(row, row_num, dimension)
                if row_num <= skip:
                    continue  # already consumed before the snapshot was taken
                harness.step(Sample(x, y))
                if checkpoint_every:
                    if harness.i % checkpoint_every == 0:
                        log_row()
                        last_logged = harness.i
                elif harness.i == next_mark:
                    log_row()
                    last_logged = harness.i
                    next_mark = next(marks)
            if harness.i == 0:
                raise DataError("input stream is empty")
            if harness.i != last_logged:
                log_row()
    finally:
        if close_source:
            source.close()

    if args.snapshot_out:
        snap = harness.snapshot()
        snap["config"] = {k: v for k, v in resolved.items() if k not in (
            "input", "resume", "snapshot_out")}
        with open(args.snapshot_out, "w") as fh:
            json.dump(snap, fh)
            fh.write("\n")
    print(
        f"stream: processed {harness.i} samples, current selection "
        f"{harness.current_selection()!r} -> {log_path}"
    )


# ---------------------------------------------------------------------------
# quantile band demo
# ---------------------------------------------------------------------------


def cmd_quantile(args) -> None:
    config = _load_config(args.config)
    defaults = {
        "alpha": [0.05, 0.95],
        "n": 1000,
        "xi": 1.0,
        "seed": 0,
        "test_size": 10000,
        "out": "quantile-out",
    }
    flags = {
        "alpha": _parse_floats(args.alpha) if args.alpha is not None else None,
        "n": args.n,
        "xi": args.xi,
        "seed": args.seed,
        "test_size": args.test_size,
        "out": args.out,
    }
    resolved = _resolve(defaults, config, flags)
    alphas = [float(a) for a in resolved["alpha"]]
    if len(alphas) != 2:
        raise ConfigError(f"--alpha needs exactly two levels, got {alphas}")
    out_dir = resolved["out"]
    _echo_config(out_dir, "quantile", resolved)

    result = quantile_band(
        alphas=(alphas[0], alphas[1]),
        n_train=int(resolved["n"]),
        xi=float(resolved["xi"]),
        seed=int(resolved["seed"]),
        test_size=int(resolved["test_size"]),
    )
    _write_csv(
        os.path.join(out_dir, "coverage.csv"),
        [
            "alpha_low",
            "alpha_high",
            "n_train",
            "test_size",
            "coverage",
            "selected_lower",
            "selected_upper",
        ],
        [
            [
                alphas[0],
                alphas[1],
                int(resolved["n"]),
                int(resolved["test_size"]),
                result.coverage,
                result.selected[0],
                result.selected[1],
            ]
        ],
    )

    xs = np.linspace(0.0, 1.0, 201).reshape(-1, 1)
    truth = result.generator.f0(xs)
    series = [
        Series("true mean", xs[:, 0], truth, color="#000000"),
        Series(
            f"lower quantile fit (alpha={alphas[0]:g})",
            xs[:, 0],
            result.lower.predict_batch(xs),
        ),
        Series(
            f"upper quantile fit (alpha={alphas[1]:g})",
            xs[:, 0],
            result.upper.predict_batch(xs),
        ),
    ]
    line_chart(
        os.path.join(out_dir, "band.svg"),
        series,
        f"online quantile band after {resolved['n']} samples "
        f"(coverage {result.coverage:.3f})",
        "x",
        "y",
        annotations=[
            f"coverage on {resolved['test_size']} fresh samples: "
            f"{result.coverage:.4f}"
        ],
    )
    print(f"quantile: coverage {result.coverage:.4f} -> {out_dir}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rollval", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    def add_common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--config", default=None, help="JSON config file")

    for name, fn in (("example1", cmd_example1), ("example2", cmd_example2)):
        p = sub.add_parser(name, help=f"replicated selection study ({name} preset)")
        add_common(p)
        p.add_argument("--xi", default=None, help="comma-separated weight exponents")
        p.add_argument("--reps", type=int, default=None)
        p.add_argument("--n", type=int, default=None)
        p.add_argument("--jobs", type=int, default=None)
        p.add_argument("--oracle-tests", dest="oracle_tests", type=int, default=None)
        p.add_argument(
            "--no-oracle",
            action="store_true",
            help="skip oracle-risk evaluation at checkpoints",
        )
        p.add_argument(
            "--checkpoint-factor",
            dest="checkpoint_factor",
            type=float,
            default=None,
            help="log10 spacing of checkpoints (default 0.1)",
        )
        p.add_argument(
            "--paper-scale",
            dest="paper_scale",
            action="store_true",
            help="500 replicates, n = 31623 (long)",
        )
        p.set_defaults(func=fn)

    p = sub.add_parser("stability", help="perturb-one stability study")
    add_common(p)
    p.add_argument("--family", choices=["parametric", "sieve", "batch-sieve"], default=None)
    p.add_argument("--grid", default=None, help="comma-separated sample sizes")
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--j-rule", dest="j_rule", choices=["first", "middle"], default=None)
    p.add_argument("--n-test", dest="n_test", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument(
        "--self-test",
        dest="self_test",
        action="store_true",
        help="replacement pair equals the original sample (msd must be 0)",
    )
    p.add_argument("--gamma", type=float, default=None, help="parametric step size")
    p.add_argument("--s", type=float, default=None, help="sieve smoothness")
    p.add_argument("--A", type=float, default=None, help="sieve step constant")
    p.add_argument("--B", type=float, default=None, help="sieve basis constant")
    p.add_argument("--omega", type=float, default=None, help="sieve shrinkage exponent")
    p.add_argument(
        "--growth", type=float, default=None, help="batch-sieve basis growth exponent"
    )
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("stream", help="run selection over a CSV sample stream")
    p.add_argument("--input", required=True, help="CSV rows x1,...,xp,y; '-' for stdin")
    p.add_argument("--config", default=None, help="JSON config (candidates, xi, loss)")
    p.add_argument("--out", default=None)
    p.add_argument(
        "--checkpoint-every",
        dest="checkpoint_every",
        type=int,
        default=None,
        help="log every N samples (default: only at stream end)",
    )
    p.add_argument("--snapshot-out", dest="snapshot_out", default=None)
    p.add_argument("--resume", default=None, help="snapshot file to resume from")
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("quantile", help="online quantile band on the example1 stream")
    add_common(p)
    p.add_argument("--alpha", default=None, help="two quantile levels, e.g. 0.05,0.95")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--xi", type=float, default=None)
    p.add_argument("--test-size", dest="test_size", type=int, default=None)
    p.set_defaults(func=cmd_quantile)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_help()
            return 1
        args.func(args)
        return 0
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 1
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 2
    except DivergenceError as err:
        print(f"numeric divergence: {err}", file=sys.stderr)
        return 3
    except RollvalError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
