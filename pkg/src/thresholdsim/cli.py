"""Command-line front end: batch experiment runs producing result tables.

Subcommands (one per run): validate, born, g2, sweep, brightness,
moments, selftest. Every run reads a JSON config, writes a summary
document plus a delimited table into the output directory, and exits 0
on success, 2 on config errors, 3 on numeric errors (including failed
selftest checks) and 4 on output errors.

All randomness flows from a single seed (config value or --seed
override); re-running a command with the same seed reproduces every
result file byte for byte, for any worker budget. Wall-clock timings go
to a separate timings.json, which is the only file excluded from that
contract.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diagnostics
from .detection import DetectorConfig, NoClicks
from .harness import (
    DegenerateChannel,
    ExperimentConfig,
    G2Result,
    SweepResult,
    ZeroDiagonal,
    born_rule_experiment,
    brightness_sweep,
    g2_experiment,
    threshold_sweep,
)
from .linalg import FactorizationFailure, LinalgError, validate_covariance
from .wiener import WienerConfig

COMMANDS = ("validate", "born", "g2", "sweep", "brightness", "moments", "selftest")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class RunManifest:
    """One CLI invocation: which command, which config, where to write."""

    config_path: str
    command: str
    output_dir: str
    seed_override: int | None = None
    workers: int = 1
    verbosity: int = 0
    events: bool = False

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValidationError(f"unknown command {self.command!r}")
        if self.workers < 1:
            raise ValidationError(f"workers must be at least 1, got {self.workers}")


@dataclass(eq=False)
class LoadedConfig:
    experiment: ExperimentConfig
    brightness: tuple[float, ...] | None
    pair: tuple[int, int] | None
    echo: dict
    defaults_applied: dict


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ValidationError(f"missing required field {where}.{key}")
    return section[key]


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{where} must be a number, got {value!r}")
    return float(value)


def _parse_covariance(raw, defaults: dict):
    if not isinstance(raw, list) or not raw:
        raise ValidationError("covariance must be a non-empty matrix of [re, im] pairs")
    m = len(raw)
    out = np.zeros((m, m), dtype=np.complex128)
    for i, row in enumerate(raw):
        if not isinstance(row, list) or len(row) != m:
            raise ValidationError(f"covariance row {i} must have {m} entries")
        for j, entry in enumerate(row):
            if not isinstance(entry, list) or len(entry) != 2:
                raise ValidationError(
                    f"covariance entry ({i},{j}) must be a [re, im] pair"
                )
            out[i, j] = complex(
                _number(entry[0], f"covariance[{i}][{j}][0]"),
                _number(entry[1], f"covariance[{i}][{j}][1]"),
            )
    try:
        return validate_covariance(out)
    except LinalgError as exc:
        raise ValidationError(f"covariance: {type(exc).__name__}: {exc}") from exc


def parse_config(path, seed_override: int | None = None) -> LoadedConfig:
    """Read, validate and fully resolve a run configuration.

    Every applied default lands in defaults_applied and in the echoed
    config, so nothing is defaulted silently.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: top level must be an object")
    unknown = set(raw) - {"covariance", "detector", "run"}
    if unknown:
        raise ValidationError(f"unknown top-level sections: {sorted(unknown)}")

    defaults: dict = {}
    covariance = _parse_covariance(_require(raw, "covariance", "<config>"), defaults)
    m = covariance.dim

    detector_raw = _require(raw, "detector", "<config>")
    run_raw = _require(raw, "run", "<config>")
    if not isinstance(detector_raw, dict) or not isinstance(run_raw, dict):
        raise ValidationError("detector and run sections must be objects")

    threshold = _number(_require(detector_raw, "threshold", "detector"), "detector.threshold")
    if threshold <= 0:
        raise ValidationError(f"detector.threshold must be positive, got {threshold}")

    sweep = run_raw.get("sweep")
    if sweep is not None:
        if not isinstance(sweep, list) or not sweep:
            raise ValidationError("run.sweep must be a non-empty list of thresholds")
        sweep = tuple(_number(v, "run.sweep[]") for v in sweep)

    window = detector_raw.get("coincidence_window")
    if window is None:
        window = 0.0
        defaults["detector.coincidence_window"] = window
    else:
        window = _number(window, "detector.coincidence_window")

    max_diag = float(covariance.diagonal().max())
    dt = detector_raw.get("dt")
    if dt is None:
        # Default grid: the typical crossing scale threshold / b_jj spans
        # at least 1000 steps for the fastest channel.
        dt = threshold / (1000.0 * max_diag)
        defaults["detector.dt"] = dt
    else:
        dt = _number(dt, "detector.dt")

    t_max = detector_raw.get("t_max")
    if t_max is None:
        ref = max((threshold,) + (sweep or ()))
        t_max = 200.0 * ref * m / covariance.trace
        defaults["detector.t_max"] = t_max
    else:
        t_max = _number(t_max, "detector.t_max")

    try:
        wiener = WienerConfig(dt=dt, t_max=t_max)
        detector = DetectorConfig(
            threshold=threshold, coincidence_window=window, wiener=wiener
        )
    except ValueError as exc:
        raise ValidationError(f"detector: {exc}") from exc

    cycles = _require(run_raw, "cycles", "run")
    if isinstance(cycles, bool) or not isinstance(cycles, int) or cycles < 1:
        raise ValidationError(f"run.cycles must be a positive integer, got {cycles!r}")
    seed = _require(run_raw, "seed", "run")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ValidationError(f"run.seed must be a nonnegative integer, got {seed!r}")
    if seed_override is not None:
        seed = seed_override

    brightness = run_raw.get("brightness")
    if brightness is not None:
        if not isinstance(brightness, list) or not brightness:
            raise ValidationError("run.brightness must be a non-empty list of scales")
        brightness = tuple(_number(v, "run.brightness[]") for v in brightness)
        if any(v <= 0 for v in brightness):
            raise ValidationError(f"run.brightness values must be positive, got {brightness}")

    pair = run_raw.get("pair")
    if pair is None:
        if m >= 2:
            pair = (0, 1)
            defaults["run.pair"] = list(pair)
        else:
            pair = None
    else:
        if (
            not isinstance(pair, list)
            or len(pair) != 2
            or any(isinstance(v, bool) or not isinstance(v, int) for v in pair)
        ):
            raise ValidationError("run.pair must be a pair of channel indices")
        i, j = pair
        if not (0 <= i < m and 0 <= j < m) or i == j:
            raise ValidationError(f"run.pair {pair} invalid for {m} channels")
        pair = (i, j)

    try:
        experiment = ExperimentConfig(
            covariance=covariance,
            detector=detector,
            n_cycles=cycles,
            seed=seed,
            sweep=sweep,
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc

    echo = {
        "covariance": [
            [[float(v.real), float(v.imag)] for v in row] for row in covariance.matrix
        ],
        "detector": {
            "threshold": threshold,
            "coincidence_window": window,
            "dt": dt,
            "t_max": t_max,
        },
        "run": {
            "cycles": cycles,
            "seed": seed,
            "sweep": list(sweep) if sweep else None,
            "brightness": list(brightness) if brightness else None,
            "pair": list(pair) if pair else None,
        },
    }
    return LoadedConfig(
        experiment=experiment,
        brightness=brightness,
        pair=pair,
        echo=echo,
        defaults_applied=defaults,
    )


def _row_items(row: G2Result, m: int, with_scale: bool) -> list[tuple[str, object]]:
    items: list[tuple[str, object]] = []
    if with_scale:
        items.append(("scale", row.scale))
    items.append(("threshold", row.threshold))
    for j in range(m):
        items.append((f"p_{j + 1}", float(row.p[j])))
    items += [
        ("p_12", row.p12),
        ("g2", row.g2),
        ("g2_ci_low", row.g2_ci_low),
        ("g2_ci_high", row.g2_ci_high),
        ("epsilon", row.epsilon),
        ("g2_bound", row.g2_bound),
        ("censored_fraction", row.censored_fraction),
        ("n_clicks", row.n_clicks),
        ("n_cycles", row.n_cycles),
    ]
    return items


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_rows_csv(path: Path, results: list[G2Result], m: int, with_scale: bool) -> None:
    items = [_row_items(r, m, with_scale) for r in results]
    header = [key for key, _ in items[0]]
    _write_csv(path, header, [[value for _, value in row] for row in items])


def _sweep_summary(result: SweepResult, m: int) -> dict:
    return {
        "kind": result.kind,
        "pair": list(result.pair),
        "slope": result.slope,
        "rows": [dict(_row_items(r, m, result.kind == "brightness")) for r in result.rows],
        "pass_flags": [r.pass_flag for r in result.rows],
        "mean_tau_sq": [r.mean_tau_sq for r in result.rows],
    }


def _check_rows_csv(path: Path, rows: list[diagnostics.CheckRow]) -> None:
    _write_csv(
        path,
        ["check", "value", "target", "statistic", "criterion", "passed"],
        [[r.name, r.value, r.target, r.statistic, r.criterion, r.passed] for r in rows],
    )


def _check_rows_summary(rows: list[diagnostics.CheckRow]) -> dict:
    return {
        "checks": [
            {
                "name": r.name,
                "value": r.value,
                "target": r.target,
                "statistic": r.statistic,
                "criterion": r.criterion,
                "passed": r.passed,
            }
            for r in rows
        ],
        "all_passed": all(r.passed for r in rows),
    }


def _note(manifest: RunManifest, message: str) -> None:
    if manifest.verbosity > 0:
        print(message, file=sys.stderr)


def _events_path(manifest: RunManifest, out: Path):
    return out / "events.jsonl" if manifest.events else None


def _dispatch(manifest: RunManifest, loaded: LoadedConfig, out: Path) -> tuple[dict, int]:
    """Run the command, write its table files, return (results, exit code)."""
    cfg = loaded.experiment
    m = cfg.covariance.dim
    workers = manifest.workers
    command = manifest.command

    if command == "validate":
        return {}, EXIT_OK

    if command == "born":
        _note(manifest, f"born: {cfg.n_cycles} cycles on {m} channels")
        report = born_rule_experiment(cfg, workers=workers, log_path=_events_path(manifest, out))
        _write_csv(
            out / "born.csv",
            ["channel", "clicks", "p", "p_low", "p_high", "target", "covered"],
            [
                [
                    j,
                    int(report.clicks[j]),
                    float(report.p[j]),
                    float(report.p_low[j]),
                    float(report.p_high[j]),
                    float(report.targets[j]),
                    report.covered(j),
                ]
                for j in range(m)
            ],
        )
        results = {
            "p": [float(v) for v in report.p],
            "targets": [float(v) for v in report.targets],
            "flagged_channels": list(report.flagged),
            "n_clicks": report.n_clicks,
            "n_cycles": report.n_cycles,
            "all_censored_cycles": report.all_censored_cycles,
            "censored_fraction": report.censored_fraction,
        }
        return results, EXIT_OK

    if command in ("g2", "sweep", "brightness"):
        if loaded.pair is None:
            raise ValidationError(f"{command} needs at least two channels")
        i, j = loaded.pair

    if command == "g2":
        _note(manifest, f"g2: {cfg.n_cycles} cycles, pair ({i},{j})")
        row = g2_experiment(
            cfg, i, j, workers=workers, log_path=_events_path(manifest, out)
        )
        _write_rows_csv(out / "g2.csv", [row], m, with_scale=False)
        return {
            "row": dict(_row_items(row, m, with_scale=False)),
            "pass_flag": row.pass_flag,
            "mean_tau_sq": row.mean_tau_sq,
        }, EXIT_OK

    if command == "sweep":
        if cfg.sweep is None:
            raise ValidationError("sweep command requires run.sweep in the config")
        _note(manifest, f"sweep: {len(cfg.sweep)} thresholds x {cfg.n_cycles} cycles")
        result = threshold_sweep(cfg, i, j, workers=workers)
        _write_rows_csv(out / "sweep.csv", result.rows, m, with_scale=False)
        return _sweep_summary(result, m), EXIT_OK

    if command == "brightness":
        if loaded.brightness is None:
            raise ValidationError("brightness command requires run.brightness in the config")
        _note(manifest, f"brightness: scales {loaded.brightness}")
        result = brightness_sweep(cfg, loaded.brightness, i, j, workers=workers)
        _write_rows_csv(out / "brightness.csv", result.rows, m, with_scale=True)
        return _sweep_summary(result, m), EXIT_OK

    if command == "moments":
        _note(manifest, "moments: closed forms vs Monte Carlo")
        rows = diagnostics.moment_identity_rows(cfg.seed)
        _check_rows_csv(out / "moments.csv", rows)
        return _check_rows_summary(rows), EXIT_OK

    assert command == "selftest"
    _note(manifest, "selftest: moment identities and first-passage oracles")
    rows = diagnostics.selftest_rows(cfg.seed, workers=workers)
    _check_rows_csv(out / "selftest.csv", rows)
    for row in rows:
        status = "PASS" if row.passed else "FAIL"
        print(f"{status} {row.name}: value={row.value!r} target={row.target!r} ({row.criterion})")
    summary = _check_rows_summary(rows)
    return summary, EXIT_OK if summary["all_passed"] else EXIT_NUMERIC


def run(manifest: RunManifest) -> int:
    """Execute one manifest; returns the process exit code."""
    started = time.perf_counter()
    try:
        loaded = parse_config(manifest.config_path, manifest.seed_override)
    except (ParseError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(manifest.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        results, code = _dispatch(manifest, loaded, out)
    except ValidationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NoClicks, DegenerateChannel, ZeroDiagonal, FactorizationFailure) as exc:
        print(f"numeric error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_IO

    summary = {
        "command": manifest.command,
        "seed": loaded.echo["run"]["seed"],
        "seed_overridden": manifest.seed_override is not None,
        "workers": manifest.workers,
        "config": loaded.echo,
        "defaults_applied": loaded.defaults_applied,
        "results": results,
    }
    try:
        with open(out / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, sort_keys=True, indent=2)
            fh.write("\n")
        # Timings are inherently non-reproducible and live in their own
        # file so everything else stays byte-identical across runs.
        with open(out / "timings.json", "w", encoding="utf-8") as fh:
            json.dump(
                {"command": manifest.command, "wall_seconds": time.perf_counter() - started},
                fh,
                sort_keys=True,
                indent=2,
            )
            fh.write("\n")
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_IO
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thresholdsim",
        description="Batch simulator for threshold detection of Gaussian signals.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="path to the JSON run config")
    parser.add_argument("--out", required=True, help="output directory for result files")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--workers", type=int, default=1, help="worker process budget")
    parser.add_argument(
        "--events", action="store_true", help="write a per-cycle events.jsonl (born, g2)"
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def manifest_from_args(args: argparse.Namespace) -> RunManifest:
    return RunManifest(
        config_path=args.config,
        command=args.command,
        output_dir=args.out,
        seed_override=args.seed,
        workers=args.workers,
        verbosity=args.verbose,
        events=args.events,
    )


def main(argv=None) -> None:
    args = build_parser().parse_args(argv)
    sys.exit(run(manifest_from_args(args)))


if __name__ == "__main__":
    main()
