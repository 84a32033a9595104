"""Seeded, resumable parameter sweeps and spectrum reports."""
from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from itertools import product
from math import comb
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, ConvergenceError, InvalidArgumentError
from .operator import KikuchiOperator, row_degree
from .pca import DetectionParams, calibrate_threshold, planted_qform, recover
from .spectral import derive_seed, estimate_norm, full_spectrum, spectral_moments
from .tensor import Spike, add_spike, sample_tensor
from .trace_oracle import expected_trace, monte_carlo_trace

MODES = ("norm", "detect", "recover", "trace")


def normalized_norm(norm: float, n: int, ell: int, r: int) -> float:
    """Norm divided by ``(n*ell)^(r/4)`` (even r) or ``(n*ell)^(r/2)`` (odd r)."""
    power = r / 4 if r % 2 == 0 else r / 2
    return norm / (n * ell) ** power


@dataclass
class ExperimentRecord:
    mode: str
    n: int
    ell: int
    r: int
    lam: float
    lambda_index: int
    trial: int
    seed: int
    noise_seed: int
    measured_norm: float = float("nan")
    normalized_norm: float = float("nan")
    converged: bool = True
    iterations: int = 0
    verdict: str = ""
    threshold: float = float("nan")
    correlation: float = float("nan")
    trace_exact: float = float("nan")
    trace_mean: float = float("nan")
    trace_se: float = float("nan")
    wall_time_ms: float = 0.0

    @property
    def key(self) -> tuple[int, int, int, int, int]:
        return (self.n, self.ell, self.r, self.lambda_index, self.trial)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise InvalidArgumentError(f"unknown mode {self.mode!r}")
        if 2 * self.ell < self.r:
            raise InvalidArgumentError(f"row with ell={self.ell} < r/2")
        if self.measured_norm > 0 and not self.normalized_norm > 0:
            raise InvalidArgumentError("normalized_norm must be positive when measured_norm is")
        if self.verdict not in ("", "planted", "null"):
            raise InvalidArgumentError(f"bad verdict {self.verdict!r}")
        if not np.isnan(self.correlation) and not 0.0 <= self.correlation <= 1.0:
            raise InvalidArgumentError(f"correlation {self.correlation} outside [0, 1]")


# columns written to CSV; wall time only goes to the JSON-lines mirror so that
# CSV output is byte-identical across reruns
CSV_FIELDS = [f.name for f in fields(ExperimentRecord) if f.name != "wall_time_ms"]


def _format(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return "" if np.isnan(value) else repr(value)
    return str(value)


def _parse_record(row: dict) -> ExperimentRecord:
    kwargs = {}
    for f in fields(ExperimentRecord):
        if f.name not in row:
            continue
        raw = row[f.name]
        if f.type in ("int",):
            kwargs[f.name] = int(raw)
        elif f.type == "float":
            kwargs[f.name] = float(raw) if raw != "" else float("nan")
        elif f.type == "bool":
            kwargs[f.name] = raw == "1"
        else:
            kwargs[f.name] = raw
    return ExperimentRecord(**kwargs)


def read_records(path: str | Path) -> list[ExperimentRecord]:
    with open(path, newline="") as fh:
        return [_parse_record(row) for row in csv.DictReader(fh)]


@dataclass
class SweepConfig:
    n: list[int]
    ell: list[int]
    r: list[int]
    lam: list[float] = field(default_factory=lambda: [0.0])
    trials: int = 1
    mode: str = "norm"
    seed: int = 0
    out: str = "sweep.csv"
    distribution: str = "gaussian"
    # "absolute", or "threshold": lam * (calibrated null threshold) / degree
    lambda_units: str = "absolute"
    tol: float = 1e-6
    max_iter: int = 2000
    restarts: int = 3
    calibration_trials: int = 200
    quantile: float = 0.99
    q: int = 1
    mc_trials: int = 0
    workers: int = 1
    jsonl: bool = True

    def cells(self) -> list[tuple[int, int, int, int, float]]:
        return [
            (n, ell, r, li, lam)
            for n, ell, r in product(self.n, self.ell, self.r)
            for li, lam in enumerate(self.lam)
        ]

    def validate(self) -> None:
        for name in ("n", "ell", "r", "lam"):
            if not getattr(self, name):
                raise ConfigurationError(f"grid {name!r} is empty")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lambda_units not in ("absolute", "threshold"):
            raise ConfigurationError(f"unknown lambda_units {self.lambda_units!r}")
        if self.distribution not in ("gaussian", "rademacher"):
            raise ConfigurationError(f"unknown distribution {self.distribution!r}")
        if self.trials < 1:
            raise ConfigurationError("trials must be at least 1")
        if any(lam < 0 for lam in self.lam):
            raise ConfigurationError("lambda grid must be nonnegative")
        if self.tol <= 0 or self.max_iter < 1 or self.restarts < 1:
            raise ConfigurationError("need tol > 0, max_iter >= 1, restarts >= 1")
        if self.mode in ("detect", "recover") or self.lambda_units == "threshold":
            if self.calibration_trials < 1:
                raise ConfigurationError("calibration_trials must be at least 1")
        for n, ell, r in product(self.n, self.ell, self.r):
            if r < 3 or n < r:
                raise ConfigurationError(f"invalid cell n={n}, r={r}: need n >= r >= 3")
            if 2 * ell < r or 2 * ell > n or (r % 2 and ell < r - 1):
                raise ConfigurationError(f"invalid level ell={ell} for n={n}, r={r}")
        out = Path(self.out)
        parent = out.parent if str(out.parent) else Path(".")
        if not parent.is_dir() or not os.access(parent, os.W_OK):
            raise ConfigurationError(f"output directory {parent} is not writable")
        if out.exists() and not os.access(out, os.W_OK):
            raise ConfigurationError(f"output file {out} is not writable")


def _coerce(name: str, raw: str, kind):
    try:
        if kind == "list[int]":
            return [int(v) for v in raw.split(",") if v.strip()]
        if kind == "list[float]":
            return [float(v) for v in raw.split(",") if v.strip()]
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        return raw
    except ValueError:
        raise ConfigurationError(f"bad value for {name}: {raw!r}") from None


def parse_config(text: str) -> SweepConfig:
    """Flat ``key = value`` lines; lists are comma-separated, ``#`` starts a comment."""
    kinds = {f.name: f.type for f in fields(SweepConfig)}
    aliases = {"lambda": "lam"}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = aliases.get(key, key)
        if key not in kinds:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw, kinds[key])
    missing = [k for k in ("n", "ell", "r") if k not in values]
    if missing:
        raise ConfigurationError(f"missing required keys {missing}")
    return SweepConfig(**values)


def load_config(path: str | Path) -> SweepConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def _spike_for(n: int, lam: float, noise_seed: int) -> Spike:
    return Spike.random(n, lam, derive_seed(noise_seed, 0x5B1CE))


def _threshold_for(config: SweepConfig, n: int, ell: int, r: int) -> float:
    params = DetectionParams(
        calibration_trials=config.calibration_trials,
        quantile=config.quantile,
        distribution=config.distribution,
        tol=config.tol,
        max_iter=config.max_iter,
        restarts=config.restarts,
    )
    return calibrate_threshold(n, r, ell, params, derive_seed(config.seed, n, ell, r, 0xCA11))


def run_cell(config: SweepConfig, n: int, ell: int, r: int, lambda_index: int, lam: float, trial: int,
             threshold: float | None = None) -> ExperimentRecord:
    """One sweep row. The noise tensor and spike depend on the trial but not on
    lambda, so verdicts along a lambda grid are comparable."""
    t0 = time.perf_counter()
    seed = derive_seed(config.seed, n, ell, r, lambda_index, trial)
    noise_seed = derive_seed(config.seed, n, ell, r, trial)
    rec = ExperimentRecord(config.mode, n, ell, r, lam, lambda_index, trial, seed, noise_seed)
    if config.mode == "trace":
        rec.trace_exact = float(expected_trace(n, ell, r, config.q, config.distribution))
        if config.mc_trials:
            rec.trace_mean, rec.trace_se = monte_carlo_trace(
                n, ell, r, config.q, config.distribution, config.mc_trials, seed
            )
    else:
        if config.lambda_units == "threshold":
            if threshold is None:
                threshold = _threshold_for(config, n, ell, r)
            strength = lam * threshold / row_degree(n, ell, r)
        else:
            strength = lam
        tensor = sample_tensor(n, r, config.distribution, noise_seed)
        spike = _spike_for(n, strength, noise_seed)
        if strength > 0:
            tensor = add_spike(tensor, spike)
        if config.mode == "recover":
            res = recover(tensor, ell, seed, spike.v, config.tol, config.max_iter, config.restarts)
            rec.correlation = res.correlation
            rec.converged = res.converged
        est = estimate_norm(KikuchiOperator(tensor, ell), config.tol, config.max_iter, config.restarts, seed)
        rec.measured_norm = est.norm
        rec.normalized_norm = normalized_norm(est.norm, n, ell, r)
        rec.converged = rec.converged and est.converged
        rec.iterations = est.iterations
        if config.mode == "detect":
            if threshold is None:
                threshold = _threshold_for(config, n, ell, r)
            rec.threshold = threshold
            rec.verdict = "planted" if est.norm > threshold else "null"
    rec.wall_time_ms = round((time.perf_counter() - t0) * 1000.0, 3)
    rec.validate()
    return rec


def _run_cell_task(args):
    return run_cell(*args)


def _completed_keys(path: Path) -> set:
    """Keys of fully written rows; a torn trailing line is cut off."""
    if not path.exists() or path.stat().st_size == 0:
        return set()
    data = path.read_bytes()
    if not data.endswith(b"\n"):
        cut = data.rfind(b"\n") + 1
        with open(path, "r+b") as fh:
            fh.truncate(cut)
        data = data[:cut]
    reader = csv.DictReader(io.StringIO(data.decode()))
    if reader.fieldnames and reader.fieldnames != CSV_FIELDS:
        raise ConfigurationError(f"existing output {path} has a different schema")
    return {_parse_record(row).key for row in reader}


def run_sweep(config: SweepConfig) -> list[ExperimentRecord]:
    """Run every (cell, trial) not already present in ``config.out``.

    Returns the newly computed records. Rows are appended in cell order by a
    single writer, so the CSV is identical whether or not a run was resumed.
    """
    config.validate()
    out = Path(config.out)
    done = _completed_keys(out)
    write_header = not out.exists() or out.stat().st_size == 0
    thresholds: dict[tuple[int, int, int], float] = {}
    jobs = []
    for n, ell, r, li, lam in config.cells():
        needs_threshold = config.mode != "trace" and (config.mode == "detect" or config.lambda_units == "threshold")
        for trial in range(config.trials):
            if (n, ell, r, li, trial) in done:
                continue
            threshold = None
            if needs_threshold:
                if (n, ell, r) not in thresholds:
                    thresholds[(n, ell, r)] = _threshold_for(config, n, ell, r)
                threshold = thresholds[(n, ell, r)]
            jobs.append((config, n, ell, r, li, lam, trial, threshold))
    if config.workers > 1:
        pool = ProcessPoolExecutor(config.workers)
        results: Iterable[ExperimentRecord] = pool.map(_run_cell_task, jobs)
    else:
        pool = None
        results = (run_cell(*job) for job in jobs)
    new = []
    mirror = out.with_suffix(out.suffix + ".jsonl") if config.jsonl else None
    try:
        with open(out, "a", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if write_header:
                writer.writerow(CSV_FIELDS)
            for rec in results:
                writer.writerow([_format(getattr(rec, name)) for name in CSV_FIELDS])
                fh.flush()
                if mirror is not None:
                    with open(mirror, "a") as jf:
                        jf.write(json.dumps(asdict(rec)) + "\n")
                new.append(rec)
    finally:
        if pool is not None:
            pool.shutdown()
    return new


def fit_scaling(records: Sequence[ExperimentRecord], axis: str) -> tuple[float, float, float]:
    """Least-squares fit of log(mean measured_norm) against log(axis).

    Returns ``(slope, intercept, r_squared)``.
    """
    if axis not in ("n", "ell"):
        raise InvalidArgumentError(f"axis must be 'n' or 'ell', got {axis!r}")
    groups: dict[float, list[float]] = {}
    for rec in records:
        groups.setdefault(getattr(rec, axis), []).append(rec.measured_norm)
    if len(groups) < 3:
        raise InvalidArgumentError(f"need at least 3 distinct {axis} values, got {len(groups)}")
    xs = np.log(np.array(sorted(groups), dtype=np.float64))
    ys = np.log(np.array([np.mean(groups[k]) for k in sorted(groups)]))
    slope, intercept = np.polyfit(xs, ys, 1)
    fitted = slope * xs + intercept
    ss_res = float(np.sum((ys - fitted) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r_squared = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r_squared


@dataclass
class SpectrumReport:
    n: int
    ell: int
    r: int
    samples: int
    eigenvalues: np.ndarray = field(repr=False)
    moments: list[float]
    semicircle: list[float]
    hist_counts: np.ndarray = field(repr=False)
    hist_edges: np.ndarray = field(repr=False)
    trace_error: float
    frobenius_error: float

    @property
    def kurtosis_ratio(self) -> float:
        return self.moments[1] / self.moments[0] ** 2


def spectrum_report(
    n: int,
    ell: int,
    r: int,
    samples: int,
    seed: int = 0,
    distribution: str = "gaussian",
    out: str | Path | None = None,
    bins: int = 60,
    max_q: int = 4,
    tol: float = 1e-8,
) -> SpectrumReport:
    """Pool full spectra of ``samples`` random Kikuchi matrices.

    Checks per sample that the eigenvalues sum to the trace and their squares
    to the squared Frobenius norm. With ``out`` set, writes the moment table
    to ``out`` and the histogram next to it as ``<out>.hist.csv``.
    """
    if samples < 1:
        raise InvalidArgumentError("need at least one sample")
    pooled = []
    trace_err = frob_err = 0.0
    for k in range(samples):
        tensor = sample_tensor(n, r, distribution, derive_seed(seed, n, ell, r, k))
        dense = KikuchiOperator(tensor, ell).assemble_dense(method="fast")
        eigs = full_spectrum(dense)
        scale = max(float(np.max(np.abs(eigs))), 1.0)
        trace_err = max(trace_err, abs(float(eigs.sum()) - float(np.trace(dense))) / (scale * eigs.size))
        frob = float(np.sum(dense * dense))
        frob_err = max(frob_err, abs(float(eigs @ eigs) - frob) / max(frob, 1e-300))
        pooled.append(eigs)
    if trace_err > tol or frob_err > tol:
        raise ConvergenceError(f"spectrum conservation violated: trace {trace_err:.3g}, frobenius {frob_err:.3g}")
    eigs = np.concatenate(pooled)
    stats = spectral_moments(eigs, max_q)
    counts, edges = np.histogram(eigs, bins=bins)
    report = SpectrumReport(n, ell, r, samples, eigs, stats.moments, stats.semicircle, counts, edges, trace_err, frob_err)
    if out is not None:
        out = Path(out)
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["q", "moment", "semicircle", "ratio"])
            for q, (m, s) in enumerate(zip(stats.moments, stats.semicircle), 1):
                w.writerow([q, repr(m), repr(s), repr(m / s)])
        with open(out.with_suffix(out.suffix + ".hist.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lo", "hi", "count"])
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
    return report
