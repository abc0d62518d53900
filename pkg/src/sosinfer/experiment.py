"""Coverage experiments for the C-VaR intervals and table output."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import tomli

from .cvar import (
    VARIANTS,
    CalibrationConfig,
    CvarProgram,
    ci_baseline_bootstrap,
    ci_baseline_clt,
    cvar_ci_sos,
    cvar_true,
    radius_kind,
    sos_radius,
)
from .errors import ConfigError, DomainError
from .lp_engine import LpError
from .pool import FAMILIES, DistributionSpec, sample_synthetic

METHODS = VARIANTS + ("clt", "bootstrap")
COLUMNS = ("n", "method", "coverage", "mean_lower", "mean_upper", "mean_length", "sd_length")
WORKERS_ENV = "SOSINFER_WORKERS"
MAX_FAILURE_RATE = 0.05


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    distribution: DistributionSpec = DistributionSpec("gaussian", 4)
    alpha: float = 0.9
    sizes: tuple[int, ...] = (20, 100)
    replications: int = 300
    methods: tuple[str, ...] = METHODS
    level: float = 0.95
    seed: int = 0
    output: str | None = None
    draws: int = 50_000
    calibration: str = "truth"
    endpoints: str = "value"
    radius: str = "auto"
    resamples: int = 200
    bootstrap_B: int = 1000
    workers: int | None = None

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if not self.methods:
            raise ConfigError("at least one method is required")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods must not repeat")
        if not self.sizes or any(int(n) < 2 for n in self.sizes):
            raise ConfigError("sample sizes must be at least 2")
        if not 0 < self.alpha < 1 or not 0 < self.level < 1:
            raise ConfigError("alpha and level must lie in (0, 1)")
        if self.draws < 100:
            raise ConfigError("calibration draws must be at least 100")
        object.__setattr__(self, "sizes", tuple(sorted(int(n) for n in self.sizes)))
        object.__setattr__(self, "methods", tuple(self.methods))

    def calibration_config(self, seed: int) -> CalibrationConfig:
        return CalibrationConfig(
            draws=self.draws,
            seed=seed,
            mode=self.calibration,
            endpoints=self.endpoints,
            radius=self.radius,
            resamples=self.resamples,
            dist=self.distribution if self.calibration == "truth" else None,
        )

    def worker_count(self) -> int:
        if self.workers is not None:
            return max(1, int(self.workers))
        raw = os.environ.get(WORKERS_ENV, "1")
        try:
            return max(1, int(raw))
        except ValueError as exc:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc


# -- configuration files ------------------------------------------------------------

_DIST_KEYS = ("family", "dim", "loc", "scale", "cov")
_TOP_KEYS = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"distribution"}


def _parse_value(text: str) -> Any:
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def config_from_mapping(data: Mapping[str, Any], overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Build a config from a parsed TOML document.

    Keys may sit at top level or in ``[experiment]``, ``[distribution]`` and
    ``[calibration]`` tables; ``overrides`` use the same flat names, optionally
    prefixed by the table (``distribution.family``).
    """
    flat: dict[str, Any] = {}
    for key, val in data.items():
        if isinstance(val, dict):
            flat.update(val)
        else:
            flat[key] = val
    flat.update({k.rsplit(".", 1)[-1]: v for k, v in (overrides or {}).items()})
    unknown = set(flat) - _TOP_KEYS - set(_DIST_KEYS)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    dist_args = {k: flat.pop(k) for k in _DIST_KEYS if k in flat}
    dist_args.setdefault("family", "gaussian")
    dist_args.setdefault("dim", 4)
    if dist_args["family"] not in FAMILIES:
        raise ConfigError(f"unknown distribution family {dist_args['family']!r}")
    for k in ("loc", "scale"):
        if k in dist_args and dist_args[k] is not None:
            v = dist_args[k]
            dist_args[k] = tuple(float(x) for x in (v if isinstance(v, list) else [v] * int(dist_args["dim"])))
    if "cov" in dist_args:
        dist_args["cov"] = tuple(tuple(float(x) for x in row) for row in dist_args["cov"])
    for k in ("sizes", "methods"):
        if k in flat and not isinstance(flat[k], (list, tuple)):
            flat[k] = [flat[k]]
    if "sizes" in flat:
        flat["sizes"] = tuple(int(x) for x in flat["sizes"])
    if "methods" in flat:
        flat["methods"] = tuple(str(x).lower() for x in flat["methods"])
    try:
        dist = DistributionSpec(**dist_args)
        return ExperimentConfig(distribution=dist, **flat)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    """Read a TOML file (or start from defaults) and apply ``key=value`` overrides."""
    data: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomli.load(fh)
        except (tomli.TOMLDecodeError, OSError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    parsed = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        k, v = item.split("=", 1)
        parsed[k.strip()] = _parse_value(v.strip())
    return config_from_mapping(data, parsed)


# -- running -------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class CoverageRow:
    n: int
    method: str
    coverage: float
    mean_lower: float
    mean_upper: float
    mean_length: float
    sd_length: float
    replications: int = 0
    failures: int = 0
    aborted: bool = False

    def __post_init__(self):
        if not self.aborted:
            if not 0.0 <= self.coverage <= 1.0:
                raise ValueError("coverage must lie in [0, 1]")
            if self.mean_lower > self.mean_upper:
                raise ValueError("mean lower bound exceeds mean upper bound")

    @property
    def coverage_se(self) -> float:
        ok = self.replications - self.failures
        if self.aborted or ok <= 0:
            return math.nan
        return math.sqrt(self.coverage * (1.0 - self.coverage) / ok)


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


_METHOD_CODE = {m: i for i, m in enumerate(METHODS)}


def _one_replication(args) -> list[tuple[str, float, float, str]]:
    """All methods on one replication; ``(method, lower, upper, error)`` per method."""
    cfg, n, rep, radii = args
    sample = sample_synthetic(cfg.distribution, n, cfg.seed, (n, rep))
    program = CvarProgram(cfg.alpha, sample)
    out = []
    for method in cfg.methods:
        mseed = _derived_seed(cfg.seed, n, rep, _METHOD_CODE[method])
        try:
            if method == "clt":
                ci = ci_baseline_clt(program, cfg.level)
            elif method == "bootstrap":
                ci = ci_baseline_bootstrap(program, cfg.level, cfg.bootstrap_B, mseed)
            else:
                ci = cvar_ci_sos(program, method, cfg.level, cfg.calibration_config(mseed), radius=radii.get(method))
            out.append((method, ci.lower, ci.upper, ""))
        except (DomainError, LpError, np.linalg.LinAlgError) as exc:
            out.append((method, math.nan, math.nan, f"{type(exc).__name__}: {exc}"))
    return out


def _cell_radii(cfg: ExperimentConfig, n: int) -> dict[str, tuple[float, float]]:
    """Radii shared by a whole cell: population-calibrated limit laws only."""
    radii = {}
    if cfg.calibration != "truth":
        return radii
    for method in cfg.methods:
        if method in VARIANTS:
            cal = cfg.calibration_config(_derived_seed(cfg.seed, n, _METHOD_CODE[method]))
            if radius_kind(method, cal) == "limit":
                # the population limit law ignores the sample, so any replication will do
                program = CvarProgram(cfg.alpha, sample_synthetic(cfg.distribution, n, cfg.seed, (n, 0)))
                q, a, _, _ = sos_radius(program, method, cfg.level, cal)
                radii[method] = (q, a)
    return radii


def _aggregate(n: int, method: str, records: Sequence[tuple[float, float, str]], c_star: float) -> CoverageRow:
    reps = len(records)
    good = [(lo, up) for lo, up, err in records if not err]
    failures = reps - len(good)
    if failures > MAX_FAILURE_RATE * reps or not good:
        return CoverageRow(n, method, math.nan, math.nan, math.nan, math.nan, math.nan, reps, failures, True)
    a = np.array(good, dtype=float)
    length = a[:, 1] - a[:, 0]
    cover = float(np.mean((a[:, 0] <= c_star) & (c_star <= a[:, 1])))
    sd = float(np.std(length, ddof=1)) if len(good) > 1 else 0.0
    return CoverageRow(n, method, cover, float(a[:, 0].mean()), float(a[:, 1].mean()), float(length.mean()), sd, reps, failures)


def run_coverage_experiment(cfg: ExperimentConfig, progress=None) -> list[CoverageRow]:
    """Coverage of ``cvar_true``'s C-VaR for every (n, method) cell.

    Each replication draws its sample from a seed derived from
    ``(seed, n, replication)``, so results do not depend on the order or the
    process in which replications run.
    """
    c_star = cvar_true(cfg.distribution, cfg.alpha)[1]
    rows = []
    workers = cfg.worker_count()
    for n in cfg.sizes:
        radii = _cell_radii(cfg, n)
        jobs = [(cfg, n, rep, radii) for rep in range(cfg.replications)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                results = list(ex.map(_one_replication, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
        else:
            results = [_one_replication(j) for j in jobs]
        for method in cfg.methods:
            recs = [next((lo, up, err) for m, lo, up, err in res if m == method) for res in results]
            rows.append(_aggregate(n, method, recs, c_star))
            if progress is not None:
                progress(rows[-1])
    return rows


# -- tables ----------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return f"{float(x):.4g}"


def _table_rows(rows: Sequence[CoverageRow]) -> list[list[str]]:
    order = {}
    for r in rows:
        order.setdefault(r.method, len(order))
    ordered = sorted(rows, key=lambda r: (r.n, order[r.method]))
    return [[_fmt(getattr(r, c)) for c in COLUMNS] for r in ordered]


def emit_table(rows: Sequence[CoverageRow], fmt: str = "csv", path: str | Path | None = None) -> str:
    """Render rows as CSV or a markdown pipe table; also written to ``path`` if given."""
    if not rows:
        raise ValueError("no rows to emit")
    body = _table_rows(rows)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        w.writerows(body)
        text = buf.getvalue()
    elif fmt == "markdown":
        lines = ["| " + " | ".join(COLUMNS) + " |", "|" + "|".join("---" for _ in COLUMNS) + "|"]
        lines += ["| " + " | ".join(r) + " |" for r in body]
        text = "\n".join(lines) + "\n"
    else:
        raise ValueError(f"unknown table format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def parse_table(text: str) -> list[CoverageRow]:
    """Inverse of the CSV form of ``emit_table``."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != COLUMNS:
        raise ValueError(f"unexpected header {header}")
    out = []
    for rec in reader:
        vals = [float(v) for v in rec[2:]]
        aborted = any(math.isnan(v) for v in vals)
        out.append(CoverageRow(int(rec[0]), rec[1], *vals, aborted=aborted))
    return out
