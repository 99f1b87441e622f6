"""Seeded Monte Carlo experiments behind the command line.

Every replicate task is a pure function of ``(config, n, replicate)`` and
draws from the sub-stream ``(seed, n, replicate, ...)``, so tasks can be
farmed out to worker processes and the merged rows, ordered by
``(n, replicate)``, are byte-identical to a serial run.

A replicate that raises a numerical error becomes a flagged row; it is
never dropped, and the summary reports how many were flagged.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from scipy import stats

from . import __version__
from .concentration import estimate_subgaussian_constant, rate_fit, replicate_distance
from .config import ExperimentConfig
from .errors import ConfigurationError, OutputLockedError
from .hardness import build_priors, chi_square_1d, extremal_pair_lp, hard_distribution_A, moment_report, quantile_w1
from .measures import DiscreteMeasure, empirical, sample_spiked_pair, sampler_from_config, spec_from_config, spiked_gaussian_distance
from .ot_solver import wasserstein_1d, wasserstein_discrete
from .stiefel import sin_squared_minimal_angle
from .wpp import wpp_estimate

COLUMNS = {
    "rates_plugin": ("n", "replicate", "seed_key", "estimator", "value", "error", "flag"),
    "rates_wpp": ("n", "replicate", "seed_key", "estimator", "value", "error", "flag"),
    "spike_recovery": ("n", "replicate", "seed_key", "value", "sin2_angle", "flag"),
    "concentration": ("n", "replicate", "seed_key", "value", "flag"),
    "hardness_suite": ("section", "param", "index", "value"),
    "solve": ("row", "col", "mass"),
}

# numerical failures inside one replicate; anything else aborts the run
REPLICATE_ERRORS = (ArithmeticError, ValueError, np.linalg.LinAlgError)


@dataclass
class ExperimentReport:
    config: dict[str, Any]
    columns: tuple[str, ...]
    rows: list[dict[str, Any]]
    summary: dict[str, Any]
    out_dir: Path | None = None
    wall_clock: float = 0.0

    def csv_text(self) -> str:
        return rows_to_csv(self.columns, self.rows)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def rows_to_csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# replicate tasks


def plugin_distance(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float) -> float:
    if mu.dim == 1:
        return wasserstein_1d(mu, nu, p).cost
    return wasserstein_discrete(mu, nu, p, certify_plan=False).cost


def resolve_truth(cfg: ExperimentConfig) -> float | None:
    """Population distance for error columns: explicit, or known in closed form."""
    if cfg.truth is not None:
        return cfg.truth
    if cfg.model is not None and cfg.model.get("kind") == "spiked_gaussian":
        return spiked_gaussian_distance(float(cfg.model["beta"]), cfg.p)
    if cfg.sampler is not None:
        return 0.0
    return None


def _error(value: float, truth: float | None) -> float | None:
    return None if truth is None else abs(value - truth)


def _replicate_rows(cfg: ExperimentConfig, n: int, r: int) -> list[dict[str, Any]]:
    base = {"n": n, "replicate": r, "seed_key": f"{cfg.seed}/{n}/{r}", "flag": ""}
    truth = resolve_truth(cfg)
    if cfg.kind == "concentration":
        sampler = sampler_from_config(cfg.sampler)
        return [base | {"value": replicate_distance(sampler, cfg.p, n, r, cfg.seed)}]
    if cfg.kind == "rates_plugin" and cfg.sampler is not None:
        sampler = sampler_from_config(cfg.sampler)
        value = plugin_distance(empirical(sampler, n, cfg.seed, n, r, 0), empirical(sampler, n, cfg.seed, n, r, 1), cfg.p)
        return [base | {"estimator": "plugin", "value": value, "error": _error(value, truth)}]

    spec = spec_from_config(cfg.model)
    mu, nu = sample_spiked_pair(spec, n, cfg.seed, n, r)
    if cfg.kind == "rates_plugin":
        value = plugin_distance(mu, nu, cfg.p)
        return [base | {"estimator": "plugin", "value": value, "error": _error(value, truth)}]
    result = wpp_estimate(mu, nu, cfg.p, cfg.k, cfg.wpp_options())
    if cfg.kind == "spike_recovery":
        return [base | {"value": result.value, "sin2_angle": sin_squared_minimal_angle(result.frame, spec.spike_frame)}]
    rows = [base | {"estimator": "wpp", "value": result.value, "error": _error(result.value, truth)}]
    if cfg.compare_plugin:
        value = plugin_distance(mu, nu, cfg.p)
        rows.append(base | {"estimator": "plugin", "value": value, "error": _error(value, truth)})
    return rows


def replicate_task(cfg: ExperimentConfig, n: int, r: int) -> list[dict[str, Any]]:
    """Rows for one replicate; numerical failures become a flagged row."""
    try:
        return _replicate_rows(cfg, n, r)
    except REPLICATE_ERRORS as exc:
        return [{"n": n, "replicate": r, "seed_key": f"{cfg.seed}/{n}/{r}", "value": float("nan"), "flag": f"{type(exc).__name__}: {exc}"}]


def _task_star(args):
    return replicate_task(*args)


def _run_replicates(cfg: ExperimentConfig, threads: int) -> list[dict[str, Any]]:
    tasks = [(cfg, n, r) for n in cfg.n_list for r in range(cfg.replicates)]
    if threads <= 1:
        chunks = [replicate_task(*t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(_task_star, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    return [row for chunk in chunks for row in chunk]


# ---------------------------------------------------------------------------
# summaries


def _finite(values) -> np.ndarray:
    arr = np.asarray([v for v in values if v is not None], dtype=float)
    return arr[np.isfinite(arr)]


def _replicate_summary(cfg: ExperimentConfig, rows: list[dict[str, Any]]) -> dict[str, Any]:
    flagged = sum(1 for r in rows if r.get("flag"))
    summary: dict[str, Any] = {"flagged_rows": flagged, "truth": resolve_truth(cfg)}
    if cfg.kind == "concentration":
        per_n = []
        for n in cfg.n_list:
            vals = _finite(r["value"] for r in rows if r["n"] == n and not r.get("flag"))
            entry: dict[str, Any] = {"n": n, "count": int(vals.size), "mean": float(vals.mean()) if vals.size else None}
            if vals.size >= 100:
                sigma_sq = estimate_subgaussian_constant(vals)
                entry |= {"sigma_sq_hat": sigma_sq, "n_sigma_sq_hat": n * sigma_sq}
            per_n.append(entry)
        scaled = [e["n_sigma_sq_hat"] for e in per_n if e.get("n_sigma_sq_hat")]
        summary["per_n"] = per_n
        summary["n_sigma_sq_spread"] = max(scaled) / min(scaled) if len(scaled) == len(per_n) and min(scaled) > 0 else None
        return summary
    if cfg.kind == "spike_recovery":
        per_n = []
        for n in cfg.n_list:
            vals = _finite(r.get("sin2_angle") for r in rows if r["n"] == n)
            per_n.append({"n": n, "count": int(vals.size), "mean_sin2_angle": float(vals.mean()) if vals.size else None})
        summary["per_n"] = per_n
        return summary

    per_n, fits = [], {}
    estimators = sorted({r["estimator"] for r in rows if r.get("estimator")})
    for est in estimators:
        pairs = []
        for n in cfg.n_list:
            errs = _finite(r.get("error") for r in rows if r["n"] == n and r.get("estimator") == est)
            vals = _finite(r.get("value") for r in rows if r["n"] == n and r.get("estimator") == est)
            entry = {
                "n": n,
                "estimator": est,
                "count": int(vals.size),
                "mean_value": float(vals.mean()) if vals.size else None,
                "mean_error": float(errs.mean()) if errs.size else None,
                "sd_error": float(errs.std(ddof=1)) if errs.size > 1 else None,
            }
            per_n.append(entry)
            if entry["mean_error"]:
                pairs.append((n, entry["mean_error"]))
        if len(pairs) >= 3:
            fits[est] = rate_fit(pairs).to_dict()
    summary["per_n"] = per_n
    summary["rate_fit"] = fits
    return summary


def run_hardness_suite(cfg: ExperimentConfig) -> tuple[list[dict[str, Any]], dict[str, Any]]:
    rows: list[dict[str, Any]] = []
    summary: dict[str, Any] = {"laws": [], "priors": []}
    for m in cfg.hardness["m_list"]:
        law = hard_distribution_A(int(m))
        report = moment_report(law, 2 * int(m) - 1)
        for entry in report.rows():
            rows.append({"section": "moment_deviation", "param": f"m={m}", "index": entry["order"], "value": entry["deviation"]})
        w1 = quantile_w1(law, stats.norm()).value
        chi = chi_square_1d(law).value
        rows.append({"section": "w1", "param": f"m={m}", "index": "", "value": w1})
        rows.append({"section": "chi_square", "param": f"m={m}", "index": "", "value": chi})
        summary["laws"].append(
            {"m": m, "delta": law.delta, "max_moment_deviation": report.max_abs_deviation, "w1": w1, "m_w1_sq": m * w1 * w1, "chi_square": chi}
        )
    band = [e["m_w1_sq"] for e in summary["laws"]]
    summary["m_w1_sq_band_ratio"] = max(band) / min(band) if band and min(band) > 0 else None
    for order in cfg.hardness["orders"]:
        pair = extremal_pair_lp(int(order))
        rows.append({"section": "lp_objective", "param": f"L={order}", "index": "", "value": pair.objective})
        for eps in cfg.hardness["eps_list"]:
            entry: dict[str, Any] = {"L": order, "eps": eps, "lp_objective": pair.objective}
            if pair.objective >= 0.5:
                priors = build_priors(pair.x, pair.x_prime, float(eps), int(order))
                for name, ok in priors.checks.items():
                    rows.append({"section": "prior_check", "param": f"L={order},eps={eps:.6g}", "index": name, "value": int(ok)})
                entry |= {"checks": priors.checks, "normalizer": priors.normalizer}
            else:
                entry["checks"] = None
            summary["priors"].append(entry)
    return rows, summary


def run_solve(cfg: ExperimentConfig) -> tuple[list[dict[str, Any]], dict[str, Any]]:
    mu, nu = read_measure(cfg.mu), read_measure(cfg.nu)
    result = wasserstein_discrete(mu, nu, cfg.p)
    c = result.coupling
    order = np.lexsort((c.cols, c.rows))
    rows = [{"row": int(c.rows[i]), "col": int(c.cols[i]), "mass": float(c.mass[i])} for i in order]
    return rows, {"cost": result.cost, "p": cfg.p, "dual_gap": result.dual_gap}


def read_measure(path) -> DiscreteMeasure:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read measure ({exc.strerror})") from None
    if path.suffix.lower() == ".json":
        return DiscreteMeasure.from_json(text)
    return DiscreteMeasure.from_csv(text)


# ---------------------------------------------------------------------------
# planning and running


def describe(cfg: ExperimentConfig, out_dir=None) -> str:
    """Human-readable plan; performs no file writes."""
    lines = [f"experiment: {cfg.kind}", f"seed: {cfg.seed}", f"p: {cfg.p:g}"]
    if cfg.kind in ("rates_wpp", "spike_recovery"):
        opts = cfg.wpp_options()
        lines.append(f"k: {cfg.k}")
        lines.append(f"wpp: restarts={opts.restarts} max_iters={opts.max_iters} net_fallback={opts.net_fallback}")
    if cfg.sampler is not None:
        lines.append(f"sampler: {json.dumps(cfg.sampler)}")
    if cfg.model is not None:
        lines.append(f"model: {json.dumps(cfg.model)}")
    if cfg.n_list:
        lines.append(f"n_list: {', '.join(str(n) for n in cfg.n_list)}")
        lines.append(f"replicates per n: {cfg.replicates}")
        lines.append(f"total replicates: {cfg.replicates * len(cfg.n_list)}")
    if cfg.kind == "hardness_suite":
        lines.append(f"hardness: {json.dumps(cfg.hardness)}")
    if cfg.kind == "solve":
        lines.append(f"mu: {cfg.mu}")
        lines.append(f"nu: {cfg.nu}")
    lines.append(f"output: {out_dir or cfg.output or default_output(cfg)}")
    return "\n".join(lines) + "\n"


def default_output(cfg: ExperimentConfig) -> str:
    return f"runs/{cfg.kind}-seed{cfg.seed}"


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _RunLock:
    def __init__(self, out_dir: Path):
        self.path = out_dir / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise OutputLockedError(f"{self.path.parent} is locked by another run (remove {self.path} if stale)") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def compute(cfg: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """Execute an experiment in memory."""
    if cfg.kind in ("rates_plugin", "rates_wpp", "spike_recovery", "concentration"):
        if cfg.replicates < 1 or not cfg.n_list:
            raise ConfigurationError(f"{cfg.kind} needs a non-empty n_list and replicates >= 1")
    start = time.perf_counter()
    if cfg.kind == "hardness_suite":
        rows, summary = run_hardness_suite(cfg)
    elif cfg.kind == "solve":
        rows, summary = run_solve(cfg)
    else:
        rows = _run_replicates(cfg, threads)
        summary = _replicate_summary(cfg, rows)
    wall = time.perf_counter() - start
    summary = {"kind": cfg.kind, "version": __version__, "seed": cfg.seed, "rows": len(rows), "wall_clock_seconds": wall} | summary
    summary.setdefault("flagged_rows", 0)
    return ExperimentReport(cfg.to_dict(), COLUMNS[cfg.kind], rows, summary, None, wall)


def run(cfg: ExperimentConfig, out_dir=None, threads: int = 1) -> ExperimentReport:
    """Execute an experiment and write ``config.yaml``, ``rows.csv`` and ``summary.json``."""
    out = Path(out_dir or cfg.output or default_output(cfg))
    out.mkdir(parents=True, exist_ok=True)
    with _RunLock(out):
        report = compute(cfg, threads)
        _atomic_write(out / "config.yaml", yaml.safe_dump(report.config, sort_keys=False))
        _atomic_write(out / "rows.csv", report.csv_text())
        _atomic_write(out / "summary.json", json.dumps(_jsonable(report.summary), indent=2, sort_keys=True) + "\n")
    report.out_dir = out
    return report


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


__all__ = ["COLUMNS", "ExperimentReport", "compute", "describe", "read_measure", "replicate_task", "run", "rows_to_csv"]
