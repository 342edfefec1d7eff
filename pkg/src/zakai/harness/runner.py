"""Orchestration: path pool, failure accounting, strict mode and outputs.

The worker count comes from ``ZAKAI_WORKERS`` (default 1).  Path indices are
cut into contiguous chunks; per-path results are reassembled in index order
before any reduction.
"""

from __future__ import annotations

import datetime as _dt
import functools
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import SUITES, RunConfig
from .experiments import SUITE_RUNNERS, SUMMARIZERS, WORKERS, Outcome, check, parabolicity_check
from .reporting import RunReport, build_id, write_outputs

__all__ = ["run", "RunAborted", "HypothesisFailure", "worker_count", "resolve_out", "MAX_FAIL_FRACTION"]

MAX_FAIL_FRACTION = 0.05


class RunAborted(RuntimeError):
    """More than ``MAX_FAIL_FRACTION`` of the paths failed."""


class HypothesisFailure(RuntimeError):
    """A structural hypothesis check failed in strict mode."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


def worker_count() -> int:
    raw = os.environ.get("ZAKAI_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"ZAKAI_WORKERS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"ZAKAI_WORKERS must be a positive integer, got {raw!r}")
    return n


def _call(kind, cfg_dict, indices):
    return WORKERS[kind](RunConfig(**cfg_dict), indices)


def _map_paths(cfg: RunConfig, indices, workers: int) -> dict:
    chunks = [c for c in np.array_split(np.asarray(indices), min(workers, len(indices))) if c.size]
    fn = functools.partial(_call, cfg.kind, cfg.to_dict())
    if workers == 1 or len(chunks) == 1:
        parts = [fn(list(c)) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, [list(c) for c in chunks]))
    merged = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    merged["index"] = np.asarray(indices)
    return merged


def _execute(cfg: RunConfig, out: Outcome) -> tuple[dict, list]:
    if cfg.kind in SUITES:
        SUITE_RUNNERS[cfg.kind](cfg, out)
        return {}, []
    excluded = set(cfg.exclude)
    indices = [i for i in range(cfg.paths) if i not in excluded]
    pp = _map_paths(cfg, indices, worker_count())
    failed = pp["fail_step"] >= 0
    failures = [{"path": int(i), "step": int(s)} for i, s in zip(pp["index"][failed], pp["fail_step"][failed])]
    frac = failed.mean()
    if frac > MAX_FAIL_FRACTION:
        raise RunAborted(f"{failed.sum()} of {len(indices)} paths failed (limit {MAX_FAIL_FRACTION:.0%})")
    SUMMARIZERS[cfg.kind](cfg, pp, ~failed, out)
    out.checks.append(check("failed_path_fraction", frac, f"<= {MAX_FAIL_FRACTION:g}", frac <= MAX_FAIL_FRACTION))
    return pp, failures


def resolve_out(cfg: RunConfig, out_dir=None) -> str:
    return out_dir or cfg.out or os.path.join("runs", f"{cfg.kind}-{cfg.config_hash()[:10]}")


def run(config: RunConfig, out_dir=None, write: bool = True) -> RunReport:
    """Run one experiment; write CSV tables, ``report.json`` and ``manifest.json``.

    ``out_dir`` overrides ``config.out``.  Raises :class:`HypothesisFailure`
    in strict mode when a structural check fails (outputs of the suite are
    written first), and :class:`RunAborted` when too many paths fail.
    """
    cfg = config.validate()
    out_dir = resolve_out(cfg, out_dir)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    out = Outcome()
    pre = parabolicity_check(cfg) if cfg.kind not in SUITES else None
    if pre is not None:
        out.checks.append(pre)
        if not pre["passed"] and cfg.strict:
            raise HypothesisFailure(f"parabolicity fails: min eigenvalue {pre['value']:.6g} ({pre['threshold']})")
    pp, failures = _execute(cfg, out)
    per_path = {k: v.tolist() for k, v in pp.items()}
    report = RunReport(
        cfg.kind,
        cfg.config_hash(),
        cfg.seed,
        cfg.to_dict(),
        build_id(),
        out.tables,
        out.checks,
        out.orders,
        out.summary,
        per_path,
        failures,
        out.ladders,
        time.perf_counter() - t0,
    )
    if write:
        write_outputs(report, out_dir, started)
    if cfg.kind == "hypothesis_suite" and cfg.strict and not report.passed:
        bad = ", ".join(c["name"] for c in report.checks if not c["passed"])
        raise HypothesisFailure(f"hypothesis checks failed: {bad}", report)
    return report
