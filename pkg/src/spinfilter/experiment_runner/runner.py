"""Job scheduling and result files.

Jobs go to a process pool (or run inline for one worker). Results are
consumed in job order by a single writer, and BLAS is limited to one thread
in every process, so the data files do not depend on the worker count. Wall
time and other run metadata go only into the summary JSON.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List

from threadpoolctl import threadpool_limits

from .config import ExperimentConfig, OutputFormat, Scenario
from .scenarios import aggregate, execute_job, plan_jobs

__all__ = ["RunResult", "run", "output_paths", "format_rows"]

log = logging.getLogger(__name__)


class RunResult(dict):
    """Summary mapping returned by :func:`run`; also written as JSON."""


def _init_worker():
    threadpool_limits(1)


def _call(args):
    job, config = args
    return execute_job(job, config)


def _run_jobs(jobs, config: ExperimentConfig) -> List[dict]:
    rows: List[dict] = []
    if config.workers == 1 or len(jobs) <= 1:
        with threadpool_limits(1):
            for job in jobs:
                rows.extend(execute_job(job, config))
        return rows
    with ProcessPoolExecutor(max_workers=config.workers, initializer=_init_worker) as pool:
        # map yields in submission order, which fixes the output order
        for part in pool.map(_call, [(job, config) for job in jobs]):
            rows.extend(part)
    return rows


def output_paths(config: ExperimentConfig) -> dict:
    """File names derived from ``config.output``."""
    out = config.output
    ext = "." + config.output_format.value
    stem = out.with_suffix("") if out.suffix else out
    paths = {"data": stem.with_suffix(ext), "summary": Path(f"{stem}_summary.json")}
    if config.scenario in (Scenario.QCR_SWEEP, Scenario.PF_SWEEP):
        paths["points"] = Path(f"{stem}_points{ext}")
    if config.scenario is Scenario.QFUNCTION:
        paths["grid"] = Path(f"{stem}_grid{ext}")
    return paths


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def format_rows(rows: List[dict], fmt: OutputFormat) -> str:
    """CSV (header from the first row, floats as ``repr``) or a JSON list."""
    if fmt is OutputFormat.JSON:
        return json.dumps([{k: _json_value(v) for k, v in r.items()} for r in rows], indent=1) + "\n"
    buf = io.StringIO()
    if rows:
        writer = csv.writer(buf, lineterminator="\n")
        keys = list(rows[0])
        writer.writerow(keys)
        for r in rows:
            writer.writerow([_cell(r.get(k, "")) for k in keys])
    return buf.getvalue()


def run(config: ExperimentConfig, write: bool = True) -> RunResult:
    """Execute ``config.scenario`` and write its data, points and summary files."""
    start = time.perf_counter()
    jobs = plan_jobs(config)
    log.info("%s: %d jobs on %d worker(s)", config.scenario.value, len(jobs), config.workers)
    rows = _run_jobs(jobs, config)
    points, summary = aggregate(rows, config)
    grid = []
    if config.scenario is Scenario.QFUNCTION:
        grid = [{k: v for k, v in r.items() if k != "kind"} for r in rows if r["kind"] == "grid"]
        rows = [{k: v for k, v in r.items() if k != "kind"} for r in rows if r["kind"] == "summary"]
    failures = [r for r in rows if str(r.get("status", "ok")) != "ok"]
    result = RunResult(
        scenario=config.scenario.value,
        config=config.as_dict(),
        n_jobs=len(jobs),
        n_rows=len(rows),
        n_failed=len(failures),
        wall_time_s=time.perf_counter() - start,
        **summary,
    )
    result["rows"], result["points"] = rows, points
    if write:
        paths = output_paths(config)
        paths["data"].parent.mkdir(parents=True, exist_ok=True)
        paths["data"].write_text(format_rows(rows, config.output_format))
        if "points" in paths:
            paths["points"].write_text(format_rows(points, config.output_format))
        if "grid" in paths:
            paths["grid"].write_text(format_rows(grid, config.output_format))
        meta = {k: v for k, v in result.items() if k not in ("rows", "points")}
        meta["files"] = {k: str(p) for k, p in paths.items()}
        paths["summary"].write_text(json.dumps(meta, indent=2, default=_json_value) + "\n")
        result["files"] = meta["files"]
    return result
