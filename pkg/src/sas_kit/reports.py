"""Report files: metric CSV, timing CSV, JSON summary and config snapshot."""

import json
import platform
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import psutil

from . import __version__
from .benches.base import REPORT_COLUMNS, TIMING_COLUMNS, BenchReport, BenchResult
from .pointcloud import TokenSet
from .serialization import SerializationOrder


def machine_snapshot() -> dict[str, Any]:
    """Host facts stored next to results; never part of the reproducible CSV."""
    return {
        "python": platform.python_version(),
        "platform": platform.platform(),
        "cpu_physical": psutil.cpu_count(logical=False),
        "cpu_logical": psutil.cpu_count(),
        "memory_gb": round(psutil.virtual_memory().total / (1024 ** 3), 1),
    }


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_json(path: Path, payload: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_report(report: BenchReport, out_dir: Path, result: BenchResult | None = None) -> dict[str, Path]:
    """Write report.csv, timings.csv, summary.json and config.json into ``out_dir``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = report.frame()
    paths = {
        "report": out_dir / "report.csv",
        "timings": out_dir / "timings.csv",
        "summary": out_dir / "summary.json",
        "config": out_dir / "config.json",
    }
    frame[REPORT_COLUMNS].to_csv(paths["report"], index=False, lineterminator="\n")
    frame[TIMING_COLUMNS].to_csv(paths["timings"], index=False, lineterminator="\n")
    summary = {
        "bench": report.name,
        "version": __version__,
        "rows": len(report.rows),
        "summary": report.summary,
        "machine": machine_snapshot(),
    }
    if result is not None:
        summary["result"] = result.to_dict()
    write_json(paths["summary"], summary)
    write_json(paths["config"], report.config)
    return paths


def order_frame(order: SerializationOrder, token_set: TokenSet) -> pd.DataFrame:
    """One row per sequence rank: ``rank, token_index, x, y, z``."""
    centers = token_set.centers[order.permutation]
    return pd.DataFrame({
        "rank": np.arange(order.size),
        "token_index": order.permutation,
        "x": centers[:, 0],
        "y": centers[:, 1],
        "z": centers[:, 2],
    })


def write_order_csv(order: SerializationOrder, token_set: TokenSet, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    order_frame(order, token_set).to_csv(path, index=False, lineterminator="\n")
    return path
