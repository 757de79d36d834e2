"""Base bench class, report rows and result types."""

import math
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, TypeVar

import pandas as pd

from ..config import SasConfig, worker_count
from ..errors import BenchAssertionError

T = TypeVar("T")
R = TypeVar("R")

REPORT_COLUMNS = ["shape_id", "strategy", "perturbation", "metric_name", "value"]
TIMING_COLUMNS = ["shape_id", "strategy", "perturbation", "metric_name", "elapsed_ms"]


class BenchStatus(Enum):
    """Outcome of a bench run."""
    PASS = "pass"
    WARN = "warn"
    FAIL = "fail"


@dataclass(frozen=True)
class BenchRow:
    shape_id: str
    strategy: str
    perturbation: str
    metric_name: str
    value: float
    elapsed_ms: float = 0.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise BenchAssertionError(
                f"non-finite {self.metric_name} for {self.shape_id}/{self.strategy}/{self.perturbation}"
            )

    @property
    def key(self) -> tuple[str, str, str, str]:
        return (self.shape_id, self.strategy, self.perturbation, self.metric_name)


@dataclass
class BenchReport:
    """Metric rows plus the config snapshot that reproduces them."""
    name: str
    rows: list[BenchRow] = field(default_factory=list)
    config: dict[str, Any] = field(default_factory=dict)
    summary: dict[str, Any] = field(default_factory=dict)

    def sorted_rows(self) -> list[BenchRow]:
        return sorted(self.rows, key=lambda r: r.key)

    def frame(self) -> pd.DataFrame:
        """Rows as a DataFrame sorted by key."""
        rows = self.sorted_rows()
        return pd.DataFrame(
            [[*r.key, r.value, r.elapsed_ms] for r in rows],
            columns=[*REPORT_COLUMNS, "elapsed_ms"],
        )

    def means(self) -> dict[str, dict[str, float]]:
        """Mean value per strategy and metric."""
        df = self.frame()
        if df.empty:
            return {}
        table = df.groupby(["strategy", "metric_name"], sort=True)["value"].mean()
        out: dict[str, dict[str, float]] = {}
        for (strategy, metric), value in table.items():
            out.setdefault(strategy, {})[metric] = float(value)
        return out

    def total_elapsed(self) -> dict[str, float]:
        df = self.frame()
        if df.empty:
            return {}
        return {k: float(v) for k, v in df.groupby("strategy", sort=True)["elapsed_ms"].sum().items()}


@dataclass
class BenchResult:
    """Result of a bench run."""
    name: str
    status: BenchStatus
    message: str
    details: str | None = None
    report: BenchReport | None = None

    @property
    def passed(self) -> bool:
        """Pass or warn; trend misses warn, broken invariants fail."""
        return self.status in (BenchStatus.PASS, BenchStatus.WARN)

    @property
    def is_warning(self) -> bool:
        return self.status == BenchStatus.WARN

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "status": self.status.value,
            "message": self.message,
            "details": self.details,
        }


def judge(name: str, report: BenchReport, failures: list[str], warnings: list[str], ok_message: str) -> BenchResult:
    """Fold hard failures and advisory warnings into one result."""
    report.summary["failures"] = failures
    report.summary["warnings"] = warnings
    if failures:
        return BenchResult(name, BenchStatus.FAIL, f"{len(failures)} hard check(s) failed",
                           "\n".join(failures + warnings), report)
    if warnings:
        return BenchResult(name, BenchStatus.WARN, f"{ok_message} ({len(warnings)} warning(s))",
                           "\n".join(warnings), report)
    return BenchResult(name, BenchStatus.PASS, ok_message, None, report)


def run_cells(
    fn: Callable[[T], R],
    cells: Iterable[T],
    workers: int | None = None,
    on_done: Callable[[], None] | None = None,
) -> list[R]:
    """Run independent cells on a thread pool; results come back in cell order."""
    cells = list(cells)
    workers = workers or worker_count()

    def wrapped(cell: T) -> R:
        result = fn(cell)
        if on_done is not None:
            on_done()
        return result

    if workers <= 1 or len(cells) <= 1:
        return [wrapped(c) for c in cells]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(wrapped, cells))


class BaseBench(ABC):
    """Base class for all benches."""

    name: str = "base"
    description: str = "A benchmark"

    @abstractmethod
    def cell_count(self, cfg: SasConfig) -> int:
        """Number of progress ticks ``run`` will emit."""

    @abstractmethod
    def run(self, cfg: SasConfig, on_cell: Callable[[], None] | None = None) -> BenchResult:
        """Run the bench and return the judged result."""
