"""Multi-run aggregation: MSE tables, recovery rates, rank-test summaries.

One :class:`RunRecord` per (benchmark, method, seed).  Runs whose best
test MSE is non-finite or above 1e10 count as failures: they are
excluded from the mean/std but still show up in the totals that recovery
percentages are computed against.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FAILURE_MSE",
    "RunRecord",
    "BenchmarkSummary",
    "aggregate",
    "mann_whitney_u",
    "significance_summary",
    "emit_report",
    "records_from_results",
]

FAILURE_MSE = 1e10


@dataclass(frozen=True)
class RunRecord:
    benchmark: str
    method: str
    seed: int
    test_mse: float
    recovered: bool = False
    complexity: int | None = None
    r2: float | None = None
    wall_time_s: float | None = None
    failed: bool = False


@dataclass
class BenchmarkSummary:
    benchmark: str
    method: str
    total_runs: int
    valid_runs: int
    mean_mse: float | None
    std_mse: float | None
    recovery_pct: float
    mean_complexity: float | None = None
    mean_r2: float | None = None


def _is_valid(record: RunRecord) -> bool:
    return (
        not record.failed
        and math.isfinite(record.test_mse)
        and record.test_mse <= FAILURE_MSE
    )


def aggregate(records: list[RunRecord]) -> list[BenchmarkSummary]:
    """Per (benchmark, method): mean/std MSE over valid runs, recovery %.

    Standard deviation is the population (n-denominator) form.  Output
    order is sorted by (benchmark, method) for deterministic reports.
    """
    if not records:
        raise ValueError("no run records to aggregate")
    groups: dict[tuple[str, str], list[RunRecord]] = defaultdict(list)
    for rec in records:
        groups[(rec.benchmark, rec.method)].append(rec)

    summaries = []
    for (benchmark, method) in sorted(groups):
        rows = groups[(benchmark, method)]
        valid = [r for r in rows if _is_valid(r)]
        mses = np.array([r.test_mse for r in valid], dtype=float)
        complexities = [r.complexity for r in valid if r.complexity is not None]
        r2s = [r.r2 for r in valid if r.r2 is not None]
        summaries.append(
            BenchmarkSummary(
                benchmark=benchmark,
                method=method,
                total_runs=len(rows),
                valid_runs=len(valid),
                mean_mse=float(np.mean(mses)) if len(valid) else None,
                std_mse=float(np.std(mses)) if len(valid) else None,
                recovery_pct=100.0 * sum(r.recovered for r in rows) / len(rows),
                mean_complexity=float(np.mean(complexities)) if complexities else None,
                mean_r2=float(np.mean(r2s)) if r2s else None,
            )
        )
    return summaries


def _rankdata(values: np.ndarray) -> np.ndarray:
    """Fractional ranks (ties get the mean of their rank span), 1-based."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=float)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def mann_whitney_u(sample_a, sample_b) -> tuple[float, float]:
    """Mann-Whitney U for two independent samples.

    Returns (U_a, two-sided p).  U_a counts pairs where a beats b (ties
    half); U_a + U_b = len(a) * len(b).  The p-value uses the normal
    approximation with tie correction and a 0.5 continuity correction;
    when every value is tied the samples are indistinguishable and p = 1.
    """
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    n_a, n_b = len(a), len(b)
    pooled = np.concatenate([a, b])
    ranks = _rankdata(pooled)
    u_a = float(ranks[:n_a].sum() - n_a * (n_a + 1) / 2.0)

    n = n_a + n_b
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float((counts**3 - counts).sum())
    if n < 2 or tie_term == n**3 - n:
        return u_a, 1.0
    sd = math.sqrt(n_a * n_b / 12.0 * ((n + 1) - tie_term / (n * (n - 1))))
    mean_u = n_a * n_b / 2.0
    z = (max(u_a, n_a * n_b - u_a) - mean_u - 0.5) / sd
    p = math.erfc(max(z, 0.0) / math.sqrt(2.0))  # two-sided
    return u_a, min(1.0, p)


def significance_summary(
    records: list[RunRecord], alpha: float = 0.05
) -> dict[str, dict[str, int]]:
    """Per-method counts of benchmarks where it is best (+), tied (~), worse (-).

    On each benchmark the method with the lowest mean valid MSE anchors
    the comparison; any method whose per-seed MSE sample is not
    significantly different from the anchor's (two-sided p >= alpha)
    ties with it.  A sole anchor scores '+', tied methods all score '~',
    everything else (including methods with no valid run) scores '-'.
    """
    methods = sorted({r.method for r in records})
    counts = {m: {"better": 0, "equivalent": 0, "worse": 0} for m in methods}
    if len(methods) < 2:
        return counts

    by_benchmark: dict[str, list[RunRecord]] = defaultdict(list)
    for rec in records:
        by_benchmark[rec.benchmark].append(rec)

    for benchmark in sorted(by_benchmark):
        rows = by_benchmark[benchmark]
        samples = {
            m: np.array([r.test_mse for r in rows if r.method == m and _is_valid(r)])
            for m in methods
        }
        with_valid = [m for m in methods if samples[m].size]
        if not with_valid:
            continue
        anchor = min(with_valid, key=lambda m: float(np.mean(samples[m])))
        top = {anchor}
        for m in with_valid:
            if m == anchor:
                continue
            _, p = mann_whitney_u(samples[m], samples[anchor])
            if p >= alpha:
                top.add(m)
        for m in methods:
            if m not in top:
                counts[m]["worse"] += 1
            elif len(top) == 1:
                counts[m]["better"] += 1
            else:
                counts[m]["equivalent"] += 1
    return counts


def records_from_results(result_dicts: list[dict]) -> list[RunRecord]:
    """Adapt serialized RunResult documents into report rows."""
    records = []
    for doc in result_dicts:
        test_mse = doc.get("best_test_mse")
        records.append(
            RunRecord(
                benchmark=doc.get("benchmark", ""),
                method=doc.get("method", "gsr"),
                seed=int(doc.get("seed", 0)),
                test_mse=math.inf if test_mse is None else float(test_mse),
                recovered=bool(doc.get("recovered", False)),
                complexity=doc.get("best_complexity"),
                r2=doc.get("test_r2"),
                failed=bool(doc.get("failed", False)),
            )
        )
    return records


def _format_mse(summary: BenchmarkSummary) -> str:
    if summary.mean_mse is None:
        return "-"
    return f"{summary.mean_mse:.3e} (+/-{summary.std_mse:.1e})"


def emit_report(
    records: list[RunRecord],
    fmt: str = "markdown",
    alpha: float = 0.05,
) -> str:
    """Render the aggregate table; output is deterministic for equal input."""
    if fmt not in ("markdown", "json", "csv"):
        raise ValueError(f"unknown report format {fmt!r}")
    summaries = aggregate(records) if records else []
    significance = significance_summary(records, alpha) if records else {}
    methods = sorted({s.method for s in summaries})
    benchmarks = sorted({s.benchmark for s in summaries})
    table = {(s.benchmark, s.method): s for s in summaries}

    if fmt == "json":
        payload = {
            "benchmarks": [
                {
                    "benchmark": s.benchmark,
                    "method": s.method,
                    "total_runs": s.total_runs,
                    "valid_runs": s.valid_runs,
                    "mean_mse": s.mean_mse,
                    "std_mse": s.std_mse,
                    "recovery_pct": s.recovery_pct,
                    "mean_complexity": s.mean_complexity,
                    "mean_r2": s.mean_r2,
                }
                for s in summaries
            ],
            "significance": significance,
        }
        return json.dumps(payload, sort_keys=True, indent=1, allow_nan=False)

    if fmt == "csv":
        lines = [
            "benchmark,method,total_runs,valid_runs,mean_mse,std_mse,"
            "recovery_pct,mean_complexity,mean_r2"
        ]
        for s in summaries:
            lines.append(
                ",".join(
                    "" if v is None else (f"{v}" if not isinstance(v, float) else repr(v))
                    for v in (
                        s.benchmark, s.method, s.total_runs, s.valid_runs,
                        s.mean_mse, s.std_mse, s.recovery_pct,
                        s.mean_complexity, s.mean_r2,
                    )
                )
            )
        return "\n".join(lines) + "\n"

    # Markdown: benchmarks as rows, methods as columns.
    has_extras = any(s.mean_complexity is not None or s.mean_r2 is not None for s in summaries)
    lines = []
    header = ["benchmark"] + [f"{m} MSE" for m in methods] + [f"{m} rec%" for m in methods]
    if has_extras:
        header += [f"{m} C" for m in methods] + [f"{m} R2" for m in methods]
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "---|" * len(header))
    for benchmark in benchmarks:
        row = [benchmark]
        for m in methods:
            s = table.get((benchmark, m))
            row.append("-" if s is None else _format_mse(s))
        for m in methods:
            s = table.get((benchmark, m))
            row.append("-" if s is None else f"{s.recovery_pct:.0f}%")
        if has_extras:
            for m in methods:
                s = table.get((benchmark, m))
                row.append(
                    "-" if s is None or s.mean_complexity is None
                    else f"{s.mean_complexity:.1f}"
                )
            for m in methods:
                s = table.get((benchmark, m))
                row.append("-" if s is None or s.mean_r2 is None else f"{s.mean_r2:.3f}")
        lines.append("| " + " | ".join(row) + " |")
    if any(v["better"] or v["equivalent"] or v["worse"] for v in significance.values()):
        parts = [
            f"{m}: +{significance[m]['better']} /~{significance[m]['equivalent']} "
            f"/-{significance[m]['worse']}"
            for m in methods
        ]
        lines.append("")
        lines.append("U test: " + "; ".join(parts))
    return "\n".join(lines) + "\n"
