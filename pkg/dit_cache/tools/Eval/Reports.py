"""Comparison tables and report files."""

from typing import Dict, List, Sequence

from dit_cache.common.format_versions import format_versions
from dit_cache.common.run_directory import csv_text
from .Core import EvalReport

REPORT_HEADER = ("rank", "method", "cur", "speedup", "wall_clock", "mse_mean", "mse_std", "n_seeds")


def compare(reports: Sequence[EvalReport]) -> List[EvalReport]:
    """Reports ranked by final-sample MSE (ties keep input order)"""
    return sorted(reports, key=lambda r: r.mse_mean)


def render_table(reports: Sequence[EvalReport]) -> str:
    rows = compare(reports)
    width = max([len("method")] + [len(r.method) for r in rows])
    lines = [f"{'#':>2}  {'method':<{width}}  {'CUR':>7}  {'speedup':>7}  {'MSE':>12}  {'± sd':>10}"]
    for rank, r in enumerate(rows, 1):
        lines.append(f"{rank:>2}  {r.method:<{width}}  {100 * r.cur:>6.2f}%  {r.speedup:>7.3f}  "
                     f"{r.mse_mean:>12.6g}  {r.mse_std:>10.4g}")
    return "\n".join(lines)


def report_json(reports: Sequence[EvalReport]) -> Dict[str, object]:
    return {
        "version": format_versions.current("report"),
        "reports": [r.to_dict() for r in compare(reports)],
    }


def report_csv(reports: Sequence[EvalReport]) -> str:
    rows = [(rank, r.method, r.cur, r.speedup, r.wall_clock, r.mse_mean, r.mse_std, r.n_seeds)
            for rank, r in enumerate(compare(reports), 1)]
    return csv_text(REPORT_HEADER, rows)


def curve_csv(report: EvalReport) -> str:
    """(t, mse) for t = T..0"""
    rows = [(t, report.curve[t]) for t in range(len(report.curve) - 1, -1, -1)]
    return csv_text(("t", "mse"), rows)
