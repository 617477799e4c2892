"""Canonical JSON / CSV serialization for evaluation and ablation reports."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable

from .metrics import CorrelationReport

SIGNIFICANT_DIGITS = 9


def _round(value: float) -> float:
    if not math.isfinite(value):
        raise ValueError(f"non-finite value in report: {value!r}")
    return float(f"{value:.{SIGNIFICANT_DIGITS}g}")


def _canonical(obj: Any) -> Any:
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        return _round(obj)
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical_json(obj: Any) -> str:
    """Sorted keys, floats at 9 significant digits, trailing newline."""
    return json.dumps(_canonical(obj), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(path: str | Path, obj: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(obj), encoding="utf-8")


def correlation_dict(report: CorrelationReport | None) -> dict[str, Any] | None:
    if report is None:
        return None
    return {
        "n": report.n,
        "srcc": report.srcc,
        "plcc": report.plcc,
        "plcc_logistic": report.plcc_logistic,
        "logistic_fallback": report.logistic_fallback,
    }


def summary_csv(rows: Iterable[dict[str, Any]]) -> str:
    """One ``mode,dataset,srcc,plcc`` line per row, for table assembly."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["mode", "dataset", "srcc", "plcc"])
    for row in rows:
        corr = row.get("correlations") or {}
        writer.writerow(
            [
                row["mode"],
                row["dataset"],
                "" if corr.get("srcc") is None else f"{corr['srcc']:.{SIGNIFICANT_DIGITS}g}",
                "" if corr.get("plcc") is None else f"{corr['plcc']:.{SIGNIFICANT_DIGITS}g}",
            ]
        )
    return buf.getvalue()
