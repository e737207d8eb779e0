"""Run-report serialization: canonical JSON, CSV rows, and a text table.

JSON is emitted with sorted keys, compact separators, and NaN rejection,
so deterministic-mode runs serialize byte-identically.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path


def report_to_json_bytes(report: dict) -> bytes:
    return (json.dumps(report, sort_keys=True, separators=(",", ":"),
                       allow_nan=False) + "\n").encode()


def write_report(report: dict, path: str | Path) -> None:
    Path(path).write_bytes(report_to_json_bytes(report))


def _fmt(x, width=10) -> str:
    if x is None:
        return "-".rjust(width)
    if isinstance(x, float):
        return f"{x:.4f}".rjust(width)
    return str(x).rjust(width)


def _run_row(run: dict) -> dict:
    cfg = run["config"]
    meas = run["measured"]
    qps = meas.get("simulated_qps", meas.get("wall_qps"))
    return {
        "policy": cfg["policy"] if not run.get("unified") else "Unified",
        "zipf_s": cfg["zipf_s"] if cfg["zipf_s"] is not None else 0.0,
        "chr": meas["chr"],
        "csp": run.get("csp"),
        "qps": qps,
        "recall_at_k": run.get("recall_at_k"),
        "queries": meas["queries"],
        "bytes_per_query": meas["traffic"]["bytes_per_query"],
    }


def report_to_text(report: dict) -> str:
    runs = report.get("runs", [report])
    cols = ["policy", "zipf_s", "chr", "csp", "qps", "recall_at_k"]
    lines = [" ".join(c.rjust(12) for c in cols)]
    for run in runs:
        row = _run_row(run)
        lines.append(" ".join(_fmt(row[c], 12) for c in cols))
    return "\n".join(lines) + "\n"


def sweep_to_csv(report: dict) -> str:
    """One row per run, mirroring the CHR / CSP / q/s comparison table."""
    runs = report.get("runs", [report])
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=[
        "policy", "zipf_s", "chr", "csp", "qps", "recall_at_k", "queries",
        "bytes_per_query"])
    writer.writeheader()
    for run in runs:
        writer.writerow(_run_row(run))
    return out.getvalue()
