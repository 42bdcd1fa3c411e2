"""Report emission: raw per-run CSV, aggregated markdown tables, plot data.

Aggregation averages replicates within each instance first; the reported
spread is the sample standard deviation (``ddof=1``) of those instance means.
Failed runs appear as ``nan`` in the raw CSV and are left out of the averages.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import METHODS
from .runner import EvalReport, RunRecord

RAW_COLUMNS = ("scenario", "d", "n", "method", "instance", "replicate", "nll", "seed")
PLOT_COLUMNS = ("scenario", "method", "x_name", "x", "fixed_name", "fixed", "y", "err", "n_instances")

RAW_CSV = "runs.csv"
SUMMARY_MD = "summary.md"
PLOT_CSV = "plot_data.csv"
METADATA_JSON = "metadata.json"
DETAILS_JSONL = "run_details.jsonl"


@dataclass(frozen=True)
class CellSummary:
    scenario: str
    d: int
    n: int
    method: str
    mean: float
    std: float
    instance_means: tuple[float, ...]
    n_ok: int
    n_failed: int

    @property
    def n_instances(self) -> int:
        return len(self.instance_means)


def aggregate(records) -> dict[tuple, CellSummary]:
    """Per ``(scenario, d, n, method)`` summaries, ordered by key then method order."""
    groups: dict[tuple, dict[int, list]] = {}
    failed: dict[tuple, int] = {}
    for r in sorted(records, key=RunRecord.sort_key):
        key = (r.scenario, r.d, r.n, r.method)
        per_inst = groups.setdefault(key, {})
        failed.setdefault(key, 0)
        if r.ok:
            per_inst.setdefault(r.instance, []).append(r.nll)
        else:
            failed[key] += 1
    out = {}
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2], METHODS.index(k[3]))):
        per_inst = groups[key]
        inst_means = tuple(float(np.mean(per_inst[i])) for i in sorted(per_inst))
        if inst_means:
            mean = float(np.mean(inst_means))
            std = float(np.std(inst_means, ddof=1)) if len(inst_means) > 1 else math.nan
        else:
            mean = std = math.nan
        out[key] = CellSummary(*key, mean, std, inst_means, sum(map(len, per_inst.values())), failed[key])
    return out


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def _cell_text(c: CellSummary | None) -> str:
    if c is None:
        return ""
    if c.n_ok == 0:
        return "failed"
    std = "n/a" if math.isnan(c.std) else f"{c.std:.3f}"
    text = f"{c.mean:.3f} ({std})"
    return text + (f" [{c.n_failed} failed]" if c.n_failed else "")


def markdown_tables(cells: dict[tuple, CellSummary]) -> str:
    """One table per ``(scenario, n)``: methods as rows, dimensions as columns."""
    blocks = []
    for scen in sorted({k[0] for k in cells}):
        for n in sorted({k[2] for k in cells if k[0] == scen}):
            sub = {k: c for k, c in cells.items() if k[0] == scen and k[2] == n}
            dims = sorted({k[1] for k in sub})
            methods = [m for m in METHODS if any(k[3] == m for k in sub)]
            lines = [f"## {scen}, n = {n}", "", "| Method | " + " | ".join(f"d={d}" for d in dims) + " |"]
            lines.append("|---" * (len(dims) + 1) + "|")
            for m in methods:
                row = [_cell_text(sub.get((scen, d, n, m))) for d in dims]
                lines.append(f"| {m} | " + " | ".join(row) + " |")
            blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")


def plot_rows(cells: dict[tuple, CellSummary]) -> list[tuple]:
    """Curves of mean NLL against d (n fixed) and against n (d fixed)."""
    rows = []
    for (scen, d, n, m), c in cells.items():
        rows.append((scen, m, "d", d, "n", n, c))
        rows.append((scen, m, "n", n, "d", d, c))
    rows.sort(key=lambda r: (r[0], r[2], r[5], METHODS.index(r[1]), r[3]))
    return [(s, m, xn, x, fn, f, _fmt(c.mean), _fmt(c.std), c.n_instances) for s, m, xn, x, fn, f, c in rows]


def _open_for_write(path: Path):
    try:
        return open(path, "w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_raw_csv(records, path) -> Path:
    path = Path(path)
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RAW_COLUMNS)
        for r in sorted(records, key=RunRecord.sort_key):
            w.writerow((r.scenario, r.d, r.n, r.method, r.instance, r.replicate, _fmt(r.nll), r.seed))
    return path


def read_raw_csv(path) -> list[RunRecord]:
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RAW_COLUMNS:
            raise ValueError(f"{path}: expected columns {','.join(RAW_COLUMNS)}")
        out = []
        for row in reader:
            nll = float(row["nll"])
            out.append(RunRecord(
                row["scenario"], int(row["d"]), int(row["n"]), row["method"], int(row["instance"]),
                int(row["replicate"]), nll, int(row["seed"]), None if math.isfinite(nll) else "failed",
            ))
    return out


def report_from_csv(path) -> EvalReport:
    return EvalReport(read_raw_csv(path))


def emit_report(report: EvalReport, directory) -> dict[str, Path]:
    """Write the raw CSV, markdown summary, plot data and provenance files."""
    out = Path(directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc.strerror or exc}") from exc
    cells = aggregate(report.records)
    paths = {"raw": write_raw_csv(report.records, out / RAW_CSV)}

    paths["summary"] = out / SUMMARY_MD
    with _open_for_write(paths["summary"]) as fh:
        fh.write(markdown_tables(cells))

    paths["plot"] = out / PLOT_CSV
    with _open_for_write(paths["plot"]) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        w.writerows(plot_rows(cells))

    details = [
        {
            "d": r.d, "n": r.n, "method": r.method, "instance": r.instance, "replicate": r.replicate,
            "elapsed_seconds": r.elapsed, "error": r.error, **r.details,
        }
        for r in report.records
        if r.details or r.error or r.elapsed
    ]
    if details:
        paths["details"] = out / DETAILS_JSONL
        with _open_for_write(paths["details"]) as fh:
            fh.writelines(json.dumps(row, sort_keys=True) + "\n" for row in details)
    if report.config or report.metadata or report.targets:
        paths["metadata"] = out / METADATA_JSON
        with _open_for_write(paths["metadata"]) as fh:
            json.dump({"config": report.config, "metadata": report.metadata, "targets": report.targets},
                      fh, indent=2, sort_keys=True)
    return paths
