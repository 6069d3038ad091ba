"""Metric CSV files and the aligned text report."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

BENCHMARK_ORDER = ("heat", "swe", "pollution")
BENCHMARK_TITLES = {"heat": "Heat", "swe": "SWE", "pollution": "Pollution"}
METHOD_ORDER = ("fieldformer", "siren", "fourier", "nearest", "oracle")
METHOD_TITLES = {"fieldformer": "FieldFormer", "siren": "SIREN", "fourier": "Fourier-MLP",
                 "nearest": "Nearest-sensor", "oracle": "Oracle-interp"}

# (key, label, kind) with kind selecting the multiplier
ERROR_ROWS = (
    ("test_rmse", "Test RMSE (bootstrap)", "rmse"),
    ("test_mae", "Test MAE (bootstrap)", "mae"),
    ("full_rmse", "Full-field RMSE", "rmse"),
    ("full_mae", "Full-field MAE", "mae"),
)
PHYSICS_ROWS = (
    ("phys_rmse_test", "Rel. Physics RMSE (test)", None),
    ("phys_mae_test", "Rel. Physics MAE (test)", None),
    ("phys_rmse_full", "Rel. Physics RMSE (full)", None),
    ("phys_mae_full", "Rel. Physics MAE (full)", None),
)
MULTIPLIERS = {
    "heat": {"rmse": 1e-2, "mae": 1e-3},
    "swe": {"rmse": 1e-3, "mae": 1e-4},
    "pollution": {"rmse": 1e-2, "mae": 1e-3},
}
HAS_PHYSICS = {"heat": True, "swe": True, "pollution": False}

# Published FieldFormer values at full scale, shown for orientation only.
REFERENCE_VALUES = {
    "heat": {"test_rmse": 1.133e-2, "test_mae": 7.715e-3, "full_rmse": 1.133e-2, "full_mae": 7.714e-3},
    "swe": {"test_rmse": 1.113e-3, "test_mae": 8.151e-4, "full_rmse": 1.112e-3, "full_mae": 8.150e-4},
    "pollution": {"test_rmse": 1.310e-2, "test_mae": 4.808e-3, "full_rmse": 1.319e-2, "full_mae": 4.822e-3},
}
REFERENCE_NOTE = "published reference, not desk-reproduced"

CSV_FIELDS = ["method", "benchmark", "metric", "value", "std", "multiplier"]


class ReportError(ValueError):
    pass


@dataclass
class MetricSet:
    method: str
    benchmark: str
    values: dict[str, float | None] = field(default_factory=dict)
    stds: dict[str, float] = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = []
        for key, _, kind in ERROR_ROWS + PHYSICS_ROWS:
            if key not in self.values:
                continue
            mult = MULTIPLIERS[self.benchmark][kind] if kind else 1.0
            v = self.values[key]
            out.append({"method": self.method, "benchmark": self.benchmark, "metric": key,
                        "value": "undefined" if v is None else repr(float(v)),
                        "std": repr(float(self.stds[key])) if key in self.stds else "",
                        "multiplier": repr(mult)})
        return out


def write_metrics_csv(sets: list[MetricSet], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for s in sets:
            for row in s.rows():
                w.writerow(row)


def read_metrics(paths) -> list[MetricSet]:
    """Merge metric CSV files; the same (method, benchmark, metric) with different values is an error."""
    seen: dict[tuple[str, str, str], tuple[str, str, str]] = {}
    sets: dict[tuple[str, str], MetricSet] = {}
    for p in paths:
        with Path(p).open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or set(CSV_FIELDS) - set(reader.fieldnames):
                raise ReportError(f"{p}: not a metrics file (expected columns {', '.join(CSV_FIELDS)})")
            for row in reader:
                bench, method, metric = row["benchmark"], row["method"], row["metric"]
                if bench not in BENCHMARK_ORDER:
                    raise ReportError(f"{p}: unknown benchmark id {bench!r}")
                key = (method, bench, metric)
                payload = (row["value"], row["std"], str(p))
                if key in seen and seen[key][:2] != payload[:2]:
                    raise ReportError(f"conflicting values for {method}/{bench}/{metric}: "
                                      f"{seen[key][2]} vs {p}")
                seen[key] = payload
                ms = sets.setdefault((method, bench), MetricSet(method, bench))
                ms.values[metric] = None if row["value"] == "undefined" else float(row["value"])
                if row["std"]:
                    ms.stds[metric] = float(row["std"])
    return list(sets.values())


def _method_key(m: str):
    return (METHOD_ORDER.index(m) if m in METHOD_ORDER else len(METHOD_ORDER), m)


def _exp_label(mult: float) -> str:
    return f"(x1e{int(round(math.log10(mult)))})"


def _fmt(v: float | None, std: float | None, mult: float) -> str:
    if v is None:
        return "undefined"
    s = f"{v / mult:.4g}"
    if std is not None:
        s += f" +- {std / mult:.3g}"
    return s


def render_report(sets: list[MetricSet]) -> str:
    """Aligned text table: one part per benchmark, one column per method."""
    if not sets:
        raise ReportError("no metrics to report")
    methods = sorted({s.method for s in sets}, key=_method_key)
    by = {(s.method, s.benchmark): s for s in sets}
    benches = [b for b in BENCHMARK_ORDER if any(s.benchmark == b for s in sets)]
    lines_data: list[list[str]] = []
    for b in benches:
        rows = list(ERROR_ROWS) + (list(PHYSICS_ROWS) if HAS_PHYSICS[b] else [])
        lines_data.append(["---"])
        first = True
        for key, label, kind in rows:
            mult = MULTIPLIERS[b][kind] if kind else 1.0
            name = f"{label} {_exp_label(mult)}" if kind else label
            cells = [BENCHMARK_TITLES[b] if first else "", name]
            first = False
            for m in methods:
                ms = by.get((m, b))
                if ms is None or key not in ms.values:
                    cells.append("-")
                else:
                    cells.append(_fmt(ms.values[key], ms.stds.get(key), mult))
            lines_data.append(cells)
    header = ["Dataset", "Metric"] + [METHOD_TITLES.get(m, m) for m in methods]
    widths = [len(h) for h in header]
    for cells in lines_data:
        if cells == ["---"]:
            continue
        widths = [max(w, len(c)) for w, c in zip(widths, cells)]
    rule = "  ".join("-" * w for w in widths)
    out = io.StringIO()
    out.write("Reconstruction and physics-consistency metrics (multipliers factored out)\n")
    out.write("Bootstrap resamples evaluation points with replacement.\n\n")
    out.write("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip() + "\n")
    for cells in lines_data:
        if cells == ["---"]:
            out.write(rule + "\n")
            continue
        out.write("  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip() + "\n")
    out.write(rule + "\n\n")
    out.write(f"Reference values for FieldFormer at full scale ({REFERENCE_NOTE}):\n")
    for b in benches:
        ref = REFERENCE_VALUES[b]
        parts = []
        for key, label, kind in ERROR_ROWS:
            mult = MULTIPLIERS[b][kind]
            parts.append(f"{label} {ref[key] / mult:.4g} {_exp_label(mult)}")
        out.write(f"  {BENCHMARK_TITLES[b]}: " + "; ".join(parts) + "\n")
    return out.getvalue()


def write_report(sets: list[MetricSet], path: str | Path) -> str:
    text = render_report(sets)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return text
