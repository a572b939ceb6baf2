"""Per-step diagnostics records, CSV emission and the invariant report."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

QFLOW_COLUMNS = {
    "volume": "volume",
    "mean_curvature": "qbar",
    "x_t": "x_t",
}
TFLOW_COLUMNS = {
    "volume": "area",
    "mean_curvature": "tbar",
    "x_t": "x_T",
}

EXIT_OK = 0
EXIT_BUDGET = 2
EXIT_DIVERGED = 3
EXIT_CONFIG = 4
EXIT_INVARIANT = 5
EXIT_NO_DATA = 6


@dataclass(frozen=True)
class DiagnosticsRecord:
    step: int
    t: float
    dt: float
    energy: float
    volume: float
    mean_curvature: float
    ratio: float
    x_t: float
    kappa: float
    cg_iters: int
    residual: float
    max_u: float
    min_u: float
    ubar_g0: float
    h2_norm: float

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise ValueError(f"diagnostics field {f.name} is not finite: {value}")
        if self.x_t < 0:
            raise ValueError("x_t must be nonnegative")
        if self.volume <= 0:
            raise ValueError("volume must be positive")


FIELD_NAMES = tuple(f.name for f in fields(DiagnosticsRecord))


def column_names(flow):
    rename = TFLOW_COLUMNS if flow == "tflow" else QFLOW_COLUMNS
    return [rename.get(f.name, f.name) for f in fields(DiagnosticsRecord)]


def _format(value):
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


class CsvSink:
    """Appends one CSV row per record; the header is written once and every
    row is flushed immediately."""

    def __init__(self, path, flow="qflow"):
        self.path = Path(path)
        self.flow = flow
        self.rows = 0
        self._fh = open(self.path, "w", newline="", encoding="ascii")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(column_names(flow))
        self._fh.flush()

    def emit(self, record):
        try:
            self._writer.writerow([_format(v) for v in asdict(record).values()])
            self._fh.flush()
        except OSError as exc:
            raise OSError(f"diagnostics write failed after {self.rows} rows ({self.path}): {exc}") from exc
        self.rows += 1

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def emit_record(record, sink):
    sink.emit(record)


class ReportError(ValueError):
    pass


def read_diagnostics(path):
    """Read a diagnostics CSV into (flow, rows); rows are dicts keyed by
    the DiagnosticsRecord field names, with float values."""
    with open(path, newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ReportError(f"{path}: empty file, no header") from None
        if header == column_names("qflow"):
            flow = "qflow"
        elif header == column_names("tflow"):
            flow = "tflow"
        else:
            raise ReportError(f"{path}: unrecognized header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ReportError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                values = [float(x) for x in row]
            except ValueError:
                raise ReportError(f"{path}:{lineno}: non-numeric field") from None
            rows.append(dict(zip(FIELD_NAMES, values)))
    return flow, rows


@dataclass(frozen=True)
class InvariantCheck:
    name: str
    measured: float
    tolerance: float

    @property
    def passed(self):
        return self.measured <= self.tolerance


def invariant_checks(rows, x_tol=1e-8, volume_tol=1e-6, mean_tol=1e-6, kappa_tol=1e-6, energy_slack=1e-10):
    """Evaluate the monitored invariants over a completed run."""
    v0 = rows[0]["volume"]
    q0 = rows[0]["mean_curvature"]
    k0 = rows[0]["kappa"]
    u0 = rows[0]["ubar_g0"]
    checks = [
        InvariantCheck("volume conservation (relative drift)",
                       max(abs(r["volume"] - v0) for r in rows) / v0, volume_tol),
        InvariantCheck("mean curvature conservation",
                       max(abs(r["mean_curvature"] - q0) for r in rows) / (1 + abs(q0)), mean_tol),
        InvariantCheck("kappa invariance",
                       max(abs(r["kappa"] - k0) for r in rows) / (1 + abs(k0)), kappa_tol),
    ]
    worst = 0.0
    for a, b in zip(rows, rows[1:]):
        excess = (b["energy"] - a["energy"]) / (1 + abs(a["energy"]))
        worst = max(worst, excess)
    checks.append(InvariantCheck("energy monotonicity (max relative increase)", worst, energy_slack))
    checks.append(InvariantCheck("x(t) decay (final value)", rows[-1]["x_t"], x_tol))
    checks.append(InvariantCheck("mean of u bounded (drift of g0-mean)",
                                 max(abs(r["ubar_g0"] - u0) for r in rows), 10.0))
    return checks


def invariant_report(path, **tolerances):
    """Return (text, exit code) for a diagnostics CSV."""
    flow, rows = read_diagnostics(path)
    if not rows:
        return f"{path}: no data\n", EXIT_NO_DATA
    checks = invariant_checks(rows, **tolerances)
    lines = [f"invariant report for {path} ({flow}, {len(rows)} rows)"]
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        lines.append(f"{status}  {c.name}: measured {c.measured:.3e}, tolerance {c.tolerance:.1e}")
    code = EXIT_OK if all(c.passed for c in checks) else EXIT_INVARIANT
    return "\n".join(lines) + "\n", code
