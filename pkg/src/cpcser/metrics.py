"""Concordance correlation coefficient and experiment score aggregation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np


def ccc(x, y) -> float:
    """Concordance correlation coefficient with population (1/n) moments.

    Covariance form: 2*cov(x, y) / (var(x) + var(y) + (mean(x) - mean(y))^2).
    Degenerate inputs: if both vectors are constant and equal the result is 1
    (perfect agreement); any other zero-variance case yields 0 through the
    covariance form, which stays defined where the Pearson form is not.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"ccc: expected equal-length vectors, got {x.shape} and {y.shape}")
    n = x.size
    if n < 2:
        raise ValueError(f"ccc requires at least 2 samples, got {n}")
    mx, my = x.mean(), y.mean()
    vx = np.mean((x - mx) ** 2)
    vy = np.mean((y - my) ** 2)
    cov = np.mean((x - mx) * (y - my))
    denom = vx + vy + (mx - my) ** 2
    if denom == 0.0:
        return 1.0  # both constant and equal
    return float(2.0 * cov / denom)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    sx = x.std()
    sy = y.std()
    if sx == 0.0 or sy == 0.0:
        raise ValueError("pearson undefined for constant input")
    return float(np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy))


@dataclass
class CccReport:
    ccc_act: float
    ccc_val: float
    ccc_dom: float
    n: int

    @property
    def ccc_avg(self) -> float:
        return (self.ccc_act + self.ccc_val + self.ccc_dom) / 3.0

    @classmethod
    def from_arrays(cls, preds, labels) -> "CccReport":
        """preds, labels: [n, 3] arrays ordered activation, valence, dominance."""
        preds = np.asarray(preds, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.float64)
        if preds.shape != labels.shape or preds.shape[1] != 3:
            raise ValueError(
                f"expected matching [n, 3] arrays, got {preds.shape} and {labels.shape}"
            )
        return cls(
            ccc_act=ccc(preds[:, 0], labels[:, 0]),
            ccc_val=ccc(preds[:, 1], labels[:, 1]),
            ccc_dom=ccc(preds[:, 2], labels[:, 2]),
            n=preds.shape[0],
        )

    def as_dict(self):
        return {
            "ccc_avg": self.ccc_avg,
            "ccc_act": self.ccc_act,
            "ccc_val": self.ccc_val,
            "ccc_dom": self.ccc_dom,
            "n": self.n,
        }


METRIC_COLUMNS = ("ccc_avg", "ccc_act", "ccc_val", "ccc_dom")


def aggregate_runs(reports):
    """Mean and sample standard deviation per metric over repeated runs.

    A single report gets std 0 by convention.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("aggregate_runs requires at least one report")
    out = {}
    for col in METRIC_COLUMNS:
        values = np.array([getattr(r, col) for r in reports])
        out[f"{col}_mean"] = float(values.mean())
        out[f"{col}_std"] = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return out


def format_table(rows):
    """Render aggregated rows ({'method': ..., '<col>_mean/std': ...}) as the
    mean +/- std table layout used for reporting."""
    header = ["method"] + [c.replace("ccc_", "CCC_") for c in METRIC_COLUMNS]
    lines = ["\t".join(header)]
    for row in rows:
        cells = [str(row["method"])]
        for col in METRIC_COLUMNS:
            cells.append(f"{row[f'{col}_mean']:.3f} ± {row[f'{col}_std']:.3f}")
        lines.append("\t".join(cells))
    return "\n".join(lines)


def write_report_csv(path_or_file, rows):
    columns = ["method"]
    for col in METRIC_COLUMNS:
        columns += [f"{col}_mean", f"{col}_std"]
    close = False
    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        fh = open(path_or_file, "w", newline="")
        close = True
    else:
        fh = path_or_file
    try:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    finally:
        if close:
            fh.close()


def read_report_csv(path):
    with open(path, newline="") as fh:
        rows = []
        for row in csv.DictReader(fh):
            parsed = {"method": row["method"]}
            for key, value in row.items():
                if key != "method":
                    parsed[key] = float(value)
            rows.append(parsed)
    return rows


def report_csv_string(rows):
    buf = io.StringIO()
    write_report_csv(buf, rows)
    return buf.getvalue()
