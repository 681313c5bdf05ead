"""Sensitivity reports and their CSV/JSON serialisations.

Reports are byte-stable: fixed column order, floats written with 17
significant digits, metadata limited to the seed, library versions and the
hash of the effective configuration.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy

from .errors import NumericError

COLUMNS = ("quantity", "t", "value", "gamma_B", "gamma_S0", "gamma_sigma", "gamma_r",
           "bias", "std_error")
_GAMMAS = ("gamma_B", "gamma_S0", "gamma_sigma", "gamma_r")


def config_hash(config: dict) -> str:
    text = json.dumps(config, sort_keys=True, separators=(",", ":"), allow_nan=True)
    return hashlib.sha256(text.encode()).hexdigest()


def versions() -> str:
    from . import __version__
    return f"dirichlet_errors={__version__};numpy={np.__version__};scipy={scipy.__version__}"


def fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


@dataclass
class SensitivityReport:
    command: str
    seed: int
    config: dict
    rows: list = field(default_factory=list)

    def add(self, quantity: str, t=None, value=None, std_error=None, bias=None, **gammas) -> None:
        unknown = set(gammas) - set(_GAMMAS)
        if unknown:
            raise KeyError(f"unknown columns {sorted(unknown)}")
        for k, v in gammas.items():
            # tiny negative values from cancellation are rounding, larger ones are bugs
            if v is not None and np.isfinite(v) and v < 0:
                raise NumericError(f"negative {k} for {quantity}")
        row = {"quantity": quantity, "t": t, "value": value, "bias": bias, "std_error": std_error}
        row.update({g: gammas.get(g) for g in _GAMMAS})
        self.rows.append({c: (row[c] if c == "quantity" or row[c] is None else float(row[c]))
                          for c in COLUMNS})

    @property
    def metadata(self) -> dict:
        return {"command": self.command, "seed": int(self.seed), "versions": versions(),
                "config_sha256": config_hash(self.config)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k, v in self.metadata.items():
            buf.write(f"# {k}={v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([r["quantity"]] + [fmt(r[c]) for c in COLUMNS[1:]])
        return buf.getvalue()

    def to_json(self) -> str:
        rows = [{c: (r[c] if c == "quantity" else (None if r[c] is None else float(fmt(r[c]))))
                 for c in COLUMNS} for r in self.rows]
        return json.dumps({"metadata": self.metadata, "columns": list(COLUMNS), "rows": rows},
                          indent=1, allow_nan=True) + "\n"

    def render(self, fmt_: str = "csv") -> str:
        return self.to_csv() if fmt_ == "csv" else self.to_json()


def read_csv(text: str) -> tuple[dict, list[dict]]:
    """Parse a report written by :meth:`SensitivityReport.to_csv`."""
    meta, body = {}, []
    for line in text.splitlines():
        if line.startswith("# "):
            k, _, v = line[2:].partition("=")
            meta[k] = v
        else:
            body.append(line)
    rows = [{h: (p if h == "quantity" else (float(p) if p else None)) for h, p in r.items()}
            for r in csv.DictReader(body)]
    return meta, rows
