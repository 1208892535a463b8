"""CSV writing with a deterministic body and a metadata sidecar.

Metric CSVs hold only quantities that are a pure function of (config, seed),
so reruns produce identical bytes. Timings, host details and timestamps go
to ``<name>.meta.json`` or to a separate ``*_costs.csv``.
"""
from __future__ import annotations

import csv
import datetime as _dt
import json
import platform
import sys
from pathlib import Path

import numpy as np


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, rows: list[dict], columns: list[str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = list(rows[0]) if rows else []
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_meta(path, config: dict, extra: dict | None = None) -> Path:
    import torch  # reported only

    meta = dict(
        written=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        python=sys.version.split()[0], numpy=np.__version__, torch=torch.__version__,
        platform=platform.platform(), config=config, **(extra or {}),
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_fmt))
    return path
