"""Plot-ready exports of a finished run.

Floats are written with ``repr`` (shortest round-trip form), so files carry
full precision and are byte-identical for identical logs. Wall-clock time
is kept out of the deterministic files and goes to ``run_info.json``.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Optional, Union

from .harness import SessionLog, Trace

TRACE_FILE = "trace.csv"
EPISODES_FILE = "episodes.csv"
METRICS_FILE = "metrics.json"
GP_FILE = "gp_final.json"
RUN_INFO_FILE = "run_info.json"

EPISODE_COLUMNS = ("index", "k_theta", "k_phi", "objective", "e_theta", "e_phi", "f_mag", "session")


def _clean(x: Any) -> Any:
    """Drop non-finite floats and None entries from nested dicts; lists keep their shape."""
    if isinstance(x, dict):
        out = {}
        for k, v in x.items():
            if v is None or (isinstance(v, float) and not math.isfinite(v)):
                continue
            v = _clean(v)
            if isinstance(v, dict) and not v:
                continue
            out[str(k)] = v
        return out
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, bool) or x is None:
        return x
    if isinstance(x, int):
        return int(x)
    if isinstance(x, float):
        return float(x)
    if hasattr(x, "item"):  # numpy scalar
        return _clean(x.item())
    return x


def metrics_document(log: SessionLog, seed: Optional[int] = None) -> dict:
    doc: dict = {}
    if seed is not None:
        doc["seed"] = int(seed)
    sessions = {name: m.to_dict() for name, m in log.metrics.items()}
    if sessions:
        doc["sessions"] = sessions
    if log.convergence:
        doc["convergence"] = log.convergence
    return _clean(doc)


def _open(path: Path, mode: str = "w"):
    try:
        return open(path, mode, newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _write_json(path: Path, doc: Any) -> None:
    text = json.dumps(doc, indent=2, allow_nan=False) + "\n"
    with _open(path) as fh:
        fh.write(text)


def write_trace(trace: Trace, path: Path) -> None:
    cols = [getattr(trace, c) for c in Trace.COLUMNS]
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(Trace.COLUMNS)
        w.writerows(zip(*cols))


def write_episodes(log: SessionLog, path: Path) -> None:
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPISODE_COLUMNS)
        for rec in log.episodes:
            r = rec.result
            w.writerow(
                (rec.index, r.gains.k_theta, r.gains.k_phi, r.objective, r.mean_e_theta, r.mean_e_phi, r.mean_f_mag, rec.session.value)
            )


def export(log: SessionLog, out_dir: Union[str, Path], seed: Optional[int] = None) -> list[Path]:
    """Write the run's files into ``out_dir``; returns the paths written."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror or exc}") from exc
    written = []
    if len(log.trace):
        write_trace(log.trace, out / TRACE_FILE)
        written.append(out / TRACE_FILE)
    write_episodes(log, out / EPISODES_FILE)
    written.append(out / EPISODES_FILE)
    _write_json(out / METRICS_FILE, metrics_document(log, seed))
    written.append(out / METRICS_FILE)
    if log.gp is not None:
        _write_json(out / GP_FILE, _clean(log.gp))
        written.append(out / GP_FILE)
    _write_json(out / RUN_INFO_FILE, {"wall_time_s": log.wall_time})
    written.append(out / RUN_INFO_FILE)
    return written
