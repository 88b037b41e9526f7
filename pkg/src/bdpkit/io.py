"""CSV and JSON input/output with atomic writes."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from importlib import resources

import numpy as np

from .estimate.data import EstimationResult, ObservedData

SCHEMA = 1
OBS_COLUMNS = ("path_id", "time", "count")


class DataError(ValueError):
    pass


def atomic_write(path, text: str):
    """Write `text` to a temporary file in the target directory, then rename."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dataset_path(name: str) -> str:
    """Filesystem path of a shipped dataset (``"robin"`` or ``"crane"``)."""
    ref = resources.files("bdpkit") / "data" / f"{name}.csv"
    if not ref.is_file():
        raise DataError(f"no shipped dataset named {name!r}")
    return os.fspath(ref)


def load_dataset(name: str, scheme: str = "discrete") -> ObservedData:
    return read_observations(dataset_path(name), scheme)


def read_observations(path, scheme: str = "discrete") -> ObservedData:
    """Read a ``path_id,time,count`` CSV into :class:`ObservedData`.

    Paths keep the order in which their ids first appear; rows of one path
    must have strictly increasing times. Errors name the offending line.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in OBS_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        paths: dict = {}
        for line, row in enumerate(reader, start=2):
            try:
                pid = row["path_id"].strip()
                t = float(row["time"])
                z = float(row["count"])
            except (TypeError, ValueError, AttributeError):
                raise DataError(f"{path}, line {line}: cannot parse row {row}") from None
            if not (math.isfinite(t) and math.isfinite(z)):
                raise DataError(f"{path}, line {line}: non-finite value")
            if z < 0:
                raise DataError(f"{path}, line {line}: negative count {z:g}")
            ts, zs = paths.setdefault(pid, ([], []))
            if ts and t == ts[-1]:
                raise DataError(f"{path}, line {line}: duplicate time {t:g} for path {pid}")
            if ts and t < ts[-1]:
                raise DataError(f"{path}, line {line}: times of path {pid} are not increasing")
            ts.append(t)
            zs.append(z)
    if not paths:
        raise DataError(f"{path}: no observations")
    t_data = [v[0] for v in paths.values()]
    p_data = [v[1] for v in paths.values()]
    return ObservedData(t_data, p_data, scheme)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return obj


def result_to_json(result: EstimationResult) -> str:
    payload = {"schema": SCHEMA, **_jsonable(result.to_dict())}
    # repr of a Python float is the shortest string that round-trips exactly
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_result(result: EstimationResult, path):
    atomic_write(path, result_to_json(result))


def read_result(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("schema") != SCHEMA:
        raise DataError(f"{path}: unsupported result schema {payload.get('schema')!r}")
    return payload


def _fmt(x) -> str:
    return repr(float(x))


def bands_to_csv(bands) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time"] + [f"p{q:g}" for q in bands.percentiles])
    for t, row in zip(bands.times, bands.values):
        w.writerow([_fmt(t)] + [_fmt(v) for v in row])
    return buf.getvalue()


def write_bands(bands, path):
    atomic_write(path, bands_to_csv(bands))


def write_rows(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    atomic_write(path, buf.getvalue())
