"""Stage artifacts on disk: deterministic writers, hash sidecars, staleness checks.

Every artifact ``x`` gets a sidecar ``x.meta.json`` recording the producing
stage, the package version, the schema, the row count, the artifact's own
sha256 and the sha256 of every input it was computed from. A stage that reads
an artifact re-hashes it and its recorded inputs; any mismatch is stale.
"""
from __future__ import annotations

import hashlib
import json
import os
from typing import Any, Mapping

import numpy as np
import pandas as pd

from . import __version__
from .errors import KnowflowError, StaleArtifactError

META_SUFFIX = ".meta.json"
FAILED_MARKER = "FAILED"
MANIFEST = "manifest.json"
# columns always read back as text so codes like "007" survive
TEXT_COLUMNS = ("firm_id", "worker_id", "industry", "occupation", "region", "region_year",
                "entity_a", "entity_b", "source", "target", "kind", "model", "term", "stars",
                "statistic", "covariate", "entity", "parent_code")


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def dumps(obj: Any) -> str:
    """Canonical JSON: sorted keys, no NaN, trailing newline."""
    return json.dumps(_jsonable(obj), indent=1, sort_keys=True, allow_nan=False) + "\n"


def _jsonable(v):
    if isinstance(v, Mapping):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(v) if np.isfinite(v) else None
    return v


def _rel(path: str, root: str) -> str:
    return os.path.relpath(os.path.abspath(path), os.path.abspath(root)).replace(os.sep, "/")


def meta_path(path: str | os.PathLike) -> str:
    return os.fspath(path) + META_SUFFIX


def _write_atomic(path: str, data: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_meta(path: str, root: str, stage: str, schema: dict, rows: int | None,
                inputs: Mapping[str, str], extra: Mapping | None) -> str:
    digest = sha256_file(path)
    meta = {
        "artifact": _rel(path, root),
        "stage": stage,
        "version": __version__,
        "schema": schema,
        "rows": rows,
        "sha256": digest,
        "inputs": {_rel(p, root): sha256_file(p) for p in sorted(inputs.values())},
        "extra": dict(extra or {}),
    }
    _write_atomic(meta_path(path), dumps(meta))
    return digest


def table_csv(df: pd.DataFrame) -> str:
    """CSV text with ``\\n`` line ends; floats as shortest round-trip repr."""
    return df.to_csv(index=False, lineterminator="\n")


def write_table(path: str, df: pd.DataFrame, *, root: str, stage: str,
                inputs: Mapping[str, str] = {}, extra: Mapping | None = None) -> str:
    _write_atomic(path, table_csv(df))
    schema = {"format": "csv", "columns": [{"name": str(c), "dtype": str(t)} for c, t in df.dtypes.items()]}
    return write_meta(path, root, stage, schema, len(df), inputs, extra)


def write_json(path: str, obj: Any, *, root: str, stage: str,
               inputs: Mapping[str, str] = {}, extra: Mapping | None = None) -> str:
    _write_atomic(path, dumps(obj))
    return write_meta(path, root, stage, {"format": "json"}, None, inputs, extra)


def write_text(path: str, text: str, *, root: str, stage: str,
               inputs: Mapping[str, str] = {}, extra: Mapping | None = None) -> str:
    _write_atomic(path, text)
    return write_meta(path, root, stage, {"format": "text"}, None, inputs, extra)


def read_meta(path: str) -> dict:
    mp = meta_path(path)
    if not os.path.exists(path) or not os.path.exists(mp):
        raise KnowflowError(f"missing upstream artifact {path}; run the producing stage first")
    with open(mp, encoding="utf-8") as fh:
        return json.load(fh)


def check_fresh(path: str, root: str, force: bool = False) -> dict:
    """Verify an artifact and its recorded inputs against their hashes; returns the metadata.

    Raises :class:`StaleArtifactError` on any mismatch unless ``force``.
    """
    meta = read_meta(path)
    problems = []
    if sha256_file(path) != meta["sha256"]:
        problems.append(f"{_rel(path, root)} modified after it was written")
    for rel, digest in meta["inputs"].items():
        src = os.path.normpath(os.path.join(root, rel))
        if not os.path.exists(src):
            problems.append(f"input {rel} missing")
        elif sha256_file(src) != digest:
            problems.append(f"input {rel} changed since {_rel(path, root)} was produced")
    if problems and not force:
        raise StaleArtifactError("; ".join(problems))
    return meta


def read_table(path: str, root: str, force: bool = False) -> pd.DataFrame:
    meta = check_fresh(path, root, force)
    cols = [c["name"] for c in meta["schema"].get("columns", [])]
    dtype = {c: str for c in cols if c in TEXT_COLUMNS}
    return pd.read_csv(path, dtype=dtype, keep_default_na=False, na_values=[""],
                       float_precision="round_trip")


def read_json(path: str, root: str, force: bool = False) -> Any:
    check_fresh(path, root, force)
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def mark_failed(root: str, stage: str, error: BaseException) -> str:
    code = getattr(error, "code", "internal_error")
    path = os.path.join(root, FAILED_MARKER)
    _write_atomic(path, dumps({"stage": stage, "code": code, "message": str(error)}))
    return path


def clear_failed(root: str) -> None:
    path = os.path.join(root, FAILED_MARKER)
    if os.path.exists(path):
        os.remove(path)


def artifact_hashes(root: str) -> dict[str, str]:
    """sha256 of every artifact under ``root`` (sidecars, marker and manifest excluded)."""
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            if name.endswith(META_SUFFIX) or name in (MANIFEST, FAILED_MARKER) or name.endswith(".tmp"):
                continue
            p = os.path.join(dirpath, name)
            out[_rel(p, root)] = sha256_file(p)
    return dict(sorted(out.items()))
