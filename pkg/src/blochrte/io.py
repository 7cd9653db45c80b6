"""Serialization of tables, reports, metadata and binary field sidecars.

Report files are deterministic functions of the config: floats use repr,
keys are sorted and no timestamps appear. Wall-clock data goes to
``metadata.json`` only.
"""

from __future__ import annotations

import json
import platform
import time
from pathlib import Path

import numpy as np

FIELD_LAYOUT = (
    "little-endian float64, interleaved (re, im); for each band group j in order, "
    "index order x -> q -> matrix row -> matrix column; snapshots concatenated in time order"
)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def write_json(path: Path, payload: dict, config_hash: str) -> Path:
    doc = {"config_hash": config_hash, **_plain(payload)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def write_tsv(path: Path, header: list[str], rows, config_hash: str) -> Path:
    with open(path, "w") as fh:
        fh.write(f"# config_hash {config_hash}\n")
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_cell(v) for v in row) + "\n")
    return path


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def read_tsv(path: Path) -> tuple[list[str], np.ndarray]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    header = lines[0].split("\t")
    data = np.array([[float(x) for x in ln.split("\t")] for ln in lines[1:]])
    return header, data


def write_metadata(out: Path, command: str, config_hash: str, extra: dict | None = None) -> Path:
    meta = {
        "command": command,
        "config_hash": config_hash,
        "created_unix": time.time(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    if extra:
        meta.update(_plain(extra))
    p = out / "metadata.json"
    p.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return p


def field_bytes(blocks: list[np.ndarray]) -> bytes:
    """Sidecar encoding of one snapshot (see FIELD_LAYOUT)."""
    parts = []
    for b in blocks:
        arr = np.ascontiguousarray(b, dtype="<c16")
        parts.append(arr.view("<f8").tobytes())
    return b"".join(parts)


def read_fields(path: Path, layout: list[int], n_x: int, n_q: int) -> list[list[np.ndarray]]:
    """Inverse of the sidecar encoding; returns one block list per snapshot."""
    raw = np.fromfile(path, dtype="<f8")
    per = sum(n_x * n_q * r * r * 2 for r in layout)
    if raw.size % per:
        raise ValueError("sidecar size does not match the declared layout")
    snaps = []
    for s in range(raw.size // per):
        chunk = raw[s * per : (s + 1) * per]
        blocks, pos = [], 0
        for r in layout:
            n = n_x * n_q * r * r * 2
            blocks.append(chunk[pos : pos + n].view("<c16").reshape(n_x, n_q, r, r).copy())
            pos += n
        snaps.append(blocks)
    return snaps
