"""MCWB binary containers and JSON compression reports.

MCWB layout (all integers little-endian)::

    b"MCWB" | u32 version (=1) | u32 entry count | entries...
    entry:  u32 name length | UTF-8 name | u8 kind (0 dense, 1 sparse)
            | u8 ndim | u64 dims... | payload
    dense payload:  f64 values, row-major (last dim fastest)
    sparse payload: u64 nnz | nnz x (u64 row, u64 col, f64 value), row-major order

Naming convention: ``<layer>.W`` weights, ``<layer>.X`` / ``<layer>.Y``
calibration pairs, ``<layer>.U`` / ``.Vc`` / ``.Vi`` / ``.S`` decomposition
factors.
"""
from __future__ import annotations

import json
import math
import struct
from pathlib import Path
from typing import Iterable, Mapping, Union

import jsonschema
import numpy as np

from . import __version__
from .errors import (
    BadMagicError,
    ContainerError,
    DuplicateNameError,
    ReportSchemaError,
    TrailingDataError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from .layermodel import LayerTensor
from .matrixcore import SparseMatrix
from .metrics import CompressionReport, LayerRow, Totals, format_rate
from .solver import Decomposition, GroupDecomposition

MAGIC = b"MCWB"
VERSION = 1
DENSE = 0
SPARSE = 1

Entry = Union[np.ndarray, SparseMatrix]


def _items(entries) -> list[tuple[str, Entry]]:
    items = list(entries.items()) if isinstance(entries, Mapping) else list(entries)
    seen = set()
    for name, _ in items:
        if name in seen:
            raise DuplicateNameError(f"duplicate entry name {name!r}")
        seen.add(name)
    return items


def write_container(entries: Union[Mapping[str, Entry], Iterable[tuple[str, Entry]]]) -> bytes:
    items = _items(entries)
    out = [MAGIC, struct.pack("<II", VERSION, len(items))]
    for name, value in items:
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        if isinstance(value, SparseMatrix):
            out.append(struct.pack("<BB", SPARSE, 2))
            out.append(struct.pack("<QQ", *value.shape))
            out.append(struct.pack("<Q", value.nnz))
            rec = np.empty(value.nnz, dtype=[("r", "<u8"), ("c", "<u8"), ("v", "<f8")])
            rec["r"], rec["c"], rec["v"] = value.row, value.col, value.data
            out.append(rec.tobytes())
        else:
            arr = np.asarray(value, dtype=np.float64)
            if arr.ndim > 255:
                raise ContainerError(f"{name}: too many dimensions")
            out.append(struct.pack("<BB", DENSE, arr.ndim))
            out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int, what: str) -> memoryview:
        if self.pos + n > len(self.data):
            raise TruncatedPayloadError(
                f"truncated container: need {n} bytes for {what} at offset {self.pos}, "
                f"{len(self.data) - self.pos} left"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_container(data: bytes) -> dict[str, Entry]:
    r = _Reader(data)
    if len(data) < 4 or bytes(r.take(4, "magic")) != MAGIC:
        raise BadMagicError("not an MCWB container (bad magic)")
    version, count = r.unpack("<II", "header")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported MCWB version {version}")
    entries: dict[str, Entry] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I", "name length")
        try:
            name = bytes(r.take(name_len, "name")).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ContainerError(f"entry name is not UTF-8: {exc}") from None
        if name in entries:
            raise DuplicateNameError(f"duplicate entry name {name!r}")
        kind, ndim = r.unpack("<BB", "entry header")
        dims = r.unpack(f"<{ndim}Q", "dims") if ndim else ()
        if kind == DENSE:
            size = math.prod(dims)
            buf = r.take(8 * size, f"{name} payload")
            entries[name] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(dims)
        elif kind == SPARSE:
            if ndim != 2:
                raise ContainerError(f"{name}: sparse entries must be 2-D")
            (nnz,) = r.unpack("<Q", f"{name} nnz")
            if nnz > dims[0] * dims[1]:
                raise ContainerError(f"{name}: nnz {nnz} exceeds matrix size {dims}")
            buf = r.take(24 * nnz, f"{name} triplets")
            rec = np.frombuffer(buf, dtype=[("r", "<u8"), ("c", "<u8"), ("v", "<f8")])
            try:
                entries[name] = SparseMatrix(
                    dims, rec["r"].astype(np.int64), rec["c"].astype(np.int64), rec["v"].astype(np.float64)
                )
            except ValueError as exc:
                raise ContainerError(f"{name}: {exc}") from None
        else:
            raise ContainerError(f"{name}: unknown entry kind {kind}")
    if r.pos != len(data):
        raise TrailingDataError(f"{len(data) - r.pos} unexpected bytes after the last entry")
    return entries


def save_container(path, entries) -> None:
    Path(path).write_bytes(write_container(entries))


def load_container(path) -> dict[str, Entry]:
    return read_container(Path(path).read_bytes())


# ---------------------------------------------------------------- model / factor entries


def _split(name: str) -> tuple[str, str]:
    if "." not in name:
        raise ContainerError(f"entry {name!r} lacks a '.<role>' suffix")
    layer, role = name.rsplit(".", 1)
    return layer, role


def model_entries(layers: Iterable[LayerTensor], calibration=None) -> dict[str, Entry]:
    entries: dict[str, Entry] = {}
    for t in sorted(layers, key=lambda t: t.depth_index):
        entries[f"{t.name}.W"] = t.data
        if calibration and t.name in calibration:
            X, Y = calibration[t.name]
            entries[f"{t.name}.X"] = np.asarray(X, dtype=np.float64)
            entries[f"{t.name}.Y"] = np.asarray(Y, dtype=np.float64)
    return entries


def layers_from_entries(entries: Mapping[str, Entry]):
    """Return ``(layers, calibration)``; depth index follows entry order."""
    layers = []
    calib: dict[str, dict[str, np.ndarray]] = {}
    for name, value in entries.items():
        layer, role = _split(name)
        if role == "W":
            if isinstance(value, SparseMatrix):
                value = value.to_dense()
            layers.append(LayerTensor(layer, value, len(layers) + 1))
        elif role in ("X", "Y"):
            calib.setdefault(layer, {})[role] = np.asarray(value)
    names = {t.name for t in layers}
    calibration = {}
    for layer, pair in calib.items():
        if layer not in names:
            raise ContainerError(f"calibration for unknown layer {layer!r}")
        if set(pair) != {"X", "Y"}:
            raise ContainerError(f"{layer}: calibration needs both .X and .Y")
        calibration[layer] = (pair["X"], pair["Y"])
    return layers, calibration


def decomposition_entries(decompositions: Iterable[GroupDecomposition]) -> dict[str, Entry]:
    entries: dict[str, Entry] = {}
    for gd in decompositions:
        for d in gd.members:
            entries[f"{d.layer}.U"] = d.U
            entries[f"{d.layer}.Vc"] = d.V_common
            entries[f"{d.layer}.Vi"] = d.V_individual
            entries[f"{d.layer}.S"] = d.S
    return entries


def decompositions_from_entries(entries: Mapping[str, Entry]) -> dict[str, Decomposition]:
    parts: dict[str, dict[str, Entry]] = {}
    for name, value in entries.items():
        layer, role = _split(name)
        parts.setdefault(layer, {})[role] = value
    out = {}
    for layer, p in parts.items():
        missing = {"U", "Vc", "Vi", "S"} - set(p)
        if missing:
            raise ContainerError(f"{layer}: missing factors {sorted(missing)}")
        S = p["S"]
        if not isinstance(S, SparseMatrix):
            S = SparseMatrix.from_dense(S)
        out[layer] = Decomposition(layer, p["U"], p["Vc"], p["Vi"], S)
    return out


# ---------------------------------------------------------------- JSON report

_NUM = {"type": "number"}
_OPT_NUM = {"type": ["number", "null"]}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["tool_version", "config", "per_layer", "totals", "objective_trace"],
    "properties": {
        "tool_version": {"type": "string"},
        "config": {"type": "object"},
        "per_layer": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "original_params", "compressed_params", "rate", "recon_error", "output_error"],
                "properties": {
                    "name": {"type": "string"},
                    "original_params": _NUM,
                    "compressed_params": _NUM,
                    "rate": _OPT_NUM,
                    "rate_display": {"type": "string"},
                    "recon_error": _OPT_NUM,
                    "output_error": _OPT_NUM,
                },
            },
        },
        "totals": {
            "type": "object",
            "required": ["original_params", "compressed_params", "rate"],
            "properties": {
                "original_params": _NUM,
                "compressed_params": _NUM,
                "rate": _OPT_NUM,
                "rate_display": {"type": "string"},
            },
        },
        "objective_trace": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["group", "epoch", "value"],
                "properties": {"group": {"type": "integer"}, "epoch": {"type": "integer"}, "value": _NUM},
            },
        },
    },
}


def _encode(obj, indent: int = 0) -> str:
    """JSON text with every float written to 17 significant digits."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError(f"cannot write non-finite number {x} to JSON")
        text = format(x, ".17g")
        if not any(ch in text for ch in ".en"):
            text += ".0"
        return text
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, Mapping):
        if not obj:
            return "{}"
        body = ",\n".join(f"{pad}{json.dumps(str(k))}: {_encode(v, indent + 1)}" for k, v in obj.items())
        return "{\n" + body + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        body = ",\n".join(pad + _encode(v, indent + 1) for v in obj)
        return "[\n" + body + "\n" + end + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def _rate(row):
    """Numeric rate, or None when nothing was compressed (e.g. an empty report)."""
    return row.rate if row.compressed_params > 0 else None


def _rate_text(rate) -> str:
    return "n/a" if rate is None else format_rate(rate)[:-1]


def report_to_dict(r: CompressionReport) -> dict:
    return {
        "tool_version": r.tool_version,
        "config": r.config,
        "per_layer": [
            {
                "name": row.name,
                "original_params": row.original_params,
                "compressed_params": row.compressed_params,
                "rate": _rate(row),
                "rate_display": _rate_text(_rate(row)),
                "recon_error": row.recon_error,
                "output_error": row.output_error,
            }
            for row in r.per_layer
        ],
        "totals": {
            "original_params": r.totals.original_params,
            "compressed_params": r.totals.compressed_params,
            "rate": _rate(r.totals),
            "rate_display": _rate_text(_rate(r.totals)),
        },
        "objective_trace": list(r.objective_trace),
    }


def write_report(r: CompressionReport) -> str:
    return _encode(report_to_dict(r)) + "\n"


def read_report(document: str) -> CompressionReport:
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ReportSchemaError(f"report is not valid JSON: {exc}") from None
    try:
        jsonschema.validate(doc, REPORT_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ReportSchemaError(f"report schema error at {where}: {exc.message}") from None
    rows = [
        LayerRow(
            row["name"],
            row["original_params"],
            row["compressed_params"],
            None if row["recon_error"] is None else float(row["recon_error"]),
            None if row["output_error"] is None else float(row["output_error"]),
        )
        for row in doc["per_layer"]
    ]
    t = doc["totals"]
    return CompressionReport(
        rows,
        Totals(t["original_params"], t["compressed_params"]),
        doc["config"],
        doc["objective_trace"],
        doc["tool_version"],
    )


def save_report(path, r: CompressionReport) -> None:
    Path(path).write_text(write_report(r), encoding="utf-8")


def load_report(path) -> CompressionReport:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ReportSchemaError(f"cannot read report {path}: {exc}") from None
    return read_report(text)
