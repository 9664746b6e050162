"""On-disk trace format, labeled datasets, and chunked replay.

A trace is stored as two files sharing a stem::

    car_0001.csv        index,sensor_a,sensor_b  (one row per sample, LF endings)
    car_0001.meta.json  sample rate, sensor spacing, ADC width, start time, label

A labeled dataset is a directory of traces plus a ``manifest.json``::

    {"traces": [{"path": "car_0001.csv", "label": {...}}, ...]}
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, NamedTuple, Optional

import numpy as np

from .errors import ChannelMismatch, FormatError, IoError, RangeError
from .vehicles import VehicleType, type_interval

CSV_HEADER = "index,sensor_a,sensor_b"
META_SUFFIX = ".meta.json"
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class VehicleLabel:
    vehicle_type: VehicleType
    true_length_m: float
    true_speed_kmh: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "vehicle_type", VehicleType(self.vehicle_type))
        length = float(self.true_length_m)
        if not 0.0 < length <= 20.0:
            raise RangeError(f"true_length_m={length} outside (0, 20]")
        lo, hi = type_interval(self.vehicle_type)
        if not lo < length <= hi:
            raise RangeError(
                f"{self.vehicle_type.value} length {length} outside ({lo}, {hi}]"
            )
        object.__setattr__(self, "true_length_m", length)
        if self.true_speed_kmh is not None:
            speed = float(self.true_speed_kmh)
            if speed <= 0:
                raise RangeError("true_speed_kmh must be positive")
            object.__setattr__(self, "true_speed_kmh", speed)

    def to_dict(self) -> dict:
        out = {
            "vehicle_type": self.vehicle_type.value,
            "true_length_m": self.true_length_m,
        }
        if self.true_speed_kmh is not None:
            out["true_speed_kmh"] = self.true_speed_kmh
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "VehicleLabel":
        try:
            return cls(
                vehicle_type=VehicleType(d["vehicle_type"]),
                true_length_m=d["true_length_m"],
                true_speed_kmh=d.get("true_speed_kmh"),
            )
        except (KeyError, ValueError, TypeError) as exc:
            if isinstance(exc, RangeError):
                raise
            raise FormatError(f"bad label {d!r}: {exc}") from exc


def _frozen_counts(values) -> np.ndarray:
    arr = np.array(values, dtype=np.int64).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Trace:
    """Raw two-sensor ADC capture. Arrays are read-only."""

    sample_rate_hz: float
    sensor_distance_m: float
    samples_a: np.ndarray
    samples_b: np.ndarray
    adc_bits: int = 16
    start_time_ms: int = 0
    label: Optional[VehicleLabel] = None

    def __post_init__(self):
        if not self.sample_rate_hz > 0:
            raise RangeError("sample_rate_hz must be positive")
        if not self.sensor_distance_m > 0:
            raise RangeError("sensor_distance_m must be positive")
        if not 1 <= int(self.adc_bits) <= 32:
            raise RangeError(f"unsupported adc_bits={self.adc_bits}")
        a = _frozen_counts(self.samples_a)
        b = _frozen_counts(self.samples_b)
        if a.shape != b.shape:
            raise ChannelMismatch(f"sensor_a has {a.size} samples, sensor_b {b.size}")
        top = 1 << int(self.adc_bits)
        for name, arr in (("sensor_a", a), ("sensor_b", b)):
            if arr.size and (arr.min() < 0 or arr.max() >= top):
                raise RangeError(f"{name} count outside [0, {top})")
        object.__setattr__(self, "samples_a", a)
        object.__setattr__(self, "samples_b", b)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))
        object.__setattr__(self, "sensor_distance_m", float(self.sensor_distance_m))
        object.__setattr__(self, "adc_bits", int(self.adc_bits))
        object.__setattr__(self, "start_time_ms", int(self.start_time_ms))

    def __len__(self):
        return int(self.samples_a.size)

    @property
    def midpoint(self) -> int:
        return 1 << (self.adc_bits - 1)

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            self.sample_rate_hz == other.sample_rate_hz
            and self.sensor_distance_m == other.sensor_distance_m
            and self.adc_bits == other.adc_bits
            and self.start_time_ms == other.start_time_ms
            and self.label == other.label
            and np.array_equal(self.samples_a, other.samples_a)
            and np.array_equal(self.samples_b, other.samples_b)
        )

    __hash__ = None

    def metadata(self) -> dict:
        meta = {
            "sample_rate_hz": self.sample_rate_hz,
            "sensor_distance_m": self.sensor_distance_m,
            "adc_bits": self.adc_bits,
            "start_time_ms": self.start_time_ms,
        }
        if self.label is not None:
            meta["label"] = self.label.to_dict()
        return meta


def meta_path_for(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + META_SUFFIX)


def _parse_meta(meta_file: Path) -> dict:
    try:
        meta = json.loads(meta_file.read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"missing metadata sidecar {meta_file}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{meta_file}: {exc}") from exc
    if not isinstance(meta, dict):
        raise FormatError(f"{meta_file}: metadata must be a JSON object")
    for key in ("sample_rate_hz", "sensor_distance_m"):
        if key not in meta:
            raise FormatError(f"{meta_file}: missing key {key!r}")
    return meta


def read_trace(path) -> Trace:
    """Load a trace CSV and its JSON sidecar.

    Raises FormatError for a bad header or row, ChannelMismatch when the
    channels differ in length, RangeError for counts outside the ADC range.
    """
    path = Path(path)
    meta = _parse_meta(meta_path_for(path))
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    lines = text.split("\n")
    if not lines or lines[0].strip() != CSV_HEADER:
        raise FormatError(f"{path}: expected header {CSV_HEADER!r}")
    a, b = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) == 2:
            parts.append("")
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
        # An empty channel field means that channel ended early.
        try:
            int(parts[0])
            if parts[1].strip():
                a.append(int(parts[1]))
            if parts[2].strip():
                b.append(int(parts[2]))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: non-integer field") from exc
    if len(a) != len(b):
        raise ChannelMismatch(f"{path}: sensor_a has {len(a)} samples, sensor_b {len(b)}")

    label = meta.get("label")
    try:
        return Trace(
            sample_rate_hz=float(meta["sample_rate_hz"]),
            sensor_distance_m=float(meta["sensor_distance_m"]),
            adc_bits=int(meta.get("adc_bits", 16)),
            start_time_ms=int(meta.get("start_time_ms", 0)),
            samples_a=a,
            samples_b=b,
            label=VehicleLabel.from_dict(label) if label is not None else None,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, RangeError):
            raise
        raise FormatError(f"{path}: {exc}") from exc


def _csv_body(trace: Trace) -> str:
    rows = [CSV_HEADER]
    rows.extend(
        f"{i},{a},{b}"
        for i, (a, b) in enumerate(zip(trace.samples_a.tolist(), trace.samples_b.tolist()))
    )
    return "\n".join(rows) + "\n"


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_trace(trace: Trace, path) -> None:
    path = Path(path)
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(_csv_body(trace))
        with open(meta_path_for(path), "w", newline="\n") as fh:
            fh.write(_dump_json(trace.metadata()))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


class Chunk(NamedTuple):
    start: int
    sensor_a: np.ndarray
    sensor_b: np.ndarray


def iter_chunks(trace: Trace, chunk_len: int) -> Iterator[Chunk]:
    if chunk_len < 1:
        raise ValueError("chunk_len must be >= 1")
    n = len(trace)
    for start in range(0, n, chunk_len):
        stop = min(start + chunk_len, n)
        yield Chunk(start, trace.samples_a[start:stop], trace.samples_b[start:stop])


def replay(trace: Trace, chunk_len: int, sink: Callable[[Chunk], object]) -> None:
    """Push the trace into ``sink`` in aligned, ordered chunks of ``chunk_len``."""
    for chunk in iter_chunks(trace, chunk_len):
        sink(chunk)


def chunk_count(n: int, chunk_len: int) -> int:
    return math.ceil(n / chunk_len)


# ---------------------------------------------------------------- datasets


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: Optional[VehicleLabel] = None
    truth: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"path": self.path}
        if self.label is not None:
            out["label"] = self.label.to_dict()
        if self.truth:
            out["truth"] = self.truth
        return out


def write_manifest(entries, path) -> Path:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    doc = {"traces": [e.to_dict() for e in entries]}
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(_dump_json(doc))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def read_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("traces"), list):
        raise FormatError(f"{path}: manifest needs a 'traces' list")
    entries = []
    for item in doc["traces"]:
        if "path" not in item:
            raise FormatError(f"{path}: manifest entry without 'path'")
        label = item.get("label")
        entries.append(
            ManifestEntry(
                path=item["path"],
                label=VehicleLabel.from_dict(label) if label is not None else None,
                truth=item.get("truth", {}),
            )
        )
    return entries


def load_dataset(manifest_path) -> Iterator[tuple[ManifestEntry, Trace]]:
    """Yield ``(entry, trace)`` for every manifest entry, in manifest order."""
    manifest_path = Path(manifest_path)
    root = manifest_path if manifest_path.is_dir() else manifest_path.parent
    for entry in read_manifest(manifest_path):
        yield entry, read_trace(root / entry.path)
