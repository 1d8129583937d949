"""Flow CSV ingestion and cross-dataset harmonization.

Public datasets disagree on duration units, column names, label spellings
and protocol encodings. A :class:`DatasetSchema` describes one source
layout; :func:`load_dataset` maps it onto the harmonized
:class:`FlowRecord` stream (seconds, canonical labels, protocol classes)
sorted by timestamp.
"""

from __future__ import annotations

import configparser
import csv
import enum
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import RowError, SchemaError

logger = logging.getLogger(__name__)

FIELDS = (
    "timestamp",
    "src_ip",
    "src_port",
    "dst_ip",
    "dst_port",
    "protocol",
    "duration",
    "src_packets",
    "dst_packets",
    "src_bytes",
    "dst_bytes",
)
CANONICAL_COLUMNS = FIELDS + ("label",)
CANONICAL_CLASSES = ("Benign", "DoS", "DDoS", "Password", "PortScan", "XSS")
BENIGN = "Benign"

# divisor from the declared unit to seconds (division rounds correctly, 1e-3 does not)
DURATION_UNITS = {"s": 1.0, "ms": 1e3, "us": 1e6, "µs": 1e6}

DEFAULT_PROTOCOL_MAP = {"6": "TCP", "tcp": "TCP", "17": "UDP", "udp": "UDP"}

_COUNT_FIELDS = ("duration", "src_packets", "dst_packets", "src_bytes", "dst_bytes")


class Proto(enum.IntEnum):
    TCP = 0
    UDP = 1
    OTHER = 2


@dataclass(frozen=True, slots=True)
class FlowRecord:
    timestamp: float
    src_ip: str
    src_port: int
    dst_ip: str
    dst_port: int
    protocol: Proto
    duration: float
    src_packets: float
    dst_packets: float
    src_bytes: float
    dst_bytes: float
    label: str

    def as_row(self) -> tuple:
        return (
            self.timestamp,
            self.src_ip,
            self.src_port,
            self.dst_ip,
            self.dst_port,
            self.protocol.name,
            self.duration,
            self.src_packets,
            self.dst_packets,
            self.src_bytes,
            self.dst_bytes,
            self.label,
        )


@dataclass
class DatasetSchema:
    """Column layout and unit conventions of one flow CSV source.

    ``columns`` maps every harmonized field name in :data:`FIELDS` to the
    source column holding it. Raw labels are translated through
    ``label_map``; a raw label equal to a canonical class passes through
    unchanged.
    """

    columns: dict[str, str]
    label_column: str = "label"
    duration_unit: str = "s"
    bytes_include_headers: bool = True
    label_map: dict[str, str] = field(default_factory=dict)
    classes: tuple[str, ...] = CANONICAL_CLASSES
    protocol_map: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_PROTOCOL_MAP))
    delimiter: str = ","
    timestamp_format: str | None = None
    name: str = ""

    def __post_init__(self) -> None:
        missing = [f for f in FIELDS if not self.columns.get(f)]
        if missing:
            raise SchemaError(f"schema does not map field {missing[0]!r}", missing[0])
        unknown = sorted(set(self.columns) - set(FIELDS))
        if unknown:
            raise SchemaError(f"schema maps unknown field {unknown[0]!r}", unknown[0])
        if self.duration_unit not in DURATION_UNITS:
            raise SchemaError(
                f"duration unit must be one of s, ms, us; got {self.duration_unit!r}"
            )
        self.classes = tuple(self.classes)
        bad = {raw: c for raw, c in self.label_map.items() if c not in self.classes}
        if bad:
            raw, c = next(iter(bad.items()))
            raise SchemaError(f"label map sends {raw!r} to {c!r}, which is not a known class")
        for raw, proto in self.protocol_map.items():
            if proto not in Proto.__members__:
                raise SchemaError(f"protocol map sends {raw!r} to unknown class {proto!r}")

    @classmethod
    def canonical(cls, classes: Sequence[str] = CANONICAL_CLASSES) -> "DatasetSchema":
        """Schema of the harmonized on-disk format written by :func:`write_records`."""
        return cls(
            columns={f: f for f in FIELDS},
            label_column="label",
            classes=tuple(classes),
            protocol_map={"tcp": "TCP", "udp": "UDP", "other": "OTHER", **DEFAULT_PROTOCOL_MAP},
            name="canonical",
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "DatasetSchema":
        """Read an INI-style key-value schema.

        Sections: ``[columns]`` (field = source column), ``[options]``
        (label_column, duration_unit, bytes_include_headers, delimiter,
        timestamp_format, classes, name), ``[labels]`` (raw = canonical) and
        ``[protocols]`` (raw = TCP|UDP|OTHER).
        """
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
        parser.optionxform = str  # keep label/column case
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
        if not parser.has_section("columns"):
            raise SchemaError(f"{path}: missing [columns] section")
        opts = dict(parser["options"]) if parser.has_section("options") else {}
        kwargs: dict = {"columns": dict(parser["columns"])}
        if "label_column" in opts:
            kwargs["label_column"] = opts["label_column"]
        if "duration_unit" in opts:
            kwargs["duration_unit"] = opts["duration_unit"]
        if "bytes_include_headers" in opts:
            kwargs["bytes_include_headers"] = parser.getboolean("options", "bytes_include_headers")
        if "delimiter" in opts:
            kwargs["delimiter"] = "\t" if opts["delimiter"] == "\\t" else opts["delimiter"]
        if opts.get("timestamp_format"):
            kwargs["timestamp_format"] = opts["timestamp_format"]
        if "classes" in opts:
            kwargs["classes"] = tuple(c.strip() for c in opts["classes"].split(",") if c.strip())
        kwargs["name"] = opts.get("name", Path(path).stem)
        if parser.has_section("labels"):
            kwargs["label_map"] = dict(parser["labels"])
        if parser.has_section("protocols"):
            protocols = dict(DEFAULT_PROTOCOL_MAP)
            protocols.update({k.strip().lower(): v.strip().upper() for k, v in parser["protocols"].items()})
            kwargs["protocol_map"] = protocols
        return cls(**kwargs)

    def to_file(self, path: str | Path) -> None:
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
        parser.optionxform = str
        parser["columns"] = dict(self.columns)
        options = {
            "label_column": self.label_column,
            "duration_unit": self.duration_unit,
            "bytes_include_headers": str(self.bytes_include_headers).lower(),
            "delimiter": "\\t" if self.delimiter == "\t" else self.delimiter,
            "classes": ",".join(self.classes),
            "name": self.name,
        }
        if self.timestamp_format:
            options["timestamp_format"] = self.timestamp_format
        parser["options"] = options
        parser["labels"] = dict(self.label_map)
        parser["protocols"] = dict(self.protocol_map)
        with open(path, "w", encoding="utf-8") as fh:
            parser.write(fh)

    def map_label(self, raw: str) -> str | None:
        raw = raw.strip()
        if raw in self.label_map:
            return self.label_map[raw]
        if raw in self.classes:
            return raw
        return None


@dataclass
class IngestReport:
    records: list[FlowRecord]
    rejected: list[RowError] = field(default_factory=list)
    header_exclusive_bytes: bool = False


def _protocol_classes(raw: pd.Series, mapping: Mapping[str, str]) -> np.ndarray:
    keys = raw.str.strip().str.lower()
    # "6.0" style numeric encodings
    numeric = pd.to_numeric(keys, errors="coerce")
    is_int = numeric.notna() & (numeric == np.floor(numeric))
    keys = keys.where(~is_int, numeric.where(is_int).astype("Int64").astype(str))
    names = keys.map(lambda k: mapping.get(k, "OTHER"))
    return names.map(lambda n: int(Proto[n])).to_numpy(dtype=np.int8)


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return math.nan


def _floats(raw: pd.Series) -> np.ndarray:
    """Parse cells with Python's correctly rounded float(); bad cells become NaN."""
    return np.fromiter(map(_parse_float, raw.str.strip()), dtype=np.float64, count=len(raw))


def _timestamps(raw: pd.Series, fmt: str | None) -> pd.Series:
    if fmt is None:
        return pd.Series(_floats(raw), index=raw.index)
    parsed = pd.to_datetime(raw.str.strip(), format=fmt, errors="coerce")
    seconds = (parsed - pd.Timestamp("1970-01-01")) / pd.Timedelta(seconds=1)
    return seconds.astype(float)


def _read_csv(path: str | Path, schema: DatasetSchema, chunk_rows: int | None = None):
    return pd.read_csv(
        path,
        sep=schema.delimiter,
        dtype=str,
        keep_default_na=False,
        skipinitialspace=True,
        chunksize=chunk_rows,
    )


def _parse_frame(
    frame: pd.DataFrame, schema: DatasetSchema, path, first_line: int
) -> tuple[list[FlowRecord], np.ndarray, list[RowError]]:
    """Records for the valid rows of ``frame`` in file order, their timestamps, and the rejects.

    ``first_line`` is the file line number of the frame's first data row.
    """
    frame.columns = [str(c).strip() for c in frame.columns]
    needed = [schema.columns[f] for f in FIELDS] + [schema.label_column]
    for f, col in list(zip(FIELDS, needed)) + [("label", schema.label_column)]:
        if col not in frame.columns:
            raise SchemaError(f"{path}: column {col!r} (field {f}) not found in header", col)

    n = len(frame)
    errors: dict[int, str] = {}

    def flag(mask: np.ndarray, reason: str) -> None:
        for i in np.flatnonzero(mask):
            errors.setdefault(int(i), reason)

    col = lambda f: frame[schema.columns[f]]  # noqa: E731

    ts = _timestamps(col("timestamp"), schema.timestamp_format).to_numpy(dtype=float)
    flag(~np.isfinite(ts), "unparseable timestamp")

    protocol = _protocol_classes(col("protocol"), schema.protocol_map)

    ports = {}
    for f in ("src_port", "dst_port"):
        raw = col(f).str.strip()
        values = _floats(raw)
        # port-less protocols (ICMP etc.) may leave the cell empty
        blank_ok = (protocol == Proto.OTHER) & ((raw == "") | (raw == "-")).to_numpy()
        values = np.where(blank_ok, 0.0, values)
        bad = ~np.isfinite(values) | (values < 0) | (values > 65535) | (values != np.floor(values))
        flag(bad, f"invalid {f}")
        ports[f] = np.where(bad, 0, values).astype(np.int64)

    quantities = {}
    for f in _COUNT_FIELDS:
        values = _floats(col(f))
        bad = ~np.isfinite(values) | (values < 0)
        flag(bad, f"invalid {f}")
        quantities[f] = values
    quantities["duration"] = quantities["duration"] / DURATION_UNITS[schema.duration_unit]

    ips = {}
    for f in ("src_ip", "dst_ip"):
        ips[f] = col(f).str.strip().to_numpy(dtype=object)
        flag(ips[f] == "", f"empty {f}")

    labels = frame[schema.label_column].map(schema.map_label).to_numpy(dtype=object)
    for i in np.flatnonzero(pd.isna(labels)):
        errors.setdefault(int(i), f"unmapped label {frame[schema.label_column].iloc[i]!r}")

    rejected = [RowError(first_line + i, reason) for i, reason in sorted(errors.items())]
    keep = np.ones(n, dtype=bool)
    if errors:
        keep[list(errors)] = False
    idx = np.flatnonzero(keep)

    protos = list(Proto)
    records = [
        FlowRecord(t, s, sp, d, dp, protos[p], du, spk, dpk, sb, db, lab)
        for t, s, sp, d, dp, p, du, spk, dpk, sb, db, lab in zip(
            ts[idx].tolist(),
            ips["src_ip"][idx].tolist(),
            ports["src_port"][idx].tolist(),
            ips["dst_ip"][idx].tolist(),
            ports["dst_port"][idx].tolist(),
            protocol[idx].tolist(),
            quantities["duration"][idx].tolist(),
            quantities["src_packets"][idx].tolist(),
            quantities["dst_packets"][idx].tolist(),
            quantities["src_bytes"][idx].tolist(),
            quantities["dst_bytes"][idx].tolist(),
            labels[idx].tolist(),
        )
    ]
    return records, ts[idx], rejected


def _check_on_error(on_error: str) -> None:
    if on_error not in ("skip", "abort"):
        raise ValueError(f"on_error must be 'skip' or 'abort', got {on_error!r}")


def read_flows(
    path: str | Path,
    schema: DatasetSchema,
    on_error: str = "skip",
    sort: bool = True,
) -> IngestReport:
    """Parse ``path`` under ``schema`` and return records plus rejected rows.

    ``on_error`` is ``"skip"`` (drop bad rows, keep their errors) or
    ``"abort"`` (raise the first :class:`RowError`).
    """
    _check_on_error(on_error)
    records, ts, rejected = _parse_frame(_read_csv(path, schema), schema, path, first_line=2)
    if rejected and on_error == "abort":
        raise rejected[0]
    if sort:
        order = np.argsort(ts, kind="stable")
        records = [records[i] for i in order.tolist()]
    return IngestReport(records, rejected, header_exclusive_bytes=not schema.bytes_include_headers)


def iter_flows(
    path: str | Path,
    schema: DatasetSchema | None = None,
    on_error: str = "skip",
    rejected: list[RowError] | None = None,
    chunk_rows: int = 65536,
) -> Iterator[FlowRecord]:
    """Yield records in file order, parsing ``chunk_rows`` lines at a time.

    Memory stays proportional to one chunk, so arbitrarily long files can
    be streamed into the window engine. Rejected rows are appended to
    ``rejected`` when given.
    """
    _check_on_error(on_error)
    schema = schema or DatasetSchema.canonical()
    line = 2
    with _read_csv(path, schema, chunk_rows) as reader:
        for frame in reader:
            records, _, bad = _parse_frame(frame, schema, path, first_line=line)
            line += len(frame)
            if bad and on_error == "abort":
                raise bad[0]
            if rejected is not None:
                rejected.extend(bad)
            yield from records
    if line == 2:
        # header-only file: still validate the columns
        _parse_frame(_read_csv(path, schema), schema, path, first_line=2)


def load_dataset(
    path: str | Path,
    schema: DatasetSchema | None = None,
    on_error: str = "skip",
    sort: bool = True,
) -> list[FlowRecord]:
    """Load a flow CSV as a timestamp-sorted list of harmonized records."""
    report = read_flows(path, schema or DatasetSchema.canonical(), on_error=on_error, sort=sort)
    if report.rejected:
        logger.warning("%s: skipped %d malformed row(s), first: %s", path, len(report.rejected), report.rejected[0])
    if report.header_exclusive_bytes:
        logger.info("%s: byte counts exclude headers; values are used as-is", path)
    return report.records


def class_table(records: Iterable[FlowRecord]) -> dict[str, int]:
    return dict(Counter(r.label for r in records))


def write_records(path: str | Path, records: Iterable[FlowRecord]) -> int:
    """Write records in the canonical harmonized CSV layout. Returns row count."""
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CANONICAL_COLUMNS)
        for r in records:
            writer.writerow(_format_row(r.as_row()))
            n += 1
    return n


def _format_row(row: tuple) -> list:
    return [repr(v) if isinstance(v, float) else v for v in row]
