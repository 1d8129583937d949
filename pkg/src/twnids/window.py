"""Per-host sliding time window over a timestamp-ordered flow stream.

Each host keeps three flow lists (TCP, UDP, OTHER) and, for TCP and UDP,
a multiset of the ports it used in those flows. For every incoming flow
both endpoint hosts are evicted against the flow's timestamp, their counts
and new-port flags are read, and only then is the flow appended to both
hosts. The emitted :class:`WindowedSample` is frozen: later flows never
change it, so samples can be shuffled freely for training.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter, OrderedDict, deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import pandas as pd

from .errors import ConfigError, OrderingError, SchemaError
from .ingest import CANONICAL_COLUMNS, FlowRecord, Proto, _format_row

logger = logging.getLogger(__name__)

DEFAULT_WINDOW_SECONDS = 60.0

COUNT_COLUMNS = (
    "new_port_src",
    "new_port_dst",
    "src_flow_count",
    "dst_flow_count",
    "src_port_count",
    "dst_port_count",
)
SAMPLE_COLUMNS = CANONICAL_COLUMNS + COUNT_COLUMNS

_OTHER = Proto.OTHER


@dataclass(frozen=True)
class WindowConfig:
    window_length: float = DEFAULT_WINDOW_SECONDS
    host_capacity: int | None = None
    aggregates: bool = False

    def __post_init__(self) -> None:
        if not (math.isfinite(self.window_length) and self.window_length > 0):
            raise ConfigError(f"window_length must be a positive number of seconds, got {self.window_length!r}")
        if self.host_capacity is not None and self.host_capacity < 2:
            raise ConfigError("host_capacity must be at least 2")


class FlowEntry(NamedTuple):
    timestamp: float
    duration: float
    packets_out: float
    packets_in: float
    bytes_out: float
    bytes_in: float
    port: int


class HostWindowState:
    """Flows and in-use ports of one host, segregated by protocol class."""

    __slots__ = ("flows", "ports", "last_anchor")

    def __init__(self) -> None:
        self.flows: tuple[deque[FlowEntry], ...] = (deque(), deque(), deque())
        # OTHER never records ports
        self.ports: tuple[Counter, ...] = (Counter(), Counter(), Counter())
        self.last_anchor = -math.inf

    def add(self, protocol: Proto, entry: FlowEntry) -> None:
        self.flows[protocol].append(entry)
        if protocol != _OTHER:
            self.ports[protocol][entry.port] += 1

    def evict(self, anchor: float, window_length: float) -> "HostWindowState":
        cutoff = anchor - window_length
        for proto in (0, 1, 2):
            flows = self.flows[proto]
            if not flows or flows[0].timestamp >= cutoff:
                continue
            ports = self.ports[proto]
            while flows and flows[0].timestamp < cutoff:
                entry = flows.popleft()
                if proto != _OTHER:
                    left = ports[entry.port] - 1
                    if left:
                        ports[entry.port] = left
                    else:
                        del ports[entry.port]
        self.last_anchor = anchor
        return self

    def counts_for(self, protocol: Proto) -> tuple[int, int]:
        return len(self.flows[protocol]), len(self.ports[protocol])

    def port_in_use(self, protocol: Proto, port: int) -> bool:
        return protocol != _OTHER and port in self.ports[protocol]

    def means(self, protocol: Proto) -> tuple[float, ...]:
        """Per-field means (duration, packets out/in, bytes out/in) of in-window flows."""
        flows = self.flows[protocol]
        if not flows:
            return (0.0,) * 5
        n = len(flows)
        return tuple(sum(e[k] for e in flows) / n for k in range(1, 6))

    def __len__(self) -> int:
        return sum(len(f) for f in self.flows)


def evict(state: HostWindowState, anchor: float, config: WindowConfig) -> HostWindowState:
    """Drop flows older than ``anchor - window_length`` (in place; returns ``state``)."""
    return state.evict(anchor, config.window_length)


def counts_for(state: HostWindowState, protocol: Proto) -> tuple[int, int]:
    """(in-window flow count, distinct in-use ports) for one protocol class."""
    return state.counts_for(protocol)


@dataclass(frozen=True, slots=True)
class WindowedSample:
    flow: FlowRecord
    new_port_src: int
    new_port_dst: int
    src_flow_count: int
    dst_flow_count: int
    src_port_count: int
    dst_port_count: int
    src_means: tuple[float, ...] | None = None
    dst_means: tuple[float, ...] | None = None

    def as_row(self) -> tuple:
        return self.flow.as_row() + (
            self.new_port_src,
            self.new_port_dst,
            self.src_flow_count,
            self.dst_flow_count,
            self.src_port_count,
            self.dst_port_count,
        )


class WindowEngine:
    """Single-pass stateful processor; one instance per stream.

    With ``host_capacity`` set, the least recently anchored host is
    dropped once the table grows past the bound. A host whose last flow is
    older than the window has an empty in-window state anyway, so the spill
    only loses information when the bound is smaller than the number of
    hosts active within one window.
    """

    def __init__(self, config: WindowConfig | None = None) -> None:
        self.config = config or WindowConfig()
        self.hosts: OrderedDict[str, HostWindowState] = OrderedDict()
        self.processed = 0
        self.self_flows = 0
        self.spilled = 0
        self.lossy_spills = 0
        self._last_ts = -math.inf

    def _host(self, ip: str, anchor: float) -> HostWindowState:
        state = self.hosts.get(ip)
        if state is None:
            state = self.hosts[ip] = HostWindowState()
        else:
            self.hosts.move_to_end(ip)
            state.evict(anchor, self.config.window_length)
        return state

    def _spill(self, anchor: float) -> None:
        cap = self.config.host_capacity
        while len(self.hosts) > cap:
            _, state = self.hosts.popitem(last=False)
            self.spilled += 1
            if state.last_anchor >= anchor - self.config.window_length and len(state):
                self.lossy_spills += 1

    def push(self, record: FlowRecord) -> WindowedSample:
        t = record.timestamp
        if t < self._last_ts:
            raise OrderingError(self.processed, self._last_ts, t)
        self._last_ts = t
        proto = record.protocol

        src = self._host(record.src_ip, t)
        dst = self._host(record.dst_ip, t)
        src.last_anchor = dst.last_anchor = t
        if record.src_ip == record.dst_ip:
            self.self_flows += 1

        src_flows, src_ports = src.counts_for(proto)
        dst_flows, dst_ports = dst.counts_for(proto)
        sample = WindowedSample(
            record,
            0 if src.port_in_use(proto, record.src_port) else 1,
            0 if dst.port_in_use(proto, record.dst_port) else 1,
            src_flows,
            dst_flows,
            src_ports,
            dst_ports,
            src.means(proto) if self.config.aggregates else None,
            dst.means(proto) if self.config.aggregates else None,
        )

        src.add(
            proto,
            FlowEntry(t, record.duration, record.src_packets, record.dst_packets,
                      record.src_bytes, record.dst_bytes, record.src_port),
        )
        # mirrored: the destination host sees the flow from its own side
        dst.add(
            proto,
            FlowEntry(t, record.duration, record.dst_packets, record.src_packets,
                      record.dst_bytes, record.src_bytes, record.dst_port),
        )
        if self.config.host_capacity is not None and len(self.hosts) > self.config.host_capacity:
            self._spill(t)
        self.processed += 1
        return sample

    def run(self, records: Iterable[FlowRecord]) -> Iterator[WindowedSample]:
        for record in records:
            yield self.push(record)


def process_stream(records: Iterable[FlowRecord], config: WindowConfig | None = None) -> list[WindowedSample]:
    """Window a timestamp-sorted stream; one sample per record, in input order."""
    engine = WindowEngine(config)
    samples = list(engine.run(records))
    if engine.self_flows:
        logger.info("%d flow(s) had identical source and destination hosts", engine.self_flows)
    return samples


def write_samples(
    path: str | Path,
    samples: Iterable[WindowedSample],
    window_length: float | None = None,
) -> int:
    """Stream samples to CSV (fixed column order); returns the row count.

    When ``window_length`` is given, a ``<path>.meta.json`` sidecar records it.
    """
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SAMPLE_COLUMNS)
        for s in samples:
            writer.writerow(_format_row(s.as_row()))
            n += 1
    if window_length is not None:
        write_meta(path, {"window_length": window_length})
    return n


def samples_frame(samples: Sequence[WindowedSample]) -> pd.DataFrame:
    return pd.DataFrame([s.as_row() for s in samples], columns=list(SAMPLE_COLUMNS))


def read_samples(path: str | Path) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"src_ip": str, "dst_ip": str, "label": str},
                        keep_default_na=False, float_precision="round_trip")
    missing = [c for c in SAMPLE_COLUMNS if c not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: windowed-sample file lacks column {missing[0]!r}", missing[0])
    return frame


def meta_path(path: str | Path) -> Path:
    return Path(f"{path}.meta.json")


def write_meta(path: str | Path, meta: dict) -> None:
    meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_meta(path: str | Path) -> dict:
    p = meta_path(path)
    return json.loads(p.read_text()) if p.exists() else {}
