"""Labeled synthetic flow streams with benign, DoS and PortScan signatures.

A :class:`TrafficProfile` describes one class of traffic: how many flows
per second, which host pools they run between, the protocol mix, how
destination ports are picked and lognormal size/duration distributions.
:func:`generate` draws every profile independently and merges the streams
by timestamp.

Within a profile the flow count is exactly ``round(rate * duration)``
(or ``count`` when given) and the timestamps are exponential
interarrivals conditioned on that count, i.e. sorted uniforms. That keeps
class bookkeeping exact while the arrival process stays Poisson-like.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError
from .features import FeatureSet
from .ingest import CANONICAL_CLASSES, CANONICAL_COLUMNS, FlowRecord, Proto
from .window import DEFAULT_WINDOW_SECONDS, WindowConfig, process_stream

PORT_STRATEGIES = ("service", "sweep", "ephemeral")


@dataclass(frozen=True)
class Lognormal:
    """Lognormal distribution parameterized by its median and log-space sigma."""

    median: float
    sigma: float = 0.0

    def __post_init__(self) -> None:
        if not (self.median >= 0 and self.sigma >= 0 and math.isfinite(self.median) and math.isfinite(self.sigma)):
            raise ConfigError(f"lognormal needs a finite median >= 0 and sigma >= 0, got {self}")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.median * np.exp(self.sigma * rng.standard_normal(n))

    @classmethod
    def parse(cls, text: str) -> "Lognormal":
        parts = [float(p) for p in str(text).replace(",", " ").split()]
        return cls(*parts)

    def __str__(self) -> str:
        return f"{self.median!r} {self.sigma!r}"


@dataclass(frozen=True)
class TrafficProfile:
    label: str
    rate: float  # flows per second over the whole class
    src_hosts: int = 50
    dst_hosts: int = 10
    src_net: str = "10.0"
    dst_net: str = "172.16"
    protocol_mix: tuple[float, float, float] = (1.0, 0.0, 0.0)
    port_strategy: str = "service"
    service_ports: tuple[int, ...] = (80, 443)
    duration: Lognormal = Lognormal(1.0, 1.0)
    packets_out: Lognormal = Lognormal(8.0, 1.0)
    packets_in: Lognormal = Lognormal(8.0, 1.0)
    bytes_per_packet_out: Lognormal = Lognormal(200.0, 0.5)
    bytes_per_packet_in: Lognormal = Lognormal(600.0, 0.5)
    count: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "protocol_mix", tuple(float(p) for p in self.protocol_mix))
        object.__setattr__(self, "service_ports", tuple(int(p) for p in self.service_ports))
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ConfigError(f"{self.label}: rate must be positive")
        if self.src_hosts < 1 or self.dst_hosts < 1:
            raise ConfigError(f"{self.label}: host pools must be non-empty")
        mix = self.protocol_mix
        if len(mix) != 3 or min(mix) < 0 or not math.isclose(sum(mix), 1.0, abs_tol=1e-9):
            raise ConfigError(f"{self.label}: protocol mix must be three probabilities summing to 1")
        if self.port_strategy not in PORT_STRATEGIES:
            raise ConfigError(f"{self.label}: unknown port strategy {self.port_strategy!r}")
        if self.port_strategy == "service" and not self.service_ports:
            raise ConfigError(f"{self.label}: service strategy needs at least one port")
        if self.count is not None and self.count < 0:
            raise ConfigError(f"{self.label}: count must be >= 0")

    def expected_count(self, duration: float) -> int:
        return self.count if self.count is not None else int(round(self.rate * duration))


def _hosts(net: str, n: int, offset: int = 1) -> np.ndarray:
    idx = np.arange(offset, offset + n)
    return np.array([f"{net}.{i // 250}.{i % 250 + 1}" for i in idx], dtype=object)


def _profile_columns(profile: TrafficProfile, duration: float, start: float, rng: np.random.Generator) -> dict:
    n = profile.expected_count(duration)
    gaps = rng.exponential(size=n + 1)
    ts = start + duration * np.cumsum(gaps)[:-1] / gaps.sum()
    ts = np.round(ts, 6)

    src_pool = _hosts(profile.src_net, profile.src_hosts)
    dst_pool = _hosts(profile.dst_net, profile.dst_hosts)
    src_idx = rng.integers(0, profile.src_hosts, n)
    dst_idx = rng.integers(0, profile.dst_hosts, n)
    proto = rng.choice(3, size=n, p=profile.protocol_mix)

    src_port = rng.integers(1024, 65536, n)
    if profile.port_strategy == "service":
        dst_port = rng.choice(np.array(profile.service_ports), size=n)
    elif profile.port_strategy == "ephemeral":
        dst_port = rng.integers(1024, 65536, n)
    else:
        # each scanner walks the port space from its own random offset
        offsets = rng.integers(0, 65535, profile.src_hosts)
        order = np.zeros(n, dtype=np.int64)
        for h in range(profile.src_hosts):
            rows = np.flatnonzero(src_idx == h)
            order[rows] = np.arange(rows.size)
        dst_port = (offsets[src_idx] + order) % 65535 + 1
    other = proto == Proto.OTHER
    src_port = np.where(other, 0, src_port)
    dst_port = np.where(other, 0, dst_port)

    p_out = np.maximum(1, np.round(profile.packets_out.sample(rng, n)))
    p_in = np.round(profile.packets_in.sample(rng, n))
    b_out = np.round(p_out * profile.bytes_per_packet_out.sample(rng, n))
    b_in = np.round(p_in * profile.bytes_per_packet_in.sample(rng, n))
    dur = np.round(profile.duration.sample(rng, n), 6)
    # a single packet has no extent in time
    dur = np.where(p_out + p_in <= 1, 0.0, dur)

    return {
        "timestamp": ts,
        "src_ip": src_pool[src_idx],
        "src_port": src_port.astype(np.int64),
        "dst_ip": dst_pool[dst_idx],
        "dst_port": dst_port.astype(np.int64),
        "protocol": proto.astype(np.int64),
        "duration": dur,
        "src_packets": p_out,
        "dst_packets": p_in,
        "src_bytes": b_out,
        "dst_bytes": b_in,
        "label": np.full(n, profile.label, dtype=object),
    }


def generate_frame(
    profiles: Sequence[TrafficProfile] | Mapping[str, TrafficProfile],
    duration: float,
    seed: int = 0,
    start: float = 0.0,
) -> pd.DataFrame:
    """Canonical flow columns (protocol as integer class) sorted by timestamp."""
    if isinstance(profiles, Mapping):
        profiles = list(profiles.values())
    if not profiles:
        raise ConfigError("need at least one traffic profile")
    if not (duration >= 0 and math.isfinite(duration)):
        raise ConfigError("duration must be a finite number of seconds >= 0")
    parts = [
        pd.DataFrame(_profile_columns(p, duration, start, np.random.default_rng([seed, i])))
        for i, p in enumerate(profiles)
    ]
    frame = pd.concat(parts, ignore_index=True)
    return frame.sort_values("timestamp", kind="stable", ignore_index=True)


def generate(
    profiles: Sequence[TrafficProfile] | Mapping[str, TrafficProfile],
    duration: float,
    seed: int = 0,
    start: float = 0.0,
) -> list[FlowRecord]:
    """Timestamp-sorted flow records drawn from every profile."""
    frame = generate_frame(profiles, duration, seed, start)
    return [
        FlowRecord(t, si, int(sp), di, int(dp), Proto(pr), du, pk_o, pk_i, b_o, b_i, lab)
        for t, si, sp, di, dp, pr, du, pk_o, pk_i, b_o, b_i, lab in zip(
            *(frame[c].tolist() for c in CANONICAL_COLUMNS)
        )
    ]


def make_dataset(
    profiles,
    duration: float,
    seed: int = 0,
    window_length: float = DEFAULT_WINDOW_SECONDS,
    classes: Sequence[str] | None = CANONICAL_CLASSES,
) -> FeatureSet:
    """Generate, window and featurize in one go."""
    records = generate(profiles, duration, seed)
    samples = process_stream(records, WindowConfig(window_length))
    return FeatureSet.from_samples(samples, classes, {"window_length": window_length, "seed": seed})


# ---- presets ------------------------------------------------------------------


def benign(rate: float = 140.0, **kw) -> TrafficProfile:
    """Many clients talking to a server pool over a TCP/UDP/OTHER mix."""
    base = dict(
        label="Benign",
        rate=rate,
        src_hosts=200,
        dst_hosts=20,
        src_net="10.0",
        dst_net="172.16",
        protocol_mix=(0.7, 0.25, 0.05),
        port_strategy="service",
        service_ports=(80, 443, 53, 22, 25, 123),
        duration=Lognormal(2.0, 1.2),
        packets_out=Lognormal(10.0, 1.0),
        packets_in=Lognormal(12.0, 1.0),
        bytes_per_packet_out=Lognormal(200.0, 0.6),
        bytes_per_packet_in=Lognormal(800.0, 0.6),
    )
    base.update(kw)
    return TrafficProfile(**base)


def shifted_benign(rate: float = 140.0, **kw) -> TrafficProfile:
    """Benign traffic from a few busy clients making short, small web requests.

    Per-host flow rates and flow sizes resemble a flood, so a model that
    learned the default benign profile tends to flag it as DoS.
    """
    base = dict(
        src_hosts=10,
        dst_hosts=4,
        protocol_mix=(1.0, 0.0, 0.0),
        service_ports=(80,),
        duration=Lognormal(0.05, 0.5),
        packets_out=Lognormal(2.0, 0.3),
        packets_in=Lognormal(1.0, 0.3),
        bytes_per_packet_out=Lognormal(60.0, 0.2),
        bytes_per_packet_in=Lognormal(60.0, 0.2),
    )
    base.update(kw)
    return benign(rate, **base)


def dos(rate: float = 20.0, **kw) -> TrafficProfile:
    """One attacker flooding a single victim's web port with tiny, short flows."""
    base = dict(
        label="DoS",
        rate=rate,
        src_hosts=1,
        dst_hosts=1,
        src_net="10.66",
        dst_net="172.17",
        protocol_mix=(1.0, 0.0, 0.0),
        port_strategy="service",
        service_ports=(80,),
        duration=Lognormal(0.05, 0.5),
        packets_out=Lognormal(2.0, 0.3),
        packets_in=Lognormal(1.0, 0.3),
        bytes_per_packet_out=Lognormal(60.0, 0.2),
        bytes_per_packet_in=Lognormal(60.0, 0.2),
    )
    base.update(kw)
    return TrafficProfile(**base)


def portscan(rate: float = 8.0, **kw) -> TrafficProfile:
    """One scanner sweeping the ports of one target with one or two packets per probe."""
    base = dict(
        label="PortScan",
        rate=rate,
        src_hosts=1,
        dst_hosts=1,
        src_net="10.99",
        dst_net="172.18",
        protocol_mix=(1.0, 0.0, 0.0),
        port_strategy="sweep",
        duration=Lognormal(0.001, 0.5),
        packets_out=Lognormal(1.0, 0.0),
        packets_in=Lognormal(1.0, 0.3),
        bytes_per_packet_out=Lognormal(44.0, 0.0),
        bytes_per_packet_in=Lognormal(40.0, 0.0),
    )
    base.update(kw)
    return TrafficProfile(**base)


def slow_dos(rate: float = 20.0, **kw) -> TrafficProfile:
    """A different DoS tool: long-held connections trickling small packets to one victim."""
    base = dict(
        src_net="10.77",
        dst_net="172.19",
        duration=Lognormal(30.0, 0.5),
        packets_out=Lognormal(20.0, 0.3),
        packets_in=Lognormal(5.0, 0.3),
        bytes_per_packet_out=Lognormal(30.0, 0.2),
    )
    base.update(kw)
    return dos(rate, **base)


def three_class() -> list[TrafficProfile]:
    return [benign(), dos(), portscan()]


def shifted_three_class() -> list[TrafficProfile]:
    """Same attacks, benign part replaced by :func:`shifted_benign`."""
    return [shifted_benign(), dos(), portscan()]


def tool_shifted_three_class() -> list[TrafficProfile]:
    """Shifted benign traffic and a DoS tool the default set never shows; the scan is unchanged."""
    return [shifted_benign(), slow_dos(), portscan()]


def disjoint_three_class() -> list[TrafficProfile]:
    """Attack signatures that share nothing with :func:`three_class`.

    Benign traffic here looks like the default DoS flood, and the attacks
    move to UDP: a volumetric flood with large datagrams and a UDP sweep.
    Training on this set pulls the decision regions of the default set
    apart.
    """
    return [
        shifted_benign(),
        dos(
            protocol_mix=(0.0, 1.0, 0.0),
            service_ports=(53,),
            packets_out=Lognormal(40.0, 0.3),
            packets_in=Lognormal(0.0, 0.0),
            bytes_per_packet_out=Lognormal(1200.0, 0.1),
            duration=Lognormal(1.0, 0.3),
        ),
        portscan(protocol_mix=(0.0, 1.0, 0.0), packets_in=Lognormal(0.0, 0.0)),
    ]


def separable_two_class() -> list[TrafficProfile]:
    return [benign(rate=100.0), portscan(rate=20.0)]


PRESETS = {
    "three_class": three_class,
    "shifted_three_class": shifted_three_class,
    "tool_shifted_three_class": tool_shifted_three_class,
    "disjoint_three_class": disjoint_three_class,
    "separable_two_class": separable_two_class,
}


# ---- profile files ---------------------------------------------------------------

_DIST_FIELDS = {"duration", "packets_out", "packets_in", "bytes_per_packet_out", "bytes_per_packet_in"}


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return " ".join(repr(v) for v in value)
    return str(value)


def save_profiles(path: str | Path, profiles: Sequence[TrafficProfile]) -> None:
    """Key-value file, one ``[section]`` per profile."""
    parser = configparser.ConfigParser()
    for p in profiles:
        section = {}
        for f in fields(p):
            value = getattr(p, f.name)
            if value is not None:
                section[f.name] = _format_value(value)
        parser[p.label] = section
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def load_profiles(path: str | Path) -> list[TrafficProfile]:
    parser = configparser.ConfigParser()
    if not parser.read(path, encoding="utf-8"):
        raise ConfigError(f"cannot read profile file {path}")
    known = {f.name for f in fields(TrafficProfile)}
    profiles = []
    for name in parser.sections():
        kw: dict = {"label": name}
        for key, raw in parser[name].items():
            if key not in known:
                raise ConfigError(f"{path} [{name}]: unknown key {key!r}")
            try:
                if key in _DIST_FIELDS:
                    kw[key] = Lognormal.parse(raw)
                elif key in ("protocol_mix",):
                    kw[key] = tuple(float(v) for v in raw.split())
                elif key == "service_ports":
                    kw[key] = tuple(int(v) for v in raw.split())
                elif key in ("rate",):
                    kw[key] = float(raw)
                elif key in ("src_hosts", "dst_hosts", "count"):
                    kw[key] = int(raw)
                else:
                    kw[key] = raw
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path} [{name}]: bad value for {key!r}: {raw!r}") from exc
        profiles.append(TrafficProfile(**kw))
    if not profiles:
        raise ConfigError(f"{path}: no profiles")
    return profiles


def scaled(profiles: Sequence[TrafficProfile], factor: float) -> list[TrafficProfile]:
    """Multiply every profile's rate by ``factor``."""
    return [replace(p, rate=p.rate * factor) for p in profiles]
