from __future__ import annotations

import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from twnids.ingest import FlowRecord, Proto

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=300, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def flow(t, src="A", dst="B", sport=5000, dport=80, proto=Proto.TCP, dur=1.0, sp=1.0, dp=1.0, sb=100.0, db=100.0, label="Benign"):
    return FlowRecord(float(t), src, sport, dst, dport, Proto(proto), dur, sp, dp, sb, db, label)


def random_stream(rng: np.random.Generator, n: int, hosts: int = 8, ports: int = 6, span: float = 600.0) -> list[FlowRecord]:
    """Small host/port pools so windows overlap and ports collide often."""
    ts = np.sort(np.round(rng.uniform(0, span, n), 1))  # rounding forces timestamp ties
    src = rng.integers(0, hosts, n)
    dst = rng.integers(0, hosts, n)
    proto = rng.choice(3, n, p=[0.5, 0.35, 0.15])
    sport = rng.integers(0, ports, n)
    dport = rng.integers(0, ports, n)
    return [
        FlowRecord(float(ts[i]), f"h{src[i]}", int(sport[i]), f"h{dst[i]}", int(dport[i]), Proto(int(proto[i])),
                   1.0, 1.0, 2.0, 10.0, 20.0, "Benign")
        for i in range(n)
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
