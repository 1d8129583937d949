"""Twenty host-window features per flow plus the protocol one-hot mask.

Every src/dst pair is reduced to order-free quantities (max, min, absolute
difference), so swapping the two endpoints of a sample leaves the vector
unchanged. Columns:

    f1  duration
    f2  |src_packets - dst_packets|
    f3  |src_bytes - dst_bytes|
    f4  duration / (src_bytes + dst_bytes + 1e-4)
    f5  duration / (src_packets + dst_packets + 1e-4)
    f6, f7    max/min packets
    f8, f9    max/min bytes
    f10, f11  max/min bytes per packet, bytes / (packets + 1e-4)
    f12 0.5 * (new_port_src + new_port_dst)
    f13, f14  max/min in-window flow count
    f15, f16  max/min in-window port count
    f17 |flow count difference|
    f18 |port count difference|
    f19, f20  max/min port_count / (flow_count + 1e-4)

No normalization is applied; scaling is left to the trainable activations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError, SchemaError
from .ingest import CANONICAL_CLASSES, FlowRecord, Proto, _format_row
from .window import WindowedSample, read_meta, write_meta

STABILIZER = 1e-4
N_FEATURES = 20
FEATURE_COLUMNS = tuple(f"f{i}" for i in range(1, N_FEATURES + 1))
MASK_COLUMNS = ("mask_tcp", "mask_udp", "mask_other")
ZERO_LENGTH_FLAG = "zero_length_flag"

_INPUT_COLUMNS = (
    "duration",
    "src_packets",
    "dst_packets",
    "src_bytes",
    "dst_bytes",
    "new_port_src",
    "new_port_dst",
    "src_flow_count",
    "dst_flow_count",
    "src_port_count",
    "dst_port_count",
)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    protocol_mask: tuple[int, int, int]

    def __getitem__(self, feature: int) -> float:
        """1-based feature access: ``vec[12]`` is f12."""
        if not 1 <= feature <= N_FEATURES:
            raise IndexError(f"feature ids run 1..{N_FEATURES}, got {feature}")
        return float(self.values[feature - 1])

    @property
    def zero_length_flag(self) -> float:
        return 1.0 if self.values[0] == 0 else 0.0


def feature_matrix(columns: Mapping[str, np.ndarray]) -> np.ndarray:
    """Compute the (N, 20) feature matrix from windowed-sample columns."""
    c = {k: np.asarray(columns[k], dtype=np.float64) for k in _INPUT_COLUMNS}
    for k, v in c.items():
        if v.size and not (np.all(np.isfinite(v)) and v.min() >= 0):
            raise ValueError(f"column {k!r} must be finite and non-negative")

    dur = c["duration"]
    sp, dp = c["src_packets"], c["dst_packets"]
    sb, db = c["src_bytes"], c["dst_bytes"]
    sf, df = c["src_flow_count"], c["dst_flow_count"]
    spc, dpc = c["src_port_count"], c["dst_port_count"]
    src_bpp = sb / (sp + STABILIZER)
    dst_bpp = db / (dp + STABILIZER)
    src_ppf = spc / (sf + STABILIZER)
    dst_ppf = dpc / (df + STABILIZER)

    out = np.empty((dur.shape[0], N_FEATURES), dtype=np.float64)
    out[:, 0] = dur
    out[:, 1] = np.abs(sp - dp)
    out[:, 2] = np.abs(sb - db)
    out[:, 3] = dur / (sb + db + STABILIZER)
    out[:, 4] = dur / (sp + dp + STABILIZER)
    out[:, 5] = np.maximum(sp, dp)
    out[:, 6] = np.minimum(sp, dp)
    out[:, 7] = np.maximum(sb, db)
    out[:, 8] = np.minimum(sb, db)
    out[:, 9] = np.maximum(src_bpp, dst_bpp)
    out[:, 10] = np.minimum(src_bpp, dst_bpp)
    out[:, 11] = 0.5 * (c["new_port_src"] + c["new_port_dst"])
    out[:, 12] = np.maximum(sf, df)
    out[:, 13] = np.minimum(sf, df)
    out[:, 14] = np.maximum(spc, dpc)
    out[:, 15] = np.minimum(spc, dpc)
    out[:, 16] = np.abs(sf - df)
    out[:, 17] = np.abs(spc - dpc)
    out[:, 18] = np.maximum(src_ppf, dst_ppf)
    out[:, 19] = np.minimum(src_ppf, dst_ppf)
    return out


def _sample_columns(sample: WindowedSample) -> dict[str, np.ndarray]:
    f = sample.flow
    return {
        "duration": np.array([f.duration]),
        "src_packets": np.array([f.src_packets]),
        "dst_packets": np.array([f.dst_packets]),
        "src_bytes": np.array([f.src_bytes]),
        "dst_bytes": np.array([f.dst_bytes]),
        "new_port_src": np.array([sample.new_port_src]),
        "new_port_dst": np.array([sample.new_port_dst]),
        "src_flow_count": np.array([sample.src_flow_count]),
        "dst_flow_count": np.array([sample.dst_flow_count]),
        "src_port_count": np.array([sample.src_port_count]),
        "dst_port_count": np.array([sample.dst_port_count]),
    }


def protocol_mask(protocol: int) -> tuple[int, int, int]:
    mask = [0, 0, 0]
    mask[int(protocol)] = 1
    return tuple(mask)  # type: ignore[return-value]


def extract(sample: WindowedSample) -> FeatureVector:
    if sample.new_port_src not in (0, 1) or sample.new_port_dst not in (0, 1):
        raise ValueError("new-port flags must be 0 or 1")
    values = feature_matrix(_sample_columns(sample))[0]
    return FeatureVector(values, protocol_mask(sample.flow.protocol))


def swap_src_dst(sample: WindowedSample) -> WindowedSample:
    """The same sample seen with source and destination exchanged."""
    f = sample.flow
    flow = FlowRecord(
        f.timestamp, f.dst_ip, f.dst_port, f.src_ip, f.src_port, f.protocol, f.duration,
        f.dst_packets, f.src_packets, f.dst_bytes, f.src_bytes, f.label,
    )
    return replace(
        sample,
        flow=flow,
        new_port_src=sample.new_port_dst,
        new_port_dst=sample.new_port_src,
        src_flow_count=sample.dst_flow_count,
        dst_flow_count=sample.src_flow_count,
        src_port_count=sample.dst_port_count,
        dst_port_count=sample.src_port_count,
        src_means=sample.dst_means,
        dst_means=sample.src_means,
    )


def check_input_ids(ids: Sequence) -> tuple:
    for i in ids:
        if i == ZERO_LENGTH_FLAG:
            continue
        if isinstance(i, (bool, np.bool_)) or not isinstance(i, (int, np.integer)) or not 1 <= i <= N_FEATURES:
            raise ConfigError(f"unknown feature id {i!r}; expected 1..{N_FEATURES} or {ZERO_LENGTH_FLAG!r}")
    return tuple(ids)


def select_matrix(features: np.ndarray, ids: Sequence) -> np.ndarray:
    """Model input columns, in declared order, from an (N, 20) matrix."""
    ids = check_input_ids(ids)
    cols = []
    for i in ids:
        if i == ZERO_LENGTH_FLAG:
            cols.append((features[:, 0] == 0).astype(np.float64))
        else:
            cols.append(features[:, i - 1])
    return np.stack(cols, axis=1) if cols else np.empty((features.shape[0], 0))


def select_features(vector: FeatureVector, spec) -> tuple[float, ...]:
    """Inputs for one flow in the order the model spec declares them.

    ``spec`` is a model spec (anything exposing ``input_ids``) or a plain
    sequence of feature ids.
    """
    ids = getattr(spec, "input_ids", spec)
    return tuple(select_matrix(vector.values[None, :], ids)[0].tolist())


@dataclass
class FeatureSet:
    """Feature matrix, protocol class and integer label per flow."""

    features: np.ndarray
    protocol: np.ndarray
    labels: np.ndarray
    classes: tuple[str, ...] = CANONICAL_CLASSES
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.protocol = np.asarray(self.protocol, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.classes = tuple(self.classes)
        n = len(self.features)
        if self.features.ndim != 2 or self.features.shape[1] != N_FEATURES:
            raise ValueError(f"feature matrix must be (N, {N_FEATURES}), got {self.features.shape}")
        if self.protocol.shape != (n,) or self.labels.shape != (n,):
            raise ValueError("protocol and labels must have one entry per row")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def mask(self) -> np.ndarray:
        return np.eye(3, dtype=np.float64)[self.protocol]

    def subset(self, idx) -> "FeatureSet":
        return FeatureSet(self.features[idx], self.protocol[idx], self.labels[idx], self.classes, dict(self.meta))

    def label_names(self) -> list[str]:
        return [self.classes[i] for i in self.labels]

    def class_counts(self) -> dict[str, int]:
        counts = np.bincount(self.labels, minlength=len(self.classes))
        return {c: int(n) for c, n in zip(self.classes, counts) if n}

    def with_classes(self, classes: Sequence[str]) -> "FeatureSet":
        """Re-index labels onto another class vocabulary (must cover all labels)."""
        classes = tuple(classes)
        lookup = {c: i for i, c in enumerate(classes)}
        counts = np.bincount(self.labels, minlength=len(self.classes))
        remap = np.full(len(self.classes), -1, dtype=np.int64)
        for i, c in enumerate(self.classes):
            if c in lookup:
                remap[i] = lookup[c]
            elif counts[i]:
                raise ConfigError(f"label {c!r} not in class vocabulary {classes}")
        return FeatureSet(self.features, self.protocol, remap[self.labels], classes, dict(self.meta))

    @classmethod
    def from_samples(
        cls,
        samples: Sequence[WindowedSample] | pd.DataFrame,
        classes: Sequence[str] | None = None,
        meta: dict | None = None,
    ) -> "FeatureSet":
        if isinstance(samples, pd.DataFrame):
            columns = {k: samples[k].to_numpy() for k in _INPUT_COLUMNS}
            protocol = _protocol_codes(samples["protocol"])
            labels = samples["label"].astype(str).tolist()
        else:
            columns = {k: np.empty(len(samples)) for k in _INPUT_COLUMNS}
            protocol = np.empty(len(samples), dtype=np.int64)
            labels = []
            for i, s in enumerate(samples):
                f = s.flow
                columns["duration"][i] = f.duration
                columns["src_packets"][i] = f.src_packets
                columns["dst_packets"][i] = f.dst_packets
                columns["src_bytes"][i] = f.src_bytes
                columns["dst_bytes"][i] = f.dst_bytes
                columns["new_port_src"][i] = s.new_port_src
                columns["new_port_dst"][i] = s.new_port_dst
                columns["src_flow_count"][i] = s.src_flow_count
                columns["dst_flow_count"][i] = s.dst_flow_count
                columns["src_port_count"][i] = s.src_port_count
                columns["dst_port_count"][i] = s.dst_port_count
                protocol[i] = int(f.protocol)
                labels.append(f.label)
        classes = _vocabulary(labels, classes)
        lookup = {c: i for i, c in enumerate(classes)}
        missing = sorted(set(labels) - set(lookup))
        if missing:
            raise ConfigError(f"label {missing[0]!r} not in class vocabulary {classes}")
        return cls(
            feature_matrix(columns),
            protocol,
            np.array([lookup[c] for c in labels], dtype=np.int64),
            classes,
            dict(meta or {}),
        )

    def save(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(FEATURE_COLUMNS + MASK_COLUMNS + ("label",))
            eye = np.eye(3, dtype=np.int64)
            for row, proto, lab in zip(self.features.tolist(), self.protocol.tolist(), self.labels.tolist()):
                writer.writerow(_format_row(tuple(row)) + eye[proto].tolist() + [self.classes[lab]])
        write_meta(path, {**self.meta, "classes": list(self.classes)})

    @classmethod
    def load(cls, path: str | Path, classes: Sequence[str] | None = None) -> "FeatureSet":
        frame = pd.read_csv(path, dtype={"label": str}, keep_default_na=False, float_precision="round_trip")
        for col in FEATURE_COLUMNS + MASK_COLUMNS + ("label",):
            if col not in frame.columns:
                raise SchemaError(f"{path}: feature file lacks column {col!r}", col)
        mask = frame[list(MASK_COLUMNS)].to_numpy()
        if not np.all(mask.sum(axis=1) == 1):
            raise SchemaError(f"{path}: every row needs exactly one protocol mask bit set")
        meta = read_meta(path)
        labels = frame["label"].tolist()
        classes = _vocabulary(labels, classes or meta.get("classes"))
        lookup = {c: i for i, c in enumerate(classes)}
        missing = sorted(set(labels) - set(lookup))
        if missing:
            raise ConfigError(f"label {missing[0]!r} not in class vocabulary {classes}")
        meta.pop("classes", None)
        return cls(
            frame[list(FEATURE_COLUMNS)].to_numpy(dtype=np.float64),
            mask.argmax(axis=1),
            np.array([lookup[c] for c in labels], dtype=np.int64),
            classes,
            meta,
        )


def _protocol_codes(column: pd.Series) -> np.ndarray:
    names = column.astype(str).str.upper()
    return names.map(lambda n: int(Proto[n]) if n in Proto.__members__ else int(Proto.OTHER)).to_numpy(dtype=np.int64)


def _vocabulary(labels: Sequence[str], classes: Sequence[str] | None) -> tuple[str, ...]:
    if classes is not None:
        return tuple(classes)
    extra = sorted(set(labels) - set(CANONICAL_CLASSES))
    return tuple(CANONICAL_CLASSES) + tuple(extra)
