from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twnids import synth
from twnids.errors import RowError, SchemaError
from twnids.ingest import (
    CANONICAL_CLASSES,
    FIELDS,
    DatasetSchema,
    Proto,
    class_table,
    iter_flows,
    load_dataset,
    read_flows,
    write_records,
)

from conftest import flow

HEADER = "ts,sip,sport,dip,dport,proto,dur,spk,dpk,sb,db,Label\n"


def raw_schema(**kw) -> DatasetSchema:
    cols = dict(zip(FIELDS, ["ts", "sip", "sport", "dip", "dport", "proto", "dur", "spk", "dpk", "sb", "db"]))
    return DatasetSchema(columns=cols, label_column="Label", **kw)


def write(tmp_path, body: str, name: str = "flows.csv"):
    p = tmp_path / name
    p.write_text(HEADER + body)
    return p


def test_duration_ms_converted_to_seconds(tmp_path):
    p = write(tmp_path, "1.0,a,1,b,80,6,1500,1,1,10,10,Benign\n")
    (rec,) = load_dataset(p, raw_schema(duration_unit="ms"))
    assert rec.duration == 1.5


def test_duration_us(tmp_path):
    p = write(tmp_path, "1.0,a,1,b,80,6,2500,1,1,10,10,Benign\n")
    (rec,) = load_dataset(p, raw_schema(duration_unit="us"))
    assert rec.duration == 0.0025


def test_records_sorted_by_timestamp(tmp_path):
    p = write(tmp_path, "".join(f"{t},a,1,b,80,6,1,1,1,10,10,Benign\n" for t in (10.0, 5.0, 7.5)))
    assert [r.timestamp for r in load_dataset(p, raw_schema())] == [5.0, 7.5, 10.0]


def test_stable_sort_keeps_file_order_on_ties(tmp_path):
    p = write(tmp_path, "".join(f"5.0,h{i},1,b,80,6,1,1,1,10,10,Benign\n" for i in range(5)))
    assert [r.src_ip for r in load_dataset(p, raw_schema())] == [f"h{i}" for i in range(5)]


def test_label_merge_map(tmp_path):
    p = write(tmp_path, "1,a,1,b,80,6,1,1,1,10,10,DoS Hulk\n2,a,1,b,80,6,1,1,1,10,10,DoS slowloris\n")
    schema = raw_schema(label_map={"DoS Hulk": "DoS", "DoS slowloris": "DoS"})
    assert [r.label for r in load_dataset(p, schema)] == ["DoS", "DoS"]


def test_protocol_encodings(tmp_path):
    p = write(tmp_path, "1,a,1,b,80,6,1,1,1,1,1,Benign\n2,a,1,b,53,udp,1,1,1,1,1,Benign\n"
                        "3,a,,b,,1,1,1,1,1,1,Benign\n4,a,1,b,80,6.0,1,1,1,1,1,Benign\n")
    protos = [r.protocol for r in load_dataset(p, raw_schema())]
    assert protos == [Proto.TCP, Proto.UDP, Proto.OTHER, Proto.TCP]


def test_missing_column_names_it(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("ts,sip\n1,a\n")
    with pytest.raises(SchemaError) as exc:
        load_dataset(p, raw_schema())
    assert exc.value.column == "sport"


def test_bad_numeric_cell_skip_and_count(tmp_path):
    p = write(tmp_path, "1,a,1,b,80,6,1,1,1,10,10,Benign\n2,a,1,b,80,6,oops,1,1,10,10,Benign\n"
                        "3,a,1,b,80,6,1,1,1,10,10,Nope\n")
    report = read_flows(p, raw_schema())
    assert len(report.records) == 1
    assert [(e.line, e.reason) for e in report.rejected] == [(3, "invalid duration"), (4, "unmapped label 'Nope'")]


def test_bad_numeric_cell_abort(tmp_path):
    p = write(tmp_path, "1,a,1,b,80,6,1,1,1,10,10,Benign\n2,a,1,b,80,6,-4,1,1,10,10,Benign\n")
    with pytest.raises(RowError, match="line 3"):
        load_dataset(p, raw_schema(), on_error="abort")


def test_invalid_port_rejected(tmp_path):
    p = write(tmp_path, "1,a,70000,b,80,6,1,1,1,10,10,Benign\n")
    assert read_flows(p, raw_schema()).rejected[0].reason == "invalid src_port"


def test_schema_rejects_unknown_unit():
    with pytest.raises(SchemaError):
        raw_schema(duration_unit="min")


def test_schema_rejects_unmapped_field():
    cols = dict(zip(FIELDS, FIELDS))
    del cols["dst_bytes"]
    with pytest.raises(SchemaError) as exc:
        DatasetSchema(columns=cols)
    assert exc.value.column == "dst_bytes"


def test_schema_file_round_trip(tmp_path):
    schema = raw_schema(duration_unit="ms", label_map={"DoS Hulk": "DoS"}, bytes_include_headers=False, name="x")
    schema.to_file(tmp_path / "s.ini")
    back = DatasetSchema.from_file(tmp_path / "s.ini")
    assert back == schema


def test_header_exclusive_flag_is_metadata_only(tmp_path):
    p = write(tmp_path, "1,a,1,b,80,6,1,1,1,10,10,Benign\n")
    report = read_flows(p, raw_schema(bytes_include_headers=False))
    assert report.header_exclusive_bytes
    assert report.records[0].src_bytes == 10.0


def test_class_table():
    assert class_table([]) == {}
    recs = [flow(i) for i in range(3)] + [flow(4, label="DoS")]
    assert class_table(recs) == {"Benign": 3, "DoS": 1}


def test_class_table_matches_generator_request():
    profiles = [
        synth.benign(count=1000),
        synth.dos(count=50),
        synth.portscan(count=30),
    ]
    assert class_table(synth.generate(profiles, 60.0, seed=3)) == {"Benign": 1000, "DoS": 50, "PortScan": 30}


def test_canonical_round_trip(tmp_path):
    recs = synth.generate(synth.three_class(), 5.0, seed=1)
    write_records(tmp_path / "c.csv", recs)
    assert load_dataset(tmp_path / "c.csv") == recs


@given(st.permutations(list(range(12))))
def test_sorted_for_any_row_permutation(tmp_path_factory, order):
    ts = [0.5 * i for i in range(12)]
    body = "".join(f"{ts[i]},a,1,b,80,6,1,1,1,10,10,Benign\n" for i in order)
    p = write(tmp_path_factory.mktemp("perm"), body)
    out = [r.timestamp for r in load_dataset(p, raw_schema())]
    assert out == sorted(ts)


@given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=20))
def test_seconds_unit_is_identity(tmp_path_factory, durations):
    body = "".join(f"{i},a,1,b,80,6,{d!r},1,1,10,10,Benign\n" for i, d in enumerate(durations))
    p = write(tmp_path_factory.mktemp("unit"), body)
    assert [r.duration for r in load_dataset(p, raw_schema(duration_unit="s"))] == durations


@given(st.lists(st.sampled_from(["Benign", "DoS", "DoS Hulk", "junk", "PortScan"]), min_size=1, max_size=30))
def test_accepted_labels_are_canonical(tmp_path_factory, labels):
    body = "".join(f"{i},a,1,b,80,6,1,1,1,10,10,{lab}\n" for i, lab in enumerate(labels))
    p = write(tmp_path_factory.mktemp("lab"), body)
    recs = load_dataset(p, raw_schema(label_map={"DoS Hulk": "DoS"}))
    assert all(r.label in CANONICAL_CLASSES for r in recs)
    assert len(recs) == sum(lab != "junk" for lab in labels)


def test_no_sort_keeps_file_order(tmp_path):
    p = write(tmp_path, "".join(f"{t},a,1,b,80,6,1,1,1,10,10,Benign\n" for t in (3.0, 1.0)))
    assert [r.timestamp for r in load_dataset(p, raw_schema(), sort=False)] == [3.0, 1.0]
    assert np.all(np.diff([r.timestamp for r in load_dataset(p, raw_schema())]) >= 0)


def test_streaming_matches_whole_file(tmp_path):
    rows = "".join(f"{i},a{i % 3},1,b,80,6,{'x' if i % 7 == 3 else 1},1,1,10,10,Benign\n" for i in range(40))
    p = write(tmp_path, rows)
    rejected = []
    streamed = list(iter_flows(p, raw_schema(), rejected=rejected, chunk_rows=6))
    whole = read_flows(p, raw_schema(), sort=False)
    assert streamed == whole.records
    assert [(e.line, e.reason) for e in rejected] == [(e.line, e.reason) for e in whole.rejected]
    assert [e.line for e in rejected] == [5, 12, 19, 26, 33, 40]


def test_streaming_abort_and_header_check(tmp_path):
    p = write(tmp_path, "1,a,1,b,80,6,1,1,1,10,10,Benign\n2,a,1,b,80,6,-1,1,1,10,10,Benign\n")
    with pytest.raises(RowError, match="line 3"):
        list(iter_flows(p, raw_schema(), on_error="abort", chunk_rows=1))
    (tmp_path / "empty.csv").write_text("ts,sip\n")
    with pytest.raises(SchemaError):
        list(iter_flows(tmp_path / "empty.csv", raw_schema()))
    assert list(iter_flows(write(tmp_path, "", "header_only.csv"), raw_schema())) == []
