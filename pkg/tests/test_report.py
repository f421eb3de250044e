from __future__ import annotations

import csv
import json

import pytest

from mdswscan.pipeline import load_pipeline
from mdswscan.report import Format, emit, load_bundle
from mdswscan.runner import full_run

from .conftest import FIXTURE20, FIXTURE20_EXCLUSIONS, write_dump

TS = "2024-08-01T00:00:00+00:00"

INNOVATION_ROWS = [
    {"record_id": f"0694000000{i:04d}", "product_name": f"Innov-{i}", "generic_name": "肺结节CT图像辅助诊断软件",
     "description": "基于深度学习的辅助诊断", "classification_code_raw": "21-04-02",
     "registration_number_raw": f"国械注准2020321{i:04d}"}
    for i in range(6)
]


@pytest.fixture()
def innovation_run(tmp_path):
    archive = write_dump(tmp_path / "innov.zip", INNOVATION_ROWS)
    sidecar = tmp_path / "sidecar.csv"
    sidecar.write_text("key,field,value,note\n" + "".join(
        f"{r['registration_number_raw']},pathway,Innovation,\n" for r in INNOVATION_ROWS), encoding="utf-8")
    return full_run(archive, load_pipeline("paper_default"), tmp_path / "out", sidecar=sidecar, timestamp=TS)


def test_innovation_flow(innovation_run):
    assert innovation_run.bundle.alluvial_data == [
        {"source": "SaMD", "middle": "III", "target": "Innovation", "count": 6}]


def test_flow_conservation(paper_pipeline, tmp_path):
    run = full_run(FIXTURE20, paper_pipeline, None, FIXTURE20_EXCLUSIONS, timestamp=TS)
    flows = run.bundle.alluvial_data
    ai = [d for d in run.annotation.devices if d.ai_flag]
    assert sum(f["count"] for f in flows) == len(ai)
    for stage, key in (("software_kind", "source"), ("device_class", "middle"), ("pathway", "target")):
        for value in {f[key] for f in flows}:
            inflow = sum(f["count"] for f in flows if f[key] == value)
            assert inflow == sum(1 for d in ai if d.value(stage) == value)
    # as a two-layer graph: edges into each middle node carry as much as edges out of it
    from collections import Counter
    left, right = Counter(), Counter()
    for f in flows:
        left[f["source"], f["middle"]] += f["count"]
        right[f["middle"], f["target"]] += f["count"]
    for m in {f["middle"] for f in flows}:
        into = sum(n for (_, mid), n in left.items() if mid == m)
        out = sum(n for (mid, _), n in right.items() if mid == m)
        assert into == out == sum(1 for d in ai if d.value("device_class") == m)


def test_emit_twice_is_byte_identical(paper_pipeline, tmp_path):
    run = full_run(FIXTURE20, paper_pipeline, None, FIXTURE20_EXCLUSIONS, timestamp=TS)
    for fmt in Format:
        a = emit(run.bundle, fmt, tmp_path / "a")
        b = emit(run.bundle, fmt, tmp_path / "b")
        for pa, pb in zip(a, b):
            assert pa.read_bytes() == pb.read_bytes()


def test_round_trip(paper_pipeline, tmp_path):
    run = full_run(FIXTURE20, paper_pipeline, tmp_path, FIXTURE20_EXCLUSIONS, formats=(Format.JSON,), timestamp=TS)
    assert load_bundle(tmp_path) == run.bundle


def test_tables_match_populations(paper_pipeline):
    run = full_run(FIXTURE20, paper_pipeline, None, FIXTURE20_EXCLUSIONS, timestamp=TS)
    b = run.bundle
    b.check()
    assert b.metadata["populations"]["software"] == 13
    assert b.metadata["populations"]["ai"] == 2
    assert b.metadata["stage_counts"] == {"samd": 5, "simd": 8, "mdsw": 13, "aimd_candidates": 3}
    assert b.metadata["final_count"] == 2
    assert b.tables["origin_kind_ai"]["total"] == 13
    assert len(b.audit["exclusions_removed"]) == 1


def test_timestamp_only_in_metadata(paper_pipeline, tmp_path):
    full_run(FIXTURE20, paper_pipeline, tmp_path, FIXTURE20_EXCLUSIONS, timestamp=TS)
    assert TS in (tmp_path / "metadata.json").read_text(encoding="utf-8")
    for p in tmp_path.rglob("*"):
        if p.is_file() and p.name != "metadata.json":
            assert TS not in p.read_text(encoding="utf-8")


def test_map_keys_are_region_codes(innovation_run):
    m = innovation_run.bundle.map_data
    assert m["regions"] == [["100000", "National", 6]]
    assert m["national_class3_bucket"] == 6


def test_sidecar_audit(innovation_run):
    overrides = innovation_run.bundle.audit["overrides"]
    assert len(overrides) == 6 and {o["new"] for o in overrides} == {"Innovation"}


def test_empty_bundle_files_are_valid(tmp_path):
    archive = write_dump(tmp_path / "empty.zip", [])
    out = tmp_path / "out"
    run = full_run(archive, load_pipeline("paper_default"), out, timestamp=TS)
    assert run.bundle.devices == [] and run.bundle.alluvial_data == []
    json.loads((out / "report.json").read_text(encoding="utf-8"))
    json.loads((out / "metadata.json").read_text(encoding="utf-8"))
    with open(out / "alluvial_data.csv", encoding="utf-8", newline="") as f:
        assert list(csv.reader(f)) == [["source", "middle", "target", "count"]]
    with open(out / "tables" / "technique.csv", encoding="utf-8", newline="") as f:
        assert len(list(csv.reader(f))) == 1
    assert (out / "report.md").read_text(encoding="utf-8").startswith("#")
