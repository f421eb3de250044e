from __future__ import annotations

import zipfile
from collections import Counter

import pytest

from mdswscan.ingest import open_dataset
from mdswscan.oracle import NaiveOracle
from mdswscan._assets import asset_path
from mdswscan.scan import scan_archive
from mdswscan.synth import Recipe, answer_key_path, read_answer_key, synthesize_corpus


def test_recipe_proportions_exact(tmp_path):
    archive, key = synthesize_corpus({"rows": 1000, "samd": 0.1, "simd_kw": 0.2, "ai_kw": 0.05, "seed": 1},
                                     tmp_path / "c.zip")
    labels = read_answer_key(key)
    assert len(labels) == 1000
    tally = Counter(l for ls in labels.values() for l in ls)
    assert tally["samd"] == 100 and tally["simd"] == 200 and tally["mdsw"] == 300
    assert tally["aimd_candidates"] == 50
    assert sum(1 for ls in labels.values() if not ls) == 700


def test_floor_rounding():
    r = Recipe.from_doc({"rows": 999, "samd": 0.1, "simd_kw": 0.2, "ai_kw": 0.05})
    assert (r.n_samd, r.n_simd, r.n_ai) == (99, 199, 49)


def test_empty_recipe(tmp_path):
    archive, key = synthesize_corpus({"rows": 0}, tmp_path / "e.zip")
    assert read_answer_key(key) == {}
    assert list(open_dataset(archive)) == []


def test_recipe_validation():
    with pytest.raises(ValueError):
        Recipe.from_doc({"rows": 10, "samd": 0.7, "simd_kw": 0.5})
    with pytest.raises(ValueError):
        Recipe.from_doc({"rows": 10, "samd": 0.1, "simd_kw": 0.1, "ai_kw": 0.5})


def test_deterministic_and_multi_member(tmp_path):
    recipe = {"rows": 2500, "samd": 0.05, "simd_kw": 0.1, "ai_kw": 0.02, "seed": 9, "rows_per_member": 1000}
    a, _ = synthesize_corpus(recipe, tmp_path / "a.zip")
    b, _ = synthesize_corpus(recipe, tmp_path / "b.zip")
    assert a.read_bytes() == b.read_bytes()
    assert len(zipfile.ZipFile(a).namelist()) == 3
    assert answer_key_path(a) == tmp_path / "a.answer_key.tsv"


def test_answer_key_agrees_with_oracle(tmp_path):
    archive, key = synthesize_corpus(
        {"rows": 3000, "samd": 0.1, "simd_kw": 0.15, "ai_kw": 0.06, "seed": 4, "missing_id": 0.01,
         "malformed": 0.01},
        tmp_path / "c.zip",
    )
    oracle = NaiveOracle.from_file(asset_path("paper_default"))
    labels = read_answer_key(key)
    stream = open_dataset(archive)
    seen = 0
    for record in stream:
        assert oracle.memberships(record) == labels[record.record_id]
        seen += 1
    assert seen == 3000
    assert stream.stats.rows_skipped_malformed == 30


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("scan") / "c.zip"
    synthesize_corpus({"rows": 6000, "samd": 0.08, "simd_kw": 0.12, "ai_kw": 0.05, "seed": 12,
                       "malformed": 0.003, "missing_id": 0.003, "rows_per_member": 2500}, out)
    return out


def test_scan_matches_answer_key(corpus, paper_pipeline):
    outcome = scan_archive(corpus, paper_pipeline)
    labels = read_answer_key(answer_key_path(corpus))
    got = {m.record_id: m.stages for m in outcome.result.matches}
    assert got == {rid: ls for rid, ls in labels.items() if ls}
    st = outcome.stats
    assert st.rows_read == st.rows_emitted + st.rows_skipped_malformed
    assert st.rows_emitted == 6000 and st.rows_skipped_malformed == 18


@pytest.mark.parametrize("block", [1 << 10, 1 << 14])
def test_scan_independent_of_block_size(corpus, paper_pipeline, block):
    base = scan_archive(corpus, paper_pipeline)
    other = scan_archive(corpus, paper_pipeline, block_size=block)
    assert other.result.matches == base.result.matches
    assert other.result.counts == base.result.counts
    assert other.stats.to_doc() == base.stats.to_doc()


def test_scan_independent_of_workers(corpus, paper_pipeline):
    one = scan_archive(corpus, paper_pipeline, workers=1, block_size=1 << 16)
    two = scan_archive(corpus, paper_pipeline, workers=3, block_size=1 << 16)
    assert [(m.record_id, m.stages, m.provenance) for m in one.result.matches] == [
        (m.record_id, m.stages, m.provenance) for m in two.result.matches
    ]
    assert one.stats.to_doc() == two.stats.to_doc()
