from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

from notecards.clock import Clock, parse_instant
from notecards.ingest import (
    IngestError,
    SourceMeta,
    TextStore,
    derive_doc_id,
    ingest_corpus,
    make_document,
    mask_subjects,
    mask_token,
)

from conftest import utc

CLOCK = Clock(fixed=utc(2011, 11, 13))


def write_jsonl(path: Path, records: list[dict]) -> Path:
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record) + "\n")
    return path


def corpus_records() -> list[dict]:
    return [
        {
            "text": "He locks away expansion slots.",
            "source_uri": "bio://ch01",
            "timestamp": "2011-10-14T09:00:00Z",
            "subjects": ["steve"],
        },
        {
            "text": "He dictates white factory walls.",
            "source_uri": "bio://ch02",
            "timestamp": "2011-10-15T09:00:00Z",
            "subjects": ["steve"],
            "place": "the plant",
        },
        {
            "text": "He refuses flatly all trade-offs.",
            "source_uri": "bio://ch03",
            "subjects": ["steve"],
        },
    ]


def test_ingest_accepts_well_formed_records(tmp_path):
    corpus = write_jsonl(tmp_path / "c.jsonl", corpus_records())
    store = TextStore(tmp_path / "docs")
    summary = ingest_corpus([corpus], store, CLOCK)
    assert summary.accepted == 3
    assert summary.rejected == 0
    assert len(store) == 3


def test_reingest_is_a_noop(tmp_path):
    corpus = write_jsonl(tmp_path / "c.jsonl", corpus_records())
    store = TextStore(tmp_path / "docs")
    ingest_corpus([corpus], store, CLOCK)
    size_before = len(store)
    files_before = sorted(p.name for p in (tmp_path / "docs").glob("run-*.jsonl"))
    summary = ingest_corpus([corpus], store, CLOCK)
    assert len(store) == size_before
    assert summary.duplicates == 3
    # No new run file appears for an all-duplicate pass.
    assert sorted(p.name for p in (tmp_path / "docs").glob("run-*.jsonl")) == files_before


def test_malformed_record_rejected_without_aborting(tmp_path):
    records = corpus_records()[:2] + [{"source_uri": "bio://ch04"}]  # no text
    corpus = write_jsonl(tmp_path / "c.jsonl", records)
    store = TextStore(tmp_path / "docs")
    summary = ingest_corpus([corpus], store, CLOCK)
    assert summary.accepted == 2
    assert summary.rejected == 1


def test_unreadable_source_raises(tmp_path):
    store = TextStore(tmp_path / "docs")
    with pytest.raises(IngestError):
        ingest_corpus([tmp_path / "missing.jsonl"], store, CLOCK)


def test_plain_text_file_is_one_document(tmp_path):
    source = tmp_path / "memo.txt"
    source.write_text("He treasures psychedelic sessions.\r\nSecond line.", encoding="utf-8")
    store = TextStore(tmp_path / "docs")
    summary = ingest_corpus([source], store, CLOCK)
    assert summary.accepted == 1
    doc = store.list()[0]
    assert "\r" not in doc.text  # LF normalization
    assert doc.meta.format_tag == "plain"


def test_get_returns_identical_text(tmp_path):
    corpus = write_jsonl(tmp_path / "c.jsonl", corpus_records())
    store = TextStore(tmp_path / "docs")
    ingest_corpus([corpus], store, CLOCK)
    doc = store.list()[0]
    again = TextStore(tmp_path / "docs").get(doc.doc_id)
    assert again.text == doc.text
    assert again == doc


def test_get_unknown_doc_id(tmp_path):
    store = TextStore(tmp_path / "docs")
    with pytest.raises(IngestError):
        store.get("nope")


def test_list_empty_store(tmp_path):
    assert TextStore(tmp_path / "docs").list() == []


def test_list_time_filter_is_half_open(tmp_path):
    corpus = write_jsonl(tmp_path / "c.jsonl", corpus_records())
    store = TextStore(tmp_path / "docs")
    ingest_corpus([corpus], store, CLOCK)
    t1 = parse_instant("2011-10-14T09:00:00Z")
    t2 = parse_instant("2011-10-15T09:00:00Z")
    docs = store.list(time_range=(t1, t2))
    assert len(docs) == 1  # the doc stamped exactly t2 is excluded
    assert docs[0].meta.source_uri == "bio://ch01"


def test_list_source_prefix_filter(tmp_path):
    corpus = write_jsonl(tmp_path / "c.jsonl", corpus_records())
    store = TextStore(tmp_path / "docs")
    ingest_corpus([corpus], store, CLOCK)
    assert len(store.list(source_prefix="bio://ch0")) == 3
    assert store.list(source_prefix="log://") == []


def test_doc_id_is_stable_across_processes():
    doc_id = derive_doc_id(
        "He admits no middle ground.", "bio://ch07", parse_instant("2011-10-20T12:00:00Z")
    )
    # Name-based UUID; equal triples yield equal ids on any machine.
    assert doc_id == derive_doc_id(
        "He admits no middle ground.", "bio://ch07", parse_instant("2011-10-20T12:00:00Z")
    )
    assert doc_id == "5ab67dd0-d497-577d-a4d1-9ee2c57742d4"


def test_doc_id_distinguishes_the_triple():
    base = derive_doc_id("text", "uri", None)
    assert derive_doc_id("text2", "uri", None) != base
    assert derive_doc_id("text", "uri2", None) != base
    assert derive_doc_id("text", "uri", utc(2020, 1, 1)) != base


# ---------------------------------------------------------------------------
# Masking
# ---------------------------------------------------------------------------


def sample_doc(subjects=("steve",), text="Steve spurns regular showers."):
    meta = SourceMeta(source_uri="bio://ch05", subjects=tuple(subjects))
    return make_document(text, meta, ingested_at=CLOCK.now())


def test_masking_is_deterministic():
    doc = sample_doc()
    key = b"0123456789abcdef"
    first = mask_subjects(doc, key)
    second = mask_subjects(doc, key)
    assert first.meta.subjects == second.meta.subjects
    assert first.meta.subjects[0] != "steve"
    assert len(first.meta.subjects[0]) == 32  # fixed-length hex token
    int(first.meta.subjects[0], 16)


def test_masking_differs_across_keys():
    doc = sample_doc()
    a = mask_subjects(doc, b"0123456789abcdef")
    b = mask_subjects(doc, b"fedcba9876543210")
    assert a.meta.subjects != b.meta.subjects


def test_cross_key_collisions_absent():
    # 10^4 random (key, subject) pairs must all produce distinct tokens.
    rng = random.Random(301_4)
    seen = set()
    for _ in range(10_000):
        key = rng.randbytes(16)
        subject = f"subject-{rng.randrange(10**9)}"
        token = mask_token(key, subject)
        assert token not in seen
        seen.add(token)


def test_masking_empty_subjects_only_sets_flag():
    doc = sample_doc(subjects=())
    masked = mask_subjects(doc, b"0123456789abcdef")
    assert masked.masked is True
    assert masked.text == doc.text
    assert masked.meta.subjects == ()
    assert masked.doc_id == doc.doc_id


def test_masking_preserves_subject_count():
    doc = sample_doc(subjects=("steve", "woz"))
    masked = mask_subjects(doc, b"0123456789abcdef")
    assert len(masked.meta.subjects) == 2
    assert len(set(masked.meta.subjects)) == 2


def test_masking_replaces_configured_aliases_in_text():
    doc = sample_doc()
    masked = mask_subjects(
        doc, b"0123456789abcdef", aliases={"steve": ("Steve",)}
    )
    token = mask_token(b"0123456789abcdef", "steve")
    assert "Steve" not in masked.text
    assert token in masked.text
    # doc_id tracks the rewritten text.
    assert masked.doc_id != doc.doc_id


def test_short_key_rejected():
    with pytest.raises(IngestError):
        mask_subjects(sample_doc(), b"short")
