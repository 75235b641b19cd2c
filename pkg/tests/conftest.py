from __future__ import annotations

import json
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

from notecards.clock import parse_instant
from notecards.notes import Note
from notecards.ontology import Confidence, Intensity, load_ontology
from notecards.refine import RefinedNote

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "notecards" / "fixtures"

PINNED_NOW = parse_instant("2011-11-13T00:00:00Z")


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def ocpd_spec():
    return load_ontology(FIXTURES / "ocpd.json")


@pytest.fixture(scope="session")
def alcohol_spec():
    return load_ontology(FIXTURES / "alcohol.json")


@pytest.fixture(scope="session")
def jobs_rows() -> list[dict]:
    return json.loads((FIXTURES / "jobs_rows.json").read_text(encoding="utf-8"))


def utc(year, month, day, hour=0, minute=0, second=0) -> datetime:
    return datetime(year, month, day, hour, minute, second, tzinfo=timezone.utc)


def make_note(
    subject: str = "steve",
    action: tuple[str, str] = ("alcohol", "consume"),
    attributes: dict | None = None,
    intensity: Intensity = Intensity.RARE,
    confidence: Confidence = Confidence.LOW,
    start: datetime | None = None,
    end: datetime | None = None,
    provenance: tuple[str, ...] = ("chunk-0",),
    place: str | None = None,
    note_id: str | None = None,
    schema_version: int = 1,
) -> Note:
    attrs = tuple(sorted((attributes or {}).items()))
    if note_id is None:
        stamps = (
            start.isoformat() if start else "",
            end.isoformat() if end else "",
        )
        note_id = "n-test-" + str(abs(hash((subject, action, attrs, stamps, provenance, place))))
    return Note(
        note_id=note_id,
        subject=subject,
        action=action,
        attributes=attrs,
        intensity=intensity,
        confidence=confidence,
        time_range=(start, end),
        provenance=provenance,
        schema_version=schema_version,
        place=place,
    )


def passthrough(note: Note) -> RefinedNote:
    return RefinedNote(
        note=note,
        applied_rules=(),
        refined_id="rn-test-" + note.note_id,
        passthrough=True,
    )


def fixture_refined_rows(jobs_rows: list[dict]) -> list[RefinedNote]:
    """The 20 evidence rows as refined-note fixtures (one per row)."""
    records = []
    base = utc(2011, 10, 14)
    for i, row in enumerate(jobs_rows):
        note = make_note(
            subject="steve",
            action=(row["entity"], row["relationship"]),
            start=base + timedelta(days=i),
            end=base + timedelta(days=i),
            provenance=(f"fx-{row['o_code']}",),
            note_id=f"n-fx-{row['o_code']}",
        )
        records.append(
            RefinedNote(
                note=note,
                applied_rules=(),
                refined_id=f"rn-fx-{row['o_code']}",
                passthrough=True,
            )
        )
    return records
