"""UTC instants and the pipeline clock.

Everything time-related in the stores flows through a :class:`Clock` so a
run can be pinned to a fixed "now" (the ``--now`` flag) and replayed
byte-identically. Instants serialize as RFC-3339 text in UTC.
"""

from __future__ import annotations

import time
from datetime import datetime, timezone

UTC = timezone.utc


def parse_instant(text: str) -> datetime:
    """Parse an RFC-3339 timestamp; naive values are taken as UTC."""
    cleaned = text.strip()
    if cleaned.endswith(("Z", "z")):
        cleaned = cleaned[:-1] + "+00:00"
    parsed = datetime.fromisoformat(cleaned)
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=UTC)
    return parsed.astimezone(UTC)


def format_instant(instant: datetime) -> str:
    """Render an aware datetime as ``YYYY-MM-DDTHH:MM:SSZ`` (UTC)."""
    normalized = instant.astimezone(UTC)
    if normalized.microsecond:
        return normalized.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return normalized.strftime("%Y-%m-%dT%H:%M:%SZ")


def epoch_seconds(instant: datetime) -> float:
    return instant.astimezone(UTC).timestamp()


class Clock:
    """Source of "now". A fixed clock also reports zero elapsed time."""

    def __init__(self, fixed: datetime | None = None):
        self._fixed = fixed.astimezone(UTC) if fixed is not None else None
        self._started = time.monotonic()

    @property
    def pinned(self) -> bool:
        return self._fixed is not None

    def now(self) -> datetime:
        if self._fixed is not None:
            return self._fixed
        return datetime.now(UTC)

    def elapsed(self) -> float:
        """Wall seconds since construction; 0.0 when pinned, by design."""
        if self._fixed is not None:
            return 0.0
        return time.monotonic() - self._started
