"""Append-then-update persistence for every trigger's lifecycle.

Each fired trigger gets exactly one entry, keyed by event id. The journal is
a single append-only file of checksummed JSON records; the in-memory index is
rebuilt on startup and a corrupt tail is truncated with a warning. Deletions
are hard removals mirrored to a sibling audit stream.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import zlib
from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone
from pathlib import Path

from .model import TriggerInstance

logger = logging.getLogger(__name__)

OUTCOMES = ("untaken", "taken", "skipped", "expired", "cooled", "duplicate")

CSV_COLUMNS = [
    "Event ID", "Timestamp", "Student", "Trigger", "Software", "Reviewer",
    "Feedback TXT", "Override Student", "Other Student", "Feedback REC",
    "Duration REC", "Start REC", "End",
]

NO_TEXT = "No text feedback"
NO_AUDIO = "No audio feedback"
NOT_AVAILABLE = "N/A"


def format_timestamp(ms: int | None) -> str:
    if ms is None:
        return NOT_AVAILABLE
    dt = datetime.fromtimestamp(ms / 1000, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S.") + f"{ms % 1000:03d}Z"


@dataclass
class MasterLogEntry:
    event_id: str
    timestamp: int
    student: str
    trigger_description: str
    software: str = ""
    outcome: str = "untaken"
    reviewer: str = ""
    feedback_text: str = ""
    override_student: str = ""
    other_students: list[str] = field(default_factory=list)
    # each segment: {"ref": str, "bytes": int, "duration_ms": int}
    recording_segments: list[dict] = field(default_factory=list)
    recording_start: int | None = None
    recording_end: int | None = None
    assigned_at: int | None = None
    completed_at: int | None = None

    def duration_rec_text(self) -> str:
        if not self.recording_segments:
            return NOT_AVAILABLE
        total_s = sum(seg["duration_ms"] for seg in self.recording_segments) / 1000
        return f"{total_s:.2f} seconds"

    def render_row(self) -> dict[str, str]:
        """One dashboard/CSV row, in display form."""
        refs = [seg["ref"] for seg in self.recording_segments if seg.get("ref")]
        return {
            "Event ID": self.event_id,
            "Timestamp": format_timestamp(self.timestamp),
            "Student": self.student,
            "Trigger": self.trigger_description,
            "Software": self.software,
            "Reviewer": self.reviewer,
            "Feedback TXT": self.feedback_text or NO_TEXT,
            "Override Student": self.override_student,
            "Other Student": ", ".join(self.other_students),
            "Feedback REC": ", ".join(refs) if refs else NO_AUDIO,
            "Duration REC": self.duration_rec_text(),
            "Start REC": format_timestamp(self.recording_start),
            "End": format_timestamp(self.recording_end),
        }


def _record_line(kind: str, data: dict) -> str:
    payload = json.dumps(data, sort_keys=True, separators=(",", ":"))
    crc = zlib.crc32(payload.encode("utf-8"))
    return json.dumps({"v": 1, "type": kind, "crc": crc, "data": data},
                      sort_keys=True, separators=(",", ":")) + "\n"


class MasterLogStore:
    """Single-writer store backed by an optional on-disk journal."""

    def __init__(self, journal_path: str | Path | None = None, fsync: bool = False):
        self._entries: dict[str, MasterLogEntry] = {}
        self._order: list[str] = []
        self._fsync = fsync
        self._journal_path = Path(journal_path) if journal_path else None
        self._fh = None
        if self._journal_path is not None:
            self._recover()
            self._fh = open(self._journal_path, "ab")

    # -- journal ---------------------------------------------------------

    def _recover(self) -> None:
        path = self._journal_path
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            path.touch()
            return
        good_bytes = 0
        with open(path, "rb") as fh:
            for raw in fh:
                try:
                    record = json.loads(raw)
                    data = record["data"]
                    payload = json.dumps(data, sort_keys=True, separators=(",", ":"))
                    if zlib.crc32(payload.encode("utf-8")) != record["crc"]:
                        raise ValueError("checksum mismatch")
                    self._apply(record["type"], data)
                except (ValueError, KeyError, TypeError):
                    logger.warning("truncating corrupt journal tail at byte %d", good_bytes)
                    break
                if not raw.endswith(b"\n"):
                    logger.warning("truncating partial journal record at byte %d", good_bytes)
                    break
                good_bytes += len(raw)
            else:
                return
        with open(path, "r+b") as fh:
            fh.truncate(good_bytes)

    def _apply(self, kind: str, data: dict) -> None:
        if kind == "entry":
            entry = MasterLogEntry(**data)
            if entry.event_id not in self._entries:
                self._order.append(entry.event_id)
            self._entries[entry.event_id] = entry
        elif kind == "update":
            event_id = data.pop("event_id")
            entry = self._entries.get(event_id)
            if entry is None:
                return
            for key, value in data.items():
                setattr(entry, key, value)
        elif kind == "delete":
            self._entries.pop(data["event_id"], None)
            if data["event_id"] in self._order:
                self._order.remove(data["event_id"])
        else:
            raise ValueError(f"unknown journal record type: {kind}")

    def _append(self, kind: str, data: dict) -> None:
        if self._fh is None:
            return
        self._fh.write(_record_line(kind, data).encode("utf-8"))
        self._fh.flush()
        if self._fsync:
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        if self._fh is not None:
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self._fh.close()
            self._fh = None

    # -- operations ------------------------------------------------------

    def record_fired(self, trigger: TriggerInstance,
                     outcome: str = "untaken") -> MasterLogEntry:
        """Record one submitted trigger. Idempotent on event_id."""
        existing = self._entries.get(trigger.event_id)
        if existing is not None:
            return existing
        entry = MasterLogEntry(
            event_id=trigger.event_id,
            timestamp=trigger.fired_at,
            student=trigger.student,
            trigger_description=trigger.description,
            software=trigger.software,
            outcome=outcome,
        )
        self._entries[entry.event_id] = entry
        self._order.append(entry.event_id)
        self._append("entry", asdict(entry))
        return entry

    def update_outcome(self, event_id: str, **fields) -> MasterLogEntry:
        entry = self._entries.get(event_id)
        if entry is None:
            raise KeyError(f"unknown event_id: {event_id}")
        for key, value in fields.items():
            if not hasattr(entry, key):
                raise KeyError(f"unknown masterlog field: {key}")
            setattr(entry, key, value)
        self._append("update", {"event_id": event_id, **fields})
        return entry

    def get(self, event_id: str) -> MasterLogEntry | None:
        return self._entries.get(event_id)

    def query(self, latest_n: int | None = 50,
              taken_filter: bool | None = None) -> list[MasterLogEntry]:
        """Entries newest first (timestamp desc, then event_id desc)."""
        entries = sorted(self._entries.values(),
                         key=lambda e: (e.timestamp, e.event_id), reverse=True)
        if taken_filter is True:
            entries = [e for e in entries if e.outcome == "taken"]
        elif taken_filter is False:
            entries = [e for e in entries if e.outcome != "taken"]
        if latest_n is not None:
            entries = entries[:latest_n]
        return entries

    def export_csv(self) -> str:
        """All entries, Figure-2.2 column order, RFC-4180, timestamp desc."""
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\r\n")
        writer.writeheader()
        for entry in self.query(latest_n=None):
            writer.writerow(entry.render_row())
        return buf.getvalue()

    def delete_entry(self, event_id: str) -> None:
        entry = self._entries.get(event_id)
        if entry is None:
            raise KeyError(f"unknown event_id: {event_id}")
        del self._entries[event_id]
        self._order.remove(event_id)
        self._append("delete", {"event_id": event_id})
        if self._journal_path is not None:
            audit_path = self._journal_path.with_suffix(
                self._journal_path.suffix + ".audit")
            with open(audit_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"deleted": event_id,
                                     "entry": asdict(entry)},
                                    sort_keys=True) + "\n")

    def stats(self) -> dict:
        by_outcome: dict[str, int] = {}
        by_student: dict[str, int] = {}
        by_description: dict[str, int] = {}
        for entry in self._entries.values():
            by_outcome[entry.outcome] = by_outcome.get(entry.outcome, 0) + 1
            by_student[entry.student] = by_student.get(entry.student, 0) + 1
            by_description[entry.trigger_description] = (
                by_description.get(entry.trigger_description, 0) + 1)
        return {"total": len(self._entries), "by_outcome": by_outcome,
                "by_student": by_student, "by_description": by_description}

    def __len__(self) -> int:
        return len(self._entries)


def parse_csv(text: str) -> list[dict[str, str]]:
    """Inverse of export_csv at the rendered-row level."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header: {reader.fieldnames}")
    return [dict(row) for row in reader]
