"""Masterlog durability, query surface, and CSV export shape."""

import json

from conftest import make_trigger
from qrf.masterlog import (
    CSV_COLUMNS,
    NO_AUDIO,
    NO_TEXT,
    NOT_AVAILABLE,
    MasterLogEntry,
    MasterLogStore,
    format_timestamp,
    parse_csv,
)


class TestLifecycle:
    def test_record_fired_is_idempotent(self):
        store = MasterLogStore()
        trigger = make_trigger("e1", fired_at=5000)
        first = store.record_fired(trigger)
        second = store.record_fired(trigger)
        assert first is second
        assert len(store) == 1
        assert first.outcome == "untaken"

    def test_outcome_transitions(self):
        store = MasterLogStore()
        store.record_fired(make_trigger("e1"))
        store.update_outcome("e1", outcome="taken", reviewer="iv",
                             feedback_text="test feedback", completed_at=9000)
        entry = store.get("e1")
        assert entry.outcome == "taken"
        assert entry.reviewer == "iv"

    def test_unknown_fields_and_ids_rejected(self):
        store = MasterLogStore()
        store.record_fired(make_trigger("e1"))
        for call in (lambda: store.update_outcome("nope", outcome="taken"),
                     lambda: store.update_outcome("e1", bogus_field=1)):
            try:
                call()
            except KeyError:
                continue
            raise AssertionError("expected KeyError")


class TestQuery:
    def fill(self):
        store = MasterLogStore()
        for i in range(60):
            store.record_fired(make_trigger(f"e{i:02d}", fired_at=i * 1000))
        store.update_outcome("e03", outcome="taken", reviewer="iv")
        return store

    def test_latest_50_newest_first(self):
        entries = self.fill().query()
        assert len(entries) == 50
        assert entries[0].event_id == "e59"
        timestamps = [e.timestamp for e in entries]
        assert timestamps == sorted(timestamps, reverse=True)

    def test_taken_filter(self):
        store = self.fill()
        assert [e.event_id for e in store.query(taken_filter=True)] == ["e03"]
        assert all(e.outcome != "taken"
                   for e in store.query(taken_filter=False))


class TestCsv:
    def test_column_sequence(self):
        header = MasterLogStore().export_csv().strip()
        assert header == ",".join(CSV_COLUMNS)
        assert CSV_COLUMNS[0] == "Event ID" and CSV_COLUMNS[-1] == "End"

    def test_never_assigned_row_markers(self):
        store = MasterLogStore()
        store.record_fired(make_trigger("e1", student="Random Student",
                                        description="Random check-in"))
        row = parse_csv(store.export_csv())[0]
        assert row["Feedback TXT"] == NO_TEXT
        assert row["Feedback REC"] == NO_AUDIO
        assert row["Duration REC"] == NOT_AVAILABLE
        assert row["Start REC"] == NOT_AVAILABLE
        assert row["End"] == NOT_AVAILABLE

    def test_full_row_field_for_field(self):
        store = MasterLogStore()
        store.record_fired(make_trigger(
            "2025-01-24-01:02PM-jl2how", fired_at=1737723721000,
            student="n3iTh4N",
            description="n3iTh4N used /wind command in No-Moon"))
        store.update_outcome(
            "2025-01-24-01:02PM-jl2how", outcome="taken", reviewer="neithan",
            feedback_text="feedback", override_student="Giraffe",
            other_students=["Petrichor"],
            recording_segments=[{"ref": "rec-abc", "bytes": 2048,
                                 "duration_ms": 428_540}],
            recording_start=1737723770000, recording_end=1737724198540)
        row = parse_csv(store.export_csv())[0]
        assert row == {
            "Event ID": "2025-01-24-01:02PM-jl2how",
            "Timestamp": "2025-01-24T13:02:01.000Z",
            "Student": "n3iTh4N",
            "Trigger": "n3iTh4N used /wind command in No-Moon",
            "Software": "test",
            "Reviewer": "neithan",
            "Feedback TXT": "feedback",
            "Override Student": "Giraffe",
            "Other Student": "Petrichor",
            "Feedback REC": "rec-abc",
            "Duration REC": "428.54 seconds",
            "Start REC": "2025-01-24T13:02:50.000Z",
            "End": "2025-01-24T13:09:58.540Z",
        }

    def test_crlf_line_endings(self):
        store = MasterLogStore()
        store.record_fired(make_trigger("e1"))
        assert store.export_csv().count("\r\n") == 2

    def test_fields_with_commas_round_trip(self):
        store = MasterLogStore()
        store.record_fired(make_trigger(
            "e1", description='used "wind", twice, loudly'))
        row = parse_csv(store.export_csv())[0]
        assert row["Trigger"] == 'used "wind", twice, loudly'


class TestTimestampRendering:
    def test_absent_timestamps_render_na(self):
        assert format_timestamp(None) == "N/A"

    def test_milliseconds_preserved(self):
        assert format_timestamp(1737723721042) == "2025-01-24T13:02:01.042Z"


class TestDurability:
    def make_journal(self, tmp_path):
        return tmp_path / "masterlog.jsonl"

    def test_restart_recovers_everything(self, tmp_path):
        path = self.make_journal(tmp_path)
        store = MasterLogStore(path)
        store.record_fired(make_trigger("e1"))
        store.record_fired(make_trigger("e2", student="Dragon",
                                        definition_id="d2"))
        store.update_outcome("e1", outcome="taken", reviewer="iv")
        store.close()

        recovered = MasterLogStore(path)
        assert len(recovered) == 2
        assert recovered.get("e1").outcome == "taken"
        assert recovered.get("e2").outcome == "untaken"
        recovered.close()

    def test_corrupt_tail_is_truncated(self, tmp_path):
        path = self.make_journal(tmp_path)
        store = MasterLogStore(path)
        store.record_fired(make_trigger("e1"))
        store.close()
        with open(path, "ab") as fh:
            fh.write(b'{"v": 1, "type": "entry", "crc": 0, "data"')  # torn write

        recovered = MasterLogStore(path)
        assert len(recovered) == 1
        recovered.record_fired(make_trigger("e2", student="Dragon"))
        recovered.close()
        # the journal is clean again after the post-recovery append
        final = MasterLogStore(path)
        assert {e.event_id for e in final.query()} == {"e1", "e2"}
        final.close()

    def test_checksum_mismatch_truncates(self, tmp_path):
        path = self.make_journal(tmp_path)
        store = MasterLogStore(path)
        store.record_fired(make_trigger("e1"))
        store.close()
        line = path.read_bytes()
        assert b'"Bear"' in line
        path.write_bytes(line.replace(b'"Bear"', b'"Evil"', 1))
        recovered = MasterLogStore(path)
        assert len(recovered) == 0
        recovered.close()

    def test_delete_is_audited(self, tmp_path):
        path = self.make_journal(tmp_path)
        store = MasterLogStore(path)
        store.record_fired(make_trigger("e1"))
        store.delete_entry("e1")
        store.close()

        assert len(MasterLogStore(path)) == 0
        audit_lines = (tmp_path / "masterlog.jsonl.audit") \
            .read_text().strip().splitlines()
        record = json.loads(audit_lines[0])
        assert record["deleted"] == "e1"
        assert record["entry"]["student"] == "Bear"


def test_stats_counts_by_outcome_student_description():
    store = MasterLogStore()
    store.record_fired(make_trigger("e1"))
    store.record_fired(make_trigger("e2", student="Dragon",
                                    definition_id="d2"))
    store.update_outcome("e2", outcome="expired")
    stats = store.stats()
    assert stats["total"] == 2
    assert stats["by_outcome"] == {"untaken": 1, "expired": 1}
    assert stats["by_student"]["Bear"] == 1


def test_entry_render_handles_multiple_segments():
    entry = MasterLogEntry(
        event_id="e", timestamp=0, student="Bear", trigger_description="d",
        recording_segments=[{"ref": "a", "bytes": 1, "duration_ms": 1500},
                            {"ref": "b", "bytes": 1, "duration_ms": 2040}])
    row = entry.render_row()
    assert row["Duration REC"] == "3.54 seconds"
    assert row["Feedback REC"] == "a, b"
