"""Priority dispatch of fired triggers to interviewers.

Holds the pending queue with expiration, per-student cooldown after completed
interviews, exclusive assignment (one student per interviewer at a time), and
the random check-in fallback. All mutations go through one lock so concurrent
callers observe a single serialized command stream.
"""

from __future__ import annotations

import logging
import threading
import uuid
from dataclasses import dataclass, field
from random import Random

from .masterlog import MasterLogStore
from .model import (
    DispatcherConfig,
    StateError,
    TriggerDefinition,
    TriggerInstance,
    is_expired,
    make_event_id,
    render_description,
)

logger = logging.getLogger(__name__)

SKIP_CODES = ("prioritization_off", "student_upset", "student_unavailable",
              "just_interviewed", "other")


@dataclass(frozen=True)
class SkipReason:
    code: str
    note: str = ""

    def __post_init__(self):
        if self.code not in SKIP_CODES:
            raise ValueError(f"unknown skip code: {self.code!r}")
        if self.code == "other" and not self.note.strip():
            raise ValueError("skip code 'other' requires a note")


@dataclass
class RecordingRef:
    ref: str
    byte_length: int
    duration_ms: int


@dataclass
class Assignment:
    assignment_id: str
    trigger: TriggerInstance
    interviewer: str
    assigned_at: int
    status: str = "pending"  # pending | recording | completed | skipped
    recording_start: int | None = None
    recording_end: int | None = None
    skip_reason: SkipReason | None = None
    feedback_text: str = ""
    override_student: str = ""
    other_students: list[str] = field(default_factory=list)
    recording_refs: list[RecordingRef] = field(default_factory=list)
    open_segment_start: int | None = None

    @property
    def closed(self) -> bool:
        return self.status in ("completed", "skipped")


@dataclass
class _Pending:
    trigger: TriggerInstance
    available_at: int  # fired_at plus any stagger jitter


def composite_key(trigger: TriggerInstance, completed_count: int, now: int):
    """Selection order: rank, then how often the student was already
    interviewed, then time left to expiry, then recency, then event id."""
    return (trigger.rank, completed_count, trigger.expires_at - now,
            -trigger.fired_at, trigger.event_id)


class Dispatcher:
    def __init__(self, definitions: list[TriggerDefinition],
                 config: DispatcherConfig, store: MasterLogStore,
                 rng: Random | None = None):
        self.config = config
        self.store = store
        self.rng = rng or Random()
        self.definitions = {d.definition_id: d for d in definitions}
        randoms = [d for d in definitions if d.rule.kind == "random_fallback"]
        self.random_definition = randoms[0] if randoms else None
        self._lock = threading.RLock()

        self._pending: dict[str, _Pending] = {}
        self._seen_event_ids: set[str] = set()
        self._cooldown_until: dict[str, int] = {}
        self._active_by_interviewer: dict[str, Assignment] = {}
        self._active_students: set[str] = set()
        self._assignments: dict[str, Assignment] = {}
        self._completed_counts: dict[str, int] = {}
        self._logged_in: set[str] = set()
        self.last_random_at: int = 0

    # -- roster state ------------------------------------------------------

    def set_logged_in(self, student: str, logged_in: bool) -> None:
        with self._lock:
            if logged_in:
                self._logged_in.add(student)
            else:
                self._logged_in.discard(student)

    def logged_in_students(self) -> set[str]:
        with self._lock:
            return set(self._logged_in)

    # -- queue ingestion -----------------------------------------------------

    def submit(self, trigger: TriggerInstance, now: int) -> str:
        """Returns one of: accepted, duplicate_event, duplicate_pending,
        student_cooling. Every non-replayed submission gets a masterlog entry."""
        with self._lock:
            if trigger.event_id in self._seen_event_ids:
                return "duplicate_event"
            self._seen_event_ids.add(trigger.event_id)

            if now < self._cooldown_until.get(trigger.student, 0):
                self.store.record_fired(trigger, outcome="cooled")
                return "student_cooling"

            pair = (trigger.student, trigger.definition_id)
            if self._pair_pending_or_active(pair):
                self.store.record_fired(trigger, outcome="duplicate")
                return "duplicate_pending"

            definition = self.definitions.get(trigger.definition_id)
            jitter = 0
            if definition is not None and definition.stagger_jitter_ms > 0:
                jitter = self.rng.randrange(definition.stagger_jitter_ms + 1)
            self._pending[trigger.event_id] = _Pending(
                trigger=trigger, available_at=trigger.fired_at + jitter)
            self.store.record_fired(trigger, outcome="untaken")
            return "accepted"

    def _pair_pending_or_active(self, pair: tuple[str, str]) -> bool:
        for pending in self._pending.values():
            if (pending.trigger.student, pending.trigger.definition_id) == pair:
                return True
        for assignment in self._active_by_interviewer.values():
            if (assignment.trigger.student, assignment.trigger.definition_id) == pair:
                return True
        return False

    def purge_expired(self, now: int) -> list[TriggerInstance]:
        with self._lock:
            removed = [p.trigger for p in self._pending.values()
                       if is_expired(p.trigger, now)]
            removed.sort(key=lambda t: (t.expires_at, t.event_id))
            for trigger in removed:
                del self._pending[trigger.event_id]
                self.store.update_outcome(trigger.event_id, outcome="expired")
            return removed

    # -- assignment ----------------------------------------------------------

    def _student_eligible(self, student: str, now: int) -> bool:
        return (now >= self._cooldown_until.get(student, 0)
                and student not in self._active_students)

    def eligible_pending(self, now: int, include_random: bool = True) -> list[TriggerInstance]:
        with self._lock:
            out = []
            for pending in self._pending.values():
                trigger = pending.trigger
                if now < pending.available_at or is_expired(trigger, now):
                    continue
                if not include_random and self.random_definition is not None \
                        and trigger.definition_id == self.random_definition.definition_id:
                    continue
                if self._student_eligible(trigger.student, now):
                    out.append(trigger)
            return out

    def request_next(self, interviewer: str, now: int) -> Assignment | None:
        with self._lock:
            if interviewer in self._active_by_interviewer:
                raise StateError(f"{interviewer} already holds an active assignment")
            self.purge_expired(now)
            candidates = self.eligible_pending(now)
            if not candidates:
                return None
            chosen = min(candidates, key=lambda t: composite_key(
                t, self._completed_counts.get(t.student, 0), now))
            del self._pending[chosen.event_id]
            assignment = Assignment(
                assignment_id=uuid.uuid4().hex,
                trigger=chosen, interviewer=interviewer, assigned_at=now)
            self._assignments[assignment.assignment_id] = assignment
            self._active_by_interviewer[interviewer] = assignment
            self._active_students.add(chosen.student)
            self.store.update_outcome(chosen.event_id, reviewer=interviewer,
                                      assigned_at=now)
            return assignment

    def active_assignment(self, interviewer: str) -> Assignment | None:
        with self._lock:
            return self._active_by_interviewer.get(interviewer)

    def get_assignment(self, assignment_id: str) -> Assignment:
        assignment = self._assignments.get(assignment_id)
        if assignment is None:
            raise StateError(f"unknown assignment: {assignment_id}")
        return assignment

    def _release(self, assignment: Assignment) -> None:
        self._active_by_interviewer.pop(assignment.interviewer, None)
        self._active_students.discard(assignment.trigger.student)

    def skip(self, assignment_id: str, reason: SkipReason, now: int) -> Assignment:
        with self._lock:
            assignment = self.get_assignment(assignment_id)
            if assignment.closed:
                raise StateError("assignment already completed or skipped")
            assignment.status = "skipped"
            assignment.skip_reason = reason
            self._release(assignment)
            note = f" {reason.note}" if reason.note else ""
            prefix = f"[skip:{reason.code}]{note}"
            feedback = (prefix + " " + assignment.feedback_text).strip() \
                if assignment.feedback_text else prefix
            self.store.update_outcome(
                assignment.trigger.event_id, outcome="skipped",
                feedback_text=feedback, completed_at=now)
            if self.config.requeue_skipped and not is_expired(assignment.trigger, now):
                self._pending[assignment.trigger.event_id] = _Pending(
                    trigger=assignment.trigger, available_at=now)
            return assignment

    def begin_recording(self, assignment_id: str, now: int) -> Assignment:
        with self._lock:
            assignment = self.get_assignment(assignment_id)
            if assignment.closed:
                raise StateError("cannot record on a closed assignment")
            if assignment.open_segment_start is not None:
                raise StateError("recording already in progress")
            if assignment.recording_start is None:
                assignment.recording_start = now
            assignment.open_segment_start = now
            assignment.status = "recording"
            return assignment

    def stop_recording(self, assignment_id: str, now: int,
                       blob_ref: str = "", byte_length: int = 0) -> Assignment:
        with self._lock:
            assignment = self.get_assignment(assignment_id)
            if assignment.open_segment_start is None:
                raise StateError("stop_recording without begin_recording")
            duration = now - assignment.open_segment_start
            assignment.recording_refs.append(RecordingRef(
                ref=blob_ref, byte_length=byte_length, duration_ms=duration))
            assignment.recording_end = now
            assignment.open_segment_start = None
            self.store.update_outcome(
                assignment.trigger.event_id,
                recording_segments=[{"ref": r.ref, "bytes": r.byte_length,
                                     "duration_ms": r.duration_ms}
                                    for r in assignment.recording_refs],
                recording_start=assignment.recording_start,
                recording_end=assignment.recording_end)
            return assignment

    def update_notes(self, assignment_id: str, text: str) -> Assignment:
        """Incremental note patch; last write wins."""
        with self._lock:
            assignment = self.get_assignment(assignment_id)
            if assignment.closed:
                raise StateError("cannot edit notes on a closed assignment")
            assignment.feedback_text = text
            return assignment

    def complete(self, assignment_id: str, now: int, feedback_text: str = "",
                 override_student: str = "",
                 other_students: list[str] | None = None) -> Assignment:
        with self._lock:
            assignment = self.get_assignment(assignment_id)
            if assignment.closed:
                raise StateError("assignment already completed or skipped")
            if assignment.open_segment_start is not None:
                raise StateError("stop the recording before completing")
            other_students = list(other_students or [])
            if feedback_text:
                assignment.feedback_text = feedback_text
            assignment.override_student = override_student
            assignment.other_students = other_students
            assignment.status = "completed"
            self._release(assignment)

            effective = override_student or assignment.trigger.student
            if override_student and override_student not in self.config.roster:
                # free-text field in the app; keep it but flag the mismatch
                logger.warning("override student %r not in roster", override_student)
            until = now + self.config.cooldown_ms
            for student in [effective, *other_students]:
                self._cooldown_until[student] = max(
                    self._cooldown_until.get(student, 0), until)
            self._completed_counts[effective] = \
                self._completed_counts.get(effective, 0) + 1

            self.store.update_outcome(
                assignment.trigger.event_id, outcome="taken",
                reviewer=assignment.interviewer,
                feedback_text=assignment.feedback_text,
                override_student=override_student,
                other_students=other_students,
                completed_at=now)
            return assignment

    # -- random fallback -------------------------------------------------------

    def maybe_random(self, now: int) -> TriggerInstance | None:
        """Emit a random check-in when nothing else is available.

        Fires only when no eligible non-random trigger is pending, the random
        interval has elapsed, and at least one logged-in student is outside
        cooldown, unassigned, and has no trigger already pending.
        """
        with self._lock:
            if self.random_definition is None:
                return None
            if now - self.last_random_at < self.config.random_interval_ms:
                return None
            if self.eligible_pending(now, include_random=False):
                return None
            pending_students = {p.trigger.student for p in self._pending.values()
                                if not is_expired(p.trigger, now)}
            eligible = sorted(
                s for s in self._logged_in
                if self._student_eligible(s, now) and s not in pending_students)
            if not eligible:
                return None
            student = self.rng.choice(eligible)
            definition = self.random_definition
            trigger = TriggerInstance(
                event_id=make_event_id(now, self.rng),
                fired_at=now,
                expires_at=now + definition.expiration_ms,
                student=student,
                definition_id=definition.definition_id,
                rank=definition.rank,
                description=render_description(definition, student),
                software="dispatcher")
            self.last_random_at = now
            return trigger

    # -- introspection ---------------------------------------------------------

    def pending_triggers(self) -> list[TriggerInstance]:
        with self._lock:
            return [p.trigger for p in self._pending.values()]

    def completed_count(self, student: str) -> int:
        with self._lock:
            return self._completed_counts.get(student, 0)

    def cooldown_until(self, student: str) -> int:
        with self._lock:
            return self._cooldown_until.get(student, 0)
