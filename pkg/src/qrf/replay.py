"""Replay of a recorded trigger timeline against the dispatcher.

A trace file lists, at 5-second granularity, which named trigger fired for
which student, interleaved with interviewer actions (requests, recording
start/stop). Firings are batched to the dispatcher at the polling cadence;
each interviewer request is answered through the real priority comparator
and the full transcript (chosen assignment plus the rejected candidate set)
is returned for oracle comparison.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from itertools import groupby
from pathlib import Path
from random import Random

from .dispatch import Dispatcher, composite_key
from .masterlog import MasterLogStore
from .model import DispatcherConfig, RuleSpec, TriggerDefinition, TriggerInstance

INTERVIEWER = "interviewer"


@dataclass
class TraceRow:
    time_ms: int
    actor: str        # student name or "interviewer"
    action: str       # trigger name, or requests / starts recording / stops recording


@dataclass
class Transcript:
    requests: list[dict] = field(default_factory=list)


def parse_time(text: str) -> int:
    match = re.fullmatch(r"(\d+):(\d\d):(\d\d)", text.strip())
    if not match:
        raise ValueError(f"bad trace time: {text!r}")
    h, m, s = (int(g) for g in match.groups())
    return ((h * 60 + m) * 60 + s) * 1000


def parse_trace(text: str) -> list[TraceRow]:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split("|")]
        if len(parts) != 3:
            raise ValueError(f"trace line {lineno}: expected time|actor|action")
        rows.append(TraceRow(parse_time(parts[0]), parts[1], parts[2]))
    rows.sort(key=lambda r: r.time_ms)
    return rows


def load_trace(path: str | Path) -> list[TraceRow]:
    return parse_trace(Path(path).read_text(encoding="utf-8"))


def _slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", name.lower()).strip("-")


def replay_fixture(rows: list[TraceRow], ranks: dict[str, int],
                   ttl_ms: int = 180_000, cooldown_ms: int = 240_000,
                   poll_interval_ms: int = 15_000) -> Transcript:
    """Run the trace through a fresh dispatcher under the supplied ranks."""
    students = sorted({r.actor for r in rows if r.actor != INTERVIEWER})
    names = {r.action for r in rows if r.actor != INTERVIEWER}
    unknown = names - set(ranks)
    if unknown:
        raise ValueError(f"trace names missing from rank map: {sorted(unknown)}")

    definitions = [
        TriggerDefinition(definition_id=_slug(name), name=name,
                          rule=RuleSpec("count_in_window",
                                        {"event_kind": "tool_use",
                                         "window_s": 60, "threshold": 1}),
                          rank=rank, expiration_ms=ttl_ms,
                          description_template="{student}: " + name)
        for name, rank in sorted(ranks.items())]
    definitions.append(TriggerDefinition(
        definition_id="random", name="Random",
        rule=RuleSpec("random_fallback"),
        rank=max(ranks.values(), default=0) + 1,
        expiration_ms=ttl_ms, description_template="Random check-in"))

    config = DispatcherConfig(roster=tuple(students),
                              poll_interval_ms=poll_interval_ms,
                              default_expiration_ms=ttl_ms,
                              cooldown_ms=cooldown_ms)
    dispatcher = Dispatcher(definitions, config, MasterLogStore(), Random(0))
    for student in students:
        dispatcher.set_logged_in(student, True)

    start = rows[0].time_ms if rows else 0
    poll_anchor = start - (start % poll_interval_ms)
    batch: list[TriggerInstance] = []
    next_poll = poll_anchor
    transcript = Transcript()

    def flush_polls(up_to: int) -> None:
        # half-open windows: a firing at exactly the poll instant rides the
        # next poll, so nothing becomes assignable at its own firing instant
        nonlocal next_poll, batch
        while next_poll <= up_to:
            dispatcher.purge_expired(next_poll)
            due = [t for t in batch if t.fired_at < next_poll]
            batch = [t for t in batch if t.fired_at >= next_poll]
            for trigger in sorted(due, key=lambda t: (t.fired_at, t.event_id)):
                dispatcher.submit(trigger, next_poll)
            next_poll += poll_interval_ms

    indexed = list(enumerate(rows))
    for time_ms, group in groupby(indexed, key=lambda pair: pair[1].time_ms):
        group = list(group)
        # all firings at this instant enter the queue before any poll or
        # interviewer action at the same instant (poll windows are inclusive
        # of their right edge)
        for index, row in group:
            if row.actor == INTERVIEWER:
                continue
            batch.append(TriggerInstance(
                event_id=f"{time_ms // 1000}-{row.actor}-{_slug(row.action)}-{index}",
                fired_at=time_ms,
                expires_at=time_ms + ttl_ms,
                student=row.actor,
                definition_id=_slug(row.action),
                rank=ranks[row.action],
                description=f"{row.actor}: {row.action}",
                software="trace"))
        flush_polls(time_ms)
        for index, row in group:
            if row.actor != INTERVIEWER:
                continue
            _interviewer_action(dispatcher, transcript, row, index)

    return transcript


def _interviewer_action(dispatcher: Dispatcher, transcript: Transcript,
                        row: TraceRow, index: int) -> None:
    now = row.time_ms
    if row.action == "requests":
        dispatcher.purge_expired(now)
        candidates = sorted(
            dispatcher.eligible_pending(now),
            key=lambda t: composite_key(
                t, dispatcher.completed_count(t.student), now))
        assignment = dispatcher.request_next(INTERVIEWER, now)
        is_random = False
        if assignment is None:
            random_trigger = dispatcher.maybe_random(now)
            if random_trigger is not None:
                dispatcher.submit(random_trigger, now)
                assignment = dispatcher.request_next(INTERVIEWER, now)
                is_random = assignment is not None
        transcript.requests.append({
            "time_ms": now,
            "chosen": None if assignment is None
            else assignment.trigger.event_id,
            "student": None if assignment is None
            else assignment.trigger.student,
            "description": None if assignment is None
            else assignment.trigger.description,
            "is_random": is_random,
            "rejected": [t.event_id for t in candidates
                         if assignment is None
                         or t.event_id != assignment.trigger.event_id],
        })
    elif row.action == "starts recording":
        active = dispatcher.active_assignment(INTERVIEWER)
        if active is not None:
            dispatcher.begin_recording(active.assignment_id, now)
    elif row.action == "stops recording":
        # a stop with no active assignment closes an interview that began
        # before the trace window; deliberately a no-op
        active = dispatcher.active_assignment(INTERVIEWER)
        if active is not None:
            if active.open_segment_start is not None:
                dispatcher.stop_recording(active.assignment_id, now,
                                          blob_ref=f"trace-rec-{index}")
            dispatcher.complete(active.assignment_id, now)
    else:
        raise ValueError(f"unknown interviewer action: {row.action!r}")
