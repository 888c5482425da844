"""Rule evaluation over the learning-system activity stream.

The engine ingests activity events, keeps per-student sliding windows and
state trackers, and on each poll emits trigger instances for every
(student, definition) whose condition holds, guarded by a per-pair
re-fire suppression window.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from random import Random

from .model import (
    EVENT_KINDS,
    DispatcherConfig,
    NpcSpec,
    RegionSpec,
    TriggerDefinition,
    TriggerInstance,
    make_event_id,
    render_description,
)

logger = logging.getLogger(__name__)

_REQUIRED_ATTRS = {
    "position": ("x", "y", "z"),
    "block_place": ("block_type",),
    "block_destroy": ("block_type",),
    "tool_use": ("tool_id",),
    "npc_interact": ("npc_id",),
    "world_enter": ("world_id",),
    "observation": (),
    "stop": (),
    "login": (),
    "logout": (),
}

# An npc_interact streak is considered continuous while gaps stay under this.
INTERACTION_CONTINUATION_MS = 30_000

# A student parked within this radius for this long counts as one stop.
STOP_RADIUS_BLOCKS = 0.5
STOP_DWELL_MS = 2_000


@dataclass(frozen=True)
class ActivityEvent:
    ts: int
    student: str
    kind: str
    attrs: dict = field(default_factory=dict)

    def check(self) -> list[str]:
        problems = []
        if self.kind not in EVENT_KINDS:
            return [f"unknown event kind: {self.kind!r}"]
        for name in _REQUIRED_ATTRS[self.kind]:
            if name not in self.attrs:
                problems.append(f"{self.kind} event missing attr {name!r}")
        return problems

    def dedup_key(self):
        return (self.ts, self.student, self.kind,
                tuple(sorted((k, _hashable(v)) for k, v in self.attrs.items())))


def _hashable(value):
    return tuple(value) if isinstance(value, list) else value


def _matches(attrs: dict, flt: dict | None) -> bool:
    if not flt:
        return True
    return all(attrs.get(k) == v for k, v in flt.items())


def _dist(a: tuple, b: tuple) -> float:
    return math.dist(a, b)


def _box_distance(pos: tuple, region: RegionSpec) -> float:
    deltas = [max(lo - c, 0, c - hi) for lo, c, hi in
              zip(region.min_corner, pos, region.max_corner)]
    return math.sqrt(sum(d * d for d in deltas))


@dataclass
class _StoredEvent:
    ts: int
    attrs: dict
    world: str | None
    pos: tuple | None


class DetectionState:
    """Mutable per-session engine state. Owned by one DetectionEngine."""

    def __init__(self):
        self.last_event_ts: dict[tuple[str, str], int] = {}
        self.buffers: dict[tuple[str, str], deque[_StoredEvent]] = {}
        self.last_fire: dict[tuple[str, str], int] = {}
        self.position: dict[str, tuple] = {}
        self.world: dict[str, str] = {}
        self.logged_in: set[str] = set()
        self.login_ts: dict[str, int] = {}
        self.session_start: int | None = None
        self.worlds_entered: dict[str, set[str]] = {}
        self.kind_totals: dict[tuple[str, str], int] = {}
        self.cumulative: dict[tuple[str, str], int] = {}
        self.world_tool_counts: dict[tuple[str, str], int] = {}
        # per (definition_id, student): timestamp the tracked state was entered
        self.in_state_since: dict[tuple[str, str], int] = {}
        self.last_interact: dict[tuple[str, str], int] = {}
        self.range_interacted: set[tuple[str, str]] = set()
        # stop synthesis
        self.stop_anchor: dict[str, tuple[int, tuple]] = {}
        self.stop_emitted: set[str] = set()
        self.saw_real_stop = False
        # bookkeeping
        self.max_ts: int = 0
        self.dropped_out_of_order = 0
        self.seen_keys: dict = {}


class DetectionEngine:
    def __init__(self, definitions: list[TriggerDefinition],
                 config: DispatcherConfig,
                 regions: list[RegionSpec] = (),
                 npcs: list[NpcSpec] = (),
                 software: str = "",
                 rng: Random | None = None,
                 synthesize_stops: bool = True):
        self.definitions = [d for d in definitions
                            if d.rule.kind != "random_fallback"]
        self.config = config
        self.software = software
        self.rng = rng or Random()
        self.synthesize_stops = synthesize_stops
        self.regions = {r.region_id: r for r in regions}
        self.npcs = {n.npc_id: n for n in npcs}
        self.state = DetectionState()

        # widest window per event kind, for buffer trimming
        self._window_ms: dict[str, int] = {}
        self._cumulative_defs = []
        self._duration_defs = []
        self._proximity_defs = []
        for d in self.definitions:
            p = d.rule.params
            kind = d.rule.kind
            if kind in ("count_in_window", "count_below_in_window", "recency",
                        "contextual_near", "inactivity_window"):
                ek = p["event_kind"]
                w = int(p["window_s"] * 1000)
                self._window_ms[ek] = max(self._window_ms.get(ek, 0), w)
            elif kind == "cumulative_count":
                self._cumulative_defs.append(d)
            elif kind == "duration_in_state":
                self._duration_defs.append(d)
            elif kind == "proximity_sustained":
                self._proximity_defs.append(d)

    # -- ingestion -------------------------------------------------------

    def ingest_event(self, event: ActivityEvent) -> bool:
        """Feed one activity record. Returns False when the event is dropped
        (invalid, duplicate, or too far out of order)."""
        s = self.state
        problems = event.check()
        if problems:
            logger.warning("rejected event: %s", "; ".join(problems))
            return False
        if event.ts < s.max_ts - self.config.reorder_tolerance_ms:
            s.dropped_out_of_order += 1
            return False
        key = event.dedup_key()
        if key in s.seen_keys:
            return False
        s.seen_keys[key] = event.ts
        if len(s.seen_keys) > 10_000:
            cutoff = s.max_ts - self.config.reorder_tolerance_ms
            s.seen_keys = {k: t for k, t in s.seen_keys.items() if t >= cutoff}

        s.max_ts = max(s.max_ts, event.ts)
        if s.session_start is None:
            s.session_start = event.ts

        student, kind, ts = event.student, event.kind, event.ts
        s.last_event_ts[(student, kind)] = ts

        if kind == "login":
            s.logged_in.add(student)
            s.login_ts[student] = ts
            self._update_proximity(ts)
        elif kind == "logout":
            s.logged_in.discard(student)
            self._update_proximity(ts)
        elif kind == "world_enter":
            world = event.attrs["world_id"]
            s.world[student] = world
            s.worlds_entered.setdefault(student, set()).add(world)
            # positions from the previous world are stale
            s.position.pop(student, None)
            self._update_proximity(ts)
            self._update_region_states(student, ts)
        elif kind == "position":
            pos = (float(event.attrs["x"]), float(event.attrs["y"]),
                   float(event.attrs["z"]))
            s.position[student] = pos
            if "world" in event.attrs:
                s.world[student] = event.attrs["world"]
                s.worlds_entered.setdefault(student, set()).add(event.attrs["world"])
            self._update_proximity(ts)
            self._update_region_states(student, ts)
            self._maybe_synthesize_stop(student, ts, pos)
        elif kind == "stop":
            s.saw_real_stop = True

        world = event.attrs.get("world", s.world.get(student))
        stored = _StoredEvent(ts=ts, attrs=dict(event.attrs), world=world,
                              pos=s.position.get(student))
        window = self._window_ms.get(kind)
        if window is not None:
            buf = s.buffers.setdefault((student, kind), deque())
            buf.append(stored)
            while buf and buf[0].ts < ts - window:
                buf.popleft()

        s.kind_totals[(student, kind)] = s.kind_totals.get((student, kind), 0) + 1
        for d in self._cumulative_defs:
            p = d.rule.params
            if kind == p["event_kind"] and _matches(event.attrs, p.get("filter")):
                ck = (student, d.definition_id)
                s.cumulative[ck] = s.cumulative.get(ck, 0) + 1

        if kind == "tool_use":
            if world is not None:
                wk = (student, world)
                s.world_tool_counts[wk] = s.world_tool_counts.get(wk, 0) + 1

        if kind == "npc_interact":
            self._update_interaction_states(student, event.attrs["npc_id"], ts)

        return True

    def _maybe_synthesize_stop(self, student: str, ts: int, pos: tuple) -> None:
        if not self.synthesize_stops or self.state.saw_real_stop:
            return
        s = self.state
        anchor = s.stop_anchor.get(student)
        if anchor is None or _dist(anchor[1], pos) > STOP_RADIUS_BLOCKS:
            s.stop_anchor[student] = (ts, pos)
            s.stop_emitted.discard(student)
            return
        if ts - anchor[0] >= STOP_DWELL_MS and student not in s.stop_emitted:
            s.stop_emitted.add(student)
            s.last_event_ts[(student, "stop")] = ts
            window = self._window_ms.get("stop")
            if window is not None:
                buf = s.buffers.setdefault((student, "stop"), deque())
                buf.append(_StoredEvent(ts=ts, attrs={}, world=s.world.get(student),
                                        pos=pos))
                while buf and buf[0].ts < ts - window:
                    buf.popleft()
            s.kind_totals[(student, "stop")] = \
                s.kind_totals.get((student, "stop"), 0) + 1

    def _update_proximity(self, ts: int) -> None:
        """Refresh isolated-since trackers for every proximity definition."""
        s = self.state
        for d in self._proximity_defs:
            threshold = d.rule.params["min_distance_blocks"]
            for student in s.logged_in:
                pos = s.position.get(student)
                if pos is None:
                    s.in_state_since.pop((d.definition_id, student), None)
                    continue
                world = s.world.get(student)
                peer_dists = [
                    _dist(pos, s.position[o]) for o in s.logged_in
                    if o != student and o in s.position
                    and s.world.get(o) == world]
                isolated = not peer_dists or min(peer_dists) > threshold
                key = (d.definition_id, student)
                if isolated:
                    s.in_state_since.setdefault(key, ts)
                else:
                    s.in_state_since.pop(key, None)

    def _update_region_states(self, student: str, ts: int) -> None:
        s = self.state
        pos = s.position.get(student)
        world = s.world.get(student)
        for d in self._duration_defs:
            p = d.rule.params
            key = (d.definition_id, student)
            if p["state_kind"] == "region":
                region = self.regions.get(p["target_id"])
                inside = (region is not None and pos is not None
                          and world is not None and region.contains(world, pos))
                if inside:
                    s.in_state_since.setdefault(key, ts)
                else:
                    s.in_state_since.pop(key, None)
            elif p["state_kind"] == "npc_range":
                npc = self.npcs.get(p["target_id"])
                radius = p.get("radius_blocks", 5)
                inside = (npc is not None and pos is not None
                          and s.world.get(student) == npc.world_id
                          and _dist(pos, npc.pos) <= radius)
                if inside:
                    if key not in s.in_state_since:
                        s.in_state_since[key] = ts
                        s.range_interacted.discard(key)
                else:
                    s.in_state_since.pop(key, None)
                    s.range_interacted.discard(key)

    def _update_interaction_states(self, student: str, npc_id: str, ts: int) -> None:
        s = self.state
        for d in self._duration_defs:
            p = d.rule.params
            if p["target_id"] != npc_id:
                continue
            key = (d.definition_id, student)
            if p["state_kind"] == "npc_interact":
                last = s.last_interact.get(key)
                if last is None or ts - last > INTERACTION_CONTINUATION_MS:
                    s.in_state_since[key] = ts
                s.last_interact[key] = ts
            elif p["state_kind"] == "npc_range":
                if key in s.in_state_since:
                    s.range_interacted.add(key)

    # -- evaluation ------------------------------------------------------

    def _window_events(self, student: str, event_kind: str, window_ms: int,
                       now: int, flt: dict | None) -> list[_StoredEvent]:
        buf = self.state.buffers.get((student, event_kind), ())
        return [e for e in buf
                if now - window_ms <= e.ts <= now and _matches(e.attrs, flt)]

    def eval_rule(self, rule, student: str, now: int) -> bool:
        """Pure with respect to (rule, student, state, now)."""
        s = self.state
        p = rule.params
        kind = rule.kind

        if kind == "inactivity_window":
            window_ms = int(p["window_s"] * 1000)
            last = s.last_event_ts.get((student, p["event_kind"]))
            if last is None:
                last = s.login_ts.get(student, s.session_start or now)
            return now - last > window_ms

        if kind == "count_in_window":
            window_ms = int(p["window_s"] * 1000)
            events = self._window_events(student, p["event_kind"], window_ms,
                                         now, p.get("filter"))
            return len(events) >= p["threshold"]

        if kind == "count_below_in_window":
            window_ms = int(p["window_s"] * 1000)
            login = s.login_ts.get(student)
            if login is None or now - login < window_ms:
                return False
            events = self._window_events(student, p["event_kind"], window_ms,
                                         now, p.get("filter"))
            return len(events) < p["threshold"]

        if kind == "duration_in_state":
            key = (rule_def_id(rule, self), student)
            since = s.in_state_since.get(key)
            if since is None:
                return False
            if p["state_kind"] == "npc_interact":
                last = s.last_interact.get(key, since)
                if now - last > INTERACTION_CONTINUATION_MS:
                    return False
            if p["state_kind"] == "npc_range" and p.get("require_no_interaction"):
                if key in s.range_interacted:
                    return False
            return now - since >= int(p["min_duration_s"] * 1000)

        if kind == "proximity_sustained":
            key = (rule_def_id(rule, self), student)
            since = s.in_state_since.get(key)
            return (since is not None
                    and now - since >= int(p["min_duration_s"] * 1000))

        if kind == "recency":
            window_ms = int(p["window_s"] * 1000)
            events = self._window_events(student, p["event_kind"], window_ms,
                                         now, p.get("filter"))
            return bool(events)

        if kind == "cumulative_count":
            key = (student, rule_def_id(rule, self))
            return s.cumulative.get(key, 0) >= p["threshold"]

        if kind == "contextual_near":
            window_ms = int(p["window_s"] * 1000)
            radius = p["radius_blocks"]
            events = self._window_events(student, p["event_kind"], window_ms,
                                         now, p.get("filter"))
            for e in events:
                if e.pos is None:
                    continue
                for target in p["targets"]:
                    if not _matches(e.attrs, target.get("match")):
                        continue
                    if p["target_type"] == "region":
                        region = self.regions.get(target["id"])
                        if (region is not None and e.world == region.world_id
                                and _box_distance(e.pos, region) <= radius):
                            return True
                    else:
                        npc = self.npcs.get(target["id"])
                        if (npc is not None and e.world == npc.world_id
                                and _dist(e.pos, npc.pos) <= radius):
                            return True
            return False

        if kind == "comparative_lead":
            world = s.world.get(student)
            if world is None:
                return False
            mine = s.world_tool_counts.get((student, world), 0)
            others = [s.world_tool_counts.get((o, world), 0)
                      for o in s.logged_in if o != student
                      and s.world.get(o) == world]
            best = max(others, default=0)
            if p.get("literal_inequality"):
                return mine + p["lead"] > best
            return mine >= best + p["lead"]

        if kind == "multi_scope_absence":
            worlds = s.worlds_entered.get(student, set())
            if len(worlds) < p["min_worlds"]:
                return False
            return s.kind_totals.get((student, p["event_kind"]), 0) == 0

        raise ValueError(f"cannot evaluate rule kind {kind!r}")

    # -- polling ---------------------------------------------------------

    def poll(self, now: int) -> list[TriggerInstance]:
        """Evaluate all definitions for all logged-in roster students.

        Deterministic order: roster order crossed with definition order.
        Re-fires of the same (student, definition) pair are suppressed until
        strictly more than suppression_ms has elapsed since the last fire.
        """
        s = self.state
        roster = self.config.roster or tuple(sorted(s.logged_in))
        fired = []
        for student in roster:
            if student not in s.logged_in:
                continue
            for definition in self.definitions:
                key = (student, definition.definition_id)
                last = s.last_fire.get(key)
                if last is not None and now - last <= definition.suppression_ms:
                    continue
                if not self.eval_rule(definition.rule, student, now):
                    continue
                s.last_fire[key] = now
                fired.append(TriggerInstance(
                    event_id=make_event_id(now, self.rng),
                    fired_at=now,
                    expires_at=now + definition.expiration_ms,
                    student=student,
                    definition_id=definition.definition_id,
                    rank=definition.rank,
                    description=render_description(definition, student),
                    software=self.software))
        return fired


def rule_def_id(rule, engine: DetectionEngine) -> str:
    """Stateful rule kinds key their trackers by owning definition id."""
    for d in engine.definitions:
        if d.rule is rule:
            return d.definition_id
    # rule evaluated outside a registered definition (tests): key by identity
    return f"anonymous-{id(rule)}"
