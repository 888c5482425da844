"""Discrete-event classroom simulator on a virtual clock.

Synthesizes activity streams from student behavior profiles, drives the full
detection -> dispatch -> masterlog pipeline in-process, models interviewer
agents, and reports design metrics. Deterministic for a fixed seed.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from random import Random

from .dispatch import SKIP_CODES, Dispatcher, SkipReason
from .engine import ActivityEvent, DetectionEngine
from .masterlog import MasterLogStore
from .model import (
    DispatcherConfig,
    NpcSpec,
    RegionSpec,
    TriggerDefinition,
    TriggerInstance,
)

POSITION_SAMPLE_MS = 5_000
EVENT_RATE_KINDS = ("block_place", "block_destroy", "tool_use",
                    "npc_interact", "observation")


@dataclass
class StudentProfile:
    student: str
    rates_per_min: dict[str, float] = field(default_factory=dict)
    move_speed: float = 1.0          # blocks per second
    stop_prob: float = 0.1           # chance of pausing at a waypoint
    sociability: float = 20.0        # target mean distance to nearest peer

    def check(self) -> list[str]:
        problems = []
        if any(r < 0 for r in self.rates_per_min.values()):
            problems.append(f"{self.student}: rates must be >= 0")
        if self.move_speed < 0:
            problems.append(f"{self.student}: move_speed must be >= 0")
        return problems


@dataclass
class InterviewerAgent:
    name: str
    interview_median_s: float = 120.0
    interview_sigma: float = 0.4
    walk_delay_s: float = 15.0
    skip_prob: float = 0.0
    skip_code: str = "student_unavailable"

    def check(self) -> list[str]:
        problems = []
        if self.interview_median_s <= 0:
            problems.append(f"{self.name}: interview_median_s must be > 0")
        if not 0 <= self.skip_prob <= 1:
            problems.append(f"{self.name}: skip_prob must be in [0, 1]")
        if self.skip_code not in SKIP_CODES:
            problems.append(f"{self.name}: unknown skip code {self.skip_code!r}")
        return problems


@dataclass
class Scenario:
    profiles: list[StudentProfile]
    agents: list[InterviewerAgent]
    definitions: list[TriggerDefinition]
    config: DispatcherConfig
    horizon_ms: int
    seed: int = 0
    regions: list[RegionSpec] = field(default_factory=list)
    npcs: list[NpcSpec] = field(default_factory=list)
    world_id: str = "world-1"

    def check(self) -> list[str]:
        problems = []
        if self.horizon_ms <= 0:
            problems.append("horizon_ms must be > 0")
        for p in self.profiles:
            problems += p.check()
        for a in self.agents:
            problems += a.check()
        return problems


@dataclass
class SimReport:
    seed: int
    horizon_ms: int
    per_definition: dict[str, dict[str, int]]
    per_student_interviews: dict[str, int]
    interviewer_idle_fraction: dict[str, float]
    assignment_latencies_ms: list[int]
    emission_times_ms: list[int]
    outcome_totals: dict[str, int]
    masterlog_rows: list[dict]
    cooldown_violations: int

    @property
    def min_interviews(self) -> int:
        return min(self.per_student_interviews.values(), default=0)

    @property
    def max_interviews(self) -> int:
        return max(self.per_student_interviews.values(), default=0)

    def max_inter_emission_gap_ms(self) -> int:
        times = sorted(self.emission_times_ms)
        if len(times) < 2:
            return self.horizon_ms
        return max(b - a for a, b in zip(times, times[1:]))

    def conservation_holds(self) -> bool:
        """Every fired trigger reached exactly one outcome bucket."""
        total = sum(counts.get("fired", 0)
                    for counts in self.per_definition.values())
        return total == sum(self.outcome_totals.values())

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "horizon_ms": self.horizon_ms,
            "per_definition": self.per_definition,
            "per_student_interviews": self.per_student_interviews,
            "interviewer_idle_fraction": self.interviewer_idle_fraction,
            "assignment_latencies_ms": self.assignment_latencies_ms,
            "emission_times_ms": self.emission_times_ms,
            "outcome_totals": self.outcome_totals,
            "cooldown_violations": self.cooldown_violations,
            "masterlog_rows": self.masterlog_rows,
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    def summary_table(self) -> str:
        lines = ["definition            fired  taken  skipped  expired  cooled  dup"]
        for name in sorted(self.per_definition):
            c = self.per_definition[name]
            lines.append(f"{name:<20} {c.get('fired', 0):>6} {c.get('taken', 0):>6} "
                         f"{c.get('skipped', 0):>8} {c.get('expired', 0):>8} "
                         f"{c.get('cooled', 0):>7} {c.get('duplicate', 0):>4}")
        lines.append("")
        lines.append("student interviews: " + ", ".join(
            f"{s}={n}" for s, n in sorted(self.per_student_interviews.items())))
        lines.append(f"max inter-emission gap: "
                     f"{self.max_inter_emission_gap_ms() / 1000:.1f} s")
        lines.append(f"cooldown violations: {self.cooldown_violations}")
        return "\n".join(lines)


class _Sim:
    """One simulation run. Time is virtual epoch milliseconds from 0."""

    def __init__(self, scenario: Scenario):
        problems = scenario.check()
        if problems:
            raise ValueError("invalid scenario: " + "; ".join(problems))
        self.sc = scenario
        self.rng = Random(scenario.seed)
        self.store = MasterLogStore()
        self.dispatcher = Dispatcher(scenario.definitions, scenario.config,
                                     self.store, Random(scenario.seed + 1))
        self.engine = DetectionEngine(scenario.definitions, scenario.config,
                                      scenario.regions, scenario.npcs,
                                      software="classroom-sim",
                                      rng=Random(scenario.seed + 2))
        self.heap: list = []
        self.seq = 0
        self.positions: dict[str, list[float]] = {}
        self.waypoints: dict[str, list[float]] = {}
        self.agent_free: dict[str, bool] = {a.name: True for a in scenario.agents}
        self.emissions: list[int] = []
        self.latencies: list[int] = []
        self.fired_by_def: dict[str, int] = {}
        self.def_of_event: dict[str, str] = {}
        self.rec_counter = 0

    def push(self, ts: int, action, payload=None) -> None:
        self.seq += 1
        heapq.heappush(self.heap, (ts, self.seq, action, payload))

    # -- student behavior ----------------------------------------------

    def _schedule_profile_events(self, profile: StudentProfile) -> None:
        for kind in EVENT_RATE_KINDS:
            rate = profile.rates_per_min.get(kind, 0.0)
            if rate > 0:
                delay = self.rng.expovariate(rate / 60.0) * 1000
                self.push(int(delay), "student_event", (profile, kind))

    def _event_attrs(self, profile: StudentProfile, kind: str) -> dict:
        if kind in ("block_place", "block_destroy"):
            return {"block_type": self.rng.choice(
                ["red_stone", "blue_ice", "end_rod", "dirt"])}
        if kind == "tool_use":
            return {"tool_id": self.rng.choice(
                ["gravity", "pressure", "atmosphere", "thermometer"])}
        if kind == "npc_interact":
            npc_ids = [n.npc_id for n in self.sc.npcs] or ["npc-guide"]
            return {"npc_id": self.rng.choice(npc_ids)}
        return {}

    def _move(self, profile: StudentProfile, now: int) -> None:
        pos = self.positions[profile.student]
        target = self.waypoints[profile.student]
        step = profile.move_speed * (POSITION_SAMPLE_MS / 1000)
        d = math.dist(pos, target)
        if d <= step:
            pos[:] = target
            if self.rng.random() >= profile.stop_prob:
                spread = max(profile.sociability, 1.0)
                self.waypoints[profile.student] = [
                    self.rng.uniform(-spread, spread),
                    64.0,
                    self.rng.uniform(-spread, spread)]
        else:
            pos[:] = [c + (t - c) * step / d for c, t in zip(pos, target)]
        self.engine.ingest_event(ActivityEvent(
            ts=now, student=profile.student, kind="position",
            attrs={"x": pos[0], "y": pos[1], "z": pos[2]}))

    # -- interviewer behavior --------------------------------------------

    def _agent_by_name(self, name: str) -> InterviewerAgent:
        return next(a for a in self.sc.agents if a.name == name)

    def _try_assign(self, now: int) -> None:
        for agent in self.sc.agents:
            if not self.agent_free[agent.name]:
                continue
            assignment = self.dispatcher.request_next(agent.name, now)
            if assignment is None:
                continue
            self.latencies.append(now - assignment.trigger.fired_at)
            if self.rng.random() < agent.skip_prob:
                self.dispatcher.skip(
                    assignment.assignment_id,
                    SkipReason(agent.skip_code,
                               "skipped by simulated policy"
                               if agent.skip_code == "other" else ""),
                    now)
                continue
            self.agent_free[agent.name] = False
            walk = int(agent.walk_delay_s * 1000)
            self.push(now + walk, "begin_interview",
                      (agent.name, assignment.assignment_id))

    # -- event loop ----------------------------------------------------------

    def run(self) -> SimReport:
        sc = self.sc
        for profile in sc.profiles:
            student = profile.student
            spread = max(profile.sociability, 1.0)
            self.positions[student] = [self.rng.uniform(-spread, spread), 64.0,
                                       self.rng.uniform(-spread, spread)]
            self.waypoints[student] = list(self.positions[student])
            self.engine.ingest_event(ActivityEvent(0, student, "login"))
            self.engine.ingest_event(ActivityEvent(
                0, student, "world_enter", {"world_id": sc.world_id}))
            p = self.positions[student]
            self.engine.ingest_event(ActivityEvent(
                0, student, "position", {"x": p[0], "y": p[1], "z": p[2]}))
            self.dispatcher.set_logged_in(student, True)
            self._schedule_profile_events(profile)
            self.push(POSITION_SAMPLE_MS, "move", profile)

        poll = sc.config.poll_interval_ms
        self.push(poll, "poll", None)

        while self.heap:
            now, _, action, payload = heapq.heappop(self.heap)
            if now > sc.horizon_ms:
                break

            if action == "student_event":
                profile, kind = payload
                self.engine.ingest_event(ActivityEvent(
                    now, profile.student, kind, self._event_attrs(profile, kind)))
                rate = profile.rates_per_min.get(kind, 0.0)
                delay = self.rng.expovariate(rate / 60.0) * 1000
                self.push(now + int(delay), "student_event", (profile, kind))

            elif action == "move":
                self._move(payload, now)
                self.push(now + POSITION_SAMPLE_MS, "move", payload)

            elif action == "poll":
                self.dispatcher.purge_expired(now)
                for trigger in self.engine.poll(now):
                    self._submit(trigger, now)
                random_trigger = self.dispatcher.maybe_random(now)
                if random_trigger is not None:
                    self._submit(random_trigger, now)
                self._try_assign(now)
                self.push(now + poll, "poll", None)

            elif action == "begin_interview":
                name, assignment_id = payload
                agent = self._agent_by_name(name)
                self.dispatcher.begin_recording(assignment_id, now)
                duration_s = self.rng.lognormvariate(
                    math.log(agent.interview_median_s), agent.interview_sigma)
                self.push(now + int(duration_s * 1000), "end_interview", payload)

            elif action == "end_interview":
                name, assignment_id = payload
                self.rec_counter += 1
                self.dispatcher.stop_recording(
                    assignment_id, now, blob_ref=f"sim-rec-{self.rec_counter}",
                    byte_length=16_000)
                self.dispatcher.complete(assignment_id, now)
                self.agent_free[name] = True
                self._try_assign(now)

        self.dispatcher.purge_expired(sc.horizon_ms)
        return self._report()

    def _submit(self, trigger: TriggerInstance, now: int) -> None:
        self.def_of_event[trigger.event_id] = trigger.definition_id
        self.fired_by_def[trigger.definition_id] = \
            self.fired_by_def.get(trigger.definition_id, 0) + 1
        outcome = self.dispatcher.submit(trigger, now)
        if outcome in ("accepted",):
            self.emissions.append(now)

    def _report(self) -> SimReport:
        per_def: dict[str, dict[str, int]] = {}
        outcome_totals: dict[str, int] = {}
        per_student: dict[str, int] = {p.student: 0 for p in self.sc.profiles}
        busy: dict[str, int] = {a.name: 0 for a in self.sc.agents}

        entries = self.store.query(latest_n=None)
        for entry in entries:
            def_id = self.def_of_event.get(entry.event_id, "external")
            counts = per_def.setdefault(def_id, {})
            counts[entry.outcome] = counts.get(entry.outcome, 0) + 1
            outcome_totals[entry.outcome] = \
                outcome_totals.get(entry.outcome, 0) + 1
            if entry.outcome == "taken":
                effective = entry.override_student or entry.student
                per_student[effective] = per_student.get(effective, 0) + 1
                if entry.assigned_at is not None and entry.completed_at is not None:
                    busy[entry.reviewer] = busy.get(entry.reviewer, 0) + \
                        (entry.completed_at - entry.assigned_at)
        for def_id, fired in self.fired_by_def.items():
            per_def.setdefault(def_id, {})["fired"] = fired

        idle = {name: 1.0 - min(busy.get(name, 0) / self.sc.horizon_ms, 1.0)
                for name in busy}
        violations = count_cooldown_violations(entries,
                                               self.sc.config.cooldown_ms)
        return SimReport(
            seed=self.sc.seed,
            horizon_ms=self.sc.horizon_ms,
            per_definition=per_def,
            per_student_interviews=per_student,
            interviewer_idle_fraction=idle,
            assignment_latencies_ms=sorted(self.latencies),
            emission_times_ms=self.emissions,
            outcome_totals=outcome_totals,
            masterlog_rows=[e.render_row() for e in entries],
            cooldown_violations=violations)


def run(scenario: Scenario) -> SimReport:
    return _Sim(scenario).run()


def count_cooldown_violations(entries, cooldown_ms: int) -> int:
    """Cross-module check: an interview assigned within cooldown of the
    effective interviewee's previous completion is a violation."""
    by_student: dict[str, list] = {}
    for entry in entries:
        if entry.outcome == "taken" and entry.completed_at is not None:
            effective = entry.override_student or entry.student
            by_student.setdefault(effective, []).append(entry)
    violations = 0
    for student_entries in by_student.values():
        student_entries.sort(key=lambda e: e.completed_at)
        for prev, cur in zip(student_entries, student_entries[1:]):
            started = cur.assigned_at if cur.assigned_at is not None \
                else cur.completed_at
            if started < prev.completed_at + cooldown_ms:
                violations += 1
    return violations


def parse_scenario(text: str) -> Scenario:
    """Scenario files share the deployment TOML dialect, adding a [scenario]
    table plus [[profiles]] and [[agents]] arrays."""
    from . import configio

    deployment = configio.parse_deployment(text)
    doc = configio.tomllib.loads(text)
    head = doc.get("scenario", {})

    profiles = [StudentProfile(
        student=raw["student"],
        rates_per_min=dict(raw.get("rates_per_min", {})),
        move_speed=raw.get("move_speed", 1.0),
        stop_prob=raw.get("stop_prob", 0.1),
        sociability=raw.get("sociability", 20.0))
        for raw in doc.get("profiles", [])]
    if not profiles:
        profiles = [StudentProfile(s) for s in deployment.dispatcher.roster]

    agents = [InterviewerAgent(
        name=raw["name"],
        interview_median_s=raw.get("interview_median_s", 120.0),
        interview_sigma=raw.get("interview_sigma", 0.4),
        walk_delay_s=raw.get("walk_delay_s", 15.0),
        skip_prob=raw.get("skip_prob", 0.0),
        skip_code=raw.get("skip_code", "student_unavailable"))
        for raw in doc.get("agents", [])]

    return Scenario(
        profiles=profiles,
        agents=agents,
        definitions=deployment.definitions,
        config=deployment.dispatcher,
        horizon_ms=head.get("horizon_ms", 3_600_000),
        seed=head.get("seed", 0),
        regions=deployment.regions,
        npcs=deployment.npcs,
        world_id=head.get("world_id", "world-1"))


def load_scenario(path: str | Path) -> Scenario:
    return parse_scenario(Path(path).read_text(encoding="utf-8"))


def metrics(entries, cooldown_ms: int, horizon_ms: int | None = None) -> dict:
    """Aggregate fairness and frequency metrics from a masterlog."""
    per_student: dict[str, int] = {}
    times: dict[str, list[int]] = {}
    for entry in entries:
        if entry.outcome != "taken":
            continue
        effective = entry.override_student or entry.student
        per_student[effective] = per_student.get(effective, 0) + 1
        if entry.completed_at is not None:
            times.setdefault(effective, []).append(entry.completed_at)

    max_per_hour = {}
    for student, ts_list in times.items():
        ts_list.sort()
        best = 0
        for i, start in enumerate(ts_list):
            in_hour = sum(1 for t in ts_list[i:] if t < start + 3_600_000)
            best = max(best, in_hour)
        max_per_hour[student] = best

    counts = list(per_student.values())
    return {
        "per_student_interviews": per_student,
        "max_interviews_per_hour": max_per_hour,
        "min_interviews": min(counts, default=0),
        "max_interviews": max(counts, default=0),
        "cooldown_violations": count_cooldown_violations(entries, cooldown_ms),
    }
