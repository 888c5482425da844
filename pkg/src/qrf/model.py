"""Domain types shared by the detection engine, dispatcher, stores, and simulator."""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from datetime import datetime, timezone
from random import Random

# Student value reserved for check-ins that were never tied to a specific user.
RANDOM_STUDENT = "Random Student"

EVENT_KINDS = frozenset({
    "position", "block_place", "block_destroy", "tool_use", "npc_interact",
    "observation", "world_enter", "stop", "login", "logout",
})

RULE_KINDS = frozenset({
    "inactivity_window", "count_in_window", "count_below_in_window",
    "duration_in_state", "proximity_sustained", "recency", "cumulative_count",
    "contextual_near", "comparative_lead", "multi_scope_absence",
    "random_fallback",
})

# required / optional parameter names per rule kind
_RULE_PARAMS: dict[str, tuple[frozenset, frozenset]] = {
    "inactivity_window": (frozenset({"event_kind", "window_s"}), frozenset({"filter"})),
    "count_in_window": (frozenset({"event_kind", "window_s", "threshold"}), frozenset({"filter"})),
    "count_below_in_window": (frozenset({"event_kind", "window_s", "threshold"}), frozenset({"filter"})),
    "duration_in_state": (frozenset({"state_kind", "target_id", "min_duration_s"}),
                          frozenset({"radius_blocks", "require_no_interaction"})),
    "proximity_sustained": (frozenset({"min_distance_blocks", "min_duration_s"}), frozenset()),
    "recency": (frozenset({"event_kind", "window_s"}), frozenset({"filter"})),
    "cumulative_count": (frozenset({"event_kind", "threshold"}), frozenset({"filter"})),
    "contextual_near": (frozenset({"event_kind", "window_s", "radius_blocks", "target_type", "targets"}),
                        frozenset({"filter"})),
    "comparative_lead": (frozenset({"lead"}), frozenset({"literal_inequality"})),
    "multi_scope_absence": (frozenset({"min_worlds", "event_kind"}), frozenset()),
    "random_fallback": (frozenset(), frozenset()),
}

_DURATION_PARAMS = frozenset({"window_s", "min_duration_s"})
_COUNT_PARAMS = frozenset({"threshold", "lead", "min_worlds"})
_DISTANCE_PARAMS = frozenset({"radius_blocks", "min_distance_blocks"})

_BASE36 = string.digits + string.ascii_lowercase


class QrfError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(QrfError):
    """A configuration file or definition set is invalid."""


class StateError(QrfError):
    """An operation was applied against an object in the wrong state."""


def valid_student_id(value: str) -> bool:
    """A student id is any non-empty, non-whitespace-only string."""
    return isinstance(value, str) and bool(value.strip())


@dataclass(frozen=True)
class RuleSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def check(self) -> list[str]:
        """Return a list of problems with this rule (empty when valid)."""
        problems = []
        if self.kind not in RULE_KINDS:
            return [f"unknown rule kind: {self.kind!r}"]
        required, optional = _RULE_PARAMS[self.kind]
        names = set(self.params)
        for missing in sorted(required - names):
            problems.append(f"{self.kind}: missing parameter {missing!r}")
        for extra in sorted(names - required - optional):
            problems.append(f"{self.kind}: unexpected parameter {extra!r}")
        for name, value in sorted(self.params.items()):
            if name in _DURATION_PARAMS or name in _COUNT_PARAMS:
                if not isinstance(value, (int, float)) or value <= 0:
                    problems.append(f"{self.kind}: parameter {name!r} must be > 0")
            elif name in _DISTANCE_PARAMS:
                if not isinstance(value, (int, float)) or value < 0:
                    problems.append(f"{self.kind}: parameter {name!r} must be >= 0")
        return problems

    def scalar_params(self) -> dict:
        return {k: v for k, v in self.params.items()
                if isinstance(v, (str, int, float, bool))}


@dataclass(frozen=True)
class TriggerDefinition:
    definition_id: str
    name: str
    rule: RuleSpec
    rank: int
    expiration_ms: int
    suppression_ms: int = 0
    description_template: str = "{student}"
    stagger_jitter_ms: int = 0

    def check(self) -> list[str]:
        problems = []
        if not self.definition_id:
            problems.append("definition_id must be non-empty")
        if self.rank < 1:
            problems.append(f"{self.definition_id}: rank must be >= 1")
        if self.expiration_ms <= 0:
            problems.append(f"{self.definition_id}: expiration_ms must be > 0")
        if self.suppression_ms < 0:
            problems.append(f"{self.definition_id}: suppression_ms must be >= 0")
        if self.stagger_jitter_ms < 0:
            problems.append(f"{self.definition_id}: stagger_jitter_ms must be >= 0")
        problems += [f"{self.definition_id}: {p}" for p in self.rule.check()]
        problems += [f"{self.definition_id}: {p}"
                     for p in check_placeholders(self.description_template, self.rule)]
        return problems


def check_placeholders(template: str, rule: RuleSpec) -> list[str]:
    """Every placeholder must resolve against the rule's scalar parameters or {student}."""
    allowed = set(rule.scalar_params()) | {"student"}
    problems = []
    try:
        fields = [f for _, f, _, _ in string.Formatter().parse(template) if f]
    except ValueError as exc:
        return [f"malformed description template: {exc}"]
    for name in fields:
        if name not in allowed:
            problems.append(f"unresolved placeholder {{{name}}} in description template")
    # bracketed [x]-style placeholders left over from drafting are never resolvable
    if "[x]" in template or "[y]" in template:
        problems.append("unresolved placeholder ([x]/[y]) in description template")
    return problems


def render_description(definition: TriggerDefinition, student: str) -> str:
    """Render the definition's template for one student. Pure and deterministic."""
    values = dict(definition.rule.scalar_params())
    values["student"] = student
    try:
        return definition.description_template.format(**values)
    except (KeyError, IndexError) as exc:
        raise ConfigError(
            f"{definition.definition_id}: unresolved placeholder in description template: {exc}"
        ) from exc


@dataclass(frozen=True)
class TriggerInstance:
    event_id: str
    fired_at: int
    expires_at: int
    student: str
    definition_id: str
    rank: int
    description: str
    software: str = ""

    def __post_init__(self):
        if self.expires_at <= self.fired_at:
            raise ValueError("expires_at must be after fired_at")


def is_expired(trigger: TriggerInstance, now: int) -> bool:
    """Expiry is inclusive: a trigger is expired at exactly its expires_at."""
    return now >= trigger.expires_at


def make_event_id(now_ms: int, rng: Random) -> str:
    """Unique trigger id: UTC date-time plus a random base36 suffix."""
    stamp = datetime.fromtimestamp(now_ms / 1000, tz=timezone.utc).strftime("%Y-%m-%d-%I:%M%p")
    suffix = "".join(rng.choice(_BASE36) for _ in range(6))
    return f"{stamp}-{suffix}"


@dataclass(frozen=True)
class DispatcherConfig:
    shared_password: str = ""
    roster: tuple[str, ...] = ()
    poll_interval_ms: int = 10_000
    default_expiration_ms: int = 180_000
    cooldown_ms: int = 240_000
    random_interval_ms: int = 35_000
    requeue_skipped: bool = False
    recording_size_cap_bytes: int = 256 * 1024 * 1024

    def check(self) -> list[str]:
        problems = []
        for name in ("poll_interval_ms", "default_expiration_ms", "random_interval_ms"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be > 0")
        if self.cooldown_ms < 0:
            problems.append("cooldown_ms must be >= 0")
        for student in self.roster:
            if not valid_student_id(student):
                problems.append(f"invalid roster entry: {student!r}")
        return problems

    @property
    def reorder_tolerance_ms(self) -> int:
        return 2 * self.poll_interval_ms


@dataclass(frozen=True)
class RegionSpec:
    region_id: str
    world_id: str
    min_corner: tuple[int, int, int]
    max_corner: tuple[int, int, int]
    marked: bool = True

    def check(self) -> list[str]:
        if any(lo > hi for lo, hi in zip(self.min_corner, self.max_corner)):
            return [f"region {self.region_id}: min corner exceeds max corner"]
        return []

    def contains(self, world_id: str, pos: tuple[float, float, float]) -> bool:
        return (world_id == self.world_id
                and all(lo <= c <= hi for lo, c, hi in
                        zip(self.min_corner, pos, self.max_corner)))


@dataclass(frozen=True)
class NpcSpec:
    npc_id: str
    world_id: str
    pos: tuple[float, float, float]


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def __str__(self) -> str:
        lines = [f"error: {e}" for e in self.errors]
        lines += [f"warning: {w}" for w in self.warnings]
        lines.append(f"{len(self.errors)} error(s), {len(self.warnings)} warning(s)")
        return "\n".join(lines)


def validate_config(definitions: list[TriggerDefinition],
                    config: DispatcherConfig) -> ValidationReport:
    """Validate a full deployment configuration.

    Duplicate ranks are legal (ties are resolved by the dispatcher comparator)
    and only flagged as warnings. Exactly one random_fallback definition must
    exist and it must hold a strictly larger rank than every other definition.
    """
    report = ValidationReport()
    report.errors.extend(config.check())

    seen_ids: set[str] = set()
    for definition in definitions:
        if definition.definition_id in seen_ids:
            report.errors.append(f"duplicate definition_id: {definition.definition_id}")
        seen_ids.add(definition.definition_id)
        report.errors.extend(definition.check())

    randoms = [d for d in definitions if d.rule.kind == "random_fallback"]
    others = [d for d in definitions if d.rule.kind != "random_fallback"]
    if not randoms:
        report.errors.append("no random_fallback present")
    elif len(randoms) > 1:
        report.errors.append("more than one random_fallback definition")
    elif others and randoms[0].rank <= max(d.rank for d in others):
        report.errors.append(
            "random_fallback must hold the largest rank in the definition set")

    rank_seen: dict[int, str] = {}
    for d in others:
        if d.rank in rank_seen:
            report.warnings.append(
                f"rank {d.rank} shared by {rank_seen[d.rank]} and {d.definition_id}")
        else:
            rank_seen[d.rank] = d.definition_id

    return report
