"""Canonical TOML serialization of deployment and scenario files.

The on-disk dialect is plain TOML with a `schema_version` field. Dumping is
canonical: fixed key order and formatting, so dump(parse(dump(x))) is
byte-identical to dump(x).
"""

from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from dataclasses import dataclass, field
from pathlib import Path

from .model import (
    ConfigError,
    DispatcherConfig,
    NpcSpec,
    RegionSpec,
    RuleSpec,
    TriggerDefinition,
)

SCHEMA_VERSION = 1


@dataclass
class DeploymentConfig:
    dispatcher: DispatcherConfig
    definitions: list[TriggerDefinition] = field(default_factory=list)
    regions: list[RegionSpec] = field(default_factory=list)
    npcs: list[NpcSpec] = field(default_factory=list)


def _toml_str(value: str) -> str:
    escaped = (value.replace("\\", "\\\\").replace('"', '\\"')
               .replace("\n", "\\n").replace("\t", "\\t"))
    return f'"{escaped}"'


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return _toml_str(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    if isinstance(value, dict):
        inner = ", ".join(f"{k} = {_toml_value(v)}" for k, v in sorted(value.items()))
        return "{" + inner + "}"
    raise ConfigError(f"cannot serialize value of type {type(value).__name__}")


def dump_deployment(deployment: DeploymentConfig) -> str:
    d = deployment.dispatcher
    lines = [f"schema_version = {SCHEMA_VERSION}", "", "[dispatcher]"]
    lines.append(f"shared_password = {_toml_str(d.shared_password)}")
    lines.append(f"roster = {_toml_value(list(d.roster))}")
    lines.append(f"poll_interval_ms = {d.poll_interval_ms}")
    lines.append(f"default_expiration_ms = {d.default_expiration_ms}")
    lines.append(f"cooldown_ms = {d.cooldown_ms}")
    lines.append(f"random_interval_ms = {d.random_interval_ms}")
    lines.append(f"requeue_skipped = {_toml_value(d.requeue_skipped)}")
    lines.append(f"recording_size_cap_bytes = {d.recording_size_cap_bytes}")

    for definition in deployment.definitions:
        lines += ["", "[[definitions]]"]
        lines.append(f"definition_id = {_toml_str(definition.definition_id)}")
        lines.append(f"name = {_toml_str(definition.name)}")
        lines.append(f"rank = {definition.rank}")
        lines.append(f"expiration_ms = {definition.expiration_ms}")
        lines.append(f"suppression_ms = {definition.suppression_ms}")
        lines.append(f"stagger_jitter_ms = {definition.stagger_jitter_ms}")
        lines.append(f"description_template = {_toml_str(definition.description_template)}")
        lines.append(f"rule_kind = {_toml_str(definition.rule.kind)}")
        if definition.rule.params:
            lines.append("[definitions.rule_params]")
            for key in sorted(definition.rule.params):
                lines.append(f"{key} = {_toml_value(definition.rule.params[key])}")

    for region in deployment.regions:
        lines += ["", "[[regions]]"]
        lines.append(f"region_id = {_toml_str(region.region_id)}")
        lines.append(f"world_id = {_toml_str(region.world_id)}")
        lines.append(f"min_corner = {_toml_value(list(region.min_corner))}")
        lines.append(f"max_corner = {_toml_value(list(region.max_corner))}")
        lines.append(f"marked = {_toml_value(region.marked)}")

    for npc in deployment.npcs:
        lines += ["", "[[npcs]]"]
        lines.append(f"npc_id = {_toml_str(npc.npc_id)}")
        lines.append(f"world_id = {_toml_str(npc.world_id)}")
        lines.append(f"pos = {_toml_value(list(npc.pos))}")

    return "\n".join(lines) + "\n"


def _normalize_params(raw: dict) -> dict:
    params = {}
    for key, value in raw.items():
        if isinstance(value, list) and value and isinstance(value[0], dict):
            params[key] = [dict(v) for v in value]
        else:
            params[key] = value
    return params


def parse_deployment(text: str) -> DeploymentConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config file: {exc}") from exc

    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version: {version!r}")

    disp_raw = doc.get("dispatcher", {})
    try:
        dispatcher = DispatcherConfig(
            shared_password=disp_raw.get("shared_password", ""),
            roster=tuple(disp_raw.get("roster", [])),
            poll_interval_ms=disp_raw.get("poll_interval_ms", 10_000),
            default_expiration_ms=disp_raw.get("default_expiration_ms", 180_000),
            cooldown_ms=disp_raw.get("cooldown_ms", 240_000),
            random_interval_ms=disp_raw.get("random_interval_ms", 35_000),
            requeue_skipped=disp_raw.get("requeue_skipped", False),
            recording_size_cap_bytes=disp_raw.get("recording_size_cap_bytes",
                                                  256 * 1024 * 1024),
        )
    except TypeError as exc:
        raise ConfigError(f"bad dispatcher section: {exc}") from exc

    definitions = []
    for raw in doc.get("definitions", []):
        try:
            definitions.append(TriggerDefinition(
                definition_id=raw["definition_id"],
                name=raw.get("name", raw["definition_id"]),
                rule=RuleSpec(kind=raw["rule_kind"],
                              params=_normalize_params(raw.get("rule_params", {}))),
                rank=raw["rank"],
                expiration_ms=raw.get("expiration_ms",
                                      dispatcher.default_expiration_ms),
                suppression_ms=raw.get("suppression_ms", 0),
                description_template=raw.get("description_template", "{student}"),
                stagger_jitter_ms=raw.get("stagger_jitter_ms", 0),
            ))
        except KeyError as exc:
            raise ConfigError(f"definition missing field: {exc}") from exc

    regions = [RegionSpec(region_id=raw["region_id"],
                          world_id=raw["world_id"],
                          min_corner=tuple(raw["min_corner"]),
                          max_corner=tuple(raw["max_corner"]),
                          marked=raw.get("marked", True))
               for raw in doc.get("regions", [])]

    npcs = [NpcSpec(npc_id=raw["npc_id"], world_id=raw["world_id"],
                    pos=tuple(raw["pos"]))
            for raw in doc.get("npcs", [])]

    return DeploymentConfig(dispatcher=dispatcher, definitions=definitions,
                            regions=regions, npcs=npcs)


def load_deployment(path: str | Path) -> DeploymentConfig:
    return parse_deployment(Path(path).read_text(encoding="utf-8"))
