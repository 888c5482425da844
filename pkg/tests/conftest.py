"""Shared builders for the test suite."""

from __future__ import annotations

from random import Random

import pytest

from qrf.dispatch import Dispatcher
from qrf.masterlog import MasterLogStore
from qrf.model import DispatcherConfig, RuleSpec, TriggerDefinition, TriggerInstance

ROSTER = ("Bear", "Caterpillar", "Dragon", "Tardigrade")


def make_definition(definition_id="obs-gap", rank=1, expiration_ms=180_000,
                    suppression_ms=0, kind="inactivity_window",
                    params=None, **kwargs) -> TriggerDefinition:
    if params is None:
        params = {"event_kind": "observation", "window_s": 1200}
    return TriggerDefinition(
        definition_id=definition_id,
        name=definition_id,
        rule=RuleSpec(kind, params),
        rank=rank,
        expiration_ms=expiration_ms,
        suppression_ms=suppression_ms,
        description_template=kwargs.pop("description_template", "{student}"),
        **kwargs)


def make_random_definition(rank=10, expiration_ms=180_000) -> TriggerDefinition:
    return TriggerDefinition(
        definition_id="random-checkin", name="Random",
        rule=RuleSpec("random_fallback"), rank=rank,
        expiration_ms=expiration_ms, description_template="Random check-in")


def make_trigger(event_id="evt-1", fired_at=0, ttl_ms=180_000, student="Bear",
                 definition_id="obs-gap", rank=1,
                 description="Bear trigger") -> TriggerInstance:
    return TriggerInstance(
        event_id=event_id, fired_at=fired_at, expires_at=fired_at + ttl_ms,
        student=student, definition_id=definition_id, rank=rank,
        description=description, software="test")


def make_dispatcher(definitions=None, config=None, store=None, seed=0):
    definitions = definitions if definitions is not None else \
        [make_definition(), make_random_definition()]
    config = config or DispatcherConfig(roster=ROSTER)
    store = store or MasterLogStore()
    return Dispatcher(definitions, config, store, Random(seed))


@pytest.fixture
def dispatcher():
    return make_dispatcher()
