"""Wire protocol parsing, gateway command flow, and the HTTP sidecar."""

import copy
import hashlib
import json

import pytest
from fastapi.testclient import TestClient

from conftest import ROSTER, make_definition, make_random_definition
from qrf.dispatch import Dispatcher
from qrf.gateway import (
    Gateway,
    WireError,
    create_app,
    parse_trigger_packet,
    parse_timestamp,
)
from qrf.masterlog import MasterLogStore
from qrf.model import DispatcherConfig

from random import Random

PASSWORD = "qrf2024"

REFERENCE_PACKET = {
    "event": "new_message",
    "data": {
        "from": "software",
        "software": "WHIMC",
        "timestamp": "",
        "eventID": "",
        "student": "Jaymee_93",
        "trigger": "Jaymee_93 is high priod",
        "priority": 1,
        "masterlogs": {
            "from": "software",
            "software": "WHIMC",
            "timestamp": "",
            "eventID": "",
            "student": "Jaymee_93",
            "trigger": "Jaymee_93 is high prio",
            "reviewer": "",
            "end": "",
            "feedbackTXT": "",
            "feedbackREC": "",
        },
    },
}


class Clock:
    def __init__(self, now=1_000_000):
        self.now = now

    def __call__(self) -> int:
        return self.now


def make_gateway(blob_dir=None, random_interval_ms=35_000):
    config = DispatcherConfig(shared_password=PASSWORD, roster=ROSTER,
                              random_interval_ms=random_interval_ms)
    definitions = [make_definition(), make_random_definition()]
    store = MasterLogStore()
    dispatcher = Dispatcher(definitions, config, store, Random(0))
    clock = Clock()
    return Gateway(dispatcher, store, clock=clock, rng=Random(0),
                   blob_dir=blob_dir), clock


def login(gateway, username="iv", password=PASSWORD):
    session = gateway.connect(lambda msg: None)
    reply = gateway.handle_envelope(session, app_command(
        "login", username=username, password=password))
    return session, reply


def app_command(command, **fields):
    return {"event": "new_message",
            "data": {"from": "app", "command": command, **fields}}


class TestTriggerPacketParsing:
    def test_reference_packet_accepted(self):
        packet = parse_trigger_packet(REFERENCE_PACKET)
        assert packet.student == "Jaymee_93"
        assert packet.trigger == "Jaymee_93 is high priod"
        assert packet.priority == 1
        assert packet.software == "WHIMC"
        assert packet.masterlogs["trigger"] == "Jaymee_93 is high prio"

    def test_round_trip_is_byte_exact(self):
        packet = parse_trigger_packet(REFERENCE_PACKET)
        assert json.dumps(packet.to_wire(), sort_keys=True) == \
            json.dumps(REFERENCE_PACKET, sort_keys=True)

    def broken(self, mutate):
        envelope = copy.deepcopy(REFERENCE_PACKET)
        mutate(envelope)
        return envelope

    def test_missing_student_names_the_field(self):
        envelope = self.broken(lambda e: e["data"].pop("student"))
        with pytest.raises(WireError, match="student"):
            parse_trigger_packet(envelope)

    def test_blank_trigger_rejected(self):
        envelope = self.broken(lambda e: e["data"].update(trigger="  "))
        with pytest.raises(WireError, match="trigger"):
            parse_trigger_packet(envelope)

    def test_priority_must_be_positive_integer(self):
        for bad in (0, -3, "1", 1.5, True, None):
            envelope = self.broken(lambda e, bad=bad: e["data"].update(priority=bad))
            with pytest.raises(WireError, match="priority"):
                parse_trigger_packet(envelope)

    def test_wrong_event_name_rejected(self):
        envelope = self.broken(lambda e: e.update(event="old_message"))
        with pytest.raises(WireError, match="new_message"):
            parse_trigger_packet(envelope)

    def test_wrong_sender_rejected(self):
        envelope = self.broken(lambda e: e["data"].update({"from": "hardware"}))
        with pytest.raises(WireError, match="software"):
            parse_trigger_packet(envelope)

    def test_masterlogs_must_be_an_object(self):
        envelope = self.broken(lambda e: e["data"].update(masterlogs=[1]))
        with pytest.raises(WireError, match="masterlogs"):
            parse_trigger_packet(envelope)


def test_parse_timestamp_iso_utc_ms():
    assert parse_timestamp("2025-01-24T13:02:01.042Z") == 1737723721042


class TestTriggerIngestion:
    def test_reference_packet_flows_to_masterlog(self):
        gateway, _ = make_gateway()
        session = gateway.connect(lambda msg: None)
        reply = gateway.handle_envelope(session, copy.deepcopy(REFERENCE_PACKET))
        data = reply["data"]
        assert data["reply"] == "trigger" and data["ok"]
        assert data["outcome"] == "accepted"
        entry = gateway.store.get(data["eventID"])
        assert entry.student == "Jaymee_93"
        assert entry.trigger_description == "Jaymee_93 is high priod"
        assert entry.software == "WHIMC"

    def test_trigger_is_broadcast_to_all_sessions(self):
        gateway, _ = make_gateway()
        inboxes = ([], [])
        publisher = gateway.connect(inboxes[0].append)
        gateway.connect(inboxes[1].append)
        gateway.handle_envelope(publisher, copy.deepcopy(REFERENCE_PACKET))
        # notify-self: the publisher hears its own packet too
        assert REFERENCE_PACKET in inboxes[0]
        assert REFERENCE_PACKET in inboxes[1]

    def test_malformed_envelope_gets_error_reply_and_channel_survives(self):
        gateway, _ = make_gateway()
        session = gateway.connect(lambda msg: None)
        reply = gateway.handle_envelope(session, {"event": "nope"})
        assert reply["data"]["reply"] == "error" and not reply["data"]["ok"]
        good = gateway.handle_envelope(session, copy.deepcopy(REFERENCE_PACKET))
        assert good["data"]["ok"]

    def test_unknown_sender_rejected_with_reason(self):
        gateway, _ = make_gateway()
        session = gateway.connect(lambda msg: None)
        reply = gateway.handle_envelope(
            session, {"event": "new_message", "data": {"from": "martian"}})
        assert "unknown sender" in reply["data"]["reason"]

    def test_dispatcher_banner_is_relayed(self):
        gateway, _ = make_gateway()
        inbox = []
        gateway.connect(inbox.append)
        session = gateway.connect(lambda msg: None)
        banner = {"event": "new_message",
                  "data": {"from": "Dispatcher", "note": "loaded"}}
        reply = gateway.handle_envelope(session, banner)
        assert reply["data"]["reply"] == "relay"
        assert inbox == [banner]


class TestAuthentication:
    def test_login_with_shared_password(self):
        gateway, _ = make_gateway()
        _, reply = login(gateway)
        assert reply["data"] == {"from": "Dispatcher", "reply": "login",
                                 "ok": True, "interviewer": "iv"}

    def test_wrong_password_rejected(self):
        gateway, _ = make_gateway()
        _, reply = login(gateway, password="hunter2")
        assert not reply["data"]["ok"]
        assert "credentials" in reply["data"]["reason"]

    def test_empty_configured_password_never_authenticates(self):
        gateway, _ = make_gateway()
        gateway.dispatcher.config = DispatcherConfig(shared_password="",
                                                     roster=ROSTER)
        _, reply = login(gateway, password="")
        assert not reply["data"]["ok"]

    def test_commands_require_login(self):
        gateway, _ = make_gateway()
        session = gateway.connect(lambda msg: None)
        reply = gateway.handle_envelope(session, app_command("request_next"))
        assert reply["data"]["reason"] == "not authenticated"

    def test_unknown_command_rejected(self):
        gateway, _ = make_gateway()
        session, _ = login(gateway)
        reply = gateway.handle_envelope(session, app_command("self_destruct"))
        assert "unknown command" in reply["data"]["reason"]


class TestCommandFlow:
    def submit_reference(self, gateway):
        feeder = gateway.connect(lambda msg: None)
        return gateway.handle_envelope(feeder, copy.deepcopy(REFERENCE_PACKET))

    def test_ready_broadcasts_device_ready(self):
        gateway, _ = make_gateway()
        inbox = []
        watcher = gateway.connect(inbox.append)
        session, _ = login(gateway)
        gateway.handle_envelope(session, app_command("ready"))
        kinds = [m["data"].get("type") for m in inbox]
        assert "device_ready" in kinds

    def test_full_interview_cycle(self):
        gateway, clock = make_gateway()
        session, _ = login(gateway)
        self.submit_reference(gateway)
        reply = gateway.handle_envelope(session, app_command("request_next"))
        assignment = reply["data"]["assignment"]
        assert assignment["student"] == "Jaymee_93"
        assert assignment["reviewer"] == "iv"

        clock.now += 5_000
        gateway.handle_envelope(session, app_command("begin_recording"))
        clock.now += 30_000
        gateway.handle_envelope(session, app_command(
            "stop_recording", blob_ref="rec-x", byte_length=100))
        gateway.handle_envelope(session, app_command(
            "note_update", text="great interview"))
        done = gateway.handle_envelope(session, app_command(
            "complete", feedback="solid reasoning"))
        assert done["data"]["status"] == "completed"

        entry = gateway.store.get(assignment["eventID"])
        assert entry.outcome == "taken"
        assert entry.reviewer == "iv"
        assert entry.duration_rec_text() == "30.00 seconds"

    def test_ready_session_receives_push_once(self):
        gateway, _ = make_gateway()
        inbox = []
        session = gateway.connect(inbox.append)
        gateway.handle_envelope(session, app_command(
            "login", username="iv", password=PASSWORD))
        gateway.handle_envelope(session, app_command("ready"))
        gateway.handle_envelope(session, app_command("request_next"))
        gateway.handle_envelope(session, app_command("ready"))  # re-handshake
        self.submit_reference(gateway)
        pushes = [m for m in inbox if m["data"].get("type") == "assignment"]
        # at-least-once delivery deduped by assignment id per session
        assert len(pushes) == 0  # queue was empty at first request

        self_reply = gateway.handle_envelope(session, app_command("request_next"))
        assert self_reply["data"]["assignment"] is not None
        pushes = [m for m in inbox if m["data"].get("type") == "assignment"]
        assert len(pushes) == 1
        gateway.handle_envelope(session, app_command("ready"))
        pushes = [m for m in inbox if m["data"].get("type") == "assignment"]
        assert len(pushes) == 1

    def test_reload_recovers_assignment_and_notes(self):
        gateway, _ = make_gateway()
        session, _ = login(gateway)
        self.submit_reference(gateway)
        gateway.handle_envelope(session, app_command("request_next"))
        gateway.handle_envelope(session, app_command(
            "note_update", text="halfway through"))
        gateway.disconnect(session)

        inbox = []
        fresh = gateway.connect(inbox.append)
        gateway.handle_envelope(fresh, app_command(
            "login", username="iv", password=PASSWORD))
        gateway.handle_envelope(fresh, app_command("ready"))
        pushes = [m for m in inbox if m["data"].get("type") == "assignment"]
        assert len(pushes) == 1
        assert pushes[0]["data"]["student"] == "Jaymee_93"
        assert pushes[0]["data"]["notes"] == "halfway through"

    def test_request_next_falls_back_to_random_checkin(self):
        gateway, clock = make_gateway()
        for student in ROSTER:
            gateway.dispatcher.set_logged_in(student, True)
        session, _ = login(gateway)
        clock.now += 40_000  # past the random-fallback interval
        reply = gateway.handle_envelope(session, app_command("request_next"))
        assignment = reply["data"]["assignment"]
        assert assignment is not None
        assert assignment["student"] in ROSTER

    def test_request_next_on_empty_queue_returns_none(self):
        gateway, _ = make_gateway()
        session, _ = login(gateway)
        reply = gateway.handle_envelope(session, app_command("request_next"))
        assert reply["data"]["assignment"] is None

    def test_skip_requires_known_code(self):
        gateway, _ = make_gateway()
        session, _ = login(gateway)
        self.submit_reference(gateway)
        gateway.handle_envelope(session, app_command("request_next"))
        bad = gateway.handle_envelope(session, app_command("skip", code="meh"))
        assert "unknown skip code" in bad["data"]["reason"]
        good = gateway.handle_envelope(session, app_command(
            "skip", code="student_upset"))
        assert good["data"]["status"] == "skipped"

    def test_commands_without_assignment_report_state_error(self):
        gateway, _ = make_gateway()
        session, _ = login(gateway)
        reply = gateway.handle_envelope(session, app_command("begin_recording"))
        assert reply["data"]["reason"] == "no active assignment"


class TestParkedSessions:
    def start_assignment(self, gateway):
        feeder = gateway.connect(lambda msg: None)
        gateway.handle_envelope(feeder, copy.deepcopy(REFERENCE_PACKET))
        session, _ = login(gateway)
        reply = gateway.handle_envelope(session, app_command("request_next"))
        return session, reply["data"]["assignment"]

    def test_disconnect_parks_assignment_until_ttl(self, ):
        gateway, clock = make_gateway()
        session, assignment = self.start_assignment(gateway)
        gateway.disconnect(session)
        clock.now += 60_000
        assert gateway.tick() == []
        assert gateway.store.get(assignment["eventID"]).outcome == "untaken"

    def test_parked_assignment_autoskips_past_ttl(self):
        gateway, clock = make_gateway()
        session, assignment = self.start_assignment(gateway)
        gateway.disconnect(session)
        clock.now += 180_000
        assert gateway.tick() == [assignment["assignment_id"]]
        entry = gateway.store.get(assignment["eventID"])
        assert entry.outcome == "skipped"
        assert entry.feedback_text == "[skip:other] connection lost"

    def test_reconnect_before_ttl_unparks(self):
        gateway, clock = make_gateway()
        session, assignment = self.start_assignment(gateway)
        gateway.disconnect(session)
        clock.now += 60_000
        login(gateway)  # same interviewer name returns
        clock.now += 180_000
        assert gateway.tick() == []
        assert gateway.store.get(assignment["eventID"]).outcome == "untaken"


class TestRecordings:
    def active_assignment_id(self, gateway):
        feeder = gateway.connect(lambda msg: None)
        gateway.handle_envelope(feeder, copy.deepcopy(REFERENCE_PACKET))
        session, _ = login(gateway)
        reply = gateway.handle_envelope(session, app_command("request_next"))
        return session, reply["data"]["assignment"]["assignment_id"]

    def test_ref_is_content_addressed(self, tmp_path):
        gateway, _ = make_gateway(blob_dir=tmp_path)
        _, assignment_id = self.active_assignment_id(gateway)
        payload = b"PCM audio bytes"
        ref = gateway.store_recording(assignment_id, payload)
        assert ref == "rec-" + hashlib.sha256(payload).hexdigest()[:24]
        assert (tmp_path / ref).read_bytes() == payload

    def test_empty_recording_rejected(self):
        gateway, _ = make_gateway()
        _, assignment_id = self.active_assignment_id(gateway)
        with pytest.raises(WireError, match="empty"):
            gateway.store_recording(assignment_id, b"")

    def test_size_cap_enforced(self):
        gateway, _ = make_gateway()
        gateway.dispatcher.config = DispatcherConfig(
            shared_password=PASSWORD, roster=ROSTER,
            recording_size_cap_bytes=8)
        _, assignment_id = self.active_assignment_id(gateway)
        with pytest.raises(WireError, match="size cap"):
            gateway.store_recording(assignment_id, b"123456789")

    def test_closed_assignment_rejects_upload(self):
        gateway, clock = make_gateway()
        session, assignment_id = self.active_assignment_id(gateway)
        gateway.handle_envelope(session, app_command(
            "skip", code="student_upset"))
        with pytest.raises(WireError, match="closed"):
            gateway.store_recording(assignment_id, b"late audio")


class TestHttpSidecar:
    def make_client(self, tmp_path):
        gateway, clock = make_gateway(blob_dir=tmp_path)
        return TestClient(create_app(gateway)), gateway, clock

    def test_websocket_login(self, tmp_path):
        client, _, _ = self.make_client(tmp_path)
        with client.websocket_connect("/ws/qrf") as ws:
            ws.send_text(json.dumps(app_command(
                "login", username="iv", password=PASSWORD)))
            reply = ws.receive_json()
            assert reply["data"]["reply"] == "login" and reply["data"]["ok"]

    def test_websocket_malformed_json_survives(self, tmp_path):
        client, _, _ = self.make_client(tmp_path)
        with client.websocket_connect("/ws/qrf") as ws:
            ws.send_text("{not json")
            reply = ws.receive_json()
            assert reply["data"]["reason"] == "malformed JSON"
            ws.send_text(json.dumps(app_command(
                "login", username="iv", password=PASSWORD)))
            assert ws.receive_json()["data"]["ok"]

    def test_recording_upload_and_rejections(self, tmp_path):
        client, gateway, _ = self.make_client(tmp_path)
        feeder = gateway.connect(lambda msg: None)
        gateway.handle_envelope(feeder, copy.deepcopy(REFERENCE_PACKET))
        session, _ = login(gateway)
        reply = gateway.handle_envelope(session, app_command("request_next"))
        assignment_id = reply["data"]["assignment"]["assignment_id"]

        response = client.post("/recordings",
                               params={"assignment_id": assignment_id},
                               content=b"audio")
        assert response.status_code == 200
        body = response.json()
        assert body["ref"].startswith("rec-") and body["bytes"] == 5

        empty = client.post("/recordings",
                            params={"assignment_id": assignment_id},
                            content=b"")
        assert empty.status_code == 400

    def test_masterlog_endpoints(self, tmp_path):
        client, gateway, _ = self.make_client(tmp_path)
        feeder = gateway.connect(lambda msg: None)
        reply = gateway.handle_envelope(feeder, copy.deepcopy(REFERENCE_PACKET))
        event_id = reply["data"]["eventID"]

        csv_text = client.get("/masterlog.csv").text
        assert "Jaymee_93" in csv_text and csv_text.startswith("Event ID,")

        listing = client.get("/masterlog", params={"latest": 10}).json()
        assert listing["entries"][0]["Event ID"] == event_id
        assert listing["entries"][0]["outcome"] == "untaken"
        taken = client.get("/masterlog", params={"taken": "true"}).json()
        assert taken["entries"] == []

        assert client.delete(f"/masterlog/{event_id}").json() == \
            {"deleted": event_id}
        assert client.delete(f"/masterlog/{event_id}").status_code == 404
