"""Network edge: JSON envelopes over WebSocket plus a small HTTP surface.

The wire protocol is a single "new_message" envelope whose data.from field
discriminates the sender: "software" carries trigger packets, "app" carries
console commands, "Dispatcher" carries server pushes. Published messages are
echoed back to the publisher and broadcast to the channel. A thin FastAPI
layer wraps the transport-agnostic Gateway core so the same logic serves
real sockets and in-process tests.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from random import Random
from typing import Callable

from fastapi import HTTPException, Request, WebSocket, WebSocketDisconnect

from .dispatch import SKIP_CODES, Assignment, Dispatcher, SkipReason
from .masterlog import MasterLogStore, format_timestamp
from .model import StateError, TriggerInstance, make_event_id, valid_student_id

logger = logging.getLogger(__name__)

MASTERLOG_KEYS = ("from", "software", "timestamp", "eventID", "student",
                  "trigger", "reviewer", "end", "feedbackTXT", "feedbackREC")

APP_COMMANDS = ("login", "ready", "request_next", "skip", "begin_recording",
                "stop_recording", "complete", "note_update", "disconnect")


class WireError(ValueError):
    """Malformed or unacceptable wire message; the channel survives."""


def parse_timestamp(text: str) -> int:
    """ISO-8601 UTC with milliseconds -> epoch ms."""
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp() * 1000)


@dataclass
class TriggerPacket:
    """The software->dispatcher trigger payload (data.from == "software")."""
    software: str
    timestamp: str
    event_id: str
    student: str
    trigger: str
    priority: int
    masterlogs: dict = field(default_factory=dict)

    def to_wire(self) -> dict:
        return {
            "event": "new_message",
            "data": {
                "from": "software",
                "software": self.software,
                "timestamp": self.timestamp,
                "eventID": self.event_id,
                "student": self.student,
                "trigger": self.trigger,
                "priority": self.priority,
                "masterlogs": dict(self.masterlogs),
            },
        }


def parse_trigger_packet(envelope: dict) -> TriggerPacket:
    if not isinstance(envelope, dict) or envelope.get("event") != "new_message":
        raise WireError("envelope must have event 'new_message'")
    data = envelope.get("data")
    if not isinstance(data, dict):
        raise WireError("missing field: data")
    if data.get("from") != "software":
        raise WireError("data.from must be 'software'")
    for name in ("student", "trigger", "priority"):
        if name not in data:
            raise WireError(f"missing field: {name}")
    student = data["student"]
    if not isinstance(student, str) or not student.strip():
        raise WireError("missing field: student")
    if not valid_student_id(student):
        raise WireError(f"invalid student id: {student!r}")
    priority = data["priority"]
    if not isinstance(priority, int) or isinstance(priority, bool) or priority < 1:
        raise WireError("priority must be a positive integer")
    trigger = data["trigger"]
    if not isinstance(trigger, str) or not trigger.strip():
        raise WireError("missing field: trigger")
    masterlogs = data.get("masterlogs", {})
    if not isinstance(masterlogs, dict):
        raise WireError("masterlogs must be an object")
    return TriggerPacket(
        software=str(data.get("software", "")),
        timestamp=str(data.get("timestamp", "")),
        event_id=str(data.get("eventID", "")),
        student=student,
        trigger=trigger,
        priority=priority,
        masterlogs=masterlogs,
    )


@dataclass
class Session:
    session_id: str
    send: Callable[[dict], None]
    interviewer: str = ""
    authenticated: bool = False
    ready: bool = False
    # assignment ids already delivered on this session, for at-least-once pushes
    delivered: set = field(default_factory=set)


class Gateway:
    """Transport-agnostic protocol core; one instance per channel group."""

    def __init__(self, dispatcher: Dispatcher, store: MasterLogStore,
                 clock: Callable[[], int] | None = None,
                 rng: Random | None = None,
                 blob_dir=None):
        self.dispatcher = dispatcher
        self.store = store
        self.clock = clock or (lambda: int(time.time() * 1000))
        self.rng = rng or Random()
        self.blob_dir = blob_dir
        self.blobs: dict[str, bytes] = {}
        self.sessions: dict[str, Session] = {}
        # interviewer -> disconnect time, for TTL-bounded parking
        self.parked_since: dict[str, int] = {}

    # -- session lifecycle -------------------------------------------------

    def connect(self, send: Callable[[dict], None]) -> Session:
        session = Session(session_id=uuid.uuid4().hex, send=send)
        self.sessions[session.session_id] = session
        return session

    def disconnect(self, session: Session) -> None:
        self.sessions.pop(session.session_id, None)
        if session.interviewer and not self._connected(session.interviewer):
            active = self.dispatcher.active_assignment(session.interviewer)
            if active is not None:
                self.parked_since[session.interviewer] = self.clock()

    def _connected(self, interviewer: str) -> bool:
        return any(s.interviewer == interviewer and s.authenticated
                   for s in self.sessions.values())

    def broadcast(self, message: dict, publisher: Session | None = None) -> None:
        """Deliver to every session including the publisher (notify_self)."""
        for session in list(self.sessions.values()):
            self._safe_send(session, message)

    def _safe_send(self, session: Session, message: dict) -> None:
        try:
            session.send(message)
        except Exception:
            logger.warning("send failed; dropping session %s", session.session_id)
            self.disconnect(session)

    # -- inbound envelopes ---------------------------------------------------

    def handle_envelope(self, session: Session, envelope: dict) -> dict:
        """Process one inbound message; returns the direct reply envelope."""
        try:
            if not isinstance(envelope, dict):
                raise WireError("message must be a JSON object")
            data = envelope.get("data")
            if envelope.get("event") != "new_message" or not isinstance(data, dict):
                raise WireError("envelope must be new_message with a data object")
            sender = data.get("from")
            if sender == "software":
                return self._handle_trigger(session, envelope)
            if sender == "app":
                return self._handle_command(session, data)
            if sender == "Dispatcher":
                # informational publish (e.g. dispatcher-loaded banner): relay
                self.broadcast(envelope, publisher=session)
                return _reply("relay", ok=True)
            logger.warning("rejected envelope with unknown sender %r", sender)
            raise WireError(f"unknown sender: {sender!r}")
        except WireError as exc:
            return _reply("error", ok=False, reason=str(exc))
        except StateError as exc:
            return _reply("error", ok=False, reason=str(exc))

    def _handle_trigger(self, session: Session, envelope: dict) -> dict:
        packet = parse_trigger_packet(envelope)
        now = self.clock()
        event_id = packet.event_id or make_event_id(now, self.rng)
        fired_at = parse_timestamp(packet.timestamp) if packet.timestamp else now
        trigger = TriggerInstance(
            event_id=event_id,
            fired_at=fired_at,
            expires_at=fired_at + self.dispatcher.config.default_expiration_ms,
            student=packet.student,
            definition_id="wire:" + packet.trigger,
            rank=packet.priority,
            description=packet.trigger,
            software=packet.software)
        outcome = self.dispatcher.submit(trigger, now)
        self.broadcast(envelope, publisher=session)
        self.deliver_ready(now)
        return _reply("trigger", ok=True, outcome=outcome,
                      eventID=event_id, timestamp=format_timestamp(fired_at))

    def _handle_command(self, session: Session, data: dict) -> dict:
        command = data.get("command")
        if command not in APP_COMMANDS:
            raise WireError(f"unknown command: {command!r}")
        if command == "login":
            return self._login(session, data)
        if not session.authenticated:
            raise WireError("not authenticated")
        now = self.clock()
        handler = getattr(self, "_cmd_" + command)
        return handler(session, data, now)

    def _login(self, session: Session, data: dict) -> dict:
        password = data.get("password", "")
        username = data.get("username", "")
        expected = self.dispatcher.config.shared_password
        if not expected or password != expected:
            logger.warning("failed login attempt for %r", username)
            raise WireError("invalid credentials")
        if not username:
            raise WireError("missing field: username")
        session.interviewer = username
        session.authenticated = True
        self.parked_since.pop(username, None)
        return _reply("login", ok=True, interviewer=username)

    def _cmd_ready(self, session: Session, data: dict, now: int) -> dict:
        session.ready = True
        # device-ready callback mirrors the phone-app handshake
        self.broadcast({"event": "new_message",
                        "data": {"from": "Dispatcher", "type": "device_ready",
                                 "interviewer": session.interviewer}},
                       publisher=session)
        active = self.dispatcher.active_assignment(session.interviewer)
        if active is not None:
            self._push(session, active)
        return _reply("ready", ok=True)

    def _cmd_request_next(self, session: Session, data: dict, now: int) -> dict:
        self.dispatcher.purge_expired(now)
        assignment = self.dispatcher.request_next(session.interviewer, now)
        if assignment is None:
            random_trigger = self.dispatcher.maybe_random(now)
            if random_trigger is not None:
                self.dispatcher.submit(random_trigger, now)
                assignment = self.dispatcher.request_next(session.interviewer, now)
        if assignment is None:
            return _reply("request_next", ok=True, assignment=None)
        self._push(session, assignment)
        return _reply("request_next", ok=True,
                      assignment=_assignment_fields(assignment))

    def _active(self, session: Session) -> Assignment:
        assignment = self.dispatcher.active_assignment(session.interviewer)
        if assignment is None:
            raise StateError("no active assignment")
        return assignment

    def _cmd_skip(self, session: Session, data: dict, now: int) -> dict:
        code = data.get("code", "")
        if code not in SKIP_CODES:
            raise WireError(f"unknown skip code: {code!r}")
        assignment = self._active(session)
        self.dispatcher.skip(assignment.assignment_id,
                             SkipReason(code, data.get("note", "")), now)
        return _reply("skip", ok=True, status="skipped")

    def _cmd_begin_recording(self, session: Session, data: dict, now: int) -> dict:
        assignment = self._active(session)
        self.dispatcher.begin_recording(assignment.assignment_id, now)
        return _reply("begin_recording", ok=True, status="recording")

    def _cmd_stop_recording(self, session: Session, data: dict, now: int) -> dict:
        assignment = self._active(session)
        self.dispatcher.stop_recording(
            assignment.assignment_id, now,
            blob_ref=data.get("blob_ref", ""),
            byte_length=int(data.get("byte_length", 0)))
        return _reply("stop_recording", ok=True, status="pending")

    def _cmd_complete(self, session: Session, data: dict, now: int) -> dict:
        assignment = self._active(session)
        self.dispatcher.complete(
            assignment.assignment_id, now,
            feedback_text=data.get("feedback", ""),
            override_student=data.get("override_student", ""),
            other_students=data.get("other_students") or [])
        return _reply("complete", ok=True, status="completed")

    def _cmd_note_update(self, session: Session, data: dict, now: int) -> dict:
        assignment = self._active(session)
        self.dispatcher.update_notes(assignment.assignment_id,
                                     data.get("text", ""))
        return _reply("note_update", ok=True)

    def _cmd_disconnect(self, session: Session, data: dict, now: int) -> dict:
        session.ready = False
        return _reply("disconnect", ok=True)

    # -- pushes & housekeeping -----------------------------------------------

    def _push(self, session: Session, assignment: Assignment) -> None:
        if assignment.assignment_id in session.delivered:
            return
        session.delivered.add(assignment.assignment_id)
        self._safe_send(session, {
            "event": "new_message",
            "data": {"from": "Dispatcher", "type": "assignment",
                     **_assignment_fields(assignment)}})

    def deliver_ready(self, now: int) -> None:
        """Re-deliver active assignments to any ready session that lacks them."""
        for session in list(self.sessions.values()):
            if not (session.authenticated and session.ready):
                continue
            active = self.dispatcher.active_assignment(session.interviewer)
            if active is not None:
                self._push(session, active)

    def tick(self, now: int | None = None) -> list[str]:
        """Expire the queue and auto-skip assignments whose console vanished
        past the trigger's TTL. Returns auto-skipped assignment ids."""
        now = self.clock() if now is None else now
        self.dispatcher.purge_expired(now)
        skipped = []
        for interviewer in list(self.parked_since):
            if self._connected(interviewer):
                del self.parked_since[interviewer]
                continue
            active = self.dispatcher.active_assignment(interviewer)
            if active is None:
                del self.parked_since[interviewer]
                continue
            if now >= active.trigger.expires_at:
                self.dispatcher.skip(active.assignment_id,
                                     SkipReason("other", "connection lost"), now)
                skipped.append(active.assignment_id)
                del self.parked_since[interviewer]
        return skipped

    # -- recordings ------------------------------------------------------------

    def store_recording(self, assignment_id: str, payload: bytes,
                        declared_duration_ms: int = 0) -> str:
        if not payload:
            raise WireError("empty recording")
        cap = self.dispatcher.config.recording_size_cap_bytes
        if len(payload) > cap:
            raise WireError(f"recording exceeds size cap ({cap} bytes)")
        assignment = self.dispatcher.get_assignment(assignment_id)
        if assignment.closed:
            raise WireError("assignment closed")
        ref = "rec-" + hashlib.sha256(payload).hexdigest()[:24]
        if self.blob_dir is not None:
            path = self.blob_dir / ref
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(payload)
        else:
            self.blobs[ref] = payload
        return ref


def _reply(kind: str, **fields) -> dict:
    return {"event": "new_message",
            "data": {"from": "Dispatcher", "reply": kind, **fields}}


def _assignment_fields(assignment: Assignment) -> dict:
    trigger = assignment.trigger
    return {
        "assignment_id": assignment.assignment_id,
        "eventID": trigger.event_id,
        "timestamp": format_timestamp(trigger.fired_at),
        "student": trigger.student,
        "trigger": trigger.description,
        "reviewer": assignment.interviewer,
        "expires_at": format_timestamp(trigger.expires_at),
        "notes": assignment.feedback_text,
    }


# -- ASGI wiring ----------------------------------------------------------------


def create_app(gateway: Gateway):
    """FastAPI app exposing the WebSocket channel and the HTTP sidecar."""
    from fastapi import FastAPI
    from fastapi.responses import PlainTextResponse

    app = FastAPI(title="qrf-gateway")
    app.state.gateway = gateway

    @app.websocket("/ws/{channel}")
    async def websocket_channel(ws: WebSocket, channel: str):
        await ws.accept()
        import asyncio
        loop = asyncio.get_running_loop()

        def send(message: dict) -> None:
            loop.create_task(ws.send_json(message))

        session = gateway.connect(send)
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    envelope = json.loads(raw)
                except json.JSONDecodeError:
                    await ws.send_json(_reply("error", ok=False,
                                              reason="malformed JSON"))
                    continue
                reply = gateway.handle_envelope(session, envelope)
                await ws.send_json(reply)
        except WebSocketDisconnect:
            pass
        finally:
            gateway.disconnect(session)

    @app.post("/recordings")
    async def upload_recording(request: Request, assignment_id: str,
                               declared_duration_ms: int = 0):
        payload = await request.body()
        try:
            ref = gateway.store_recording(assignment_id, payload,
                                          declared_duration_ms)
        except (WireError, StateError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"ref": ref, "bytes": len(payload)}

    @app.get("/masterlog.csv")
    async def masterlog_csv():
        return PlainTextResponse(gateway.store.export_csv(),
                                 media_type="text/csv")

    @app.get("/masterlog")
    async def masterlog(latest: int = 50, taken: bool | None = None):
        entries = gateway.store.query(latest_n=latest, taken_filter=taken)
        return {"entries": [e.render_row() | {"outcome": e.outcome}
                            for e in entries]}

    @app.delete("/masterlog/{event_id}")
    async def delete_entry(event_id: str):
        try:
            gateway.store.delete_entry(event_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown event_id")
        return {"deleted": event_id}

    return app
