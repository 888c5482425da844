/** Interviewer view: login, connectivity header, assignment card, recorder,
 * notes/override/other-students boxes, next/skip controls. */

import {
  appCommand,
  completeCommand,
  localizeTimestamp,
  loginCommand,
  parseServerMessage,
  skipCommand,
  SKIP_CODES,
  type SkipCode,
} from "../protocol.js";
import {
  canAdvance,
  canRecord,
  elapsedMs,
  formatElapsed,
  initialState,
  isRecording,
  parseOtherStudents,
  reduce,
  type ConsoleEvent,
  type ConsoleState,
} from "../state.js";
import { Channel, defaultChannelUrl } from "../net.js";

export function mountInterview(root: HTMLElement): void {
  let state: ConsoleState = initialState();
  let recorder: MediaRecorder | null = null;
  let chunks: Blob[] = [];

  const channel = new Channel(defaultChannelUrl(), {
    onOpen: () => dispatch({ type: "socket_open" }),
    onClose: () => dispatch({ type: "socket_closed" }),
    onMessage: (raw) => dispatch({ type: "server", message: parseServerMessage(raw) }),
  });

  function dispatch(event: ConsoleEvent): void {
    state = reduce(state, event);
    render();
  }

  function login(): void {
    const username = (root.querySelector("#username") as HTMLInputElement).value.trim();
    const password = (root.querySelector("#password") as HTMLInputElement).value;
    channel.send(loginCommand(username, password));
  }

  async function startRecording(): Promise<void> {
    if (!canRecord(state)) return;
    const stream = await navigator.mediaDevices.getUserMedia({ audio: true });
    chunks = [];
    recorder = new MediaRecorder(stream);
    recorder.ondataavailable = (event) => chunks.push(event.data);
    recorder.start();
    dispatch({ type: "record_started", now: Date.now() });
  }

  function stopRecording(): void {
    const active = recorder;
    const assignment = state.assignment;
    if (active === null || assignment === null) return;
    active.onstop = async () => {
      const blob = new Blob(chunks);
      const response = await fetch(
        `/recordings?assignment_id=${encodeURIComponent(assignment.assignmentId)}`,
        { method: "POST", body: blob },
      );
      if (!response.ok) {
        dispatch({
          type: "server",
          message: { kind: "reply", reply: "error", ok: false, reason: await response.text(), fields: {} },
        });
        return;
      }
      const { ref, bytes } = (await response.json()) as { ref: string; bytes: number };
      channel.send(appCommand("stop_recording", { blob_ref: ref, byte_length: bytes }));
    };
    active.stop();
    active.stream.getTracks().forEach((track) => track.stop());
    recorder = null;
    dispatch({ type: "record_stopped", now: Date.now() });
  }

  function complete(): void {
    if (!canAdvance(state)) return;
    channel.send(
      completeCommand(state.notes, state.overrideStudent, parseOtherStudents(state.otherStudents)),
    );
  }

  function skip(code: SkipCode): void {
    const note = code === "other"
      ? window.prompt("Reason for skipping?") ?? ""
      : "";
    channel.send(skipCommand(code, note));
  }

  function render(): void {
    const a = state.assignment;
    root.innerHTML = `
      <header class="connectivity ${state.connection}">
        <span>${state.connection === "online" ? "Connected" : state.connection === "offline" ? "Offline - reconnecting" : "Connecting"}</span>
        <span>${state.interviewer ? `Interviewer: ${state.interviewer}` : ""}</span>
      </header>
      ${state.lastError ? `<div class="error" role="alert">${state.lastError}</div>` : ""}
      ${state.authenticated ? "" : `
        <section class="login">
          <input id="username" placeholder="Interviewer name" />
          <input id="password" type="password" placeholder="Password" />
          <button id="btn-login">Log in</button>
        </section>`}
      ${state.authenticated && !state.ready ? `<button id="btn-ready">Ready</button>` : ""}
      ${state.ready && !a ? `<p class="idle">Waiting for a trigger... <button id="btn-next-trigger">Request next</button></p>` : ""}
      ${a ? `
        <section class="assignment">
          <dl>
            <dt>Event ID</dt><dd>${a.eventId}</dd>
            <dt>Time</dt><dd>${localizeTimestamp(a.timestamp)}</dd>
            <dt>Student</dt><dd>${a.student}</dd>
            <dt>Trigger</dt><dd>${a.trigger}</dd>
            <dt>Interviewer</dt><dd>${a.reviewer}</dd>
          </dl>
          <button id="btn-record" ${canRecord(state) ? "" : "disabled"}>Tap to Record Feedback</button>
          <button id="btn-stop" ${isRecording(state) ? "" : "disabled"}>Stop</button>
          <span id="elapsed">${formatElapsed(elapsedMs(state, Date.now()))}</span>
          <textarea id="notes" placeholder="Notes">${state.notes}</textarea>
          <input id="override" placeholder="Override student" value="${state.overrideStudent}" />
          <input id="others" placeholder="Other students (comma-separated)" value="${state.otherStudents}" />
          <button id="btn-next" ${canAdvance(state) ? "" : "disabled"}>Next (complete)</button>
          <button id="btn-skip" ${canAdvance(state) ? "" : "disabled"}>Skip</button>
        </section>` : ""}
      ${state.skipDialogOpen ? `
        <section class="skip-dialog" role="dialog">
          ${SKIP_CODES.map((code) => `<button class="skip-code" data-code="${code}">${code.replace(/_/g, " ")}</button>`).join("")}
          <button id="btn-skip-cancel">Cancel</button>
        </section>` : ""}
    `;
    wire();
  }

  function wire(): void {
    root.querySelector("#btn-login")?.addEventListener("click", login);
    root.querySelector("#btn-ready")?.addEventListener("click", () => channel.send(appCommand("ready")));
    root.querySelector("#btn-next-trigger")?.addEventListener("click", () => channel.send(appCommand("request_next")));
    root.querySelector("#btn-record")?.addEventListener("click", () => {
      channel.send(appCommand("begin_recording"));
      void startRecording();
    });
    root.querySelector("#btn-stop")?.addEventListener("click", stopRecording);
    root.querySelector("#btn-next")?.addEventListener("click", complete);
    root.querySelector("#btn-skip")?.addEventListener("click", () => dispatch({ type: "open_skip_dialog" }));
    root.querySelector("#btn-skip-cancel")?.addEventListener("click", () => dispatch({ type: "close_skip_dialog" }));
    root.querySelectorAll(".skip-code").forEach((button) =>
      button.addEventListener("click", () => skip((button as HTMLElement).dataset.code as SkipCode)),
    );
    root.querySelector("#notes")?.addEventListener("input", (event) => {
      const text = (event.target as HTMLTextAreaElement).value;
      state = reduce(state, { type: "notes_input", text });
      channel.send(appCommand("note_update", { text }));
    });
    root.querySelector("#override")?.addEventListener("input", (event) => {
      state = reduce(state, { type: "override_input", text: (event.target as HTMLInputElement).value });
    });
    root.querySelector("#others")?.addEventListener("input", (event) => {
      state = reduce(state, { type: "others_input", text: (event.target as HTMLInputElement).value });
    });
  }

  // tick the elapsed-time label while recording without a full re-render
  setInterval(() => {
    if (!isRecording(state)) return;
    const label = root.querySelector("#elapsed");
    if (label) label.textContent = formatElapsed(elapsedMs(state, Date.now()));
  }, 500);

  render();
  channel.connect();
}
