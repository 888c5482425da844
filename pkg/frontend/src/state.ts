/**
 * Interviewer-console state machine. Pure: views dispatch events into
 * `reduce` and re-render from the returned state, so every rule here is
 * unit-testable without a browser.
 */

import type { Assignment, ServerMessage } from "./protocol.js";

export type Connection = "connecting" | "online" | "offline";

export interface ConsoleState {
  connection: Connection;
  interviewer: string;
  authenticated: boolean;
  ready: boolean;
  assignment: Assignment | null;
  /** assignment ids already applied; pushes are at-least-once */
  seenAssignments: string[];
  notes: string;
  overrideStudent: string;
  otherStudents: string;
  recordingStartedAt: number | null;
  recordedMs: number;
  skipDialogOpen: boolean;
  lastError: string;
}

export function initialState(): ConsoleState {
  return {
    connection: "connecting",
    interviewer: "",
    authenticated: false,
    ready: false,
    assignment: null,
    seenAssignments: [],
    notes: "",
    overrideStudent: "",
    otherStudents: "",
    recordingStartedAt: null,
    recordedMs: 0,
    skipDialogOpen: false,
    lastError: "",
  };
}

export type ConsoleEvent =
  | { type: "socket_open" }
  | { type: "socket_closed" }
  | { type: "server"; message: ServerMessage }
  | { type: "notes_input"; text: string }
  | { type: "override_input"; text: string }
  | { type: "others_input"; text: string }
  | { type: "record_started"; now: number }
  | { type: "record_stopped"; now: number }
  | { type: "open_skip_dialog" }
  | { type: "close_skip_dialog" };

export function reduce(state: ConsoleState, event: ConsoleEvent): ConsoleState {
  switch (event.type) {
    case "socket_open":
      return { ...state, connection: "online" };
    case "socket_closed":
      // the assignment stays: the server re-pushes it after reconnect and
      // the dedupe list keeps the double delivery harmless
      return { ...state, connection: "offline", ready: false };
    case "notes_input":
      return { ...state, notes: event.text };
    case "override_input":
      return { ...state, overrideStudent: event.text };
    case "others_input":
      return { ...state, otherStudents: event.text };
    case "record_started":
      if (!canRecord(state)) return state;
      return { ...state, recordingStartedAt: event.now };
    case "record_stopped":
      if (state.recordingStartedAt === null) return state;
      return {
        ...state,
        recordedMs: state.recordedMs + (event.now - state.recordingStartedAt),
        recordingStartedAt: null,
      };
    case "open_skip_dialog":
      return state.assignment ? { ...state, skipDialogOpen: true } : state;
    case "close_skip_dialog":
      return { ...state, skipDialogOpen: false };
    case "server":
      return applyServer(state, event.message);
  }
}

function clearAssignment(state: ConsoleState): ConsoleState {
  return {
    ...state,
    assignment: null,
    notes: "",
    overrideStudent: "",
    otherStudents: "",
    recordingStartedAt: null,
    recordedMs: 0,
    skipDialogOpen: false,
  };
}

function applyServer(state: ConsoleState, message: ServerMessage): ConsoleState {
  switch (message.kind) {
    case "assignment": {
      const id = message.assignment.assignmentId;
      if (state.seenAssignments.includes(id)) return state;
      return {
        ...clearAssignment(state),
        assignment: message.assignment,
        notes: message.assignment.notes,
        seenAssignments: [...state.seenAssignments, id],
      };
    }
    case "reply":
      return applyReply(state, message);
    case "device_ready":
    case "trigger":
    case "ignored":
      return state;
  }
}

function applyReply(
  state: ConsoleState,
  message: Extract<ServerMessage, { kind: "reply" }>,
): ConsoleState {
  if (!message.ok) {
    return { ...state, lastError: message.reason ?? "request rejected" };
  }
  const next = { ...state, lastError: "" };
  switch (message.reply) {
    case "login":
      return {
        ...next,
        authenticated: true,
        interviewer: String(message.fields.interviewer ?? ""),
      };
    case "ready":
      return { ...next, ready: true };
    case "complete":
    case "skip":
      return clearAssignment(next);
    case "disconnect":
      return { ...next, ready: false };
    default:
      return next;
  }
}

// -- derived UI rules ---------------------------------------------------------

export function isRecording(state: ConsoleState): boolean {
  return state.recordingStartedAt !== null;
}

/** Record is unavailable without an assignment or while already recording. */
export function canRecord(state: ConsoleState): boolean {
  return state.assignment !== null && !isRecording(state);
}

/** "Next (complete)" and skip are unavailable while the recorder runs. */
export function canAdvance(state: ConsoleState): boolean {
  return state.assignment !== null && !isRecording(state);
}

/** Total captured time; monotone while recording. */
export function elapsedMs(state: ConsoleState, now: number): number {
  const live = state.recordingStartedAt === null
    ? 0
    : Math.max(0, now - state.recordingStartedAt);
  return state.recordedMs + live;
}

export function formatElapsed(ms: number): string {
  const totalSeconds = Math.floor(ms / 1000);
  const minutes = Math.floor(totalSeconds / 60);
  const seconds = totalSeconds % 60;
  return `${minutes}:${String(seconds).padStart(2, "0")}`;
}

/** Comma-separated text box -> trimmed student list. */
export function parseOtherStudents(text: string): string[] {
  return text
    .split(",")
    .map((part) => part.trim())
    .filter((part) => part.length > 0);
}
