/**
 * Wire protocol helpers: envelope builders and server-message parsing.
 * Mirrors docs/protocol.md; everything rides one "new_message" envelope.
 */

export const SKIP_CODES = [
  "prioritization_off",
  "student_upset",
  "student_unavailable",
  "just_interviewed",
  "other",
] as const;

export type SkipCode = (typeof SKIP_CODES)[number];

export interface Envelope {
  event: "new_message";
  data: { from: string; [key: string]: unknown };
}

export interface Assignment {
  assignmentId: string;
  eventId: string;
  timestamp: string;
  student: string;
  trigger: string;
  reviewer: string;
  expiresAt: string;
  notes: string;
}

export type ServerMessage =
  | { kind: "assignment"; assignment: Assignment }
  | { kind: "device_ready"; interviewer: string }
  | { kind: "reply"; reply: string; ok: boolean; reason?: string; fields: Record<string, unknown> }
  | { kind: "trigger"; student: string; trigger: string }
  | { kind: "ignored" };

export function appCommand(command: string, fields: Record<string, unknown> = {}): Envelope {
  return { event: "new_message", data: { from: "app", command, ...fields } };
}

export function loginCommand(username: string, password: string): Envelope {
  return appCommand("login", { username, password });
}

export function skipCommand(code: SkipCode, note = ""): Envelope {
  return appCommand("skip", code === "other" ? { code, note } : { code });
}

export function completeCommand(
  feedback: string,
  overrideStudent: string,
  otherStudents: string[],
): Envelope {
  return appCommand("complete", {
    feedback,
    override_student: overrideStudent,
    other_students: otherStudents,
  });
}

function str(value: unknown): string {
  return typeof value === "string" ? value : "";
}

/** Classify one inbound envelope; unknown shapes are ignored, never thrown. */
export function parseServerMessage(raw: unknown): ServerMessage {
  if (typeof raw !== "object" || raw === null) return { kind: "ignored" };
  const envelope = raw as { event?: unknown; data?: unknown };
  if (envelope.event !== "new_message" || typeof envelope.data !== "object" || envelope.data === null) {
    return { kind: "ignored" };
  }
  const data = envelope.data as Record<string, unknown>;

  if (data.from === "software" && typeof data.student === "string") {
    return { kind: "trigger", student: data.student, trigger: str(data.trigger) };
  }
  if (data.from !== "Dispatcher") return { kind: "ignored" };

  if (data.type === "assignment" && typeof data.assignment_id === "string") {
    return {
      kind: "assignment",
      assignment: {
        assignmentId: data.assignment_id,
        eventId: str(data.eventID),
        timestamp: str(data.timestamp),
        student: str(data.student),
        trigger: str(data.trigger),
        reviewer: str(data.reviewer),
        expiresAt: str(data.expires_at),
        notes: str(data.notes),
      },
    };
  }
  if (data.type === "device_ready") {
    return { kind: "device_ready", interviewer: str(data.interviewer) };
  }
  if (typeof data.reply === "string") {
    return {
      kind: "reply",
      reply: data.reply,
      ok: data.ok === true,
      reason: typeof data.reason === "string" ? data.reason : undefined,
      fields: data,
    };
  }
  return { kind: "ignored" };
}

/** Dashboard renders localized timestamps; the wire carries ISO-8601 UTC. */
export function localizeTimestamp(iso: string): string {
  if (!iso || iso === "N/A") return iso || "";
  const date = new Date(iso);
  return Number.isNaN(date.getTime()) ? iso : date.toLocaleString();
}
