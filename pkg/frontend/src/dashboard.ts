/**
 * Dashboard state: a live masterlog table fed by the HTTP feed and patched
 * in place by WebSocket traffic. Pure module; rendering lives in the views.
 */

export interface LogRow {
  eventId: string;
  timestamp: string;
  student: string;
  trigger: string;
  software: string;
  reviewer: string;
  feedbackText: string;
  overrideStudent: string;
  otherStudent: string;
  feedbackRec: string;
  durationRec: string;
  startRec: string;
  end: string;
  outcome: string;
}

export type OutcomeFilter = "all" | "taken" | "untaken";

export interface DashboardState {
  rows: LogRow[]; // newest first, mirrors the server feed order
  showAll: boolean; // default: latest 50 only
  filter: OutcomeFilter;
  lastUpdated: string; // ISO stamp of the last successful refresh/patch
  error: string;
}

export const LATEST_LIMIT = 50;

export function initialDashboard(): DashboardState {
  return { rows: [], showAll: false, filter: "all", lastUpdated: "", error: "" };
}

/** Server feed row (render_row keys plus outcome) -> typed row. */
export function rowFromFeed(raw: Record<string, string>): LogRow {
  return {
    eventId: raw["Event ID"] ?? "",
    timestamp: raw["Timestamp"] ?? "",
    student: raw["Student"] ?? "",
    trigger: raw["Trigger"] ?? "",
    software: raw["Software"] ?? "",
    reviewer: raw["Reviewer"] ?? "",
    feedbackText: raw["Feedback TXT"] ?? "",
    overrideStudent: raw["Override Student"] ?? "",
    otherStudent: raw["Other Student"] ?? "",
    feedbackRec: raw["Feedback REC"] ?? "",
    durationRec: raw["Duration REC"] ?? "",
    startRec: raw["Start REC"] ?? "",
    end: raw["End"] ?? "",
    outcome: raw["outcome"] ?? "untaken",
  };
}

export function applyFeed(
  state: DashboardState,
  rows: LogRow[],
  now: string,
): DashboardState {
  return { ...state, rows, lastUpdated: now, error: "" };
}

/** In-place update on completion or a fresh trigger; no full refresh. */
export function applyLiveRow(
  state: DashboardState,
  row: LogRow,
  now: string,
): DashboardState {
  const index = state.rows.findIndex((r) => r.eventId === row.eventId);
  const rows =
    index >= 0
      ? state.rows.map((r, i) => (i === index ? row : r))
      : [row, ...state.rows];
  return { ...state, rows, lastUpdated: now };
}

export function removeRow(state: DashboardState, eventId: string): DashboardState {
  return { ...state, rows: state.rows.filter((r) => r.eventId !== eventId) };
}

export function visibleRows(state: DashboardState): LogRow[] {
  let rows = state.rows;
  if (state.filter === "taken") rows = rows.filter((r) => r.outcome === "taken");
  if (state.filter === "untaken") rows = rows.filter((r) => r.outcome !== "taken");
  return state.showAll ? rows : rows.slice(0, LATEST_LIMIT);
}

export interface Stats {
  total: number;
  byOutcome: Record<string, number>;
  byStudent: Record<string, number>;
}

export function stats(state: DashboardState): Stats {
  const byOutcome: Record<string, number> = {};
  const byStudent: Record<string, number> = {};
  for (const row of state.rows) {
    byOutcome[row.outcome] = (byOutcome[row.outcome] ?? 0) + 1;
    byStudent[row.student] = (byStudent[row.student] ?? 0) + 1;
  }
  return { total: state.rows.length, byOutcome, byStudent };
}

/** CSV download goes straight to the export endpoint: byte-identical to the
 * CLI's export of the same journal. */
export function csvUrl(base = ""): string {
  return `${base}/masterlog.csv`;
}

export function feedUrl(base = "", state?: DashboardState): string {
  const latest = state?.showAll ? 100000 : LATEST_LIMIT;
  return `${base}/masterlog?latest=${latest}`;
}
