/** Dashboard view: live masterlog table, filters, stats, CSV download. */

import {
  applyFeed,
  applyLiveRow,
  csvUrl,
  feedUrl,
  initialDashboard,
  removeRow,
  rowFromFeed,
  stats,
  visibleRows,
  type DashboardState,
  type OutcomeFilter,
} from "../dashboard.js";
import { localizeTimestamp, parseServerMessage } from "../protocol.js";
import { Channel, defaultChannelUrl } from "../net.js";

export function mountDashboard(root: HTMLElement): void {
  let state: DashboardState = initialDashboard();
  let showStats = false;

  async function refresh(): Promise<void> {
    try {
      const response = await fetch(feedUrl("", state));
      if (!response.ok) throw new Error(`feed failed: ${response.status}`);
      const body = (await response.json()) as { entries: Record<string, string>[] };
      state = applyFeed(state, body.entries.map(rowFromFeed), new Date().toISOString());
    } catch (error) {
      state = { ...state, error: String(error) };
    }
    render();
  }

  // any dispatcher/software traffic can change a row; refetch the affected
  // row set instead of trusting partial wire data
  const channel = new Channel(defaultChannelUrl(), {
    onOpen: () => void refresh(),
    onClose: () => undefined,
    onMessage: (raw) => {
      const message = parseServerMessage(raw);
      if (message.kind === "trigger" || message.kind === "reply" || message.kind === "assignment") {
        void refreshRow();
      }
    },
  });

  async function refreshRow(): Promise<void> {
    try {
      const response = await fetch(feedUrl("", state));
      if (!response.ok) return;
      const body = (await response.json()) as { entries: Record<string, string>[] };
      const now = new Date().toISOString();
      for (const raw of body.entries.map(rowFromFeed)) {
        state = applyLiveRow(state, raw, now);
      }
      render();
    } catch {
      // keep the stale table with its last-updated stamp
    }
  }

  async function deleteRow(eventId: string): Promise<void> {
    if (!window.confirm(`Delete masterlog entry ${eventId}?`)) return;
    const response = await fetch(`/masterlog/${encodeURIComponent(eventId)}`, { method: "DELETE" });
    if (response.ok) {
      state = removeRow(state, eventId);
      render();
    } else {
      state = { ...state, error: `delete failed: ${response.status}` };
      render();
    }
  }

  function render(): void {
    const rows = visibleRows(state);
    const s = stats(state);
    root.innerHTML = `
      <header class="dash-controls">
        <a class="csv" href="${csvUrl()}" download="masterlog.csv">DOWNLOAD CSV (ALL)</a>
        <button id="btn-see-all">${state.showAll ? "LATEST 50" : "SEE ALL"}</button>
        <select id="filter">
          <option value="all" ${state.filter === "all" ? "selected" : ""}>All</option>
          <option value="taken" ${state.filter === "taken" ? "selected" : ""}>Taken</option>
          <option value="untaken" ${state.filter === "untaken" ? "selected" : ""}>Untaken</option>
        </select>
        <button id="btn-stats">Show Stats</button>
        <span class="stamp">Last updated: ${state.lastUpdated ? localizeTimestamp(state.lastUpdated) : "never"}</span>
      </header>
      ${state.error ? `<div class="error" role="alert">${state.error}</div>` : ""}
      ${showStats ? `
        <section class="stats">
          <p>Total: ${s.total}</p>
          <p>${Object.entries(s.byOutcome).map(([k, v]) => `${k}: ${v}`).join(", ")}</p>
          <p>${Object.entries(s.byStudent).map(([k, v]) => `${k}: ${v}`).join(", ")}</p>
        </section>` : ""}
      <table class="masterlog">
        <thead><tr>
          <th>Event ID</th><th>Timestamp</th><th>Student</th><th>Trigger</th>
          <th>Software</th><th>Reviewer</th><th>Feedback TXT</th>
          <th>Override Student</th><th>Other Student</th><th>Feedback REC</th>
          <th>Duration REC</th><th>Start REC</th><th>End</th><th></th>
        </tr></thead>
        <tbody>
          ${rows.map((row) => `
            <tr data-event-id="${row.eventId}" class="outcome-${row.outcome}">
              <td>${row.eventId}</td>
              <td>${localizeTimestamp(row.timestamp)}</td>
              <td>${row.student}</td>
              <td>${row.trigger}</td>
              <td>${row.software}</td>
              <td>${row.reviewer}</td>
              <td>${row.feedbackText}</td>
              <td>${row.overrideStudent}</td>
              <td>${row.otherStudent}</td>
              <td>${row.feedbackRec.startsWith("rec-") ? `<audio controls src="/recordings/${row.feedbackRec}"></audio>` : row.feedbackRec}</td>
              <td>${row.durationRec}</td>
              <td>${localizeTimestamp(row.startRec)}</td>
              <td>${localizeTimestamp(row.end)}</td>
              <td><button class="delete" data-event-id="${row.eventId}">Delete</button></td>
            </tr>`).join("")}
        </tbody>
      </table>
    `;
    root.querySelector("#btn-see-all")?.addEventListener("click", () => {
      state = { ...state, showAll: !state.showAll };
      void refresh();
    });
    root.querySelector("#btn-stats")?.addEventListener("click", () => {
      showStats = !showStats;
      render();
    });
    root.querySelector("#filter")?.addEventListener("change", (event) => {
      state = { ...state, filter: (event.target as HTMLSelectElement).value as OutcomeFilter };
      render();
    });
    root.querySelectorAll("button.delete").forEach((button) =>
      button.addEventListener("click", () =>
        void deleteRow((button as HTMLElement).dataset.eventId ?? ""),
      ),
    );
  }

  render();
  channel.connect();
  void refresh();
}
