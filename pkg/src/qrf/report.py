"""Figure rendering for simulation reports.

Writes PNG figures next to the JSON/CSV output of a run: an
assignment-latency histogram, per-student interview counts, and per-definition
outcome totals.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .sim import SimReport  # noqa: E402


def render_figures(report: SimReport, out_dir: str | Path) -> list[Path]:
    """Render all report figures into out_dir; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(7, 4))
    latencies_s = [ms / 1000 for ms in report.assignment_latencies_ms]
    if latencies_s:
        ax.hist(latencies_s, bins=30, color="#4878a8", edgecolor="white")
    ax.set_xlabel("fired-to-assigned latency (s)")
    ax.set_ylabel("assignments")
    ax.set_title("Assignment latency")
    path = out_dir / "latency_hist.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(7, 4))
    students = sorted(report.per_student_interviews)
    counts = [report.per_student_interviews[s] for s in students]
    ax.bar(students, counts, color="#6aa84f")
    ax.set_ylabel("completed interviews")
    ax.set_title("Interviews per student")
    ax.tick_params(axis="x", rotation=45)
    path = out_dir / "interviews_per_student.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(8, 4))
    definitions = sorted(report.per_definition)
    outcomes = sorted({o for c in report.per_definition.values()
                       for o in c if o != "fired"})
    bottom = [0.0] * len(definitions)
    for outcome in outcomes:
        values = [report.per_definition[d].get(outcome, 0) for d in definitions]
        ax.bar(definitions, values, bottom=bottom, label=outcome)
        bottom = [b + v for b, v in zip(bottom, values)]
    ax.set_ylabel("triggers")
    ax.set_title("Outcomes by trigger definition")
    ax.tick_params(axis="x", rotation=45)
    if outcomes:
        ax.legend(fontsize=8)
    path = out_dir / "outcomes_by_definition.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    return written
