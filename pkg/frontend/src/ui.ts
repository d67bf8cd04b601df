// DOM renderer: one function of ConsoleState, no retained widgets.

import type { OperatorConsole } from "./console.js";
import type { ConsoleState, StreamRow } from "./state.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function fmt(value: number | null, digits = 1, suffix = ""): string {
  return value === null ? "-" : `${value.toFixed(digits)}${suffix}`;
}

function ageSeconds(row: StreamRow, state: ConsoleState): string {
  if (row.lastOriginatingTicks === null) return "-";
  const elapsed = state.session.elapsedTicks;
  if (elapsed === null || state.session.state !== "running") return "-";
  const age = (elapsed - row.lastOriginatingTicks) / 10_000_000;
  return `${Math.max(0, age).toFixed(2)}s`;
}

function streamTable(state: ConsoleState, console_: OperatorConsole): HTMLElement {
  const table = el("table", "streams");
  const head = el("tr");
  for (const title of ["stream", "on", "rate (Hz)", "msgs", "last msg age",
                       "latency mean", "drops"]) {
    head.appendChild(el("th", undefined, title));
  }
  table.appendChild(head);
  for (const row of state.streams) {
    const tr = el("tr", row.pending ? "pending" : undefined);
    tr.appendChild(el("td", "name", row.name));
    const toggleCell = el("td");
    const toggle = el("button", row.enabled ? "toggle on" : "toggle off");
    toggle.textContent = row.pending ? "..." : row.enabled ? "on" : "off";
    toggle.disabled = row.pending;
    toggle.dataset.stream = row.name;
    toggle.addEventListener("click", () => void console_.toggleStream(row.name));
    toggleCell.appendChild(toggle);
    tr.appendChild(toggleCell);
    tr.appendChild(el("td", undefined,
      row.measuredRateHz !== null ? row.measuredRateHz.toFixed(1)
        : row.nominalRateHz));
    tr.appendChild(el("td", undefined,
      row.messageCount === null ? "-" : String(row.messageCount)));
    tr.appendChild(el("td", undefined, ageSeconds(row, state)));
    tr.appendChild(el("td", undefined, fmt(row.latencyMeanUs, 0, " us")));
    tr.appendChild(el("td", undefined,
      row.dropCount === null ? "-" : String(row.dropCount)));
    table.appendChild(tr);
  }
  return table;
}

function captureControls(state: ConsoleState, console_: OperatorConsole): HTMLElement {
  const box = el("div", "capture");
  const active = state.session.state === "running";
  const nameInput = el("input") as HTMLInputElement;
  nameInput.placeholder = "session name";
  nameInput.id = "session-name";
  nameInput.disabled = active || state.captureBusy;
  const start = el("button", "start");
  start.textContent = "start capture";
  start.disabled = active || state.captureBusy;
  start.addEventListener("click", () => void console_.startCapture(nameInput.value));
  const stop = el("button", "stop");
  stop.textContent = "stop capture";
  stop.disabled = !active || state.captureBusy;
  stop.addEventListener("click", () => void console_.stopCapture());
  box.append(nameInput, start, stop);
  const status = active
    ? `recording ${state.session.name} -> ${state.session.storePath ?? "?"}`
    : `state: ${state.session.state}`;
  box.appendChild(el("span", "session-status", status));
  return box;
}

function summaryTable(state: ConsoleState): HTMLElement | null {
  if (!state.lastSummary) return null;
  const box = el("div", "summary");
  box.appendChild(el("h3", undefined,
    `last session: ${state.lastSummary.sessionName}`));
  const table = el("table");
  for (const { name, messageCount } of state.lastSummary.counts) {
    const tr = el("tr");
    tr.appendChild(el("td", undefined, name));
    tr.appendChild(el("td", undefined, String(messageCount)));
    table.appendChild(tr);
  }
  box.appendChild(table);
  return box;
}

export function render(root: HTMLElement, state: ConsoleState,
                       console_: OperatorConsole): void {
  root.replaceChildren();
  const header = el("div", "header");
  header.appendChild(el("h2", undefined, "capture console"));
  header.appendChild(el("span", `conn ${state.connection.kind}`,
    state.connection.kind === "error"
      ? `error: ${state.connection.message}`
      : state.connection.kind));
  root.appendChild(header);
  if (state.banner) {
    root.appendChild(el("div", "banner", state.banner));
  }
  root.appendChild(captureControls(state, console_));
  root.appendChild(streamTable(state, console_));
  const summary = summaryTable(state);
  if (summary) root.appendChild(summary);
  const note = state.malformedSnapshots
    ? ` (${state.malformedSnapshots} malformed snapshots skipped)` : "";
  root.appendChild(el("div", "footer",
    `${state.snapshotCount} snapshots received${note}`));
}
