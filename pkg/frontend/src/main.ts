/** DOM wiring for the rollout explorer. */

import { ApiClient } from "./api.js";
import { orbit, zoom } from "./camera.js";
import { PRESET_STOPS } from "./colormap.js";
import { plannedViewCounts, totalPlannedImages } from "./counting.js";
import { drawFrame } from "./renderer.js";
import {
  canExport,
  draftConfig,
  draftErrors,
  emptyState,
  loadRollout,
  resetRangeToHarvested,
  scrub,
  setCadence,
  setRange,
  tagWindow,
  type ViewerState,
} from "./state.js";
import type { FramePayload } from "./types.js";

const api = new ApiClient("");
let state: ViewerState = emptyState();
let currentFrame: FramePayload | null = null;
let playTimer: number | null = null;

const canvas = document.getElementById("viewport") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const rolloutList = document.getElementById("rollouts")!;
const timeline = document.getElementById("timeline") as HTMLInputElement;
const frameLabel = document.getElementById("frame-label")!;
const statusLine = document.getElementById("status")!;
const rangeLo = document.getElementById("range-lo") as HTMLInputElement;
const rangeHi = document.getElementById("range-hi") as HTMLInputElement;
const legendLo = document.getElementById("legend-lo")!;
const legendHi = document.getElementById("legend-hi")!;
const cadenceInput = document.getElementById("cadence") as HTMLInputElement;
const windowsTable = document.getElementById("windows")!;
const previewCounts = document.getElementById("preview-counts")!;
const exportButton = document.getElementById("export") as HTMLButtonElement;
const exportStatus = document.getElementById("export-status")!;
const playButton = document.getElementById("play") as HTMLButtonElement;

function setStatus(text: string, isError = false) {
  statusLine.textContent = text;
  statusLine.className = isError ? "error" : "";
}

async function refreshRollouts() {
  try {
    const rollouts = await api.listRollouts();
    rolloutList.innerHTML = "";
    if (rollouts.length === 0) {
      rolloutList.textContent = "no rollouts in the data directory";
      return;
    }
    for (const r of rollouts) {
      const item = document.createElement("button");
      item.textContent = `${r.id} (${r.frames} frames, ${r.particles} particles, dt ${r.dt})`;
      item.onclick = () => selectRollout(r.id);
      rolloutList.appendChild(item);
    }
  } catch (err) {
    rolloutList.innerHTML = "";
    const retry = document.createElement("button");
    retry.textContent = "service unreachable; retry";
    retry.onclick = refreshRollouts;
    rolloutList.appendChild(retry);
    setStatus(String(err), true);
  }
}

async function selectRollout(id: string) {
  try {
    const meta = await api.rolloutMeta(id);
    state = loadRollout(state, meta, canvas.width, canvas.height);
    timeline.max = String(meta.num_frames - 1);
    timeline.value = "0";
    renderControls();
    await showFrame(0);
    setStatus(`loaded ${id}`);
  } catch (err) {
    setStatus(String(err), true);
  }
}

async function showFrame(index: number) {
  const loadedMeta = state.meta;
  if (!loadedMeta) return;
  state = scrub(state, index);
  frameLabel.textContent = `frame ${state.frameIndex} / ${loadedMeta.num_frames - 1}`;
  const frame = await api.fetchFrame(loadedMeta.id, state.frameIndex);
  if (frame === null) return; // superseded by a newer scrub
  currentFrame = frame;
  redraw();
}

function redraw() {
  if (!currentFrame || !state.camera) return;
  const ms = drawFrame(ctx, currentFrame, state.camera, {
    stops: PRESET_STOPS[state.colormapName],
    lo: state.range[0],
    hi: state.range[1],
    field: "displacement",
    pointScale: state.particleRadius,
    background: "#10141a",
  });
  setStatus(`${currentFrame.particles} points in ${ms.toFixed(1)} ms`);
}

function renderControls() {
  rangeLo.value = String(state.range[0]);
  rangeHi.value = String(state.range[1]);
  legendLo.textContent = `${state.range[0].toPrecision(3)} m`;
  legendHi.textContent = `${state.range[1].toPrecision(3)} m`;
  cadenceInput.value = String(state.cadence);
  windowsTable.innerHTML = "";
  for (const view of state.viewNames) {
    const [start, end] = state.windows[view] ?? [0, 0];
    const row = document.createElement("div");
    row.className = "window-row";
    row.innerHTML =
      `<span>${view}</span>` +
      `<input type="number" value="${start}" data-view="${view}" data-kind="start">` +
      `<input type="number" value="${end}" data-view="${view}" data-kind="end">`;
    windowsTable.appendChild(row);
  }
  windowsTable.querySelectorAll("input").forEach((input) => {
    input.addEventListener("change", onWindowEdit);
  });
  renderPreview();
}

function onWindowEdit(event: Event) {
  const input = event.target as HTMLInputElement;
  const view = input.dataset.view!;
  const [start, end] = state.windows[view];
  const value = Number(input.value);
  const next =
    input.dataset.kind === "start"
      ? tagWindow(state, view, value, end)
      : tagWindow(state, view, start, value);
  if (next.tagError) {
    setStatus(`${next.tagError.field}: ${next.tagError.message}`, true);
  }
  state = next;
  renderPreview();
}

function renderPreview() {
  if (!state.meta || !state.camera) {
    previewCounts.textContent = "";
    exportButton.disabled = true;
    return;
  }
  const config = draftConfig(state);
  const counts = plannedViewCounts(config);
  const lines = Object.entries(counts)
    .sort()
    .map(([view, count]) => `${view}: ${count} images`);
  lines.push(`total: ${totalPlannedImages(config)} images`);
  previewCounts.textContent = lines.join("\n");
  const errors = draftErrors(state);
  exportButton.disabled = !canExport(state);
  exportStatus.textContent = errors.length
    ? errors.map((e) => `${e.field}: ${e.message}`).join("\n")
    : "";
}

async function onExport() {
  if (!canExport(state)) return;
  const result = await api.exportConfig(draftConfig(state));
  if (result.ok) {
    exportStatus.textContent = `exported to ${result.path}`;
  } else {
    exportStatus.textContent = result.errors
      .map((e) => `${e.field}: ${e.message}`)
      .join("\n");
  }
}

// --- event hookup ---------------------------------------------------------

timeline.addEventListener("input", () => void showFrame(Number(timeline.value)));

playButton.addEventListener("click", () => {
  if (playTimer !== null) {
    clearInterval(playTimer);
    playTimer = null;
    playButton.textContent = "play";
    return;
  }
  playButton.textContent = "pause";
  playTimer = window.setInterval(() => {
    if (!state.meta) return;
    const next = (state.frameIndex + 1) % state.meta.num_frames;
    timeline.value = String(next);
    void showFrame(next);
  }, 80);
});

let dragging = false;
let lastX = 0;
let lastY = 0;
canvas.addEventListener("pointerdown", (e) => {
  dragging = true;
  lastX = e.clientX;
  lastY = e.clientY;
  canvas.setPointerCapture(e.pointerId);
});
canvas.addEventListener("pointermove", (e) => {
  if (!dragging || !state.camera) return;
  const dx = e.clientX - lastX;
  const dy = e.clientY - lastY;
  lastX = e.clientX;
  lastY = e.clientY;
  state = { ...state, camera: orbit(state.camera, -dx * 0.008, dy * 0.008) };
  redraw();
});
canvas.addEventListener("pointerup", () => {
  dragging = false;
});
canvas.addEventListener("wheel", (e) => {
  if (!state.camera) return;
  e.preventDefault();
  state = { ...state, camera: zoom(state.camera, e.deltaY > 0 ? 1.1 : 1 / 1.1) };
  redraw();
});

rangeLo.addEventListener("change", () => {
  state = setRange(state, Number(rangeLo.value), Number(rangeHi.value));
  renderControls();
  redraw();
});
rangeHi.addEventListener("change", () => {
  state = setRange(state, Number(rangeLo.value), Number(rangeHi.value));
  renderControls();
  redraw();
});
document.getElementById("range-reset")!.addEventListener("click", () => {
  state = resetRangeToHarvested(state);
  renderControls();
  redraw();
});
cadenceInput.addEventListener("change", () => {
  state = setCadence(state, Number(cadenceInput.value));
  renderPreview();
});
exportButton.addEventListener("click", () => void onExport());

void refreshRollouts();
