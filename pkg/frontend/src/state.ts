/**
 * Viewer state and its transitions. Pure functions over immutable state so
 * the tagging/validation/export logic is testable without a DOM.
 */

import { initialOrbit, toCameraDoc, type OrbitState } from "./camera.js";
import { validateConfigDoc } from "./validation.js";
import type { ConfigDoc, FieldError, RolloutMeta } from "./types.js";
import { PRESET_STOPS } from "./colormap.js";

export interface ViewerState {
  meta: RolloutMeta | null;
  frameIndex: number;
  camera: OrbitState | null;
  colormapName: string;
  /** active color range; defaults to the harvested field range */
  range: [number, number];
  harvestedRange: [number, number] | null;
  viewNames: string[];
  windows: Record<string, [number, number]>;
  cadence: number;
  particleRadius: number;
  runLabel: string;
  tagError: FieldError | null;
}

export const DEFAULT_VIEWS = ["side", "top", "aerial"];

export function emptyState(): ViewerState {
  return {
    meta: null,
    frameIndex: 0,
    camera: null,
    colormapName: "viridis",
    range: [0, 1],
    harvestedRange: null,
    viewNames: [...DEFAULT_VIEWS],
    windows: {},
    cadence: 20,
    particleRadius: 0.005,
    runLabel: "ui-export",
    tagError: null,
  };
}

export function loadRollout(
  state: ViewerState,
  meta: RolloutMeta,
  canvasWidth: number,
  canvasHeight: number,
): ViewerState {
  const harvested = meta.field_ranges["displacement"] ?? [0, 1];
  const range: [number, number] =
    harvested[1] > harvested[0] ? [...harvested] : [harvested[0], harvested[0] + 1e-9];
  const totalSteps = (meta.num_frames - 1) * 25; // dt-ratio default; editable downstream
  const windows: Record<string, [number, number]> = {};
  for (const view of DEFAULT_VIEWS) windows[view] = [0, totalSteps];
  return {
    ...emptyState(),
    meta,
    camera: initialOrbit(meta.bounds, canvasWidth, canvasHeight),
    range,
    harvestedRange: [...harvested] as [number, number],
    windows,
    runLabel: `ui-${meta.id.replace(/[^A-Za-z0-9_-]/g, "_")}`,
  };
}

export function totalSteps(state: ViewerState): number {
  let max = 0;
  for (const window of Object.values(state.windows)) {
    max = Math.max(max, window[1]);
  }
  return max;
}

export function scrub(state: ViewerState, index: number): ViewerState {
  if (state.meta === null) return state;
  const clamped = Math.max(0, Math.min(state.meta.num_frames - 1, Math.round(index)));
  return { ...state, frameIndex: clamped };
}

/** Tag a view window; end < start is rejected inline without mutating it. */
export function tagWindow(
  state: ViewerState,
  view: string,
  start: number,
  end: number,
): ViewerState {
  if (!state.viewNames.includes(view)) {
    return {
      ...state,
      tagError: { field: `view_windows.${view}`, message: "no such view" },
    };
  }
  if (end < start) {
    return {
      ...state,
      tagError: {
        field: `view_windows.${view}`,
        message: `end ${end} precedes start ${start}`,
      },
    };
  }
  return {
    ...state,
    tagError: null,
    windows: { ...state.windows, [view]: [start, end] },
  };
}

export function setRange(state: ViewerState, lo: number, hi: number): ViewerState {
  if (!(lo < hi)) {
    return { ...state, tagError: { field: "colormap.lo", message: "range must have lo < hi" } };
  }
  return { ...state, tagError: null, range: [lo, hi] };
}

export function resetRangeToHarvested(state: ViewerState): ViewerState {
  if (!state.harvestedRange) return state;
  const [lo, hi] = state.harvestedRange;
  return { ...state, range: [lo, hi > lo ? hi : lo + 1e-9] };
}

export function setCadence(state: ViewerState, cadence: number): ViewerState {
  return { ...state, cadence: Math.max(1, Math.round(cadence)) };
}

/** Build the export document from the current state. */
export function draftConfig(state: ViewerState): ConfigDoc {
  const camera = state.camera;
  if (!camera) throw new Error("no rollout loaded");
  const cameras = state.viewNames.map((name) => toCameraDoc(camera, name));
  return {
    schema_version: 1,
    run_label: state.runLabel,
    total_steps: totalSteps(state),
    cadence: state.cadence,
    particle_radius: state.particleRadius,
    flagged: false,
    cameras,
    colormap: {
      name: state.colormapName,
      stops: PRESET_STOPS[state.colormapName].map((s) => [...s]),
      lo: state.range[0],
      hi: state.range[1],
    },
    view_windows: Object.fromEntries(
      Object.entries(state.windows).map(([k, v]) => [k, [...v] as [number, number]]),
    ),
  };
}

export function draftErrors(state: ViewerState): FieldError[] {
  if (state.meta === null || state.camera === null) {
    return [{ field: "", message: "no rollout loaded" }];
  }
  return validateConfigDoc(draftConfig(state));
}

export function canExport(state: ViewerState): boolean {
  return state.tagError === null && draftErrors(state).length === 0;
}
