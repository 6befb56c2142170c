/** Image-count law: steps on cadence within each view's window. */

import type { ConfigDoc } from "./types.js";

export function eligibleSteps(
  window: [number, number],
  cadence: number,
  totalSteps: number,
): number[] {
  const [start, end] = window;
  const first = Math.ceil(start / cadence) * cadence;
  const last = Math.min(end, totalSteps);
  const steps: number[] = [];
  for (let s = first; s <= last; s += cadence) steps.push(s);
  return steps;
}

export function plannedViewCounts(config: ConfigDoc): Record<string, number> {
  const counts: Record<string, number> = {};
  for (const [view, window] of Object.entries(config.view_windows)) {
    counts[view] = eligibleSteps(window, config.cadence, config.total_steps).length;
  }
  return counts;
}

export function totalPlannedImages(config: ConfigDoc): number {
  return Object.values(plannedViewCounts(config)).reduce((a, b) => a + b, 0);
}
