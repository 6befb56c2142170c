/**
 * Config validation mirroring the workbench validator: structural checks
 * (exact field sets, types) then semantic invariants (windows inside the run,
 * cadence, camera references). The UI enables export only when this passes,
 * so anything exported is accepted server-side.
 */

import type { ConfigDoc, FieldError } from "./types.js";

const CONFIG_KEYS = new Set([
  "schema_version", "run_label", "total_steps", "cadence", "particle_radius",
  "flagged", "cameras", "colormap", "view_windows",
]);
const CAMERA_KEYS = new Set([
  "name", "eye", "look_at", "up", "fov_deg", "width", "height",
]);
const COLORMAP_KEYS = new Set(["name", "stops", "lo", "hi"]);

function isInt(v: unknown): v is number {
  return typeof v === "number" && Number.isInteger(v);
}

function isNum(v: unknown): v is number {
  return typeof v === "number" && Number.isFinite(v);
}

function isVec3(v: unknown): boolean {
  return Array.isArray(v) && v.length === 3 && v.every(isNum);
}

function keyDiff(actual: object, expected: Set<string>, prefix: string): FieldError[] {
  const errors: FieldError[] = [];
  for (const key of Object.keys(actual).sort()) {
    if (!expected.has(key)) errors.push({ field: prefix + key, message: "unknown field" });
  }
  for (const key of [...expected].sort()) {
    if (!(key in actual)) {
      errors.push({ field: prefix + key, message: "missing required field" });
    }
  }
  return errors;
}

export function validateConfigDoc(doc: unknown): FieldError[] {
  if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
    return [{ field: "", message: "config document must be a JSON object" }];
  }
  const d = doc as Record<string, unknown>;
  const errors = keyDiff(d, CONFIG_KEYS, "");
  if (errors.length > 0) return errors;

  if (d.schema_version !== 1) {
    errors.push({ field: "schema_version", message: `unsupported version ${d.schema_version}` });
  }
  if (typeof d.run_label !== "string" || d.run_label.length === 0) {
    errors.push({ field: "run_label", message: "must be a non-empty string" });
  }
  for (const key of ["total_steps", "cadence"]) {
    if (!isInt(d[key])) errors.push({ field: key, message: "must be an integer" });
  }
  if (!isNum(d.particle_radius)) {
    errors.push({ field: "particle_radius", message: "must be a number" });
  }
  if (typeof d.flagged !== "boolean") {
    errors.push({ field: "flagged", message: "must be a boolean" });
  }

  const cameraNames: string[] = [];
  if (!Array.isArray(d.cameras)) {
    errors.push({ field: "cameras", message: "must be a list" });
  } else {
    d.cameras.forEach((cam, i) => {
      if (typeof cam !== "object" || cam === null) {
        errors.push({ field: `cameras[${i}]`, message: "must be an object" });
        return;
      }
      errors.push(...keyDiff(cam as object, CAMERA_KEYS, `cameras[${i}].`));
      const c = cam as Record<string, unknown>;
      if (typeof c.name === "string") cameraNames.push(c.name);
      for (const vec of ["eye", "look_at", "up"]) {
        if (vec in c && !isVec3(c[vec])) {
          errors.push({ field: `cameras[${i}].${vec}`, message: "must be a list of 3 numbers" });
        }
      }
      if ("fov_deg" in c && (!isNum(c.fov_deg) || (c.fov_deg as number) <= 0 || (c.fov_deg as number) >= 180)) {
        errors.push({ field: `cameras[${i}].fov_deg`, message: "must lie in (0, 180)" });
      }
      for (const dim of ["width", "height"]) {
        if (dim in c && (!isInt(c[dim]) || (c[dim] as number) <= 0)) {
          errors.push({ field: `cameras[${i}].${dim}`, message: "must be a positive integer" });
        }
      }
    });
  }

  if (typeof d.colormap !== "object" || d.colormap === null) {
    errors.push({ field: "colormap", message: "must be an object" });
  } else {
    errors.push(...keyDiff(d.colormap as object, COLORMAP_KEYS, "colormap."));
    const cm = d.colormap as Record<string, unknown>;
    if (isNum(cm.lo) && isNum(cm.hi) && !(cm.lo < cm.hi)) {
      errors.push({ field: "colormap.lo", message: "range must have lo < hi" });
    }
    if (Array.isArray(cm.stops) && cm.stops.length < 2) {
      errors.push({ field: "colormap.stops", message: "needs at least two stops" });
    }
  }

  if (typeof d.view_windows !== "object" || d.view_windows === null || Array.isArray(d.view_windows)) {
    errors.push({ field: "view_windows", message: "must be an object" });
    return errors;
  }

  // semantic invariants, matching the workbench's InSituConfig.validate
  if (errors.length > 0) return errors;
  if ((d.cameras as unknown[]).length === 0) {
    errors.push({ field: "cameras", message: "at least one camera required" });
  }
  if (new Set(cameraNames).size !== cameraNames.length) {
    errors.push({ field: "cameras", message: "camera names must be unique" });
  }
  if ((d.cadence as number) < 1) {
    errors.push({ field: "cadence", message: "must be >= 1" });
  }
  if ((d.total_steps as number) < 0) {
    errors.push({ field: "total_steps", message: "must be >= 0" });
  }
  if ((d.particle_radius as number) <= 0) {
    errors.push({ field: "particle_radius", message: "must be positive" });
  }
  const totalSteps = d.total_steps as number;
  for (const [view, window] of Object.entries(d.view_windows as object)) {
    const key = `view_windows.${view}`;
    if (!Array.isArray(window) || window.length !== 2 || !window.every(isInt)) {
      errors.push({ field: key, message: "must be [start, end] integers" });
      continue;
    }
    const [start, end] = window as [number, number];
    if (!cameraNames.includes(view)) {
      errors.push({ field: key, message: "no camera with this name" });
    }
    if (start > end) {
      errors.push({ field: key, message: `end ${end} precedes start ${start}` });
    }
    if (start < 0 || end > totalSteps) {
      errors.push({
        field: key,
        message: `window [${start}, ${end}] outside [0, ${totalSteps}]`,
      });
    }
  }
  return errors;
}

export function isValidConfig(doc: unknown): doc is ConfigDoc {
  return validateConfigDoc(doc).length === 0;
}
