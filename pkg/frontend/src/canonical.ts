/**
 * Canonical config serialization, byte-identical to the workbench service's
 * on-disk format (sorted keys, two-space indent, trailing newline, and
 * Python-repr float formatting so numeric fields round-trip exactly).
 */

import type { CameraDoc, ColormapDoc, ConfigDoc } from "./types.js";

/** Shortest-round-trip decimal rendering matching Python's float repr. */
export function pythonFloatRepr(value: number): string {
  if (!Number.isFinite(value)) {
    throw new Error(`non-finite float ${value} has no canonical form`);
  }
  if (value === 0) {
    return Object.is(value, -0) ? "-0.0" : "0.0";
  }
  const sign = value < 0 ? "-" : "";
  const sci = Math.abs(value).toExponential(); // shortest digits per ES2018
  const match = /^(\d)(?:\.(\d+))?e([+-]\d+)$/.exec(sci);
  if (!match) {
    throw new Error(`unexpected exponential form ${sci}`);
  }
  const digits = match[1] + (match[2] ?? "");
  const exp = parseInt(match[3], 10);
  if (exp < -4 || exp >= 16) {
    // scientific, python-style: mantissa keeps its dot only when needed,
    // exponent is signed and at least two digits
    const mantissa =
      digits.length === 1 ? digits : `${digits[0]}.${digits.slice(1)}`;
    const expSign = exp < 0 ? "-" : "+";
    const expDigits = String(Math.abs(exp)).padStart(2, "0");
    return `${sign}${mantissa}e${expSign}${expDigits}`;
  }
  if (exp >= digits.length - 1) {
    return `${sign}${digits.padEnd(exp + 1, "0")}.0`;
  }
  if (exp >= 0) {
    return `${sign}${digits.slice(0, exp + 1)}.${digits.slice(exp + 1)}`;
  }
  return `${sign}0.${"0".repeat(-exp - 1)}${digits}`;
}

function pythonString(value: string): string {
  // json.dumps default: ensure_ascii escapes everything above 0x7e
  let out = '"';
  for (const ch of value) {
    const code = ch.codePointAt(0)!;
    if (ch === '"') out += '\\"';
    else if (ch === "\\") out += "\\\\";
    else if (ch === "\n") out += "\\n";
    else if (ch === "\r") out += "\\r";
    else if (ch === "\t") out += "\\t";
    else if (code < 0x20 || code > 0x7e) {
      if (code > 0xffff) {
        const high = 0xd800 + ((code - 0x10000) >> 10);
        const low = 0xdc00 + ((code - 0x10000) & 0x3ff);
        out += `\\u${high.toString(16).padStart(4, "0")}\\u${low
          .toString(16)
          .padStart(4, "0")}`;
      } else {
        out += `\\u${code.toString(16).padStart(4, "0")}`;
      }
    } else out += ch;
  }
  return out + '"';
}

type Emit = (value: unknown, indent: number) => string;

function emitInt(value: unknown): string {
  if (typeof value !== "number" || !Number.isInteger(value)) {
    throw new Error(`expected integer, got ${value}`);
  }
  return String(value);
}

function emitFloat(value: unknown): string {
  if (typeof value !== "number") {
    throw new Error(`expected number, got ${value}`);
  }
  return pythonFloatRepr(value);
}

function emitObject(
  entries: [string, string][],
  indent: number,
): string {
  if (entries.length === 0) return "{}";
  const pad = " ".repeat(indent + 2);
  const body = entries
    .map(([key, rendered]) => `${pad}${pythonString(key)}: ${rendered}`)
    .join(",\n");
  return `{\n${body}\n${" ".repeat(indent)}}`;
}

function emitArray(items: string[], indent: number): string {
  if (items.length === 0) return "[]";
  const pad = " ".repeat(indent + 2);
  return `[\n${items.map((it) => pad + it).join(",\n")}\n${" ".repeat(indent)}]`;
}

function emitFloatVector(values: number[], indent: number): string {
  return emitArray(values.map(emitFloat), indent);
}

function emitCamera(camera: CameraDoc, indent: number): string {
  const inner = indent + 2;
  const entries: [string, string][] = [
    ["eye", emitFloatVector(camera.eye, inner)],
    ["fov_deg", emitFloat(camera.fov_deg)],
    ["height", emitInt(camera.height)],
    ["look_at", emitFloatVector(camera.look_at, inner)],
    ["name", pythonString(camera.name)],
    ["up", emitFloatVector(camera.up, inner)],
    ["width", emitInt(camera.width)],
  ];
  return emitObject(entries, indent);
}

function emitColormap(colormap: ColormapDoc, indent: number): string {
  const inner = indent + 2;
  const entries: [string, string][] = [
    ["hi", emitFloat(colormap.hi)],
    ["lo", emitFloat(colormap.lo)],
    ["name", pythonString(colormap.name)],
    [
      "stops",
      emitArray(
        colormap.stops.map((stop) => emitFloatVector(stop, inner + 2)),
        inner,
      ),
    ],
  ];
  return emitObject(entries, indent);
}

function emitWindows(
  windows: Record<string, [number, number]>,
  indent: number,
): string {
  const keys = Object.keys(windows).sort();
  const inner = indent + 2;
  const entries: [string, string][] = keys.map((key) => [
    key,
    emitArray(windows[key].map(emitInt), inner),
  ]);
  return emitObject(entries, indent);
}

/** Serialize a config document exactly as the workbench writes it to disk. */
export function canonicalConfigText(doc: ConfigDoc): string {
  const entries: [string, string][] = [
    ["cadence", emitInt(doc.cadence)],
    ["cameras", emitArray(doc.cameras.map((c) => emitCamera(c, 4)), 2)],
    ["colormap", emitColormap(doc.colormap, 2)],
    ["flagged", doc.flagged ? "true" : "false"],
    ["particle_radius", emitFloat(doc.particle_radius)],
    ["run_label", pythonString(doc.run_label)],
    ["schema_version", emitInt(doc.schema_version)],
    ["total_steps", emitInt(doc.total_steps)],
    ["view_windows", emitWindows(doc.view_windows, 2)],
  ];
  return emitObject(entries, 0) + "\n";
}
