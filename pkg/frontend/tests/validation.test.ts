import { readdirSync, readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { validateConfigDoc } from "../src/validation.js";

const FIXTURES = join(__dirname, "..", "..", "tests", "fixtures", "configs");

function loadFixture(name: string): unknown {
  return JSON.parse(readFileSync(join(FIXTURES, name), "utf-8"));
}

describe("validation parity with the shared fixture corpus", () => {
  it("accepts every valid fixture", () => {
    for (const name of readdirSync(FIXTURES).filter((f) => f.startsWith("valid_"))) {
      expect(validateConfigDoc(loadFixture(name)), name).toEqual([]);
    }
  });

  it("rejects every invalid fixture", () => {
    const invalid = readdirSync(FIXTURES).filter((f) => f.startsWith("invalid_"));
    expect(invalid.length).toBeGreaterThan(0);
    for (const name of invalid) {
      expect(validateConfigDoc(loadFixture(name)).length, name).toBeGreaterThan(0);
    }
  });

  it("pinpoints the offending field", () => {
    const errors = validateConfigDoc(loadFixture("invalid_end_before_start.json"));
    expect(errors.some((e) => e.field === "view_windows.side")).toBe(true);

    const unknown = validateConfigDoc(loadFixture("invalid_unknown_field.json"));
    expect(unknown.some((e) => e.field === "surprise" && e.message === "unknown field")).toBe(true);

    const missing = validateConfigDoc(loadFixture("invalid_missing_cadence.json"));
    expect(missing.some((e) => e.field === "cadence")).toBe(true);
  });

  it("rejects windows beyond the run and unknown views", () => {
    const beyond = validateConfigDoc(loadFixture("invalid_window_beyond_total.json"));
    expect(beyond.some((e) => e.field === "view_windows.side")).toBe(true);

    const drone = validateConfigDoc(loadFixture("invalid_unknown_view.json"));
    expect(drone.some((e) => e.field === "view_windows.drone")).toBe(true);
  });
});
