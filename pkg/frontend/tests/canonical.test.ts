import { readdirSync, readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { canonicalConfigText, pythonFloatRepr } from "../src/canonical.js";
import type { ConfigDoc } from "../src/types.js";

const FIXTURES = join(__dirname, "..", "..", "tests", "fixtures", "configs");

describe("pythonFloatRepr", () => {
  it("matches Python repr on plain decimals", () => {
    expect(pythonFloatRepr(0.38)).toBe("0.38");
    expect(pythonFloatRepr(0.0025)).toBe("0.0025");
    expect(pythonFloatRepr(0.1)).toBe("0.1");
    expect(pythonFloatRepr(-2.5)).toBe("-2.5");
  });

  it("keeps a decimal point on integral floats", () => {
    expect(pythonFloatRepr(40)).toBe("40.0");
    expect(pythonFloatRepr(0)).toBe("0.0");
    expect(pythonFloatRepr(-3)).toBe("-3.0");
  });

  it("uses Python exponent thresholds and padding", () => {
    expect(pythonFloatRepr(1e-9)).toBe("1e-09");
    expect(pythonFloatRepr(1.5e-9)).toBe("1.5e-09");
    expect(pythonFloatRepr(1e-4)).toBe("0.0001");
    expect(pythonFloatRepr(1e-5)).toBe("1e-05");
    expect(pythonFloatRepr(1e16)).toBe("1e+16");
    expect(pythonFloatRepr(1e20)).toBe("1e+20");
    expect(pythonFloatRepr(1234567890123456.7)).toBe("1234567890123456.8");
  });

  it("round-trips shortest representations", () => {
    for (const v of [0.1 + 0.2, Math.PI, 1 / 3, 0.549999999999999, 6.13e-5]) {
      expect(Number(pythonFloatRepr(v))).toBe(v);
    }
  });

  it("rejects non-finite values", () => {
    expect(() => pythonFloatRepr(Number.NaN)).toThrow();
    expect(() => pythonFloatRepr(Infinity)).toThrow();
  });
});

describe("canonicalConfigText", () => {
  it("reproduces every valid shared fixture byte-for-byte", () => {
    const fixtures = readdirSync(FIXTURES).filter((f) => f.startsWith("valid_"));
    expect(fixtures.length).toBeGreaterThan(0);
    for (const name of fixtures) {
      const raw = readFileSync(join(FIXTURES, name), "utf-8");
      const doc = JSON.parse(raw) as ConfigDoc;
      expect(canonicalConfigText(doc), name).toBe(raw);
    }
  });
});
