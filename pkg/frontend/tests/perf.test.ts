import { describe, expect, it } from "vitest";

import { initialOrbit, projectPoints } from "../src/camera.js";
import { mapColor } from "../src/colormap.js";

describe("scrub re-render budget", () => {
  it("projects, sorts and colors 20k points well under 100 ms", () => {
    const camera = initialOrbit([[0, 1], [0, 0.6]], 760, 480);
    const n = 20_000;
    const positions: number[][] = [];
    const values = new Array<number>(n);
    let seed = 42;
    const rand = () => {
      // deterministic LCG; no RNG dependency
      seed = (seed * 1664525 + 1013904223) >>> 0;
      return seed / 2 ** 32;
    };
    for (let i = 0; i < n; i++) {
      positions.push([rand(), rand() * 0.6]);
      values[i] = rand() * 0.38;
    }
    const stops = [
      [0.267, 0.005, 0.329], [0.128, 0.567, 0.551], [0.993, 0.906, 0.144],
    ];
    // warm up the JIT once, then measure
    projectPoints(camera, positions);
    const t0 = performance.now();
    const projected = projectPoints(camera, positions);
    for (let i = 0; i < n; i++) mapColor(stops, 0, 0.38, values[i]);
    const elapsed = performance.now() - t0;
    expect(projected.visible).toBe(n);
    expect(elapsed).toBeLessThan(100);
  });
});
