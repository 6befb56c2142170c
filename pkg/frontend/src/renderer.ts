/**
 * Point-sprite canvas renderer. Full sphere ray tracing stays in the
 * workbench; interactivity wins here, so points are depth-sorted squares
 * whose size falls off with view depth.
 */

import { projectPoints, type OrbitState } from "./camera.js";
import { cssColor, mapColor } from "./colormap.js";
import type { FramePayload } from "./types.js";

export interface RenderOptions {
  stops: number[][];
  lo: number;
  hi: number;
  field: string;
  pointScale: number; // world-space point radius
  background: string;
}

/** Pure projection + paint-order pass, separated for benchmarks. */
export function preparePoints(camera: OrbitState, positions: number[][]) {
  return projectPoints(camera, positions);
}

export function drawFrame(
  ctx: CanvasRenderingContext2D,
  frame: FramePayload,
  camera: OrbitState,
  options: RenderOptions,
): number {
  const t0 = performance.now();
  ctx.fillStyle = options.background;
  ctx.fillRect(0, 0, camera.width, camera.height);
  const projected = preparePoints(camera, frame.positions);
  const values = frame.scalars[options.field] ?? new Array(frame.particles).fill(0);
  const tanHalf = Math.tan((camera.fovDeg * Math.PI) / 360);
  const pixelPerWorld = camera.height / (2 * tanHalf);
  // quantize colors so fillStyle changes (the slow path) stay rare
  const buckets = 64;
  const bucketColors: string[] = [];
  for (let b = 0; b < buckets; b++) {
    const v = options.lo + ((b + 0.5) / buckets) * (options.hi - options.lo);
    bucketColors.push(cssColor(mapColor(options.stops, options.lo, options.hi, v)));
  }
  let lastBucket = -1;
  for (let k = 0; k < projected.visible; k++) {
    const i = projected.order[k];
    const size = Math.max(
      1.5,
      (2 * options.pointScale * pixelPerWorld) / projected.depth[i],
    );
    const t = (values[i] - options.lo) / (options.hi - options.lo);
    const bucket = Math.min(buckets - 1, Math.max(0, Math.floor(t * buckets)));
    if (bucket !== lastBucket) {
      ctx.fillStyle = bucketColors[bucket];
      lastBucket = bucket;
    }
    ctx.fillRect(projected.x[i] - size / 2, projected.y[i] - size / 2, size, size);
  }
  return performance.now() - t0;
}
