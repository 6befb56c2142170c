/**
 * Orbit camera over the rollout domain. The exported eye/look_at/up/fov are
 * exactly what the preview projection uses, so the browser view and the
 * workbench's ray-traced render share viewpoint semantics.
 */

import type { CameraDoc } from "./types.js";

export type Vec3 = [number, number, number];

export interface OrbitState {
  target: Vec3;
  distance: number;
  azimuthRad: number; // around the +y axis; 0 looks along -z toward the target
  elevationRad: number; // positive looks down from above
  fovDeg: number;
  width: number;
  height: number;
}

const MAX_ELEVATION = (85 * Math.PI) / 180;

export function eyePosition(state: OrbitState): Vec3 {
  const ce = Math.cos(state.elevationRad);
  return [
    state.target[0] + state.distance * ce * Math.sin(state.azimuthRad),
    state.target[1] + state.distance * Math.sin(state.elevationRad),
    state.target[2] + state.distance * ce * Math.cos(state.azimuthRad),
  ];
}

function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function normalize(v: Vec3): Vec3 {
  const n = Math.hypot(v[0], v[1], v[2]);
  return [v[0] / n, v[1] / n, v[2] / n];
}

export interface CameraBasis {
  eye: Vec3;
  forward: Vec3;
  right: Vec3;
  trueUp: Vec3;
}

export function cameraBasis(state: OrbitState): CameraBasis {
  const eye = eyePosition(state);
  const forward = normalize(sub(state.target, eye));
  const worldUp: Vec3 = Math.abs(forward[1]) > 0.999 ? [0, 0, -1] : [0, 1, 0];
  const right = normalize(cross(forward, worldUp));
  const trueUp = cross(right, forward);
  return { eye, forward, right, trueUp };
}

export function orbit(state: OrbitState, dAzimuth: number, dElevation: number): OrbitState {
  return {
    ...state,
    azimuthRad: state.azimuthRad + dAzimuth,
    elevationRad: Math.max(
      -MAX_ELEVATION,
      Math.min(MAX_ELEVATION, state.elevationRad + dElevation),
    ),
  };
}

export function zoom(state: OrbitState, factor: number): OrbitState {
  return { ...state, distance: Math.max(1e-6, state.distance * factor) };
}

/** Frame the rollout domain like the workbench's "side" preset. */
export function initialOrbit(
  bounds: [number, number][],
  width: number,
  height: number,
  fovDeg = 40,
): OrbitState {
  const lo: Vec3 = [0, 0, -0.05];
  const hi: Vec3 = [0, 0, 0.05];
  for (let d = 0; d < Math.min(bounds.length, 3); d++) {
    lo[d] = bounds[d][0];
    hi[d] = bounds[d][1];
  }
  const target: Vec3 = [
    (lo[0] + hi[0]) / 2,
    (lo[1] + hi[1]) / 2,
    (lo[2] + hi[2]) / 2,
  ];
  const extent = Math.max(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]);
  const distance = (1.25 * extent) / (2 * Math.tan((fovDeg * Math.PI) / 360)) + extent;
  return { target, distance, azimuthRad: 0, elevationRad: 0, fovDeg, width, height };
}

export interface ProjectedPoints {
  /** pixel x, pixel y, view-space depth; length = point count */
  x: Float32Array;
  y: Float32Array;
  depth: Float32Array;
  /** indices of visible points sorted far-to-near (painter's order) */
  order: Int32Array;
  visible: number;
}

/** Perspective-project points; positions are rows of dim 2 or 3 (z = 0). */
export function projectPoints(state: OrbitState, positions: number[][]): ProjectedPoints {
  const { eye, forward, right, trueUp } = cameraBasis(state);
  const tanHalf = Math.tan((state.fovDeg * Math.PI) / 360);
  const aspect = state.width / state.height;
  const n = positions.length;
  const x = new Float32Array(n);
  const y = new Float32Array(n);
  const depth = new Float32Array(n);
  const candidates: number[] = [];
  for (let i = 0; i < n; i++) {
    const p = positions[i];
    const px = p[0] - eye[0];
    const py = p[1] - eye[1];
    const pz = (p.length > 2 ? p[2] : 0) - eye[2];
    const z = px * forward[0] + py * forward[1] + pz * forward[2];
    if (z <= 1e-9) continue; // behind the camera
    const rx = px * right[0] + py * right[1] + pz * right[2];
    const ry = px * trueUp[0] + py * trueUp[1] + pz * trueUp[2];
    const ndcX = rx / (z * tanHalf * aspect);
    const ndcY = ry / (z * tanHalf);
    x[i] = (ndcX + 1) * 0.5 * state.width;
    y[i] = (1 - ndcY) * 0.5 * state.height;
    depth[i] = z;
    candidates.push(i);
  }
  candidates.sort((a, b) => depth[b] - depth[a]);
  return { x, y, depth, order: Int32Array.from(candidates), visible: candidates.length };
}

export function toCameraDoc(state: OrbitState, name: string): CameraDoc {
  const basis = cameraBasis(state);
  return {
    name,
    eye: basis.eye,
    look_at: [...state.target] as Vec3,
    up: basis.trueUp,
    fov_deg: state.fovDeg,
    width: state.width,
    height: state.height,
  };
}
