/** Shared wire types for the granule-scope HTTP API and config documents. */

export interface CameraDoc {
  name: string;
  eye: [number, number, number];
  look_at: [number, number, number];
  up: [number, number, number];
  fov_deg: number;
  width: number;
  height: number;
}

export interface ColormapDoc {
  name: string;
  stops: number[][];
  lo: number;
  hi: number;
}

export interface ConfigDoc {
  schema_version: number;
  run_label: string;
  total_steps: number;
  cadence: number;
  particle_radius: number;
  flagged: boolean;
  cameras: CameraDoc[];
  colormap: ColormapDoc;
  view_windows: Record<string, [number, number]>;
}

export interface RolloutSummary {
  id: string;
  frames: number;
  dt: number;
  particles: number;
  provenance: string;
}

export interface RolloutMeta {
  id: string;
  version: number;
  num_frames: number;
  num_particles: number;
  dim: number;
  dt: number;
  provenance: string;
  bounds: [number, number][];
  fields: string[];
  field_ranges: Record<string, [number, number]>;
}

export interface FramePayload {
  particles: number;
  dim: number;
  positions: number[][];
  velocities: number[][];
  scalars: Record<string, number[]>;
}

export interface FieldError {
  field: string;
  message: string;
}
