/** Scalar-to-color mapping; stop tables match the workbench presets. */

export const PRESET_STOPS: Record<string, number[][]> = {
  viridis: [
    [0.267, 0.005, 0.329], [0.283, 0.141, 0.458], [0.254, 0.265, 0.530],
    [0.207, 0.372, 0.553], [0.164, 0.471, 0.558], [0.128, 0.567, 0.551],
    [0.135, 0.659, 0.518], [0.267, 0.749, 0.441], [0.478, 0.821, 0.318],
    [0.741, 0.873, 0.150], [0.993, 0.906, 0.144],
  ],
  coolwarm: [
    [0.230, 0.299, 0.754], [0.552, 0.690, 0.996], [0.865, 0.865, 0.865],
    [0.958, 0.603, 0.482], [0.706, 0.016, 0.150],
  ],
  grayscale: [[0, 0, 0], [1, 1, 1]],
};

export function mapColor(
  stops: number[][],
  lo: number,
  hi: number,
  value: number,
): [number, number, number] {
  const t = Math.min(1, Math.max(0, (value - lo) / (hi - lo)));
  const scaled = t * (stops.length - 1);
  const idx = Math.min(Math.floor(scaled), stops.length - 2);
  const frac = scaled - idx;
  return [
    (1 - frac) * stops[idx][0] + frac * stops[idx + 1][0],
    (1 - frac) * stops[idx][1] + frac * stops[idx + 1][1],
    (1 - frac) * stops[idx][2] + frac * stops[idx + 1][2],
  ];
}

export function cssColor(rgb: [number, number, number]): string {
  const c = rgb.map((v) => Math.round(Math.min(1, Math.max(0, v)) * 255));
  return `rgb(${c[0]},${c[1]},${c[2]})`;
}
