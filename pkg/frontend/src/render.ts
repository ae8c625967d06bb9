/** Pure rendering helpers: heatmap pixels, tau-slice polylines, badges.
 *
 * All functions are DOM-free so they can be unit-tested; main.ts owns the
 * canvas and element wiring.
 */
import { ArbitrageBlock } from "./api.js";

export interface ColorScale {
  min: number;
  max: number;
}

/** Session color scale: fixed at the first response, only ever widened, so
 * level changes read as brightness changes across renders. */
export function initialScale(surface: number[][]): ColorScale {
  let min = Infinity;
  let max = -Infinity;
  for (const row of surface)
    for (const v of row) {
      if (v < min) min = v;
      if (v > max) max = v;
    }
  return { min, max };
}

export function widenScale(scale: ColorScale, surface: number[][]): ColorScale {
  const fresh = initialScale(surface);
  return {
    min: Math.min(scale.min, fresh.min),
    max: Math.max(scale.max, fresh.max),
  };
}

/** Viridis-like three-stop ramp; enough to read levels without a palette dep. */
function rampColor(t: number): [number, number, number] {
  const stops: [number, [number, number, number]][] = [
    [0.0, [68, 1, 84]],
    [0.5, [33, 145, 140]],
    [1.0, [253, 231, 37]],
  ];
  for (let i = 0; i + 1 < stops.length; i++) {
    const [t0, c0] = stops[i];
    const [t1, c1] = stops[i + 1];
    if (t <= t1) {
      const u = (t - t0) / (t1 - t0);
      return [
        Math.round(c0[0] + u * (c1[0] - c0[0])),
        Math.round(c0[1] + u * (c1[1] - c0[1])),
        Math.round(c0[2] + u * (c1[2] - c0[2])),
      ];
    }
  }
  return stops[stops.length - 1][1];
}

/** RGBA pixel buffer for an (n_tau x n_m) surface, one pixel per node. */
export function heatmapPixels(
  surface: number[][],
  scale: ColorScale,
): Uint8ClampedArray {
  const nTau = surface.length;
  const nM = surface[0]?.length ?? 0;
  const out = new Uint8ClampedArray(nTau * nM * 4);
  const span = scale.max - scale.min || 1;
  for (let j = 0; j < nTau; j++)
    for (let i = 0; i < nM; i++) {
      const t = Math.min(1, Math.max(0, (surface[j][i] - scale.min) / span));
      const [r, g, b] = rampColor(t);
      const k = (j * nM + i) * 4;
      out[k] = r;
      out[k + 1] = g;
      out[k + 2] = b;
      out[k + 3] = 255;
    }
  return out;
}

/** Indices of grid nodes flagged by the audit, for heatmap overlay. */
export function violationOverlay(
  arbitrage: ArbitrageBlock,
): { mIndex: number; tauIndex: number; kind: "calendar" | "butterfly" }[] {
  const nodes: { mIndex: number; tauIndex: number; kind: "calendar" | "butterfly" }[] =
    [];
  for (const [mIndex, tauIndex] of arbitrage.violation_nodes.calendar)
    nodes.push({ mIndex, tauIndex, kind: "calendar" });
  for (const [mIndex, tauIndex] of arbitrage.violation_nodes.butterfly)
    nodes.push({ mIndex, tauIndex, kind: "butterfly" });
  return nodes;
}

export interface Slice {
  tauTarget: number;
  tauActual: number;
  tauIndex: number;
  m: number[];
  sigma: number[];
}

export const SLICE_TAUS = [0.1, 0.35, 0.6];

/** Smile slices at the maturities nearest the standard view targets. */
export function tauSlices(
  surface: number[][],
  mValues: number[],
  tauValues: number[],
  targets: number[] = SLICE_TAUS,
): Slice[] {
  return targets.map((tauTarget) => {
    let tauIndex = 0;
    for (let j = 1; j < tauValues.length; j++)
      if (
        Math.abs(tauValues[j] - tauTarget) <
        Math.abs(tauValues[tauIndex] - tauTarget)
      )
        tauIndex = j;
    return {
      tauTarget,
      tauActual: tauValues[tauIndex],
      tauIndex,
      m: [...mValues],
      sigma: [...surface[tauIndex]],
    };
  });
}

export interface FeatureBadge {
  name: string;
  given: number;
  extracted: number;
  absError: number;
  ok: boolean;
}

export const BADGE_TOLERANCE = 0.01;

/** Given-vs-extracted badge rows; `extracted` is the untouched server value. */
export function featureBadges(
  given: Record<string, number>,
  extracted: Record<string, number>,
): FeatureBadge[] {
  return Object.keys(given).map((name) => {
    const absError = Math.abs(extracted[name] - given[name]);
    return {
      name,
      given: given[name],
      extracted: extracted[name],
      absError,
      ok: absError <= BADGE_TOLERANCE,
    };
  });
}
