import { describe, expect, it } from "vitest";
import {
  featureBadges,
  heatmapPixels,
  initialScale,
  tauSlices,
  violationOverlay,
  widenScale,
} from "../src/render.js";

describe("color scale", () => {
  it("spans the first response and only ever widens", () => {
    const scale = initialScale([
      [0.2, 0.3],
      [0.25, 0.4],
    ]);
    expect(scale).toEqual({ min: 0.2, max: 0.4 });
    const widened = widenScale(scale, [[0.1, 0.35]]);
    expect(widened).toEqual({ min: 0.1, max: 0.4 });
    expect(widenScale(widened, [[0.3]])).toEqual(widened);
  });
});

describe("heatmap pixels", () => {
  it("emits one opaque RGBA pixel per node, brighter for higher vols", () => {
    const surface = [
      [0.1, 0.5],
      [0.3, 0.9],
    ];
    const pixels = heatmapPixels(surface, { min: 0.1, max: 0.9 });
    expect(pixels.length).toBe(16);
    for (let k = 3; k < 16; k += 4) expect(pixels[k]).toBe(255);
    const luma = (k: number) =>
      0.299 * pixels[k] + 0.587 * pixels[k + 1] + 0.114 * pixels[k + 2];
    expect(luma(12)).toBeGreaterThan(luma(0)); // 0.9 brighter than 0.1
  });

  it("handles a flat surface without dividing by zero", () => {
    const pixels = heatmapPixels([[0.3, 0.3]], { min: 0.3, max: 0.3 });
    expect(Number.isFinite(pixels[0])).toBe(true);
  });
});

describe("tau slices", () => {
  it("picks the maturities nearest 0.10 / 0.35 / 0.60", () => {
    const tauValues = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    const surface = tauValues.map((tau) => [tau, tau + 1]);
    const slices = tauSlices(surface, [-0.1, 0.1], tauValues);
    expect(slices.map((s) => s.tauActual)).toEqual([0.1, 0.3, 0.6]);
    expect(slices[2].sigma).toEqual([0.6, 1.6]);
  });
});

describe("feature badges", () => {
  it("compares given vs extracted at the 0.01 tolerance", () => {
    const badges = featureBadges(
      { level: 0.3, slope: 0.05 },
      { level: 0.3042, slope: 0.0501 },
    );
    expect(badges[0].ok).toBe(true);
    expect(badges[0].absError).toBeCloseTo(0.0042, 12);
    const off = featureBadges({ level: 0.3 }, { level: 0.32 });
    expect(off[0].ok).toBe(false);
  });
});

describe("violation overlay", () => {
  it("flattens calendar and butterfly nodes with their kind", () => {
    const nodes = violationOverlay({
      is_free: false,
      l_calendar: 1e-5,
      l_butterfly: 2e-5,
      violation_nodes: { calendar: [[3, 4]], butterfly: [[5, 6]] },
    });
    expect(nodes).toEqual([
      { mIndex: 3, tauIndex: 4, kind: "calendar" },
      { mIndex: 5, tauIndex: 6, kind: "butterfly" },
    ]);
  });
});
