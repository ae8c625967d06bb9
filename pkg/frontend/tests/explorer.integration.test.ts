/** End-to-end explorer loop against a live local inference server.
 *
 * Spawns the Python service on the desk-scale 3-feature checkpoint, then
 * drives the store exactly as the UI would: slider sweep with debounced
 * decodes, badge comparison against server-extracted features, and the
 * repair accept flow on a seeded violating point.
 */
import { ChildProcess, spawn } from "node:child_process";
import { existsSync } from "node:fs";
import { resolve } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { ExplorerApi } from "../src/api.js";
import { ExplorerStore } from "../src/state.js";

const CHECKPOINT = resolve(__dirname, "../../tests/_cache/model_3feat");
const PORT = 8765 + (process.pid % 1000);
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess;

async function waitForServer(timeoutMs = 60_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${BASE}/model/info`);
      if (response.ok) return;
    } catch {
      /* not up yet */
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error("inference server did not come up");
}

/** Deterministic uniform draws in [-8, 8] (mulberry32). */
function latentSampler(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    const u = ((t ^ (t >>> 14)) >>> 0) / 4294967296;
    return -8 + 16 * u;
  };
}

beforeAll(async () => {
  expect(
    existsSync(CHECKPOINT),
    `desk-scale checkpoint missing at ${CHECKPOINT}; run scripts/build_desk_assets.py`,
  ).toBe(true);
  server = spawn(
    "python3",
    ["-m", "ivsgen.cli", "serve", "--ckpt", CHECKPOINT, "--port", String(PORT)],
    { stdio: "ignore" },
  );
  await waitForServer();
}, 90_000);

afterAll(() => {
  server?.kill();
});

describe("explorer loop against the live server", () => {
  // The debounce path is unit-tested; here decodes are driven manually so
  // each awaited response corresponds to the slider position under test.
  const manualTimers = {
    setTimeoutFn: () => null,
    clearTimeoutFn: () => {},
  };

  it("tracks a level-slider sweep with sub-200ms round trips", async () => {
    const api = new ExplorerApi(BASE);
    const store = new ExplorerStore(api, manualTimers);
    await store.init();
    await store.decodeNow(); // warm-up request

    const level = store.featureSliders.find((s) => s.name === "level")!;
    const positions = [0, 0.25, 0.5, 0.75, 1].map(
      (t) => level.min + t * (level.max - level.min),
    );
    for (const value of positions) {
      store.setFeature("level", value);
      const response = await store.decodeNow();
      expect(response).not.toBeNull();
      expect(store.lastRoundTripMs).not.toBeNull();
      expect(store.lastRoundTripMs!).toBeLessThan(200);

      // Badges show the server's extracted features verbatim: re-extracting
      // the displayed surface server-side must agree exactly.
      const extracted = await api.features(response!.surface);
      expect(response!.features).toEqual(extracted.features);
    }
  }, 60_000);

  it("repairs a seeded violating point, keeping y readouts unchanged", async () => {
    const api = new ExplorerApi(BASE);
    const store = new ExplorerStore(api, manualTimers);
    await store.init();

    // Seek a tail z whose decode violates an arbitrage check.
    const draw = latentSampler(12345);
    let violating = false;
    for (let attempt = 0; attempt < 1500 && !violating; attempt++) {
      for (let j = 0; j < store.zSliders.length; j++) store.setZ(j, draw());
      const response = await store.decodeNow();
      violating = response !== null && !response.arbitrage.is_free;
    }
    expect(violating, "no violating tail point found in 1500 draws").toBe(true);

    const yBefore = store.currentY();
    const zBefore = store.currentZ();
    const proposal = await store.requestRepair();
    expect(proposal).not.toBeNull();
    expect(proposal!.result.repaired).toBe(true);

    // Arbitrage badge turns green; y readouts are untouched.
    expect(store.lastResponse!.arbitrage.is_free).toBe(true);
    expect(store.currentY()).toEqual(yBefore);
    expect(store.currentZ()).not.toEqual(zBefore);

    store.acceptRepair();
    expect(store.repairHistory).toHaveLength(1);
    expect(store.repairHistory[0].zBefore).toEqual(zBefore);
  }, 120_000);
});
