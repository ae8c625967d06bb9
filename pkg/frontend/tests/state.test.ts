import { describe, expect, it } from "vitest";
import {
  ApiError,
  DecodeResponse,
  ExplorerApi,
  ModelInfo,
  RepairResponse,
} from "../src/api.js";
import { ExplorerStore } from "../src/state.js";

const INFO: ModelInfo = {
  feature_names: ["level", "slope"],
  feature_ranges: { level: [0.2, 0.4], slope: [-0.1, 0.1] },
  d_z: 3,
  grid: { m_values: [-0.1, 0, 0.1], tau_values: [0.1, 0.35, 0.6] },
};

function decodeResponse(tag: number, isFree = true): DecodeResponse {
  return {
    surface: [[tag]],
    features: { level: 0.3, slope: 0 },
    arbitrage: {
      is_free: isFree,
      l_calendar: isFree ? 0 : 1e-4,
      l_butterfly: 0,
      violation_nodes: { calendar: isFree ? [] : [[1, 2]], butterfly: [] },
    },
  };
}

interface FakeCall {
  y: Record<string, number>;
  z: number[];
  signal?: AbortSignal;
  resolve: (r: DecodeResponse) => void;
  reject: (e: Error) => void;
}

/** Fake API whose decode promises resolve under test control. */
class FakeApi {
  calls: FakeCall[] = [];
  repairCalls = 0;
  repairResult: RepairResponse | null = null;

  modelInfo(): Promise<ModelInfo> {
    return Promise.resolve(INFO);
  }

  decode(
    y: Record<string, number>,
    z: number[],
    signal?: AbortSignal,
  ): Promise<DecodeResponse> {
    return new Promise((resolve, reject) => {
      this.calls.push({ y, z, signal, resolve, reject });
    });
  }

  repair(): Promise<RepairResponse> {
    this.repairCalls += 1;
    if (this.repairResult === null) throw new Error("no repair result staged");
    return Promise.resolve(this.repairResult);
  }

  features(): Promise<{ features: Record<string, number> }> {
    throw new Error("unused");
  }
}

function makeStore(api: FakeApi, options: Record<string, unknown> = {}) {
  return new ExplorerStore(api as unknown as ExplorerApi, {
    now: () => Date.now(),
    ...options,
  });
}

async function settle(): Promise<void> {
  await Promise.resolve();
  await Promise.resolve();
}

describe("slider setup", () => {
  it("extends feature ranges by 1.2x around the training box", async () => {
    const store = makeStore(new FakeApi());
    await store.init();
    const level = store.featureSliders.find((s) => s.name === "level")!;
    expect(level.min).toBeCloseTo(0.18, 12);
    expect(level.max).toBeCloseTo(0.42, 12);
    expect(level.value).toBeCloseTo(0.3, 12);
    expect(store.zSliders).toEqual([0, 0, 0]);
  });

  it("ignores NaN and clamps out-of-bounds values", async () => {
    const api = new FakeApi();
    const store = makeStore(api, { debounceMs: 0 });
    await store.init();
    store.setFeature("level", NaN);
    expect(store.currentY().level).toBeCloseTo(0.3, 12);
    store.setFeature("level", 99);
    expect(store.currentY().level).toBeCloseTo(0.42, 12);
    store.setZ(1, -99);
    expect(store.currentZ()[1]).toBe(-8);
    expect(() => store.setFeature("curvature", 0.1)).toThrow(/unknown feature/);
    expect(() => store.setZ(7, 0)).toThrow(/out of range/);
  });
});

describe("debounced decode", () => {
  it("coalesces a drag into a single request", async () => {
    const api = new FakeApi();
    const timers: (() => void)[] = [];
    const store = makeStore(api, {
      setTimeoutFn: (fn: () => void) => {
        timers.push(fn);
        return timers.length - 1;
      },
      clearTimeoutFn: (handle: unknown) => {
        timers[handle as number] = () => {};
      },
    });
    await store.init();
    store.setFeature("level", 0.25);
    store.setFeature("level", 0.28);
    store.setFeature("level", 0.33);
    for (const fn of timers.splice(0)) fn();
    await settle();
    expect(api.calls.length).toBe(1);
    expect(api.calls[0].y.level).toBeCloseTo(0.33, 12);
  });
});

describe("latest-wins concurrency", () => {
  it("aborts the in-flight request and discards its late response", async () => {
    const api = new FakeApi();
    const store = makeStore(api);
    await store.init();

    const first = store.decodeNow();
    const second = store.decodeNow();
    expect(api.calls.length).toBe(2);
    expect(api.calls[0].signal?.aborted).toBe(true);

    api.calls[1].resolve(decodeResponse(2));
    await second;
    api.calls[0].resolve(decodeResponse(1)); // stale: must be discarded
    expect(await first).toBeNull();
    expect(store.lastResponse?.surface).toEqual([[2]]);
  });
});

describe("error handling", () => {
  it("keeps the last good state and reports via toast", async () => {
    const api = new FakeApi();
    const errors: string[] = [];
    const store = makeStore(api, {
      onError: (message: string) => errors.push(message),
    });
    await store.init();
    const ok = store.decodeNow();
    api.calls[0].resolve(decodeResponse(7));
    await ok;

    const failing = store.decodeNow();
    api.calls[1].reject(new ApiError(400, "field 'z' must be finite"));
    expect(await failing).toBeNull();
    expect(errors).toEqual(["HTTP 400: field 'z' must be finite"]);
    expect(store.lastResponse?.surface).toEqual([[7]]);
  });
});

describe("repair lifecycle", () => {
  async function storeWithViolation() {
    const api = new FakeApi();
    const store = makeStore(api);
    await store.init();
    store.setZ(0, 5);
    const decode = store.decodeNow();
    api.calls[0].resolve(decodeResponse(1, false));
    await decode;
    api.repairResult = {
      ...decodeResponse(2, true),
      z_optimized: [1.5, 0, 0],
      repaired: true,
      converged: true,
      iterations: 4,
      feature_drift: { level: 1e-4, slope: -2e-5 },
    };
    return { api, store };
  }

  it("is a no-op with a notice on an arbitrage-free point", async () => {
    const api = new FakeApi();
    const store = makeStore(api);
    await store.init();
    const decode = store.decodeNow();
    api.calls[0].resolve(decodeResponse(1, true));
    await decode;
    expect(await store.requestRepair()).toBeNull();
    expect(api.repairCalls).toBe(0);
    expect(store.toast).toBe("already arbitrage-free");
  });

  it("previews z_optimized and accept records history", async () => {
    const { store } = await storeWithViolation();
    const proposal = await store.requestRepair();
    expect(proposal?.result.repaired).toBe(true);
    expect(store.currentZ()).toEqual([1.5, 0, 0]);
    expect(store.lastResponse?.arbitrage.is_free).toBe(true);

    store.acceptRepair();
    expect(store.pendingRepair).toBeNull();
    expect(store.repairHistory).toHaveLength(1);
    expect(store.repairHistory[0].zBefore).toEqual([5, 0, 0]);
    expect(store.repairHistory[0].zAfter).toEqual([1.5, 0, 0]);
  });

  it("revert restores state deep-equal to the snapshot", async () => {
    const { store } = await storeWithViolation();
    const yBefore = store.currentY();
    const zBefore = store.currentZ();
    const responseBefore = JSON.parse(JSON.stringify(store.lastResponse));

    await store.requestRepair();
    store.revertRepair();

    expect(store.currentY()).toEqual(yBefore);
    expect(store.currentZ()).toEqual(zBefore);
    expect(store.lastResponse).toEqual(responseBefore);
    expect(store.pendingRepair).toBeNull();
    expect(store.repairHistory).toHaveLength(0);
  });
});
