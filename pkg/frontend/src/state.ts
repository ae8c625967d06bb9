/** Explorer state: slider values, last server response, repair lifecycle.
 *
 * Concurrency: at most one in-flight decode; a newer request aborts the
 * older one and stale responses are discarded (latest wins).  Slider
 * changes are debounced (75 ms) so drags do not cause request storms.
 */
import {
  ApiError,
  DecodeResponse,
  ExplorerApi,
  ModelInfo,
  RepairResponse,
} from "./api.js";

export const DEBOUNCE_MS = 75;
export const Z_BOUND = 8;
/** Feature sliders may extend past the training range by this factor. */
export const RANGE_EXTENSION = 1.2;

export interface SliderSpec {
  name: string;
  min: number;
  max: number;
  value: number;
}

export interface RepairProposal {
  /** Snapshot of (y, z, response) taken before the repair was requested. */
  snapshot: { y: Record<string, number>; z: number[]; response: DecodeResponse };
  result: RepairResponse;
}

export interface AcceptedRepair {
  y: Record<string, number>;
  zBefore: number[];
  zAfter: number[];
  featureDrift: Record<string, number>;
}

interface StoreOptions {
  debounceMs?: number;
  setTimeoutFn?: (fn: () => void, ms: number) => unknown;
  clearTimeoutFn?: (handle: unknown) => void;
  now?: () => number;
  onUpdate?: () => void;
  onError?: (message: string) => void;
}

function clamp(value: number, min: number, max: number): number {
  return Math.min(max, Math.max(min, value));
}

function deepCopy<T>(value: T): T {
  return JSON.parse(JSON.stringify(value)) as T;
}

export class ExplorerStore {
  featureSliders: SliderSpec[] = [];
  zSliders: number[] = [];
  lastResponse: DecodeResponse | null = null;
  lastRoundTripMs: number | null = null;
  pendingRepair: RepairProposal | null = null;
  repairHistory: AcceptedRepair[] = [];
  toast: string | null = null;

  private info: ModelInfo | null = null;
  private debounceHandle: unknown = null;
  private inflight: AbortController | null = null;
  private requestCounter = 0;
  private readonly debounceMs: number;
  private readonly setTimeoutFn: (fn: () => void, ms: number) => unknown;
  private readonly clearTimeoutFn: (handle: unknown) => void;
  private readonly now: () => number;
  private readonly onUpdate: () => void;
  private readonly onError: (message: string) => void;

  constructor(
    private readonly api: ExplorerApi,
    options: StoreOptions = {},
  ) {
    this.debounceMs = options.debounceMs ?? DEBOUNCE_MS;
    this.setTimeoutFn = options.setTimeoutFn ?? ((fn, ms) => setTimeout(fn, ms));
    this.clearTimeoutFn =
      options.clearTimeoutFn ?? ((h) => clearTimeout(h as number));
    this.now = options.now ?? (() => performance.now());
    this.onUpdate = options.onUpdate ?? (() => {});
    this.onError =
      options.onError ??
      ((message) => {
        this.toast = message;
      });
  }

  get modelInfo(): ModelInfo | null {
    return this.info;
  }

  async init(): Promise<void> {
    const info = await this.api.modelInfo();
    this.info = info;
    this.featureSliders = info.feature_names.map((name) => {
      const [lo, hi] = info.feature_ranges[name] ?? [0, 1];
      const half = ((hi - lo) * (RANGE_EXTENSION - 1)) / 2;
      return { name, min: lo - half, max: hi + half, value: (lo + hi) / 2 };
    });
    this.zSliders = new Array(info.d_z).fill(0);
    this.onUpdate();
  }

  currentY(): Record<string, number> {
    const y: Record<string, number> = {};
    for (const slider of this.featureSliders) y[slider.name] = slider.value;
    return y;
  }

  currentZ(): number[] {
    return [...this.zSliders];
  }

  /** Set a feature slider; NaN and out-of-bounds values never reach the wire. */
  setFeature(name: string, value: number): void {
    const slider = this.featureSliders.find((s) => s.name === name);
    if (!slider) throw new Error(`unknown feature slider: ${name}`);
    if (!Number.isFinite(value)) return;
    slider.value = clamp(value, slider.min, slider.max);
    this.scheduleDecode();
  }

  setZ(index: number, value: number): void {
    if (index < 0 || index >= this.zSliders.length)
      throw new Error(`z index out of range: ${index}`);
    if (!Number.isFinite(value)) return;
    this.zSliders[index] = clamp(value, -Z_BOUND, Z_BOUND);
    this.scheduleDecode();
  }

  private scheduleDecode(): void {
    if (this.debounceHandle !== null) this.clearTimeoutFn(this.debounceHandle);
    this.debounceHandle = this.setTimeoutFn(() => {
      this.debounceHandle = null;
      void this.decodeNow();
    }, this.debounceMs);
  }

  /** Issue a decode immediately; newer calls win over in-flight ones. */
  async decodeNow(): Promise<DecodeResponse | null> {
    if (this.inflight !== null) this.inflight.abort();
    const controller = new AbortController();
    this.inflight = controller;
    const requestId = ++this.requestCounter;
    const started = this.now();
    try {
      const response = await this.api.decode(
        this.currentY(),
        this.currentZ(),
        controller.signal,
      );
      if (requestId !== this.requestCounter) return null; // stale
      this.lastResponse = response;
      this.lastRoundTripMs = this.now() - started;
      this.toast = null;
      this.onUpdate();
      return response;
    } catch (error) {
      if (requestId !== this.requestCounter) return null; // superseded
      if ((error as Error).name === "AbortError") return null;
      const message =
        error instanceof ApiError ? error.message : `decode failed: ${error}`;
      this.onError(message); // last good state retained
      this.onUpdate();
      return null;
    } finally {
      if (this.inflight === controller) this.inflight = null;
    }
  }

  /** Request a repair of the current point; result is held for accept/revert. */
  async requestRepair(): Promise<RepairProposal | null> {
    if (this.lastResponse === null) return null;
    if (this.lastResponse.arbitrage.is_free) {
      this.toast = "already arbitrage-free";
      this.onUpdate();
      return null;
    }
    const snapshot = {
      y: deepCopy(this.currentY()),
      z: this.currentZ(),
      response: deepCopy(this.lastResponse),
    };
    try {
      const result = await this.api.repair(snapshot.y, snapshot.z);
      this.pendingRepair = { snapshot, result };
      // Preview: show the repaired surface and move z sliders to z*.
      this.zSliders = [...result.z_optimized];
      this.lastResponse = {
        surface: result.surface,
        features: result.features,
        arbitrage: result.arbitrage,
      };
      this.onUpdate();
      return this.pendingRepair;
    } catch (error) {
      const message =
        error instanceof ApiError ? error.message : `repair failed: ${error}`;
      this.onError(message);
      this.onUpdate();
      return null;
    }
  }

  acceptRepair(): void {
    if (this.pendingRepair === null) return;
    const { snapshot, result } = this.pendingRepair;
    this.repairHistory.push({
      y: snapshot.y,
      zBefore: snapshot.z,
      zAfter: [...result.z_optimized],
      featureDrift: deepCopy(result.feature_drift),
    });
    this.pendingRepair = null;
    this.onUpdate();
  }

  /** Restore the exact pre-repair state (deep-equal to the snapshot). */
  revertRepair(): void {
    if (this.pendingRepair === null) return;
    const { snapshot } = this.pendingRepair;
    for (const slider of this.featureSliders)
      slider.value = snapshot.y[slider.name];
    this.zSliders = [...snapshot.z];
    this.lastResponse = deepCopy(snapshot.response);
    this.pendingRepair = null;
    this.onUpdate();
  }
}
