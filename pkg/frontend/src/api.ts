/** Typed client for the ivsgen HTTP/JSON inference service.
 *
 * The explorer performs no model math of its own: every surface and every
 * feature readout shown in the UI comes verbatim from these responses.
 */

export interface ModelInfo {
  feature_names: string[];
  feature_ranges: Record<string, [number, number]>;
  d_z: number;
  grid: { m_values: number[]; tau_values: number[] };
}

export interface ArbitrageBlock {
  is_free: boolean;
  l_calendar: number;
  l_butterfly: number;
  violation_nodes: { calendar: number[][]; butterfly: number[][] };
}

export interface DecodeResponse {
  surface: number[][];
  features: Record<string, number>;
  arbitrage: ArbitrageBlock;
}

export interface RepairResponse extends DecodeResponse {
  z_optimized: number[];
  repaired: boolean;
  converged: boolean;
  iterations: number;
  feature_drift: Record<string, number>;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function asJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = await response.json();
      if (typeof body?.detail === "string") detail = body.detail;
    } catch {
      /* non-JSON error body: keep the status text */
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class ExplorerApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  modelInfo(): Promise<ModelInfo> {
    return this.fetchFn(`${this.baseUrl}/model/info`).then((r) =>
      asJson<ModelInfo>(r),
    );
  }

  decode(
    y: Record<string, number>,
    z: number[],
    signal?: AbortSignal,
  ): Promise<DecodeResponse> {
    return this.fetchFn(`${this.baseUrl}/decode`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ y, z }),
      signal,
    }).then((r) => asJson<DecodeResponse>(r));
  }

  repair(y: Record<string, number>, z: number[]): Promise<RepairResponse> {
    return this.fetchFn(`${this.baseUrl}/repair`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ y, z }),
    }).then((r) => asJson<RepairResponse>(r));
  }

  features(surface: number[][]): Promise<{ features: Record<string, number> }> {
    return this.fetchFn(`${this.baseUrl}/features`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ surface }),
    }).then((r) => asJson<{ features: Record<string, number> }>(r));
  }
}
