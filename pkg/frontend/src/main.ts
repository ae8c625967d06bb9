/** DOM wiring for the explorer: sliders in, canvas/badges out. */
import { ExplorerApi } from "./api.js";
import { ExplorerStore } from "./state.js";
import {
  ColorScale,
  featureBadges,
  heatmapPixels,
  initialScale,
  tauSlices,
  violationOverlay,
  widenScale,
} from "./render.js";

const PIXEL_SIZE = 12;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function sliderRow(
  label: string,
  min: number,
  max: number,
  value: number,
  onInput: (v: number) => void,
): HTMLElement {
  const row = document.createElement("label");
  row.className = "slider-row";
  const text = document.createElement("span");
  text.textContent = label;
  const input = document.createElement("input");
  input.type = "range";
  input.min = String(min);
  input.max = String(max);
  input.step = String((max - min) / 200);
  input.value = String(value);
  const readout = document.createElement("span");
  readout.className = "readout";
  readout.textContent = value.toFixed(3);
  input.addEventListener("input", () => {
    const v = Number(input.value);
    readout.textContent = v.toFixed(3);
    onInput(v);
  });
  row.append(text, input, readout);
  return row;
}

async function boot(): Promise<void> {
  const api = new ExplorerApi("");
  let scale: ColorScale | null = null;

  const store = new ExplorerStore(api, {
    onUpdate: () => render(),
    onError: (message) => showToast(message),
  });

  function showToast(message: string): void {
    const toast = el<HTMLDivElement>("toast");
    toast.textContent = message;
    toast.classList.add("visible");
    setTimeout(() => toast.classList.remove("visible"), 4000);
  }

  function render(): void {
    const response = store.lastResponse;
    const info = store.modelInfo;
    if (!response || !info) return;

    scale = scale === null ? initialScale(response.surface) : widenScale(scale, response.surface);

    const canvas = el<HTMLCanvasElement>("heatmap");
    const nTau = response.surface.length;
    const nM = response.surface[0].length;
    canvas.width = nM * PIXEL_SIZE;
    canvas.height = nTau * PIXEL_SIZE;
    const ctx = canvas.getContext("2d")!;
    const pixels = heatmapPixels(response.surface, scale);
    const image = new ImageData(new Uint8ClampedArray(pixels), nM, nTau);
    const offscreen = document.createElement("canvas");
    offscreen.width = nM;
    offscreen.height = nTau;
    offscreen.getContext("2d")!.putImageData(image, 0, 0);
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(offscreen, 0, 0, canvas.width, canvas.height);
    ctx.strokeStyle = "#ff2d55";
    ctx.lineWidth = 2;
    for (const node of violationOverlay(response.arbitrage)) {
      ctx.strokeRect(
        node.mIndex * PIXEL_SIZE,
        node.tauIndex * PIXEL_SIZE,
        PIXEL_SIZE,
        PIXEL_SIZE,
      );
    }

    const slicesDiv = el<HTMLDivElement>("slices");
    slicesDiv.innerHTML = "";
    for (const slice of tauSlices(
      response.surface,
      info.grid.m_values,
      info.grid.tau_values,
    )) {
      const svgNs = "http://www.w3.org/2000/svg";
      const svg = document.createElementNS(svgNs, "svg");
      svg.setAttribute("viewBox", "0 0 200 120");
      svg.setAttribute("class", "slice");
      const lo = Math.min(...slice.sigma);
      const hi = Math.max(...slice.sigma);
      const span = hi - lo || 1;
      const points = slice.m
        .map((m, i) => {
          const x = ((m - slice.m[0]) / (slice.m[slice.m.length - 1] - slice.m[0])) * 190 + 5;
          const y = 110 - ((slice.sigma[i] - lo) / span) * 100;
          return `${x.toFixed(1)},${y.toFixed(1)}`;
        })
        .join(" ");
      const line = document.createElementNS(svgNs, "polyline");
      line.setAttribute("points", points);
      line.setAttribute("fill", "none");
      line.setAttribute("stroke", "#2a6fdb");
      const label = document.createElementNS(svgNs, "text");
      label.setAttribute("x", "8");
      label.setAttribute("y", "14");
      label.textContent = `τ = ${slice.tauActual.toFixed(2)}`;
      svg.append(line, label);
      slicesDiv.appendChild(svg);
    }

    const badgesDiv = el<HTMLDivElement>("badges");
    badgesDiv.innerHTML = "";
    for (const badge of featureBadges(store.currentY(), response.features)) {
      const div = document.createElement("div");
      div.className = `badge ${badge.ok ? "ok" : "off"}`;
      div.textContent =
        `${badge.name}: given ${badge.given.toFixed(4)} · ` +
        `extracted ${badge.extracted.toFixed(4)} · |e| ${badge.absError.toExponential(1)}`;
      badgesDiv.appendChild(div);
    }

    const arb = el<HTMLDivElement>("arbitrage-badge");
    arb.className = `badge ${response.arbitrage.is_free ? "ok" : "bad"}`;
    arb.textContent = response.arbitrage.is_free
      ? "arbitrage-free"
      : `violations: L_cal ${response.arbitrage.l_calendar.toExponential(2)} ` +
        `L_but ${response.arbitrage.l_butterfly.toExponential(2)}`;

    const timing = el<HTMLSpanElement>("timing");
    if (store.lastRoundTripMs !== null)
      timing.textContent = `${store.lastRoundTripMs.toFixed(0)} ms`;

    const repairPanel = el<HTMLDivElement>("repair-panel");
    repairPanel.classList.toggle("visible", store.pendingRepair !== null);
    if (store.pendingRepair) {
      const { result, snapshot } = store.pendingRepair;
      el<HTMLDivElement>("repair-summary").textContent =
        `${result.repaired ? "repaired" : result.converged ? "partial" : "not converged"} · ` +
        `penalty ${(
          snapshot.response.arbitrage.l_calendar + snapshot.response.arbitrage.l_butterfly
        ).toExponential(2)} → ${(
          result.arbitrage.l_calendar + result.arbitrage.l_butterfly
        ).toExponential(2)} · max drift ${Math.max(
          ...Object.values(result.feature_drift).map(Math.abs),
        ).toExponential(1)}`;
    }
  }

  await store.init();
  const info = store.modelInfo!;

  const featuresDiv = el<HTMLDivElement>("feature-sliders");
  for (const slider of store.featureSliders)
    featuresDiv.appendChild(
      sliderRow(slider.name, slider.min, slider.max, slider.value, (v) =>
        store.setFeature(slider.name, v),
      ),
    );

  const zDiv = el<HTMLDivElement>("z-sliders");
  for (let j = 0; j < info.d_z; j++)
    zDiv.appendChild(sliderRow(`z${j}`, -8, 8, 0, (v) => store.setZ(j, v)));

  el<HTMLButtonElement>("repair-button").addEventListener("click", () => {
    void store.requestRepair();
  });
  el<HTMLButtonElement>("accept-repair").addEventListener("click", () =>
    store.acceptRepair(),
  );
  el<HTMLButtonElement>("revert-repair").addEventListener("click", () =>
    store.revertRepair(),
  );

  await store.decodeNow();
}

boot().catch((error) => {
  console.error(error);
  document.body.insertAdjacentText("beforeend", `failed to start: ${error}`);
});
