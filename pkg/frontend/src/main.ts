/**
 * What-if explorer entry point.
 *
 * Wires the scene canvas, sketch input, and comparison panel to the
 * prediction service. The service base URL comes from the `?service=`
 * query parameter (default http://127.0.0.1:8000); an initial scenario
 * can be chosen with `?scenario=<id>`.
 *
 * All prediction math happens server-side: this file only collects
 * pointer samples, resamples them to candidate paths, and displays what
 * the service returns.
 */

import { isAbort, PredictionClient, ServiceError } from "./client.js";
import { boundsOf, Viewport } from "./geometry.js";
import { sketchToCandidate } from "./resample.js";
import { drawOverlay, drawScene, drawSketch } from "./render.js";
import { MAX_CANDIDATES, SceneStore } from "./state.js";
import { shiftVersusFirst } from "./summary.js";
import type { PredictRequest, Scenario, ServiceInfo, XY } from "./types.js";

const REQUEST_SCHEMA_VERSION = 1;

function must<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

function fmt(x: number, digits = 2): string {
  return x.toFixed(digits);
}

class App {
  private readonly client: PredictionClient;
  private readonly store = new SceneStore();
  private readonly canvas: HTMLCanvasElement;
  private readonly ctx: CanvasRenderingContext2D;
  private info: ServiceInfo | null = null;
  private scenario: Scenario | null = null;
  private viewport: Viewport | null = null;
  private activeSlot = 0;
  private stroke: XY[] | null = null;

  constructor(serviceUrl: string) {
    this.client = new PredictionClient(serviceUrl);
    this.canvas = must<HTMLCanvasElement>("scene");
    const ctx = this.canvas.getContext("2d");
    if (!ctx) throw new Error("2d canvas context unavailable");
    this.ctx = ctx;
    this.bindControls();
  }

  async boot(initialScenario: string | null): Promise<void> {
    try {
      this.info = await this.client.info();
      const summaries = await this.client.scenarios();
      const select = must<HTMLSelectElement>("scenario-select");
      select.innerHTML = "";
      for (const s of summaries) {
        const opt = document.createElement("option");
        opt.value = s.scenario_id;
        opt.textContent = `${s.name} (${s.n_agents} agents)`;
        select.appendChild(opt);
      }
      must<HTMLElement>("model-line").textContent =
        `${this.info.model} @ ${this.info.checkpoint_id.slice(0, 12)} — ` +
        `horizon ${this.info.n_pred} steps, dt ${this.info.dt}s`;
      const first = summaries[0];
      const chosen = initialScenario ?? first?.scenario_id;
      if (chosen) {
        select.value = chosen;
        await this.loadScenario(chosen);
      }
    } catch (err) {
      this.showBanner(err instanceof Error ? err.message : String(err));
    }
  }

  private bindControls(): void {
    must<HTMLSelectElement>("scenario-select").addEventListener("change", (ev) => {
      const id = (ev.target as HTMLSelectElement).value;
      void this.loadScenario(id);
    });
    const slotBar = must<HTMLElement>("slot-bar");
    for (let i = 0; i < MAX_CANDIDATES; i++) {
      const btn = document.createElement("button");
      btn.textContent = `path ${i + 1}`;
      btn.dataset["slot"] = String(i);
      btn.addEventListener("click", () => {
        this.activeSlot = i;
        this.redraw();
      });
      slotBar.appendChild(btn);
    }
    must<HTMLButtonElement>("clear-slot").addEventListener("click", () => {
      this.store.clearSlot(this.activeSlot);
      this.redraw();
    });

    this.canvas.addEventListener("pointerdown", (ev) => {
      if (!this.scenario || !this.viewport) return;
      this.canvas.setPointerCapture(ev.pointerId);
      this.stroke = [this.eventWorld(ev)];
      this.redraw();
    });
    this.canvas.addEventListener("pointermove", (ev) => {
      if (!this.stroke) return;
      this.stroke.push(this.eventWorld(ev));
      this.redraw();
    });
    this.canvas.addEventListener("pointerup", (ev) => {
      if (!this.stroke) return;
      this.stroke.push(this.eventWorld(ev));
      const stroke = this.stroke;
      this.stroke = null;
      this.finishSketch(stroke);
    });
  }

  private eventWorld(ev: PointerEvent): XY {
    const rect = this.canvas.getBoundingClientRect();
    const px: XY = [ev.clientX - rect.left, ev.clientY - rect.top];
    // Viewport existence is checked before a stroke starts.
    return (this.viewport as Viewport).toWorld(px);
  }

  private async loadScenario(id: string): Promise<void> {
    try {
      this.scenario = await this.client.scenario(id);
    } catch (err) {
      this.showBanner(err instanceof Error ? err.message : String(err));
      return;
    }
    const pts: XY[] = [];
    for (const a of this.scenario.agents) pts.push(...a.observed, ...a.future);
    pts.push(...this.scenario.robot.observed, ...this.scenario.robot.planned);
    this.viewport = Viewport.fit(boundsOf(pts), this.canvas.width, this.canvas.height);
    for (let i = 0; i < MAX_CANDIDATES; i++) this.store.clearSlot(i);
    this.redraw();
  }

  private robotLast(): XY {
    const scenario = this.scenario as Scenario;
    const last = scenario.robot.observed[scenario.robot.observed.length - 1];
    if (!last) throw new Error("scenario has no observed robot positions");
    return last;
  }

  private finishSketch(stroke: XY[]): void {
    if (!this.scenario || !this.info) return;
    const sketch = sketchToCandidate(stroke, this.robotLast(), this.info.n_pred);
    const { revision, signal } = this.store.beginSketch(this.activeSlot, sketch.path, sketch.snapped);
    this.redraw();
    void this.requestPrediction(this.activeSlot, revision, signal);
  }

  private async requestPrediction(index: number, revision: number, signal: AbortSignal): Promise<void> {
    const scenario = this.scenario as Scenario;
    const slot = this.store.slots[index];
    if (!slot?.path) return;
    const body: PredictRequest = {
      schema_version: REQUEST_SCHEMA_VERSION,
      scenario_id: scenario.scenario_id,
      candidates: [{ id: slot.id, path: slot.path }],
    };
    try {
      const res = await this.client.predict(body, signal);
      const overlay = res.candidates[0];
      if (overlay) this.store.applyResponse(index, revision, overlay, res.checkpoint_id);
      else this.store.markError(index, revision, "service returned no candidate rollout");
    } catch (err) {
      if (isAbort(err)) return; // superseded by a newer sketch
      const msg = err instanceof ServiceError ? err.message : `request failed: ${String(err)}`;
      this.store.markError(index, revision, msg);
    }
    this.redraw();
  }

  private showBanner(message: string | null): void {
    const banner = must<HTMLElement>("banner");
    banner.textContent = message ?? "";
    banner.style.display = message ? "block" : "none";
  }

  private redraw(): void {
    const { ctx, canvas } = this;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    if (this.scenario && this.viewport) {
      drawScene(ctx, this.viewport, this.scenario);
      for (const slot of this.store.slots) {
        if (slot.path) drawOverlay(ctx, this.viewport, slot);
      }
      if (this.stroke) {
        const color = this.store.slots[this.activeSlot]?.color ?? "#334155";
        drawSketch(ctx, this.viewport, this.stroke, color);
      }
    }
    this.showBanner(this.store.banner);
    this.renderPanel();
  }

  private renderPanel(): void {
    const legend = must<HTMLElement>("legend");
    legend.innerHTML = "";
    const active = this.store.activeSlots();
    for (const slot of this.store.slots) {
      const row = document.createElement("div");
      row.className = "legend-row";
      const swatch = document.createElement("span");
      swatch.className = "swatch";
      swatch.style.background = slot.color;
      row.appendChild(swatch);
      const label = document.createElement("span");
      const bits = [slot.id, slot.status];
      if (slot === this.store.slots[this.activeSlot]) bits.push("(active)");
      if (slot.snapped) bits.push("start snapped to robot");
      if (slot.responseId) bits.push(`response ${slot.responseId}`);
      if (slot.error) bits.push(`error: ${slot.error}`);
      label.textContent = bits.join(" · ");
      row.appendChild(label);
      legend.appendChild(row);
    }

    const compare = must<HTMLElement>("compare");
    compare.innerHTML = "";
    const withOverlay = active.filter((s) => s.overlay);
    const first = withOverlay[0];
    if (!first?.overlay || withOverlay.length < 2) {
      compare.textContent = withOverlay.length
        ? "Sketch a second path to compare responses."
        : "Sketch a path to see predicted responses.";
      return;
    }
    for (const slot of withOverlay.slice(1)) {
      if (!slot.overlay) continue;
      const cmp = shiftVersusFirst(first.overlay, slot.overlay);
      const row = document.createElement("div");
      const top = cmp.agents[0];
      row.textContent = top
        ? `${slot.id} vs ${first.id}: max response shift ${fmt(cmp.maxShiftM)} m ` +
          `(agent ${top.agentId}, step ${top.stepOfMax + 1})`
        : `${slot.id} vs ${first.id}: no common agents to compare`;
      compare.appendChild(row);
    }
  }
}

function start(): void {
  const params = new URLSearchParams(window.location.search);
  const service = params.get("service") ?? "http://127.0.0.1:8000";
  const scenario = params.get("scenario");
  const app = new App(service);
  void app.boot(scenario);
}

start();
