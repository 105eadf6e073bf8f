/**
 * UI state for the what-if comparison view.
 *
 * The store owns candidate slots (at most MAX_CANDIDATES), tracks one
 * in-flight request per slot, and decides which service responses are
 * still relevant. All transitions are synchronous and side-effect free
 * apart from aborting superseded requests, so the whole policy is unit
 * testable without a DOM or a network.
 *
 * Overlay lifecycle per slot:
 *   (empty) -> pending -> fresh
 *   fresh -> pending (new sketch; previous overlay kept, shown as stale)
 *   pending -> stale  (request failed or service unreachable; previous
 *                      overlay retained, visibly flagged)
 * A response is applied only if it matches the slot's current revision,
 * so a newer sketch always wins over a slower, older request.
 */

import type { CandidatePrediction, XY } from "./types.js";

/** Hard cap on simultaneously compared candidate paths. */
export const MAX_CANDIDATES = 4;

/** Per-candidate overlay colors; index-aligned with slots. */
export const CANDIDATE_COLORS = ["#2563eb", "#dc2626", "#059669", "#9333ea"] as const;

export type SlotStatus = "empty" | "pending" | "fresh" | "stale";

export interface CandidateSlot {
  /** stable candidate id sent to the service, e.g. "sketch-1" */
  id: string;
  color: string;
  /** sketched robot path in world meters, exactly horizon points */
  path: XY[] | null;
  /** true when the sketch start was snapped to the robot's last pose */
  snapped: boolean;
  /** bumped on every new sketch; responses carry the revision they answer */
  revision: number;
  status: SlotStatus;
  /** last successfully fetched prediction, possibly stale */
  overlay: CandidatePrediction | null;
  /** identifier of the service response the overlay came from */
  responseId: string | null;
  /** last failure message for this slot, cleared on success */
  error: string | null;
}

function emptySlot(index: number): CandidateSlot {
  return {
    id: `sketch-${index + 1}`,
    color: CANDIDATE_COLORS[index] ?? "#334155",
    path: null,
    snapped: false,
    revision: 0,
    status: "empty",
    overlay: null,
    responseId: null,
    error: null,
  };
}

export class SceneStore {
  readonly slots: CandidateSlot[];
  /** non-blocking banner text; null when the service is healthy */
  banner: string | null = null;
  private readonly controllers: (AbortController | null)[];
  private responseCounter = 0;

  constructor(slotCount: number = MAX_CANDIDATES) {
    const n = Math.min(slotCount, MAX_CANDIDATES);
    this.slots = Array.from({ length: n }, (_, i) => emptySlot(i));
    this.controllers = Array.from({ length: n }, () => null);
  }

  /** Slots that currently have a sketch, in display order. */
  activeSlots(): CandidateSlot[] {
    return this.slots.filter((s) => s.path !== null);
  }

  /**
   * Record a new sketch for a slot and hand back the revision plus an
   * abort signal for its request. Any in-flight request for the slot is
   * aborted; a previous overlay stays visible but is flagged stale.
   */
  beginSketch(index: number, path: XY[], snapped: boolean): { revision: number; signal: AbortSignal } {
    const slot = this.requireSlot(index);
    this.controllers[index]?.abort();
    const controller = new AbortController();
    this.controllers[index] = controller;
    slot.path = path;
    slot.snapped = snapped;
    slot.revision += 1;
    slot.status = "pending"; // any previous overlay renders as stale meanwhile
    slot.error = null;
    return { revision: slot.revision, signal: controller.signal };
  }

  /**
   * Apply a prediction for (slot, revision). Returns false (and changes
   * nothing) when a newer sketch has superseded the request.
   */
  applyResponse(index: number, revision: number, overlay: CandidatePrediction, checkpointId: string): boolean {
    const slot = this.requireSlot(index);
    if (revision !== slot.revision) return false;
    this.responseCounter += 1;
    slot.overlay = overlay;
    slot.responseId = `${checkpointId}#${this.responseCounter}`;
    slot.status = "fresh";
    slot.error = null;
    this.controllers[index] = null;
    this.banner = null;
    return true;
  }

  /**
   * Record a failure for (slot, revision). The previous overlay, if any,
   * is retained and flagged stale; the banner carries the message so the
   * view stays usable. Outdated failures are ignored like outdated
   * responses.
   */
  markError(index: number, revision: number, message: string): boolean {
    const slot = this.requireSlot(index);
    if (revision !== slot.revision) return false;
    slot.status = slot.overlay ? "stale" : "empty";
    slot.error = message;
    this.controllers[index] = null;
    this.banner = message;
    return true;
  }

  /** Drop a slot's sketch and overlay and abort any in-flight request. */
  clearSlot(index: number): void {
    const slot = this.requireSlot(index);
    this.controllers[index]?.abort();
    this.controllers[index] = null;
    // Bump the revision so a response that raced the abort is rejected
    // instead of resurrecting the cleared sketch.
    Object.assign(slot, emptySlot(index), { revision: slot.revision + 1 });
  }

  private requireSlot(index: number): CandidateSlot {
    const slot = this.slots[index];
    if (!slot) throw new RangeError(`no candidate slot ${index} (have ${this.slots.length})`);
    return slot;
  }
}
