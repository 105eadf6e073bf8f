import { describe, expect, it } from "vitest";

import { CANDIDATE_COLORS, MAX_CANDIDATES, SceneStore } from "../src/state.js";
import type { CandidatePrediction, XY } from "../src/types.js";

function fakeOverlay(id: string): CandidatePrediction {
  return {
    schema_version: 1,
    candidate_id: id,
    n_obs: 2,
    n_pred: 3,
    dt: 0.4,
    robot_path: [
      [0, 0],
      [1, 0],
      [2, 0],
      [3, 0],
      [4, 0],
    ],
    agents: [],
  };
}

const PATH: XY[] = [
  [0, 0],
  [1, 1],
  [2, 2],
];

describe("SceneStore", () => {
  it("caps the comparison at four candidate slots", () => {
    expect(new SceneStore().slots.length).toBe(4);
    expect(new SceneStore(99).slots.length).toBe(MAX_CANDIDATES);
    const colors = new Set(new SceneStore().slots.map((s) => s.color));
    expect(colors.size).toBe(4); // distinct overlay colors
    expect(CANDIDATE_COLORS.length).toBe(MAX_CANDIDATES);
  });

  it("marks a sketched slot pending and applies its response", () => {
    const store = new SceneStore();
    const { revision } = store.beginSketch(0, PATH, false);
    expect(store.slots[0]!.status).toBe("pending");

    const applied = store.applyResponse(0, revision, fakeOverlay("sketch-1"), "ckpt-abc");
    expect(applied).toBe(true);
    const slot = store.slots[0]!;
    expect(slot.status).toBe("fresh");
    expect(slot.overlay?.candidate_id).toBe("sketch-1");
    expect(slot.responseId).toContain("ckpt-abc");
  });

  it("aborts the in-flight request when a newer sketch arrives", () => {
    const store = new SceneStore();
    const first = store.beginSketch(0, PATH, false);
    expect(first.signal.aborted).toBe(false);
    const second = store.beginSketch(0, PATH, false);
    expect(first.signal.aborted).toBe(true);
    expect(second.signal.aborted).toBe(false);
    expect(second.revision).toBeGreaterThan(first.revision);
  });

  it("drops responses that answer a superseded sketch", () => {
    const store = new SceneStore();
    const old = store.beginSketch(0, PATH, false);
    const current = store.beginSketch(0, PATH, false);

    expect(store.applyResponse(0, old.revision, fakeOverlay("stale"), "ckpt")).toBe(false);
    expect(store.slots[0]!.overlay).toBeNull();
    expect(store.slots[0]!.status).toBe("pending");

    expect(store.applyResponse(0, current.revision, fakeOverlay("fresh"), "ckpt")).toBe(true);
    expect(store.slots[0]!.overlay?.candidate_id).toBe("fresh");
  });

  it("keeps the previous overlay, flagged stale, when a request fails", () => {
    const store = new SceneStore();
    const a = store.beginSketch(1, PATH, false);
    store.applyResponse(1, a.revision, fakeOverlay("ok"), "ckpt");

    const b = store.beginSketch(1, PATH, false);
    const noted = store.markError(1, b.revision, "service unreachable: refused");
    expect(noted).toBe(true);
    const slot = store.slots[1]!;
    expect(slot.status).toBe("stale"); // overlay retained, visibly flagged
    expect(slot.overlay?.candidate_id).toBe("ok");
    expect(store.banner).toMatch(/unreachable/);
  });

  it("clears the banner once any request succeeds again", () => {
    const store = new SceneStore();
    const a = store.beginSketch(0, PATH, false);
    store.markError(0, a.revision, "boom");
    expect(store.banner).toBe("boom");

    const b = store.beginSketch(0, PATH, false);
    store.applyResponse(0, b.revision, fakeOverlay("x"), "ckpt");
    expect(store.banner).toBeNull();
  });

  it("ignores failures that answer a superseded sketch", () => {
    const store = new SceneStore();
    const old = store.beginSketch(0, PATH, false);
    store.beginSketch(0, PATH, false);
    expect(store.markError(0, old.revision, "late failure")).toBe(false);
    expect(store.slots[0]!.status).toBe("pending");
    expect(store.banner).toBeNull();
  });

  it("rejects responses that race a clear", () => {
    const store = new SceneStore();
    const { revision, signal } = store.beginSketch(2, PATH, true);
    store.clearSlot(2);
    expect(signal.aborted).toBe(true);
    expect(store.applyResponse(2, revision, fakeOverlay("ghost"), "ckpt")).toBe(false);
    const slot = store.slots[2]!;
    expect(slot.path).toBeNull();
    expect(slot.overlay).toBeNull();
    expect(slot.status).toBe("empty");
  });

  it("tracks distinct response ids per applied response", () => {
    const store = new SceneStore();
    const a = store.beginSketch(0, PATH, false);
    store.applyResponse(0, a.revision, fakeOverlay("a"), "ckpt");
    const first = store.slots[0]!.responseId;
    const b = store.beginSketch(0, PATH, false);
    store.applyResponse(0, b.revision, fakeOverlay("b"), "ckpt");
    expect(store.slots[0]!.responseId).not.toBe(first);
  });

  it("lists active slots in display order", () => {
    const store = new SceneStore();
    store.beginSketch(2, PATH, false);
    store.beginSketch(0, PATH, false);
    expect(store.activeSlots().map((s) => s.id)).toEqual(["sketch-1", "sketch-3"]);
  });
});
