/**
 * Freehand sketch -> candidate machine path.
 *
 * A candidate path must have exactly horizon-many points, equally spaced
 * along the drawn polyline by arc length, and must start at the machine's
 * last observed position.  Sketches that start more than SNAP_RADIUS_M
 * away are pulled back to the machine and flagged so the UI can show a cue.
 */

import { distance } from "./geometry.js";
import type { XY } from "./types.js";

export const SNAP_RADIUS_M = 0.5;

export interface SketchResult {
  path: XY[];
  /** true when the sketch start was > SNAP_RADIUS_M from the machine */
  snapped: boolean;
}

/**
 * Resample a polyline to `count` points equally spaced by cumulative arc
 * length, keeping both endpoints.  Degenerate inputs (a single vertex or a
 * zero-length stroke) repeat the start point.
 */
export function resamplePolyline(points: XY[], count: number): XY[] {
  if (points.length === 0) throw new Error("cannot resample an empty polyline");
  if (count < 1) throw new Error(`need at least one sample, got ${count}`);
  const first = points[0]!;
  const cumulative: number[] = [0];
  for (let i = 1; i < points.length; i++) {
    cumulative.push(cumulative[i - 1]! + distance(points[i - 1]!, points[i]!));
  }
  const total = cumulative[cumulative.length - 1]!;
  if (total === 0 || count === 1) {
    return Array.from({ length: count }, () => [first[0], first[1]] as XY);
  }

  const out: XY[] = [];
  let seg = 0;
  for (let i = 0; i < count; i++) {
    const target = (total * i) / (count - 1);
    while (seg < points.length - 2 && cumulative[seg + 1]! < target) seg++;
    const s0 = cumulative[seg]!;
    const s1 = cumulative[seg + 1]!;
    const t = s1 > s0 ? (target - s0) / (s1 - s0) : 0;
    const a = points[seg]!;
    const b = points[seg + 1]!;
    out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
  }
  return out;
}

/** Turn raw pointer samples (world meters) into a horizon-length path. */
export function sketchToCandidate(
  raw: XY[],
  machineLast: XY,
  horizon: number,
): SketchResult {
  if (raw.length === 0) {
    return {
      path: resamplePolyline([machineLast], horizon),
      snapped: false,
    };
  }
  const snapped = distance(raw[0]!, machineLast) > SNAP_RADIUS_M;
  // Anchor the stroke at the machine by replacing its first vertex, so a
  // single click is always a stationary path and a multi-point stroke keeps
  // its shape; `snapped` drives the visual cue when the start was far off.
  const anchored: XY[] = [machineLast, ...raw.slice(1)];
  return { path: resamplePolyline(anchored, horizon), snapped };
}
