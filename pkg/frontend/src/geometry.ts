/**
 * World <-> screen mapping.
 *
 * The viewport is a uniform-scale affine transform with the y axis flipped
 * (world y up, screen y down), so it is trivially invertible and preserves
 * circles — covariance ellipses keep their shape up to the single scale
 * factor.
 */

import type { XY } from "./types.js";

export interface Bounds {
  minX: number;
  minY: number;
  maxX: number;
  maxY: number;
}

export function boundsOf(points: Iterable<XY>): Bounds {
  let minX = Infinity;
  let minY = Infinity;
  let maxX = -Infinity;
  let maxY = -Infinity;
  for (const [x, y] of points) {
    if (!Number.isFinite(x) || !Number.isFinite(y)) continue;
    if (x < minX) minX = x;
    if (x > maxX) maxX = x;
    if (y < minY) minY = y;
    if (y > maxY) maxY = y;
  }
  if (minX > maxX) {
    return { minX: -1, minY: -1, maxX: 1, maxY: 1 };
  }
  return { minX, minY, maxX, maxY };
}

export class Viewport {
  constructor(
    /** pixels per meter */
    readonly scale: number,
    /** screen x of world origin */
    readonly offsetX: number,
    /** screen y of world origin */
    readonly offsetY: number,
  ) {
    if (!(scale > 0)) throw new Error(`viewport scale must be > 0, got ${scale}`);
  }

  /** Fit the bounds into width x height, centered, with a pixel margin. */
  static fit(bounds: Bounds, width: number, height: number, margin = 32): Viewport {
    const spanX = Math.max(bounds.maxX - bounds.minX, 1e-9);
    const spanY = Math.max(bounds.maxY - bounds.minY, 1e-9);
    const scale = Math.min(
      (width - 2 * margin) / spanX,
      (height - 2 * margin) / spanY,
    );
    const cx = (bounds.minX + bounds.maxX) / 2;
    const cy = (bounds.minY + bounds.maxY) / 2;
    // place the world center at the screen center
    return new Viewport(scale, width / 2 - scale * cx, height / 2 + scale * cy);
  }

  toScreen([x, y]: XY): XY {
    return [this.offsetX + this.scale * x, this.offsetY - this.scale * y];
  }

  toWorld([px, py]: XY): XY {
    return [(px - this.offsetX) / this.scale, (this.offsetY - py) / this.scale];
  }
}

export function distance(a: XY, b: XY): number {
  return Math.hypot(a[0] - b[0], a[1] - b[1]);
}
