/**
 * Canvas drawing for the scene view.
 *
 * These helpers are deliberately thin: all geometry (world-to-screen,
 * covariance ellipses, resampling) lives in unit-tested modules, and this
 * file just moves a pen. Stale overlays are ghosted (dashed, reduced
 * alpha) so outdated predictions are visibly flagged rather than
 * silently mixed with fresh ones.
 */

import { covarianceEllipse } from "./ellipse.js";
import type { Viewport } from "./geometry.js";
import type { CandidateSlot } from "./state.js";
import type { Scenario, XY } from "./types.js";

const OBSERVED_COLOR = "#64748b";
const FUTURE_COLOR = "#cbd5e1";
const ROBOT_COLOR = "#0f172a";
const PLANNED_COLOR = "#f59e0b";

/**
 * Screen-space vertices a world polyline is stroked with. Exposed so
 * tests can verify that drawn overlays are the service's world points
 * under the viewport transform and nothing else.
 */
export function screenPath(vp: Viewport, points: XY[]): XY[] {
  return points.map((p) => vp.toScreen(p));
}

function polyline(ctx: CanvasRenderingContext2D, vp: Viewport, points: XY[]): void {
  const pts = screenPath(vp, points);
  if (pts.length === 0) return;
  ctx.beginPath();
  pts.forEach(([sx, sy], i) => {
    if (i === 0) ctx.moveTo(sx, sy);
    else ctx.lineTo(sx, sy);
  });
  ctx.stroke();
}

function dot(ctx: CanvasRenderingContext2D, vp: Viewport, p: XY, r: number): void {
  const [sx, sy] = vp.toScreen(p);
  ctx.beginPath();
  ctx.arc(sx, sy, r, 0, 2 * Math.PI);
  ctx.fill();
}

/** Observed history for every track plus the robot's stored plan. */
export function drawScene(ctx: CanvasRenderingContext2D, vp: Viewport, scenario: Scenario): void {
  ctx.save();
  ctx.lineWidth = 1.5;
  for (const agent of scenario.agents) {
    ctx.strokeStyle = OBSERVED_COLOR;
    polyline(ctx, vp, agent.observed);
    ctx.fillStyle = OBSERVED_COLOR;
    const last = agent.observed[agent.observed.length - 1];
    if (last) dot(ctx, vp, last, 4);
    if (agent.future.length) {
      ctx.strokeStyle = FUTURE_COLOR;
      ctx.setLineDash([2, 4]);
      polyline(ctx, vp, agent.future);
      ctx.setLineDash([]);
    }
  }
  ctx.strokeStyle = ROBOT_COLOR;
  ctx.lineWidth = 2.5;
  polyline(ctx, vp, scenario.robot.observed);
  const pose = scenario.robot.observed[scenario.robot.observed.length - 1];
  ctx.fillStyle = ROBOT_COLOR;
  if (pose) dot(ctx, vp, pose, 5);
  ctx.strokeStyle = PLANNED_COLOR;
  ctx.setLineDash([6, 4]);
  polyline(ctx, vp, scenario.robot.planned);
  ctx.restore();
}

/** The user's raw stroke while a sketch is in progress. */
export function drawSketch(ctx: CanvasRenderingContext2D, vp: Viewport, points: XY[], color: string): void {
  ctx.save();
  ctx.strokeStyle = color;
  ctx.lineWidth = 2;
  ctx.globalAlpha = 0.6;
  polyline(ctx, vp, points);
  ctx.restore();
}

function drawEllipse(
  ctx: CanvasRenderingContext2D,
  vp: Viewport,
  center: XY,
  sx: number,
  sy: number,
  rho: number,
): void {
  const shape = covarianceEllipse(sx, sy, rho);
  const [cx, cy] = vp.toScreen(center);
  ctx.beginPath();
  // Canvas y grows downward, so a +angle world rotation is -angle on screen.
  ctx.ellipse(cx, cy, shape.rx * vp.scale, shape.ry * vp.scale, -shape.angle, 0, 2 * Math.PI);
  ctx.stroke();
}

/**
 * One candidate's overlay: sketched robot path, each agent's predicted
 * mean, and the 1-sigma ellipse at every prediction step.
 */
export function drawOverlay(ctx: CanvasRenderingContext2D, vp: Viewport, slot: CandidateSlot): void {
  ctx.save();
  const stale = slot.status !== "fresh";
  ctx.globalAlpha = stale ? 0.35 : 1.0;
  if (stale) ctx.setLineDash([4, 4]);
  ctx.strokeStyle = slot.color;
  ctx.lineWidth = 2;
  if (slot.path) {
    polyline(ctx, vp, slot.path);
    ctx.fillStyle = slot.color;
    for (const p of slot.path) dot(ctx, vp, p, 2);
  }
  const overlay = slot.overlay;
  if (overlay) {
    for (const agent of overlay.agents) {
      const mean = agent.mean.filter((p): p is XY => p !== null);
      ctx.lineWidth = 2;
      polyline(ctx, vp, mean);
      ctx.lineWidth = 0.75;
      for (let t = 0; t < agent.mean.length; t++) {
        const m = agent.mean[t];
        const s = agent.sigma[t];
        const r = agent.rho[t];
        if (!m || !s || r === null || r === undefined) continue;
        drawEllipse(ctx, vp, m, s[0], s[1], r);
      }
    }
  }
  ctx.restore();
}
