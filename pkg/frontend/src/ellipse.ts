/**
 * Covariance ellipse from a per-step Gaussian (sigma_x, sigma_y, rho).
 *
 * The 2x2 covariance is [[sx^2, r*sx*sy], [r*sx*sy, sy^2]]; its eigen
 * decomposition gives the 1-sigma contour's semi-axes (sqrt of the
 * eigenvalues) and the major-axis angle.
 */

export interface EllipseShape {
  /** semi-major axis, world meters */
  rx: number;
  /** semi-minor axis, world meters */
  ry: number;
  /** major-axis angle from +x, radians, in (-pi/2, pi/2] */
  angle: number;
}

export function covarianceEllipse(sx: number, sy: number, rho: number): EllipseShape {
  const a = sx * sx;
  const c = sy * sy;
  const b = rho * sx * sy;
  const mean = (a + c) / 2;
  const root = Math.hypot((a - c) / 2, b);
  const l1 = mean + root;
  const l2 = Math.max(mean - root, 0);
  // (C - l1*I) annihilates (b, l1 - a), so that vector spans the major axis.
  // l1 >= a always, hence atan2 lands in [0, pi); wrap into (-pi/2, pi/2].
  let angle = b === 0 && a >= c ? 0 : Math.atan2(l1 - a, b);
  if (angle > Math.PI / 2) angle -= Math.PI;
  return { rx: Math.sqrt(l1), ry: Math.sqrt(l2), angle };
}
