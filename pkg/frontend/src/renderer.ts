// Point-set rendering on a 2D canvas: object surface in muted blue, hand
// keypoints in warm tones, fingertip samples highlighted. Points are painter
// sorted by camera depth so nearer markers draw on top.

import { OrbitCamera } from "./camera.js";
import type { GraspView, Vec3 } from "./types.js";

export const COLORS = {
  object: "#5b8dbf",
  keypoints: "#e0793d",
  fingertips: "#2faf64",
  background: "#13161b",
};

interface Marker {
  x: number;
  y: number;
  depth: number;
  radius: number;
  color: string;
}

export function renderViewport(
  ctx: CanvasRenderingContext2D,
  camera: OrbitCamera,
  objectPoints: Vec3[],
  grasp: GraspView,
): void {
  const { width, height } = ctx.canvas;
  ctx.fillStyle = COLORS.background;
  ctx.fillRect(0, 0, width, height);

  const markers: Marker[] = [];
  const push = (pts: Vec3[], radius: number, color: string) => {
    for (const p of pts) {
      const proj = camera.project(p, width, height);
      if (proj.depth > 0) {
        markers.push({ x: proj.x, y: proj.y, depth: proj.depth, radius, color });
      }
    }
  };
  push(objectPoints, 1.6, COLORS.object);
  push(grasp.keypoints, 2.6, COLORS.keypoints);
  push(grasp.fingertip_samples, 3.4, COLORS.fingertips);

  markers.sort((a, b) => b.depth - a.depth);
  for (const m of markers) {
    ctx.fillStyle = m.color;
    ctx.beginPath();
    ctx.arc(m.x, m.y, m.radius, 0, 2 * Math.PI);
    ctx.fill();
  }
}

/** Center the shared camera on the object with a margin for the hand. */
export function frameObject(camera: OrbitCamera, objectPoints: Vec3[]): void {
  let cx = 0, cy = 0, cz = 0;
  for (const p of objectPoints) {
    cx += p[0]; cy += p[1]; cz += p[2];
  }
  const n = objectPoints.length || 1;
  camera.target = [cx / n, cy / n, cz / n];
  let radius = 0;
  for (const p of objectPoints) {
    radius = Math.max(radius, Math.hypot(
      p[0] - camera.target[0], p[1] - camera.target[1], p[2] - camera.target[2]));
  }
  camera.distance = Math.max(0.25, radius * 6);
}
