// Minimal orbit camera over a z-up world: spherical position around a target,
// perspective projection onto canvas coordinates. One camera instance is
// shared by both viewports so orbiting and presets stay in lockstep.

import type { Vec3 } from "./types.js";

export interface Projected {
  x: number;
  y: number;
  depth: number; // camera-space forward distance; <= 0 means behind the eye
}

export type PresetName = "front" | "side" | "top";

const PRESETS: Record<PresetName, { azimuth: number; elevation: number }> = {
  front: { azimuth: 0.0, elevation: 0.2 },
  side: { azimuth: Math.PI / 2, elevation: 0.2 },
  top: { azimuth: 0.0, elevation: 1.45 },
};

export class OrbitCamera {
  target: Vec3 = [0, 0, 0];
  distance = 0.45;
  azimuth = 0.0;
  elevation = 0.2;
  fov = Math.PI / 4;

  eye(): Vec3 {
    const ce = Math.cos(this.elevation);
    return [
      this.target[0] + this.distance * ce * Math.cos(this.azimuth),
      this.target[1] + this.distance * ce * Math.sin(this.azimuth),
      this.target[2] + this.distance * Math.sin(this.elevation),
    ];
  }

  applyPreset(name: PresetName): void {
    const p = PRESETS[name];
    this.azimuth = p.azimuth;
    this.elevation = p.elevation;
  }

  orbit(deltaAzimuth: number, deltaElevation: number): void {
    this.azimuth += deltaAzimuth;
    const limit = Math.PI / 2 - 0.01;
    this.elevation = Math.min(limit, Math.max(-limit, this.elevation + deltaElevation));
  }

  zoom(factor: number): void {
    this.distance = Math.min(5.0, Math.max(0.05, this.distance * factor));
  }

  /** Project a world point into pixel coordinates of a w-by-h canvas. */
  project(point: Vec3, width: number, height: number): Projected {
    const eye = this.eye();
    const d: Vec3 = [point[0] - eye[0], point[1] - eye[1], point[2] - eye[2]];
    const f = normalize([
      this.target[0] - eye[0], this.target[1] - eye[1], this.target[2] - eye[2],
    ]);
    const right = normalize(cross(f, [0, 0, 1]));
    const up = cross(right, f);
    const xc = dot(d, right);
    const yc = dot(d, up);
    const zc = dot(d, f);
    const focal = 0.5 / Math.tan(this.fov / 2);
    const scale = (focal * height) / Math.max(zc, 1e-6);
    return { x: width / 2 + xc * scale, y: height / 2 - yc * scale, depth: zc };
  }
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
}

function dot(a: Vec3, b: Vec3): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

function normalize(v: Vec3): Vec3 {
  const n = Math.hypot(v[0], v[1], v[2]) || 1;
  return [v[0] / n, v[1] / n, v[2] / n];
}
