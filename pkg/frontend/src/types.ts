// Payload shapes served by the annotation endpoints (see docs/http_api.md in
// the repo root). The validator guards the renderer against malformed data.

export type Vec3 = [number, number, number];

export interface GraspView {
  keypoints: Vec3[];
  fingertip_samples: Vec3[];
  wrist_position: Vec3;
}

export interface PairPayload {
  pair_id: string;
  scene_id: string;
  object_points: Vec3[];
  grasps: { a: GraspView; b: GraspView };
}

export interface StatusPayload {
  run_step: number;
  archive_size: number;
  labels_collected: number;
  reward_model_version: number;
  mode: string;
}

export type LabelChoice = "A" | "B" | "similar";

export class ValidationError extends Error {}

function isVec3Array(value: unknown): value is Vec3[] {
  return Array.isArray(value) &&
    value.every((p) => Array.isArray(p) && p.length === 3 &&
      p.every((x) => typeof x === "number" && Number.isFinite(x)));
}

function validGrasp(value: unknown): value is GraspView {
  if (typeof value !== "object" || value === null) return false;
  const g = value as GraspView;
  return isVec3Array(g.keypoints) && g.keypoints.length > 0 &&
    isVec3Array(g.fingertip_samples) &&
    Array.isArray(g.wrist_position) && g.wrist_position.length === 3;
}

export function validatePair(value: unknown): PairPayload {
  const p = value as PairPayload;
  if (typeof p !== "object" || p === null || typeof p.pair_id !== "string") {
    throw new ValidationError("pair payload missing pair_id");
  }
  if (!isVec3Array(p.object_points) || p.object_points.length === 0) {
    throw new ValidationError("pair payload has no object points");
  }
  if (!p.grasps || !validGrasp(p.grasps.a) || !validGrasp(p.grasps.b)) {
    throw new ValidationError("pair payload has malformed grasp views");
  }
  return p;
}

export function validateStatus(value: unknown): StatusPayload {
  const s = value as StatusPayload;
  if (typeof s !== "object" || s === null ||
      typeof s.labels_collected !== "number" ||
      typeof s.reward_model_version !== "number") {
    throw new ValidationError("malformed status payload");
  }
  return s;
}
