// Wire types of the session service (see the backend's External Interfaces).

export type ControlMode = "positional" | "affine" | "nonparam";

/** One control edit; translation in pixels, rotation in radians. */
export interface ControlRecord {
  mode: ControlMode;
  dx: number;
  dy: number;
  rot: number;
  sx: number;
  sy: number;
  shear: number;
  /** base64 PNG, grayscale, >=128 means foreground (nonparam mode only) */
  mask?: string;
}

export interface ModelInfo {
  model_id: string;
  resolution: [number, number] | null;
  stage: number;
}

export interface CreateSessionResponse {
  session_id: string;
  mask: string;
  width: number;
  height: number;
}

export interface StepResponse {
  frame: string;
  mask: string;
  control_mask: string;
  warning?: string;
}

export interface SessionStateResponse {
  session_id: string;
  model_id: string;
  frame: string;
  mask: string;
  history: { length: number; capacity: number };
}

export interface ApiErrorBody {
  code: string;
  message: string;
}

export function identityControl(mode: ControlMode = "positional"): ControlRecord {
  return { mode, dx: 0, dy: 0, rot: 0, sx: 1, sy: 1, shear: 0 };
}
