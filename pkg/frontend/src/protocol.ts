// Wire types mirroring the session service protocol: every frame in both
// directions is {type, seq, payload}. These shapes are the contract; the UI
// derives all robot state from them and never invents its own.

export type CommandType =
  | "start"
  | "get_state"
  | "jog"
  | "capture"
  | "select_and_execute"
  | "abort"
  | "reset";

export type EventType =
  | "response"
  | "state"
  | "telemetry"
  | "heartbeat"
  | "gap"
  | "servo_done";

export type SessionState = "Idle" | "ManualControl" | "GraphReady" | "Servoing" | "Fault";

export interface Envelope {
  type: string;
  seq: number;
  payload: Record<string, unknown>;
}

export interface MetricsRecord {
  step: number;
  time_s: number;
  rcm_error_mm: number;
  e_t: (number | null)[];
  mpd_px: number | null;
  inlier_count: number;
  tip_mm: number[];
  target_vertex: number;
}

export interface Observation {
  ids: number[];
  pixels: [number, number][];
}

export interface VertexInfo {
  id: number;
  timestamp: number;
  n_features: number;
  ids: number[];
  pixels: [number, number][];
}

export interface GraphInfo {
  current: number | null;
  vertices: VertexInfo[];
  edges: [number, number][];
}

export interface ServoInfo {
  target: number;
  path: number[];
  leg_target: number;
  step?: number;
  mpd_px?: number | null;
}

export interface EvalInfo {
  camera_position_m: number[];
  camera_rotation: number[][];
  tip_mm: number[];
  rcm_error_mm: number;
  time_s: number;
}

export interface SessionConfigInfo {
  kind: string;
  seed: number;
  projection_mode: string;
  dt: number;
  final_mpd_px: number;
  intermediate_mpd_px: number;
  image_size: [number, number];
  fov_radius_px: number;
}

export interface WorldInfo {
  q: number[];
  time_s: number;
  rcm_error_mm: number;
  trocar: number[];
  eval: EvalInfo;
}

export interface Snapshot {
  state: SessionState;
  error: string | null;
  config: SessionConfigInfo;
  world: WorldInfo | null;
  observation: Observation | null;
  graph: GraphInfo | null;
  servo: ServoInfo | null;
  metrics_tail: MetricsRecord[];
}

export interface CommandResponse {
  in_reply_to: number | null;
  ok: boolean;
  state: SessionState;
  error: string | null;
  result: Record<string, unknown> | null;
}

export interface TelemetryPayload {
  record: MetricsRecord;
  observation: Observation;
  servo: ServoInfo;
  eval: EvalInfo;
}

export interface GapPayload {
  dropped: number | null;
  resume_step: number | null;
}

export function commandEnvelope(
  type: CommandType,
  seq: number,
  payload: Record<string, unknown> = {},
): Envelope {
  return { type, seq, payload };
}

export function parseEnvelope(text: string): Envelope {
  const raw: unknown = JSON.parse(text);
  if (typeof raw !== "object" || raw === null) {
    throw new Error("envelope is not an object");
  }
  const env = raw as Partial<Envelope>;
  if (typeof env.type !== "string" || typeof env.seq !== "number") {
    throw new Error("envelope missing type or seq");
  }
  return {
    type: env.type,
    seq: env.seq,
    payload: (env.payload ?? {}) as Record<string, unknown>,
  };
}
