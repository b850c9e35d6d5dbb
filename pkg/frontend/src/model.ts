// UI session model and its reducers. The model is a mirror: every field that
// describes the robot, graph, or servo comes from a protocol message, and the
// event log keeps enough to rebuild the mirror by replay.

import type {
  CommandResponse,
  Envelope,
  GapPayload,
  GraphInfo,
  MetricsRecord,
  Observation,
  ServoInfo,
  SessionConfigInfo,
  SessionState,
  Snapshot,
  TelemetryPayload,
  VertexInfo,
} from "./protocol.js";

export type ConnectionStatus = "connecting" | "open" | "closed";

export interface TelemetryPoint {
  step: number;
  time_s: number;
  mpd_px: number | null;
  rcm_error_mm: number;
}

export type LogEntry =
  | { kind: "event"; envelope: Envelope }
  | { kind: "snapshot"; snapshot: Snapshot };

export interface UiSessionModel {
  connection: ConnectionStatus;
  state: SessionState;
  sessionError: string | null;
  config: SessionConfigInfo | null;
  observation: Observation | null;
  graph: GraphInfo | null;
  servo: ServoInfo | null;
  selectedTarget: number | null;
  telemetry: TelemetryPoint[];
  telemetryCap: number;
  lastRecord: MetricsRecord | null;
  lastGap: GapPayload | null;
  lastHeartbeat: number | null;
  toasts: string[];
  eventLog: LogEntry[];
  needsResync: boolean;
}

export const TELEMETRY_CAP = 600;

export function initialModel(telemetryCap: number = TELEMETRY_CAP): UiSessionModel {
  return {
    connection: "connecting",
    state: "Idle",
    sessionError: null,
    config: null,
    observation: null,
    graph: null,
    servo: null,
    selectedTarget: null,
    telemetry: [],
    telemetryCap,
    lastRecord: null,
    lastGap: null,
    lastHeartbeat: null,
    toasts: [],
    eventLog: [],
    needsResync: false,
  };
}

export function connectionChanged(model: UiSessionModel, status: ConnectionStatus): UiSessionModel {
  // a (re)opened socket may have missed events, so pull a fresh snapshot
  return { ...model, connection: status, needsResync: status === "open" ? true : model.needsResync };
}

export function selectTarget(model: UiSessionModel, id: number | null): UiSessionModel {
  if (id !== null && !(model.graph?.vertices ?? []).some((v) => v.id === id)) {
    return model;
  }
  return { ...model, selectedTarget: id };
}

function pushTelemetry(model: UiSessionModel, record: MetricsRecord): TelemetryPoint[] {
  const point: TelemetryPoint = {
    step: record.step,
    time_s: record.time_s,
    mpd_px: record.mpd_px,
    rcm_error_mm: record.rcm_error_mm,
  };
  const ring = [...model.telemetry, point];
  return ring.length > model.telemetryCap ? ring.slice(ring.length - model.telemetryCap) : ring;
}

function applyResponse(model: UiSessionModel, payload: CommandResponse): UiSessionModel {
  if (!payload.ok) {
    return {
      ...model,
      state: payload.state,
      toasts: [...model.toasts, payload.error ?? "command rejected"],
      needsResync: true,
    };
  }
  const next: UiSessionModel = { ...model, state: payload.state };
  if (payload.state !== "Idle" && next.graph === null) {
    // a running session always has a graph; before the first capture it is empty
    next.graph = { current: null, vertices: [], edges: [] };
  }
  const result = payload.result ?? {};
  if (result["observation"] !== undefined) {
    next.observation = result["observation"] as Observation;
  }
  if (result["vertex"] !== undefined) {
    // mirror the captured vertex immediately; the follow-up snapshot adds edges
    const vertex = result["vertex"] as VertexInfo;
    const vertices = [...(next.graph?.vertices ?? []), vertex];
    next.graph = { current: vertex.id, vertices, edges: next.graph?.edges ?? [] };
    next.needsResync = true;
  }
  if (result["path"] !== undefined && result["target"] !== undefined) {
    next.servo = {
      target: result["target"] as number,
      path: result["path"] as number[],
      leg_target: (result["path"] as number[])[0] ?? (result["target"] as number),
    };
  }
  if (payload.state !== "Servoing") {
    next.servo = null;
  }
  if (payload.state === "Idle") {
    // reset clears everything the server no longer has
    next.graph = null;
    next.observation = null;
    next.selectedTarget = null;
    next.telemetry = [];
    next.lastRecord = null;
    next.sessionError = null;
  }
  return next;
}

export function applyServerEvent(model: UiSessionModel, envelope: Envelope): UiSessionModel {
  let next = { ...model, eventLog: [...model.eventLog, { kind: "event", envelope } as LogEntry] };
  switch (envelope.type) {
    case "response":
      next = applyResponse(next, envelope.payload as unknown as CommandResponse);
      break;
    case "state": {
      const to = envelope.payload["to"] as SessionState;
      next.state = to;
      if (to !== "Servoing") {
        next.servo = null;
      }
      break;
    }
    case "telemetry": {
      const t = envelope.payload as unknown as TelemetryPayload;
      next.telemetry = pushTelemetry(next, t.record);
      next.lastRecord = t.record;
      next.observation = t.observation;
      next.servo = { ...t.servo, step: t.record.step, mpd_px: t.record.mpd_px };
      next.state = "Servoing";
      break;
    }
    case "heartbeat":
      next.lastHeartbeat = Date.now();
      next.state = (envelope.payload["state"] as SessionState) ?? next.state;
      break;
    case "gap":
      next.lastGap = envelope.payload as unknown as GapPayload;
      next.needsResync = true;
      break;
    case "servo_done": {
      const converged = envelope.payload["converged"] === true;
      const error = envelope.payload["error"];
      next.servo = null;
      next.needsResync = true;
      next.toasts = [
        ...next.toasts,
        converged
          ? `servo converged in ${envelope.payload["steps"]} steps`
          : `servo stopped: ${error ?? "did not converge"}`,
      ];
      break;
    }
    default:
      break;
  }
  return next;
}

export function applySnapshot(model: UiSessionModel, snapshot: Snapshot): UiSessionModel {
  const selected =
    model.selectedTarget !== null &&
    (snapshot.graph?.vertices ?? []).some((v) => v.id === model.selectedTarget)
      ? model.selectedTarget
      : null;
  return {
    ...model,
    state: snapshot.state,
    sessionError: snapshot.error,
    config: snapshot.config,
    observation: snapshot.observation,
    graph: snapshot.graph,
    servo: snapshot.servo,
    selectedTarget: selected,
    needsResync: false,
    eventLog: [...model.eventLog, { kind: "snapshot", snapshot }],
  };
}

export function dismissToast(model: UiSessionModel): UiSessionModel {
  return { ...model, toasts: model.toasts.slice(1) };
}

// ---- derived views -------------------------------------------------------

export interface GalleryTile {
  id: number;
  isCurrent: boolean;
  isTarget: boolean;
  isSelected: boolean;
  nFeatures: number;
  pixels: [number, number][];
}

export function galleryTiles(model: UiSessionModel): GalleryTile[] {
  const graph = model.graph;
  if (!graph) {
    return [];
  }
  const target = model.servo ? model.servo.target : model.selectedTarget;
  return graph.vertices.map((v) => ({
    id: v.id,
    isCurrent: v.id === graph.current,
    isTarget: v.id === target,
    isSelected: v.id === model.selectedTarget,
    nFeatures: v.n_features,
    pixels: v.pixels,
  }));
}

export interface ControlFlags {
  start: boolean;
  jog: boolean;
  capture: boolean;
  execute: boolean;
  abort: boolean;
  reset: boolean;
}

export function controlsEnabled(model: UiSessionModel): ControlFlags {
  const open = model.connection === "open";
  const manual = model.state === "ManualControl";
  return {
    start: open && model.state === "Idle",
    jog: open && manual,
    capture: open && manual,
    execute:
      open &&
      (manual || model.state === "GraphReady") &&
      model.selectedTarget !== null &&
      (model.graph?.vertices.length ?? 0) > 0,
    abort: open && model.state === "Servoing",
    reset: open && model.state !== "Idle",
  };
}

export interface PlotSeries {
  steps: number[];
  mpd: (number | null)[];
  rcm: number[];
}

export function plotSeries(model: UiSessionModel): PlotSeries {
  return {
    steps: model.telemetry.map((p) => p.step),
    mpd: model.telemetry.map((p) => p.mpd_px),
    rcm: model.telemetry.map((p) => p.rcm_error_mm),
  };
}

// Rebuild the mirror from the log alone; used to verify that everything the
// UI shows is traceable to received messages.
export function replayLog(log: LogEntry[], telemetryCap: number = TELEMETRY_CAP): UiSessionModel {
  let model = initialModel(telemetryCap);
  model = { ...model, connection: "open" };
  for (const entry of log) {
    model = entry.kind === "event" ? applyServerEvent(model, entry.envelope) : applySnapshot(model, entry.snapshot);
  }
  return model;
}

export function mirroredFields(model: UiSessionModel): Record<string, unknown> {
  return {
    state: model.state,
    observation: model.observation,
    graph: model.graph,
    servo: model.servo,
    telemetry: model.telemetry,
    lastRecord: model.lastRecord,
  };
}
