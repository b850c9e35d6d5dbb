// DOM rendering. bindUi() grabs the static elements once, wires listeners,
// and returns a render(model) closure that repaints everything from scratch.
// All drawing is derived from the model; no UI state lives here except the
// element handles themselves.

import type { JogRates, UiAction } from "./input.js";
import type { GalleryTile, UiSessionModel } from "./model.js";
import { controlsEnabled, galleryTiles, plotSeries } from "./model.js";

export interface RenderCallbacks {
  onAction(action: UiAction): void;
  onSelect(id: number): void;
  onJogRates(rates: JogRates): void;
  onDismissToast(): void;
}

const ANGULAR_PER_LINEAR = 15; // one slider scales both jog rates

function el<T extends HTMLElement>(root: Document, id: string): T {
  const node = root.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

export function bindUi(root: Document, cb: RenderCallbacks): (model: UiSessionModel) => void {
  const connBadge = el<HTMLSpanElement>(root, "conn-badge");
  const stateBadge = el<HTMLSpanElement>(root, "state-badge");
  const sessionError = el<HTMLSpanElement>(root, "session-error");
  const liveView = el<HTMLCanvasElement>(root, "live-view");
  const hud = el<HTMLDivElement>(root, "hud");
  const gallery = el<HTMLDivElement>(root, "gallery");
  const plotMpd = el<HTMLCanvasElement>(root, "plot-mpd");
  const plotRcm = el<HTMLCanvasElement>(root, "plot-rcm");
  const toasts = el<HTMLDivElement>(root, "toasts");
  const eventLog = el<HTMLPreElement>(root, "event-log");
  const jogRate = el<HTMLInputElement>(root, "jog-rate");
  const jogRateLabel = el<HTMLSpanElement>(root, "jog-rate-label");
  const banner = el<HTMLDivElement>(root, "banner");

  const buttons: Record<string, HTMLButtonElement> = {
    start: el(root, "btn-start"),
    capture: el(root, "btn-capture"),
    execute: el(root, "btn-execute"),
    abort: el(root, "btn-abort"),
    reset: el(root, "btn-reset"),
  };
  buttons["start"]!.addEventListener("click", () => cb.onAction({ kind: "start" }));
  buttons["capture"]!.addEventListener("click", () => cb.onAction({ kind: "capture" }));
  buttons["execute"]!.addEventListener("click", () => cb.onAction({ kind: "execute" }));
  buttons["abort"]!.addEventListener("click", () => cb.onAction({ kind: "abort" }));
  buttons["reset"]!.addEventListener("click", () => cb.onAction({ kind: "reset" }));

  gallery.addEventListener("click", (ev) => {
    const tile = (ev.target as HTMLElement).closest("[data-vertex]");
    if (tile) {
      cb.onSelect(Number(tile.getAttribute("data-vertex")));
    }
  });
  toasts.addEventListener("click", () => cb.onDismissToast());
  jogRate.addEventListener("input", () => {
    const linear = Number(jogRate.value);
    cb.onJogRates({ linear, angular: linear * ANGULAR_PER_LINEAR });
  });

  return (model: UiSessionModel) => {
    const open = model.connection === "open";
    connBadge.textContent = model.connection;
    connBadge.className = `badge conn-${model.connection}`;
    stateBadge.textContent = model.state;
    stateBadge.className = `badge state-${model.state.toLowerCase()}`;
    sessionError.textContent = model.sessionError ?? "";
    banner.hidden = open;

    const flags = controlsEnabled(model);
    buttons["start"]!.disabled = !flags.start;
    buttons["capture"]!.disabled = !flags.capture;
    buttons["execute"]!.disabled = !flags.execute;
    buttons["abort"]!.disabled = !flags.abort;
    buttons["reset"]!.disabled = !flags.reset;

    const linear = Number(jogRate.value);
    jogRateLabel.textContent = `${linear.toFixed(3)} m/s · ${(linear * ANGULAR_PER_LINEAR).toFixed(2)} rad/s`;

    drawLiveView(liveView, model);
    renderHud(hud, model);
    renderGallery(gallery, root, model);
    const series = plotSeries(model);
    drawPlot(plotMpd, series.steps, series.mpd, {
      label: "mean pixel distance [px]",
      color: "#60a5fa",
      logScale: true,
      threshold: model.config?.final_mpd_px ?? null,
    });
    drawPlot(plotRcm, series.steps, series.rcm, {
      label: "pivot error [mm]",
      color: "#f59e0b",
      logScale: false,
      threshold: null,
    });
    renderToasts(toasts, root, model);
    renderEventLog(eventLog, model);
  };
}

function drawLiveView(canvas: HTMLCanvasElement, model: UiSessionModel): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) {
    return;
  }
  const [imgW, imgH] = model.config?.image_size ?? [640, 480];
  const scale = canvas.width / imgW;
  ctx.fillStyle = "#0b0e14";
  ctx.fillRect(0, 0, canvas.width, canvas.height);

  const cx = (imgW / 2) * scale;
  const cy = (imgH / 2) * scale;
  const fovR = (model.config?.fov_radius_px ?? Math.hypot(imgW, imgH) / 2) * scale;

  // endoscope image circle
  ctx.save();
  ctx.beginPath();
  ctx.arc(cx, cy, fovR, 0, 2 * Math.PI);
  ctx.clip();
  ctx.fillStyle = "#111827";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  ctx.restore();
  ctx.strokeStyle = "#374151";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.arc(cx, cy, Math.min(fovR, Math.hypot(canvas.width, canvas.height)), 0, 2 * Math.PI);
  ctx.stroke();

  // crosshair at the principal point
  ctx.strokeStyle = "#4b5563";
  ctx.lineWidth = 1;
  ctx.beginPath();
  ctx.moveTo(cx - 12, cy);
  ctx.lineTo(cx + 12, cy);
  ctx.moveTo(cx, cy - 12);
  ctx.lineTo(cx, cy + 12);
  ctx.stroke();

  for (const [i, id] of (model.observation?.ids ?? []).entries()) {
    const px = model.observation?.pixels[i];
    if (!px) {
      continue;
    }
    const [u, v] = px;
    ctx.fillStyle = "#4ade80";
    ctx.beginPath();
    ctx.arc(u * scale, v * scale, 5, 0, 2 * Math.PI);
    ctx.fill();
    ctx.fillStyle = "#d1d5db";
    ctx.font = "11px monospace";
    ctx.fillText(String(id), u * scale + 7, v * scale - 7);
  }
}

function renderHud(hud: HTMLDivElement, model: UiSessionModel): void {
  const rec = model.lastRecord;
  const parts: string[] = [];
  if (model.servo) {
    parts.push(`servo → v${model.servo.target} (leg target v${model.servo.leg_target})`);
  }
  if (rec) {
    const mpd = rec.mpd_px === null ? "–" : rec.mpd_px.toFixed(2);
    parts.push(`step ${rec.step}`, `mpd ${mpd} px`, `pivot ${rec.rcm_error_mm.toFixed(4)} mm`, `inliers ${rec.inlier_count}`);
  }
  if (model.lastGap) {
    parts.push(`(dropped ${model.lastGap.dropped ?? "?"} frames)`);
  }
  hud.textContent = parts.join("  ·  ");
}

function renderGallery(gallery: HTMLDivElement, root: Document, model: UiSessionModel): void {
  const tiles = galleryTiles(model);
  gallery.replaceChildren();
  if (tiles.length === 0) {
    const empty = root.createElement("div");
    empty.className = "gallery-empty";
    empty.textContent = "no captured views yet";
    gallery.appendChild(empty);
    return;
  }
  for (const tile of tiles) {
    gallery.appendChild(buildTile(root, tile, model));
  }
}

function buildTile(root: Document, tile: GalleryTile, model: UiSessionModel): HTMLElement {
  const wrap = root.createElement("div");
  wrap.className = "tile";
  if (tile.isCurrent) {
    wrap.classList.add("current");
  }
  if (tile.isTarget) {
    wrap.classList.add("target");
  }
  if (tile.isSelected) {
    wrap.classList.add("selected");
  }
  wrap.setAttribute("data-vertex", String(tile.id));

  const canvas = root.createElement("canvas");
  canvas.width = 160;
  canvas.height = 120;
  drawTile(canvas, tile, model);
  wrap.appendChild(canvas);

  const label = root.createElement("div");
  label.className = "tile-label";
  const marks = [tile.isCurrent ? "here" : "", tile.isTarget ? "goal" : ""].filter(Boolean).join(" ");
  label.textContent = `v${tile.id} · ${tile.nFeatures} pts${marks ? " · " + marks : ""}`;
  wrap.appendChild(label);
  return wrap;
}

function drawTile(canvas: HTMLCanvasElement, tile: GalleryTile, model: UiSessionModel): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) {
    return;
  }
  const [imgW, imgH] = model.config?.image_size ?? [640, 480];
  const scale = canvas.width / imgW;
  ctx.fillStyle = "#111827";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  const fovR = (model.config?.fov_radius_px ?? Math.hypot(imgW, imgH) / 2) * scale;
  ctx.strokeStyle = "#374151";
  ctx.beginPath();
  ctx.arc((imgW / 2) * scale, (imgH / 2) * scale, fovR, 0, 2 * Math.PI);
  ctx.stroke();
  ctx.fillStyle = "#93c5fd";
  for (const [u, v] of tile.pixels) {
    ctx.beginPath();
    ctx.arc(u * scale, v * scale, 2.5, 0, 2 * Math.PI);
    ctx.fill();
  }
}

interface PlotStyle {
  label: string;
  color: string;
  logScale: boolean;
  threshold: number | null;
}

function drawPlot(canvas: HTMLCanvasElement, xs: number[], ys: (number | null)[], style: PlotStyle): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) {
    return;
  }
  const w = canvas.width;
  const h = canvas.height;
  ctx.fillStyle = "#0b0e14";
  ctx.fillRect(0, 0, w, h);
  ctx.fillStyle = "#9ca3af";
  ctx.font = "11px monospace";
  ctx.fillText(style.label, 8, 14);

  const pts: { x: number; y: number }[] = [];
  for (const [i, y] of ys.entries()) {
    const x = xs[i];
    if (y === null || x === undefined || !Number.isFinite(y)) {
      continue;
    }
    pts.push({ x, y });
  }
  if (pts.length === 0) {
    return;
  }

  const floor = 1e-3; // log plots clamp zeros to a displayable floor
  const ty = (y: number) => (style.logScale ? Math.log10(Math.max(y, floor)) : y);
  const yVals = pts.map((p) => ty(p.y));
  if (style.threshold !== null) {
    yVals.push(ty(style.threshold));
  }
  let yMin = Math.min(...yVals);
  let yMax = Math.max(...yVals);
  if (yMax - yMin < 1e-9) {
    yMax = yMin + 1;
  }
  const xMin = pts[0]!.x;
  const xMax = Math.max(pts[pts.length - 1]!.x, xMin + 1);
  const pad = 18;
  const sx = (x: number) => pad + ((x - xMin) / (xMax - xMin)) * (w - 2 * pad);
  const sy = (y: number) => h - pad - ((ty(y) - yMin) / (yMax - yMin)) * (h - 2 * pad - 10);

  if (style.threshold !== null) {
    ctx.strokeStyle = "#334155";
    ctx.setLineDash([4, 4]);
    ctx.beginPath();
    ctx.moveTo(pad, sy(style.threshold));
    ctx.lineTo(w - pad, sy(style.threshold));
    ctx.stroke();
    ctx.setLineDash([]);
  }

  ctx.strokeStyle = style.color;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  for (const [i, p] of pts.entries()) {
    if (i === 0) {
      ctx.moveTo(sx(p.x), sy(p.y));
    } else {
      ctx.lineTo(sx(p.x), sy(p.y));
    }
  }
  ctx.stroke();

  const last = pts[pts.length - 1]!;
  ctx.fillStyle = style.color;
  ctx.fillText(last.y >= 100 ? last.y.toFixed(0) : last.y.toFixed(3), w - 64, 14);
}

function renderToasts(container: HTMLDivElement, root: Document, model: UiSessionModel): void {
  container.replaceChildren();
  for (const text of model.toasts.slice(0, 3)) {
    const div = root.createElement("div");
    div.className = "toast";
    div.textContent = text;
    container.appendChild(div);
  }
}

function renderEventLog(pre: HTMLPreElement, model: UiSessionModel): void {
  const lines: string[] = [];
  for (const entry of model.eventLog.slice(-14)) {
    if (entry.kind === "snapshot") {
      lines.push(`snapshot  state=${entry.snapshot.state}`);
    } else {
      const env = entry.envelope;
      let detail = "";
      if (env.type === "telemetry") {
        const rec = env.payload["record"] as { step?: number } | undefined;
        detail = `step=${rec?.step ?? "?"}`;
      } else if (env.type === "response") {
        detail = env.payload["ok"] === true ? "ok" : `rejected: ${env.payload["error"]}`;
      } else if (env.type === "state") {
        detail = `${env.payload["from"]} → ${env.payload["to"]}`;
      } else if (env.type === "servo_done") {
        detail = env.payload["converged"] === true ? "converged" : "not converged";
      } else if (env.type === "heartbeat") {
        detail = `state=${env.payload["state"]}`;
      }
      lines.push(`#${env.seq}  ${env.type.padEnd(10)} ${detail}`);
    }
  }
  pre.textContent = lines.join("\n");
}
