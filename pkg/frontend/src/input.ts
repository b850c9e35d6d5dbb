// Keyboard and button mapping to protocol commands. Twists are body-frame
// [vx, vy, vz, wx, wy, wz] in the camera frame; magnitudes scale with the
// jog-rate slider. The documented map:
//
//   W / S        dolly along the optical axis (vz +/-)
//   A / D        lateral left / right (vx -/+)
//   R / F        vertical up / down (vy +/-)
//   ArrowUp/Down     pitch about camera x (wx -/+)
//   ArrowLeft/Right  yaw about camera y (wy -/+ )
//   Q / E        roll about the optical axis (wz +/-)

import type { UiSessionModel } from "./model.js";
import { controlsEnabled } from "./model.js";
import type { CommandType } from "./protocol.js";

export interface JogRates {
  linear: number; // m/s commanded while the key repeats
  angular: number; // rad/s
}

export const DEFAULT_JOG: JogRates = { linear: 0.02, angular: 0.3 };

export type UiAction =
  | { kind: "key"; key: string }
  | { kind: "start" }
  | { kind: "capture" }
  | { kind: "execute" }
  | { kind: "abort" }
  | { kind: "reset" };

export interface CommandIntent {
  type: CommandType;
  payload: Record<string, unknown>;
}

const KEY_TWISTS: Record<string, [number, number, number, number, number, number]> = {
  w: [0, 0, 1, 0, 0, 0],
  s: [0, 0, -1, 0, 0, 0],
  a: [-1, 0, 0, 0, 0, 0],
  d: [1, 0, 0, 0, 0, 0],
  r: [0, 1, 0, 0, 0, 0],
  f: [0, -1, 0, 0, 0, 0],
  arrowup: [0, 0, 0, -1, 0, 0],
  arrowdown: [0, 0, 0, 1, 0, 0],
  arrowleft: [0, 0, 0, 0, -1, 0],
  arrowright: [0, 0, 0, 0, 1, 0],
  q: [0, 0, 0, 0, 0, 1],
  e: [0, 0, 0, 0, 0, -1],
};

export function keyTwist(key: string, rates: JogRates = DEFAULT_JOG): number[] | null {
  const unit = KEY_TWISTS[key.toLowerCase()];
  if (!unit) {
    return null;
  }
  return unit.map((c, i) => c * (i < 3 ? rates.linear : rates.angular));
}

// Returns the command an action maps to, or null when the action is illegal
// in the mirrored state (matching what the buttons grey out).
export function dispatch(
  model: UiSessionModel,
  action: UiAction,
  rates: JogRates = DEFAULT_JOG,
): CommandIntent | null {
  const flags = controlsEnabled(model);
  switch (action.kind) {
    case "key": {
      const twist = keyTwist(action.key, rates);
      return twist && flags.jog ? { type: "jog", payload: { twist } } : null;
    }
    case "start":
      return flags.start ? { type: "start", payload: {} } : null;
    case "capture":
      return flags.capture ? { type: "capture", payload: {} } : null;
    case "execute":
      return flags.execute && model.selectedTarget !== null
        ? { type: "select_and_execute", payload: { target: model.selectedTarget } }
        : null;
    case "abort":
      return flags.abort ? { type: "abort", payload: {} } : null;
    case "reset":
      return flags.reset ? { type: "reset", payload: {} } : null;
  }
}
