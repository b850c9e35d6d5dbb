// Browser entry point. Connects to the session bridge over WebSocket and
// wires keyboard/buttons through the controller. The bridge URL defaults to
// same-origin /ws and can be overridden with ?server=ws://host:port/ws.

import { UiController } from "./controller.js";
import { bindUi } from "./render.js";
import { BridgeClient } from "./net.js";

function bridgeUrl(): string {
  const override = new URLSearchParams(window.location.search).get("server");
  if (override) {
    return override;
  }
  const scheme = window.location.protocol === "https:" ? "wss" : "ws";
  return `${scheme}://${window.location.host}/ws`;
}

const client = new BridgeClient(bridgeUrl());

// two-phase init: the controller needs a render sink, the render layer needs
// the controller's callbacks
let paint: ((model: import("./model.js").UiSessionModel) => void) | null = null;
const controller = new UiController(client, (model) => paint?.(model));
paint = bindUi(document, {
  onAction: (action) => controller.act(action),
  onSelect: (id) => controller.selectVertex(id),
  onJogRates: (rates) => controller.setJogRates(rates),
  onDismissToast: () => controller.dismissToast(),
});
paint(controller.model);

window.addEventListener("keydown", (ev) => {
  const target = ev.target as HTMLElement | null;
  if (target && (target.tagName === "INPUT" || target.tagName === "TEXTAREA")) {
    return;
  }
  if (ev.key.startsWith("Arrow")) {
    ev.preventDefault();
  }
  controller.act({ kind: "key", key: ev.key });
});

client.connect();
