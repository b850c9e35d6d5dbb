// Glue between the bridge client and the pure model. All server envelopes
// funnel through handleEnvelope; all operator gestures funnel through act().
// The controller owns the resync policy: whenever the mirrored model marks
// itself stale (rejection, gap, reconnect, capture) it pulls one fresh
// snapshot, keeping at most one get_state in flight.

import type { JogRates, UiAction } from "./input.js";
import { DEFAULT_JOG, dispatch } from "./input.js";
import type { UiSessionModel } from "./model.js";
import {
  applyServerEvent,
  applySnapshot,
  connectionChanged,
  dismissToast,
  initialModel,
  selectTarget,
} from "./model.js";
import type { BridgeClient } from "./net.js";
import type { Envelope, Snapshot } from "./protocol.js";

export class UiController {
  model: UiSessionModel;
  jogRates: JogRates;

  private readonly client: BridgeClient;
  private readonly onRender: (model: UiSessionModel) => void;
  // seqs of get_state commands this controller sent; their responses carry
  // full snapshots and must not be folded in as ordinary command responses
  private readonly pendingStateSeqs = new Set<number>();
  private stateInFlight = false;

  constructor(client: BridgeClient, onRender: (model: UiSessionModel) => void) {
    this.client = client;
    this.onRender = onRender;
    this.model = initialModel();
    this.jogRates = { ...DEFAULT_JOG };
    client.onEvent = (envelope) => this.handleEnvelope(envelope);
    client.onConnection = (status) => this.update(connectionChanged(this.model, status));
  }

  act(action: UiAction): void {
    const intent = dispatch(this.model, action, this.jogRates);
    if (intent === null || !this.client.connected) {
      return;
    }
    this.client.command(intent.type, intent.payload).catch((err: unknown) => {
      this.update({
        ...this.model,
        toasts: [...this.model.toasts, `${intent.type}: ${err instanceof Error ? err.message : err}`],
        needsResync: true,
      });
    });
  }

  selectVertex(id: number | null): void {
    this.update(selectTarget(this.model, id));
  }

  dismissToast(): void {
    this.update(dismissToast(this.model));
  }

  setJogRates(rates: JogRates): void {
    this.jogRates = rates;
  }

  handleEnvelope(envelope: Envelope): void {
    if (envelope.type === "response") {
      const replyTo = envelope.payload["in_reply_to"];
      if (typeof replyTo === "number" && this.pendingStateSeqs.delete(replyTo)) {
        this.stateInFlight = false;
        const result = envelope.payload["result"];
        if (envelope.payload["ok"] === true && result) {
          this.update(applySnapshot(this.model, result as unknown as Snapshot));
        } else {
          this.update(applyServerEvent(this.model, envelope));
        }
        return;
      }
    }
    this.update(applyServerEvent(this.model, envelope));
  }

  private update(next: UiSessionModel): void {
    this.model = next;
    this.onRender(this.model);
    this.maybeResync();
  }

  private maybeResync(): void {
    if (!this.model.needsResync || this.stateInFlight || this.model.connection !== "open") {
      return;
    }
    const seq = this.client.peekNextSeq();
    this.pendingStateSeqs.add(seq);
    this.stateInFlight = true;
    const settle = () => {
      // handleEnvelope normally consumes the seq; this covers timeouts and
      // drops, where no response envelope ever reaches us
      if (this.pendingStateSeqs.delete(seq)) {
        this.stateInFlight = false;
      }
    };
    this.client.command("get_state").then(settle, settle);
  }
}
