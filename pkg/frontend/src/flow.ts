// Annotation flow: fetch a pair, accept exactly one label submission at a
// time, advance on success, skip forward when the server reports the pair
// already labeled, and hold a failed submission for retry so no acknowledged
// choice is ever lost.

import { ApiClient, ApiNetworkError, ApiRejection } from "./api.js";
import { ValidationError } from "./types.js";
import type { LabelChoice, PairPayload } from "./types.js";

export type FlowState = "loading" | "ready" | "submitting" | "retry" | "error";

export interface FlowEvents {
  onPair?: (pair: PairPayload) => void;
  onState?: (state: FlowState, message?: string) => void;
  onAck?: (labelsCollected: number, rewardVersion: number) => void;
}

export class AnnotationFlow {
  state: FlowState = "loading";
  pair: PairPayload | null = null;
  private pendingChoice: LabelChoice | null = null;

  constructor(private api: ApiClient, private events: FlowEvents = {}) {}

  private setState(state: FlowState, message?: string): void {
    this.state = state;
    this.events.onState?.(state, message);
  }

  async loadNext(): Promise<void> {
    this.setState("loading");
    this.pair = null;
    try {
      const pair = await this.api.getPair();
      this.pair = pair;
      this.setState("ready");
      this.events.onPair?.(pair);
    } catch (err) {
      if (err instanceof ApiRejection) {
        this.setState("error", err.code);
      } else if (err instanceof ValidationError) {
        this.setState("error", err.message);
      } else {
        this.setState("error", "service unreachable");
      }
    }
  }

  /** Returns false when the submission was ignored (nothing ready, or one
   * already in flight — this is what makes a double click submit once). */
  async submit(choice: LabelChoice): Promise<boolean> {
    if (this.state !== "ready" || this.pair === null) {
      return false;
    }
    this.pendingChoice = choice;
    this.setState("submitting");
    return this.flush();
  }

  /** Re-send the held submission after a network failure. */
  async retry(): Promise<boolean> {
    if (this.state !== "retry" || this.pair === null || this.pendingChoice === null) {
      return false;
    }
    this.setState("submitting");
    return this.flush();
  }

  private async flush(): Promise<boolean> {
    const pair = this.pair!;
    const choice = this.pendingChoice!;
    try {
      const ack = await this.api.submitLabel(pair.pair_id, choice);
      this.pendingChoice = null;
      this.events.onAck?.(ack.labels_collected, ack.reward_model_version);
      await this.loadNext();
      return true;
    } catch (err) {
      if (err instanceof ApiRejection && err.code === "already-labeled") {
        // someone already labeled it: skip forward, nothing to preserve
        this.pendingChoice = null;
        await this.loadNext();
        return false;
      }
      if (err instanceof ApiNetworkError) {
        this.setState("retry", "network failure: label held for retry");
        return false;
      }
      this.pendingChoice = null;
      this.setState("error", err instanceof ApiRejection ? err.code : String(err));
      return false;
    }
  }
}
