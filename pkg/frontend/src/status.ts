// Status panel polling: refresh every two seconds, mark the data stale when
// the service has not answered for ten.

import { ApiClient } from "./api.js";
import type { StatusPayload } from "./types.js";

export const POLL_INTERVAL_MS = 2000;
export const STALE_AFTER_MS = 10_000;

export interface StatusView {
  payload: StatusPayload | null;
  stale: boolean;
}

export class StatusPoller {
  private lastSuccess = 0;
  private payload: StatusPayload | null = null;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(private api: ApiClient,
              private onUpdate: (view: StatusView) => void,
              private now: () => number = () => Date.now()) {}

  async tick(): Promise<void> {
    try {
      this.payload = await this.api.getStatus();
      this.lastSuccess = this.now();
    } catch {
      // keep the last payload; staleness is judged by time since success
    }
    this.onUpdate(this.view());
  }

  view(): StatusView {
    const stale = this.payload === null ||
      this.now() - this.lastSuccess > STALE_AFTER_MS;
    return { payload: this.payload, stale };
  }

  start(): void {
    void this.tick();
    this.timer = setInterval(() => void this.tick(), POLL_INTERVAL_MS);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }
}
