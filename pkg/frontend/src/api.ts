// Thin client over the annotation endpoints. Network failures surface as
// ApiNetworkError so the flow can retry without ever dropping a label;
// application errors carry the server's error code.

import { validatePair, validateStatus } from "./types.js";
import type { LabelChoice, PairPayload, StatusPayload } from "./types.js";

export class ApiNetworkError extends Error {}

export class ApiRejection extends Error {
  constructor(public status: number, public code: string) {
    super(`${status}: ${code}`);
  }
}

export interface LabelAck {
  ok: boolean;
  labels_collected: number;
  reward_model_version: number;
}

export class ApiClient {
  constructor(private baseUrl: string = "",
              private fetchFn: typeof fetch = fetch.bind(globalThis)) {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    let resp: Response;
    try {
      resp = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiNetworkError(String(err));
    }
    let body: unknown = null;
    try {
      body = await resp.json();
    } catch {
      throw new ApiNetworkError(`non-JSON response from ${path}`);
    }
    if (!resp.ok) {
      const code = (body as { error?: string })?.error ?? `http-${resp.status}`;
      throw new ApiRejection(resp.status, code);
    }
    return body;
  }

  async getPair(): Promise<PairPayload> {
    return validatePair(await this.request("/pair"));
  }

  async submitLabel(pairId: string, choice: LabelChoice): Promise<LabelAck> {
    const body = await this.request("/label", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ pair_id: pairId, label: choice }),
    });
    return body as LabelAck;
  }

  async getStatus(): Promise<StatusPayload> {
    return validateStatus(await this.request("/status"));
  }
}
