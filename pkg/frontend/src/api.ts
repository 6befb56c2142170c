/** Client for the workbench HTTP API; one in-flight frame fetch per gesture. */

import type {
  ConfigDoc,
  FieldError,
  FramePayload,
  RolloutMeta,
  RolloutSummary,
} from "./types.js";

export class ApiClient {
  private frameGeneration = 0;

  constructor(private baseUrl: string = "") {}

  async listRollouts(): Promise<RolloutSummary[]> {
    return this.getJson("/api/rollouts");
  }

  async rolloutMeta(id: string): Promise<RolloutMeta> {
    return this.getJson(`/api/rollouts/${id}/meta`);
  }

  /**
   * Fetch one frame; resolves null when a newer fetch superseded this one,
   * so scrub gestures never apply stale responses.
   */
  async fetchFrame(id: string, index: number): Promise<FramePayload | null> {
    const generation = ++this.frameGeneration;
    const payload = await this.getJson<FramePayload>(
      `/api/rollouts/${id}/frames/${index}`,
    );
    return generation === this.frameGeneration ? payload : null;
  }

  async exportConfig(
    doc: ConfigDoc,
  ): Promise<{ ok: true; path: string } | { ok: false; errors: FieldError[] }> {
    const resp = await fetch(`${this.baseUrl}/api/configs`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(doc),
    });
    const body = await resp.json();
    if (resp.status === 201) {
      return { ok: true, path: body.path };
    }
    return { ok: false, errors: body.errors ?? [{ field: "", message: "export failed" }] };
  }

  private async getJson<T>(path: string): Promise<T> {
    const resp = await fetch(this.baseUrl + path);
    if (!resp.ok) {
      throw new Error(`${path}: HTTP ${resp.status}`);
    }
    return resp.json() as Promise<T>;
  }
}
