/** Thin client over the annotation HTTP API. */

import { AnnotationDict, Pt, RefineResponse, SchemaInfo } from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly kind: string,
    detail: string,
  ) {
    super(detail);
  }
}

async function parseError(resp: Response): Promise<ApiError> {
  let kind = "http-error";
  let detail = resp.statusText;
  try {
    const body = await resp.json();
    if (body.error) kind = body.error;
    if (body.detail) detail = body.detail;
  } catch {
    /* non-JSON error body */
  }
  return new ApiError(resp.status, kind, detail);
}

export class ApiClient {
  constructor(
    readonly base = "",
    readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await this.fetchImpl(this.base + path);
    if (!resp.ok) throw await parseError(resp);
    return resp.json();
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const resp = await this.fetchImpl(this.base + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) throw await parseError(resp);
    return resp.json();
  }

  schema(): Promise<SchemaInfo> {
    return this.getJson("/api/schema");
  }

  pendingImages(): Promise<string[]> {
    return this.getJson<{ pending: string[] }>("/api/images").then((d) => d.pending);
  }

  imageUrl(imageId: string): string {
    return `${this.base}/api/image/${encodeURIComponent(imageId)}`;
  }

  refine(imageId: string, polyline: Pt[]): Promise<RefineResponse> {
    return this.postJson("/api/refine", { image_id: imageId, polyline });
  }

  saveAnnotation(record: AnnotationDict): Promise<{ ok: boolean; version: number }> {
    return this.postJson("/api/annotation", record);
  }
}
