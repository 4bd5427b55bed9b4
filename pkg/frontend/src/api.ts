/** Typed client for the inference service; the studio never computes model math. */

export interface HealthResponse {
  status: "ok" | "no_checkpoint";
  checkpoint_id: string | null;
  resolution: number | null;
}

export interface ExtractResponse {
  attributes: number[];
  names: string[];
}

export interface SweepRequest {
  index: number;
  from: number;
  to: number;
  steps: number;
}

export interface CompletionRequest {
  image: string;
  mask: string;
  mode: "reference" | "explicit" | "random";
  reference_image?: string;
  attributes?: number[];
  k?: number;
  seed?: number;
  sweep?: SweepRequest;
}

export interface CompletionResponse {
  images: string[];
  attributes_used: number[][];
  seed: number;
  mode: string;
}

export class ServiceError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`service returned ${status}: ${detail}`);
  }
}

type FetchLike = typeof fetch;

export class ServiceClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  private async post<T>(path: string, body: unknown): Promise<T> {
    const res = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const parsed = (await res.json()) as { detail?: unknown };
        if (parsed.detail !== undefined) detail = JSON.stringify(parsed.detail);
      } catch {
        // body was not JSON; keep the status text
      }
      throw new ServiceError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  async health(): Promise<HealthResponse> {
    const res = await this.fetchImpl(`${this.baseUrl}/v1/health`);
    if (!res.ok) throw new ServiceError(res.status, res.statusText);
    return (await res.json()) as HealthResponse;
  }

  extract(imageB64: string): Promise<ExtractResponse> {
    return this.post("/v1/extract", { image: imageB64 });
  }

  complete(req: CompletionRequest): Promise<CompletionResponse> {
    return this.post("/v1/complete", req);
  }
}
