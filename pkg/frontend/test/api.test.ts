import { describe, expect, it } from "vitest";

import { ServiceClient, ServiceError } from "../src/api.js";

describe("ServiceClient", () => {
  it("hits the documented endpoints with JSON bodies", async () => {
    const calls: Array<{ url: string; body?: unknown }> = [];
    const client = new ServiceClient("http://svc", async (url, init) => {
      calls.push({ url: String(url), body: init?.body ? JSON.parse(String(init.body)) : undefined });
      return {
        ok: true,
        status: 200,
        json: async () => ({ status: "ok", checkpoint_id: "abc", resolution: 64 }),
      } as Response;
    });
    await client.health();
    await client.extract("aW1n");
    await client.complete({ image: "aW1n", mask: "bWFzaw==", mode: "random", k: 2 });
    expect(calls.map((c) => c.url)).toEqual([
      "http://svc/v1/health",
      "http://svc/v1/extract",
      "http://svc/v1/complete",
    ]);
    expect(calls[2].body).toMatchObject({ mode: "random", k: 2 });
  });

  it("surfaces the service's error detail", async () => {
    const client = new ServiceClient("http://svc", async () => ({
      ok: false,
      status: 422,
      statusText: "Unprocessable",
      json: async () => ({ detail: "mode=reference requires 'reference_image'" }),
    }) as Response);
    await expect(client.complete({ image: "aQ==", mask: "bQ==", mode: "reference" }))
      .rejects.toThrowError(ServiceError);
    try {
      await client.complete({ image: "aQ==", mask: "bQ==", mode: "reference" });
    } catch (err) {
      expect((err as ServiceError).status).toBe(422);
      expect((err as ServiceError).detail).toMatch(/reference_image/);
    }
  });

  it("falls back to status text when the body is not JSON", async () => {
    const client = new ServiceClient("http://svc", async () => ({
      ok: false,
      status: 500,
      statusText: "Internal Server Error",
      json: async () => {
        throw new Error("no body");
      },
    }) as Response);
    await expect(client.health()).rejects.toThrow(/500/);
  });
});
