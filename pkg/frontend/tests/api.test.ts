import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

function fakeFetch(handler: (url: string, init?: RequestInit) => Response): typeof fetch {
  return (async (input: RequestInfo | URL, init?: RequestInit) =>
    handler(String(input), init)) as typeof fetch;
}

describe("api client", () => {
  it("fetches schema and pending images", async () => {
    const api = new ApiClient(
      "",
      fakeFetch((url) => {
        if (url === "/api/schema")
          return Response.json({ class_name: "head8", relation_tier: "FULL", slots: [] });
        if (url === "/api/images") return Response.json({ pending: ["a", "b"] });
        return new Response("nope", { status: 404 });
      }),
    );
    expect((await api.schema()).class_name).toBe("head8");
    expect(await api.pendingImages()).toEqual(["a", "b"]);
  });

  it("posts refine requests with normalized polylines", async () => {
    let captured: unknown = null;
    const api = new ApiClient(
      "",
      fakeFetch((url, init) => {
        expect(url).toBe("/api/refine");
        captured = JSON.parse(String(init?.body));
        return Response.json({ polyline: [[0.5, 0.5]], snapped: true });
      }),
    );
    const resp = await api.refine("img_1", [
      [0.1, 0.2],
      [0.3, 0.4],
    ]);
    expect(resp.snapped).toBe(true);
    expect(captured).toEqual({
      image_id: "img_1",
      polyline: [
        [0.1, 0.2],
        [0.3, 0.4],
      ],
    });
  });

  it("surfaces server error JSON as ApiError", async () => {
    const api = new ApiClient(
      "",
      fakeFetch(
        () =>
          new Response(JSON.stringify({ error: "schema-mismatch", detail: "wrong schema" }), {
            status: 400,
          }),
      ),
    );
    await expect(api.saveAnnotation({} as never)).rejects.toMatchObject({
      status: 400,
      kind: "schema-mismatch",
      message: "wrong schema",
    });
    await expect(api.saveAnnotation({} as never)).rejects.toBeInstanceOf(ApiError);
  });

  it("escapes image ids in URLs", () => {
    const api = new ApiClient("");
    expect(api.imageUrl("a/b")).toBe("/api/image/a%2Fb");
  });
});
