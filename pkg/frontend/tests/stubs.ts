/** Minimal fake of the server for unit tests: routes requests to handlers. */

export type Handler = (init?: RequestInit) => Response | Promise<Response>;

export function jsonResponse(
  body: unknown,
  status = 200,
  headers: Record<string, string> = {},
): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json", ...headers },
  });
}

export function pngResponse(
  bytes: Uint8Array,
  vector: readonly number[],
): Response {
  return new Response(bytes.slice().buffer as ArrayBuffer, {
    status: 200,
    headers: {
      "Content-Type": "image/png",
      "X-Style-Vector": vector.map((x) => x.toFixed(6)).join(","),
    },
  });
}

export interface StubServer {
  fetch: typeof fetch;
  calls: { url: string; init?: RequestInit }[];
}

/** Keys are "METHOD path" with the query string stripped. */
export function stubServer(routes: Record<string, Handler>): StubServer {
  const calls: StubServer["calls"] = [];
  const impl = (async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = String(input);
    calls.push({ url, init });
    const method = init?.method ?? "GET";
    const path = new URL(url).pathname;
    const handler = routes[`${method} ${path}`];
    if (!handler) return jsonResponse({ detail: `no route ${method} ${path}` }, 404);
    return handler(init);
  }) as typeof fetch;
  return { fetch: impl, calls };
}
