/** Shared test plumbing: forged (unsigned) tokens, a routing fetch fake, and
 * a ViewContext factory for rendering views against the fake backend. */

import { vi } from "vitest";
import { ApiClient } from "../src/api";
import { Session } from "../src/session";
import type { Role } from "../src/types";
import type { ViewContext } from "../src/views/login";

export const MGMT = "http://mgmt.test";
export const DM = "http://dm.test";

function b64url(text: string): string {
  return btoa(text).replace(/\+/g, "-").replace(/\//g, "_").replace(/=+$/, "");
}

export function makeToken(role: Role, sub = "tester", ttlS = 3600): string {
  const now = Math.floor(Date.now() / 1000);
  const header = b64url(JSON.stringify({ alg: "HS256", typ: "JWT" }));
  const claims = b64url(JSON.stringify({ sub, role, iat: now, exp: now + ttlS }));
  return `${header}.${claims}.${b64url("signature")}`;
}

export function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export type RouteHandler = (init?: RequestInit) => Response | Promise<Response>;

/** fetch fake keyed by "METHOD url"; handlers given in order are consumed
 * one per call when an array is provided. */
export function fakeFetch(routes: Record<string, RouteHandler | RouteHandler[]>) {
  const queues = new Map<string, RouteHandler[]>();
  for (const [key, value] of Object.entries(routes)) {
    queues.set(key, Array.isArray(value) ? [...value] : [value]);
  }
  const calls: { method: string; url: string; init?: RequestInit }[] = [];
  const fn = vi.fn(async (url: RequestInfo | URL, init?: RequestInit) => {
    const method = init?.method ?? "GET";
    calls.push({ method, url: String(url), init });
    const queue = queues.get(`${method} ${url}`);
    if (queue === undefined || queue.length === 0) {
      throw new Error(`unexpected request: ${method} ${url}`);
    }
    const handler = queue.length > 1 ? queue.shift()! : queue[0];
    return handler(init);
  });
  return { fn: fn as unknown as typeof fetch, calls };
}

export function makeContext(
  role: Role,
  fetchFn: typeof fetch,
): ViewContext & { navigations: string[] } {
  const session = new Session(window.sessionStorage);
  session.start(makeToken(role));
  const api = new ApiClient({
    mgmtBase: MGMT,
    dmBase: DM,
    getToken: () => session.token,
    fetchFn,
  });
  const toasts = document.createElement("div");
  document.body.append(toasts);
  const navigations: string[] = [];
  return {
    api,
    session,
    toasts,
    navigate: (route: string) => navigations.push(route),
    navigations,
  };
}

export function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}
