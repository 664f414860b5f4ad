/** Hash-based routing with per-role gating. Gating here is cosmetic — the
 * services re-authorize every request — but the matrix mirrors theirs. */

import type { Role } from "./types";

export type ViewName = "login" | "devices" | "users" | "anomalies" | "clients" | "forbidden";

export const ROUTE_ROLES: Record<string, Role[]> = {
  devices: ["Admin"],
  users: ["Admin"],
  anomalies: ["Admin", "User", "Application"],
  clients: ["Admin", "Application"],
};

export function defaultView(role: Role): ViewName {
  return role === "User" ? "anomalies" : "devices";
}

/** Maps a location hash plus the session role to the view to render. */
export function resolve(hash: string, role: Role | null): ViewName {
  const route = hash.replace(/^#\/?/, "") || "login";
  if (role === null) return "login";
  if (route === "login" || route === "") return defaultView(role);
  const allowed = ROUTE_ROLES[route];
  if (allowed === undefined) return defaultView(role);
  return allowed.includes(role) ? (route as ViewName) : "forbidden";
}

/** Navigation entries visible for a role. */
export function navLinks(role: Role): { route: string; label: string }[] {
  return Object.entries(ROUTE_ROLES)
    .filter(([, allowed]) => allowed.includes(role))
    .map(([route]) => ({ route, label: route[0].toUpperCase() + route.slice(1) }));
}
