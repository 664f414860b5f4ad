import { describe, expect, it } from "vitest";
import { defaultView, navLinks, resolve } from "../src/router";
import type { Role } from "../src/types";

const ROLES: Role[] = ["Admin", "User", "Application"];

describe("resolve", () => {
  it("routes to login when there is no session, regardless of hash", () => {
    for (const hash of ["", "#/devices", "#/users", "#/anomalies", "#/clients"]) {
      expect(resolve(hash, null)).toBe("login");
    }
  });

  it("applies the role matrix", () => {
    const matrix: Record<string, Record<Role, string>> = {
      "#/devices": { Admin: "devices", User: "forbidden", Application: "forbidden" },
      "#/users": { Admin: "users", User: "forbidden", Application: "forbidden" },
      "#/anomalies": { Admin: "anomalies", User: "anomalies", Application: "anomalies" },
      "#/clients": { Admin: "clients", User: "forbidden", Application: "clients" },
    };
    for (const [hash, byRole] of Object.entries(matrix)) {
      for (const role of ROLES) {
        expect(resolve(hash, role), `${hash} as ${role}`).toBe(byRole[role]);
      }
    }
  });

  it("direct navigation to a gated route shows the 403 view for role User", () => {
    expect(resolve("#/devices", "User")).toBe("forbidden");
    expect(resolve("#/users", "User")).toBe("forbidden");
  });

  it("sends a logged-in session to its role's landing view", () => {
    expect(resolve("#/login", "Admin")).toBe("devices");
    expect(resolve("#/login", "User")).toBe("anomalies");
    expect(defaultView("Application")).toBe("devices");
  });

  it("falls back to the landing view on unknown routes", () => {
    expect(resolve("#/nope", "Admin")).toBe("devices");
  });
});

describe("navLinks", () => {
  it("hides Devices and Users from role User", () => {
    const labels = navLinks("User").map((l) => l.label);
    expect(labels).toEqual(["Anomalies"]);
  });

  it("shows everything to Admin", () => {
    const labels = navLinks("Admin").map((l) => l.label);
    expect(labels).toEqual(["Devices", "Users", "Anomalies", "Clients"]);
  });

  it("gives Application anomaly and client access only", () => {
    const labels = navLinks("Application").map((l) => l.label);
    expect(labels).toEqual(["Anomalies", "Clients"]);
  });
});
