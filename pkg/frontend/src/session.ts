/** Token-only session state. The password never leaves the login handler;
 * everything the UI needs (subject, role, expiry) is decoded from the JWT. */

import type { Role } from "./types";

const STORAGE_KEY = "mgmt-ui.token";

export interface Claims {
  sub: string;
  role: Role;
  iat: number;
  exp: number;
}

function b64urlDecode(segment: string): string {
  const padded = segment.replace(/-/g, "+").replace(/_/g, "/");
  return atob(padded + "=".repeat((4 - (padded.length % 4)) % 4));
}

export function decodeClaims(token: string): Claims {
  const parts = token.split(".");
  if (parts.length !== 3) throw new Error("token must have three segments");
  const claims = JSON.parse(b64urlDecode(parts[1]));
  if (
    typeof claims.sub !== "string" ||
    typeof claims.role !== "string" ||
    typeof claims.exp !== "number" ||
    typeof claims.iat !== "number"
  ) {
    throw new Error("token claims incomplete");
  }
  return claims as Claims;
}

export class Session {
  private token_: string | null = null;
  private claims_: Claims | null = null;

  constructor(private storage: Storage = sessionStorage) {
    const stored = storage.getItem(STORAGE_KEY);
    if (stored !== null) {
      try {
        this.claims_ = decodeClaims(stored);
        this.token_ = stored;
      } catch {
        storage.removeItem(STORAGE_KEY);
      }
    }
  }

  start(token: string): void {
    this.claims_ = decodeClaims(token);
    this.token_ = token;
    this.storage.setItem(STORAGE_KEY, token);
  }

  clear(): void {
    this.token_ = null;
    this.claims_ = null;
    this.storage.removeItem(STORAGE_KEY);
  }

  get token(): string | null {
    return this.token_;
  }

  get role(): Role | null {
    return this.active() ? this.claims_!.role : null;
  }

  get sub(): string | null {
    return this.active() ? this.claims_!.sub : null;
  }

  /** Seconds until the token expires, never negative. */
  expiresInS(nowMs: number = Date.now()): number {
    if (this.claims_ === null) return 0;
    return Math.max(0, this.claims_.exp - Math.floor(nowMs / 1000));
  }

  /** True while a token is present and unexpired; expiry forces re-login. */
  active(nowMs: number = Date.now()): boolean {
    return this.token_ !== null && this.expiresInS(nowMs) > 0;
  }
}
