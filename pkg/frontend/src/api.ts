/** Typed client for the management service (/mgmt/*) and the DM server
 * (/api/*). Every mutation returns a tx handle; `pollTx` resolves it to a
 * receipt by polling once per second. */

import type {
  Accepted,
  Anomaly,
  DeviceRecord,
  LoginResponse,
  Registration,
  ResourceReading,
  Role,
  TxReceipt,
  UserEntry,
} from "./types";

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export interface ApiConfig {
  mgmtBase: string;
  dmBase: string;
  getToken: () => string | null;
  fetchFn?: typeof fetch;
}

const TX_POLL_INTERVAL_MS = 1000;

async function parseError(resp: Response): Promise<ApiError> {
  let message = resp.statusText;
  try {
    const body = await resp.json();
    if (typeof body.error === "string") message = body.error;
    else if (typeof body.revert_reason === "string") message = body.revert_reason;
  } catch {
    /* non-JSON error body: keep the status text */
  }
  return new ApiError(resp.status, message);
}

export class ApiClient {
  constructor(private cfg: ApiConfig) {}

  private async request<T>(
    base: string,
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const headers: Record<string, string> = {};
    const token = this.cfg.getToken();
    if (token !== null) headers["Authorization"] = `Bearer ${token}`;
    if (body !== undefined) headers["Content-Type"] = "application/json";
    const fetchFn = this.cfg.fetchFn ?? fetch;
    const resp = await fetchFn(base + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) throw await parseError(resp);
    return (await resp.json()) as T;
  }

  private mgmt<T>(method: string, path: string, body?: unknown): Promise<T> {
    return this.request<T>(this.cfg.mgmtBase, method, path, body);
  }

  private dm<T>(method: string, path: string, body?: unknown): Promise<T> {
    return this.request<T>(this.cfg.dmBase, method, path, body);
  }

  // -- management service -----------------------------------------------

  login(wildcard: string, password: string): Promise<LoginResponse> {
    return this.mgmt("POST", "/mgmt/login", { wildcard, password });
  }

  /** One receipt lookup; a 409 carries the Reverted/OutOfGas receipt. */
  async txStatus(txId: string): Promise<TxReceipt> {
    try {
      return await this.mgmt<TxReceipt>("GET", `/mgmt/tx/${txId}`);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // the service rejects failed transactions with the receipt attached;
        // refetch it as a plain read so callers get a uniform TxReceipt
        const fetchFn = this.cfg.fetchFn ?? fetch;
        const token = this.cfg.getToken();
        const resp = await fetchFn(this.cfg.mgmtBase + `/mgmt/tx/${txId}`, {
          headers: token === null ? {} : { Authorization: `Bearer ${token}` },
        });
        return (await resp.json()) as TxReceipt;
      }
      throw err;
    }
  }

  /** Polls every second until the transaction leaves Pending. */
  async pollTx(txId: string, timeoutMs = 120_000): Promise<TxReceipt> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const receipt = await this.txStatus(txId);
      if (receipt.status !== "Pending") return receipt;
      if (Date.now() >= deadline) return receipt;
      await new Promise((resolve) => setTimeout(resolve, TX_POLL_INTERVAL_MS));
    }
  }

  listDevices(): Promise<DeviceRecord[]> {
    return this.mgmt("GET", "/mgmt/devices");
  }

  addDevice(record: DeviceRecord): Promise<Accepted> {
    return this.mgmt("POST", "/mgmt/devices", record);
  }

  removeDevice(endpoint: string): Promise<Accepted> {
    return this.mgmt("DELETE", `/mgmt/devices/${encodeURIComponent(endpoint)}`);
  }

  listUsers(): Promise<UserEntry[]> {
    return this.mgmt("GET", "/mgmt/users");
  }

  addUser(user: UserEntry & { password: string }): Promise<Accepted> {
    return this.mgmt("POST", "/mgmt/users", user);
  }

  updateUser(
    username: string,
    changes: Partial<{ email: string; role: Role; password: string }>,
  ): Promise<Accepted> {
    return this.mgmt("PUT", `/mgmt/users/${encodeURIComponent(username)}`, changes);
  }

  listAnomalies(): Promise<Anomaly[]> {
    return this.mgmt("GET", "/mgmt/anomalies");
  }

  addAnomaly(endpoint: string, payload: string): Promise<Accepted> {
    return this.mgmt("POST", "/mgmt/anomalies", { endpoint, payload });
  }

  // -- DM server ----------------------------------------------------------

  listClients(): Promise<Registration[]> {
    return this.dm("GET", "/api/clients");
  }

  readResource(endpoint: string, path: string): Promise<ResourceReading> {
    return this.dm("GET", `/api/clients/${encodeURIComponent(endpoint)}${path}`);
  }

  startObserve(endpoint: string, path: string): Promise<{ status: string }> {
    return this.dm("POST", `/api/clients/${encodeURIComponent(endpoint)}${path}/observe`);
  }

  cancelObserve(endpoint: string, path: string): Promise<{ status: string }> {
    return this.dm("DELETE", `/api/clients/${encodeURIComponent(endpoint)}${path}/observe`);
  }

  /** Server-sent notification stream for an observed resource, as parsed
   * `{timestampMs, value}` events. Uses fetch streaming rather than
   * EventSource so the Bearer header can be attached. */
  async *observeStream(
    endpoint: string,
    path: string,
  ): AsyncGenerator<{ timestampMs: number; value: number }> {
    const url = `${this.cfg.dmBase}/api/clients/${encodeURIComponent(endpoint)}${path}/observe`;
    const token = this.cfg.getToken();
    const fetchFn = this.cfg.fetchFn ?? fetch;
    const resp = await fetchFn(url, {
      headers: token === null ? {} : { Authorization: `Bearer ${token}` },
    });
    if (!resp.ok) throw await parseError(resp);
    if (resp.body === null) return;
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (done) return;
      buffer += decoder.decode(value, { stream: true });
      let newline;
      while ((newline = buffer.indexOf("\n")) >= 0) {
        const line = buffer.slice(0, newline).trimEnd();
        buffer = buffer.slice(newline + 1);
        if (!line.startsWith("data: ")) continue;
        const [ts, val] = line.slice("data: ".length).split(" ");
        yield { timestampMs: Number(ts), value: Number(val) };
      }
    }
  }
}
