/** Payload shapes of the two HTTP services the console talks to. */

export type Role = "Admin" | "User" | "Application";

export interface LoginResponse {
  token: string;
  sub: string;
  role: Role;
  expires_in: number;
}

export type TxStatus = "Pending" | "Applied" | "Reverted" | "OutOfGas";

export interface TxReceipt {
  tx_id: string;
  status: TxStatus;
  gas_used?: number;
  block_height?: number;
  revert_reason?: string | null;
}

export interface Accepted {
  tx_id: string;
  status: "Pending";
}

export interface DeviceRecord {
  endpoint: string;
  bootstrap_uri: string;
  server_uri: string;
  bootstrap_psk_identity: string;
  bootstrap_psk_secret: string; // hex
  server_psk_identity: string;
  server_psk_secret: string; // hex
}

export interface UserEntry {
  username: string;
  email: string;
  role: Role;
}

export interface Anomaly {
  timestamp_ms: number;
  endpoint: string;
  payload: string;
}

export interface Registration {
  reg_id: string;
  endpoint: string;
  remote_addr: string;
  lifetime_s: number;
  last_update_ms: number;
  object_links: string[];
}

export interface ResourceReading {
  timestamp_ms: number;
  kind: "none" | "text" | "integer" | "float" | "opaque";
  value: string | number | null;
}
