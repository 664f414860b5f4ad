/** Transient status messages; errors from the services surface here. */

import { el } from "./dom";

export type ToastKind = "info" | "error";

const TOAST_TTL_MS = 4000;

export function showToast(container: HTMLElement, message: string, kind: ToastKind = "info"): void {
  const toast = el("div", { class: `toast toast-${kind}`, role: "status" }, [message]);
  container.append(toast);
  setTimeout(() => toast.remove(), TOAST_TTL_MS);
}
