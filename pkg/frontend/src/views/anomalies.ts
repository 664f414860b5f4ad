import { ApiError } from "../api";
import { el } from "../dom";
import { showToast } from "../toast";
import type { Anomaly } from "../types";
import type { ViewContext } from "./login";

function row(anomaly: Anomaly): HTMLTableRowElement {
  return el("tr", {}, [
    el("td", {}, [new Date(anomaly.timestamp_ms).toISOString()]),
    el("td", {}, [anomaly.endpoint]),
    el("td", {}, [anomaly.payload]),
  ]);
}

export function renderAnomalies(ctx: ViewContext): HTMLElement {
  const tbody = el("tbody");
  const table = el("table", { class: "anomalies-table" }, [
    el("thead", {}, [
      el("tr", {}, [
        el("th", {}, ["timestamp"]),
        el("th", {}, ["endpoint"]),
        el("th", {}, ["payload"]),
      ]),
    ]),
    tbody,
  ]);

  function refresh(): void {
    void ctx.api
      .listAnomalies()
      .then((records) => tbody.replaceChildren(...records.map(row)))
      .catch((err) => {
        if (err instanceof ApiError && err.status === 401) ctx.navigate("login");
        else showToast(ctx.toasts, String(err), "error");
      });
  }

  const children: (HTMLElement | string)[] = [el("h2", {}, ["Anomalies"]), table];

  // the submit form is for anomaly writers only; plain users just browse
  if (ctx.session.role === "Admin" || ctx.session.role === "Application") {
    const endpoint = el("input", { name: "endpoint", placeholder: "endpoint" });
    const payload = el("input", { name: "payload", placeholder: "description" });
    const form = el("form", { class: "anomaly-form" }, [
      endpoint,
      payload,
      el("button", { type: "submit" }, ["Report anomaly"]),
    ]);
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      void ctx.api
        .addAnomaly(endpoint.value, payload.value)
        .then((acc) => ctx.api.pollTx(acc.tx_id))
        .then((receipt) => {
          if (receipt.status === "Applied") refresh();
          else showToast(ctx.toasts, receipt.revert_reason ?? receipt.status, "error");
        })
        .catch((err) => {
          const message = err instanceof ApiError ? err.message : String(err);
          showToast(ctx.toasts, `Report failed: ${message}`, "error");
        });
    });
    children.push(el("h3", {}, ["Report"]), form);
  }

  refresh();
  return el("section", { class: "view view-anomalies" }, children);
}
