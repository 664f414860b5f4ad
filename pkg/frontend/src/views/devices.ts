import { ApiError } from "../api";
import { el } from "../dom";
import { showToast } from "../toast";
import type { DeviceRecord, TxReceipt } from "../types";
import type { ViewContext } from "./login";

const FIELDS: (keyof DeviceRecord)[] = [
  "endpoint",
  "bootstrap_uri",
  "server_uri",
  "bootstrap_psk_identity",
  "bootstrap_psk_secret",
  "server_psk_identity",
  "server_psk_secret",
];

function receiptLabel(receipt: TxReceipt): string {
  if (receipt.status === "Applied") return "Confirmed";
  return receipt.revert_reason ? `${receipt.status}: ${receipt.revert_reason}` : receipt.status;
}

export function renderDevices(ctx: ViewContext): HTMLElement {
  const tbody = el("tbody");
  const table = el("table", { class: "devices-table" }, [
    el("thead", {}, [
      el("tr", {}, [
        ...FIELDS.slice(0, 3).map((f) => el("th", {}, [f])),
        el("th", {}, ["status"]),
        el("th", {}, [""]),
      ]),
    ]),
    tbody,
  ]);

  function row(record: DeviceRecord, status: string): HTMLTableRowElement {
    const statusCell = el("td", { class: "tx-status" }, [status]);
    const remove = el("button", { type: "button", class: "remove" }, ["Remove"]);
    const tr = el("tr", { "data-endpoint": record.endpoint }, [
      el("td", {}, [record.endpoint]),
      el("td", {}, [record.bootstrap_uri]),
      el("td", {}, [record.server_uri]),
      statusCell,
      el("td", {}, [remove]),
    ]);
    remove.addEventListener("click", () => {
      statusCell.textContent = "Pending";
      void ctx.api
        .removeDevice(record.endpoint)
        .then((acc) => ctx.api.pollTx(acc.tx_id))
        .then((receipt) => {
          if (receipt.status === "Applied") tr.remove();
          else {
            statusCell.textContent = receiptLabel(receipt);
            showToast(ctx.toasts, receiptLabel(receipt), "error");
          }
        })
        .catch((err) => showToast(ctx.toasts, String(err), "error"));
    });
    return tr;
  }

  function refresh(): void {
    void ctx.api
      .listDevices()
      .then((records) => {
        tbody.replaceChildren(...records.map((r) => row(r, "Confirmed")));
      })
      .catch((err) => {
        if (err instanceof ApiError && err.status === 401) ctx.navigate("login");
        else showToast(ctx.toasts, String(err), "error");
      });
  }

  const inputs = new Map<keyof DeviceRecord, HTMLInputElement>();
  const form = el("form", { class: "device-form" }, [
    ...FIELDS.map((field) => {
      const input = el("input", { name: field, placeholder: field });
      inputs.set(field, input);
      return el("label", {}, [field, input]);
    }),
    el("button", { type: "submit" }, ["Add device"]),
  ]);

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const record = Object.fromEntries(
      FIELDS.map((field) => [field, inputs.get(field)!.value]),
    ) as unknown as DeviceRecord;
    const tr = row(record, "Pending");
    tbody.append(tr);
    const statusCell = tr.querySelector(".tx-status")!;
    void ctx.api
      .addDevice(record)
      .then((acc) => ctx.api.pollTx(acc.tx_id))
      .then((receipt) => {
        statusCell.textContent = receiptLabel(receipt);
        if (receipt.status !== "Applied") {
          showToast(ctx.toasts, receiptLabel(receipt), "error");
        }
      })
      .catch((err) => {
        statusCell.textContent = "Failed";
        const message = err instanceof ApiError ? err.message : String(err);
        showToast(ctx.toasts, `Add device failed: ${message}`, "error");
      });
  });

  refresh();
  return el("section", { class: "view view-devices" }, [
    el("h2", {}, ["Devices"]),
    table,
    el("h3", {}, ["Register a device"]),
    form,
  ]);
}
