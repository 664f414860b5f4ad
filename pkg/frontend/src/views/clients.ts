import { ApiError } from "../api";
import { el } from "../dom";
import { showToast } from "../toast";
import type { Registration } from "../types";
import type { ViewContext } from "./login";

export const TEMPERATURE_PATH = "/3303/0/5700";
const CLIENT_POLL_MS = 5000;

export function renderClients(ctx: ViewContext): HTMLElement {
  const tbody = el("tbody");
  const table = el("table", { class: "clients-table" }, [
    el("thead", {}, [
      el("tr", {}, [
        el("th", {}, ["endpoint"]),
        el("th", {}, ["reg_id"]),
        el("th", {}, ["lifetime"]),
        el("th", {}, ["temperature"]),
        el("th", {}, ["ticker"]),
        el("th", {}, [""]),
      ]),
    ]),
    tbody,
  ]);
  const tickers = new Map<string, AbortController>();

  function row(reg: Registration): HTMLTableRowElement {
    const reading = el("td", { class: "reading" }, ["—"]);
    const ticker = el("td", { class: "ticker" }, ["—"]);
    const read = el("button", { type: "button", class: "read" }, ["Read"]);
    const observe = el("button", { type: "button", class: "observe" }, ["Observe"]);

    read.addEventListener("click", () => {
      void ctx.api
        .readResource(reg.endpoint, TEMPERATURE_PATH)
        .then((result) => {
          const when = new Date(result.timestamp_ms).toISOString();
          reading.textContent = `${result.value} @ ${when}`;
        })
        .catch((err) => {
          const message = err instanceof ApiError ? err.message : String(err);
          showToast(ctx.toasts, `Read failed: ${message}`, "error");
        });
    });

    observe.addEventListener("click", () => {
      const running = tickers.get(reg.endpoint);
      if (running !== undefined) {
        running.abort();
        tickers.delete(reg.endpoint);
        observe.textContent = "Observe";
        void ctx.api.cancelObserve(reg.endpoint, TEMPERATURE_PATH).catch(() => undefined);
        return;
      }
      const controller = new AbortController();
      tickers.set(reg.endpoint, controller);
      observe.textContent = "Stop";
      void (async () => {
        try {
          await ctx.api.startObserve(reg.endpoint, TEMPERATURE_PATH);
          for await (const event of ctx.api.observeStream(reg.endpoint, TEMPERATURE_PATH)) {
            if (controller.signal.aborted) return;
            ticker.textContent = `${event.value}`;
          }
        } catch (err) {
          if (!controller.signal.aborted) {
            showToast(ctx.toasts, `Observe failed: ${String(err)}`, "error");
          }
        }
      })();
    });

    return el("tr", { "data-endpoint": reg.endpoint }, [
      el("td", {}, [reg.endpoint]),
      el("td", {}, [reg.reg_id]),
      el("td", {}, [`${reg.lifetime_s}s`]),
      reading,
      ticker,
      el("td", {}, [read, observe]),
    ]);
  }

  function refresh(): void {
    void ctx.api
      .listClients()
      .then((regs) => {
        // keep rows with live tickers; rebuild the rest
        const keep = new Set(tickers.keys());
        for (const tr of Array.from(tbody.children)) {
          const ep = (tr as HTMLElement).dataset.endpoint!;
          if (!keep.has(ep) || !regs.some((r) => r.endpoint === ep)) tr.remove();
        }
        const present = new Set(
          Array.from(tbody.children).map((tr) => (tr as HTMLElement).dataset.endpoint),
        );
        for (const reg of regs) {
          if (!present.has(reg.endpoint)) tbody.append(row(reg));
        }
      })
      .catch((err) => {
        if (err instanceof ApiError && err.status === 401) ctx.navigate("login");
        else showToast(ctx.toasts, String(err), "error");
      });
  }

  refresh();
  const interval = setInterval(refresh, CLIENT_POLL_MS);
  const root = el("section", { class: "view view-clients" }, [
    el("h2", {}, ["Live clients"]),
    table,
  ]);
  // stop polling and streaming when the view is torn down
  new MutationObserver(() => {
    if (!root.isConnected) {
      clearInterval(interval);
      for (const controller of tickers.values()) controller.abort();
      tickers.clear();
    }
  }).observe(document.body, { childList: true, subtree: true });
  return root;
}
