import { ApiError } from "../api";
import { el } from "../dom";
import { showToast } from "../toast";
import type { Role, UserEntry } from "../types";
import type { ViewContext } from "./login";

const ROLES: Role[] = ["Admin", "User", "Application"];

function roleSelect(current: Role): HTMLSelectElement {
  const select = el("select", { class: "role-select" });
  for (const role of ROLES) {
    const option = el("option", { value: role }, [role]);
    if (role === current) option.setAttribute("selected", "");
    select.append(option);
  }
  select.value = current;
  return select;
}

export function renderUsers(ctx: ViewContext): HTMLElement {
  const tbody = el("tbody");
  const table = el("table", { class: "users-table" }, [
    el("thead", {}, [
      el("tr", {}, [
        el("th", {}, ["username"]),
        el("th", {}, ["email"]),
        el("th", {}, ["role"]),
        el("th", {}, ["status"]),
      ]),
    ]),
    tbody,
  ]);

  function row(user: UserEntry): HTMLTableRowElement {
    const select = roleSelect(user.role);
    const status = el("td", { class: "tx-status" }, [""]);
    select.addEventListener("change", () => {
      status.textContent = "Pending";
      void ctx.api
        .updateUser(user.username, { role: select.value as Role })
        .then((acc) => ctx.api.pollTx(acc.tx_id))
        .then((receipt) => {
          status.textContent = receipt.status === "Applied" ? "Confirmed" : receipt.status;
          if (receipt.status !== "Applied") {
            showToast(ctx.toasts, receipt.revert_reason ?? receipt.status, "error");
          }
        })
        .catch((err) => showToast(ctx.toasts, String(err), "error"));
    });
    return el("tr", { "data-username": user.username }, [
      el("td", {}, [user.username]),
      el("td", {}, [user.email]),
      el("td", {}, [select]),
      status,
    ]);
  }

  function refresh(): void {
    void ctx.api
      .listUsers()
      .then((users) => tbody.replaceChildren(...users.map(row)))
      .catch((err) => {
        if (err instanceof ApiError && err.status === 401) ctx.navigate("login");
        else showToast(ctx.toasts, String(err), "error");
      });
  }

  const username = el("input", { name: "username", placeholder: "username" });
  const email = el("input", { name: "email", placeholder: "email" });
  const password = el("input", { name: "password", type: "password", placeholder: "password" });
  const role = roleSelect("User");
  const form = el("form", { class: "user-form" }, [
    username,
    email,
    password,
    role,
    el("button", { type: "submit" }, ["Add user"]),
  ]);
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const entered = password.value;
    password.value = "";
    void ctx.api
      .addUser({
        username: username.value,
        email: email.value,
        role: role.value as Role,
        password: entered,
      })
      .then((acc) => ctx.api.pollTx(acc.tx_id))
      .then((receipt) => {
        if (receipt.status === "Applied") refresh();
        else showToast(ctx.toasts, receipt.revert_reason ?? receipt.status, "error");
      })
      .catch((err) => {
        const message = err instanceof ApiError ? err.message : String(err);
        showToast(ctx.toasts, `Add user failed: ${message}`, "error");
      });
  });

  refresh();
  return el("section", { class: "view view-users" }, [
    el("h2", {}, ["Users"]),
    table,
    el("h3", {}, ["Add a user"]),
    form,
  ]);
}
