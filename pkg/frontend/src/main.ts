import { ApiClient } from "./api";
import { clear, el } from "./dom";
import { navLinks, resolve } from "./router";
import { Session } from "./session";
import { renderAnomalies } from "./views/anomalies";
import { renderClients } from "./views/clients";
import { renderDevices } from "./views/devices";
import { renderForbidden, renderLogin, type ViewContext } from "./views/login";
import { renderUsers } from "./views/users";

const MGMT_BASE = import.meta.env.VITE_MGMT_BASE ?? "http://127.0.0.1:8081";
const DM_BASE = import.meta.env.VITE_DM_BASE ?? "http://127.0.0.1:8080";

export function mountApp(root: HTMLElement): void {
  const session = new Session();
  const api = new ApiClient({
    mgmtBase: MGMT_BASE,
    dmBase: DM_BASE,
    getToken: () => session.token,
  });

  const toasts = el("div", { class: "toasts" });
  const nav = el("nav", { class: "topnav" });
  const outlet = el("main", { class: "outlet" });
  root.append(el("header", {}, [el("h1", {}, ["Device management console"]), nav]), outlet, toasts);

  const navigate = (route: string): void => {
    window.location.hash = `#/${route}`;
  };
  const ctx: ViewContext = { api, session, toasts, navigate };

  function renderNav(): void {
    clear(nav);
    const role = session.role;
    if (role === null) return;
    for (const link of navLinks(role)) {
      nav.append(el("a", { href: `#/${link.route}` }, [link.label]));
    }
    const logout = el("button", { type: "button", class: "logout" }, ["Log out"]);
    logout.addEventListener("click", () => {
      session.clear();
      navigate("login");
    });
    nav.append(logout);
  }

  function render(): void {
    if (!session.active()) session.clear(); // expired token forces re-login
    const view = resolve(window.location.hash, session.role);
    renderNav();
    clear(outlet);
    switch (view) {
      case "login":
        outlet.append(renderLogin(ctx));
        break;
      case "devices":
        outlet.append(renderDevices(ctx));
        break;
      case "users":
        outlet.append(renderUsers(ctx));
        break;
      case "anomalies":
        outlet.append(renderAnomalies(ctx));
        break;
      case "clients":
        outlet.append(renderClients(ctx));
        break;
      case "forbidden":
        outlet.append(renderForbidden());
        break;
    }
  }

  window.addEventListener("hashchange", render);
  render();
}

if (typeof document !== "undefined" && document.getElementById("app") !== null) {
  mountApp(document.getElementById("app")!);
}
