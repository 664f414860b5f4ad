import { ApiClient, ApiError } from "../api";
import { clear, el } from "../dom";
import { defaultView } from "../router";
import { Session } from "../session";
import { showToast } from "../toast";

export interface ViewContext {
  api: ApiClient;
  session: Session;
  toasts: HTMLElement;
  navigate: (route: string) => void;
}

export function renderLogin(ctx: ViewContext): HTMLElement {
  const wildcard = el("input", {
    name: "wildcard",
    placeholder: "username or email",
    autocomplete: "username",
  });
  const password = el("input", {
    name: "password",
    type: "password",
    autocomplete: "current-password",
  });
  const submit = el("button", { type: "submit" }, ["Log in"]);
  const form = el("form", { class: "login-form" }, [
    el("label", {}, ["Username or email", wildcard]),
    el("label", {}, ["Password", password]),
    submit,
  ]);

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const entered = password.value;
    password.value = ""; // the password never outlives the request
    void ctx.api
      .login(wildcard.value, entered)
      .then((resp) => {
        ctx.session.start(resp.token);
        ctx.navigate(defaultView(resp.role));
      })
      .catch((err) => {
        const message = err instanceof ApiError ? err.message : String(err);
        showToast(ctx.toasts, `Login failed: ${message}`, "error");
      });
  });

  const root = el("section", { class: "view view-login" }, [el("h2", {}, ["Sign in"]), form]);
  return root;
}

export function renderForbidden(): HTMLElement {
  const root = el("section", { class: "view view-forbidden" }, [
    el("h2", {}, ["403"]),
    el("p", {}, ["Your role does not grant access to this view."]),
  ]);
  return root;
}

export { clear };
