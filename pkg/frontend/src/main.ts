/** Browser entry point: log in from the query string or a prompt-less
 * dev default, then mount the app on #app. */

import { ApiClient } from "./api.js";
import { mount } from "./app.js";

async function boot(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app mount point");
  const api = new ApiClient("");
  const params = new URLSearchParams(window.location.search);
  const username = params.get("user");
  const password = params.get("password");
  if (username && password) {
    await api.login(username, password, params.get("tier") ?? "searcher");
  }
  const app = mount(root, api);
  const q = params.get("q");
  if (q) void app.navigate(q, Number(params.get("page") ?? "1"));
}

void boot();
