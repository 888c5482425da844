/** Entry point: one SPA, two routes. */

import { mountDashboard } from "./views/dashboard.js";
import { mountInterview } from "./views/interview.js";

function route(): void {
  const root = document.getElementById("app");
  if (root === null) throw new Error("missing #app mount point");
  const path = location.hash ? location.hash.slice(1) : location.pathname;
  if (path.startsWith("/dashboard")) {
    mountDashboard(root);
  } else {
    // default view, also serves /interview
    mountInterview(root);
  }
}

window.addEventListener("hashchange", route);
route();
