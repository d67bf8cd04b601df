// Browser entry point. The control-plane base URL defaults to the page's
// origin and can be overridden with ?api=http://host:port for the common
// case of opening index.html straight from disk.

import { OperatorConsole } from "./console.js";
import { render } from "./ui.js";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("api") ?? window.location.origin;

const root = document.getElementById("console");
if (!root) throw new Error("#console element missing");

const operator = new OperatorConsole({ baseUrl });
operator.subscribe((state) => render(root, state, operator));
void operator.connect().catch(() => {
  // connection state is already reflected in the header; retries continue
});
