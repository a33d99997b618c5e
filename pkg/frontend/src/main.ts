/** Browser entry point: mount the app against the server that served us. */
import { ApiClient } from "./api.js";
import { App } from "./app.js";

const api = new ApiClient(window.location.origin);
const app = new App(api);
document.getElementById("root")?.append(app.root);
void app.init();
