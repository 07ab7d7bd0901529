import { ReviewApi } from "./api.js";
import { QueueController } from "./state.js";
import { ReviewView } from "./ui.js";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("api") ?? "http://127.0.0.1:8008";

const api = new ReviewApi(baseUrl);
const root = document.getElementById("app")!;
const controller = new QueueController(api, (state) => view.render(state));
const view = new ReviewView(root, controller);

controller.loadQueue("pending", 1);
