import { mount } from "./dom.js";
import { PanelSession } from "./panel.js";
import { WsTransport } from "./ws.js";

const params = new URLSearchParams(location.search);
const url = params.get("ws") ?? "ws://localhost:8766";

const session = new PanelSession(new WsTransport(url));
mount(document.getElementById("app")!, session);
session.start();
