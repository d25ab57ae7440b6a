import { GameApi } from "./api.js";
import { GameView } from "./ui.js";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");
new GameView(root, new GameApi()).renderLobby();
