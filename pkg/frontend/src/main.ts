/** Entry point: wires the app to the page with ?rater= and ?setting=. */

import { ApiClient } from "./api.js";
import { App } from "./app.js";
import { isSettingName } from "./options.js";

const params = new URLSearchParams(window.location.search);
const rater = params.get("rater") ?? undefined;
const settingParam = params.get("setting") ?? "";
const setting = isSettingName(settingParam) ? settingParam : undefined;

const root = document.getElementById("app");
if (root === null) throw new Error("missing #app element");
void new App(root, { api: new ApiClient(), raterId: rater, setting }).start();
