// DOM wiring for the browser console. All state flows through SessionView;
// this file only translates DOM events to RPC calls and view changes to DOM.

import { RpcClient, RpcCallError } from "./client.js";
import { defaultKeymap, matchAction, Platform } from "./keymap.js";
import { KernelInfo, RpcEvent, WatchRow } from "./protocol.js";
import { runSelection } from "./runner.js";
import { SessionView } from "./view.js";

const platform: Platform =
  navigator.platform.toLowerCase().includes("mac") ? "mac" : "other";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const connectForm = el<HTMLFormElement>("connect-form");
const addrInput = el<HTMLInputElement>("addr");
const tokenInput = el<HTMLInputElement>("token");
const banner = el<HTMLDivElement>("banner");
const pickerPane = el<HTMLDivElement>("picker");
const kernelList = el<HTMLDivElement>("kernel-list");
const workspace = el<HTMLDivElement>("workspace");
const editor = el<HTMLTextAreaElement>("editor");
const outputPane = el<HTMLDivElement>("output");
const lampEl = el<HTMLSpanElement>("lamp");
const kernelNameEl = el<HTMLSpanElement>("kernel-name");
const watchBody = el<HTMLTableSectionElement>("watch-body");
const shareLink = el<HTMLAnchorElement>("share-link");
const inlineToggle = el<HTMLInputElement>("inline-toggle");
const inlineResult = el<HTMLDivElement>("inline-result");
const toastEl = el<HTMLDivElement>("toast");

let client: RpcClient | null = null;
let view: SessionView | null = null;
let selectedWatch: number | null = null;
const resultWindows: Window[] = [];

function toast(message: string): void {
  toastEl.textContent = message;
  toastEl.classList.add("visible");
  setTimeout(() => toastEl.classList.remove("visible"), 4000);
}

function rpcFailed(err: unknown): void {
  if (err instanceof RpcCallError) {
    toast(`RPC error ${err.code}: ${err.message}`);
    if (err.code === 4 && view) {
      view.lamp = "dead";
      renderStatus();
    }
  } else {
    toast(String(err));
  }
}

addrInput.value = location.host || "127.0.0.1:8787";

connectForm.addEventListener("submit", (ev) => {
  ev.preventDefault();
  const socket = new WebSocket(`ws://${addrInput.value}/rpc`);
  client = new RpcClient(socket as never, tokenInput.value);
  client
    .handshake()
    .then(() => {
      banner.textContent = "";
      const joined = new URLSearchParams(location.hash.slice(1)).get("session");
      if (joined) return attachSession(joined);
      return showPicker();
    })
    .catch(() => {
      banner.textContent = "service unreachable or token rejected";
    });
});

async function showPicker(): Promise<void> {
  if (!client) return;
  pickerPane.hidden = false;
  workspace.hidden = true;
  const result = await client.call("listKernels");
  const kernels = (result["kernels"] as unknown as KernelInfo[]) ?? [];
  kernelList.textContent = "";
  if (!kernels.length) {
    kernelList.textContent = "No kernels found. Add a kernelspec directory.";
    return;
  }
  for (const kernel of kernels) {
    const button = document.createElement("button");
    button.textContent = `${kernel.display_name} (${kernel.language})`;
    button.addEventListener("click", () => {
      client!
        .call("createSession", { kernel: kernel.name })
        .then((res) => bindSession(res["session"] as string, kernel.display_name))
        .catch(rpcFailed);
    });
    kernelList.appendChild(button);
  }
}

async function attachSession(sessionId: string): Promise<void> {
  if (!client) return;
  try {
    await client.call("getHistory", { session: sessionId }); // subscribes
  } catch (err) {
    rpcFailed(err);
    return showPicker();
  }
  bindSession(sessionId, "(joined session)");
}

function bindSession(sessionId: string, displayName: string): void {
  if (!client) return;
  view = new SessionView(sessionId, displayName);
  client.onEvent((evt: RpcEvent) => view?.applyEvent(evt));
  view.onChange(renderAll);
  pickerPane.hidden = true;
  workspace.hidden = false;
  kernelNameEl.textContent = displayName;
  shareLink.href = `#session=${sessionId}`;
  shareLink.textContent = "share link";
  client.call("listWatches", { session: sessionId })
    .then((res) => {
      if (view) {
        view.watches = (res["watches"] as unknown as WatchRow[]) ?? [];
        renderWatches();
      }
    })
    .catch(() => undefined);
  renderAll();
}

function renderStatus(): void {
  if (!view) return;
  lampEl.dataset.state = view.lamp;
  lampEl.title = view.lamp;
}

function renderOutputs(): void {
  if (!view) return;
  outputPane.textContent = "";
  for (const entry of view.outputs) {
    const line = document.createElement("div");
    line.className = `out ${entry.item.kind}`;
    line.textContent = view.outputText(entry);
    outputPane.appendChild(line);
  }
  outputPane.scrollTop = outputPane.scrollHeight;
  if (inlineToggle.checked) {
    const results = view.resultOutputs();
    inlineResult.textContent = results.length
      ? `→ ${view.outputText(results[results.length - 1])}`
      : "";
  } else {
    inlineResult.textContent = "";
  }
}

function renderWatches(): void {
  if (!view) return;
  watchBody.textContent = "";
  for (const row of view.watches) {
    const tr = document.createElement("tr");
    if (row.id === selectedWatch) tr.classList.add("selected");
    const cells = [String(row.id), row.expr, row.last_value ?? "", row.last_status];
    for (const value of cells) {
      const td = document.createElement("td");
      td.textContent = value;
      tr.appendChild(td);
    }
    tr.addEventListener("click", () => {
      selectedWatch = row.id;
      renderWatches();
    });
    watchBody.appendChild(tr);
  }
}

function renderAll(): void {
  renderStatus();
  renderOutputs();
  renderWatches();
  for (const win of resultWindows) {
    if (!win.closed) renderResultWindow(win);
  }
}

function renderResultWindow(win: Window): void {
  if (!view) return;
  const doc = win.document;
  const pane = doc.getElementById("results");
  if (!pane) return;
  pane.textContent = "";
  const results = view.resultOutputs();
  if (!results.length) {
    pane.textContent = "(no results yet)";
    return;
  }
  for (const entry of results) {
    const line = doc.createElement("div");
    line.textContent = view.outputText(entry);
    pane.appendChild(line);
  }
}

function openResultWindow(): void {
  const win = window.open("", "_blank", "width=420,height=520");
  if (!win) return;
  win.document.title = `results: ${view?.sessionId ?? ""}`;
  win.document.body.innerHTML = '<h3>Execute results</h3><div id="results"></div>';
  resultWindows.push(win);
  renderResultWindow(win);
}

async function runCurrent(): Promise<void> {
  if (!client || !view) return;
  try {
    const outcome = await runSelection(client, view.sessionId, {
      text: editor.value,
      cursor: editor.selectionStart,
      selectionStart: editor.selectionStart,
      selectionEnd: editor.selectionEnd,
    });
    if (outcome.sent !== null && editor.selectionStart === editor.selectionEnd) {
      editor.selectionStart = editor.selectionEnd = outcome.cursor;
    }
  } catch (err) {
    rpcFailed(err);
  }
}

function addWatchPrompt(): void {
  if (!client || !view) return;
  const expr = window.prompt("Watch expression:");
  if (!expr) return;
  client.call("addWatch", { session: view.sessionId, expr }).catch((err) => {
    if (err instanceof RpcCallError && err.code === 5) {
      toast(`incomplete expression: ${expr}`);
    } else {
      rpcFailed(err);
    }
  });
}

function removeSelectedWatch(): void {
  if (!client || !view || selectedWatch === null) return;
  client
    .call("removeWatch", { session: view.sessionId, id: selectedWatch })
    .catch(rpcFailed);
  selectedWatch = null;
}

function dispatch(action: string): void {
  if (!client) return;
  switch (action) {
    case "runCode":
      void runCurrent();
      break;
    case "selectKernel":
      void showPicker();
      break;
    case "addWatch":
      addWatchPrompt();
      break;
    case "removeWatch":
      removeSelectedWatch();
      break;
    case "showResultWindow":
      openResultWindow();
      break;
    case "interrupt":
      if (view) client.call("interruptKernel", { session: view.sessionId }).catch(rpcFailed);
      break;
    case "quitKernel":
      if (view) client.call("shutdownKernel", { session: view.sessionId }).catch(rpcFailed);
      break;
    case "restartKernel":
      if (view) client.call("restartKernel", { session: view.sessionId }).catch(rpcFailed);
      break;
  }
}

const keymap = defaultKeymap();
document.addEventListener("keydown", (ev) => {
  const action = matchAction(ev, platform, {
    outputPaneFocused: document.activeElement === outputPane,
  }, keymap);
  if (action) {
    ev.preventDefault();
    dispatch(action);
  }
});

for (const [id, action] of [
  ["btn-run", "runCode"],
  ["btn-kernel", "selectKernel"],
  ["btn-watch-add", "addWatch"],
  ["btn-watch-remove", "removeWatch"],
  ["btn-result-window", "showResultWindow"],
  ["btn-interrupt", "interrupt"],
  ["btn-restart", "restartKernel"],
  ["btn-quit", "quitKernel"],
] as const) {
  el<HTMLButtonElement>(id).addEventListener("click", () => dispatch(action));
}

inlineToggle.addEventListener("change", renderOutputs);
