// Default key chords. These reproduce the shipped shortcut table exactly;
// the beautify action from that table is intentionally unbound.

export type Action =
  | "selectKernel"
  | "runCode"
  | "addWatch"
  | "removeWatch"
  | "showResultWindow"
  | "interrupt"
  | "quitKernel"
  | "restartKernel";

export type Platform = "mac" | "other";

export interface Chord {
  mac: string;
  other: string;
}

export function defaultKeymap(): Record<Action, Chord> {
  return {
    selectKernel: { mac: "Shift+Ctrl+K", other: "Shift+Ctrl+K" },
    runCode: { mac: "Cmd+Enter", other: "Ctrl+Enter" },
    addWatch: { mac: "Shift+Ctrl+W", other: "Shift+Ctrl+W" },
    removeWatch: { mac: "Shift+Ctrl+E", other: "Shift+Ctrl+E" },
    showResultWindow: { mac: "Shift+Ctrl+O", other: "Shift+Ctrl+O" },
    interrupt: { mac: "Ctrl+C", other: "Ctrl+C" },
    quitKernel: { mac: "Shift+Ctrl+Q", other: "Shift+Ctrl+Q" },
    restartKernel: { mac: "Shift+Ctrl+R", other: "Shift+Ctrl+R" },
  };
}

export interface KeyLike {
  key: string;
  ctrlKey: boolean;
  shiftKey: boolean;
  metaKey: boolean;
  altKey: boolean;
}

export interface KeyContext {
  outputPaneFocused: boolean;
}

function chordOf(e: KeyLike): string {
  const parts: string[] = [];
  if (e.shiftKey) parts.push("Shift");
  if (e.ctrlKey) parts.push("Ctrl");
  if (e.metaKey) parts.push("Cmd");
  if (e.altKey) parts.push("Alt");
  const key = e.key.length === 1 ? e.key.toUpperCase() : e.key;
  parts.push(key);
  return parts.join("+");
}

/**
 * Map a key event to an action, or null. The interrupt chord only applies
 * while the output pane has focus, so plain copy keeps working elsewhere.
 */
export function matchAction(
  e: KeyLike,
  platform: Platform,
  context: KeyContext,
  keymap: Record<Action, Chord> = defaultKeymap(),
): Action | null {
  const pressed = chordOf(e);
  for (const action of Object.keys(keymap) as Action[]) {
    if (keymap[action][platform] !== pressed) continue;
    if (action === "interrupt" && !context.outputPaneFocused) continue;
    return action;
  }
  return null;
}
