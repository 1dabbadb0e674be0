/** Keyboard shortcuts for the review loop.
 *
 * 1-9 assign a genus by catalog order; a/x decide; arrows or j/k move
 * through the queue; [ ] flip focal planes; +/- zoom.
 */

export type KeyAction =
  | { type: "accept" }
  | { type: "reject" }
  | { type: "next" }
  | { type: "previous" }
  | { type: "assign_genus"; index: number }
  | { type: "plane_up" }
  | { type: "plane_down" }
  | { type: "zoom_in" }
  | { type: "zoom_out" }
  | { type: "confirm_conflict" }
  | { type: "dismiss_conflict" };

export function keyToAction(key: string): KeyAction | null {
  if (key >= "1" && key <= "9") {
    return { type: "assign_genus", index: key.charCodeAt(0) - "1".charCodeAt(0) };
  }
  switch (key) {
    case "a":
      return { type: "accept" };
    case "x":
    case "r":
      return { type: "reject" };
    case "ArrowRight":
    case "j":
      return { type: "next" };
    case "ArrowLeft":
    case "k":
      return { type: "previous" };
    case "]":
      return { type: "plane_up" };
    case "[":
      return { type: "plane_down" };
    case "+":
    case "=":
      return { type: "zoom_in" };
    case "-":
      return { type: "zoom_out" };
    case "Enter":
      return { type: "confirm_conflict" };
    case "Escape":
      return { type: "dismiss_conflict" };
    default:
      return null;
  }
}

/** Ignore shortcuts while the reviewer is typing in a form field. */
export function isTypingTarget(target: EventTarget | null): boolean {
  if (typeof HTMLElement === "undefined" || !(target instanceof HTMLElement)) return false;
  return target instanceof HTMLInputElement || target instanceof HTMLTextAreaElement || target.isContentEditable;
}
