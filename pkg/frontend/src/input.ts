/**
 * Keyboard capture with a per-tick latest-wins throttle, mirroring the
 * server's one-buffered-action-per-tick rule so nothing is wasted on the
 * wire.
 */

import { PlayerAction } from "./protocol.js";

export const KEY_BINDINGS: Record<string, PlayerAction> = {
  ArrowUp: "up",
  ArrowDown: "down",
  ArrowLeft: "left",
  ArrowRight: "right",
  KeyW: "up",
  KeyS: "down",
  KeyA: "left",
  KeyD: "right",
  KeyB: "build",
};

export function actionForKey(code: string): PlayerAction | null {
  return KEY_BINDINGS[code] ?? null;
}

export class InputThrottle {
  private pending: PlayerAction | null = null;
  private gated = true;

  /** Only the playing phase may emit actions. */
  setGate(open: boolean) {
    this.gated = !open;
    if (this.gated) this.pending = null;
  }

  capture(code: string): boolean {
    if (this.gated) return false;
    const action = actionForKey(code);
    if (action === null) return false;
    this.pending = action;          // latest key within a tick wins
    return true;
  }

  /** Pop at most one action for the current tick. */
  drain(): PlayerAction | null {
    const out = this.pending;
    this.pending = null;
    return out;
  }
}
