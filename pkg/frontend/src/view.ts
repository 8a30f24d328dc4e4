/** Console view state: a pure reduction of server messages.
 *
 * Overlays always reflect the latest StateUpdate or older, never a
 * client-side prediction; the view is reconstructible from scratch after a
 * reconnect from the next StateUpdate alone.
 */

import { PgmImage } from "./pgm.js";
import { Phase, ServerMessage, StateUpdate, STEP_FOR_PHASE } from "./protocol.js";

export const STALE_AFTER_MS = 1000;

export interface ViewState {
  frame: PgmImage | null;
  frameReceivedAt: number | null;
  update: StateUpdate | null;
  flash: boolean;
  lastRejection: string | null;
  busy: boolean;
  events: { kind: string; tick: number; detail: string }[];
}

export function initialView(): ViewState {
  return {
    frame: null,
    frameReceivedAt: null,
    update: null,
    flash: false,
    lastRejection: null,
    busy: false,
    events: [],
  };
}

export function applyMessage(view: ViewState, msg: ServerMessage): ViewState {
  switch (msg.type) {
    case "StateUpdate":
      return { ...view, update: msg, flash: msg.flash, lastRejection: null };
    case "Rejection":
      return { ...view, lastRejection: msg.reason };
    case "Event":
      return { ...view, events: [...view.events, { kind: msg.kind, tick: msg.tick, detail: msg.detail }] };
    case "Busy":
      return { ...view, busy: true, lastRejection: msg.reason };
  }
}

export function applyFrame(view: ViewState, frame: PgmImage, now: number): ViewState {
  return { ...view, frame, frameReceivedAt: now };
}

export function isStale(view: ViewState, now: number): boolean {
  if (view.frameReceivedAt === null) return false;
  return now - view.frameReceivedAt > STALE_AFTER_MS;
}

export function activeStep(phase: Phase | null): number | null {
  if (phase === null) return null;
  return STEP_FOR_PHASE[phase] ?? null;
}

export function timerText(view: ViewState): string {
  const s = view.update?.timer_s ?? 0;
  const m = Math.floor(s / 60);
  const rest = (s - 60 * m).toFixed(1).padStart(4, "0");
  return `${m}:${rest}`;
}
