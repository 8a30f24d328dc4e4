/** Click dispatch: gesture -> exactly one protocol message, or zero.
 *
 * Modes bind to procedure phases; wrong-phase clicks and needle-mode
 * clicks outside the advertised workspace polygon are refused locally
 * with a reason (the server remains the authority either way).
 */

import { ClientMessage, Phase } from "./protocol.js";

export type ClickMode = "center" | "needle" | "tweak";

const PHASES_FOR_MODE: Record<ClickMode, Phase[]> = {
  center: ["Centering"],
  needle: ["NeedleAligning", "Tweaking"],
  tweak: ["Tweaking"],
};

/** Which click mode the console arms for a given phase. */
export function modeForPhase(phase: Phase): ClickMode | null {
  if (phase === "Centering") return "center";
  if (phase === "NeedleAligning") return "needle";
  if (phase === "Tweaking") return "tweak";
  return null;
}

/** Ray-crossing point-in-polygon test in pixel coordinates. */
export function pointInPolygon(u: number, v: number, poly: [number, number][]): boolean {
  let inside = false;
  for (let i = 0, j = poly.length - 1; i < poly.length; j = i++) {
    const [ui, vi] = poly[i];
    const [uj, vj] = poly[j];
    if (vi > v !== vj > v && u < ((uj - ui) * (v - vi)) / (vj - vi) + ui) {
      inside = !inside;
    }
  }
  return inside;
}

export interface DispatchResult {
  message: ClientMessage | null;
  refusal: string | null;
}

export function dispatchClick(
  u: number,
  v: number,
  mode: ClickMode,
  phase: Phase,
  workspace: [number, number][],
): DispatchResult {
  if (!PHASES_FOR_MODE[mode].includes(phase)) {
    return { message: null, refusal: `${mode} click not available in phase ${phase}` };
  }
  if (mode === "center") {
    return { message: { type: "ClickCenter", u, v }, refusal: null };
  }
  if (mode === "needle") {
    if (!pointInPolygon(u, v, workspace)) {
      return { message: null, refusal: "target outside needle workspace" };
    }
    return { message: { type: "NeedleTarget", u, v }, refusal: null };
  }
  return { message: { type: "NeedleTweak", u, v }, refusal: null };
}
