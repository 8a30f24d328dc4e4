/** Wire protocol types for the teleoperation WebSocket.
 *
 * Text messages are JSON with a `type` tag; binary messages carry one
 * ultrasound frame as PGM bytes.
 */

export type Phase =
  | "Idle"
  | "WaypointSelection"
  | "Scanning"
  | "MarkReview"
  | "Centering"
  | "NeedleAligning"
  | "Inserting"
  | "Tweaking"
  | "GuidewireInserting"
  | "Retracting"
  | "Complete"
  | "Aborted";

export interface ProbePose {
  x: number;
  y: number;
  z: number;
  yaw: number;
}

export interface Outcome {
  success: boolean;
  failure_mode: string | null;
  tip_offset_fraction: number;
  insertion_angle: number;
}

export interface StateUpdate {
  type: "StateUpdate";
  tick: number;
  phase: Phase;
  probe_pose: ProbePose;
  needle_estimate_px: { u: number; v: number };
  workspace: [number, number][];
  flash: boolean;
  timer_s: number;
  axial_force: number;
  outcome: Outcome | null;
}

export interface Rejection {
  type: "Rejection";
  reason: string;
}

export interface EventMessage {
  type: "Event";
  kind: string;
  tick: number;
  detail: string;
}

export interface BusyMessage {
  type: "Busy";
  reason: string;
}

export type ServerMessage = StateUpdate | Rejection | EventMessage | BusyMessage;

export type ClientMessage =
  | { type: "Hello" }
  | { type: "StartScan"; waypoints: [number, number][] }
  | { type: "SaveMark" }
  | { type: "GotoMark"; index: number }
  | { type: "ClickCenter"; u: number; v: number }
  | { type: "RotateNudge"; direction: "cw" | "ccw"; increment_deg: number }
  | { type: "Nudge"; axis: "lateral" | "normal"; mm: number }
  | { type: "SetAngle"; deg: number }
  | { type: "NeedleTarget"; u: number; v: number }
  | { type: "NeedleTweak"; u: number; v: number }
  | { type: "InsertGuidewire" }
  | { type: "RetractNeedle" }
  | { type: "Abort" };

/** Step number (1-8) shown for each phase in the workflow panel. */
export const STEP_FOR_PHASE: Partial<Record<Phase, number>> = {
  WaypointSelection: 1,
  Scanning: 2,
  MarkReview: 3,
  Centering: 4,
  NeedleAligning: 5,
  Inserting: 5,
  Tweaking: 6,
  GuidewireInserting: 7,
  Retracting: 8,
  Complete: 8,
};

export const STEP_LABELS: string[] = [
  "1 Plan scan path",
  "2 Scan and mark",
  "3 Review marks",
  "4 Center vessel",
  "5 Set angle and insert",
  "6 Tweak depth",
  "7 Insert guidewire",
  "8 Retract needle",
];

export function parseServerMessage(text: string): ServerMessage {
  const data = JSON.parse(text);
  if (typeof data !== "object" || data === null || typeof data.type !== "string") {
    throw new Error("malformed server message");
  }
  return data as ServerMessage;
}
