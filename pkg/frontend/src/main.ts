/** Browser entry point: wires the socket, canvas, and controls together. */

import { ConsoleClient } from "./client.js";
import { dispatchClick, modeForPhase } from "./dispatch.js";
import { parsePgm, toRgba } from "./pgm.js";
import { STEP_LABELS } from "./protocol.js";
import {
  activeStep,
  applyFrame,
  applyMessage,
  initialView,
  isStale,
  timerText,
  ViewState,
} from "./view.js";

const $ = (id: string) => document.getElementById(id)!;

let view: ViewState = initialView();
let lastClick: { u: number; v: number } | null = null;

const canvas = $("image") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;

const url = `ws://${location.hostname || "127.0.0.1"}:8765/ws`;
const ws = new WebSocket(url);
ws.binaryType = "arraybuffer";

const client = new ConsoleClient(ws as never, {
  onMessage(msg) {
    view = applyMessage(view, msg);
    if (msg.type === "Rejection" || msg.type === "Busy") {
      setStatus(msg.reason, "warn");
    }
    render();
  },
  onFrame(bytes) {
    view = applyFrame(view, parsePgm(bytes), performance.now());
    render();
  },
  onClose() {
    setStatus("disconnected", "warn");
  },
});

ws.onopen = () => {
  setStatus("connected", "ok");
  client.send({ type: "Hello" });
};

function setStatus(text: string, cls: string) {
  const el = $("status");
  el.textContent = text;
  el.className = cls;
}

canvas.addEventListener("click", (ev) => {
  const rect = canvas.getBoundingClientRect();
  const u = ((ev.clientX - rect.left) * canvas.width) / rect.width;
  const v = ((ev.clientY - rect.top) * canvas.height) / rect.height;
  const phase = view.update?.phase ?? "Idle";
  const mode = modeForPhase(phase);
  if (mode === null) {
    setStatus(`clicks are not armed in phase ${phase}`, "warn");
    return;
  }
  const result = dispatchClick(u, v, mode, phase, view.update?.workspace ?? []);
  if (result.message === null) {
    setStatus(result.refusal ?? "refused", "warn");
    flashCue(u, v);
    return;
  }
  lastClick = { u, v };
  client.send(result.message);
});

let cue: { u: number; v: number; until: number } | null = null;
function flashCue(u: number, v: number) {
  cue = { u, v, until: performance.now() + 600 };
  render();
}

function bindButton(id: string, make: () => Parameters<typeof client.send>[0]) {
  $(id).addEventListener("click", () => client.send(make()));
}

bindButton("scan", () => ({
  type: "StartScan",
  waypoints: [
    [20, 50],
    [140, 50],
  ],
}));
bindButton("mark", () => ({ type: "SaveMark" }));
bindButton("goto", () => ({ type: "GotoMark", index: 0 }));
bindButton("ccw", () => ({ type: "RotateNudge", direction: "ccw", increment_deg: 2 }));
bindButton("cw", () => ({ type: "RotateNudge", direction: "cw", increment_deg: 2 }));
bindButton("nudge-left", () => ({ type: "Nudge", axis: "lateral", mm: -2 }));
bindButton("nudge-right", () => ({ type: "Nudge", axis: "lateral", mm: 2 }));
bindButton("nudge-out", () => ({ type: "Nudge", axis: "normal", mm: 2 }));
bindButton("nudge-in", () => ({ type: "Nudge", axis: "normal", mm: -2 }));
bindButton("angle", () => ({
  type: "SetAngle",
  deg: Number(($("deg") as HTMLInputElement).value) || 40,
}));
bindButton("wire", () => ({ type: "InsertGuidewire" }));
bindButton("retract", () => ({ type: "RetractNeedle" }));
bindButton("abort", () => ({ type: "Abort" }));

function render() {
  ctx.fillStyle = "#000";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  if (view.frame) {
    const img = new ImageData(toRgba(view.frame), view.frame.width, view.frame.height);
    ctx.putImageData(img, 0, 0);
  }
  const u = view.update;
  if (u) {
    // workspace polygon (green), vertices exactly as advertised
    if (u.workspace.length >= 3) {
      ctx.strokeStyle = "rgba(0, 255, 0, 0.8)";
      ctx.lineWidth = 1.5;
      ctx.beginPath();
      u.workspace.forEach(([pu, pv], i) => (i ? ctx.lineTo(pu, pv) : ctx.moveTo(pu, pv)));
      ctx.closePath();
      ctx.stroke();
    }
    // needle tip estimate and axis (cyan)
    const { u: tu, v: tv } = u.needle_estimate_px;
    ctx.strokeStyle = "cyan";
    ctx.beginPath();
    ctx.arc(tu, tv, 6, 0, 2 * Math.PI);
    ctx.stroke();
    ctx.beginPath();
    ctx.moveTo(128, 0); // pivot column: -12 mm lateral at 16 px/mm from center
    ctx.lineTo(tu, tv);
    ctx.stroke();
  }
  if (lastClick) {
    ctx.strokeStyle = "yellow";
    ctx.beginPath();
    ctx.arc(lastClick.u, lastClick.v, 4, 0, 2 * Math.PI);
    ctx.stroke();
  }
  if (cue && performance.now() < cue.until) {
    ctx.strokeStyle = "red";
    ctx.beginPath();
    ctx.arc(cue.u, cue.v, 8, 0, 2 * Math.PI);
    ctx.stroke();
  }

  $("timer").textContent = timerText(view);
  $("flash").className = view.flash ? "flash on" : "flash";
  $("force").textContent = `${(u?.axial_force ?? 0).toFixed(2)} N`;
  $("phase").textContent = u?.phase ?? "-";
  $("stale").style.display = isStale(view, performance.now()) ? "block" : "none";

  const step = activeStep(u?.phase ?? null);
  const list = $("steps");
  list.innerHTML = "";
  STEP_LABELS.forEach((label, i) => {
    const li = document.createElement("li");
    li.textContent = label;
    if (step === i + 1) li.className = "active";
    list.appendChild(li);
  });

  if (u?.outcome) {
    const o = u.outcome;
    $("outcome").textContent = o.success
      ? `SUCCESS (offset ${o.tip_offset_fraction.toFixed(2)}r)`
      : `FAILURE: ${o.failure_mode}`;
  }
}

setInterval(render, 250); // keep the stale banner honest between frames
