"""Session log: JSON-lines records with a header, plus snapshot hashing.

The log captures everything needed to reproduce a session bit-for-bit:
the seed, hashes of the phantom and device config, every applied command,
10 Hz state snapshots with a 64-bit FNV-1a hash of the canonical state
serialization, and all emitted events.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .mechanism import Event, EventKind, MechanismState
from .procedure import Outcome, ProcedureState

LOG_FORMAT = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def _pack_floats(*values: float) -> bytes:
    return struct.pack(f">{len(values)}d", *values)


def snapshot_hash(mech: MechanismState, proc: ProcedureState) -> str:
    """FNV-1a 64 over a canonical binary serialization of the state."""
    blob = _pack_floats(*mech.probe_position, mech.probe_yaw, mech.l_act,
                        mech.theta_act, mech.axial_force)
    blob += struct.pack(">q", mech.tick)
    blob += proc.phase.value.encode()
    for mark in proc.marks:
        blob += _pack_floats(*[float(x) for x in mark])
    for ev in proc.events:
        blob += ev.kind.value.encode() + struct.pack(">q", ev.tick) \
            + ev.detail.encode()
    if proc.outcome is not None:
        o = proc.outcome
        blob += struct.pack(">?", o.success)
        blob += (o.failure_mode.value if o.failure_mode else "-").encode()
        blob += _pack_floats(o.tip_offset_fraction, o.insertion_angle)
    return f"{fnv1a64(blob):016x}"


@dataclass
class SessionLog:
    """Append-only in-memory log, serializable to JSON lines."""
    seed: int
    phantom_hash: str
    config_hash: str
    records: list[dict] = field(default_factory=list)

    def header(self) -> dict:
        return {"format": LOG_FORMAT, "seed": self.seed,
                "phantom_hash": self.phantom_hash,
                "config_hash": self.config_hash}

    def append(self, tick: int, kind: str, payload: dict) -> None:
        if self.records and tick < self.records[-1]["tick"]:
            raise ValueError("log ticks must be nondecreasing")
        self.records.append({"tick": tick, "kind": kind, "payload": payload})

    def command(self, tick: int, message: dict) -> None:
        self.append(tick, "command", message)

    def snapshot(self, tick: int, state_hash: str, mech: MechanismState,
                 proc: ProcedureState) -> None:
        self.append(tick, "snapshot", {
            "hash": state_hash,
            "probe": list(map(float, mech.probe_position)) + [mech.probe_yaw],
            "l_act": mech.l_act, "theta_act": mech.theta_act,
            "axial_force": mech.axial_force, "phase": proc.phase.value,
        })

    def event(self, ev: Event) -> None:
        self.append(ev.tick, "event", {"event": ev.kind.value,
                                       "detail": ev.detail})

    def frame_ref(self, tick: int, path: str) -> None:
        self.append(tick, "frame", {"path": path})

    def outcome(self, tick: int, outcome: Outcome) -> None:
        self.append(tick, "outcome", {
            "success": outcome.success,
            "failure_mode": outcome.failure_mode.value
            if outcome.failure_mode else None,
            "tip_offset_fraction": outcome.tip_offset_fraction,
            "insertion_angle": outcome.insertion_angle,
        })

    # -- serialization -----------------------------------------------------

    def dumps(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [json.dumps(r, sort_keys=True) for r in self.records]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "SessionLog":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty session log")
        header = json.loads(lines[0])
        if header.get("format") != LOG_FORMAT:
            raise ValueError(f"unsupported log format: {header.get('format')!r}")
        log = cls(seed=header["seed"], phantom_hash=header["phantom_hash"],
                  config_hash=header["config_hash"])
        for ln in lines[1:]:
            rec = json.loads(ln)
            log.append(rec["tick"], rec["kind"], rec["payload"])
        return log

    @classmethod
    def load(cls, path) -> "SessionLog":
        with open(path) as f:
            return cls.loads(f.read())

    def overall_hash(self) -> str:
        """Hash over all snapshot hashes: one value per session trajectory."""
        blob = "".join(r["payload"]["hash"] for r in self.records
                       if r["kind"] == "snapshot").encode()
        return f"{fnv1a64(blob):016x}"
