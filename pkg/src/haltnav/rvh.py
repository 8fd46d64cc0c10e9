"""Halting monitor: collision accumulation (bottom-up) and traversability verdicts (top-down)."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

from haltnav.protocol import BackendTimeout

log = logging.getLogger(__name__)

MODES = ("off", "bottom_up_only", "full")
CAUSES = ("none", "bottom_up", "reflective")


@dataclass(frozen=True)
class RVHConfig:
    k: int = 20
    tau_c: int = 3
    tau_s: float = 0.5
    false_negative_rate: float = 0.0
    false_positive_rate: float = 0.0
    mode: str = "full"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 1 <= self.tau_c <= self.k:
            raise ValueError("tau_c must lie in [1, k]")
        for name in ("tau_s", "false_negative_rate", "false_positive_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


class CollisionBuffer:
    """The last ``k`` collision indicators, oldest first."""

    def __init__(self, k: int, values=()):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self._ring: deque[int] = deque(maxlen=k)
        for v in values:
            self.push(v)

    def push(self, c: int) -> "CollisionBuffer":
        if c not in (0, 1):
            raise ValueError(f"collision indicator must be 0 or 1, got {c!r}")
        self._ring.append(int(c))
        return self

    def clear(self):
        self._ring.clear()

    @property
    def total(self) -> int:
        return sum(self._ring)

    def to_list(self) -> list[int]:
        return list(self._ring)

    def __len__(self):
        return len(self._ring)

    def __repr__(self):
        return f"CollisionBuffer(k={self.k}, {self.to_list()})"


def push_collision(buf: CollisionBuffer, c: int) -> CollisionBuffer:
    return buf.push(c)


def bottom_up_halt(buf: CollisionBuffer, tau_c: int) -> bool:
    return buf.total >= tau_c


@dataclass(frozen=True)
class HaltVerdict:
    halt: bool
    cause: str = "none"
    blocked_passage: str | None = None
    confidence: float = 0.0

    def __post_init__(self):
        if self.cause not in CAUSES:
            raise ValueError(f"unknown cause {self.cause!r}")
        if self.halt != (self.cause != "none"):
            raise ValueError("halt must be true exactly when a cause is given")
        if (self.blocked_passage is not None) != (self.cause == "reflective"):
            raise ValueError("blocked_passage is set iff cause is reflective")

    def to_dict(self) -> dict:
        return {"halt": self.halt, "cause": self.cause, "blocked_passage": self.blocked_passage,
                "confidence": self.confidence}


NO_HALT = HaltVerdict(False)


def oracle_traversability(obs, m, cfg: RVHConfig, rng) -> HaltVerdict:
    """Ground-truth verdict from the obstruction flag, corrupted by seeded error draws."""
    pid = m.target_passage
    seen = obs.passage(pid) if pid else None
    if seen is None:
        return NO_HALT
    obstructed = seen[3]
    draw = rng.random()
    if obstructed:
        fires = not draw < cfg.false_negative_rate
    else:
        fires = draw < cfg.false_positive_rate
    if fires:
        return HaltVerdict(True, "reflective", pid, 1.0)
    return NO_HALT


class ExternalTraversability:
    """Traversability verdicts from a JSON-lines backend.

    A timeout counts as "no halt" for that step; after any backend failure
    the seeded oracle answers for the rest of the episode.
    """

    def __init__(self, client, known_passages, notes: list | None = None):
        self.client = client
        self.known = set(known_passages)
        self.notes = notes if notes is not None else []
        self.failed = False

    def __call__(self, obs, m, cfg: RVHConfig, rng) -> HaltVerdict:
        if self.failed:
            return oracle_traversability(obs, m, cfg, rng)
        try:
            reply = self.client.request({
                "type": "traversability",
                "observation": obs.to_dict(),
                "macro_action": m.instruction_text,
                "target_passage": m.target_passage,
            })
            confidence = float(reply.get("confidence", 1.0 if reply.get("halt") else 0.0))
            pid = reply.get("blocked_passage") or m.target_passage
        except BackendTimeout as exc:
            self.failed = True
            x, y, _ = obs.pose
            self.notes.append(f"traversability timeout at ({x:.2f}, {y:.2f}): no halt; oracle takes over")
            log.warning("traversability backend timed out (%s)", exc)
            return NO_HALT
        except Exception as exc:  # noqa: BLE001 - any backend fault means fallback
            self.failed = True
            self.notes.append(f"traversability fallback to oracle: {exc}")
            log.warning("traversability backend failed (%s); oracle takes over", exc)
            return oracle_traversability(obs, m, cfg, rng)
        if not 0.0 <= confidence <= 1.0:
            confidence = min(max(confidence, 0.0), 1.0)
        if confidence < cfg.tau_s:
            return NO_HALT
        if pid not in self.known:
            self.notes.append(f"ignored halt naming unknown passage {pid!r}")
            return NO_HALT
        return HaltVerdict(True, "reflective", pid, confidence)


def reflective_halt(obs, m, cfg: RVHConfig, rng, backend=None) -> HaltVerdict:
    if cfg.mode != "full":
        return NO_HALT
    return (backend or oracle_traversability)(obs, m, cfg, rng)


def beta(buf: CollisionBuffer, obs, m, cfg: RVHConfig, rng, backend=None) -> HaltVerdict:
    """Termination indicator: bottom-up OR reflective, bottom-up labelled first."""
    if cfg.mode == "off":
        return NO_HALT
    verdict = reflective_halt(obs, m, cfg, rng, backend)
    if bottom_up_halt(buf, cfg.tau_c):
        return HaltVerdict(True, "bottom_up", None, 1.0)
    return verdict
