import math
import random

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from haltnav.dispatcher import MacroAction
from haltnav.executor import Observation, Obstacle, OraclePolicy, World, initial_state, sense, step
from haltnav.geometry import Point
from haltnav.protocol import BackendTimeout
from haltnav.rvh import (
    NO_HALT,
    CollisionBuffer,
    ExternalTraversability,
    HaltVerdict,
    RVHConfig,
    beta,
    bottom_up_halt,
    oracle_traversability,
    push_collision,
    reflective_halt,
)

MACRO = MacroAction(0, "traverse_to_passage", "through the door", "L1", target_passage="P12",
                    target_area="R2", target_point=Point(8.5, 4.0))


def obs_with(*passages, collision=0):
    return Observation((0.0, 0.0, 0.0), 0, "R1", collision, (), tuple(passages))


OBSTRUCTED = obs_with(("P12", 1.5, 0.0, True))
CLEAR = obs_with(("P12", 1.5, 0.0, False))
NOTHING = obs_with()


def test_push_examples():
    buf = CollisionBuffer(3, [1, 0, 0])
    push_collision(buf, 0)
    assert buf.to_list() == [0, 0, 0]
    assert push_collision(CollisionBuffer(5), 1).total == 1
    full = CollisionBuffer(7)
    for _ in range(7):
        full.push(1)
    assert full.total == 7 and len(full) == 7
    with pytest.raises(ValueError):
        full.push(2)


def test_bottom_up_examples():
    assert bottom_up_halt(CollisionBuffer(10, [1, 1, 1]), 3)
    assert not bottom_up_halt(CollisionBuffer(10, [1, 1]), 3)
    buf = CollisionBuffer(10, [1, 1, 1] + [0] * 7)
    assert bottom_up_halt(buf, 3)
    buf.push(0)
    assert not bottom_up_halt(buf, 3)


def window_oracle(seq, k, tau_c):
    """Halt flags after each push, from explicit slicing."""
    return [sum(seq[max(0, i + 1 - k): i + 1]) >= tau_c for i in range(len(seq))]


def test_buffer_against_window_oracle():
    rnd = random.Random(5)
    for _ in range(1000):
        k = rnd.randint(1, 25)
        tau_c = rnd.randint(1, k)
        seq = [int(rnd.random() < 0.3) for _ in range(rnd.randint(1, 60))]
        buf = CollisionBuffer(k)
        flags = []
        for c in seq:
            buf.push(c)
            assert len(buf) <= k and 0 <= buf.total <= k
            flags.append(bottom_up_halt(buf, tau_c))
        assert flags == window_oracle(seq, k, tau_c)


@settings(max_examples=200)
@given(seq=st.lists(st.integers(0, 1), min_size=1, max_size=40), pos=st.integers(0, 39),
       k=st.integers(1, 20), tau=st.integers(1, 20))
def test_beta_monotone_in_collisions(seq, pos, k, tau):
    tau = min(tau, k)
    cfg = RVHConfig(k=k, tau_c=tau)
    more = list(seq)
    more[pos % len(seq)] = 1
    for obs in (NOTHING, CLEAR, OBSTRUCTED):
        a = beta(CollisionBuffer(k, seq), obs, MACRO, cfg, random.Random(0))
        b = beta(CollisionBuffer(k, more), obs, MACRO, cfg, random.Random(0))
        assert not (a.halt and not b.halt)


def test_reflective_examples():
    cfg = RVHConfig()
    v = reflective_halt(OBSTRUCTED, MACRO, cfg, random.Random(0))
    assert v == HaltVerdict(True, "reflective", "P12", 1.0)
    assert reflective_halt(NOTHING, MACRO, cfg, random.Random(0)) == NO_HALT
    assert reflective_halt(CLEAR, MACRO, cfg, random.Random(0)) == NO_HALT
    other = obs_with(("P99", 1.0, 0.0, True))
    assert reflective_halt(other, MACRO, cfg, random.Random(0)) == NO_HALT
    assert reflective_halt(OBSTRUCTED, MACRO, RVHConfig(mode="bottom_up_only"), random.Random(0)) == NO_HALT


def test_false_negative_rate_one():
    cfg = RVHConfig(false_negative_rate=1.0)
    rng = random.Random(1)
    assert all(not reflective_halt(o, MACRO, cfg, rng).halt
               for _ in range(200) for o in (OBSTRUCTED, CLEAR, NOTHING))


def test_error_rates_are_seeded_and_calibrated():
    cfg = RVHConfig(false_negative_rate=0.3, false_positive_rate=0.2)
    runs = [[oracle_traversability(OBSTRUCTED, MACRO, cfg, random.Random(s)).halt for s in range(2000)]
            for _ in range(2)]
    assert runs[0] == runs[1]
    assert abs(1 - sum(runs[0]) / 2000 - 0.3) < 0.04
    fp = sum(oracle_traversability(CLEAR, MACRO, cfg, random.Random(s)).halt for s in range(2000))
    assert abs(fp / 2000 - 0.2) < 0.04


def test_beta_examples():
    cfg = RVHConfig(k=10, tau_c=3)
    rng = random.Random(0)
    assert beta(CollisionBuffer(10, [1, 1]), CLEAR, MACRO, cfg, rng) == NO_HALT
    assert beta(CollisionBuffer(10, [1, 1, 1]), NOTHING, MACRO, cfg, rng) == HaltVerdict(True, "bottom_up", None, 1.0)
    both = beta(CollisionBuffer(10, [1, 1, 1]), OBSTRUCTED, MACRO, cfg, rng)
    assert both.halt and both.cause == "bottom_up" and both.blocked_passage is None
    assert beta(CollisionBuffer(10, [1] * 10), OBSTRUCTED, MACRO, RVHConfig(k=10, mode="off"), rng) == NO_HALT
    assert beta(CollisionBuffer(10, [1, 1, 1]), OBSTRUCTED, MACRO,
                RVHConfig(k=10, mode="bottom_up_only"), rng).cause == "bottom_up"


def test_config_and_verdict_invariants():
    for bad in (dict(k=0), dict(k=5, tau_c=6), dict(tau_c=0), dict(tau_s=1.5),
                dict(false_negative_rate=-0.1), dict(mode="sometimes")):
        with pytest.raises(ValueError):
            RVHConfig(**bad)
    with pytest.raises(ValueError):
        HaltVerdict(True)
    with pytest.raises(ValueError):
        HaltVerdict(True, "bottom_up", "P12")
    with pytest.raises(ValueError):
        HaltVerdict(True, "reflective")


@settings(max_examples=40)
@given(dist=st.floats(1.0, 6.0), angle=st.floats(-1.2, 1.2), wobble=st.floats(-0.7, 0.7))
def test_reflective_fires_on_every_approach(pgs, dist, angle, wobble):
    g = pgs["two_room"].source
    w = World(g, 0.05, [Obstacle.blocking(g, "P12")])
    mid = g.passages["P12"].midpoint
    # start west of the door (inside R1), facing roughly toward it
    x, y = mid.x - dist * math.cos(angle), mid.y + dist * math.sin(angle)
    assume(0.4 < x < mid.x - 0.4 and 0.4 < y < 7.6)
    heading = math.atan2(mid.y - y, mid.x - x) + wobble
    s = initial_state(w, x, y, heading)
    pol = OraclePolicy(w)
    cfg = RVHConfig()
    rng = random.Random(0)
    fired_at = None
    for _ in range(300):
        obs = sense(w, s)
        v = reflective_halt(obs, MACRO, cfg, rng)
        if v.halt:
            fired_at = s
            break
        s, _ = step(w, s, pol.act(s, MACRO, obs))
    assert fired_at is not None
    assert math.hypot(fired_at.x - mid.x, fired_at.y - mid.y) <= w.params.sensor_range


class Scripted:
    def __init__(self, replies):
        self.replies = list(replies)
        self.sent = []

    def request(self, payload):
        self.sent.append(payload)
        r = self.replies.pop(0)
        if isinstance(r, Exception):
            raise r
        return r


def test_external_traversability_threshold_and_timeout():
    cfg = RVHConfig(tau_s=0.6)
    notes = []
    client = Scripted([
        {"halt": True, "confidence": 0.7, "blocked_passage": "P12"},
        {"halt": True, "confidence": 0.59, "blocked_passage": "P12"},
        {"halt": True, "confidence": 0.9, "blocked_passage": "ZZ"},
        BackendTimeout("slow"),
    ])
    ext = ExternalTraversability(client, {"P12"}, notes)
    rng = random.Random(0)
    assert ext(CLEAR, MACRO, cfg, rng) == HaltVerdict(True, "reflective", "P12", 0.7)
    assert client.sent[0]["type"] == "traversability" and client.sent[0]["macro_action"] == MACRO.instruction_text
    assert ext(CLEAR, MACRO, cfg, rng) == NO_HALT
    assert ext(CLEAR, MACRO, cfg, rng) == NO_HALT and "unknown passage" in notes[-1]
    assert ext(OBSTRUCTED, MACRO, cfg, rng) == NO_HALT and "timeout" in notes[-1]
    # the oracle answers from now on
    assert ext(OBSTRUCTED, MACRO, cfg, rng).halt and len(client.sent) == 4


def test_external_traversability_error_falls_back():
    notes = []
    ext = ExternalTraversability(Scripted([ConnectionError("gone")]), {"P12"}, notes)
    assert ext(OBSTRUCTED, MACRO, RVHConfig(), random.Random(0)).cause == "reflective"
    assert ext.failed and "fallback" in notes[0]
