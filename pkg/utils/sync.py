"""
Drift-Value Synchronization
The Central Node compares a Data packet's arrival with its expected arrival
and answers with a plain Ack, or with a SyncAck carrying the drift value when
the difference exceeds the acceptable delay D.

Sign convention: delta_t = expected - current, so a positive value means the
packet arrived early. A node applies the drift value additively to its wake
offset; a late node (negative dv) therefore wakes earlier next cycle.
"""
from dataclasses import dataclass
from typing import List

from utils.engine import ClockModel


@dataclass(frozen=True)
class ArrivalObservation:
    node: int
    expected_arrival: int  # absolute µs, CN clock
    current_arrival: int


@dataclass(frozen=True)
class DriftDecision:
    delta_t: int
    dv: int
    send_sync_ack: bool


def delta_t(obs: ArrivalObservation) -> int:
    return obs.expected_arrival - obs.current_arrival


def drift_value(delta: int, d: int) -> DriftDecision:
    """Zero inside the tolerance (|dT| <= D), the full difference beyond it."""
    if d < 0:
        raise ValueError(f"acceptable delay must be >= 0, got {d}")
    if abs(delta) > d:
        return DriftDecision(delta_t=delta, dv=delta, send_sync_ack=True)
    return DriftDecision(delta_t=delta, dv=0, send_sync_ack=False)


def apply_drift(node_wake_offset: int, dv: int, t_frame: int) -> int:
    return (node_wake_offset + dv) % t_frame


def drift_trace(skew_ppm: int, t_frame: int, d: int, n_frames: int,
                slot_offset: int = 0) -> List[DriftDecision]:
    """
    Closed-form drift-only run of one node against a perfect CN clock.

    The node's local clock and the CN clock agree at frame 0; the node then
    transmits at `slot_offset` of every frame by its own clock and applies
    each drift value it receives. Returns the decision for frames 1..n_frames.
    """
    clock = ClockModel(skew_ppm=skew_ppm)
    correction = 0
    decisions = []
    for k in range(1, n_frames + 1):
        expected = k * t_frame + slot_offset
        current = clock.local_to_global(expected + correction)
        decision = drift_value(delta_t(ArrivalObservation(0, expected, current)), d)
        correction += decision.dv
        decisions.append(decision)
    return decisions
