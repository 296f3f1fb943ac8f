"""
Discrete-Event Engine
Deterministic event queue on integer microsecond ticks, skewed node clocks,
seeded random streams and the shared radio medium with Bernoulli packet loss
and collision detection.

Ordering: events pop in (at, seq) order, so simultaneous events run FIFO.
Channel draws: one loss draw per transmission, taken when it starts.
"""
import heapq
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Callable, Dict, FrozenSet, List, Optional, Sequence

import numpy as np

from utils.protocol import Packet, PacketKind, decode_packet, encode_packet

logger = logging.getLogger('ARMACSim.Engine')

PPM = 1_000_000
DEFAULT_MAX_SKEW_PPM = 500


class EngineError(Exception):
    """Base class for engine failures."""


class EventInPast(EngineError):
    pass


def _round_div(num: int, den: int) -> int:
    """num / den rounded to the nearest integer, ties up (den > 0)."""
    return (2 * num + den) // (2 * den)


# ==================== CLOCKS ====================

@dataclass(frozen=True)
class ClockModel:
    """A node oscillator: constant skew and a fixed phase offset against true time."""
    skew_ppm: int = 0
    phase_offset: int = 0

    def check(self, max_skew_ppm: int = DEFAULT_MAX_SKEW_PPM):
        if abs(self.skew_ppm) > max_skew_ppm:
            raise ValueError(f"clock skew {self.skew_ppm} ppm exceeds bound {max_skew_ppm} ppm")

    def local_to_global(self, local: int) -> int:
        return local_to_global(self, local)

    def global_to_local(self, ticks: int) -> int:
        return global_to_local(self, ticks)


def local_to_global(c: ClockModel, local: int) -> int:
    """global = (local - phase) / (1 + skew * 1e-6), nearest tick."""
    return _round_div((local - c.phase_offset) * PPM, PPM + c.skew_ppm)


def global_to_local(c: ClockModel, ticks: int) -> int:
    """local = global * (1 + skew * 1e-6) + phase, nearest tick."""
    return _round_div(ticks * (PPM + c.skew_ppm), PPM) + c.phase_offset


# ==================== RANDOM STREAMS ====================

class StreamId(IntEnum):
    CHANNEL = 0
    JITTER = 1
    TRAFFIC = 2
    BACKOFF = 3


def make_stream(seed: int, stream: StreamId, index: int = 0) -> np.random.Generator:
    """Independent generator for (seed, stream, index); streams never share state."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(stream), index)))


@dataclass
class ChannelModel:
    """Bernoulli packet-error channel."""
    per: float
    rng: np.random.Generator

    def __post_init__(self):
        if not 0.0 <= self.per <= 1.0:
            raise ValueError(f"per must be within [0, 1], got {self.per}")

    def draw_loss(self) -> bool:
        return bool(self.rng.random() < self.per)


# ==================== EVENT QUEUE ====================

@dataclass
class Event:
    at: int
    seq: int
    target: str
    kind: str
    action: Callable[..., Any]
    args: tuple = ()
    cancelled: bool = False

    def cancel(self):
        self.cancelled = True


class Simulator:
    """Single-threaded event loop on integer µs ticks."""

    def __init__(self, trace: bool = False):
        self._queue: List[tuple] = []
        self._seq = 0
        self.now = 0
        self.processed = 0
        self.trace_enabled = trace
        self.trace_lines: List[str] = []

    def schedule(self, at: int, target: str, kind: str, action: Callable[..., Any], *args) -> Event:
        if at < self.now:
            raise EventInPast(f"{target}/{kind} scheduled at {at} before now={self.now}")
        event = Event(at, self._seq, target, kind, action, args)
        heapq.heappush(self._queue, (at, self._seq, event))
        self._seq += 1
        return event

    def run_until(self, end: int) -> int:
        """Process every event with at <= end; returns the number processed."""
        count = 0
        while self._queue and self._queue[0][0] <= end:
            at, _, event = heapq.heappop(self._queue)
            if event.cancelled:
                continue
            self.now = at
            event.action(*event.args)
            count += 1
        self.now = max(self.now, end)
        self.processed += count
        return count

    @property
    def pending(self) -> int:
        return sum(1 for _, _, e in self._queue if not e.cancelled)

    def note(self, entity: str, event: str, detail: str = ''):
        """Append a line to the protocol trace when tracing is on."""
        if self.trace_enabled:
            self.trace_lines.append(f"{self.now},{entity},{event},{detail}")


# ==================== MEDIUM ====================

@dataclass
class Transmission:
    packet: Packet
    frame: bytes
    sender: Any
    receivers: Sequence[Any]
    start: int
    end: int
    lost: bool
    collided: bool = False

    @property
    def delivered(self) -> bool:
        return not (self.lost or self.collided)

    @property
    def octets(self) -> int:
        return len(self.frame)


@dataclass
class MediumStats:
    sent: Dict[PacketKind, int] = field(default_factory=dict)
    lost: Dict[PacketKind, int] = field(default_factory=dict)
    collided: Dict[PacketKind, int] = field(default_factory=dict)
    cfp_collisions: int = 0

    def bump(self, table: Dict[PacketKind, int], kind: PacketKind):
        table[kind] = table.get(kind, 0) + 1


class Medium:
    """
    The RF channel the Central Node operates on.

    Receivers get `on_receive(tx, packet)` at the transmission end when the
    packet was neither lost nor collided.
    """

    HISTORY_US = 20_000

    def __init__(self, sim: Simulator, channel: ChannelModel, t_byte: int,
                 lossy_kinds: Optional[FrozenSet[PacketKind]] = None,
                 t_frame: Optional[int] = None, cfp_window: Optional[tuple] = None):
        self.sim = sim
        self.channel = channel
        self.t_byte = t_byte
        self.lossy_kinds = frozenset(PacketKind) if lossy_kinds is None else frozenset(lossy_kinds)
        self.t_frame = t_frame
        self.cfp_window = cfp_window
        self.stats = MediumStats()
        self._recent: List[Transmission] = []

    def airtime(self, packet_or_octets) -> int:
        if isinstance(packet_or_octets, int):
            return packet_or_octets * self.t_byte
        return len(encode_packet(packet_or_octets)) * self.t_byte

    def transmit(self, packet: Packet, sender: Any, receivers: Sequence[Any]) -> Transmission:
        """Put a packet on air now; collisions mark every overlapping transmission."""
        frame = encode_packet(packet)
        start = self.sim.now
        # The loss draw is consumed for every transmission, lossy kind or not
        lost = self.channel.draw_loss() and packet.kind in self.lossy_kinds
        tx = Transmission(packet, frame, sender, tuple(receivers), start,
                          start + len(frame) * self.t_byte, lost)
        self._prune(start)
        for other in self._recent:
            if other.end > start:
                self._mark_collided(other)
                self._mark_collided(tx)
        self._recent.append(tx)
        self.stats.bump(self.stats.sent, packet.kind)
        if lost:
            self.stats.bump(self.stats.lost, packet.kind)
        self.sim.schedule(tx.end, getattr(sender, 'name', 'medium'), 'tx_end', self._finish, tx)
        self.sim.note(getattr(sender, 'name', '?'), 'tx', f"{packet.kind.name} {len(frame)}B")
        return tx

    def busy(self, start: int, end: int) -> bool:
        """Whether any transmission overlaps [start, end)."""
        return any(tx.start < end and tx.end > start for tx in self._recent)

    def _mark_collided(self, tx: Transmission):
        if tx.collided:
            return
        tx.collided = True
        self.stats.bump(self.stats.collided, tx.packet.kind)
        if self.t_frame and self.cfp_window:
            offset = tx.start % self.t_frame
            if self.cfp_window[0] <= offset < self.cfp_window[1]:
                self.stats.cfp_collisions += 1
                logger.warning(f"CFP collision at {tx.start} µs: {tx.packet.kind.name} "
                               f"from {getattr(tx.sender, 'name', '?')}")

    def _prune(self, now: int):
        horizon = now - self.HISTORY_US
        if self._recent and self._recent[0].end < horizon:
            self._recent = [tx for tx in self._recent if tx.end >= horizon]

    def _finish(self, tx: Transmission):
        if not tx.delivered:
            reason = 'collided' if tx.collided else 'lost'
            self.sim.note(getattr(tx.sender, 'name', '?'), reason, tx.packet.kind.name)
            return
        packet = decode_packet(tx.frame)
        for receiver in tx.receivers:
            receiver.on_receive(tx, packet)
