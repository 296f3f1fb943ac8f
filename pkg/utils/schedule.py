"""
CFP Schedule Builder
Adaptive time-slot lengths, adaptive guard bands and the acceptable delay D,
assembled into a collision-free contention-free period.

Slot layout inside the CFP:
    gb_1, slot_1, gb_12, slot_2, ..., gb_(n-1)n, slot_n, gb_n

Guard bands round half up to whole µs; D rounds down.
"""
import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple, Union
import logging

from utils.energy import ACK_OCTETS, DATA_OVERHEAD_OCTETS, RadioParams
from utils.protocol import MAX_DATA_PAYLOAD

logger = logging.getLogger('ARMACSim.Schedule')

Percent = Union[int, float, Fraction]


class ScheduleError(Exception):
    """Base class for scheduling failures."""


class CfpOverflow(ScheduleError):
    pass


class DuplicateNode(ScheduleError):
    pass


class EmptySchedule(ScheduleError):
    pass


class InvalidLayout(ScheduleError):
    pass


class InvalidRequest(ScheduleError):
    pass


@dataclass(frozen=True)
class FrameLayout:
    """Partition of one frame into CAP, CFP and the monitoring-station period."""
    t_frame: int
    cfp_len: int
    cap_len: int
    t_ms: int

    def __post_init__(self):
        if min(self.t_frame, self.cfp_len, self.cap_len, self.t_ms) < 0:
            raise InvalidLayout("frame periods must be >= 0")
        if self.cfp_len + self.cap_len + self.t_ms != self.t_frame:
            raise InvalidLayout(
                f"cfp_len + cap_len + t_ms = {self.cfp_len + self.cap_len + self.t_ms}, "
                f"t_frame = {self.t_frame}"
            )

    @classmethod
    def from_partition(cls, t_frame: int, cap_len: int, t_ms: int) -> 'FrameLayout':
        return cls(t_frame=t_frame, cfp_len=t_frame - cap_len - t_ms, cap_len=cap_len, t_ms=t_ms)

    # Frame order is CAP, CFP, T^MS
    @property
    def cap_start(self) -> int:
        return 0

    @property
    def cfp_start(self) -> int:
        return self.cap_len

    @property
    def cfp_end(self) -> int:
        return self.cap_len + self.cfp_len

    @property
    def ms_start(self) -> int:
        return self.cfp_end

    def in_cfp(self, offset: int) -> bool:
        return self.cfp_start <= offset < self.cfp_end


@dataclass(frozen=True)
class SlotRequest:
    """A node's Time Slot Request, in arrival order."""
    node: int
    data_rate: int  # bytes per frame, one Data packet per frame

    def __post_init__(self):
        if not 1 <= self.data_rate <= MAX_DATA_PAYLOAD:
            raise InvalidRequest(
                f"node 0x{self.node:04x}: data_rate {self.data_rate} outside 1..{MAX_DATA_PAYLOAD}"
            )

    @property
    def payload_len(self) -> int:
        return self.data_rate


@dataclass(frozen=True)
class TimeSlot:
    node: int
    start: int   # µs from frame start
    length: int

    @property
    def end(self) -> int:
        return self.start + self.length


@dataclass(frozen=True)
class Schedule:
    slots: Tuple[TimeSlot, ...] = ()
    guard_bands: Tuple[int, ...] = ()  # gb_1, interior bands..., gb_n
    f: Percent = 10
    d: int = 0
    cfp_start: int = 0

    @property
    def span(self) -> int:
        return sum(s.length for s in self.slots) + sum(self.guard_bands)

    def slot_for(self, node: int) -> Optional[TimeSlot]:
        for slot in self.slots:
            if slot.node == node:
                return slot
        return None

    def to_csv(self) -> str:
        """node, start_us, len_us, preceding_gb_us; LF line endings."""
        out = io.StringIO()
        writer = csv.writer(out, lineterminator='\n')
        writer.writerow(['node', 'start_us', 'len_us', 'preceding_gb_us'])
        for i, slot in enumerate(self.slots):
            writer.writerow([slot.node, slot.start, slot.length, self.guard_bands[i]])
        return out.getvalue()


def _round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def slot_length(req: SlotRequest, radio: RadioParams, d_margin: int = 0) -> int:
    """Data transmission + turnaround + Ack reception + acceptable-delay margin."""
    data_octets = DATA_OVERHEAD_OCTETS + req.payload_len
    return radio.airtime(data_octets) + radio.t_turnaround + radio.airtime(ACK_OCTETS) + d_margin


def default_margin(provisional: int, f: Percent) -> int:
    """Acceptable delay of a provisional slot, frozen after one iteration."""
    return math.floor(provisional * Fraction(f) / 100)


def interior_guard_band(ts_n: int, ts_next: int, f: Percent) -> int:
    return _round_half_up(Fraction(f) / 100 * Fraction(ts_n + ts_next, 2))


def edge_guard_bands(ts_first: int, ts_last: int, f: Percent) -> Tuple[int, int]:
    return (_round_half_up(Fraction(f) * ts_first / 100),
            _round_half_up(Fraction(f) * ts_last / 100))


def acceptable_delay(slots: Sequence[int], f: Percent) -> int:
    if not slots:
        raise EmptySchedule("acceptable delay needs at least one slot")
    return math.floor(min(slots) * Fraction(f) / 100)


def build_schedule(requests: Sequence[SlotRequest], layout: FrameLayout, f: Percent,
                   radio: RadioParams, d_margin: Optional[int] = None) -> Schedule:
    """
    Place one slot per request in arrival order with adaptive guard bands.

    d_margin=None sizes each slot with default_margin() of its provisional length.
    """
    if f < 0:
        raise ScheduleError(f"guard band factor must be >= 0, got {f}")
    seen = set()
    for req in requests:
        if req.node in seen:
            raise DuplicateNode(f"node 0x{req.node:04x} requested twice")
        seen.add(req.node)

    if not requests:
        return Schedule(f=f, d=0, cfp_start=layout.cfp_start)

    lengths: List[int] = []
    for req in requests:
        if d_margin is None:
            provisional = slot_length(req, radio, 0)
            lengths.append(provisional + default_margin(provisional, f))
        else:
            lengths.append(slot_length(req, radio, d_margin))

    gb_first, gb_last = edge_guard_bands(lengths[0], lengths[-1], f)
    bands = [gb_first]
    bands.extend(interior_guard_band(a, b, f) for a, b in zip(lengths, lengths[1:]))
    bands.append(gb_last)

    span = sum(lengths) + sum(bands)
    if span > layout.cfp_len:
        raise CfpOverflow(f"schedule span {span} µs exceeds CFP of {layout.cfp_len} µs")

    slots = []
    cursor = layout.cfp_start
    for i, (req, length) in enumerate(zip(requests, lengths)):
        cursor += bands[i]
        slots.append(TimeSlot(node=req.node, start=cursor, length=length))
        cursor += length

    schedule = Schedule(slots=tuple(slots), guard_bands=tuple(bands), f=f,
                        d=acceptable_delay(lengths, f), cfp_start=layout.cfp_start)
    logger.debug(f"Built schedule: {len(slots)} slots, span {span} µs, D={schedule.d} µs")
    return schedule
