"""
Slotted CSMA/CA Baseline
A minimal contention MAC standing in for the low-rate WPAN standard in the
energy comparison. It is not a conformant implementation: no beacons, no
superframe GTS, no association, a single CCA per backoff.

Every node wakes once per frame at its own traffic phase, contends with
binary exponential backoff on a 320 µs grid, sends one Data packet and waits
for the coordinator's Ack. Radio time is charged with the same RadioParams as
AR-MAC so the comparison isolates MAC behaviour.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional

from mac.common import RunContext
from utils.energy import EnergyLedger, RadioMeter
from utils.engine import Event, StreamId, Transmission
from utils.protocol import CN_ADDRESS, Packet, PacketKind, ack_packet, data_packet
from utils.reporting import NodeCounters, NodeReport

logger = logging.getLogger('ARMACSim.CSMA')


@dataclass(frozen=True)
class CsmaParams:
    min_be: int = 3
    max_be: int = 5
    max_backoffs: int = 4
    max_retries: int = 3
    backoff_unit: int = 320   # µs
    cca_len: int = 128        # µs
    spread_us: int = 20_000   # node traffic phases are uniform in [0, spread_us)

    def __post_init__(self):
        for name in ('min_be', 'max_be', 'max_backoffs', 'max_retries', 'backoff_unit', 'cca_len'):
            if getattr(self, name) <= 0:
                raise ValueError(f"csma.{name} must be > 0")
        if self.min_be > self.max_be:
            raise ValueError("csma.min_be must not exceed csma.max_be")
        if self.spread_us < 0:
            raise ValueError("csma.spread_us must be >= 0")


class CsmaOutcome(Enum):
    SENT = 'sent'
    CHANNEL_ACCESS_FAILURE = 'channel_access_failure'
    RETRIES_EXHAUSTED = 'retries_exhausted'


class Coordinator:
    """Acknowledges every Data packet it hears, one turnaround after it ends."""
    name = 'COORD'

    def __init__(self, ctx: RunContext):
        self.sim = ctx.sim
        self.medium = ctx.medium
        self.turnaround = ctx.radio.t_turnaround
        self.address = CN_ADDRESS

    def on_receive(self, tx: Transmission, packet: Packet):
        if packet.kind != PacketKind.DATA:
            return
        self.sim.schedule(tx.end + self.turnaround, self.name, 'ack', self._send_ack, tx.sender)

    def _send_ack(self, node: 'CsmaNode'):
        self.medium.transmit(ack_packet(self.address), self, [node])


class CsmaNode:

    def __init__(self, run: 'CsmaRun', index: int):
        ctx = run.ctx
        cfg = ctx.cfg
        self.run = run
        self.sim = ctx.sim
        self.medium = ctx.medium
        self.radio = ctx.radio
        self.params: CsmaParams = cfg.csma
        self.t_frame = cfg.t_frame
        self.n_cycles = cfg.n_cycles
        self.ack_timeout = cfg.ack_timeout
        self.index = index
        self.address = index + 1
        self.name = f"N{self.address}"
        self.data_rate = cfg.data_rate[index]
        self.rng = ctx.stream(StreamId.BACKOFF, index)
        spread = self.params.spread_us
        self.phase_us = int(ctx.stream(StreamId.TRAFFIC, index).integers(0, spread)) if spread else 0

        self.counters = NodeCounters()
        self.ledger = EnergyLedger()
        self.meter = RadioMeter(self.radio, self.ledger)
        self.cycle_open = False
        self.cycles_done = 0
        self.frame_start = 0
        self.timer: Optional[Event] = None
        self.data_tx: Optional[Transmission] = None
        self.on_done: Optional[Callable[[CsmaOutcome], None]] = None

    def wake(self, frame_start: int):
        """Start this frame's periodic transfer."""
        if self.cycle_open:
            self.meter.close_cycle(self.t_frame)
            self.cycle_open = False
        self.frame_start = frame_start
        self.meter.switch()
        packet = data_packet(self.address, bytes(self.data_rate))
        self.sim.schedule(self.sim.now + self.radio.t_switch, self.name, 'csma_start',
                          self.csma_send, packet, self._transfer_done)

    # ==================== CSMA/CA ====================

    def csma_send(self, packet: Packet, on_done: Callable[[CsmaOutcome], None]):
        self.packet = packet
        self.on_done = on_done
        self.nb = 0
        self.be = self.params.min_be
        self.retries = 0
        self._backoff()

    def _backoff(self):
        unit = self.params.backoff_unit
        now = self.sim.now
        # Backoff periods are aligned to the unit grid from the frame start
        boundary = self.frame_start + -(-(now - self.frame_start) // unit) * unit
        delay = int(self.rng.integers(0, 2 ** self.be)) * unit
        cca_start = boundary + delay
        self.meter.idle(cca_start - now)
        self.sim.schedule(cca_start + self.params.cca_len, self.name, 'cca_end', self._cca_end)

    def _cca_end(self):
        cca = self.params.cca_len
        self.meter.listen(cca)
        if self.medium.busy(self.sim.now - cca, self.sim.now):
            self.nb += 1
            self.be = min(self.be + 1, self.params.max_be)
            if self.nb > self.params.max_backoffs:
                self._finish(CsmaOutcome.CHANNEL_ACCESS_FAILURE)
                return
            self._backoff()
            return
        tx = self.medium.transmit(self.packet, self, [self.run.coordinator])
        self.meter.transmit(tx.octets)
        self.counters.sent += 1
        self.data_tx = tx
        self.timer = self.sim.schedule(tx.end + self.ack_timeout, self.name, 'ack_timeout',
                                       self._ack_timeout)

    def on_receive(self, tx: Transmission, packet: Packet):
        if packet.kind != PacketKind.ACK or self.data_tx is None or tx.start < self.data_tx.end:
            return
        self.timer.cancel()
        self.meter.idle(tx.start - self.data_tx.end)
        self.meter.receive(tx.octets)
        self.data_tx = None
        self.counters.delivered += 1
        self._finish(CsmaOutcome.SENT)

    def _ack_timeout(self):
        self.meter.idle(self.ack_timeout)
        if self.data_tx.lost:
            self.counters.lost += 1
        elif self.data_tx.collided:
            self.counters.collided += 1
        self.data_tx = None
        self.retries += 1
        if self.retries > self.params.max_retries:
            self._finish(CsmaOutcome.RETRIES_EXHAUSTED)
            return
        self.counters.retried += 1
        self.nb = 0
        self.be = self.params.min_be
        self._backoff()

    def _finish(self, outcome: CsmaOutcome):
        if outcome == CsmaOutcome.CHANNEL_ACCESS_FAILURE:
            self.counters.csma_caf += 1
        elif outcome == CsmaOutcome.RETRIES_EXHAUSTED:
            self.counters.csma_retry_exhausted += 1
        self.sim.note(self.name, 'csma_done', outcome.value)
        self.on_done(outcome)

    def _transfer_done(self, outcome: CsmaOutcome):
        if outcome != CsmaOutcome.SENT:
            self.counters.dropped += 1
        self.meter.switch()
        self.cycles_done += 1
        self.cycle_open = True
        if self.cycles_done >= self.n_cycles:
            self.meter.close_cycle(self.t_frame)
            self.cycle_open = False

    def report(self) -> NodeReport:
        return NodeReport(self.address, self.ledger, EnergyLedger(), self.counters)


# ==================== RUN ====================

class CsmaRun:
    """n_nodes CSMA nodes around one coordinator, one transfer per node per frame."""

    def __init__(self, ctx: RunContext):
        self.ctx = ctx
        self.coordinator = Coordinator(ctx)
        self.nodes: List[CsmaNode] = [CsmaNode(self, i) for i in range(ctx.cfg.n_nodes)]

    def start(self):
        if self.ctx.cfg.n_cycles > 0:
            self.ctx.sim.schedule(0, 'CSMA', 'frame', self.run_baseline_cycle, 0)

    def run_baseline_cycle(self, k: int):
        frame_start = k * self.ctx.cfg.t_frame
        for node in self.nodes:
            self.ctx.sim.schedule(frame_start + node.phase_us, node.name, 'wake', node.wake, frame_start)
        if k + 1 < self.ctx.cfg.n_cycles:
            self.ctx.sim.schedule(frame_start + self.ctx.cfg.t_frame, 'CSMA', 'frame',
                                  self.run_baseline_cycle, k + 1)

    def node_reports(self) -> List[NodeReport]:
        return [n.report() for n in self.nodes]

    @property
    def cfp_collisions(self) -> int:
        return 0

    @property
    def schedule_csv(self) -> str:
        return ''


def setup(ctx: RunContext):
    ctx.attach(CsmaRun(ctx))
