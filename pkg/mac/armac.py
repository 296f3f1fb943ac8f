"""
AR-MAC Protocol
Central Node and sensor-node state machines for the adaptive TDMA MAC:
channel selection, joining through the CAP, steady slotted transmission with
drift-value synchronization, and on-demand / emergency traffic in the CAP.

Frame order is [CAP | CFP | T^MS]. The CN is the reference clock; nodes keep
time on their own skewed clocks and only learn the frame origin from the
Channel packet.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Set, Tuple

from mac.common import CapAccess, JoinTimeout, MacError, RunContext
from utils.energy import ACK_OCTETS, DATA_OVERHEAD_OCTETS, EnergyLedger, RadioMeter
from utils.engine import ClockModel, Event, StreamId, Transmission
from utils.protocol import (CN_ADDRESS, MAX_DATA_PAYLOAD, DataRequestBody, Packet,
                            PacketKind, TimeSlotRequestBody, TimeSlotRequestReplyBody,
                            ack_packet, channel_packet, data_packet, fixed_length,
                            sync_ack_packet)
from utils.reporting import NodeCounters, NodeReport
from utils.schedule import CfpOverflow, Schedule, SlotRequest, TimeSlot, build_schedule, slot_length
from utils.sync import ArrivalObservation, apply_drift, delta_t, drift_value

logger = logging.getLogger('ARMACSim.ARMAC')

MAX_SLOT_RETRIES = 1
ON_DEMAND_ATTEMPTS = 3
TSRR_OCTETS = fixed_length(PacketKind.TIME_SLOT_REQUEST_REPLY)


class CnPhase(Enum):
    SCANNING_CHANNELS = 'scanning_channels'
    ADVERTISING = 'advertising'
    OPERATING = 'operating'


class NodePhase(Enum):
    SCANNING_CHANNELS = 'scanning_channels'
    AWAITING_CHANNEL_PACKET = 'awaiting_channel_packet'
    JOINING = 'joining'
    SLEEPING = 'sleeping'
    AWAKE_TX = 'awake_tx'
    CAP_LISTENING = 'cap_listening'
    CAP_TX = 'cap_tx'
    FINISHED = 'finished'


# ==================== RF ENVIRONMENT ====================

@dataclass(frozen=True)
class RfChannel:
    busy: bool = False


@dataclass(frozen=True)
class RfEnvironment:
    channels: Tuple[RfChannel, ...]
    t_cp: int  # µs a node listens on an occupied channel for a Channel packet

    @classmethod
    def from_flags(cls, flags: Sequence[bool], t_cp: int) -> 'RfEnvironment':
        return cls(tuple(RfChannel(bool(b)) for b in flags), t_cp)


def cn_select_channel(env: RfEnvironment) -> Optional[int]:
    """First free channel in scan order, or None when every channel is busy."""
    for channel_id, channel in enumerate(env.channels):
        if not channel.busy:
            return channel_id
    return None


@dataclass
class PendingDemand:
    node: 'SensorNode'
    requested_bytes: int
    attempts: int = 0
    flagged: bool = False
    deadline: Optional[Event] = None


# ==================== CENTRAL NODE ====================

class CentralNode:
    name = 'CN'

    def __init__(self, run: 'ArmacRun'):
        ctx = run.ctx
        self.run = run
        self.cfg = ctx.cfg
        self.sim = ctx.sim
        self.medium = ctx.medium
        self.radio = ctx.radio
        self.layout = ctx.layout
        self.address = CN_ADDRESS
        self.phase = CnPhase.SCANNING_CHANNELS
        self.channel_id: Optional[int] = None
        self.requests: List[SlotRequest] = []
        self.schedule = Schedule(f=self.cfg.f, cfp_start=self.layout.cfp_start)
        self.expected_arrival: Dict[int, int] = {}   # slot start of the last Data per node
        self.confirmed: Set[int] = set()
        self.future_demands = sorted(self.cfg.on_demand, key=lambda d: (d.frame, d.node))
        self.pending_demands: List[PendingDemand] = []
        self.demand_queue: List[PendingDemand] = []
        self.awaiting: Optional[PendingDemand] = None
        # CN energy is not reported; the meter only feeds CAP access
        self.meter = RadioMeter(self.radio)
        self.cap = CapAccess(self, self.medium, self.cfg.cap, self.meter,
                             ctx.stream(StreamId.BACKOFF, self.cfg.n_nodes), self.layout.cap_len)

    def start(self):
        self._select_channel()
        self.sim.schedule(0, self.name, 'frame', self._on_frame, 0)

    def _select_channel(self):
        self.channel_id = cn_select_channel(self.run.env)
        if self.channel_id is None:
            logger.warning("CN found no free channel, rescanning next frame")
            return
        self.phase = CnPhase.ADVERTISING
        self.sim.note(self.name, 'channel_selected', str(self.channel_id))
        logger.debug(f"CN selected channel {self.channel_id}")

    # ==================== FRAME TICKS ====================

    def _on_frame(self, k: int):
        budget = self.cfg.join_budget_frames
        if self.phase == CnPhase.SCANNING_CHANNELS and k < budget:
            self._select_channel()
        if self.phase == CnPhase.ADVERTISING and k < budget:
            self.medium.transmit(channel_packet(self.address, self.channel_id), self, self.run.nodes)

        while self.future_demands and self.future_demands[0].frame <= k:
            req = self.future_demands.pop(0)
            node = self.run.nodes[req.node]
            self.pending_demands.append(PendingDemand(node, min(req.bytes, MAX_DATA_PAYLOAD)))
            logger.debug(f"On-demand request for {node.name}: {req.bytes} bytes (frame {k})")

        self.demand_queue = [d for d in self.pending_demands if d.flagged]
        if self.demand_queue:
            self._next_demand()

        if self._needs_frame(k + 1):
            self.sim.schedule((k + 1) * self.cfg.t_frame, self.name, 'frame', self._on_frame, k + 1)

    def _needs_frame(self, k: int) -> bool:
        if self.phase != CnPhase.OPERATING and k < self.cfg.join_budget_frames:
            return True
        return bool(self.pending_demands or self.future_demands)

    # ==================== RECEPTION ====================

    def on_receive(self, tx: Transmission, packet: Packet):
        node = self.run.node_by_addr.get(packet.src)
        if node is None:
            return
        if packet.kind == PacketKind.TIME_SLOT_REQUEST:
            self._on_tsr(tx, packet, node)
        elif packet.kind == PacketKind.DATA:
            self._on_data(tx, packet, node)
        elif packet.kind == PacketKind.ACK:
            self.sim.note(self.name, 'channel_ack', node.name)

    def _reply(self, tx: Transmission, packet: Packet, node: 'SensorNode'):
        self.sim.schedule(tx.end + self.radio.t_turnaround, self.name, 'reply', self._send, packet, node)

    def _send(self, packet: Packet, node: 'SensorNode'):
        self.medium.transmit(packet, self, [node])

    def _on_tsr(self, tx: Transmission, packet: Packet, node: 'SensorNode'):
        slot = self.schedule.slot_for(node.address)
        if slot is None:
            request = SlotRequest(node.address, packet.payload.data_rate)
            try:
                schedule = build_schedule(self.requests + [request], self.layout, self.cfg.f,
                                          self.radio, self.cfg.slot_margin)
            except CfpOverflow as e:
                logger.warning(f"Rejected TSR from {node.name}: {e}")
                self.sim.note(self.name, 'cfp_overflow', node.name)
                return
            self.requests.append(request)
            self.schedule = schedule
            slot = schedule.slot_for(node.address)
            logger.debug(f"Assigned {node.name} slot at {slot.start} µs, {slot.length} µs long "
                         f"(D={schedule.d} µs)")
        reply = Packet(PacketKind.TIME_SLOT_REQUEST_REPLY, self.address,
                       TimeSlotRequestReplyBody(slot.start, slot.length,
                                                self.layout.cap_start, self.layout.cap_len))
        self._reply(tx, reply, node)

    def _slot_tolerance(self, node: 'SensorNode') -> int:
        """How far a slot Data packet may land from its slot start before the CN resyncs it."""
        drift = -(-self.cfg.max_skew_ppm * self.cfg.t_frame // 1_000_000)
        return self.schedule.d + drift + node.jitter_us

    def _expected_arrival(self, tx: Transmission, node: 'SensorNode') -> Optional[int]:
        """Slot start of the frame this Data belongs to, or None when it is CAP traffic."""
        slot = self.schedule.slot_for(node.address)
        if slot is None:
            return None
        t_frame = self.cfg.t_frame
        in_cap = tx.start % t_frame < self.layout.cap_len
        awaiting = self.awaiting is not None and self.awaiting.node is node
        if in_cap and awaiting:
            return None
        k = (tx.start - slot.start + t_frame // 2) // t_frame
        expected = k * t_frame + slot.start
        tolerance = self._slot_tolerance(node)
        if -tolerance <= tx.start - expected <= slot.length + tolerance:
            return expected
        return None

    def _on_data(self, tx: Transmission, packet: Packet, node: 'SensorNode'):
        expected = self._expected_arrival(tx, node)
        if expected is None:
            if tx.start % self.cfg.t_frame < self.layout.cap_len:
                self._on_cap_data(tx, node)
            else:
                self.sim.note(self.name, 'unscheduled_data', node.name)
            return

        duplicate = self.expected_arrival.get(node.address) == expected
        self.expected_arrival[node.address] = expected
        if duplicate:
            node.counters.duplicates += 1
        else:
            node.counters.delivered += 1
        self._confirm(node)

        odt = self._flag_demand(node)
        if duplicate:
            self._reply(tx, ack_packet(self.address, odt), node)
            return

        delta = delta_t(ArrivalObservation(node.address, expected, tx.start))
        # A first attempt lost in the slot shows up as a very late arrival
        retry_offset = (tx.end - tx.start) + self.cfg.ack_timeout
        if -delta >= retry_offset - self.schedule.d:
            delta += retry_offset
        decision = drift_value(delta, self.schedule.d)
        if decision.send_sync_ack:
            node.counters.sync_acks += 1
            self.sim.note(self.name, 'sync_ack', f"{node.name} dv={decision.dv}")
            self._reply(tx, sync_ack_packet(self.address, decision.dv, odt), node)
        else:
            self._reply(tx, ack_packet(self.address, odt), node)

    def _confirm(self, node: 'SensorNode'):
        if node.address in self.confirmed:
            return
        self.confirmed.add(node.address)
        if len(self.confirmed) == len(self.run.nodes) and self.phase == CnPhase.ADVERTISING:
            self.phase = CnPhase.OPERATING
            logger.info(f"CN operating: {len(self.confirmed)} nodes, D={self.schedule.d} µs, "
                        f"CFP span {self.schedule.span} µs")

    def _flag_demand(self, node: 'SensorNode') -> bool:
        for demand in self.pending_demands:
            if demand.node is node:
                demand.flagged = True
                return True
        return False

    # ==================== ON-DEMAND TRAFFIC ====================

    def _on_cap_data(self, tx: Transmission, node: 'SensorNode'):
        demand = self.awaiting
        if demand is not None and demand.node is node:
            demand.deadline.cancel()
            self.awaiting = None
            self.pending_demands.remove(demand)
            node.counters.on_demand_done += 1
            self.sim.note(self.name, 'on_demand_done', node.name)
            self._reply(tx, ack_packet(self.address), node)
            done_at = tx.end + self.radio.t_turnaround + self.radio.airtime(ACK_OCTETS)
            self.sim.schedule(done_at, self.name, 'next_demand', self._next_demand)
            return
        self.sim.note(self.name, 'emergency', node.name)
        self._reply(tx, ack_packet(self.address), node)

    def _next_demand(self):
        if not self.demand_queue:
            return
        demand = self.demand_queue.pop(0)
        if demand not in self.pending_demands:
            self._next_demand()
            return
        t_frame = self.cfg.t_frame
        cap_end = (self.sim.now // t_frame) * t_frame + self.layout.cap_len
        data_air = self.radio.airtime(DATA_OVERHEAD_OCTETS + demand.requested_bytes)
        window = self.radio.t_turnaround + data_air + self.cfg.ack_timeout
        request = Packet(PacketKind.DATA_REQUEST, self.address, DataRequestBody(demand.requested_bytes))
        self.cap.start(cap_end, request, [demand.node], window,
                       lambda tx, failure: self._demand_sent(demand, tx, failure))

    def _demand_sent(self, demand: PendingDemand, tx: Optional[Transmission],
                     failure: Optional[MacError]):
        if failure is not None:
            logger.debug(f"DataRequest to {demand.node.name} not sent: {failure}")
            self._demand_failed(demand)
            return
        self.awaiting = demand
        data_air = self.radio.airtime(DATA_OVERHEAD_OCTETS + demand.requested_bytes)
        deadline = tx.end + self.radio.t_turnaround + data_air + 1
        demand.deadline = self.sim.schedule(deadline, self.name, 'demand_deadline',
                                            self._demand_deadline, demand)

    def _demand_deadline(self, demand: PendingDemand):
        if self.awaiting is demand:
            self.awaiting = None
            self._demand_failed(demand)

    def _demand_failed(self, demand: PendingDemand):
        demand.attempts += 1
        if demand.attempts >= ON_DEMAND_ATTEMPTS:
            self.pending_demands.remove(demand)
            demand.node.counters.on_demand_abandoned += 1
            logger.warning(f"Abandoned on-demand request for {demand.node.name} "
                           f"after {demand.attempts} attempts")
            self.sim.note(self.name, 'on_demand_abandoned', demand.node.name)
        self._next_demand()


# ==================== SENSOR NODE ====================

class SensorNode:

    def __init__(self, run: 'ArmacRun', index: int):
        ctx = run.ctx
        cfg = ctx.cfg
        self.run = run
        self.cfg = cfg
        self.sim = ctx.sim
        self.medium = ctx.medium
        self.radio = ctx.radio
        self.layout = ctx.layout
        self.index = index
        self.address = index + 1
        self.name = f"N{self.address}"
        self.clock = ClockModel(skew_ppm=cfg.skew_ppm[index])
        self.data_rate = cfg.data_rate[index]
        self.jitter_us = cfg.jitter_us[index]
        self.jitter_rng = ctx.stream(StreamId.JITTER, index)
        self.traffic_rng = ctx.stream(StreamId.TRAFFIC, index)

        self.counters = NodeCounters()
        self.join_ledger = EnergyLedger()
        self.ledger = EnergyLedger()
        self.meter = RadioMeter(self.radio, self.join_ledger)
        self.cap = CapAccess(self, self.medium, cfg.cap, self.meter,
                             ctx.stream(StreamId.BACKOFF, index), self.layout.cap_len)

        self.phase = NodePhase.SCANNING_CHANNELS
        self.channel_id: Optional[int] = None
        self.scan_channel = cfg.scan_start
        self.listen_since = 0
        self.timer: Optional[Event] = None

        self.origin = 0              # local time of the frame start the node synced on
        self.slot: Optional[TimeSlot] = None
        self.wake_offset = 0
        self.join_k = 0
        self.join_attempts = 0
        self.channel_acked = False
        self.tsr_tx: Optional[Transmission] = None

        self.steady = False
        self.cycle_open = False
        self.cycles_done = 0
        self.frame_k = 0
        self.tx_due = 0
        self.slot_end = 0
        self.slot_tries = 0
        self.slot_pending = False
        self.data_tx: Optional[Transmission] = None
        self.awaiting_reply = False

        self.odt_pending = False
        self.emergency_queue = 0
        self.cap_end = 0
        self.cap_tx: Optional[Transmission] = None
        self.cap_emergency = False

    # ==================== CHANNEL ACQUISITION ====================

    def start(self):
        self.meter.switch()
        self.acquire_channel(self.cfg.scan_start)

    def acquire_channel(self, channel: int):
        """Scan from `channel`: skip free channels after a CCA, listen t_cp on occupied ones."""
        if self._join_expired():
            self._give_up()
            return
        self.scan_channel = channel
        self.listen_since = self.sim.now
        if self.run.channel_occupied(channel):
            self.phase = NodePhase.AWAITING_CHANNEL_PACKET
            self.timer = self.sim.schedule(self.sim.now + self.run.env.t_cp, self.name,
                                           'scan_timeout', self._scan_next)
        else:
            self.phase = NodePhase.SCANNING_CHANNELS
            self.timer = self.sim.schedule(self.sim.now + self.cfg.cap.cca_len, self.name,
                                           'scan_free', self._scan_next)

    def _scan_next(self):
        self.meter.listen(self.sim.now - self.listen_since)
        self.acquire_channel((self.scan_channel + 1) % len(self.run.env.channels))

    def _on_channel_packet(self, tx: Transmission, packet: Packet):
        if (self.phase != NodePhase.AWAITING_CHANNEL_PACKET
                or self.scan_channel != packet.payload.channel_id
                or tx.start < self.listen_since):
            return
        self.timer.cancel()
        self.meter.listen(self.sim.now - self.listen_since)
        self.channel_id = packet.payload.channel_id
        self.origin = self.clock.global_to_local(self.sim.now) - self.radio.airtime(tx.octets)
        self.phase = NodePhase.JOINING
        self.join_attempts = 0
        self.channel_acked = False
        self.sim.note(self.name, 'channel_acquired', str(self.channel_id))
        local_now = self.clock.global_to_local(self.sim.now)
        self._join_attempt((local_now - self.origin) // self.cfg.t_frame)

    # ==================== JOIN ====================

    def _local_to_global(self, local: int) -> int:
        return self.clock.local_to_global(local)

    def _join_expired(self) -> bool:
        return self.sim.now >= self.cfg.join_budget_frames * self.cfg.t_frame

    def _give_up(self):
        if self.phase != NodePhase.FINISHED:
            logger.warning(f"{self.name} did not join within {self.cfg.join_budget_frames} frames")
            self.phase = NodePhase.FINISHED
            self.meter.switch()

    def _join_attempt(self, k: int):
        if self._join_expired():
            self._give_up()
            return
        self.join_k = k
        cap_end = self._local_to_global(self.origin + k * self.cfg.t_frame + self.layout.cap_len)
        if self.channel_acked:
            requested = slot_length(SlotRequest(self.address, self.data_rate), self.radio)
            packet = Packet(PacketKind.TIME_SLOT_REQUEST, self.address,
                            TimeSlotRequestBody(self.data_rate, requested))
            window = self.radio.t_turnaround + self.radio.airtime(TSRR_OCTETS)
        else:
            packet = ack_packet(self.address)
            window = 0
        self.cap.start(cap_end, packet, [self.run.cn], window, self._join_sent)

    def _join_sent(self, tx: Optional[Transmission], failure: Optional[MacError]):
        if failure is not None:
            self.counters.cap_exhausted += 1
            logger.debug(str(failure))
            self._join_failed()
            return
        if tx.packet.kind == PacketKind.ACK:
            self.channel_acked = True
            self.sim.schedule(tx.end, self.name, 'join_tsr', self._join_attempt, self.join_k)
            return
        self.tsr_tx = tx
        self.timer = self.sim.schedule(tx.end + self.cfg.ack_timeout, self.name, 'tsrr_timeout',
                                       self._tsrr_timeout)

    def _tsrr_timeout(self):
        self.tsr_tx = None
        self.meter.idle(self.cfg.ack_timeout)
        self._join_failed()

    def _join_failed(self):
        self.join_attempts += 1
        if self.join_attempts >= self.cfg.join_attempts:
            failure = JoinTimeout(f"{self.name} got no TSRR after {self.join_attempts} attempts")
            logger.warning(f"{failure}, rescanning")
            self.sim.note(self.name, 'join_timeout', str(self.join_attempts))
            self.acquire_channel(self.cfg.scan_start)
            return
        # Sleep until the next CAP
        k = self.join_k + 1
        cap_start = self._local_to_global(self.origin + k * self.cfg.t_frame)
        self.meter.switch()
        wake = max(self.sim.now, cap_start - self.radio.t_switch)
        self.sim.schedule(wake, self.name, 'join_wake', self._join_wake, k, max(cap_start, wake))

    def _join_wake(self, k: int, cap_start: int):
        self.meter.switch()
        self.sim.schedule(cap_start, self.name, 'join_attempt', self._join_attempt, k)

    def _on_tsrr(self, tx: Transmission, packet: Packet):
        if self.phase != NodePhase.JOINING or self.tsr_tx is None or tx.start < self.tsr_tx.end:
            return
        self.timer.cancel()
        self.meter.idle(tx.start - self.tsr_tx.end)
        self.meter.receive(tx.octets)
        self.tsr_tx = None
        body = packet.payload
        self.slot = TimeSlot(self.address, body.slot_start, body.slot_len)
        self.wake_offset = body.slot_start
        self.counters.join_frame = self.sim.now // self.cfg.t_frame
        logger.info(f"{self.name} joined in frame {self.counters.join_frame}: "
                    f"slot {body.slot_start}+{body.slot_len} µs")
        self.sim.note(self.name, 'joined', f"slot={body.slot_start}")
        self.meter.switch()
        self.phase = NodePhase.SLEEPING
        local_now = self.clock.global_to_local(self.sim.now)
        k = (local_now - self.origin - self.wake_offset + self.radio.t_switch) // self.cfg.t_frame + 1
        self._schedule_wake(k)

    # ==================== STEADY CYCLE ====================

    def _schedule_wake(self, k: int):
        self.frame_k = k
        tx_local = self.origin + k * self.cfg.t_frame + self.wake_offset
        tx_due = self._local_to_global(tx_local) + self._jitter()
        tx_due = max(tx_due, self.sim.now + self.radio.t_switch)
        self.tx_due = tx_due
        self.sim.schedule(tx_due - self.radio.t_switch, self.name, 'wake', self._wake)

    def _jitter(self) -> int:
        if not self.jitter_us:
            return 0
        return int(self.jitter_rng.integers(-self.jitter_us, self.jitter_us + 1))

    def _wake(self):
        if self.phase in (NodePhase.CAP_LISTENING, NodePhase.CAP_TX):
            self.slot_pending = True
            return
        self._begin_slot(switch=True)

    def _begin_slot(self, switch: bool):
        if not self.steady:
            self.steady = True
            self.meter.rebind(self.ledger)
            if self.cfg.emergency_rate > 0:
                self._schedule_emergency()
        elif self.cycle_open:
            self.meter.close_cycle(self.cfg.t_frame)
            self.cycle_open = False
        if switch:
            self.meter.switch()
        self.phase = NodePhase.AWAKE_TX
        self.slot_tries = 0
        self.slot_end = self.tx_due + self.slot.length
        self.sim.schedule(max(self.tx_due, self.sim.now), self.name, 'slot_tx', self._send_data)

    def _send_data(self):
        packet = data_packet(self.address, bytes(self.data_rate))
        tx = self.medium.transmit(packet, self, [self.run.cn])
        self.meter.transmit(tx.octets)
        self.counters.sent += 1
        self.data_tx = tx
        self.awaiting_reply = True
        self.timer = self.sim.schedule(tx.end + self.cfg.ack_timeout, self.name, 'ack_timeout',
                                       self._slot_timeout)

    def _on_slot_reply(self, tx: Transmission, packet: Packet):
        self.timer.cancel()
        self.awaiting_reply = False
        self.meter.idle(tx.start - self.data_tx.end)
        self.meter.receive(tx.octets)
        if packet.kind == PacketKind.SYNC_ACK:
            self._apply_dv(packet.payload.dv)
        if packet.payload.odt:
            self.odt_pending = True
        self._finish_slot()

    def _slot_timeout(self):
        self.awaiting_reply = False
        self.meter.idle(self.cfg.ack_timeout)
        if self.data_tx.lost:
            self.counters.lost += 1
        elif self.data_tx.collided:
            self.counters.collided += 1
        exchange = (self.data_tx.end - self.data_tx.start + self.radio.t_turnaround
                    + self.radio.airtime(ACK_OCTETS))
        if self.slot_tries < MAX_SLOT_RETRIES and self.sim.now + exchange <= self.slot_end:
            self.slot_tries += 1
            self.counters.retried += 1
            self._send_data()
            return
        self.counters.dropped += 1
        self._finish_slot()

    def _apply_dv(self, dv: int):
        new_offset = apply_drift(self.wake_offset, dv, self.cfg.t_frame)
        self.origin += (self.wake_offset + dv) - new_offset
        self.wake_offset = new_offset
        self.sim.note(self.name, 'apply_dv', str(dv))

    def _finish_slot(self):
        self.meter.switch()
        self.phase = NodePhase.SLEEPING
        self.cycles_done += 1
        self.cycle_open = True
        if self.cycles_done >= self.cfg.n_cycles:
            self.meter.close_cycle(self.cfg.t_frame)
            self.cycle_open = False
            self.phase = NodePhase.FINISHED
            return
        k = self.frame_k + 1
        if self.odt_pending or self.emergency_queue:
            self._schedule_cap_session(k)
        self._schedule_wake(k)

    # ==================== CAP SESSIONS ====================

    def _cap_local_start(self, k: int) -> int:
        return (self.origin + k * self.cfg.t_frame + self.layout.cap_start
                + (self.wake_offset - self.slot.start))

    def _schedule_cap_session(self, k: int):
        cap_start = self._local_to_global(self._cap_local_start(k))
        wake = cap_start - self.radio.t_switch
        if wake < self.sim.now:
            return
        self.sim.schedule(wake, self.name, 'cap_wake', self._cap_wake, cap_start)

    def _cap_wake(self, cap_start: int):
        self.meter.switch()
        self.phase = NodePhase.CAP_LISTENING
        self.cap_end = cap_start + self.layout.cap_len
        self.sim.schedule(cap_start, self.name, 'cap_begin', self._cap_begin)

    def _cap_begin(self):
        if self.odt_pending:
            self.listen_since = self.sim.now
            self.timer = self.sim.schedule(self.cap_end, self.name, 'cap_listen_end',
                                           self._cap_listen_end)
        elif self.emergency_queue:
            self.phase = NodePhase.CAP_TX
            self.cap_emergency = True
            packet = data_packet(self.address, bytes(self.cfg.emergency_bytes))
            self.cap.start(self.cap_end, packet, [self.run.cn], self.cfg.ack_timeout,
                           self._cap_sent)
        else:
            self._end_cap_session()

    def _on_data_request(self, tx: Transmission, packet: Packet):
        if self.phase != NodePhase.CAP_LISTENING or not self.odt_pending or tx.start < self.listen_since:
            return
        self.timer.cancel()
        self.meter.listen(tx.start - self.listen_since)
        self.meter.receive(tx.octets)
        self.odt_pending = False
        self.phase = NodePhase.CAP_TX
        self.cap_emergency = False
        size = min(packet.payload.requested_bytes, MAX_DATA_PAYLOAD)
        self.sim.schedule(self.sim.now + self.radio.t_turnaround, self.name, 'on_demand_tx',
                          self._send_on_demand, size)

    def _send_on_demand(self, size: int):
        self.meter.idle(self.radio.t_turnaround)
        tx = self.medium.transmit(data_packet(self.address, bytes(size)), self, [self.run.cn])
        self.meter.transmit(tx.octets)
        self._cap_sent(tx, None)

    def _cap_sent(self, tx: Optional[Transmission], failure: Optional[MacError]):
        if failure is not None:
            self.counters.cap_exhausted += 1
            logger.debug(str(failure))
            self._end_cap_session()
            return
        if self.cap_emergency:
            self.counters.emergency_sent += 1
        self.cap_tx = tx
        self.timer = self.sim.schedule(tx.end + self.cfg.ack_timeout, self.name, 'cap_ack_timeout',
                                       self._cap_reply_timeout)

    def _on_cap_reply(self, tx: Transmission):
        self.timer.cancel()
        self.meter.idle(tx.start - self.cap_tx.end)
        self.meter.receive(tx.octets)
        self.cap_tx = None
        if self.cap_emergency:
            self.emergency_queue -= 1
        self._end_cap_session()

    def _cap_reply_timeout(self):
        self.cap_tx = None
        self.meter.idle(self.cfg.ack_timeout)
        self._end_cap_session()

    def _cap_listen_end(self):
        self.meter.listen(self.sim.now - self.listen_since)
        self.odt_pending = False
        self._end_cap_session()

    def _end_cap_session(self):
        if self.slot_pending:
            self.slot_pending = False
            self._begin_slot(switch=False)
            return
        self.meter.switch()
        self.phase = NodePhase.SLEEPING

    def _schedule_emergency(self):
        gap = max(1, int(self.traffic_rng.exponential(1_000_000 / self.cfg.emergency_rate)))
        self.sim.schedule(self.sim.now + gap, self.name, 'emergency', self._on_emergency)

    def _on_emergency(self):
        if self.phase == NodePhase.FINISHED:
            return
        self.emergency_queue += 1
        self.sim.note(self.name, 'emergency_arrival', str(self.emergency_queue))
        self._schedule_emergency()

    # ==================== DISPATCH ====================

    def on_receive(self, tx: Transmission, packet: Packet):
        if packet.src != CN_ADDRESS:
            return
        kind = packet.kind
        if kind == PacketKind.CHANNEL:
            self._on_channel_packet(tx, packet)
        elif kind == PacketKind.TIME_SLOT_REQUEST_REPLY:
            self._on_tsrr(tx, packet)
        elif kind == PacketKind.DATA_REQUEST:
            self._on_data_request(tx, packet)
        elif kind in (PacketKind.ACK, PacketKind.SYNC_ACK):
            if (self.phase == NodePhase.AWAKE_TX and self.awaiting_reply
                    and tx.start >= self.data_tx.end):
                self._on_slot_reply(tx, packet)
            elif (self.phase == NodePhase.CAP_TX and self.cap_tx is not None
                  and tx.start >= self.cap_tx.end):
                self._on_cap_reply(tx)

    def report(self) -> NodeReport:
        return NodeReport(self.address, self.ledger, self.join_ledger, self.counters)


# ==================== RUN ====================

class ArmacRun:
    """One AR-MAC network: a CN and n_nodes sensor nodes on a shared medium."""

    def __init__(self, ctx: RunContext):
        self.ctx = ctx
        cfg = ctx.cfg
        self.env = RfEnvironment.from_flags(cfg.channels, cfg.t_cp)
        self.cn = CentralNode(self)
        self.nodes = [SensorNode(self, i) for i in range(cfg.n_nodes)]
        self.node_by_addr = {n.address: n for n in self.nodes}

    def channel_occupied(self, channel: int) -> bool:
        return self.env.channels[channel].busy or channel == self.cn.channel_id

    def start(self):
        self.cn.start()
        for node in self.nodes:
            node.start()

    def node_reports(self) -> List[NodeReport]:
        return [n.report() for n in self.nodes]

    @property
    def cfp_collisions(self) -> int:
        return self.ctx.medium.stats.cfp_collisions

    @property
    def schedule_csv(self) -> str:
        return self.cn.schedule.to_csv()


def setup(ctx: RunContext):
    ctx.attach(ArmacRun(ctx))
