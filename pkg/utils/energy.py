"""
Energy Model
Transceiver energy accounting for periodic duty-cycled nodes: sleep, switching,
transmit, receive and time-out energy, per cycle and summed over N cycles.

All energies are integer femtojoules (µs x µA x mV = 1e-15 J) so that the
simulator ledger and the closed-form oracle agree bit for bit. Conversion to
µJ / mJ happens only when reporting.
"""
from dataclasses import dataclass, fields
from typing import Iterable, Optional, Tuple


FJ_PER_UJ = 10 ** 9
FJ_PER_MJ = 10 ** 12

# Data frame = 3-octet header + 1-octet length prefix + payload
DATA_OVERHEAD_OCTETS = 4
ACK_OCTETS = 4


class EnergyError(Exception):
    """Base class for energy model failures."""


class InvalidTiming(EnergyError):
    pass


def _milli(value: float) -> int:
    """mA -> µA, V -> mV."""
    return int(round(value * 1000))


@dataclass(frozen=True)
class RadioParams:
    """Radio electrical and timing parameters (MICAz-class defaults)."""
    v: float = 3.0            # volts
    i_rx: float = 19.7        # mA
    i_tx: float = 17.4        # mA
    i_idle: float = 20.0      # mA, also used for switching and time-out
    i_sleep: float = 0.001    # mA
    t_byte: int = 32          # µs per octet (250 kb/s)
    t_switch: int = 192       # µs sleep <-> active
    t_turnaround: int = 192   # µs rx <-> tx

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"radio.{f.name} must be > 0")
        for name in ('v', 'i_rx', 'i_tx', 'i_idle', 'i_sleep'):
            if _milli(getattr(self, name)) == 0:
                raise ValueError(f"radio.{name} rounds to zero at 1/1000 resolution")
        if self.i_sleep >= self.i_idle:
            raise ValueError("radio.i_sleep must be well below radio.i_idle")

    @property
    def mv(self) -> int:
        return _milli(self.v)

    @property
    def ua_rx(self) -> int:
        return _milli(self.i_rx)

    @property
    def ua_tx(self) -> int:
        return _milli(self.i_tx)

    @property
    def ua_idle(self) -> int:
        return _milli(self.i_idle)

    @property
    def ua_sleep(self) -> int:
        return _milli(self.i_sleep)

    def airtime(self, octets: int) -> int:
        return octets * self.t_byte


# ==================== ENERGY TERMS ====================

def e_sleep(t_sleep: int, p: RadioParams) -> int:
    if t_sleep < 0:
        raise InvalidTiming(f"negative sleep time {t_sleep}")
    return t_sleep * p.ua_sleep * p.mv


def e_switch(p: RadioParams) -> int:
    return p.t_switch * p.ua_idle * p.mv


def e_trans(p_len: int, p: RadioParams) -> int:
    return p_len * p.t_byte * p.ua_tx * p.mv


def e_rec(p_len: int, p: RadioParams) -> int:
    return p_len * p.t_byte * p.ua_rx * p.mv


def e_timeout(t_tout: int, p: RadioParams) -> int:
    return t_tout * p.ua_idle * p.mv


def e_active(e_sw: int, e_tr: int, e_rc: int, e_to: int) -> int:
    """Active-period energy: two switches plus transmit, receive and time-out."""
    return 2 * e_sw + e_tr + e_rc + e_to


def total_energy(per_cycle: Iterable[Tuple[int, int]]) -> int:
    """Sum (e_sleep, e_active) pairs over N cycles."""
    return sum(sleep + active for sleep, active in per_cycle)


def to_uj(fj: int) -> float:
    return fj / FJ_PER_UJ


def to_mj(fj: int) -> float:
    return fj / FJ_PER_MJ


def format_uj(fj: int) -> str:
    """Exact decimal rendering in µJ with 6 places, rounded half up."""
    micro = (fj + 500) // 1000
    return f"{micro // 10**6}.{micro % 10**6:06d}"


# ==================== LEDGER ====================

@dataclass
class EnergyLedger:
    """Per-node energy accumulators (femtojoules) and time bookkeeping."""
    e_sleep: int = 0
    e_switch: int = 0
    e_trans: int = 0
    e_rec: int = 0
    e_tout: int = 0
    cycles_counted: int = 0
    t_active: int = 0
    t_sleep: int = 0

    @property
    def e_active(self) -> int:
        return self.e_switch + self.e_trans + self.e_rec + self.e_tout

    @property
    def e_total(self) -> int:
        return self.e_sleep + self.e_active


@dataclass(frozen=True)
class CycleTiming:
    t_active: int
    t_sleep: int
    t_tout: int


@dataclass(frozen=True)
class CycleEnergy:
    e_sleep: int
    e_switch: int  # both switches
    e_trans: int
    e_rec: int
    e_tout: int

    @property
    def e_active(self) -> int:
        return self.e_switch + self.e_trans + self.e_rec + self.e_tout

    @property
    def e_total(self) -> int:
        return self.e_sleep + self.e_active

    def times(self, n: int) -> EnergyLedger:
        """Ledger expected after n identical cycles."""
        return EnergyLedger(
            e_sleep=n * self.e_sleep,
            e_switch=n * self.e_switch,
            e_trans=n * self.e_trans,
            e_rec=n * self.e_rec,
            e_tout=n * self.e_tout,
            cycles_counted=n,
        )


def closed_form_cycle(data_octets: int, ack_octets: int, p: RadioParams, t_frame: int,
                      retransmissions: int = 0, ack_timeout: int = 864,
                      slot_len: Optional[int] = None) -> Tuple[CycleTiming, CycleEnergy]:
    """
    One periodic cycle composed from the sleep/switch/transmit/receive/time-out terms.

    Args:
        data_octets: full encoded Data frame length
        ack_octets: encoded reply length (Ack or SyncAck)
        retransmissions: failed attempts before the successful one; each adds a
            transmission and a full ack-timeout wait
        slot_len: when given, the exchange must fit inside it
    """
    attempts = retransmissions + 1
    t_tx = attempts * p.airtime(data_octets)
    t_rx = p.airtime(ack_octets)
    t_tout = retransmissions * ack_timeout + p.t_turnaround
    t_active = 2 * p.t_switch + t_tx + t_rx + t_tout
    if t_active > t_frame:
        raise InvalidTiming(f"active time {t_active} µs exceeds frame {t_frame} µs")
    if slot_len is not None and t_tx + t_rx + t_tout > slot_len:
        raise InvalidTiming(f"exchange of {t_tx + t_rx + t_tout} µs does not fit slot of {slot_len} µs")
    t_sleep = t_frame - t_active
    energy = CycleEnergy(
        e_sleep=e_sleep(t_sleep, p),
        e_switch=2 * e_switch(p),
        e_trans=e_trans(attempts * data_octets, p),
        e_rec=e_rec(ack_octets, p),
        e_tout=e_timeout(t_tout, p),
    )
    return CycleTiming(t_active, t_sleep, t_tout), energy


class RadioMeter:
    """
    Charges radio activity to a ledger as a node runs.

    Active time accumulates per cycle; close_cycle() charges the remainder of
    the frame as sleep so that t_sleep + t_active = t_frame every cycle.
    """

    def __init__(self, params: RadioParams, ledger: Optional[EnergyLedger] = None):
        self.params = params
        self.ledger = ledger if ledger is not None else EnergyLedger()
        self.cycle_active = 0

    def switch(self):
        self.ledger.e_switch += e_switch(self.params)
        self.cycle_active += self.params.t_switch

    def transmit(self, octets: int):
        self.ledger.e_trans += e_trans(octets, self.params)
        self.cycle_active += self.params.airtime(octets)

    def receive(self, octets: int):
        self.ledger.e_rec += e_rec(octets, self.params)
        self.cycle_active += self.params.airtime(octets)

    def listen(self, us: int):
        """Receive-mode time that is not a packet (clear channel assessment)."""
        if us <= 0:
            return
        self.ledger.e_rec += us * self.params.ua_rx * self.params.mv
        self.cycle_active += us

    def idle(self, us: int):
        """Radio on, waiting: time-out, backoff and idle listening."""
        if us <= 0:
            return
        self.ledger.e_tout += e_timeout(us, self.params)
        self.cycle_active += us

    def close_cycle(self, t_frame: int):
        t_sleep = t_frame - self.cycle_active
        if t_sleep < 0:
            raise InvalidTiming(f"cycle active time {self.cycle_active} µs exceeds frame {t_frame} µs")
        self.ledger.e_sleep += e_sleep(t_sleep, self.params)
        self.ledger.t_active += self.cycle_active
        self.ledger.t_sleep += t_sleep
        self.ledger.cycles_counted += 1
        self.cycle_active = 0

    def rebind(self, ledger: EnergyLedger):
        """Start charging a different ledger; the open cycle is discarded."""
        self.ledger = ledger
        self.cycle_active = 0
