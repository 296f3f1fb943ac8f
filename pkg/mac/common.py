"""
Shared MAC Plumbing
The per-run context handed to every protocol module's setup() hook, and the
CAP access procedure (initial delay, clear channel assessment and binary
exponential backoff) used for join, emergency and on-demand traffic.
"""
import logging
from dataclasses import dataclass, fields
from typing import TYPE_CHECKING, Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from utils.energy import RadioMeter, RadioParams
from utils.engine import (ChannelModel, Medium, Simulator, StreamId, Transmission,
                          make_stream)
from utils.protocol import Packet
from utils.schedule import FrameLayout

if TYPE_CHECKING:
    from utils.config import SimConfig

logger = logging.getLogger('ARMACSim.MAC')


# ==================== ERRORS ====================

class MacError(Exception):
    """Base class for protocol-level failures; reported as outcomes, not raised."""


class JoinTimeout(MacError):
    pass


class CapExhausted(MacError):
    pass


# ==================== RUN CONTEXT ====================

class RunContext:
    """
    Everything one simulated cell shares: config, clock, medium and RNG streams.

    A protocol module's setup(ctx) attaches a runner object exposing start()
    and node_reports().
    """

    def __init__(self, cfg: 'SimConfig', protocol: str, per_percent: float, seed: int,
                 trace: bool = False):
        self.cfg = cfg
        self.protocol = protocol
        self.per_percent = per_percent
        self.seed = seed
        self.radio: RadioParams = cfg.radio
        self.layout = FrameLayout.from_partition(cfg.t_frame, cfg.cap_len, cfg.t_ms)
        self.sim = Simulator(trace=trace)
        self._streams: Dict[Tuple[int, int], np.random.Generator] = {}
        cfp_window = (self.layout.cfp_start, self.layout.cfp_end) if protocol == 'armac' else None
        self.medium = Medium(
            self.sim,
            ChannelModel(per_percent / 100.0, self.stream(StreamId.CHANNEL, 0)),
            self.radio.t_byte,
            lossy_kinds=cfg.lossy_kinds,
            t_frame=cfg.t_frame,
            cfp_window=cfp_window,
        )
        self.runner: Optional[Any] = None

    def stream(self, stream: StreamId, index: int = 0) -> np.random.Generator:
        key = (int(stream), index)
        if key not in self._streams:
            self._streams[key] = make_stream(self.seed, stream, index)
        return self._streams[key]

    def attach(self, runner: Any):
        if self.runner is not None:
            raise RuntimeError(f"run context already has a {type(self.runner).__name__}")
        self.runner = runner

    @property
    def horizon(self) -> int:
        """Latest simulated time any cell needs: join budget plus N cycles plus slack."""
        return (self.cfg.join_budget_frames + self.cfg.n_cycles + 2) * self.cfg.t_frame


# ==================== CAP ACCESS ====================

@dataclass(frozen=True)
class CapParams:
    cca_len: int = 128        # µs
    backoff_unit: int = 320   # µs
    max_exponent: int = 5
    max_retries: int = 4      # busy assessments tolerated per CAP

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"cap.{f.name} must be > 0")


CapCallback = Callable[[Optional[Transmission], Optional[MacError]], None]


class CapAccess:
    """
    One contention attempt for one packet inside the current CAP.

    Random initial delay uniform in [0, cap_len // 4], then a CCA; a busy
    channel triggers backoff i with a delay uniform in [0, 2^min(i, max_exp) - 1]
    backoff units. The packet goes out only if it and the expected response
    still end inside the CAP. on_done receives (transmission, None) or
    (None, CapExhausted).
    """

    def __init__(self, owner: Any, medium: Medium, params: CapParams, meter: RadioMeter,
                 rng: np.random.Generator, cap_len: int):
        self.owner = owner
        self.medium = medium
        self.sim = medium.sim
        self.params = params
        self.meter = meter
        self.rng = rng
        self.cap_len = cap_len
        self.active = False

    def start(self, cap_end: int, packet: Packet, receivers: List[Any],
              response_window: int, on_done: CapCallback):
        self.cap_end = cap_end
        self.packet = packet
        self.receivers = receivers
        self.response_window = response_window
        self.on_done = on_done
        self.backoffs = 0
        self.active = True
        delay = int(self.rng.integers(0, self.cap_len // 4 + 1))
        self._defer(delay)

    def _defer(self, delay: int):
        begin = self.sim.now + delay
        if begin + self.params.cca_len + self._needed() > self.cap_end:
            self._exhausted(f"CAP ends at {self.cap_end} before CCA at {begin} could finish")
            return
        self.meter.idle(delay)
        self.sim.schedule(begin + self.params.cca_len, self.owner.name, 'cca_end', self._cca_end)

    def _needed(self) -> int:
        return self.medium.airtime(self.packet) + self.response_window

    def _cca_end(self):
        cca = self.params.cca_len
        self.meter.listen(cca)
        if not self.medium.busy(self.sim.now - cca, self.sim.now):
            if self.sim.now + self._needed() > self.cap_end:
                self._exhausted("no room left in the CAP")
                return
            self.active = False
            tx = self.medium.transmit(self.packet, self.owner, self.receivers)
            self.meter.transmit(tx.octets)
            self.on_done(tx, None)
            return

        self.backoffs += 1
        self.sim.note(self.owner.name, 'cca_busy', str(self.backoffs))
        if self.backoffs > self.params.max_retries:
            self._exhausted(f"channel busy after {self.backoffs} assessments")
            return
        exponent = min(self.backoffs, self.params.max_exponent)
        units = int(self.rng.integers(0, 2 ** exponent))
        self._defer(units * self.params.backoff_unit)

    def _exhausted(self, reason: str):
        self.active = False
        self.sim.note(self.owner.name, 'cap_exhausted', self.packet.kind.name)
        logger.debug(f"{self.owner.name}: CAP access for {self.packet.kind.name} gave up: {reason}")
        self.on_done(None, CapExhausted(f"{self.owner.name}: {self.packet.kind.name}: {reason}"))
