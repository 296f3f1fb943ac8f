"""
Scenario Configuration
Parses the JSON scenario document into a frozen SimConfig. Absent keys take
the defaults of the 10-node reference scenario; unknown keys are rejected and
every violation names the offending field path.
"""
import json
import logging
from dataclasses import dataclass, field, fields
from typing import Any, Dict, FrozenSet, Optional, Sequence, Tuple, Union

from mac.baseline import CsmaParams
from mac.common import CapParams
from utils.energy import RadioParams
from utils.engine import ClockModel
from utils.protocol import MAX_DATA_PAYLOAD, PacketKind, fixed_length
from utils.schedule import FrameLayout, InvalidLayout

logger = logging.getLogger('ARMACSim.Config')

PROTOCOLS = ('armac', 'csma')
PROTOCOL_CHOICES = PROTOCOLS + ('both',)

Number = Union[int, float]


class ConfigError(Exception):
    """A scenario document that cannot be turned into a SimConfig."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.message = message


@dataclass(frozen=True)
class OnDemandRequest:
    frame: int   # CN frame index at which the request is raised
    node: int    # node index, 0-based
    bytes: int


@dataclass(frozen=True)
class SimConfig:
    protocol: str = 'both'
    n_nodes: int = 10
    n_cycles: int = 1000
    t_frame: int = 1_000_000
    f: Number = 10
    per: Tuple[Number, ...] = tuple(range(1, 21))     # percent
    seeds: Tuple[int, ...] = tuple(range(1, 11))
    radio: RadioParams = field(default_factory=RadioParams)
    data_rate: Tuple[int, ...] = (31,) * 10
    skew_ppm: Tuple[int, ...] = (0,) * 10
    jitter_us: Tuple[int, ...] = (0,) * 10
    cap_len: int = 100_000
    t_ms: int = 100_000
    t_cp: int = 1_000_000
    channels: Tuple[bool, ...] = (False,) * 4
    scan_start: int = 0
    ack_timeout: int = 864
    join_attempts: int = 8
    join_budget_frames: int = 50
    slot_margin: Optional[int] = None
    max_skew_ppm: int = 500
    per_applies_to: Tuple[str, ...] = tuple(k.name.lower() for k in PacketKind)
    emergency_rate: float = 0.0    # arrivals per second per node
    emergency_bytes: int = 16
    on_demand: Tuple[OnDemandRequest, ...] = ()
    cap: CapParams = field(default_factory=CapParams)
    csma: CsmaParams = field(default_factory=CsmaParams)

    @property
    def protocols(self) -> Tuple[str, ...]:
        return PROTOCOLS if self.protocol == 'both' else (self.protocol,)

    @property
    def lossy_kinds(self) -> FrozenSet[PacketKind]:
        return frozenset(PacketKind[name.upper()] for name in self.per_applies_to)


# ==================== FIELD READERS ====================

def _int(value: Any, path: str, minimum: Optional[int] = None, maximum: Optional[int] = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise ConfigError(path, f"must be <= {maximum}, got {value}")
    return value


def _number(value: Any, path: str, minimum: Optional[float] = None,
            maximum: Optional[float] = None) -> Number:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise ConfigError(path, f"must be <= {maximum}, got {value}")
    return value


def _list(value: Any, path: str, allow_empty: bool = False) -> list:
    if not isinstance(value, list):
        raise ConfigError(path, f"expected a list, got {value!r}")
    if not value and not allow_empty:
        raise ConfigError(path, "must not be empty")
    return value


def _object(value: Any, path: str, allowed: Sequence[str]) -> Dict[str, Any]:
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected an object, got {value!r}")
    for key in value:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")
    return value


def _skew(value: Any, path: str, max_skew_ppm: int) -> int:
    skew = _int(value, path)
    try:
        ClockModel(skew_ppm=skew).check(max_skew_ppm)
    except ValueError as e:
        raise ConfigError(path, str(e)) from e
    return skew


def _per_node(value: Any, path: str, n_nodes: int, reader) -> Tuple[int, ...]:
    """A scalar applied to every node, or one entry per node."""
    if isinstance(value, list):
        if len(value) != n_nodes:
            raise ConfigError(path, f"expected {n_nodes} entries (one per node), got {len(value)}")
        return tuple(reader(v, f"{path}[{i}]") for i, v in enumerate(value))
    return (reader(value, path),) * n_nodes


def _params(cls, value: Any, path: str, integers: bool = True):
    names = [f.name for f in fields(cls)]
    data = _object(value, path, names)
    for key, v in data.items():
        if integers:
            _int(v, f"{path}.{key}")
        else:
            _number(v, f"{path}.{key}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigError(path, str(e)) from e


# ==================== PARSER ====================

TOP_LEVEL_KEYS = tuple(f.name for f in fields(SimConfig))


def parse_config(text: str) -> SimConfig:
    """Parse a JSON scenario document; `{}` yields the reference scenario."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError('', f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    return config_from_dict(doc)


def load_config(path: str) -> SimConfig:
    with open(path, 'r', encoding='utf-8') as fh:
        cfg = parse_config(fh.read())
    logger.info(f"Loaded scenario {path}: {cfg.n_nodes} nodes, N={cfg.n_cycles}, "
                f"{len(cfg.per)} PER points, {len(cfg.seeds)} seeds")
    return cfg


def config_from_dict(doc: Any) -> SimConfig:
    doc = _object(doc, '', TOP_LEVEL_KEYS)
    defaults = SimConfig()
    get = doc.get

    protocol = get('protocol', defaults.protocol)
    if protocol not in PROTOCOL_CHOICES:
        raise ConfigError('protocol', f"must be one of {', '.join(PROTOCOL_CHOICES)}, got {protocol!r}")
    n_nodes = _int(get('n_nodes', defaults.n_nodes), 'n_nodes', minimum=1)
    n_cycles = _int(get('n_cycles', defaults.n_cycles), 'n_cycles', minimum=1)
    t_frame = _int(get('t_frame', defaults.t_frame), 't_frame', minimum=1)
    f = _number(get('f', defaults.f), 'f', minimum=0)

    per = tuple(_number(v, f"per[{i}]", 0, 100)
                for i, v in enumerate(_list(get('per', list(defaults.per)), 'per')))
    seeds = tuple(_int(v, f"seeds[{i}]", minimum=0)
                  for i, v in enumerate(_list(get('seeds', list(defaults.seeds)), 'seeds')))

    radio = _params(RadioParams, get('radio', {}), 'radio', integers=False)
    for name in ('t_byte', 't_switch', 't_turnaround'):
        _int(getattr(radio, name), f"radio.{name}", minimum=1)

    max_skew = _int(get('max_skew_ppm', defaults.max_skew_ppm), 'max_skew_ppm', minimum=0)
    data_rate = _per_node(get('data_rate', 31), 'data_rate', n_nodes,
                          lambda v, p: _int(v, p, 1, MAX_DATA_PAYLOAD))
    skew_ppm = _per_node(get('skew_ppm', 0), 'skew_ppm', n_nodes,
                         lambda v, p: _skew(v, p, max_skew))
    jitter_us = _per_node(get('jitter_us', 0), 'jitter_us', n_nodes,
                          lambda v, p: _int(v, p, minimum=0))

    cap_len = _int(get('cap_len', defaults.cap_len), 'cap_len', minimum=1)
    t_ms = _int(get('t_ms', defaults.t_ms), 't_ms', minimum=0)
    try:
        FrameLayout.from_partition(t_frame, cap_len, t_ms)
    except InvalidLayout as e:
        raise ConfigError('cap_len', f"frame partition invalid: {e}") from e
    t_cp_raw = get('t_cp')
    t_cp = t_frame if t_cp_raw is None else _int(t_cp_raw, 't_cp', minimum=1)

    channels_raw = _list(get('channels', list(defaults.channels)), 'channels')
    for i, v in enumerate(channels_raw):
        if not isinstance(v, bool):
            raise ConfigError(f"channels[{i}]", f"expected true/false, got {v!r}")
    channels = tuple(channels_raw)
    if all(channels):
        logger.warning("Every channel is busy; the CN will keep rescanning")
    scan_start = _int(get('scan_start', 0), 'scan_start', 0, len(channels) - 1)

    tsrr_air = radio.airtime(fixed_length(PacketKind.TIME_SLOT_REQUEST_REPLY))
    ack_timeout = _int(get('ack_timeout', defaults.ack_timeout), 'ack_timeout',
                       minimum=radio.t_turnaround + tsrr_air)
    join_attempts = _int(get('join_attempts', defaults.join_attempts), 'join_attempts', minimum=1)
    join_budget = _int(get('join_budget_frames', defaults.join_budget_frames),
                       'join_budget_frames', minimum=1)
    slot_margin_raw = get('slot_margin')
    slot_margin = None if slot_margin_raw is None else _int(slot_margin_raw, 'slot_margin', minimum=0)

    applies = _list(get('per_applies_to', list(defaults.per_applies_to)), 'per_applies_to',
                    allow_empty=True)
    for i, name in enumerate(applies):
        if not isinstance(name, str) or name.upper() not in PacketKind.__members__:
            raise ConfigError(f"per_applies_to[{i}]", f"unknown packet kind {name!r}")
    per_applies_to = tuple(name.lower() for name in applies)

    emergency_rate = float(_number(get('emergency_rate', 0.0), 'emergency_rate', minimum=0))
    emergency_bytes = _int(get('emergency_bytes', defaults.emergency_bytes), 'emergency_bytes',
                           0, MAX_DATA_PAYLOAD)

    on_demand = []
    for i, entry in enumerate(_list(get('on_demand', []), 'on_demand', allow_empty=True)):
        path = f"on_demand[{i}]"
        entry = _object(entry, path, ('frame', 'node', 'bytes'))
        for key in ('frame', 'node', 'bytes'):
            if key not in entry:
                raise ConfigError(f"{path}.{key}", "missing")
        on_demand.append(OnDemandRequest(
            frame=_int(entry['frame'], f"{path}.frame", minimum=0),
            node=_int(entry['node'], f"{path}.node", 0, n_nodes - 1),
            bytes=_int(entry['bytes'], f"{path}.bytes", 0, MAX_DATA_PAYLOAD),
        ))

    cap = _params(CapParams, get('cap', {}), 'cap')
    csma = _params(CsmaParams, get('csma', {}), 'csma')

    return SimConfig(
        protocol=protocol, n_nodes=n_nodes, n_cycles=n_cycles, t_frame=t_frame, f=f,
        per=per, seeds=seeds, radio=radio,
        data_rate=data_rate, skew_ppm=skew_ppm, jitter_us=jitter_us,
        cap_len=cap_len, t_ms=t_ms, t_cp=t_cp, channels=channels, scan_start=scan_start,
        ack_timeout=ack_timeout, join_attempts=join_attempts, join_budget_frames=join_budget,
        slot_margin=slot_margin, max_skew_ppm=max_skew, per_applies_to=per_applies_to,
        emergency_rate=emergency_rate, emergency_bytes=emergency_bytes,
        on_demand=tuple(on_demand), cap=cap, csma=csma,
    )
