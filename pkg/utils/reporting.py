"""
Run Reporting
Per-node counters and ledgers collected from one simulated cell, and the CSV
writers for runs.csv and summary.csv.

CSV files use '.' decimals, LF line endings and a header row. Energies are
rendered from integer femtojoules so output bytes never depend on float
formatting, except the summary statistics which are computed with numpy.
"""
import csv
import io
import logging
from dataclasses import dataclass, field, fields
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from utils.energy import FJ_PER_MJ, EnergyLedger, format_uj

logger = logging.getLogger('ARMACSim.Reporting')

Number = Union[int, float]

STATUS_OK = 'ok'
STATUS_ABORTED = 'aborted'


@dataclass
class NodeCounters:
    sent: int = 0
    delivered: int = 0
    lost: int = 0
    collided: int = 0
    retried: int = 0
    duplicates: int = 0       # retransmissions the CN had already received
    dropped: int = 0
    sync_acks: int = 0
    join_frame: int = -1
    on_demand_done: int = 0
    on_demand_abandoned: int = 0
    emergency_sent: int = 0
    cap_exhausted: int = 0
    csma_caf: int = 0
    csma_retry_exhausted: int = 0


COUNTER_FIELDS = tuple(f.name for f in fields(NodeCounters))
ENERGY_FIELDS = ('e_sleep', 'e_switch', 'e_trans', 'e_rec', 'e_tout')

RUNS_HEADER = (
    ['protocol', 'per_percent', 'seed', 'node']
    + [f"{name}_uj" for name in ENERGY_FIELDS]
    + ['e_total_uj', 'join_energy_uj']
    + list(COUNTER_FIELDS)
    + ['cfp_collisions', 'status', 'error']
)

SUMMARY_HEADER = ['per_percent', 'protocol', 'mean_total_energy_mj', 'stddev',
                  'mean_node_energy_mj', 'node_stddev']


@dataclass
class NodeReport:
    node: int
    ledger: EnergyLedger
    join_ledger: EnergyLedger
    counters: NodeCounters


@dataclass
class CellReport:
    """Outcome of one (protocol, per, seed) cell."""
    protocol: str
    per_percent: Number
    seed: int
    nodes: List[NodeReport] = field(default_factory=list)
    cfp_collisions: int = 0
    status: str = STATUS_OK
    error: str = ''
    schedule_csv: str = ''
    trace: List[str] = field(default_factory=list)

    @property
    def key(self) -> Tuple[str, Number, int]:
        return (self.protocol, self.per_percent, self.seed)

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK

    @property
    def total_energy_fj(self) -> int:
        return sum(n.ledger.e_total for n in self.nodes)


def format_percent(value: Number) -> str:
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


def sort_key(report: CellReport) -> tuple:
    return (report.protocol, float(report.per_percent), report.seed)


def _node_row(cell: CellReport, node: NodeReport) -> list:
    ledger = node.ledger
    row = [cell.protocol, format_percent(cell.per_percent), cell.seed, node.node]
    row.extend(format_uj(getattr(ledger, name)) for name in ENERGY_FIELDS)
    row.append(format_uj(ledger.e_total))
    row.append(format_uj(node.join_ledger.e_total))
    row.extend(getattr(node.counters, name) for name in COUNTER_FIELDS)
    row.extend([cell.cfp_collisions, cell.status, cell.error])
    return row


def _aborted_row(cell: CellReport) -> list:
    blanks = [''] * (len(RUNS_HEADER) - 6)
    return ([cell.protocol, format_percent(cell.per_percent), cell.seed]
            + blanks + ['', cell.status, cell.error])


def runs_csv(reports: Iterable[CellReport]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(RUNS_HEADER)
    for cell in sorted(reports, key=sort_key):
        if not cell.ok:
            writer.writerow(_aborted_row(cell))
            continue
        for node in cell.nodes:
            writer.writerow(_node_row(cell, node))
    return out.getvalue()


def _mean_std(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return 0.0, 0.0
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return float(np.mean(arr)), std


def summarize(reports: Iterable[CellReport]) -> List[dict]:
    """Aggregate successful cells into one row per (per_percent, protocol)."""
    cells: Dict[Tuple[float, str], List[CellReport]] = {}
    for cell in reports:
        if not cell.ok:
            logger.debug(f"Skipping aborted cell {cell.key} in summary")
            continue
        cells.setdefault((float(cell.per_percent), cell.protocol), []).append(cell)

    rows = []
    for (per, protocol), group in sorted(cells.items()):
        totals = [c.total_energy_fj / FJ_PER_MJ for c in group]
        per_node = [n.ledger.e_total / FJ_PER_MJ for c in group for n in c.nodes]
        mean_total, std_total = _mean_std(totals)
        mean_node, std_node = _mean_std(per_node)
        rows.append({
            'per_percent': format_percent(group[0].per_percent),
            'protocol': protocol,
            'mean_total_energy_mj': mean_total,
            'stddev': std_total,
            'mean_node_energy_mj': mean_node,
            'node_stddev': std_node,
        })
    return rows


def summary_csv(reports: Iterable[CellReport]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(SUMMARY_HEADER)
    for row in summarize(reports):
        writer.writerow([
            row['per_percent'],
            row['protocol'],
            f"{row['mean_total_energy_mj']:.6f}",
            f"{row['stddev']:.6f}",
            f"{row['mean_node_energy_mj']:.6f}",
            f"{row['node_stddev']:.6f}",
        ])
    return out.getvalue()
