"""
Sweep Runner
Expands a SimConfig into (protocol, per, seed) cells, runs each cell on a
fresh simulator, and writes runs.csv, summary.csv and the per-cell schedule
and trace artifacts.

Cells share no state, so they run in a process pool capped by
ARMAC_SIM_THREADS (1 = serial, in-process). Output order is the sorted cell
key, independent of completion order.
"""
import importlib
import logging
import os
from dataclasses import dataclass
from multiprocessing import Pool
from typing import Dict, List, Optional, Tuple

from mac.common import RunContext
from utils.config import SimConfig
from utils.reporting import (STATUS_ABORTED, CellReport, format_percent, runs_csv, sort_key,
                             summarize, summary_csv)

logger = logging.getLogger('ARMACSim.Sweep')

# Protocol name -> module exposing setup(ctx)
PROTOCOL_MODULES: Dict[str, str] = {
    'armac': 'mac.armac',
    'csma': 'mac.baseline',
}

THREADS_ENV = 'ARMAC_SIM_THREADS'

__all__ = ['Cell', 'PROTOCOL_MODULES', 'build_cells', 'load_protocol', 'run_cell', 'run_sweep',
           'summarize', 'worker_count', 'write_outputs']


@dataclass(frozen=True)
class Cell:
    protocol: str
    per_percent: float
    seed: int

    @property
    def label(self) -> str:
        return f"{self.protocol}_per{format_percent(self.per_percent)}_seed{self.seed}"


def build_cells(cfg: SimConfig) -> List[Cell]:
    return [Cell(protocol, per, seed)
            for protocol in cfg.protocols
            for per in cfg.per
            for seed in cfg.seeds]


def load_protocol(ctx: RunContext):
    """Import the protocol module by dotted name and let it attach its runner."""
    module = importlib.import_module(PROTOCOL_MODULES[ctx.protocol])
    module.setup(ctx)
    return ctx.runner


def run_cell(cfg: SimConfig, cell: Cell, trace: bool = False) -> CellReport:
    logger.info(f"Running cell {cell.label}")
    try:
        ctx = RunContext(cfg, cell.protocol, cell.per_percent, cell.seed, trace=trace)
        runner = load_protocol(ctx)
        runner.start()
        processed = ctx.sim.run_until(ctx.horizon)
        report = CellReport(
            protocol=cell.protocol,
            per_percent=cell.per_percent,
            seed=cell.seed,
            nodes=runner.node_reports(),
            cfp_collisions=runner.cfp_collisions,
            schedule_csv=runner.schedule_csv,
            trace=list(ctx.sim.trace_lines),
        )
    except Exception as e:
        logger.error(f"Cell {cell.label} aborted: {type(e).__name__}: {e}")
        return CellReport(protocol=cell.protocol, per_percent=cell.per_percent, seed=cell.seed,
                          status=STATUS_ABORTED, error=f"{type(e).__name__}: {e}")
    logger.info(f"Finished cell {cell.label}: {processed} events, "
                f"{report.total_energy_fj / 1e12:.3f} mJ total")
    return report


def _run_cell_job(job: Tuple[SimConfig, Cell, bool]) -> CellReport:
    cfg, cell, trace = job
    return run_cell(cfg, cell, trace)


def worker_count() -> int:
    raw = os.getenv(THREADS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            logger.warning(f"Ignoring {THREADS_ENV}={raw!r}: not an integer")
    return os.cpu_count() or 1


def run_sweep(cfg: SimConfig, trace: bool = False, threads: Optional[int] = None) -> List[CellReport]:
    cells = build_cells(cfg)
    workers = min(threads or worker_count(), len(cells))
    logger.info(f"Sweep: {len(cells)} cells on {workers} worker(s)")
    if workers <= 1:
        reports = [run_cell(cfg, cell, trace) for cell in cells]
    else:
        with Pool(workers) as pool:
            reports = pool.map(_run_cell_job, [(cfg, cell, trace) for cell in cells])
    return sorted(reports, key=sort_key)


def _write(path: str, text: str):
    with open(path, 'w', encoding='utf-8', newline='') as fh:
        fh.write(text)


def write_outputs(reports: List[CellReport], out_dir: str, trace: bool = False) -> List[str]:
    """Write runs.csv, summary.csv, schedule and trace files; returns the paths written."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name, text in (('runs.csv', runs_csv(reports)), ('summary.csv', summary_csv(reports))):
        path = os.path.join(out_dir, name)
        _write(path, text)
        written.append(path)
    for report in reports:
        label = Cell(*report.key).label
        if report.schedule_csv:
            path = os.path.join(out_dir, f"schedule_{label}.csv")
            _write(path, report.schedule_csv)
            written.append(path)
        if trace and report.trace:
            path = os.path.join(out_dir, f"trace_{label}.txt")
            _write(path, ''.join(f"{line}\n" for line in report.trace))
            written.append(path)
    logger.info(f"Wrote {len(written)} files to {out_dir}")
    return written
