import csv
import importlib
import io
import json
import os

import pytest

from utils import sweep
from utils.config import config_from_dict, parse_config
from utils.energy import EnergyLedger
from utils.reporting import (RUNS_HEADER, SUMMARY_HEADER, CellReport, NodeCounters, NodeReport,
                             runs_csv, summarize, summary_csv)
from utils.sweep import Cell, build_cells, run_cell, run_sweep, worker_count, write_outputs

SMALL = {'n_nodes': 2, 'n_cycles': 3, 'per': [0, 10], 'seeds': [1, 2]}


def _rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_default_sweep_cells():
    cells = build_cells(parse_config('{}'))
    assert len(cells) == 2 * 20 * 10
    assert cells[0] == Cell('armac', 1, 1)
    assert Cell('csma', 2.5, 3).label == 'csma_per2.5_seed3'


def test_run_cell(make_config):
    report = run_cell(make_config(), Cell('armac', 0, 1))
    assert report.ok
    assert [n.node for n in report.nodes] == [1, 2, 3]
    assert report.schedule_csv.startswith('node,start_us')
    assert report.trace == []


def test_run_cell_with_trace(make_config):
    report = run_cell(make_config(n_cycles=1), Cell('csma', 0, 1), trace=True)
    assert report.ok and report.trace
    assert report.schedule_csv == ''


def test_failing_cell_is_recorded_as_aborted(make_config, monkeypatch, caplog):
    monkeypatch.setitem(sweep.PROTOCOL_MODULES, 'csma', 'mac.missing_protocol')
    report = run_cell(make_config(), Cell('csma', 0, 1))
    assert report.status == 'aborted'
    assert 'ModuleNotFoundError' in report.error
    assert 'aborted' in caplog.text
    row = _rows(runs_csv([report]))[1]
    assert len(row) == len(RUNS_HEADER)
    assert row[:3] == ['csma', '0', '1']
    assert row[-2] == 'aborted'


def test_sweep_is_reproducible():
    cfg = config_from_dict(SMALL)
    first = run_sweep(cfg, threads=1)
    second = run_sweep(cfg, threads=1)
    assert runs_csv(first) == runs_csv(second)
    assert summary_csv(first) == summary_csv(second)


def test_parallel_sweep_matches_serial():
    cfg = config_from_dict(SMALL)
    serial = run_sweep(cfg, threads=1)
    parallel = run_sweep(cfg, threads=2)
    assert runs_csv(parallel) == runs_csv(serial)
    assert [r.key for r in parallel] == [r.key for r in serial]


def test_sweep_output_order():
    reports = run_sweep(config_from_dict(SMALL), threads=1)
    assert [r.key for r in reports] == [
        ('armac', 0, 1), ('armac', 0, 2), ('armac', 10, 1), ('armac', 10, 2),
        ('csma', 0, 1), ('csma', 0, 2), ('csma', 10, 1), ('csma', 10, 2),
    ]


def test_worker_count(monkeypatch):
    monkeypatch.setenv('ARMAC_SIM_THREADS', '3')
    assert worker_count() == 3
    monkeypatch.setenv('ARMAC_SIM_THREADS', 'many')
    assert worker_count() == (os.cpu_count() or 1)


# ==================== REPORTING ====================

def _node(node, mj):
    return NodeReport(node, EnergyLedger(e_sleep=mj * 10 ** 12), EnergyLedger(), NodeCounters())


def test_summary_statistics():
    reports = [
        CellReport('armac', 5, 1, nodes=[_node(1, 1), _node(2, 3)]),
        CellReport('armac', 5, 2, nodes=[_node(1, 2), _node(2, 2)]),
        CellReport('armac', 5, 3, status='aborted', error='boom'),
        CellReport('csma', 5, 1, nodes=[_node(1, 6), _node(2, 6)]),
    ]
    rows = summarize(reports)
    assert [(r['per_percent'], r['protocol']) for r in rows] == [('5', 'armac'), ('5', 'csma')]
    armac = rows[0]
    assert armac['mean_total_energy_mj'] == pytest.approx(4.0)
    assert armac['stddev'] == pytest.approx(0.0)
    assert armac['mean_node_energy_mj'] == pytest.approx(2.0)
    assert armac['node_stddev'] == pytest.approx((2 / 3) ** 0.5)
    assert rows[1]['stddev'] == 0.0

    lines = summary_csv(reports).split('\n')
    assert lines[0] == ','.join(SUMMARY_HEADER)
    assert lines[1] == '5,armac,4.000000,0.000000,2.000000,0.816497'


def test_runs_csv_row():
    counters = NodeCounters(sent=3, delivered=2, lost=1, join_frame=0)
    ledger = EnergyLedger(e_sleep=1_500, e_trans=2_000_000_000)
    report = CellReport('armac', 1.0, 4, nodes=[NodeReport(7, ledger, EnergyLedger(e_rec=10 ** 9),
                                                           counters)], cfp_collisions=0)
    header, row = _rows(runs_csv([report]))
    assert header == RUNS_HEADER
    record = dict(zip(header, row))
    assert record['per_percent'] == '1'
    assert record['node'] == '7'
    assert record['e_sleep_uj'] == '0.000002'
    assert record['e_trans_uj'] == '2.000000'
    assert record['e_total_uj'] == '2.000002'
    assert record['join_energy_uj'] == '1.000000'
    assert (record['sent'], record['delivered'], record['lost']) == ('3', '2', '1')
    assert record['status'] == 'ok' and record['error'] == ''


def test_write_outputs(tmp_path, make_config):
    cfg = make_config(per=[0], seeds=[1], n_cycles=2)
    reports = run_sweep(cfg, trace=True, threads=1)
    written = write_outputs(reports, str(tmp_path / 'out'), trace=True)
    names = sorted(os.path.basename(p) for p in written)
    assert names == ['runs.csv', 'schedule_armac_per0_seed1.csv', 'summary.csv',
                     'trace_armac_per0_seed1.txt', 'trace_csma_per0_seed1.txt']
    runs = _rows((tmp_path / 'out' / 'runs.csv').read_text(encoding='utf-8'))
    assert len(runs) == 1 + 2 * cfg.n_nodes
    raw = (tmp_path / 'out' / 'summary.csv').read_bytes()
    assert b'\r\n' not in raw


# ==================== CLI ====================

@pytest.fixture
def cli(monkeypatch, tmp_path):
    monkeypatch.setenv('ARMAC_SIM_THREADS', '1')
    monkeypatch.setenv('ARMAC_SIM_LOG_FILE', str(tmp_path / 'sim.log'))
    return importlib.import_module('sim')


def _scenario(tmp_path, doc):
    path = tmp_path / 'scenario.json'
    path.write_text(json.dumps(doc), encoding='utf-8')
    return str(path)


def test_cli_run(cli, tmp_path):
    out = tmp_path / 'results'
    code = cli.main(['run', '--config', _scenario(tmp_path, SMALL), '--out', str(out),
                     '--protocol', 'armac', '--seeds', '5'])
    assert code == 0
    rows = _rows((out / 'runs.csv').read_text(encoding='utf-8'))
    assert {(r[0], r[2]) for r in rows[1:]} == {('armac', '5')}
    assert (out / 'schedule_armac_per10_seed5.csv').exists()
    assert not list(out.glob('trace_*'))


def test_cli_trace(cli, tmp_path):
    out = tmp_path / 'results'
    doc = dict(SMALL, per=[0], seeds=[1])
    assert cli.main(['run', '--config', _scenario(tmp_path, doc), '--out', str(out), '--trace']) == 0
    assert (out / 'trace_csma_per0_seed1.txt').read_text(encoding='utf-8').strip()


def test_cli_config_error(cli, tmp_path):
    assert cli.main(['run', '--config', _scenario(tmp_path, {'n_nodes': -1})]) == 1
    assert cli.main(['run', '--config', str(tmp_path / 'missing.json')]) == 1


def test_cli_aborted_cell(cli, tmp_path, monkeypatch):
    monkeypatch.setitem(sweep.PROTOCOL_MODULES, 'csma', 'mac.missing_protocol')
    out = tmp_path / 'results'
    assert cli.main(['run', '--config', _scenario(tmp_path, SMALL), '--out', str(out)]) == 2
    rows = _rows((out / 'runs.csv').read_text(encoding='utf-8'))
    assert any(r[0] == 'csma' and r[-2] == 'aborted' for r in rows[1:])
    assert any(r[0] == 'armac' and r[-2] == 'ok' for r in rows[1:])


def test_cli_rejects_bad_seeds(cli, tmp_path):
    with pytest.raises(SystemExit):
        cli.main(['run', '--config', _scenario(tmp_path, SMALL), '--seeds', 'a,b'])


# ==================== ACCEPTANCE ====================

@pytest.mark.slow
def test_energy_against_packet_error_rate():
    cfg = config_from_dict({'n_cycles': 200, 'seeds': list(range(1, 11))})
    rows = summarize(run_sweep(cfg))
    armac = {r['per_percent']: r['mean_node_energy_mj'] for r in rows if r['protocol'] == 'armac'}
    csma = {r['per_percent']: r['mean_node_energy_mj'] for r in rows if r['protocol'] == 'csma'}
    points = [str(p) for p in range(1, 21)]
    assert armac['20'] <= armac['1'] * 1.15
    assert armac['20'] > armac['1']
    rising = sum(1 for a, b in zip(points, points[1:]) if csma[b] >= csma[a])
    assert rising >= 0.9 * (len(points) - 1)
    assert all(csma[p] > armac[p] for p in points)


@pytest.mark.slow
def test_sweep_outputs_are_byte_identical(tmp_path):
    cfg = parse_config('{"n_cycles": 100, "seeds": [1, 2]}')
    a = write_outputs(run_sweep(cfg), str(tmp_path / 'a'))
    b = write_outputs(run_sweep(cfg), str(tmp_path / 'b'))
    for left, right in zip(sorted(a), sorted(b)):
        with open(left, 'rb') as fa, open(right, 'rb') as fb:
            assert fa.read() == fb.read()
