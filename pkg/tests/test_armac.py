import math

import pytest

from mac.armac import CnPhase, NodePhase, RfEnvironment, cn_select_channel
from mac.common import RunContext
from utils.energy import closed_form_cycle
from utils.sweep import load_protocol

T_FRAME = 1_000_000
D_REFERENCE = 158


def ledgers_match(ledger, expected):
    return all(getattr(ledger, name) == getattr(expected, name)
               for name in ('e_sleep', 'e_switch', 'e_trans', 'e_rec', 'e_tout', 'cycles_counted'))


@pytest.mark.parametrize('flags,expected', [
    ([False, False, False, False], 0),
    ([True, False, True, False], 1),
    ([True, True, True, False], 3),
    ([True, True], None),
])
def test_cn_picks_first_free_channel(flags, expected):
    assert cn_select_channel(RfEnvironment.from_flags(flags, T_FRAME)) == expected


def test_setup_attaches_once(make_config):
    ctx = RunContext(make_config(), 'armac', 0, 1)
    load_protocol(ctx)
    with pytest.raises(RuntimeError):
        load_protocol(ctx)


def test_lossless_cycles_match_closed_form(make_config, simulate, radio):
    cfg = make_config()
    ctx = simulate(cfg)
    run = ctx.runner
    _, cycle = closed_form_cycle(35, 4, radio, T_FRAME)
    expected = cycle.times(cfg.n_cycles)
    assert run.cn.phase == CnPhase.OPERATING
    assert run.cfp_collisions == 0
    for node in run.nodes:
        assert node.phase == NodePhase.FINISHED
        assert node.counters.join_frame >= 0
        assert node.counters.sent == node.counters.delivered == cfg.n_cycles
        assert node.counters.sync_acks == 0
        assert node.join_ledger.e_total > 0
        assert ledgers_match(node.ledger, expected)
        assert node.ledger.t_active == cfg.n_cycles * 1824


def test_schedule_export(make_config, simulate):
    run = simulate(make_config()).runner
    lines = run.schedule_csv.strip().split('\n')
    assert lines[0] == 'node,start_us,len_us,preceding_gb_us'
    assert len(lines) == 4
    assert sorted(int(line.split(',')[0]) for line in lines[1:]) == [1, 2, 3]
    assert run.cn.schedule.d == D_REFERENCE


def test_lossy_run_accounting(make_config, simulate):
    cfg = make_config(n_cycles=40)
    lossy = simulate(cfg, per_percent=20).runner
    clean = simulate(cfg, per_percent=0).runner
    assert lossy.cfp_collisions == 0
    for node in lossy.nodes:
        c = node.counters
        assert node.ledger.cycles_counted == 40
        assert node.ledger.t_active + node.ledger.t_sleep == 40 * T_FRAME
        # a failed exchange never leaves room for a second attempt in the slot
        assert c.retried == 0 and c.sent == 40
        assert c.sent == c.delivered + c.lost + c.collided
        assert c.dropped > 0
    assert (sum(n.ledger.e_total for n in lossy.nodes)
            > sum(n.ledger.e_total for n in clean.nodes))


def test_runs_are_deterministic(make_config, simulate):
    cfg = make_config(n_cycles=20, skew_ppm=[100, -50, 0], jitter_us=30)
    first = simulate(cfg, per_percent=10, seed=4).runner
    second = simulate(cfg, per_percent=10, seed=4).runner
    for a, b in zip(first.node_reports(), second.node_reports()):
        assert a == b
    assert first.schedule_csv == second.schedule_csv


def test_seeds_change_outcomes(make_config, simulate):
    cfg = make_config(n_cycles=30)
    a = simulate(cfg, per_percent=20, seed=1).runner.node_reports()
    b = simulate(cfg, per_percent=20, seed=2).runner.node_reports()
    assert [r.counters for r in a] != [r.counters for r in b]


def test_skewed_clocks_are_resynchronized(make_config, simulate):
    cfg = make_config(n_cycles=30, skew_ppm=300)
    run = simulate(cfg).runner
    assert run.cfp_collisions == 0
    bound = math.ceil(cfg.n_cycles * 300 * T_FRAME / (D_REFERENCE * 1_000_000)) + 1
    for node in run.nodes:
        assert node.counters.delivered == cfg.n_cycles
        assert 0 < node.counters.sync_acks <= bound
    assert sum(n.ledger.e_rec for n in run.nodes) > 0


def test_jitter_inside_tolerance_needs_no_sync(make_config, simulate):
    run = simulate(make_config(n_cycles=20, jitter_us=50)).runner
    assert run.cfp_collisions == 0
    for node in run.nodes:
        assert node.counters.delivered == 20
        assert node.counters.sync_acks == 0


@pytest.mark.slow
@pytest.mark.parametrize('skew', [-300, -100, -50, 50, 100, 300])
def test_sync_property_over_long_runs(make_config, simulate, skew):
    cfg = make_config(n_nodes=10, n_cycles=1000, skew_ppm=skew)
    run = simulate(cfg).runner
    assert run.cfp_collisions == 0
    bound = math.ceil(cfg.n_cycles * abs(skew) * T_FRAME / (D_REFERENCE * 1_000_000)) + 1
    for node in run.nodes:
        assert node.counters.sync_acks <= bound
        assert node.counters.delivered == cfg.n_cycles


def test_fast_first_slot_node_stays_in_its_slot(make_config, simulate):
    # +300 ppm pulls the first slot ahead of the CFP start by more than D every frame
    cfg = make_config(n_nodes=1, n_cycles=30, skew_ppm=300)
    run = simulate(cfg, trace=True).runner
    node = run.nodes[0]
    assert node.counters.delivered == cfg.n_cycles
    assert node.counters.sync_acks >= cfg.n_cycles - 1
    assert run.cfp_collisions == 0
    events = [line.split(',')[2] for line in run.ctx.sim.trace_lines]
    assert 'emergency' not in events
    assert 'unscheduled_data' not in events


def test_retransmission_inside_a_wide_slot(make_config, simulate):
    cfg = make_config(n_cycles=40, slot_margin=2500)
    run = simulate(cfg, per_percent=20).runner
    assert run.cfp_collisions == 0
    assert sum(n.counters.retried for n in run.nodes) > 0
    for node in run.nodes:
        c = node.counters
        assert c.sent == cfg.n_cycles + c.retried
        assert c.sent == c.delivered + c.duplicates + c.lost + c.collided
        assert c.delivered <= cfg.n_cycles
        assert c.delivered + c.dropped >= cfg.n_cycles
        # a retry after a lost first attempt is recognised as on time
        assert c.sync_acks == 0
        assert node.ledger.cycles_counted == cfg.n_cycles


# ==================== CHANNEL ACQUISITION ====================

def test_busy_channel_is_skipped(make_config, simulate):
    run = simulate(make_config(channels=[True, False])).runner
    assert run.cn.channel_id == 1
    for node in run.nodes:
        assert node.counters.join_frame >= 1
        assert node.ledger.cycles_counted == 5


def test_no_free_channel(make_config, simulate):
    run = simulate(make_config(channels=[True, True], join_budget_frames=3)).runner
    assert run.cn.channel_id is None
    assert run.cn.phase == CnPhase.SCANNING_CHANNELS
    for node in run.nodes:
        assert node.phase == NodePhase.FINISHED
        assert node.counters.join_frame == -1
        assert node.ledger.cycles_counted == 0
        assert node.join_ledger.e_rec > 0


def test_cfp_overflow_leaves_one_node_out(make_config, simulate):
    # CFP of 4000 µs fits two reference slots
    run = simulate(make_config(t_ms=896_000, join_budget_frames=10)).runner
    joined = [n for n in run.nodes if n.counters.join_frame >= 0]
    assert len(joined) == 2
    for node in joined:
        assert node.ledger.cycles_counted == 5
    left_out = [n for n in run.nodes if n.counters.join_frame < 0]
    assert left_out[0].phase == NodePhase.FINISHED
    assert run.cfp_collisions == 0
    assert len(run.cn.schedule.slots) == 2


# ==================== CAP TRAFFIC ====================

def test_on_demand_request_is_served(make_config, simulate):
    cfg = make_config(n_nodes=2, n_cycles=10, on_demand=[{'frame': 2, 'node': 0, 'bytes': 40}])
    run = simulate(cfg, trace=True).runner
    first, second = run.nodes
    assert first.counters.on_demand_done == 1
    assert first.counters.on_demand_abandoned == 0
    assert second.counters.on_demand_done == 0
    assert run.cn.pending_demands == []
    assert any(',CN,on_demand_done,N1' in line for line in run.ctx.sim.trace_lines)


def test_on_demand_request_is_abandoned(make_config, simulate):
    cfg = make_config(n_nodes=2, n_cycles=10, per_applies_to=['data_request'],
                      on_demand=[{'frame': 2, 'node': 1, 'bytes': 40}])
    run = simulate(cfg, per_percent=100).runner
    assert run.nodes[1].counters.on_demand_abandoned == 1
    assert run.nodes[1].counters.on_demand_done == 0
    # Data, Ack and Channel packets are unaffected
    assert all(n.counters.delivered == 10 for n in run.nodes)


def test_emergency_traffic_uses_the_cap(make_config, simulate):
    cfg = make_config(n_nodes=2, n_cycles=20, emergency_rate=5.0)
    run = simulate(cfg).runner
    assert run.cfp_collisions == 0
    for node in run.nodes:
        assert node.counters.emergency_sent > 0
        assert node.counters.delivered == 20
        assert node.ledger.cycles_counted == 20
        assert node.ledger.t_active + node.ledger.t_sleep == 20 * T_FRAME


def test_trace_records_protocol_events(make_config, simulate):
    lines = simulate(make_config(n_nodes=1, n_cycles=2), trace=True).sim.trace_lines
    events = {line.split(',')[2] for line in lines}
    assert {'channel_selected', 'channel_acquired', 'joined', 'tx'} <= events
    assert lines == sorted(lines, key=lambda line: int(line.split(',')[0]))
