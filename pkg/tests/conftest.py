import pytest

from mac.common import RunContext
from utils.config import config_from_dict
from utils.energy import RadioParams
from utils.sweep import load_protocol


@pytest.fixture
def radio():
    return RadioParams()


@pytest.fixture
def make_config():
    """Small scenario: 3 nodes, 5 cycles, PER 0, one seed; keyword overrides win."""
    def build(**overrides):
        doc = {'n_nodes': 3, 'n_cycles': 5, 'per': [0], 'seeds': [1]}
        doc.update(overrides)
        return config_from_dict(doc)
    return build


@pytest.fixture
def simulate():
    """Run one cell to its horizon and hand back the context."""
    def run(cfg, protocol='armac', per_percent=0, seed=1, trace=False):
        ctx = RunContext(cfg, protocol, per_percent, seed, trace=trace)
        load_protocol(ctx).start()
        ctx.sim.run_until(ctx.horizon)
        return ctx
    return run
