from mac.common import CapAccess, CapExhausted, CapParams
from utils.energy import RadioMeter, RadioParams
from utils.engine import ChannelModel, Medium, Simulator, StreamId, make_stream
from utils.protocol import data_packet

ACK_TIMEOUT = 864
CAP_LEN = 100_000


class Owner:
    def __init__(self, name):
        self.name = name
        self.outcome = None

    def done(self, tx, failure):
        self.outcome = (tx, failure)


def make_access(medium, owner, seed=1, index=0, cap_len=CAP_LEN, params=None):
    return CapAccess(owner, medium, params or CapParams(), RadioMeter(RadioParams()),
                     make_stream(seed, StreamId.BACKOFF, index), cap_len)


def make_medium(seed=1):
    sim = Simulator()
    return sim, Medium(sim, ChannelModel(0.0, make_stream(seed, StreamId.CHANNEL)), 32)


def test_lone_node_transmits():
    sim, medium = make_medium()
    owner = Owner('N1')
    make_access(medium, owner).start(CAP_LEN, data_packet(1, bytes(16)), [], ACK_TIMEOUT, owner.done)
    sim.run_until(CAP_LEN)
    tx, failure = owner.outcome
    assert failure is None
    assert tx.delivered
    assert tx.start <= CAP_LEN // 4 + CapParams().cca_len


def test_cap_too_short_for_the_packet():
    sim, medium = make_medium()
    owner = Owner('N1')
    access = make_access(medium, owner, cap_len=1000)
    # 35 octets take 1120 µs on air
    access.start(1000, data_packet(1, bytes(31)), [], 0, owner.done)
    sim.run_until(1000)
    tx, failure = owner.outcome
    assert tx is None
    assert isinstance(failure, CapExhausted)
    assert not access.active
    assert medium.stats.sent == {}


def test_busy_channel_exhausts_the_attempt(monkeypatch):
    sim, medium = make_medium()
    monkeypatch.setattr(medium, 'busy', lambda start, end: True)
    owner = Owner('N1')
    access = make_access(medium, owner, params=CapParams(max_retries=2))
    access.start(CAP_LEN, data_packet(1, bytes(16)), [], ACK_TIMEOUT, owner.done)
    sim.run_until(CAP_LEN)
    tx, failure = owner.outcome
    assert tx is None
    assert isinstance(failure, CapExhausted)
    assert 'busy after 3 assessments' in str(failure)


def test_simultaneous_emergencies_are_usually_separated():
    trials = 300
    separated = 0
    for seed in range(trials):
        sim, medium = make_medium(seed)
        owners = [Owner('N1'), Owner('N2')]
        for index, owner in enumerate(owners):
            make_access(medium, owner, seed=seed, index=index).start(
                CAP_LEN, data_packet(index + 1, bytes(16)), [], ACK_TIMEOUT, owner.done)
        sim.run_until(CAP_LEN)
        sent = [owner.outcome[0] for owner in owners]
        if all(tx is not None and not tx.collided for tx in sent):
            separated += 1
    assert separated / trials >= 0.9
