from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wlansim.engine import Constant, RngStream, Uniform
from wlansim.network import Network
from wlansim.radio import DOWNLINK, UPLINK
from wlansim.scenario import ScenarioConfig
from wlansim.traffic import (
    CONGESTION_AVOIDANCE,
    SLOW_START,
    GameFlowParams,
    SinkConfig,
    TcpSink,
    TcpState,
    fill_window,
    game_next_departure,
    tcp_on_ack,
    tcp_on_loss,
)

# ------------------------------------------------------------------------ game


def test_no_jitter_constant_gaps():
    p = GameFlowParams(uplink_rate_pps=50, jitter_frac=0.0)
    rng = RngStream(1, "g")
    assert {game_next_departure(p, UPLINK, rng)[0] for _ in range(100)} == {20_000}


def test_constant_size():
    p = GameFlowParams(uplink_size=Constant(80))
    rng = RngStream(1, "g")
    assert {game_next_departure(p, UPLINK, rng)[1] for _ in range(100)} == {80}


def test_gap_jitter_and_downlink_sizes_within_bounds():
    p = GameFlowParams()
    rng = RngStream(2, "g")
    for _ in range(1000):
        gap, size = game_next_departure(p, DOWNLINK, rng)
        assert 1e6 / 12 * 0.8 - 1 <= gap <= 1e6 / 12 * 1.2 + 1
        assert 120 <= size <= 320


def test_default_aggregate_packet_count_over_24_s():
    p = GameFlowParams()
    assert p.aggregate_pps == 72
    total = 0
    for direction in (UPLINK, DOWNLINK):
        rng = RngStream(4, direction)
        t = 0
        while True:
            gap, _ = game_next_departure(p, direction, rng)
            t += gap
            if t > 24_000_000:
                break
            total += 1
    assert abs(total - 1728) <= 0.01 * 1728


def test_invalid_game_params():
    with pytest.raises(ValueError):
        GameFlowParams(uplink_rate_pps=0)
    with pytest.raises(ValueError):
        GameFlowParams(downlink_size=Uniform(-5, -1))
    with pytest.raises(ValueError):
        game_next_departure(GameFlowParams(), "sideways", RngStream(0, "g"))


# ------------------------------------------------------------------------- tcp


def test_slow_start_ack_adds_one():
    s = TcpState(cwnd_pkts=2)
    fill_window(s)
    tcp_on_ack(s, 0)
    assert s.cwnd_pkts == 3
    assert s.mode == SLOW_START


def test_slow_start_switches_at_ssthresh():
    s = TcpState(cwnd_pkts=3, ssthresh_pkts=4)
    fill_window(s)
    tcp_on_ack(s, 0)
    assert s.cwnd_pkts == 4
    assert s.mode == CONGESTION_AVOIDANCE


def test_congestion_avoidance_ten_acks_grow_by_one():
    # oracle: iterate the additive-increase rule by hand
    expected = 10.0
    for _ in range(10):
        expected += 1.0 / expected
    s = TcpState(cwnd_pkts=10, mode=CONGESTION_AVOIDANCE)
    sent = fill_window(s)
    assert sent == list(range(10))
    for seq in sent:
        tcp_on_ack(s, seq)
    assert s.cwnd_pkts == pytest.approx(expected, abs=1e-12)
    assert s.cwnd_pkts == pytest.approx(11, abs=0.1)


def test_ack_for_unknown_seq_is_counted():
    s = TcpState()
    fill_window(s)
    tcp_on_ack(s, 999)
    assert s.unknown_acks == 1
    assert s.cwnd_pkts == 2


def test_new_segments_follow_acks():
    s = TcpState(cwnd_pkts=2)
    assert fill_window(s) == [0, 1]
    assert tcp_on_ack(s, 0) == [2, 3]
    assert s.in_flight == 3


@pytest.mark.parametrize("cwnd, after", [(40, 20), (3, 2), (2, 2), (2.5, 2)])
def test_loss_halves_with_floor(cwnd, after):
    s = TcpState(cwnd_pkts=cwnd)
    tcp_on_loss(s)
    assert s.cwnd_pkts == after
    assert s.ssthresh_pkts == after
    assert s.mode == CONGESTION_AVOIDANCE


def test_repeated_losses_never_below_two():
    s = TcpState(cwnd_pkts=64)
    for _ in range(20):
        tcp_on_loss(s)
        assert s.cwnd_pkts >= 2


def test_lost_segment_is_retransmitted_first():
    s = TcpState(cwnd_pkts=4, mode=CONGESTION_AVOIDANCE)
    fill_window(s)
    s.recover = 0
    out = tcp_on_loss(s, 1)
    assert s.cwnd_pkts == 2
    assert out == []  # three still outstanding, window is two
    tcp_on_ack(s, 0)
    tcp_on_ack(s, 2)
    assert 1 in s.outstanding
    assert s.retransmissions == 1


def test_one_reduction_per_window():
    s = TcpState(cwnd_pkts=20, mode=CONGESTION_AVOIDANCE)
    fill_window(s)
    tcp_on_loss(s, 3)
    tcp_on_loss(s, 4)
    assert s.cwnd_pkts == 10


def test_random_loss_retransmits_without_reduction():
    s = TcpState(cwnd_pkts=20, mode=CONGESTION_AVOIDANCE)
    fill_window(s)
    tcp_on_loss(s, 3, congestion=False)
    assert s.cwnd_pkts == 20
    assert 3 in s.outstanding and s.retransmissions == 1


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["ack", "loss", "rand", "bogus"]), st.integers(0, 200)), max_size=300))
def test_segment_conservation_and_floor(ops):
    s = TcpState()
    fill_window(s)
    for kind, k in ops:
        before = s.in_flight
        live = sorted(s.outstanding)
        if kind == "bogus":
            tcp_on_ack(s, 10**6 + k)
        elif live:
            seq = live[k % len(live)]
            if kind == "ack":
                tcp_on_ack(s, seq)
            else:
                tcp_on_loss(s, seq, congestion=kind == "loss")
        assert s.conserved()
        assert s.cwnd_pkts >= 1
        # after a halving the window may briefly sit below what is already in
        # flight; it drains without new sends
        assert s.in_flight <= max(int(s.cwnd_pkts), before)


# ------------------------------------------------------------------------ sink


def test_sink_acks_every_segment_by_default():
    sink = TcpSink()
    assert sink.on_segment(0) == (0,)
    assert sink.on_segment(1) == (1,)


def test_sink_acks_every_n():
    sink = TcpSink(SinkConfig(acks_every=2))
    assert sink.on_segment(0) is None
    assert sink.on_segment(1) == (0, 1)


def test_sink_duplicate_is_acked_at_most_once():
    sink = TcpSink()
    assert sink.on_segment(5) == (5,)
    assert sink.on_segment(5) is None
    assert sink.duplicates == 1


def test_sink_restores_lost_acks():
    sink = TcpSink()
    acked = sink.on_segment(0)
    sink.restore(acked)
    assert sink.on_segment(1) == (0, 1)


def test_invalid_sink_config():
    with pytest.raises(ValueError):
        SinkConfig(acks_every=0)


def test_game_sink_records_without_ack():
    net = Network(ScenarioConfig.canned("exp1", {"duration_s": 1.0})).run()
    assert not any(f.startswith("game1/ack") for f in (r.flow_id for r in net.recorders))
    assert net.flows["game1/down"].down.records


# ------------------------------------------------------------------- coupling


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_game_queueing_delay_grows_with_queue_length(seed):
    net = Network(ScenarioConfig.canned("exp2", {"master_seed": seed}), record=True).run()
    pairs = [
        (tx.frame.queue_len_at_enqueue, tx.start - tx.frame.enqueued_at)
        for tx in net.medium.log
        if tx.frame.flow_id == "game1/down"
    ]
    qlen, delay = (np.array(x, dtype=float) for x in zip(*pairs))
    rank = lambda a: np.argsort(np.argsort(a, kind="stable"), kind="stable")
    spearman = np.corrcoef(rank(qlen), rank(delay))[0, 1]
    assert spearman > 0.8
    buckets = defaultdict(list)
    for q, d in pairs:
        buckets[q // 25].append(d)
    means = [np.mean(v) for _, v in sorted(buckets.items()) if len(v) >= 10]
    assert means == sorted(means)


def test_tcp_conservation_holds_throughout_a_run():
    net = Network(ScenarioConfig.canned("exp2", {"duration_s": 6.0}))
    flow = net.tcp_flows[0]
    checks = []
    for name in ("on_ack", "_loss_signal", "_rto_check"):
        original = getattr(flow, name)

        def wrapped(*args, _orig=original):
            _orig(*args)
            checks.append(flow.state.conserved())

        setattr(flow, name, wrapped)
    net.run()
    assert len(checks) > 300
    assert all(checks)
