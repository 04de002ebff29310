import json
from importlib import resources

import pytest

from builders import two_ap_doc
from wlansim.report import run_scenario, simulate
from wlansim.scenario import ConfigError, ScenarioConfig, apply_override, parse_override


def test_defaults_fill_flow_and_handoff_sections():
    cfg = ScenarioConfig.from_dict(two_ap_doc())
    doc = cfg.to_dict()
    assert doc["flows"][0]["uplink_rate_pps"] == 60
    assert doc["handoff"]["control_latency_ms"] == 5
    assert doc["medium"]["p_loss"] == 0.02


def test_invalid_config_lists_every_problem():
    doc = two_ap_doc(duration_s=0)
    doc["aps"] = []
    doc["flows"].append({"id": "x", "type": "tcp", "station": "ghost"})
    doc["medium"] = {"p_loss": 1.5}
    with pytest.raises(ConfigError) as err:
        ScenarioConfig.from_dict(doc)
    text = str(err.value)
    for needle in ("duration_s", "at least one AP", "ghost", "p_loss", "initial_ap"):
        assert needle in text
    assert len(err.value.problems) >= 5


def test_bad_policy_and_ordering():
    doc = two_ap_doc(handoff={"policy": {"type": "random"}, "ordering": {"type": "add_first", "overlap_ms": -1}})
    with pytest.raises(ConfigError) as err:
        ScenarioConfig.from_dict(doc)
    assert len(err.value.problems) == 2


def test_overrides():
    doc = two_ap_doc()
    apply_override(doc, "medium.p_loss", 0.1)
    apply_override(doc, "flows.0.downlink_rate_pps", 30)
    assert doc["medium"] == {"p_loss": 0.1}
    assert doc["flows"][0]["downlink_rate_pps"] == 30
    assert parse_override("handoff.ordering={\"type\": \"remove_first\"}") == (
        "handoff.ordering",
        {"type": "remove_first"},
    )
    assert parse_override("name=abc") == ("name", "abc")
    with pytest.raises(ValueError):
        parse_override("novalue")


def test_config_echo_is_lossless():
    cfg = ScenarioConfig.canned("exp2", {"duration_s": 3.0, "master_seed": 9})
    again = ScenarioConfig.from_dict(json.loads(cfg.to_json()))
    assert again.to_dict() == cfg.to_dict()
    a = run_scenario(cfg)
    b = run_scenario(again)
    assert a.summary_text() == b.summary_text()
    assert a.trace_csv() == b.trace_csv()


def test_canned_commands_are_shipped_files(tmp_path):
    for name in ("exp1", "exp2"):
        path = resources.files("wlansim") / "scenarios" / f"{name}.json"
        from_file = ScenarioConfig.load(str(path), {"duration_s": 2.0})
        canned = ScenarioConfig.canned(name, {"duration_s": 2.0})
        assert from_file.to_dict() == canned.to_dict()


def test_exp1_default_eight_handoffs():
    report = run_scenario(ScenarioConfig.canned("exp1"))
    assert report.counters["handoffs"] == 8
    assert report.ok


def test_exp1_default_seed_within_bands():
    game = run_scenario(ScenarioConfig.canned("exp1")).game
    assert 3.5 <= game.jitter_ms <= 7.5
    assert 0.015 <= game.loss_rate <= 0.05
    assert game.p95_delay_ms < 15


def test_short_run_has_no_handoffs():
    report = run_scenario(ScenarioConfig.canned("exp1", {"duration_s": 0.5}))
    assert report.counters["handoffs"] == 0


def test_no_loss_mechanisms_no_loss():
    report = run_scenario(
        ScenarioConfig.canned("exp1", {"medium.p_loss": 0, "handoff.ordering.overlap_ms": 0})
    )
    assert report.game.lost == 0
    assert report.game.duplicates == 0


def test_remove_first_run_has_no_duplicates():
    report = run_scenario(
        ScenarioConfig.canned("exp1", {"handoff.ordering": {"type": "remove_first", "gap_ms": 30}})
    )
    assert report.game.duplicates == 0
    assert sum(h.gap_losses for h in report.handoffs) > 0


def test_exp2_without_tcp_reduces_to_exp1():
    exp1 = run_scenario(ScenarioConfig.canned("exp1", {"master_seed": 4}))
    exp2 = run_scenario(ScenarioConfig.canned("exp2", {"master_seed": 4, "flows.1.enabled": False}))
    assert not exp2.tcp
    # the idle second station is still handed off, so only the game flow is compared
    assert exp2.game.sent == exp1.game.sent
    assert exp2.game.jitter_ms == pytest.approx(exp1.game.jitter_ms, rel=0.2)
    assert exp2.game.p95_delay_ms == pytest.approx(exp1.game.p95_delay_ms, rel=0.2)


def test_accounting_closure_and_drop_causes():
    net, report = simulate(ScenarioConfig.canned("exp2"))
    for fid, st in report.flows.items():
        assert st.sent == st.received_unique + st.lost
        assert st.lost == sum(st.drops.values()) + st.in_transit
        assert st.in_transit == len(net.unresolved(fid))
    assert report.ok


def test_report_files(tmp_path):
    report = run_scenario(ScenarioConfig.canned("exp2", {"duration_s": 4.0}), tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["config.json", "cwnd.csv", "handoffs.csv", "summary.txt", "trace.csv"]
    trace = (tmp_path / "trace.csv").read_text().splitlines()
    assert trace[0] == "flow_id,seq,t_tx_us,t_rx_us,delay_us,dup_count,serving_ap,drop_cause"
    handoffs = (tmp_path / "handoffs.csv").read_text().splitlines()
    assert handoffs[0] == "t_us,client,src_ap,dst_ap,ordering,duplicates,gap_losses,flushed_frames"
    assert len(handoffs) == 1 + report.counters["handoffs"]
    summary = (tmp_path / "summary.txt").read_text()
    for key in ("sent", "received", "duplicates", "lost", "loss_rate", "jitter_ms", "p50_delay_ms", "p95_delay_ms", "mos_lan", "mos_intra", "mos_inter"):
        assert f"\n{key} = " in summary
    echoed = ScenarioConfig.from_dict(json.loads((tmp_path / "config.json").read_text()))
    assert run_scenario(echoed).summary_text() == summary


def test_initial_ap_defaults_to_strongest():
    doc = two_ap_doc(stations=[{"id": "sta1", "position": [18, 0]}])
    net, _ = simulate(ScenarioConfig.from_dict({**doc, "duration_s": 0.1}))
    assert net.controller.lvaps["sta1"].owner_aps == ["ap2"]


def test_threshold_policy_follows_a_walking_client():
    doc = two_ap_doc(
        duration_s=10.0,
        stations=[{"id": "sta1", "trajectory": [[0, [0, 0]], [10, [20, 0]]]}],
        handoff={"policy": {"type": "threshold"}, "publish_threshold_dbm": -90},
    )
    net, report = simulate(ScenarioConfig.from_dict(doc))
    assert [(h.src_ap, h.dst_ap) for h in report.handoffs][:1] == [("ap1", "ap2")]
    assert net.controller.lvaps["sta1"].owner_aps == ["ap2"]
    assert report.ok
