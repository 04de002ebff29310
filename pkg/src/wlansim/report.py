"""Run a scenario and turn the finished network into a report plus the
``trace.csv`` / ``handoffs.csv`` / ``summary.txt`` files."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .controller import HandoffRecord
from .metrics import (
    DROP_CAUSES,
    FlowStats,
    PacketRecord,
    calibrate_mos,
    flow_stats,
    loss_bursts,
    run_mos,
    sawtooth_cycles,
    write_trace,
)
from .network import CwndSample, Network
from .scenario import ScenarioConfig


@dataclass
class TcpSummary:
    flow_id: str
    reductions: list[tuple[int, float, float]]
    timeouts: int
    retransmissions: int
    loss_signals: int
    unknown_acks: int
    cwnd_log: list[CwndSample] = field(repr=False, default_factory=list)

    @property
    def cycle_ratios(self) -> list[float]:
        """Peak cwnd of each growth phase over the trough that started it."""
        r = self.reductions
        return [r[i][1] / r[i - 1][2] for i in range(1, len(r))]

    def steady_ratios(self, skip: int = 2) -> list[float]:
        return self.cycle_ratios[skip:]


@dataclass
class RunReport:
    name: str
    seed: int
    config: dict
    flows: dict[str, FlowStats]
    mos: dict[str, dict[str, Optional[float]]]
    handoffs: list[HandoffRecord]
    tcp: dict[str, TcpSummary]
    counters: dict[str, int]
    game_downlinks: list[str]
    max_loss_burst: dict[str, int]
    delay_cycles: dict[str, int]
    problems: list[str]
    records: list[PacketRecord] = field(repr=False, default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems

    @property
    def game(self) -> FlowStats:
        """Stats of the first game flow's downlink leg."""
        return self.flows[self.game_downlinks[0]]

    # ----------------------------------------------------------------- output

    def trace_csv(self) -> str:
        buf = io.StringIO()
        write_trace(self.records, buf)
        return buf.getvalue()

    def handoffs_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HandoffRecord.HEADER)
        for h in self.handoffs:
            w.writerow(h.row())
        return buf.getvalue()

    def cwnd_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["flow_id", "t_us", "cwnd_pkts", "event"])
        for fid, t in self.tcp.items():
            for s in t.cwnd_log:
                w.writerow([fid, s.t_us, f"{s.cwnd:.6f}", s.event])
        return buf.getvalue()

    def summary_text(self) -> str:
        lines = ["[run]"]
        run = {
            "name": self.name,
            "seed": self.seed,
            "duration_s": self.config["duration_s"],
            **self.counters,
            "invariants": "ok" if self.ok else "violated",
        }
        lines += [f"{k} = {_fmt(v)}" for k, v in run.items()]
        for p in self.problems:
            lines.append(f"problem = {p}")
        for fid, st in self.flows.items():
            lines += ["", f"[flow {fid}]"]
            values = {
                "sent": st.sent,
                "received": st.received_unique,
                "duplicates": st.duplicates,
                "lost": st.lost,
                "loss_rate": st.loss_rate,
                "loss_noticeable": st.loss_noticeable,
                "jitter_ms": st.jitter_ms,
                "mean_delay_ms": st.mean_delay_ms,
                "p50_delay_ms": st.p50_delay_ms,
                "p95_delay_ms": st.p95_delay_ms,
            }
            values.update(self.mos.get(fid, {"mos_lan": None, "mos_intra": None, "mos_inter": None}))
            for cause in DROP_CAUSES:
                values[f"drops_{cause}"] = st.drops.get(cause, 0)
            values["in_transit_at_end"] = st.in_transit
            if fid in self.max_loss_burst:
                values["max_loss_burst"] = self.max_loss_burst[fid]
                values["delay_sawtooth_cycles"] = self.delay_cycles[fid]
            lines += [f"{k} = {_fmt(v)}" for k, v in values.items()]
        for fid, t in self.tcp.items():
            lines += ["", f"[tcp {fid}]"]
            values = {
                "cwnd_reductions": len(t.reductions),
                "timeouts": t.timeouts,
                "retransmissions": t.retransmissions,
                "loss_signals": t.loss_signals,
                "unknown_acks": t.unknown_acks,
                "cycle_ratios": " ".join(f"{r:.3f}" for r in t.cycle_ratios),
            }
            lines += [f"{k} = {_fmt(v)}" for k, v in values.items()]
        return "\n".join(lines) + "\n"

    def write(self, out_dir: Union[str, Path]) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.csv").write_text(self.trace_csv(), encoding="utf-8")
        (out / "handoffs.csv").write_text(self.handoffs_csv(), encoding="utf-8")
        (out / "summary.txt").write_text(self.summary_text(), encoding="utf-8")
        (out / "config.json").write_text(json.dumps(self.config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        if self.tcp:
            (out / "cwnd.csv").write_text(self.cwnd_csv(), encoding="utf-8")
        return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def build_report(net: Network) -> RunReport:
    cfg = net.config
    model = calibrate_mos(jitter_to_delay_ms_per_ms=cfg.jitter_to_delay)
    records: list[PacketRecord] = []
    flows: dict[str, FlowStats] = {}
    for rec in net.recorders:
        ordered = rec.ordered()
        records.extend(ordered)
        flows[rec.flow_id] = flow_stats(rec.flow_id, ordered)

    game_down = [g.down.flow_id for g in net.game_flows]
    mos = {fid: run_mos(flows[fid], model) for fid in game_down}
    bursts = {}
    cycles = {}
    for g in net.game_flows:
        ordered = g.down.ordered()
        bursts[g.down.flow_id] = max(loss_bursts(ordered), default=0)
        series = [r.delay_us / 1000.0 for r in ordered if r.t_rx is not None]
        cycles[g.down.flow_id] = sawtooth_cycles(series)

    tcp = {
        f.data.flow_id: TcpSummary(
            f.data.flow_id,
            list(f.reductions),
            f.timeouts,
            f.state.retransmissions,
            f.loss_signals,
            f.state.unknown_acks,
            list(f.cwnd_log),
        )
        for f in net.tcp_flows
    }
    ctl = net.controller
    counters = {
        "handoffs": len(ctl.handoffs),
        "handoffs_rejected": ctl.rejected_handoffs,
        "publishes": ctl.publishes,
        "gap_losses": ctl.gap_losses,
        "uplink_gap_losses": net.counters.uplink_gap_losses,
        "bssid_changes": sum(s.bssid_changes for s in net.stations.values()),
        "reassociations": sum(s.reassociations for s in net.stations.values()),
        "events": net.engine.fired,
    }
    return RunReport(
        name=cfg.name,
        seed=cfg.master_seed,
        config=cfg.to_dict(),
        flows=flows,
        mos=mos,
        handoffs=list(ctl.handoffs),
        tcp=tcp,
        counters=counters,
        game_downlinks=game_down,
        max_loss_burst=bursts,
        delay_cycles=cycles,
        problems=net.invariant_problems(),
        records=records,
    )


def run_scenario(
    config: ScenarioConfig, out_dir: Optional[Union[str, Path]] = None, record: bool = False
) -> RunReport:
    net = Network(config, record=record).run()
    report = build_report(net)
    if out_dir is not None:
        report.write(out_dir)
    return report


def simulate(config: ScenarioConfig, record: bool = False) -> tuple[Network, RunReport]:
    """Like :func:`run_scenario` but also returns the finished network for
    inspection."""
    net = Network(config, record=record).run()
    return net, build_report(net)
