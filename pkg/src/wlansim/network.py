"""Assembles one simulated WLAN from a scenario: APs and stations on a shared
medium, the controller, and game/TCP flows between a wired server and the
stations."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Optional

from .controller import Controller, HandoffRecord, Periodic
from .engine import Engine, ms
from .metrics import GAP_LOSS, HANDOFF_FLUSH, QUEUE_TAIL, RANDOM_LOSS, FlowRecorder
from .radio import DOWNLINK, UPLINK, Frame, Medium, RadioMap, TxQueue
from .scenario import GameFlowSpec, ScenarioConfig, TcpFlowSpec
from .traffic import ACK_BYTES, TcpSink, TcpState, fill_window, game_next_departure, tcp_on_ack, tcp_on_loss

SERVER = "server"


class CopyGroup:
    """Fate of one transmission, shared by its per-AP copies."""

    __slots__ = ("alive", "delivered")

    def __init__(self, alive: int):
        self.alive = alive
        self.delivered = False


@dataclass
class Station:
    id: str
    queue: TxQueue
    bssid: Optional[str] = None
    associations: int = 0
    reassociations: int = 0
    bssid_changes: int = 0

    def associate(self, bssid: str) -> None:
        if self.associations:
            self.reassociations += 1
        self.associations += 1
        self.bssid = bssid

    def observe(self, bssid: str) -> None:
        if bssid != self.bssid:
            self.bssid_changes += 1
            self.bssid = bssid


class GameFlow:
    def __init__(self, net: "Network", spec: GameFlowSpec):
        self.net = net
        self.spec = spec
        self.down = net.recorder(f"{spec.id}/down")
        self.up = net.recorder(f"{spec.id}/up")
        self.rng = {d: net.engine.stream(f"game:{spec.id}:{d}") for d in (DOWNLINK, UPLINK)}
        self.next_seq = {DOWNLINK: 0, UPLINK: 0}

    def start(self) -> None:
        for d in (DOWNLINK, UPLINK):
            self._schedule(d)

    def _schedule(self, direction: str) -> None:
        gap, size = game_next_departure(self.spec.params, direction, self.rng[direction])
        t = self.net.engine.now + gap
        if t <= self.net.end_us:
            self.net.engine.schedule(t, self._emit, direction, size)

    def _emit(self, direction: str, size: int) -> None:
        net = self.net
        seq = self.next_seq[direction]
        self.next_seq[direction] += 1
        if direction == DOWNLINK:
            frame = Frame(self.down.flow_id, seq, size, DOWNLINK, SERVER, self.spec.station, net.engine.now, kind="game")
            self.down.sent(seq, net.engine.now)
            net.send_downlink(frame)
        else:
            frame = Frame(self.up.flow_id, seq, size, UPLINK, self.spec.station, SERVER, net.engine.now, kind="game")
            self.up.sent(seq, net.engine.now)
            net.send_uplink(frame)
        self._schedule(direction)

    def at_server(self, frame: Frame, ap: str) -> None:
        self.up.received(frame.seq, self.net.engine.now, ap)

    def at_station(self, frame: Frame, ap: str) -> None:
        first = self.down.received(frame.seq, self.net.engine.now, ap)
        if not first and frame.handoff_id is not None:
            self.net.controller.record(frame.handoff_id).duplicates += 1


@dataclass
class CwndSample:
    t_us: int
    cwnd: float
    event: str


class TcpFlow:
    """Bulk download from the wired server to a station."""

    def __init__(self, net: "Network", spec: TcpFlowSpec):
        self.net = net
        self.spec = spec
        self.data = net.recorder(f"{spec.id}/down")
        self.ack_flow = f"{spec.id}/ack"
        self.state = TcpState(cwnd_pkts=spec.initial_cwnd, ssthresh_pkts=spec.initial_ssthresh, mss_bytes=spec.mss_bytes)
        if spec.file_bytes is not None:
            self.state.seq_limit = -(-spec.file_bytes // spec.mss_bytes)
        self.sink = TcpSink(spec.sink)
        self.srtt_us: Optional[float] = None
        self.sent_at: dict[int, int] = {}
        self.retransmitted: set[int] = set()
        self.cwnd_log: list[CwndSample] = []
        self.reductions: list[tuple[int, float, float]] = []
        self.acks_sent = 0
        self.timeouts = 0
        self.loss_signals = 0
        self._last_progress = 0
        self._rto_timer = None
        self._ack_timer = None

    # ------------------------------------------------------------------ source

    @property
    def loss_signal_delay_us(self) -> int:
        return int(self.srtt_us) if self.srtt_us is not None else ms(100)

    def start(self) -> None:
        self.net.engine.schedule(self.spec.start_us, self._kickoff)

    def _kickoff(self) -> None:
        self._last_progress = self.net.engine.now
        self._log("start")
        self._send(fill_window(self.state))

    def stop_new_data(self) -> None:
        if self.state.seq_limit is None or self.state.seq_limit > self.state.next_seq:
            self.state.seq_limit = self.state.next_seq

    def _send(self, seqs: list[int]) -> None:
        net = self.net
        now = net.engine.now
        for seq in seqs:
            if seq in self.sent_at:
                self.retransmitted.add(seq)
            self.sent_at[seq] = now
            self.data.sent(seq, now)
            frame = Frame(self.data.flow_id, seq, self.state.segment_bytes, DOWNLINK, SERVER, self.spec.station, now, kind="tcp")
            net.send_downlink(frame)
        self._arm_rto()

    def _log(self, event: str) -> None:
        self.cwnd_log.append(CwndSample(self.net.engine.now, self.state.cwnd_pkts, event))

    def on_ack(self, seqs: tuple[int, ...]) -> None:
        now = self.net.engine.now
        for seq in seqs:
            if seq in self.state.outstanding and seq not in self.retransmitted:
                sample = now - self.sent_at[seq]
                self.srtt_us = sample if self.srtt_us is None else 0.875 * self.srtt_us + 0.125 * sample
            new = tcp_on_ack(self.state, seq)
            self._last_progress = now
            self._send(new)
        self._log("ack")

    def on_loss(self, seq: int, cause: str) -> None:
        self.net.engine.schedule_in(self.loss_signal_delay_us, self._loss_signal, seq, cause)

    def _loss_signal(self, seq: int, cause: str) -> None:
        if seq not in self.state.outstanding:
            return
        self.loss_signals += 1
        self._reduce(seq, congestion=cause != RANDOM_LOSS)

    def _reduce(self, seq: int, congestion: bool) -> None:
        before = self.state.cwnd_pkts
        new = tcp_on_loss(self.state, seq, congestion=congestion)
        if self.state.cwnd_pkts != before:
            self.reductions.append((self.net.engine.now, before, self.state.cwnd_pkts))
            self._log("loss")
        self._send(new)

    def _rto_us(self) -> int:
        srtt = self.srtt_us or 0
        return int(max(self.spec.rto_min_us, 4 * srtt))

    def _arm_rto(self) -> None:
        if self._rto_timer is None and self.state.outstanding:
            at = max(self.net.engine.now, self._last_progress + self._rto_us())
            self._rto_timer = self.net.engine.schedule(at, self._rto_check)

    def _rto_check(self) -> None:
        self._rto_timer = None
        if not self.state.outstanding:
            return
        now = self.net.engine.now
        if now - self._last_progress >= self._rto_us():
            self.timeouts += 1
            self._last_progress = now
            self._reduce(min(self.state.outstanding), congestion=True)
        self._arm_rto()

    # -------------------------------------------------------------------- sink

    def at_station(self, frame: Frame, ap: str) -> None:
        self.data.received(frame.seq, self.net.engine.now, ap)
        due = self.sink.on_segment(frame.seq)
        if due is not None:
            self._emit_ack(due)
        elif self.sink.pending and self._ack_timer is None:
            self._ack_timer = self.net.engine.schedule_in(self.spec.delayed_ack_timeout_us, self._ack_timeout)

    def _ack_timeout(self) -> None:
        self._ack_timer = None
        if self.sink.pending:
            self._emit_ack(self.sink.take())

    def _emit_ack(self, seqs: tuple[int, ...]) -> None:
        if self.spec.sink.ack_delay_us:
            self.net.engine.schedule_in(self.spec.sink.ack_delay_us, self._send_ack, seqs)
        else:
            self._send_ack(seqs)

    def _send_ack(self, seqs: tuple[int, ...]) -> None:
        net = self.net
        frame = Frame(self.ack_flow, self.acks_sent, ACK_BYTES, UPLINK, self.spec.station, SERVER, net.engine.now, kind="ack", payload=seqs)
        self.acks_sent += 1
        net.send_uplink(frame)

    def at_server(self, frame: Frame, ap: str) -> None:
        self.on_ack(frame.payload)

    def ack_lost(self, frame: Frame) -> None:
        self.sink.restore(frame.payload)


@dataclass
class NetworkCounters:
    uplink_gap_losses: int = 0
    copies_dropped: Counter = field(default_factory=Counter)


class Network:
    def __init__(self, config: ScenarioConfig, record: bool = False):
        self.config = config
        self.engine = Engine(config.master_seed, record_log=record)
        self.end_us = int(round(config.duration_s * 1e6))
        self.drain_us = int(round(config.drain_s * 1e6))
        self.wired_us = ms(config.wired_latency_ms)
        self.counters = NetworkCounters()
        self._recorders: dict[str, FlowRecorder] = {}
        self._live: Counter = Counter()

        self.radio = RadioMap(config.channel, self.engine.stream("shadowing"))
        self.medium = Medium(self.engine, config.medium, self._delivered, self._lost_on_air, record=record)

        self.controller = Controller(
            self.engine,
            config.policy,
            config.ordering,
            control_latency_us=ms(config.control_latency_ms),
            radio=self.radio,
            sample_period_us=ms(config.sample_period_ms),
            publish_threshold_dbm=config.publish_threshold_dbm,
            on_flush=self._flushed,
        )
        self.controller.managed_clients = config.handoff_clients
        self.ap_queues: dict[str, TxQueue] = {}
        for ap in config.aps:
            self.radio.place(ap.id, ap.position)
            q = self.medium.attach(TxQueue(ap.id, ap.queue_capacity, ap.medium))
            self.ap_queues[ap.id] = q
            self.controller.register_ap(ap.id, q)

        self.stations: dict[str, Station] = {}
        for st in config.stations:
            self.radio.place(st.id, st.trajectory)
            q = self.medium.attach(TxQueue(st.id, config.queue_capacity))
            station = Station(st.id, q)
            self.stations[st.id] = station
            first_ap = st.initial_ap or self._strongest_ap(st.id)
            lvap = self.controller.create_lvap(st.id, first_ap)
            station.associate(lvap.virtual_bssid)

        self.flows: dict[str, object] = {}
        self.game_flows = [GameFlow(self, spec) for spec in config.game_flows]
        self.tcp_flows = [TcpFlow(self, spec) for spec in config.tcp_flows]
        for f in self.game_flows:
            self.flows[f.down.flow_id] = f
            self.flows[f.up.flow_id] = f
        for f in self.tcp_flows:
            self.flows[f.data.flow_id] = f
            self.flows[f.ack_flow] = f

    def _strongest_ap(self, station: str) -> str:
        best = max(self.config.aps, key=lambda ap: (self.radio.mean_rssi(ap.id, station, 0), -self.config.aps.index(ap)))
        return best.id

    def recorder(self, flow_id: str) -> FlowRecorder:
        rec = self._recorders[flow_id] = FlowRecorder(flow_id)
        return rec

    @property
    def recorders(self) -> list[FlowRecorder]:
        return list(self._recorders.values())

    # ------------------------------------------------------------------- run

    def run(self) -> "Network":
        for ap in self.config.aps:
            if self.config.subscribe:
                self.controller.add_subscription(ap.id)
        if isinstance(self.config.policy, Periodic):
            self.controller.start_periodic(self.end_us)
        for f in self.game_flows:
            f.start()
        for f in self.tcp_flows:
            f.start()
        self.engine.run_until(self.end_us)
        for f in self.tcp_flows:
            f.stop_new_data()
        self.controller.sampling = False
        self.engine.run_until(self.end_us + self.drain_us)
        return self

    # ---------------------------------------------------------- frame routing

    def send_downlink(self, frame: Frame) -> None:
        self._live[(frame.flow_id, frame.seq)] += 1
        self.engine.schedule_in(self.wired_us, self._downlink_at_aps, frame)

    def _downlink_at_aps(self, frame: Frame) -> None:
        queues = self.controller.route_downlink(frame)
        if not queues:
            frame.group = CopyGroup(1)
            self._copy_dropped(frame, GAP_LOSS)
            return
        group = CopyGroup(len(queues))
        now = self.engine.now
        for i, q in enumerate(queues):
            copy = frame if i == 0 else replace(frame)
            copy.group = group
            if not q.enqueue(copy, now):
                self._copy_dropped(copy, QUEUE_TAIL)

    def send_uplink(self, frame: Frame) -> None:
        self._live[(frame.flow_id, frame.seq)] += 1
        frame.client = frame.src
        frame.group = CopyGroup(1)
        station = self.stations[frame.src]
        if not station.queue.enqueue(frame, self.engine.now):
            self._copy_dropped(frame, QUEUE_TAIL)

    def _delivered(self, frame: Frame, queue: TxQueue) -> None:
        if frame.direction == DOWNLINK:
            group = frame.group
            group.alive -= 1
            first = not group.delivered
            group.delivered = True
            if first:
                self._resolved(frame)
            station = self.stations[frame.dst]
            station.observe(frame.bssid)
            self.flows[frame.flow_id].at_station(frame, queue.owner)
        else:
            ap = self.controller.uplink_receiver(frame.client)
            if ap is None:
                self.counters.uplink_gap_losses += 1
                self._copy_dropped(frame, GAP_LOSS)
                return
            frame.group.alive -= 1
            frame.group.delivered = True
            self.engine.schedule_in(self.wired_us, self._uplink_at_server, frame, ap)

    def _uplink_at_server(self, frame: Frame, ap: str) -> None:
        self._resolved(frame)
        self.flows[frame.flow_id].at_server(frame, ap)

    def _lost_on_air(self, frame: Frame, queue: TxQueue) -> None:
        self._copy_dropped(frame, RANDOM_LOSS)

    def _flushed(self, frames: list[Frame], rec: HandoffRecord) -> None:
        for f in frames:
            self._copy_dropped(f, HANDOFF_FLUSH)

    def _copy_dropped(self, frame: Frame, cause: str) -> None:
        self.counters.copies_dropped[cause] += 1
        group = frame.group
        group.alive -= 1
        if group.delivered or group.alive > 0:
            return
        self._resolved(frame)
        rec = self._recorders.get(frame.flow_id)
        if rec is not None:
            rec.dropped(frame.seq, cause)
        flow = self.flows[frame.flow_id]
        if frame.kind == "tcp":
            flow.on_loss(frame.seq, cause)
        elif frame.kind == "ack":
            flow.ack_lost(frame)

    def _resolved(self, frame: Frame) -> None:
        key = (frame.flow_id, frame.seq)
        self._live[key] -= 1
        if self._live[key] == 0:
            del self._live[key]

    # ------------------------------------------------------------- invariants

    def unresolved(self, flow_id: str) -> set[int]:
        return {seq for (f, seq) in self._live if f == flow_id}

    def invariant_problems(self) -> list[str]:
        problems = []
        for rec in self.recorders:
            records = list(rec.records.values())
            received = sum(1 for r in records if r.t_rx is not None)
            lost = sum(1 for r in records if r.t_rx is None)
            if len(records) != received + lost:
                problems.append(f"{rec.flow_id}: sent != received_unique + lost")
            live = self.unresolved(rec.flow_id)
            for r in records:
                if r.t_rx is None and r.drop_cause is None and r.seq not in live:
                    problems.append(f"{rec.flow_id}#{r.seq}: neither delivered, dropped nor in transit")
                    break
        for st in self.stations.values():
            if st.bssid_changes:
                problems.append(f"{st.id}: observed {st.bssid_changes} BSSID changes")
            if st.reassociations:
                problems.append(f"{st.id}: {st.reassociations} re-associations")
        if self.controller.liveness_violations:
            problems.append(f"{self.controller.liveness_violations} handoffs ended without a single owner")
        for f in self.tcp_flows:
            if not f.state.conserved():
                problems.append(f"{f.spec.id}: TCP segment accounting does not close")
        return problems
