"""Per-packet records, flow statistics and the game-quality (MOS) estimator."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

QUEUE_TAIL = "queue_tail"
RANDOM_LOSS = "random_loss"
HANDOFF_FLUSH = "handoff_flush"
GAP_LOSS = "gap_loss"
DROP_CAUSES = (QUEUE_TAIL, RANDOM_LOSS, HANDOFF_FLUSH, GAP_LOSS)

# Players reportedly did not notice loss below this level.
LOSS_TOLERANCE = 0.35

TRACE_HEADER = ["flow_id", "seq", "t_tx_us", "t_rx_us", "delay_us", "dup_count", "serving_ap", "drop_cause"]

# (RTT ms, MOS) at 5.5 ms jitter: LAN, intra-region, inter-region.
# (RTT ms, MOS) at the calibration jitter
MOS_CALIBRATION = ((5.0, 3.73), (20.0, 3.58), (80.0, 3.04))
RTT_SCENARIO_LABELS = ("LAN", "Intra-region", "Inter-region")
CALIBRATION_JITTER_MS = 5.5


@dataclass
class PacketRecord:
    flow_id: str
    seq: int
    t_tx: int
    t_rx: Optional[int] = None
    dup_count: int = 0
    serving_ap_at_rx: Optional[str] = None
    drop_cause: Optional[str] = None

    @property
    def delay_us(self) -> Optional[int]:
        return None if self.t_rx is None else self.t_rx - self.t_tx


class FlowRecorder:
    """Packet records of one unidirectional flow, keyed by sequence number."""

    def __init__(self, flow_id: str):
        self.flow_id = flow_id
        self.records: dict[int, PacketRecord] = {}

    def sent(self, seq: int, t: int) -> PacketRecord:
        rec = self.records.get(seq)
        if rec is None:
            rec = self.records[seq] = PacketRecord(self.flow_id, seq, t)
        return rec

    def received(self, seq: int, t: int, ap: Optional[str]) -> bool:
        """Returns True on first delivery, False for a duplicate."""
        rec = self.records[seq]
        if rec.t_rx is not None:
            rec.dup_count += 1
            return False
        rec.t_rx = t
        rec.serving_ap_at_rx = ap
        rec.drop_cause = None
        return True

    def dropped(self, seq: int, cause: str) -> None:
        rec = self.records[seq]
        if rec.t_rx is None:
            rec.drop_cause = cause

    def ordered(self) -> list[PacketRecord]:
        return [self.records[s] for s in sorted(self.records)]


# ------------------------------------------------------------------ statistics


def jitter(delays_ms: Sequence[float]) -> float:
    """Population standard deviation of a one-way delay series."""
    n = len(delays_ms)
    if n == 0:
        raise ValueError("jitter of an empty delay series")
    # Welford's update keeps precision on long series with a large mean.
    mean = 0.0
    m2 = 0.0
    for i, x in enumerate(delays_ms, start=1):
        d = x - mean
        mean += d / i
        m2 += d * (x - mean)
    return math.sqrt(max(m2, 0.0) / n)


@dataclass
class FlowStats:
    flow_id: str
    sent: int
    received_unique: int
    duplicates: int
    lost: int
    delays_ms: list[float] = field(default_factory=list, repr=False)
    jitter_ms: Optional[float] = None
    loss_rate: float = 0.0
    mos: Optional[float] = None
    p50_delay_ms: Optional[float] = None
    p95_delay_ms: Optional[float] = None
    mean_delay_ms: Optional[float] = None
    drops: dict[str, int] = field(default_factory=dict)
    in_transit: int = 0

    @property
    def loss_noticeable(self) -> bool:
        return self.loss_rate > LOSS_TOLERANCE


def loss_rate(stats: FlowStats) -> float:
    if stats.sent <= 0:
        raise ValueError("loss rate undefined with zero packets sent")
    return stats.lost / stats.sent


def duplicates(records: Iterable[PacketRecord]) -> int:
    return sum(r.dup_count for r in records)


def flow_stats(flow_id: str, records: Sequence[PacketRecord]) -> FlowStats:
    received = [r for r in records if r.t_rx is not None]
    delays = [(r.t_rx - r.t_tx) / 1000.0 for r in received]
    drops: dict[str, int] = {}
    in_transit = 0
    for r in records:
        if r.t_rx is None:
            if r.drop_cause is None:
                in_transit += 1
            else:
                drops[r.drop_cause] = drops.get(r.drop_cause, 0) + 1
    stats = FlowStats(
        flow_id=flow_id,
        sent=len(records),
        received_unique=len(received),
        duplicates=duplicates(records),
        lost=len(records) - len(received),
        delays_ms=delays,
        drops=drops,
        in_transit=in_transit,
    )
    if stats.sent:
        stats.loss_rate = loss_rate(stats)
    if delays:
        arr = np.asarray(delays)
        stats.jitter_ms = jitter(delays)
        stats.mean_delay_ms = float(arr.mean())
        stats.p50_delay_ms = float(np.percentile(arr, 50))
        stats.p95_delay_ms = float(np.percentile(arr, 95))
    return stats


def loss_bursts(records: Sequence[PacketRecord]) -> list[int]:
    """Lengths of runs of consecutively lost packets, in sequence order."""
    runs = []
    run = 0
    for r in sorted(records, key=lambda r: r.seq):
        if r.t_rx is None:
            run += 1
        elif run:
            runs.append(run)
            run = 0
    if run:
        runs.append(run)
    return runs


def sawtooth_cycles(series: Sequence[float], ratio: float = 3.0) -> int:
    """Count rise-and-fall cycles in which a local peak is at least ``ratio``
    times the trough before it and the series then falls back below
    peak / ratio."""
    cycles = 0
    trough = math.inf
    peak = None
    for v in series:
        if peak is None:
            trough = min(trough, v)
            if v >= ratio * trough and v > 0:
                peak = v
        else:
            peak = max(peak, v)
            if v * ratio <= peak:
                cycles += 1
                peak = None
                trough = v
    return cycles


# ------------------------------------------------------------------------- MOS


@dataclass(frozen=True)
class MosModel:
    """Quadratic MOS(X) = a + b·X + c·X² in effective RTT X (ms).

    Past the largest calibration RTT the curve continues along its tangent, so
    the score keeps falling instead of turning back up after the vertex.
    """

    coeff_a: float
    coeff_b: float
    coeff_c: float
    jitter_ref_ms: float = CALIBRATION_JITTER_MS
    jitter_to_delay_ms_per_ms: float = 1.0
    x_knee_ms: float = 80.0

    def raw(self, x: float) -> float:
        if x <= self.x_knee_ms:
            return self.coeff_a + self.coeff_b * x + self.coeff_c * x * x
        k = self.x_knee_ms
        at_knee = self.coeff_a + self.coeff_b * k + self.coeff_c * k * k
        slope = self.coeff_b + 2 * self.coeff_c * k
        return at_knee + slope * (x - k)

    def effective_rtt(self, rtt_ms: float, jitter_ms: float) -> float:
        return max(0.0, rtt_ms + self.jitter_to_delay_ms_per_ms * (jitter_ms - self.jitter_ref_ms))


def calibrate_mos(
    points: Sequence[tuple[float, float]] = MOS_CALIBRATION,
    jitter_ref_ms: float = CALIBRATION_JITTER_MS,
    jitter_to_delay_ms_per_ms: float = 1.0,
) -> MosModel:
    xs = np.array([p[0] for p in points], dtype=float)
    ys = np.array([p[1] for p in points], dtype=float)
    a, b, c = np.linalg.solve(np.vander(xs, 3, increasing=True), ys)
    return MosModel(
        float(a),
        float(b),
        float(c),
        jitter_ref_ms=jitter_ref_ms,
        jitter_to_delay_ms_per_ms=jitter_to_delay_ms_per_ms,
        x_knee_ms=float(xs.max()),
    )


@dataclass(frozen=True)
class MosEstimate:
    score: float
    effective_rtt_ms: float

    @property
    def acceptable(self) -> bool:
        return self.score >= 3.5

    @property
    def can_be_good(self) -> bool:
        return self.score >= 3.0

    @property
    def players_leave(self) -> bool:
        return self.score <= 2.0

    @property
    def label(self) -> str:
        if self.acceptable:
            return "acceptable"
        if self.can_be_good:
            return "can be good"
        if self.players_leave:
            return "players switch server"
        return "poor"


def estimate_mos(rtt_ms: float, jitter_ms: float, model: Optional[MosModel] = None) -> MosEstimate:
    if rtt_ms < 0 or jitter_ms < 0:
        raise ValueError("rtt and jitter must be non-negative")
    model = model or calibrate_mos()
    x = model.effective_rtt(rtt_ms, jitter_ms)
    return MosEstimate(min(5.0, max(1.0, model.raw(x))), x)


# The calibration RTTs include a 5 ms local share (the LAN row); a run's
# measured mean one-way delay replaces that share.
LAN_BASE_RTT_MS = MOS_CALIBRATION[0][0]


def run_mos(stats: FlowStats, model: MosModel) -> dict[str, Optional[float]]:
    out: dict[str, Optional[float]] = {}
    for key, (rtt, _) in zip(("mos_lan", "mos_intra", "mos_inter"), MOS_CALIBRATION):
        if stats.mean_delay_ms is None or stats.jitter_ms is None:
            out[key] = None
            continue
        path_rtt = max(0.0, rtt - LAN_BASE_RTT_MS + stats.mean_delay_ms)
        out[key] = estimate_mos(path_rtt, stats.jitter_ms, model).score
    return out


# ----------------------------------------------------------------------- trace


def _field(v) -> str:
    return "" if v is None else str(v)


def write_trace(records: Iterable[PacketRecord], out: io.TextIOBase) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for r in records:
        w.writerow(
            [
                r.flow_id,
                r.seq,
                r.t_tx,
                _field(r.t_rx),
                _field(r.delay_us),
                r.dup_count,
                _field(r.serving_ap_at_rx),
                _field(r.drop_cause),
            ]
        )


def read_trace(text: str) -> list[PacketRecord]:
    rows = csv.DictReader(io.StringIO(text))
    out = []
    for row in rows:
        out.append(
            PacketRecord(
                flow_id=row["flow_id"],
                seq=int(row["seq"]),
                t_tx=int(row["t_tx_us"]),
                t_rx=int(row["t_rx_us"]) if row["t_rx_us"] else None,
                dup_count=int(row["dup_count"]),
                serving_ap_at_rx=row["serving_ap"] or None,
                drop_cause=row["drop_cause"] or None,
            )
        )
    return out
