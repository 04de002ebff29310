"""Traffic models: a parametric FPS game flow and an AIMD bulk TCP download."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .engine import Constant, Distribution, RngStream, Uniform, distribution_mean
from .radio import DOWNLINK, UPLINK

SLOW_START = "slow_start"
CONGESTION_AVOIDANCE = "congestion_avoidance"

ACK_BYTES = 40
TCP_HEADER_BYTES = 40


@dataclass(frozen=True)
class GameFlowParams:
    uplink_rate_pps: float = 60.0
    uplink_size: Distribution = Constant(80)
    downlink_rate_pps: float = 12.0
    downlink_size: Distribution = Uniform(120, 320)
    jitter_frac: float = 0.2

    def __post_init__(self) -> None:
        if self.uplink_rate_pps <= 0 or self.downlink_rate_pps <= 0:
            raise ValueError("game packet rates must be > 0")
        if not 0 <= self.jitter_frac < 1:
            raise ValueError("jitter_frac must be in [0, 1)")
        for d in (self.uplink_size, self.downlink_size):
            if distribution_mean(d) <= 0:
                raise ValueError("game packet sizes must be > 0")

    @property
    def aggregate_pps(self) -> float:
        return self.uplink_rate_pps + self.downlink_rate_pps


def game_next_departure(params: GameFlowParams, direction: str, rng: RngStream) -> tuple[int, int]:
    """(gap until next packet in microseconds, packet size in bytes)."""
    if direction == UPLINK:
        rate, size_dist = params.uplink_rate_pps, params.uplink_size
    elif direction == DOWNLINK:
        rate, size_dist = params.downlink_rate_pps, params.downlink_size
    else:
        raise ValueError(f"unknown direction {direction!r}")
    spread = rng.uniform(-params.jitter_frac, params.jitter_frac) if params.jitter_frac else 0.0
    gap = 1e6 / rate * (1.0 + spread)
    size = max(1, int(round(rng.draw(size_dist))))
    return max(1, int(round(gap))), size


# -------------------------------------------------------------------------- TCP


@dataclass
class TcpState:
    cwnd_pkts: float = 2.0
    ssthresh_pkts: float = 64.0
    mss_bytes: int = 1460
    mode: str = SLOW_START
    next_seq: int = 0
    # segments sent at or after this seq belong to a new loss episode
    recover: int = 0
    outstanding: set[int] = field(default_factory=set)
    retransmit: deque = field(default_factory=deque)
    acked: int = 0
    unknown_acks: int = 0
    retransmissions: int = 0
    seq_limit: Optional[int] = None

    def __post_init__(self) -> None:
        if self.cwnd_pkts < 1:
            raise ValueError("cwnd must be >= 1 packet")

    @property
    def in_flight(self) -> int:
        return len(self.outstanding)

    @property
    def segment_bytes(self) -> int:
        return self.mss_bytes + TCP_HEADER_BYTES

    def conserved(self) -> bool:
        """sent = acked + in flight + lost awaiting retransmission."""
        return self.next_seq == self.acked + self.in_flight + len(self.retransmit)


def fill_window(state: TcpState) -> list[int]:
    """Sequence numbers to transmit now; retransmissions go first."""
    out = []
    while state.in_flight < math.floor(state.cwnd_pkts):
        if state.retransmit:
            seq = state.retransmit.popleft()
            state.retransmissions += 1
        elif state.seq_limit is None or state.next_seq < state.seq_limit:
            seq = state.next_seq
            state.next_seq += 1
        else:
            break
        state.outstanding.add(seq)
        out.append(seq)
    return out


def tcp_on_ack(state: TcpState, seq: int) -> list[int]:
    if seq not in state.outstanding:
        if seq in state.retransmit:
            # ack for a segment already declared lost (its ack was only late)
            state.retransmit.remove(seq)
            state.acked += 1
        else:
            state.unknown_acks += 1
        return fill_window(state)
    state.outstanding.discard(seq)
    state.acked += 1
    if state.mode == SLOW_START:
        state.cwnd_pkts += 1.0
        if state.cwnd_pkts >= state.ssthresh_pkts:
            state.mode = CONGESTION_AVOIDANCE
    else:
        state.cwnd_pkts += 1.0 / state.cwnd_pkts
    return fill_window(state)


def tcp_on_loss(state: TcpState, seq: Optional[int] = None, congestion: bool = True) -> list[int]:
    """Multiplicative decrease, at most once per window of data, then queue the
    lost segment for retransmission."""
    if congestion and (seq is None or seq >= state.recover):
        state.ssthresh_pkts = max(state.cwnd_pkts / 2.0, 2.0)
        state.cwnd_pkts = state.ssthresh_pkts
        state.mode = CONGESTION_AVOIDANCE
        state.recover = state.next_seq
    if seq is not None and seq in state.outstanding:
        state.outstanding.discard(seq)
        state.retransmit.append(seq)
    return fill_window(state)


@dataclass(frozen=True)
class SinkConfig:
    ack_delay_us: int = 0
    acks_every: int = 1

    def __post_init__(self) -> None:
        if self.acks_every < 1:
            raise ValueError("acks_every must be >= 1")
        if self.ack_delay_us < 0:
            raise ValueError("ack_delay_us must be >= 0")


class TcpSink:
    """Receiver side. Acks are cumulative in effect: a lost ack hands its
    sequence numbers back so the next ack carries them again."""

    def __init__(self, config: SinkConfig = SinkConfig()):
        self.config = config
        self.received: set[int] = set()
        self.pending: list[int] = []
        self._since_ack = 0
        self.duplicates = 0

    def on_segment(self, seq: int) -> Optional[tuple[int, ...]]:
        """Returns the sequence numbers to acknowledge now, if an ack is due."""
        if seq in self.received:
            self.duplicates += 1
            # a retransmitted duplicate re-sends only acks that were lost
            return self.take() if self.pending else None
        self.received.add(seq)
        self.pending.append(seq)
        self._since_ack += 1
        if self._since_ack >= self.config.acks_every:
            return self.take()
        return None

    def take(self) -> tuple[int, ...]:
        seqs = tuple(self.pending)
        self.pending.clear()
        self._since_ack = 0
        return seqs

    def restore(self, seqs: tuple[int, ...]) -> None:
        self.pending[:0] = seqs
