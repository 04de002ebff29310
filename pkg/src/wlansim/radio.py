"""Radio abstraction: positions and trajectories, log-distance RSSI, drop-tail
transmit queues and one shared medium serving co-channel transmitters."""

from __future__ import annotations

import bisect
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Union

from .engine import Engine, Exponential, Normal, RngStream

UPLINK = "uplink"
DOWNLINK = "downlink"


@dataclass(frozen=True)
class Position:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"position must be finite, got ({self.x}, {self.y})")

    def distance(self, other: "Position") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


class Trajectory:
    """Piecewise-linear path through (time_us, Position) waypoints, clamped at
    both ends."""

    def __init__(self, waypoints: Iterable[tuple[int, Position]]):
        pts = [(int(t), p) for t, p in waypoints]
        if not pts:
            raise ValueError("trajectory needs at least one waypoint")
        times = [t for t, _ in pts]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("trajectory waypoint times must be strictly increasing")
        self.waypoints = pts
        self._times = times

    @classmethod
    def fixed(cls, pos: Position) -> "Trajectory":
        return cls([(0, pos)])

    def position(self, t: int) -> Position:
        pts = self.waypoints
        if t <= pts[0][0]:
            return pts[0][1]
        if t >= pts[-1][0]:
            return pts[-1][1]
        i = bisect.bisect_right(self._times, t)
        (t0, p0), (t1, p1) = pts[i - 1], pts[i]
        f = (t - t0) / (t1 - t0)
        return Position(p0.x + f * (p1.x - p0.x), p0.y + f * (p1.y - p0.y))


@dataclass(frozen=True)
class PathLossParams:
    tx_power_dbm: float = 20.0
    pl0_db: float = 40.0
    ref_dist_m: float = 1.0
    exponent: float = 3.0
    shadow_sigma_db: float = 2.0

    def __post_init__(self) -> None:
        if self.ref_dist_m <= 0:
            raise ValueError("ref_dist_m must be > 0")
        if self.exponent <= 0:
            raise ValueError("exponent must be > 0")
        if self.shadow_sigma_db < 0:
            raise ValueError("shadow_sigma_db must be >= 0")


def path_loss_rssi(params: PathLossParams, distance_m: float, shadowing_db: float = 0.0) -> float:
    d = max(distance_m, params.ref_dist_m)
    return (
        params.tx_power_dbm
        - params.pl0_db
        - 10.0 * params.exponent * math.log10(d / params.ref_dist_m)
        - shadowing_db
    )


class RadioMap:
    """Node placement plus the propagation model used for RSSI samples."""

    def __init__(self, params: PathLossParams, shadowing: Optional[RngStream] = None):
        self.params = params
        self.shadowing = shadowing
        self._nodes: dict[str, Trajectory] = {}

    def place(self, node: str, where: Union[Position, Trajectory]) -> None:
        self._nodes[node] = where if isinstance(where, Trajectory) else Trajectory.fixed(where)

    def position(self, node: str, t: int) -> Position:
        try:
            return self._nodes[node].position(t)
        except KeyError:
            raise KeyError(f"unknown node {node!r}") from None

    def distance(self, a: str, b: str, t: int) -> float:
        return self.position(a, t).distance(self.position(b, t))

    def rssi(self, ap: str, station: str, t: int) -> float:
        d = self.distance(ap, station, t)
        shadow = 0.0
        if self.params.shadow_sigma_db > 0 and self.shadowing is not None:
            shadow = self.shadowing.draw(Normal(0.0, self.params.shadow_sigma_db))
        return path_loss_rssi(self.params, d, shadow)

    def mean_rssi(self, ap: str, station: str, t: int) -> float:
        return path_loss_rssi(self.params, self.distance(ap, station, t))


# ----------------------------------------------------------------- frames, MAC


@dataclass(eq=False)
class Frame:
    flow_id: str
    seq: int
    size_bytes: int
    direction: str
    src: str
    dst: str
    created_at: int
    kind: str = "data"
    enqueued_at: Optional[int] = None
    client: Optional[str] = None  # station whose LVAP carries this frame
    bssid: Optional[str] = None
    handoff_id: Optional[int] = None  # set on copies replicated during an add-first overlap
    payload: object = None
    group: object = None  # shared by copies of one transmission
    queue_len_at_enqueue: int = 0

    def __post_init__(self) -> None:
        if self.size_bytes <= 0:
            raise ValueError("frame size must be positive")


@dataclass(frozen=True)
class MediumParams:
    phy_rate_mbps: float = 24.0
    per_frame_overhead_us: float = 300.0
    contention_mean_us: float = 3600.0
    contention_cap_us: float = 20000.0
    p_loss: float = 0.02

    def __post_init__(self) -> None:
        if self.phy_rate_mbps <= 0:
            raise ValueError("phy_rate_mbps must be > 0")
        if not 0.0 <= self.p_loss < 1.0:
            raise ValueError("p_loss must be in [0, 1)")
        if self.per_frame_overhead_us < 0 or self.contention_mean_us < 0 or self.contention_cap_us < 0:
            raise ValueError("medium timings must be >= 0")


def serialization_us(size_bytes: int, params: MediumParams) -> float:
    return size_bytes * 8 / params.phy_rate_mbps


def airtime(frame: Frame, params: MediumParams, contention: Optional[RngStream] = None) -> int:
    """Medium occupancy of one frame in microseconds."""
    extra = 0.0
    if params.contention_mean_us > 0 and contention is not None:
        extra = min(contention.draw(Exponential(params.contention_mean_us)), params.contention_cap_us)
    return int(round(params.per_frame_overhead_us + serialization_us(frame.size_bytes, params) + extra))


class TxQueue:
    """FIFO transmit queue with tail drop."""

    def __init__(self, owner: str, capacity_frames: int = 100, params: Optional[MediumParams] = None):
        if capacity_frames < 0:
            raise ValueError("capacity must be >= 0")
        self.owner = owner
        self.capacity_frames = capacity_frames
        self.params = params
        self.contents: deque[Frame] = deque()
        self.tail_drops: dict[str, int] = {}
        self.medium: Optional["Medium"] = None

    def __len__(self) -> int:
        return len(self.contents)

    def enqueue(self, frame: Frame, now: int) -> bool:
        if len(self.contents) >= self.capacity_frames:
            self.tail_drops[frame.flow_id] = self.tail_drops.get(frame.flow_id, 0) + 1
            return False
        frame.enqueued_at = now
        frame.queue_len_at_enqueue = len(self.contents)
        self.contents.append(frame)
        if self.medium is not None:
            self.medium.kick()
        return True

    def flush(self, predicate: Callable[[Frame], bool]) -> list[Frame]:
        """Remove and return every queued frame matching ``predicate``."""
        kept: deque[Frame] = deque()
        removed = []
        for f in self.contents:
            (removed if predicate(f) else kept).append(f)
        self.contents = kept
        return removed


def enqueue(queue: TxQueue, frame: Frame, now: int) -> bool:
    return queue.enqueue(frame, now)


@dataclass
class Transmission:
    queue: str
    frame: Frame
    start: int
    end: int
    lost: bool = False


class Medium:
    """One channel shared by every attached queue. Exactly one frame is on air at
    a time; the next queue is picked round-robin among non-empty queues."""

    def __init__(
        self,
        engine: Engine,
        params: MediumParams,
        on_delivered: Callable[[Frame, TxQueue], None],
        on_lost: Callable[[Frame, TxQueue], None],
        record: bool = False,
    ):
        self.engine = engine
        self.params = params
        self.on_delivered = on_delivered
        self.on_lost = on_lost
        self.queues: list[TxQueue] = []
        self._rr = -1
        self.busy = False
        self.contention = engine.stream("contention")
        self.channel = engine.stream("channel")
        self.log: Optional[list[Transmission]] = [] if record else None
        self.busy_us = 0

    def attach(self, queue: TxQueue) -> TxQueue:
        queue.medium = self
        self.queues.append(queue)
        return queue

    def kick(self) -> None:
        if not self.busy:
            self.serve()

    def _next_queue(self) -> Optional[TxQueue]:
        n = len(self.queues)
        for step in range(1, n + 1):
            i = (self._rr + step) % n
            if self.queues[i].contents:
                self._rr = i
                return self.queues[i]
        return None

    def serve(self) -> Optional[Transmission]:
        """Start the next transmission if the medium is free and work is waiting."""
        if self.busy:
            return None
        queue = self._next_queue()
        if queue is None:
            return None
        frame = queue.contents.popleft()
        params = queue.params or self.params
        duration = airtime(frame, params, self.contention)
        now = self.engine.now
        tx = Transmission(queue.owner, frame, now, now + duration)
        self.busy = True
        self.busy_us += duration
        self.engine.schedule(tx.end, self._complete, tx, queue, params)
        return tx

    def _complete(self, tx: Transmission, queue: TxQueue, params: MediumParams) -> None:
        self.busy = False
        tx.lost = params.p_loss > 0 and self.channel.chance(params.p_loss)
        if self.log is not None:
            self.log.append(tx)
        if tx.lost:
            self.on_lost(tx.frame, queue)
        else:
            self.on_delivered(tx.frame, queue)
        self.serve()
