"""Central WLAN controller: LVAP table, per-AP power subscriptions, handoff
policies and add-first / remove-first handoff execution."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

from .engine import Engine, ms
from .radio import Frame, RadioMap, TxQueue

log = logging.getLogger(__name__)


class HandoffError(ValueError):
    pass


@dataclass
class Lvap:
    client_mac: str
    virtual_bssid: str
    owner_aps: list[str]
    created_at: int
    last_handoff_at: Optional[int] = None
    active: Optional["HandoffRecord"] = None


@dataclass(frozen=True)
class Subscription:
    ap: str
    registered_at: int
    threshold_dbm: float
    metric: str = "rx_power"


@dataclass(frozen=True)
class PublishEvent:
    ap: str
    client_mac: str
    rssi_dbm: float
    t: int


@dataclass(frozen=True)
class Periodic:
    interval_ms: float = 3000.0

    def __post_init__(self) -> None:
        if self.interval_ms <= 0:
            raise ValueError("interval_ms must be > 0")


@dataclass(frozen=True)
class ThresholdHysteresis:
    hysteresis_db: float = 3.0
    dwell_ms: float = 500.0
    min_interval_ms: float = 1000.0

    def __post_init__(self) -> None:
        if self.hysteresis_db < 0 or self.dwell_ms < 0 or self.min_interval_ms < 0:
            raise ValueError("hysteresis, dwell and min interval must be >= 0")


@dataclass(frozen=True)
class AddFirst:
    overlap_ms: float = 10.0

    def __post_init__(self) -> None:
        if self.overlap_ms < 0:
            raise ValueError("overlap_ms must be >= 0")

    name = "add_first"


@dataclass(frozen=True)
class RemoveFirst:
    gap_ms: float = 10.0

    def __post_init__(self) -> None:
        if self.gap_ms < 0:
            raise ValueError("gap_ms must be >= 0")

    name = "remove_first"


HandoffPolicy = Union[Periodic, ThresholdHysteresis]
HandoffOrdering = Union[AddFirst, RemoveFirst]


@dataclass(frozen=True)
class HandoffDecision:
    client: str
    src: str
    dst: str
    t: int


@dataclass
class HandoffRecord:
    id: int
    t_us: int
    client: str
    src_ap: str
    dst_ap: str
    ordering: str
    duplicates: int = 0
    gap_losses: int = 0
    flushed_frames: int = 0
    completed_at: Optional[int] = None

    HEADER = ("t_us", "client", "src_ap", "dst_ap", "ordering", "duplicates", "gap_losses", "flushed_frames")

    def row(self) -> list:
        return [getattr(self, k) for k in self.HEADER]


def virtual_bssid_for(index: int) -> str:
    # locally administered unicast address, one per client
    return "02:00:00:00:{:02x}:{:02x}".format((index >> 8) & 0xFF, index & 0xFF)


FlushHandler = Callable[[list[Frame], HandoffRecord], None]


class Controller:
    def __init__(
        self,
        engine: Engine,
        policy: HandoffPolicy,
        ordering: HandoffOrdering,
        control_latency_us: int = ms(5),
        radio: Optional[RadioMap] = None,
        sample_period_us: int = ms(100),
        publish_threshold_dbm: float = -75.0,
        on_flush: Optional[FlushHandler] = None,
    ):
        self.engine = engine
        self.policy = policy
        self.ordering = ordering
        self.control_latency_us = int(control_latency_us)
        self.radio = radio
        self.sample_period_us = int(sample_period_us)
        self.publish_threshold_dbm = publish_threshold_dbm
        self.on_flush = on_flush

        self.aps: dict[str, TxQueue] = {}
        self.lvaps: dict[str, Lvap] = {}
        self.subscriptions: dict[str, Subscription] = {}
        self.handoffs: list[HandoffRecord] = []
        self.managed_clients: Optional[list[str]] = None
        self.sampling = True

        self.latest_rssi: dict[tuple[str, str], float] = {}
        self._dwell_since: dict[tuple[str, str], int] = {}
        self.publishes = 0
        self.unknown_publishes = 0
        self.rejected_handoffs = 0
        self.liveness_violations = 0
        self.gap_losses = 0

    # ----------------------------------------------------------- registration

    def register_ap(self, ap: str, queue: TxQueue) -> None:
        self.aps[ap] = queue

    def create_lvap(self, client: str, ap: str) -> Lvap:
        if ap not in self.aps:
            raise HandoffError(f"AP {ap!r} is not registered")
        if client in self.lvaps:
            raise HandoffError(f"client {client!r} already has an LVAP")
        lvap = Lvap(client, virtual_bssid_for(len(self.lvaps) + 1), [ap], self.engine.now)
        self.lvaps[client] = lvap
        return lvap

    def record(self, handoff_id: int) -> HandoffRecord:
        return self.handoffs[handoff_id]

    # ------------------------------------------------------- subscribe/publish

    def add_subscription(self, ap: str) -> Subscription:
        if ap not in self.aps:
            raise HandoffError(f"AP {ap!r} is not registered")
        sub = self.subscriptions.get(ap)
        if sub is not None:
            return sub
        sub = Subscription(ap, self.engine.now, self.publish_threshold_dbm)
        self.subscriptions[ap] = sub
        if self.radio is not None:
            self.engine.schedule_in(self.sample_period_us, self._sample, ap)
        return sub

    def _sample(self, ap: str) -> None:
        if not self.sampling:
            return
        t = self.engine.now
        for client in self.lvaps:
            self.on_sample(ap, client, self.radio.rssi(ap, client, t), t)
        self.engine.schedule_in(self.sample_period_us, self._sample, ap)

    def on_sample(self, ap: str, client: str, rssi_dbm: float, t: int) -> Optional[HandoffDecision]:
        """One RSSI measurement by a subscribed AP. Non-owners publish when the
        sample exceeds the subscription threshold."""
        sub = self.subscriptions.get(ap)
        if sub is None:
            return None
        self.latest_rssi[(ap, client)] = rssi_dbm
        lvap = self.lvaps.get(client)
        if lvap is None or ap in lvap.owner_aps:
            return None
        if rssi_dbm <= sub.threshold_dbm:
            self._dwell_since.pop((client, ap), None)
            return None
        self.publishes += 1
        decision = self.on_publish(PublishEvent(ap, client, rssi_dbm, t))
        if decision is not None:
            self.execute_handoff(self.lvaps[client], decision.dst)
        return decision

    def on_publish(self, ev: PublishEvent) -> Optional[HandoffDecision]:
        if not isinstance(self.policy, ThresholdHysteresis):
            return None
        lvap = self.lvaps.get(ev.client_mac)
        if lvap is None:
            self.unknown_publishes += 1
            return None
        self.latest_rssi[(ev.ap, ev.client_mac)] = ev.rssi_dbm
        if ev.ap in lvap.owner_aps or len(lvap.owner_aps) != 1:
            return None
        if self.managed_clients is not None and ev.client_mac not in self.managed_clients:
            return None
        owner = lvap.owner_aps[0]
        owner_rssi = self.latest_rssi.get((owner, ev.client_mac), float("-inf"))
        key = (ev.client_mac, ev.ap)
        if ev.rssi_dbm - owner_rssi < self.policy.hysteresis_db:
            self._dwell_since.pop(key, None)
            return None
        since = self._dwell_since.setdefault(key, ev.t)
        if ev.t - since < ms(self.policy.dwell_ms):
            return None
        if lvap.last_handoff_at is not None and ev.t - lvap.last_handoff_at < ms(self.policy.min_interval_ms):
            return None
        if lvap.active is not None:
            return None
        return HandoffDecision(ev.client_mac, owner, ev.ap, ev.t)

    # ---------------------------------------------------------------- periodic

    def start_periodic(self, until_us: int) -> None:
        if not isinstance(self.policy, Periodic):
            raise HandoffError("periodic handoffs need a Periodic policy")
        step = ms(self.policy.interval_ms)
        t = step
        while t <= until_us:
            self.engine.schedule(t, self._tick)
            t += step

    def _tick(self) -> None:
        for decision in self.periodic_tick(self.engine.now):
            self.execute_handoff(self.lvaps[decision.client], decision.dst)

    def periodic_tick(self, t: int) -> list[HandoffDecision]:
        """Decisions moving every managed client to the next AP (round-robin
        over registered APs)."""
        if not isinstance(self.policy, Periodic) or len(self.aps) < 2:
            return []
        order = list(self.aps)
        out = []
        for client, lvap in self.lvaps.items():
            if self.managed_clients is not None and client not in self.managed_clients:
                continue
            if len(lvap.owner_aps) != 1:
                continue
            src = lvap.owner_aps[0]
            dst = order[(order.index(src) + 1) % len(order)]
            out.append(HandoffDecision(client, src, dst, t))
        return out

    # --------------------------------------------------------------- execution

    def execute_handoff(
        self, lvap: Lvap, dst: str, ordering: Optional[HandoffOrdering] = None
    ) -> Optional[HandoffRecord]:
        ordering = ordering or self.ordering
        if dst not in self.aps:
            raise HandoffError(f"destination AP {dst!r} is not registered")
        if lvap.active is not None:
            self.rejected_handoffs += 1
            return None
        if lvap.owner_aps == [dst]:
            return None
        src = lvap.owner_aps[0]
        now = self.engine.now
        rec = HandoffRecord(len(self.handoffs), now, lvap.client_mac, src, dst, ordering.name)
        self.handoffs.append(rec)
        lvap.active = rec
        lvap.last_handoff_at = now
        self._dwell_since = {k: v for k, v in self._dwell_since.items() if k[0] != lvap.client_mac}
        t0 = now + self.control_latency_us
        if isinstance(ordering, AddFirst):
            self.engine.schedule(t0, self._add_owner, lvap, dst)
            self.engine.schedule(t0 + ms(ordering.overlap_ms), self._remove_owner, lvap, src, rec, True)
        else:
            self.engine.schedule(t0, self._remove_owner, lvap, src, rec, False)
            self.engine.schedule(t0 + ms(ordering.gap_ms), self._add_owner, lvap, dst, rec)
        log.debug("handoff %d: %s %s -> %s (%s)", rec.id, lvap.client_mac, src, dst, ordering.name)
        return rec

    def _add_owner(self, lvap: Lvap, ap: str, finishing: Optional[HandoffRecord] = None) -> None:
        if ap not in lvap.owner_aps:
            lvap.owner_aps.append(ap)
        if finishing is not None:
            self._complete(lvap, finishing)

    def _remove_owner(self, lvap: Lvap, ap: str, rec: HandoffRecord, finishing: bool) -> None:
        if ap in lvap.owner_aps:
            lvap.owner_aps.remove(ap)
        stale = self.aps[ap].flush(lambda f: f.client == lvap.client_mac)
        rec.flushed_frames += len(stale)
        if stale and self.on_flush is not None:
            self.on_flush(stale, rec)
        if finishing:
            self._complete(lvap, rec)

    def _complete(self, lvap: Lvap, rec: HandoffRecord) -> None:
        rec.completed_at = self.engine.now
        lvap.active = None
        if lvap.owner_aps != [rec.dst_ap]:
            self.liveness_violations += 1

    # ----------------------------------------------------------------- routing

    def route_downlink(self, frame: Frame) -> list[TxQueue]:
        """Queues the frame must be placed in: one per owner AP. With no owner
        (remove-first gap) the frame is lost and counted against the handoff."""
        lvap = self.lvaps.get(frame.dst)
        if lvap is None:
            raise HandoffError(f"no LVAP for {frame.dst!r}")
        if not lvap.owner_aps:
            self.gap_losses += 1
            if lvap.active is not None:
                lvap.active.gap_losses += 1
            return []
        frame.client = lvap.client_mac
        frame.bssid = lvap.virtual_bssid
        if len(lvap.owner_aps) > 1 and lvap.active is not None:
            frame.handoff_id = lvap.active.id
        return [self.aps[ap] for ap in lvap.owner_aps]

    def uplink_receiver(self, client: str) -> Optional[str]:
        lvap = self.lvaps[client]
        return lvap.owner_aps[0] if lvap.owner_aps else None


def copy_frame(frame: Frame) -> Frame:
    return replace(frame)
