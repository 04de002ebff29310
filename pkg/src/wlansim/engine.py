"""Discrete-event engine: integer microsecond clock, ordered event queue and
named, seeded random streams."""

from __future__ import annotations

import hashlib
import heapq
import math
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Union

US_PER_MS = 1_000
US_PER_S = 1_000_000


def ms(value: float) -> int:
    return int(round(value * US_PER_MS))


def seconds(value: float) -> int:
    return int(round(value * US_PER_S))


class SchedulingError(ValueError):
    pass


@dataclass(order=True)
class Event:
    fire_at: int
    insert_seq: int
    action: Callable[..., Any] = field(compare=False)
    args: tuple = field(default=(), compare=False)
    cancelled: bool = field(default=False, compare=False)

    @property
    def label(self) -> str:
        return getattr(self.action, "__qualname__", repr(self.action))


# ---------------------------------------------------------------- distributions


@dataclass(frozen=True)
class Constant:
    c: float


@dataclass(frozen=True)
class Uniform:
    a: float
    b: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.a) and math.isfinite(self.b)) or self.b < self.a:
            raise ValueError(f"uniform needs finite a <= b, got ({self.a}, {self.b})")


@dataclass(frozen=True)
class Exponential:
    mean: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.mean) or self.mean < 0:
            raise ValueError(f"exponential mean must be >= 0, got {self.mean}")


@dataclass(frozen=True)
class Normal:
    mean: float
    sigma: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError(f"normal sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class Bernoulli:
    p: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"bernoulli p must be in [0, 1], got {self.p}")


Distribution = Union[Constant, Uniform, Exponential, Normal, Bernoulli]


def distribution_from_dict(spec: dict) -> Distribution:
    """Build a distribution from a scenario-file descriptor such as
    ``{"dist": "uniform", "a": 120, "b": 320}``."""
    kinds = {
        "constant": Constant,
        "uniform": Uniform,
        "exponential": Exponential,
        "normal": Normal,
        "bernoulli": Bernoulli,
    }
    params = dict(spec)
    kind = params.pop("dist", None)
    if kind not in kinds:
        raise ValueError(f"unknown distribution {kind!r}; expected one of {sorted(kinds)}")
    try:
        return kinds[kind](**params)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {kind} distribution: {params}") from exc


def distribution_to_dict(dist: Distribution) -> dict:
    name = type(dist).__name__.lower()
    return {"dist": name, **dist.__dict__}


def distribution_mean(dist: Distribution) -> float:
    if isinstance(dist, Constant):
        return dist.c
    if isinstance(dist, Uniform):
        return (dist.a + dist.b) / 2
    if isinstance(dist, Bernoulli):
        return dist.p
    return dist.mean


class RngStream:
    """Independent random stream identified by (master_seed, stream_label).

    The stream seed is derived with SHA-256 so it is stable across processes
    and Python versions (the builtin ``hash`` is salted per process).
    """

    def __init__(self, master_seed: int, stream_label: str):
        self.master_seed = int(master_seed)
        self.stream_label = stream_label
        digest = hashlib.sha256(f"{self.master_seed}/{stream_label}".encode()).digest()
        self._rng = random.Random(int.from_bytes(digest[:8], "big"))
        self.draws = 0

    def draw(self, dist: Distribution) -> float:
        self.draws += 1
        rng = self._rng
        if isinstance(dist, Constant):
            return dist.c
        if isinstance(dist, Uniform):
            return rng.uniform(dist.a, dist.b)
        if isinstance(dist, Exponential):
            return rng.expovariate(1.0 / dist.mean) if dist.mean > 0 else 0.0
        if isinstance(dist, Normal):
            return rng.gauss(dist.mean, dist.sigma) if dist.sigma > 0 else dist.mean
        if isinstance(dist, Bernoulli):
            return float(rng.random() < dist.p)
        raise TypeError(f"not a distribution: {dist!r}")

    def chance(self, p: float) -> bool:
        return bool(self.draw(Bernoulli(p)))

    def uniform(self, a: float, b: float) -> float:
        return self.draw(Uniform(a, b))


# ----------------------------------------------------------------------- engine


class Engine:
    """Single-threaded event loop. Events pop in (fire_at, insert_seq) order."""

    def __init__(self, master_seed: int = 0, record_log: bool = False):
        self.now = 0
        self.master_seed = int(master_seed)
        self._heap: list[Event] = []
        self._next_seq = 0
        self._streams: dict[str, RngStream] = {}
        self.fired = 0
        self.log: list[tuple[int, int, str]] | None = [] if record_log else None

    def schedule(self, fire_at: int, action: Callable[..., Any], *args: Any) -> Event:
        fire_at = int(fire_at)
        if fire_at < self.now:
            raise SchedulingError(f"cannot schedule at t={fire_at} us, clock is at {self.now} us")
        ev = Event(fire_at, self._next_seq, action, args)
        self._next_seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def schedule_in(self, delay: int, action: Callable[..., Any], *args: Any) -> Event:
        return self.schedule(self.now + int(delay), action, *args)

    @staticmethod
    def cancel(ticket: Event) -> None:
        ticket.cancelled = True

    def pending(self) -> int:
        return sum(1 for ev in self._heap if not ev.cancelled)

    def run_until(self, t_end: int) -> int:
        t_end = int(t_end)
        if t_end < self.now:
            raise SchedulingError(f"run_until({t_end}) is before the clock ({self.now})")
        heap = self._heap
        while heap and heap[0].fire_at <= t_end:
            ev = heapq.heappop(heap)
            if ev.cancelled:
                continue
            self.now = ev.fire_at
            self.fired += 1
            if self.log is not None:
                self.log.append((ev.fire_at, ev.insert_seq, ev.label))
            ev.action(*ev.args)
        self.now = t_end
        return self.now

    def stream(self, label: str) -> RngStream:
        if label not in self._streams:
            self._streams[label] = RngStream(self.master_seed, label)
        return self._streams[label]

    def draw(self, label: str, dist: Distribution) -> float:
        return self.stream(label).draw(dist)
