"""Scenario files: JSON documents layered over built-in defaults.

A scenario is kept as a normalized plain dict (defaults filled in) so it can
be echoed back verbatim into a run report and re-run; typed objects are built
from it on demand.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union

from .controller import AddFirst, HandoffOrdering, HandoffPolicy, Periodic, RemoveFirst, ThresholdHysteresis
from .engine import distribution_from_dict
from .radio import MediumParams, PathLossParams, Position, Trajectory
from .traffic import GameFlowParams, SinkConfig

CANNED = ("exp1", "exp2")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid scenario:\n  - " + "\n  - ".join(problems))


DEFAULTS: dict[str, Any] = {
    "name": "scenario",
    "duration_s": 24.0,
    "drain_s": 2.0,
    "master_seed": 1,
    "wired_latency_ms": 1.0,
    "queue_capacity": 100,
    "medium": {
        "phy_rate_mbps": 24.0,
        "per_frame_overhead_us": 300.0,
        "contention_mean_us": 3600.0,
        "contention_cap_us": 20000.0,
        "p_loss": 0.02,
    },
    "channel": {
        "tx_power_dbm": 20.0,
        "pl0_db": 40.0,
        "ref_dist_m": 1.0,
        "exponent": 3.0,
        "shadow_sigma_db": 2.0,
    },
    "aps": [],
    "stations": [],
    "flows": [],
    "handoff": {
        "policy": {"type": "periodic", "interval_ms": 3000.0},
        "ordering": {"type": "add_first", "overlap_ms": 10.0},
        "control_latency_ms": 5.0,
        "clients": None,
        "subscribe": True,
        "sample_period_ms": 100.0,
        "publish_threshold_dbm": -75.0,
    },
    "mos": {"jitter_to_delay_ms_per_ms": 1.0},
}

GAME_DEFAULTS = {
    "enabled": True,
    "uplink_rate_pps": 60.0,
    "uplink_size": {"dist": "constant", "c": 80},
    "downlink_rate_pps": 12.0,
    "downlink_size": {"dist": "uniform", "a": 120, "b": 320},
    "jitter_frac": 0.2,
}

TCP_DEFAULTS = {
    "enabled": True,
    "mss_bytes": 1460,
    "initial_cwnd": 2.0,
    "initial_ssthresh": 64.0,
    "ack_delay_us": 0,
    "acks_every": 1,
    "delayed_ack_timeout_ms": 40.0,
    "rto_min_ms": 1000.0,
    "file_bytes": None,
    "start_s": 0.0,
}

POLICY_DEFAULTS = {
    "periodic": {"interval_ms": 3000.0},
    "threshold": {"hysteresis_db": 3.0, "dwell_ms": 500.0, "min_interval_ms": 1000.0},
}
ORDERING_DEFAULTS = {"add_first": {"overlap_ms": 10.0}, "remove_first": {"gap_ms": 10.0}}


def _merge(base: Any, over: Any) -> Any:
    if isinstance(base, dict) and isinstance(over, dict):
        out = dict(base)
        for k, v in over.items():
            out[k] = _merge(base.get(k), v) if k in base else copy.deepcopy(v)
        return out
    return copy.deepcopy(over)


def apply_override(doc: dict, key: str, value: Any) -> None:
    """Set a dotted path such as ``medium.p_loss`` or ``flows.1.enabled``."""
    parts = key.split(".")
    node: Any = doc
    for i, part in enumerate(parts[:-1]):
        if isinstance(node, list):
            node = node[int(part)]
        else:
            if part not in node or node[part] is None:
                node[part] = {}
            node = node[part]
    last = parts[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ValueError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


@dataclass(frozen=True)
class ApSpec:
    id: str
    position: Position
    medium: Optional[MediumParams]
    queue_capacity: int


@dataclass(frozen=True)
class StationSpec:
    id: str
    trajectory: Trajectory
    initial_ap: Optional[str]


@dataclass(frozen=True)
class GameFlowSpec:
    id: str
    station: str
    params: GameFlowParams


@dataclass(frozen=True)
class TcpFlowSpec:
    id: str
    station: str
    mss_bytes: int
    initial_cwnd: float
    initial_ssthresh: float
    sink: SinkConfig
    delayed_ack_timeout_us: int
    rto_min_us: int
    file_bytes: Optional[int]
    start_us: int


class ScenarioConfig:
    """A validated scenario. ``doc`` is the normalized dict echoed in reports."""

    def __init__(self, doc: dict):
        self.doc = doc
        problems: list[str] = []
        self._build(problems)
        if problems:
            raise ConfigError(problems)

    # ------------------------------------------------------------ construction

    @classmethod
    def from_dict(cls, user: dict, overrides: Optional[dict[str, Any]] = None) -> "ScenarioConfig":
        doc = _merge(DEFAULTS, user)
        for key, value in (overrides or {}).items():
            apply_override(doc, key, value)
        doc = _normalize(doc)
        return cls(doc)

    @classmethod
    def load(cls, path: Union[str, Path], overrides: Optional[dict[str, Any]] = None) -> "ScenarioConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), overrides)

    @classmethod
    def canned(cls, name: str, overrides: Optional[dict[str, Any]] = None) -> "ScenarioConfig":
        if name not in CANNED:
            raise ValueError(f"unknown canned scenario {name!r}")
        text = resources.files("wlansim").joinpath("scenarios", f"{name}.json").read_text("utf-8")
        return cls.from_dict(json.loads(text), overrides)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.doc)

    def to_json(self) -> str:
        return json.dumps(self.doc, indent=2, sort_keys=True)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return ScenarioConfig.from_dict(self.doc, {"master_seed": int(seed)})

    # -------------------------------------------------------------- validation

    def _build(self, problems: list[str]) -> None:
        d = self.doc

        def check(cond: bool, msg: str) -> bool:
            if not cond:
                problems.append(msg)
            return cond

        self.name = str(d["name"])
        self.duration_s = float(d["duration_s"])
        self.drain_s = float(d["drain_s"])
        check(self.duration_s > 0, "duration_s must be > 0")
        check(self.drain_s >= 0, "drain_s must be >= 0")
        self.master_seed = int(d["master_seed"])
        self.wired_latency_ms = float(d["wired_latency_ms"])
        check(self.wired_latency_ms >= 0, "wired_latency_ms must be >= 0")
        self.queue_capacity = int(d["queue_capacity"])
        check(self.queue_capacity >= 0, "queue_capacity must be >= 0")

        self.medium = _typed(MediumParams, d["medium"], "medium", problems)
        self.channel = _typed(PathLossParams, d["channel"], "channel", problems)

        self.aps: list[ApSpec] = []
        check(len(d["aps"]) >= 1, "at least one AP is required")
        for i, ap in enumerate(d["aps"]):
            where = f"aps[{i}]"
            pos = _position(ap.get("position"), where, problems)
            med = None
            if ap.get("medium"):
                base = self.medium.__dict__ if self.medium else DEFAULTS["medium"]
                med = _typed(MediumParams, {**base, **ap["medium"]}, f"{where}.medium", problems)
            cap = ap.get("queue_capacity")
            cap = self.queue_capacity if cap is None else int(cap)
            check(cap >= 0, f"{where}.queue_capacity must be >= 0")
            if check("id" in ap, f"{where} needs an id") and pos is not None:
                self.aps.append(ApSpec(str(ap["id"]), pos, med, cap))
        ap_ids = [a.id for a in self.aps]
        check(len(set(ap_ids)) == len(ap_ids), "AP ids must be unique")

        self.stations: list[StationSpec] = []
        for i, st in enumerate(d["stations"]):
            where = f"stations[{i}]"
            traj = _trajectory(st, where, problems)
            init = st.get("initial_ap")
            if init is not None:
                check(init in ap_ids, f"{where}.initial_ap {init!r} is not a known AP")
            if check("id" in st, f"{where} needs an id") and traj is not None:
                self.stations.append(StationSpec(str(st["id"]), traj, init))
        sta_ids = {s.id for s in self.stations}
        check(len(sta_ids) == len(self.stations), "station ids must be unique")
        check(not sta_ids & set(ap_ids), "station and AP ids must not collide")

        self.game_flows: list[GameFlowSpec] = []
        self.tcp_flows: list[TcpFlowSpec] = []
        flow_ids = set()
        for i, fl in enumerate(d["flows"]):
            where = f"flows[{i}]"
            fid = fl.get("id")
            check(fid is not None, f"{where} needs an id")
            check(fid not in flow_ids, f"{where}: duplicate flow id {fid!r}")
            flow_ids.add(fid)
            check(fl.get("station") in sta_ids, f"{where}: station {fl.get('station')!r} does not exist")
            kind = fl.get("type")
            if not check(kind in ("game", "tcp"), f"{where}: type must be 'game' or 'tcp'"):
                continue
            if not fl.get("enabled", True):
                continue
            try:
                if kind == "game":
                    params = GameFlowParams(
                        uplink_rate_pps=float(fl["uplink_rate_pps"]),
                        uplink_size=distribution_from_dict(fl["uplink_size"]),
                        downlink_rate_pps=float(fl["downlink_rate_pps"]),
                        downlink_size=distribution_from_dict(fl["downlink_size"]),
                        jitter_frac=float(fl["jitter_frac"]),
                    )
                    self.game_flows.append(GameFlowSpec(str(fid), fl["station"], params))
                else:
                    spec = TcpFlowSpec(
                        id=str(fid),
                        station=fl["station"],
                        mss_bytes=int(fl["mss_bytes"]),
                        initial_cwnd=float(fl["initial_cwnd"]),
                        initial_ssthresh=float(fl["initial_ssthresh"]),
                        sink=SinkConfig(int(fl["ack_delay_us"]), int(fl["acks_every"])),
                        delayed_ack_timeout_us=int(round(float(fl["delayed_ack_timeout_ms"]) * 1000)),
                        rto_min_us=int(round(float(fl["rto_min_ms"]) * 1000)),
                        file_bytes=None if fl["file_bytes"] is None else int(fl["file_bytes"]),
                        start_us=int(round(float(fl["start_s"]) * 1e6)),
                    )
                    check(spec.mss_bytes > 0, f"{where}.mss_bytes must be > 0")
                    check(spec.initial_cwnd >= 1, f"{where}.initial_cwnd must be >= 1")
                    check(spec.initial_ssthresh >= 2, f"{where}.initial_ssthresh must be >= 2")
                    self.tcp_flows.append(spec)
            except (KeyError, TypeError, ValueError) as exc:
                problems.append(f"{where}: {exc}")

        h = d["handoff"]
        self.policy = _policy(h.get("policy"), problems)
        self.ordering = _ordering(h.get("ordering"), problems)
        self.control_latency_ms = float(h["control_latency_ms"])
        check(self.control_latency_ms >= 0, "handoff.control_latency_ms must be >= 0")
        self.sample_period_ms = float(h["sample_period_ms"])
        check(self.sample_period_ms > 0, "handoff.sample_period_ms must be > 0")
        self.publish_threshold_dbm = float(h["publish_threshold_dbm"])
        self.subscribe = bool(h["subscribe"])
        clients = h.get("clients")
        if clients is not None:
            for c in clients:
                check(c in sta_ids, f"handoff.clients: unknown station {c!r}")
        self.handoff_clients = clients
        self.jitter_to_delay = float(d["mos"]["jitter_to_delay_ms_per_ms"])


def _normalize(doc: dict) -> dict:
    doc["flows"] = [
        _merge(GAME_DEFAULTS if fl.get("type") == "game" else TCP_DEFAULTS if fl.get("type") == "tcp" else {}, fl)
        for fl in doc.get("flows", [])
    ]
    h = doc["handoff"]
    pol = h.get("policy") or {}
    if pol.get("type") in POLICY_DEFAULTS:
        h["policy"] = _merge({"type": pol["type"], **POLICY_DEFAULTS[pol["type"]]}, pol)
    order = h.get("ordering") or {}
    if order.get("type") in ORDERING_DEFAULTS:
        h["ordering"] = _merge({"type": order["type"], **ORDERING_DEFAULTS[order["type"]]}, order)
    for ap in doc.get("aps", []):
        ap.setdefault("medium", {})
        ap.setdefault("queue_capacity", None)
    for st in doc.get("stations", []):
        st.setdefault("initial_ap", None)
    return doc


def _typed(cls, values: dict, where: str, problems: list[str]):
    try:
        return cls(**{k: float(v) for k, v in values.items()})
    except (TypeError, ValueError) as exc:
        problems.append(f"{where}: {exc}")
        return None


def _position(value, where: str, problems: list[str]) -> Optional[Position]:
    try:
        x, y = value
        return Position(float(x), float(y))
    except (TypeError, ValueError) as exc:
        problems.append(f"{where}.position must be [x, y] meters ({exc})")
        return None


def _trajectory(st: dict, where: str, problems: list[str]) -> Optional[Trajectory]:
    if "trajectory" in st and st["trajectory"]:
        try:
            pts = [(int(round(float(t) * 1e6)), Position(float(p[0]), float(p[1]))) for t, p in st["trajectory"]]
            return Trajectory(pts)
        except (TypeError, ValueError) as exc:
            problems.append(f"{where}.trajectory: {exc}")
            return None
    pos = _position(st.get("position"), where, problems)
    return None if pos is None else Trajectory.fixed(pos)


def _policy(p: Optional[dict], problems: list[str]) -> Optional[HandoffPolicy]:
    try:
        if p and p.get("type") == "periodic":
            return Periodic(float(p["interval_ms"]))
        if p and p.get("type") == "threshold":
            return ThresholdHysteresis(float(p["hysteresis_db"]), float(p["dwell_ms"]), float(p["min_interval_ms"]))
    except (KeyError, ValueError) as exc:
        problems.append(f"handoff.policy: {exc}")
        return None
    problems.append("handoff.policy.type must be 'periodic' or 'threshold'")
    return None


def _ordering(o: Optional[dict], problems: list[str]) -> Optional[HandoffOrdering]:
    try:
        if o and o.get("type") == "add_first":
            return AddFirst(float(o["overlap_ms"]))
        if o and o.get("type") == "remove_first":
            return RemoveFirst(float(o["gap_ms"]))
    except (KeyError, ValueError) as exc:
        problems.append(f"handoff.ordering: {exc}")
        return None
    problems.append("handoff.ordering.type must be 'add_first' or 'remove_first'")
    return None
