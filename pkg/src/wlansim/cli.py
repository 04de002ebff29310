"""Command line: ``wlansim run|exp1|exp2|table1|sweep``."""

from __future__ import annotations

import argparse
import csv
import logging
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from .metrics import MOS_CALIBRATION, RTT_SCENARIO_LABELS, calibrate_mos, estimate_mos
from .report import RunReport, run_scenario
from .scenario import ConfigError, ScenarioConfig, parse_override

log = logging.getLogger("wlansim")


def _overrides(pairs: Sequence[str]) -> dict:
    return dict(parse_override(p) for p in pairs or [])


def format_table1(jitter_ms: float) -> str:
    model = calibrate_mos()
    rows = [f"{'Scenario':<14}{'RTT (ms)':>10}{'Jitter (ms)':>13}{'MOS':>8}  quality"]
    for label, (rtt, _) in zip(RTT_SCENARIO_LABELS, MOS_CALIBRATION):
        est = estimate_mos(rtt, jitter_ms, model)
        flags = f"{est.label} (acceptable={str(est.acceptable).lower()}, can_be_good={str(est.can_be_good).lower()})"
        rows.append(f"{label:<14}{rtt:>10g}{jitter_ms:>13g}{est.score:>8.2f}  {flags}")
    return "\n".join(rows)


def cmd_table1(jitter_ms: float = 5.5) -> str:
    if jitter_ms < 0:
        raise ValueError("jitter must be >= 0")
    return format_table1(jitter_ms)


def cmd_exp1(seed: Optional[int] = None, overrides: Optional[dict] = None, out: Optional[str] = None) -> RunReport:
    return _canned("exp1", seed, overrides, out)


def cmd_exp2(seed: Optional[int] = None, overrides: Optional[dict] = None, out: Optional[str] = None) -> RunReport:
    return _canned("exp2", seed, overrides, out)


def _canned(name: str, seed, overrides, out) -> RunReport:
    ov = dict(overrides or {})
    if seed is not None:
        ov["master_seed"] = seed
    return run_scenario(ScenarioConfig.canned(name, ov), out)


def describe(report: RunReport) -> str:
    lines = [f"{report.name}  seed={report.seed}  handoffs={report.counters['handoffs']}"]
    for fid in report.game_downlinks:
        st = report.flows[fid]
        mos = report.mos[fid]
        lines.append(
            f"  {fid}: sent={st.sent} lost={st.lost} loss={st.loss_rate:.2%} dup={st.duplicates}"
            + (" (loss above the 35% tolerance)" if st.loss_noticeable else "")
        )
        if st.jitter_ms is not None:
            lines.append(
                f"    delay p50={st.p50_delay_ms:.2f} ms  p95={st.p95_delay_ms:.2f} ms  jitter={st.jitter_ms:.2f} ms"
            )
            lines.append(
                "    MOS  LAN={:.2f}  intra-region={:.2f}  inter-region={:.2f}".format(
                    mos["mos_lan"], mos["mos_intra"], mos["mos_inter"]
                )
            )
        lines.append(f"    longest loss burst={report.max_loss_burst[fid]}  delay sawtooth cycles={report.delay_cycles[fid]}")
    for fid, t in report.tcp.items():
        lines.append(f"  {fid}: cwnd reductions={len(t.reductions)} timeouts={t.timeouts} retransmissions={t.retransmissions}")
    if report.problems:
        lines.append("  INVARIANT VIOLATIONS:")
        lines += [f"    - {p}" for p in report.problems]
    return "\n".join(lines)


def _sweep_one(args: tuple[dict, int, Optional[str]]) -> RunReport:
    doc, seed, out = args
    cfg = ScenarioConfig.from_dict(doc, {"master_seed": seed})
    report = run_scenario(cfg, out)
    report.records = []
    return report


def sweep(cfg: ScenarioConfig, seeds: int, jobs: int = 1, out: Optional[str] = None) -> list[RunReport]:
    base = cfg.master_seed
    tasks = [
        (cfg.to_dict(), base + i, None if out is None else str(Path(out) / f"seed-{base + i}"))
        for i in range(seeds)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_sweep_one, tasks))
    else:
        reports = [_sweep_one(t) for t in tasks]
    if out is not None:
        _write_sweep_csv(reports, Path(out) / "sweep.csv")
    return reports


def _write_sweep_csv(reports: list[RunReport], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "handoffs", "loss_rate", "jitter_ms", "p50_delay_ms", "p95_delay_ms", "mos_lan", "mos_intra", "mos_inter", "ok"])
        for r in reports:
            if not r.game_downlinks:
                w.writerow([r.seed, r.counters["handoffs"], "", "", "", "", "", "", "", r.ok])
                continue
            g, m = r.game, r.mos[r.game_downlinks[0]]
            w.writerow([r.seed, r.counters["handoffs"], g.loss_rate, g.jitter_ms, g.p50_delay_ms, g.p95_delay_ms, m["mos_lan"], m["mos_intra"], m["mos_inter"], r.ok])


def _sweep_summary(reports: list[RunReport]) -> str:
    lines = [f"{len(reports)} runs, {sum(not r.ok for r in reports)} with invariant violations"]
    games = [r for r in reports if r.game_downlinks and r.game.jitter_ms is not None]
    if games:
        for name, get in (
            ("loss_rate", lambda r: r.game.loss_rate),
            ("jitter_ms", lambda r: r.game.jitter_ms),
            ("p95_delay_ms", lambda r: r.game.p95_delay_ms),
            ("mos_lan", lambda r: r.mos[r.game_downlinks[0]]["mos_lan"]),
        ):
            vals = [get(r) for r in games]
            sd = statistics.pstdev(vals) if len(vals) > 1 else 0.0
            lines.append(f"  {name}: mean={statistics.fmean(vals):.4f} sd={sd:.4f}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wlansim", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario file")
    run.add_argument("scenario")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", default=None, help="output directory (default: out/<name>-seed<S>)")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")

    for name, text in (("exp1", "game flow with periodic handoffs, no background traffic"),
                       ("exp2", "game flow sharing the APs with a bulk TCP download")):
        e = sub.add_parser(name, help=text)
        e.add_argument("--seed", type=int)
        e.add_argument("--out", default=None)
        e.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")

    t = sub.add_parser("table1", help="MOS for LAN / intra-region / inter-region RTTs")
    t.add_argument("--jitter", type=float, default=5.5, help="jitter in ms (default 5.5)")

    s = sub.add_parser("sweep", help="run one scenario over consecutive seeds")
    s.add_argument("scenario")
    s.add_argument("--seeds", type=int, required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", default=None)
    s.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "table1":
            print(cmd_table1(args.jitter))
            return 0
        ov = _overrides(args.overrides)
        if args.command in ("exp1", "exp2"):
            report = _canned(args.command, args.seed, ov, args.out)
        elif args.command == "run":
            if args.seed is not None:
                ov["master_seed"] = args.seed
            cfg = ScenarioConfig.load(args.scenario, ov)
            out = args.out or str(Path("out") / f"{cfg.name}-seed{cfg.master_seed}")
            report = run_scenario(cfg, out)
            print(f"wrote {out}")
        else:
            cfg = ScenarioConfig.load(args.scenario, ov)
            reports = sweep(cfg, args.seeds, args.jobs, args.out)
            print(_sweep_summary(reports))
            return 0 if all(r.ok for r in reports) else 1
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(describe(report))
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())
