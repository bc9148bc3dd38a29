"""swarmlink command line.

    swarmlink validate  SCENARIO
    swarmlink monolithic SCENARIO --out DIR
    swarmlink node      SCENARIO --role server|client --out DIR
    swarmlink loopback  SCENARIO --out DIR

SCENARIO is a YAML path or the name of a packaged scenario (e.g. paper-iv-a).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
from pathlib import Path

from . import metrics
from .metrics import RunLog, delay_stats, export_csv, merge_trajectories, packet_loss
from .node import NodeError, PeerTimeout, SeqMismatch, SimulationAbort, run_monolithic, run_node
from .scenario import ScenarioError, ScenarioSpec, node_id_for_role, packaged_scenarios, parse_scenario
from .swarm import SwarmError
from .transport import (BindFailed, ConnectRefused, ConnectTimeout, LinkClosed, Role, TransportError,
                        impaired_channel, open_link)

log = logging.getLogger("swarmlink")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_SIM_ABORT = 4
EXIT_CONNECT = 5
EXIT_PEER_TIMEOUT = 6
EXIT_PROTOCOL = 7
EXIT_LINK_CLOSED = 8
EXIT_IO = 9


def _exit_code(err: BaseException) -> int:
    if isinstance(err, (ScenarioError, ValueError)) and not isinstance(err, NodeError):
        return EXIT_CONFIG
    if isinstance(err, (SimulationAbort, SwarmError)):
        return EXIT_SIM_ABORT
    if isinstance(err, (BindFailed, ConnectRefused, ConnectTimeout)):
        return EXIT_CONNECT
    if isinstance(err, PeerTimeout):
        return EXIT_PEER_TIMEOUT
    if isinstance(err, SeqMismatch) or (isinstance(err, NodeError) and err.kind == "id-collision"):
        return EXIT_PROTOCOL
    if isinstance(err, (LinkClosed, TransportError, NodeError)):
        return EXIT_LINK_CLOSED
    if isinstance(err, (metrics.MetricsError, OSError)):
        return EXIT_IO
    return 1


def _write_run(lg: RunLog, out: Path, prefix: str = "") -> None:
    out.mkdir(parents=True, exist_ok=True)
    if lg.ticks:
        export_csv(lg, "trajectories", out / f"{prefix}trajectories.csv")
    export_csv(lg, "swarm_metrics", out / f"{prefix}swarm_metrics.csv", allow_empty=True)
    if lg.delays:
        export_csv(lg, "delays", out / f"{prefix}delays.csv")


def _report(lg: RunLog) -> dict:
    rep: dict = {"node_id": lg.node_id, "ticks": len(lg.ticks), "error": lg.error,
                 "discarded_frames": lg.discarded_frames}
    if lg.delays:
        st = delay_stats(lg.delays)
        # negative delays mean the two clocks disagree; flagged, never clamped
        neg = sum(1 for d in lg.delays if d.delay < 0)
        if neg:
            log.warning("node %s: %d frames arrived before they were sent; clocks are skewed", lg.node_id, neg)
        rep["delay"] = {"mean": st.mean, "max": st.max, "stddev": st.stddev, "count": st.count, "negative": neg}
    loss = packet_loss(lg)
    rep["loss"] = {"expected": loss.expected, "received": loss.received, "gaps": loss.gaps}
    if lg.link_stats is not None:
        s = lg.link_stats
        rep["link"] = {"frames_sent": s.frames_sent, "frames_received": s.frames_received,
                       "frames_dropped_by_impairment": s.frames_dropped_by_impairment,
                       "dropped_frames": list(s.dropped_frames)}
    return rep


def cmd_validate(spec: ScenarioSpec, args) -> int:
    spec.initial_world()
    print(f"{spec.name}: ok ({spec.agents_per_node[0]}+{spec.agents_per_node[1]} followers, "
          f"leader on node {spec.leader_node}, {spec.step_budget} steps, {spec.exchange_mode.value})")
    return EXIT_OK


def cmd_monolithic(spec: ScenarioSpec, out_dir) -> int:
    out = Path(out_dir)
    try:
        lg = run_monolithic(spec.initial_world(), spec.swarm, spec.sim, spec.leader_path, spec.step_budget)
    except SimulationAbort as e:
        if e.log is not None:
            _write_run(e.log, out)
        raise
    _write_run(lg, out)
    log.info("monolithic run: %d ticks written to %s", len(lg.ticks), out)
    return EXIT_OK


def cmd_node(spec: ScenarioSpec, role: Role, out_dir) -> int:
    out = Path(out_dir)
    node_id = node_id_for_role(role)
    cfg = spec.node_config(node_id)
    link = open_link(spec.endpoint(role), retry_refused=True)
    try:
        lg = run_node(cfg, link)
    except NodeError as e:
        if e.log is not None:
            _write_run(e.log, out, f"node{node_id}_")
        raise
    finally:
        link.close()
    _write_run(lg, out, f"node{node_id}_")
    (out / f"node{node_id}_report.json").write_text(json.dumps(_report(lg), indent=2) + "\n")
    return EXIT_OK


def run_loopback(spec: ScenarioSpec) -> tuple[RunLog, RunLog]:
    """Both nodes in threads of this process, joined by the impaired channel."""
    a, b = impaired_channel(spec.impairment)
    links = {0: a, 1: b}
    logs: dict[int, RunLog] = {}
    errors: dict[int, BaseException] = {}

    def worker(node_id):
        try:
            logs[node_id] = run_node(spec.node_config(node_id), links[node_id])
        except BaseException as e:
            errors[node_id] = e
        finally:
            links[node_id].close()

    threads = [threading.Thread(target=worker, args=(i,), name=f"node{i}") for i in (0, 1)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[min(errors)]
    return logs[0], logs[1]


def cmd_loopback(spec: ScenarioSpec, out_dir) -> int:
    out = Path(out_dir)
    lg0, lg1 = run_loopback(spec)
    _write_run(lg0, out, "node0_")
    _write_run(lg1, out, "node1_")
    export_csv(merge_trajectories([lg0, lg1]), "trajectories", out / "trajectories.csv")
    report = {"scenario": spec.name, "nodes": [_report(lg0), _report(lg1)]}
    (out / "delay_report.json").write_text(json.dumps(report, indent=2) + "\n")
    for r in report["nodes"]:
        d = r.get("delay")
        if d:
            log.info("node %d: mean delay %.4f s over %d frames, %d gaps",
                     r["node_id"], d["mean"], d["count"], len(r["loss"]["gaps"]))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="swarmlink", description="Distributed leader-follower swarm simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and check a scenario file")
    p.add_argument("scenario")

    p = sub.add_parser("monolithic", help="run every agent in one process")
    p.add_argument("scenario")
    p.add_argument("--out", required=True)

    p = sub.add_parser("node", help="run one testbed node over TCP")
    p.add_argument("scenario")
    p.add_argument("--role", required=True, choices=[r.value for r in Role])
    p.add_argument("--out", required=True)

    p = sub.add_parser("loopback", help="run both nodes in-process over the emulated link")
    p.add_argument("scenario")
    p.add_argument("--out", required=True)

    sub.add_parser("list", help="list packaged scenarios")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list":
        print("\n".join(packaged_scenarios()))
        return EXIT_OK
    try:
        spec = parse_scenario(args.scenario)
        if args.command == "validate":
            return cmd_validate(spec, args)
        if args.command == "monolithic":
            return cmd_monolithic(spec, args.out)
        if args.command == "node":
            return cmd_node(spec, Role(args.role), args.out)
        return cmd_loopback(spec, args.out)
    except Exception as e:
        code = _exit_code(e)
        print(f"swarmlink: error: {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
