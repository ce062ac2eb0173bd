"""Command-line front end.

Subcommands: run (single simulation), batch (Monte Carlo over strategies),
analyze (recompute metrics and plots from stored run artifacts), graph
(dump the navigation graph as CSV).

Exit codes: 0 success, 1 usage error, 2 scenario validation error,
3 runtime failure. Errors print one line on stderr in the form
``evacsim: <category>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from typing import Dict, List, Optional

import numpy as np

from .batch import BatchPlan, run_batch
from .errors import EvacsimError, GraphError, ScenarioError, SpawnError
from .metrics import RunMetrics, total_jam_size
from .operational import major_axis, minor_axis
from .routing import STRATEGIES
from .scenario_io import load_scenario
from .simulation import EVENT_HEADER, Simulation
from . import svgplot

log = logging.getLogger("evacsim")

OUT_ROOT_ENV = "EVACSIM_OUT"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the contract wants 1, so re-route
    def error(self, message):
        raise _UsageError(message)


def _fail(category: str, message: str) -> None:
    sys.stderr.write("evacsim: %s: %s\n" % (category, str(message).replace("\n", " ")))


def _out_root() -> str:
    return os.environ.get(OUT_ROOT_ENV, "out")


def _resolve_scenario(name: str) -> str:
    if os.path.exists(name):
        return name
    base = name if name.endswith(".scn") else name + ".scn"
    pkg = resources.files("evacsim").joinpath("scenarios", base)
    if pkg.is_file():
        return str(pkg)
    return name  # let load_scenario produce the error


def _scenario_tag(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _prepare_dir(path: str, force: bool) -> None:
    if os.path.isdir(path) and os.listdir(path):
        if not force:
            raise _UsageError(
                "output directory %s is not empty (use --force to overwrite)" % path)
    os.makedirs(path, exist_ok=True)


def _overrides(ns) -> Dict:
    return {
        "dt": ns.dt,
        "max_time": ns.max_time,
        "sample_interval": ns.sample_interval,
    }


def _check_strategy(name: str) -> str:
    s = name.strip().upper()
    if s not in STRATEGIES:
        raise _UsageError("unknown strategy %r (choose from %s)" % (name, ",".join(STRATEGIES)))
    return s


def _fmt_cell(x) -> str:
    if isinstance(x, float):
        return repr(float(x))
    if x == "" or x is None:
        return ""
    return str(x)


def _write_events(path: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(EVENT_HEADER + "\n")
        for row in rows:
            t = row[0]
            cells = [repr(float(t))] + [_fmt_cell(c) for c in row[1:]]
            fh.write(",".join(cells) + "\n")


def _write_jam_series(path: str, m: RunMetrics) -> None:
    exits = sorted(m.series_per_exit)
    header = "t,overall," + ",".join("exit_%d" % e for e in exits)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for j, t in enumerate(m.series_t):
            vals = [repr(float(t)), repr(float(m.series_overall[j]))]
            vals += [repr(float(m.series_per_exit[e][j])) for e in exits]
            fh.write(",".join(vals) + "\n")


def _metrics_json(sim: Simulation, m: RunMetrics) -> Dict:
    return {
        "strategy": m.strategy,
        "seed": m.seed,
        "n_agents": m.n_agents,
        "evac_time": m.evac_time,
        "complete": m.complete,
        "exit_counts": {str(k): int(v) for k, v in sorted(m.exit_counts.items())},
        "n_switches": m.n_switches,
        "total_jam_overall": m.total_jam_overall(),
        "total_jam_per_exit": {str(k): v for k, v in sorted(m.total_jam_per_exit().items())},
        "jam_time_sum": float(np.sum(m.jam_times)) if len(m.jam_times) else 0.0,
        "exit_nodes": sorted(int(e) for e in m.series_per_exit),
        "params": {
            "dt": sim.dt,
            "sample_interval": sim.sc.run.sample_interval,
            "max_time": sim.sc.run.max_time,
            "a_min": sim.op.a_min,
            "tau_a": sim.op.tau_a,
            "b_min": sim.op.b_min,
            "b_max": sim.op.b_max,
        },
    }


def _write_run_artifacts(out_dir: str, sim: Simulation, m: RunMetrics) -> None:
    _write_events(os.path.join(out_dir, "events.csv"), sim.events_rows)
    with open(os.path.join(out_dir, "agents.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,v0,strategy,familiar\n")
        for i in range(sim.n):
            rs = sim.rstate[i]
            fh.write("%d,%s,%s,%d\n" % (i, repr(float(sim.v0[i])), rs.strategy, int(rs.familiar)))
    with open(os.path.join(out_dir, "jam_times.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("agent_id,jam_time\n")
        for i, jt in enumerate(m.jam_times):
            fh.write("%d,%s\n" % (i, repr(float(jt))))
    _write_jam_series(os.path.join(out_dir, "jam_series.csv"), m)
    with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(_metrics_json(sim, m), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _dump_graph(out_dir: str, g) -> None:
    kinds = {0: "door", 1: "exit", 2: "waypoint"}
    with open(os.path.join(out_dir, "nodes.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,kind,x,y,room_a,room_b,open,dist_sink\n")
        for i in range(g.n_nodes):
            fh.write("%d,%s,%s,%s,%d,%d,%d,%s\n" % (
                i, kinds[int(g.kinds[i])],
                repr(float(g.anchors[i, 0])), repr(float(g.anchors[i, 1])),
                g.node_rooms[i, 0], g.node_rooms[i, 1], int(g.open_mask[i]),
                repr(float(g.dist_sink[i]))))
    with open(os.path.join(out_dir, "edges.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("i,j,weight\n")
        for i in range(g.n_nodes):
            for j in range(g.n_nodes):
                if i != j and np.isfinite(g.W[i, j]):
                    fh.write("%d,%d,%s\n" % (i, j, repr(float(g.W[i, j]))))
    with open(os.path.join(out_dir, "dist.csv"), "w", encoding="utf-8", newline="\n") as fh:
        n = g.D.shape[0]
        fh.write(",".join("n%d" % j for j in range(n)) + "\n")
        for i in range(n):
            fh.write(",".join(repr(float(g.D[i, j])) for j in range(n)) + "\n")


def _plot_run(out_dir: str, m: RunMetrics) -> None:
    series = {"overall": (m.series_t, m.series_overall)}
    for e in sorted(m.series_per_exit):
        series["exit_%d" % e] = (m.series_t, m.series_per_exit[e])
    svg = svgplot.lines_svg("jam size evolution", "t [s]", "jam size [m^2]", series)
    with open(os.path.join(out_dir, "jam_series.svg"), "w", encoding="utf-8") as fh:
        fh.write(svg)


def _plot_batch(out_dir: str, by_strategy) -> None:
    from .metrics import aggregate

    for metric, xlabel in (("evac_time", "evacuation time [s]"),
                           ("jam_time", "individual jam time [s]"),
                           ("total_jam_size", "average jam size [m^2]")):
        series = {}
        for strategy, runs in by_strategy.items():
            ok = [r for r in runs if not r.failed]
            if not ok:
                continue
            h = aggregate(ok)[metric].histogram
            series[strategy] = (h.edges, h.counts)
        if series:
            svg = svgplot.histogram_svg(metric, xlabel, series)
            with open(os.path.join(out_dir, "hist_%s.svg" % metric), "w",
                      encoding="utf-8") as fh:
                fh.write(svg)
    lines = {}
    for strategy, runs in by_strategy.items():
        ok = [r for r in runs if not r.failed and len(r.series_t)]
        if ok:
            lines[strategy] = (ok[0].series_t, ok[0].series_overall)
    if lines:
        svg = svgplot.lines_svg("jam size evolution (first run)", "t [s]",
                                "jam size [m^2]", lines)
        with open(os.path.join(out_dir, "jam_series.svg"), "w", encoding="utf-8") as fh:
            fh.write(svg)


def cmd_run(ns) -> int:
    path = _resolve_scenario(ns.scenario)
    strategy = _check_strategy(ns.strategy) if ns.strategy else None
    sc = load_scenario(path, overrides=_overrides(ns))
    out_dir = ns.out or os.path.join(
        _out_root(), "run_%s_%s_seed%s" % (
            _scenario_tag(path), strategy or "mixed", ns.seed if ns.seed is not None else sc.run.seed))
    _prepare_dir(out_dir, ns.force)
    traj_path = os.path.join(out_dir, "trajectories.csv")
    with open(traj_path, "w", encoding="utf-8", newline="\n") as traj:
        sim = Simulation(sc, strategy=strategy, seed=ns.seed,
                         collect_trajectories=True, traj_file=traj)
        if ns.dump_graph:
            _dump_graph(out_dir, sim.graph)
        m = sim.run()
    _write_run_artifacts(out_dir, sim, m)
    if ns.plots:
        _plot_run(out_dir, m)
    print("run %s strategy=%s seed=%d agents=%d evac_time=%.2f complete=%s "
          "switches=%d out=%s" % (_scenario_tag(path), m.strategy, m.seed,
                                  m.n_agents, m.evac_time, m.complete,
                                  m.n_switches, out_dir))
    return 0


def cmd_batch(ns) -> int:
    path = _resolve_scenario(ns.scenario)
    strategies = [_check_strategy(s) for s in ns.strategies.split(",") if s.strip()]
    if not strategies:
        raise _UsageError("--strategies needs at least one strategy")
    sc = load_scenario(path, overrides=_overrides(ns))
    runs = ns.runs if ns.runs is not None else sc.run.runs
    base_seed = ns.seed if ns.seed is not None else sc.run.seed
    out_dir = ns.out or os.path.join(_out_root(), "batch_%s" % _scenario_tag(path))
    _prepare_dir(out_dir, ns.force)
    plan = BatchPlan(scenario_path=path, strategies=strategies, runs=runs,
                     base_seed=base_seed, out_dir=out_dir, overrides=_overrides(ns))

    def progress(done, total, strategy, seed):
        log.info("run %d/%d (%s seed=%d)", done, total, strategy, seed)

    by_strategy = run_batch(plan, progress=progress)
    if ns.plots:
        _plot_batch(out_dir, by_strategy)
    for strategy in strategies:
        ok = [r for r in by_strategy[strategy] if not r.failed]
        done = [r for r in ok if r.complete]
        times = [r.evac_time for r in done]
        mean = sum(times) / len(times) if times else float("nan")
        print("batch %s strategy=%s runs=%d complete=%d mean_evac=%.2f out=%s"
              % (_scenario_tag(path), strategy, len(by_strategy[strategy]),
                 len(done), mean, out_dir))
    return 0


def _replay_series(run_dir: str, meta: Dict) -> Dict:
    """Recompute the jam-size series and totals from stored trajectories."""
    p = meta["params"]
    a_min, tau_a = p["a_min"], p["tau_a"]
    b_min, b_max = p["b_min"], p["b_max"]
    v0 = {}
    with open(os.path.join(run_dir, "agents.csv"), encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            cells = line.rstrip("\n").split(",")
            v0[int(cells[0])] = float(cells[1])
    exit_nodes = [int(e) for e in meta["exit_nodes"]]

    ts: List[float] = []
    overall: List[float] = []
    per_exit: Dict[int, List[float]] = {e: [] for e in exit_nodes}
    cur_t: Optional[str] = None

    def close_sample():
        ts.append(float(cur_t))
        overall.append(acc[0])
        for e in exit_nodes:
            per_exit[e].append(acc_exit[e])

    with open(os.path.join(run_dir, "trajectories.csv"), encoding="utf-8") as fh:
        next(fh)
        acc = [0.0]
        acc_exit = {e: 0.0 for e in exit_nodes}
        for line in fh:
            cells = line.rstrip("\n").split(",")
            if cells[0] != cur_t:
                if cur_t is not None:
                    close_sample()
                cur_t = cells[0]
                acc = [0.0]
                acc_exit = {e: 0.0 for e in exit_nodes}
            if cells[8] != "1":
                continue
            spd = float(np.hypot(float(cells[4]), float(cells[5])))
            a = major_axis(a_min, tau_a, spd)
            b = minor_axis(b_min, b_max, spd, v0[int(cells[1])])
            area = np.pi * a * b
            acc[0] += area
            d = int(cells[7])
            if d in acc_exit:
                acc_exit[d] += area
        if cur_t is not None:
            close_sample()

    n_evac = 0
    t_last = 0.0
    with open(os.path.join(run_dir, "events.csv"), encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            cells = line.split(",")
            if cells[2] == "EVACUATED":
                n_evac += 1
                t_last = max(t_last, float(cells[0]))
    complete = n_evac == meta["n_agents"]
    evac_time = t_last if complete else p["max_time"]

    t_arr = np.array(ts)
    return {
        "evac_time": evac_time,
        "complete": complete,
        "total_jam_overall": total_jam_size(t_arr, np.array(overall)),
        "total_jam_per_exit": {str(e): total_jam_size(t_arr, np.array(per_exit[e]))
                               for e in exit_nodes},
        "series": (ts, overall, per_exit),
    }


def cmd_analyze(ns) -> int:
    run_dir = ns.out
    if not run_dir or not os.path.isdir(run_dir):
        raise _UsageError("analyze needs --out pointing at a run output directory")
    with open(os.path.join(run_dir, "metrics.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    res = _replay_series(run_dir, meta)
    ts, overall, per_exit = res.pop("series")
    exits = sorted(per_exit)
    with open(os.path.join(run_dir, "jam_series_recomputed.csv"), "w",
              encoding="utf-8", newline="\n") as fh:
        fh.write("t,overall," + ",".join("exit_%d" % e for e in exits) + "\n")
        for j, t in enumerate(ts):
            vals = [repr(float(t)), repr(float(overall[j]))]
            vals += [repr(float(per_exit[e][j])) for e in exits]
            fh.write(",".join(vals) + "\n")
    with open(os.path.join(run_dir, "analysis.json"), "w", encoding="utf-8") as fh:
        json.dump(res, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if ns.plots:
        series = {"overall": (ts, overall)}
        for e in exits:
            series["exit_%d" % e] = (ts, per_exit[e])
        svg = svgplot.lines_svg("jam size evolution (recomputed)", "t [s]",
                                "jam size [m^2]", series)
        with open(os.path.join(run_dir, "jam_series_recomputed.svg"), "w",
                  encoding="utf-8") as fh:
            fh.write(svg)
    match = (res["evac_time"] == meta["evac_time"]
             and res["complete"] == meta["complete"]
             and res["total_jam_overall"] == meta["total_jam_overall"]
             and res["total_jam_per_exit"] == meta["total_jam_per_exit"])
    print("analyze %s evac_time=%s total_jam=%s matches_original=%s"
          % (run_dir, repr(res["evac_time"]), repr(res["total_jam_overall"]), match))
    return 0


def cmd_graph(ns) -> int:
    path = _resolve_scenario(ns.scenario)
    sc = load_scenario(path)
    sim = Simulation(sc, strategy="LSP", seed=sc.run.seed)
    out_dir = ns.out or os.path.join(_out_root(), "graph_%s" % _scenario_tag(path))
    _prepare_dir(out_dir, ns.force)
    _dump_graph(out_dir, sim.graph)
    g = sim.graph
    n_edges = int(np.isfinite(g.W[~np.eye(g.n_nodes, dtype=bool)]).sum())
    print("graph %s nodes=%d edges=%d exits=%d out=%s"
          % (_scenario_tag(path), g.n_nodes, n_edges,
             int((g.kinds == 1).sum()), out_dir))
    return 0


def _add_common(sub, scenario_required: bool = True) -> None:
    sub.add_argument("--scenario", required=scenario_required,
                     help="scenario file path or packaged scenario name")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--force", action="store_true",
                     help="allow writing into a non-empty output directory")


def _add_run_config(sub) -> None:
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--dt", type=float, default=None)
    sub.add_argument("--max-time", type=float, default=None, dest="max_time")
    sub.add_argument("--sample-interval", type=float, default=None, dest="sample_interval")
    sub.add_argument("--plots", action="store_true", help="write SVG plots")


def build_parser() -> _Parser:
    parser = _Parser(prog="evacsim", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    subs = parser.add_subparsers(dest="cmd")

    p_run = subs.add_parser("run", help="single simulation run")
    _add_common(p_run)
    _add_run_config(p_run)
    p_run.add_argument("--strategy", default=None, help="override strategy for all agents")
    p_run.add_argument("--dump-graph", action="store_true", dest="dump_graph",
                       help="also write navgraph CSVs")

    p_batch = subs.add_parser("batch", help="Monte Carlo batch")
    _add_common(p_batch)
    _add_run_config(p_batch)
    p_batch.add_argument("--strategies", default="LSP,GSP,LSQ,GSQ",
                         help="comma-separated strategy list")
    p_batch.add_argument("--runs", type=int, default=None)

    p_an = subs.add_parser("analyze", help="recompute metrics from stored artifacts")
    p_an.add_argument("--out", required=True, help="run output directory")
    p_an.add_argument("--plots", action="store_true")

    p_g = subs.add_parser("graph", help="dump navigation graph")
    _add_common(p_g)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.cmd is None:
            raise _UsageError("a subcommand is required (run, batch, analyze, graph)")
        logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        if ns.cmd == "run":
            return cmd_run(ns)
        if ns.cmd == "batch":
            return cmd_batch(ns)
        if ns.cmd == "analyze":
            return cmd_analyze(ns)
        return cmd_graph(ns)
    except _UsageError as e:
        _fail("usage-error", str(e))
        return 1
    except (ScenarioError, SpawnError, GraphError) as e:
        _fail("scenario-error", str(e))
        return 2
    except (EvacsimError, OSError) as e:
        _fail("runtime-error", str(e))
        return 3


def entrypoint() -> None:
    sys.exit(main())
