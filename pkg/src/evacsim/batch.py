"""Monte Carlo batch driver.

Runs independent replications of a scenario for one or more route-choice
strategies, each with its own seed, and reduces the per-run metrics into
distribution summaries and CSV/JSON artifacts on disk.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

from .errors import EvacsimError
from .metrics import RunMetrics, aggregate
from .scenario_io import load_scenario
from .simulation import Simulation

JAM_BIN_WIDTH = 5.0


@dataclass
class BatchPlan:
    """Everything needed to reproduce a batch."""

    scenario_path: str
    strategies: List[str]
    runs: int
    base_seed: int
    out_dir: str
    overrides: Dict = field(default_factory=dict)
    worker_limit: int = 1
    collect_trajectories: bool = False

    def seed_for(self, run_index: int) -> int:
        # paired across strategies: run k uses the same seed for every strategy
        return self.base_seed + run_index

    def labels(self):
        for strategy in self.strategies:
            for k in range(self.runs):
                yield strategy, k


def _execute_one(scenario_path: str, overrides: Dict, strategy: str, seed: int) -> RunMetrics:
    sc = load_scenario(scenario_path, overrides=overrides)
    sim = Simulation(sc, strategy=strategy, seed=seed)
    return sim.run()


def _worker(args) -> RunMetrics:
    scenario_path, overrides, strategy, seed = args
    try:
        return _execute_one(scenario_path, overrides, strategy, seed)
    except EvacsimError as exc:
        m = RunMetrics(strategy=strategy, seed=seed, n_agents=0, evac_time=0.0,
                       complete=False, jam_times=[], series_t=[], series_per_exit={},
                       series_overall=[], exit_counts={}, n_switches=0,
                       failed=f"{type(exc).__name__}: {exc}")
        return m


def run_batch(plan: BatchPlan, progress=None) -> Dict[str, List[RunMetrics]]:
    """Execute the plan and write all artifacts under plan.out_dir.

    Returns the per-strategy lists of RunMetrics in run order.  Failed runs
    carry a non-empty .failed string and are excluded from the aggregates but
    recorded in the manifest.  Results do not depend on worker_limit.
    """
    os.makedirs(plan.out_dir, exist_ok=True)
    jobs = [(plan.scenario_path, plan.overrides, strategy, plan.seed_for(k))
            for strategy, k in plan.labels()]
    if plan.worker_limit > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=plan.worker_limit) as pool:
            results = list(pool.map(_worker, jobs))
    else:
        results = []
        for idx, job in enumerate(jobs):
            results.append(_worker(job))
            if progress is not None:
                progress(idx + 1, len(jobs), job[2], job[3])

    by_strategy: Dict[str, List[RunMetrics]] = {s: [] for s in plan.strategies}
    for (strategy, _k), m in zip(plan.labels(), results):
        by_strategy[strategy].append(m)

    write_artifacts(plan, by_strategy)
    return by_strategy


def write_artifacts(plan: BatchPlan, by_strategy: Dict[str, List[RunMetrics]]) -> None:
    _write_manifest(plan, by_strategy)
    _write_raw_csvs(plan.out_dir, by_strategy)
    _write_aggregates(plan.out_dir, by_strategy)


def _write_manifest(plan: BatchPlan, by_strategy: Dict[str, List[RunMetrics]]) -> None:
    runs = []
    for strategy in plan.strategies:
        for k, m in enumerate(by_strategy[strategy]):
            entry = {
                "strategy": strategy,
                "run": k,
                "seed": m.seed,
                "status": "failed" if m.failed else ("complete" if m.complete else "cutoff"),
            }
            if m.failed:
                entry["error"] = m.failed
            else:
                entry["evac_time"] = m.evac_time
                entry["n_switches"] = m.n_switches
            runs.append(entry)
    manifest = {
        "scenario": os.path.abspath(plan.scenario_path),
        "strategies": plan.strategies,
        "runs_per_strategy": plan.runs,
        "base_seed": plan.base_seed,
        "overrides": plan.overrides,
        "results": runs,
    }
    path = os.path.join(plan.out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _ok(runs: List[RunMetrics]) -> List[RunMetrics]:
    return [m for m in runs if not m.failed]


def _write_raw_csvs(out_dir: str, by_strategy: Dict[str, List[RunMetrics]]) -> None:
    rows = ["strategy,run,seed,complete,evac_time,n_switches,total_jam_size"]
    for strategy, runs in by_strategy.items():
        for k, m in enumerate(runs):
            if m.failed:
                continue
            rows.append("%s,%d,%d,%d,%s,%d,%s" % (
                strategy, k, m.seed, int(m.complete), repr(m.evac_time),
                m.n_switches, repr(m.total_jam_overall())))
    _dump(os.path.join(out_dir, "evac_times.csv"), rows)

    rows = ["strategy,run,seed,agent_id,jam_time"]
    for strategy, runs in by_strategy.items():
        for k, m in enumerate(runs):
            if m.failed:
                continue
            for i, jt in enumerate(m.jam_times):
                rows.append("%s,%d,%d,%d,%s" % (strategy, k, m.seed, i, repr(float(jt))))
    _dump(os.path.join(out_dir, "jam_times.csv"), rows)

    for strategy, runs in by_strategy.items():
        for k, m in enumerate(runs):
            if m.failed:
                continue
            header = "t,overall," + ",".join("exit_%d" % e for e in sorted(m.series_per_exit))
            rows = [header]
            exits = sorted(m.series_per_exit)
            for j, t in enumerate(m.series_t):
                vals = [repr(float(t)), repr(float(m.series_overall[j]))]
                vals += [repr(float(m.series_per_exit[e][j])) for e in exits]
                rows.append(",".join(vals))
            _dump(os.path.join(out_dir, "jam_series_%s_run%03d.csv" % (strategy, k)), rows)


def _write_aggregates(out_dir: str, by_strategy: Dict[str, List[RunMetrics]]) -> None:
    rows = ["strategy,metric,count,mean,std,min,max"]
    agg_all: Dict[str, Dict] = {}
    for strategy, runs in by_strategy.items():
        ok = _ok(runs)
        if not ok:
            continue
        agg = aggregate(ok, bin_width=JAM_BIN_WIDTH)
        agg_all[strategy] = agg
        for metric, summary in agg.items():
            rows.append("%s,%s,%d,%s,%s,%s,%s" % (
                strategy, metric, summary.n, repr(summary.mean),
                repr(summary.std), repr(summary.lo), repr(summary.hi)))
    _dump(os.path.join(out_dir, "summary.csv"), rows)

    # histogram bins, one file per metric
    for metric in ("evac_time", "jam_time", "total_jam_size"):
        rows = ["strategy,bin_left,bin_right,count"]
        for strategy, agg in agg_all.items():
            summary = agg.get(metric)
            if summary is None or summary.histogram is None:
                continue
            h = summary.histogram
            for b in range(len(h.counts)):
                rows.append("%s,%s,%s,%d" % (
                    strategy, repr(h.edges[b]), repr(h.edges[b + 1]), h.counts[b]))
        _dump(os.path.join(out_dir, "hist_%s.csv" % metric), rows)


def _dump(path: str, rows: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(rows))
        fh.write("\n")
