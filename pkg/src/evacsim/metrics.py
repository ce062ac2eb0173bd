"""Criticality metrics: evacuation time, individual jam time, jam-size evolution.

Jam accounting is tick-accurate: an agent enters jam status once its speed has
stayed at or below v_min for the qualification window (default 10 s), and the
whole window is credited retroactively. The jam-size series samples, at a
fixed cadence, the summed ellipse areas of in-jam agents grouped by their
current destination node.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .errors import DegenerateSeries
from .operational import OpParams, major_axis, minor_axis


class JamAccumulator:
    """Reference per-tick jam-time accounting over speed samples.

    The simulation kernel carries the same integer logic inline; this class is
    the plain implementation used by the trajectory analyzer and by tests.
    """

    def __init__(self, n: int, qualify_ticks: int):
        self.qualify = qualify_ticks
        self.below = np.zeros(n, dtype=np.int64)
        self.in_jam = np.zeros(n, dtype=bool)
        self.jam_ticks = np.zeros(n, dtype=np.int64)

    def update(self, slow: np.ndarray, active: np.ndarray) -> None:
        """Advance one tick. slow = speed <= v_min; inactive agents freeze."""
        act = active.astype(bool)
        s = slow.astype(bool) & act
        self.below = np.where(s, self.below + 1, 0)
        qualified = s & ~self.in_jam & (self.below == self.qualify)
        self.jam_ticks += np.where(qualified, self.qualify, 0)
        self.jam_ticks += np.where(s & self.in_jam, 1, 0)
        self.in_jam = (self.in_jam | qualified) & s

    def jam_times(self, dt: float) -> np.ndarray:
        return self.jam_ticks * dt


def sample_jam_size(
    in_jam: np.ndarray,
    dest: np.ndarray,
    speed: np.ndarray,
    v0: np.ndarray,
    active: np.ndarray,
    exit_nodes: np.ndarray,
    p: OpParams,
) -> Tuple[Dict[int, float], float]:
    """Summed ellipse areas of in-jam agents per exit node, plus overall.

    Attribution follows the jamming-queue semantics: an agent's area counts
    toward the exit it currently targets. The overall figure covers in-jam
    agents regardless of destination kind.
    """
    mask = (in_jam == 1) & (active == 1)
    idx = np.where(mask)[0]
    per_exit = {int(e): 0.0 for e in exit_nodes}
    overall = 0.0
    for i in idx:
        a = major_axis(p.a_min, p.tau_a, float(speed[i]))
        b = minor_axis(p.b_min, p.b_max, float(speed[i]), float(v0[i]))
        area = np.pi * a * b
        overall += area
        d = int(dest[i])
        if d in per_exit:
            per_exit[d] += area
    return per_exit, overall


def total_jam_size(t: np.ndarray, area: np.ndarray) -> float:
    """Time-averaged area under the jam-size evolution curve."""
    if len(t) < 2:
        raise DegenerateSeries(f"need at least 2 samples, got {len(t)}")
    span = float(t[-1] - t[0])
    if span <= 0.0:
        raise DegenerateSeries("series spans zero duration")
    return float(np.trapezoid(area, t)) / span


@dataclass
class RunMetrics:
    strategy: str
    seed: int
    n_agents: int
    evac_time: float                       # s; time of last evacuation
    complete: bool                         # everyone out before the cutoff
    jam_times: np.ndarray                  # per agent, s
    series_t: np.ndarray                   # sample times, s
    series_per_exit: Dict[int, np.ndarray]  # exit node -> areas, m^2
    series_overall: np.ndarray
    exit_counts: Dict[int, int]
    n_switches: int
    failed: str = ""                       # error description for failed runs

    def total_jam_per_exit(self) -> Dict[int, float]:
        return {e: total_jam_size(self.series_t, a) for e, a in self.series_per_exit.items()}

    def total_jam_overall(self) -> float:
        return total_jam_size(self.series_t, self.series_overall)


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray


@dataclass
class Summary:
    n: int
    mean: float
    std: float
    lo: float
    hi: float
    histogram: Histogram


def summarize(values: np.ndarray, bin_width: float) -> Summary:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return Summary(0, float("nan"), float("nan"), float("nan"), float("nan"),
                       Histogram(np.array([0.0, bin_width]), np.array([0])))
    lo = float(values.min())
    hi = float(values.max())
    first = np.floor(lo / bin_width) * bin_width
    nbins = max(1, int(np.ceil((hi - first) / bin_width + 1e-12)))
    edges = first + bin_width * np.arange(nbins + 1)
    counts, _ = np.histogram(values, bins=edges)
    return Summary(int(values.size), float(values.mean()), float(values.std()),
                   lo, hi, Histogram(edges, counts))


def aggregate(runs: List[RunMetrics], bin_width: float = 5.0) -> Dict[str, Summary]:
    """Distribution summaries over completed runs (jam stats pool all runs)."""
    if not runs:
        raise ValueError("aggregate needs at least one run")
    evac = np.array([r.evac_time for r in runs if r.complete])
    jam = np.concatenate([r.jam_times for r in runs]) if runs else np.array([])
    totals = np.array([r.total_jam_overall() for r in runs if len(r.series_t) >= 2])
    return {
        "evac_time": summarize(evac, bin_width),
        "jam_time": summarize(jam, bin_width),
        "total_jam_size": summarize(totals, bin_width),
    }
