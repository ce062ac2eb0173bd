"""Single-run simulation engine.

The physics kernel advances in chunks and returns whenever something the
strategic layer cares about happened: a door or exit was crossed, a watched
node came within arrival range, or an agent's patience ran out inside a jam.
The engine consumes those events, runs decision episodes (observations plus
the cost-benefit switch), applies disturbances, samples the jam-size series,
and emits trajectory/event rows.

Destination updates within one event batch are applied at a barrier: all
decisions of a tick read the same frozen destination snapshot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, TextIO, Tuple

import numpy as np

from . import operational as op
from . import routing as rt
from .errors import GraphError, NumericalBlowup
from .metrics import RunMetrics, sample_jam_size
from .navgraph import KIND_EXIT, KIND_POINT, NavGraph, build_graph, validate_reachability
from .scenario_io import Disturbance, Scenario, derive_walls, spawn_population

BIG_TICKS = 1 << 62

EVENT_HEADER = "t,agent_id,event_type,old_dest,new_dest,g_cur,g_alt,cba_value"
TRAJ_HEADER = "t,id,x,y,vx,vy,room,dest,jam"


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass
class _View:
    """Frozen world snapshot handed to the routing functions.

    speed is the raw per-tick reading (feeds the ellipse shapes), sspeed the
    smoothed one every speed-threshold predicate runs on.
    """
    pos: np.ndarray
    speed: np.ndarray
    sspeed: np.ndarray
    theta: np.ndarray
    v0: np.ndarray
    active: np.ndarray
    dest: np.ndarray
    room: np.ndarray
    wall_off: np.ndarray
    walls: np.ndarray
    params: op.OpParams


class Simulation:
    def __init__(
        self,
        sc: Scenario,
        strategy: Optional[str] = None,
        seed: Optional[int] = None,
        collect_trajectories: bool = False,
        traj_file: Optional[TextIO] = None,
    ):
        self.sc = sc
        self.rp = sc.routing
        self.op = sc.operational
        self.dt = sc.run.dt
        self.max_ticks = int(round(sc.run.max_time / self.dt))
        self.sample_every = max(1, int(round(sc.run.sample_interval / self.dt)))
        self.seed = sc.run.seed if seed is None else int(seed)
        self.strategy_override = strategy
        self.traj_file = traj_file
        self.collect_traj = collect_trajectories or traj_file is not None

        ss = lambda *key: np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=key))
        pos, v0, strategies, familiar = spawn_population(sc, ss(0), ss(1))
        if strategy is not None:
            strategies = [strategy] * len(strategies)
            familiar = np.array([rt.is_global(strategy)] * len(strategies), dtype=bool)
        self.strategies = strategies
        self.noise_seed = np.uint64(ss(3).integers(0, 2**63, dtype=np.int64))
        bias_rng = ss(4)

        n = len(strategies)
        self.n = n
        self.pos = pos.astype(np.float64)
        self.vel = np.zeros((n, 2))
        self.speed = np.zeros(n)
        self.sspeed = np.zeros(n)
        self.theta = np.zeros(n)
        self.v0 = v0.astype(np.float64)
        self.bias = np.where(bias_rng.random(n) < 0.5, -1.0, 1.0) * bias_rng.uniform(0.5, 1.0, n)
        self.active = np.ones(n, dtype=np.uint8)
        self.room = np.zeros(n, dtype=np.int64)
        k = 0
        for g in sc.groups:
            self.room[k : k + g.count] = g.room
            k += g.count
        self.dest = np.zeros(n, dtype=np.int64)
        self.below_route = np.zeros(n, dtype=np.int64)
        self.tmin_ticks = np.full(n, BIG_TICKS, dtype=np.int64)
        self.below_jam = np.zeros(n, dtype=np.int64)
        self.injam = np.zeros(n, dtype=np.uint8)
        self.jam_ticks = np.zeros(n, dtype=np.int64)
        self.cumspeed = np.zeros(n)
        self.ev = np.zeros(n, dtype=np.uint8)
        self.crossed_node = np.full(n, -1, dtype=np.int64)
        self.evac_tick = np.full(n, -1, dtype=np.int64)
        self.watch_arrive = np.zeros(n, dtype=np.uint8)
        self.npx = np.zeros(n)
        self.npy = np.zeros(n)
        self.nclose = np.zeros(n, dtype=np.int64)

        self.rstate = [
            rt.RoutingState(strategies[i], bool(familiar[i]), self.rp.t_min0) for i in range(n)
        ]
        self._agent_rng: Dict[int, np.random.Generator] = {}

        # graph and derived geometry; disturbances scheduled by tick
        self.closed: List[int] = []
        self.pending_dist: List[Tuple[int, Disturbance]] = sorted(
            ((int(round(d.time / self.dt)), d) for d in sc.disturbances), key=lambda x: (x[0], x[1].exit_id)
        )
        self._apply_due_disturbances(0, initial=True)
        self.graph = self._build_graph()
        validate_reachability(self.graph)
        self._rebuild_geometry()

        x0, y0, x1, y1 = sc.facility.bbox()
        self.gx0, self.gy0 = x0 - 1.0, y0 - 1.0
        self.ginv = 1.0
        self.gnx = int(math.ceil(x1 - x0)) + 2
        self.gny = int(math.ceil(y1 - y0)) + 2
        ncell = self.gnx * self.gny
        self.cell_cnt = np.zeros(ncell, dtype=np.int64)
        self.cell_start = np.zeros(ncell + 1, dtype=np.int64)
        self.cell_items = np.zeros(max(n, 1), dtype=np.int64)

        self.tick = 0
        self.events_rows: List[tuple] = []
        self.exit_counts: Dict[int, int] = {}
        self.n_switches = 0
        self.series_t: List[float] = []
        self.series_exit: Dict[int, List[float]] = {
            int(nd): [] for nd in np.where(self.graph.kinds == KIND_EXIT)[0]
        }
        self.series_all: List[float] = []

        # initial destinations, then initial shapes/targets
        self.active_episodes: set = set()
        for i in range(n):
            d = rt.choose_baseline(strategies[i], pos[i, 0], pos[i, 1], int(self.room[i]), self.graph)
            if d < 0:
                raise GraphError(f"agent {i}: no reachable node from room {self.room[i]}")
            self.dest[i] = d
            tx, ty = self._target_point(i)
            self.theta[i] = math.atan2(ty - pos[i, 1], tx - pos[i, 0])
            self._arm_patience(i)
        self._refresh_watch()
        self._sample(0.0)
        if self.collect_traj:
            self._write_traj_header()
            self._traj_rows(0.0)

    # ---------- setup helpers ----------

    def _build_graph(self) -> NavGraph:
        f = self.sc.facility
        return build_graph(
            f.door_segs, f.door_rooms, f.exit_segs, f.exit_rooms,
            f.waypoints, f.waypoint_rooms, f.n_rooms,
            closed_exits=np.array(self.closed, dtype=np.int64),
        )

    def _rebuild_geometry(self) -> None:
        """Wall and crossing CSR arrays for the kernel; closed exits are wall."""
        f = self.sc.facility
        self.wall_off, self.walls = derive_walls(f, self.closed)
        n_door = f.door_segs.shape[0]
        cross_segs: List[np.ndarray] = []
        cross_node: List[int] = []
        cross_other: List[int] = []
        off = [0]
        for r in range(f.n_rooms):
            for i, pair in enumerate(f.door_rooms):
                if r in pair:
                    cross_segs.append(f.door_segs[i])
                    cross_node.append(i)
                    cross_other.append(int(pair[1] if pair[0] == r else pair[0]))
            for i, er in enumerate(f.exit_rooms):
                if er == r and i not in self.closed:
                    cross_segs.append(f.exit_segs[i])
                    cross_node.append(n_door + i)
                    cross_other.append(-1)
            off.append(len(cross_node))
        self.cross_off = np.array(off, dtype=np.int64)
        self.cross_segs = np.array(cross_segs, dtype=float).reshape(-1, 4)
        self.cross_node = np.array(cross_node, dtype=np.int64)
        self.cross_other = np.array(cross_other, dtype=np.int64)

    def _agent_stream(self, i: int) -> np.random.Generator:
        g = self._agent_rng.get(i)
        if g is None:
            g = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(2, i)))
            self._agent_rng[i] = g
        return g

    def _target_point(self, i: int) -> Tuple[float, float]:
        s = self.graph.target_segs[self.dest[i]]
        from .geometry import nearest_point_on_segment

        return nearest_point_on_segment(self.pos[i, 0], self.pos[i, 1], s[0], s[1], s[2], s[3])

    def _refresh_watch(self) -> None:
        kinds = self.graph.kinds[self.dest]
        self.watch_arrive[:] = np.where(
            (kinds == KIND_POINT) & (self.active == 1), 1, 0
        ).astype(np.uint8)

    def _view(self, frozen_dest: np.ndarray) -> _View:
        return _View(
            self.pos, self.speed, self.sspeed, self.theta, self.v0, self.active,
            frozen_dest, self.room, self.wall_off, self.walls, self.op,
        )

    # ---------- main loop ----------

    def run(self) -> RunMetrics:
        while self.active.any():
            if self.tick >= self.max_ticks:
                break
            stop = self.max_ticks
            nxt = self._next_sample_tick()
            stop = min(stop, nxt)
            if self.pending_dist:
                stop = min(stop, self.pending_dist[0][0])
            due = self._next_episode_due()
            stop = min(stop, due)
            if stop <= self.tick:
                stop = self.tick + 1

            new_tick, events = op.advance(
                self.pos, self.vel, self.speed, self.sspeed, self.theta, self.v0, self.bias,
                self.active, self.room, self.dest,
                self.below_route, self.tmin_ticks, self.below_jam, self.injam,
                self.jam_ticks, self.cumspeed,
                self.ev, self.crossed_node, self.evac_tick, self.watch_arrive,
                self.wall_off, self.walls, self.cross_off, self.cross_segs,
                self.cross_node, self.cross_other,
                self.graph.target_segs, self.graph.anchors,
                self.gx0, self.gy0, self.ginv, self.gnx, self.gny,
                self.cell_cnt, self.cell_start, self.cell_items,
                self.npx, self.npy, self.nclose,
                self.op.pack(), self.noise_seed, self.tick, stop,
            )
            self.tick = new_tick
            t = self.tick * self.dt
            if events & op.EV_BLOWUP:
                raise NumericalBlowup(f"non-finite coordinate at t={t:.2f}s (seed {self.seed})")
            if events:
                self._handle_events(t)
            self._service_episodes(t)
            self._apply_due_disturbances(self.tick)
            if self.tick % self.sample_every == 0:
                self._sample(t)
                self._traj_rows(t)

        evacuated = int((self.active == 0).sum())
        complete = evacuated == self.n
        if self.n == 0:
            evac_time, complete = 0.0, True
        elif complete:
            evac_time = float(self.evac_tick.max()) * self.dt
        else:
            evac_time = self.sc.run.max_time
        return RunMetrics(
            strategy=self.strategy_override or "mixed",
            seed=self.seed,
            n_agents=self.n,
            evac_time=evac_time,
            complete=complete,
            jam_times=self.jam_ticks * self.dt,
            series_t=np.array(self.series_t),
            series_per_exit={e: np.array(v) for e, v in self.series_exit.items()},
            series_overall=np.array(self.series_all),
            exit_counts=dict(self.exit_counts),
            n_switches=self.n_switches,
        )

    def _next_sample_tick(self) -> int:
        return ((self.tick // self.sample_every) + 1) * self.sample_every

    def _next_episode_due(self) -> int:
        due = BIG_TICKS
        for i in self.active_episodes:
            ep = self.rstate[i].episode
            if ep is not None:
                due = min(due, ep.due_tick)
        return due

    # ---------- events ----------

    def _handle_events(self, t: float) -> None:
        ids = np.where(self.ev != 0)[0]
        if ids.size == 0:
            return
        # decisions in this batch all read the same frozen destination snapshot
        frozen = self.dest.copy()
        for i in ids:
            i = int(i)
            bits = int(self.ev[i])
            self.ev[i] = 0
            if bits & op.EV_EVAC:
                self._on_evacuated(i, t)
            elif bits & op.EV_ROOM:
                self._on_room_change(i, t, frozen)
            elif bits & op.EV_ARRIVE:
                self._on_waypoint_arrival(i, t, frozen)
            elif bits & op.EV_JAM:
                self._on_jammed(i, t, frozen)
        self._refresh_watch()

    def _clear_episode(self, i: int) -> None:
        self.rstate[i].episode = None
        self.active_episodes.discard(i)

    def _on_evacuated(self, i: int, t: float) -> None:
        node = int(self.crossed_node[i])
        self.exit_counts[node] = self.exit_counts.get(node, 0) + 1
        self._clear_episode(i)
        self.events_rows.append((t, i, "EVACUATED", int(self.dest[i]), node, "", "", ""))

    def _on_room_change(self, i: int, t: float, frozen: np.ndarray) -> None:
        rs = self.rstate[i]
        entry = int(self.crossed_node[i])
        rs.entry_node = entry
        rs.patience = self.rp.t_min0
        self._clear_episode(i)
        self.below_route[i] = 0
        old = int(frozen[i])
        baseline = rt.choose_baseline(
            rs.strategy, self.pos[i, 0], self.pos[i, 1], int(self.room[i]), self.graph, exclude=entry
        )
        if baseline < 0:
            baseline = rt.choose_baseline(
                rs.strategy, self.pos[i, 0], self.pos[i, 1], int(self.room[i]), self.graph
            )
        if baseline < 0:
            self.events_rows.append((t, i, "NO_ROUTE", old, old, "", "", ""))
            self._arm_patience(i)
            return
        self.dest[i] = baseline
        if rt.is_quickest(rs.strategy):
            self._start_episode(i, t, rt.EVENT_ARRIVED, old, frozen)
        else:
            self.events_rows.append((t, i, "ARRIVED", old, baseline, "", "", ""))
            self._arm_patience(i)

    def _on_waypoint_arrival(self, i: int, t: float, frozen: np.ndarray) -> None:
        rs = self.rstate[i]
        reached = int(self.dest[i])
        self._clear_episode(i)
        self.below_route[i] = 0
        baseline = rt.choose_baseline(
            rs.strategy, self.pos[i, 0], self.pos[i, 1], int(self.room[i]), self.graph, exclude=reached
        )
        if baseline < 0:
            self.events_rows.append((t, i, "NO_ROUTE", reached, reached, "", "", ""))
            self.watch_arrive[i] = 0
            self._arm_patience(i)
            return
        self.dest[i] = baseline
        if rt.is_quickest(rs.strategy):
            self._start_episode(i, t, rt.EVENT_ARRIVED, reached, frozen)
        else:
            self.events_rows.append((t, i, "ARRIVED", reached, baseline, "", "", ""))
            self._arm_patience(i)

    def _on_jammed(self, i: int, t: float, frozen: np.ndarray) -> None:
        rs = self.rstate[i]
        if rs.episode is not None or not rt.is_quickest(rs.strategy):
            return
        self._start_episode(i, t, rt.EVENT_JAMMED, int(self.dest[i]), frozen)

    def _arm_patience(self, i: int) -> None:
        rs = self.rstate[i]
        if rt.is_quickest(rs.strategy) and self.active[i]:
            self.tmin_ticks[i] = int(round(rs.patience / self.dt))
        else:
            self.tmin_ticks[i] = BIG_TICKS

    # ---------- decision episodes ----------

    def _start_episode(self, i: int, t: float, trigger: str, old_dest: int, frozen: np.ndarray) -> None:
        rs = self.rstate[i]
        self.below_route[i] = 0
        baseline = int(self.dest[i])
        view = self._view(frozen)
        vis = rt.visibility_range(i, view, self.graph, self.rp)
        cands = rt.admissible_candidates(vis, baseline, self.graph)
        if not cands:
            if trigger == rt.EVENT_JAMMED:
                rs.patience += self.rp.t_min_increment
            self.events_rows.append((t, i, trigger, old_dest, baseline, "", "", ""))
            self._arm_patience(i)
            return
        rng = self._agent_stream(i)
        ep = rt.Episode(trigger=trigger, baseline=baseline, start_tick=self.tick, due_tick=self.tick)
        for n in sorted(cands):
            ref = rt.select_reference(i, n, view, self.rp, rng)
            if ref < 0:
                ob = rt.Observation(n, -1, self.tick, 0, 0.0, -1, done=True, end_tick=self.tick)
            else:
                t_obs = rng.uniform(self.rp.t_obs_min, self.rp.t_obs_max)
                dur = max(1, int(round(t_obs / self.dt)))
                ob = rt.Observation(n, int(ref), self.tick, dur, float(self.cumspeed[ref]), int(self.room[ref]))
                ep.due_tick = max(ep.due_tick, self.tick + dur)
            ep.obs[n] = ob
        rs.episode = ep
        self.active_episodes.add(i)
        self.tmin_ticks[i] = BIG_TICKS
        if ep.due_tick <= self.tick:
            self._decide(i, t)

    def _service_episodes(self, t: float) -> None:
        for i in sorted(self.active_episodes):
            ep = self.rstate[i].episode
            if ep is None:
                self.active_episodes.discard(i)
                continue
            if self.active[i] == 0:
                self._clear_episode(i)
                continue
            pending = 0
            for ob in ep.obs.values():
                if ob.done:
                    continue
                ref = ob.ref
                if self.tick >= ob.start_tick + ob.dur_ticks or self.active[ref] == 0 or int(self.room[ref]) != ob.ref_room:
                    ob.complete(float(self.cumspeed[ref]), self.tick, self.dt)
                else:
                    pending += 1
            if pending == 0:
                self._decide(i, t)

    def _decide(self, i: int, t: float) -> None:
        rs = self.rstate[i]
        ep = rs.episode
        self._clear_episode(i)
        cur = int(self.dest[i])
        own = rt.floored_speed(float(self.sspeed[i]), float(self.v0[i]), self.rp)
        gains: Dict[int, float] = {}
        for n, ob in ep.obs.items():
            if not self.graph.open_mask[n] or not np.isfinite(self.graph.dist_sink[n]):
                continue
            d_node = math.hypot(self.graph.anchors[n, 0] - self.pos[i, 0], self.graph.anchors[n, 1] - self.pos[i, 1])
            if ob.ref < 0:
                tt = rt.estimate_travel_time(own, d_node, None, None, self.rp)
            else:
                d_ref = math.hypot(self.pos[ob.ref, 0] - self.pos[i, 0], self.pos[ob.ref, 1] - self.pos[i, 1])
                tt = rt.estimate_travel_time(own, d_node, d_ref, ob.v_ja, self.rp)
            gains[n] = rt.gain(tt)
        if cur in gains:
            g_cur = gains[cur]
        else:
            d_node = math.hypot(self.graph.anchors[cur, 0] - self.pos[i, 0], self.graph.anchors[cur, 1] - self.pos[i, 1])
            g_cur = rt.gain(rt.estimate_travel_time(own, d_node, None, None, self.rp))
        node, g_alt, c = rt.decide_switch(cur, gains, g_cur, self.rp.g_min(rs.familiar))
        if node >= 0:
            self.dest[i] = node
            self._refresh_watch()
            self.n_switches += 1
            self.events_rows.append((t, i, ep.trigger, cur, node, _fmt(g_cur), _fmt(g_alt), _fmt(c)))
        else:
            if ep.trigger == rt.EVENT_JAMMED:
                rs.patience += self.rp.t_min_increment
            if gains:
                self.events_rows.append((t, i, ep.trigger, cur, cur, _fmt(g_cur), _fmt(g_alt), _fmt(c)))
            else:
                self.events_rows.append((t, i, ep.trigger, cur, cur, _fmt(g_cur), "", ""))
        self.below_route[i] = 0
        self._arm_patience(i)

    # ---------- disturbances ----------

    def _apply_due_disturbances(self, tick: int, initial: bool = False) -> None:
        fired = False
        while self.pending_dist and self.pending_dist[0][0] <= tick:
            _, d = self.pending_dist.pop(0)
            self.closed.append(d.exit_id)
            fired = True
            if not initial:
                node = self.sc.facility.door_segs.shape[0] + d.exit_id
                self.events_rows.append((tick * self.dt, -1, "DISTURBED", node, node, "", "", ""))
        if not fired or initial:
            return
        self.graph = self._build_graph()
        validate_reachability(self.graph)
        self._rebuild_geometry()
        frozen = self.dest.copy()
        t = tick * self.dt
        for i in range(self.n):
            if self.active[i] == 0:
                continue
            if np.isfinite(self.graph.dist_sink[self.dest[i]]) and self.graph.open_mask[self.dest[i]]:
                continue
            rs = self.rstate[i]
            self._clear_episode(i)
            old = int(self.dest[i])
            baseline = rt.choose_baseline(
                rs.strategy, self.pos[i, 0], self.pos[i, 1], int(self.room[i]), self.graph,
                exclude=rs.entry_node,
            )
            if baseline < 0:
                baseline = rt.choose_baseline(
                    rs.strategy, self.pos[i, 0], self.pos[i, 1], int(self.room[i]), self.graph
                )
            if baseline < 0:
                self.events_rows.append((t, i, "NO_ROUTE", old, old, "", "", ""))
                continue
            self.dest[i] = baseline
            if rt.is_quickest(rs.strategy):
                self._start_episode(i, t, rt.EVENT_ARRIVED, old, frozen)
            else:
                self.events_rows.append((t, i, "REROUTED", old, baseline, "", "", ""))
        self._refresh_watch()

    # ---------- output ----------

    def _sample(self, t: float) -> None:
        exit_nodes = np.array(sorted(self.series_exit), dtype=np.int64)
        # shape from the committed velocity vector, so stored trajectories
        # reproduce the series exactly
        spd = np.hypot(self.vel[:, 0], self.vel[:, 1])
        per_exit, overall = sample_jam_size(
            self.injam, self.dest, spd, self.v0, self.active, exit_nodes, self.op
        )
        self.series_t.append(t)
        for e, a in per_exit.items():
            self.series_exit[e].append(a)
        self.series_all.append(overall)

    def _write_traj_header(self) -> None:
        if self.traj_file:
            self.traj_file.write(TRAJ_HEADER + "\n")

    def _traj_rows(self, t: float) -> None:
        if not self.traj_file:
            return
        w = self.traj_file.write
        ts = _fmt(t)
        for i in range(self.n):
            if self.active[i] == 0:
                continue
            w(
                f"{ts},{i},{_fmt(self.pos[i, 0])},{_fmt(self.pos[i, 1])},"
                f"{_fmt(self.vel[i, 0])},{_fmt(self.vel[i, 1])},"
                f"{self.room[i]},{self.dest[i]},{self.injam[i]}\n"
            )
