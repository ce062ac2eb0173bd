"""Strategic layer: route choice over the navigation graph.

Four strategies: LSP/GSP walk to the locally nearest / globally best node and
never reconsider; LSQ/GSQ add the event-driven quickest-path overlay, where a
re-routing event (arrival or exhausted patience in a jam) opens a decision
episode: visible candidate nodes are evaluated by observing a reference
pedestrian in each node's jamming queue, estimated travel times become gains,
and a cost-benefit score above the familiarity threshold wins the switch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import operational as op
from .navgraph import NavGraph, global_next_node, local_nearest_node

LSP, GSP, LSQ, GSQ = "LSP", "GSP", "LSQ", "GSQ"
STRATEGIES = (LSP, GSP, LSQ, GSQ)

EVENT_NONE = "NONE"
EVENT_JAMMED = "JAMMED"
EVENT_ARRIVED = "ARRIVED"


def is_quickest(strategy: str) -> bool:
    return strategy in (LSQ, GSQ)


def is_global(strategy: str) -> bool:
    return strategy in (GSP, GSQ)


@dataclass
class RoutingParams:
    v_min: float = 0.2            # jam speed threshold, m/s
    d_min: float = 0.20           # arrival radius, m
    t_min0: float = 10.0          # initial patience, s
    t_min_increment: float = 1.0  # patience growth per failed attempt, s
    t_obs_min: float = 1.0        # observation window bounds, s
    t_obs_max: float = 3.0
    g_min_familiar: float = 0.20
    g_min_unfamiliar: float = 0.15
    obstacles_min: int = 2        # tolerated occluders on a sight line
    speed_floor_frac: float = 0.1  # own-speed floor as a fraction of v0
    stuck_speed: float = 1e-3     # reference below this counts as fully stuck

    def g_min(self, familiar: bool) -> float:
        return self.g_min_familiar if familiar else self.g_min_unfamiliar


def detect_reroute_event(arrived: bool, jam_clock: float, patience: float) -> str:
    """Event precedence per re-routing definition: arrival wins over jam."""
    if arrived:
        return EVENT_ARRIVED
    if jam_clock >= patience:
        return EVENT_JAMMED
    return EVENT_NONE


def queue_members(node: int, dest: np.ndarray, speed: np.ndarray, active: np.ndarray, v_min: float) -> np.ndarray:
    """Jamming queue at a node: agents heading there at jam speed."""
    return np.where((dest == node) & (speed <= v_min) & (active == 1))[0]


def _sight_clear(world, i: int, qx: float, qy: float, skip_j: int, obstacles_min: int) -> bool:
    px, py = world.pos[i]
    w0 = world.wall_off[world.room[i]]
    w1 = world.wall_off[world.room[i] + 1]
    if op.seg_hits_walls(px, py, qx, qy, world.walls, w0, w1):
        return False
    occ = op.count_occluders(
        px, py, qx, qy, i, skip_j, obstacles_min,
        world.pos, world.speed, world.theta, world.v0, world.active,
        world.params.a_min, world.params.tau_a, world.params.b_min, world.params.b_max,
    )
    return occ <= obstacles_min


def visibility_range(i: int, world, graph: NavGraph, rp: RoutingParams) -> List[int]:
    """Candidate nodes of the current decision area the agent can assess.

    A node with a queue counts as visible when some queue member can be seen
    with at most obstacles_min other pedestrians on the sight line and no
    wall across it; a node with an empty queue is sighted directly.
    """
    out: List[int] = []
    for n in graph.nodes_of_room(int(world.room[i])):
        n = int(n)
        members = queue_members(n, world.dest, world.sspeed, world.active, rp.v_min)
        if members.size:
            seen = False
            for j in members:
                # standing in the queue yourself means you can assess it
                if j == i or _sight_clear(world, i, world.pos[j, 0], world.pos[j, 1], int(j), rp.obstacles_min):
                    seen = True
                    break
            if seen:
                out.append(n)
        else:
            ax, ay = graph.anchors[n]
            if _sight_clear(world, i, ax, ay, -1, rp.obstacles_min):
                out.append(n)
    return out


def select_reference(i: int, node: int, world, rp: RoutingParams, rng: np.random.Generator) -> int:
    """Nearest visible member of the node's queue; RNG breaks exact ties."""
    members = queue_members(node, world.dest, world.sspeed, world.active, rp.v_min)
    # an agent stuck on its way to this node sits in the queue itself, at
    # distance zero: it anchors its own estimate, so a blocked current
    # choice is priced by its own creep speed rather than as a free walk
    if int(world.dest[i]) == node and float(world.sspeed[i]) <= rp.v_min:
        return i
    members = members[members != i]
    if members.size == 0:
        return -1
    d = np.hypot(world.pos[members, 0] - world.pos[i, 0], world.pos[members, 1] - world.pos[i, 1])
    order = np.lexsort((members, d))
    best_d = -1.0
    ties: List[int] = []
    for k in order:
        j = int(members[k])
        if best_d >= 0.0 and d[k] > best_d + 1e-9:
            break
        if _sight_clear(world, i, world.pos[j, 0], world.pos[j, 1], j, rp.obstacles_min):
            if best_d < 0.0:
                best_d = float(d[k])
            ties.append(j)
    if not ties:
        return -1
    if len(ties) == 1:
        return ties[0]
    return ties[int(rng.integers(len(ties)))]


def floored_speed(speed: float, v0: float, rp: RoutingParams) -> float:
    return max(speed, rp.speed_floor_frac * v0)


def estimate_travel_time(
    own_speed: float,
    dist_node: float,
    dist_ref: Optional[float],
    v_ja: Optional[float],
    rp: RoutingParams,
) -> float:
    """Expected travel time to a node, via a reference pedestrian if present.

    own_speed must already be floored. A fully stuck reference makes the
    estimate infinite.
    """
    if v_ja is None:
        return dist_node / own_speed
    if v_ja <= rp.stuck_speed:
        return math.inf
    return dist_ref / own_speed + dist_node / v_ja


def gain(t: float) -> float:
    if math.isinf(t):
        return 0.0
    return 1.0 / t


def cba(g_alt: float, g_cur: float) -> float:
    s = g_alt + g_cur
    if s == 0.0:
        return 0.0
    return (g_alt - g_cur) / s


def decide_switch(
    current: int,
    gains: Dict[int, float],
    g_cur: float,
    g_min: float,
) -> tuple:
    """Best alternative beating the threshold, or (-1, ...) to keep.

    Returns (node, g_alt, cba_value); ties resolve to the lowest node id.
    """
    best_node, best_gain = -1, -math.inf
    for n in sorted(gains):
        if n == current:
            continue
        if gains[n] > best_gain + 1e-15:
            best_node, best_gain = n, gains[n]
    if best_node < 0:
        return -1, 0.0, 0.0
    c = cba(best_gain, g_cur)
    if c > g_min:
        return best_node, best_gain, c
    return -1, best_gain, c


def choose_baseline(strategy: str, px: float, py: float, room: int, graph: NavGraph, exclude: int = -1) -> int:
    """Destination the underlying static strategy would pick.

    `exclude` is the node just reached; the local pick is then restricted to
    nodes that sit closer to the outside, so an agent stepping into a wide
    room never walks back through the doorway row it came from.
    """
    if is_global(strategy):
        return global_next_node(px, py, room, graph)
    cap = math.inf
    if exclude >= 0 and np.isfinite(graph.dist_sink[exclude]):
        # a candidate must beat walking back to the entry and carrying on
        # from there, otherwise agents shuffle sideways along a row of
        # doorways instead of heading out
        back = math.hypot(graph.anchors[exclude, 0] - px, graph.anchors[exclude, 1] - py)
        cap = back + graph.dist_sink[exclude] - 1e-9
    return local_nearest_node_excluding(px, py, room, graph, exclude, cap)


def local_nearest_node_excluding(
    px: float, py: float, room: int, graph: NavGraph, exclude: int, sink_cap: float = math.inf
) -> int:
    best, best_d = -1, math.inf
    for n in graph.nodes_of_room(room):
        n = int(n)
        if n == exclude or not np.isfinite(graph.dist_sink[n]):
            continue
        d = math.hypot(graph.anchors[n, 0] - px, graph.anchors[n, 1] - py)
        if d + graph.dist_sink[n] > sink_cap:
            continue
        if d < best_d - 1e-12:
            best, best_d = n, d
    return best


def admissible_candidates(nodes: List[int], current: int, graph: NavGraph) -> List[int]:
    """Drop candidates that would move the agent away from the outside.

    Keeps nodes whose graph distance to the sink does not exceed the current
    destination's; prevents oscillation back through just-used doors.
    """
    if current < 0:
        return [n for n in nodes if np.isfinite(graph.dist_sink[n])]
    lim = graph.dist_sink[current] + 1e-6
    return [n for n in nodes if graph.dist_sink[n] <= lim]


@dataclass
class Observation:
    node: int
    ref: int                 # -1: free node, no observation needed
    start_tick: int
    dur_ticks: int
    cum0: float              # reference's speed integral at start
    ref_room: int
    done: bool = False
    v_ja: float = 0.0
    end_tick: int = 0

    def complete(self, cum_now: float, tick: int, dt: float) -> None:
        elapsed = max(1, tick - self.start_tick)
        self.v_ja = (cum_now - self.cum0) / (elapsed * dt)
        self.done = True
        self.end_tick = tick


@dataclass
class Episode:
    trigger: str
    baseline: int
    start_tick: int
    due_tick: int
    obs: Dict[int, Observation] = field(default_factory=dict)


@dataclass
class RoutingState:
    strategy: str
    familiar: bool
    patience: float          # current t_min, s
    entry_node: int = -1     # node crossed to enter the current room
    episode: Optional[Episode] = None
