"""Scenario files: load, validate, serialize; population spawning; disturbances.

A scenario is a YAML document (conventionally suffixed .scn) with sections
facility / population / routing / operational / disturbances / run. Rooms are
simple polygons; doors and exits are openings lying on room boundary edges.
Walls are derived: every boundary edge minus the openings on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import yaml

from . import geometry as geo
from .errors import ParseError, SpawnError, ValidationError
from .operational import OpParams
from .routing import STRATEGIES, RoutingParams, is_global

SPAWN_CLEARANCE = 0.05   # gap between a spawned body and the nearest wall, m
SPAWN_RADIUS = 0.25      # rest-shape bounding circle, m
SPAWN_ATTEMPTS = 10_000


@dataclass
class Facility:
    room_names: List[str]
    room_polys: List[np.ndarray]          # (k, 2) each
    door_names: List[str]
    door_segs: np.ndarray                 # (D, 4)
    door_rooms: np.ndarray                # (D, 2)
    exit_names: List[str]
    exit_segs: np.ndarray                 # (E, 4)
    exit_rooms: np.ndarray                # (E,)
    waypoint_names: List[str]
    waypoints: np.ndarray                 # (W, 2)
    waypoint_rooms: np.ndarray            # (W,)

    @property
    def n_rooms(self) -> int:
        return len(self.room_polys)

    @property
    def n_exits(self) -> int:
        return len(self.exit_names)

    def bbox(self) -> Tuple[float, float, float, float]:
        xs = np.concatenate([p[:, 0] for p in self.room_polys])
        ys = np.concatenate([p[:, 1] for p in self.room_polys])
        return float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max())

    def room_of_point(self, x: float, y: float) -> Optional[int]:
        return geo.room_of(x, y, [p.tolist() for p in self.room_polys])


@dataclass
class Group:
    count: int
    room: int
    region: Optional[Tuple[float, float, float, float]]
    strategy: str
    speed_mean: float
    speed_std: float
    speed_bounds: Tuple[float, float]


@dataclass
class Disturbance:
    exit_id: int
    time: float


@dataclass
class RunConfig:
    dt: float = 0.01
    max_time: float = 600.0
    sample_interval: float = 0.5
    seed: int = 1
    runs: int = 1


@dataclass
class Scenario:
    name: str
    facility: Facility
    groups: List[Group]
    routing: RoutingParams
    operational: OpParams
    disturbances: List[Disturbance]
    run: RunConfig
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def n_agents(self) -> int:
        return sum(g.count for g in self.groups)


def _point_on_edge(px: float, py: float, a, b) -> bool:
    return geo.dist_point_segment(px, py, a[0], a[1], b[0], b[1]) <= 1e-6


def _seg_on_boundary(seg, poly: np.ndarray) -> Optional[int]:
    """Index of the polygon edge carrying both endpoints of seg, else None."""
    k = len(poly)
    for e in range(k):
        a = poly[e]
        b = poly[(e + 1) % k]
        if _point_on_edge(seg[0], seg[1], a, b) and _point_on_edge(seg[2], seg[3], a, b):
            return e
    return None


def load_scenario(path: str, overrides: Optional[dict] = None) -> Scenario:
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        loc = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ParseError(f"{path}: cannot parse{loc}: {e}") from e
    except OSError as e:
        raise ParseError(f"{path}: {e}") from e
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: top level must be a mapping")
    return build_scenario(raw, overrides, label=path)


def build_scenario(raw: dict, overrides: Optional[dict] = None, label: str = "<scenario>") -> Scenario:
    problems: List[str] = []
    fac_raw = raw.get("facility", {})

    rooms = fac_raw.get("rooms", [])
    room_names: List[str] = []
    room_polys: List[np.ndarray] = []
    for idx, r in enumerate(rooms):
        name = str(r.get("id", f"room{idx}"))
        if name in room_names:
            problems.append(f"duplicate room id '{name}'")
        poly = np.asarray(r.get("polygon", []), dtype=float)
        if poly.ndim != 2 or poly.shape[0] < 3 or poly.shape[1] != 2:
            problems.append(f"room '{name}': polygon needs at least 3 [x, y] vertices")
            poly = np.zeros((3, 2))
        elif abs(geo.polygon_area(poly.tolist())) <= 1e-9:
            problems.append(f"room '{name}': polygon has zero area")
        room_names.append(name)
        room_polys.append(poly)
    room_index = {n: i for i, n in enumerate(room_names)}

    def room_ref(name, ctx) -> int:
        if name not in room_index:
            problems.append(f"{ctx}: unknown room '{name}'")
            return -1
        return room_index[name]

    door_names, door_segs, door_rooms = [], [], []
    for idx, d in enumerate(fac_raw.get("doors", [])):
        name = str(d.get("id", f"door{idx}"))
        seg = np.asarray(d.get("segment", []), dtype=float).reshape(-1)
        if seg.size != 4:
            problems.append(f"door '{name}': segment must be [[x1,y1],[x2,y2]]")
            seg = np.zeros(4)
        rr = d.get("rooms", [])
        if len(rr) != 2:
            problems.append(f"door '{name}': needs exactly 2 rooms")
            pair = (-1, -1)
        else:
            pair = (room_ref(rr[0], f"door '{name}'"), room_ref(rr[1], f"door '{name}'"))
        door_names.append(name)
        door_segs.append(seg)
        door_rooms.append(pair)

    exit_names, exit_segs, exit_rooms = [], [], []
    for idx, e in enumerate(fac_raw.get("exits", [])):
        name = str(e.get("id", f"exit{idx}"))
        seg = np.asarray(e.get("segment", []), dtype=float).reshape(-1)
        if seg.size != 4:
            problems.append(f"exit '{name}': segment must be [[x1,y1],[x2,y2]]")
            seg = np.zeros(4)
        exit_names.append(name)
        exit_segs.append(seg)
        exit_rooms.append(room_ref(e.get("room"), f"exit '{name}'"))

    wp_names, wps, wp_rooms = [], [], []
    for idx, w in enumerate(fac_raw.get("waypoints", [])):
        name = str(w.get("id", f"wp{idx}"))
        pt = np.asarray(w.get("point", []), dtype=float).reshape(-1)
        if pt.size != 2:
            problems.append(f"waypoint '{name}': point must be [x, y]")
            pt = np.zeros(2)
        wp_names.append(name)
        wps.append(pt)
        wp_rooms.append(room_ref(w.get("room"), f"waypoint '{name}'"))

    facility = Facility(
        room_names, room_polys,
        door_names,
        np.array(door_segs, dtype=float).reshape(-1, 4),
        np.array(door_rooms, dtype=np.int64).reshape(-1, 2),
        exit_names,
        np.array(exit_segs, dtype=float).reshape(-1, 4),
        np.array(exit_rooms, dtype=np.int64).reshape(-1),
        wp_names,
        np.array(wps, dtype=float).reshape(-1, 2),
        np.array(wp_rooms, dtype=np.int64).reshape(-1),
    )

    # openings must lie on the boundary of every room they claim to border
    for i, name in enumerate(door_names):
        for r in facility.door_rooms[i]:
            if r >= 0 and _seg_on_boundary(facility.door_segs[i], room_polys[r]) is None:
                problems.append(f"door '{name}': segment not on boundary of room '{room_names[r]}'")
    for i, name in enumerate(exit_names):
        r = facility.exit_rooms[i]
        if r >= 0 and _seg_on_boundary(facility.exit_segs[i], room_polys[r]) is None:
            problems.append(f"exit '{name}': segment not on boundary of room '{room_names[r]}'")
    for i, name in enumerate(wp_names):
        r = facility.waypoint_rooms[i]
        if r >= 0 and not geo.point_in_polygon(wps[i][0], wps[i][1], room_polys[r].tolist()):
            problems.append(f"waypoint '{name}': point not inside room '{room_names[r]}'")

    groups: List[Group] = []
    for idx, g in enumerate(raw.get("population", []) or []):
        count = int(g.get("count", 0))
        if count < 0:
            problems.append(f"population group {idx}: negative count")
        strategy = str(g.get("strategy", "LSP"))
        if strategy not in STRATEGIES:
            problems.append(f"population group {idx}: unknown strategy '{strategy}'")
        room = room_ref(g.get("room"), f"population group {idx}")
        region = g.get("region")
        if region is not None:
            region = tuple(float(v) for v in region)
            if len(region) != 4:
                problems.append(f"population group {idx}: region must be [xmin, ymin, xmax, ymax]")
                region = None
        groups.append(Group(
            count=count, room=room, region=region, strategy=strategy,
            speed_mean=float(g.get("speed_mean", 1.34)),
            speed_std=float(g.get("speed_std", 0.26)),
            speed_bounds=tuple(g.get("speed_bounds", (0.5, 2.2))),
        ))

    try:
        routing = RoutingParams(**(raw.get("routing") or {}))
    except TypeError as e:
        problems.append(f"routing: {e}")
        routing = RoutingParams()
    try:
        operational = OpParams(**(raw.get("operational") or {}))
    except TypeError as e:
        problems.append(f"operational: {e}")
        operational = OpParams()

    disturbances: List[Disturbance] = []
    for idx, d in enumerate(raw.get("disturbances", []) or []):
        ename = d.get("exit")
        if ename not in exit_names:
            problems.append(f"disturbance {idx}: unknown exit '{ename}'")
            continue
        t = float(d.get("time", 0.0))
        if t < 0:
            problems.append(f"disturbance {idx}: negative time")
        disturbances.append(Disturbance(exit_names.index(ename), t))

    run_raw = dict(raw.get("run") or {})
    if overrides:
        run_raw.update({k: v for k, v in overrides.items() if v is not None})
    run = RunConfig(
        dt=float(run_raw.get("dt", 0.01)),
        max_time=float(run_raw.get("max_time", 600.0)),
        sample_interval=float(run_raw.get("sample_interval", 0.5)),
        seed=int(run_raw.get("seed", 1)),
        runs=int(run_raw.get("runs", 1)),
    )
    if run.dt <= 0:
        problems.append("run.dt must be positive")
    if run.sample_interval < run.dt:
        problems.append("run.sample_interval must be >= dt")

    if problems:
        raise ValidationError(f"{label}: " + "; ".join(problems))

    return Scenario(
        name=str(raw.get("name", label)),
        facility=facility, groups=groups, routing=routing,
        operational=operational, disturbances=disturbances, run=run, raw=raw,
    )


def serialize_scenario(sc: Scenario) -> str:
    """YAML text that loads back to a semantically identical scenario."""
    fac = sc.facility
    doc = {
        "name": sc.name,
        "facility": {
            "rooms": [
                {"id": n, "polygon": [[float(x), float(y)] for x, y in p]}
                for n, p in zip(fac.room_names, fac.room_polys)
            ],
            "doors": [
                {
                    "id": n,
                    "rooms": [fac.room_names[r1], fac.room_names[r2]],
                    "segment": [[float(s[0]), float(s[1])], [float(s[2]), float(s[3])]],
                }
                for n, (r1, r2), s in zip(fac.door_names, fac.door_rooms, fac.door_segs)
            ],
            "exits": [
                {
                    "id": n,
                    "room": fac.room_names[r],
                    "segment": [[float(s[0]), float(s[1])], [float(s[2]), float(s[3])]],
                }
                for n, r, s in zip(fac.exit_names, fac.exit_rooms, fac.exit_segs)
            ],
            "waypoints": [
                {"id": n, "room": fac.room_names[r], "point": [float(p[0]), float(p[1])]}
                for n, r, p in zip(fac.waypoint_names, fac.waypoint_rooms, fac.waypoints)
            ],
        },
        "population": [
            {
                "count": g.count,
                "room": fac.room_names[g.room],
                **({"region": list(g.region)} if g.region else {}),
                "strategy": g.strategy,
                "speed_mean": g.speed_mean,
                "speed_std": g.speed_std,
                "speed_bounds": list(g.speed_bounds),
            }
            for g in sc.groups
        ],
        "routing": vars(sc.routing),
        "operational": vars(sc.operational),
        "disturbances": [
            {"exit": fac.exit_names[d.exit_id], "time": d.time} for d in sc.disturbances
        ],
        "run": vars(sc.run),
    }
    return yaml.safe_dump(doc, sort_keys=False)


def derive_walls(facility: Facility, closed_exits: Optional[List[int]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Per-room wall segments in CSR form (wall_off, walls).

    Walls are the room boundary edges minus door spans and minus open exit
    spans; a closed exit contributes its span back as solid wall.
    """
    closed = set(closed_exits or [])
    wall_off = np.zeros(facility.n_rooms + 1, dtype=np.int64)
    pieces: List[Tuple[float, float, float, float]] = []
    for r in range(facility.n_rooms):
        poly = facility.room_polys[r]
        k = len(poly)
        openings = []
        for i, pair in enumerate(facility.door_rooms):
            if r in pair:
                openings.append(facility.door_segs[i])
        for i, er in enumerate(facility.exit_rooms):
            if er == r and i not in closed:
                openings.append(facility.exit_segs[i])
        for e in range(k):
            a = poly[e]
            b = poly[(e + 1) % k]
            L = math.hypot(b[0] - a[0], b[1] - a[1])
            if L <= 1e-9:
                continue
            spans = []
            for seg in openings:
                if _point_on_edge(seg[0], seg[1], a, b) and _point_on_edge(seg[2], seg[3], a, b):
                    t1 = ((seg[0] - a[0]) * (b[0] - a[0]) + (seg[1] - a[1]) * (b[1] - a[1])) / (L * L)
                    t2 = ((seg[2] - a[0]) * (b[0] - a[0]) + (seg[3] - a[1]) * (b[1] - a[1])) / (L * L)
                    spans.append((min(t1, t2), max(t1, t2)))
            for (p1, p2) in geo.subtract_spans((a[0], a[1]), (b[0], b[1]), spans):
                pieces.append((p1[0], p1[1], p2[0], p2[1]))
        wall_off[r + 1] = len(pieces)
    return wall_off, np.array(pieces, dtype=float).reshape(-1, 4)


def spawn_population(
    sc: Scenario,
    rng_place: np.random.Generator,
    rng_speed: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray, List[str], np.ndarray]:
    """Positions, desired speeds, per-agent strategy, familiar flags.

    Uniform rejection sampling per group region: inside the room, clear of
    walls, and no overlap with already placed agents. Deterministic for a
    given generator state.
    """
    wall_off, walls = derive_walls(sc.facility)
    n = sc.n_agents
    pos = np.zeros((n, 2))
    v0 = np.zeros(n)
    strategies: List[str] = []
    familiar = np.zeros(n, dtype=bool)
    grid: Dict[Tuple[int, int], List[int]] = {}
    k = 0
    min_gap = 2.0 * SPAWN_RADIUS + 1e-9
    for g in sc.groups:
        poly = sc.facility.room_polys[g.room].tolist()
        if g.region is not None:
            xmin, ymin, xmax, ymax = g.region
        else:
            arr = sc.facility.room_polys[g.room]
            xmin, ymin = arr.min(axis=0)
            xmax, ymax = arr.max(axis=0)
        for _ in range(g.count):
            ok = False
            for _attempt in range(SPAWN_ATTEMPTS):
                x = rng_place.uniform(xmin, xmax)
                y = rng_place.uniform(ymin, ymax)
                if not geo.point_in_polygon(x, y, poly):
                    continue
                clear = True
                for w in range(wall_off[g.room], wall_off[g.room + 1]):
                    if geo.dist_point_segment(x, y, walls[w, 0], walls[w, 1], walls[w, 2], walls[w, 3]) < SPAWN_RADIUS + SPAWN_CLEARANCE:
                        clear = False
                        break
                if not clear:
                    continue
                cx, cy = int(x), int(y)
                for gx in range(cx - 1, cx + 2):
                    for gy in range(cy - 1, cy + 2):
                        for j in grid.get((gx, gy), ()):
                            if math.hypot(pos[j, 0] - x, pos[j, 1] - y) < min_gap:
                                clear = False
                                break
                        if not clear:
                            break
                    if not clear:
                        break
                if clear:
                    pos[k] = (x, y)
                    ok = True
                    break
            if not ok:
                raise SpawnError(
                    f"room '{sc.facility.room_names[g.room]}': placed {k} agents, "
                    f"no space for more after {SPAWN_ATTEMPTS} attempts"
                )
            grid.setdefault((int(pos[k, 0]), int(pos[k, 1])), []).append(k)
            strategies.append(g.strategy)
            familiar[k] = is_global(g.strategy)
            k += 1
    # desired speeds in agent order, truncated Gaussian
    idx = 0
    for g in sc.groups:
        lo, hi = g.speed_bounds
        for _ in range(g.count):
            while True:
                v = rng_speed.normal(g.speed_mean, g.speed_std)
                if lo <= v <= hi:
                    break
            v0[idx] = v
            idx += 1
    return pos, v0, strategies, familiar
