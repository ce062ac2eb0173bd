"""Navigation graph over door, exit and waypoint nodes.

Nodes anchor at door midpoints (or at the waypoint itself). Two nodes are
adjacent iff they border a common room; edge weight is the Euclidean distance
between anchors. A virtual sink sits behind all open final exits with
zero-weight edges, so distance-to-sink rankings fall out of one
all-pairs-shortest-paths pass.

Closed exits stay in the node list but lose all edges, which keeps node ids
stable when the graph is rebuilt mid-run.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .errors import GraphError
from .geometry import shrink_segment

KIND_DOOR = 0
KIND_EXIT = 1
KIND_POINT = 2

TARGET_MARGIN = 0.30  # keep steering targets off the door jambs


def floyd_warshall(W: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """All-pairs shortest paths with next-hop reconstruction.

    Updates only on strict improvement with k ascending, so ties resolve to
    the path found first and the result is deterministic.
    """
    n = W.shape[0]
    D = W.astype(np.float64).copy()
    nxt = np.full((n, n), -1, dtype=np.int64)
    for i in range(n):
        for j in range(n):
            if i != j and np.isfinite(D[i, j]):
                nxt[i, j] = j
        D[i, i] = 0.0
        nxt[i, i] = i
    for k in range(n):
        via = D[:, k, None] + D[None, k, :]
        better = via < D
        if better.any():
            D = np.where(better, via, D)
            nxt = np.where(better, np.broadcast_to(nxt[:, k, None], nxt.shape), nxt)
    return D, nxt


def reconstruct_path(nxt: np.ndarray, i: int, j: int) -> List[int]:
    """Node sequence from i to j inclusive, [] if unreachable."""
    if nxt[i, j] < 0:
        return []
    path = [i]
    while i != j:
        i = int(nxt[i, j])
        path.append(i)
    return path


@dataclass
class NavGraph:
    anchors: np.ndarray        # (M, 2) node anchor points
    segs: np.ndarray           # (M, 4) door span x1,y1,x2,y2 (degenerate for waypoints)
    target_segs: np.ndarray    # (M, 4) span shrunk by TARGET_MARGIN, used for steering
    kinds: np.ndarray          # (M,) KIND_*
    node_rooms: np.ndarray     # (M, 2) bordering room ids, -1 = none/outside
    open_mask: np.ndarray      # (M,) False for closed exits
    n_rooms: int
    W: np.ndarray              # (M+1, M+1) weights, index M = sink
    D: np.ndarray
    next_hop: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.anchors.shape[0]

    @property
    def sink(self) -> int:
        return self.n_nodes

    @property
    def dist_sink(self) -> np.ndarray:
        return self.D[: self.n_nodes, self.sink]

    def nodes_of_room(self, room: int) -> np.ndarray:
        return np.where(
            ((self.node_rooms[:, 0] == room) | (self.node_rooms[:, 1] == room))
            & self.open_mask
        )[0]

    def other_room(self, node: int, room: int) -> int:
        a, b = self.node_rooms[node]
        return int(b) if a == room else int(a)

    def with_open_mask(self, open_mask: np.ndarray) -> "NavGraph":
        """Rebuild shortest paths after opening/closing exits; ids unchanged."""
        return _assemble(
            self.anchors, self.segs, self.target_segs, self.kinds,
            self.node_rooms, open_mask.copy(), self.n_rooms,
        )


def _assemble(anchors, segs, target_segs, kinds, node_rooms, open_mask, n_rooms) -> NavGraph:
    m = anchors.shape[0]
    W = np.full((m + 1, m + 1), np.inf)
    np.fill_diagonal(W, 0.0)
    for i in range(m):
        if not open_mask[i]:
            continue
        for j in range(i + 1, m):
            if not open_mask[j]:
                continue
            shared = False
            for r in node_rooms[i]:
                if r >= 0 and (node_rooms[j, 0] == r or node_rooms[j, 1] == r):
                    shared = True
            if shared:
                w = float(np.hypot(*(anchors[i] - anchors[j])))
                W[i, j] = W[j, i] = w
    for i in range(m):
        if kinds[i] == KIND_EXIT and open_mask[i]:
            W[i, m] = 0.0
    D, nxt = floyd_warshall(W)
    return NavGraph(anchors, segs, target_segs, kinds, node_rooms, open_mask, n_rooms, W, D, nxt)


def build_graph(
    door_segs: np.ndarray,
    door_rooms: np.ndarray,
    exit_segs: np.ndarray,
    exit_rooms: np.ndarray,
    waypoints: np.ndarray,
    waypoint_rooms: np.ndarray,
    n_rooms: int,
    closed_exits: np.ndarray | None = None,
) -> NavGraph:
    """Assemble the graph; node order is doors, then exits, then waypoints.

    door_segs/exit_segs are (K, 4); door_rooms is (K, 2) room pairs,
    exit_rooms (K,) single ids. closed_exits holds indices into the exit list.
    """
    rows = []
    for segs_arr, kind in ((door_segs, KIND_DOOR), (exit_segs, KIND_EXIT)):
        for s in segs_arr.reshape(-1, 4):
            rows.append((s, kind))
    for p in waypoints.reshape(-1, 2):
        rows.append((np.array([p[0], p[1], p[0], p[1]]), KIND_POINT))

    m = len(rows)
    segs = np.zeros((m, 4))
    anchors = np.zeros((m, 2))
    target_segs = np.zeros((m, 4))
    kinds = np.zeros(m, dtype=np.int8)
    node_rooms = np.full((m, 2), -1, dtype=np.int64)
    open_mask = np.ones(m, dtype=bool)

    nd = door_segs.reshape(-1, 4).shape[0]
    ne = exit_segs.reshape(-1, 4).shape[0]
    for idx, (s, kind) in enumerate(rows):
        segs[idx] = s
        kinds[idx] = kind
        anchors[idx] = (0.5 * (s[0] + s[2]), 0.5 * (s[1] + s[3]))
        (t1, t2) = shrink_segment((s[0], s[1]), (s[2], s[3]), TARGET_MARGIN)
        target_segs[idx] = (t1[0], t1[1], t2[0], t2[1])
        if kind == KIND_DOOR:
            node_rooms[idx] = door_rooms.reshape(-1, 2)[idx]
        elif kind == KIND_EXIT:
            node_rooms[idx, 0] = exit_rooms.reshape(-1)[idx - nd]
        else:
            node_rooms[idx, 0] = waypoint_rooms.reshape(-1)[idx - nd - ne]

    if closed_exits is not None:
        for e in np.asarray(closed_exits, dtype=np.int64).reshape(-1):
            open_mask[nd + int(e)] = False

    return _assemble(anchors, segs, target_segs, kinds, node_rooms, open_mask, n_rooms)


def validate_reachability(g: NavGraph) -> None:
    """Every room with at least one node must reach the sink."""
    for r in range(g.n_rooms):
        nodes = g.nodes_of_room(r)
        if nodes.size == 0:
            continue
        if not np.isfinite(g.dist_sink[nodes]).any():
            raise GraphError(f"room {r} cannot reach any open exit")


def local_nearest_node(px: float, py: float, room: int, g: NavGraph) -> int:
    """Nearest open node of the room that still leads somewhere; -1 if none."""
    best, best_d = -1, np.inf
    for n in g.nodes_of_room(room):
        if not np.isfinite(g.dist_sink[n]):
            continue
        d = float(np.hypot(g.anchors[n, 0] - px, g.anchors[n, 1] - py))
        if d < best_d - 1e-12:
            best, best_d = int(n), d
    return best


def global_next_node(px: float, py: float, room: int, g: NavGraph) -> int:
    """Open node of the room minimizing walk-in distance plus graph distance to sink."""
    best, best_d = -1, np.inf
    for n in g.nodes_of_room(room):
        total = float(np.hypot(g.anchors[n, 0] - px, g.anchors[n, 1] - py)) + g.dist_sink[n]
        if total < best_d - 1e-12:
            best, best_d = int(n), total
    return best
