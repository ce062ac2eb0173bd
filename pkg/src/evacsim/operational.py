"""Operational layer: per-tick motion of agents toward their destination node.

The model is a stand-in for a full force-based pedestrian model behind a
narrow interface (advance kernel + shape/arrival helpers): velocities relax
toward the desired speed along the direction of the destination segment,
agents and walls repel exponentially, and a position-projection pass enforces
hard non-overlap and wall constraints. Velocities are derived from the actual
displacement, so fully blocked agents register speeds near zero, which is
what the jam detection upstream keys on.

Everything inside the numba kernel is float64/int64 with fixed iteration
order, so runs are bit-reproducible for a given seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

# event bits reported by the kernel
EV_ROOM = 1      # crossed an internal door
EV_EVAC = 2      # crossed a final exit
EV_ARRIVE = 4    # proximity arrival at a watched node
EV_JAM = 8       # patience threshold reached
EV_BLOWUP = 16   # non-finite coordinate


@dataclass
class OpParams:
    dt: float = 0.01           # s
    tau: float = 0.5           # relaxation time, s
    rep_strength: float = 3.0  # agent repulsion, m/s^2
    rep_range: float = 1.0     # interaction cutoff, m
    rep_decay: float = 0.2     # exponential decay length, m
    wall_strength: float = 2.0
    wall_range: float = 0.5
    wall_decay: float = 0.3
    v_min: float = 0.2         # jam speed threshold, m/s
    d_min: float = 0.20        # arrival radius, m
    a_min: float = 0.18        # ellipse major semi-axis at rest, m
    tau_a: float = 0.23        # speed coefficient of the major semi-axis, s
    b_min: float = 0.22        # minor semi-axis at full speed, m
    b_max: float = 0.25        # minor semi-axis at rest, m
    vmax_factor: float = 1.3   # speed clamp relative to desired speed
    noise_accel: float = 0.9   # crowd-conditioned noise amplitude, m/s^2
    bias_accel: float = 0.35   # per-agent lateral preference amplitude, m/s^2
    contact_damp: float = 4.0  # viscous damping of relative velocity in contact, 1/s
    speed_smooth: float = 2.0  # time constant of the threshold-speed average, s
    jam_qualify_s: float = 10.0  # sustained slow period before jam status
    crowd_slow: float = 0.10   # walking-speed cut per neighbour beyond two
    crowd_floor: float = 0.45  # lower bound on the crowded-speed factor
    contact_slip: float = 0.30  # tangential share of contact pushes, right-handed
    wall_friction: float = 11.0  # tangential drag rate in wall contact, 1/s
    wall_rub: float = 0.35     # extra reach of the drag zone past the body, m

    def jam_qualify_ticks(self) -> int:
        return int(round(self.jam_qualify_s / self.dt))

    def smooth_alpha(self) -> float:
        return min(1.0, self.dt / self.speed_smooth)

    def pack(self) -> np.ndarray:
        return np.array(
            [
                self.dt, self.tau, self.rep_strength, self.rep_range,
                self.rep_decay, self.wall_strength, self.wall_range,
                self.wall_decay, self.v_min, self.d_min, self.a_min,
                self.tau_a, self.b_min, self.b_max, self.vmax_factor,
                self.noise_accel, self.bias_accel, self.contact_damp,
                self.smooth_alpha(), float(self.jam_qualify_ticks()),
                self.crowd_slow, self.crowd_floor, self.wall_friction, self.wall_rub,
                self.contact_slip,
            ],
            dtype=np.float64,
        )


def major_axis(a_min: float, tau_a: float, speed: float) -> float:
    return a_min + tau_a * speed


def minor_axis(b_min: float, b_max: float, speed: float, v0: float) -> float:
    return b_max - (b_max - b_min) * min(1.0, speed / v0)


def update_shape(speed: float, v0: float, theta: float, p: OpParams) -> tuple:
    """(a, b, theta) of the velocity-dependent ellipse."""
    return (
        major_axis(p.a_min, p.tau_a, speed),
        minor_axis(p.b_min, p.b_max, speed, v0),
        theta,
    )


def arrival_check(px, py, dest_anchor, room_changed: bool, p: OpParams) -> bool:
    """Arrived when within d_min of the node anchor or when a door was crossed."""
    if room_changed:
        return True
    dx = px - dest_anchor[0]
    dy = py - dest_anchor[1]
    return math.hypot(dx, dy) <= p.d_min


@numba.njit(cache=True, inline="always")
def _mix64(x):
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = x
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, inline="always")
def _noise2(seed, agent, tick):
    """Two deterministic uniforms in [-1, 1) keyed by (seed, agent, tick)."""
    h = _mix64(seed ^ _mix64(np.uint64(agent) * np.uint64(0x632BE59BD9B4E019)) ^ np.uint64(tick))
    lo = h & np.uint64(0x3FFFFFF)
    hi = (h >> np.uint64(26)) & np.uint64(0x3FFFFFF)
    s = 1.0 / float(0x2000000)
    return float(lo) * s - 1.0, float(hi) * s - 1.0


@numba.njit(cache=True, inline="always")
def _seg_nearest(px, py, ax, ay, bx, by):
    dx = bx - ax
    dy = by - ay
    L2 = dx * dx + dy * dy
    if L2 <= 1e-18:
        return ax, ay
    t = ((px - ax) * dx + (py - ay) * dy) / L2
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    return ax + t * dx, ay + t * dy


@numba.njit(cache=True, inline="always")
def _segs_cross(p1x, p1y, p2x, p2y, q1x, q1y, q2x, q2y):
    d1 = (q2x - q1x) * (p1y - q1y) - (q2y - q1y) * (p1x - q1x)
    d2 = (q2x - q1x) * (p2y - q1y) - (q2y - q1y) * (p2x - q1x)
    d3 = (p2x - p1x) * (q1y - p1y) - (p2y - p1y) * (q1x - p1x)
    d4 = (p2x - p1x) * (q2y - p1y) - (p2y - p1y) * (q2x - p1x)
    eps = 1e-12
    if ((d1 > eps and d2 < -eps) or (d1 < -eps and d2 > eps)) and (
        (d3 > eps and d4 < -eps) or (d3 < -eps and d4 > eps)
    ):
        return True
    if abs(d1) <= eps and min(q1x, q2x) - eps <= p1x <= max(q1x, q2x) + eps and min(q1y, q2y) - eps <= p1y <= max(q1y, q2y) + eps:
        return True
    if abs(d2) <= eps and min(q1x, q2x) - eps <= p2x <= max(q1x, q2x) + eps and min(q1y, q2y) - eps <= p2y <= max(q1y, q2y) + eps:
        return True
    if abs(d3) <= eps and min(p1x, p2x) - eps <= q1x <= max(p1x, p2x) + eps and min(p1y, p2y) - eps <= q1y <= max(p1y, p2y) + eps:
        return True
    if abs(d4) <= eps and min(p1x, p2x) - eps <= q2x <= max(p1x, p2x) + eps and min(p1y, p2y) - eps <= q2y <= max(p1y, p2y) + eps:
        return True
    return False


@numba.njit(cache=True, inline="always")
def _minor(speed, v0, b_min, b_max):
    f = speed / v0
    if f > 1.0:
        f = 1.0
    return b_max - (b_max - b_min) * f


@numba.njit(cache=True, inline="always")
def _support(spd, v0k, th, ux, uy, a_min, tau_a, b_min, b_max):
    # ellipse half-extent along unit direction (ux, uy): the velocity-grown
    # major axis counts head-to-tail, the minor axis side-to-side
    a = a_min + tau_a * spd
    b = _minor(spd, v0k, b_min, b_max)
    c = math.cos(th) * ux + math.sin(th) * uy
    cc = c * c
    if cc > 1.0:
        cc = 1.0
    return math.sqrt(a * a * cc + b * b * (1.0 - cc))


@numba.njit(cache=True)
def seg_hits_ellipse(px, py, qx, qy, cx, cy, a, b, theta):
    """Segment pq versus the closed ellipse (cx, cy, a, b, theta)."""
    ct = math.cos(theta)
    st = math.sin(theta)
    rx = px - cx
    ry = py - cy
    ux = (rx * ct + ry * st) / a
    uy = (-rx * st + ry * ct) / b
    rx = qx - cx
    ry = qy - cy
    vx = (rx * ct + ry * st) / a
    vy = (-rx * st + ry * ct) / b
    nx, ny = _seg_nearest(0.0, 0.0, ux, uy, vx, vy)
    return math.hypot(nx, ny) <= 1.0 + 1e-12


@numba.njit(cache=True)
def count_occluders(
    px, py, qx, qy, skip_i, skip_j, limit,
    pos, speed, theta, v0, active,
    a_min, tau_a, b_min, b_max,
):
    """Number of other agents' ellipses crossing segment pq, early-out past limit."""
    n = pos.shape[0]
    cnt = 0
    for k in range(n):
        if k == skip_i or k == skip_j or active[k] == 0:
            continue
        a = a_min + tau_a * speed[k]
        b = _minor(speed[k], v0[k], b_min, b_max)
        if seg_hits_ellipse(px, py, qx, qy, pos[k, 0], pos[k, 1], a, b, theta[k]):
            cnt += 1
            if cnt > limit:
                return cnt
    return cnt


@numba.njit(cache=True)
def seg_hits_walls(px, py, qx, qy, walls, w0, w1):
    for w in range(w0, w1):
        if _segs_cross(px, py, qx, qy, walls[w, 0], walls[w, 1], walls[w, 2], walls[w, 3]):
            return True
    return False


@numba.njit(cache=True)
def advance(
    # agent state
    pos, vel, speed, sspeed, theta, v0, bias, active, room, dest,
    # clocks and accounting
    below_route, tmin_ticks, below_jam, injam, jam_ticks, cumspeed,
    # events
    ev, crossed_node, evac_tick, watch_arrive,
    # geometry
    wall_off, walls, cross_off, cross_segs, cross_node, cross_other,
    tgt_segs, anchors,
    # cell grid
    gx0, gy0, ginv, gnx, gny, cell_cnt, cell_start, cell_items,
    # scratch
    npx, npy, nclose,
    # params
    P, noise_seed, start_tick, stop_tick,
):
    """Advance ticks until an event fires or stop_tick is reached.

    Returns (tick, eventmask). Event flags per agent are left in `ev` for the
    caller to consume; the kernel never clears them.
    """
    dt = P[0]
    tau = P[1]
    A = P[2]
    rng_cut = P[3]
    B = P[4]
    Aw = P[5]
    wall_cut = P[6]
    Bw = P[7]
    v_min = P[8]
    d_min = P[9]
    a_min = P[10]
    tau_a = P[11]
    b_min = P[12]
    b_max = P[13]
    vmax_f = P[14]
    noise_amp = P[15]
    bias_amp = P[16]
    c_damp = P[17]
    alpha = P[18]
    jam_q = int(P[19])
    slow_per = P[20]
    slow_floor = P[21]
    mu_w = P[22]
    rub = P[23]
    slip = P[24]

    n = pos.shape[0]
    ncell = gnx * gny
    tick = start_tick
    events = 0
    ivx = np.empty(n)
    ivy = np.empty(n)

    while tick < stop_tick:
        # rebuild the cell index (counting sort, deterministic order)
        for c in range(ncell):
            cell_cnt[c] = 0
        for i in range(n):
            if active[i] == 0:
                continue
            cx = int((pos[i, 0] - gx0) * ginv)
            cy = int((pos[i, 1] - gy0) * ginv)
            if cx < 0:
                cx = 0
            elif cx >= gnx:
                cx = gnx - 1
            if cy < 0:
                cy = 0
            elif cy >= gny:
                cy = gny - 1
            cell_cnt[cx + gnx * cy] += 1
        acc = 0
        for c in range(ncell):
            cell_start[c] = acc
            acc += cell_cnt[c]
            cell_cnt[c] = 0
        cell_start[ncell] = acc
        for i in range(n):
            if active[i] == 0:
                continue
            cx = int((pos[i, 0] - gx0) * ginv)
            cy = int((pos[i, 1] - gy0) * ginv)
            if cx < 0:
                cx = 0
            elif cx >= gnx:
                cx = gnx - 1
            if cy < 0:
                cy = 0
            elif cy >= gny:
                cy = gny - 1
            c = cx + gnx * cy
            cell_items[cell_start[c] + cell_cnt[c]] = i
            cell_cnt[c] += 1

        # force pass: desired-direction relaxation + repulsion + noise
        for i in range(n):
            if active[i] == 0:
                continue
            d = dest[i]
            tx, ty = _seg_nearest(
                pos[i, 0], pos[i, 1],
                tgt_segs[d, 0], tgt_segs[d, 1], tgt_segs[d, 2], tgt_segs[d, 3],
            )
            ex = tx - pos[i, 0]
            ey = ty - pos[i, 1]
            dn = math.hypot(ex, ey)
            if dn > 1e-12:
                ex /= dn
                ey /= dn
            else:
                ex = 0.0
                ey = 0.0
            ax = 0.0
            ay = 0.0

            bi = _minor(speed[i], v0[i], b_min, b_max)
            ncl = 0
            cxi = int((pos[i, 0] - gx0) * ginv)
            cyi = int((pos[i, 1] - gy0) * ginv)
            for oy in range(-1, 2):
                yy = cyi + oy
                if yy < 0 or yy >= gny:
                    continue
                for ox in range(-1, 2):
                    xx = cxi + ox
                    if xx < 0 or xx >= gnx:
                        continue
                    c = xx + gnx * yy
                    for s in range(cell_start[c], cell_start[c + 1]):
                        j = cell_items[s]
                        if j == i:
                            continue
                        dx = pos[i, 0] - pos[j, 0]
                        dy = pos[i, 1] - pos[j, 1]
                        dd = math.hypot(dx, dy)
                        if dd < rng_cut and dd > 1e-9:
                            ux = dx / dd
                            uy = dy / dd
                            rr = (_support(speed[i], v0[i], theta[i], ux, uy,
                                           a_min, tau_a, b_min, b_max)
                                  + _support(speed[j], v0[j], theta[j], ux, uy,
                                             a_min, tau_a, b_min, b_max))
                            # brake for people ahead, ignore pressure from
                            # behind: rear pushes would pump the whole column
                            # through bottlenecks at full stride (the overlap
                            # projection still keeps rear contacts apart)
                            w = 0.5 * (1.0 - (ux * ex + uy * ey))
                            f = w * A * math.exp((rr - dd) / B)
                            ax += f * ux
                            ay += f * uy
                            if dd < rr:
                                # consistent handedness lets face-to-face
                                # pairs rotate past each other instead of
                                # mirroring every sidestep forever
                                ax += slip * f * uy
                                ay -= slip * f * ux
                                # bodies in contact dissipate relative motion,
                                # otherwise dense crowds grind and mill instead
                                # of coming to a standstill
                                ax += c_damp * (vel[j, 0] - vel[i, 0])
                                ay += c_damp * (vel[j, 1] - vel[i, 1])
                            ncl += 1

            w0 = wall_off[room[i]]
            w1 = wall_off[room[i] + 1]
            rub_d = 1e30
            rub_nx = 0.0
            rub_ny = 0.0
            for w in range(w0, w1):
                wx, wy = _seg_nearest(pos[i, 0], pos[i, 1], walls[w, 0], walls[w, 1], walls[w, 2], walls[w, 3])
                dx = pos[i, 0] - wx
                dy = pos[i, 1] - wy
                dd = math.hypot(dx, dy)
                if dd < wall_cut and dd > 1e-9:
                    wnx = dx / dd
                    wny = dy / dd
                    f = Aw * math.exp((bi - dd) / Bw)
                    ax += f * wnx
                    ay += f * wny
                    if dd < bi + rub and dd < rub_d:
                        rub_d = dd
                        rub_nx = wnx
                        rub_ny = wny
            if rub_d < 1e29 and ncl >= 3:
                # squeezed against the wall by a press of bodies: tangential
                # drag is what keeps a doorway from passing the pack at full
                # walking pace; a lone walker close to a wall strolls
                # unhindered, and only the nearest wall counts so slit-like
                # doorways are not braked twice
                vdn = vel[i, 0] * rub_nx + vel[i, 1] * rub_ny
                ax -= mu_w * (vel[i, 0] - vdn * rub_nx)
                ay -= mu_w * (vel[i, 1] - vdn * rub_ny)

            nclose[i] = ncl
            # nobody strides at full pace inside a pack; slowing the drive
            # target with local density is what meters door discharge
            c_slow = 1.0 - slow_per * (ncl - 2.0)
            if c_slow > 1.0:
                c_slow = 1.0
            elif c_slow < slow_floor:
                c_slow = slow_floor
            ax += (c_slow * v0[i] * ex - vel[i, 0]) / tau
            ay += (c_slow * v0[i] * ey - vel[i, 1]) / tau
            if ncl >= 1:
                c_fac = ncl / 3.0
                if c_fac > 1.0:
                    c_fac = 1.0
                # jitter fades as the agent gets stuck, otherwise blocked
                # agents register phantom speed; the lateral push stays on
                # so face-offs resolve, and it re-rolls every couple of
                # seconds so two mirrored sidesteppers cannot dance in
                # lockstep indefinitely
                s_fac = speed[i] / v0[i]
                if s_fac > 1.0:
                    s_fac = 1.0
                # but a near-isolated standstill (two people blocking each
                # other in the open) keeps fidgeting until someone slips by
                if ncl <= 2 and s_fac < 0.5:
                    s_fac = 0.5
                n1, n2 = _noise2(noise_seed, i, tick)
                n3, _ = _noise2(noise_seed + numba.uint64(0x9E3779B97F4A7C15), i, tick >> 7)
                lat = bias_amp * 0.5 * (bias[i] + 1.5 * n3)
                ax += c_fac * s_fac * noise_amp * n1 - c_fac * lat * ey
                ay += c_fac * s_fac * noise_amp * n2 + c_fac * lat * ex

            vx = vel[i, 0] + dt * ax
            vy = vel[i, 1] + dt * ay
            vmax = vmax_f * v0[i]
            vn = math.hypot(vx, vy)
            if vn > vmax:
                vx *= vmax / vn
                vy *= vmax / vn
            ivx[i] = vx
            ivy[i] = vy
            npx[i] = pos[i, 0] + dt * vx
            npy[i] = pos[i, 1] + dt * vy

        # projection pass: hard non-overlap, then walls; repeated for stability
        for it in range(2):
            for i in range(n):
                if active[i] == 0:
                    continue
                bi = _minor(speed[i], v0[i], b_min, b_max)
                cxi = int((pos[i, 0] - gx0) * ginv)
                cyi = int((pos[i, 1] - gy0) * ginv)
                for oy in range(-1, 2):
                    yy = cyi + oy
                    if yy < 0 or yy >= gny:
                        continue
                    for ox in range(-1, 2):
                        xx = cxi + ox
                        if xx < 0 or xx >= gnx:
                            continue
                        c = xx + gnx * yy
                        for s in range(cell_start[c], cell_start[c + 1]):
                            j = cell_items[s]
                            if j <= i:
                                continue
                            dx = npx[i] - npx[j]
                            dy = npy[i] - npy[j]
                            dd = math.hypot(dx, dy)
                            if dd > 1e-9:
                                ux = dx / dd
                                uy = dy / dd
                            else:
                                ux = 1.0
                                uy = 0.0
                            rr = (_support(speed[i], v0[i], theta[i], ux, uy,
                                           a_min, tau_a, b_min, b_max)
                                  + _support(speed[j], v0[j], theta[j], ux, uy,
                                             a_min, tau_a, b_min, b_max))
                            if dd >= rr:
                                continue
                            push = 0.5 * (rr - dd) * (1.0 + 1e-9)
                            npx[i] += push * ux
                            npy[i] += push * uy
                            npx[j] -= push * ux
                            npy[j] -= push * uy
                for w in range(wall_off[room[i]], wall_off[room[i] + 1]):
                    wx, wy = _seg_nearest(npx[i], npy[i], walls[w, 0], walls[w, 1], walls[w, 2], walls[w, 3])
                    dx = npx[i] - wx
                    dy = npy[i] - wy
                    dd = math.hypot(dx, dy)
                    if dd < bi:
                        if dd > 1e-9:
                            npx[i] = wx + dx / dd * bi
                            npy[i] = wy + dy / dd * bi
                        else:
                            # dead centre on the wall: push back toward the previous position
                            bx = pos[i, 0] - wx
                            by = pos[i, 1] - wy
                            bn = math.hypot(bx, by)
                            if bn > 1e-9:
                                npx[i] = wx + bx / bn * bi
                                npy[i] = wy + by / bn * bi

        # cap the net displacement at the clamp speed (projection pushes
        # otherwise leak unbounded speeds), then re-satisfy wall constraints
        for i in range(n):
            if active[i] == 0:
                continue
            dx = npx[i] - pos[i, 0]
            dy = npy[i] - pos[i, 1]
            dd = math.hypot(dx, dy)
            lim = vmax_f * v0[i] * dt
            if dd > lim:
                sc = lim / dd
                npx[i] = pos[i, 0] + dx * sc
                npy[i] = pos[i, 1] + dy * sc
                bi = _minor(speed[i], v0[i], b_min, b_max)
                for w in range(wall_off[room[i]], wall_off[room[i] + 1]):
                    wx, wy = _seg_nearest(npx[i], npy[i], walls[w, 0], walls[w, 1], walls[w, 2], walls[w, 3])
                    dx = npx[i] - wx
                    dy = npy[i] - wy
                    dn = math.hypot(dx, dy)
                    if 1e-9 < dn < bi:
                        npx[i] = wx + dx / dn * bi
                        npy[i] = wy + dy / dn * bi

        # commit: displacement-derived velocity, crossings, clocks, events
        tick += 1
        for i in range(n):
            if active[i] == 0:
                continue
            if not (math.isfinite(npx[i]) and math.isfinite(npy[i]) and math.isfinite(ivx[i])):
                ev[i] |= EV_BLOWUP
                events |= EV_BLOWUP
                continue
            # velocity is what the force law produced, not the projected
            # displacement: feeding projection pushes back into momentum
            # spins packed crowds into a mill that never slows down
            vx = ivx[i]
            vy = ivy[i]
            sp = math.hypot(vx, vy)
            vel[i, 0] = vx
            vel[i, 1] = vy
            if sp > 0.05:
                theta[i] = math.atan2(vy, vx)
            cumspeed[i] += sp * dt

            r = room[i]
            for c in range(cross_off[r], cross_off[r + 1]):
                if _segs_cross(
                    pos[i, 0], pos[i, 1], npx[i], npy[i],
                    cross_segs[c, 0], cross_segs[c, 1], cross_segs[c, 2], cross_segs[c, 3],
                ):
                    crossed_node[i] = cross_node[c]
                    if cross_other[c] < 0:
                        active[i] = 0
                        evac_tick[i] = tick
                        ev[i] |= EV_EVAC
                        events |= EV_EVAC
                    else:
                        room[i] = cross_other[c]
                        ev[i] |= EV_ROOM
                        events |= EV_ROOM
                    break

            pos[i, 0] = npx[i]
            pos[i, 1] = npy[i]
            speed[i] = sp
            # threshold comparisons run on a short moving average; the raw
            # per-tick reading flickers with every contact resolution
            sa = sspeed[i] + alpha * (sp - sspeed[i])
            sspeed[i] = sa
            if active[i] == 0:
                continue

            if sa <= v_min:
                below_route[i] += 1
                below_jam[i] += 1
                if injam[i] == 1:
                    jam_ticks[i] += 1
                elif below_jam[i] == jam_q:
                    injam[i] = 1
                    jam_ticks[i] += jam_q
            else:
                below_route[i] = 0
                below_jam[i] = 0
                injam[i] = 0

            if ev[i] & EV_ROOM:
                continue
            if watch_arrive[i] == 1:
                dx = pos[i, 0] - anchors[dest[i], 0]
                dy = pos[i, 1] - anchors[dest[i], 1]
                if math.hypot(dx, dy) <= d_min:
                    ev[i] |= EV_ARRIVE
                    events |= EV_ARRIVE
            if below_route[i] >= tmin_ticks[i]:
                ev[i] |= EV_JAM
                events |= EV_JAM

        if events != 0:
            break

    return tick, events
