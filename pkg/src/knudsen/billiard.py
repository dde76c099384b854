"""Specular billiard dynamics inside one periodic cell.

A particle enters through the reference line y = c with direction cosine x
(horizontal velocity component), bounces specularly off the boundary, wraps
across the cell sides r = 0 and r = period, and leaves when it crosses the
reference line upward.  The exit cosine is its horizontal velocity then.

`trace_batch` is the vectorized workhorse used to build transition matrices;
`trace_cell` traces one particle and records every event.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (CornerSignal, GeometryError, NonterminatingTrajectoryError,
                     TangencySignal)
from .geometry import Arc, Profile, Segment

EPS_T = 1e-12          # minimal travel time between events
TANGENCY_TOL = 1e-12
CORNER_TOL = 1e-12
DISC_CLAMP = -1e-14
MAX_COLLISIONS = 10_000

# status codes from trace_batch
OK, CORNER, TANGENT, NONTERMINATING, LEAK = 0, 1, 2, 3, 4
STATUS_NAMES = {OK: "ok", CORNER: "corner", TANGENT: "tangency",
                NONTERMINATING: "nonterminating", LEAK: "leak"}

# hit classes, used to lift P_M to within-bin fluctuations
GENERIC, PURE_IDENTITY, PURE_FLIP = 0, 1, -1


@dataclass(frozen=True)
class ParticleState:
    r: float
    x: float
    sign: str = "inbound"

    def __post_init__(self):
        if not -1 < self.x < 1:
            raise ValueError(f"direction cosine must lie in (-1, 1), got {self.x}")


@dataclass
class CellTrajectory:
    entry: ParticleState
    exit: ParticleState
    collisions: list = field(default_factory=list)  # (point, piece index)
    wraps: int = 0
    events: list = field(default_factory=list)      # (kind, point, direction)

    @property
    def n_collisions(self) -> int:
        return len(self.collisions)


def reflect(direction, normal) -> np.ndarray:
    """Specular image v - 2<v,n>n; refuses near-tangent incidence."""
    v = np.asarray(direction, float)
    n = np.asarray(normal, float)
    dot = float(v @ n)
    if abs(dot) < TANGENCY_TOL:
        raise TangencySignal(f"grazing incidence, <v,n> = {dot:.3e}")
    return v - 2.0 * dot * n


class _Tables:
    """Flat arrays describing a profile, precomputed once per trace."""

    def __init__(self, profile: Profile):
        self.profile = profile
        self.period = profile.period
        self.c = profile.ref_height
        pieces = profile.pieces
        n = len(pieces)
        self.pieces = pieces
        self.is_arc = np.array([isinstance(p, Arc) for p in pieces])
        # 1 for horizontal segment, 2 for vertical segment, 0 otherwise
        self.seg_kind = np.array([
            (1 if p.is_horizontal else 2 if p.is_vertical else 0) if isinstance(p, Segment) else 0
            for p in pieces])
        # which endpoints are true corners (normal jumps across the junction)
        self.corner_start = np.zeros(n, bool)
        self.corner_end = np.zeros(n, bool)
        for i in range(n):
            j = (i + 1) % n
            a, b = pieces[i], pieces[j]
            na, nb = a.normal(a.end), b.normal(b.start)
            jump = np.max(np.abs(na - nb)) > 1e-9
            self.corner_end[i] = jump
            self.corner_start[j] = jump
        verts = [p.end for i, p in enumerate(pieces) if self.corner_end[i]]
        self.corner_vertices = np.array(verts).reshape(-1, 2)
        # lowest point of the wall; a particle below it has slipped through
        self.y_min = float(profile.sample_points(256)[:, 1].min()) - 1e-6 * self.period

    def near_corner(self, px, py, tol=1e-9):
        if self.corner_vertices.size == 0:
            return np.zeros(px.shape, bool)
        out = np.zeros(px.shape, bool)
        for vx, vy in self.corner_vertices:
            for shift in (-self.period, 0.0, self.period):
                out |= np.hypot(px - vx - shift, py - vy) < tol
        return out


def _arc_hits(arc: Arc, px, py, dx, dy, is_last):
    """Travel time to a gas-side hit on `arc`, inf where there is none.

    Returns (t, corner_flag).  For the arc just hit, only the far root is
    admissible (the near root is the current point).
    """
    cx, cy = arc.center
    R = arc.radius
    qx, qy = px - cx, py - cy
    b = dx * qx + dy * qy
    cc = qx * qx + qy * qy - R * R
    disc = b * b - cc
    disc = np.where((disc < 0) & (disc > DISC_CLAMP), 0.0, disc)
    real = disc >= 0
    sq = np.sqrt(np.where(real, disc, 0.0))
    t_best = np.full(px.shape, np.inf)
    corner = np.zeros(px.shape, bool)
    lo = arc.theta0 if arc.span > 0 else arc.theta1
    width = abs(arc.span)
    tol_ang = CORNER_TOL / R
    roots = (-b - sq, -b + sq)
    for k, t in enumerate(roots):
        if k == 0:
            t = np.where(is_last, -np.inf, t)
        else:
            # the current point is one root; the other is exactly -2b
            t = np.where(is_last, -2.0 * b, t)
        with np.errstate(invalid="ignore"):
            hx, hy = px + t * dx, py + t * dy
        ang = np.arctan2(hy - cy, hx - cx)
        u = np.mod(ang - lo, 2 * math.pi)
        u = np.where(u > width + tol_ang, np.where(2 * math.pi - u < tol_ang, 0.0, u), u)
        inside = u <= width + tol_ang
        nx, ny = (cx - hx) / R, (cy - hy) / R
        if arc.span < 0:
            nx, ny = -nx, -ny
        incoming = dx * nx + dy * ny <= 0
        ok = real & (t > EPS_T) & inside & incoming & (t < t_best)
        near_lo = u < tol_ang
        near_hi = width - u < tol_ang
        t_best = np.where(ok, t, t_best)
        corner = np.where(ok, near_lo | near_hi, corner)
    return t_best, corner


def _segment_hits(seg: Segment, px, py, dx, dy, is_last):
    (x0, y0), (x1, y1) = seg.p0, seg.p1
    ex, ey = x1 - x0, y1 - y0
    L = seg.length
    nx, ny = -ey / L, ex / L
    dn = dx * nx + dy * ny
    denom = dx * ey - dy * ex
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t = ((x0 - px) * ey - (y0 - py) * ex) / denom
        s = ((x0 - px) * dy - (y0 - py) * dx) / denom
    # a particle resting on the reference line may start on a flat top,
    # so t = 0 is admissible for approach from the gas side
    ok = (~is_last) & (dn < 0) & (t > -EPS_T) & (s >= -CORNER_TOL / L) & (s <= 1 + CORNER_TOL / L)
    t = np.where(ok, np.maximum(t, 0.0), np.inf)
    near = (np.abs(s) * L < CORNER_TOL, np.abs(1 - s) * L < CORNER_TOL)
    return t, near


@dataclass(frozen=True)
class Hit:
    kind: str                    # "boundary", "side", or "exit"
    point: tuple[float, float]
    piece_index: int             # -1 unless kind == "boundary"
    t: float


def _candidates(T: _Tables, px, py, dx, dy, last):
    """Earliest boundary hit per particle: (t, piece, corner flag)."""
    m = px.size
    t_hit = np.full(m, np.inf)
    which = np.full(m, -1, np.int64)
    corner = np.zeros(m, bool)
    for i, piece in enumerate(T.pieces):
        is_last = last == i
        if isinstance(piece, Arc):
            t, cflag = _arc_hits(piece, px, py, dx, dy, is_last)
            cflag = cflag & (T.corner_start[i] | T.corner_end[i])
        else:
            t, (n0, n1) = _segment_hits(piece, px, py, dx, dy, is_last)
            cflag = (n0 & T.corner_start[i]) | (n1 & T.corner_end[i])
        better = t < t_hit
        t_hit = np.where(better, t, t_hit)
        which = np.where(better, i, which)
        corner = np.where(better, cflag, corner)
    return t_hit, which, corner


def first_hit(profile: Profile, origin, direction, last_piece: int = -1) -> Hit:
    """Earliest event along the ray: boundary collision, side crossing, or exit.

    `last_piece` is the piece the particle is currently resting on, if any.
    """
    T = _Tables(profile)
    px, py = (np.array([float(v)]) for v in origin)
    dx, dy = (np.array([float(v)]) for v in direction)
    t_hit, which, corner = _candidates(T, px, py, dx, dy, np.array([last_piece]))
    t_hit, which = float(t_hit[0]), int(which[0])
    d = (float(dx[0]), float(dy[0]))
    o = (float(px[0]), float(py[0]))
    t_side = math.inf
    if d[0] > 0:
        t_side = (T.period - o[0]) / d[0]
    elif d[0] < 0:
        t_side = -o[0] / d[0]
    t_ref = (T.c - o[1]) / d[1] if d[1] > 0 else math.inf
    t_side = t_side if t_side >= 0 else math.inf
    t_ref = t_ref if t_ref >= 0 else math.inf
    t = min(t_hit, t_side, t_ref)
    if not math.isfinite(t):
        raise GeometryError(f"ray from {o} along {d} leaves the cell without an event")
    p = (o[0] + t * d[0], o[1] + t * d[1])
    if t_ref <= t_hit and t_ref <= t_side:
        return Hit("exit", p, -1, t)
    if t_side < t_hit:
        return Hit("side", p, -1, t)
    if corner[0]:
        raise CornerSignal(f"ray from {o} hits a corner at {p}")
    n = T.pieces[which].normal(np.array(p))
    if abs(d[0] * n[0] + d[1] * n[1]) < TANGENCY_TOL:
        raise TangencySignal(f"ray from {o} grazes the boundary at {p}")
    return Hit("boundary", p, which, t)


@dataclass
class BatchResult:
    x_out: np.ndarray
    r_out: np.ndarray
    collisions: np.ndarray
    wraps: np.ndarray
    status: np.ndarray
    hit_class: np.ndarray

    @property
    def ok(self) -> np.ndarray:
        return self.status == OK


def trace_batch(profile: Profile, r, x, max_collisions: int = MAX_COLLISIONS,
                _tables: _Tables | None = None, _record=None) -> BatchResult:
    """Trace many entries (r_k, x_k) at once.

    Singular trajectories are not raised; they come back with a nonzero
    status so the caller can resample.
    """
    T = _tables or _Tables(profile)
    r = np.atleast_1d(np.asarray(r, float))
    x = np.atleast_1d(np.asarray(x, float))
    r, x = np.broadcast_arrays(r, x)
    n = r.size
    period, c = T.period, T.c
    px = np.mod(r.ravel(), period).astype(float)
    py = np.full(n, c)
    dx = x.ravel().astype(float).copy()
    dy = -np.sqrt(1.0 - dx * dx)

    x_out = np.full(n, np.nan)
    r_out = np.full(n, np.nan)
    ncol = np.zeros(n, np.int64)
    nwrap = np.zeros(n, np.int64)
    status = np.full(n, OK, np.int8)
    last = np.full(n, -1, np.int64)
    generic = np.zeros(n, bool)
    n_vert = np.zeros(n, np.int64)

    # entries on a corner vertex have no well-defined first event
    status[T.near_corner(px, py)] = CORNER
    act = np.flatnonzero(status == OK)
    while act.size:
        apx, apy, adx, ady, alast = px[act], py[act], dx[act], dy[act], last[act]
        t_hit, which, corner = _candidates(T, apx, apy, adx, ady, alast)

        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            t_side = np.where(adx > 0, (period - apx) / adx,
                              np.where(adx < 0, -apx / adx, np.inf))
            t_ref = np.where(ady > 0, (c - apy) / ady, np.inf)
        t_side = np.where(t_side >= 0, t_side, np.inf)
        t_ref = np.where(t_ref >= 0, t_ref, np.inf)

        exit_now = (t_ref <= t_hit) & (t_ref <= t_side) & np.isfinite(t_ref)
        wrap_now = ~exit_now & (t_side < t_hit) & np.isfinite(t_side)
        hit_now = ~exit_now & ~wrap_now & np.isfinite(t_hit)
        leak = ~(exit_now | wrap_now | hit_now)

        # exits
        idx = act[exit_now]
        x_out[idx] = adx[exit_now]
        r_out[idx] = np.mod(apx[exit_now] + t_ref[exit_now] * adx[exit_now], period)
        if _record is not None and exit_now.any():
            _record("exit", apx[exit_now] + t_ref[exit_now] * adx[exit_now], c, adx[exit_now], ady[exit_now], -1)

        # wraps: move to the opposite side, velocity unchanged
        idx = act[wrap_now]
        ts = t_side[wrap_now]
        wx = apx[wrap_now] + ts * adx[wrap_now]
        wy = apy[wrap_now] + ts * ady[wrap_now]
        if _record is not None and wrap_now.any():
            _record("wrap", wx, wy, adx[wrap_now], ady[wrap_now], -1)
        px[idx] = np.where(adx[wrap_now] > 0, 0.0, period)
        py[idx] = wy
        nwrap[idx] += 1
        below = wy < T.y_min
        status[idx[below]] = LEAK
        status[idx[nwrap[idx] > max_collisions]] = NONTERMINATING
        # a wrapped particle may sit on the first or last piece; allow any hit
        last[idx] = -1

        # collisions
        idx = act[hit_now]
        th = t_hit[hit_now]
        hx = apx[hit_now] + th * adx[hit_now]
        hy = apy[hit_now] + th * ady[hit_now]
        hd_x, hd_y = adx[hit_now], ady[hit_now]
        wp = which[hit_now]
        nx = np.empty(idx.size)
        ny = np.empty(idx.size)
        for i, piece in enumerate(T.pieces):
            sel = wp == i
            if not sel.any():
                continue
            if isinstance(piece, Arc):
                cx, cy = piece.center
                ux, uy = (cx - hx[sel]) / piece.radius, (cy - hy[sel]) / piece.radius
                if piece.span < 0:
                    ux, uy = -ux, -uy
                nx[sel], ny[sel] = ux, uy
            else:
                nn = piece.normal()
                nx[sel], ny[sel] = nn[0], nn[1]
        dot = hd_x * nx + hd_y * ny
        tangent = np.abs(dot) < TANGENCY_TOL
        cor = corner[hit_now]
        ndx = hd_x - 2 * dot * nx
        ndy = hd_y - 2 * dot * ny
        # renormalize to keep unit speed over long trajectories
        norm = np.hypot(ndx, ndy)
        ndx, ndy = ndx / norm, ndy / norm
        # axis-aligned walls flip one component exactly
        kind = T.seg_kind[wp]
        ndx = np.where(kind == 1, hd_x, np.where(kind == 2, -hd_x, ndx))
        ndy = np.where(kind == 1, -hd_y, np.where(kind == 2, hd_y, ndy))
        dx[idx], dy[idx] = ndx, ndy
        px[idx], py[idx] = hx, hy
        last[idx] = wp
        ncol[idx] += 1
        generic[idx] |= kind == 0
        n_vert[idx] += kind == 2
        if _record is not None and hit_now.any():
            _record("collision", hx, hy, dx[idx], dy[idx], wp)

        status[idx[cor]] = CORNER
        status[idx[tangent & ~cor]] = TANGENT
        # a particle sitting on a corner vertex has no well-defined next event
        at_corner = T.near_corner(apx[leak], apy[leak])
        status[act[leak]] = np.where(at_corner, CORNER, LEAK)
        over = idx[ncol[idx] > max_collisions]
        status[over] = np.where(status[over] == OK, NONTERMINATING, status[over])

        alive = wrap_now | hit_now
        act = act[alive]
        act = act[status[act] == OK]

    hit_class = np.where(generic, GENERIC,
                         np.where(n_vert % 2 == 1, PURE_FLIP, PURE_IDENTITY)).astype(np.int8)
    bad = status != OK
    x_out[bad] = np.nan
    shape = r.shape
    return BatchResult(x_out.reshape(shape), r_out.reshape(shape), ncol.reshape(shape),
                       nwrap.reshape(shape), status.reshape(shape), hit_class.reshape(shape))


def trace_cell(profile: Profile, r: float, x: float,
               max_collisions: int = MAX_COLLISIONS) -> CellTrajectory:
    """Trace a single particle, recording every collision and wrap."""
    entry = ParticleState(float(r) % profile.period, float(x), "inbound")
    events = [("entry", (entry.r, profile.ref_height), (x, -math.sqrt(1 - x * x)))]
    collisions = []

    def record(kind, ex, ey, vx, vy, piece):
        for k in range(np.size(ex)):
            p = (float(np.atleast_1d(ex)[k]), float(np.atleast_1d(ey)[k]))
            v = (float(np.atleast_1d(vx)[k]), float(np.atleast_1d(vy)[k]))
            events.append((kind, p, v))
            if kind == "collision":
                collisions.append((p, int(np.atleast_1d(piece)[k])))

    res = trace_batch(profile, [entry.r], [entry.x], max_collisions, _record=record)
    st = int(res.status[0])
    if st == CORNER:
        raise CornerSignal(f"trajectory from r={r}, x={x} hits a corner")
    if st == TANGENT:
        raise TangencySignal(f"trajectory from r={r}, x={x} grazes the boundary")
    if st == NONTERMINATING:
        raise NonterminatingTrajectoryError(
            f"trajectory from r={r}, x={x} exceeded {max_collisions} collisions")
    if st == LEAK:
        raise GeometryError(f"trajectory from r={r}, x={x} escaped the cell")
    xo = float(res.x_out[0])
    if not -1 < xo < 1:
        # exact grazing exit; treat like a tangency
        raise TangencySignal(f"exit cosine {xo} is not in (-1, 1)")
    exit_state = ParticleState(float(res.r_out[0]), xo, "outbound")
    return CellTrajectory(entry, exit_state, collisions, int(res.wraps[0]), events)


def _jitter(n, rng, period):
    return rng.uniform(-0.5, 0.5, n) * 1e-7 * period


def trace_resampled(profile: Profile, r, x, rng=None, max_tries: int = 20,
                    tables: _Tables | None = None):
    """trace_batch with singular trajectories retried at jittered positions.

    Returns (result, n_rejected).  Jitter is 1e-7 of the period, far below
    any bin resolution used here, so the sampled law is unaffected.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    T = tables or _Tables(profile)
    r = np.array(r, float)
    x = np.array(x, float)
    res = trace_batch(profile, r, x, _tables=T)
    rejected = 0
    for _ in range(max_tries):
        bad = np.flatnonzero(~res.ok)
        if bad.size == 0:
            break
        rejected += bad.size
        rr = r.ravel()[bad] + _jitter(bad.size, rng, profile.period)
        sub = trace_batch(profile, rr, x.ravel()[bad], _tables=T)
        for name in ("x_out", "r_out", "collisions", "wraps", "status", "hit_class"):
            getattr(res, name).ravel()[bad] = getattr(sub, name)
    bad = ~res.ok
    if bad.any():
        codes = sorted({STATUS_NAMES[int(s)] for s in res.status[bad]})
        raise GeometryError(f"{int(bad.sum())} trajectories could not be traced after resampling ({codes})")
    return res, rejected


def single_collision_fraction(profile: Profile, x: float, N: int) -> float:
    """Fraction of N evenly spaced entry positions whose trajectory hits the wall once."""
    return single_collision_stats(profile, x, N)[0]


def single_collision_stats(profile: Profile, x: float, N: int):
    """(fraction, rejected) for single_collision_fraction."""
    if N < 1:
        raise ValueError("N must be at least 1")
    r = (np.arange(N) + 0.5) * profile.period / N
    res, rejected = trace_resampled(profile, r, np.full(N, float(x)))
    return float(np.mean(res.collisions == 1)), rejected


def dump_trajectory_csv(traj: CellTrajectory, path) -> None:
    """Write a trajectory's events as CSV rows (index, kind, point, direction)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["event", "kind", "px", "py", "vx", "vy"])
        for k, (kind, p, v) in enumerate(traj.events):
            w.writerow([k, kind, repr(p[0]), repr(p[1]), repr(v[0]), repr(v[1])])
