"""Periodic billiard cells built from circular arcs and line segments.

A cell boundary is an ordered chain of pieces running left to right over one
period, with the gas above it.  Walking along the chain, the gas is always on
the left, which fixes the inward normal of every piece: for a segment it is
the tangent rotated by +90 degrees, for an arc it points to the centre when
the arc is traversed counter-clockwise (positive angular span) and away from
it otherwise.

The built-in families all use arcs that bulge downward, away from the channel
(cups as seen from the gas).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np
from scipy import integrate

from .errors import CornerSignal, GeometryError, ParameterError

CHAIN_TOL = 1e-12
CORNER_TOL = 1e-12


@dataclass(frozen=True)
class Arc:
    center: tuple[float, float]
    radius: float
    theta0: float
    span: float  # signed; > 0 means counter-clockwise, gas inside the circle

    kind = "arc"

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError(f"arc radius must be positive, got {self.radius}")
        if self.span == 0 or abs(self.span) > 2 * math.pi:
            raise GeometryError(f"arc angular span must be nonzero, got {self.span}")

    @property
    def theta1(self) -> float:
        return self.theta0 + self.span

    def point(self, theta: float) -> np.ndarray:
        cx, cy = self.center
        return np.array([cx + self.radius * math.cos(theta), cy + self.radius * math.sin(theta)])

    @property
    def start(self) -> np.ndarray:
        return self.point(self.theta0)

    @property
    def end(self) -> np.ndarray:
        return self.point(self.theta1)

    @property
    def gas_inside(self) -> bool:
        return self.span > 0

    @property
    def length(self) -> float:
        return abs(self.span) * self.radius

    def normal(self, p) -> np.ndarray:
        q = np.asarray(p, float) - np.asarray(self.center)
        q = q / np.hypot(*q)
        return -q if self.gas_inside else q

    def y_max(self) -> float:
        lo, hi = sorted((self.theta0, self.theta1))
        ys = [self.start[1], self.end[1]]
        # top of the circle inside the swept range
        k = math.ceil((lo - math.pi / 2) / (2 * math.pi))
        if math.pi / 2 + 2 * math.pi * k <= hi:
            ys.append(self.center[1] + self.radius)
        return max(ys)

    def param_of(self, p) -> float | None:
        """Arc-length offset of point p from the start, or None if p is off the arc."""
        q = np.asarray(p, float) - np.asarray(self.center)
        if abs(np.hypot(*q) - self.radius) > 1e-9:
            return None
        ang = math.atan2(q[1], q[0])
        lo = self.theta0 if self.span > 0 else self.theta1
        u = (ang - lo) % (2 * math.pi)
        if u > abs(self.span) + 1e-9 / self.radius:
            if 2 * math.pi - u < 1e-9 / self.radius:
                u = 0.0
            else:
                return None
        s = u * self.radius
        return s if self.span > 0 else self.length - s

    def mirrored(self, period: float) -> "Arc":
        cx, cy = self.center
        # r -> period - r maps angle t to pi - t and reverses traversal
        return Arc((period - cx, cy), self.radius, math.pi - self.theta1, self.span)

    def to_dict(self) -> dict:
        return {"kind": "arc", "center": list(self.center), "radius": self.radius,
                "theta0": self.theta0, "span": self.span}


@dataclass(frozen=True)
class Segment:
    p0: tuple[float, float]
    p1: tuple[float, float]

    kind = "segment"

    def __post_init__(self):
        if math.dist(self.p0, self.p1) == 0:
            raise GeometryError("segment endpoints must be distinct")

    @property
    def start(self) -> np.ndarray:
        return np.array(self.p0, float)

    @property
    def end(self) -> np.ndarray:
        return np.array(self.p1, float)

    @property
    def length(self) -> float:
        return math.dist(self.p0, self.p1)

    @property
    def is_horizontal(self) -> bool:
        return self.p0[1] == self.p1[1]

    @property
    def is_vertical(self) -> bool:
        return self.p0[0] == self.p1[0]

    def normal(self, p=None) -> np.ndarray:
        t = (self.end - self.start) / self.length
        return np.array([-t[1], t[0]])

    def y_max(self) -> float:
        return max(self.p0[1], self.p1[1])

    def param_of(self, p) -> float | None:
        e = self.end - self.start
        q = np.asarray(p, float) - self.start
        s = float(np.dot(q, e)) / self.length
        perp = abs(float(q[0] * e[1] - q[1] * e[0])) / self.length
        if perp > 1e-9 or s < -1e-9 or s > self.length + 1e-9:
            return None
        return min(max(s, 0.0), self.length)

    def mirrored(self, period: float) -> "Segment":
        (x0, y0), (x1, y1) = self.p0, self.p1
        return Segment((period - x1, y1), (period - x0, y0))

    def to_dict(self) -> dict:
        return {"kind": "segment", "p0": list(self.p0), "p1": list(self.p1)}


BoundaryPiece = Union[Arc, Segment]


def piece_from_dict(d: dict) -> BoundaryPiece:
    kind = d.get("kind")
    if kind == "arc":
        return Arc(tuple(d["center"]), float(d["radius"]), float(d["theta0"]), float(d["span"]))
    if kind == "segment":
        return Segment(tuple(d["p0"]), tuple(d["p1"]))
    raise ParameterError(f"unknown boundary piece kind {kind!r}")


@dataclass(frozen=True)
class Profile:
    pieces: tuple[BoundaryPiece, ...]
    period: float = 1.0
    symmetric: bool = True
    family: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.pieces:
            raise GeometryError("profile needs at least one boundary piece")
        object.__setattr__(self, "pieces", tuple(self.pieces))
        for a, b in zip(self.pieces, self.pieces[1:]):
            if np.max(np.abs(a.end - b.start)) > CHAIN_TOL:
                raise GeometryError(f"pieces do not chain: {a.end} -> {b.start}")
        drift = self.pieces[-1].end - self.pieces[0].start - np.array([self.period, 0.0])
        if np.max(np.abs(drift)) > CHAIN_TOL:
            raise GeometryError("chain must close up to a translation by one period")
        if self.symmetric and not self._is_mirror_symmetric():
            raise GeometryError("profile flagged symmetric but is not invariant under r -> period - r")

    @property
    def y_max(self) -> float:
        return max(p.y_max() for p in self.pieces)

    @property
    def ref_height(self) -> float:
        """Height c of the reference line (the cell height)."""
        return self.y_max

    @property
    def tag(self) -> str:
        if not self.params:
            return self.family
        inner = ",".join(f"{k}={v:g}" for k, v in sorted(self.params.items()))
        return f"{self.family}({inner})"

    def sample_points(self, per_piece: int = 64) -> np.ndarray:
        pts = []
        for p in self.pieces:
            if isinstance(p, Arc):
                th = p.theta0 + p.span * np.linspace(0, 1, per_piece)
                pts.append(np.column_stack([p.center[0] + p.radius * np.cos(th),
                                            p.center[1] + p.radius * np.sin(th)]))
            else:
                s = np.linspace(0, 1, per_piece)[:, None]
                pts.append(p.start + s * (p.end - p.start))
        return np.vstack(pts)

    def locate(self, point) -> tuple[int, float]:
        """Index of the piece containing `point` and the arc-length offset on it."""
        for i, p in enumerate(self.pieces):
            s = p.param_of(point)
            if s is not None:
                return i, s
        raise GeometryError(f"point {tuple(point)} is not on the boundary")

    def _is_mirror_symmetric(self) -> bool:
        mirrored = self.sample_points(16).copy()
        mirrored[:, 0] = self.period - mirrored[:, 0]
        for q in mirrored:
            q = q.copy()
            if q[0] < -CHAIN_TOL:
                q[0] += self.period
            ok = False
            for shift in (0.0, self.period, -self.period):
                qq = q + np.array([shift, 0.0])
                if any(p.param_of(qq) is not None for p in self.pieces):
                    ok = True
                    break
            if not ok:
                return False
        return True

    def to_dict(self) -> dict:
        if self.family in FAMILIES:
            return {"family": self.family, **self.params}
        return {"family": "custom", "period": self.period, "symmetric": self.symmetric,
                "pieces": [p.to_dict() for p in self.pieces]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def profile_from_dict(d: dict) -> Profile:
    """Build a profile from its serialized form (family + parameters, or explicit pieces)."""
    d = dict(d)
    family = d.pop("family", None)
    if family is None:
        raise ParameterError("profile description needs a 'family' key")
    if family == "custom":
        unknown = set(d) - {"period", "symmetric", "pieces"}
        if unknown:
            raise ParameterError(f"unknown keys for custom profile: {sorted(unknown)}")
        pieces = tuple(piece_from_dict(p) for p in d["pieces"])
        return Profile(pieces, float(d.get("period", 1.0)), bool(d.get("symmetric", True)))
    try:
        builder = FAMILIES[family]
    except KeyError:
        raise ParameterError(f"unknown profile family {family!r}") from None
    try:
        return builder(**d)
    except TypeError as exc:
        raise ParameterError(f"bad parameters for {family}: {exc}") from None


def profile_from_json(text: str) -> Profile:
    try:
        return profile_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ParameterError(f"profile file is not valid JSON: {exc}") from None


# ---------------------------------------------------------------------------
# families


def _cup(a: float, b: float, y: float, radius: float) -> Arc:
    """Downward arc with chord from (a, y) to (b, y)."""
    half = 0.5 * (b - a)
    if radius < half * (1 - 1e-15):
        raise GeometryError(f"radius {radius} cannot span a chord of {2 * half}")
    phi = math.asin(min(half / radius, 1.0))
    cy = y + math.sqrt(max(radius * radius - half * half, 0.0))
    return Arc((0.5 * (a + b), cy), radius, -math.pi / 2 - phi, 2 * phi)


def _snap_chain(pieces: list) -> tuple:
    """Drop zero-length segments."""
    return tuple(p for p in pieces if p is not None)


def _seg(p0, p1):
    if math.dist(p0, p1) == 0:
        return None
    return Segment(tuple(map(float, p0)), tuple(map(float, p1)))


def make_flat(period: float = 1.0) -> Profile:
    return Profile((Segment((0.0, 0.0), (period, 0.0)),), period, True, "flat", {})


def make_bumps(K: float, period: float = 1.0) -> Profile:
    """One circular cup per period, chord = period, radius = period / K."""
    if not (0 < K <= 2):
        raise ParameterError(f"curvature K must lie in (0, 2], got {K}")
    arc = _cup(0.0, period, 0.0, period / K)
    return Profile((arc,), period, True, "bumps", {"K": float(K)})


def make_mixture(alpha: float, period: float = 1.0) -> Profile:
    """Semicircular cup over a fraction alpha of the opening, flat elsewhere."""
    if not (0 < alpha <= 1):
        raise ParameterError(f"alpha must lie in (0, 1], got {alpha}")
    a = 0.5 * (1 - alpha) * period
    b = period - a
    if alpha == 1:
        a, b = 0.0, period
    pieces = _snap_chain([_seg((0.0, 0.0), (a, 0.0)), _cup(a, b, 0.0, 0.5 * (b - a)),
                          _seg((b, 0.0), (period, 0.0))])
    return Profile(pieces, period, True, "mixture", {"alpha": float(alpha)})


def make_two_bumps(d: float = 0.0, K_big: float = 1.0, K_small: float = 0.5,
                   period: float = 1.0) -> Profile:
    """Two cups of different curvature alternating along the wall.

    The K_big cup sits in the middle of the cell; the K_small cup is split
    across the cell sides and raised by d.  Each cup spans half a period and
    its curvature is measured against its own chord.  Vertical steps join the
    rims when d != 0.
    """
    for K in (K_big, K_small):
        if not (0 < K <= 2):
            raise ParameterError(f"bump curvatures must lie in (0, 2], got {K}")
    if not math.isfinite(d) or abs(d) >= period:
        raise GeometryError(f"height offset d={d} outside (-period, period)")
    q = 0.25 * period
    big = _cup(q, 3 * q, 0.0, 2 * q / K_big)
    small = _cup(-q, q, d, 2 * q / K_small)
    phi = small.span / 2
    right_half = Arc((0.0, small.center[1]), small.radius, -math.pi / 2, phi)
    left_half = Arc((period, small.center[1]), small.radius, -math.pi / 2 - phi, phi)
    # re-anchor steps on the exact arc endpoints so the chain closes to 1e-16
    pieces = _snap_chain([
        right_half,
        _seg(tuple(right_half.end), (q, 0.0)),
        big,
        _seg((3 * q, 0.0), tuple(left_half.start)),
        left_half,
    ])
    return Profile(pieces, period, True, "two-bumps",
                   {"d": float(d), "K_big": float(K_big), "K_small": float(K_small)})


def make_bumps_with_wall(w: float, d: float = 0.0, R: float = 0.5,
                         period: float = 1.0) -> Profile:
    """Cup of radius R between flat-topped walls of total width w and height d.

    d > 0 raises a pillar above the cup rims, d < 0 cuts a notch below them.
    """
    if not (0 <= w < 1):
        raise ParameterError(f"relative wall width w must lie in [0, 1), got {w}")
    if not R > 0:
        raise ParameterError(f"radius must be positive, got {R}")
    if not math.isfinite(d) or abs(d) >= period:
        raise GeometryError(f"wall height d={d} outside (-period, period)")
    if w == 0:
        arc = _cup(0.0, period, 0.0, R)
        return Profile((arc,), period, True, "bumps-with-wall", {"w": 0.0, "d": float(d), "R": float(R)})
    a, b = 0.5 * w * period, period - 0.5 * w * period
    if (b - a) > 2 * R * (1 + 1e-15):
        raise GeometryError(f"cup of radius {R} cannot fill an opening of {b - a}")
    pieces = _snap_chain([
        _seg((0.0, d), (a, d)),
        _seg((a, d), (a, 0.0)),
        _cup(a, b, 0.0, R),
        _seg((b, 0.0), (b, d)),
        _seg((b, d), (period, d)),
    ])
    return Profile(pieces, period, True, "bumps-with-wall", {"w": float(w), "d": float(d), "R": float(R)})


FAMILIES = {
    "flat": make_flat,
    "bumps": make_bumps,
    "mixture": make_mixture,
    "two-bumps": make_two_bumps,
    "bumps-with-wall": make_bumps_with_wall,
}


# ---------------------------------------------------------------------------
# flatness


@dataclass(frozen=True)
class FlatnessResult:
    h: float
    quadrature_error_estimate: float
    skipped_vertical: int = 0

    def __float__(self):
        return self.h


def flatness_h(profile: Profile) -> FlatnessResult:
    """Mean squared horizontal component of the boundary normal, per unit r.

    Arcs are integrated in their angle parameter, where the integrand
    sin^2 * |cos| * R is smooth even at vertical tangents.  Vertical segments
    carry no r-measure and are skipped.
    """
    total = 0.0
    err = 0.0
    skipped = 0
    for p in profile.pieces:
        if isinstance(p, Segment):
            dx = p.p1[0] - p.p0[0]
            if dx == 0:
                skipped += 1
                continue
            nbar2 = ((p.p1[1] - p.p0[1]) / p.length) ** 2
            total += nbar2 * abs(dx)
            continue
        lo, hi = sorted((p.theta0, p.theta1))
        # horizontal normal component is cos(t); dr = R |sin(t)| dt
        val, e = integrate.quad(lambda t: math.cos(t) ** 2 * abs(math.sin(t)) * p.radius,
                                lo, hi, epsabs=1e-14, epsrel=1e-13, limit=200)
        total += val
        err += e
    return FlatnessResult(total / profile.period, err / profile.period, skipped)


def normal_at(profile: Profile, point) -> np.ndarray:
    """Inward (gas-side) unit normal at a boundary point.

    A junction between two consecutive pieces whose normals disagree is a
    corner.  The cell sides r = 0 and r = period are treated one-sided (the
    point belongs to the first or last piece respectively), so the rim of a
    full-period cup has a well-defined normal.
    """
    point = np.asarray(point, float)
    hits = [(i, s) for i, p in enumerate(profile.pieces)
            if (s := p.param_of(point)) is not None]
    if not hits:
        raise GeometryError(f"point {tuple(point)} is not on the boundary")
    normals = [profile.pieces[i].normal(point) for i, _ in hits]
    for n in normals[1:]:
        if np.max(np.abs(n - normals[0])) > 1e-9:
            raise CornerSignal(f"point {tuple(point)} is a corner of the boundary")
    return normals[0]
