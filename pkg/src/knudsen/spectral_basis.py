"""Legendre machinery on (-1, 1) with the stationary weight pi(dx) = dx/2.

phi_l denotes the Legendre polynomial of degree l (phi_l(1) = 1), so that
<phi_n, phi_m>_pi = delta_nm / (2n + 1).  The Legendre operator
L = d/dx (1 - x^2) d/dx is diagonal in this basis with eigenvalues -l(l+1).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ParameterError

DEFAULT_ORDER = 512


def legendre_eval(l: int, x):
    """phi_l(x) by the three-term recurrence."""
    if l < 0:
        raise ParameterError(f"degree must be nonnegative, got {l}")
    x = np.asarray(x, float)
    p0 = np.ones_like(x)
    if l == 0:
        return p0 if p0.ndim else float(p0)
    p1 = x.copy()
    for k in range(1, l):
        p0, p1 = p1, ((2 * k + 1) * x * p1 - k * p0) / (k + 1)
    return p1 if p1.ndim else float(p1)


def legendre_table(n: int, x) -> np.ndarray:
    """Array V with V[l] = phi_l(x) for l = 0..n."""
    x = np.asarray(x, float)
    V = np.empty((n + 1,) + x.shape)
    V[0] = 1.0
    if n >= 1:
        V[1] = x
    for k in range(1, n):
        V[k + 1] = ((2 * k + 1) * x * V[k] - k * V[k - 1]) / (k + 1)
    return V


def legendre_bin_averages(n: int, edges) -> np.ndarray:
    """A[l, k] = mean of phi_l over the bin [edges[k], edges[k+1]].

    Uses the antiderivative (phi_{l+1} - phi_{l-1}) / (2l + 1), which is exact
    and stays accurate for degrees well above the bin count.
    """
    edges = np.asarray(edges, float)
    V = legendre_table(n + 1, edges)
    anti = np.empty((n + 1, edges.size))
    anti[0] = edges
    for l in range(1, n + 1):
        anti[l] = (V[l + 1] - V[l - 1]) / (2 * l + 1)
    return np.diff(anti, axis=1) / np.diff(edges)


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights for integrals against pi on (-1, 1) (weights sum to 1)."""
    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


@lru_cache(maxsize=32)
def _gauss(order: int):
    return np.polynomial.legendre.leggauss(order)


def gauss_rule(order: int = DEFAULT_ORDER) -> QuadratureRule:
    """Gauss-Legendre rule, exact for polynomials of degree 2*order - 1."""
    x, w = _gauss(order)
    return QuadratureRule(x, 0.5 * w, order)


def _angle_pieces(breakpoints: Sequence[float], grading: int):
    """Intervals in theta = arcsin(x) split at the breakpoints and graded toward +-pi/2."""
    th = np.arcsin(np.clip(np.asarray(sorted(set(breakpoints)), float), -1, 1))
    knots = [-np.pi / 2, np.pi / 2, *th.tolist()]
    for k in range(1, grading + 1):
        t = np.pi / 2 * (1 - 2.0 ** -k)
        knots += [t, -t]
    knots = np.unique(np.clip(knots, -np.pi / 2, np.pi / 2))
    return knots


def composite_rule(breakpoints: Sequence[float] = (), order: int = DEFAULT_ORDER,
                   grading: int = 0, min_nodes: int = 16) -> QuadratureRule:
    """Gauss rule in the angle variable x = sin(theta), split at breakpoints.

    The substitution absorbs (1 - x^2)^(-1/2) endpoint singularities, and the
    split restores smoothness on each piece for functions with kinks at known
    points.  Roughly `order` nodes are spread over the pieces in proportion
    to their length, with at least `min_nodes` per piece.
    """
    knots = _angle_pieces(breakpoints, grading)
    lengths = np.diff(knots)
    counts = np.maximum(min_nodes, np.ceil(order * lengths / np.pi).astype(int))
    nodes, weights = [], []
    for a, b, q in zip(knots[:-1], knots[1:], counts):
        g, w = _gauss(int(q))
        t = 0.5 * (a + b) + 0.5 * (b - a) * g
        nodes.append(np.sin(t))
        weights.append(0.25 * (b - a) * w * np.cos(t))
    return QuadratureRule(np.concatenate(nodes), np.concatenate(weights), int(counts.sum()))


def bin_rule(edges, q: int = 24, breakpoints: Sequence[float] = (), bins=None):
    """Per-bin Gauss rule in the angle variable.

    Returns (nodes, weights, bin_index) with weights integrating against pi.
    Bins containing a breakpoint are split there.  `bins` restricts the rule
    to a subset of bins.
    """
    edges = np.asarray(edges, float)
    M = edges.size - 1
    bins = np.arange(M) if bins is None else np.asarray(bins, int)
    th = np.arcsin(np.clip(edges, -1, 1))
    lo, hi = th[bins], th[bins + 1]
    # split every bin at any breakpoint it contains
    segs_lo, segs_hi, segs_bin = [lo], [hi], [bins]
    for bp in sorted(set(breakpoints)):
        tb = float(np.arcsin(np.clip(bp, -1, 1)))
        k = np.flatnonzero((segs_lo[0] < tb) & (tb < segs_hi[0]))
        if k.size:
            segs_lo.append(np.full(k.size, tb))
            segs_hi.append(segs_hi[0][k].copy())
            segs_bin.append(segs_bin[0][k])
            segs_hi[0] = segs_hi[0].copy()
            segs_hi[0][k] = tb
    a = np.concatenate(segs_lo)
    b = np.concatenate(segs_hi)
    kb = np.concatenate(segs_bin)
    g, w = _gauss(q)
    t = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * g[None, :]
    nodes = np.sin(t)
    weights = 0.25 * (b - a)[:, None] * w[None, :] * np.cos(t)
    idx = np.repeat(kb, q)
    order = np.argsort(idx, kind="stable")
    return nodes.ravel()[order], weights.ravel()[order], idx[order]


def _values(f, x):
    if callable(f):
        return np.asarray(f(x), float)
    return np.asarray(f, float)


def _breakpoints(*fs):
    pts = []
    for f in fs:
        pts += list(getattr(f, "breakpoints", ()))
    return pts


def inner_product_pi(f, g, order: int = DEFAULT_ORDER, rule: QuadratureRule | None = None) -> float:
    """<f, g>_pi = (1/2) int f g dx by composite Gauss quadrature.

    Callables exposing a `breakpoints` attribute get their kinks split out.
    """
    if rule is None:
        bps = _breakpoints(f, g)
        rule = composite_rule(bps, order, grading=8) if bps else gauss_rule(order)
    vals = _values(f, rule.nodes) * _values(g, rule.nodes)
    if not np.all(np.isfinite(vals)):
        raise NumericError("integrand is not finite at a quadrature node")
    return rule.integrate(vals)


@dataclass
class LegendreSeries:
    """f = sum_l coeffs[l] * phi_l."""
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, float)
        if not np.all(np.isfinite(self.coeffs)):
            raise NumericError("series has non-finite coefficients")

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def __call__(self, x):
        return np.polynomial.legendre.legval(np.asarray(x, float), self.coeffs)

    def norm2(self) -> float:
        l = np.arange(self.coeffs.size)
        return float(np.sum(self.coeffs ** 2 / (2 * l + 1)))

    def inner(self, other: "LegendreSeries") -> float:
        n = min(self.coeffs.size, other.coeffs.size)
        l = np.arange(n)
        return float(np.sum(self.coeffs[:n] * other.coeffs[:n] / (2 * l + 1)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["l", "b_l"])
            for l, b in enumerate(self.coeffs):
                w.writerow([l, repr(float(b))])


def projections(f, n: int, order: int = DEFAULT_ORDER, rule: QuadratureRule | None = None) -> np.ndarray:
    """<phi_l, f>_pi for l = 0..n."""
    if rule is None:
        bps = _breakpoints(f)
        rule = composite_rule(bps, max(order, 2 * n), grading=8) if bps else gauss_rule(max(order, n + 1))
    fx = _values(f, rule.nodes)
    V = legendre_table(n, rule.nodes)
    return V @ (rule.weights * fx)


def expand(f, n: int, order: int = DEFAULT_ORDER, rule: QuadratureRule | None = None) -> LegendreSeries:
    """Coefficients b_l = (2l + 1) <phi_l, f>_pi up to degree n."""
    if n < 0:
        raise ParameterError(f"degree must be nonnegative, got {n}")
    l = np.arange(n + 1)
    return LegendreSeries((2 * l + 1) * projections(f, n, order, rule))


def legendre_operator_apply(series: LegendreSeries) -> LegendreSeries:
    l = np.arange(series.coeffs.size)
    return LegendreSeries(-l * (l + 1) * series.coeffs)


def poisson_solve_series(f, n: int, h: float | None = None, order: int = DEFAULT_ORDER,
                         tol: float = 1e-10) -> LegendreSeries:
    """Truncated series solution g of L g = -f (or L g = -f / (2h) when h is given).

    f is a callable or a LegendreSeries; it must have zero pi-mean.
    """
    if isinstance(f, LegendreSeries):
        b = np.zeros(n + 1)
        m = min(n + 1, f.coeffs.size)
        b[:m] = f.coeffs[:m]
    else:
        b = expand(f, n, order).coeffs
    if abs(b[0]) > tol:
        raise ParameterError(f"right-hand side has nonzero mean {b[0]:.3e}")
    l = np.arange(n + 1)
    a = np.zeros(n + 1)
    a[1:] = b[1:] / (l[1:] * (l[1:] + 1))
    if h is not None:
        if not h > 0:
            raise ParameterError(f"scale h must be positive, got {h}")
        a /= 2 * h
    return LegendreSeries(a)


def truncate(series: LegendreSeries, n: int) -> LegendreSeries:
    return LegendreSeries(series.coeffs[: n + 1].copy())
