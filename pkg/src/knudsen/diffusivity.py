"""Diffusivity estimators for the displacement observable of the velocity chain.

For a mean-zero observable f of the chain with operator P,

    sigma^2 = <f, f> + 2 <f, P (I - P)^{-1} f> = int (1 + lam)/(1 - lam) dPi_f(lam),

and eta = sigma^2 / ||f||^2 is the self-diffusivity relative to the fully
diffuse wall.  Four independent routes to sigma^2 live here:

* lser      weak-scattering Legendre series, needs only h
* galerkin  Legendre projection of the Poisson equation (I - P) g = f
* direct    Krylov solve of the binned Poisson equation
* spectral  sum over the spectral measure of the symmetrized matrix
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, bicgstab

from . import billiard
from .errors import (DegenerateFlatnessError, NumericError, ParameterError,
                     ReliabilityError)
from .geometry import Profile
from .operator import (BinMoments, SpectralSummary, TransitionMatrix, VelocityGrid,
                       as_moments, spectral_measure, spectral_summary,
                       within_bin_atoms, within_bin_sum)
from .spectral_basis import (DEFAULT_ORDER, bin_rule, composite_rule, legendre_bin_averages,
                             legendre_table, projections)

DEFAULT_CUTOFF = 50_000.0
GAP_THRESHOLD = 0.02
LSER_N = 500
GALERKIN_N = 200
CONDITION_FLOOR = 1e-4
WITHIN_BIN_NODES = 24


class Observable:
    """A function on (-1, 1) with its quadrature hints.

    breakpoints are the interior points where the function is not smooth;
    quadrature splits there.
    """

    def __init__(self, func, a: float | None = None, r_ch: float = 1.0, parity: str | None = None,
                 breakpoints=(), name: str = "f"):
        self.func = func
        self.a = a
        self.r_ch = r_ch
        self.parity = parity
        self.breakpoints = tuple(breakpoints)
        self.name = name

    def __call__(self, x):
        return self.func(np.asarray(x, float))

    def __repr__(self):
        return f"Observable({self.name}, a={self.a}, r_ch={self.r_ch})"

    def rule(self, order: int = 2048):
        return composite_rule(self.breakpoints, order, grading=40)

    def norm2(self) -> float:
        """||f||_pi^2 (the observable is not centered here)."""
        r = self.rule()
        return r.integrate(self(r.nodes) ** 2)

    def mean(self) -> float:
        if self.parity == "odd":
            return 0.0
        r = self.rule()
        return r.integrate(self(r.nodes))

    def bin_moments(self, M: int) -> BinMoments:
        edges = VelocityGrid(M).edges
        x, w, k = bin_rule(edges, WITHIN_BIN_NODES, self.breakpoints)
        fx = self(x)
        fm = self(-x)
        mass = np.bincount(k, w * fx, M)
        sq = np.bincount(k, w * fx * fx, M)
        cross = np.bincount(k, w * fx * fm, M)
        return BinMoments(mass, sq, cross)

    def projections(self, n: int) -> np.ndarray:
        """<phi_l, f>_pi for l = 0..n."""
        return projections(self, n, rule=composite_rule(self.breakpoints, max(1024, 4 * n), grading=40))


class DisplacementObservable(Observable):
    """Axial flight length 2 r x / sqrt(1 - x^2), saturated at +-a.

    The saturation keeps the sign of the flight, so the observable stays odd
    and has zero mean.  Bin moments and the norm use closed-form
    antiderivatives.
    """

    def __init__(self, a: float = DEFAULT_CUTOFF, r_ch: float = 1.0):
        if not a > 0:
            raise ParameterError(f"cutoff must be positive, got {a}")
        self.xc = a / math.sqrt(a * a + 4 * r_ch * r_ch)
        super().__init__(self._eval, a, r_ch, "odd", (-self.xc, self.xc), "displacement")

    def _eval(self, x):
        x = np.asarray(x, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            ft = 2 * self.r_ch * x / np.sqrt(1 - x * x)
        return np.where(np.abs(x) < self.xc, ft, np.sign(x) * self.a)

    def _anti(self, x):
        """(F1, F2) with F1' = f and F2' = f^2, F1(0) = F2(0) = 0."""
        x = np.asarray(x, float)
        r, a, xc = self.r_ch, self.a, self.xc
        ax = np.abs(x)
        inner = np.minimum(ax, xc)
        F1 = 2 * r * (1 - np.sqrt((1 - inner) * (1 + inner)))
        F2 = 4 * r * r * (np.arctanh(inner) - inner)
        out = np.maximum(ax - xc, 0.0)
        F1 = F1 + a * out
        F2 = F2 + a * a * out
        return F1, np.sign(x) * F2

    def norm2(self) -> float:
        F1, F2 = self._anti(np.array([-1.0, 1.0]))
        return float(0.5 * (F2[1] - F2[0]))

    def bin_moments(self, M: int) -> BinMoments:
        F1, F2 = self._anti(VelocityGrid(M).edges)
        mass = 0.5 * np.diff(F1)
        sq = 0.5 * np.diff(F2)
        return BinMoments(mass, sq, -sq)


def displacement_observable(a: float = DEFAULT_CUTOFF, r_ch: float = 1.0) -> DisplacementObservable:
    return DisplacementObservable(a, r_ch)


def legendre_observable(l: int) -> Observable:
    from .spectral_basis import legendre_eval
    return Observable(lambda x: legendre_eval(l, x), parity="odd" if l % 2 else "even",
                      name=f"phi_{l}")


def accommodation_equivalent(eta: float) -> float:
    """Maxwell-Smoluchowski accommodation coefficient with the same diffusivity."""
    if eta == -1:
        raise ZeroDivisionError("eta = -1 has no equivalent accommodation coefficient")
    if eta < 1:
        warnings.warn(f"eta = {eta:.4g} < 1: equivalent accommodation coefficient exceeds 1",
                      stacklevel=2)
    return 2.0 / (eta + 1.0)


@dataclass
class DiffusivityReport:
    sigma2: float
    sigma0_2: float
    estimator: str
    settings: dict = field(default_factory=dict)
    error_bound: float | None = None
    gap: float | None = None
    h: float | None = None

    def __post_init__(self):
        if not self.sigma0_2 > 0:
            raise NumericError("observable has zero norm")

    @property
    def eta(self) -> float:
        return self.sigma2 / self.sigma0_2

    @property
    def theta_equiv(self) -> float:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return accommodation_equivalent(self.eta)

    @property
    def theta_flag(self) -> bool:
        """True when eta < 1, where the equivalent accommodation is not physical."""
        return self.eta < 1

    CSV_COLUMNS = ("family", "params", "h", "gap", "sigma2", "eta", "theta_equiv",
                   "estimator", "n", "M", "N", "error_bound")

    def csv_row(self, family: str = "", params: str = "") -> dict:
        s = self.settings
        return {"family": family, "params": params, "h": _fmt(self.h), "gap": _fmt(self.gap),
                "sigma2": _fmt(self.sigma2), "eta": _fmt(self.eta),
                "theta_equiv": _fmt(self.theta_equiv), "estimator": self.estimator,
                "n": s.get("n", ""), "M": s.get("M", ""), "N": s.get("N", ""),
                "error_bound": _fmt(self.error_bound)}


def _fmt(v):
    return "" if v is None else repr(float(v))


def _check_h(h: float):
    if h == 0:
        raise DegenerateFlatnessError("h = 0: flat wall, the series is undefined")
    if not h > 0:
        raise ParameterError(f"flatness h must be positive, got {h}")


# ---------------------------------------------------------------------------
# weak-scattering series


def lser_sigma2(f: Observable, h: float, n: int = LSER_N) -> DiffusivityReport:
    """Series estimate -||f||^2 + (1/h) sum_{l<=n} (2l+1)/(l(l+1)) <phi_l, f>^2.

    error_bound is the truncation bound ||f||^2 / (h (n + 1)).
    """
    _check_h(h)
    if n < 1:
        raise ParameterError("series needs n >= 1")
    p = f.projections(n)
    l = np.arange(1, n + 1)
    s = float(np.sum((2 * l + 1) / (l * (l + 1)) * p[1:] ** 2))
    f2 = f.norm2()
    sigma2 = -f2 + s / h
    return DiffusivityReport(sigma2, f2, "lser", {"n": n}, f2 / (h * (n + 1)), h=h)


def series_constant(f: Observable, n: int = LSER_N) -> float:
    """C_f = sum_l (2l+1)/(l(l+1)) <phi_l, f/||f||>^2."""
    p = f.projections(n)
    l = np.arange(1, n + 1)
    return float(np.sum((2 * l + 1) / (l * (l + 1)) * p[1:] ** 2) / f.norm2())


def eta_asymptotic(f: Observable, h: float, n: int = LSER_N) -> float:
    """(C_f - h) / h, the small-h form of eta."""
    _check_h(h)
    return (series_constant(f, n) - h) / h


def gap_asymptotic(h: float) -> float:
    if h < 0:
        raise ParameterError(f"flatness h must be nonnegative, got {h}")
    return 4.0 * h


# ---------------------------------------------------------------------------
# Galerkin


def _within_bin_gram(P: TransitionMatrix, n: int, A: np.ndarray, f: Observable | None):
    """Within-bin corrections to <P phi_j, phi_i> and <P f, phi_i>, i, j = 0..n."""
    bins = np.flatnonzero((P.beta_plus != 0) | (P.beta_minus != 0))
    G = np.zeros((n + 1, n + 1))
    y = np.zeros(n + 1)
    if bins.size == 0:
        return G, y
    M = P.M
    edges = VelocityGrid(M).edges
    bps = f.breakpoints if f is not None else ()
    sign = (-1.0) ** np.arange(n + 1)
    fbar = f.bin_moments(M).averages if f is not None else None
    for chunk in np.array_split(bins, max(1, bins.size // 200)):
        x, w, k = bin_rule(edges, WITHIN_BIN_NODES, bps, chunk)
        V = legendre_table(n, x)
        bp, bm = P.beta_plus[k], P.beta_minus[k]
        Vw_p = V * (w * bp)
        Vw_m = V * (w * bm)
        G += Vw_p @ V.T + (Vw_m @ V.T) * sign[None, :]
        Ac = A[:, chunk]
        G -= (Ac * (P.beta_plus[chunk] / M)) @ Ac.T
        G -= ((Ac * (P.beta_minus[chunk] / M)) @ Ac.T) * sign[None, :]
        if f is not None:
            fx, fm = f(x), f(-x)
            # <beta+ r_f + beta- J r_f, r_phi_i>, bin averages subtracted
            y += V @ (w * (bp * fx + bm * fm))
            y -= Ac @ ((P.beta_plus[chunk] * fbar[chunk] + P.beta_minus[chunk] * fbar[::-1][chunk]) / M)
    return G, y


def galerkin_sigma2(P: TransitionMatrix, f: Observable, n: int = GALERKIN_N,
                    norm_term: str = "exact") -> DiffusivityReport:
    """Galerkin estimate on span{phi_1..phi_n} using the matrix backend.

    <P phi_j, phi_i> is computed from bin averages of phi_j pushed through
    P_M, plus the within-bin part carried by beta_plus / beta_minus.

    norm_term "exact" uses <f, f>; "projected" uses <T_n f, T_n f>, which
    converges much more slowly for observables with heavy tails.
    """
    if n < 1:
        raise ParameterError("Galerkin dimension must be at least 1")
    if not isinstance(P, TransitionMatrix):
        P = TransitionMatrix(P)
    M = P.M
    A = legendre_bin_averages(n, VelocityGrid(M).edges)
    mom = as_moments(f, M)
    fbar = mom.averages
    PA = A @ P.entries.T                       # PA[j] = P_M applied to bin averages of phi_j
    B = (PA @ A.T) / M                         # B[j, i] = <P phi_j, phi_i>
    Pf = (A @ (P.entries @ fbar)) / M          # <P f, phi_i>
    Gw, yw = _within_bin_gram(P, n, A, f if hasattr(f, "breakpoints") else None)
    B = B + Gw.T
    Pf = Pf + yw
    return _galerkin_solve(B, Pf, f, n, "galerkin", {"n": n, "M": M, "N": P.N, "backend": "matrix"},
                           norm_term)


def _galerkin_solve(B, Pf, f, n, name, settings, norm_term):
    l = np.arange(1, n + 1)
    D = 1.0 / (2 * l + 1)
    G = np.diag(D) - B[1:, 1:].T               # G[i, j] = <phi_j, phi_i> - <P phi_j, phi_i>
    scale = np.sqrt(2 * l + 1)
    Gs = G * scale[:, None] * scale[None, :]
    smin = linalg.svdvals(Gs).min()
    if smin < CONDITION_FLOOR:
        raise ReliabilityError(
            f"Galerkin matrix is near singular (smallest singular value {smin:.2e}); "
            "the operator has no usable spectral gap")
    p = f.projections(n) if hasattr(f, "projections") else None
    if p is None:
        raise ParameterError("Galerkin estimate needs an observable with Legendre projections")
    y = p[1:]
    x = linalg.solve(G, y)
    f2 = f.norm2()
    if norm_term == "exact":
        base = f2
    elif norm_term == "projected":
        base = float(np.sum(y * y * (2 * l + 1)))
    else:
        raise ParameterError(f"unknown norm_term {norm_term!r}")
    sigma2 = base + 2 * float(Pf[1:] @ x)
    settings = dict(settings, norm_term=norm_term, smin=float(smin))
    return DiffusivityReport(sigma2, f2, name, settings)


def galerkin_sigma2_traced(profile: Profile, f: Observable, n: int = GALERKIN_N, N: int = 4000,
                           order: int | None = None, norm_term: str = "exact") -> DiffusivityReport:
    """Galerkin estimate with <P phi_j, phi_i> from exits traced at quadrature nodes.

    Bypasses velocity binning entirely: P phi_j(x_q) is the mean of phi_j
    over N evenly spaced entries at cosine x_q.
    """
    order = order or max(2 * n + 64, 256)
    rule = composite_rule(f.breakpoints, order, grading=8)
    xq, wq = rule.nodes, rule.weights
    r = (np.arange(N) + 0.5) * (profile.period / N)
    R, X = np.meshgrid(r, xq, indexing="ij")
    res, rejected = billiard.trace_resampled(profile, R, X)
    xo = res.x_out                             # shape (N, Q)
    Vq = legendre_table(n, xq)                 # phi_i at nodes
    Pphi = np.zeros((n + 1, xq.size))
    Pf_vals = np.zeros(xq.size)
    for rows in np.array_split(np.arange(N), max(1, N // 500)):
        Vo = legendre_table(n, xo[rows])       # (n+1, rows, Q)
        Pphi += Vo.sum(axis=1)
        Pf_vals += f(xo[rows]).sum(axis=0)
    Pphi /= N
    Pf_vals /= N
    B = (Pphi * wq) @ Vq.T                     # B[j, i] = <P phi_j, phi_i>
    Pf = Vq @ (wq * Pf_vals)
    settings = {"n": n, "N": N, "M": "", "backend": "traced", "order": xq.size, "rejected": rejected}
    return _galerkin_solve(B, Pf, f, n, "galerkin", settings, norm_term)


# ---------------------------------------------------------------------------
# direct and spectral


def _resolvent_solve(P: TransitionMatrix, b: np.ndarray, tol: float = 1e-12, maxiter: int = 5000):
    """Solve (I - P_M) u = b on mean-zero vectors, constant mode deflated."""
    M = P.M
    A = P.entries

    def mv(u):
        return u - A @ u + np.full(M, u.sum() / M)

    op = LinearOperator((M, M), matvec=mv, dtype=float)
    u, info = bicgstab(op, b, rtol=tol, atol=0.0, maxiter=maxiter)
    if info != 0:
        raise ReliabilityError(f"Krylov solve did not converge (info={info})")
    resid = np.linalg.norm(mv(u) - b) / max(np.linalg.norm(b), 1e-300)
    if resid > 1e3 * tol:
        raise ReliabilityError(f"Krylov residual {resid:.2e} too large")
    return u


def _require_gap(P: TransitionMatrix, summary: SpectralSummary | None, threshold: float):
    summary = summary or spectral_summary(P)
    if summary.gap < threshold:
        raise ReliabilityError(
            f"spectral gap {summary.gap:.3g} below reliability threshold {threshold}")
    return summary


def resolvent_quadratic(P: TransitionMatrix, f, summary: SpectralSummary | None = None,
                        gap_threshold: float = GAP_THRESHOLD) -> tuple[float, float, SpectralSummary]:
    """(<f, (I - P)^{-1} f>, ||f||^2) for the centered observable."""
    if not isinstance(P, TransitionMatrix):
        P = TransitionMatrix(P)
    summary = _require_gap(P, summary, gap_threshold)
    mom = as_moments(f, P.M).centered()
    fbar = mom.averages
    u = _resolvent_solve(P, fbar)
    val = float(fbar @ u) / P.M
    lp, lm = within_bin_atoms(P)
    if np.any(lp >= 1) or np.any(lm >= 1):
        raise ReliabilityError("within-bin eigenvalue at 1: operator is not mixing")
    val += within_bin_sum(P, mom, lambda lam: 1.0 / (1.0 - lam))
    return val, mom.norm2, summary


def direct_sigma2(P: TransitionMatrix, f, gap_threshold: float = GAP_THRESHOLD,
                  summary: SpectralSummary | None = None) -> DiffusivityReport:
    """sigma^2 = -||f||^2 + 2 <f, (I - P)^{-1} f> via a Krylov solve."""
    if not isinstance(P, TransitionMatrix):
        P = TransitionMatrix(P)
    R, f2, summary = resolvent_quadratic(P, f, summary, gap_threshold)
    sigma2 = -f2 + 2 * R
    return DiffusivityReport(sigma2, f2, "direct", {"M": P.M, "N": P.N}, gap=summary.gap)


def spectral_sigma2(P: TransitionMatrix, f, summary: SpectralSummary | None = None,
                    tol: float = 1e-10) -> DiffusivityReport:
    """sigma^2 = sum_k w_k (1 + lam_k) / (1 - lam_k) over the spectral measure of f."""
    if not isinstance(P, TransitionMatrix):
        P = TransitionMatrix(P)
    if summary is None or summary.eigenvectors is None:
        summary = spectral_summary(P, vectors=True)
    meas = spectral_measure(P, f, summary)
    lam, w = meas.lambdas, meas.weights
    top = lam >= 1 - 1e-12
    if np.any(w[top] > tol * max(meas.total, 1e-300)):
        raise ReliabilityError("observable has mass at eigenvalue 1: sigma^2 diverges")
    if summary.gap <= 0:
        raise ReliabilityError("operator has no spectral gap")
    keep = ~top
    sigma2 = float(np.sum(w[keep] * (1 + lam[keep]) / (1 - lam[keep])))
    return DiffusivityReport(sigma2, meas.total, "spectral", {"M": P.M, "N": P.N}, gap=summary.gap)


def mixture_eta_shift(P1: TransitionMatrix, f, alpha: float,
                      gap_threshold: float = GAP_THRESHOLD) -> float:
    """eta(alpha) - eta(1) = 2 (1 - alpha)/alpha * <f, (I - P1)^{-1} f> / ||f||^2."""
    if not 0 < alpha <= 1:
        raise ParameterError(f"alpha must lie in (0, 1], got {alpha}")
    if alpha == 1:
        return 0.0
    R, f2, _ = resolvent_quadratic(P1, f, None, gap_threshold)
    return 2 * (1 - alpha) / alpha * R / f2


ESTIMATORS = ("lser", "galerkin", "direct", "spectral")
