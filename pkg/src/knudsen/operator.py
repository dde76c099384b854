"""Finite-rank transition operator P_M and its spectral analysis.

Velocity space (-1, 1) is cut into M equal bins.  Row i of P_M holds the
fractions of N traced trajectories, entering with the midpoint cosine of bin
i, that exit in each bin.  The stationary law is uniform in the cosine, so
the discrete pi-inner product is <u, v> = mean(u * v).

Binning alone loses within-bin structure, which matters for observables that
vary sharply inside a bin (the displacement observable near x = +-1).  Some
trajectories map x to itself (only horizontal walls hit) or to -x (odd number
of vertical wall hits, otherwise horizontal), for every x in the bin.  Their
fractions beta_plus and beta_minus are recorded per row; the operator then
acts on the within-bin remainder of a function as beta_plus + beta_minus * J,
with J(x) = -x, and annihilates it otherwise.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import billiard
from .errors import ConfigError, NumericError, ParameterError, StorageError
from .geometry import Profile

log = logging.getLogger(__name__)

DEFAULT_M = 1000
DEFAULT_N = 10_000
REJECTION_WARN = 0.01


@dataclass(frozen=True)
class VelocityGrid:
    M: int

    def __post_init__(self):
        if self.M < 2:
            raise ParameterError(f"need at least 2 velocity bins, got {self.M}")

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.M + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return -1.0 + (np.arange(self.M) + 0.5) * (2.0 / self.M)

    @property
    def width(self) -> float:
        return 2.0 / self.M

    def bin_of(self, x) -> np.ndarray:
        return np.clip(((np.asarray(x) + 1.0) * (self.M / 2.0)).astype(np.int64), 0, self.M - 1)


@dataclass
class TransitionMatrix:
    entries: np.ndarray
    N: int = 0
    mode: str = "constructed"
    seed: int | None = None
    rejected: int = 0
    beta_plus: np.ndarray | None = None
    beta_minus: np.ndarray | None = None
    profile_tag: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        P = np.asarray(self.entries, float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ParameterError("transition matrix must be square")
        self.entries = P
        M = P.shape[0]
        self.beta_plus = np.zeros(M) if self.beta_plus is None else np.asarray(self.beta_plus, float)
        self.beta_minus = np.zeros(M) if self.beta_minus is None else np.asarray(self.beta_minus, float)

    @property
    def M(self) -> int:
        return self.entries.shape[0]

    @property
    def grid(self) -> VelocityGrid:
        return VelocityGrid(self.M)

    @property
    def has_within_bin(self) -> bool:
        return bool(np.any(self.beta_plus) or np.any(self.beta_minus))

    def apply(self, v) -> np.ndarray:
        return self.entries @ np.asarray(v, float)

    @classmethod
    def identity(cls, M: int) -> "TransitionMatrix":
        return cls(np.eye(M), mode="constructed", beta_plus=np.ones(M), profile_tag="identity")

    @classmethod
    def diffuse(cls, M: int) -> "TransitionMatrix":
        """Rank-one matrix whose rows are the bin masses of the stationary law."""
        return cls(np.full((M, M), 1.0 / M), mode="constructed", profile_tag="diffuse")

    def metadata(self) -> dict:
        return {"profile": self.profile_tag, "M": self.M, "N": self.N, "mode": self.mode,
                "seed": self.seed, "rejected": self.rejected, **self.meta}

    def save(self, path) -> None:
        try:
            with open(path, "wb") as fh:
                np.savez_compressed(fh, entries=self.entries, beta_plus=self.beta_plus,
                                    beta_minus=self.beta_minus,
                                    meta=np.array(json.dumps(self.metadata(), sort_keys=True)))
        except OSError as exc:
            raise StorageError(f"cannot write matrix to {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "TransitionMatrix":
        try:
            with np.load(path, allow_pickle=False) as z:
                meta = json.loads(str(z["meta"]))
                entries, bp, bm = z["entries"], z["beta_plus"], z["beta_minus"]
        except (OSError, KeyError, ValueError) as exc:
            raise StorageError(f"cannot read matrix from {path}: {exc}") from exc
        extra = {k: v for k, v in meta.items()
                 if k not in ("profile", "M", "N", "mode", "seed", "rejected")}
        return cls(entries, meta.get("N", 0), meta.get("mode", "constructed"), meta.get("seed"),
                   meta.get("rejected", 0), bp, bm, meta.get("profile", ""), extra)


def sample_transition(profile: Profile, x: float, rng=None, r: float | None = None) -> float:
    """One step of the velocity chain: exit cosine after entering at cosine x.

    The entry position is `r` if given, otherwise uniform on the cell.
    """
    if not -1 < x < 1:
        raise ParameterError(f"direction cosine must lie in (-1, 1), got {x}")
    rng = rng if rng is not None else np.random.default_rng()
    if r is None:
        r = rng.uniform(0.0, profile.period)
    res, _ = billiard.trace_resampled(profile, [r], [x], rng=rng)
    return float(res.x_out[0])


def _entry_positions(N, period, mode, seed, row):
    if mode == "grid":
        return (np.arange(N) + 0.5) * (period / N)
    rng = np.random.default_rng([seed, row])
    return (np.arange(N) + rng.uniform(size=N)) * (period / N)


def _build_rows(profile, M, N, mode, seed, rows):
    grid = VelocityGrid(M)
    T = billiard._Tables(profile)
    xm = grid.midpoints
    counts = np.zeros((len(rows), M))
    bp = np.zeros(len(rows))
    bm = np.zeros(len(rows))
    rejected = 0
    for k, i in enumerate(rows):
        r = _entry_positions(N, profile.period, mode, seed, i)
        rng = np.random.default_rng([0 if seed is None else seed, i, 1])
        res, rej = billiard.trace_resampled(profile, r, np.full(N, xm[i]), rng=rng, tables=T)
        rejected += rej
        counts[k] = np.bincount(grid.bin_of(res.x_out), minlength=M)
        bp[k] = np.count_nonzero(res.hit_class == billiard.PURE_IDENTITY)
        bm[k] = np.count_nonzero(res.hit_class == billiard.PURE_FLIP)
    return counts, bp, bm, rejected


def build_matrix(profile: Profile, M: int = DEFAULT_M, N: int = DEFAULT_N, mode: str = "grid",
                 seed: int | None = None, workers: int = 1) -> TransitionMatrix:
    """Estimate P_M by tracing N entries per row from each bin midpoint.

    mode "grid" uses evenly spaced entry positions (deterministic);
    "random" draws one uniform position in each of N equal strata.
    """
    if M < 2 or N < 1:
        raise ParameterError(f"need M >= 2 and N >= 1, got M={M}, N={N}")
    if mode not in ("grid", "random"):
        raise ConfigError(f"unknown sampling mode {mode!r}")
    if mode == "random" and seed is None:
        seed = 0
    chunks = np.array_split(np.arange(M), max(1, min(M, workers * 4)))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_build_rows, [profile] * len(chunks), [M] * len(chunks),
                                [N] * len(chunks), [mode] * len(chunks), [seed] * len(chunks),
                                [list(c) for c in chunks]))
    else:
        parts = [_build_rows(profile, M, N, mode, seed, list(c)) for c in chunks]
    counts = np.vstack([p[0] for p in parts])
    bp = np.concatenate([p[1] for p in parts]) / N
    bm = np.concatenate([p[2] for p in parts]) / N
    rejected = sum(p[3] for p in parts)
    entries = counts / N
    if profile.symmetric:
        bp = 0.5 * (bp + bp[::-1])
        bm = 0.5 * (bm + bm[::-1])
    meta = {"period": profile.period}
    rate = rejected / (M * N)
    if rate > REJECTION_WARN:
        meta["quality_warning"] = f"rejection rate {rate:.3%} exceeds {REJECTION_WARN:.0%}"
        log.warning("%s: %s", profile.tag, meta["quality_warning"])
    return TransitionMatrix(entries, N, mode, seed, rejected, bp, bm, profile.tag, meta)


def _entries(P) -> np.ndarray:
    return P.entries if isinstance(P, TransitionMatrix) else np.asarray(P, float)


def stationarity_defect(P) -> float:
    """l1 distance between uP and u, u the uniform probability row vector."""
    A = _entries(P)
    u = np.full(A.shape[0], 1.0 / A.shape[0])
    return float(np.abs(u @ A - u).sum())


def symmetry_defect(P) -> float:
    A = _entries(P)
    return float(np.max(np.abs(A - A.T)))


@dataclass
class SpectralSummary:
    eigenvalues: np.ndarray     # descending; the first is the stationary eigenvalue 1
    gap: float
    rho: float
    second_eigenvalue: float
    defect: float
    eigenvectors: np.ndarray | None = field(default=None, repr=False)  # mean-zero, pi-orthonormal
    atoms: np.ndarray | None = field(default=None, repr=False)          # within-bin eigenvalues

    def as_dict(self) -> dict:
        return {"gap": self.gap, "rho": self.rho, "second_eigenvalue": self.second_eigenvalue,
                "defect": self.defect}


def _mean_zero_basis(M: int) -> np.ndarray:
    return linalg.null_space(np.ones((1, M)))


def within_bin_atoms(P: TransitionMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues beta_plus +- beta_minus of the operator on within-bin remainders."""
    return P.beta_plus + P.beta_minus, P.beta_plus - P.beta_minus


def spectral_summary(P, vectors: bool = False) -> SpectralSummary:
    """Spectrum of the symmetrized matrix on mean-zero vectors, plus the top eigenvalue 1.

    The gap is 1 - rho with rho the largest modulus over the mean-zero
    spectrum, including within-bin eigenvalues when the matrix carries them.
    """
    if not isinstance(P, TransitionMatrix):
        P = TransitionMatrix(P)
    A = P.entries
    S = 0.5 * (A + A.T)
    Q = _mean_zero_basis(P.M)
    try:
        lam, U = linalg.eigh(Q.T @ S @ Q)
    except linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed: {exc}") from exc
    lam = lam[::-1]
    U = U[:, ::-1]
    mods = np.abs(lam)
    atoms = None
    if P.has_within_bin:
        atoms = np.concatenate(within_bin_atoms(P))
        mods = np.concatenate([mods, np.abs(atoms)])
    rho = float(min(mods.max(), 1.0)) if mods.size else 0.0
    evs = np.concatenate([[1.0], lam])
    vecs = None
    if vectors:
        vecs = (Q @ U) * np.sqrt(P.M)   # pi-orthonormal columns
    return SpectralSummary(evs, 1.0 - rho, rho, float(lam[0]), symmetry_defect(A), vecs, atoms)


@dataclass
class SpectralMeasure:
    lambdas: np.ndarray
    weights: np.ndarray

    def __iter__(self):
        return iter(zip(self.lambdas.tolist(), self.weights.tolist()))

    def __len__(self):
        return self.lambdas.size

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def integrate(self, g) -> float:
        return float(np.sum(self.weights * g(self.lambdas)))


@dataclass
class BinMoments:
    """Per-bin integrals of an observable against pi.

    mass[k] = int_k f dpi, sq[k] = int_k f^2 dpi, cross[k] = int_k f(x) f(-x) dpi.
    """
    mass: np.ndarray
    sq: np.ndarray
    cross: np.ndarray

    @property
    def M(self) -> int:
        return self.mass.size

    @property
    def averages(self) -> np.ndarray:
        return self.mass * self.M

    @property
    def norm2(self) -> float:
        return float(self.sq.sum())

    def within(self) -> tuple[np.ndarray, np.ndarray]:
        """(S, X): within-bin remainder norms and their mirror overlaps."""
        M = self.M
        S = np.maximum(self.sq - M * self.mass ** 2, 0.0)
        X = self.cross - M * self.mass * self.mass[::-1]
        return S, X

    @classmethod
    def from_values(cls, v) -> "BinMoments":
        """Bin-constant function with the given bin values."""
        v = np.asarray(v, float)
        M = v.size
        return cls(v / M, v * v / M, v * v[::-1] / M)

    def centered(self) -> "BinMoments":
        mean = self.mass.sum()
        if mean == 0:
            return self
        M = self.M
        return BinMoments(self.mass - mean / M,
                          self.sq - 2 * mean * self.mass + mean ** 2 / M,
                          self.cross - mean * (self.mass + self.mass[::-1]) + mean ** 2 / M)


def as_moments(f, M: int) -> BinMoments:
    if isinstance(f, BinMoments):
        if f.M != M:
            raise ParameterError(f"observable moments have {f.M} bins, matrix has {M}")
        return f
    if hasattr(f, "bin_moments"):
        return f.bin_moments(M)
    v = np.asarray(f, float)
    if v.shape != (M,):
        raise ParameterError(f"bin values must have shape ({M},), got {v.shape}")
    return BinMoments.from_values(v)


def within_bin_sum(P: TransitionMatrix, mom: BinMoments, g) -> float:
    """sum over within-bin eigenmodes of g(lambda) times the observable's weight there."""
    S, X = mom.within()
    lp, lm = within_bin_atoms(P)
    return float(0.5 * np.sum(g(lp) * (S + X) + g(lm) * (S - X)))


def spectral_measure(P, f, summary: SpectralSummary | None = None) -> SpectralMeasure:
    """Discrete spectral measure of f: atoms (lambda_k, <f, u_k>^2).

    f is an observable (with bin_moments) or an array of bin values.  The
    mean is projected out.  Weights sum to ||f||^2 (Parseval); within-bin
    remainders contribute atoms at beta_plus +- beta_minus.
    """
    if not isinstance(P, TransitionMatrix):
        P = TransitionMatrix(P)
    mom = as_moments(f, P.M).centered()
    if summary is None or summary.eigenvectors is None:
        summary = spectral_summary(P, vectors=True)
    fbar = mom.averages
    w = (summary.eigenvectors.T @ fbar / P.M) ** 2
    lams = [summary.eigenvalues[1:]]
    ws = [w]
    S, X = mom.within()
    if np.any(S > 0):
        lp, lm = within_bin_atoms(P)
        lams += [lp, lm]
        ws += [0.5 * (S + X), 0.5 * (S - X)]
    return SpectralMeasure(np.concatenate(lams), np.concatenate(ws))


def mixture_operator(P1: TransitionMatrix, alpha: float) -> TransitionMatrix:
    """alpha * P1 + (1 - alpha) * I, with within-bin fractions mixed the same way."""
    if not 0 < alpha <= 1:
        raise ParameterError(f"alpha must lie in (0, 1], got {alpha}")
    if not isinstance(P1, TransitionMatrix):
        P1 = TransitionMatrix(P1)
    M = P1.M
    entries = alpha * P1.entries + (1 - alpha) * np.eye(M)
    meta = dict(P1.meta, mixture_alpha=alpha)
    return TransitionMatrix(entries, P1.N, P1.mode, P1.seed, P1.rejected,
                            alpha * P1.beta_plus + (1 - alpha), alpha * P1.beta_minus,
                            f"mixture[{alpha:g}]({P1.profile_tag})", meta)


def pi_norm(v) -> float:
    v = np.asarray(v, float)
    return float(np.sqrt(np.mean(v * v)))
