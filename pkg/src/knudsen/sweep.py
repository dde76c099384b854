"""Parameter sweeps: config parsing, matrix caching, and ordered result rows."""
from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffusivity as dv
from .errors import ConfigError, KnudsenError, StorageError
from .geometry import FAMILIES, Profile, flatness_h, profile_from_dict
from .operator import TransitionMatrix, build_matrix, spectral_summary

log = logging.getLogger(__name__)

CACHE_ENV = "KNUDSEN_CACHE"

FAMILY_PARAMS = {
    "flat": (),
    "bumps": ("K",),
    "mixture": ("alpha",),
    "two-bumps": ("d", "K_big", "K_small"),
    "bumps-with-wall": ("w", "d", "R"),
}

SWEEP_KEYS = {
    "family": str, "param": str, "values": str, "fixed": str, "estimators": str,
    "M": int, "N": int, "n_galerkin": int, "n_lser": int, "quadrature_order": int,
    "mode": str, "seed": int, "cutoff": float, "r_ch": float, "workers": int,
    "output": str, "plot": str,
}


def parse_values(text: str) -> list[float]:
    """'0.1, 0.2, 0.5' or 'range(start, stop, count)' (inclusive, evenly spaced)."""
    text = text.strip()
    if text.startswith("range(") and text.endswith(")"):
        try:
            a, b, n = (s.strip() for s in text[6:-1].split(","))
            vals = np.linspace(float(a), float(b), int(n))
        except ValueError as exc:
            raise ConfigError(f"bad range text {text!r}: {exc}") from None
        return [float(v) for v in vals]
    try:
        return [float(s) for s in text.replace(";", ",").split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad value list {text!r}: {exc}") from None


def parse_fixed(spec: str) -> dict:
    out = {}
    for item in filter(None, (s.strip() for s in spec.split(","))):
        if "=" not in item:
            raise ConfigError(f"fixed parameter {item!r} must look like name=value")
        k, v = (s.strip() for s in item.split("=", 1))
        try:
            out[k] = float(v)
        except ValueError:
            raise ConfigError(f"fixed parameter {k} needs a number, got {v!r}") from None
    return out


@dataclass
class ExperimentConfig:
    family: str
    param: str | None
    values: list
    fixed: dict = field(default_factory=dict)
    estimators: tuple = ("galerkin", "direct")
    M: int = 1000
    N: int = 10_000
    n_galerkin: int = dv.GALERKIN_N
    n_lser: int = dv.LSER_N
    quadrature_order: int = 512
    mode: str = "grid"
    seed: int | None = None
    cutoff: float = dv.DEFAULT_CUTOFF
    r_ch: float = 1.0
    workers: int = 1
    output: str = "sweep.csv"
    plot: str | None = None

    def __post_init__(self):
        if self.family not in FAMILY_PARAMS:
            raise ConfigError(f"unknown family {self.family!r}; choose from {sorted(FAMILY_PARAMS)}")
        allowed = FAMILY_PARAMS[self.family]
        if self.param is not None and self.param not in allowed:
            raise ConfigError(f"family {self.family} has no parameter {self.param!r}")
        for k in self.fixed:
            if k not in allowed or k == self.param:
                raise ConfigError(f"bad fixed parameter {k!r} for family {self.family}")
        if not self.values:
            raise ConfigError("parameter grid is empty")
        bad = set(self.estimators) - set(dv.ESTIMATORS)
        if bad or not self.estimators:
            raise ConfigError(f"unknown estimators {sorted(bad)}; choose from {dv.ESTIMATORS}")
        if self.M < 2 or self.N < 1 or self.n_galerkin < 1 or self.n_lser < 1:
            raise ConfigError("M >= 2, N >= 1 and series dimensions >= 1 are required")
        if self.mode not in ("grid", "random"):
            raise ConfigError(f"mode must be grid or random, got {self.mode!r}")
        if not self.cutoff > 0 or not self.r_ch > 0:
            raise ConfigError("cutoff and r_ch must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    def point_params(self, value) -> dict:
        p = dict(self.fixed)
        if self.param is not None:
            p[self.param] = value
        return p

    @classmethod
    def from_ini(cls, path) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise StorageError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        extra = set(cp.sections()) - {"sweep"}
        if extra:
            raise ConfigError(f"unknown config sections {sorted(extra)}")
        if "sweep" not in cp:
            raise ConfigError("config needs a [sweep] section")
        sec = cp["sweep"]
        unknown = set(sec) - set(SWEEP_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "family" not in sec:
            raise ConfigError("config needs a family key")
        kw = {}
        for k, typ in SWEEP_KEYS.items():
            if k not in sec:
                continue
            raw = sec[k].strip()
            try:
                kw[k] = typ(raw)
            except ValueError:
                raise ConfigError(f"config key {k} needs a {typ.__name__}, got {raw!r}") from None
        kw["values"] = parse_values(kw.get("values", "0")) if "param" in kw else [None]
        kw["fixed"] = parse_fixed(kw.get("fixed", ""))
        if "estimators" in kw:
            kw["estimators"] = tuple(s.strip() for s in kw["estimators"].split(",") if s.strip())
        base = Path(path).parent
        for k in ("output", "plot"):
            # an empty plot value disables the figure
            if kw.get(k) and not os.path.isabs(kw[k]):
                kw[k] = str(base / kw[k])
        kw.setdefault("output", str(base / "sweep.csv"))
        kw.setdefault("param", None)
        return cls(**kw)


# ---------------------------------------------------------------------------
# matrix cache


def cache_dir() -> Path | None:
    d = os.environ.get(CACHE_ENV)
    return Path(d) if d else None


def matrix_key(profile: Profile, M: int, N: int, mode: str, seed) -> str:
    blob = json.dumps({"profile": profile.to_dict(), "M": M, "N": N, "mode": mode, "seed": seed},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


def cached_matrix(profile: Profile, M: int, N: int, mode: str = "grid", seed=None,
                  directory: Path | None = None) -> TransitionMatrix:
    """build_matrix with an on-disk cache keyed by profile and sampling settings."""
    directory = directory if directory is not None else cache_dir()
    if directory is None:
        return build_matrix(profile, M, N, mode, seed)
    directory = Path(directory)
    path = directory / f"P_{matrix_key(profile, M, N, mode, seed)}.npz"
    if path.exists():
        P = TransitionMatrix.load(path)
        if P.M == M and P.N == N and P.mode == mode and P.profile_tag == profile.tag:
            return P
        log.warning("cache entry %s does not match its key; rebuilding", path)
    P = build_matrix(profile, M, N, mode, seed)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        P.save(tmp)
        os.replace(tmp, path)
    except OSError as exc:
        raise StorageError(f"cannot write cache {path}: {exc}") from None
    return P


# ---------------------------------------------------------------------------
# sweep


def result_columns(estimators) -> list[str]:
    cols = ["index", "family", "params", "h", "gap", "rho", "symmetry_defect"]
    for e in estimators:
        cols += [f"sigma2_{e}", f"eta_{e}", f"theta_{e}"]
    cols += ["eta_asymptotic", "M", "N", "n_galerkin", "n_lser", "status", "elapsed_s"]
    return cols


def _fmt(v):
    if v is None or v == "":
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def run_point(cfg: ExperimentConfig, index: int, value) -> dict:
    """One grid point; failures are recorded in the status column."""
    t0 = time.perf_counter()
    params = cfg.point_params(value)
    row = {"index": index, "family": cfg.family,
           "params": ";".join(f"{k}={v:g}" for k, v in sorted(params.items())),
           "M": cfg.M, "N": cfg.N, "n_galerkin": cfg.n_galerkin, "n_lser": cfg.n_lser}
    notes = []
    try:
        profile = profile_from_dict({"family": cfg.family, **params})
        h = flatness_h(profile).h
        row["h"] = h
        f = dv.displacement_observable(cfg.cutoff, cfg.r_ch)
        # the gap column is always reported, so the matrix is always built
        P = cached_matrix(profile, cfg.M, cfg.N, cfg.mode, cfg.seed)
        summary = spectral_summary(P, vectors="spectral" in cfg.estimators)
        row.update(gap=summary.gap, rho=summary.rho, symmetry_defect=summary.defect)
        for e in cfg.estimators:
            try:
                if e == "lser":
                    rep = dv.lser_sigma2(f, h, cfg.n_lser)
                elif e == "galerkin":
                    rep = dv.galerkin_sigma2(P, f, cfg.n_galerkin)
                elif e == "direct":
                    rep = dv.direct_sigma2(P, f, summary=summary)
                else:
                    rep = dv.spectral_sigma2(P, f, summary)
            except KnudsenError as exc:
                notes.append(f"{e}:unreliable({type(exc).__name__})")
                continue
            row[f"sigma2_{e}"] = rep.sigma2
            row[f"eta_{e}"] = rep.eta
            row[f"theta_{e}"] = rep.theta_equiv
        if h > 0:
            row["eta_asymptotic"] = dv.eta_asymptotic(f, h, cfg.n_lser)
    except KnudsenError as exc:
        notes.append(f"error:{type(exc).__name__}:{exc}".replace(",", ";"))
    row["status"] = "ok" if not notes else " ".join(notes)
    row["elapsed_s"] = time.perf_counter() - t0
    return row


def _run_point_star(args):
    return run_point(*args)


@dataclass
class SweepResult:
    columns: list
    rows: list

    def column(self, name) -> np.ndarray:
        return np.array([np.nan if r.get(name, "") == "" else float(r[name]) for r in self.rows])

    def write_csv(self, path) -> None:
        try:
            with open(path, "w", newline="") as fh:
                w = csv.DictWriter(fh, self.columns, extrasaction="ignore")
                w.writeheader()
                for r in self.rows:
                    w.writerow({k: (_fmt(r.get(k)) if k not in ("family", "params", "status")
                                    else r.get(k, "")) for k in self.columns})
        except OSError as exc:
            raise StorageError(f"cannot write {path}: {exc}") from None


def run_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Evaluate every grid point; rows come back in grid order."""
    jobs = [(cfg, i, v) for i, v in enumerate(cfg.values)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            rows = list(ex.map(_run_point_star, jobs))
    else:
        rows = [run_point(*j) for j in jobs]
    return SweepResult(result_columns(cfg.estimators), rows)
