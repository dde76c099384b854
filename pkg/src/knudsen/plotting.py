"""SVG line charts for sweep results and profile sketches."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import StorageError  # noqa: E402


def _save(fig, path):
    try:
        fig.savefig(path, format="svg")
    except OSError as exc:
        raise StorageError(f"cannot write plot {path}: {exc}") from None
    finally:
        plt.close(fig)


def plot_sweep(result, x_name: str, path, estimators=()) -> None:
    """Gap (left axis) and eta per estimator (right axis) against the swept parameter."""
    x = np.array([_param_value(r["params"], x_name) for r in result.rows])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(x, result.column("gap"), "o-", color="k", label="spectral gap")
    ax.set_xlabel(x_name)
    ax.set_ylabel("spectral gap")
    ax2 = ax.twinx()
    for e in estimators:
        ax2.plot(x, result.column(f"eta_{e}"), "s--", label=f"eta ({e})")
    ax2.set_ylabel("eta")
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [ln.get_label() for ln in lines], loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_profile(profile, path) -> None:
    pts = profile.sample_points(128)
    fig, ax = plt.subplots(figsize=(5, 3))
    for shift in (-profile.period, 0.0, profile.period):
        ax.plot(pts[:, 0] + shift, pts[:, 1], color="k", lw=1)
    ax.axhline(profile.ref_height, ls=":", color="gray")
    ax.set_aspect("equal")
    ax.set_title(profile.tag, fontsize=9)
    fig.tight_layout()
    _save(fig, path)


def plot_matrix(P, path) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(P.entries, origin="lower", extent=(-1, 1, -1, 1), cmap="viridis")
    ax.set_xlabel("exit cosine")
    ax.set_ylabel("entry cosine")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    _save(fig, path)


def _param_value(params: str, name: str) -> float:
    for item in params.split(";"):
        k, _, v = item.partition("=")
        if k == name:
            return float(v)
    return float("nan")
