"""Acceptance criteria at desk scale (M = 400, N = 4000).

Each test records one PASS/FAIL line, printed in the terminal summary.
Run alone with:  pytest tests/test_acceptance.py -v
"""
import numpy as np
import pytest
from scipy import stats

from conftest import ACCEPTANCE_LINES, bumps_matrix, two_bumps_matrix
from knudsen.diffusivity import (direct_sigma2, displacement_observable, galerkin_sigma2,
                                 lser_sigma2, mixture_eta_shift, spectral_sigma2)
from knudsen.errors import ReliabilityError
from knudsen.geometry import flatness_h, make_bumps, make_flat, make_mixture
from knudsen.operator import (TransitionMatrix, build_matrix, mixture_operator, pi_norm,
                              spectral_summary)
from knudsen.spectral_basis import (LegendreSeries, expand, gauss_rule, legendre_operator_apply,
                                    legendre_table, poisson_solve_series)

M, N = 400, 4000
F = displacement_observable(50_000)


def report(tag, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {tag}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def h_of(K):
    return flatness_h(make_bumps(K)).h


def test_c01_flatness_closed_forms():
    errs = [abs(flatness_h(make_bumps(K)).h - K * K / 12) for K in (0.1, 0.5, 1.0, 2.0)]
    errs += [abs(flatness_h(make_mixture(a)).h - a / 3) for a in (0.25, 0.5, 1.0)]
    assert report("C1 flatness closed forms", max(errs) <= 1e-8, f"max error {max(errs):.2e} (tol 1e-8)")


def test_c02_flat_cell_identity():
    P = build_matrix(make_flat(), M, N)
    exact = bool(np.array_equal(P.entries, np.eye(M)))
    refused = []
    for name, est in [("galerkin", lambda: galerkin_sigma2(P, F, 100)),
                      ("direct", lambda: direct_sigma2(P, F)),
                      ("spectral", lambda: spectral_sigma2(P, F)),
                      ("lser", lambda: lser_sigma2(F, flatness_h(make_flat()).h))]:
        try:
            est()
        except ReliabilityError:
            refused.append(name)
    gap = spectral_summary(P).gap
    ok = exact and len(refused) == 4 and gap == 0
    assert report("C2 flat-cell identity", ok,
                  f"identity={exact}, gap={gap:g}, reliability errors from {refused}")


def test_c03_diffuse_baseline():
    P = TransitionMatrix.diffuse(M)
    d = direct_sigma2(P, F).eta
    s = spectral_sigma2(P, F).eta
    err = max(abs(d - 1), abs(s - 1))
    assert report("C3 diffuse baseline", err <= 1e-6, f"eta direct={d:.10f} spectral={s:.10f} (tol 1e-6)")


def test_c04_gap_asymptotic():
    Ks = np.array([0.15, 0.2, 0.3])
    gaps = np.array([spectral_summary(bumps_matrix(K)).gap for K in Ks])
    rel = np.abs(gaps - Ks ** 2 / 3) / (Ks ** 2 / 3)
    slope = np.polyfit(np.log(Ks), np.log(gaps), 1)[0]
    ok = rel.max() <= 0.2 and abs(slope - 2) <= 0.2
    assert report("C4 spectral-gap asymptotic", ok,
                  f"gaps {np.round(gaps, 5).tolist()}, max rel err {rel.max():.3f} (tol 0.2), "
                  f"slope {slope:.3f} (2 +- 0.2)")


@pytest.mark.xfail(strict=True, reason="midpoint quantization floor at M = 400; slope 1.53 at M = 1000")
def test_c05_diffusion_residual():
    Ks = [0.1, 0.2, 0.4]
    hs, res = [], []
    for K in Ks:
        P = bumps_matrix(K)
        x = P.grid.midpoints
        h = h_of(K)
        hs.append(h)
        res.append(pi_norm(P.apply(x) - x + 4 * h * x) / pi_norm(x))
    slope = np.polyfit(np.log(hs), np.log(res), 1)[0]
    assert report("C5 diffusion-approximation residual", slope >= 1.3,
                  f"residuals {[f'{r:.2e}' for r in res]}, slope {slope:.3f} (need >= 1.3)")


def test_c06_estimator_concordance():
    worst_hi = 0.0
    for K in (0.4, 0.7, 1.0):
        P = bumps_matrix(K)
        v = [galerkin_sigma2(P, F, 100).sigma2, direct_sigma2(P, F).sigma2, spectral_sigma2(P, F).sigma2]
        worst_hi = max(worst_hi, max(v) / min(v) - 1)
    worst_lo = 0.0
    for K in (0.1, 0.2):
        g = galerkin_sigma2(bumps_matrix(K), F, 100).sigma2
        l = lser_sigma2(F, h_of(K), 500).sigma2
        worst_lo = max(worst_lo, abs(g - l) / min(g, l))
    ok = worst_hi <= 0.05 and worst_lo <= 0.10
    assert report("C6 estimator concordance", ok,
                  f"GM/direct/spectral max spread {worst_hi:.4f} (tol 0.05); "
                  f"lser vs GM max {worst_lo:.4f} (tol 0.10)")


def test_c07_galerkin_rate():
    P = bumps_matrix(0.5)
    ref = galerkin_sigma2(P, F, 512).sigma2
    ns = np.array([8, 16, 32, 64, 128, 256])
    d = np.array([abs(galerkin_sigma2(P, F, int(n)).sigma2 - ref) for n in ns])
    slope = np.polyfit(np.log(ns), np.log(d), 1)[0]
    assert report("C7 Galerkin rate", slope <= -1, f"log-log slope {slope:.3f} (need <= -1)")


def test_c08_mixture_identities():
    P1 = bumps_matrix(2.0)
    e1 = spectral_summary(P1).eigenvalues[1:]
    shift_err = 0.0
    for a in (0.25, 0.5, 0.75):
        ea = spectral_summary(mixture_operator(P1, a)).eigenvalues[1:]
        shift_err = max(shift_err, np.abs(ea - (a * e1 + 1 - a)).max())
    eta1 = direct_sigma2(P1, F).eta
    pred = eta1 + mixture_eta_shift(P1, F, 0.5)
    got = direct_sigma2(mixture_operator(P1, 0.5), F).eta
    rel = abs(pred - got) / got
    ok = shift_err <= 1e-10 and rel <= 0.02
    assert report("C8 mixture identities", ok,
                  f"eigenvalue shift error {shift_err:.2e} (tol 1e-10); eta shift {pred:.6f} "
                  f"vs direct {got:.6f}, rel {rel:.2e} (tol 0.02)")


def test_c09_lser_tail_bound():
    h = h_of(0.2)
    ratios = []
    for n in (50, 100, 250):
        a, b = lser_sigma2(F, h, n), lser_sigma2(F, h, 2 * n)
        ratios.append(abs(a.sigma2 - b.sigma2) / a.error_bound)
    assert report("C9 lser tail bound", max(ratios) <= 1,
                  f"|change| / bound = {[f'{r:.2e}' for r in ratios]} (need <= 1)")


@pytest.mark.xfail(strict=True, reason="gap peaks at d = -0.2 on the d < 0 plateau without a matching eta dip")
def test_c10_mirror_trend():
    ds = np.linspace(-0.3, 0.3, 7)
    gaps, etas = [], []
    for d in ds:
        P = two_bumps_matrix(float(d))
        s = spectral_summary(P)
        gaps.append(s.gap)
        etas.append(direct_sigma2(P, F, summary=s).eta)
    rho = stats.spearmanr(gaps, etas).statistic
    assert report("C10 mirror trend", rho <= -0.9,
                  f"Spearman(gap, eta) over 7 d values = {rho:.3f} (need <= -0.9)")


POISSON_FAMILY = [
    lambda x: x, lambda x: x ** 3, lambda x: x ** 2 - 1 / 3, lambda x: np.sin(3 * x),
    lambda x: np.cos(np.pi * x), lambda x: x * np.exp(-x * x), lambda x: np.tanh(4 * x),
    lambda x: (5 * x ** 3 - 3 * x) / 2 + 0.2 * x, lambda x: np.sign(x) * np.abs(x) ** 1.5,
    lambda x: np.exp(x) - np.sinh(1.0),
]


def test_c11_legendre_infrastructure():
    r = gauss_rule()
    V = legendre_table(50, r.nodes)
    G = (V * r.weights) @ V.T
    orth = np.abs(G - np.diag(1 / (2 * np.arange(51) + 1))).max()
    resid = 0.0
    for f in POISSON_FAMILY:
        g = poisson_solve_series(f, 60)
        res = LegendreSeries(legendre_operator_apply(g).coeffs + expand(f, 60).coeffs)
        resid = max(resid, np.sqrt(res.norm2()))
    ok = orth <= 1e-10 and resid <= 1e-9
    assert report("C11 Legendre infrastructure", ok,
                  f"orthogonality error {orth:.2e} (tol 1e-10), Poisson residual {resid:.2e} (tol 1e-9)")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
