import numpy as np
import pytest
from scipy import stats

from conftest import bumps_matrix
from knudsen.errors import ParameterError, StorageError
from knudsen.geometry import flatness_h, make_bumps, make_flat, make_mixture
from knudsen.operator import (BinMoments, TransitionMatrix, VelocityGrid, build_matrix,
                              mixture_operator, pi_norm, sample_transition, spectral_measure,
                              spectral_summary, stationarity_defect, symmetry_defect)


def random_doubly_stochastic(M, rng, k=6):
    """Convex combination of permutation matrices (Birkhoff)."""
    w = rng.dirichlet(np.ones(k))
    return sum(wi * np.eye(M)[rng.permutation(M)] for wi in w)


class TestGrid:
    def test_edges_and_midpoints(self):
        g = VelocityGrid(10)
        assert np.all(np.diff(g.edges) > 0)
        assert g.edges[0] == -1 and g.edges[-1] == 1
        assert np.all((g.midpoints > g.edges[:-1]) & (g.midpoints < g.edges[1:]))

    def test_bin_of_roundtrip(self):
        g = VelocityGrid(37)
        assert np.array_equal(g.bin_of(g.midpoints), np.arange(37))

    def test_too_few_bins(self):
        with pytest.raises(ParameterError):
            VelocityGrid(1)


class TestSampleTransition:
    def test_flat_is_deterministic(self):
        assert sample_transition(make_flat(), 0.3, np.random.default_rng(0)) == 0.3

    def test_out_of_range(self):
        with pytest.raises(ParameterError):
            sample_transition(make_flat(), 1.0)

    def test_small_bumps_concentrated(self):
        prof = make_bumps(0.1)
        rng = np.random.default_rng(1)
        xs = np.array([sample_transition(prof, 0.0, rng) for _ in range(400)])
        h = flatness_h(prof).h
        assert abs(xs.mean()) < 0.05
        assert xs.std() < 5 * np.sqrt(h)

    @pytest.mark.parametrize("x", [0.0, 0.5, -0.8])
    def test_semicircle_close_to_uniform(self, x):
        # the exit law is near, though not equal to, the stationary law
        from knudsen.billiard import trace_batch
        r = (np.arange(20000) + 0.5) / 20000
        res = trace_batch(make_bumps(2.0), r, np.full(r.size, x))
        xo = res.x_out[res.status == 0]
        assert stats.kstest(xo, stats.uniform(-1, 2).cdf).statistic < 0.15


class TestBuild:
    def test_flat_is_identity(self):
        P = build_matrix(make_flat(), 50, 20)
        assert np.array_equal(P.entries, np.eye(50))
        assert np.all(P.beta_plus == 1)

    def test_row_stochastic_and_bounds(self):
        P = bumps_matrix(0.5)
        assert np.allclose(P.entries.sum(axis=1), 1, atol=1e-12)
        assert P.entries.min() >= 0 and P.entries.max() <= 1

    def test_grid_mode_deterministic(self):
        a = build_matrix(make_bumps(0.5), 40, 300)
        b = build_matrix(make_bumps(0.5), 40, 300)
        assert np.array_equal(a.entries, b.entries)

    def test_random_mode_reproducible_and_close(self):
        a = build_matrix(make_bumps(0.5), 60, 1000, "random", 1)
        b = build_matrix(make_bumps(0.5), 60, 1000, "random", 1)
        c = build_matrix(make_bumps(0.5), 60, 1000, "random", 2)
        assert np.array_equal(a.entries, b.entries)
        assert np.abs(a.entries - c.entries).max() <= 3 / np.sqrt(1000)

    def test_workers_match_serial(self):
        a = build_matrix(make_bumps(0.7), 24, 200)
        b = build_matrix(make_bumps(0.7), 24, 200, workers=2)
        assert np.array_equal(a.entries, b.entries)

    @pytest.mark.parametrize("M,N", [(1, 10), (10, 0)])
    def test_bad_sizes(self, M, N):
        with pytest.raises(ParameterError):
            build_matrix(make_bumps(0.5), M, N)

    def test_metadata(self):
        P = build_matrix(make_bumps(0.5), 20, 100)
        md = P.metadata()
        assert md["M"] == 20 and md["N"] == 100 and md["mode"] == "grid"
        assert md["rejected"] == 0 and "quality_warning" not in md


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        P = build_matrix(make_mixture(0.5), 30, 100)
        P.save(tmp_path / "m.npz")
        Q = TransitionMatrix.load(tmp_path / "m.npz")
        assert np.array_equal(P.entries, Q.entries)
        assert np.array_equal(P.beta_plus, Q.beta_plus)
        assert Q.metadata() == P.metadata()

    def test_missing_file(self, tmp_path):
        with pytest.raises(StorageError):
            TransitionMatrix.load(tmp_path / "nope.npz")

    def test_unwritable(self, tmp_path):
        with pytest.raises(StorageError):
            TransitionMatrix.identity(3).save(tmp_path / "no" / "dir" / "m.npz")


class TestDiagnostics:
    @pytest.mark.parametrize("P", [TransitionMatrix.identity(20), TransitionMatrix.diffuse(20)])
    def test_stationarity_exact(self, P):
        assert stationarity_defect(P) == pytest.approx(0, abs=1e-14)

    def test_stationarity_traced(self):
        P = bumps_matrix(0.5)
        assert stationarity_defect(P) <= 3 / np.sqrt(P.N)

    def test_sampling_error_halves_with_4N(self):
        # independent strata: the N-dependent part of the asymmetry
        prof = make_bumps(0.5)

        def spread(N):
            a = build_matrix(prof, 40, N, "random", 1).entries
            b = build_matrix(prof, 40, N, "random", 2).entries
            return np.sqrt(np.mean((a - b) ** 2))
        assert spread(2000) < 0.65 * spread(500)

    def test_asymmetry_shrinks_with_M(self):
        # at fixed N the grid-mode defect is a midpoint-binning bias
        prof = make_bumps(0.5)
        d = [symmetry_defect(build_matrix(prof, M, 1000)) for M in (50, 200)]
        assert d[1] < d[0]
        assert d[1] <= 2 / np.sqrt(1000)

    def test_norm_bound_doubly_stochastic(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            P = random_doubly_stochastic(30, rng)
            for _ in range(10):
                v = rng.normal(size=30)
                assert pi_norm(P @ v) <= pi_norm(v) + 1e-10

    def test_norm_bound_traced_jensen(self):
        # row-stochastic: ||Pv||^2 <= max column mean * ||v||^2
        P = bumps_matrix(0.5).entries
        cmax = P.sum(axis=0).max()
        rng = np.random.default_rng(4)
        for _ in range(20):
            v = rng.normal(size=P.shape[0])
            assert pi_norm(P @ v) ** 2 <= cmax * pi_norm(v) ** 2 + 1e-10


class TestSpectrum:
    def test_identity_gap_zero(self):
        assert spectral_summary(TransitionMatrix.identity(10)).gap == pytest.approx(0)

    def test_diffuse_gap_one(self):
        s = spectral_summary(TransitionMatrix.diffuse(10))
        assert s.gap == pytest.approx(1)
        assert s.eigenvalues[0] == 1
        assert np.allclose(s.eigenvalues[1:], 0, atol=1e-12)

    def test_bumps_gap(self):
        s = spectral_summary(bumps_matrix(0.3))
        assert s.gap == pytest.approx(0.03, rel=0.2)
        assert np.all(np.abs(s.eigenvalues) <= 1 + 1e-10)
        assert np.all(np.diff(s.eigenvalues[1:]) <= 0)

    def test_eigenvectors_orthonormal(self):
        s = spectral_summary(TransitionMatrix(random_doubly_stochastic(12, np.random.default_rng(0))),
                             vectors=True)
        U = s.eigenvectors
        assert np.allclose(U.T @ U / 12, np.eye(11), atol=1e-12)
        assert np.allclose(U.sum(axis=0), 0, atol=1e-10)


class TestSpectralMeasure:
    def test_parseval_bin_values(self):
        rng = np.random.default_rng(2)
        P = TransitionMatrix(random_doubly_stochastic(25, rng))
        v = rng.normal(size=25)
        mu = spectral_measure(P, v)
        vc = v - v.mean()
        assert mu.total == pytest.approx(np.mean(vc ** 2), abs=1e-8)

    def test_parseval_observable(self):
        from knudsen.diffusivity import displacement_observable
        f = displacement_observable()
        P = bumps_matrix(0.5)
        assert spectral_measure(P, f).total == pytest.approx(f.norm2(), rel=1e-8)

    def test_diffuse_mass_at_zero(self):
        mu = spectral_measure(TransitionMatrix.diffuse(16), np.linspace(-1, 1, 16))
        assert np.all(np.abs(mu.lambdas[mu.weights > 1e-14]) < 1e-12)

    def test_small_bumps_concentrated_near_top(self):
        from knudsen.diffusivity import displacement_observable
        P = bumps_matrix(0.3)
        h = flatness_h(make_bumps(0.3)).h
        mu = spectral_measure(P, BinMoments.from_values(VelocityGrid(400).midpoints))
        top = mu.weights[mu.lambdas > 1 - 3 * 4 * h].sum()
        assert top > 0.9 * mu.total
        assert displacement_observable().norm2() > 0


class TestMixture:
    def test_alpha_one_unchanged(self):
        P = bumps_matrix(0.5)
        Q = mixture_operator(P, 1.0)
        assert np.array_equal(P.entries, Q.entries)

    @pytest.mark.parametrize("alpha", [0.0, -0.1, 1.5])
    def test_bad_alpha(self, alpha):
        with pytest.raises(ParameterError):
            mixture_operator(TransitionMatrix.identity(4), alpha)

    @pytest.mark.parametrize("alpha", [0.25, 0.5, 0.9])
    def test_spectrum_shift(self, alpha):
        P = bumps_matrix(1.0)
        e1 = spectral_summary(P).eigenvalues[1:]
        e2 = spectral_summary(mixture_operator(P, alpha)).eigenvalues[1:]
        assert np.allclose(e2, alpha * e1 + 1 - alpha, atol=1e-10)

    def test_gap_halves(self):
        P = bumps_matrix(2.0)
        g1 = spectral_summary(P).gap
        g2 = spectral_summary(mixture_operator(P, 0.5)).gap
        assert g2 == pytest.approx(0.5 * g1, abs=1e-10)

    def test_row_stochastic(self):
        Q = mixture_operator(bumps_matrix(1.0), 0.3)
        assert np.allclose(Q.entries.sum(axis=1), 1, atol=1e-12)

    def test_traced_mixture_matches(self):
        P_mix = build_matrix(make_mixture(0.5), 100, 2000)
        P_semi = build_matrix(make_bumps(2.0), 100, 2000)
        Q = mixture_operator(P_semi, 0.5)
        g1, g2 = spectral_summary(P_mix).gap, spectral_summary(Q).gap
        assert g1 == pytest.approx(g2, abs=0.03)


def test_diffusion_residual_slope():
    # ||(P - I) phi_1 + 4 h phi_1|| / ||phi_1|| shrinks faster than h itself
    Ks = [0.1, 0.2, 0.4]
    hs, res = [], []
    for K in Ks:
        P = bumps_matrix(K, M=1000, N=4000)
        x = P.grid.midpoints
        h = flatness_h(make_bumps(K)).h
        r = P.apply(x) - x + 4 * h * x
        hs.append(h)
        res.append(pi_norm(r) / pi_norm(x))
    slope = np.polyfit(np.log(hs), np.log(res), 1)[0]
    assert slope >= 1.3
