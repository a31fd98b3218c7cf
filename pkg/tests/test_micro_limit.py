import math

import numpy as np
import pytest

from hicospec.errors import ConfigError, PoleError, PreconditionError
from hicospec.geometry import (
    BernoulliLattice,
    RandomParking,
    ScaledLattice,
    Window,
    generate,
    interval,
    square,
    volume_fraction,
)
from hicospec.micro_limit import (
    BetaFunction,
    SpectralSet,
    band_set,
    beta_derivative_check,
    beta_eval,
    beta_from_realization,
    beta_inf_estimate,
    bounded_domain_spectrum,
    hausdorff_distance,
    limit_set_G,
    local_average,
    periodic_beta,
    point_spectrum_classify,
    predicted_spectrum,
    spectral_measure,
    stieltjes_term,
)
from hicospec.shape_spectra import SpectrumSettings, analytic_spectrum, dirichlet_spectrum, micro_spectrum

from conftest import cube

PI2 = math.pi**2
ANALYTIC = SpectrumSettings(analytic=True, n_modes=400)
COARSE = SpectrumSettings(h=1 / 8, n_modes=16, min_cells=4)


@pytest.fixture(scope="module")
def interval_beta():
    return periodic_beta([analytic_spectrum(interval(0.5), 2000)], 1.0, 1)


class TestSpectralSet:
    def test_normalize(self):
        s = SpectralSet(((2, 3), (0, 1), (0.5, 2.5)), (5.0, 1.5, 7.0))
        assert s.intervals == ((0.0, 3.0),)
        assert s.points == (5.0, 7.0)

    def test_queries(self):
        s = SpectralSet(((0, 1), (2, 3)), (4.0,))
        assert s.contains(0.5) and not s.contains(1.5)
        assert s.distance(1.5) == pytest.approx(0.5)
        assert s.gaps(0, 5) == [(1, 2), (3, 4), (4, 5)]
        assert s.measure() == pytest.approx(2.0)
        assert s.clip(0.5, 2.5).intervals == ((0.5, 1.0), (2.0, 2.5))
        assert [r[0] for r in s.rows()] == ["interval", "interval", "point"]

    def test_hausdorff(self):
        assert hausdorff_distance([0.0], SpectralSet.interval(1, 2), (0, 2)) == pytest.approx(2.0)
        pts = np.linspace(1, 2, 1001)
        assert hausdorff_distance(pts, SpectralSet.interval(1, 2), (0, 3)) < 1e-3


class TestBeta:
    def test_zero_and_empty(self, lattice_half):
        assert beta_eval(lattice_half, 0.0, COARSE).lo == 0.0
        empty = BetaFunction([])
        assert empty(7.5).lo == empty(7.5).hi == 7.5

    def test_interval_value(self, interval_beta):
        b = interval_beta(10.0)
        exact = 10 + 100 * (2 * math.tan(math.sqrt(10) / 4) / math.sqrt(10) - 0.5) / 10
        assert b.lo <= exact <= b.hi
        assert exact == pytest.approx(11.39030766, abs=1e-7)
        assert b.width <= 1e-2

    def test_small_lambda(self, lattice_half, interval_beta):
        for beta in (interval_beta, BetaFunction.from_model(lattice_half, COARSE)):
            r = beta.mid(1e-3) / 1e-3
            assert 0.999 <= r <= 1 + 10 * beta.theta * 1e-3

    def test_slope(self, interval_beta, lattice_half):
        lams = np.linspace(0.5, 4 * PI2 - 0.5, 60)
        assert beta_derivative_check(interval_beta, lams) >= 0.5 - 1e-2
        b = BetaFunction.from_model(lattice_half, COARSE)
        assert beta_derivative_check(b, np.linspace(0.5, 74.0, 60)) >= 1 - b.theta - 1e-2
        assert beta_derivative_check(BetaFunction([]), [0, 1, 2]) == pytest.approx(1.0)

    def test_slope_rejects_pole_crossing(self, interval_beta):
        with pytest.raises(PreconditionError):
            beta_derivative_check(interval_beta, [30.0, 50.0])

    def test_pole(self, interval_beta):
        with pytest.raises(PoleError):
            interval_beta(4 * PI2)


class TestBands:
    def test_interval_first_gap(self, interval_beta):
        s = band_set(interval_beta, 200.0)
        assert s.intervals[0] == pytest.approx((0.0, 4 * PI2))
        lstar = s.intervals[1][0]
        assert lstar == pytest.approx(65.8526, abs=1e-2)
        assert interval_beta.mid(lstar - 0.05) < 0 < interval_beta.mid(lstar + 0.05)

    def test_empty_model(self):
        s = predicted_spectrum(None, 50.0, beta=BetaFunction([]))
        assert s.intervals == ((0.0, 50.0),)

    def test_coarse_square_gaps(self, lattice_full, lattice_half):
        p1 = predicted_spectrum(lattice_full, 150.0, COARSE)
        p5 = predicted_spectrum(lattice_half, 150.0, COARSE)
        assert p1.gaps(0, 150)[0] == pytest.approx((74.98066, 90.976), abs=1e-3)
        assert p5.gaps(0, 150)[0] == pytest.approx((74.98066, 82.368), abs=1e-3)

    def test_micro_points_inside(self, lattice_half):
        s = predicted_spectrum(lattice_half, 150.0, COARSE)
        for p in micro_spectrum(lattice_half, 150.0, COARSE):
            assert s.contains(p.value)

    def test_needs_modes(self, lattice_half):
        with pytest.raises(PreconditionError):
            predicted_spectrum(lattice_half, 1e4, SpectrumSettings(h=1 / 32, n_modes=4))

    def test_bounded_domain(self):
        # β = λ: eigenvalues of -Δ on the box
        got = bounded_domain_spectrum(BetaFunction([]), np.eye(2), 1.0, (0.0, 60.0))
        assert np.allclose(got, PI2 * np.array([2, 5, 5]), rtol=1e-8)


class TestLimitSet:
    def test_bernoulli_fills(self, lattice_half):
        G = limit_set_G(lattice_half, 150.0, COARSE)
        assert G.intervals == ((0.0, 150.0),)

    def test_periodic_equals_prediction(self, lattice_full):
        G = limit_set_G(lattice_full, 150.0, COARSE)
        P = predicted_spectrum(lattice_full, 150.0, COARSE)
        assert np.allclose(G.intervals, P.intervals)

    def test_parking_union(self):
        model = RandomParking(square(0.5), dim=2)
        G = limit_set_G(model, 150.0, COARSE)
        spec = dirichlet_spectrum(square(0.5), 1 / 8, 16, min_cells=4)
        one = band_set(periodic_beta([spec], 1.0), 150.0)
        two = band_set(periodic_beta([spec], 2.0), 150.0)
        for a, b in one.intervals + two.intervals:
            assert G.contains(a) and G.contains(b) and G.contains(0.5 * (a + b))
        assert G.flags.get("parking_bespoke")

    def test_prediction_inside_G(self, sq):
        for model in (BernoulliLattice((sq,), p=0.5), ScaledLattice(sq, (0.75, 1.0), (0.5, 0.5))):
            s = SpectrumSettings(h=1 / 32, n_modes=64, min_cells=4)
            P = predicted_spectrum(model, 150.0, s)
            G = limit_set_G(model, 150.0, s)
            for a, b in P.intervals:
                assert G.contains(a, 1e-9) and G.contains(b, 1e-9)

    def test_unknown_without_ensemble(self):
        with pytest.raises(ConfigError):
            limit_set_G(object(), 10.0)


class TestRealization:
    def test_empty(self, sq):
        real = generate(BernoulliLattice((sq,), p=0.0), cube(8), 0)
        assert beta_from_realization(real, 12.0, COARSE) == 12.0
        assert local_average(real, (4.0, 4.0), 4.0, 12.0, COARSE) == 12.0

    def test_full_lattice_exact(self, lattice_full):
        real = generate(lattice_full, cube(10), 0)
        b = beta_eval(lattice_full, 40.0, COARSE)
        assert beta_from_realization(real, 40.0, COARSE) == pytest.approx(b.mid, abs=b.width + 1e-12)
        assert local_average(real, (5.0, 5.0), 4.0, 40.0, COARSE) == pytest.approx(b.mid, abs=b.width + 1e-12)

    def test_sup_exceeds_mean(self, lattice_half):
        real = generate(lattice_half, cube(16), 3)
        lam = 40.0
        est = beta_inf_estimate(real, lam, [2.0, 4.0], COARSE)
        avg = beta_from_realization(real, lam, COARSE)
        for v in est.values():
            assert v >= avg - 1e-9
            assert v >= lam - 1e-9

    def test_beta_inf_full_lattice(self, lattice_full):
        real = generate(lattice_full, cube(12), 0)
        b = beta_eval(lattice_full, 40.0, COARSE)
        est = beta_inf_estimate(real, 40.0, [4.0], COARSE)
        assert est[4.0] == pytest.approx(b.mid, rel=1e-9)

    def test_beta_inf_empty(self, sq):
        real = generate(BernoulliLattice((sq,), p=0.0), cube(8), 0)
        assert beta_inf_estimate(real, 30.0, [2.0, 4.0], COARSE) == {2.0: 30.0, 4.0: 30.0}


class TestMeasure:
    def test_totals(self, lattice_half):
        s = SpectrumSettings(h=1 / 8, n_modes=16, min_cells=4)
        pts = micro_spectrum(lattice_half, 600.0, s)
        m = spectral_measure(pts, np.linspace(0, 600, 201))
        theta = BetaFunction.from_model(lattice_half, s).theta
        assert m.total == pytest.approx(theta, rel=1e-12)
        assert m.mass[0] == 0.0

    def test_first_bin_mass(self, lattice_full):
        spec = dirichlet_spectrum(square(0.5), 1 / 8, 16, min_cells=4)
        pts = micro_spectrum(lattice_full, 150.0, COARSE)
        m = spectral_measure(pts, [70.0, 80.0])
        assert m.mass[0] == pytest.approx(spec.masses[0])

    def test_stieltjes_matches_beta(self, lattice_half):
        pts = micro_spectrum(lattice_half, 600.0, COARSE)
        m = spectral_measure(pts, np.linspace(0, 600, 201))
        b = BetaFunction.from_model(lattice_half, COARSE)
        for lam in (10.0, 50.0, 100.0):
            val, err = stieltjes_term(m, lam)
            bb = b(lam)
            assert abs(lam + val - bb.mid) <= bb.width + err

    def test_point_spectrum(self):
        a = analytic_spectrum(square(1.0), 10)
        flags = point_spectrum_classify(a)
        assert not flags[0]
        assert flags[1]  # 5π²
        assert a.masses[0] == pytest.approx(64 / math.pi**4)
