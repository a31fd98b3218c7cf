import json
import math

import numpy as np
import pytest
from scipy import stats

from hicospec.errors import ConfigError, PreconditionError
from hicospec.geometry import (
    BernoulliLattice,
    RandomParking,
    Realization,
    ScaledLattice,
    Shape,
    Window,
    disk,
    generate,
    interval,
    mark,
    min_gap,
    model_from_dict,
    rasterize_realization,
    square,
    subwindow,
    void_injection,
    volume_fraction,
)
from hicospec.parking import probe_uncovered

from conftest import cube


class TestShape:
    def test_primitive_areas(self):
        assert square(0.5).area() == pytest.approx(0.25)
        assert disk(0.25).area() == pytest.approx(math.pi / 16)
        assert interval(0.4).area() == pytest.approx(0.4)

    def test_checks(self):
        c = square(0.3).checks()
        assert c["diameter_below_half"] and c["fits_unit_cell"] and c["connected"]
        # the side-0.5 square has diameter sqrt(2)/2
        assert not square(0.5).checks()["diameter_below_half"]

    def test_raster_connectivity(self):
        m = np.zeros((8, 8), bool)
        m[1:3, 1:3] = True
        m[5:7, 5:7] = True
        s = Shape("two", "raster", mask=m, h_mask=1 / 32)
        assert not s.is_connected()
        m2 = np.zeros((8, 8), bool)
        m2[1:7, 1:7] = True
        assert Shape("one", "raster", mask=m2, h_mask=1 / 32).is_connected()

    def test_bad_shapes(self):
        with pytest.raises(ConfigError):
            Shape("x", "hexagon", size=1)
        with pytest.raises(ConfigError):
            square(-1.0)

    def test_roundtrip(self):
        m = np.zeros((4, 4), bool)
        m[1:3, 1:3] = True
        for s in (square(0.25), disk(0.2), Shape("r", "raster", mask=m, h_mask=0.1)):
            t = Shape.from_dict(json.loads(json.dumps(s.to_dict())))
            assert t == s
            if s.mask is not None:
                assert np.array_equal(t.mask, s.mask)


class TestModels:
    def test_probabilities_validated(self, sq):
        with pytest.raises(ConfigError):
            BernoulliLattice((sq, sq), weights=(0.7, 0.7))
        with pytest.raises(ConfigError):
            BernoulliLattice((sq,), p=1.5)
        with pytest.raises(ConfigError):
            BernoulliLattice((sq,), pitch=0.5)
        with pytest.raises(ConfigError):
            ScaledLattice(sq, (0.0, 0.5), (0.5, 0.5))

    def test_model_dict_roundtrip(self, sq):
        for m in (BernoulliLattice((sq,), p=0.3), ScaledLattice(sq, (0.5, 1.0), (0.5, 0.5)),
                  RandomParking(square(0.5), dim=2)):
            assert model_from_dict(m.to_dict()) == m
        with pytest.raises(ConfigError):
            model_from_dict({"kind": "poisson"})

    def test_scaled_from_density(self, sq):
        m = ScaledLattice.from_density(sq, 0.5, 1.0, lambda r: 1.0, n=4)
        assert np.allclose(m.scales, [0.5625, 0.6875, 0.8125, 0.9375])
        assert np.allclose(m.weights, 0.25)


class TestGenerate:
    def test_full_lattice(self, lattice_full):
        real = generate(lattice_full, cube(4), 7)
        assert len(real) == 16
        assert volume_fraction(real) == pytest.approx(0.25)
        assert np.allclose(np.sort(np.unique(real.centers[:, 0])), [0.5, 1.5, 2.5, 3.5])

    def test_empty(self, sq):
        real = generate(BernoulliLattice((sq,), p=0.0), cube(6), 0)
        assert len(real) == 0
        assert volume_fraction(real) == 0.0
        assert mark(real, 3).values == {}

    def test_determinism(self, lattice_half):
        a = generate(lattice_half, cube(16), 5)
        b = generate(lattice_half, cube(16), 5)
        assert a.to_dict() == b.to_dict()
        c = generate(lattice_half, cube(16), 6)
        assert not np.array_equal(a.labels, c.labels)

    def test_window_independence(self, lattice_half):
        big = generate(lattice_half, cube(16), 5)
        small = generate(lattice_half, Window((6.0, 6.0), 4.0), 5)
        sel = subwindow(big, Window((6.0, 6.0), 4.0))
        assert np.array_equal(sel.labels, small.labels)
        assert np.allclose(sel.centers, small.centers)

    def test_separation_over_seeds(self, sq):
        model = ScaledLattice(sq, (0.5, 0.75, 1.0), (0.3, 0.3, 0.4), p=0.8)
        for seed in range(100):
            real = generate(model, cube(6), seed)
            assert real.flags["separation_ok"]
            assert min_gap(real) >= model.gap

    def test_theta_consistency(self, lattice_half):
        # windowed θ against p|Y|/t^d at 3 sigma of the binomial site count
        real = generate(lattice_half, cube(64), 11)
        n_sites = 64 * 64
        sigma = math.sqrt(n_sites * 0.25) * 0.25 / n_sites
        assert abs(volume_fraction(real) - 0.125) <= 3 * sigma

    def test_window_too_small(self, lattice_half):
        with pytest.raises(PreconditionError):
            generate(lattice_half, cube(0.5), 0)

    def test_snapshot_roundtrip(self, lattice_half, tmp_path):
        real = generate(lattice_half, cube(8), 2)
        p = tmp_path / "geom.json"
        real.save(p)
        back = Realization.load(p)
        assert back.to_dict() == real.to_dict()
        data = json.loads(p.read_text())
        assert set(data) >= {"dimension", "window", "model", "seed", "inclusions"}


class TestParking:
    def test_one_dimensional_density(self):
        model = RandomParking(interval(0.5), dim=1)
        dens = [len(generate(model, Window((100.0,), 200.0), s)) / 200.0 for s in range(10)]
        assert abs(np.mean(dens) - 0.7476) < 0.02

    def test_jammed_and_probe(self):
        model = RandomParking(square(0.5), dim=2)
        real = generate(model, cube(10), 3)
        assert real.flags["jammed"]
        # no unit cube fits anywhere in the window
        from hicospec.parking import park

        res = park(model, cube(10), 3)
        assert probe_uncovered(res.all_centers, res.region_lo + 0.5, res.region_hi - 0.5, 0.05) == 0
        assert res.probe_jammed

    def test_items_do_not_overlap(self):
        model = RandomParking(square(0.5), dim=2)
        real = generate(model, cube(8), 1)
        c = real.centers
        d = np.max(np.abs(c[:, None, :] - c[None, :, :]), axis=-1)
        np.fill_diagonal(d, np.inf)
        assert d.min() >= 1.0 - 1e-12

    def test_deterministic(self):
        model = RandomParking(interval(0.5), dim=1)
        a = generate(model, Window((20.0,), 40.0), 9)
        b = generate(model, Window((20.0,), 40.0), 9)
        assert np.array_equal(a.centers, b.centers) and np.array_equal(a.labels, b.labels)


class TestMarking:
    def test_balance(self, sq):
        real = generate(BernoulliLattice((sq,), p=1.0), cube(100), 0)
        m = mark(real, 17)
        vals = np.array(list(m.values.values()))
        assert len(vals) == 10_000
        assert set(np.unique(vals)) <= {-1, 1}
        # exact binomial tail of |mean| > 0.05 is below 1e-6
        assert 2 * stats.binom.sf(5250, 10_000, 0.5) < 1e-6
        assert abs(vals.mean()) <= 0.05

    def test_window_stable(self, lattice_half):
        a = generate(lattice_half, cube(12), 4)
        b = generate(lattice_half, Window((3.0, 3.0), 6.0), 4)
        ma, mb = mark(a, 99), mark(b, 99)
        assert len(mb.values) > 0
        for k, v in mb.values.items():
            assert ma[k] == v


class TestWindowing:
    def test_subwindow_identity_and_empty(self, lattice_half):
        real = generate(lattice_half, cube(8), 0)
        assert subwindow(real, real.window).to_dict()["inclusions"] == real.to_dict()["inclusions"]
        # a box between lattice nodes misses every inclusion
        assert len(subwindow(real, Window((1.0, 1.0), 0.4))) == 0

    def test_subwindow_enumeration(self, lattice_full):
        real = generate(lattice_full, cube(6), 0)
        box = Window((2.5, 2.5), 2.0)
        expected = 0
        for i in range(6):
            for j in range(6):
                cx, cy = i + 0.5, j + 0.5
                if 1.5 <= cx - 0.25 and cx + 0.25 <= 3.5 and 1.5 <= cy - 0.25 and cy + 0.25 <= 3.5:
                    expected += 1
        assert len(subwindow(real, box)) == expected == 1

    def test_void_injection(self, lattice_full):
        real = generate(lattice_full, cube(8), 0)
        assert len(void_injection(real, Window((2.5, 2.5), 3.0))) == len(real) - 9
        assert len(void_injection(real, real.window)) == 0
        assert len(void_injection(real, Window((1.0, 1.0), 0.2))) == len(real)
        survivors = void_injection(real, Window((2.5, 2.5), 3.0))
        assert set(survivors.labels) <= set(real.labels)


def test_rasterize(lattice_full):
    real = generate(lattice_full, cube(2), 0)
    owner = rasterize_realization(real, np.zeros(2), (16, 16), 1 / 8)
    # each side-0.5 square covers 4x4 cells
    assert (owner >= 0).sum() == 4 * 16
    assert set(np.unique(owner)) == {-1, 0, 1, 2, 3}
