import math

import numpy as np
import pytest

from hicospec.direct_solver import assemble, b_field
from hicospec.errors import ConfigError, GeometryError, PreconditionError
from hicospec.geometry import BernoulliLattice, Window, generate, square
from hicospec.homogenization import (
    CellProblem,
    c_hat,
    corrector_diagnostics,
    divergence_potential,
    error_aggregate,
    face_divergence,
    flux_corrector,
    homogenized_matrix,
    solve_corrector,
)
from hicospec.micro_limit import BetaFunction
from hicospec.shape_spectra import dirichlet_spectrum

# fine-grid corrector oracle for the centred side-0.5 hole (A1 = I)
HOLE_A = {64: 0.576014, 128: 0.576819, 256: 0.577139}


@pytest.fixture(scope="module")
def hole64():
    cell = CellProblem.centered_square_hole(0.5, 1 / 64)
    return cell, homogenized_matrix(cell)


def test_empty_cell():
    cell = CellProblem(np.zeros((16, 16), bool))
    t = homogenized_matrix(cell)
    assert np.allclose(t.matrix, np.eye(2), atol=1e-9)
    assert np.all(solve_corrector(cell, 0).values == 0)
    fc = flux_corrector(cell, t, 0)
    assert np.all(fc.psi == 0)


def test_anisotropic_empty_cell():
    a1 = np.diag([2.0, 0.5])
    t = homogenized_matrix(CellProblem(np.zeros((8, 8), bool), 1.0, a1))
    assert np.allclose(t.matrix, a1, atol=1e-9)


def test_hole_value(hole64):
    cell, t = hole64
    a = t.matrix[0, 0]
    assert a == pytest.approx(HOLE_A[64], abs=2e-6)
    assert abs(t.matrix[0, 0] - t.matrix[1, 1]) <= 1e-6
    assert abs(t.matrix[0, 1]) <= 1e-6
    assert 0 < a < 1 - cell.theta


def test_bounds(hole64):
    cell, t = hole64
    assert np.all(np.linalg.eigvalsh(t.matrix) > 0)
    assert np.linalg.eigvalsh((1 - cell.theta) * cell.a1 - t.matrix).min() >= -1e-8


def test_corrector_symmetry(hole64):
    cell, t = hole64
    N = t.correctors[0].values
    # odd in x about the centre, even in y (cell-centred grid)
    assert np.abs(N + N[::-1, :]).max() <= 1e-8
    assert np.abs(N - N[:, ::-1]).max() <= 1e-8
    assert np.abs(N.mean()) <= 1e-10


def test_energy_identity(hole64):
    cell, t = hole64
    from hicospec.homogenization import _face_masks, face_gradient

    fx, fy = _face_masks(~cell.holes)
    N = t.correctors[0].values
    gx, gy = face_gradient(N, cell.h)
    lhs = np.sum(np.where(fx, gx * gx, 0)) + np.sum(np.where(fy, gy * gy, 0))
    rhs = -np.sum(np.where(fx, gx, 0))
    assert lhs == pytest.approx(rhs, rel=1e-8)


def test_disconnected_stiff_phase():
    holes = np.zeros((8, 8), bool)
    holes[3, :] = True
    holes[6, :] = True
    with pytest.raises(GeometryError):
        homogenized_matrix(CellProblem(holes))


def test_bad_a1():
    with pytest.raises(ConfigError):
        CellProblem(np.zeros((4, 4), bool), 1.0, np.array([[1.0, 0.2], [0.2, 1.0]]))


class TestFluxCorrector:
    def test_divergence_contract(self, hole64):
        cell, t = hole64
        for j in range(2):
            fc = flux_corrector(cell, t, j)
            assert fc.defect <= 1e-8
            assert fc.mean_defect <= 1e-8

    def test_against_direct_poisson(self, hole64):
        cell, t = hole64
        fc = flux_corrector(cell, t, 0)
        gx, gy = fc.g
        # curl of g inverted by a dense periodic Laplacian solve
        n, h = cell.n, cell.h
        curl = (np.roll(gy, -1, 0) - gy) / h - (np.roll(gx, -1, 1) - gx) / h
        from scipy.sparse import identity, kron, diags

        e = np.ones(n)
        d1 = diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1], shape=(n, n)).tolil()
        d1[0, -1] = d1[-1, 0] = 1
        lap = (kron(d1, identity(n)) + kron(identity(n), d1)).toarray() / h**2
        lap -= np.ones_like(lap) / lap.size  # pin the mean
        psi = np.linalg.solve(-lap, curl.ravel()).reshape(n, n)
        assert np.allclose(psi - psi.mean(), fc.psi, atol=1e-9 * np.abs(fc.psi).max())
        gnorm = math.sqrt(np.sum(gx**2) + np.sum(gy**2))
        assert np.linalg.norm(fc.psi) <= cell.edge * gnorm


class TestDivergencePotential:
    def test_zero(self):
        (bx, by), m = divergence_potential(np.zeros((8, 8)), 0.125)
        assert np.all(bx == 0) and np.all(by == 0) and m == 0

    def test_fourier_mode(self):
        n, L = 128, 2.0
        h = L / n
        x = (np.arange(n) + 0.5) * h
        X, Y = np.meshgrid(x, x, indexing="ij")
        k = np.array([2 * np.pi / L, 4 * np.pi / L])
        f = np.cos(k[0] * X + k[1] * Y)
        (bx, by), m = divergence_potential(f, h)
        assert abs(m) < 1e-12
        assert np.abs(face_divergence(bx, by, h) - f).max() < 1e-10
        # continuum B = k sin(k·x)/|k|², bx lives on x-faces
        exact = k[0] * np.sin(k[0] * (X + h / 2) + k[1] * Y) / (k @ k)
        assert np.abs(bx - exact).max() < 2e-3

    def test_decreases_with_eps(self):
        sq = square(0.5)
        model = BernoulliLattice((sq,), p=0.5)
        spec = dirichlet_spectrum(sq, 1 / 8, 16, min_cells=4)
        beta = BetaFunction([(spec, 0.5)])
        lam = 30.0
        bmean = (beta.mid(lam) - lam) / lam**2
        ratios = []
        for seed in range(10):
            norms = []
            for eps in (1 / 8, 1 / 16):
                L = 2.0
                M = L / eps
                op = assemble(generate(model, Window.cube(M, 2, [M / 2, M / 2]), seed), eps, 1.0, eps / 8,
                              Window.cube(L, 2, [L / 2, L / 2]), min_cells=4)
                b = b_field(op, lam)
                (bx, by), _ = divergence_potential(bmean - b, op.h)
                norms.append(math.sqrt(op.h**2 * (np.sum(bx**2) + np.sum(by**2))))
            ratios.append(norms[1] / norms[0])
        assert np.median(ratios) < 1.0


class TestAggregate:
    def test_limits(self):
        assert c_hat(0.0, 0.0, 1.0, 3.0) == 3.0
        assert error_aggregate(None, 0.0, 8.0, 0.0, 0.0, 1.0) == pytest.approx(1 / 8)
        assert error_aggregate(None, 0.0, 4.0, 10.0, 5.0, 2.0) == pytest.approx(c_hat(10.0, 5.0, 2.0) / 4)

    def test_guard(self):
        with pytest.raises(PreconditionError):
            error_aggregate(None, 0.1, 4.0, 10.0, 5.0, 1e-4, guard=1e-3)

    def test_golden_pipeline(self):
        def run():
            sq = square(0.5, id="sq")
            model = BernoulliLattice((sq,), p=0.5)
            spec = dirichlet_spectrum(sq, 1 / 8, 16, min_cells=4)
            beta = BetaFunction([(spec, 0.5)])
            cell = CellProblem.from_realization(generate(model, Window.cube(4, 2, [2, 2]), 0), 1 / 8)
            t = homogenized_matrix(cell)
            eps, L = 1 / 16, 8.0
            lam = 0.5 * spec.lambda_1
            M = L / eps
            op = assemble(generate(model, Window.cube(M, 2, [M / 2, M / 2]), 0), eps, 1.0, eps / 8,
                          Window.cube(L, 2, [L / 2, L / 2]), min_cells=4)
            bmean = (beta.mid(lam) - lam) / lam**2
            d = corrector_diagnostics(cell, t, eps, L, lam, b_field(op, lam), op.h, bmean)
            return error_aggregate(d, eps, L, lam, beta.mid(lam), spec.lambda_1 - lam)

        a, b = run(), run()
        assert a == b
        assert a == pytest.approx(2694.2661432137734, rel=1e-9)


def test_supercell_seeds_agree():
    sq = square(0.5)
    model = BernoulliLattice((sq,), p=0.5)
    mats = [homogenized_matrix(CellProblem.from_realization(generate(model, Window.cube(8, 2, [4, 4]), s), 1 / 8),
                               keep_correctors=False).matrix for s in (1, 2)]
    assert np.abs(mats[0] - mats[1]).max() < 0.03
