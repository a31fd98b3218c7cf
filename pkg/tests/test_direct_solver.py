import numpy as np
import pytest

from hicospec.direct_solver import (
    Marking,
    assemble,
    assemble_coefficients,
    count_below,
    cutoff,
    gershgorin_lower,
    inclusion_eigenpair,
    marking_field,
    marking_quasimode,
    mass_ratios,
    plane_wave_quasimode,
    relevance_classify,
    spectrum_window,
    symmetry_defect,
    void_injection,
)
from hicospec.errors import ConfigError, PreconditionError, UnderResolvedError
from hicospec.geometry import BernoulliLattice, Window, generate, square

UNIT = Window((0.5, 0.5), 1.0)


def dirichlet_closed_form(h, t2):
    """Cell-centred Dirichlet Laplacian on the unit square: (4/h^2)(sin^2 + sin^2)."""
    n = int(round(1 / h))
    s = 4 / h**2 * np.sin(np.arange(1, n + 1) * np.pi * h / 2) ** 2
    ev = np.sort((s[:, None] + s[None, :]).ravel())
    return ev[ev < t2]


def single_inclusion(eps, hr=8):
    """One centred square of side eps/2 in the unit box."""
    sq = square(0.5, "sq")
    c = 0.5 / eps + 0.5
    real = generate(BernoulliLattice((sq,), p=1.0), Window((c, c), 1.0), 0)
    return real, assemble(real, eps, 1.0, eps / hr, Window((c * eps, c * eps), 1.0), min_cells=4)


def test_homogeneous_dirichlet_closed_form():
    op = assemble(None, 1.0, 1.0, 1 / 32, UNIT)
    ws = spectrum_window(op, 0.0, 60.0)
    ref = dirichlet_closed_form(1 / 32, 60.0)
    assert ws.count == len(ref) == 3
    np.testing.assert_allclose(ws.eigenvalues, ref, rtol=1e-8)
    assert ws.residuals.max() <= 1e-8


def test_uniform_soft_coefficient_scales_by_eps_squared():
    h, eps = 1 / 16, 0.3
    one = assemble_coefficients(np.ones((16, 16, 2)), h)
    soft = assemble_coefficients(np.full((16, 16, 2), eps**2), h)
    assert abs(soft - eps**2 * one).max() < 1e-10
    w1 = np.linalg.eigvalsh(one.toarray())[:5]
    w2 = np.linalg.eigvalsh(soft.toarray())[:5]
    np.testing.assert_allclose(w2, eps**2 * w1, rtol=1e-12)


def test_symmetric_and_nonnegative(lattice_half):
    real = generate(lattice_half, Window((2.0, 2.0), 4.0), 3)
    op = assemble(real, 0.25, np.diag([1.0, 2.0]), 0.25 / 8, min_cells=4)
    assert symmetry_defect(op) == 0.0
    assert gershgorin_lower(op) >= -1e-12
    assert op.n == 32


def test_periodic_constant_mode():
    op = assemble(None, 1.0, 1.0, 1 / 16, UNIT, bc="periodic")
    ws = spectrum_window(op, -1.0, 1.0)
    assert ws.count == 1
    assert abs(ws.eigenvalues[0]) < 1e-8
    # next level: 4 modes at (4/h^2) sin^2(pi h)
    nxt = 4 * 16**2 * np.sin(np.pi / 16) ** 2
    assert count_below(op, nxt + 1e-6) - count_below(op, nxt - 1e-6) == 4


def test_trust_ceiling_rejected():
    op = assemble(None, 1.0, 1.0, 1 / 16, UNIT)
    with pytest.raises(PreconditionError, match="trust ceiling"):
        spectrum_window(op, 0.0, 0.2 * 16**2)


def test_under_resolved(lattice_full):
    real = generate(lattice_full, Window((2.0, 2.0), 4.0), 0)
    with pytest.raises(UnderResolvedError) as info:
        assemble(real, 0.25, 1.0, 0.25 / 8, min_cells=16)
    assert info.value.required_h == pytest.approx(0.25 * 0.5 / 16)


def test_bad_inputs():
    with pytest.raises(ConfigError):
        assemble(None, 1.0, np.array([[1.0, 0.1], [0.1, 1.0]]), 1 / 16, UNIT)
    with pytest.raises(ConfigError):
        assemble(None, 1.0, 1.0, 0.3, UNIT)
    with pytest.raises(ConfigError):
        assemble(None, 1.0, 1.0, 1 / 16, UNIT, bc="neumann")
    op = assemble(None, 1.0, 1.0, 1 / 16, UNIT)
    with pytest.raises(ConfigError):
        spectrum_window(op, 5.0, 1.0)


def test_seed_independent_eigenvalues(lattice_half):
    real = generate(lattice_half, Window((2.0, 2.0), 4.0), 1)
    op = assemble(real, 0.25, 1.0, 0.25 / 8, min_cells=4)
    a = spectrum_window(op, 70.0, 95.0, seed=0)
    b = spectrum_window(op, 70.0, 95.0, seed=7)
    assert a.count == b.count > 0
    np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, rtol=1e-9)


def test_truncation_reports_total():
    op = assemble(None, 1.0, 1.0, 1 / 32, UNIT)
    ws = spectrum_window(op, 0.0, 100.0, max_count=3)
    assert ws.truncated and ws.count > 3
    assert len(ws.eigenvalues) == 3


def test_plane_wave_exact_on_torus():
    h = 1 / 32
    op = assemble(None, 1.0, 1.0, h, UNIT, bc="periodic")
    k = 4 * np.pi
    lam = 4 / h**2 * np.sin(k * h / 2) ** 2
    # choose A_hom so that A_hom k.k equals the discrete eigenvalue
    rep = plane_wave_quasimode(op, lam, 1.0, lam, np.eye(2) * lam / k**2, taper=False)
    assert rep.residual <= 1e-8
    assert rep.residual_direct <= 1e-8


def test_plane_wave_lambda_zero_and_negative_beta():
    op = assemble(None, 1.0, 1.0, 1 / 32, UNIT)
    rep = plane_wave_quasimode(op, 0.0, 1.0, 0.0, np.eye(2))
    assert np.isfinite(rep.residual) and rep.extra["k"] == [0.0, 0.0]
    with pytest.raises(PreconditionError, match="no admissible"):
        plane_wave_quasimode(op, 1.0, 1.0, -0.5, np.eye(2))
    with pytest.raises(PreconditionError):
        plane_wave_quasimode(op, 1.0, 2.0, 1.0, np.eye(2))


def test_residual_identity_matches_direct(lattice_half):
    real = generate(lattice_half, Window((4.0, 4.0), 8.0), 0)
    op = assemble(real, 0.125, 1.0, 0.125 / 8, Window((0.5, 0.5), 1.0), min_cells=4)
    rep = plane_wave_quasimode(op, 30.0, 1.0, 33.0, 0.77 * np.eye(2))
    assert rep.residual == pytest.approx(rep.residual_direct, rel=1e-6)


def test_cutoff_profile():
    x = np.linspace(-1, 1, 401)
    eta = cutoff(x, 0.0, 1.0)
    assert np.all(eta[np.abs(x) <= 0.25] == 1.0)
    assert np.all(eta[np.abs(x) >= 0.5] == 0.0)
    assert np.all(np.diff(eta[x >= 0]) <= 0)


def test_marking_requires_inclusions():
    op = assemble(None, 0.25, 1.0, 1 / 32, UNIT)
    with pytest.raises(PreconditionError, match="no inclusions"):
        marking_field(op, np.ones((2, 2)), np.ones((2, 2), bool), Marking({}, 0))


def test_opposite_marks_give_zero_mean(lattice_full):
    real = generate(lattice_full, Window((1.0, 1.0), 2.0), 0)
    op = assemble(real, 0.5, 1.0, 0.5 / 8, min_cells=4)
    nu, phi, mask = inclusion_eigenpair(op, 0)
    labels = [int(x) for x in real.labels]
    signs = [1, -1, 1, -1]
    u, used = marking_field(op, phi, mask, Marking(dict(zip(labels, signs)), 0))
    assert used == 4
    assert abs(u.sum()) < 1e-12 * np.abs(u).sum()
    # 4x4-cell square: same value as the shape-spectrum oracle
    assert nu == pytest.approx(74.98066, rel=1e-6)


def test_single_inclusion_residual_shrinks():
    res = []
    for eps in (1 / 8, 1 / 16, 1 / 32):
        real, op = single_inclusion(eps)
        nu, phi, mask = inclusion_eigenpair(op, 0)
        rep = marking_quasimode(op, nu, phi, mask, Marking({int(real.labels[0]): 1}, 0))
        res.append(rep.residual)
    assert res[0] > res[1] > res[2]
    assert res[2] < 0.35 * res[0]


def test_relevance_trivial_cases():
    op = assemble(None, 1.0, 1.0, 1 / 16, UNIT)
    X, Y = op.centers()
    inside = ((np.abs(X - 0.5) < 0.25) & (np.abs(Y - 0.5) < 0.25)).astype(float).ravel()
    outside = ((X < 0.2) & (Y < 0.2)).astype(float).ravel()
    flags, r = relevance_classify(op, np.column_stack([inside, outside]), 0.5)
    np.testing.assert_allclose(r, [1.0, 0.0])
    assert flags.tolist() == [True, False]
    with pytest.raises(PreconditionError):
        mass_ratios(op, inside, 2.0)


def test_void_injection_removes_nine_cells(lattice_full):
    real = generate(lattice_full, Window((4.0, 4.0), 8.0), 0)
    void = void_injection(real, Window((2.5, 2.5), 3.0))
    assert len(real) - len(void) == 9
