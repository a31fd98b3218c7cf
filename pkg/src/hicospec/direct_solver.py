"""High-contrast operator on a fine grid, its low spectrum, quasimodes and relevance.

The operator is ``-div(a grad)`` with ``a = A1`` in the stiff phase and ``ε²``
in the ε-scaled inclusions, discretized by cell-centred fluxes with
harmonic-mean face coefficients.  Grid arrays use ``[ix, iy]`` order and the
unknown vector is the C-order ravel of such arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .amg import smoothed_aggregation
from .errors import ConfigError, NumericalError, PreconditionError, UnderResolvedError
from .geometry import Marking, Realization, Window, rasterize_realization, void_injection  # noqa: F401
from .shape_spectra import ShapeSpectrum, b_field_on_inclusion, check_pole, mask_laplacian

C_TRUST = 0.1
MIN_CELLS_ACROSS = 16
EIG_RTOL = 1e-8


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


@dataclass
class GridOperator:
    """Sparse symmetric discretization of ``-div(a^ε grad)`` on a square box."""

    matrix: sp.csr_matrix
    n: int
    h: float
    origin: np.ndarray
    eps: float
    bc: str
    owner: np.ndarray  # inclusion index per cell, -1 in the stiff phase
    coeff: np.ndarray  # per-cell (ax, ay)
    realization: Realization | None = field(default=None, repr=False)

    @property
    def edge(self) -> float:
        return self.n * self.h

    @property
    def size(self) -> int:
        return self.n * self.n

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.origin[0] + (np.arange(self.n) + 0.5) * self.h
        y = self.origin[1] + (np.arange(self.n) + 0.5) * self.h
        return np.meshgrid(x, y, indexing="ij")

    def trust_ceiling(self, c_trust: float = C_TRUST) -> float:
        return c_trust / self.h**2


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


def assemble_coefficients(coeff: np.ndarray, h: float, bc: str = "dirichlet") -> sp.csr_matrix:
    """Flux-form matrix from per-cell axis coefficients ``coeff[..., axis]``.

    Interior faces use the harmonic mean of the adjacent cells; Dirichlet
    faces on the box boundary use the boundary cell's coefficient at half
    distance (odd reflection).
    """
    if bc not in ("dirichlet", "periodic"):
        raise ConfigError(f"unknown boundary condition {bc!r}")
    nx, ny = coeff.shape[:2]
    idx = np.arange(nx * ny).reshape(nx, ny)
    diag = np.zeros((nx, ny))
    rows, cols, vals = [], [], []
    for axis in range(2):
        c = coeff[..., axis]
        if bc == "periodic":
            face = _harmonic(c, np.roll(c, -1, axis=axis))
            p = idx.ravel()
            q = np.roll(idx, -1, axis=axis).ravel()
            w = face.ravel()
            diag += face + np.roll(face, 1, axis=axis)
        else:
            lo = [slice(None)] * 2
            hi = [slice(None)] * 2
            lo[axis] = slice(0, -1)
            hi[axis] = slice(1, None)
            face = _harmonic(c[tuple(lo)], c[tuple(hi)])
            p = idx[tuple(lo)].ravel()
            q = idx[tuple(hi)].ravel()
            w = face.ravel()
            diag[tuple(lo)] += face
            diag[tuple(hi)] += face
            first = [slice(None)] * 2
            last = [slice(None)] * 2
            first[axis] = 0
            last[axis] = -1
            diag[tuple(first)] += 2.0 * c[tuple(first)]
            diag[tuple(last)] += 2.0 * c[tuple(last)]
        rows += [p, q]
        cols += [q, p]
        vals += [-w, -w]
    n = nx * ny
    off = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return ((off + sp.diags(diag.ravel())) / h**2).tocsr()


def assemble(
    real: Realization | None,
    eps: float,
    a1: np.ndarray | float = 1.0,
    h: float = 1.0 / 64,
    box: Window | None = None,
    bc: str = "dirichlet",
    min_cells: int = MIN_CELLS_ACROSS,
) -> GridOperator:
    """Assemble ``A^ε`` for ``real`` (cell units) scaled by ``eps`` on the physical ``box``.

    Parameters
    ----------
    real : Realization or None
        Inclusion geometry in cell units; ``None`` gives a homogeneous medium.
    eps : float
        Microscale.
    a1 : float or (2, 2) array
        Stiff coefficient (diagonal).
    h : float
        Physical grid spacing; ``box.edge / h`` must be an integer.
    box : Window
        Physical computational box (defaults to the ε-scaled realization window).
    bc : {"dirichlet", "periodic"}
    min_cells : int
        Cells required across the smallest inclusion feature.
    """
    a1 = np.asarray(a1, dtype=float)
    if a1.ndim == 0:
        a1 = a1 * np.eye(2)
    if abs(a1[0, 1]) > 1e-14 or abs(a1[1, 0]) > 1e-14 or np.any(np.diag(a1) <= 0):
        raise ConfigError("A1 must be diagonal and positive")
    if box is None:
        if real is None:
            raise ConfigError("a box is required without a realization")
        box = Window(tuple(np.asarray(real.window.center) * eps), real.window.edge * eps)
    if box.dim != 2:
        raise PreconditionError("the direct solver is two-dimensional")
    n = int(round(box.edge / h))
    if abs(n * h - box.edge) > 1e-9 * box.edge:
        raise ConfigError("h must divide the box edge")
    if real is not None and len(real):
        feat = min(real.shapes[s].min_feature(r) for s, r in zip(real.shape_ids, real.scales))
        if eps * feat / h < min_cells - 1e-9:
            raise UnderResolvedError(
                f"inclusions have {eps * feat / h:.1f} cells across, need {min_cells}", eps * feat / min_cells
            )
        owner = rasterize_realization(real, box.lo, (n, n), h, eps, periodic=(bc == "periodic"))
    else:
        owner = -np.ones((n, n), dtype=np.int64)
    coeff = np.empty((n, n, 2))
    coeff[..., 0] = np.where(owner >= 0, eps**2, a1[0, 0])
    coeff[..., 1] = np.where(owner >= 0, eps**2, a1[1, 1])
    mat = assemble_coefficients(coeff, h, bc)
    return GridOperator(mat, n, h, np.asarray(box.lo, dtype=float), eps, bc, owner, coeff, real)


def symmetry_defect(op: GridOperator) -> float:
    return float(abs(op.matrix - op.matrix.T).max()) if op.matrix.nnz else 0.0


def gershgorin_lower(op: GridOperator) -> float:
    m = op.matrix.tocsr()
    d = m.diagonal()
    off = np.asarray(abs(m).sum(axis=1)).ravel() - np.abs(d)
    return float(np.min(d - off))


# ---------------------------------------------------------------------------
# spectrum in a window
# ---------------------------------------------------------------------------


class ShiftedFactor:
    """Symmetric LU of ``K - σI``; the signs of the pivots give the inertia."""

    def __init__(self, matrix: sp.spmatrix, sigma: float):
        n = matrix.shape[0]
        self.sigma = float(sigma)
        shifted = (matrix - sigma * sp.identity(n, format="csr")).tocsc()
        try:
            self.lu = sla.splu(
                shifted,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:
            raise NumericalError(f"factorization at shift {sigma:g} failed: {exc}") from exc
        if not np.array_equal(self.lu.perm_r, self.lu.perm_c):
            raise NumericalError("factorization used non-symmetric pivoting; inertia is not available")
        piv = self.lu.U.diagonal()
        if np.any(piv == 0):
            raise NumericalError(f"shift {sigma:g} is an eigenvalue to machine precision")
        self.below = int(np.sum(piv < 0))

    def solve(self, x: np.ndarray) -> np.ndarray:
        return self.lu.solve(x)


@dataclass
class WindowSpectrum:
    window: tuple[float, float]
    eigenvalues: np.ndarray
    residuals: np.ndarray
    vectors: np.ndarray | None
    count: int  # exact number of eigenvalues in the window from inertia
    truncated: bool


def spectrum_window(
    op: GridOperator,
    t1: float,
    t2: float,
    max_count: int = 200,
    slice_max: int = 24,
    seed: int = 0,
    keep_vectors: bool = False,
    c_trust: float = C_TRUST,
) -> WindowSpectrum:
    """All eigenvalues of ``op`` in ``[t1, t2)`` (up to ``max_count``).

    Inertia counts of shifted factorizations split the window into slices
    holding at most ``slice_max`` eigenvalues; each slice is solved by
    shift-invert Lanczos at its midpoint with a fixed starting vector.
    """
    if not t2 > t1:
        raise ConfigError("window must satisfy t1 < t2")
    ceiling = op.trust_ceiling(c_trust)
    if t2 > ceiling:
        raise PreconditionError(f"window top {t2:g} exceeds the trust ceiling {ceiling:g} = c_trust/h^2")
    K = op.matrix
    counts: dict[float, int] = {}
    factors: dict[float, ShiftedFactor] = {}

    def below(s: float, keep: bool = False) -> int:
        if s not in counts:
            f = ShiftedFactor(K, s)
            counts[s] = f.below
            if keep:
                factors[s] = f
        return counts[s]

    total = below(t2) - below(t1)
    truncated = total > max_count
    # bisect into slices; stop once max_count eigenvalues from the bottom are covered
    slices: list[tuple[float, float, int]] = []
    stack = [(t1, t2)]
    covered = 0
    while stack:
        a, b = stack.pop()
        c = below(b) - below(a)
        if c == 0:
            continue
        if c <= slice_max or b - a < 1e-9 * max(abs(b), 1.0):
            slices.append((a, b, c))
            continue
        m = 0.5 * (a + b)
        stack.append((m, b))
        stack.append((a, m))
    slices.sort()
    vals, res, vecs = [], [], []
    n = K.shape[0]
    v0 = np.random.default_rng(seed).standard_normal(n)
    for a, b, c in slices:
        if covered >= max_count:
            break
        sigma = 0.5 * (a + b)
        f = ShiftedFactor(K, sigma)
        opinv = sla.LinearOperator((n, n), matvec=f.solve, dtype=float)
        k = min(c + 2, n - 2)
        try:
            w, v = sla.eigsh(K, k=k, sigma=sigma, which="LM", OPinv=opinv, v0=v0, tol=1e-13,
                             ncv=min(n - 1, max(2 * k + 1, 20)))
        except sla.ArpackNoConvergence as exc:
            raise NumericalError(f"shift-invert Lanczos did not converge near {sigma:g}") from exc
        sel = (w >= a) & (w < b)
        if int(sel.sum()) != c:
            raise NumericalError(f"found {int(sel.sum())} eigenvalues in [{a:g}, {b:g}) but inertia says {c}")
        order = np.argsort(w[sel])
        w, v = w[sel][order], v[:, sel][:, order]
        r = np.linalg.norm(K @ v - v * w, axis=0) / (np.maximum(np.abs(w), 1.0) * np.linalg.norm(v, axis=0))
        if np.any(r > EIG_RTOL):
            raise NumericalError(f"eigenpair residual {r.max():.2e} above {EIG_RTOL:g}")
        vals.append(w)
        res.append(r)
        if keep_vectors:
            vecs.append(v)
        covered += c
    ev = np.concatenate(vals) if vals else np.zeros(0)
    rr = np.concatenate(res) if res else np.zeros(0)
    vv = np.concatenate(vecs, axis=1) if (keep_vectors and vecs) else None
    if truncated:
        ev, rr = ev[:max_count], rr[:max_count]
        vv = vv[:, :max_count] if vv is not None else None
    return WindowSpectrum((t1, t2), ev, rr, vv, total, truncated)


def count_below(op: GridOperator, t: float) -> int:
    """Number of eigenvalues strictly below ``t`` (Sylvester inertia)."""
    return ShiftedFactor(op.matrix, t).below


# ---------------------------------------------------------------------------
# quasimodes
# ---------------------------------------------------------------------------


def smoothstep5(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


def cutoff(x: np.ndarray, center: float, L: float) -> np.ndarray:
    """Quintic bump: 1 for ``|x-c| <= L/4``, 0 for ``|x-c| >= L/2``."""
    r = np.abs(x - center)
    return 1.0 - smoothstep5((r - 0.25 * L) / (0.25 * L))


@dataclass(frozen=True)
class QuasimodeReport:
    construction: str
    lam: float
    L: float
    eps: float
    residual: float
    residual_direct: float
    mass_ratio: float
    cutoff: str = "quintic smoothstep, 1 on the cube of edge L/2, 0 outside the cube of edge L"
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {
            "construction": self.construction,
            "epsilon": self.eps,
            "L": self.L,
            "lambda": self.lam,
            "residual": self.residual,
            "residual_direct": self.residual_direct,
            "mass_ratio": self.mass_ratio,
        }


def resolvent_solve(op: GridOperator, rhs: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Solve ``(K + I) x = rhs`` by AMG-preconditioned CG."""
    A = (op.matrix + sp.identity(op.size, format="csr")).tocsr()
    ml = smoothed_aggregation(A, symmetry="hermitian", max_coarse=200)
    residuals: list[float] = []
    x = ml.solve(rhs, tol=rtol, accel="cg", maxiter=2000, residuals=residuals)
    rel = np.linalg.norm(rhs - A @ x) / max(np.linalg.norm(rhs), 1e-300)
    if rel > 10 * rtol:
        raise NumericalError(f"resolvent solve stalled at relative residual {rel:.2e}")
    return x


def _centered_box_mask(op: GridOperator, L: float, center=None) -> np.ndarray:
    X, Y = op.centers()
    c = op.origin + 0.5 * op.edge if center is None else np.asarray(center)
    return (np.abs(X - c[0]) < 0.5 * L) & (np.abs(Y - c[1]) < 0.5 * L)


def _report(op, u_eps, lam, L, construction, center=None, extra=None) -> QuasimodeReport:
    u = u_eps.ravel()
    uh = resolvent_solve(op, (lam + 1.0) * u)
    nu = np.linalg.norm(uh)
    if nu == 0:
        raise NumericalError("quasimode vanished")
    res_id = (lam + 1.0) * np.linalg.norm(u - uh) / nu
    res_dir = np.linalg.norm(op.matrix @ uh - lam * uh) / nu
    box = _centered_box_mask(op, L, center).ravel()
    ratio = float(np.linalg.norm(uh[box]) / nu)
    return QuasimodeReport(construction, float(lam), float(L), op.eps, float(res_id), float(res_dir), ratio,
                           extra=extra or {})


def b_field(op: GridOperator, lam: float, spectra: dict[str, ShapeSpectrum] | None = None) -> np.ndarray:
    """``b^ε`` on the grid: per inclusion ``(-ε²Δ - λ) b = 1`` with Dirichlet faces, zero outside."""
    out = np.zeros((op.n, op.n))
    if op.realization is None or not np.any(op.owner >= 0):
        return out
    real = op.realization
    labels = np.unique(op.owner[op.owner >= 0])
    cache: dict[bytes, np.ndarray] = {}
    from scipy import ndimage

    slices = ndimage.find_objects(op.owner + 1)
    for k in labels:
        sl = slices[k]
        if sl is None:
            continue
        # pad by one cell so the local mask sees its Dirichlet faces
        sl = tuple(slice(max(s.start - 1, 0), min(s.stop + 1, op.n)) for s in sl)
        local = op.owner[sl] == k
        key = local.tobytes() + bytes(str(local.shape), "ascii")
        if key not in cache:
            spec = spectra.get(real.shape_ids[k]) if spectra else None
            cache[key] = b_field_on_inclusion(local, op.h, lam, op.eps, spec)
        out[sl] += cache[key]
    return out


def plane_wave_quasimode(
    op: GridOperator,
    lam: float,
    L: float,
    beta_value: float,
    ahom: np.ndarray,
    spectra: dict[str, ShapeSpectrum] | None = None,
    direction: Sequence[float] = (1.0, 0.0),
    center: Sequence[float] | None = None,
    taper: bool = True,
) -> QuasimodeReport:
    """Quasimode ``(1 + λ b^ε) η_L cos(k·x)`` with ``A_hom k·k = β(λ)``, improved by one resolvent solve.

    ``taper=False`` replaces the cutoff by 1 (only meaningful on a torus).
    """
    if beta_value < 0:
        raise PreconditionError(f"beta(lambda)={beta_value:g} < 0: no admissible wave vector")
    if L > op.edge + 1e-12:
        raise PreconditionError("the cutoff cube does not fit into the grid box")
    e = np.asarray(direction, dtype=float)
    e = e / np.linalg.norm(e)
    q = float(e @ np.asarray(ahom) @ e)
    k = math.sqrt(beta_value / q) * e
    X, Y = op.centers()
    c = op.origin + 0.5 * op.edge if center is None else np.asarray(center, dtype=float)
    eta = cutoff(X, c[0], L) * cutoff(Y, c[1], L) if taper else 1.0
    u = eta * np.cos(k[0] * (X - c[0]) + k[1] * (Y - c[1]))
    b = b_field(op, lam, spectra)
    u_eps = (1.0 + lam * b) * u
    return _report(op, u_eps, lam, L, "plane-wave", c, {"k": k.tolist(), "beta": beta_value})


def marking_field(
    op: GridOperator, phi_local: np.ndarray, mask_local: np.ndarray, marking: Marking
) -> tuple[np.ndarray, int]:
    """``u = κ φ`` on every complete inclusion whose raster equals ``mask_local``; zero elsewhere."""
    if op.realization is None or not np.any(op.owner >= 0):
        raise PreconditionError("no inclusions inside the box")
    from scipy import ndimage

    real = op.realization
    u = np.zeros((op.n, op.n))
    used = 0
    for k, sl in enumerate(ndimage.find_objects(op.owner + 1)):
        if sl is None:
            continue
        local = op.owner[sl] == k
        # inclusions cut by the box edge fail the raster comparison
        if local.shape != mask_local.shape or not np.array_equal(local, mask_local):
            continue
        u[sl] += marking[int(real.labels[k])] * np.where(local, phi_local, 0.0)
        used += 1
    if used == 0:
        raise PreconditionError("no complete inclusion with the given raster inside the box")
    return u, used


def marking_quasimode(
    op: GridOperator,
    nu: float,
    phi_local: np.ndarray,
    mask_local: np.ndarray,
    marking: Marking,
    L: float | None = None,
) -> QuasimodeReport:
    """Marked superposition of one inclusion eigenfunction over all inclusions in the box.

    ``phi_local`` is the eigenfunction of ``-ε²Δ_h`` on ``mask_local`` (the
    inclusion raster on the operator grid) with eigenvalue ``nu``.
    """
    u, used = marking_field(op, phi_local, mask_local, marking)
    return _report(op, u, nu, L if L is not None else op.edge, "marking", extra={"inclusions": used})


def inclusion_eigenpair(op: GridOperator, k: int = 0) -> tuple[float, np.ndarray, np.ndarray]:
    """Lowest eigenpair of ``-ε²Δ_h`` on the raster of inclusion ``k`` of the operator."""
    from scipy import ndimage

    sl = ndimage.find_objects(op.owner + 1)[k]
    if sl is None:
        raise PreconditionError(f"inclusion {k} does not meet the grid")
    local = op.owner[sl] == k
    lap = (mask_laplacian(local, op.h) * op.eps**2).toarray()
    w, v = np.linalg.eigh(lap)
    phi = np.zeros(local.shape)
    phi[local] = v[:, 0] * np.sign(v[:, 0].sum())
    return float(w[0]), phi, local


# ---------------------------------------------------------------------------
# relevance
# ---------------------------------------------------------------------------


def mass_ratios(op: GridOperator, vectors: np.ndarray, L: float, center=None) -> np.ndarray:
    """``‖ψ‖_{□^L} / ‖ψ‖`` for every column of ``vectors``."""
    if L > op.edge + 1e-12:
        raise PreconditionError("the relevance cube does not fit into the grid box")
    box = _centered_box_mask(op, L, center).ravel()
    v = np.asarray(vectors).reshape(op.size, -1)
    return np.linalg.norm(v[box], axis=0) / np.linalg.norm(v, axis=0)


def relevance_classify(op: GridOperator, vectors: np.ndarray, L: float, c_mass: float = 0.1,
                       center=None) -> tuple[np.ndarray, np.ndarray]:
    """Flag eigenvectors whose mass ratio on the centred cube of edge ``L`` exceeds ``c_mass``."""
    r = mass_ratios(op, vectors, L, center)
    return r > c_mass, r
