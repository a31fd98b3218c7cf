"""Periodic correctors on perforated cells, homogenized matrix and the error aggregate.

Cells are square tori of edge ``M`` with ``n`` cells per axis.  The stiff phase
is the complement of the perforation mask.  Fluxes live on faces: ``fx[i, j]``
sits between cells ``(i, j)`` and ``(i+1, j)``, ``fy[i, j]`` between ``(i, j)``
and ``(i, j+1)`` (indices modulo ``n``).  The stream function ``psi`` lives on
vertices, ``psi[i, j]`` at the corner shared by cells ``(i, j)`` and
``(i+1, j+1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .amg import smoothed_aggregation
from .errors import ConfigError, GeometryError, NumericalError, PreconditionError
from .geometry import Realization, rasterize_realization

CG_RTOL = 1e-10


# ---------------------------------------------------------------------------
# cell problems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CellProblem:
    """Periodic perforated cell.

    Parameters
    ----------
    holes : ndarray of bool, shape (n, n)
        Perforation mask; ``True`` cells are removed from the stiff phase.
    edge : float
        Physical edge length of the cell.
    a1 : ndarray, shape (2, 2)
        Stiff-phase coefficient.  Only diagonal matrices are supported by the
        five-point flux stencil.
    """

    holes: np.ndarray
    edge: float = 1.0
    a1: np.ndarray = field(default_factory=lambda: np.eye(2))

    def __post_init__(self) -> None:
        holes = np.asarray(self.holes, dtype=bool)
        if holes.ndim != 2 or holes.shape[0] != holes.shape[1]:
            raise ConfigError("cell problems need a square two-dimensional mask")
        a1 = np.asarray(self.a1, dtype=float)
        if a1.shape != (2, 2) or not np.allclose(a1, a1.T):
            raise ConfigError("A1 must be a symmetric 2x2 matrix")
        if np.any(np.linalg.eigvalsh(a1) <= 0):
            raise ConfigError("A1 must be positive definite")
        if abs(a1[0, 1]) > 1e-14:
            raise ConfigError("only diagonal A1 is supported by the flux stencil")
        if holes.all():
            raise GeometryError("the cell is entirely perforated")
        object.__setattr__(self, "holes", holes)
        object.__setattr__(self, "a1", a1)

    @property
    def n(self) -> int:
        return self.holes.shape[0]

    @property
    def h(self) -> float:
        return self.edge / self.n

    @property
    def theta(self) -> float:
        return float(self.holes.mean())

    @classmethod
    def centered_square_hole(cls, side: float, h: float, a1=None) -> "CellProblem":
        n = int(round(1.0 / h))
        x = (np.arange(n) + 0.5) * h - 0.5
        X, Y = np.meshgrid(x, x, indexing="ij")
        holes = (np.abs(X) < side / 2) & (np.abs(Y) < side / 2)
        return cls(holes, 1.0, np.eye(2) if a1 is None else a1)

    @classmethod
    def from_realization(cls, real: Realization, h: float, a1=None) -> "CellProblem":
        """Supercell made of the realization window, wrapped periodically."""
        if real.dim != 2:
            raise PreconditionError("cell problems are two-dimensional")
        n = int(round(real.window.edge / h))
        if abs(n * h - real.window.edge) > 1e-9 * real.window.edge:
            raise ConfigError("grid spacing must divide the window edge")
        owner = rasterize_realization(real, real.window.lo, (n, n), h, periodic=True)
        return cls(owner >= 0, real.window.edge, np.eye(2) if a1 is None else a1)


def _face_masks(stiff: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    fx = stiff & np.roll(stiff, -1, axis=0)
    fy = stiff & np.roll(stiff, -1, axis=1)
    return fx, fy


def face_gradient(u: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Periodic forward differences of a cell field onto faces."""
    return (np.roll(u, -1, axis=0) - u) / h, (np.roll(u, -1, axis=1) - u) / h


def face_divergence(fx: np.ndarray, fy: np.ndarray, h: float) -> np.ndarray:
    """Periodic divergence of a face field back onto cells."""
    return (fx - np.roll(fx, 1, axis=0)) / h + (fy - np.roll(fy, 1, axis=1)) / h


class _StiffSystem:
    """Weighted graph Laplacian of the stiff phase and its null-space handling."""

    def __init__(self, cell: CellProblem):
        self.cell = cell
        stiff = ~cell.holes
        n = cell.n
        self.stiff = stiff
        self.fx, self.fy = _face_masks(stiff)
        idx = -np.ones((n, n), dtype=np.int64)
        idx[stiff] = np.arange(int(stiff.sum()))
        self.idx = idx
        m = int(stiff.sum())
        rows, cols, vals = [], [], []
        for mask, axis, a in ((self.fx, 0, cell.a1[0, 0]), (self.fy, 1, cell.a1[1, 1])):
            p = idx[mask]
            q = np.roll(idx, -1, axis=axis)[mask]
            w = np.full(len(p), a)
            rows += [p, q, p, q]
            cols += [p, q, q, p]
            vals += [w, w, -w, -w]
        # weights carry h^2 (face area times length / h^2 in 2D)
        self.matrix = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m)
        )
        ncomp, _ = csgraph.connected_components(self.matrix != 0, directed=False)
        if ncomp != 1:
            raise GeometryError(f"stiff phase splits into {ncomp} periodic components")
        self._precond = None

    def solve(self, rhs: np.ndarray, rtol: float = CG_RTOL, maxiter: int = 20000) -> np.ndarray:
        """Projected preconditioned CG for the singular consistent system."""
        A = self.matrix
        b = rhs - rhs.mean()
        nb = np.linalg.norm(b)
        x = np.zeros_like(b)
        if nb == 0:
            return x
        if self._precond is None:
            self._precond = smoothed_aggregation(
                A.tocsr(), symmetry="symmetric", max_coarse=50
            ).aspreconditioner(cycle="V")
        M = self._precond
        r = b.copy()
        z = M @ r
        z -= z.mean()
        p = z.copy()
        rz = r @ z
        for _ in range(maxiter):
            Ap = A @ p
            alpha = rz / (p @ Ap)
            x += alpha * p
            r -= alpha * Ap
            r -= r.mean()
            if np.linalg.norm(r) <= rtol * nb:
                x -= x.mean()
                return x
            z = M @ r
            z -= z.mean()
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        raise NumericalError(f"corrector CG did not reach rtol={rtol:g} in {maxiter} iterations")

    def to_grid(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros(self.idx.shape)
        out[self.stiff] = v
        return out


@dataclass(frozen=True)
class Corrector:
    j: int
    values: np.ndarray  # cell field, zero on holes, zero mean over the stiff phase
    residual: float


def solve_corrector(cell: CellProblem, j: int, system: _StiffSystem | None = None) -> Corrector:
    """Periodic corrector ``N_j``: ``e_j + ∇N_j`` carries no net flux divergence in the stiff phase."""
    if j not in (0, 1):
        raise ConfigError("direction index must be 0 or 1")
    sysm = system or _StiffSystem(cell)
    h = cell.h
    a = cell.a1[j, j]
    faces = sysm.fx if j == 0 else sysm.fy
    # rhs = -D^T W e_j, written per cell: +a h on the face behind, -a h on the face ahead
    flux = np.where(faces, a * h, 0.0)
    div = flux - np.roll(flux, 1, axis=j)
    rhs = div[sysm.stiff]
    # the graph Laplacian uses unit face weights times a; scale to N directly
    v = sysm.solve(rhs)
    res = np.linalg.norm(sysm.matrix @ v - (rhs - rhs.mean())) / max(np.linalg.norm(rhs), 1e-300)
    return Corrector(j, sysm.to_grid(v), float(res))


@dataclass(frozen=True)
class HomogenizedTensor:
    matrix: np.ndarray
    theta: float
    h: float
    edge: float
    residuals: tuple[float, float]
    correctors: tuple[Corrector, Corrector] | None = field(default=None, compare=False, repr=False)

    def to_dict(self) -> dict:
        return {
            "matrix": self.matrix.tolist(),
            "theta": self.theta,
            "h": self.h,
            "edge": self.edge,
            "residuals": list(self.residuals),
        }


def _gradients(cell: CellProblem, sysm: _StiffSystem, corr: Corrector) -> tuple[np.ndarray, np.ndarray]:
    gx, gy = face_gradient(corr.values, cell.h)
    return np.where(sysm.fx, gx + (corr.j == 0), 0.0), np.where(sysm.fy, gy + (corr.j == 1), 0.0)


def homogenized_matrix(cell: CellProblem, keep_correctors: bool = True) -> HomogenizedTensor:
    """Energy form ``|cell|^{-1} Σ_faces h² a (e_i + ∇N_i)(e_j + ∇N_j)``, symmetrized."""
    sysm = _StiffSystem(cell)
    corr = (solve_corrector(cell, 0, sysm), solve_corrector(cell, 1, sysm))
    grads = [_gradients(cell, sysm, c) for c in corr]
    a = np.diag(cell.a1)
    area = cell.edge**2
    m = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            m[i, j] = sum(cell.h**2 * a[ax] * np.sum(grads[i][ax] * grads[j][ax]) for ax in range(2)) / area
    m = 0.5 * (m + m.T)
    return HomogenizedTensor(m, cell.theta, cell.h, cell.edge, (corr[0].residual, corr[1].residual),
                             corr if keep_correctors else None)


# ---------------------------------------------------------------------------
# flux corrector and divergence potential
# ---------------------------------------------------------------------------


def _laplacian_symbol(n: int, h: float) -> np.ndarray:
    k = np.arange(n)
    s = (4.0 / h**2) * np.sin(np.pi * k / n) ** 2
    return -(s[:, None] + s[None, :])


def flux_field(cell: CellProblem, tensor: HomogenizedTensor, j: int) -> tuple[np.ndarray, np.ndarray]:
    """``g_j = χ A1 (e_j + ∇N_j) - Â e_j`` on faces."""
    if tensor.correctors is None:
        raise PreconditionError("the homogenized tensor was computed without correctors")
    sysm = _StiffSystem(cell)
    gx, gy = _gradients(cell, sysm, tensor.correctors[j])
    a = np.diag(cell.a1)
    return a[0] * gx - tensor.matrix[0, j], a[1] * gy - tensor.matrix[1, j]


@dataclass(frozen=True)
class FluxCorrector:
    psi: np.ndarray  # vertex stream function; G = [[0, psi], [-psi, 0]]
    g: tuple[np.ndarray, np.ndarray]
    defect: float  # relative mismatch between the divergence of G and g
    mean_defect: float

    @property
    def norm(self) -> float:
        """Frobenius L2 norm of the skew field over the cell (per unit h^2 weight)."""
        return float(math.sqrt(2.0) * np.linalg.norm(self.psi))


def stream_function(gx: np.ndarray, gy: np.ndarray, h: float) -> np.ndarray:
    """Vertex ``psi`` with ``gx = D_y psi`` and ``gy = -D_x psi`` for a solenoidal face field.

    ``D_y psi`` on x-face ``(i, j)`` is ``(psi[i, j] - psi[i, j-1])/h`` and
    ``D_x psi`` on y-face ``(i, j)`` is ``(psi[i, j] - psi[i-1, j])/h``.  The
    discrete curl ``D_x gy - D_y gx`` equals ``-Δ_h psi``, which is inverted by FFT.
    """
    n = gx.shape[0]
    curl = (np.roll(gy, -1, axis=0) - gy) / h - (np.roll(gx, -1, axis=1) - gx) / h
    sym = _laplacian_symbol(n, h)
    sym[0, 0] = 1.0
    hat = np.fft.fft2(-curl) / sym
    hat[0, 0] = 0.0
    return np.real(np.fft.ifft2(hat))


def flux_corrector(cell: CellProblem, tensor: HomogenizedTensor, j: int, tol_mean: float = 1e-8) -> FluxCorrector:
    gx, gy = flux_field(cell, tensor, j)
    scale = max(np.sqrt(np.sum(gx**2) + np.sum(gy**2)), 1e-300)
    mean_def = float(math.hypot(gx.mean(), gy.mean()) * math.sqrt(gx.size) / scale) if scale > 1e-300 else 0.0
    if scale > 1e-12 and mean_def > tol_mean:
        raise NumericalError(f"flux g_{j} has a nonzero mean (relative {mean_def:.2e})")
    psi = stream_function(gx, gy, cell.h)
    h = cell.h
    rx = (psi - np.roll(psi, 1, axis=1)) / h - gx
    ry = -(psi - np.roll(psi, 1, axis=0)) / h - gy
    defect = float(np.sqrt(np.sum(rx**2) + np.sum(ry**2)) / scale) if scale > 1e-12 else 0.0
    return FluxCorrector(psi, (gx, gy), defect, mean_def)


def divergence_potential(f: np.ndarray, h: float) -> tuple[tuple[np.ndarray, np.ndarray], float]:
    """Face field ``B = ∇_h Δ_h^{-1} (f - mean f)`` on a periodic grid; returns ``(B, mean f)``."""
    f = np.asarray(f, dtype=float)
    mean = float(f.mean())
    fc = f - mean
    n0, n1 = fc.shape
    k0 = (4.0 / h**2) * np.sin(np.pi * np.arange(n0) / n0) ** 2
    k1 = (4.0 / h**2) * np.sin(np.pi * np.arange(n1) / n1) ** 2
    sym = -(k0[:, None] + k1[None, :])
    sym[0, 0] = 1.0
    hat = np.fft.fft2(fc) / sym
    hat[0, 0] = 0.0
    phi = np.real(np.fft.ifft2(hat))
    return face_gradient(phi, h), mean


# ---------------------------------------------------------------------------
# diagnostics and the error aggregate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorrectorDiagnostics:
    """Norms entering the aggregate on the cube of edge ``L`` at scale ``eps``."""

    eps: float
    L: float
    lam: float
    norm_N: tuple[float, float]
    norm_dN: tuple[float, float]
    norm_G: tuple[float, float]
    norm_B: float
    rhat: float | None = None

    def row(self) -> dict:
        return {
            "epsilon": self.eps,
            "L": self.L,
            "lambda": self.lam,
            "nN": sum(self.norm_N),
            "ndN": sum(self.norm_dN),
            "nG": sum(self.norm_G),
            "nB": self.norm_B,
            "Rhat": self.rhat,
        }


def cell_rms(cell: CellProblem, tensor: HomogenizedTensor) -> dict[str, tuple[float, float]]:
    """Root-mean-square of N_j, ∇N_j and G^j over the cell."""
    area = cell.edge**2
    out = {"N": [], "dN": [], "G": []}
    for j in range(2):
        c = tensor.correctors[j]
        out["N"].append(math.sqrt(cell.h**2 * np.sum(c.values**2) / area))
        gx, gy = face_gradient(c.values, cell.h)
        sysm_fx, sysm_fy = _face_masks(~cell.holes)
        g2 = np.sum(np.where(sysm_fx, gx, 0.0) ** 2) + np.sum(np.where(sysm_fy, gy, 0.0) ** 2)
        out["dN"].append(math.sqrt(cell.h**2 * g2 / area))
        fc = flux_corrector(cell, tensor, j)
        out["G"].append(math.sqrt(cell.h**2 * 2.0 * np.sum(fc.psi**2) / area))
    return {k: tuple(v) for k, v in out.items()}


def corrector_diagnostics(
    cell: CellProblem,
    tensor: HomogenizedTensor,
    eps: float,
    L: float,
    lam: float,
    b_eps: np.ndarray,
    h_phys: float,
    b_mean: float | None = None,
) -> CorrectorDiagnostics:
    """Norms of ``N^ε = εN(·/ε)``, ``∇N^ε``, ``G^ε = εG(·/ε)`` and ``B^ε`` on the cube of edge ``L``.

    Periodic rescaling gives ``‖N^ε‖ = ε L^{d/2} rms(N)``, ``‖∇N^ε‖ = L^{d/2} rms(∇N)`` and
    ``‖G^ε‖ = ε L^{d/2} rms(G)``.  ``b_eps`` is the resolvent field sampled on the
    physical grid of the cube, so ``B^ε`` solves ``∇·B^ε = ⟨b⟩ - b^ε`` there.
    """
    rms = cell_rms(cell, tensor)
    half_d = L  # L^{d/2} with d = 2
    nN = tuple(eps * half_d * v for v in rms["N"])
    ndN = tuple(half_d * v for v in rms["dN"])
    nG = tuple(eps * half_d * v for v in rms["G"])
    f = (b_mean if b_mean is not None else float(np.mean(b_eps))) - b_eps
    (bx, by), _ = divergence_potential(f, h_phys)
    nB = float(math.sqrt(h_phys**2 * (np.sum(bx**2) + np.sum(by**2))))
    return CorrectorDiagnostics(eps, L, lam, nN, ndN, nG, nB)


def c_hat(lam: float, beta: float, d_lam: float, c1: float = 1.0) -> float:
    """``Ĉ(λ) = Ĉ₁(1 + |β| + λ²(1+√|β|) + λ^{3/2}(1+√|β|)/d_λ)``."""
    if lam == 0.0:
        return c1
    if d_lam <= 0:
        raise PreconditionError("distance to the micro spectrum must be positive")
    sb = math.sqrt(abs(beta))
    return c1 * (1.0 + abs(beta) + lam**2 * (1.0 + sb) + lam**1.5 * (1.0 + sb) / d_lam)


def error_aggregate(
    diag: CorrectorDiagnostics | None,
    eps: float,
    L: float,
    lam: float,
    beta: float,
    d_lam: float,
    c1: float = 1.0,
    guard: float = 0.0,
) -> float:
    """``R̂ = Ĉ(λ)(L^{-d/2} Σ_j(‖N_j^ε‖ + ‖G_j^ε‖ + ε‖∇N_j^ε‖) + L^{-d/2}‖B^ε‖ + 1/L + ε)``."""
    if lam != 0.0 and d_lam <= guard:
        raise PreconditionError(f"d_lambda={d_lam:g} is inside the pole guard {guard:g}")
    terms = 0.0
    if diag is not None:
        s = sum(diag.norm_N) + sum(diag.norm_G) + eps * sum(diag.norm_dN)
        terms = (s + diag.norm_B) / L  # L^{-d/2} with d = 2
    return c_hat(lam, beta, d_lam, c1) * (terms + 1.0 / L + eps)
