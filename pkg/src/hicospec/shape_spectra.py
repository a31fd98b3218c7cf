"""Dirichlet eigendata of single inclusions and the resolvent integrals built on it.

The discrete operator is the cell-centred finite-difference Laplacian on the
cells of a rasterized shape, with the Dirichlet condition imposed on the cell
faces by odd reflection (a face next to the exterior contributes ``2/h^2`` to
the diagonal).  The stiff/soft assembly in :mod:`hicospec.direct_solver`
reduces to the same stencil in the decoupled limit, so its inclusion spectra
match these ones exactly.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy import linalg, special

from .errors import ConfigError, NumericalError, PoleError, PreconditionError, UnderResolvedError
from .geometry import BernoulliLattice, RandomModel, Shape, model_shapes

TOL_CLUSTER = 1e-6
POLE_GUARD = 1e-3
MIN_CELLS_ACROSS = 16
DENSE_MAX_DOF = 3000


# ---------------------------------------------------------------------------
# rasterization and the discrete Laplacian
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaskGrid:
    """Cell-centred raster of a shape: ``mask[i, j]`` is the cell at ``origin + (i+1/2, j+1/2) h``."""

    mask: np.ndarray
    h: float
    origin: np.ndarray

    def centers(self) -> list[np.ndarray]:
        return [self.origin[a] + (np.arange(n) + 0.5) * self.h for a, n in enumerate(self.mask.shape)]


def rasterize(shape: Shape, h: float, scale: float = 1.0) -> MaskGrid:
    """Rasterize ``scale * shape`` (centred at 0) on a grid symmetric about 0.

    The grid has an even cell count per axis when the shape's extent is an even
    multiple of ``h`` so that squares aligned to the grid are represented exactly.
    """
    if not h > 0:
        raise ConfigError("grid spacing must be positive")
    he = shape.half_extent(scale)
    n = [int(math.ceil(2 * e / h - 1e-9)) + 2 for e in he]
    for a in range(len(n)):
        # keep the parity of the exact cell count of the extent
        exact = 2 * he[a] / h
        if abs(exact - round(exact)) < 1e-9 and (n[a] - int(round(exact))) % 2:
            n[a] += 1
    origin = np.array([-0.5 * k * h for k in n])
    axes = [origin[a] + (np.arange(n[a]) + 0.5) * h for a in range(len(n))]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    mask = shape.contains(pts.reshape(-1, len(n)), scale).reshape(tuple(n))
    return MaskGrid(mask, float(h), origin)


def mask_laplacian(mask: np.ndarray, h: float) -> sp.csr_matrix:
    """``-Δ_h`` on the cells of ``mask`` with Dirichlet faces towards the complement."""
    mask = np.asarray(mask, dtype=bool)
    idx = -np.ones(mask.shape, dtype=np.int64)
    cells = np.flatnonzero(mask.ravel())
    idx.ravel()[cells] = np.arange(len(cells))
    n = len(cells)
    diag = np.zeros(n)
    rows, cols = [], []
    for axis in range(mask.ndim):
        for shift in (-1, 1):
            nb = np.roll(idx, -shift, axis=axis)
            edge = [slice(None)] * mask.ndim
            edge[axis] = -1 if shift == 1 else 0
            nb[tuple(edge)] = -1
            here = idx[mask]
            there = nb[mask]
            inner = there >= 0
            diag += np.where(inner, 1.0, 2.0)
            rows.append(here[inner])
            cols.append(there[inner])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    off = sp.csr_matrix((-np.ones(len(r)), (r, c)), shape=(n, n))
    return ((off + sp.diags(diag)) / h**2).tocsr()


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShapeSpectrum:
    """Clustered Dirichlet eigenvalues with summed squared eigenfunction means.

    ``lambda_cut`` bounds every omitted eigenvalue from below and
    ``lambda_top`` from above (``inf`` for analytic spectra).  ``area`` is the
    area carried by the full eigenbasis, i.e. the raster area for discrete
    spectra.
    """

    shape_id: str
    h: float
    eigenvalues: np.ndarray
    multiplicities: np.ndarray
    masses: np.ndarray
    area: float
    lambda_cut: float
    lambda_top: float
    dim: int
    scale: float = 1.0
    analytic: bool = False
    vectors: np.ndarray | None = field(default=None, compare=False, repr=False)
    grid: MaskGrid | None = field(default=None, compare=False, repr=False)

    @property
    def n_modes(self) -> int:
        return int(self.multiplicities.sum())

    @property
    def captured_mass(self) -> float:
        return float(self.masses.sum())

    @property
    def lambda_1(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def guard(self) -> float:
        return POLE_GUARD * self.lambda_1

    def scaled(self, r: float) -> "ShapeSpectrum":
        """Spectrum of the shape dilated by ``r``: eigenvalues / r^2, masses * r^d."""
        if r == 1.0:
            return self
        f = r**self.dim
        return replace(
            self,
            h=self.h * r,
            eigenvalues=self.eigenvalues / r**2,
            masses=self.masses * f,
            area=self.area * f,
            lambda_cut=self.lambda_cut / r**2,
            lambda_top=self.lambda_top / r**2,
            scale=self.scale * r,
            vectors=None,
            grid=None,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "shape_id": self.shape_id,
            "h": self.h,
            "eigenvalues": self.eigenvalues.tolist(),
            "multiplicities": self.multiplicities.tolist(),
            "masses": self.masses.tolist(),
            "area": self.area,
            "captured_mass": self.captured_mass,
            "lambda_cut": self.lambda_cut,
            "lambda_top": "inf" if math.isinf(self.lambda_top) else self.lambda_top,
            "dim": self.dim,
            "scale": self.scale,
            "analytic": self.analytic,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ShapeSpectrum":
        return cls(
            shape_id=d["shape_id"],
            h=float(d["h"]),
            eigenvalues=np.asarray(d["eigenvalues"], dtype=float),
            multiplicities=np.asarray(d["multiplicities"], dtype=int),
            masses=np.asarray(d["masses"], dtype=float),
            area=float(d["area"]),
            lambda_cut=float(d["lambda_cut"]),
            lambda_top=float(d["lambda_top"]),
            dim=int(d["dim"]),
            scale=float(d.get("scale", 1.0)),
            analytic=bool(d.get("analytic", False)),
        )


def cluster(values: np.ndarray, tol: float = TOL_CLUSTER) -> list[np.ndarray]:
    """Group sorted eigenvalues whose relative spacing is below ``tol``."""
    groups: list[list[int]] = []
    for i, v in enumerate(values):
        if groups and v - values[groups[-1][-1]] <= tol * max(abs(v), 1e-300):
            groups[-1].append(i)
        else:
            groups.append([i])
    return [np.asarray(g) for g in groups]


def _from_eigenpairs(shape_id, grid, h, vals, vecs, area, lambda_top, n_modes, complete_all, dim, keep_vectors):
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    groups = cluster(vals)
    if not complete_all:
        # the last computed cluster may be cut by the solver's k
        groups = groups[:-1]
    kept: list[np.ndarray] = []
    count = 0
    for g in groups:
        if count >= n_modes:
            break
        kept.append(g)
        count += len(g)
    if not kept:
        raise NumericalError(f"no complete eigenvalue cluster computed for shape {shape_id!r}")
    last = kept[-1][-1]
    lambda_cut = float(vals[last + 1]) if last + 1 < len(vals) else math.inf
    if math.isinf(lambda_cut) and not complete_all:
        lambda_cut = float(vals[-1])
    sums = h ** (dim / 2) * vecs.sum(axis=0)
    eig = np.array([vals[g].mean() for g in kept])
    mult = np.array([len(g) for g in kept])
    mass = np.array([float(np.sum(sums[g] ** 2)) for g in kept])
    idx = np.concatenate(kept)
    return ShapeSpectrum(
        shape_id=shape_id,
        h=h,
        eigenvalues=eig,
        multiplicities=mult,
        masses=mass,
        area=area,
        lambda_cut=lambda_cut,
        lambda_top=lambda_top,
        dim=dim,
        vectors=vecs[:, idx] if keep_vectors else None,
        grid=grid,
    )


def dirichlet_spectrum(
    shape: Shape,
    h: float,
    n_modes: int,
    *,
    min_cells: int = MIN_CELLS_ACROSS,
    keep_vectors: bool = False,
) -> ShapeSpectrum:
    """Lowest Dirichlet eigenpairs of the finite-difference Laplacian on ``shape``.

    Parameters
    ----------
    shape : Shape
        Inclusion prototype.
    h : float
        Grid spacing in cell units.
    n_modes : int
        Number of eigenpairs requested (counted with multiplicity).  Only whole
        clusters are returned, so the result may hold slightly fewer or more.
    min_cells : int
        Required number of cells across the smallest feature.
    keep_vectors : bool
        Keep the eigenvectors (columns, normalized in the discrete L2 norm
        times ``h^{-d/2}``) together with the raster.

    Returns
    -------
    ShapeSpectrum
    """
    if n_modes < 1:
        raise ConfigError("n_modes must be >= 1")
    if shape.min_feature() / h < min_cells - 1e-9:
        raise UnderResolvedError(
            f"shape {shape.id!r} has {shape.min_feature() / h:.1f} cells across, need {min_cells}",
            shape.min_feature() / min_cells,
        )
    if shape.kind == "raster":
        if abs(h - shape.h_mask) > 1e-12 * h:
            raise PreconditionError("raster shapes are used on their own mask grid; pass h = h_mask")
        n = np.array(shape.mask.shape)
        grid = MaskGrid(np.array(shape.mask), h, -0.5 * n * h)
    else:
        grid = rasterize(shape, h)
    dof = int(grid.mask.sum())
    if dof == 0:
        raise PreconditionError(f"shape {shape.id!r} covers no cell at h={h:g}")
    if n_modes > dof:
        warnings.warn(f"n_modes={n_modes} exceeds {dof} interior cells; truncating", RuntimeWarning)
        n_modes = dof
    lap = mask_laplacian(grid.mask, h)
    d = grid.mask.ndim
    area = dof * h**d
    top = 4.0 * d / h**2  # Gershgorin bound
    if dof <= DENSE_MAX_DOF or n_modes + 8 >= dof:
        vals, vecs = linalg.eigh(lap.toarray())
        return _from_eigenpairs(shape.id, grid, h, vals, vecs, area, float(vals[-1]), n_modes, True, d, keep_vectors)
    k = min(n_modes + 8, dof - 2)
    v0 = np.ones(dof) / math.sqrt(dof)
    try:
        vals, vecs = sla.eigsh(lap.tocsc(), k=k, sigma=0.0, which="LM", v0=v0, tol=1e-12)
    except sla.ArpackNoConvergence as exc:
        raise NumericalError(f"eigensolver did not converge for shape {shape.id!r}") from exc
    return _from_eigenpairs(shape.id, grid, h, vals, vecs, area, top, n_modes, False, d, keep_vectors)


def analytic_spectrum(shape: Shape, n_modes: int) -> ShapeSpectrum:
    """Exact Dirichlet spectrum of an interval, square or disk (continuous problem)."""
    if shape.kind == "interval":
        ell = shape.size
        s = np.arange(1, n_modes + 1)
        vals = (s * math.pi / ell) ** 2
        mass = np.where(s % 2 == 1, 8 * ell / (s**2 * math.pi**2), 0.0)
        nxt = ((n_modes + 1) * math.pi / ell) ** 2
        return ShapeSpectrum(shape.id, 0.0, vals, np.ones(n_modes, int), mass, ell, nxt, math.inf, 1, analytic=True)
    if shape.kind == "square":
        a = shape.size
        kmax = int(math.ceil(math.sqrt(2 * n_modes))) + 4
        m, n = np.meshgrid(np.arange(1, kmax + 1), np.arange(1, kmax + 1), indexing="ij")
        q = (m**2 + n**2).ravel()
        mass = np.where((m % 2 == 1) & (n % 2 == 1), 64 * a**2 / (math.pi**4 * m**2 * n**2), 0.0).ravel()
        levels = np.unique(q)
        levels = levels[levels <= kmax**2]  # complete below the truncation radius
        vals, mult, ms = [], [], []
        for lev in levels:
            sel = q == lev
            vals.append(lev * (math.pi / a) ** 2)
            mult.append(int(sel.sum()))
            ms.append(float(mass[sel].sum()))
            if sum(mult) >= n_modes:
                break
        nxt = float(levels[len(vals)]) * (math.pi / a) ** 2 if len(vals) < len(levels) else kmax**2 * (math.pi / a) ** 2
        return ShapeSpectrum(shape.id, 0.0, np.array(vals), np.array(mult), np.array(ms), a * a, nxt, math.inf, 2, analytic=True)
    if shape.kind == "disk":
        R = shape.size
        nz = n_modes + 2
        entries = []
        for order in range(0, nz):
            zeros = special.jn_zeros(order, nz)
            for z in zeros:
                entries.append((z, 1 if order == 0 else 2, 4 * math.pi * R**2 / z**2 if order == 0 else 0.0))
            if zeros[0] > special.jn_zeros(0, nz)[-1]:
                break
        entries.sort()
        vals, mult, ms = [], [], []
        for z, mu, w in entries:
            if sum(mult) >= n_modes:
                break
            vals.append((z / R) ** 2)
            mult.append(mu)
            ms.append(w)
        nxt = (entries[len(vals)][0] / R) ** 2
        return ShapeSpectrum(shape.id, 0.0, np.array(vals), np.array(mult), np.array(ms), math.pi * R * R, nxt, math.inf, 2, analytic=True)
    raise ConfigError(f"no closed-form spectrum for shape kind {shape.kind!r}")


def mass_identity_check(spec: ShapeSpectrum) -> float:
    """Captured fraction of the area by the computed modes."""
    return spec.captured_mass / spec.area


# ---------------------------------------------------------------------------
# resolvent integral
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResolventIntegral:
    lam: float
    lo: float
    hi: float

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo


def check_pole(spec: ShapeSpectrum, lam: float, guard: float | None = None) -> float:
    """Distance from ``lam`` to the computed eigenvalues; raises inside the guard."""
    g = spec.guard if guard is None else guard
    dist = np.abs(spec.eigenvalues - lam)
    i = int(np.argmin(dist))
    if dist[i] <= g:
        raise PoleError(lam, spec.eigenvalues[i], g)
    if lam >= spec.lambda_cut - g:
        raise PreconditionError(
            f"lambda={lam:g} is not below the spectral cutoff {spec.lambda_cut:g} of shape {spec.shape_id!r}; "
            "compute more modes"
        )
    return float(dist[i])


def b_integral(spec: ShapeSpectrum, lam: float, guard: float | None = None) -> ResolventIntegral:
    """Bracket for the integral of ``b`` solving ``(-Δ - lam) b = 1`` with Dirichlet data.

    The computed modes give ``sum m_s / (Λ_s - lam)``; the remaining mass
    ``|Y| - sum m_s`` sits on eigenvalues in ``[lambda_cut, lambda_top]``.
    """
    check_pole(spec, lam, guard)
    series = float(np.sum(spec.masses / (spec.eigenvalues - lam)))
    rest = max(spec.area - spec.captured_mass, 0.0)
    hi = rest / (spec.lambda_cut - lam)
    lo = 0.0 if math.isinf(spec.lambda_top) else rest / (spec.lambda_top - lam)
    return ResolventIntegral(float(lam), series + lo, series + hi)


def b_integral_direct(shape: Shape, h: float, lam: float = 0.0) -> float:
    """Integral of the discrete ``b`` from one sparse solve (independent of the modes)."""
    grid = rasterize(shape, h) if shape.kind != "raster" else MaskGrid(shape.mask, h, -0.5 * np.array(shape.mask.shape) * h)
    lap = mask_laplacian(grid.mask, h)
    n = lap.shape[0]
    b = sla.spsolve((lap - lam * sp.identity(n)).tocsc(), np.ones(n))
    return float(b.sum() * h ** grid.mask.ndim)


# ---------------------------------------------------------------------------
# b on a caller grid
# ---------------------------------------------------------------------------


def b_field_on_inclusion(
    mask: np.ndarray,
    h: float,
    lam: float,
    eps: float,
    spec: ShapeSpectrum | None = None,
) -> np.ndarray:
    """Solve ``(-ε² Δ_h - lam) b = 1`` on the cells of ``mask``, zero outside.

    ``mask`` is the ε-scaled inclusion rasterized on the caller's grid of
    spacing ``h``.  ``spec`` (spectrum at spacing ``h/eps``) enables the pole
    guard.
    """
    mask = np.asarray(mask, dtype=bool)
    if spec is not None:
        check_pole(spec, lam)
    lap = mask_laplacian(mask, h) * eps**2
    n = lap.shape[0]
    if n == 0:
        raise PreconditionError("inclusion covers no grid cell")
    b = sla.spsolve((lap - lam * sp.identity(n)).tocsc(), np.ones(n))
    out = np.zeros(mask.shape)
    out[mask] = b
    return out


# ---------------------------------------------------------------------------
# spectra for a whole model
# ---------------------------------------------------------------------------


@dataclass
class SpectrumSettings:
    """How per-shape spectra are obtained: discrete at spacing ``h`` or analytic."""

    h: float = 1.0 / 64
    n_modes: int = 200
    analytic: bool = False
    min_cells: int = MIN_CELLS_ACROSS


class SpectrumCache:
    """Read-mostly store of shape spectra, optionally mirrored to a directory."""

    def __init__(self, directory: str | os.PathLike | None = None):
        if directory is None:
            directory = os.environ.get("HICOSPEC_CACHE")
        self.directory = Path(directory) if directory else None
        self._mem: dict[tuple, ShapeSpectrum] = {}

    def _key(self, shape: Shape, s: SpectrumSettings) -> tuple:
        sig = hashlib.sha1(json.dumps(shape.to_dict(), sort_keys=True).encode()).hexdigest()[:12]
        return (shape.id, sig, "analytic" if s.analytic else repr(float(s.h)), s.n_modes)

    def get(self, shape: Shape, settings: SpectrumSettings) -> ShapeSpectrum:
        key = self._key(shape, settings)
        if key in self._mem:
            return self._mem[key]
        path = None
        if self.directory is not None:
            name = "_".join(str(k).replace("/", "-") for k in key) + ".json"
            path = self.directory / name
            if path.exists():
                with open(path) as fh:
                    spec = ShapeSpectrum.from_dict(json.load(fh))
                self._mem[key] = spec
                return spec
        if settings.analytic:
            spec = analytic_spectrum(shape, settings.n_modes)
        else:
            spec = dirichlet_spectrum(shape, settings.h, settings.n_modes, min_cells=settings.min_cells)
        spec = replace(spec, vectors=None, grid=None)
        self._mem[key] = spec
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            with open(tmp, "w") as fh:
                json.dump(spec.to_dict(), fh)
            os.replace(tmp, path)
        return spec


_DEFAULT_CACHE = SpectrumCache()


@dataclass(frozen=True)
class WeightedPoint:
    value: float
    weight: float
    zero_mean_modes: bool


def model_spectra(
    model: RandomModel, settings: SpectrumSettings, cache: SpectrumCache | None = None
) -> list[tuple[ShapeSpectrum, float]]:
    """(scaled spectrum, intensity) pairs for every shape/scale of ``model``."""
    cache = cache or _DEFAULT_CACHE
    out = []
    for shape, r, rho in model.intensities():
        base = cache.get(shape, settings)
        out.append((base.scaled(r), rho))
    return out


def micro_spectrum(
    model: RandomModel,
    lambda_max: float,
    settings: SpectrumSettings | None = None,
    cache: SpectrumCache | None = None,
    terms: list[tuple[ShapeSpectrum, float]] | None = None,
) -> list[WeightedPoint]:
    """Pooled inclusion eigenvalues up to ``lambda_max`` with intensity-weighted masses."""
    if terms is None:
        terms = model_spectra(model, settings or SpectrumSettings(), cache)
    pts: list[tuple[float, float, bool]] = []
    for spec, rho in terms:
        if spec.lambda_cut <= lambda_max:
            raise PreconditionError(
                f"shape {spec.shape_id!r} (scale {spec.scale:g}) has modes only up to "
                f"{spec.lambda_cut:g} < lambda_max={lambda_max:g}"
            )
        for lam, m, k in zip(spec.eigenvalues, spec.masses, spec.multiplicities):
            if lam <= lambda_max:
                pts.append((float(lam), rho * float(m), bool(k >= 2 or m <= 1e-24)))
    pts.sort()
    merged: list[WeightedPoint] = []
    for lam, w, z in pts:
        if merged and abs(lam - merged[-1].value) <= TOL_CLUSTER * lam:
            p = merged[-1]
            merged[-1] = WeightedPoint(p.value, p.weight + w, p.zero_mean_modes or z)
        else:
            merged.append(WeightedPoint(lam, w, z))
    return merged
