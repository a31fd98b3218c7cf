"""Random sequential parking of aligned unit cubes on a finite region.

Items arrive as a space-time Poisson process of unit intensity; an arrival is
accepted when its open unit cube misses every earlier accepted cube.  Rejected
arrivals never change the state, so the simulation only draws arrivals that
land in the currently available set.  In each unit cell of the region the
available set is kept as an exact union of boxes, which makes the waiting
times and the jammed state exact (up to floating point).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .geometry import Window

if TYPE_CHECKING:
    from .geometry import RandomParking

BUFFER = 1.0


@dataclass
class ParkingResult:
    centers: np.ndarray  # accepted centres inside the window, half-open
    all_centers: np.ndarray  # accepted centres in the simulated region
    time: float
    jammed: bool
    probe_jammed: bool | None
    n_region: int
    region_lo: np.ndarray
    region_hi: np.ndarray


class _Available:
    """Exact available set for item centres, bucketed by unit cells."""

    def __init__(self, lo: np.ndarray, hi: np.ndarray):
        self.lo, self.hi = lo, hi
        self.d = len(lo)
        self.shape = tuple(int(np.ceil(hi[a] - lo[a])) for a in range(self.d))
        self.area = np.zeros(self.shape)
        self.boxes: dict[tuple, np.ndarray] = {}
        self.occupants: dict[tuple, list] = {}
        for idx in np.ndindex(*self.shape):
            self._update(idx)

    def cell_bounds(self, idx):
        c0 = self.lo + np.asarray(idx, dtype=float)
        return c0, np.minimum(c0 + 1.0, self.hi)

    def _near(self, idx) -> np.ndarray:
        pts = []
        ranges = [range(max(i - 2, 0), min(i + 3, n)) for i, n in zip(idx, self.shape)]
        for nb in np.ndindex(*[len(r) for r in ranges]):
            key = tuple(r[k] for r, k in zip(ranges, nb))
            pts.extend(self.occupants.get(key, ()))
        return np.asarray(pts, dtype=float).reshape(-1, self.d)

    def _update(self, idx) -> None:
        c0, c1 = self.cell_bounds(idx)
        pts = self._near(idx)
        if len(pts):
            # exclusion boxes (a-1, a+1) that reach the cell
            hit = np.all((pts - 1.0 < c1) & (pts + 1.0 > c0), axis=1)
            pts = pts[hit]
        if len(pts) == 0:
            box = np.concatenate([c0, c1])[None, :]
            self.boxes[idx] = box
            self.area[idx] = float(np.prod(c1 - c0))
            return
        cuts = []
        for a in range(self.d):
            b = np.concatenate([[c0[a], c1[a]], np.clip(pts[:, a] - 1.0, c0[a], c1[a]),
                                np.clip(pts[:, a] + 1.0, c0[a], c1[a])])
            cuts.append(np.unique(b))
        mids = [0.5 * (c[1:] + c[:-1]) for c in cuts]
        grids = np.meshgrid(*mids, indexing="ij")
        covered = np.zeros(grids[0].shape, dtype=bool)
        for p in pts:
            inside = np.ones_like(covered)
            for a in range(self.d):
                inside &= np.abs(grids[a] - p[a]) < 1.0
            covered |= inside
        free = np.argwhere(~covered)
        if len(free) == 0:
            self.boxes[idx] = np.zeros((0, 2 * self.d))
            self.area[idx] = 0.0
            return
        lo_b = np.stack([cuts[a][free[:, a]] for a in range(self.d)], axis=1)
        hi_b = np.stack([cuts[a][free[:, a] + 1] for a in range(self.d)], axis=1)
        vol = np.prod(hi_b - lo_b, axis=1)
        keep = vol > 0
        self.boxes[idx] = np.concatenate([lo_b[keep], hi_b[keep]], axis=1)
        self.area[idx] = float(vol[keep].sum())

    def cell_of(self, x: np.ndarray) -> tuple:
        i = np.floor(x - self.lo).astype(int)
        return tuple(int(min(max(v, 0), n - 1)) for v, n in zip(i, self.shape))

    def accept(self, x: np.ndarray) -> None:
        self.occupants.setdefault(self.cell_of(x), []).append(np.array(x, dtype=float))
        ranges = []
        for a in range(self.d):
            i0 = int(np.floor(x[a] - 1.0 - self.lo[a]))
            i1 = int(np.floor(x[a] + 1.0 - self.lo[a]))
            ranges.append(range(max(i0, 0), min(i1, self.shape[a] - 1) + 1))
        for nb in np.ndindex(*[len(r) for r in ranges]):
            self._update(tuple(r[k] for r, k in zip(ranges, nb)))

    def sample(self, rng: np.random.Generator, total: float) -> np.ndarray:
        flat = self.area.ravel()
        cum = np.cumsum(flat)
        k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        k = min(k, len(flat) - 1)
        while flat[k] <= 0:  # guard against rounding at the cumulative edge
            k -= 1
        idx = np.unravel_index(k, self.shape)
        boxes = self.boxes[tuple(int(i) for i in idx)]
        vol = np.prod(boxes[:, self.d:] - boxes[:, : self.d], axis=1)
        j = min(int(np.searchsorted(np.cumsum(vol), rng.random() * vol.sum(), side="right")), len(vol) - 1)
        b = boxes[j]
        return b[: self.d] + rng.random(self.d) * (b[self.d:] - b[: self.d])


def probe_uncovered(centers: np.ndarray, lo: np.ndarray, hi: np.ndarray, pitch: float) -> int:
    """Count probe positions (pitch grid on [lo, hi]) where another unit cube fits."""
    d = len(lo)
    axes = [np.arange(lo[a], hi[a] + 0.5 * pitch, pitch) for a in range(d)]
    covered = np.zeros(tuple(len(x) for x in axes), dtype=bool)
    for c in np.asarray(centers).reshape(-1, d):
        sl = []
        for a in range(d):
            i0 = int(np.searchsorted(axes[a], c[a] - 1.0, side="right"))
            i1 = int(np.searchsorted(axes[a], c[a] + 1.0, side="left"))
            sl.append(slice(i0, i1))
        covered[tuple(sl)] = True
    return int((~covered).sum())


def park(model: "RandomParking", window: Window, seed: int, certify: bool = True) -> ParkingResult:
    """Run the parking process on ``window`` plus a buffer and keep the window part."""
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0x9A4B])
    lo = window.lo - BUFFER
    hi = window.hi + BUFFER
    avail = _Available(lo, hi)
    accepted: list[np.ndarray] = []
    t = 0.0
    jammed = True
    while True:
        total = float(avail.area.sum())
        if total <= 1e-14:
            break
        t += rng.exponential(1.0 / total)
        if t > model.t_max:
            jammed = False
            break
        x = avail.sample(rng, total)
        accepted.append(x)
        avail.accept(x)
    allc = np.asarray(accepted, dtype=float).reshape(-1, window.dim)
    probe = None
    if certify and jammed:
        probe = probe_uncovered(allc, lo, hi, model.probe) == 0
    inside = np.all((allc >= window.lo) & (allc < window.hi), axis=1)
    return ParkingResult(allc[inside], allc, t, jammed, probe, len(allc), lo, hi)
