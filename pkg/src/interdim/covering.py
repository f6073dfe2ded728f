"""Constrained-diameter cover sums on point clouds and the cover-route dimension."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .capacity import DEFAULT_WINDOW, DimensionEstimate, capacity_dimension, check_r_grid
from .kernels import AdmissibleFn, as_phi


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    weights: np.ndarray | None = None
    error_bound: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if p.ndim != 2 or len(p) == 0:
            raise ValueError("a cloud needs at least one point")
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite coordinates")
        object.__setattr__(self, "points", p)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (len(p),) or np.any(w < 0):
                raise ValueError("weights must be non-negative, one per point")
            object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points.min(axis=0), self.points.max(axis=0)

    def to_csv(self, path) -> None:
        np.savetxt(path, self.points, delimiter=",", fmt="%.17g")

    @classmethod
    def from_csv(cls, path) -> "PointCloud":
        return cls(np.loadtxt(path, delimiter=",", ndmin=2))


def _as_cloud(cloud) -> PointCloud:
    return cloud if isinstance(cloud, PointCloud) else PointCloud(cloud)


def box_count(cloud, delta: float) -> int:
    """Occupied grid cells of side ``delta / sqrt(d)`` (diameter ``delta``)."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    p = _as_cloud(cloud).points
    side = delta / math.sqrt(p.shape[1])
    cells = np.floor((p - p.min(axis=0)) / side).astype(np.int64)
    return len(np.unique(cells, axis=0))


def scale_ladder(r: float, phi_r: float, factor: float = 2.0) -> np.ndarray:
    """``r, r/f, r/f^2, ...`` while above ``Phi(r)``, then ``Phi(r)`` itself."""
    if phi_r > r:
        raise ValueError("empty scale range: Phi(r) > r")
    n = int(math.floor(math.log(r / phi_r) / math.log(factor) - 1e-12)) + 1 if phi_r < r else 0
    return np.append(r / factor ** np.arange(n), phi_r)


class CoverTree:
    """Nested grid cells over a ladder of diameters in ``[Phi(r), r]``.

    A node at level ``j`` is the part of its parent lying in one cell of
    diameter ``delta_j``; cell grids are anchored at each parent's lowest
    corner so coordinates stay small.  The tree does not depend on ``s``.
    """

    def __init__(self, cloud, r: float, phi_r: float, factor: float = 2.0):
        pts = np.unique(_as_cloud(cloud).points, axis=0)
        self.r, self.phi_r = r, phi_r
        self.deltas = scale_ladder(r, phi_r, factor)
        d = pts.shape[1]
        ids = np.zeros(len(pts), dtype=np.int64)
        k = 1
        self.parents: list[np.ndarray] = []
        self.counts: list[np.ndarray] = []
        for delta in self.deltas:
            lo = np.full((k, d), np.inf)
            np.minimum.at(lo, ids, pts)
            cells = np.floor((pts - lo[ids]) / (delta / math.sqrt(d))).astype(np.int64)
            key = np.column_stack([ids, cells])
            uniq, new_ids = np.unique(key, axis=0, return_inverse=True)
            new_ids = new_ids.ravel()
            self.parents.append(uniq[:, 0])
            k = len(uniq)
            self.counts.append(np.bincount(new_ids, minlength=k))
            ids = new_ids
            if k == len(pts):
                break
        self.n_points = len(pts)

    @property
    def levels(self) -> int:
        return len(self.parents)

    def solve(self, s: float) -> "CoverSumResult":
        """Cheapest cover in the tree, costs ``delta**s`` (``Phi(r)**s`` for singletons)."""
        log_phi = math.log(self.phi_r)
        unit = np.exp(s * (np.log(self.deltas) - log_phi))  # delta^s / Phi^s
        take = []
        cost = None
        for j in range(self.levels - 1, -1, -1):
            cnt = self.counts[j]
            whole = np.where(cnt == 1, 1.0, unit[j])
            if cost is None:
                # the last level is either Phi(r) itself or all singletons
                best = np.ones(len(cnt))
                tk = np.ones(len(cnt), dtype=bool)
            else:
                below = np.bincount(self.parents[j + 1], weights=cost, minlength=len(cnt))
                tk = whole <= below
                best = np.where(tk, whole, below)
            take.append(tk)
            cost = best
        take.reverse()
        diam, count = self._collect(take)
        log_total = math.log(float(cost.sum())) + s * log_phi
        return CoverSumResult(self.r, s, log_total, diam, count, self)

    def _collect(self, take: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        diam, count = [], []
        active = np.ones(len(take[0]), dtype=bool)
        for j, tk in enumerate(take):
            chosen = active & tk
            single = chosen & (self.counts[j] == 1)
            if single.any():
                diam.append(self.phi_r)
                count.append(int(single.sum()))
            multi = chosen & ~single
            if multi.any():
                diam.append(float(self.deltas[j]))
                count.append(int(multi.sum()))
            if j + 1 < len(take):
                active = (active & ~tk)[self.parents[j + 1]]
        return np.array(diam), np.array(count)

    def single_scale_floor(self, s: float, cloud) -> float:
        return min(box_count(cloud, dl) * dl ** s for dl in self.deltas)


@dataclass
class CoverSumResult:
    r: float
    s: float
    log_upper_bound: float
    diameters: np.ndarray
    counts: np.ndarray
    tree: CoverTree | None = field(default=None, repr=False)

    @property
    def upper_bound(self) -> float:
        return math.exp(self.log_upper_bound)

    @property
    def cover_size(self) -> int:
        return int(self.counts.sum())

    def reprice(self, t: float) -> float:
        """Sum of ``|U|**t`` over the same cover."""
        return float(self.counts @ self.diameters ** t)

    def log_reprice(self, t: float) -> float:
        lg = np.log(self.counts) + t * np.log(self.diameters)
        m = lg.max()
        return float(m + np.log(np.exp(lg - m).sum()))


def cover_sum(cloud, r: float, s: float, phi: AdmissibleFn | None = None, *, theta: float | None = None,
              factor: float = 2.0, tree: CoverTree | None = None) -> CoverSumResult:
    """Upper bound for ``S^s_{Phi,r}``: the cheapest cover built from nested grid cells."""
    phi = as_phi(phi, theta)
    phi.check_scale(r)
    if s < 0:
        raise ValueError("s must be non-negative")
    if tree is None:
        tree = CoverTree(cloud, r, phi(r), factor)
    return tree.solve(s)


def cover_sum_lower_certificate(cloud, measure, r: float, s: float, phi: AdmissibleFn | None = None, *,
                                theta: float | None = None) -> float:
    """``1 / max_i sum_j w_j psi(|x_i - x_j|)``, a lower bound for ``S^s_{Phi,r}``."""
    phi = as_phi(phi, theta)
    phi.check_scale(r)
    p = _as_cloud(cloud).points
    w = np.asarray(measure, dtype=float)
    if w.shape != (len(p),) or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
        raise ValueError("measure must be a probability vector on the cloud")
    phi_r = phi(r)
    tree = cKDTree(p)
    pairs = tree.query_pairs(r, output_type="ndarray")
    # psi scaled by Phi^s: 1 up to Phi(r), then (Phi/dist)^s
    pot = w.copy()
    if len(pairs):
        dist = np.linalg.norm(p[pairs[:, 0]] - p[pairs[:, 1]], axis=1)
        val = np.where(dist <= phi_r, 1.0, (phi_r / np.maximum(dist, phi_r)) ** s)
        np.add.at(pot, pairs[:, 0], w[pairs[:, 1]] * val)
        np.add.at(pot, pairs[:, 1], w[pairs[:, 0]] * val)
    gamma = pot[w > 0].max()
    return float(phi_r ** s / gamma)


def validity_ratio(phi: AdmissibleFn, r_grid) -> np.ndarray:
    """``log r / log Phi(r)`` along the grid; it must stay away from zero."""
    lr = np.log(np.sort(np.asarray(r_grid, float))[::-1])
    return lr / phi.log_at(lr)


def phi_dimension(cloud, phi: AdmissibleFn | None = None, *, theta: float | None = None, mode: str = "upper",
                  bracket: tuple | None = None, r_grid=None, tol_s: float = 1e-3,
                  window: int | None = DEFAULT_WINDOW, factor: float = 2.0) -> DimensionEstimate:
    """Cover-route dimension: zero of the windowed slope of ``log S^s_{Phi,r}``."""
    from .capacity import DEFAULT_R_GRID

    phi = as_phi(phi, theta)
    cloud = _as_cloud(cloud)
    r = check_r_grid(DEFAULT_R_GRID if r_grid is None else r_grid)
    ratio = validity_ratio(phi, r)
    if ratio[-1] < 0.1 and np.all(np.diff(ratio) < 0):
        warnings.warn("log r / log Phi(r) is drifting to 0 on this grid; "
                      "the cover characterisation may not apply", RuntimeWarning, stacklevel=2)
    trees = [CoverTree(cloud, ri, phi(ri), factor) for ri in r]

    def curve(s):
        return [t.solve(s).log_upper_bound for t in trees]

    if bracket is None:
        bracket = (0.0, float(cloud.d))
    return capacity_dimension(curve, r, mode, bracket, tol_s, window)


def write_cover_csv(path, rows: Sequence[dict]) -> None:
    """Rows: ``r, s, upper_bound, lower_certificate, single_scale_floor, cover_size``."""
    cols = ["r", "s", "upper_bound", "lower_certificate", "single_scale_floor", "cover_size"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for row in rows:
            wr.writerow([row[c] if c == "cover_size" else f"{row[c]:.17g}" for c in cols])
