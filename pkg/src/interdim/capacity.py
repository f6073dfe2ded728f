"""Equilibrium measures, capacities and capacity-dimension estimators."""
from __future__ import annotations

import csv
import math
import sys
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg
from scipy.spatial.distance import pdist, squareform

from .kernels import AdmissibleFn, as_phi, log_ker_profile, log_ker_symbolic_sv
from .symbolic import AffineIfs, SymbolicPoints, SymbolicSet, refine_to_depth, singular_values


class CapacityError(RuntimeError):
    """Resource caps exceeded while assembling a capacity problem."""


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Symmetric positive kernel on ``n`` support points.

    The true kernel is ``values * exp(log_scale)``; keeping a shift lets the
    entries stay in floating range when ``Phi(r)**-s`` is huge.
    """

    values: np.ndarray
    labels: tuple = ()
    log_scale: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("kernel matrix must be square")
        if not np.all(np.isfinite(v)):
            raise ValueError("kernel matrix has non-finite entries")
        if not np.array_equal(v, v.T):
            raise ValueError("kernel matrix is not symmetric")
        if np.any(v <= 0):
            raise ValueError("kernel matrix must have strictly positive entries")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_log(cls, log_values: np.ndarray, **kw) -> "KernelMatrix":
        shift = float(np.max(log_values))
        return cls(np.exp(log_values - shift), log_scale=shift, **kw)


@dataclass
class EquilibriumResult:
    measure: np.ndarray
    energy: float
    log_energy: float
    gap: float
    min_potential: float
    max_potential: float
    iterations: int
    converged: bool

    @property
    def capacity(self) -> float:
        return _rescale(1.0, -self.log_energy)

    @property
    def log_capacity(self) -> float:
        return -self.log_energy


def check_probability(w, atol: float = 1e-12) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > atol:
        raise ValueError("not a probability vector")
    return w


def _corrective_step(A: np.ndarray, w: np.ndarray, g: np.ndarray, E: float):
    """Move towards the minimiser on the affine hull of the current support.

    Solves ``K_SS v = 1`` and takes the exact line-search step along
    ``v / sum(v) - w`` clipped by the ratio test, so the energy never
    increases.  Returns ``None`` when no descent is available.
    """
    S = np.flatnonzero(w > 0)
    if len(S) < 2:
        return None
    KS = A[np.ix_(S, S)]
    try:
        with warnings.catch_warnings():
            # near-duplicate points give ill-conditioned blocks; the line search keeps the step safe
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            v = linalg.solve(KS, np.ones(len(S)), assume_a="sym", check_finite=False)
    except (linalg.LinAlgError, ValueError):
        return None
    tot = v.sum()
    if not np.isfinite(tot) or abs(tot) < 1e-300:
        return None
    dS = v / tot - w[S]
    slope = float(dS @ g[S])
    if slope >= 0:
        return None
    neg = dS < 0
    gmax = float(np.min(-w[S][neg] / dS[neg])) if neg.any() else 1.0
    curv = float(dS @ KS @ dS)
    step = gmax if curv <= 0 else min(gmax, 1.0, -slope / curv)
    if step <= 0:
        return None
    w = w.copy()
    w[S] += step * dS
    if step == gmax and neg.any():
        w[S[neg][np.argmin(-w[S][neg] / dS[neg])]] = 0.0
    w[w < 1e-15] = 0.0
    w /= w.sum()
    keep = np.flatnonzero(w)
    g = w[keep] @ A[keep]
    return w, g


def _rescale(x: float, log_scale: float) -> float:
    # x * exp(log_scale) without overflow in the intermediate factor
    if x <= 0:
        return x
    lx = math.log(x) + log_scale
    return math.inf if lx > 709.0 else math.exp(lx)


def equilibrium_measure(K: KernelMatrix | np.ndarray, tol: float = 1e-7, max_iter: int = 200_000,
                        w0: np.ndarray | None = None, corrective_every: int = 25,
                        corrective_max: int = 3000) -> EquilibriumResult:
    """Minimise ``w' K w`` over the probability simplex.

    Frank-Wolfe with away steps and exact line search (the objective is
    quadratic), interleaved with corrective steps on the current support
    while it has at most ``corrective_max`` points.  Stops when both the
    Frank-Wolfe gap ``2(E - min Kw)`` and the away gap
    ``2(max_{w>0} Kw - E)`` are at most ``tol * E``; the potentials then
    certify the equilibrium condition.
    """
    if not isinstance(K, KernelMatrix):
        K = KernelMatrix(np.asarray(K, dtype=float))
    A = K.values
    n = K.n
    diag = np.diag(A).copy()
    if w0 is None:
        w = np.zeros(n)
        w[int(np.argmin(A.sum(axis=1)))] = 1.0
    else:
        w = check_probability(w0, 1e-9).copy()
    g = A @ w
    E = float(w @ g)
    it, converged = 0, False
    while True:
        i = int(np.argmin(g))
        gs = np.where(w > 0, g, -np.inf)
        j = int(np.argmax(gs))
        fw_gap = 2.0 * (E - g[i])
        away_gap = 2.0 * (g[j] - E)
        if max(fw_gap, away_gap) <= tol * E:
            converged = True
            break
        if it >= max_iter:
            break
        it += 1
        if it % corrective_every == 0 and np.count_nonzero(w) <= corrective_max:
            res = _corrective_step(A, w, g, E)
            if res is not None:
                w, g = res
                E = float(w @ g)
                continue
        if fw_gap >= away_gap:
            slope = g[i] - E
            curv = diag[i] - 2.0 * g[i] + E
            gmax = 1.0
        else:
            slope = E - g[j]
            curv = E - 2.0 * g[j] + diag[j]
            gmax = w[j] / (1.0 - w[j]) if w[j] < 1.0 else np.inf
        step = gmax if curv <= 0 else min(gmax, -slope / curv)
        if not np.isfinite(step):
            break
        # rows equal columns by symmetry and are contiguous
        if fw_gap >= away_gap:
            w *= 1.0 - step
            w[i] += step
            g = (1.0 - step) * g + step * A[i]
        else:
            w *= 1.0 + step
            w[j] -= step
            if step == gmax:
                w[j] = 0.0
            g = (1.0 + step) * g - step * A[j]
        np.clip(w, 0.0, None, out=w)
        if it % 200 == 0:
            w /= w.sum()
            g = A @ w
        E = float(w @ g)
    w /= w.sum()
    g = A @ w
    E = float(w @ g)
    fw_gap = 2.0 * (E - g.min())
    support = w > 0
    return EquilibriumResult(
        measure=w,
        energy=_rescale(E, K.log_scale),
        log_energy=math.log(E) + K.log_scale,
        gap=_rescale(fw_gap, K.log_scale),
        min_potential=_rescale(float(g.min()), K.log_scale),
        max_potential=_rescale(float(g[support].max()), K.log_scale),
        iterations=it,
        converged=converged,
    )


# -- symbolic capacities ---------------------------------------------------

@dataclass
class CapacityResult:
    log_capacity: float
    method: str
    n_support: int
    equilibrium: EquilibriumResult | None = None
    meta: dict = field(default_factory=dict)

    @property
    def capacity(self) -> float:
        return _rescale(1.0, self.log_capacity)

    @property
    def energy(self) -> float:
        return _rescale(1.0, -self.log_capacity)


def _matrix_key(t: np.ndarray) -> tuple:
    scale = np.abs(t).max()
    e = math.floor(math.log2(scale)) if scale > 0 else 0
    return (e,) + tuple(np.round(np.ldexp(t, -e).ravel(), 11))


class _TreeSolver:
    """Exact minimum energy for kernels that depend only on ``x ^ y``.

    Writing ``K(x, y) = sum_{w <= x^y} dk(w)`` gives the energy
    ``sum_w dk(w) mu(w)^2`` and hence the recursion
    ``e(w) = dk(w) + 1 / sum_c 1/e(c)`` with leaves at the first node where
    ``alpha_1(T_w) <= Phi(r)`` (below it the kernel is constant).  The
    subtree term only depends on ``T_w`` inside the full shift, so it is
    memoised on the matrix.  Kernel values are scaled by ``Phi(r)**s``.
    """

    def __init__(self, ifs: AffineIfs, log_r: float, log_phi: float, s: float, node_cap: int):
        self.ifs, self.log_r, self.log_phi, self.s = ifs, log_r, log_phi, s
        self.node_cap = node_cap
        self.memo: dict = {}
        self.visited = 0
        self.points = False

    def k(self, t: np.ndarray) -> tuple[float, bool]:
        sv = np.linalg.svd(t, compute_uv=False)
        lsv = np.log(sv)
        leaf = lsv[0] <= self.log_phi
        lk = (-self.s * self.log_phi) if leaf else log_ker_symbolic_sv(lsv, self.log_r, self.log_phi, self.s)
        return math.exp(lk + self.s * self.log_phi), bool(leaf)

    def full_subtree(self, t: np.ndarray, kt: float, leaf: bool) -> float:
        """Energy term below a node of the full shift (excluding its own dk)."""
        if leaf:
            return 0.0
        key = _matrix_key(t)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        self.visited += 1
        if self.visited > self.node_cap:
            raise CapacityError(f"tree exceeds {self.node_cap} distinct nodes")
        inv = 0.0
        for tj in self.ifs.matrices:
            tc = t @ tj
            kc, leaf_c = self.k(tc)
            e = (kc - kt) + self.full_subtree(tc, kc, leaf_c)
            if e <= 0.0:
                inv = math.inf
                break
            inv += 1.0 / e
        out = 0.0 if inv == math.inf else 1.0 / inv
        self.memo[key] = out
        return out

    def trie_subtree(self, node: dict, t: np.ndarray, kt: float, leaf: bool) -> float:
        if node is None and self.points:
            return 0.0
        if leaf or node is None:
            return self.full_subtree(t, kt, leaf)
        inv = 0.0
        for j, child in node.items():
            tc = t @ self.ifs.matrices[j - 1]
            kc, leaf_c = self.k(tc)
            e = (kc - kt) + self.trie_subtree(child, tc, kc, leaf_c)
            if e <= 0.0:
                return 0.0
            inv += 1.0 / e
        return 1.0 / inv


def _build_trie(words) -> dict | None:
    if words == ((),):
        return None
    root: dict = {}
    for w in words:
        node = root
        for k in w[:-1]:
            node = node.setdefault(k, {})
        node[w[-1]] = None
    return root


def tree_log_energy(sset: SymbolicSet | SymbolicPoints, ifs: AffineIfs, r: float, s: float, phi: AdmissibleFn,
                    node_cap: int = 200_000) -> tuple[float, int]:
    """Log of the minimal energy via the ultrametric recursion; also returns node count."""
    sset.check_alphabet(ifs.m)
    log_r = math.log(r)
    log_phi = float(phi.log_at(log_r))
    solver = _TreeSolver(ifs, log_r, log_phi, s, node_cap)
    if isinstance(sset, SymbolicPoints):
        # one leaf per point, below which the kernel is constant
        words = refine_to_depth(sset, ifs, threshold=math.exp(log_phi)).words
        solver.points = True
    else:
        words = sset.words
    t0 = np.eye(ifs.d)
    k0, leaf0 = solver.k(t0)
    # the recursion is as deep as the stopping depth, which can reach a few hundred
    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 20_000))
    try:
        e = k0 + solver.trie_subtree(_build_trie(words), t0, k0, leaf0)
    finally:
        sys.setrecursionlimit(limit)
    return math.log(e) - s * log_phi, solver.visited


def symbolic_kernel_matrix(leaves: SymbolicSet, ifs: AffineIfs, r: float, s: float,
                           phi: AdmissibleFn) -> KernelMatrix:
    """Dense kernel ``K_IJ`` over refined leaves, diagonal ``Phi(r)**-s``.

    Leaves are sorted, so each prefix owns a contiguous block and the matrix
    is filled block by block.
    """
    log_r = math.log(r)
    log_phi = float(phi.log_at(log_r))
    words = leaves.words
    n = len(words)
    L = np.empty((n, n))
    stack = [(0, n, 0)]
    while stack:
        lo, hi, depth = stack.pop()
        if hi - lo == 1:
            L[lo, lo] = -s * log_phi
            continue
        groups = []
        start = lo
        for i in range(lo + 1, hi + 1):
            if i == hi or words[i][depth] != words[start][depth]:
                groups.append((start, i))
                start = i
        if len(groups) > 1:
            p = words[lo][:depth]
            L[lo:hi, lo:hi] = log_ker_symbolic_sv(np.log(singular_values(ifs, p)), log_r, log_phi, s)
        stack.extend((a, b, depth + 1) for a, b in groups)
    return KernelMatrix.from_log(L, labels=words, meta={"family": "symbolic_phi", "r": r, "s": s})


def capacity_symbolic(sset: SymbolicSet | SymbolicPoints, ifs: AffineIfs, r: float, s: float,
                      phi: AdmissibleFn | None = None, *, theta: float | None = None,
                      method: str = "auto", leaf_cap: int = 200_000, dense_max: int = 1500,
                      tol: float = 1e-7, max_iter: int = 200_000) -> CapacityResult:
    """Capacity of a cylinder set for the symbolic ``Phi``-kernel at scale ``r``.

    ``method="dense"`` refines to leaves with ``alpha_1(T_I) <= Phi(r)`` and
    solves the equilibrium problem on the kernel matrix; ``"tree"`` uses the
    exact ultrametric recursion; ``"auto"`` picks dense only for small leaf
    counts.
    """
    phi = as_phi(phi, theta)
    phi.check_scale(r)
    if not 0 <= s <= ifs.d:
        raise ValueError(f"s must lie in [0, {ifs.d}]")
    if method == "auto":
        method = "tree"
        try:
            leaves = refine_to_depth(sset, ifs, threshold=phi(r), leaf_cap=dense_max)
            method = "dense"
        except OverflowError:
            pass
    if method == "tree":
        le, nodes = tree_log_energy(sset, ifs, r, s, phi, node_cap=leaf_cap)
        return CapacityResult(-le, "tree", nodes)
    if method != "dense":
        raise ValueError(f"unknown method {method!r}")
    try:
        leaves = refine_to_depth(sset, ifs, threshold=phi(r), leaf_cap=leaf_cap)
    except OverflowError as exc:
        raise CapacityError(str(exc)) from exc
    K = symbolic_kernel_matrix(leaves, ifs, r, s, phi)
    eq = equilibrium_measure(K, tol=tol, max_iter=max_iter)
    return CapacityResult(eq.log_capacity, "dense", K.n, eq, {"leaves": leaves})


# -- profile capacities ---------------------------------------------------

def _as_points(points) -> np.ndarray:
    p = np.asarray(getattr(points, "points", points), dtype=float)
    return p[:, None] if p.ndim == 1 else p


def profile_kernel_matrix(dist: np.ndarray, r: float, s: float, tau: float,
                          phi: AdmissibleFn) -> KernelMatrix:
    log_r = math.log(r)
    L = log_ker_profile(dist, log_r, float(phi.log_at(log_r)), s, tau)
    L = 0.5 * (L + L.T)
    return KernelMatrix.from_log(L, meta={"family": "profile", "r": r, "s": s, "tau": tau})


def capacity_profile(points, r: float, s: float, tau: float, phi: AdmissibleFn | None = None, *,
                     theta: float | None = None, cloud_cap: int = 5000, tol: float = 1e-7,
                     max_iter: int = 200_000, dist: np.ndarray | None = None,
                     w0: np.ndarray | None = None) -> CapacityResult:
    """Capacity of a finite point cloud for the profile kernel with index ``tau``."""
    phi = as_phi(phi, theta)
    phi.check_scale(r)
    if tau <= 0 or not 0 <= s <= tau:
        raise ValueError("need tau > 0 and 0 <= s <= tau")
    if dist is None:
        p = _as_points(points)
        if len(p) > cloud_cap:
            raise CapacityError(f"cloud of {len(p)} points exceeds cap {cloud_cap}")
        dist = squareform(pdist(p)) if len(p) > 1 else np.zeros((1, 1))
    K = profile_kernel_matrix(dist, r, s, tau, phi)
    eq = equilibrium_measure(K, tol=tol, max_iter=max_iter, w0=w0)
    return CapacityResult(eq.log_capacity, "dense", K.n, eq)


# -- dimension estimation -------------------------------------------------

DEFAULT_WINDOW = 4
DEFAULT_R_GRID = 2.0 ** -np.arange(4, 15)


@dataclass
class DimensionEstimate:
    s_star: float
    mode: str
    r_grid: np.ndarray
    values: np.ndarray
    slopes: np.ndarray
    bracket: tuple
    flag: str | None = None
    trace: list = field(default_factory=list)

    @property
    def bracket_width(self) -> float:
        return self.bracket[1] - self.bracket[0]


def window_slopes(r_grid: Sequence[float], values: Sequence[float], window: int | None = None) -> np.ndarray:
    """Least-squares slopes of ``values`` against ``-log r`` on sliding windows.

    Only the finest half of the grid is used; ``window=None`` fits it in one
    piece.  Windows are clipped to that half.
    """
    r = np.asarray(r_grid, float)
    y = np.asarray(values, float)
    order = np.argsort(-r)
    x = -np.log(r[order])
    y = y[order]
    n = len(x)
    half = max(math.ceil(n / 2), 2)
    w = half if window is None else min(max(window, 2), half)
    x, y = x[n - half:], y[n - half:]
    out = []
    for a in range(half - w + 1):
        xs, ys = x[a:a + w], y[a:a + w]
        xc = xs - xs.mean()
        out.append(float(xc @ (ys - ys.mean()) / (xc @ xc)))
    return np.array(out)


def slope_statistic(slopes: np.ndarray, mode: str) -> float:
    if mode == "lower":
        return float(slopes.min())
    if mode == "upper":
        return float(slopes.max())
    raise ValueError(f"mode must be 'lower' or 'upper', got {mode!r}")


def check_r_grid(r_grid) -> np.ndarray:
    r = np.asarray(r_grid, float)
    if r.ndim != 1 or len(r) < 6:
        raise ValueError("need a geometric r grid with at least 6 scales")
    if np.any(r <= 0) or np.any(r > 1):
        raise ValueError("scales must lie in (0, 1]")
    q = np.diff(np.log(np.sort(r)))
    if np.any(q <= 0) or np.ptp(q) > 1e-6 * abs(q.mean()):
        raise ValueError("r grid must be geometric")
    return r


def capacity_dimension(curve_builder: Callable[[float], Sequence[float]], r_grid, mode: str = "upper",
                       bracket: tuple = (0.0, 1.0), tol_s: float = 1e-3,
                       window: int | None = DEFAULT_WINDOW) -> DimensionEstimate:
    """Bisect for the ``s`` where the windowed slope of the log curve vanishes.

    ``curve_builder(s)`` returns log capacities (or log cover sums) over
    ``r_grid``.  ``mode="lower"`` takes the smallest window slope (a proxy for
    the liminf), ``"upper"`` the largest.  Without a sign change the nearer
    bracket end is returned and ``flag`` says which.
    """
    r = check_r_grid(r_grid)
    lo, hi = float(bracket[0]), float(bracket[1])
    trace = []

    def g(s):
        vals = np.asarray(curve_builder(s), float)
        sl = window_slopes(r, vals, window)
        stat = slope_statistic(sl, mode)
        trace.append((s, stat))
        return stat, vals, sl

    g_lo = g(lo)
    if g_lo[0] <= 0:
        return DimensionEstimate(lo, mode, r, g_lo[1], g_lo[2], (lo, lo),
                                 None if g_lo[0] == 0 else "no_sign_change_low", trace)
    g_hi = g(hi)
    if g_hi[0] >= 0:
        return DimensionEstimate(hi, mode, r, g_hi[1], g_hi[2], (hi, hi), "no_sign_change_high", trace)
    while hi - lo > tol_s:
        mid = 0.5 * (lo + hi)
        if g(mid)[0] > 0:
            lo = mid
        else:
            hi = mid
    s_star = 0.5 * (lo + hi)
    # diagnostics describe the curve at the returned estimate
    best = g(s_star)
    return DimensionEstimate(s_star, mode, r, best[1], best[2], (lo, hi), None, trace)


def symbolic_capacity_dimension(sset: SymbolicSet | SymbolicPoints, ifs: AffineIfs, r_grid, phi: AdmissibleFn | None = None,
                                *, theta: float | None = None, mode: str = "upper",
                                tol_s: float = 1e-3, window: int | None = DEFAULT_WINDOW,
                                method: str = "tree", **kw) -> DimensionEstimate:
    phi = as_phi(phi, theta)
    r = check_r_grid(r_grid)

    def curve(s):
        return [capacity_symbolic(sset, ifs, ri, s, phi, method=method, **kw).log_capacity for ri in r]

    return capacity_dimension(curve, r, mode, (0.0, float(ifs.d)), tol_s, window)


def profile_dimension(points, tau: float, r_grid, phi: AdmissibleFn | None = None, *,
                      theta: float | None = None, mode: str = "upper", tol_s: float = 1e-3,
                      window: int | None = DEFAULT_WINDOW, tol: float = 1e-5, max_iter: int = 50_000,
                      cloud_cap: int = 5000) -> DimensionEstimate:
    """Profile dimension of a point cloud with index ``tau``; bracket ``[0, tau]``.

    When ``Phi(r) = r`` the kernel is ``r**-s`` times an ``s``-free matrix, so
    one equilibrium per scale serves every ``s``.
    """
    phi = as_phi(phi, theta)
    r = check_r_grid(r_grid)
    p = _as_points(points)
    if len(p) > cloud_cap:
        raise CapacityError(f"cloud of {len(p)} points exceeds cap {cloud_cap}")
    dist = squareform(pdist(p)) if len(p) > 1 else np.zeros((1, 1))
    warm: dict = {}
    flat = bool(np.all(phi(r) == r))
    base: dict = {}

    def solve(ri, s):
        res = capacity_profile(None, ri, s, tau, phi, tol=tol, max_iter=max_iter, dist=dist, w0=warm.get(ri))
        warm[ri] = res.equilibrium.measure
        return res.log_capacity

    def curve(s):
        if flat:
            for ri in r:
                if ri not in base:
                    base[ri] = solve(ri, 0.0)
            return [s * math.log(ri) + base[ri] for ri in r]
        return [solve(ri, s) for ri in r]

    return capacity_dimension(curve, r, mode, (0.0, float(tau)), tol_s, window)


def write_capacity_csv(path, rows: Sequence[dict]) -> None:
    """Rows carry ``family, r, s`` and a :class:`CapacityResult` under ``result``."""
    cols = ["family", "r", "s", "energy", "capacity", "gap", "iters", "converged"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for row in rows:
            res: CapacityResult = row["result"]
            eq = res.equilibrium
            wr.writerow([row["family"], f"{row['r']:.17g}", f"{row['s']:.17g}",
                         f"{res.energy:.17g}", f"{res.capacity:.17g}",
                         f"{eq.gap:.17g}" if eq else "0", eq.iterations if eq else 0,
                         eq.converged if eq else True])
