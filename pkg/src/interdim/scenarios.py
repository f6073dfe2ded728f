"""Random translations, random subspaces, fractional Brownian fields and
Monte Carlo transversality checks."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg, stats

from .covering import PointCloud
from .kernels import ker_z
from .symbolic import AffineIfs, SymbolicSet, coding_matrix, common_prefix, refine_to_depth


@dataclass(frozen=True)
class RngStream:
    """Counter-based (Philox) stream addressed by ``(seed, stream)``.

    ``generator(sub)`` gives independent child generators, so one quantity
    (directions, radii, ...) never shifts another when sample counts change.
    """

    seed: int
    stream: int = 0

    def generator(self, sub: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream, sub))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, stream: int) -> "RngStream":
        return RngStream(self.seed, stream)


def _stream(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    return RngStream(int(rng))


# -- translations ---------------------------------------------------------

def sample_translations(n: int, rho: float, d: int, m: int, rng) -> np.ndarray:
    """``n`` points uniform in the closed ball of radius ``rho`` in ``R^{dm}``."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    st = _stream(rng)
    k = d * m
    g = st.generator(0).standard_normal((n, k))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    rad = rho * st.generator(1).random(n) ** (1.0 / k)
    return g * rad[:, None]


def sample_translation(rho: float, d: int, m: int, rng) -> np.ndarray:
    return sample_translations(1, rho, d, m, rng)[0]


def coding_matrices(leaves: SymbolicSet, ifs: AffineIfs) -> np.ndarray:
    """Stacked ``(n, d, md)`` matrices with ``point_i = M_i @ a``."""
    return np.stack([coding_matrix(ifs, w) for w in leaves])


def project_selfaffine(sset: SymbolicSet, ifs: AffineIfs, a, *, depth: int | None = None,
                       threshold: float | None = None, leaf_cap: int = 200_000,
                       matrices: np.ndarray | None = None) -> PointCloud:
    """One coding point per refined leaf, with the truncation bound attached."""
    leaves = refine_to_depth(sset, ifs, depth=depth, threshold=threshold, leaf_cap=leaf_cap)
    M = coding_matrices(leaves, ifs) if matrices is None else matrices
    a = np.asarray(a, dtype=float).ravel()
    n_min = min(len(w) for w in leaves)
    ap = ifs.alpha_plus
    sup_a = float(np.linalg.norm(a.reshape(ifs.m, ifs.d), axis=1).max())
    return PointCloud(M @ a, error_bound=ap ** n_min * sup_a / (1 - ap))


# -- projections ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProjectionFrame:
    basis: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.basis, dtype=float)
        if V.ndim != 2 or not 1 <= V.shape[1] < V.shape[0]:
            raise ValueError("basis must be d x m with 1 <= m < d")
        if not np.allclose(V.T @ V, np.eye(V.shape[1]), atol=1e-12):
            raise ValueError("basis columns must be orthonormal")
        object.__setattr__(self, "basis", V)

    @property
    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    @property
    def d(self) -> int:
        return self.basis.shape[0]

    @property
    def m(self) -> int:
        return self.basis.shape[1]

    def coordinates(self, points) -> np.ndarray:
        """Coordinates of ``P_V x`` in the orthonormal basis (an isometric copy)."""
        return np.atleast_2d(np.asarray(points, float)) @ self.basis

    def project(self, points) -> np.ndarray:
        return np.atleast_2d(np.asarray(points, float)) @ self.projector


def sample_grassmannian(d: int, m: int, rng, max_tries: int = 8) -> ProjectionFrame:
    """Orthonormalised Gaussian frame, i.e. a draw from the invariant measure."""
    if not 1 <= m < d:
        raise ValueError("need 1 <= m < d")
    gen = rng if isinstance(rng, np.random.Generator) else _stream(rng).generator()
    for _ in range(max_tries):
        g = gen.standard_normal((d, m))
        q, rr = np.linalg.qr(g)
        diag = np.diag(rr)
        if np.all(np.abs(diag) > 1e-12):
            return ProjectionFrame(q * np.sign(diag))
    raise RuntimeError("degenerate Gaussian frames")


def sample_grassmannians(n: int, d: int, m: int, rng) -> list[ProjectionFrame]:
    gen = _stream(rng).generator()
    return [sample_grassmannian(d, m, gen) for _ in range(n)]


# -- fractional Brownian fields ---------------------------------------------

@dataclass(frozen=True, eq=False)
class FbmSample:
    points: np.ndarray
    images: np.ndarray
    alpha: float
    seed: int | None = None

    def to_csv(self, path) -> None:
        d, m = self.points.shape[1], self.images.shape[1]
        header = ",".join([f"x{i}" for i in range(d)] + [f"b{i}" for i in range(m)])
        np.savetxt(path, np.hstack([self.points, self.images]), delimiter=",", header=header,
                   comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path, alpha: float, seed: int | None = None) -> "FbmSample":
        with open(path) as fh:
            cols = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        d = sum(c.startswith("x") for c in cols)
        return cls(data[:, :d], data[:, d:], alpha, seed)


def fbm_covariance(points, alpha: float) -> np.ndarray:
    p = np.asarray(points, float)
    p = p[:, None] if p.ndim == 1 else p
    nrm = np.linalg.norm(p, axis=1) ** (2 * alpha)
    diff = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1) ** (2 * alpha)
    return 0.5 * (nrm[:, None] + nrm[None, :] - diff)


def fbm_factor(points, alpha: float, jitters: Sequence[float] = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8)):
    """Lower Cholesky factor of the covariance on the points away from 0.

    Returns ``(L, keep)`` where ``keep`` masks the points that are not the
    origin (those are pinned to 0).  The diagonal jitter, relative to the
    largest variance, is raised step by step if the factorisation fails.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    p = np.asarray(points, float)
    p = p[:, None] if p.ndim == 1 else p
    keep = np.linalg.norm(p, axis=1) > 0
    C = fbm_covariance(p[keep], alpha)
    scale = float(np.max(np.diag(C))) if len(C) else 1.0
    for jit in jitters:
        try:
            L = linalg.cholesky(C + jit * scale * np.eye(len(C)), lower=True, check_finite=False)
            return L, keep
        except linalg.LinAlgError:
            continue
    raise linalg.LinAlgError("covariance factorisation failed at maximal jitter")


def sample_fbm(points, alpha: float, m: int, rng, *, max_points: int = 4000, factor=None) -> FbmSample:
    """``m`` independent index-``alpha`` fractional Brownian coordinates on the points."""
    p = np.asarray(points, float)
    p = p[:, None] if p.ndim == 1 else p
    if len(p) > max_points:
        raise MemoryError(f"{len(p)} points exceed the factorisation budget {max_points}")
    if len(np.unique(p, axis=0)) != len(p):
        raise ValueError("points must be distinct")
    L, keep = fbm_factor(p, alpha) if factor is None else factor
    st = _stream(rng)
    z = st.generator().standard_normal((L.shape[0], m))
    images = np.zeros((len(p), m))
    images[keep] = L @ z
    return FbmSample(p, images, alpha, st.seed)


def unit_grid(n: int) -> np.ndarray:
    """``n`` equispaced points on ``[0, 1]`` as a column."""
    return np.linspace(0.0, 1.0, n)[:, None]


def fbm_increment_probability(delta: float, r: float, alpha: float, m: int) -> float:
    """Exact ``P(|B(x) - B(y)| <= r)`` for ``|x - y| = delta``."""
    sigma = delta ** alpha
    return float(stats.chi2.cdf((r / sigma) ** 2, m))


def levy_modulus_ratio(points, path, alpha: float, max_sep: float = 0.01) -> float:
    """``max |B(x)-B(y)| / (|x-y|^alpha sqrt(log(1/|x-y|)))`` over close pairs (1-D)."""
    x = np.asarray(points, float).ravel()
    b = np.asarray(path, float).reshape(len(x), -1)
    order = np.argsort(x)
    x, b = x[order], b[order]
    best = 0.0
    for k in range(1, len(x)):
        h = x[k:] - x[:-k]
        ok = (h <= max_sep) & (h > 0)
        if not ok.any():
            break
        inc = np.linalg.norm(b[k:] - b[:-k], axis=1)[ok]
        h = h[ok]
        best = max(best, float(np.max(inc / (h ** alpha * np.sqrt(np.log(1.0 / h))))))
    return best


# -- transversality ---------------------------------------------------------

@dataclass
class TransversalityRow:
    setting: str
    r: float
    p_hat: float
    kernel: float
    ratio: float
    n_samples: int
    seed: int


def _distances(setting: dict, n: int, st: RngStream) -> tuple[np.ndarray, callable]:
    kind = setting["kind"]
    if kind == "selfaffine":
        ifs: AffineIfs = setting["ifs"]
        if not ifs.strict_half:
            raise ValueError("self-affine transversality needs every ||T_j|| < 1/2")
        x, y = tuple(setting["x"]), tuple(setting["y"])
        if x == y:
            raise ValueError("x and y must differ")
        D = coding_matrix(ifs, x) - coding_matrix(ifs, y)
        a = sample_translations(n, setting.get("rho", 1.0), ifs.d, ifs.m, st)
        dist = np.linalg.norm(a @ D.T, axis=1)
        prefix = common_prefix(x, y)
        return dist, lambda r: ker_z(ifs, prefix, r)
    if kind == "grassmann":
        x, y = np.asarray(setting["x"], float), np.asarray(setting["y"], float)
        d, m = len(x), int(setting["m"])
        gen = st.generator()
        frames = [sample_grassmannian(d, m, gen) for _ in range(n)]
        dist = np.array([np.linalg.norm(f.coordinates(x - y)) for f in frames])
        delta = float(np.linalg.norm(x - y))
        return dist, lambda r: min(1.0, (r / delta) ** m)
    if kind == "fbm":
        x, y = np.atleast_1d(np.asarray(setting["x"], float)), np.atleast_1d(np.asarray(setting["y"], float))
        alpha, m = float(setting["alpha"]), int(setting["m"])
        pts = np.vstack([x, y])
        L, keep = fbm_factor(pts, alpha)
        z = st.generator().standard_normal((n, L.shape[0], m))
        img = np.zeros((n, 2, m))
        img[:, keep, :] = np.einsum("ij,njk->nik", L, z)
        dist = np.linalg.norm(img[:, 0] - img[:, 1], axis=1)
        delta = float(np.linalg.norm(x - y))
        return dist, lambda r: min(1.0, (r ** (1 / alpha) / delta) ** (alpha * m))
    raise ValueError(f"unknown setting {kind!r}")


def transversality_check(setting: dict, r_grid, n_samples: int, rng) -> list[TransversalityRow]:
    """Empirical ``P(|image(x) - image(y)| <= r)`` against the kernel bound.

    ``setting`` is a dict with ``kind`` in ``selfaffine`` (``ifs, rho, x, y``
    with words ``x, y``), ``grassmann`` (``m, x, y``) or ``fbm``
    (``alpha, m, x, y``).
    """
    st = _stream(rng)
    dist, kernel = _distances(setting, n_samples, st)
    if setting["kind"] != "selfaffine" and np.allclose(setting["x"], setting["y"]):
        raise ValueError("x and y must differ")
    rows = []
    for r in np.asarray(r_grid, float):
        p = float(np.mean(dist <= r))
        k = float(kernel(r))
        rows.append(TransversalityRow(setting["kind"], float(r), p, k, p / k, n_samples, st.seed))
    return rows


def write_transversality_csv(path, rows: Sequence[TransversalityRow]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["setting", "r", "p_hat", "kernel", "ratio", "n_samples", "seed"])
        for row in rows:
            wr.writerow([row.setting, f"{row.r:.17g}", f"{row.p_hat:.17g}", f"{row.kernel:.17g}",
                         f"{row.ratio:.17g}", row.n_samples, row.seed])
