"""Config-driven experiments comparing the cover route with the potential route."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import optimize

from . import __version__
from .capacity import (CapacityError, capacity_symbolic, profile_dimension, symbolic_capacity_dimension,
                       write_capacity_csv)
from .covering import CoverTree, PointCloud, cover_sum_lower_certificate, phi_dimension, write_cover_csv
from .fixtures import fixture
from .kernels import AdmissibleFn, as_phi, phi_alpha
from .scenarios import (coding_matrices, fbm_factor, sample_fbm, sample_grassmannians, sample_translations,
                        transversality_check, unit_grid, write_transversality_csv)
from .symbolic import SymbolicPoints, SymbolicSet, parse_word, refine_to_depth, validate_ifs

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCENARIOS = ("capdim", "interdim", "compare_selfaffine", "compare_projection", "compare_fbm", "transversality")


class ConfigError(ValueError):
    """Unreadable or inconsistent experiment configuration."""


class AssertionFailure(RuntimeError):
    pass


# -- grids -----------------------------------------------------------------

def phi_inverse(phi: AdmissibleFn, target: float) -> float:
    """Largest ``r <= min(1, Y)`` with ``Phi(r) = target`` (by bisection in ``log r``)."""
    top = math.log(min(1.0, phi.Y)) - 1e-12
    f = lambda L: float(phi.log_at(L)) - math.log(target)  # noqa: E731
    if f(top) <= 0:
        return math.exp(top)
    lo = top - 1.0
    while f(lo) > 0:
        lo = top - 2 * (top - lo)
    return math.exp(optimize.brentq(f, lo, top, xtol=1e-14))


def grid_from_spec(spec, phi: AdmissibleFn | None = None) -> np.ndarray:
    """Scales from a list, ``{base, from, to, step}`` (``base**-k``) or
    ``{top, phi_floor, n}`` (geometric from ``top`` down to where ``Phi``
    reaches ``phi_floor``)."""
    if isinstance(spec, (list, tuple, np.ndarray)):
        return np.asarray(spec, float)
    if not isinstance(spec, dict):
        raise ConfigError(f"bad grid spec {spec!r}")
    if "phi_floor" in spec:
        if phi is None:
            raise ConfigError("phi_floor grids need a Phi")
        rmin = phi_inverse(phi, float(spec["phi_floor"]))
        return np.geomspace(float(spec.get("top", 0.5)), rmin, int(spec.get("n", 8)))
    base = float(spec.get("base", 2.0))
    k = np.arange(float(spec["from"]), float(spec["to"]) + 1e-9, float(spec.get("step", 1.0)))
    return base ** -k


# -- configuration ---------------------------------------------------------

@dataclass
class ExperimentConfig:
    scenario: str
    seed: int = 0
    fixture: str | None = None
    ifs: dict | None = None
    words: list | None = None
    points: list | None = None
    phi: dict | None = None
    theta: float | None = None
    tau: float | None = None
    alpha: float = 0.5
    m: int = 1
    mode: str = "upper"
    window: int | None = 4
    tol_s: float = 1e-3
    r_grid: object = field(default_factory=lambda: {"base": 2, "from": 4, "to": 14})
    cover_r_grid: object | None = None
    depth: int = 10
    rho: float = 1.0
    samples: int = 20
    include_zero: bool = False
    slack: float = 0.1
    genericity_threshold: float = 0.8
    n_points: int = 2000
    transversality: dict | None = None
    expect: dict | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            cfg = cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
            data = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        return cls.from_dict(data)

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}")
        if self.mode not in ("lower", "upper"):
            raise ConfigError("mode must be lower or upper")
        if self.theta is not None and not 0 < self.theta <= 1:
            raise ConfigError("theta must lie in (0, 1]")
        if self.phi is not None and self.theta is not None:
            raise ConfigError("give phi or theta, not both")
        if self.samples < 1 or self.slack < 0:
            raise ConfigError("need samples >= 1 and slack >= 0")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        needs_ifs = self.scenario in ("capdim", "interdim", "compare_selfaffine", "compare_projection")
        if needs_ifs and self.fixture is None and self.ifs is None:
            raise ConfigError("this scenario needs a fixture or an ifs")
        if self.scenario == "transversality" and not self.transversality:
            raise ConfigError("transversality scenario needs a [transversality] table")
        try:
            self.phi_fn()
            grid_from_spec(self.r_grid, self.phi_fn())
            if self.fixture is not None or self.ifs is not None:
                self.system()
        except ConfigError:
            raise
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    def phi_fn(self) -> AdmissibleFn:
        if self.phi is not None:
            return AdmissibleFn.from_dict(self.phi)
        return as_phi(theta=1.0 if self.theta is None else self.theta)

    def system(self):
        """``(ifs, translations, symbolic set)``."""
        if self.fixture is not None:
            ifs, a, sset, _ = fixture(self.fixture)
        else:
            ifs = validate_ifs(self.ifs["matrices"])
            a = np.asarray(self.ifs.get("translations", np.zeros((ifs.m, ifs.d))), float).reshape(ifs.m, ifs.d)
            sset = SymbolicSet.full_shift()
        if self.words is not None and self.points is not None:
            raise ConfigError("give words or points, not both")
        if self.words is not None:
            sset = SymbolicSet(tuple(parse_word(w) for w in self.words))
        if self.points is not None:
            sset = SymbolicPoints.parse(self.points)
        return ifs, a, sset

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


# -- comparison ------------------------------------------------------------

@dataclass
class ComparisonReport:
    potential: float
    cover: np.ndarray
    labels: list
    slack: float
    threshold: float

    @property
    def gaps(self) -> np.ndarray:
        return self.cover - self.potential

    @property
    def universal_ok(self) -> np.ndarray:
        return self.gaps <= self.slack

    @property
    def generic_ok(self) -> np.ndarray:
        return np.abs(self.gaps) <= self.slack

    @property
    def universal_pass(self) -> bool:
        return bool(self.universal_ok.all())

    @property
    def genericity_fraction(self) -> float:
        return float(self.generic_ok.mean())

    @property
    def genericity_pass(self) -> bool:
        return self.genericity_fraction >= self.threshold

    @property
    def median_abs_gap(self) -> float:
        return float(np.median(np.abs(self.gaps)))

    def rows(self) -> list[dict]:
        return [{"sample": lab, "cover": c, "potential": self.potential, "gap": g,
                 "universal_ok": bool(u), "generic_ok": bool(k)}
                for lab, c, g, u, k in zip(self.labels, self.cover, self.gaps, self.universal_ok, self.generic_ok)]

    def summary(self) -> list[str]:
        return [
            f"potential route estimate: {self.potential:.6f}",
            f"cover estimates: min {self.cover.min():.6f} median {np.median(self.cover):.6f} max {self.cover.max():.6f}",
            f"universal bound cover <= potential + {self.slack}: "
            f"{int(self.universal_ok.sum())}/{len(self.cover)} {'PASS' if self.universal_pass else 'FAIL'}",
            f"genericity |gap| <= {self.slack}: {self.genericity_fraction:.0%} "
            f"(threshold {self.threshold:.0%}) {'PASS' if self.genericity_pass else 'below threshold'}",
            f"median |gap|: {self.median_abs_gap:.6f}",
        ]


def compare_routes(cover_estimates: Sequence[float], potential: float, slack: float = 0.1,
                   threshold: float = 0.8, labels: Sequence | None = None) -> ComparisonReport:
    """Universal rows (``cover <= potential + slack`` for every sample) and the
    fraction of samples with ``|cover - potential| <= slack``."""
    cov = np.asarray(cover_estimates, float)
    labels = list(range(len(cov))) if labels is None else list(labels)
    return ComparisonReport(float(potential), cov, labels, slack, threshold)


def compare_identity(cloud, phi: AdmissibleFn, r_grid, **kw) -> ComparisonReport:
    """Cover route against itself; the gap is zero by construction."""
    est = phi_dimension(cloud, phi, r_grid=r_grid, **kw).s_star
    return compare_routes([est], est, slack=0.0, threshold=1.0)


# -- scenario runners ------------------------------------------------------

def _cover_grid(cfg: ExperimentConfig, phi: AdmissibleFn) -> np.ndarray:
    spec = cfg.cover_r_grid if cfg.cover_r_grid is not None else {"top": 0.5, "phi_floor": 2.0 ** -16, "n": 8}
    return grid_from_spec(spec, phi)


def _dim_kw(cfg: ExperimentConfig) -> dict:
    return {"mode": cfg.mode, "tol_s": cfg.tol_s, "window": cfg.window}


def run_capdim(cfg: ExperimentConfig):
    ifs, _, sset, = cfg.system()
    phi = cfg.phi_fn()
    r = grid_from_spec(cfg.r_grid, phi)
    est = symbolic_capacity_dimension(sset, ifs, r, phi, **_dim_kw(cfg))
    rows = [{"family": "symbolic_phi", "r": ri, "s": est.s_star,
             "result": capacity_symbolic(sset, ifs, ri, est.s_star, phi, method="tree")} for ri in r]
    lines = [f"capacity dimension ({cfg.mode}): {est.s_star:.6f}",
             f"bracket: [{est.bracket[0]:.6f}, {est.bracket[1]:.6f}] flag: {est.flag}"]
    return est.s_star, rows, lines, "capacity"


def _selfaffine_cloud_matrices(cfg: ExperimentConfig):
    ifs, a, sset = cfg.system()
    leaves = refine_to_depth(sset, ifs, depth=cfg.depth)
    return ifs, a, sset, coding_matrices(leaves, ifs)


def run_interdim(cfg: ExperimentConfig):
    ifs, a, _, M = _selfaffine_cloud_matrices(cfg)
    phi = cfg.phi_fn()
    cloud = PointCloud(M @ a.ravel())
    r = _cover_grid(cfg, phi)
    est = phi_dimension(cloud, phi, r_grid=r, **_dim_kw(cfg))
    w = np.full(cloud.n, 1.0 / cloud.n)
    rows = []
    for ri in r:
        tree = CoverTree(cloud, ri, phi(ri))
        res = tree.solve(est.s_star)
        rows.append({"r": ri, "s": est.s_star, "upper_bound": res.upper_bound,
                     "lower_certificate": cover_sum_lower_certificate(cloud, w, ri, est.s_star, phi),
                     "single_scale_floor": tree.single_scale_floor(est.s_star, cloud),
                     "cover_size": res.cover_size})
    lines = [f"cover dimension ({cfg.mode}): {est.s_star:.6f}", f"flag: {est.flag}"]
    return est.s_star, rows, lines, "cover"


def run_compare_selfaffine(cfg: ExperimentConfig):
    ifs, _, sset, M = _selfaffine_cloud_matrices(cfg)
    if not ifs.strict_half:
        raise ConfigError("compare_selfaffine needs every ||T_j|| < 1/2")
    phi = cfg.phi_fn()
    potential = symbolic_capacity_dimension(sset, ifs, grid_from_spec(cfg.r_grid, phi), phi, **_dim_kw(cfg)).s_star
    A = sample_translations(cfg.samples, cfg.rho, ifs.d, ifs.m, cfg.seed)
    labels = [f"a{i}" for i in range(len(A))]
    if cfg.include_zero:
        A = np.vstack([A, np.zeros(ifs.d * ifs.m)])
        labels.append("a=0")
    cr = _cover_grid(cfg, phi)
    cover = [phi_dimension(M @ a, phi, r_grid=cr, **_dim_kw(cfg)).s_star for a in A]
    return compare_routes(cover, potential, cfg.slack, cfg.genericity_threshold, labels)


def run_compare_projection(cfg: ExperimentConfig):
    ifs, a, _, M = _selfaffine_cloud_matrices(cfg)
    phi = cfg.phi_fn()
    pts = M @ a.ravel()
    tau = float(cfg.tau if cfg.tau is not None else cfg.m)
    r = grid_from_spec(cfg.r_grid, phi)
    potential = profile_dimension(pts, tau, r, phi, **_dim_kw(cfg)).s_star
    frames = sample_grassmannians(cfg.samples, ifs.d, cfg.m, cfg.seed)
    cr = grid_from_spec(cfg.cover_r_grid, phi) if cfg.cover_r_grid is not None else r
    cover = [phi_dimension(f.coordinates(pts), phi, r_grid=cr, **_dim_kw(cfg)).s_star for f in frames]
    return compare_routes(cover, potential, cfg.slack, cfg.genericity_threshold, [f"V{i}" for i in range(len(frames))])


def run_compare_fbm(cfg: ExperimentConfig):
    phi = cfg.phi_fn()
    E = unit_grid(cfg.n_points)
    pa = phi_alpha(phi, cfg.alpha)
    r = grid_from_spec(cfg.r_grid, pa)
    potential = profile_dimension(E, cfg.alpha * cfg.m, r, pa, **_dim_kw(cfg)).s_star / cfg.alpha
    factor = fbm_factor(E, cfg.alpha)
    cr = grid_from_spec(cfg.cover_r_grid, phi) if cfg.cover_r_grid is not None else r
    cover = [phi_dimension(sample_fbm(E, cfg.alpha, cfg.m, cfg.seed + k, factor=factor).images, phi,
                           r_grid=cr, **_dim_kw(cfg)).s_star for k in range(cfg.samples)]
    return compare_routes(cover, potential, cfg.slack, cfg.genericity_threshold,
                          [f"seed{cfg.seed + k}" for k in range(cfg.samples)])


def run_transversality(cfg: ExperimentConfig):
    t = dict(cfg.transversality)
    kind = t.get("kind")
    setting = {k: v for k, v in t.items() if k not in ("r_grid", "n_samples")}
    if kind == "selfaffine":
        ifs, _, _ = cfg.system()
        setting["ifs"] = ifs
        setting["x"] = parse_word(str(t["x"]))
        setting["y"] = parse_word(str(t["y"]))
    r = grid_from_spec(t.get("r_grid", np.geomspace(0.05, 0.8, 8)))
    rows = transversality_check(setting, r, int(t.get("n_samples", 10_000)), cfg.seed)
    ratio = max(row.ratio for row in rows)
    lines = [f"setting: {kind}", f"max ratio p_hat/kernel over the grid: {ratio:.6f}"]
    return ratio, rows, lines, "transversality"


# -- output ------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _write_rows(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(list(rows[0]))
        for row in rows:
            wr.writerow([_fmt(v) for v in row.values()])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _check_expect(cfg: ExperimentConfig, value: float) -> list[str]:
    if not cfg.expect:
        return []
    target, tol = float(cfg.expect["value"]), float(cfg.expect.get("tol", 0.05))
    ok = abs(value - target) <= tol
    line = f"expect {target} +- {tol}: got {value:.6f} {'PASS' if ok else 'FAIL'}"
    if not ok:
        raise AssertionFailure(line)
    return [line]


def run(cfg: ExperimentConfig, out_dir) -> int:
    """Run one experiment and write ``results.csv``, ``manifest.json`` and
    ``summary.txt``.  Returns 0, or 1 when a configured assertion fails."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    status = 0
    lines = [f"scenario: {cfg.scenario}", f"seed: {cfg.seed}"]
    if cfg.scenario.startswith("compare_"):
        runner = {"compare_selfaffine": run_compare_selfaffine, "compare_projection": run_compare_projection,
                  "compare_fbm": run_compare_fbm}[cfg.scenario]
        report = runner(cfg)
        _write_rows(out / "results.csv", report.rows())
        lines += report.summary()
        if not report.universal_pass:
            status = 1
        try:
            lines += _check_expect(cfg, report.potential)
        except AssertionFailure as exc:
            lines.append(str(exc))
            status = 1
    else:
        runner = {"capdim": run_capdim, "interdim": run_interdim, "transversality": run_transversality}[cfg.scenario]
        value, rows, extra, kind = runner(cfg)
        if kind == "capacity":
            write_capacity_csv(out / "results.csv", rows)
        elif kind == "cover":
            write_cover_csv(out / "results.csv", rows)
        else:
            write_transversality_csv(out / "results.csv", rows)
        lines += extra
        try:
            lines += _check_expect(cfg, value)
        except AssertionFailure as exc:
            lines.append(str(exc))
            status = 1
    lines.append(f"status: {'ok' if status == 0 else 'assertion failed'}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    manifest = {
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "versions": {"interdim": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": __import__("scipy").__version__},
        "outputs": {name: _sha256(out / name) for name in ("results.csv", "summary.txt")},
        "exit_status": status,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_fmt) + "\n")
    return status


RESOURCE_ERRORS = (CapacityError, OverflowError, MemoryError)
