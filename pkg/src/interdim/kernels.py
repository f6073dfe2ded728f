"""Admissible scale functions and the kernel families built from them.

Every kernel has a ``log_`` twin working on logarithms; the plain versions
exponentiate.  Capacities are assembled from the log forms so that
``Phi(r)**-s`` never overflows for tiny ``Phi(r)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .symbolic import AffineIfs, Prefix, singular_values


@dataclass(frozen=True, eq=False)
class AdmissibleFn:
    """A scale function ``Phi: (0, Y) -> (0, inf)`` with ``Phi(r) <= r``.

    Variants: ``power`` (``r**(1/theta)``), ``boxlike`` (``-r/log r``),
    ``loglike`` (``r**(-log r)``), ``custom`` (monotone table, log-log
    interpolation) and ``rescaled`` (``Phi(r**a)**(1/a)`` of a base function).
    """

    variant: str
    params: dict = field(default_factory=dict)
    Y: float = 1.0
    base: "AdmissibleFn | None" = None

    @classmethod
    def power(cls, theta: float) -> "AdmissibleFn":
        if not 0 < theta <= 1:
            raise ValueError(f"theta must lie in (0, 1], got {theta}")
        return cls("power", {"theta": float(theta)}, 1.0)

    @classmethod
    def boxlike(cls) -> "AdmissibleFn":
        return cls("boxlike", {}, math.exp(-1.0))

    @classmethod
    def loglike(cls) -> "AdmissibleFn":
        return cls("loglike", {}, math.exp(-1.0))

    @classmethod
    def tabulated(cls, r: Sequence[float], phi: Sequence[float]) -> "AdmissibleFn":
        return cls.from_log_table(np.log(np.asarray(r, float)), np.log(np.asarray(phi, float)))

    @classmethod
    def from_log_table(cls, log_r, log_phi) -> "AdmissibleFn":
        log_r = np.asarray(log_r, float)
        log_phi = np.asarray(log_phi, float)
        order = np.argsort(log_r)
        log_r, log_phi = log_r[order], log_phi[order]
        if log_r.size < 2 or np.any(np.diff(log_r) <= 0):
            raise ValueError("table needs at least two distinct abscissae")
        d = np.diff(log_phi)
        if not (np.all(d >= 0) or np.all(d <= 0)):
            raise ValueError("tabulated Phi must be monotone")
        return cls("custom", {"log_r": tuple(log_r), "log_phi": tuple(log_phi)},
                   float(np.exp(log_r[-1])))

    # -- evaluation -------------------------------------------------------
    def log_at(self, log_r):
        """``log Phi(r)`` as a function of ``log r`` (vectorised)."""
        L = np.asarray(log_r, dtype=float)
        v = self.variant
        if v == "power":
            return L / self.params["theta"]
        if v == "boxlike":
            return L - np.log(-L)
        if v == "loglike":
            return -L * L
        if v == "custom":
            return np.interp(L, self.params["log_r"], self.params["log_phi"])
        if v == "rescaled":
            a = self.params["alpha"]
            return self.base.log_at(a * L) / a
        raise ValueError(f"unknown variant {v!r}")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        # exp(log) may land one ulp above r; Phi(r) <= r holds exactly
        out = np.minimum(np.exp(self.log_at(np.log(r))), r)
        return float(out) if out.ndim == 0 else out

    @property
    def theta(self) -> float | None:
        return self.params["theta"] if self.variant == "power" else None

    def admissibility(self, n: int = 400) -> dict:
        """Numerical admissibility diagnostics on a log grid inside ``(0, Y)``."""
        if self.variant == "custom":
            L = np.linspace(self.params["log_r"][0], self.params["log_r"][-1], n)
        else:
            top = math.log(self.Y) - 1e-9
            L = np.linspace(top, top - 700.0, n)
        lp = self.log_at(L)
        bounded = bool(np.all(lp <= L + 1e-12) and np.all(np.isfinite(lp)))
        dlp = np.diff(lp) * np.sign(np.diff(L))
        monotone = bool(np.all(dlp >= -1e-12) or np.all(dlp <= 1e-12))
        log_ratio = lp - L
        order = np.argsort(L)
        lr = log_ratio[order]
        vanishing = bool(np.all(np.diff(lr) >= -1e-12) and lr[0] < lr[-1] - math.log(2.0))
        return {"bounded": bounded, "monotone": monotone, "ratio_vanishes": vanishing,
                "admissible": bounded and monotone and vanishing}

    @property
    def admissible(self) -> bool:
        return self.admissibility()["admissible"]

    def check_scale(self, r: float) -> None:
        if not 0 < r < min(1.0, self.Y) + 1e-15:
            raise ValueError(f"scale r={r} outside (0, min(1, Y)) with Y={self.Y:.6g}")

    # -- serialisation ----------------------------------------------------
    def to_dict(self) -> dict:
        out = {"variant": self.variant, "params": dict(self.params), "Y": self.Y}
        if self.variant == "custom":
            out["params"] = {k: list(v) for k, v in self.params.items()}
        if self.base is not None:
            out["base"] = self.base.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "AdmissibleFn":
        v = data["variant"]
        params = data.get("params", {})
        if v == "power":
            return cls.power(params["theta"])
        if v == "boxlike":
            return cls.boxlike()
        if v == "loglike":
            return cls.loglike()
        if v == "custom":
            return cls.from_log_table(params["log_r"], params["log_phi"])
        if v == "rescaled":
            return phi_alpha(cls.from_dict(data["base"]), params["alpha"])
        raise ValueError(f"unknown variant {v!r}")


def as_phi(phi: AdmissibleFn | None = None, theta: float | None = None) -> AdmissibleFn:
    """Resolve either a ``Phi`` or a ``theta`` (meaning ``Phi(r) = r**(1/theta)``)."""
    if (phi is None) == (theta is None):
        raise ValueError("give exactly one of phi or theta")
    return phi if phi is not None else AdmissibleFn.power(theta)


def phi_alpha(phi: AdmissibleFn, alpha: float) -> AdmissibleFn:
    """``r -> Phi(r**alpha)**(1/alpha)`` on ``(0, Y**(1/alpha))``."""
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if alpha == 1:
        return phi
    return AdmissibleFn("rescaled", {"alpha": float(alpha)}, phi.Y ** (1.0 / alpha), base=phi)


def check_growth_condition(phi: AdmissibleFn, eps_grid=(0.05, 0.1, 0.25, 0.5, 1.0),
                           log_r_grid=None) -> tuple[bool, dict]:
    """Numerical check that ``r**eps * log Phi(r) -> 0`` for each ``eps``.

    Along the grid (ordered towards small ``r``) the magnitude must be
    non-increasing over the second half and end below 1% of its peak.
    Returns the verdict and a trace per ``eps``.
    """
    if log_r_grid is None:
        if phi.variant == "custom":
            lo, hi = phi.params["log_r"][0], phi.params["log_r"][-1]
            log_r_grid = np.linspace(hi, lo, 200)
        else:
            top = min(math.log(phi.Y), 0.0) - 1e-6
            log_r_grid = np.linspace(top, -700.0, 400)
    L = np.sort(np.asarray(log_r_grid, float))[::-1]
    lp = phi.log_at(L)
    trace, ok = {}, True
    for eps in eps_grid:
        mag = np.abs(np.exp(eps * L) * lp)
        tail = mag[len(mag) // 2:]
        passed = bool(np.all(np.isfinite(mag)) and np.all(np.diff(tail) <= 1e-300)
                      and mag[-1] <= 1e-2 * mag.max())
        trace[eps] = {"log_r": L, "magnitude": mag, "passed": passed}
        ok &= passed
    return ok, trace


# -- symbolic kernels -----------------------------------------------------

def _log_sv(ifs: AffineIfs, prefix) -> tuple[np.ndarray, bool]:
    if isinstance(prefix, Prefix):
        return np.log(singular_values(ifs, prefix.word)), prefix.diagonal
    return np.log(singular_values(ifs, prefix)), False


def log_ker_z_sv(log_sv: np.ndarray, log_u):
    """``log Z_u`` from log singular values: ``sum_k min(0, log u - log alpha_k)``."""
    log_u = np.asarray(log_u, float)
    return np.minimum(0.0, log_u[..., None] - log_sv).sum(axis=-1)


def ker_z(ifs: AffineIfs, prefix, r: float, diagonal: bool = False) -> float:
    """``prod_k min(1, r / alpha_k(T_prefix))``; 1 on the diagonal."""
    if r <= 0:
        raise ValueError("r must be positive")
    log_sv, diag = _log_sv(ifs, prefix)
    if diagonal or diag:
        return 1.0
    return float(np.exp(log_ker_z_sv(log_sv, math.log(r))))


def log_ker_symbolic_sv(log_sv: np.ndarray, log_r: float, log_phi: float, s: float) -> float:
    """Exact ``max_{Phi(r) <= u <= r} log(u**-s Z_u)`` via breakpoints.

    The objective is ``u**(c-s) / prod(alpha_k > u)`` on each interval
    between singular values, so it is monotone on the pieces and the maximum
    sits at an endpoint or a singular value inside ``[Phi(r), r]``.
    """
    if log_phi > log_r + 1e-12:
        raise ValueError("Phi(r) > r")
    inner = log_sv[(log_sv > log_phi) & (log_sv < log_r)]
    cand = np.concatenate(([log_phi, log_r], inner))
    vals = -s * cand + log_ker_z_sv(log_sv, cand)
    return float(vals.max())


def ker_symbolic_phi(ifs: AffineIfs, prefix, r: float, s: float, phi: AdmissibleFn,
                     diagonal: bool = False) -> float:
    """``max_{Phi(r) <= u <= r} u**-s Z_u(prefix)``."""
    return math.exp(log_ker_symbolic_phi(ifs, prefix, r, s, phi, diagonal))


def log_ker_symbolic_phi(ifs: AffineIfs, prefix, r: float, s: float, phi: AdmissibleFn,
                         diagonal: bool = False) -> float:
    phi.check_scale(r)
    log_r = math.log(r)
    log_phi = float(phi.log_at(log_r))
    if log_phi > log_r + 1e-12:
        raise ValueError(f"Phi(r) > r at r={r}")
    log_sv, diag = _log_sv(ifs, prefix)
    if diagonal or diag:
        return -s * log_phi
    return log_ker_symbolic_sv(log_sv, log_r, log_phi, s)


# -- Euclidean kernels ----------------------------------------------------

def log_ker_psi(delta, log_r: float, log_phi: float, s: float):
    """Log of the truncated kernel; ``-inf`` beyond ``r``."""
    delta = np.asarray(delta, float)
    with np.errstate(divide="ignore"):
        ld = np.log(delta)
    out = np.where(ld <= log_phi, -s * log_phi, -s * ld)
    return np.where(ld > log_r, -np.inf, out)


def ker_psi(delta, r: float, s: float, phi: AdmissibleFn):
    """``Phi(r)**-s`` for ``delta <= Phi(r)``, ``delta**-s`` up to ``r``, then 0."""
    if np.any(np.asarray(delta) < 0):
        raise ValueError("delta must be non-negative")
    phi.check_scale(r)
    log_r = math.log(r)
    out = np.exp(log_ker_psi(delta, log_r, float(phi.log_at(log_r)), s))
    return float(out) if out.ndim == 0 else out


def log_ker_profile(delta, log_r: float, log_phi: float, s: float, tau: float):
    """Log of ``max_{Phi(r) <= u <= r} u**-s min(1, (u/delta)**tau)``.

    Candidates are the two endpoints and ``delta`` clamped into the interval.
    """
    delta = np.asarray(delta, float)
    with np.errstate(divide="ignore"):
        ld = np.log(delta)
    mid = np.clip(ld, log_phi, log_r)

    def f(lu):
        return -s * lu + np.minimum(0.0, tau * (lu - ld))

    return np.maximum(np.maximum(f(log_phi), f(log_r)), f(mid))


def ker_profile(delta, r: float, s: float, tau: float, phi: AdmissibleFn):
    if tau <= 0:
        raise ValueError("tau must be positive")
    if not 0 <= s <= tau:
        raise ValueError("need 0 <= s <= tau")
    phi.check_scale(r)
    log_r = math.log(r)
    out = np.exp(log_ker_profile(delta, log_r, float(phi.log_at(log_r)), s, tau))
    return float(out) if out.ndim == 0 else out


def ker_geo(delta, u: float, tau: float):
    """``min(1, (u/delta)**tau)``; 1 at ``delta = 0``."""
    delta = np.asarray(delta, float)
    with np.errstate(divide="ignore"):
        out = np.minimum(1.0, (u / delta) ** tau)
    return float(out) if out.ndim == 0 else out
