import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from interdim.capacity import (CapacityError, KernelMatrix, capacity_dimension, capacity_profile,
                               capacity_symbolic, check_r_grid, equilibrium_measure, profile_dimension,
                               symbolic_capacity_dimension, symbolic_kernel_matrix, window_slopes,
                               write_capacity_csv)
from interdim.kernels import AdmissibleFn
from interdim.symbolic import SymbolicPoints, SymbolicSet, refine_to_depth, validate_ifs

from conftest import random_ifs

LOG23 = math.log(2) / math.log(3)


def random_psd_kernel(rng, n):
    """Positive entries and positive semidefinite: exp(-|x-y|^p) on random points."""
    x = rng.normal(size=(n, rng.integers(1, 4)))
    d = np.linalg.norm(x[:, None] - x[None], axis=-1)
    p = rng.uniform(0.3, 2.0)
    K = np.exp(-rng.uniform(0.2, 3.0) * d ** p)
    return 0.5 * (K + K.T)


def test_two_by_two_example():
    res = equilibrium_measure(np.array([[1, 0.5], [0.5, 1]]))
    assert np.allclose(res.measure, [0.5, 0.5])
    assert res.energy == pytest.approx(0.75)
    assert res.capacity == pytest.approx(4 / 3)
    # grid oracle on the simplex
    w = np.arange(0, 1.0005, 1e-3)
    e = w ** 2 + 2 * 0.5 * w * (1 - w) + (1 - w) ** 2
    assert res.energy == pytest.approx(e.min(), abs=1e-6)


def test_single_and_constant():
    res = equilibrium_measure(np.array([[2.5]]))
    assert res.capacity == pytest.approx(1 / 2.5) and res.measure[0] == 1.0
    res = equilibrium_measure(np.full((4, 4), 3.0))
    assert res.energy == pytest.approx(3.0) and res.converged


def test_kernel_matrix_validation():
    with pytest.raises(ValueError):
        KernelMatrix(np.array([[1.0, 0.2], [0.3, 1.0]]))
    with pytest.raises(ValueError):
        KernelMatrix(np.array([[1.0, 0.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        KernelMatrix(np.ones((2, 3)))
    with pytest.raises(ValueError):
        KernelMatrix(np.array([[np.inf]]))


def test_max_iter_returns_best_iterate():
    rng = np.random.default_rng(3)
    res = equilibrium_measure(random_psd_kernel(rng, 40), tol=1e-14, max_iter=3)
    assert not res.converged and res.iterations == 3
    assert res.measure.sum() == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 40))
def test_equilibrium_certificate(seed, n):
    K = random_psd_kernel(np.random.default_rng(seed), n)
    tol = 1e-7
    res = equilibrium_measure(K, tol=tol)
    w = res.measure
    assert res.converged
    assert abs(w.sum() - 1) <= 1e-12 and np.all(w >= 0)
    assert res.energy == pytest.approx(w @ K @ w, rel=1e-12)
    assert res.capacity * res.energy == pytest.approx(1.0)
    pot = K @ w
    assert pot.min() >= (1 - 10 * tol) * res.energy
    assert pot[w > 0].max() <= (1 + 10 * tol) * res.energy


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 3))
def test_small_matches_grid(seed, n):
    K = random_psd_kernel(np.random.default_rng(seed), n)
    res = equilibrium_measure(K)
    g = np.arange(0, 1.0005, 1e-3)
    if n == 2:
        W = np.stack([g, 1 - g], axis=1)
    else:
        a, b = np.meshgrid(g, g)
        keep = a + b <= 1 + 1e-12
        W = np.stack([a[keep], b[keep], np.clip(1 - a[keep] - b[keep], 0, None)], axis=1)
    e = np.einsum("ij,jk,ik->i", W, K, W).min()
    assert abs(res.energy - e) <= 1e-5


def test_log_scale_kernel():
    K = KernelMatrix.from_log(np.log(np.array([[1.0, 0.5], [0.5, 1.0]])) + 800.0)
    res = equilibrium_measure(K)
    assert res.log_energy == pytest.approx(math.log(0.75) + 800.0)
    assert res.log_capacity == pytest.approx(-math.log(0.75) - 800.0)


def test_singleton_symbolic(cantor):
    ifs = cantor[0]
    phi = AdmissibleFn.power(0.5)
    for r in (0.1, 0.01):
        for s in (0.0, 0.4, 1.0):
            res = capacity_symbolic(SymbolicPoints.parse(["12|1"]), ifs, r, s, phi)
            assert res.log_capacity == pytest.approx(s * math.log(phi(r)))
    est = symbolic_capacity_dimension(SymbolicPoints.parse(["1|2"]), ifs, 2.0 ** -np.arange(4, 15), theta=0.5)
    assert est.s_star == pytest.approx(0.0, abs=1e-3)


@pytest.mark.parametrize("theta", [1.0, 0.5])
def test_capacity_bounds_at_s_extremes(cantor, product_cantor, theta):
    for ifs, _, E, _ in (cantor, product_cantor):
        for r in (0.1, 0.003):
            assert capacity_symbolic(E, ifs, r, 0.0, theta=theta).capacity >= 1 - 1e-12
            assert capacity_symbolic(E, ifs, r, float(ifs.d), theta=theta).capacity <= 1 + 1e-12


def test_tree_matches_dense():
    rng = np.random.default_rng(11)
    for trial in range(6):
        ifs = validate_ifs(random_ifs(rng, 2, 2, top=0.45))
        E = SymbolicSet(((1,), (2, 1), (2, 2, 2)))
        phi = [AdmissibleFn.power(0.6), AdmissibleFn.boxlike(), AdmissibleFn.loglike()][trial % 3]
        r = 0.12
        for s in (0.0, 0.7, 1.6):
            tree = capacity_symbolic(E, ifs, r, s, phi, method="tree")
            dense = capacity_symbolic(E, ifs, r, s, phi, method="dense", tol=1e-10)
            assert tree.log_capacity == pytest.approx(dense.log_capacity, abs=1e-8)


def test_tree_matches_dense_on_points(cantor):
    ifs = cantor[0]
    pts = SymbolicPoints.parse(["12|1", "2|2", "1|12", "221|1"])
    for s in (0.2, 0.9):
        a = capacity_symbolic(pts, ifs, 0.01, s, theta=0.5, method="tree")
        b = capacity_symbolic(pts, ifs, 0.01, s, theta=0.5, method="dense", tol=1e-12)
        assert a.log_capacity == pytest.approx(b.log_capacity, abs=1e-9)


def test_dense_kernel_matches_pairwise(cantor):
    from interdim.kernels import ker_symbolic_phi
    from interdim.symbolic import common_prefix
    ifs = cantor[0]
    phi = AdmissibleFn.power(0.5)
    leaves = refine_to_depth(SymbolicSet.full_shift(), ifs, threshold=phi(0.05))
    K = symbolic_kernel_matrix(leaves, ifs, 0.05, 0.6, phi)
    full = K.values * math.exp(K.log_scale)
    for i in range(0, len(leaves), 7):
        for j in range(0, len(leaves), 5):
            ref = ker_symbolic_phi(ifs, common_prefix(leaves.words[i], leaves.words[j]), 0.05, 0.6, phi)
            assert full[i, j] == pytest.approx(ref, rel=1e-12)


def test_leaf_cap(cantor):
    ifs, _, E, _ = cantor
    with pytest.raises(CapacityError):
        capacity_symbolic(E, ifs, 2.0 ** -10, 0.5, theta=0.25, method="dense", leaf_cap=1000)
    with pytest.raises(CapacityError):
        capacity_symbolic(E, validate_ifs(random_ifs(np.random.default_rng(0), 2, 3)), 1e-6, 0.5,
                          theta=0.1, method="tree", leaf_cap=50)


def test_profile_examples():
    phi = AdmissibleFn.power(0.5)
    r, s, tau = 0.05, 0.6, 1.0
    assert capacity_profile([[0.3, 0.1]], r, s, tau, phi).capacity == pytest.approx(phi(r) ** s)
    far = capacity_profile([[0.0], [10.0]], r, s, tau, phi)
    diag = phi(r) ** -s
    off = r ** -s * (r / 10.0) ** tau
    assert far.capacity == pytest.approx(2 / (diag + off))
    assert far.capacity == pytest.approx(2 * phi(r) ** s, rel=1e-2)
    pts = np.random.default_rng(0).uniform(size=(50, 2))
    assert capacity_profile(pts, r, 0.0, tau, phi).capacity >= 1 - 1e-9
    with pytest.raises(CapacityError):
        capacity_profile(np.zeros((20, 1)), r, s, tau, phi, cloud_cap=10)


def test_capacity_sandwich(cantor, dust):
    for ifs, _, E, _ in (cantor, dust):
        for phi in (AdmissibleFn.power(0.5), AdmissibleFn.boxlike()):
            for r in (0.2, 0.01, 1e-4):
                caps = {s: capacity_symbolic(E, ifs, r, s, phi).log_capacity for s in (0.0, 0.3, 0.6, 1.0)}
                for t in caps:
                    for s in caps:
                        if t <= s:
                            diff = caps[s] - caps[t]
                            assert diff >= (s - t) * math.log(phi(r)) - 1e-9
                            assert diff <= (s - t) * math.log(r) + 1e-9


def test_log_capacity_decreasing_in_s(product_cantor):
    ifs, _, E, _ = product_cantor
    for r in (0.1, 1e-3):
        v = [capacity_symbolic(E, ifs, r, s, theta=0.5).log_capacity / -math.log(r) for s in np.linspace(0, 2, 9)]
        assert np.all(np.diff(v) < 0)


def test_window_slopes_on_line():
    r = 2.0 ** -np.arange(4, 15)
    y = 0.7 * -np.log(r) + 3
    assert np.allclose(window_slopes(r, y, 4), 0.7)
    assert np.allclose(window_slopes(r, y, None), 0.7)
    assert len(window_slopes(r, y, 4)) == 3


def test_check_r_grid():
    with pytest.raises(ValueError):
        check_r_grid([0.5, 0.25, 0.125])
    with pytest.raises(ValueError):
        check_r_grid([0.5, 0.3, 0.25, 0.1, 0.05, 0.01])
    check_r_grid(np.geomspace(0.5, 1e-3, 7))


def test_capacity_dimension_no_sign_change():
    r = 2.0 ** -np.arange(4, 15)
    est = capacity_dimension(lambda s: (3.0 - s) * -np.log(r), r, bracket=(0.0, 1.0))
    assert est.s_star == 1.0 and est.flag == "no_sign_change_high"
    est = capacity_dimension(lambda s: (-1.0 - s) * -np.log(r), r, bracket=(0.0, 1.0))
    assert est.s_star == 0.0 and est.flag == "no_sign_change_low"
    est = capacity_dimension(lambda s: (0.37 - s) * -np.log(r), r, tol_s=1e-4)
    assert est.s_star == pytest.approx(0.37, abs=1e-4) and est.bracket_width <= 1e-4


def test_capacity_dimension_modes():
    r = 2.0 ** -np.arange(4, 15)
    x = -np.log(r)
    wiggle = 0.05 * np.sin(2 * x)
    lo = capacity_dimension(lambda s: (0.5 - s) * x + wiggle, r, mode="lower", window=3)
    up = capacity_dimension(lambda s: (0.5 - s) * x + wiggle, r, mode="upper", window=3)
    assert lo.s_star <= up.s_star
    # diagnostics reproduce the statistic
    assert np.allclose(window_slopes(r, up.values, 3), up.slopes)


def test_cantor_capacity_dimension(cantor):
    ifs, _, E, dim = cantor
    r = 2.0 ** -np.arange(10, 61, 5)
    for theta in (1.0, 0.5):
        assert symbolic_capacity_dimension(E, ifs, r, theta=theta).s_star == pytest.approx(dim, abs=0.05)


def test_profile_dimension_flat_shortcut():
    pts = np.linspace(0, 1, 120)[:, None]
    r = 2.0 ** -np.arange(1, 8)
    est = profile_dimension(pts, 1.0, r, theta=1.0, tol=1e-8)
    # the shortcut must agree with a direct solve at s_star
    direct = [capacity_profile(pts, ri, est.s_star, 1.0, theta=1.0, tol=1e-8).log_capacity for ri in r]
    assert np.allclose(est.values, direct, atol=1e-6)


def test_csv(tmp_path, cantor):
    ifs, _, E, _ = cantor
    rows = [{"family": "symbolic_phi", "r": 0.1, "s": 0.5,
             "result": capacity_symbolic(E, ifs, 0.1, 0.5, theta=0.5, method="dense")}]
    path = tmp_path / "c.csv"
    write_capacity_csv(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0] == "family,r,s,energy,capacity,gap,iters,converged"
    assert len(lines) == 2
