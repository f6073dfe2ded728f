import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from interdim.kernels import (AdmissibleFn, as_phi, check_growth_condition, ker_geo, ker_profile, ker_psi,
                              ker_symbolic_phi, ker_z, log_ker_symbolic_sv, phi_alpha)
from interdim.symbolic import Prefix, validate_ifs

from conftest import random_ifs


@pytest.fixture
def diag_ifs():
    return validate_ifs([np.diag([1 / 2, 1 / 4]), np.eye(2) / 3])


def test_ker_z_examples(diag_ifs):
    assert ker_z(diag_ifs, (1,), 1 / 3) == pytest.approx(2 / 3)
    assert ker_z(diag_ifs, (1,), 1 / 3, diagonal=True) == 1.0
    assert ker_z(diag_ifs, Prefix((1,), True), 1 / 3) == 1.0
    assert ker_z(diag_ifs, (1,), 0.6) == 1.0
    with pytest.raises(ValueError):
        ker_z(diag_ifs, (1,), 0.0)


def test_ker_symbolic_phi_examples(diag_ifs):
    phi = AdmissibleFn.power(0.5)
    r = 0.3
    assert ker_symbolic_phi(diag_ifs, (1, 2), r, 0.0, phi) == pytest.approx(ker_z(diag_ifs, (1, 2), r))
    # alpha_1 below Phi(r): Z_u = 1 on the whole range, max at u = Phi(r)
    deep = (2,) * 6
    assert ker_symbolic_phi(diag_ifs, deep, r, 1.3, phi) == pytest.approx(phi(r) ** -1.3)
    assert ker_symbolic_phi(diag_ifs, (1,), r, 1.3, phi, diagonal=True) == pytest.approx(phi(r) ** -1.3)


def test_ker_symbolic_phi_one_dim_example():
    ifs = validate_ifs([[[0.2]], [[0.2]]])
    phi = AdmissibleFn.tabulated([0.1, 0.5, 0.9], [0.01, 0.25, 0.81])
    assert phi(0.5) == pytest.approx(0.25)
    val = ker_symbolic_phi(ifs, (1,), 0.5, 1.0, phi)
    grid = np.linspace(0.25, 0.5, 10_000)
    oracle = np.max(grid ** -1.0 * np.minimum(1, grid / 0.2))
    assert val == pytest.approx(4.0) and val == pytest.approx(oracle)


def test_ker_symbolic_phi_error(diag_ifs):
    with pytest.raises(ValueError):
        log_ker_symbolic_sv(np.log([0.5, 0.25]), math.log(0.1), math.log(0.2), 1.0)


def test_ker_psi_examples():
    phi = AdmissibleFn.power(0.5)
    r, s = 0.1, 0.7
    assert ker_psi(0.0, r, s, phi) == pytest.approx(phi(r) ** -s)
    assert ker_psi(0.2, r, s, phi) == 0.0
    assert ker_psi(0.05, r, 0.0, phi) == 1.0
    assert ker_psi(0.05, r, s, phi) == pytest.approx(0.05 ** -s)
    with pytest.raises(ValueError):
        ker_psi(-1.0, r, s, phi)


def test_ker_psi_non_increasing():
    phi = AdmissibleFn.boxlike()
    d = np.linspace(0, 0.5, 2001)
    v = ker_psi(d, 0.3, 0.8, phi)
    assert np.all(np.diff(v) <= 0)


def test_ker_profile_examples():
    phi = AdmissibleFn.power(0.5)
    r, tau = 0.2, 1.5
    assert ker_profile(0.0, r, 0.9, tau, phi) == pytest.approx(phi(r) ** -0.9)
    for delta in (0.001, 0.03, 0.1, 0.5):
        assert ker_profile(delta, r, tau, tau, phi) == pytest.approx(min(phi(r) ** -tau, delta ** -tau))
        assert ker_profile(delta, r, 0.0, tau, phi) == pytest.approx(min(1, (r / delta) ** tau))
    with pytest.raises(ValueError):
        ker_profile(0.1, r, 2.0, tau, phi)
    with pytest.raises(ValueError):
        ker_profile(0.1, r, 0.0, 0.0, phi)


def test_out_of_domain_scale():
    with pytest.raises(ValueError):
        ker_psi(0.1, 0.5, 1.0, AdmissibleFn.boxlike())
    with pytest.raises(ValueError):
        ker_profile(0.1, 0.5, 0.5, 1.0, AdmissibleFn.loglike())


def test_ker_geo():
    assert ker_geo(0.0, 0.1, 1.0) == 1.0
    assert ker_geo(0.2, 0.1, 2.0) == pytest.approx(0.25)


def test_phi_alpha_examples():
    box = AdmissibleFn.boxlike()
    assert phi_alpha(box, 1.0) is box
    for theta in (0.25, 0.5, 1.0):
        p = AdmissibleFn.power(theta)
        r = np.geomspace(1e-6, 0.5, 50)
        assert np.allclose(phi_alpha(p, 0.3)(r), p(r), rtol=1e-12)
    half = phi_alpha(box, 0.5)
    r = np.geomspace(1e-8, 0.1, 200)
    expected = (-(r ** 0.5) / np.log(r ** 0.5)) ** 2
    v = half(r)
    assert np.allclose(v, expected, rtol=1e-12)
    assert np.all((0 < v) & (v <= r))
    assert half.Y == pytest.approx(box.Y ** 2)
    assert half.admissible
    with pytest.raises(ValueError):
        phi_alpha(box, 0.0)
    with pytest.raises(ValueError):
        phi_alpha(box, 1.5)


def test_admissibility_flags():
    assert AdmissibleFn.power(0.5).admissible
    assert AdmissibleFn.boxlike().admissible
    assert AdmissibleFn.loglike().admissible
    # the identity is the boundary case: Phi(r)/r does not vanish
    diag = AdmissibleFn.power(1.0).admissibility()
    assert diag["bounded"] and diag["monotone"] and not diag["ratio_vanishes"]
    with pytest.raises(ValueError):
        AdmissibleFn.power(0.0)
    with pytest.raises(ValueError):
        AdmissibleFn.tabulated([0.1, 0.2, 0.3], [0.01, 0.3, 0.02])


def test_growth_condition_examples():
    assert check_growth_condition(AdmissibleFn.power(0.3))[0]
    assert check_growth_condition(AdmissibleFn.boxlike())[0]
    assert check_growth_condition(AdmissibleFn.loglike())[0]
    L = np.linspace(-1, -40, 200)
    bad = AdmissibleFn.from_log_table(L[::-1], -np.exp(-L[::-1]))
    ok, trace = check_growth_condition(bad)
    assert not ok
    assert not trace[0.5]["passed"]


def test_serialisation_roundtrip():
    for phi in (AdmissibleFn.power(0.4), AdmissibleFn.boxlike(), AdmissibleFn.loglike(),
                phi_alpha(AdmissibleFn.loglike(), 0.5), AdmissibleFn.tabulated([0.01, 0.1, 0.5], [1e-4, 0.01, 0.2])):
        back = AdmissibleFn.from_dict(phi.to_dict())
        r = np.geomspace(0.011, 0.3, 7)
        assert np.array_equal(back(r), phi(r))


def test_as_phi():
    assert as_phi(theta=0.5).theta == 0.5
    with pytest.raises(ValueError):
        as_phi()
    with pytest.raises(ValueError):
        as_phi(AdmissibleFn.boxlike(), 0.5)


phis = st.sampled_from([AdmissibleFn.power(0.25), AdmissibleFn.power(0.6), AdmissibleFn.boxlike(),
                        AdmissibleFn.loglike(), phi_alpha(AdmissibleFn.boxlike(), 0.5)])


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), phi=phis, r=st.floats(1e-4, 0.3), s=st.floats(0, 2), t=st.floats(0, 2))
def test_symbolic_kernel_sandwich(seed, phi, r, s, t):
    rng = np.random.default_rng(seed)
    ifs = validate_ifs(random_ifs(rng, 2, 2))
    w = tuple(rng.integers(1, 3, size=rng.integers(0, 8)))
    r = min(r, 0.9 * phi.Y)
    s, t = max(s, t), min(s, t)
    ks, kt = ker_symbolic_phi(ifs, w, r, s, phi), ker_symbolic_phi(ifs, w, r, t, phi)
    assert r ** -(s - t) * kt <= ks * (1 + 1e-12)
    assert ks <= phi(r) ** -(s - t) * kt * (1 + 1e-12)


@settings(max_examples=100, deadline=None)
@given(phi=phis, r=st.floats(1e-4, 0.3), delta=st.floats(0, 2), s=st.floats(0, 1), t=st.floats(0, 1))
def test_profile_kernel_sandwich(phi, r, delta, s, t):
    r = min(r, 0.9 * phi.Y)
    s, t = max(s, t), min(s, t)
    ks, kt = ker_profile(delta, r, s, 1.0, phi), ker_profile(delta, r, t, 1.0, phi)
    assert r ** -(s - t) * kt <= ks * (1 + 1e-12)
    assert ks <= phi(r) ** -(s - t) * kt * (1 + 1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), r1=st.floats(1e-3, 1), r2=st.floats(1e-3, 1))
def test_ker_z_range_and_monotone(seed, r1, r2):
    ifs = validate_ifs(random_ifs(np.random.default_rng(seed), 3, 2))
    w = (1, 2, 2)
    z1, z2 = ker_z(ifs, w, min(r1, r2)), ker_z(ifs, w, max(r1, r2))
    assert 0 < z1 <= z2 <= 1


@settings(max_examples=60, deadline=None)
@given(r=st.floats(1e-3, 0.5), dx=st.floats(0, 1), shrink=st.floats(0, 1), s=st.floats(0, 1))
def test_profile_lipschitz_monotone(r, dx, shrink, s):
    # a 1-Lipschitz image never decreases the kernel value
    phi = AdmissibleFn.power(0.5)
    assert ker_profile(dx * shrink, r, s, 1.0, phi) >= ker_profile(dx, r, s, 1.0, phi) * (1 - 1e-12)
