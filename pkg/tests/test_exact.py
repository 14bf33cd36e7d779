"""Closed-form oracles: profiles, gradients, barriers, homogeneity."""

from __future__ import annotations

import math

import numpy as np
import pytest

from heiscap import core, exact
from heiscap.core import AmbientParams
from heiscap.errors import HeiscapError, SingularityError
from heiscap.exact import ModelPotentialSpec, PExponent

H1 = AmbientParams(1)


def fd_gradient(f, z, h=1e-6):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        out[i] = (f(z + e) - f(z - e)) / (2 * h)
    return out


def test_pexponent():
    assert PExponent(2.0).radial_exponent(H1) == pytest.approx(2.0)
    assert PExponent(4.0).is_critical(H1)
    assert not PExponent(3.999999).is_critical(H1)
    assert PExponent(6.0).radial_exponent(H1) == pytest.approx(-0.4)
    with pytest.raises(HeiscapError):
        PExponent(1.0)


def test_fundamental_tabulated():
    # p=2, n=1: k=2, so rho=2 gives 1/4
    z = np.array([0.0, 0.0, 4.0])
    val = exact.fundamental_solution(core.origin(1), PExponent(2.0), H1, z)
    assert val == pytest.approx(0.25, abs=1e-14)
    # critical exponent: log profile
    val = exact.fundamental_solution(core.origin(1), PExponent(4.0), H1, z)
    assert val == pytest.approx(math.log(2.0), abs=1e-14)


def test_fundamental_pole_raises():
    w = np.array([0.3, -0.2, 0.5])
    with pytest.raises(SingularityError):
        exact.fundamental_solution(w, PExponent(2.0), H1, w)


def test_fundamental_gradient_matches_fd():
    rng = np.random.default_rng(41)
    w = np.array([0.25, -0.4, 0.3])
    for p in (PExponent(1.6), PExponent(2.0), PExponent(3.0), PExponent(4.0)):
        for _ in range(8):
            z = rng.uniform(-1.5, 1.5, size=3)
            if core.gauge_distance(z, w) < 0.4:
                continue
            got = exact.fundamental_solution_gradient(w, p, H1, z)
            ref = fd_gradient(lambda q: exact.fundamental_solution(w, p, H1, q), z)
            np.testing.assert_allclose(got, ref, rtol=2e-6, atol=2e-8)


def test_fundamental_gradient_axis_alignment():
    # pole at origin, z on the x-axis: gradient points along x, t-component 0
    g = exact.fundamental_solution_gradient(
        core.origin(1), PExponent(2.0), H1, np.array([0.7, 0.0, 0.0])
    )
    assert abs(g[1]) < 1e-14 and abs(g[2]) < 1e-14
    assert g[0] != 0.0


def test_fundamental_gradient_scaling():
    # p=2: profile is (-2)-homogeneous, so the xy-gradient picks up e^(-3 lam)
    # and the t-component e^(-4 lam) at dilated points
    p = PExponent(2.0)
    z = np.array([0.5, -0.3, 0.4])
    lam = 0.3
    g = exact.fundamental_solution_gradient(core.origin(1), p, H1, z)
    g_scaled = exact.fundamental_solution_gradient(
        core.origin(1), p, H1, core.dilate_point(z, lam)
    )
    np.testing.assert_allclose(g_scaled[:2], np.exp(-3 * lam) * g[:2], rtol=1e-12)
    assert g_scaled[2] == pytest.approx(np.exp(-4 * lam) * g[2], rel=1e-12)


def test_fundamental_homogeneity_exact():
    rng = np.random.default_rng(43)
    for p in (PExponent(1.5), PExponent(2.0), PExponent(3.0)):
        k = p.radial_exponent(H1)
        z = rng.uniform(-2, 2, size=(50, 3))
        z = z[core.gauge_norm(z) > 0.2]
        lam = 0.45
        lhs = exact.fundamental_solution(core.origin(1), p, H1, core.dilate_point(z, lam))
        rhs = np.exp(-lam * k) * exact.fundamental_solution(core.origin(1), p, H1, z)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12)


def test_model_potential_tabulated():
    # p=2, r=1/2, R=1, rho=3/4: (16/9 - 1)/(4 - 1) = 7/27
    spec = ModelPotentialSpec(0.5, 1.0, PExponent(2.0))
    val = exact.model_potential(spec, np.array([0.75, 0.0, 0.0]))
    assert val == pytest.approx(7.0 / 27.0, abs=1e-14)
    # critical p=Q=4: log(1/0.75)/log(2)
    spec4 = ModelPotentialSpec(0.5, 1.0, PExponent(4.0))
    val4 = exact.model_potential(spec4, np.array([0.75, 0.0, 0.0]))
    assert val4 == pytest.approx(math.log(4.0 / 3.0) / math.log(2.0), abs=1e-14)


def test_model_boundary_values_and_monotonicity():
    for p in (1.3, 2.0, 3.0, 4.0, 6.0):
        spec = ModelPotentialSpec(0.4, 1.0, PExponent(p))
        rhos = np.linspace(0.4, 1.0, 200)
        pts = np.stack([rhos, np.zeros_like(rhos), np.zeros_like(rhos)], axis=-1)
        vals = exact.model_potential(spec, pts)
        assert vals[0] == pytest.approx(1.0, abs=1e-12)
        assert vals[-1] == pytest.approx(0.0, abs=1e-12)
        assert np.all(np.diff(vals) < 0)
        assert np.all((vals >= -1e-12) & (vals <= 1 + 1e-12))


def test_model_gauge_symmetry():
    # depends on z only through rho(z)
    spec = ModelPotentialSpec(0.4, 1.0, PExponent(3.0))
    a = exact.model_potential(spec, np.array([0.7, 0.0, 0.0]))
    b = exact.model_potential(spec, np.array([0.0, 0.0, 0.49]))
    assert a == pytest.approx(b, rel=1e-12)


def test_model_gradient_matches_fd():
    rng = np.random.default_rng(47)
    for p in (PExponent(2.0), PExponent(4.0)):
        spec = ModelPotentialSpec(0.4, 1.0, p)
        for _ in range(6):
            z = rng.uniform(-0.8, 0.8, size=3)
            if not (0.45 < core.gauge_norm(z) < 0.95):
                continue
            got = exact.model_potential_gradient(spec, z)
            ref = fd_gradient(lambda q: exact.model_potential(spec, q), z)
            np.testing.assert_allclose(got, ref, rtol=5e-7, atol=1e-9)


def test_model_dilation_pairing_values():
    # p=2, r=0.4, R=1: pairing at rho is -2 rho^-2 / (0.4^-2 - 1)
    spec = ModelPotentialSpec(0.4, 1.0, PExponent(2.0))
    assert exact.model_dilation_pairing(spec, 0.7) == pytest.approx(
        -2.0 * 0.7 ** (-2) / 5.25, rel=1e-12
    )
    assert exact.model_min_pairing_magnitude(spec) == pytest.approx(2.0 / 5.25, rel=1e-12)
    # p=Q: pairing is the constant -1/log(R/r)
    spec4 = ModelPotentialSpec(0.4, 1.0, PExponent(4.0))
    assert exact.model_min_pairing_magnitude(spec4) == pytest.approx(
        1.0 / math.log(2.5), rel=1e-12
    )
    # p > Q: minimum magnitude sits at the inner radius
    spec6 = ModelPotentialSpec(0.4, 1.0, PExponent(6.0))
    grid = np.linspace(0.4, 1.0, 500)
    mags = np.abs(exact.model_dilation_pairing(spec6, grid))
    assert exact.model_min_pairing_magnitude(spec6) == pytest.approx(mags.min(), rel=1e-3)


def test_model_level_radius_inverts_potential():
    for p in (1.7, 2.0, 4.0, 5.0):
        spec = ModelPotentialSpec(0.4, 1.0, PExponent(p))
        for v in (0.2, 0.5, 0.8):
            rho = exact.model_level_radius(spec, v)
            val = exact.model_potential(spec, np.array([rho, 0.0, 0.0]))
            assert val == pytest.approx(v, abs=1e-12)
            assert 0.4 < rho < 1.0


def test_barrier_tabulated():
    # n=1, p=2, R=1: k=2, alpha = 1/3, beta = -1/3
    b = exact.make_barrier(core.origin(1), 1.0, "exterior", PExponent(2.0))
    assert b.alpha == pytest.approx(1.0 / 3.0, abs=1e-15)
    assert b.beta == pytest.approx(-1.0 / 3.0, abs=1e-15)
    # value at rho = 3/4 matches the r=1/2 model potential
    val = exact.eval_barrier(b, np.array([0.75, 0.0, 0.0]))
    assert val == pytest.approx(7.0 / 27.0, abs=1e-14)


def test_barrier_critical_constants():
    b = exact.make_barrier(core.origin(1), 2.0, "interior", PExponent(4.0))
    assert b.alpha == pytest.approx(-1.0 / math.log(2.0), rel=1e-14)
    assert b.beta == pytest.approx(math.log(2.0) / math.log(2.0), rel=1e-14)


def test_barrier_normalisation_random():
    rng = np.random.default_rng(53)
    for _ in range(20):
        p = float(rng.uniform(1.1, 6.0))
        if abs(p - 4.0) < 1e-6:
            p += 1e-3
        R = float(rng.uniform(0.3, 3.0))
        b = exact.make_barrier(core.origin(1), R, "exterior", PExponent(p))
        at_R = exact.eval_barrier(b, np.array([R, 0.0, 0.0]))
        at_half = exact.eval_barrier(b, np.array([R / 2, 0.0, 0.0]))
        assert abs(at_R) <= 1e-12
        assert abs(at_half - 1.0) <= 1e-12


def test_barrier_clamped_and_monotone():
    b = exact.make_barrier(core.origin(1), 1.0, "exterior", PExponent(3.0))
    rhos = np.linspace(0.1, 1.0, 300)
    pts = np.stack([rhos, np.zeros_like(rhos), np.zeros_like(rhos)], axis=-1)
    vals = exact.eval_barrier(b, pts)
    inside = rhos < 0.5
    assert np.all(vals[inside] == 1.0)
    shell = ~inside
    assert np.all(np.diff(vals[shell]) < 1e-15)


def test_barrier_centered_off_origin():
    center = np.array([0.5, -0.25, 0.3])
    b = exact.make_barrier(center, 1.0, "interior", PExponent(2.5))
    # a point at gauge distance exactly R from the center
    z = core.group_product(center, np.array([1.0, 0.0, 0.0]))
    assert exact.eval_barrier(b, z) == pytest.approx(0.0, abs=1e-12)
    z2 = core.group_product(center, np.array([0.5, 0.0, 0.0]))
    assert exact.eval_barrier(b, z2) == pytest.approx(1.0, abs=1e-12)


def test_barrier_bad_input():
    with pytest.raises(HeiscapError):
        exact.make_barrier(core.origin(1), -1.0, "exterior", PExponent(2.0))
    with pytest.raises(HeiscapError):
        exact.make_barrier(core.origin(1), 1.0, "sideways", PExponent(2.0))
    with pytest.raises(HeiscapError):
        ModelPotentialSpec(1.0, 0.4, PExponent(2.0))
