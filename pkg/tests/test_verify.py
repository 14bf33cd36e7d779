"""Certification machinery: pairing field, sign certificate, level surfaces."""

from __future__ import annotations

import numpy as np
import pytest

from heiscap.core import gauge_norm
from heiscap.domains import AnnulusProblem, make_gauge_ball
from heiscap.errors import CertificateError, EmptySurfaceError
from heiscap.exact import ModelPotentialSpec, PExponent, model_potential
from heiscap.grid import ScalarField, build_grid, classify_nodes, trilinear_sample
from heiscap.verify import (
    dilation_comparison_check,
    export_surface_ply,
    extract_level_surface,
    full_gradient,
    level_starshape,
    pairing_field,
    sign_certificate,
)


def model_problem(p=2.0):
    return AnnulusProblem(
        inner=make_gauge_ball((0.0, 0.0, 0.0), 0.4),
        outer=make_gauge_ball((0.0, 0.0, 0.0), 1.0),
        p=PExponent(p),
    )


def exact_model_field(res=33, p=2.0):
    """Model potential sampled on the grid; origin node patched to the inner datum."""
    problem = model_problem(p)
    grid = build_grid(problem, res)
    mask = classify_nodes(grid, problem)
    spec = ModelPotentialSpec(r=0.4, R=1.0, p=PExponent(p))
    pts = grid.points().reshape(-1, 3).copy()
    at_origin = gauge_norm(pts) < 1e-12
    pts[at_origin] = (0.5, 0.0, 0.0)
    values = model_potential(spec, pts)
    values[at_origin] = 1.0
    return ScalarField(grid=grid, values=values.reshape(grid.shape), mask=mask), spec


def replace_values(field, values):
    return ScalarField(grid=field.grid, values=values, mask=field.mask)


def model_level_radius(t):
    return (t * (0.4 ** -2 - 1.0) + 1.0) ** -0.5


def edge_incidence_counts(surface):
    edges = np.concatenate(
        [
            surface.triangles[:, [0, 1]],
            surface.triangles[:, [1, 2]],
            surface.triangles[:, [2, 0]],
        ]
    )
    edges.sort(axis=1)
    keys = edges[:, 0].astype(np.int64) * len(surface.vertices) + edges[:, 1]
    _, counts = np.unique(keys, return_counts=True)
    return counts


# ---------------------------------------------------------------- gradient


def test_full_gradient_linear_field_is_exact():
    field, _ = exact_model_field(17)
    pts = field.grid.points()
    linear = 0.7 * pts[..., 0] - 1.3 * pts[..., 1] + 0.25 * pts[..., 2]
    grad = full_gradient(replace_values(field, linear))
    np.testing.assert_allclose(grad[..., 0], 0.7, atol=1e-12)
    np.testing.assert_allclose(grad[..., 1], -1.3, atol=1e-12)
    np.testing.assert_allclose(grad[..., 2], 0.25, atol=1e-12)


def test_full_gradient_constant_field_is_zero():
    field, _ = exact_model_field(17)
    grad = full_gradient(replace_values(field, np.full(field.grid.shape, 0.37)))
    np.testing.assert_allclose(grad, 0.0, atol=1e-13)


def test_full_gradient_second_order_on_model():
    # compare against the chain-rule gradient u'(rho) * grad rho, on a fixed
    # annular band so both resolutions are measured over the same region
    def sup_gradient_error(res):
        field, spec = exact_model_field(res)
        pts = field.grid.points()
        rho = np.maximum(gauge_norm(pts), 1e-12)
        band = (rho > 0.55) & (rho < 0.85)
        w = pts[..., 0] ** 2 + pts[..., 1] ** 2
        grad_rho4 = np.stack(
            [4.0 * pts[..., 0] * w, 4.0 * pts[..., 1] * w, 2.0 * pts[..., 2]], axis=-1
        )
        k = (4.0 - spec.p.p) / (spec.p.p - 1.0)  # radial exponent, p=2 -> 2
        slope = -k * rho ** (-k - 1.0) / (spec.r ** -k - spec.R ** -k)
        exact = slope[..., None] * grad_rho4 / (4.0 * rho[..., None] ** 3)
        err = np.linalg.norm(full_gradient(field) - exact, axis=-1)
        return err[band].max()

    # 17^3 is pre-asymptotic for third t-derivatives near the axis
    coarse = sup_gradient_error(33)
    fine = sup_gradient_error(65)
    assert fine < coarse / 2.5


# ---------------------------------------------------------------- pairing


def model_exact_pairing(grid):
    rho = np.maximum(gauge_norm(grid.points()), 1e-12)
    return -2.0 * rho ** -2 / (0.4 ** -2 - 1.0)


def test_pairing_matches_radial_identity():
    field, spec = exact_model_field(33)
    pf = pairing_field(field, m=2)
    exact = model_exact_pairing(field.grid)
    rel = np.abs(pf.values - exact)[pf.certified] / np.abs(exact[pf.certified])
    assert rel.max() < 0.05


def test_pairing_refines_second_order():
    def sup_err(res):
        field, _ = exact_model_field(res)
        pf = pairing_field(field, m=2)
        rho = gauge_norm(field.grid.points())
        band = (rho > 0.55) & (rho < 0.85) & pf.certified
        return np.abs(pf.values - model_exact_pairing(field.grid))[band].max()

    assert sup_err(65) < sup_err(33) / 2.5


def test_pairing_value_near_rho_07():
    field, _ = exact_model_field(33)
    pf = pairing_field(field, m=2)
    rho = gauge_norm(field.grid.points())
    sel = np.where(pf.certified.ravel())[0]
    node = sel[np.argmin(np.abs(rho.ravel()[sel] - 0.7))]
    rho_n = rho.ravel()[node]
    exact = -2.0 * rho_n ** -2 / (0.4 ** -2 - 1.0)
    assert exact == pytest.approx(-0.778, abs=0.08)
    assert pf.values.ravel()[node] == pytest.approx(exact, abs=0.01)


def test_pairing_of_gauge_quartic_is_four_rho4():
    field, _ = exact_model_field(33)
    pts = field.grid.points()
    rho4 = (pts[..., 0] ** 2 + pts[..., 1] ** 2) ** 2 + pts[..., 2] ** 2
    pf = pairing_field(replace_values(field, rho4), m=2)
    got = pf.values[pf.certified]
    want = 4.0 * rho4[pf.certified]
    assert np.all(got > 0.0)
    np.testing.assert_allclose(got, want, rtol=0.02)


def test_pairing_constant_field_is_zero():
    field, _ = exact_model_field(17)
    pf = pairing_field(replace_values(field, np.full(field.grid.shape, 0.5)), m=2)
    np.testing.assert_allclose(pf.values[pf.certified], 0.0, atol=1e-13)


def test_pairing_is_nan_off_certified():
    field, _ = exact_model_field(17)
    pf = pairing_field(field, m=2)
    assert np.all(np.isnan(pf.values[~pf.certified]))
    assert not np.any(np.isnan(pf.values[pf.certified]))


def test_pairing_margin_validation():
    field, _ = exact_model_field(17)
    with pytest.raises(CertificateError):
        pairing_field(field, m=0)
    with pytest.raises(CertificateError, match="no certified"):
        pairing_field(field, m=50)


# ---------------------------------------------------------------- certificate


def test_sign_certificate_model_passes():
    field, _ = exact_model_field(33)
    cert = sign_certificate(field, m=2)
    assert cert.passed
    assert cert.empirical_M > 0.3
    assert cert.min_gradient_norm > 0.0
    assert cert.margin_layers == 2
    assert cert.n_certified > 1000
    # worst node sits where |u'(rho) rho| is smallest: the outer rim
    assert gauge_norm(cert.worst_node[None])[0] > 0.8


def test_sign_certificate_reversed_field_fails():
    field, _ = exact_model_field(33)
    cert = sign_certificate(replace_values(field, 1.0 - field.values), m=2)
    assert not cert.passed
    assert cert.empirical_M < 0.0


def test_sign_certificate_constant_field_fails():
    field, _ = exact_model_field(17)
    cert = sign_certificate(replace_values(field, np.full(field.grid.shape, 0.5)), m=2)
    assert not cert.passed


# ---------------------------------------------------------------- surfaces


def test_extract_level_surface_is_closed_gauge_sphere():
    field, _ = exact_model_field(33)
    surf = extract_level_surface(field, 0.5)
    assert len(surf.vertices) > 500
    counts = edge_incidence_counts(surf)
    assert np.all(counts == 2)
    rho = gauge_norm(surf.vertices)
    h = field.grid.spacings.max()
    target = model_level_radius(0.5)
    assert np.abs(rho - target).max() < 2.0 * h
    assert (rho.max() - rho.min()) / rho.mean() < 2.0 * h
    np.testing.assert_allclose(np.linalg.norm(surf.normals, axis=1), 1.0, atol=1e-10)


def test_extract_level_vertices_interpolate_to_level():
    # vertices on diagonal tetrahedron edges are off-lattice in up to three
    # axes, so the trilinear residual is the simplex gap, second order in h
    def residual(res):
        field, _ = exact_model_field(res)
        surf = extract_level_surface(field, 0.5)
        vals = trilinear_sample(field.grid, field.values, surf.vertices)
        return np.abs(vals - 0.5).max()

    r33 = residual(33)
    assert r33 < 0.03
    assert residual(65) < r33 / 2.5


def test_extract_level_requires_interior_level():
    field, _ = exact_model_field(17)
    with pytest.raises(CertificateError):
        extract_level_surface(field, 0.0)
    with pytest.raises(CertificateError):
        extract_level_surface(field, 1.0)
    with pytest.raises(CertificateError):
        extract_level_surface(field, 0.5, m=-1)


def test_extract_deep_level_is_empty_on_coarse_grid():
    field, _ = exact_model_field(17)
    with pytest.raises(EmptySurfaceError):
        extract_level_surface(field, 0.999)


def test_extract_eroded_margin_can_empty_the_complex():
    field, _ = exact_model_field(17)
    with pytest.raises(CertificateError, match="no certified"):
        extract_level_surface(field, 0.5, m=50)


# ---------------------------------------------------------------- starshape


def test_level_starshape_model_positive():
    field, _ = exact_model_field(33)
    surf = extract_level_surface(field, 0.5)
    rep = level_starshape(surf)
    assert rep.min_pairing > 0.0
    # gauge-sphere minimum of <nu, Z> is attained at the equator and equals rho
    assert rep.min_pairing == pytest.approx(model_level_radius(0.5), abs=0.02)
    pair = np.einsum("ij,ij->i", surf.normals, np.column_stack(
        [surf.vertices[:, 0], surf.vertices[:, 1], 2.0 * surf.vertices[:, 2]]
    ))
    assert rep.min_pairing == pytest.approx(pair.min(), abs=1e-12)


def test_level_starshape_reversed_field_negative():
    field, _ = exact_model_field(33)
    surf = extract_level_surface(replace_values(field, 1.0 - field.values), 0.5)
    rep = level_starshape(surf)
    assert rep.min_pairing < 0.0


def test_level_starshape_ignores_triangle_relabeling():
    field, _ = exact_model_field(33)
    surf = extract_level_surface(field, 0.5)
    rng = np.random.default_rng(7)
    perm = rng.permutation(len(surf.triangles))
    shuffled = type(surf)(
        level=surf.level,
        vertices=surf.vertices,
        normals=surf.normals,
        triangles=surf.triangles[perm][:, ::-1],
    )
    assert level_starshape(shuffled).min_pairing == level_starshape(surf).min_pairing


# ---------------------------------------------------------------- dilation


def test_dilation_quotient_negative_on_model():
    field, _ = exact_model_field(33)
    rep = dilation_comparison_check(field, 0.05, m=2)
    assert rep.passed
    assert rep.max_quotient < 0.0
    assert rep.lam == 0.05


def test_dilation_quotient_first_order_to_pairing():
    field, _ = exact_model_field(33)
    pf = pairing_field(field, m=2)
    flat_cert = np.where(pf.certified.ravel())[0]
    errs = []
    for lam in (0.1, 0.05, 0.025):
        rep = dilation_comparison_check(field, lam, m=2)
        errs.append(abs(rep.max_quotient - pf.values.ravel()[flat_cert].max()))
    assert errs[0] > errs[1] > errs[2]
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.5)
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.5)


def test_dilation_constant_field_fails():
    field, _ = exact_model_field(17)
    rep = dilation_comparison_check(
        replace_values(field, np.full(field.grid.shape, 0.5)), 0.05, m=2
    )
    assert not rep.passed
    assert rep.max_quotient == pytest.approx(0.0, abs=1e-12)


def test_dilation_rejects_nonpositive_lambda():
    field, _ = exact_model_field(17)
    with pytest.raises(CertificateError):
        dilation_comparison_check(field, 0.0, m=2)
    with pytest.raises(CertificateError):
        dilation_comparison_check(field, -0.1, m=2)


# ---------------------------------------------------------------- export


def test_export_surface_ply_roundtrips_counts(tmp_path):
    field, _ = exact_model_field(33)
    surf = extract_level_surface(field, 0.5)
    path = tmp_path / "level.ply"
    export_surface_ply(surf, path, comments=("model level 0.5",))
    text = path.read_text().splitlines()
    assert text[0] == "ply"
    nv = int(next(l for l in text if l.startswith("element vertex")).split()[-1])
    nf = int(next(l for l in text if l.startswith("element face")).split()[-1])
    assert nv == len(surf.vertices)
    assert nf == len(surf.triangles)
    body = text[text.index("end_header") + 1 :]
    assert len(body) == nv + nf
    first = body[0].split()
    assert len(first) == 7  # x y t nx ny nt pairing
    face = body[nv].split()
    assert face[0] == "3"
