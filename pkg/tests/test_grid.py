"""Grids: construction, node classification, interpolation, dilated resampling."""

from __future__ import annotations

import numpy as np
import pytest

from heiscap.domains import AnnulusProblem, make_gauge_ball
from heiscap.errors import GridError, ResampleRangeError
from heiscap.exact import PExponent
from heiscap.grid import (
    FREE,
    Grid,
    RegionMask,
    ScalarField,
    build_grid,
    classify_nodes,
    dilated_grid,
    grids_compatible,
    resample_dilated,
    trilinear_sample,
    triquadratic_sample,
)


def model_problem(p=2.0):
    return AnnulusProblem(
        inner=make_gauge_ball((0.0, 0.0, 0.0), 0.4),
        outer=make_gauge_ball((0.0, 0.0, 0.0), 1.0),
        p=PExponent(p),
    )


def test_build_grid_box_and_spacing():
    grid = build_grid(model_problem(), 33)
    # exact bounding box of the unit gauge ball
    np.testing.assert_allclose(grid.box[0], [-1.0, -1.0, -1.0], atol=1e-15)
    np.testing.assert_allclose(grid.box[1], [1.0, 1.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(grid.spacings, 2.0 / 32.0, rtol=1e-15)
    assert grid.shape == (33, 33, 33)


def test_build_grid_rejects_coarse_resolutions():
    with pytest.raises(GridError):
        build_grid(model_problem(), 8)
    with pytest.raises(GridError):
        build_grid(model_problem(), (33, 33, 16))
    build_grid(model_problem(), 17)  # the floor itself is allowed


def test_grid_validation():
    with pytest.raises(GridError):
        Grid(box=np.zeros((3, 2)), resolution=(9, 9, 9))
    with pytest.raises(GridError):
        Grid(box=np.array([[0.0, 0.0, 0.0], [1.0, 1.0, -1.0]]), resolution=(9, 9, 9))
    with pytest.raises(GridError):
        Grid(box=np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]), resolution=(9, 1, 9))


def test_classification_counts_frozen():
    prob = model_problem()
    m17 = classify_nodes(build_grid(prob, 17), prob)
    assert m17.counts == {"free": 2376, "inner": 79, "outer": 2458}
    m33 = classify_nodes(build_grid(prob, 33), prob)
    assert m33.counts == {"free": 19554, "inner": 533, "outer": 15850}
    assert sum(m33.counts.values()) == 33**3


def test_classification_matches_signs():
    prob = model_problem()
    grid = build_grid(prob, 17)
    mask = classify_nodes(grid, prob)
    pts = grid.points()
    np.testing.assert_array_equal(mask.inner, prob.inner.phi(pts) <= 0.0)
    np.testing.assert_array_equal(
        mask.outer, (prob.outer.phi(pts) >= 0.0) & (prob.inner.phi(pts) > 0.0)
    )


def test_classification_rejects_free_hull():
    prob = model_problem()
    tight = Grid(box=np.array([[-0.9, -0.9, -0.9], [0.9, 0.9, 0.9]]), resolution=(17, 17, 17))
    with pytest.raises(GridError):
        classify_nodes(tight, prob)


def test_trilinear_reproduces_multilinear():
    grid = Grid(box=np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]]), resolution=(9, 11, 13))
    x, y, t = grid.sparse_coords()

    def f(x, y, t):
        return 1.0 + 2.0 * x - 3.0 * y + 0.5 * t + x * y - y * t + 0.25 * x * y * t

    values = f(x, y, t)
    rng = np.random.default_rng(61)
    pts = rng.uniform(-1.0, 1.0, size=(200, 3))
    out = trilinear_sample(grid, values, pts)
    np.testing.assert_allclose(out, f(pts[:, 0], pts[:, 1], pts[:, 2]), atol=1e-13)


def test_triquadratic_reproduces_quadratics():
    grid = Grid(box=np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]]), resolution=(11, 11, 11))
    x, y, t = grid.sparse_coords()

    def f(x, y, t):
        return x**2 - 2.0 * y**2 + 0.3 * t**2 + x * y * t + x**2 * t**2 - y

    values = f(x, y, t)
    rng = np.random.default_rng(67)
    pts = rng.uniform(-0.99, 0.99, size=(200, 3))
    out = triquadratic_sample(grid, values, pts)
    np.testing.assert_allclose(out, f(pts[:, 0], pts[:, 1], pts[:, 2]), atol=1e-12)


def test_sampling_rejects_outside_points():
    grid = Grid(box=np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]]), resolution=(9, 9, 9))
    values = np.zeros(grid.resolution)
    with pytest.raises(ResampleRangeError):
        trilinear_sample(grid, values, [[1.5, 0.0, 0.0]])
    with pytest.raises(ResampleRangeError):
        triquadratic_sample(grid, values, [[0.0, -1.2, 0.0]])


def test_dilated_grid_is_exact_preimage():
    grid = Grid(box=np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]]), resolution=(9, 9, 9))
    lam = 0.3
    g = dilated_grid(grid, lam)
    pts = g.points().copy()
    pts[..., :2] *= np.exp(lam)
    pts[..., 2] *= np.exp(2.0 * lam)
    np.testing.assert_allclose(pts, grid.points(), rtol=1e-13, atol=1e-15)


def test_resample_dilated_is_nodal_lookup():
    # the image lattice maps node to node, so arbitrary values survive exactly
    prob = model_problem()
    grid = build_grid(prob, 17)
    mask = classify_nodes(grid, prob)
    rng = np.random.default_rng(71)
    values = rng.standard_normal(grid.resolution)
    field = ScalarField(grid=grid, values=values, mask=mask)
    out = resample_dilated(field, 0.25)
    np.testing.assert_allclose(out.values, values, rtol=0, atol=1e-12)
    assert not grids_compatible(out.grid, grid)
    np.testing.assert_allclose(out.grid.box[:, :2], grid.box[:, :2] * np.exp(-0.25))


def test_resample_dilated_identity():
    prob = model_problem()
    grid = build_grid(prob, 17)
    mask = classify_nodes(grid, prob)
    values = np.arange(float(17**3)).reshape(grid.resolution)
    field = ScalarField(grid=grid, values=values, mask=mask)
    out = resample_dilated(field, 0.0)
    assert grids_compatible(out.grid, grid)
    np.testing.assert_allclose(out.values, values, rtol=0, atol=1e-11)


def test_scalar_field_shape_validation():
    grid = Grid(box=np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]]), resolution=(9, 9, 9))
    mask = RegionMask(labels=np.full(grid.resolution, FREE, dtype=np.uint8))
    with pytest.raises(GridError):
        ScalarField(grid=grid, values=np.zeros((9, 9, 8)), mask=mask)
