"""Sign certificates and level-set geometry for solved capacitary fields.

The starshapedness of a level set {u = t} is witnessed by the pairing
<grad u, Z> between the full Euclidean gradient and the dilation generator
Z = (x, y, 2t).  A capacitary potential of a starshaped annulus should have
this pairing uniformly negative, so the outward level-set normal -grad u
pairs positively with Z.  Everything here works on the discrete field: the
pairing is formed with central differences, certificates exclude a layer of
nodes near the pinned regions where one-sided effects pollute the stencil,
and level surfaces come from a marching-tetrahedra pass restricted to the
certified region.

The full gradient is used on purpose: the horizontal gradient may vanish at
characteristic points even when the field is perfectly regular there, and
the sign statement being certified is about the full gradient.
"""

from dataclasses import dataclass

import numpy as np

from .core import dilation_field
from .domains import StarshapednessReport
from .errors import CertificateError, EmptySurfaceError
from .grid import (
    FREE,
    Grid,
    ScalarField,
    resample_dilated,
    triquadratic_sample,
    trilinear_sample,
)


@dataclass(frozen=True, eq=False)
class PairingField:
    """<grad u, Z> on the certified nodes, NaN elsewhere.

    certified marks free nodes at Chebyshev distance >= margin_layers from
    every non-free node, which keeps the central-difference stencil (and one
    extra layer per margin step) inside genuinely solved territory.
    """

    grid: Grid
    values: np.ndarray
    certified: np.ndarray
    margin_layers: int


@dataclass(frozen=True, eq=False)
class SignCertificate:
    empirical_M: float
    worst_node: np.ndarray
    margin_layers: int
    min_gradient_norm: float
    n_certified: int
    passed: bool


@dataclass(frozen=True, eq=False)
class LevelSurface:
    level: float
    vertices: np.ndarray
    normals: np.ndarray
    triangles: np.ndarray


@dataclass(frozen=True, eq=False)
class DilationComparisonReport:
    lam: float
    max_quotient: float
    worst_node: np.ndarray
    n_certified: int
    tolerance: float
    passed: bool


def full_gradient(field: ScalarField) -> np.ndarray:
    """Central-difference gradient, shape (*grid.resolution, 3)."""
    h = field.grid.spacings
    gx, gy, gt = np.gradient(field.values, h[0], h[1], h[2])
    return np.stack([gx, gy, gt], axis=-1)


def _certified_mask(labels: np.ndarray, m: int) -> np.ndarray:
    """Free nodes at Chebyshev distance >= m from any non-free node.

    The Chebyshev ball is a cube, so the erosion separates into m single-step
    erosions per axis; array borders count as non-free.
    """
    ok = labels == FREE
    for axis in range(ok.ndim):
        for _ in range(m):
            nxt = ok.copy()
            lo = [slice(None)] * ok.ndim
            hi = [slice(None)] * ok.ndim
            lo[axis] = slice(None, -1)
            hi[axis] = slice(1, None)
            nxt[tuple(lo)] &= ok[tuple(hi)]
            nxt[tuple(hi)] &= ok[tuple(lo)]
            edge = [slice(None)] * ok.ndim
            edge[axis] = 0
            nxt[tuple(edge)] = False
            edge[axis] = -1
            nxt[tuple(edge)] = False
            ok = nxt
    return ok


def pairing_field(field: ScalarField, m: int = 2) -> PairingField:
    """Pairing <grad u, Z> on free nodes >= m layers away from pinned data."""
    if m < 1:
        raise CertificateError("certified margin m must be >= 1")
    cert = _certified_mask(field.mask.labels, m)
    if not cert.any():
        raise CertificateError(f"no certified nodes at margin m={m}")
    grad = full_gradient(field)
    z = dilation_field(field.grid.points())
    pairing = np.einsum("...k,...k->...", grad, z)
    values = np.where(cert, pairing, np.nan)
    return PairingField(grid=field.grid, values=values, certified=cert, margin_layers=m)


def sign_certificate(field: ScalarField, m: int = 2) -> SignCertificate:
    """Uniform negativity certificate for <grad u, Z> on the certified nodes.

    empirical_M is the negated maximum of the pairing; a strictly positive
    value certifies <grad u, Z> <= -empirical_M everywhere it was evaluated.
    The minimum gradient norm is reported alongside because the starshapedness
    argument also needs a nonvanishing full gradient.
    """
    pf = pairing_field(field, m)
    cert = pf.certified
    vals = pf.values[cert]
    k = int(np.argmax(vals))
    worst = field.grid.points()[cert][k]
    grad = full_gradient(field)
    norms = np.linalg.norm(grad[cert], axis=-1)
    emp = -float(vals[k])
    return SignCertificate(
        empirical_M=emp,
        worst_node=worst,
        margin_layers=m,
        min_gradient_norm=float(norms.min()),
        n_certified=int(cert.sum()),
        passed=bool(emp > 0.0),
    )


# Corners of a cell indexed by bx + 2 by + 4 bt; six tetrahedra around the
# main diagonal 0-7, one per axis ordering, tile the cube without ambiguity.
_CORNER_OFFSETS = np.array(
    [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0, 0, 1], [1, 0, 1], [0, 1, 1], [1, 1, 1]]
)
_TETS = ((0, 1, 3, 7), (0, 1, 5, 7), (0, 2, 3, 7), (0, 2, 6, 7), (0, 4, 5, 7), (0, 4, 6, 7))


def _case_triangles(code):
    above = [i for i in range(4) if code >> i & 1]
    below = [i for i in range(4) if not code >> i & 1]
    if len(above) == 1:
        a = above[0]
        return [((a, below[0]), (a, below[1]), (a, below[2]))]
    if len(above) == 3:
        b = below[0]
        return [((b, above[0]), (b, above[1]), (b, above[2]))]
    a0, a1 = above
    b0, b1 = below
    quad = ((a0, b0), (a0, b1), (a1, b1), (a1, b0))
    return [(quad[0], quad[1], quad[2]), (quad[0], quad[2], quad[3])]


_CASES = {code: _case_triangles(code) for code in range(1, 15)}


def extract_level_surface(field: ScalarField, t: float, m: int = 0) -> LevelSurface:
    """Triangulate {u = t} over cells whose corners are all solved nodes.

    Each such cell is split into six tetrahedra sharing the main diagonal;
    crossing edges get one interpolated vertex each, keyed by the node pair
    so shared edges are welded.  Since the data pin u to 1 and 0 outside the
    free region, any level t in (0,1) that the grid resolves is compactly
    contained in the free-cell complex and the mesh closes up; levels inside
    the first node layer produce an empty-surface error instead.  Unit
    normals come from the trilinearly sampled gradient as -grad u/|grad u|,
    and triangle winding is flipped to agree with them.

    m > 0 additionally retreats the complex m node layers away from the
    pinned data, for surfaces meant to stay clear of boundary-layer
    artifacts; the retreating staircase can then clip the mesh open.
    """
    if not 0.0 < t < 1.0:
        raise CertificateError(f"level must lie strictly between the data values, got {t}")
    if m < 0:
        raise CertificateError(f"margin must be >= 0, got {m}")
    cert = _certified_mask(field.mask.labels, m)
    if not cert.any():
        raise CertificateError(f"no certified nodes at margin m={m}")
    cell_ok = cert[:-1, :-1, :-1].copy()
    for dx, dy, dt in _CORNER_OFFSETS[1:]:
        nx, ny, nt = cert.shape
        cell_ok &= cert[dx : nx - 1 + dx, dy : ny - 1 + dy, dt : nt - 1 + dt]
    base = np.argwhere(cell_ok)
    if base.size == 0:
        raise EmptySurfaceError(f"no certified cells for level {t}")

    res = np.asarray(field.grid.resolution)
    strides = np.array([res[1] * res[2], res[2], 1])
    corner_stride = _CORNER_OFFSETS @ strides
    cell_base = base @ strides
    s_flat = field.values.ravel() - t

    edge_a = []
    edge_b = []
    for tet in _TETS:
        nodes = cell_base[:, None] + corner_stride[list(tet)][None, :]
        above = s_flat[nodes] > 0.0
        code = above @ (1 << np.arange(4))
        for c, tris in _CASES.items():
            rows = nodes[code == c]
            if rows.size == 0:
                continue
            for tri in tris:
                for la, lb in tri:
                    edge_a.append(rows[:, la])
                    edge_b.append(rows[:, lb])
    if not edge_a:
        raise EmptySurfaceError(f"level {t} not attained on the certified region")

    ea = np.concatenate(edge_a)
    eb = np.concatenate(edge_b)
    lo = np.minimum(ea, eb)
    hi = np.maximum(ea, eb)
    keys = lo * (res.prod()) + hi
    uniq, inverse = np.unique(keys, return_inverse=True)
    ulo = uniq // res.prod()
    uhi = uniq % res.prod()

    pts = field.grid.points().reshape(-1, 3)
    sa = s_flat[ulo]
    sb = s_flat[uhi]
    w = (sa / (sa - sb))[:, None]
    vertices = pts[ulo] + w * (pts[uhi] - pts[ulo])
    triangles = _fold_triangles(inverse, edge_a)

    grad = full_gradient(field)
    g = np.stack(
        [trilinear_sample(field.grid, grad[..., k], vertices) for k in range(3)], axis=-1
    )
    norms = np.linalg.norm(g, axis=-1)
    if np.any(norms < 1e-14):
        raise CertificateError("vanishing gradient on the extracted surface")
    normals = -g / norms[:, None]

    v0 = vertices[triangles[:, 0]]
    v1 = vertices[triangles[:, 1]]
    v2 = vertices[triangles[:, 2]]
    face_n = np.cross(v1 - v0, v2 - v0)
    mean_n = normals[triangles].mean(axis=1)
    flip = np.einsum("ij,ij->i", face_n, mean_n) < 0.0
    triangles[flip] = triangles[flip][:, ::-1]

    return LevelSurface(level=t, vertices=vertices, normals=normals, triangles=triangles)


def _fold_triangles(inverse, edge_chunks):
    """Rebuild (ntri, 3) vertex ids from the flat edge stream.

    Edges were appended as whole columns (one chunk per triangle corner), so
    the stream is chunk-major rather than triangle-major; reassemble by
    walking chunks in groups of three.
    """
    sizes = [len(c) for c in edge_chunks]
    out = []
    pos = 0
    for k in range(0, len(sizes), 3):
        n = sizes[k]
        tri = np.stack(
            [
                inverse[pos : pos + n],
                inverse[pos + n : pos + 2 * n],
                inverse[pos + 2 * n : pos + 3 * n],
            ],
            axis=-1,
        )
        out.append(tri)
        pos += 3 * n
    return np.concatenate(out, axis=0)


def level_starshape(surface: LevelSurface) -> StarshapednessReport:
    """Min of <nu, Z> over surface vertices; positive means starshaped."""
    pairing = np.einsum("ij,ij->i", surface.normals, dilation_field(surface.vertices))
    k = int(np.argmin(pairing))
    return StarshapednessReport(
        min_pairing=float(pairing[k]),
        argmin_point=surface.vertices[k],
        n_samples=len(surface.vertices),
    )


def dilation_comparison_check(
    field: ScalarField, lam: float, tolerance: float = 0.0, m: int = 2
) -> DilationComparisonReport:
    """Sign check of the dilation difference quotient (u(dilate(z)) - u(z)) / lam.

    The dilated evaluation reuses the resampled field, whose nodes are exact
    preimages of the source lattice, and reads it back at the certified
    source nodes with triquadratic interpolation so the O(h^2) interpolation
    floor does not swamp the quotient for small lam.
    """
    if lam <= 0.0:
        raise CertificateError(f"dilation parameter must be positive, got {lam}")
    cert = _certified_mask(field.mask.labels, m)
    if not cert.any():
        raise CertificateError(f"no certified nodes at margin m={m}")
    shrunk = resample_dilated(field, lam)
    pts = field.grid.points()[cert]
    u_lam = triquadratic_sample(shrunk.grid, shrunk.values, pts)
    q = (u_lam - field.values[cert]) / lam
    k = int(np.argmax(q))
    top = float(q[k])
    return DilationComparisonReport(
        lam=lam,
        max_quotient=top,
        worst_node=pts[k],
        n_certified=int(cert.sum()),
        tolerance=tolerance,
        passed=bool(top < -tolerance),
    )


def export_surface_ply(surface: LevelSurface, path, comments=()) -> None:
    """ASCII PLY with unit normals and the vertex pairing <nu, Z> as a property."""
    pairing = np.einsum("ij,ij->i", surface.normals, dilation_field(surface.vertices))
    lines = ["ply", "format ascii 1.0"]
    for c in comments:
        lines.append("comment " + " ".join(str(c).split()))
    lines += [
        f"element vertex {len(surface.vertices)}",
        "property double x",
        "property double y",
        "property double t",
        "property double nx",
        "property double ny",
        "property double nt",
        "property double pairing",
        f"element face {len(surface.triangles)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    for v, n, s in zip(surface.vertices, surface.normals, pairing):
        lines.append(
            f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g} {n[0]:.17g} {n[1]:.17g} {n[2]:.17g} {s:.17g}"
        )
    for tri in surface.triangles:
        lines.append(f"3 {tri[0]} {tri[1]} {tri[2]}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
