"""Implicit domains and boundary probes for annular capacitary problems.

Domains are the sublevel sets {phi < 0} of smooth defining functions with
analytic Euclidean gradients.  Three closed-form kinds are provided (gauge
balls, an anisotropic gauge family, Euclidean balls) plus exact group
dilations of any of them.  Probes sample the boundary by ray casting and
test the geometric hypotheses behind starshapedness of capacitary level
sets: strict starshapedness with respect to the origin and uniform
interior/exterior gauge-ball conditions.

Probe results are empirical certificates over finite samples, not proofs;
reports carry per-sample data so they can be audited.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    AmbientParams,
    dilate_point,
    dilation_field,
    gauge_norm,
    group_inverse,
    group_product,
)
from .errors import BracketError, DomainError
from .exact import PExponent, _pullback_left_translation

GAUGE_BALL = "gauge_ball"
ANISOTROPIC_GAUGE = "anisotropic_gauge"
EUCLIDEAN_BALL = "euclidean_ball"
DILATED = "dilated"

# |phi| tolerance for projected boundary samples
BOUNDARY_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ImplicitDomain:
    """Bounded open set {phi < 0} with an analytic Euclidean gradient.

    Only the fields relevant to ``kind`` are meaningful: ``center`` for the
    ball kinds, ``anisotropy`` for the anisotropic gauge family, ``base``
    and ``log_scale`` for exact dilations that have no closed-form rescaling.
    """

    kind: str
    radius: float
    params: AmbientParams
    center: np.ndarray | None = None
    anisotropy: float = 1.0
    base: "ImplicitDomain | None" = None
    log_scale: float = 0.0

    def phi(self, z):
        z = np.asarray(z, dtype=float)
        n = self.params.n
        if self.kind == GAUGE_BALL:
            w = group_product(group_inverse(self.center), z)
            s = np.sum(w[..., : 2 * n] ** 2, axis=-1)
            return s * s + w[..., -1] ** 2 - self.radius**4
        if self.kind == ANISOTROPIC_GAUGE:
            s = np.sum(z[..., : 2 * n] ** 2, axis=-1)
            return s * s + self.anisotropy * z[..., -1] ** 2 - self.radius**4
        if self.kind == EUCLIDEAN_BALL:
            return np.sum((z - self.center) ** 2, axis=-1) - self.radius**2
        if self.kind == DILATED:
            return self.base.phi(dilate_point(z, -self.log_scale))
        raise DomainError(f"unknown domain kind {self.kind!r}")

    def grad_phi(self, z):
        z = np.asarray(z, dtype=float)
        n = self.params.n
        if self.kind == GAUGE_BALL:
            w = group_product(group_inverse(self.center), z)
            return _pullback_left_translation(self.center, _quartic_grad(w, n))
        if self.kind == ANISOTROPIC_GAUGE:
            g = _quartic_grad(z, n)
            g[..., -1] *= self.anisotropy
            return g
        if self.kind == EUCLIDEAN_BALL:
            return 2.0 * (z - self.center)
        if self.kind == DILATED:
            g = self.base.grad_phi(dilate_point(z, -self.log_scale))
            lam = self.log_scale
            g[..., : 2 * n] *= math.exp(-lam)
            g[..., -1] *= math.exp(-2.0 * lam)
            return g
        raise DomainError(f"unknown domain kind {self.kind!r}")

    def bounding_box(self) -> np.ndarray:
        """Axis-aligned box guaranteed to contain {phi < 0}, rows (lo, hi)."""
        n = self.params.n
        r = self.radius
        if self.kind == GAUGE_BALL:
            c = self.center
            half = np.full(2 * n + 1, r)
            # group translation shears the t-axis by the center's xy part
            half[-1] = r * r + 2.0 * r * np.sum(np.abs(c[: 2 * n]))
            return np.stack([c - half, c + half])
        if self.kind == ANISOTROPIC_GAUGE:
            half = np.full(2 * n + 1, r)
            half[-1] = r * r / math.sqrt(self.anisotropy)
            return np.stack([-half, half])
        if self.kind == EUCLIDEAN_BALL:
            half = np.full(2 * n + 1, r)
            return np.stack([self.center - half, self.center + half])
        if self.kind == DILATED:
            box = self.base.bounding_box().copy()
            lam = self.log_scale
            box[:, : 2 * n] *= math.exp(lam)
            box[:, -1] *= math.exp(2.0 * lam)
            return box
        raise DomainError(f"unknown domain kind {self.kind!r}")

    def pseudo_distance(self, z):
        """Signed gauge-like excess, negative inside, zero on the boundary.

        Used for solver seeding only; it is not the Carnot distance.
        """
        z = np.asarray(z, dtype=float)
        n = self.params.n
        if self.kind == GAUGE_BALL:
            return gauge_norm(group_product(group_inverse(self.center), z)) - self.radius
        if self.kind == ANISOTROPIC_GAUGE:
            s = np.sum(z[..., : 2 * n] ** 2, axis=-1)
            return (s * s + self.anisotropy * z[..., -1] ** 2) ** 0.25 - self.radius
        if self.kind == EUCLIDEAN_BALL:
            return np.sqrt(np.sum((z - self.center) ** 2, axis=-1)) - self.radius
        if self.kind == DILATED:
            return self.base.pseudo_distance(dilate_point(z, -self.log_scale))
        raise DomainError(f"unknown domain kind {self.kind!r}")


def _quartic_grad(w, n):
    # gradient of (sum x^2+y^2)^2 + t^2 in the group coordinates of w
    s = np.sum(w[..., : 2 * n] ** 2, axis=-1)
    g = np.empty_like(w)
    g[..., : 2 * n] = 4.0 * s[..., None] * w[..., : 2 * n]
    g[..., -1] = 2.0 * w[..., -1]
    return g


def make_gauge_ball(center, R: float, params: AmbientParams | None = None) -> ImplicitDomain:
    """Gauge ball {rho(center^-1 z) < R}, defined through rho^4.

    The quartic form keeps phi smooth at the center, where rho itself has
    a gradient singularity.
    """
    params = params if params is not None else AmbientParams(1)
    if R <= 0:
        raise DomainError(f"gauge ball needs R > 0, got {R}")
    center = np.asarray(center, dtype=float)
    if center.shape != (params.dim,):
        raise DomainError(f"center must have shape ({params.dim},), got {center.shape}")
    return ImplicitDomain(kind=GAUGE_BALL, radius=float(R), params=params, center=center)


def make_anisotropic_gauge(a: float, R: float, params: AmbientParams | None = None) -> ImplicitDomain:
    """Origin-centered set {(sum x^2+y^2)^2 + a t^2 < R^4}; a=1 is the gauge ball."""
    params = params if params is not None else AmbientParams(1)
    if a <= 0 or R <= 0:
        raise DomainError(f"need a > 0 and R > 0, got a={a}, R={R}")
    return ImplicitDomain(kind=ANISOTROPIC_GAUGE, radius=float(R), params=params, anisotropy=float(a))


def make_euclidean_ball(center, R: float, params: AmbientParams | None = None) -> ImplicitDomain:
    params = params if params is not None else AmbientParams(1)
    if R <= 0:
        raise DomainError(f"euclidean ball needs R > 0, got {R}")
    center = np.asarray(center, dtype=float)
    if center.shape != (params.dim,):
        raise DomainError(f"center must have shape ({params.dim},), got {center.shape}")
    return ImplicitDomain(kind=EUCLIDEAN_BALL, radius=float(R), params=params, center=center)


def contains(domain: ImplicitDomain, z) -> np.ndarray | bool:
    """Strict membership phi(z) < 0 (boundary points are outside the open set)."""
    out = domain.phi(z) < 0.0
    return bool(out) if np.ndim(out) == 0 else out


def dilate_domain(domain: ImplicitDomain, lam: float) -> ImplicitDomain:
    """Image of the domain under the group dilation with log-parameter lam.

    Gauge balls and the anisotropic family rescale in closed form; other
    kinds are wrapped with an exact pulled-back defining function.
    """
    lam = float(lam)
    if lam == 0.0:
        return domain
    scale = math.exp(lam)
    if domain.kind == GAUGE_BALL:
        return make_gauge_ball(dilate_point(domain.center, lam), scale * domain.radius, domain.params)
    if domain.kind == ANISOTROPIC_GAUGE:
        # phi(dilate(z,-lam)) = e^{-4 lam} ((sum)^2 + a t^2 - (e^lam R)^4)
        return make_anisotropic_gauge(domain.anisotropy, scale * domain.radius, domain.params)
    if domain.kind == DILATED:
        total = domain.log_scale + lam
        if total == 0.0:
            return domain.base
        return ImplicitDomain(
            kind=DILATED,
            radius=domain.radius * scale,
            params=domain.params,
            base=domain.base,
            log_scale=total,
        )
    return ImplicitDomain(
        kind=DILATED,
        radius=domain.radius * scale,
        params=domain.params,
        base=domain,
        log_scale=lam,
    )


@dataclass(frozen=True)
class BoundarySample:
    point: np.ndarray
    outward_normal: np.ndarray


@dataclass(frozen=True)
class StarshapednessReport:
    min_pairing: float
    argmin_point: np.ndarray
    n_samples: int


@dataclass(frozen=True)
class GaugeBallProbeReport:
    side: str
    radius: float
    worst_violation: float
    passed: bool
    margins: np.ndarray
    n_failed_searches: int
    failed_indices: np.ndarray


@dataclass(frozen=True)
class FlowEntryReport:
    side: str
    radius: float
    min_entry: float
    entries: np.ndarray
    argmin_point: np.ndarray


def _fibonacci_directions(count, dim, rng=None):
    if dim == 3:
        k = np.arange(count, dtype=float)
        # golden-angle spiral on S^2
        zc = 1.0 - (2.0 * k + 1.0) / count
        theta = k * (math.pi * (3.0 - math.sqrt(5.0)))
        if rng is not None:
            theta = theta + rng.uniform(0.0, 2.0 * math.pi)
            zc = np.clip(zc + rng.uniform(-0.5, 0.5, size=count) / count, -1.0, 1.0)
        rad = np.sqrt(1.0 - zc * zc)
        return np.stack([rad * np.cos(theta), rad * np.sin(theta), zc], axis=-1)
    rng = rng if rng is not None else np.random.default_rng(0)
    v = rng.standard_normal((count, dim))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _boundary_arrays(domain: ImplicitDomain, n_samples: int, anchor=None, seed=None):
    """Ray-cast boundary points and analytic unit normals, vectorized."""
    dim = domain.params.dim
    if anchor is None:
        anchor = np.zeros(dim)
    anchor = np.asarray(anchor, dtype=float)
    if domain.phi(anchor) >= 0.0:
        raise DomainError("ray anchor must lie inside the domain")
    rng = np.random.default_rng(seed) if seed is not None else None
    dirs = _fibonacci_directions(n_samples, dim, rng)

    box = domain.bounding_box()
    reach = 2.0 * float(np.max(np.abs(box - anchor)))
    lo = np.zeros(n_samples)
    hi = np.full(n_samples, reach)
    if np.any(domain.phi(anchor + hi[:, None] * dirs) <= 0.0):
        bad = int(np.sum(domain.phi(anchor + hi[:, None] * dirs) <= 0.0))
        raise BracketError(f"{bad} rays failed to exit the domain within the bounding box")
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        inside = domain.phi(anchor + mid[:, None] * dirs) < 0.0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    pts = anchor + hi[:, None] * dirs
    for _ in range(3):
        # Newton projection along grad phi polishes |phi| to roundoff
        g = domain.grad_phi(pts)
        pts = pts - (domain.phi(pts) / np.sum(g * g, axis=-1))[:, None] * g
    resid = np.abs(domain.phi(pts))
    if np.max(resid) > BOUNDARY_TOL:
        raise DomainError(f"boundary projection stalled at |phi| = {np.max(resid):.3e}")
    g = domain.grad_phi(pts)
    normals = g / np.linalg.norm(g, axis=-1, keepdims=True)
    return pts, normals


def boundary_sample(domain: ImplicitDomain, n_samples: int, anchor=None, seed=None):
    """At least n_samples boundary points with outward unit Euclidean normals."""
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    pts, normals = _boundary_arrays(domain, n_samples, anchor=anchor, seed=seed)
    return [BoundarySample(point=p, outward_normal=v) for p, v in zip(pts, normals)]


def starshapedness_report(domain: ImplicitDomain, n_samples: int, seed=None) -> StarshapednessReport:
    """Empirical min of <nu, Z> over the boundary; positive certifies strictness.

    Z is the generator of group dilations, so a positive minimum says every
    boundary normal makes an acute angle with the outward dilation flow.
    """
    origin = np.zeros(domain.params.dim)
    if domain.phi(origin) >= 0.0:
        raise DomainError("starshapedness probe requires the origin inside the domain")
    pts, normals = _boundary_arrays(domain, n_samples, seed=seed)
    pairing = np.sum(normals * dilation_field(pts), axis=-1)
    k = int(np.argmin(pairing))
    return StarshapednessReport(min_pairing=float(pairing[k]), argmin_point=pts[k], n_samples=len(pts))


def _gauge_sphere_point(R, theta, tau):
    # chart of the gauge R-sphere: |w_xy| = R (1-tau^2)^{1/4}, w_t = R^2 tau
    q = R * (1.0 - tau * tau) ** 0.25
    return np.array([q * math.cos(theta), q * math.sin(theta), R * R * tau])


def _ball_normal_at_contact(z, w, R):
    """Outward normal direction of the gauge ball through z with contact chart w.

    The center is c = z w^-1, so c^-1 z = w and the defining gradient at z is
    the quartic gradient at w pulled back through left translation by c.
    """
    c = group_product(z, group_inverse(w))
    g = _pullback_left_translation(c, _quartic_grad(w, 1))
    return c, g


def _tangent_center_search(z, nu, side, R):
    """Find the center of the gauge R-ball tangent to the boundary at z.

    Solves for a contact chart point w on the gauge R-sphere such that the
    ball through z with center z w^-1 has outward normal sigma*nu at z
    (sigma = +1 interior, -1 exterior).  Damped Gauss-Newton on the
    alignment residual augmented with the sphere constraint; seeded by the
    twist-free proportionality solve.  Returns (center, ok).
    """
    sigma = 1.0 if side == "interior" else -1.0
    target = sigma * nu
    nxy = math.hypot(nu[0], nu[1])

    if nxy < 1e-8:
        # polar contact: the chart degenerates, use the axis point directly
        w = np.array([0.0, 0.0, math.copysign(R * R, sigma * nu[2])])
        c, g = _ball_normal_at_contact(z, w, R)
        ghat = g / np.linalg.norm(g)
        return c, bool(np.max(np.abs(ghat - target)) < 1e-7)

    # twist-free seed: drop the translation shear and solve
    # tau/(1-tau^2)^{3/4} = 2 R sigma nu_t / |nu_xy| for tau, theta from nu_xy
    rhs = 2.0 * R * sigma * nu[2] / nxy
    lo, hi = -1.0 + 1e-12, 1.0 - 1e-12
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid / (1.0 - mid * mid) ** 0.75 < rhs:
            lo = mid
        else:
            hi = mid
    tau0 = 0.5 * (lo + hi)
    theta0 = math.atan2(sigma * nu[1], sigma * nu[0])
    w = _gauge_sphere_point(R, theta0, tau0)

    def residual(wv):
        _, g = _ball_normal_at_contact(z, wv, R)
        ghat = g / np.linalg.norm(g)
        s = wv[0] ** 2 + wv[1] ** 2
        con = (s * s + wv[2] ** 2) / R**4 - 1.0
        return np.concatenate([ghat - target, [con]])

    f = residual(w)
    cost = float(f @ f)
    mu = 1e-4
    scale = np.array([R, R, R * R])
    for _ in range(80):
        if math.sqrt(cost) < 1e-9:
            break
        jac = np.empty((4, 3))
        for j in range(3):
            dw = np.zeros(3)
            dw[j] = 1e-7 * scale[j]
            jac[:, j] = (residual(w + dw) - residual(w - dw)) / (2.0 * dw[j])
        a = jac.T @ jac
        rhs_n = -jac.T @ f
        step = None
        for _ in range(25):
            try:
                step = np.linalg.solve(a + mu * np.diag(np.diag(a) + 1e-30), rhs_n)
            except np.linalg.LinAlgError:
                step = None
            if step is not None:
                f_new = residual(w + step)
                cost_new = float(f_new @ f_new)
                if cost_new < cost:
                    break
            mu *= 10.0
        else:
            return None, False
        w = w + step
        f, cost = f_new, cost_new
        mu = max(mu * 0.3, 1e-12)
    if math.sqrt(cost) >= 1e-9:
        return None, False
    # exact sphere projection via dilation before reading off the center
    w = dilate_point(w, math.log(R / gauge_norm(w)))
    c, g = _ball_normal_at_contact(z, w, R)
    ghat = g / np.linalg.norm(g)
    if np.max(np.abs(ghat - target)) > 1e-7:
        return None, False
    return c, True


def gauge_ball_probe(domain: ImplicitDomain, side: str, R: float, n_samples: int, seed=None) -> GaugeBallProbeReport:
    """Test a uniform interior or exterior gauge-ball condition of radius R.

    For each boundary sample a tangent gauge ball on the requested side is
    constructed; the margin is the least gauge excess of every other
    boundary sample over that ball.  Negative margins beyond tolerance, or
    center-search failures, fail the probe.  This is a falsifiable check
    over finite samples, not a proof.
    """
    if side not in ("interior", "exterior"):
        raise DomainError(f"side must be 'interior' or 'exterior', got {side!r}")
    if R <= 0:
        raise DomainError(f"probe radius must be positive, got {R}")
    if domain.params.n != 1:
        raise DomainError("gauge ball probe is implemented for n = 1 only")
    pts, normals = _boundary_arrays(domain, n_samples, seed=seed)
    count = len(pts)
    margins = np.full(count, np.inf)
    failed = []
    for i in range(count):
        c, ok = _tangent_center_search(pts[i], normals[i], side, R)
        if ok:
            # tangent ball must sit on the requested side of the boundary
            side_val = domain.phi(c)
            ok = side_val < 0.0 if side == "interior" else side_val > 0.0
        if not ok:
            failed.append(i)
            margins[i] = -np.inf
            continue
        d = gauge_norm(group_product(group_inverse(c), pts))
        d[i] = np.inf  # the contact point itself sits at distance R
        margins[i] = float(np.min(d) - R)
    worst = float(np.min(margins)) if count else np.inf
    passed = len(failed) == 0 and worst >= -1e-6
    return GaugeBallProbeReport(
        side=side,
        radius=float(R),
        worst_violation=worst,
        passed=passed,
        margins=margins,
        n_failed_searches=len(failed),
        failed_indices=np.asarray(failed, dtype=int),
    )


def flow_entry_check(domain: ImplicitDomain, side: str, R: float, n_samples: int, seed=None) -> FlowEntryReport:
    """Largest dilation parameter that keeps each sample inside its tangent ball.

    On the exterior side the sample is dilated outward, on the interior side
    inward; entry for some positive parameter is the discrete counterpart of
    the continuity of tangency radii along the dilation flow.  Entries are
    capped at 1.
    """
    probe = gauge_ball_probe(domain, side, R, n_samples, seed=seed)
    if not probe.passed:
        raise DomainError(f"gauge ball probe failed for side={side}, R={R}; flow entry undefined")
    pts, normals = _boundary_arrays(domain, n_samples, seed=seed)
    sigma = -1.0 if side == "interior" else 1.0
    entries = np.empty(len(pts))
    for i, (z, nu) in enumerate(zip(pts, normals)):
        c, ok = _tangent_center_search(z, nu, side, R)
        if not ok:
            raise DomainError(f"tangent search failed at sample {i} after a passing probe")
        cinv = group_inverse(c)

        def gap(lam):
            return gauge_norm(group_product(cinv, dilate_point(z, sigma * lam))) - R

        lam_lo = 1e-4
        if gap(lam_lo) >= 0.0:
            entries[i] = 0.0
            continue
        grid = np.linspace(lam_lo, 1.0, 97)
        exit_at = None
        for lam in grid[1:]:
            if gap(lam) >= 0.0:
                exit_at = lam
                break
            lam_lo = lam
        if exit_at is None:
            entries[i] = 1.0
            continue
        lo, hi = lam_lo, exit_at
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if gap(mid) < 0.0:
                lo = mid
            else:
                hi = mid
        entries[i] = lo
    k = int(np.argmin(entries))
    return FlowEntryReport(
        side=side,
        radius=float(R),
        min_entry=float(entries[k]),
        entries=entries,
        argmin_point=pts[k],
    )


@dataclass(frozen=True, eq=False)
class AnnulusProblem:
    """Capacitary Dirichlet data: u = 1 on the closed inner set, 0 outside the outer one.

    The inner closure must sit strictly inside the outer set; this is
    verified on boundary samples at construction.
    """

    inner: ImplicitDomain
    outer: ImplicitDomain
    p: PExponent
    params: AmbientParams = field(default_factory=lambda: AmbientParams(1))

    def __post_init__(self):
        if self.inner.params.n != self.params.n or self.outer.params.n != self.params.n:
            raise DomainError("domain and problem ambient parameters disagree")
        origin = np.zeros(self.params.dim)
        if self.inner.phi(origin) >= 0.0:
            raise DomainError("the inner domain must contain the origin")
        pts, _ = _boundary_arrays(self.inner, 128)
        margin = float(np.max(self.outer.phi(pts)))
        if margin >= 0.0:
            raise DomainError(f"inner boundary is not strictly inside the outer domain (max phi = {margin:.3e})")
