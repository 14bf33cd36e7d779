"""Closed-form p-harmonic potentials built from powers of the gauge.

For exponent p in (1, inf) and homogeneous dimension Q, the function
rho^(-(Q-p)/(p-1)) of the gauge distance from a pole w is p-harmonic for
the horizontal p-Laplacian away from w; at the critical exponent p = Q the
power degenerates and log(rho) takes its place.  Everything else in this
module (annulus model potentials, radial barriers) is an affine combination
of those two profiles, normalised to prescribed boundary values.

These functions are the oracles the discrete solver is tested against, so
they are written for pointwise accuracy rather than speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    AmbientParams,
    _as_points,
    _split,
    gauge_norm,
    gauge_norm_gradient,
    group_inverse,
    group_product,
)
from .errors import HeiscapError, SingularityError

CRITICAL_TOL = 1e-12
# evaluating gauge powers closer to the pole than this is refused
POLE_TOL = 1e-12


@dataclass(frozen=True)
class PExponent:
    """Integrability exponent p > 1 with its derived radial decay rate."""

    p: float

    def __post_init__(self):
        if not (self.p > 1.0):
            raise HeiscapError(f"exponent must satisfy p > 1, got {self.p}")

    def is_critical(self, params: AmbientParams) -> bool:
        """Whether p equals the homogeneous dimension Q (log profile)."""
        return abs(self.p - params.homogeneous_dim) <= CRITICAL_TOL

    def radial_exponent(self, params: AmbientParams) -> float:
        """k = (Q - p)/(p - 1); the fundamental profile is rho^(-k).

        Negative for p > Q, in which case rho^(-k) grows with rho.
        """
        return (params.homogeneous_dim - self.p) / (self.p - 1.0)


def _gauge_from_pole(w, z):
    """rho(w^-1 z), refusing evaluation at the pole itself."""
    rho = gauge_norm(group_product(group_inverse(w), z))
    if np.any(rho < POLE_TOL):
        raise SingularityError("evaluation at the pole of the fundamental profile")
    return rho


def fundamental_solution(w, p: PExponent, params: AmbientParams, z) -> np.ndarray:
    """Radial p-harmonic profile around pole w: rho^(-k), or log rho when p = Q.

    Normalisation constants are omitted; only the profile matters for the
    boundary-value constructions downstream.
    """
    rho = _gauge_from_pole(w, z)
    if p.is_critical(params):
        return np.log(rho)
    return rho ** (-p.radial_exponent(params))


def fundamental_solution_gradient(w, p: PExponent, params: AmbientParams, z) -> np.ndarray:
    """Euclidean gradient of the fundamental profile, by the chain rule.

    The map z -> w^-1 z is affine with constant Jacobian J (the twist rows
    depend only on w), so the gradient is J^T applied to the radial gradient
    at u = w^-1 z.
    """
    w = _as_points(w)
    z = _as_points(z)
    u = group_product(group_inverse(w), z)
    rho = gauge_norm(u)
    if np.any(rho < POLE_TOL):
        raise SingularityError("gradient at the pole of the fundamental profile")
    grad_rho_u = gauge_norm_gradient(u)
    if p.is_critical(params):
        radial = 1.0 / rho
    else:
        k = p.radial_exponent(params)
        radial = -k * rho ** (-k - 1.0)
    g_u = radial[..., None] * grad_rho_u
    return _pullback_left_translation(w, g_u)


def _pullback_left_translation(w, grad_u) -> np.ndarray:
    """Apply the transpose Jacobian of z -> w^-1 z to a gradient in u-coordinates.

    With u_t = z_t - w_t + 2 sum(w_x z_y - w_y z_x), the only off-diagonal
    entries are du_t/dz_x = -2 w_y and du_t/dz_y = +2 w_x.
    """
    wx, wy, _ = _split(np.asarray(w, dtype=float))
    gx, gy, gt = _split(grad_u)
    n = grad_u.shape[-1] // 2
    out = np.empty(np.broadcast_shapes(grad_u.shape, np.asarray(w).shape))
    out[..., :n] = gx - 2.0 * wy * gt[..., None]
    out[..., n : 2 * n] = gy + 2.0 * wx * gt[..., None]
    out[..., -1] = gt
    return out


@dataclass(frozen=True)
class ModelPotentialSpec:
    """Concentric gauge annulus r < rho < R with data 1 inside, 0 outside."""

    r: float
    R: float
    p: PExponent
    params: AmbientParams = field(default_factory=lambda: AmbientParams(1))

    def __post_init__(self):
        if not (0.0 < self.r < self.R):
            raise HeiscapError(f"need 0 < r < R, got r={self.r}, R={self.R}")


def model_potential(spec: ModelPotentialSpec, z) -> np.ndarray:
    """Capacitary potential of the concentric gauge annulus.

    (rho^-k - R^-k) / (r^-k - R^-k) for p != Q, and log(R/rho)/log(R/r) at
    the critical exponent.  Equals 1 at rho = r and 0 at rho = R, strictly
    decreasing in rho in between for every p > 1.
    """
    rho = gauge_norm(z)
    if np.any(rho < POLE_TOL):
        raise SingularityError("model potential evaluated at the group origin")
    if spec.p.is_critical(spec.params):
        return np.log(spec.R / rho) / math.log(spec.R / spec.r)
    k = spec.p.radial_exponent(spec.params)
    return (rho ** (-k) - spec.R ** (-k)) / (spec.r ** (-k) - spec.R ** (-k))


def model_potential_gradient(spec: ModelPotentialSpec, z) -> np.ndarray:
    """Euclidean gradient u'(rho) grad(rho) of the model potential."""
    rho = gauge_norm(z)
    if np.any(rho < POLE_TOL):
        raise SingularityError("model gradient at the group origin")
    return model_radial_slope(spec, rho)[..., None] * gauge_norm_gradient(z)


def model_radial_slope(spec: ModelPotentialSpec, rho) -> np.ndarray:
    """du/drho for the model potential at gauge radius rho (negative)."""
    rho = np.asarray(rho, dtype=float)
    if spec.p.is_critical(spec.params):
        return -1.0 / (rho * math.log(spec.R / spec.r))
    k = spec.p.radial_exponent(spec.params)
    return -k * rho ** (-k - 1.0) / (spec.r ** (-k) - spec.R ** (-k))


def model_dilation_pairing(spec: ModelPotentialSpec, rho) -> np.ndarray:
    """<grad u, dilation_field> on the level rho, which is u'(rho) * rho.

    Strictly negative on the closed annulus; its least-negative value is the
    uniform margin certified by the discrete pipeline.
    """
    rho = np.asarray(rho, dtype=float)
    return model_radial_slope(spec, rho) * rho


def model_min_pairing_magnitude(spec: ModelPotentialSpec) -> float:
    """min over r <= rho <= R of |u'(rho) rho| (the exact certificate margin).

    |u' rho| is monotone in rho, so the minimum sits at rho = R for p < Q,
    at rho = r for p > Q, and is constant 1/log(R/r) at p = Q.
    """
    if spec.p.is_critical(spec.params):
        return 1.0 / math.log(spec.R / spec.r)
    k = spec.p.radial_exponent(spec.params)
    edge = spec.R if k > 0 else spec.r
    return float(abs(model_dilation_pairing(spec, edge)))


def model_level_radius(spec: ModelPotentialSpec, value: float) -> float:
    """Gauge radius of the level set {u = value} for 0 < value < 1."""
    if not (0.0 < value < 1.0):
        raise HeiscapError(f"level must lie in (0, 1), got {value}")
    if spec.p.is_critical(spec.params):
        return spec.R * (spec.r / spec.R) ** value
    k = spec.p.radial_exponent(spec.params)
    pk = value * (spec.r ** (-k) - spec.R ** (-k)) + spec.R ** (-k)
    return float(pk ** (-1.0 / k))


@dataclass(frozen=True)
class BarrierSpec:
    """Radial comparison barrier on the shell R/2 <= rho(center^-1 z) <= R.

    Normalised to 1 on the inner sphere rho = R/2 and 0 on rho = R.  The
    side tag records whether it is meant to sit above or below a potential
    in a comparison argument; the profile itself is the same.
    """

    center: tuple
    R: float
    side: str
    p: PExponent
    params: AmbientParams
    alpha: float
    beta: float


def make_barrier(center, R: float, side: str, p: PExponent,
                 params: AmbientParams | None = None) -> BarrierSpec:
    """Solve the two normalisation conditions for the barrier coefficients.

    p != Q:  v = alpha rho^-k + beta with alpha = R^k/(2^k - 1),
             beta = -1/(2^k - 1).
    p == Q:  v = alpha log(rho) + beta with alpha = -1/log 2,
             beta = log(R)/log 2.
    """
    if params is None:
        params = AmbientParams(1)
    if side not in ("interior", "exterior"):
        raise HeiscapError(f"side must be 'interior' or 'exterior', got {side!r}")
    if R <= 0:
        raise HeiscapError(f"barrier radius must be positive, got {R}")
    center = tuple(float(c) for c in np.asarray(center, dtype=float))
    if len(center) != params.dim:
        raise HeiscapError("barrier center has the wrong dimension")
    if p.is_critical(params):
        alpha = -1.0 / math.log(2.0)
        beta = math.log(R) / math.log(2.0)
    else:
        k = p.radial_exponent(params)
        denom = 2.0 ** k - 1.0
        alpha = R ** k / denom
        beta = -1.0 / denom
    return BarrierSpec(center, R, side, p, params, alpha, beta)


def eval_barrier(spec: BarrierSpec, z) -> np.ndarray:
    """Evaluate the barrier; clamped to 1 inside the half-radius sphere."""
    rho = gauge_norm(group_product(group_inverse(np.asarray(spec.center)), _as_points(z)))
    out = np.empty(np.shape(rho))
    inner = rho < spec.R / 2.0
    shell = ~inner
    rho_s = np.where(shell, rho, spec.R)  # dummy value under the clamp
    if spec.p.is_critical(spec.params):
        vals = spec.alpha * np.log(rho_s) + spec.beta
    else:
        k = spec.p.radial_exponent(spec.params)
        vals = spec.alpha * rho_s ** (-k) + spec.beta
    out[...] = np.where(inner, 1.0, vals)
    if out.ndim == 0:
        return float(out)
    return out
