"""Heisenberg group algebra on R^(2n+1).

Points are numpy arrays whose last axis holds (x_1..x_n, y_1..y_n, t).
All operations broadcast over leading axes, so a single point of shape
(3,) and a batch of shape (N, 3) go through the same code paths.

Conventions used throughout the package:

* group product   (x,y,t)*(x~,y~,t~) = (x+x~, y+y~, t+t~ + 2*sum(x~_i y_i - x_i y~_i))
* gauge norm      rho(z) = ((sum x_i^2+y_i^2)^2 + t^2)^(1/4)
* dilations       delta_lam(x,y,t) = (e^lam x, e^lam y, e^(2lam) t)

The t-component of the product is the antisymmetric pairing that makes the
left-invariant horizontal frame come out as X_i = d/dx_i + 2 y_i d/dt and
Y_j = d/dy_j - 2 x_j d/dt, with [X_1, Y_1] = -4 d/dt.  The homogeneous
dimension is Q = 2n + 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class AmbientParams:
    """Group dimension bookkeeping: n copies of the (x, y) pair plus t."""

    n: int

    def __post_init__(self):
        if not isinstance(self.n, int) or self.n < 1:
            raise DimensionError(f"n must be a positive integer, got {self.n!r}")

    @property
    def dim(self) -> int:
        return 2 * self.n + 1

    @property
    def homogeneous_dim(self) -> int:
        """Q = 2n + 2, the scaling exponent of the Haar volume under dilations."""
        return 2 * self.n + 2


def ambient_from_dim(dim: int) -> AmbientParams:
    """Recover AmbientParams from an array's last-axis length."""
    if dim < 3 or dim % 2 == 0:
        raise DimensionError(f"point dimension must be odd and >= 3, got {dim}")
    return AmbientParams((dim - 1) // 2)


def _as_points(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim == 0 or z.shape[-1] < 3 or z.shape[-1] % 2 == 0:
        raise DimensionError(f"expected last axis of odd length >= 3, got shape {z.shape}")
    return z


def _split(z: np.ndarray):
    n = (z.shape[-1] - 1) // 2
    return z[..., :n], z[..., n : 2 * n], z[..., -1]


def origin(n: int = 1) -> np.ndarray:
    return np.zeros(2 * n + 1)


def group_product(a, b) -> np.ndarray:
    """Group product a * b; the t-components pick up the symplectic twist."""
    a = _as_points(a)
    b = _as_points(b)
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"mixed dimensions {a.shape[-1]} and {b.shape[-1]}")
    ax, ay, at = _split(a)
    bx, by, bt = _split(b)
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    n = (a.shape[-1] - 1) // 2
    out[..., :n] = ax + bx
    out[..., n : 2 * n] = ay + by
    out[..., -1] = at + bt + 2.0 * np.sum(bx * ay - ax * by, axis=-1)
    return out


def group_inverse(a) -> np.ndarray:
    """Inverse is plain negation; the twist term cancels itself."""
    return -_as_points(a)


def gauge_norm(z) -> np.ndarray:
    """Quartic gauge rho(z) = ((|x|^2+|y|^2)^2 + t^2)^(1/4)."""
    z = _as_points(z)
    x, y, t = _split(z)
    s = np.sum(x * x + y * y, axis=-1)
    return (s * s + t * t) ** 0.25


def gauge_distance(z, w) -> np.ndarray:
    """Left-invariant quasidistance rho(w^-1 * z)."""
    return gauge_norm(group_product(group_inverse(w), z))


def dilate_point(z, lam: float) -> np.ndarray:
    """Anisotropic dilation with log-parameter lam: xy scale by e^lam, t by e^(2 lam)."""
    z = _as_points(z)
    out = z * np.exp(lam)
    out[..., -1] = z[..., -1] * np.exp(2.0 * lam)
    return out


def dilation_field(z) -> np.ndarray:
    """Generator of the dilation flow: d/dlam delta_lam(z) at lam=0, i.e. (x, y, 2t).

    The flow identity d/dlam delta_lam(z) = field(delta_lam(z)) holds for all
    lam because the field is itself homogeneous under the dilations.
    """
    z = _as_points(z)
    out = z.copy()
    out[..., -1] = 2.0 * z[..., -1]
    return out


def horizontal_frame(z) -> np.ndarray:
    """Left-invariant horizontal frame at z, stacked as rows (X_1..X_n, Y_1..Y_n).

    Returns shape (..., 2n, 2n+1).  Row i is X_i = e_{x_i} + 2 y_i e_t and
    row n+j is Y_j = e_{y_j} - 2 x_j e_t.
    """
    z = _as_points(z)
    n = (z.shape[-1] - 1) // 2
    x, y, _ = _split(z)
    frame = np.zeros(z.shape[:-1] + (2 * n, 2 * n + 1))
    idx = np.arange(n)
    frame[..., idx, idx] = 1.0
    frame[..., n + idx, n + idx] = 1.0
    frame[..., idx, -1] = 2.0 * y
    frame[..., n + idx, -1] = -2.0 * x
    return frame


def project_horizontal(grad, z) -> np.ndarray:
    """Pair a full (Euclidean) gradient with the horizontal frame at z.

    Component i is grad . X_i(z), component n+j is grad . Y_j(z); together
    they form the horizontal gradient of the function whose gradient was
    supplied.  Returns shape (..., 2n).
    """
    grad = _as_points(grad)
    z = _as_points(z)
    if grad.shape[-1] != z.shape[-1]:
        raise DimensionError("gradient and point dimensions differ")
    n = (z.shape[-1] - 1) // 2
    x, y, _ = _split(z)
    gx, gy, gt = _split(grad)
    return np.concatenate(
        [gx + 2.0 * y * gt[..., None], gy - 2.0 * x * gt[..., None]], axis=-1
    )


def gauge_quartic_gradient(z) -> np.ndarray:
    """Euclidean gradient of rho^4: (4 s x, 4 s y, 2 t) with s = |x|^2 + |y|^2.

    Polynomial everywhere, which is why domains prefer rho^4 over rho as a
    defining function.
    """
    z = _as_points(z)
    x, y, t = _split(z)
    s = np.sum(x * x + y * y, axis=-1)[..., None]
    n = (z.shape[-1] - 1) // 2
    out = np.empty(z.shape)
    out[..., :n] = 4.0 * s * x
    out[..., n : 2 * n] = 4.0 * s * y
    out[..., -1] = 2.0 * z[..., -1]
    return out


def gauge_norm_gradient(z) -> np.ndarray:
    """Euclidean gradient of rho away from the pole: grad(rho^4) / (4 rho^3).

    Satisfies the radial pairing identity <grad rho, dilation_field> = rho.
    """
    z = _as_points(z)
    rho = gauge_norm(z)
    if np.any(rho < 1e-14):
        from .errors import SingularityError

        raise SingularityError("gauge gradient requested at the pole")
    return gauge_quartic_gradient(z) / (4.0 * rho[..., None] ** 3)
