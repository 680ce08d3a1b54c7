"""Lorentz-model geometry on the curvature-``c`` hyperboloid.

Points are plain float64 arrays whose last axis has length ``D + 1``: index 0
is the time coordinate ``x0`` and ``x[..., 1:]`` is the spatial part. All
functions broadcast over leading axes.

Functions that sit on a training gradient path come with a ``*_vjp``
companion returning vector-Jacobian products with respect to their array
inputs, so that loss gradients can be assembled by hand without an autodiff
framework.
"""

from __future__ import annotations

import numpy as np

ANGLE_EPS = 1e-12
MANIFOLD_TOL = 1e-9
ORIGIN_TOL = 1e-9
SEGMENT_TOL = 1e-12


class GeometryError(ValueError):
    """Raised when an input violates a geometric precondition."""


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] < 2:
        raise GeometryError(f"expected (..., D+1) array with D >= 1, got shape {x.shape}")
    return x


def _check_curvature(c: float) -> float:
    c = float(c)
    if not c > 0.0 or not np.isfinite(c):
        raise GeometryError(f"curvature must be positive and finite, got {c}")
    return c


def origin(dim: int, c: float = 1.0) -> np.ndarray:
    """The hyperboloid origin ``(1/sqrt(c), 0, ..., 0)`` in ``R^(dim+1)``."""
    c = _check_curvature(c)
    o = np.zeros(dim + 1)
    o[0] = 1.0 / np.sqrt(c)
    return o


def lorentz_inner(x, y) -> np.ndarray:
    """Minkowski inner product ``-x0*y0 + <x_space, y_space>``."""
    x = _as_points(x)
    y = _as_points(y)
    if x.shape[-1] != y.shape[-1]:
        raise GeometryError(f"dimension mismatch: {x.shape[-1]} vs {y.shape[-1]}")
    return -x[..., 0] * y[..., 0] + np.einsum("...i,...i->...", x[..., 1:], y[..., 1:])


def manifold_residual(x, c: float = 1.0) -> np.ndarray:
    """``|c<x,x>_L + 1|``; zero for points on the hyperboloid."""
    return np.abs(c * lorentz_inner(x, x) + 1.0)


def check_on_manifold(x, c: float = 1.0, tol: float = MANIFOLD_TOL) -> np.ndarray:
    x = _as_points(x)
    # Relative to the scale of the point: far-out points lose absolute precision.
    scale = np.maximum(1.0, c * x[..., 0] ** 2)
    if np.any(manifold_residual(x, c) > tol * scale) or np.any(x[..., 0] <= 0):
        raise GeometryError("point is not on the upper sheet of the hyperboloid")
    return x


def project_to_hyperboloid(u, c: float = 1.0) -> np.ndarray:
    """Lift a tangent parameter ``u`` to ``(sqrt(1/c + |u|^2), u)``."""
    c = _check_curvature(c)
    u = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(u)):
        raise GeometryError("non-finite tangent parameter")
    x0 = np.sqrt(1.0 / c + np.einsum("...i,...i->...", u, u))
    return np.concatenate([x0[..., None], u], axis=-1)


def projector_vjp(x, g_x) -> np.ndarray:
    """Pull a gradient on ``x = project_to_hyperboloid(u, c)`` back to ``u``.

    Takes the lifted point itself (``u`` is ``x[..., 1:]``), which already
    carries the curvature through ``x0``.
    """
    x = np.asarray(x, dtype=np.float64)
    g_x = np.asarray(g_x, dtype=np.float64)
    return g_x[..., 1:] + (g_x[..., 0] / x[..., 0])[..., None] * x[..., 1:]


def geodesic_distance(x, y, c: float = 1.0, check: bool = True) -> np.ndarray:
    """Geodesic distance ``arccosh(-c<x,y>_L) / sqrt(c)``.

    Evaluated as ``2 asinh(sqrt(c) |x - y|_L / 2) / sqrt(c)``, which equals the
    arccosh form on the hyperboloid but stays exact for coincident points.
    """
    c = _check_curvature(c)
    x = _as_points(x)
    y = _as_points(y)
    if check:
        check_on_manifold(x, c)
        check_on_manifold(y, c)
    diff = x - y
    sq = np.maximum(lorentz_inner(diff, diff), 0.0)
    return 2.0 * np.arcsinh(np.sqrt(c * sq) / 2.0) / np.sqrt(c)


def geodesic_distance_vjp(x, y, g, c: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``geodesic_distance`` with respect to ``x`` and ``y``.

    The derivative is singular at ``x == y``; there it is reported as zero.
    """
    x = _as_points(x)
    y = _as_points(y)
    z = -c * lorentz_inner(x, y)
    zz = z * z - 1.0
    safe = zz > ANGLE_EPS
    dz = np.where(safe, np.asarray(g) / (np.sqrt(c) * np.sqrt(np.where(safe, zz, 1.0))), 0.0)
    # dz/dx = -c * J y, J = diag(-1, 1, ..., 1)
    jy = y.copy()
    jy[..., 0] = -jy[..., 0]
    jx = x.copy()
    jx[..., 0] = -jx[..., 0]
    return (-c * dz)[..., None] * jy, (-c * dz)[..., None] * jx


def klein_map(x) -> np.ndarray:
    """Klein coordinates ``x_space / x0`` (inside the open unit ball)."""
    x = _as_points(x)
    return x[..., 1:] / x[..., :1]


def klein_map_vjp(x, g_k) -> np.ndarray:
    x = _as_points(x)
    k = x[..., 1:] / x[..., :1]
    g_x0 = -np.einsum("...i,...i->...", g_k, k) / x[..., 0]
    return np.concatenate([g_x0[..., None], g_k / x[..., :1]], axis=-1)


def klein_inverse(k, c: float = 1.0) -> np.ndarray:
    """Map Klein coordinates back to the hyperboloid."""
    c = _check_curvature(c)
    k = np.asarray(k, dtype=np.float64)
    n2 = np.einsum("...i,...i->...", k, k)
    if np.any(n2 >= 1.0):
        raise GeometryError("Klein point must lie strictly inside the unit ball")
    x0 = 1.0 / np.sqrt(c * (1.0 - n2))
    return np.concatenate([x0[..., None], x0[..., None] * k], axis=-1)


def klein_inverse_vjp(k, g_x, c: float = 1.0) -> np.ndarray:
    k = np.asarray(k, dtype=np.float64)
    n2 = np.einsum("...i,...i->...", k, k)
    x0 = 1.0 / np.sqrt(c * (1.0 - n2))
    g0 = g_x[..., 0] + np.einsum("...i,...i->...", g_x[..., 1:], k)
    # d x0 / d k = c * x0^3 * k
    return x0[..., None] * g_x[..., 1:] + (g0 * c * x0**3)[..., None] * k


def lorentz_factor(x) -> np.ndarray:
    """``gamma(x) = (1 - |klein(x)|^2)^(-1/2)``."""
    k = klein_map(x)
    return 1.0 / np.sqrt(1.0 - np.einsum("...i,...i->...", k, k))


def einstein_midpoint(points, c: float = 1.0) -> np.ndarray:
    """Gamma-weighted Klein-coordinate mean, mapped back to the hyperboloid.

    ``points`` has shape ``(n, D+1)``; the result has shape ``(D+1,)``.
    """
    points = _as_points(points)
    if points.ndim != 2 or points.shape[0] == 0:
        raise GeometryError("einstein_midpoint needs a nonempty (n, D+1) array")
    k = klein_map(points)
    gamma = lorentz_factor(points)
    mean_k = (gamma[:, None] * k).sum(axis=0) / gamma.sum()
    return klein_inverse(mean_k, c)


def einstein_midpoint_vjp(points, g_out, c: float = 1.0) -> np.ndarray:
    """Gradient of ``einstein_midpoint`` with respect to every input point.

    On the hyperboloid ``gamma(x) * klein(x) = sqrt(c) * x_space`` and
    ``gamma(x) = sqrt(c) * x0``, so the Klein mean equals
    ``sum(x_space) / sum(x0)``; the derivative below uses that identity.
    """
    points = _as_points(points)
    total0 = points[:, 0].sum()
    m = points[:, 1:].sum(axis=0) / total0
    g_m = klein_inverse_vjp(m, g_out, c)
    g_space = np.broadcast_to(g_m / total0, points[:, 1:].shape)
    g_time = np.full(points.shape[0], -(g_m @ m) / total0)
    return np.concatenate([g_time[:, None], g_space], axis=1)


def _angle_parts(p, s, c):
    a = c * lorentz_inner(p, s)
    num = s[..., 0] + p[..., 0] * a
    rho = np.sqrt(np.einsum("...i,...i->...", p[..., 1:], p[..., 1:]))
    m_raw = a * a - 1.0
    m = np.maximum(m_raw, ANGLE_EPS)
    den = rho * np.sqrt(m)
    return a, num, rho, m_raw, m, den


def exterior_angle(p, s, c: float = 1.0) -> np.ndarray:
    """Exterior angle at ``p`` of the triangle (origin, ``p``, ``s``).

    This is ``pi`` minus the interior angle at ``p``: it is 0 when ``s`` lies
    on the geodesic ray from the origin through ``p`` beyond ``p``, and ``pi``
    when ``s`` lies between the origin and ``p``. For ``s == p`` the value is
    whatever the clamped formula yields (``pi/2`` up to round-off).
    """
    c = _check_curvature(c)
    p = _as_points(p)
    s = _as_points(s)
    _, num, rho, _, _, den = _angle_parts(p, s, c)
    if np.any(rho <= ORIGIN_TOL):
        raise GeometryError("degenerate reference: p is at the origin")
    return np.arccos(np.clip(num / den, -1.0, 1.0))


def exterior_angle_vjp(p, s, g, c: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``exterior_angle`` with respect to ``p`` and ``s``."""
    p = _as_points(p)
    s = _as_points(s)
    p, s = np.broadcast_arrays(p, s)
    a, num, rho, m_raw, m, den = _angle_parts(p, s, c)
    r = num / den
    inside = np.abs(r) < 1.0
    g_r = np.where(inside, -np.asarray(g) / np.sqrt(np.where(inside, 1.0 - r * r, 1.0)), 0.0)
    g_num = g_r / den
    g_rho = -g_r * r / rho
    g_m = np.where(m_raw > ANGLE_EPS, -g_r * r / (2.0 * m), 0.0)
    g_a = g_num * p[..., 0] + g_m * 2.0 * a

    js = s.copy()
    js[..., 0] = -js[..., 0]
    jp = p.copy()
    jp[..., 0] = -jp[..., 0]
    g_p = (c * g_a)[..., None] * js
    g_s = (c * g_a)[..., None] * jp
    g_s[..., 0] += g_num
    g_p[..., 0] += g_num * a
    g_p[..., 1:] += (g_rho / rho)[..., None] * p[..., 1:]
    return g_p, g_s


def log_map_origin(x, c: float = 1.0) -> np.ndarray:
    """Logarithmic map at the origin: direction of ``x_space`` scaled to
    the geodesic distance from the origin."""
    c = _check_curvature(c)
    x = _as_points(x)
    norm = np.linalg.norm(x[..., 1:], axis=-1)
    # d(O, x) = arcsinh(sqrt(c) |x_space|) / sqrt(c); stable near the origin.
    dist = np.arcsinh(np.sqrt(c) * norm) / np.sqrt(c)
    scale = np.divide(dist, norm, out=np.zeros_like(norm), where=norm > 0)
    return scale[..., None] * x[..., 1:]


def lca_depth_surrogate(p_i, p_j, c: float = 1.0) -> np.ndarray:
    """Distance from the origin to the point of the Klein segment
    ``[klein(p_i), klein(p_j)]`` closest to the origin.

    Equal to ``arccosh((1 - |k|^2)^(-1/2)) / sqrt(c)`` at that point ``k``;
    evaluated as ``artanh(|k|) / sqrt(c)``, which is the same quantity without
    the cancellation of ``arccosh`` near 1.
    """
    c = _check_curvature(c)
    k_hat = _closest_segment_point(klein_map(p_i), klein_map(p_j))[0]
    return np.arctanh(np.linalg.norm(k_hat, axis=-1)) / np.sqrt(c)


def _closest_segment_point(k_i, k_j):
    k_i, k_j = np.broadcast_arrays(k_i, k_j)
    delta = k_j - k_i
    dd = np.einsum("...i,...i->...", delta, delta)
    degenerate = dd <= SEGMENT_TOL**2
    safe_dd = np.where(degenerate, 1.0, dd)
    t_raw = -np.einsum("...i,...i->...", k_i, delta) / safe_dd
    t = np.where(degenerate, 0.0, np.clip(t_raw, 0.0, 1.0))
    k_hat = k_i + t[..., None] * delta
    return k_hat, t, t_raw, delta, safe_dd, degenerate


def lca_depth_surrogate_vjp(p_i, p_j, g, c: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``lca_depth_surrogate`` with respect to both endpoints.

    The surrogate is not differentiable where the closest point is the
    origin itself; the gradient is reported as zero there.
    """
    k_i = klein_map(p_i)
    k_j = klein_map(p_j)
    k_hat, t, t_raw, delta, dd, degenerate = _closest_segment_point(k_i, k_j)
    nk = np.linalg.norm(k_hat, axis=-1)
    safe = nk > 0
    coef = np.where(safe, np.asarray(g) / (np.sqrt(c) * np.where(safe, nk, 1.0) * (1.0 - nk * nk)), 0.0)
    g_khat = coef[..., None] * k_hat

    free = (t_raw > 0.0) & (t_raw < 1.0) & ~degenerate
    g_t = np.where(free, np.einsum("...i,...i->...", g_khat, delta), 0.0)
    # t = -k_i.delta / |delta|^2
    g_delta = t[..., None] * g_khat + g_t[..., None] * (-k_i / dd[..., None] - 2.0 * t[..., None] * delta / dd[..., None])
    g_ki = g_khat + g_t[..., None] * (-delta / dd[..., None]) - g_delta
    g_kj = g_delta
    return klein_map_vjp(p_i, g_ki), klein_map_vjp(p_j, g_kj)
