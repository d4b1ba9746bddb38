"""Core maps for rotations in matrix and quaternion form.

Conventions used throughout:

- rotation matrices are ``(..., n, n)`` float arrays with ``Q^T Q = I`` and
  ``det Q = +1``;
- skew matrices are ``(..., n, n)`` with ``W + W^T = 0``;
- axis vectors are ``(..., 3)`` arrays of radians (or rad/time);
- quaternions are ``(..., 4)`` arrays ordered ``(w, x, y, z)``; unit
  quaternions represent rotations, with ``q`` and ``-q`` the same rotation.

All functions broadcast over leading axes, never mutate their inputs, and are
deterministic: equal inputs give bitwise-equal outputs.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    DimensionError,
    IllConditionedLogError,
    LyapunovError,
    SingularityError,
    ZeroQuaternionError,
)

# Below this angle the trig coefficient functions switch to 4-term Taylor
# expansions; the truncation error there is far below double roundoff.
SMALL_ANGLE = 1e-4

# Rotation logarithms are rejected this close to the branch cut.
LOG_BRANCH_TOL = 1e-6


def _t(a):
    return np.swapaxes(a, -1, -2)


def hat(v):
    """Map a 3-vector to the skew matrix acting as the cross product ``v x``."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != 3:
        raise DimensionError(f"hat needs 3-vectors, got shape {v.shape}")
    out = np.zeros(v.shape[:-1] + (3, 3))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def vee(w):
    """Extract the 3-vector of a 3x3 skew matrix; inverse of :func:`hat`."""
    w = np.asarray(w, dtype=float)
    if w.shape[-2:] != (3, 3):
        raise DimensionError(f"vee needs 3x3 matrices, got shape {w.shape}")
    return np.stack([w[..., 2, 1], w[..., 0, 2], w[..., 1, 0]], axis=-1)


def skew_part(a):
    """Skew-symmetric part ``(A - A^T)/2`` of a square matrix."""
    a = np.asarray(a, dtype=float)
    if a.shape[-1] != a.shape[-2]:
        raise DimensionError(f"skew_part needs square matrices, got shape {a.shape}")
    return 0.5 * (a - _t(a))


def sym_part(a):
    """Symmetric part ``(A + A^T)/2`` of a square matrix."""
    a = np.asarray(a, dtype=float)
    if a.shape[-1] != a.shape[-2]:
        raise DimensionError(f"sym_part needs square matrices, got shape {a.shape}")
    return 0.5 * (a + _t(a))


def exp_so3(v):
    """Rotation matrix for the rotation vector ``v`` (angle ``|v|``, axis ``v/|v|``).

    Uses the two-coefficient closed form with Taylor fallbacks below
    ``SMALL_ANGLE`` so the map is smooth through zero.
    """
    v = np.asarray(v, dtype=float)
    w = hat(v)
    w2 = w @ w
    t2 = np.sum(v * v, axis=-1)
    th = np.sqrt(t2)
    small = th < SMALL_ANGLE
    th_safe = np.where(small, 1.0, th)
    a = np.where(
        small,
        1.0 - t2 / 6.0 + t2 * t2 / 120.0 - t2 * t2 * t2 / 5040.0,
        np.sin(th) / th_safe,
    )
    b = np.where(
        small,
        0.5 - t2 / 24.0 + t2 * t2 / 720.0 - t2 * t2 * t2 / 40320.0,
        (1.0 - np.cos(th)) / (th_safe * th_safe),
    )
    eye = np.broadcast_to(np.eye(3), w.shape)
    return eye + a[..., None, None] * w + b[..., None, None] * w2


def log_so3(r):
    """Rotation vector of a single rotation matrix, angle in ``[0, pi)``.

    Rejects rotations within ``LOG_BRANCH_TOL`` of angle pi, where the axis is
    not unique.
    """
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        raise DimensionError(f"log_so3 needs a single 3x3 matrix, got shape {r.shape}")
    c = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    th = np.arccos(c)
    if th > np.pi - LOG_BRANCH_TOL:
        raise IllConditionedLogError(
            f"rotation angle {th:.9g} within {LOG_BRANCH_TOL} of pi; axis not unique"
        )
    s_vec = vee(r - r.T) / 2.0  # sin(th) * axis
    if th < SMALL_ANGLE:
        t2 = th * th
        return s_vec * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0)
    if th < 2.8:
        return s_vec * (th / np.sin(th))
    # Near pi the antisymmetric part is small; recover the axis from the
    # diagonal (R_ii = c + (1-c) n_i^2) and take signs from the skew part.
    nn = (np.diagonal(r) - c) / (1.0 - c)
    n = np.sqrt(np.clip(nn, 0.0, None))
    n = np.copysign(n, s_vec)
    n = n / np.linalg.norm(n)
    return th * n


def dexp_so3(w, v):
    """Directional derivative of :func:`exp_so3` at ``w`` in direction ``v``.

    Returns ``d/de exp_so3(w + e v)`` at ``e = 0`` as a 3x3 matrix (batched).
    Uses the closed product formula away from zero and a series in the
    left-trivialized tangent below ``SMALL_ANGLE``.
    """
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)
    w, v = np.broadcast_arrays(w, v)
    r = exp_so3(w)
    t2 = np.sum(w * w, axis=-1)
    small = t2 < SMALL_ANGLE * SMALL_ANGLE
    t2_safe = np.where(small, 1.0, t2)
    wv = np.sum(w * v, axis=-1)
    rv = np.einsum("...ij,...j->...i", r, v)
    num = wv[..., None, None] * hat(w) + hat(np.cross(w, v - rv))
    main = (num / t2_safe[..., None, None]) @ r
    c1 = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
    c2 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    jl_v = v + c1[..., None] * np.cross(w, v) + c2[..., None] * np.cross(w, np.cross(w, v))
    series = hat(jl_v) @ r
    return np.where(small[..., None, None], series, main)


def cayley(w):
    """Cayley transform ``(I - W/2)^{-1} (I + W/2)`` of a skew matrix."""
    w = np.asarray(w, dtype=float)
    n = w.shape[-1]
    eye = np.broadcast_to(np.eye(n), w.shape)
    return np.linalg.solve(eye - w / 2.0, eye + w / 2.0)


def cayley_inv(r):
    """Inverse Cayley transform ``2 (I + R)^{-1} (R - I)``.

    Fails for rotations with angle pi, where ``I + R`` is singular.
    """
    r = np.asarray(r, dtype=float)
    n = r.shape[-1]
    eye = np.broadcast_to(np.eye(n), r.shape)
    b = eye + r
    det = np.linalg.det(b)
    if np.any(np.abs(det) < 1e-12):
        raise SingularityError("I + R is singular (rotation angle pi); Cayley inverse undefined")
    return 2.0 * np.linalg.solve(b, r - eye)


def quat_mul(a, b):
    """Quaternion product, componentwise in the ``(w, x, y, z)`` ordering."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1] != 4 or b.shape[-1] != 4:
        raise DimensionError("quat_mul needs (..., 4) arrays")
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q):
    """Quaternion conjugate: negate the imaginary part."""
    q = np.asarray(q, dtype=float)
    return np.concatenate([q[..., :1], -q[..., 1:]], axis=-1)


def quat_inv(q):
    """Quaternion inverse ``q* / |q|^2``; rejects (numerically) zero quaternions."""
    q = np.asarray(q, dtype=float)
    n2 = np.sum(q * q, axis=-1)
    if np.any(n2 < 1e-28):
        raise ZeroQuaternionError("cannot invert a zero quaternion")
    return quat_conj(q) / n2[..., None]


def quat_re(q):
    """Real part as a quaternion ``(w, 0, 0, 0)``."""
    q = np.asarray(q, dtype=float)
    out = np.zeros_like(q)
    out[..., 0] = q[..., 0]
    return out


def quat_im(q):
    """Imaginary part as a quaternion ``(0, x, y, z)``."""
    q = np.asarray(q, dtype=float)
    out = np.array(q, copy=True)
    out[..., 0] = 0.0
    return out


def quat_exp(v):
    """Unit quaternion ``(cos(|v|/2), sin(|v|/2) v/|v|)`` for a rotation vector ``v``."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != 3:
        raise DimensionError(f"quat_exp needs 3-vectors, got shape {v.shape}")
    t2 = np.sum(v * v, axis=-1)
    th = np.sqrt(t2)
    small = th < SMALL_ANGLE
    th_safe = np.where(small, 1.0, th)
    s = np.where(
        small,
        0.5 - t2 / 48.0 + t2 * t2 / 3840.0 - t2 * t2 * t2 / 645120.0,
        np.sin(th / 2.0) / th_safe,
    )
    return np.concatenate([np.cos(th / 2.0)[..., None], s[..., None] * v], axis=-1)


def quat_log(u):
    """Rotation vector inverting :func:`quat_exp` on unit quaternions.

    The returned angle is ``2 atan2(|Im u|, Re u)``, the principal preimage in
    ``[0, 2 pi)``; inputs within tolerance of ``(-1, 0, 0, 0)`` (angle 2 pi,
    undefined axis) are rejected.
    """
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != 4:
        raise DimensionError(f"quat_log needs (..., 4) arrays, got shape {u.shape}")
    im = u[..., 1:]
    s = np.linalg.norm(im, axis=-1)
    th = 2.0 * np.arctan2(s, u[..., 0])
    if np.any(th > 2.0 * np.pi - LOG_BRANCH_TOL):
        raise IllConditionedLogError(
            "quaternion within tolerance of (-1, 0, 0, 0); logarithm axis not unique"
        )
    small = th < SMALL_ANGLE
    x2 = (th / 2.0) ** 2
    s_safe = np.where(small, 1.0, s)
    factor = np.where(
        small,
        2.0 * (1.0 + x2 / 6.0 + 7.0 * x2 * x2 / 360.0),
        th / s_safe,
    )
    return factor[..., None] * im


def quat_act(u, v):
    """Rotate the 3-vector ``v`` by the unit quaternion ``u`` via ``u (0, v) u*``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != 3:
        raise DimensionError(f"quat_act needs 3-vectors, got shape {v.shape}")
    p = np.concatenate([np.zeros(v.shape[:-1] + (1,)), v], axis=-1)
    return quat_mul(quat_mul(u, p), quat_conj(u))[..., 1:]


def quat_to_matrix(u):
    """Rotation matrix of a unit quaternion (consistent with :func:`quat_act`)."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != 4:
        raise DimensionError(f"quat_to_matrix needs (..., 4) arrays, got shape {u.shape}")
    w, x, y, z = u[..., 0], u[..., 1], u[..., 2], u[..., 3]
    out = np.empty(u.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    out[..., 0, 1] = 2.0 * (x * y - w * z)
    out[..., 0, 2] = 2.0 * (x * z + w * y)
    out[..., 1, 0] = 2.0 * (x * y + w * z)
    out[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    out[..., 1, 2] = 2.0 * (y * z - w * x)
    out[..., 2, 0] = 2.0 * (x * z - w * y)
    out[..., 2, 1] = 2.0 * (y * z + w * x)
    out[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return out


def matrix_to_quat(r):
    """Unit quaternion of a single 3x3 rotation matrix, scalar part >= 0.

    Ties (scalar part exactly zero) are broken by making the first nonzero
    imaginary component positive.
    """
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        raise DimensionError(f"matrix_to_quat needs a single 3x3 matrix, got shape {r.shape}")
    # Shepperd: pick the largest of (w, x, y, z) squared from the diagonal.
    tr = np.trace(r)
    choices = np.array([tr, r[0, 0], r[1, 1], r[2, 2]])
    i = int(np.argmax(choices))
    if i == 0:
        t = np.sqrt(1.0 + tr)
        w = 0.5 * t
        f = 0.5 / t
        q = np.array([w, f * (r[2, 1] - r[1, 2]), f * (r[0, 2] - r[2, 0]), f * (r[1, 0] - r[0, 1])])
    else:
        j = i - 1
        k = (j + 1) % 3
        l = (j + 2) % 3
        t = np.sqrt(1.0 + r[j, j] - r[k, k] - r[l, l])
        f = 0.5 / t
        q = np.empty(4)
        q[0] = f * (r[l, k] - r[k, l])
        q[1 + j] = 0.5 * t
        q[1 + k] = f * (r[k, j] + r[j, k])
        q[1 + l] = f * (r[l, j] + r[j, l])
    q = q / np.linalg.norm(q)
    if q[0] < 0.0:
        q = -q
    elif q[0] == 0.0:
        for c in q[1:]:
            if c != 0.0:
                if c < 0.0:
                    q = -q
                break
    return q


def lyapunov_solve(y, c):
    """Solve ``Y X + X Y = C`` for symmetric positive definite ``Y``.

    Solves the Kronecker-vectorized dense linear system, which is exact for
    the small dimensions used here.  If ``C`` is skew (symmetric), so is the
    returned ``X``, by uniqueness.
    """
    y = np.asarray(y, dtype=float)
    c = np.asarray(c, dtype=float)
    n = y.shape[-1]
    if y.shape != (n, n) or c.shape != (n, n):
        raise DimensionError("lyapunov_solve needs a single pair of equally sized square matrices")
    scale = max(1.0, float(np.linalg.norm(y)))
    if np.linalg.norm(y - y.T) > 1e-12 * scale:
        raise LyapunovError("coefficient matrix is not symmetric")
    if np.min(np.linalg.eigvalsh(y)) <= 0.0:
        raise LyapunovError("coefficient matrix is not positive definite")
    eye = np.eye(n)
    m = np.kron(eye, y) + np.kron(y.T, eye)
    x = np.linalg.solve(m, c.flatten(order="F"))
    return x.reshape((n, n), order="F")
