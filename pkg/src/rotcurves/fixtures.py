"""Built-in problems and analytic test curves.

Fixtures are generated from code, not data files, so they cannot drift from
their defining formulas.  Minimum-acceleration fixtures return
:class:`~rotcurves.minaccel.MinAccelProblem` factories; interpolation
fixtures return sampling callables for curve construction.
"""

from __future__ import annotations

import numpy as np

from .errors import ProblemValidationError
from .liegroup import dexp_so3, exp_so3, hat, matrix_to_quat, quat_exp, quat_mul, skew_part, vee
from .minaccel import MinAccelProblem


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def three_targets(n=8, method="quaternion", quad_points=4):
    """Three directions equally spaced in time on the unit interval."""
    s6 = 1.0 / np.sqrt(6.0)
    v0 = np.array([1.0, 0.0, 0.0])
    targets = (
        (0.5, np.array([0.0, 1.0, 0.0])),
        (1.0, np.array([s6, s6, 2.0 * s6])),
    )
    return MinAccelProblem(1.0, v0, targets, n, method=method, quad_points=quad_points)


def slalom(n=12, method="quaternion", quad_points=4):
    """Twelve weaving directions, one per twelfth of the unit interval."""
    vs = [
        _unit((0.5 + 0.8 * np.cos(np.pi * j / 2.0), 0.5, 1.0 - j / 6.0)) for j in range(13)
    ]
    targets = tuple((j / 12.0, vs[j]) for j in range(1, 13))
    return MinAccelProblem(1.0, vs[0], targets, n, method=method, quad_points=quad_points)


def cube(n=8, method="quaternion", quad_points=4):
    """Periodic tour of the cube vertices, returning to the start direction."""
    r3 = 1.0 / np.sqrt(3.0)
    verts = [
        (1, 1, 1),
        (-1, 1, 1),
        (-1, -1, 1),
        (1, -1, 1),
        (1, -1, -1),
        (-1, -1, -1),
        (-1, 1, -1),
        (1, 1, -1),
        (1, 1, 1),
    ]
    v0 = np.array(verts[0], dtype=float) * r3
    targets = tuple((j / 8.0, np.array(v, dtype=float) * r3) for j, v in enumerate(verts[1:], 1))
    return MinAccelProblem(
        1.0, v0, targets, n, method=method, periodic=True, quad_points=quad_points
    )


MINACCEL_FIXTURES = {
    "three-targets": three_targets,
    "slalom": slalom,
    "cube": cube,
}

# Suggested solver effort per fixture: the slalom starts far from its
# minimizer and needs a long leash.
MINACCEL_MAX_ITER = {
    "three-targets": 2000,
    "slalom": 8000,
    "cube": 2000,
}


def _polynomial_curve(coeffs):
    coeffs = np.asarray(coeffs, dtype=float)

    def p(t):
        return sum(c * t**m for m, c in enumerate(coeffs))

    def pd(t):
        return sum(m * c * t ** (m - 1) for m, c in enumerate(coeffs) if m >= 1)

    def rot(t):
        return exp_so3(p(t))

    def rot_d(t):
        return dexp_so3(p(t), pd(t))

    def quat(t):
        return quat_exp(p(t))

    def quat_d(t):
        half_rate = vee(skew_part(rot(t).T @ rot_d(t))) / 2.0
        return quat_mul(quat(t), np.concatenate([[0.0], half_rate]))

    return rot, rot_d, quat, quat_d


def interp_fixture(name, seed=0):
    """Analytic curve samplers ``(R, dR, u, du)`` for interpolation demos.

    ``constant`` is a fixed rotation, ``geodesic`` is a one-parameter
    rotation at constant rate, and ``random-smooth`` exponentiates a random
    cubic polynomial drawn from ``seed``.
    """
    if name == "constant":
        r0 = exp_so3(np.array([0.3, -0.4, 0.2]))
        u0 = matrix_to_quat(r0)
        zero = np.zeros((3, 3))

        def quat_d(t):
            return np.zeros(4)

        return (lambda t: r0), (lambda t: zero), (lambda t: u0), quat_d
    if name == "geodesic":
        axis = _unit((0.3, -0.5, 0.8)) * 2.0
        w = hat(axis)

        def rot(t):
            return exp_so3(axis * t)

        def rot_d(t):
            return rot(t) @ w

        def quat(t):
            return quat_exp(axis * t)

        def quat_d(t):
            return quat_mul(quat(t), np.concatenate([[0.0], axis / 2.0]))

        return rot, rot_d, quat, quat_d
    if name == "random-smooth":
        rng = np.random.default_rng(seed)
        return _polynomial_curve(0.6 * rng.normal(size=(4, 3)))
    raise ProblemValidationError(f"unknown interpolation fixture {name!r}")


INTERP_FIXTURES = ("constant", "geodesic", "random-smooth")
