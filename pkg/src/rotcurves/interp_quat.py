"""Unit-quaternion interpolation on a 1D partition via normalization.

The ambient space is R^4; projecting a nonzero blend onto the unit sphere is
plain normalization, so evaluation is much cheaper than in the matrix
picture.  Body rates are reported in the quaternion convention
``(0, omega) = u^{-1} du/dt`` and are half the matrix-picture angular
velocity; :func:`curve_consistency` accounts for the factor when comparing
the two representations.

Nodal quaternion sequences are sign-aligned at construction (consecutive dot
products made nonnegative): the two hemispheres represent the same rotations,
but unaligned signs drive the blend toward zero and destroy accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ZeroBlendError, ZeroQuaternionError
from .interp_matrix import Partition, hermite_basis, lagrange_basis
from .liegroup import quat_inv, quat_mul, quat_to_matrix, vee


def project_s3(q):
    """Normalize a quaternion onto the unit sphere; rejects near-zero input."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1)
    if np.any(n < 1e-14):
        raise ZeroQuaternionError("cannot normalize a (numerically) zero quaternion")
    return q / n[..., None]


def _align_signs(quats):
    out = np.array(quats, dtype=float, copy=True)
    for k in range(1, out.shape[0]):
        if np.dot(out[k - 1], out[k]) < 0.0:
            out[k] = -out[k]
    return out


def _pure(v):
    v = np.asarray(v, dtype=float)
    return np.concatenate([np.zeros(v.shape[:-1] + (1,)), v], axis=-1)


@dataclass(frozen=True)
class QuatSamples:
    """Curve evaluations: unit value, its derivative, and body rates."""

    u: np.ndarray
    u_dot: np.ndarray
    omega: np.ndarray
    omega_dot: np.ndarray


def _rates_from_blend(q, qd, qdd):
    qinv = quat_inv(q)
    w_full = quat_mul(qinv, qd)
    alpha_full = quat_mul(qinv, qdd) - quat_mul(w_full, w_full)
    u = q / np.linalg.norm(q, axis=-1)[..., None]
    u_dot = quat_mul(u, _pure(w_full[..., 1:]))
    return QuatSamples(
        u=u,
        u_dot=u_dot,
        omega=w_full[..., 1:],
        omega_dot=alpha_full[..., 1:],
    )


def _check_blend(q, ks, what):
    n = np.linalg.norm(q, axis=-1)
    if np.any(n < 1e-14):
        i = int(np.argmin(n))
        raise ZeroBlendError(
            f"{what} blend vanished in element {int(ks[i])}", element=int(ks[i])
        )


@dataclass(frozen=True)
class HermiteQuatCurve:
    """C1 unit-quaternion curve from nodal values and nodal body rates.

    The element blend matches values ``u_k`` and derivatives ``u_k (0, w_k)``
    at the endpoints, so the stored rate is exactly the body rate of the
    evaluated curve at each knot.
    """

    partition: Partition
    quats: np.ndarray  # (N+1, 4), unit, sign-aligned
    rates: np.ndarray  # (N+1, 3)

    def __post_init__(self):
        q = np.asarray(self.quats, dtype=float)
        w = np.asarray(self.rates, dtype=float)
        npts = self.partition.n_elements + 1
        if q.shape != (npts, 4) or w.shape != (npts, 3):
            raise ValueError("nodal arrays must match the partition")
        norms = np.linalg.norm(q, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("nodal quaternions must have unit norm")
        object.__setattr__(self, "quats", _align_signs(q))
        object.__setattr__(self, "rates", w)

    @classmethod
    def from_function(cls, fn, dfn, partition):
        """Sample a unit-quaternion function and its derivative at the knots.

        The stored rate is ``Im(u^{-1} du/dt)``.
        """
        quats = np.stack([np.asarray(fn(t), dtype=float) for t in partition.knots])
        rates = np.stack(
            [
                quat_mul(quat_inv(quats[i]), np.asarray(dfn(t), dtype=float))[1:]
                for i, t in enumerate(partition.knots)
            ]
        )
        return cls(partition, quats, rates)

    def blend_many(self, ts):
        ks, h, s = self.partition.local_coords(ts)
        b0, b1, b2 = hermite_basis(s)
        ul = self.quats[ks]
        ur = self.quats[ks + 1]
        node_terms = quat_mul(self.quats, _pure(self.rates))
        ml = node_terms[ks]
        mr = node_terms[ks + 1]
        hh = h[..., None]
        q = (
            b0[..., 0, None] * ul
            + b0[..., 1, None] * ur
            + hh * (b0[..., 2, None] * ml + b0[..., 3, None] * mr)
        )
        qd = (b1[..., 0, None] * ul + b1[..., 1, None] * ur) / hh + (
            b1[..., 2, None] * ml + b1[..., 3, None] * mr
        )
        qdd = (b2[..., 0, None] * ul + b2[..., 1, None] * ur) / (hh * hh) + (
            b2[..., 2, None] * ml + b2[..., 3, None] * mr
        ) / hh
        return q, qd, qdd, ks

    def eval_many(self, ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        q, qd, qdd, ks = self.blend_many(ts)
        _check_blend(q, ks, "Hermite")
        return _rates_from_blend(q, qd, qdd)

    def eval(self, t):
        s = self.eval_many(np.array([t]))
        return QuatSamples(s.u[0], s.u_dot[0], s.omega[0], s.omega_dot[0])

    def flat_eval(self, ts):
        s = self.eval_many(ts)
        return s.u, s.u_dot


@dataclass(frozen=True)
class LagrangeQuatCurve:
    """C0 unit-quaternion curve: normalized degree-r Lagrange blend."""

    partition: Partition
    degree: int
    nodes: np.ndarray  # (N*degree + 1, 4), sign-aligned

    def __post_init__(self):
        if self.degree not in (1, 2, 3):
            raise ValueError("supported Lagrange degrees are 1, 2, 3")
        nodes = np.asarray(self.nodes, dtype=float)
        expected = self.partition.n_elements * self.degree + 1
        if nodes.shape != (expected, 4):
            raise ValueError(f"expected {expected} nodal quaternions")
        object.__setattr__(self, "nodes", _align_signs(nodes))

    @classmethod
    def from_function(cls, fn, partition, degree):
        from .interp_matrix import LagrangeRotationCurve

        times = LagrangeRotationCurve.node_times_for(partition, degree)
        nodes = np.stack([np.asarray(fn(t), dtype=float) for t in times])
        return cls(partition, degree, nodes)

    def blend_many(self, ts):
        ks, h, s = self.partition.local_coords(ts)
        b0, b1, b2 = lagrange_basis(self.degree, s)
        idx = ks[:, None] * self.degree + np.arange(self.degree + 1)[None, :]
        un = self.nodes[idx]
        hh = h[..., None]
        q = np.einsum("bi,bic->bc", b0, un)
        qd = np.einsum("bi,bic->bc", b1, un) / hh
        qdd = np.einsum("bi,bic->bc", b2, un) / (hh * hh)
        return q, qd, qdd, ks

    def eval_many(self, ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        q, _, _, ks = self.blend_many(ts)
        _check_blend(q, ks, "Lagrange")
        return project_s3(q)

    def eval(self, t):
        return self.eval_many(np.array([t]))[0]

    def eval_with_derivatives(self, ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        q, qd, qdd, ks = self.blend_many(ts)
        _check_blend(q, ks, "Lagrange")
        return _rates_from_blend(q, qd, qdd)

    def flat_eval(self, ts):
        s = self.eval_with_derivatives(ts)
        return s.u, s.u_dot


@dataclass(frozen=True)
class ConsistencyReport:
    """Pointwise gaps between the two representations of one rotation curve."""

    value_gap: np.ndarray  # Frobenius gap between the evaluated rotations
    rate_gap: np.ndarray  # Euclidean gap between angular-velocity vectors


def curve_consistency(curve_q: HermiteQuatCurve, curve_m, ts):
    """Compare a quaternion curve and a matrix curve approximating one function.

    Consistent nodal data satisfies ``R_k = quat_to_matrix(u_k)`` and matrix
    body velocity ``hat(2 w_k)``: the quaternion body rate is half the
    angular velocity.  The two interpolants then agree to the order of their
    common accuracy, but not exactly, away from the knots.
    """
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    sq = curve_q.eval_many(ts)
    sm = curve_m.eval_many(ts)
    rq = quat_to_matrix(sq.u)
    value_gap = np.sqrt(np.sum((rq - sm.r) ** 2, axis=(-2, -1)))
    rate_gap = np.linalg.norm(2.0 * sq.omega - vee(sm.omega), axis=-1)
    return ConsistencyReport(value_gap=value_gap, rate_gap=rate_gap)
