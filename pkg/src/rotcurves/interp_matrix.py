"""Rotation-valued interpolation on a 1D partition via orthogonal projection.

Curves interpolate nodal rotations (and, for the Hermite variant, nodal body
velocities) by blending in the ambient matrix space and projecting each
evaluation onto the rotation group through the polar decomposition.  The
projected curve inherits the continuity and approximation order of the
underlying scalar basis: C0 and order r+1 for Lagrange of degree r, C1 and
order 4 for Hermite cubics.

Evaluations are only defined while the blend keeps a positive determinant;
failures raise :class:`~rotcurves.errors.ProjectionDomainError` carrying the
offending element and determinant, since widely spaced nodal rotations are
the main runtime hazard.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ProjectionDomainError
from .liegroup import skew_part
from .polar import _jet_sweeps, polar_orthogonal_batch


@dataclass(frozen=True)
class Partition:
    """Strictly increasing knot vector ``t_0 < t_1 < ... < t_N``."""

    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        if knots.ndim != 1 or knots.size < 2:
            raise ValueError("a partition needs at least two knots")
        if not np.all(np.diff(knots) > 0):
            raise ValueError("knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)

    @classmethod
    def uniform(cls, horizon, n_elements, start=0.0):
        return cls(np.linspace(start, start + horizon, n_elements + 1))

    @property
    def n_elements(self):
        return self.knots.size - 1

    @property
    def start(self):
        return float(self.knots[0])

    @property
    def end(self):
        return float(self.knots[-1])

    def locate_many(self, ts):
        """Element index for each evaluation point.

        Points exactly on a shared knot map to the left element, except at the
        first knot.  Points outside the domain (beyond a small roundoff
        tolerance) are rejected.
        """
        ts = np.asarray(ts, dtype=float)
        span = self.end - self.start
        tol = 1e-12 * span
        if np.any(ts < self.start - tol) or np.any(ts > self.end + tol):
            raise ValueError("evaluation point outside the partition")
        idx = np.searchsorted(self.knots, ts, side="left") - 1
        return np.clip(idx, 0, self.n_elements - 1)

    def local_coords(self, ts):
        """Element indices, element lengths, and local coordinates in [0, 1]."""
        ts = np.asarray(ts, dtype=float)
        ks = self.locate_many(ts)
        h = self.knots[ks + 1] - self.knots[ks]
        s = np.clip((ts - self.knots[ks]) / h, 0.0, 1.0)
        return ks, h, s


def hermite_basis(s):
    """Values and first two derivatives of the cubic Hermite basis on [0, 1].

    Returns three ``(..., 4)`` arrays ordered (value-left, value-right,
    slope-left, slope-right); the value pair is a partition of unity and the
    slope functions are dual to endpoint derivatives.
    """
    s = np.asarray(s, dtype=float)
    s2 = s * s
    s3 = s2 * s
    vals = np.stack(
        [
            2.0 * s3 - 3.0 * s2 + 1.0,
            -2.0 * s3 + 3.0 * s2,
            s3 - 2.0 * s2 + s,
            s3 - s2,
        ],
        axis=-1,
    )
    d1 = np.stack(
        [
            6.0 * s2 - 6.0 * s,
            -6.0 * s2 + 6.0 * s,
            3.0 * s2 - 4.0 * s + 1.0,
            3.0 * s2 - 2.0 * s,
        ],
        axis=-1,
    )
    d2 = np.stack(
        [
            12.0 * s - 6.0,
            -12.0 * s + 6.0,
            6.0 * s - 4.0,
            6.0 * s - 2.0,
        ],
        axis=-1,
    )
    return vals, d1, d2


def lagrange_basis(degree, s):
    """Values and first two derivatives of the equispaced Lagrange basis on [0, 1].

    Nodes sit at ``j/degree``; returns three ``(..., degree + 1)`` arrays.
    """
    if degree < 1:
        raise ValueError("Lagrange degree must be at least 1")
    s = np.asarray(s, dtype=float)
    nodes = np.arange(degree + 1) / degree
    m = degree + 1
    vals = np.empty(s.shape + (m,))
    d1 = np.empty_like(vals)
    d2 = np.empty_like(vals)
    for j in range(m):
        others = [i for i in range(m) if i != j]
        denom = np.prod([nodes[j] - nodes[i] for i in others])
        vals[..., j] = np.prod([s - nodes[i] for i in others], axis=0) / denom
        acc1 = np.zeros_like(s)
        acc2 = np.zeros_like(s)
        for k in others:
            rest = [i for i in others if i != k]
            pk = np.prod([s - nodes[i] for i in rest], axis=0) if rest else np.ones_like(s)
            acc1 = acc1 + pk
            for l in rest:
                rest2 = [i for i in rest if i != l]
                pl = np.prod([s - nodes[i] for i in rest2], axis=0) if rest2 else np.ones_like(s)
                acc2 = acc2 + pl
        d1[..., j] = acc1 / denom
        d2[..., j] = acc2 / denom
    return vals, d1, d2


@dataclass(frozen=True)
class RotationSamples:
    """Curve evaluations: value, time derivatives, and body-frame blocks.

    ``omega = skew(Q^T dQ)`` is the body velocity and ``omega_dot =
    skew(Q^T ddQ)`` its time derivative; both are skew matrices.
    """

    r: np.ndarray
    r_dot: np.ndarray
    r_ddot: np.ndarray
    omega: np.ndarray
    omega_dot: np.ndarray


def _check_blend_dets(a, ks, what):
    det = np.linalg.det(a)
    if np.any(det <= 0.0):
        i = int(np.argmin(det))
        raise ProjectionDomainError(
            f"{what} blend determinant {det[i]:.6g} is not positive in element {int(ks[i])}",
            element=int(ks[i]),
            det=float(det[i]),
        )


def _samples_from_jets(a, ad, add):
    q, w, t, _, _ = _jet_sweeps(a, ad, add)
    omega = skew_part(w)
    omega_dot = skew_part(t)
    return RotationSamples(
        r=q,
        r_dot=q @ w,
        r_ddot=q @ t,
        omega=omega,
        omega_dot=omega_dot,
    )


@dataclass(frozen=True)
class HermiteRotationCurve:
    """C1 rotation curve from nodal rotations and nodal body velocities.

    On each element the ambient blend matches values ``R_k`` and derivatives
    ``R_k W_k`` at the endpoints (``W_k`` skew); evaluation projects the blend
    onto the rotation group.
    """

    partition: Partition
    rotations: np.ndarray  # (N+1, n, n)
    body_velocities: np.ndarray  # (N+1, n, n), skew

    def __post_init__(self):
        rot = np.asarray(self.rotations, dtype=float)
        vel = np.asarray(self.body_velocities, dtype=float)
        npts = self.partition.n_elements + 1
        if rot.shape[0] != npts or vel.shape != rot.shape:
            raise ValueError("nodal arrays must match the partition")
        object.__setattr__(self, "rotations", rot)
        object.__setattr__(self, "body_velocities", vel)

    @classmethod
    def from_function(cls, fn, dfn, partition):
        """Sample a rotation-valued function and its derivative at the knots."""
        rot = np.stack([np.asarray(fn(t), dtype=float) for t in partition.knots])
        vel = np.stack(
            [
                skew_part(rot[i].T @ np.asarray(dfn(t), dtype=float))
                for i, t in enumerate(partition.knots)
            ]
        )
        return cls(partition, rot, vel)

    def blend_many(self, ts):
        """Raw ambient-space blend and its first two time derivatives."""
        ks, h, s = self.partition.local_coords(ts)
        b0, b1, b2 = hermite_basis(s)
        rl = self.rotations[ks]
        rr = self.rotations[ks + 1]
        ml = rl @ self.body_velocities[ks]
        mr = rr @ self.body_velocities[ks + 1]
        hh = h[..., None, None]

        def mix(c, scale_pairs):
            return (
                c[..., 0, None, None] * rl
                + c[..., 1, None, None] * rr
                + scale_pairs * (c[..., 2, None, None] * ml + c[..., 3, None, None] * mr)
            )

        a = mix(b0, hh)
        ad = (b1[..., 0, None, None] * rl + b1[..., 1, None, None] * rr) / hh + (
            b1[..., 2, None, None] * ml + b1[..., 3, None, None] * mr
        )
        add = (b2[..., 0, None, None] * rl + b2[..., 1, None, None] * rr) / (hh * hh) + (
            b2[..., 2, None, None] * ml + b2[..., 3, None, None] * mr
        ) / hh
        return a, ad, add, ks

    def eval_many(self, ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        a, ad, add, ks = self.blend_many(ts)
        _check_blend_dets(a, ks, "Hermite")
        return _samples_from_jets(a, ad, add)

    def eval(self, t):
        s = self.eval_many(np.array([t]))
        return RotationSamples(*(arr[0] for arr in (s.r, s.r_dot, s.r_ddot, s.omega, s.omega_dot)))

    def flat_eval(self, ts):
        """Embedded value/derivative rows for norm computations."""
        s = self.eval_many(ts)
        b = s.r.shape[0]
        return s.r.reshape(b, -1), s.r_dot.reshape(b, -1)


@dataclass(frozen=True)
class LagrangeRotationCurve:
    """C0 rotation curve interpolating nodal rotations with degree-r blending.

    Nodes are equispaced within each element and shared at element
    boundaries; ``nodes`` therefore holds ``N * degree + 1`` rotations.
    """

    partition: Partition
    degree: int
    nodes: np.ndarray  # (N*degree + 1, n, n)

    def __post_init__(self):
        if self.degree not in (1, 2, 3):
            raise ValueError("supported Lagrange degrees are 1, 2, 3")
        nodes = np.asarray(self.nodes, dtype=float)
        expected = self.partition.n_elements * self.degree + 1
        if nodes.shape[0] != expected:
            raise ValueError(f"expected {expected} nodes, got {nodes.shape[0]}")
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def from_function(cls, fn, partition, degree):
        times = cls.node_times_for(partition, degree)
        nodes = np.stack([np.asarray(fn(t), dtype=float) for t in times])
        return cls(partition, degree, nodes)

    @staticmethod
    def node_times_for(partition, degree):
        knots = partition.knots
        times = []
        for k in range(partition.n_elements):
            h = knots[k + 1] - knots[k]
            for j in range(degree):
                times.append(knots[k] + h * j / degree)
        times.append(knots[-1])
        return np.array(times)

    def node_times(self):
        return self.node_times_for(self.partition, self.degree)

    def _element_nodes(self, ks):
        idx = ks[:, None] * self.degree + np.arange(self.degree + 1)[None, :]
        return self.nodes[idx]

    def blend_many(self, ts):
        ks, h, s = self.partition.local_coords(ts)
        b0, b1, b2 = lagrange_basis(self.degree, s)
        rn = self._element_nodes(ks)
        hh = h[..., None, None]
        a = np.einsum("bi,binm->bnm", b0, rn)
        ad = np.einsum("bi,binm->bnm", b1, rn) / hh
        add = np.einsum("bi,binm->bnm", b2, rn) / (hh * hh)
        return a, ad, add, ks

    def eval_many(self, ts):
        """Projected values only (the curve is C0, so only values are exposed)."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        a, _, _, ks = self.blend_many(ts)
        _check_blend_dets(a, ks, "Lagrange")
        return polar_orthogonal_batch(a)

    def eval(self, t):
        return self.eval_many(np.array([t]))[0]

    def eval_with_derivatives(self, ts):
        """Projected value, velocity, and acceleration samples."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        a, ad, add, ks = self.blend_many(ts)
        _check_blend_dets(a, ks, "Lagrange")
        return _samples_from_jets(a, ad, add)

    def flat_eval(self, ts):
        s = self.eval_with_derivatives(ts)
        b = s.r.shape[0]
        return s.r.reshape(b, -1), s.r_dot.reshape(b, -1)
