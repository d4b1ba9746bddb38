"""Minimum-acceleration rotation curves through prescribed directions.

Discretizes the problem of finding a C1 rotation curve ``R : [0, T] -> SO(3)``
with ``R(0) = I`` that passes through target directions (``R(tau_j) v0 =
v_j``) while locally minimizing the integrated squared body angular
acceleration.  Two finite-dimensional families are supported: Hermite curves
in the matrix embedding (evaluated through the polar projection) and Hermite
curves in the quaternion embedding (evaluated through normalization).

The constraints are built into the parametrization: nodes are written as
deviations from a reference sequence that already interpolates the targets,
with constrained knots allowed to move only along the rotation fiber about
``v0``.  The result is an unconstrained least-squares problem in

    x = (w_0, y_1, w_1, ..., y_N, w_N),   dim x = 6N - 2M + 3,

where ``y_k`` is a scalar fiber angle at constrained knots and a 3-vector
deviation elsewhere, and ``w_k`` are nodal body rates.  Residuals are the
quadrature-weighted components of the body angular acceleration at the
Gauss points of every element; their Jacobian is assembled analytically by
propagating each unknown's perturbation through the same evaluation rules.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import (
    AssemblyError,
    DegenerateAxisError,
    ProblemValidationError,
    SolverDivergedError,
)
from .interp_matrix import HermiteRotationCurve, Partition, hermite_basis
from .interp_quat import HermiteQuatCurve
from .liegroup import exp_so3, hat, quat_exp, quat_inv, quat_mul, skew_part, vee
from .polar import _gather_history, _jet_sweeps, _param_sweeps


def gauss01(n_points):
    """Gauss-Legendre nodes and weights on the unit interval."""
    x, w = np.polynomial.legendre.leggauss(n_points)
    return (x + 1.0) / 2.0, w / 2.0


@dataclass(frozen=True)
class MinAccelProblem:
    """Problem data: horizon, targets, partition, and discretization choices.

    ``targets`` holds the nonzero-time constraints ``(tau_j, v_j)`` for
    ``j = 1..M``; the initial direction ``v0`` is pinned at time zero through
    ``R(0) = I``.  Target times must land on knots of the (uniform by
    default) partition.  When ``periodic`` is set, the final target must
    reproduce ``v0`` at time ``T`` and the end knot is aliased to the start.
    """

    horizon: float
    initial_direction: np.ndarray
    targets: tuple
    n_elements: int
    method: str = "quaternion"
    periodic: bool = False
    quad_points: int = 4
    knots: np.ndarray | None = None

    def __post_init__(self):
        if self.method not in ("matrix", "quaternion"):
            raise ProblemValidationError(f"unknown method {self.method!r}")
        if self.n_elements < 1:
            raise ProblemValidationError("need at least one element")
        if self.quad_points < 2:
            raise ProblemValidationError("need at least two quadrature points per element")
        if self.horizon <= 0:
            raise ProblemValidationError("horizon must be positive")
        v0 = np.asarray(self.initial_direction, dtype=float)
        if v0.shape != (3,) or abs(np.linalg.norm(v0) - 1.0) > 1e-12:
            raise ProblemValidationError("initial direction must be a unit 3-vector")
        object.__setattr__(self, "initial_direction", v0)

        targets = []
        for tau, v in self.targets:
            v = np.asarray(v, dtype=float)
            if v.shape != (3,) or abs(np.linalg.norm(v) - 1.0) > 1e-12:
                raise ProblemValidationError(f"target at t={tau} is not a unit 3-vector")
            targets.append((float(tau), v))
        times = [tau for tau, _ in targets]
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])) or any(
            t <= 0 or t > self.horizon + 1e-12 for t in times
        ):
            raise ProblemValidationError("target times must be strictly increasing in (0, T]")
        if targets and abs(times[-1] - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise ProblemValidationError("the final target time must equal the horizon")
        object.__setattr__(self, "targets", tuple(targets))

        if self.knots is None:
            part = Partition.uniform(self.horizon, self.n_elements)
        else:
            part = Partition(np.asarray(self.knots, dtype=float))
            if part.n_elements != self.n_elements or part.start != 0.0:
                raise ProblemValidationError("explicit knots must start at 0 and match n_elements")
        object.__setattr__(self, "knots", part.knots)
        object.__setattr__(self, "_partition", part)

        idx = []
        for tau, _ in targets:
            k = int(round(tau / self.horizon * self.n_elements))
            k = min(max(k, 0), self.n_elements)
            if abs(part.knots[k] - tau) > 1e-9 * max(1.0, self.horizon):
                raise ProblemValidationError(f"target time {tau} does not land on a knot")
            idx.append(k)
        if len(set(idx)) != len(idx) or any(k == 0 for k in idx):
            raise ProblemValidationError("target knots must be distinct and nonzero")
        object.__setattr__(self, "target_indices", tuple(idx))

        if self.periodic:
            if not targets:
                raise ProblemValidationError("a periodic problem needs a final target")
            if np.linalg.norm(targets[-1][1] - v0) > 1e-12:
                raise ProblemValidationError(
                    "a periodic problem must return to the initial direction at time T"
                )

    @property
    def partition(self):
        return self._partition

    @property
    def n_targets(self):
        return len(self.targets)

    def layout(self):
        return UnknownLayout(self.n_elements, self.target_indices, self.periodic)


class UnknownLayout:
    """Packing of the unknowns ``(w_0, y_1, w_1, ..., y_N, w_N)``.

    ``y_k`` is absent for knot 0 (pinned to the identity), a scalar for
    constrained knots, and a 3-vector otherwise.  With periodic aliasing the
    end knot holds no unknowns at all: its rotation is pinned to the identity
    and its rate shares the columns of ``w_0``.
    """

    def __init__(self, n_elements, constrained, periodic=False):
        self.n_elements = n_elements
        self.constrained = frozenset(constrained)
        self.periodic = periodic
        n = n_elements
        self.y_size = np.zeros(n + 1, dtype=int)
        for k in range(1, n + 1):
            self.y_size[k] = 1 if k in self.constrained else 3
        if periodic:
            self.y_size[n] = 0
        self.y_start = np.full(n + 1, -1, dtype=int)
        self.omega_start = np.full(n + 1, -1, dtype=int)
        off = 3  # block 0 is w_0
        self.omega_start[0] = 0
        for k in range(1, n + 1):
            if periodic and k == n:
                self.omega_start[k] = 0
                continue
            if self.y_size[k]:
                self.y_start[k] = off
                off += self.y_size[k]
            self.omega_start[k] = off
            off += 3
        self.dim = off

    def aliased(self, k):
        return self.periodic and k == self.n_elements

    def pack(self, ys, omegas):
        """Assemble the flat unknown vector from per-knot values.

        ``ys`` maps knot index to its fiber angle (scalar) or deviation
        vector; ``omegas`` is ``(N+1, 3)``.  Aliased end-knot data is ignored.
        """
        x = np.zeros(self.dim)
        omegas = np.asarray(omegas, dtype=float)
        x[0:3] = omegas[0]
        for k in range(1, self.n_elements + 1):
            if self.aliased(k):
                continue
            if self.y_size[k]:
                x[self.y_start[k] : self.y_start[k] + self.y_size[k]] = np.atleast_1d(ys[k])
            x[self.omega_start[k] : self.omega_start[k] + 3] = omegas[k]
        return x

    def unpack(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected unknown vector of length {self.dim}, got {x.shape}")
        n = self.n_elements
        omegas = np.zeros((n + 1, 3))
        omegas[0] = x[0:3]
        ys = {}
        for k in range(1, n + 1):
            if self.aliased(k):
                omegas[k] = omegas[0]
                continue
            if self.y_size[k] == 1:
                ys[k] = float(x[self.y_start[k]])
            elif self.y_size[k] == 3:
                ys[k] = x[self.y_start[k] : self.y_start[k] + 3].copy()
            omegas[k] = x[self.omega_start[k] : self.omega_start[k] + 3]
        return ys, omegas


@dataclass(frozen=True)
class ReferenceSequence:
    """Knotwise rotations (and their quaternions) interpolating the targets."""

    rotations: np.ndarray  # (N+1, 3, 3)
    quats: np.ndarray  # (N+1, 4), sign-aligned


def build_reference(problem):
    """Piecewise-geodesic reference hitting every target direction exactly.

    Between consecutive targets the knots advance by equal fractions of the
    connecting rotation, taken about the axis ``v_j x v_{j+1}`` rescaled to
    the full angle between the directions (the raw cross product has norm
    ``sin`` of the angle and would under-rotate).  For periodic problems the
    closing defect, a rotation about ``v0``, is unwound linearly across the
    knots so the end knot matches the identity exactly.
    """
    n = problem.n_elements
    v0 = problem.initial_direction
    rot = np.empty((n + 1, 3, 3))
    qs = np.empty((n + 1, 4))
    rot[0] = np.eye(3)
    qs[0] = np.array([1.0, 0.0, 0.0, 0.0])
    idx = [0] + list(problem.target_indices)
    vecs = [v0] + [v for _, v in problem.targets]
    for j in range(len(idx) - 1):
        ka, kb = idx[j], idx[j + 1]
        va, vb = vecs[j], vecs[j + 1]
        if np.linalg.norm(va + vb) <= 1e-8:
            raise DegenerateAxisError(
                f"targets {j} and {j + 1} are antipodal; connecting axis undefined"
            )
        c = np.cross(va, vb)
        nc = np.linalg.norm(c)
        axis = np.zeros(3) if nc < 1e-15 else c * (np.arctan2(nc, float(va @ vb)) / nc)
        span = kb - ka
        for i in range(1, span + 1):
            step = axis * (i / span)
            rot[ka + i] = exp_so3(step) @ rot[ka]
            qs[ka + i] = quat_mul(quat_exp(step), qs[ka])
    if not problem.targets:
        rot[1:] = np.eye(3)
        qs[1:] = qs[0]
    if problem.periodic:
        # Closing defect is a rotation about v0; measure it in the quaternion
        # picture so the corrected end quaternion lands on +identity.
        s = float(qs[n, 1:] @ v0)
        defect = 2.0 * np.arctan2(s, qs[n, 0])
        for k in range(1, n + 1):
            corr = -(k / n) * defect * v0
            rot[k] = rot[k] @ exp_so3(corr)
            qs[k] = quat_mul(qs[k], quat_exp(corr))
    for k in range(1, n + 1):
        if np.dot(qs[k - 1], qs[k]) < 0.0:
            qs[k] = -qs[k]
    return ReferenceSequence(rotations=rot, quats=qs)


def _deviation_vectors(x, problem, layout):
    ys, omegas = layout.unpack(x)
    n = problem.n_elements
    rv = np.zeros((n + 1, 3))
    for k in range(1, n + 1):
        if layout.aliased(k):
            continue
        if layout.y_size[k] == 1:
            rv[k] = ys[k] * problem.initial_direction
        else:
            rv[k] = ys[k]
    return ys, omegas, rv


def decode_matrix(x, problem, ref, layout=None):
    """Nodal rotations and body rates for an unknown vector (matrix method)."""
    layout = layout or problem.layout()
    _, omegas, rv = _deviation_vectors(x, problem, layout)
    rot = ref.rotations @ exp_so3(rv)
    rot[0] = np.eye(3)
    if problem.periodic:
        rot[-1] = np.eye(3)
    return rot, omegas


def decode_quat(x, problem, ref, layout=None):
    """Nodal quaternions and body rates for an unknown vector (quaternion method)."""
    layout = layout or problem.layout()
    _, omegas, rv = _deviation_vectors(x, problem, layout)
    u = quat_mul(ref.quats, quat_exp(rv))
    u[0] = np.array([1.0, 0.0, 0.0, 0.0])
    if problem.periodic:
        u[-1] = np.array([1.0, 0.0, 0.0, 0.0])
    return u, omegas


@dataclass(frozen=True)
class ResidualSystem:
    """Weighted residual vector, its sparse Jacobian, and the quadrature used."""

    g: np.ndarray
    jac: scipy.sparse.csr_matrix
    quad_nodes: np.ndarray
    quad_weights: np.ndarray

    @property
    def objective(self):
        return float(self.g @ self.g)


def _direction_table(layout):
    """Per element, the unknowns its residuals depend on, in block order."""
    table = []
    for e in range(layout.n_elements):
        entries = []
        for node in (e, e + 1):
            for l in range(layout.y_size[node]):
                entries.append((node, 0, l, layout.y_start[node] + l))
            for j in range(3):
                entries.append((node, 1, j, layout.omega_start[node] + j))
        table.append(entries)
    return table


def _blend(b, h, left, right, mleft, mright, extra):
    """Hermite combination of endpoint data; returns value, d/dt, d2/dt2."""
    sh = (...,) + (None,) * extra
    c0, c1, c2 = b
    hh = h[sh]
    val = (
        c0[..., 0][sh] * left
        + c0[..., 1][sh] * right
        + hh * (c0[..., 2][sh] * mleft + c0[..., 3][sh] * mright)
    )
    d1 = (c1[..., 0][sh] * left + c1[..., 1][sh] * right) / hh + (
        c1[..., 2][sh] * mleft + c1[..., 3][sh] * mright
    )
    d2 = (c2[..., 0][sh] * left + c2[..., 1][sh] * right) / (hh * hh) + (
        c2[..., 2][sh] * mleft + c2[..., 3][sh] * mright
    ) / hh
    return val, d1, d2


def _element_blends(nodal, mterms, knots, basis, extra):
    h = np.diff(knots)
    left, right = nodal[:-1], nodal[1:]
    mleft, mright = mterms[:-1], mterms[1:]
    ins = (slice(None), None)
    return _blend(
        tuple(b[None, :, :] for b in basis),
        h[:, None],
        left[ins],
        right[ins],
        mleft[ins],
        mright[ins],
        extra,
    )


def _direction_blends(b, h_e, sides, p1, p2, extra):
    """Per-direction perturbation of the element blend.

    ``p1`` is the perturbation of the endpoint value and ``p2`` that of the
    endpoint slope term; rate directions have ``p1 = 0``.
    """
    c0, c1, c2 = b
    sh = (...,) + (None,) * extra
    phi_v = c0[:, sides].T
    psi_v = c0[:, sides + 2].T
    phi_d = c1[:, sides].T
    psi_d = c1[:, sides + 2].T
    phi_dd = c2[:, sides].T
    psi_dd = c2[:, sides + 2].T
    he = h_e[:, None]
    p1e = p1[:, None]
    p2e = p2[:, None]
    d0 = phi_v[sh] * p1e + (he * psi_v)[sh] * p2e
    d1 = (phi_d / he)[sh] * p1e + psi_d[sh] * p2e
    d2 = (phi_dd / (he * he))[sh] * p1e + (psi_dd / he)[sh] * p2e
    return d0, d1, d2


def _quat_partial_free(b):
    """Partials of ``quat_exp(b)`` in each coordinate direction, series-safe.

    ``b`` is ``(F, 3)``; returns ``(F, 3, 4)``.
    """
    b = np.asarray(b, dtype=float)
    x2 = np.sum(b * b, axis=-1)
    x = np.sqrt(x2)
    small = x < 1e-4
    x_safe = np.where(small, 1.0, x)
    s = np.where(
        small,
        0.5 - x2 / 48.0 + x2 * x2 / 3840.0,
        np.sin(x / 2.0) / x_safe,
    )
    c = np.cos(x / 2.0)
    # (c/2 - s)/|b|^2, smooth through zero
    cs = np.where(
        small,
        -1.0 / 24.0 + x2 / 960.0 - x2 * x2 / 107520.0,
        (c / 2.0 - s) / np.where(small, 1.0, x2),
    )
    out = np.empty(b.shape[:-1] + (3, 4))
    eye = np.eye(3)
    out[..., 0] = -0.5 * s[..., None] * b
    out[..., 1:] = s[..., None, None] * eye + cs[..., None, None] * (
        b[..., :, None] * b[..., None, :]
    )
    return out


def _nodal_partials_matrix(problem, layout, ref, rot, ys):
    """``d R_k / d y_k`` for every knot, stored as ``(N+1, 3, 3, 3)``."""
    n = problem.n_elements
    v0 = problem.initial_direction
    out = np.zeros((n + 1, 3, 3, 3))
    con = [k for k in range(1, n + 1) if layout.y_size[k] == 1]
    free = [k for k in range(1, n + 1) if layout.y_size[k] == 3]
    if con:
        out[con, 0] = rot[con] @ hat(v0)
    if free:
        bs = np.stack([ys[k] for k in free])
        from .liegroup import dexp_so3

        d = dexp_so3(bs[:, None, :], np.eye(3)[None, :, :])  # (F, 3, 3, 3)
        out[free] = ref.rotations[free][:, None] @ d
    return out


def _nodal_partials_quat(problem, layout, ref, ys):
    """``d u_k / d y_k`` for every knot, stored as ``(N+1, 3, 4)``."""
    n = problem.n_elements
    v0 = problem.initial_direction
    out = np.zeros((n + 1, 3, 4))
    con = [k for k in range(1, n + 1) if layout.y_size[k] == 1]
    free = [k for k in range(1, n + 1) if layout.y_size[k] == 3]
    if con:
        beta = np.array([ys[k] for k in con])
        half = np.empty((len(con), 4))
        half[:, 0] = -np.sin(beta / 2.0)
        half[:, 1:] = np.cos(beta / 2.0)[:, None] * v0
        out[con, 0] = 0.5 * quat_mul(ref.quats[con], half)
    if free:
        bs = np.stack([ys[k] for k in free])
        local = _quat_partial_free(bs)  # (F, 3, 4)
        out[free] = quat_mul(ref.quats[free][:, None, :], local)
    return out


def _pure(v):
    return np.concatenate([np.zeros(v.shape[:-1] + (1,)), v], axis=-1)


_HAT_BASIS = hat(np.eye(3))


def _scatter_rows(pt_idx, cols, vals3):
    rows = (3 * pt_idx[:, None] + np.arange(3)[None, :]).ravel()
    cols = np.repeat(cols, 3)
    return rows, cols, vals3.ravel()


def _assemble_matrix_impl(x, problem, ref, with_jacobian):
    layout = problem.layout()
    n, p = problem.n_elements, problem.quad_points
    knots = problem.partition.knots
    rot, omegas = decode_matrix(x, problem, ref, layout)
    ys, _, _ = _deviation_vectors(x, problem, layout)
    omh = hat(omegas)
    mterms = rot @ omh
    xi, wq = gauss01(p)
    basis = hermite_basis(xi)
    a, ad, add = _element_blends(rot, mterms, knots, basis, extra=2)
    npts = n * p
    a = a.reshape(npts, 3, 3)
    ad = ad.reshape(npts, 3, 3)
    add = add.reshape(npts, 3, 3)
    dets = np.linalg.det(a)
    if np.any(dets <= 0.0):
        i = int(np.argmin(dets))
        raise AssemblyError(
            f"blend determinant {dets[i]:.6g} not positive at element {i // p},"
            f" quadrature point {i % p}",
            element=i // p,
            quad_index=i % p,
        )
    q, w, t, hist, _ = _jet_sweeps(a, ad, add, record=with_jacobian)
    alpha = vee(skew_part(t))
    h = np.diff(knots)
    scale = np.sqrt(h[:, None] * wq[None, :]).ravel()
    g = (scale[:, None] * alpha).ravel()
    if not with_jacobian:
        return ResidualSystem(g=g, jac=None, quad_nodes=xi, quad_weights=wq)

    dr_all = _nodal_partials_matrix(problem, layout, ref, rot, ys)
    table = _direction_table(layout)
    max_d = max(len(entries) for entries in table)
    rows_acc, cols_acc, vals_acc = [], [], []
    for d in range(max_d):
        elems = np.array([e for e in range(n) if len(table[e]) > d], dtype=int)
        meta = np.array([table[e][d] for e in elems], dtype=int)
        nodes, kinds, comps, cols = meta[:, 0], meta[:, 1], meta[:, 2], meta[:, 3]
        sides = nodes - elems
        p1 = dr_all[nodes, comps]
        p1[kinds == 1] = 0.0
        p2 = np.where(
            (kinds == 0)[:, None, None],
            p1 @ omh[nodes],
            rot[nodes] @ _HAT_BASIS[comps],
        )
        d0, d1, d2 = _direction_blends(basis, h[elems], sides, p1, p2, extra=2)
        s_count = elems.size
        d0 = d0.reshape(s_count * p, 3, 3)
        d1 = d1.reshape(s_count * p, 3, 3)
        d2 = d2.reshape(s_count * p, 3, 3)
        pt_idx = (elems[:, None] * p + np.arange(p)[None, :]).ravel()
        hist_g = _gather_history(hist, pt_idx)
        u_blk, _, z_blk = _param_sweeps(hist_g, d0, d1, d2)
        dalpha = vee(skew_part(np.swapaxes(u_blk, -1, -2) @ t[pt_idx] + z_blk))
        vals = scale[pt_idx][:, None] * dalpha
        r_i, c_i, v_i = _scatter_rows(pt_idx, np.repeat(cols, p), vals)
        rows_acc.append(r_i)
        cols_acc.append(c_i)
        vals_acc.append(v_i)
    jac = scipy.sparse.coo_matrix(
        (np.concatenate(vals_acc), (np.concatenate(rows_acc), np.concatenate(cols_acc))),
        shape=(3 * npts, layout.dim),
    ).tocsr()
    return ResidualSystem(g=g, jac=jac, quad_nodes=xi, quad_weights=wq)


def assemble_matrix(x, problem, ref):
    """Residual vector and analytic Jacobian for the matrix discretization.

    Per quadrature point the body angular acceleration is
    ``skew(Q^T d2Q/dt2)`` from the coupled polar iteration; Jacobian columns
    replay the iteration for each unknown's perturbation of the blend.
    """
    return _assemble_matrix_impl(x, problem, ref, with_jacobian=True)


def _assemble_quat_impl(x, problem, ref, with_jacobian):
    layout = problem.layout()
    n, p = problem.n_elements, problem.quad_points
    knots = problem.partition.knots
    u, omegas = decode_quat(x, problem, ref, layout)
    ys, _, _ = _deviation_vectors(x, problem, layout)
    mterms = quat_mul(u, _pure(omegas))
    xi, wq = gauss01(p)
    basis = hermite_basis(xi)
    q, qd, qdd = _element_blends(u, mterms, knots, basis, extra=1)
    npts = n * p
    q = q.reshape(npts, 4)
    qd = qd.reshape(npts, 4)
    qdd = qdd.reshape(npts, 4)
    norms = np.linalg.norm(q, axis=-1)
    if np.any(norms < 1e-14):
        i = int(np.argmin(norms))
        raise AssemblyError(
            f"quaternion blend vanished at element {i // p}, quadrature point {i % p}",
            element=i // p,
            quad_index=i % p,
        )
    qinv = quat_inv(q)
    wfull = quat_mul(qinv, qd)
    qiqdd = quat_mul(qinv, qdd)
    alpha = (qiqdd - quat_mul(wfull, wfull))[:, 1:]
    h = np.diff(knots)
    scale = np.sqrt(h[:, None] * wq[None, :]).ravel()
    g = (scale[:, None] * alpha).ravel()
    if not with_jacobian:
        return ResidualSystem(g=g, jac=None, quad_nodes=xi, quad_weights=wq)

    du_all = _nodal_partials_quat(problem, layout, ref, ys)
    table = _direction_table(layout)
    max_d = max(len(entries) for entries in table)
    rows_acc, cols_acc, vals_acc = [], [], []
    eye3 = np.eye(3)
    for d in range(max_d):
        elems = np.array([e for e in range(n) if len(table[e]) > d], dtype=int)
        meta = np.array([table[e][d] for e in elems], dtype=int)
        nodes, kinds, comps, cols = meta[:, 0], meta[:, 1], meta[:, 2], meta[:, 3]
        sides = nodes - elems
        p1 = du_all[nodes, comps]
        p1[kinds == 1] = 0.0
        p2 = np.where(
            (kinds == 0)[:, None],
            quat_mul(p1, _pure(omegas[nodes])),
            quat_mul(u[nodes], _pure(eye3[comps])),
        )
        d0, d1, d2 = _direction_blends(basis, h[elems], sides, p1, p2, extra=1)
        s_count = elems.size
        d0 = d0.reshape(s_count * p, 4)
        d1 = d1.reshape(s_count * p, 4)
        d2 = d2.reshape(s_count * p, 4)
        pt_idx = (elems[:, None] * p + np.arange(p)[None, :]).ravel()
        qinv_g = qinv[pt_idx]
        w_g = wfull[pt_idx]
        qiqdd_g = qiqdd[pt_idx]
        qidq = quat_mul(qinv_g, d0)
        domega = quat_mul(qinv_g, d1) - quat_mul(qidq, w_g)
        dalpha = (
            quat_mul(qinv_g, d2)
            - quat_mul(qidq, qiqdd_g)
            - quat_mul(w_g, domega)
            - quat_mul(domega, w_g)
        )[:, 1:]
        vals = scale[pt_idx][:, None] * dalpha
        r_i, c_i, v_i = _scatter_rows(pt_idx, np.repeat(cols, p), vals)
        rows_acc.append(r_i)
        cols_acc.append(c_i)
        vals_acc.append(v_i)
    jac = scipy.sparse.coo_matrix(
        (np.concatenate(vals_acc), (np.concatenate(rows_acc), np.concatenate(cols_acc))),
        shape=(3 * npts, layout.dim),
    ).tocsr()
    return ResidualSystem(g=g, jac=jac, quad_nodes=xi, quad_weights=wq)


def assemble_quat(x, problem, ref):
    """Residual vector and analytic Jacobian for the quaternion discretization.

    Per quadrature point the residual components are the imaginary part of
    ``q^{-1} q'' - (q^{-1} q')^2``; perturbations follow by the product rule
    through the same quaternion algebra.
    """
    return _assemble_quat_impl(x, problem, ref, with_jacobian=True)


def assemble(x, problem, ref, with_jacobian=True):
    if problem.method == "matrix":
        return _assemble_matrix_impl(x, problem, ref, with_jacobian)
    return _assemble_quat_impl(x, problem, ref, with_jacobian)


@dataclass(frozen=True)
class LMStep:
    iteration: int
    objective: float
    lam: float
    accepted: bool


@dataclass(frozen=True)
class LMResult:
    x: np.ndarray
    objective: float
    gradient_inf: float
    steps: tuple
    iterations: int
    converged: bool
    accepted_iterates: tuple = ()


def _solve_damped(jtj, lam, rhs, periodic):
    dim = rhs.size
    if dim <= 600 or periodic:
        m = jtj.toarray()
        m[np.diag_indices_from(m)] += lam
        c, low = scipy.linalg.cho_factor(m, check_finite=False)
        return scipy.linalg.cho_solve((c, low), rhs, check_finite=False)
    coo = jtj.tocoo()
    bw = int(np.max(np.abs(coo.row - coo.col)))
    ab = np.zeros((bw + 1, dim))
    mask = coo.row <= coo.col
    ab[bw + coo.row[mask] - coo.col[mask], coo.col[mask]] = coo.data[mask]
    ab[bw, :] += lam
    return scipy.linalg.solveh_banded(ab, rhs, check_finite=False)


def lm_solve(
    problem,
    ref,
    x0=None,
    *,
    lambda0=0.01,
    max_iter=2000,
    grad_tol=1e-10,
    stall_tol=1e-14,
    stall_window=20,
    lambda_min=1e-12,
    lambda_max=1e12,
    record_iterates=False,
):
    """Damped least-squares iteration with the accept/reject damping rule.

    Steps solve ``(J^T J + lam I) d = J^T g`` and move to ``x - d``; an
    accepted step (objective decreased) divides ``lam`` by 10, a rejected one
    multiplies it by 10.  Stops at a stationary point (``|J^T g|_inf`` below
    ``grad_tol``) or on stagnation: relative objective improvement at most
    ``stall_tol`` over the last ``stall_window`` iterations, accepted or not
    (near the roundoff floor most trial steps are rejected, so stagnation
    must count rejected iterations too).
    """
    layout = problem.layout()
    x = np.zeros(layout.dim) if x0 is None else np.asarray(x0, dtype=float).copy()
    try:
        system = assemble(x, problem, ref)
    except AssemblyError as exc:
        raise AssemblyError(
            f"assembly failed at the initial iterate: {exc}",
            element=exc.element,
            quad_index=exc.quad_index,
        ) from exc
    f = system.objective
    lam = lambda0
    steps = []
    iterates = [x.copy()] if record_iterates else []
    best_x, best_f = x.copy(), f
    recent = [f]
    converged = False
    grad_inf = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        grad = system.jac.T @ system.g
        grad_inf = float(np.max(np.abs(grad))) if grad.size else 0.0
        if grad_inf <= grad_tol:
            converged = True
            break
        jtj = (system.jac.T @ system.jac).tocsr()
        try:
            step = _solve_damped(jtj, lam, grad, problem.periodic)
        except np.linalg.LinAlgError:
            lam = min(lam * 10.0, lambda_max)
            steps.append(LMStep(it, f, lam, False))
            continue
        x_trial = x - step
        try:
            f_trial = assemble(x_trial, problem, ref, with_jacobian=False).objective
        except AssemblyError as exc:
            raise AssemblyError(
                f"assembly failed at LM iteration {it}: {exc}",
                element=exc.element,
                quad_index=exc.quad_index,
            ) from exc
        if f_trial < f:
            x, f = x_trial, f_trial
            system = assemble(x, problem, ref)
            lam = max(lam / 10.0, lambda_min)
            steps.append(LMStep(it, f, lam, True))
            if record_iterates:
                iterates.append(x.copy())
            if f < best_f:
                best_x, best_f = x.copy(), f
        else:
            lam = min(lam * 10.0, lambda_max)
            steps.append(LMStep(it, f_trial, lam, False))
        recent.append(f)
        if len(recent) > stall_window:
            f_then = recent.pop(0)
            if (f_then - f) / max(f_then, np.finfo(float).tiny) <= stall_tol:
                converged = True
                break
    if not converged:
        raise SolverDivergedError(
            f"no stationary point within {max_iter} iterations"
            f" (gradient inf-norm {grad_inf:.3e})",
            best_x=best_x,
            trace=tuple(steps),
        )
    return LMResult(
        x=x,
        objective=f,
        gradient_inf=grad_inf,
        steps=tuple(steps),
        iterations=it,
        converged=True,
        accepted_iterates=tuple(iterates),
    )


@dataclass(frozen=True)
class SolveResult:
    problem: MinAccelProblem
    reference: ReferenceSequence
    lm: LMResult
    curve: object  # HermiteRotationCurve or HermiteQuatCurve


def curve_from_unknowns(x, problem, ref):
    """Decode an unknown vector into the corresponding Hermite curve."""
    if problem.method == "matrix":
        rot, omegas = decode_matrix(x, problem, ref)
        return HermiteRotationCurve(problem.partition, rot, hat(omegas))
    u, omegas = decode_quat(x, problem, ref)
    return HermiteQuatCurve(problem.partition, u, omegas)


def encode_curve(curve, problem, ref=None):
    """Unknown vector whose decoded nodes best match ``curve`` at the knots.

    Samples the curve at the problem's knots, takes logarithmic deviations
    from the reference, and projects constrained knots onto their fiber
    angle.  Used to warm-start a fine solve from a coarser solution.
    """
    from .liegroup import log_so3, quat_log

    if ref is None:
        ref = build_reference(problem)
    layout = problem.layout()
    knots = problem.partition.knots
    n = problem.n_elements
    v0 = problem.initial_direction
    ys = {}
    if problem.method == "matrix":
        s = curve.eval_many(knots)
        omegas = vee(s.omega)
        for k in range(1, n + 1):
            if layout.aliased(k) or layout.y_size[k] == 0:
                continue
            b = log_so3(ref.rotations[k].T @ s.r[k])
            ys[k] = float(b @ v0) if layout.y_size[k] == 1 else b
    else:
        s = curve.eval_many(knots)
        omegas = s.omega
        for k in range(1, n + 1):
            if layout.aliased(k) or layout.y_size[k] == 0:
                continue
            # The [0, 2pi) log branch reproduces the signed quaternion, which
            # keeps the sampled curve's hemisphere continuity intact.
            rel = quat_mul(quat_inv(ref.quats[k]), s.u[k])
            b = quat_log(rel / np.linalg.norm(rel))
            ys[k] = float(b @ v0) if layout.y_size[k] == 1 else b
    return layout.pack(ys, omegas)


def solve_min_accel(problem, ref=None, x0=None, **lm_kwargs):
    """Build the reference, run the least-squares solve, decode the curve."""
    if ref is None:
        ref = build_reference(problem)
    result = lm_solve(problem, ref, x0, **lm_kwargs)
    curve = curve_from_unknowns(result.x, problem, ref)
    return SolveResult(problem=problem, reference=ref, lm=result, curve=curve)


def measure_error(curve_a, curve_b, partition, quad_points=4):
    """L2 and H1-seminorm distances between two curves in their embedding.

    Integrates elementwise Gauss quadrature on ``partition``; both curves
    must be evaluable there and of the same kind.
    """
    xi, wq = gauss01(quad_points)
    knots = partition.knots
    h = np.diff(knots)
    ts = (knots[:-1, None] + h[:, None] * xi[None, :]).ravel()
    wts = (h[:, None] * wq[None, :]).ravel()
    va, da = curve_a.flat_eval(ts)
    vb, db = curve_b.flat_eval(ts)
    l2 = float(np.sqrt(np.sum(wts * np.sum((va - vb) ** 2, axis=1))))
    h1 = float(np.sqrt(np.sum(wts * np.sum((da - db) ** 2, axis=1))))
    return l2, h1


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    l2: float
    l2_order: float | None
    h1: float
    h1_order: float | None


def fit_order(ns, errs):
    """Least-squares slope of log2(err) against log2(1/n)."""
    return float(-np.polyfit(np.log2(np.asarray(ns, float)), np.log2(np.asarray(errs, float)), 1)[0])


def convergence_study(make_problem, n_list, n_ref, warm_start=True, **lm_kwargs):
    """Solve at a fine reference and at each coarse ``n``; tabulate errors.

    ``make_problem(n)`` must return the same continuous problem discretized
    with ``n`` elements.  Errors are measured against the reference curve at
    the quadrature points of each coarse partition; per-row orders are log2
    ratios of consecutive dyadic errors.

    With ``warm_start`` each solve after the first starts from the previous
    (coarser) solution re-encoded on the finer partition, climbing a dyadic
    ladder up to the reference.  This keeps every solve in one local-minimizer
    family and cuts the iteration count dramatically; the coarsest solve
    still starts from the reference sequence with zero rates.
    """
    n_list = list(n_list)
    if any(b != 2 * a for a, b in zip(n_list, n_list[1:])):
        raise ProblemValidationError("the refinement list must be dyadic")
    if max(n_list) >= n_ref:
        raise ProblemValidationError("the reference must be finer than every tabulated n")
    ladder = list(n_list)
    while 2 * ladder[-1] <= n_ref:
        ladder.append(2 * ladder[-1])
    if ladder[-1] != n_ref:
        raise ProblemValidationError("the reference n must be a dyadic multiple of the largest n")
    solutions = {}
    prev_sol = None
    for n in ladder:
        problem = make_problem(n)
        ref = build_reference(problem)
        x0 = None
        if warm_start and prev_sol is not None:
            x0 = encode_curve(prev_sol.curve, problem, ref)
        sol = solve_min_accel(problem, ref, x0=x0, **lm_kwargs)
        solutions[n] = sol
        prev_sol = sol
    ref_solution = solutions[n_ref]
    rows = []
    prev = None
    for n in n_list:
        sol = solutions[n]
        l2, h1 = measure_error(sol.curve, ref_solution.curve, sol.problem.partition)
        if prev is None:
            rows.append(ConvergenceRow(n, l2, None, h1, None))
        else:
            rows.append(
                ConvergenceRow(
                    n,
                    l2,
                    float(np.log2(prev[0] / l2)),
                    h1,
                    float(np.log2(prev[1] / h1)),
                )
            )
        prev = (l2, h1)
    return rows, ref_solution
