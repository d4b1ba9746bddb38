"""Polar decomposition and derivative propagation for its orthogonal factor.

The orthogonal factor ``Q`` of ``A = Q Y`` (``Y`` symmetric positive
definite) is the closest rotation to ``A`` in the Frobenius norm whenever
``det A > 0``.  This module computes ``Q`` by fixed-point iteration and
propagates first, second, and parametric derivatives through the iteration,
alongside the explicit formulas available at special points.

Derivative blocks are always reported pulled back to the identity, i.e. as
``Q^T dQ`` rather than ``dQ``; the first-order block is skew-symmetric up to
roundoff.

Functions accept stacked inputs with leading batch axes; iterations run until
every batch member meets the convergence rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionError,
    IterationLimitError,
    PreconditionError,
    ProjectionDomainError,
    SingularityError,
)
from .liegroup import lyapunov_solve, skew_part, sym_part

# Relative Frobenius increment thresholds and the shared iteration cap.
FACTOR_TOL = 1e-14
DERIV_TOL = 1e-13
MAX_ITER = 100


def _t(a):
    return np.swapaxes(a, -1, -2)


def _fro(a):
    return np.sqrt(np.sum(a * a, axis=(-2, -1)))


def _check_square(a, who):
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DimensionError(f"{who} needs square matrices, got shape {a.shape}")


@dataclass(frozen=True)
class PolarFactors:
    """Orthogonal/stretch factor pair with iteration diagnostics."""

    q: np.ndarray
    y: np.ndarray
    iterations: int
    residual: float  # Frobenius norm of Q Y - A


@dataclass(frozen=True)
class PolarJet:
    """Orthogonal factor with derivative blocks pulled back by ``Q^T``.

    ``vel = Q^T dQ/dt`` and ``acc = Q^T d2Q/dt2``; the parametric blocks
    ``dq``, ``dvel``, ``dacc`` hold the same quantities differentiated in an
    independent perturbation direction, when requested.
    """

    q: np.ndarray
    vel: np.ndarray
    acc: np.ndarray
    dq: np.ndarray | None = None
    dvel: np.ndarray | None = None
    dacc: np.ndarray | None = None
    iterations: int = 0


def newton_polar_step(x):
    """One Newton sweep ``(X + X^{-T}) / 2`` toward the orthogonal factor."""
    x = np.asarray(x, dtype=float)
    return 0.5 * (x + _t(np.linalg.inv(x)))


def polar_newton(a, tol=FACTOR_TOL, max_iter=MAX_ITER):
    """Polar decomposition of a single matrix by the Newton iteration.

    Requires ``det A > 0``; converges globally and quadratically for
    nonsingular input.  The stretch factor is recovered as ``sym(Q^T A)``
    after convergence.
    """
    a = np.asarray(a, dtype=float)
    _check_square(a, "polar_newton")
    det = float(np.linalg.det(a))
    if det <= 0.0:
        raise ProjectionDomainError(
            f"determinant {det:.6g} is not positive; projection undefined", det=det
        )
    x = a
    for it in range(1, max_iter + 1):
        xn = newton_polar_step(x)
        inc = _fro(xn - x)
        x = xn
        if inc <= tol * _fro(x):
            break
    else:
        raise IterationLimitError(f"polar Newton iteration did not converge in {max_iter} sweeps")
    y = sym_part(_t(x) @ a)
    residual = float(_fro(x @ y - a))
    return PolarFactors(q=x, y=y, iterations=it, residual=residual)


def _spectral_norm_estimate(a, sweeps=60):
    # Power iteration on A^T A; deterministic start vector.
    b = a.T @ a
    v = np.ones(a.shape[-1]) / np.sqrt(a.shape[-1])
    for _ in range(sweeps):
        w = b @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    return float(np.sqrt(v @ (b @ v)))


def polar_newton_schulz(a, tol=FACTOR_TOL, max_iter=MAX_ITER):
    """Polar decomposition by the inversion-free Newton-Schulz iteration.

    Converges only when every singular value of ``A`` lies in ``(0, sqrt 3)``;
    a power-iteration estimate of the spectral norm gates the call.
    """
    a = np.asarray(a, dtype=float)
    _check_square(a, "polar_newton_schulz")
    det = float(np.linalg.det(a))
    if det <= 0.0:
        raise ProjectionDomainError(
            f"determinant {det:.6g} is not positive; projection undefined", det=det
        )
    est = _spectral_norm_estimate(a)
    if est >= np.sqrt(3.0):
        raise PreconditionError(
            f"spectral norm estimate {est:.6g} is not below sqrt(3); Newton-Schulz diverges"
        )
    eye = np.eye(a.shape[-1])
    x = a
    for it in range(1, max_iter + 1):
        xn = 0.5 * x @ (3.0 * eye - x.T @ x)
        inc = _fro(xn - x)
        x = xn
        if inc <= tol * _fro(x):
            break
        if _fro(x) > 10.0 * np.sqrt(a.shape[-1]):
            raise PreconditionError("Newton-Schulz iterates diverged; singular values too large")
    else:
        raise IterationLimitError(
            f"Newton-Schulz iteration did not converge in {max_iter} sweeps"
        )
    y = sym_part(x.T @ a)
    residual = float(_fro(x @ y - a))
    return PolarFactors(q=x, y=y, iterations=it, residual=residual)


def polar_derivative_lyapunov(factors, da):
    """Body velocity ``Q^T dQ`` from the Lyapunov equation ``Y W + W Y = Q^T dA - dA^T Q``."""
    da = np.asarray(da, dtype=float)
    rhs = factors.q.T @ da - da.T @ factors.q
    return lyapunov_solve(factors.y, rhs)


def polar_derivative_stretch(a, da, factors):
    """``dQ`` via the stretch-factor path.

    Solves ``Y dY + dY Y = dA^T A + A^T dA`` for ``dY`` and recovers
    ``dQ = (dA - Q dY) Y^{-1}``.  Agrees with the Lyapunov path on its domain.
    """
    a = np.asarray(a, dtype=float)
    da = np.asarray(da, dtype=float)
    rhs = da.T @ a + a.T @ da
    dy = lyapunov_solve(factors.y, rhs)
    return (da - factors.q @ dy) @ np.linalg.inv(factors.y)


def polar_derivative_at_node(a, da, tol=1e-10):
    """``(dQ, dY)`` when ``A`` itself is orthogonal, where both are explicit.

    At such points ``dQ = A skew(A^T dA)`` and ``dY = sym(A^T dA)``.
    """
    a = np.asarray(a, dtype=float)
    da = np.asarray(da, dtype=float)
    n = a.shape[-1]
    if _fro(a.T @ a - np.eye(n)) > tol:
        raise PreconditionError("node derivative formula needs an orthogonal matrix")
    m = a.T @ da
    return a @ skew_part(m), sym_part(m)


def polar_derivative_3d(a, da, factors):
    """``dQ`` from the closed 3x3 formula ``2 Q (det Z)^{-1} Z skew(A^{-1} dA Y) Z``.

    ``Z = tr(Y) I - Y``; fails when ``Z`` is singular.
    """
    a = np.asarray(a, dtype=float)
    da = np.asarray(da, dtype=float)
    if a.shape != (3, 3):
        raise DimensionError(f"polar_derivative_3d needs 3x3 matrices, got shape {a.shape}")
    y = factors.y
    z = np.trace(y) * np.eye(3) - y
    dz = float(np.linalg.det(z))
    if abs(dz) < 1e-12 * max(1.0, float(np.trace(y))) ** 3:
        raise SingularityError("tr(Y) I - Y is singular; closed 3x3 derivative formula undefined")
    core = skew_part(np.linalg.solve(a, da @ y))
    return 2.0 * factors.q @ (z @ core @ z) / dz


def _jet_sweeps(a, da, dda, record=False, x_tol=FACTOR_TOL, d_tol=DERIV_TOL, max_iter=MAX_ITER):
    """Coupled Newton sweeps for the factor and its derivative blocks.

    Returns ``(q, w, t, history, iterations)`` where ``w -> Q^T dQ`` and
    ``t -> Q^T ddQ``.  The factor sequence must settle (relative increment
    below ``x_tol``) for two sweeps and the derivative blocks below ``d_tol``
    before stopping; at the exact fixed point the derivative recursions
    stabilize within two sweeps of the factor, so this terminates promptly.

    When ``record`` is set, the per-sweep state needed to replay the
    recursion for extra perturbation directions is returned, with two
    appended cleanup sweeps at the converged factor.
    """
    a = np.asarray(a, dtype=float)
    da = np.asarray(da, dtype=float)
    dda = np.asarray(dda, dtype=float)
    _check_square(a, "polar_jet")
    det = np.linalg.det(a)
    if np.any(det <= 0.0):
        bad = float(np.min(det))
        raise ProjectionDomainError(
            f"determinant {bad:.6g} is not positive; projection undefined", det=bad
        )
    x = a
    xinv = np.linalg.inv(x)
    w = xinv @ da
    t = xinv @ dda
    history = []
    settled = 0
    tiny = np.finfo(float).tiny
    for it in range(1, max_iter + 1):
        xit = _t(xinv)
        xn = 0.5 * (x + xit)
        xinv_n = np.linalg.inv(xn)
        wn = 0.5 * xinv_n @ (x @ w - xit @ _t(w))
        tn = 0.5 * xinv_n @ (x @ t - xit @ _t(t - 2.0 * w @ w))
        if record:
            history.append((x, xinv, xit, w, t, xinv_n))
        inc_x = float(np.max(_fro(xn - x) / np.maximum(_fro(xn), tiny)))
        inc_w = float(np.max(_fro(wn - w) / np.maximum(_fro(wn), 1.0)))
        inc_t = float(np.max(_fro(tn - t) / np.maximum(_fro(tn), 1.0)))
        x, xinv, w, t = xn, xinv_n, wn, tn
        settled = settled + 1 if inc_x <= x_tol else 0
        if settled >= 2 and inc_w <= d_tol and inc_t <= d_tol:
            break
    else:
        raise IterationLimitError(f"coupled polar iteration did not converge in {max_iter} sweeps")
    if record:
        # Two cleanup sweeps at the converged factor, for replayed directions.
        xit = _t(xinv)
        history.append((x, xinv, xit, w, t, xinv))
        history.append((x, xinv, xit, w, t, xinv))
    return x, w, t, history, it


def _param_sweeps(history, pa, pda, pdda):
    """Replay recorded sweeps for one extra perturbation direction.

    Returns ``(u, v, z) -> (Q^T dQ, Q^T d(dQ/dt), Q^T d(d2Q/dt2))`` for the
    direction whose blend derivatives are ``(pa, pda, pdda)``.
    """
    x0inv = history[0][1]
    u = x0inv @ pa
    v = x0inv @ pda
    z = x0inv @ pdda
    for x, xinv, xit, w, t, xinv_n in history:
        un = 0.5 * xinv_n @ (x @ u - xit @ _t(u))
        vn = 0.5 * xinv_n @ (x @ v - xit @ _t(v - w @ u - u @ w))
        # The WUW term enters with a plus sign: differentiating the
        # second-derivative sweep gives 2 W (W U + U W - V) + 2 (U W - V) W,
        # which finite differences confirm.
        bracket = (
            z
            + 2.0 * w @ (w @ u + u @ w - v)
            + 2.0 * (u @ w - v) @ w
            - u @ t
            - t @ u
        )
        zn = 0.5 * xinv_n @ (x @ z - xit @ _t(bracket))
        u, v, z = un, vn, zn
    return u, v, z


def _gather_history(history, idx):
    """Index every recorded array along the batch axis (for shared sweeps)."""
    return [tuple(arr[idx] for arr in entry) for entry in history]


def polar_jet(a, da, dda):
    """Factor, body velocity, and body acceleration of ``t -> P(A(t))``.

    ``(a, da, dda)`` are the value and first two derivatives of the matrix
    curve at the evaluation point.
    """
    q, w, t, _, it = _jet_sweeps(a, da, dda, record=False)
    return PolarJet(q=q, vel=w, acc=t, iterations=it)


def polar_jet_param(a, da, dda, pa, pda, pdda):
    """Like :func:`polar_jet`, plus derivatives in an extra direction.

    ``(pa, pda, pdda)`` are the perturbations of ``(a, da, dda)`` in that
    direction; the returned ``dq``, ``dvel``, ``dacc`` blocks are their images
    pulled back by ``Q^T``.
    """
    q, w, t, history, it = _jet_sweeps(a, da, dda, record=True)
    u, v, z = _param_sweeps(history, np.asarray(pa, float), np.asarray(pda, float), np.asarray(pdda, float))
    return PolarJet(q=q, vel=w, acc=t, dq=u, dvel=v, dacc=z, iterations=it)


def polar_orthogonal_batch(a, tol=FACTOR_TOL, max_iter=MAX_ITER):
    """Orthogonal polar factors of a stack of matrices (values only)."""
    a = np.asarray(a, dtype=float)
    _check_square(a, "polar_orthogonal_batch")
    det = np.linalg.det(a)
    if np.any(det <= 0.0):
        bad = float(np.min(det))
        raise ProjectionDomainError(
            f"determinant {bad:.6g} is not positive; projection undefined", det=bad
        )
    x = a
    tiny = np.finfo(float).tiny
    for _ in range(max_iter):
        xn = newton_polar_step(x)
        inc = float(np.max(_fro(xn - x) / np.maximum(_fro(xn), tiny)))
        x = xn
        if inc <= tol:
            return x
    raise IterationLimitError(f"polar Newton iteration did not converge in {max_iter} sweeps")


def linear_segment_velocity(r0, r1, h, t):
    """Projected value and body velocity of the linear blend of two rotations.

    For ``A(t) = ((h - t)/h) R0 + (t/h) R1`` the projected curve has the
    closed-form body velocity ``skew(A^{-1} dA)`` with ``dA = (R1 - R0)/h``;
    no derivative iteration is involved.  Fails when the blend leaves the
    projection domain (relative rotation angle pi at the midpoint).
    """
    r0 = np.asarray(r0, dtype=float)
    r1 = np.asarray(r1, dtype=float)
    if not 0.0 <= t <= h:
        raise ValueError(f"t = {t} outside segment [0, {h}]")
    a = ((h - t) / h) * r0 + (t / h) * r1
    det = float(np.linalg.det(a))
    if det <= 1e-12:
        raise ProjectionDomainError(
            f"linear blend determinant {det:.6g} is not positive", det=det
        )
    q = polar_newton(a).q
    body = skew_part(np.linalg.solve(a, (r1 - r0) / h))
    return q, body
