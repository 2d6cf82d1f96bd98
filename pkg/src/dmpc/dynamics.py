"""Discrete-time system models with box-bounded states and inputs.

Every model maps (state, input) to the successor state over a fixed step
duration ``dt``. Bounds are stored on the model but are *not* enforced by
``step``; the trajectory optimizer owns constraint handling, simulation
stays pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

__all__ = [
    "SystemModel",
    "LinearSystem",
    "BicycleParams",
    "KinematicBicycle",
    "double_integrator",
    "bicycle_slip_angle",
    "is_at_equilibrium",
    "wrap_angle",
]


def wrap_angle(theta):
    """Wrap an angle (or array of angles) in radians to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(theta), 2.0 * np.pi)


@dataclass(frozen=True)
class BicycleParams:
    """Axle geometry: distances from the center of mass to each axle (m)."""

    l_f: float = 1.0
    l_r: float = 1.0

    def __post_init__(self):
        if self.l_f <= 0 or self.l_r <= 0:
            raise ValueError("axle distances must be positive")


def bicycle_slip_angle(delta: float, params: BicycleParams) -> float:
    """Angle between the velocity of the center of mass and the body axis.

    Requires |delta| < pi/2 so tan(delta) is well defined.
    """
    if abs(delta) >= np.pi / 2:
        raise ValueError("steering angle must satisfy |delta| < pi/2")
    ratio = params.l_r / (params.l_f + params.l_r)
    return float(np.arctan(ratio * np.tan(delta)))


class SystemModel:
    """Base class for discrete-time models x' = f(x, u).

    Subclasses implement single-step, batched-rollout, and rollout-adjoint
    evaluation. All evaluation paths must be bit-deterministic so logged
    trajectories replay exactly.
    """

    n: int
    m: int
    dt: float
    x_lo: np.ndarray
    x_hi: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray
    u_eq: np.ndarray
    # indices of angular state components (compared modulo 2*pi) and of the
    # planar position components (used for reachability pre-filters)
    angle_indices: tuple = ()
    position_indices: tuple = ()

    def _init_bounds(self, x_lo, x_hi, u_lo, u_hi, u_eq):
        self.x_lo = np.asarray(x_lo, dtype=float)
        self.x_hi = np.asarray(x_hi, dtype=float)
        self.u_lo = np.asarray(u_lo, dtype=float)
        self.u_hi = np.asarray(u_hi, dtype=float)
        self.u_eq = (
            np.zeros(self.m) if u_eq is None else np.asarray(u_eq, dtype=float)
        )
        if self.n < 1 or self.m < 1 or self.dt <= 0:
            raise ValueError("need n >= 1, m >= 1, dt > 0")
        for lo, hi, k in (
            (self.x_lo, self.x_hi, self.n),
            (self.u_lo, self.u_hi, self.m),
        ):
            if lo.shape != (k,) or hi.shape != (k,):
                raise ValueError("bound vectors have the wrong shape")
            if np.any(lo > hi):
                raise ValueError("lower bounds exceed upper bounds")

    def _check_xu(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"state has shape {x.shape}, expected ({self.n},)")
        if u.shape != (self.m,):
            raise ValueError(f"input has shape {u.shape}, expected ({self.m},)")
        return x, u

    def step(self, x, u) -> np.ndarray:
        """Successor state after one step of duration ``dt``."""
        raise NotImplementedError

    def rollout_batch(self, x0, U) -> np.ndarray:
        """Simulate U of shape (C, N, m) from a shared x0; returns (C, N+1, n)."""
        raise NotImplementedError

    def rollout_vjp_batch(self, X, U, x_bar) -> np.ndarray:
        """Pull cotangents on the states back to the inputs.

        ``x_bar`` has shape (C, N+1, n); entry k holds the cost gradient with
        respect to state k. Returns the input-space gradient (C, N, m).
        """
        raise NotImplementedError

    def step_jacobians_batch(self, X, U):
        """Per-step Jacobians of the discrete map along a batch of rollouts.

        Returns (A, B) with shapes (C, N, n, n) and (C, N, n, m), where
        A[c, k] = d step/d x and B[c, k] = d step/d u at (X[c, k], U[c, k]).
        """
        raise NotImplementedError

    def rollout(self, x0, U) -> np.ndarray:
        """Simulate a single input sequence (N, m); returns (N+1, n)."""
        U = np.asarray(U, dtype=float)
        return self.rollout_batch(x0, U[None])[0]

    def max_step_distance(self):
        """Upper bound on per-step travel of the position components.

        ``None`` means no usable bound; callers then skip distance-based
        candidate pruning.
        """
        return None

    def reachable_distance_bound(self, x0, horizon):
        """Upper bound on total position travel over ``horizon`` steps.

        Defaults to horizon * max_step_distance; models can tighten it
        using the current state (for example the current speed).
        """
        step = self.max_step_distance()
        if step is None:
            return None
        return horizon * step


class LinearSystem(SystemModel):
    """Exact discrete update x' = A x + B u."""

    def __init__(self, A, B, dt, x_lo=None, x_hi=None, u_lo=None, u_hi=None,
                 u_eq=None):
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float)
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise ValueError("A must be square")
        if self.B.ndim != 2 or self.B.shape[0] != self.A.shape[0]:
            raise ValueError("B rows must match A")
        self.n = self.A.shape[0]
        self.m = self.B.shape[1]
        self.dt = float(dt)
        inf = np.inf
        self._init_bounds(
            np.full(self.n, -inf) if x_lo is None else x_lo,
            np.full(self.n, inf) if x_hi is None else x_hi,
            np.full(self.m, -inf) if u_lo is None else u_lo,
            np.full(self.m, inf) if u_hi is None else u_hi,
            u_eq,
        )

    def step(self, x, u):
        x, u = self._check_xu(x, u)
        return self.A @ x + self.B @ u

    def rollout_batch(self, x0, U):
        x0 = np.asarray(x0, dtype=float)
        U = np.asarray(U, dtype=float)
        C, N, _ = U.shape
        X = np.empty((C, N + 1, self.n))
        X[:, 0] = x0
        for k in range(N):
            X[:, k + 1] = X[:, k] @ self.A.T + U[:, k] @ self.B.T
        return X

    def rollout_vjp_batch(self, X, U, x_bar):
        C, N, _ = U.shape
        GU = np.empty_like(U)
        lam = x_bar[:, N].copy()
        for k in range(N - 1, -1, -1):
            GU[:, k] = lam @ self.B
            lam = x_bar[:, k] + lam @ self.A
        return GU

    def step_jacobians_batch(self, X, U):
        C, N, _ = U.shape
        A = np.broadcast_to(self.A, (C, N, self.n, self.n)).copy()
        B = np.broadcast_to(self.B, (C, N, self.n, self.m)).copy()
        return A, B


def double_integrator(dt=0.5, u_max=np.inf, x_lo=None, x_hi=None) -> LinearSystem:
    """Point mass with x' = [x0 + dt*x1, x1 + dt*u]."""
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([[0.0], [dt]])
    return LinearSystem(
        A, B, dt,
        x_lo=x_lo, x_hi=x_hi,
        u_lo=np.array([-u_max]), u_hi=np.array([u_max]),
    )


# --- kinematic bicycle kernels -------------------------------------------
#
# Continuous dynamics for state (x, y, psi, v) and input (delta, a):
#   dx = v cos(psi + beta),  dy = v sin(psi + beta)
#   dpsi = v sin(beta) / l_r,  dv = a
# with beta = atan(kb tan delta), kb = l_r / (l_f + l_r).
# One discrete step integrates these with classical RK4 over dt.


@numba.njit(cache=True)
def _bicycle_rhs(x, u, kb, lr, out):
    beta = np.arctan(kb * np.tan(u[0]))
    c = np.cos(x[2] + beta)
    s = np.sin(x[2] + beta)
    out[0] = x[3] * c
    out[1] = x[3] * s
    out[2] = x[3] * np.sin(beta) / lr
    out[3] = u[1]


@numba.njit(cache=True)
def _bicycle_rk4_step(x, u, dt, kb, lr, out):
    k1 = np.empty(4)
    k2 = np.empty(4)
    k3 = np.empty(4)
    k4 = np.empty(4)
    tmp = np.empty(4)
    _bicycle_rhs(x, u, kb, lr, k1)
    for i in range(4):
        tmp[i] = x[i] + 0.5 * dt * k1[i]
    _bicycle_rhs(tmp, u, kb, lr, k2)
    for i in range(4):
        tmp[i] = x[i] + 0.5 * dt * k2[i]
    _bicycle_rhs(tmp, u, kb, lr, k3)
    for i in range(4):
        tmp[i] = x[i] + dt * k3[i]
    _bicycle_rhs(tmp, u, kb, lr, k4)
    for i in range(4):
        out[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@numba.njit(cache=True)
def _bicycle_rollout(x0, U, dt, kb, lr):
    C, N, _ = U.shape
    X = np.empty((C, N + 1, 4))
    for c in range(C):
        for i in range(4):
            X[c, 0, i] = x0[i]
        for k in range(N):
            _bicycle_rk4_step(X[c, k], U[c, k], dt, kb, lr, X[c, k + 1])
    return X


@numba.njit(cache=True)
def _bicycle_rhs_vjp(x, u, kb, lr, w, gx, gu):
    # accumulate J_f(x,u)^T w into gx, gu
    td = np.tan(u[0])
    beta = np.arctan(kb * td)
    c = np.cos(x[2] + beta)
    s = np.sin(x[2] + beta)
    sb = np.sin(beta)
    cb = np.cos(beta)
    v = x[3]
    g_angle = -v * s * w[0] + v * c * w[1]          # d/d(psi+beta)
    gx[2] += g_angle
    gx[3] += c * w[0] + s * w[1] + sb / lr * w[2]
    dbeta_ddelta = kb * (1.0 + td * td) / (1.0 + (kb * td) * (kb * td))
    gu[0] += (g_angle + v * cb / lr * w[2]) * dbeta_ddelta
    gu[1] += w[3]


@numba.njit(cache=True)
def _bicycle_vjp(X, U, x_bar, dt, kb, lr):
    """Backpropagate state cotangents x_bar through the RK4 rollout."""
    C, N, _ = U.shape
    GU = np.zeros((C, N, 2))
    x2 = np.empty(4)
    x3 = np.empty(4)
    x4 = np.empty(4)
    k1 = np.empty(4)
    k2 = np.empty(4)
    k3 = np.empty(4)
    bk = np.empty(4)
    lam = np.empty(4)
    lam_new = np.empty(4)
    for c in range(C):
        for i in range(4):
            lam[i] = x_bar[c, N, i]
        for k in range(N - 1, -1, -1):
            x1 = X[c, k]
            u = U[c, k]
            _bicycle_rhs(x1, u, kb, lr, k1)
            for i in range(4):
                x2[i] = x1[i] + 0.5 * dt * k1[i]
            _bicycle_rhs(x2, u, kb, lr, k2)
            for i in range(4):
                x3[i] = x1[i] + 0.5 * dt * k2[i]
            _bicycle_rhs(x3, u, kb, lr, k3)
            for i in range(4):
                x4[i] = x1[i] + dt * k3[i]

            for i in range(4):
                lam_new[i] = lam[i]

            # stage 4: x_next += dt/6 * k4, k4 = f(x4, u)
            for i in range(4):
                bk[i] = dt / 6.0 * lam[i]
            bx4 = np.zeros(4)
            _bicycle_rhs_vjp(x4, u, kb, lr, bk, bx4, GU[c, k])
            for i in range(4):
                lam_new[i] += bx4[i]

            # stage 3: x_next += dt/3 * k3, and x4 = x1 + dt*k3
            for i in range(4):
                bk[i] = dt / 3.0 * lam[i] + dt * bx4[i]
            bx3 = np.zeros(4)
            _bicycle_rhs_vjp(x3, u, kb, lr, bk, bx3, GU[c, k])
            for i in range(4):
                lam_new[i] += bx3[i]

            # stage 2: x_next += dt/3 * k2, and x3 = x1 + dt/2*k2
            for i in range(4):
                bk[i] = dt / 3.0 * lam[i] + 0.5 * dt * bx3[i]
            bx2 = np.zeros(4)
            _bicycle_rhs_vjp(x2, u, kb, lr, bk, bx2, GU[c, k])
            for i in range(4):
                lam_new[i] += bx2[i]

            # stage 1: x_next += dt/6 * k1, and x2 = x1 + dt/2*k1
            for i in range(4):
                bk[i] = dt / 6.0 * lam[i] + 0.5 * dt * bx2[i]
            bx1 = np.zeros(4)
            _bicycle_rhs_vjp(x1, u, kb, lr, bk, bx1, GU[c, k])
            for i in range(4):
                lam_new[i] += bx1[i]

            for i in range(4):
                lam[i] = lam_new[i] + x_bar[c, k, i]
    return GU


@numba.njit(cache=True)
def _bicycle_rhs_jac(x, u, kb, lr, fx, fu):
    td = np.tan(u[0])
    beta = np.arctan(kb * td)
    c = np.cos(x[2] + beta)
    s = np.sin(x[2] + beta)
    sb = np.sin(beta)
    cb = np.cos(beta)
    v = x[3]
    for i in range(4):
        for j in range(4):
            fx[i, j] = 0.0
        fu[i, 0] = 0.0
        fu[i, 1] = 0.0
    fx[0, 2] = -v * s
    fx[0, 3] = c
    fx[1, 2] = v * c
    fx[1, 3] = s
    fx[2, 3] = sb / lr
    dbeta = kb * (1.0 + td * td) / (1.0 + (kb * td) * (kb * td))
    fu[0, 0] = -v * s * dbeta
    fu[1, 0] = v * c * dbeta
    fu[2, 0] = v * cb / lr * dbeta
    fu[3, 1] = 1.0


@numba.njit(cache=True)
def _bicycle_step_jacobians(X, U, dt, kb, lr):
    """Chain the RK4 stages into per-step Jacobians along the rollout."""
    C, N, _ = U.shape
    JA = np.empty((C, N, 4, 4))
    JB = np.empty((C, N, 4, 2))
    k1 = np.empty(4)
    k2 = np.empty(4)
    k3 = np.empty(4)
    x2 = np.empty(4)
    x3 = np.empty(4)
    x4 = np.empty(4)
    fx = np.empty((4, 4))
    fu = np.empty((4, 2))
    eye = np.eye(4)
    for c in range(C):
        for k in range(N):
            x1 = X[c, k]
            u = U[c, k]
            _bicycle_rhs(x1, u, kb, lr, k1)
            for i in range(4):
                x2[i] = x1[i] + 0.5 * dt * k1[i]
            _bicycle_rhs(x2, u, kb, lr, k2)
            for i in range(4):
                x3[i] = x1[i] + 0.5 * dt * k2[i]
            _bicycle_rhs(x3, u, kb, lr, k3)
            for i in range(4):
                x4[i] = x1[i] + dt * k3[i]

            _bicycle_rhs_jac(x1, u, kb, lr, fx, fu)
            A1 = fx.copy()
            B1 = fu.copy()
            _bicycle_rhs_jac(x2, u, kb, lr, fx, fu)
            A2 = fx @ (eye + 0.5 * dt * A1)
            B2 = fu + 0.5 * dt * (fx @ B1)
            _bicycle_rhs_jac(x3, u, kb, lr, fx, fu)
            A3 = fx @ (eye + 0.5 * dt * A2)
            B3 = fu + 0.5 * dt * (fx @ B2)
            _bicycle_rhs_jac(x4, u, kb, lr, fx, fu)
            A4 = fx @ (eye + dt * A3)
            B4 = fu + dt * (fx @ B3)
            JA[c, k] = eye + dt / 6.0 * (A1 + 2.0 * A2 + 2.0 * A3 + A4)
            JB[c, k] = dt / 6.0 * (B1 + 2.0 * B2 + 2.0 * B3 + B4)
    return JA, JB


class KinematicBicycle(SystemModel):
    """Kinematic bicycle in an inertial frame, integrated with RK4.

    State (x, y, psi, v): planar position of the center of mass, heading,
    and speed. Input (delta, a): steering angle and longitudinal
    acceleration. The heading is kept unwrapped internally; callers that
    compare headings do so modulo 2*pi.
    """

    angle_indices = (2,)
    position_indices = (0, 1)

    def __init__(self, params: BicycleParams = BicycleParams(), dt=0.5,
                 v_max=4.0, delta_max=np.pi / 7, a_max=1.0):
        self.params = params
        self.n = 4
        self.m = 2
        self.dt = float(dt)
        inf = np.inf
        self._init_bounds(
            np.array([-inf, -inf, -inf, 0.0]),
            np.array([inf, inf, inf, v_max]),
            np.array([-delta_max, -a_max]),
            np.array([delta_max, a_max]),
            None,
        )
        self._kb = params.l_r / (params.l_f + params.l_r)

    def step(self, x, u):
        x, u = self._check_xu(x, u)
        out = np.empty(4)
        _bicycle_rk4_step(x, u, self.dt, self._kb, self.params.l_r, out)
        return out

    def rollout_batch(self, x0, U):
        x0 = np.ascontiguousarray(x0, dtype=float)
        U = np.ascontiguousarray(U, dtype=float)
        return _bicycle_rollout(x0, U, self.dt, self._kb, self.params.l_r)

    def rollout_vjp_batch(self, X, U, x_bar):
        return _bicycle_vjp(
            np.ascontiguousarray(X),
            np.ascontiguousarray(U),
            np.ascontiguousarray(x_bar),
            self.dt, self._kb, self.params.l_r,
        )

    def step_jacobians_batch(self, X, U):
        return _bicycle_step_jacobians(
            np.ascontiguousarray(X),
            np.ascontiguousarray(U),
            self.dt, self._kb, self.params.l_r,
        )

    def max_step_distance(self):
        return self.x_hi[3] * self.dt

    def reachable_distance_bound(self, x0, horizon):
        """Travel bound from the current speed under the acceleration limit."""
        v = float(x0[3])
        a_max = float(self.u_hi[1])
        v_max = float(self.x_hi[3])
        total = 0.0
        for k in range(1, int(horizon) + 1):
            total += min(v_max, v + k * a_max * self.dt) * self.dt
        return total


def is_at_equilibrium(x, x_goal, tol, angle_indices=(), weights=None) -> bool:
    """Whether x sits inside the tolerance ball around the goal state.

    The error is a weighted 2-norm of (x - x_goal) with angular components
    wrapped to (-pi, pi] before weighting; ``weights`` defaults to ones.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = np.asarray(x, dtype=float)
    x_goal = np.asarray(x_goal, dtype=float)
    err = x - x_goal
    for i in angle_indices:
        err[i] = wrap_angle(err[i])
    if weights is not None:
        err = err * np.asarray(weights, dtype=float)
    return bool(np.linalg.norm(err) <= tol)
