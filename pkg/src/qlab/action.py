"""
Large-deviation actions of the wave and heat systems and their quasi-potentials.

A path is stored as positions ``phi`` on a uniform grid; velocity and acceleration
come from second-order finite differences.  When a boundary velocity is known it
enters through a ghost node, otherwise one-sided stencils are used.  Actions are
trapezoid sums of the squared minimal control

``psi = Q^-1 (mu phi'' + phi' - A phi + Q^2 DF(phi))``        (wave)
``psi = Q^-1 (phi' - A phi + Q^2 DF(phi))``                   (heat)

with the factor 1/2 in both cases.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import factorized

from .dynamics import TimeGrid, integrate_heat, integrate_wave
from .optim import lbfgs
from .potentials import PotentialSpec, apply_DF_jacobian, eval_DF, eval_F
from .spectral_core import NoiseSpec, PhaseState, energy_phi


@dataclass
class DiscretePath:
    """Positions ``phi[n]`` at the nodes of ``grid`` (shape ``(steps + 1, N)``).

    ``v_start`` / ``v_end`` optionally pin the velocity at either end.
    """

    grid: TimeGrid
    phi: np.ndarray
    v_start: np.ndarray | None = None
    v_end: np.ndarray | None = None

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        if self.phi.ndim != 2 or self.phi.shape[0] != self.grid.steps + 1:
            raise ValueError("phi must have one row per grid node")
        if not np.all(np.isfinite(self.phi)):
            raise ValueError("path contains non-finite values")

    @property
    def n_modes(self) -> int:
        return self.phi.shape[1]

    def derivatives(self) -> tuple[np.ndarray, np.ndarray]:
        ops = _stencils(self.grid.steps, self.grid.dt, self.v_start is not None, self.v_end is not None)
        c1, c2 = ops.offsets(self.n_modes, self.v_start, self.v_end)
        return ops.D1 @ self.phi + c1, ops.D2 @ self.phi + c2

    def velocity_at(self, n: int) -> np.ndarray:
        return self.derivatives()[0][n]

    def subsample(self, k: int = 2) -> "DiscretePath":
        if self.grid.steps % k:
            raise ValueError("steps not divisible by k")
        grid = TimeGrid(self.grid.t0, self.grid.t1, self.grid.steps // k)
        return DiscretePath(grid, self.phi[::k], self.v_start, self.v_end)


@dataclass
class ActionValue:
    value: float
    quadrature_error_estimate: float = 0.0

    def __float__(self):
        return self.value


@dataclass
class QuasiPotentialReport:
    closed_form: float
    numeric_min: float
    gap: float
    path: DiscretePath = field(repr=False)
    iterations: int = 0
    converged: bool = True
    history: list = field(default_factory=list, repr=False)
    terminal_velocity: np.ndarray | None = None

    def to_dict(self) -> dict:
        out = {
            "closed_form": self.closed_form,
            "numeric_min": self.numeric_min,
            "gap": self.gap,
            "iterations": self.iterations,
            "converged": self.converged,
            "min_iterate_action": min(self.history) if self.history else self.numeric_min,
        }
        if self.terminal_velocity is not None:
            out["terminal_velocity"] = [float(c) for c in self.terminal_velocity]
        return out


# -- finite-difference operators -------------------------------------------------


@dataclass
class _Stencils:
    D1: sp.csr_matrix
    D2: sp.csr_matrix
    weights: np.ndarray
    h: float
    ghost_start: bool
    ghost_end: bool

    def offsets(self, n_modes, v_start, v_end):
        n = self.D1.shape[0]
        c1 = np.zeros((n, n_modes))
        c2 = np.zeros((n, n_modes))
        if self.ghost_start:
            c1[0] = v_start
            c2[0] = -2.0 * v_start / self.h
        if self.ghost_end:
            c1[-1] = v_end
            c2[-1] = 2.0 * v_end / self.h
        return c1, c2


_STENCIL_CACHE: dict = {}


def _stencils(steps: int, h: float, ghost_start: bool, ghost_end: bool) -> _Stencils:
    key = (steps, h, ghost_start, ghost_end)
    if key in _STENCIL_CACHE:
        return _STENCIL_CACHE[key]
    n = steps + 1
    if n < 3:
        raise ValueError("a path needs at least 3 nodes")
    D1 = sp.lil_matrix((n, n))
    D2 = sp.lil_matrix((n, n))
    for j in range(1, n - 1):
        D1[j, j - 1], D1[j, j + 1] = -0.5 / h, 0.5 / h
        D2[j, j - 1], D2[j, j], D2[j, j + 1] = 1 / h**2, -2 / h**2, 1 / h**2
    for end, sgn, ghost in ((0, 1, ghost_start), (n - 1, -1, ghost_end)):
        idx = [end + sgn * i for i in range(4)]
        if ghost:
            # phi_ghost = phi_inner -/+ 2 h v ; velocity supplied through offsets
            D2[end, end] = -2 / h**2
            D2[end, idx[1]] = 2 / h**2
        else:
            D1[end, idx[0]] = sgn * -1.5 / h
            D1[end, idx[1]] = sgn * 2.0 / h
            D1[end, idx[2]] = sgn * -0.5 / h
            if n >= 4:
                for i, c in enumerate((2.0, -5.0, 4.0, -1.0)):
                    D2[end, idx[i]] = c / h**2
            else:
                for i, c in enumerate((1.0, -2.0, 1.0)):
                    D2[end, idx[i]] = c / h**2
    w = np.full(n, h)
    w[[0, -1]] *= 0.5
    ops = _Stencils(D1.tocsr(), D2.tocsr(), w, h, ghost_start, ghost_end)
    if len(_STENCIL_CACHE) > 64:
        _STENCIL_CACHE.clear()
    _STENCIL_CACHE[key] = ops
    return ops


def _control_residual(path: DiscretePath, mu, spec, noise):
    lam, alpha = noise.lam, noise.basis.alpha
    if not np.all(np.isfinite(1.0 / lam)):
        raise OverflowError("Q^-1 not representable")
    d1, d2 = path.derivatives()
    lin = d1 + alpha * path.phi
    if mu is not None:
        lin = lin + mu * d2
    return lin / lam + lam * eval_DF(path.phi, spec, noise.basis)


def _trapezoid(path: DiscretePath, density: np.ndarray) -> float:
    w = np.full(path.grid.steps + 1, path.grid.dt)
    w[[0, -1]] *= 0.5
    return float(np.sum(w * density))


def _action(path, mu, spec, noise) -> ActionValue:
    r = _control_residual(path, mu, spec, noise)
    value = 0.5 * _trapezoid(path, np.sum(r**2, axis=1))
    err = 0.0
    if path.grid.steps % 2 == 0 and path.grid.steps >= 6:
        coarse = path.subsample(2)
        rc = _control_residual(coarse, mu, spec, noise)
        err = abs(value - 0.5 * _trapezoid(coarse, np.sum(rc**2, axis=1))) / 3.0
    return ActionValue(value, err)


def action_wave(path: DiscretePath, mu: float, spec: PotentialSpec, noise: NoiseSpec) -> ActionValue:
    """``1/2 int |Q^-1 (mu phi'' + phi' - A phi + Q^2 DF(phi))|^2 dt``."""
    return _action(path, mu, spec, noise)


def action_heat(path: DiscretePath, spec: PotentialSpec, noise: NoiseSpec) -> ActionValue:
    """``1/2 int |Q^-1 (phi' - A phi + Q^2 DF(phi))|^2 dt``."""
    return _action(path, None, spec, noise)


def _potential_part(phi, spec, noise):
    """``|(-A)^1/2 Q^-1 phi|^2 + 2 F(phi)`` row-wise."""
    return (np.sum(noise.basis.alpha * phi**2 / noise.lam**2, axis=-1)
            + 2.0 * np.asarray(eval_F(phi, spec, noise.basis)))


def action_decomposition(path: DiscretePath, mu, spec: PotentialSpec, noise: NoiseSpec) -> dict:
    """Completing-the-square split of the action.

    ``action = reversed + cross`` holds node by node; the cross term is an exact
    time derivative, so it is also compared with the energy difference between the
    path ends.  ``mu=None`` selects the heat action.
    """
    lam, alpha = noise.lam, noise.basis.alpha
    d1, d2 = path.derivatives()
    phi = path.phi
    drift = lam**2 * eval_DF(phi, spec, noise.basis) + alpha * phi  # Q^2 DF - A phi
    if mu is None:
        rev = (d1 - drift) / lam
        cross_density = 2.0 * np.sum(d1 * drift / lam**2, axis=1)
        energy = _potential_part(phi, spec, noise)
    else:
        rev = (mu * d2 - d1 + drift) / lam
        cross_density = 2.0 * np.sum(d1 * (mu * d2 + drift) / lam**2, axis=1)
        energy = _potential_part(phi, spec, noise) + mu * np.sum(d1**2 / lam**2, axis=1)
    reversed_term = 0.5 * _trapezoid(path, np.sum(rev**2, axis=1))
    cross = _trapezoid(path, cross_density)
    boundary = float(energy[-1] - energy[0])
    total = _action(path, mu, spec, noise).value
    return {
        "action": total,
        "reversed": reversed_term,
        "cross": cross,
        "boundary": boundary,
        "energy_end": float(energy[-1]),
        "residual": reversed_term + boundary - total,
    }


def action_decomposition_residual(path: DiscretePath, mu, spec: PotentialSpec, noise: NoiseSpec) -> float:
    """Reversed-drift term plus end-point energy difference, minus the action."""
    return action_decomposition(path, mu, spec, noise)["residual"]


# -- closed forms and optimal paths ----------------------------------------------


def quasipotential_closed_form(x, y=None, mu=None, *, spec: PotentialSpec, noise: NoiseSpec) -> float:
    """``V(x)`` or, with ``y`` and ``mu``, ``V^mu(x, y)``."""
    x = np.asarray(x, dtype=float)
    val = float(_potential_part(x, spec, noise))
    if y is not None:
        if mu is None:
            raise ValueError("mu is required together with y")
        val += mu * float(np.sum(np.asarray(y, float) ** 2 / noise.lam**2))
    return val


def relaxation_rates(mu, noise: NoiseSpec) -> tuple[float, float]:
    """Slowest decay rate and fastest time scale of the linear forward flow.

    Returns ``(rate_min, omega_max)``.
    """
    alpha = noise.basis.alpha
    if mu is None:
        return float(alpha[0]), float(alpha[-1])
    disc = 1.0 - 4.0 * mu * alpha
    over = disc > 0
    slow = np.where(over, (1.0 - np.sqrt(np.where(over, disc, 0.0))) / (2.0 * mu), 1.0 / (2.0 * mu))
    fast = np.where(over, (1.0 + np.sqrt(np.where(over, disc, 0.0))) / (2.0 * mu), np.sqrt(alpha / mu))
    return float(np.min(slow)), float(np.max(fast))


def default_horizon(mu, noise: NoiseSpec, tol: float = 1e-6, resolution: float = 0.05,
                    max_steps: int = 20000) -> tuple[float, int]:
    """Horizon ``T`` with ``e^{-2 r T} <= tol`` and a step resolving the fastest mode."""
    rate, omega = relaxation_rates(mu, noise)
    T = 1.25 * math.log(1.0 / tol) / (2.0 * rate)
    steps = int(math.ceil(T * omega / resolution))
    steps = min(max(steps, 200), max_steps)
    return T, steps + steps % 2


def reversed_optimal_path(x, y=None, mu=None, *, spec: PotentialSpec, noise: NoiseSpec,
                          T: float | None = None, dt: float = 1e-3, energy_tol: float = 1e-4,
                          max_T: float = 500.0) -> DiscretePath:
    """Time reversal of the deterministic relaxation started at ``(x, -y)`` (or ``x``).

    The returned path lives on ``[-T, 0]`` and ends at ``(x, y)``.  Without ``T`` the
    relaxation runs until its energy drops below ``energy_tol`` times the initial one.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    wave = mu is not None
    y = np.zeros(n) if y is None else np.asarray(y, dtype=float)
    target = quasipotential_closed_form(x, y if wave else None, mu, spec=spec, noise=noise)

    def run(z_u, z_v, length):
        grid = TimeGrid.from_dt(0.0, length, dt)
        if wave:
            tr = integrate_wave(PhaseState(z_u, z_v), mu, spec, noise, grid)
            return tr.u, tr.v
        return integrate_heat(z_u, spec, noise, grid).u, None

    if T is not None:
        U, V = run(x, -y, T)
    else:
        chunk = max(1.0, 10 * dt)
        U, V = run(x, -y, chunk)
        while True:
            last = PhaseState(U[-1], V[-1] if wave else np.zeros(n))
            e = energy_phi(last, mu if wave else 0.0, spec, noise)
            if target == 0.0 or e <= energy_tol * target or (len(U) - 1) * dt >= max_T:
                break
            U2, V2 = run(U[-1], V[-1] if wave else None, chunk)
            U = np.vstack([U, U2[1:]])
            V = np.vstack([V, V2[1:]]) if wave else None
        T = (len(U) - 1) * dt
    grid = TimeGrid(-T, 0.0, len(U) - 1)
    phi = U[::-1].copy()
    if wave:
        return DiscretePath(grid, phi, v_start=-V[-1], v_end=-V[0])
    return DiscretePath(grid, phi)


# -- direct minimization ---------------------------------------------------------


class _ActionProblem:
    """Discrete action over interior nodes with pinned end points.

    Variables are ``phi[1:-1]`` and, for a free terminal velocity, one extra row
    holding ``v_end``.  The wave action uses the nodal stencils of
    :func:`action_wave` (ghost nodes carry the end velocities).  The heat action
    is evaluated at interval midpoints, ``(phi_{j+1} - phi_j)/h`` against the
    averaged state, which has no odd-even null mode.

    Residuals are written ``R = (mu P2 phi + P1 phi + alpha P0 phi + c) / lam
    + lam DF(P0 phi)`` with sparse ``P0, P1, P2`` and quadrature weights ``w``.
    """

    def __init__(self, x, y, mu, spec, noise, T, steps, free_velocity):
        self.x = np.asarray(x, dtype=float)
        self.n_modes = self.x.shape[0]
        self.mu, self.spec, self.noise = mu, spec, noise
        self.wave = mu is not None
        self.free_velocity = free_velocity
        self.y = None if y is None else np.asarray(y, dtype=float)
        self.grid = TimeGrid(-T, 0.0, steps)
        self.h = self.grid.dt
        self.n_nodes = steps + 1
        self.n_free = steps - 1 + (1 if free_velocity else 0)
        if self.wave:
            self.ops = _stencils(steps, self.h, True, True)
            self.P0 = sp.identity(self.n_nodes, format="csr")
            self.P1, self.P2 = self.ops.D1, self.ops.D2
            self.w = self.ops.weights
        else:
            n = self.n_nodes
            diff = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n))
            self.P0 = (0.5 * abs(diff)).tocsr()
            self.P1 = (diff / self.h).tocsr()
            self.P2 = None
            self.w = np.full(n - 1, self.h)
        self._build_preconditioner()

    def unpack(self, X):
        phi = np.empty((self.n_nodes, self.n_modes))
        phi[0] = 0.0
        phi[-1] = self.x
        phi[1:-1] = X[: self.n_nodes - 2]
        v_end = None
        if self.wave:
            v_end = X[-1] if self.free_velocity else self.y
        return phi, v_end

    def path(self, X) -> DiscretePath:
        phi, v_end = self.unpack(X)
        v_start = np.zeros(self.n_modes) if self.wave else None
        return DiscretePath(self.grid, phi, v_start, None if v_end is None else v_end.copy())

    def fun_grad(self, X):
        noise, spec, mu = self.noise, self.spec, self.mu
        lam, alpha = noise.lam, noise.basis.alpha
        phi, v_end = self.unpack(X)
        state = self.P0 @ phi
        lin = self.P1 @ phi + alpha * state
        if self.wave:
            c1, c2 = self.ops.offsets(self.n_modes, np.zeros(self.n_modes), v_end)
            lin = lin + c1 + mu * (self.P2 @ phi + c2)
        R = lin / lam + lam * eval_DF(state, spec, noise.basis)
        w = self.w[:, None]
        f = 0.5 * float(np.sum(w * R**2))
        G = w * R
        Gl = G / lam
        back = alpha * Gl
        if not spec.is_zero:
            back = back + apply_DF_jacobian(state, lam * G, spec, noise.basis)
        grad_phi = self.P1.T @ Gl + self.P0.T @ back
        if self.wave:
            grad_phi = grad_phi + mu * (self.P2.T @ Gl)
        grad = np.empty((self.n_free, self.n_modes))
        grad[: self.n_nodes - 2] = grad_phi[1:-1]
        if self.free_velocity:
            grad[-1] = Gl[-1] * (1.0 + 2.0 * mu / self.h)
        return f, grad

    def _build_preconditioner(self):
        lam, alpha = self.noise.lam, self.noise.basis.alpha
        P0 = self.P0[:, 1:-1]
        P1 = self.P1[:, 1:-1]
        W = sp.diags(self.w)
        solvers = []
        for k in range(self.n_modes):
            L = P1 + alpha[k] * P0
            if self.wave:
                L = L + self.mu * self.P2[:, 1:-1]
            if self.free_velocity:
                col = np.zeros((self.n_nodes, 1))
                col[-1, 0] = 1.0 + 2.0 * self.mu / self.h
                L = sp.hstack([L, sp.csr_matrix(col)])
            L = L / lam[k]
            H = (L.T @ W @ L).tocsc()
            solvers.append(factorized(H))
        self._solvers = solvers

    def precondition(self, Gr):
        out = np.empty_like(Gr)
        for k, solve in enumerate(self._solvers):
            out[:, k] = solve(np.ascontiguousarray(Gr[:, k]))
        return out

    def initial(self, init: DiscretePath | None):
        if init is not None:
            if init.grid.steps != self.grid.steps:
                raise ValueError("init must use the solver grid")
            if not (np.allclose(init.phi[0], 0.0) and np.allclose(init.phi[-1], self.x)):
                raise ValueError("init must start at 0 and end at the target")
            X = np.zeros((self.n_free, self.n_modes))
            X[: self.n_nodes - 2] = init.phi[1:-1]
            if self.free_velocity and init.v_end is not None:
                X[-1] = init.v_end
            return X
        s = (self.grid.times - self.grid.t0) / (self.grid.t1 - self.grid.t0)
        ramp = s * s * (3.0 - 2.0 * s)
        X = np.zeros((self.n_free, self.n_modes))
        X[: self.n_nodes - 2] = np.outer(ramp[1:-1], self.x)
        return X


def min_action_solve(x_target, y_target=None, mu=None, *, spec: PotentialSpec, noise: NoiseSpec,
                     T: float | None = None, steps: int | None = None,
                     init: DiscretePath | None = None, max_iter: int = 5000,
                     rtol: float = 1e-8) -> QuasiPotentialReport:
    """Minimize the discrete action from rest at 0 to the target.

    ``mu=None`` gives the heat quasi-potential ``V(x)``.  With ``mu`` and ``y_target``
    the terminal phase state is pinned (``V^mu(x, y)``); with ``mu`` alone the
    terminal velocity is optimized as well (``V_mu(x)``).

    The search is limited-memory BFGS with Armijo backtracking, using the exact
    Hessian of the potential-free action as base inverse-Hessian.
    """
    x = np.asarray(x_target, dtype=float)
    wave = mu is not None
    free_velocity = wave and y_target is None
    if T is None or steps is None:
        T0, s0 = default_horizon(mu, noise)
        T = T0 if T is None else T
        steps = s0 if steps is None else steps
    closed = quasipotential_closed_form(x, y_target if wave and not free_velocity else None,
                                        mu if not free_velocity else None, spec=spec, noise=noise)
    prob = _ActionProblem(x, y_target, mu, spec, noise, T, steps, free_velocity)
    if not np.any(x) and (y_target is None or not np.any(y_target)):
        path = prob.path(np.zeros((prob.n_free, prob.n_modes)))
        return QuasiPotentialReport(closed, 0.0, 0.0, path, 0, True, [0.0],
                                    np.zeros_like(x) if free_velocity else None)
    res = lbfgs(prob.fun_grad, prob.initial(init), prob.precondition, max_iter=max_iter, rtol=rtol)
    path = prob.path(res.x)
    gap = (res.fun - closed) / closed if closed > 0 else res.fun - closed
    return QuasiPotentialReport(
        closed_form=closed,
        numeric_min=res.fun,
        gap=gap,
        path=path,
        iterations=res.iterations,
        converged=res.converged,
        history=res.history,
        terminal_velocity=path.v_end.copy() if free_velocity else None,
    )


def concatenate_paths(first: DiscretePath, second: DiscretePath) -> DiscretePath:
    """Join two paths sharing an end node and step size."""
    if not math.isclose(first.grid.dt, second.grid.dt, rel_tol=1e-12):
        raise ValueError("step sizes differ")
    if not np.allclose(first.phi[-1], second.phi[0]):
        raise ValueError("paths do not meet")
    grid = TimeGrid(first.grid.t0, first.grid.t0 + first.grid.dt * (first.grid.steps + second.grid.steps),
                    first.grid.steps + second.grid.steps)
    return DiscretePath(grid, np.vstack([first.phi, second.phi[1:]]), first.v_start, second.v_end)


def shift_path(path: DiscretePath, t0: float) -> DiscretePath:
    grid = TimeGrid(t0, t0 + (path.grid.t1 - path.grid.t0), path.grid.steps)
    return replace(path, grid=grid)


def split_path(path: DiscretePath, k: int) -> tuple[DiscretePath, DiscretePath]:
    """Cut at interior node ``k``; the central velocity there pins both new ends.

    With this choice the two pieces see the same stencils as the whole path, so
    their actions add up to the action of ``path`` to rounding.
    """
    if not 0 < k < path.grid.steps:
        raise ValueError("k must be an interior node")
    v = path.velocity_at(k)
    g, h = path.grid, path.grid.dt
    left = DiscretePath(TimeGrid(g.t0, g.t0 + k * h, k), path.phi[: k + 1], path.v_start, v)
    right = DiscretePath(TimeGrid(g.t0 + k * h, g.t1, g.steps - k), path.phi[k:], v, path.v_end)
    return left, right
