"""
Time integration of the truncated wave and heat systems.

Both equations are advanced with a second-order exponential Runge-Kutta scheme
(ETD2RK): the linear part is propagated exactly mode by mode, the drift and the
control are interpolated linearly across each step.  Additive noise enters the
predictor.  For the wave equation the stochastic convolution over a step is
frozen as ``S_mu(dt) Q_mu dW``; for the heat equation each mode receives the exact
Ornstein-Uhlenbeck increment.

The random stream of replica ``p`` is a Philox generator keyed by ``(seed, p)``,
with one column per mode, so batched and single-path runs see identical noise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from .potentials import PotentialSpec, eval_DF
from .spectral_core import (
    NoiseSpec,
    PhaseState,
    energy_phi,
    phi_weights,
    semigroup_matrices,
    wave_generators,
)


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t1: float
    steps: int

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise ValueError("t1 must exceed t0")
        if self.steps < 1:
            raise ValueError("steps must be positive")

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, self.steps + 1)

    @classmethod
    def from_dt(cls, t0: float, t1: float, dt: float) -> "TimeGrid":
        return cls(t0, t1, max(1, int(round((t1 - t0) / dt))))


@dataclass(frozen=True)
class ControlSignal:
    """Control values ``psi(t_n)`` at grid nodes, shape ``(steps + 1, N)``."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape[0] != self.grid.steps + 1:
            raise ValueError("one control value per grid node required")
        object.__setattr__(self, "values", values)

    def l2_norm_sq(self) -> float:
        w = np.full(self.grid.steps + 1, self.grid.dt)
        w[[0, -1]] *= 0.5
        return float(np.sum(w * np.sum(self.values**2, axis=1)))


@dataclass
class TrajectorySample:
    grid: TimeGrid
    u: np.ndarray
    v: np.ndarray | None = None
    seed: int | None = None
    eps: float = 0.0

    def state(self, n: int) -> PhaseState:
        return PhaseState(self.u[n], self.v[n])

    @property
    def states(self):
        if self.v is None:
            return self.u
        return [self.state(n) for n in range(len(self.u))]


def replica_rng(seed: int, replica: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(replica)])))


# -- steppers --------------------------------------------------------------------


@dataclass
class WaveStepper:
    """ETD2RK step for ``dz = [A_mu z - Q_mu (Q DF(u) - psi)] dt + sqrt(eps) Q_mu dW``.

    Works on batches: ``u``, ``v`` may have any leading shape with modes last.
    """

    mu: float
    spec: PotentialSpec
    noise: NoiseSpec
    dt: float
    E: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        basis = self.noise.basis
        _, J1, J2 = phi_weights(wave_generators(self.mu, basis), self.dt)
        self.E = semigroup_matrices(self.mu, self.dt, basis)
        # forcing only enters the velocity, so only column 1 of J1, J2 is needed
        self.a1, self.b1 = J1[:, 0, 1], J1[:, 1, 1]
        self.a2, self.b2 = J2[:, 0, 1] / self.dt, J2[:, 1, 1] / self.dt
        self.lam = self.noise.lam

    def forcing(self, u, psi=None):
        f = np.zeros_like(u) if self.spec.is_zero else -(self.lam**2) * eval_DF(u, self.spec, self.noise.basis)
        if psi is not None:
            f = f + self.lam * psi
        return f / self.mu

    def step(self, u, v, psi0=None, psi1=None, kick=None):
        """Advance one step; ``kick`` is ``sqrt(eps) dW`` per mode (or ``None``)."""
        E = self.E
        f0 = self.forcing(u, psi0)
        pu = E[:, 0, 0] * u + E[:, 0, 1] * v + self.a1 * f0
        pv = E[:, 1, 0] * u + E[:, 1, 1] * v + self.b1 * f0
        if kick is not None:
            w = self.lam * kick / self.mu
            pu = pu + E[:, 0, 1] * w
            pv = pv + E[:, 1, 1] * w
        if self.spec.is_zero and psi0 is None:
            return pu, pv
        df = self.forcing(pu, psi1) - f0
        return pu + self.a2 * df, pv + self.b2 * df


@dataclass
class HeatStepper:
    spec: PotentialSpec
    noise: NoiseSpec
    dt: float

    def __post_init__(self):
        alpha = self.noise.basis.alpha
        E, J1, J2 = phi_weights(-alpha[:, None, None], self.dt)
        self.E = E[:, 0, 0]
        self.j1 = J1[:, 0, 0]
        self.j2 = J2[:, 0, 0] / self.dt
        self.lam = self.noise.lam
        # exact OU standard deviation per unit-variance increment, over sqrt(dt)
        self.ou = self.lam * np.sqrt(-np.expm1(-2.0 * alpha * self.dt) / (2.0 * alpha * self.dt))

    def forcing(self, u, psi=None):
        f = np.zeros_like(u) if self.spec.is_zero else -(self.lam**2) * eval_DF(u, self.spec, self.noise.basis)
        if psi is not None:
            f = f + self.lam * psi
        return f

    def step(self, u, psi0=None, psi1=None, kick=None):
        f0 = self.forcing(u, psi0)
        p = self.E * u + self.j1 * f0
        if kick is not None:
            p = p + self.ou * kick
        if self.spec.is_zero and psi0 is None:
            return p
        return p + self.j2 * (self.forcing(p, psi1) - f0)


def _kicks(eps, seed, grid, n_modes, replica=0):
    if eps <= 0:
        return None
    if seed is None:
        raise ValueError("a seed is required when eps > 0")
    xi = replica_rng(seed, replica).standard_normal((grid.steps, n_modes))
    return np.sqrt(eps * grid.dt) * xi


def _psi_at(psi, n):
    return None if psi is None else psi.values[n]


# -- public integrators ----------------------------------------------------------


def integrate_wave(z0: PhaseState, mu: float, spec: PotentialSpec, noise: NoiseSpec,
                   grid: TimeGrid, psi: ControlSignal | None = None, eps: float = 0.0,
                   seed: int | None = None, replica: int = 0) -> TrajectorySample:
    """Integrate the (controlled, possibly noisy) wave system on ``grid``."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    n = noise.basis.n_modes
    stepper = WaveStepper(mu, spec, noise, grid.dt)
    kicks = _kicks(eps, seed, grid, n, replica)
    U = np.empty((grid.steps + 1, n))
    V = np.empty((grid.steps + 1, n))
    U[0], V[0] = z0.u, z0.v
    u, v = U[0].copy(), V[0].copy()
    for i in range(grid.steps):
        u, v = stepper.step(u, v, _psi_at(psi, i), _psi_at(psi, i + 1),
                            None if kicks is None else kicks[i])
        U[i + 1], V[i + 1] = u, v
    return TrajectorySample(grid, U, V, seed, eps)


def integrate_heat(u0, spec: PotentialSpec, noise: NoiseSpec, grid: TimeGrid,
                   psi: ControlSignal | None = None, eps: float = 0.0,
                   seed: int | None = None, replica: int = 0) -> TrajectorySample:
    """Integrate the (controlled, possibly noisy) heat system on ``grid``."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    n = noise.basis.n_modes
    stepper = HeatStepper(spec, noise, grid.dt)
    kicks = _kicks(eps, seed, grid, n, replica)
    U = np.empty((grid.steps + 1, n))
    U[0] = u0
    u = U[0].copy()
    for i in range(grid.steps):
        u = stepper.step(u, _psi_at(psi, i), _psi_at(psi, i + 1),
                         None if kicks is None else kicks[i])
        U[i + 1] = u
    return TrajectorySample(grid, U, None, seed, eps)


def apply_control_map(mu: float, noise: NoiseSpec, psi: ControlSignal) -> PhaseState:
    """``L psi = int S_mu(t1 - s) Q_mu psi(s) ds`` over the grid of ``psi``.

    ``psi`` is taken piecewise linear between nodes and each piece is integrated
    exactly against the semigroup.
    """
    grid = psi.grid
    h = grid.dt
    basis = noise.basis
    _, J1, J2 = phi_weights(wave_generators(mu, basis), h)
    c_left = (J1 - J2 / h)[:, :, 1]
    c_right = (J2 / h)[:, :, 1]
    b = noise.lam * psi.values / mu  # velocity forcing at nodes
    u = np.zeros(basis.n_modes)
    v = np.zeros(basis.n_modes)
    for n in range(grid.steps):
        piece_u = c_left[:, 0] * b[n] + c_right[:, 0] * b[n + 1]
        piece_v = c_left[:, 1] * b[n] + c_right[:, 1] * b[n + 1]
        E = semigroup_matrices(mu, grid.t1 - grid.times[n + 1], basis)
        u += E[:, 0, 0] * piece_u + E[:, 0, 1] * piece_v
        v += E[:, 1, 0] * piece_u + E[:, 1, 1] * piece_v
    return PhaseState(u, v)


def energy_balance(z0: PhaseState, mu: float, spec: PotentialSpec, noise: NoiseSpec,
                   T: float, dt: float) -> dict:
    """Compare the energy drop of the deterministic wave flow with its dissipation.

    Along the noise-free flow ``Phi_mu(z(T)) - Phi_mu(z(0)) = -2 int_0^T |Q^-1 v|^2 dt``.
    The integral is evaluated with Simpson's rule on the step nodes.
    """
    grid = TimeGrid.from_dt(0.0, T, dt)
    tr = integrate_wave(z0, mu, spec, noise, grid)
    phi = np.array([energy_phi(PhaseState(u, v), mu, spec, noise) for u, v in zip(tr.u, tr.v)])
    rate = 2.0 * np.sum(tr.v**2 / noise.lam**2, axis=1)
    dissipated = float(integrate.simpson(rate, x=grid.times))
    drop = float(phi[0] - phi[-1])
    return {
        "times": grid.times,
        "energy": phi,
        "energy_drop": drop,
        "dissipated": dissipated,
        "relative_error": abs(drop - dissipated) / max(abs(drop), 1e-300),
    }


# -- Smoluchowski-Kramers comparison ---------------------------------------------


@dataclass
class SKRow:
    mu: float
    mean_dev: float
    stderr: float
    deviations: np.ndarray = field(repr=False)


def coupled_sup_deviation(mu: float, spec: PotentialSpec, noise: NoiseSpec, u0, v0,
                          T: float, dt: float, eps: float, seed: int,
                          replicas: np.ndarray) -> np.ndarray:
    """``sup_t |u_mu(t) - u(t)|_H`` for each replica, wave and heat driven by the same noise."""
    n = noise.basis.n_modes
    replicas = np.asarray(replicas)
    P = len(replicas)
    steps = max(1, int(round(T / dt)))
    h = T / steps
    wave = WaveStepper(mu, spec, noise, h)
    heat = HeatStepper(spec, noise, h)
    uw = np.tile(np.asarray(u0, float), (P, 1))
    vw = np.tile(np.asarray(v0, float), (P, 1))
    uh = uw.copy()
    sup = np.linalg.norm(uw - uh, axis=1)
    if eps > 0:
        gens = [replica_rng(seed, p) for p in replicas]
    block = 1024
    done = 0
    while done < steps:
        nb = min(block, steps - done)
        if eps > 0:
            xi = np.stack([g.standard_normal((nb, n)) for g in gens], axis=1)
            xi *= np.sqrt(eps * h)
        for j in range(nb):
            kick = xi[j] if eps > 0 else None
            uw, vw = wave.step(uw, vw, kick=kick)
            uh = heat.step(uh, kick=kick)
            np.maximum(sup, np.linalg.norm(uw - uh, axis=1), out=sup)
        done += nb
    return sup


def sk_compare(mu_list, eps: float, T: float, n_paths: int, *, spec: PotentialSpec,
               noise: NoiseSpec, dt: float, seed: int, u0=None, v0=None,
               workers: int = 1) -> list[SKRow]:
    """Mean sup-norm gap between wave (mass ``mu``) and heat solutions, per ``mu``.

    The same replicas (and hence the same Brownian increments) are reused for every
    ``mu``, so consecutive rows can be compared pathwise.
    """
    mu_list = [float(m) for m in mu_list]
    if any(b >= a for a, b in zip(mu_list, mu_list[1:])):
        raise ValueError("mu_list must be strictly decreasing")
    n = noise.basis.n_modes
    u0 = np.zeros(n) if u0 is None else np.asarray(u0, float)
    v0 = np.zeros(n) if v0 is None else np.asarray(v0, float)
    rows = []
    for mu in mu_list:
        devs = map_replicas(
            lambda chunk, mu=mu: coupled_sup_deviation(mu, spec, noise, u0, v0, T, dt, eps, seed, chunk),
            n_paths, workers)
        se = float(np.std(devs, ddof=1) / np.sqrt(len(devs))) if len(devs) > 1 else 0.0
        rows.append(SKRow(mu, float(np.mean(devs)), se, devs))
    return rows


def sk_decrease_pvalues(rows: list[SKRow]) -> list[float]:
    """One-sided Wilcoxon signed-rank p-values for ``dev(mu_i) > dev(mu_{i+1})``."""
    out = []
    for a, b in zip(rows, rows[1:]):
        diff = a.deviations - b.deviations
        if np.all(diff == 0):
            out.append(1.0)
            continue
        out.append(float(stats.wilcoxon(a.deviations, b.deviations, alternative="greater").pvalue))
    return out


def map_replicas(fn, n_paths: int, workers: int = 1, chunk: int = 250) -> np.ndarray:
    """Apply ``fn`` to contiguous replica chunks and concatenate in replica order."""
    chunks = [np.arange(s, min(s + chunk, n_paths)) for s in range(0, n_paths, chunk)]
    if workers <= 1 or len(chunks) == 1:
        parts = [fn(c) for c in chunks]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, chunks))
    return np.concatenate(parts)
