"""
Dirichlet sine basis on (0, 1) and the linear operators of the damped wave problem.

Fields are stored as real coefficient vectors in the orthonormal basis
:math:`e_k(\\xi) = \\sqrt{2}\\sin(k\\pi\\xi)`, with :math:`-A e_k = \\alpha_k e_k`,
:math:`\\alpha_k = (k\\pi)^2`.  Velocities (the :math:`H^{-1}` component of the phase
space) use the same plain coefficients; the :math:`\\alpha_k^{-1}` weight is applied
only when a norm or inner product is evaluated.

Per mode the generator of the damped wave semigroup is the 2x2 matrix

.. math::

    M_k = \\begin{pmatrix} 0 & 1 \\\\ -\\alpha_k/\\mu & -1/\\mu \\end{pmatrix},

and its adjoint in :math:`H^0 \\times H^{-1}` is
:math:`M_k^\\star = \\begin{pmatrix} 0 & -1/\\mu \\\\ \\alpha_k & -1/\\mu \\end{pmatrix}`.
Both are exponentiated in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft
import scipy.linalg

# |1 - 4 mu alpha| below this switches to the critically damped branch
CRITICAL_TOL = 1e-8


@dataclass(frozen=True)
class SpectralBasis:
    """Truncated Dirichlet eigenbasis on the unit interval.

    Parameters
    ----------
    n_modes : int
        Number of retained modes ``N``.
    grid_size : int
        Number of interior collocation points ``M`` used for pointwise
        compositions (``M >= 2N``).
    alpha : ndarray, optional
        Eigenvalues of ``-A``; defaults to ``(k pi)^2``.
    """

    n_modes: int
    grid_size: int
    alpha: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError("n_modes must be positive")
        if self.grid_size < 2 * self.n_modes:
            raise ValueError("grid_size must be at least 2 * n_modes")
        if self.alpha is None:
            k = np.arange(1, self.n_modes + 1)
            object.__setattr__(self, "alpha", (k * np.pi) ** 2)
        alpha = np.asarray(self.alpha, dtype=float)
        if alpha.shape != (self.n_modes,):
            raise ValueError("alpha must have length n_modes")
        if alpha[0] <= 0 or np.any(np.diff(alpha) <= 0):
            raise ValueError("alpha must be positive and strictly increasing")
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def unit_interval(cls, n_modes: int, grid_size: int | None = None) -> "SpectralBasis":
        return cls(n_modes, grid_size if grid_size is not None else 4 * n_modes)

    @property
    def spacing(self) -> float:
        return 1.0 / (self.grid_size + 1)

    @cached_property
    def points(self) -> np.ndarray:
        """Interior collocation points ``j / (M + 1)``, ``j = 1..M``."""
        return np.arange(1, self.grid_size + 1) * self.spacing

    def to_grid(self, coeffs: np.ndarray) -> np.ndarray:
        """Evaluate fields at the collocation points (last axis = modes)."""
        coeffs = np.asarray(coeffs, dtype=float)
        pad = [(0, 0)] * (coeffs.ndim - 1) + [(0, self.grid_size - self.n_modes)]
        full = np.pad(coeffs, pad)
        return scipy.fft.dst(full, type=1, axis=-1) * (np.sqrt(2.0) / 2.0)

    def from_grid(self, values: np.ndarray) -> np.ndarray:
        """Project grid values onto the retained modes.

        Uses the discrete sine orthogonality, i.e. the trapezoid rule with zero
        boundary values, so ``from_grid(to_grid(c)) == c`` exactly.
        """
        out = scipy.fft.dst(np.asarray(values, dtype=float), type=1, axis=-1)
        return out[..., : self.n_modes] * (np.sqrt(2.0) / 2.0 * self.spacing)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Trapezoid rule over (0, 1) for grid values vanishing at the boundary."""
        return np.sum(values, axis=-1) * self.spacing


@dataclass(frozen=True)
class NoiseSpec:
    """Diagonal noise operator ``Q e_k = lambda_k e_k`` with ``lambda_k = alpha_k^(-rho/2)``."""

    basis: SpectralBasis
    rho: float = 0.0

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")

    @cached_property
    def lam(self) -> np.ndarray:
        lam = self.basis.alpha ** (-self.rho / 2.0)
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise OverflowError("noise eigenvalues not representable")
        lam.setflags(write=False)
        return lam

    def trace_sum(self) -> float:
        """Truncated sum of ``lambda_k^2 / alpha_k`` (finite trace condition)."""
        return float(np.sum(self.lam**2 / self.basis.alpha))


@dataclass(frozen=True)
class PhaseState:
    """Position/velocity pair ``(u, v)`` in ``H^0 x H^-1`` as mode coefficients."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        if self.u.shape != self.v.shape:
            raise ValueError("u and v must have the same shape")

    @classmethod
    def zeros(cls, n: int) -> "PhaseState":
        return cls(np.zeros(n), np.zeros(n))

    def __add__(self, other: "PhaseState") -> "PhaseState":
        return PhaseState(self.u + other.u, self.v + other.v)

    def __sub__(self, other: "PhaseState") -> "PhaseState":
        return PhaseState(self.u - other.u, self.v - other.v)

    def __mul__(self, c: float) -> "PhaseState":
        return PhaseState(c * self.u, c * self.v)

    __rmul__ = __mul__


@dataclass(frozen=True)
class SemigroupDecayEstimate:
    M_mu: float
    omega_mu: float
    T_mu: float


# -- norms and diagonal operators ------------------------------------------------


def sobolev_norm_sq(u, delta: float, basis: SpectralBasis) -> float:
    """Squared ``H^delta`` norm, ``sum_k alpha_k^delta u_k^2``."""
    u = np.asarray(u, dtype=float)
    return float(np.sum(basis.alpha**delta * u**2))


def phase_inner(z: PhaseState, w: PhaseState, basis: SpectralBasis) -> float:
    """Inner product of ``H^0 x H^-1``."""
    return float(np.sum(z.u * w.u) + np.sum(z.v * w.v / basis.alpha))


def phase_norm(z: PhaseState, basis: SpectralBasis) -> float:
    return float(np.sqrt(phase_inner(z, z, basis)))


def apply_A(u, basis: SpectralBasis) -> np.ndarray:
    return -basis.alpha * np.asarray(u, dtype=float)


def apply_Q_power(u, p: float, noise: NoiseSpec) -> np.ndarray:
    """Apply ``Q^p`` mode-wise."""
    with np.errstate(over="raise", divide="raise", under="ignore"):
        try:
            scale = noise.lam**p
        except FloatingPointError as exc:
            raise OverflowError(f"Q^{p} not representable") from exc
    if not np.all(np.isfinite(scale)):
        raise OverflowError(f"Q^{p} not representable")
    return scale * np.asarray(u, dtype=float)


def cmu_weights(mu: float, noise: NoiseSpec) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal entries of the covariance ``C_mu`` acting on (u, v) coefficients.

    ``C_mu(u, v) = (1/2 (-A)^-1 Q^2 u, 1/(2 mu) (-A)^-1 Q^2 v)``.
    """
    alpha = noise.basis.alpha
    cu = noise.lam**2 / (2.0 * alpha)
    return cu, cu / mu


def cmu_quadratic(z: PhaseState, mu: float, sign: int, noise: NoiseSpec) -> float:
    """``|C_mu^(sign/2) z|^2`` in ``H^0 x H^-1``.

    ``C_mu`` is diagonal on mode coefficients, so its powers act coefficient-wise
    and the ``H^-1`` weight is applied afterwards.  For ``sign=-1`` this is twice
    the quadratic part of the energy: ``sum 2 alpha u^2/lambda^2 + 2 mu v^2/lambda^2``.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    cu, cv = cmu_weights(mu, noise)
    alpha = noise.basis.alpha
    return float(np.sum(cu**sign * z.u**2) + np.sum(cv**sign * z.v**2 / alpha))


def energy_phi(z: PhaseState, mu: float, F, noise: NoiseSpec) -> float:
    """Lyapunov energy ``|(-A)^1/2 Q^-1 x|^2 + mu |Q^-1 y|^2 + 2 F(x)``.

    ``F`` is a :class:`qlab.potentials.PotentialSpec` (or ``None`` for ``F = 0``).
    """
    alpha, lam = noise.basis.alpha, noise.lam
    quad = np.sum(alpha * z.u**2 / lam**2) + mu * np.sum(z.v**2 / lam**2)
    if F is not None:
        from .potentials import eval_F

        quad += 2.0 * eval_F(z.u, F, noise.basis)
    return float(quad)


# -- semigroups ------------------------------------------------------------------


def _mode_exponential(alpha: np.ndarray, mu: float, t: float, adjoint: bool) -> np.ndarray:
    """Closed-form ``exp(t M_k)`` for every mode, shape ``(N, 2, 2)``.

    With ``s^2 = (1 - 4 mu alpha) / (4 mu^2)``:
    ``exp(tM) = e^{-t/(2mu)} [c(t) I + g(t) (M + I/(2mu))]`` where
    ``c = cosh(st)``, ``g = sinh(st)/s`` (or cos/sin for ``s^2 < 0``).
    """
    alpha = np.asarray(alpha, dtype=float)
    disc = 1.0 - 4.0 * mu * alpha
    s2 = disc / (4.0 * mu * mu)
    half = 1.0 / (2.0 * mu)
    c = np.empty_like(alpha)
    g = np.empty_like(alpha)

    crit = np.abs(disc) < CRITICAL_TOL
    over = (disc > 0) & ~crit
    under = (disc < 0) & ~crit

    if np.any(crit):
        # second-order expansion in s^2 around the repeated eigenvalue
        x = s2[crit] * t * t
        damp = np.exp(-half * t)
        c[crit] = damp * (1.0 + x / 2.0)
        g[crit] = damp * t * (1.0 + x / 6.0)
    if np.any(over):
        s = np.sqrt(s2[over])
        lp = -half + s
        lm = -half - s
        ep, em = np.exp(lp * t), np.exp(lm * t)
        c[over] = 0.5 * (ep + em)
        small = s * t < 1e-3
        gg = np.where(small, 0.0, (ep - em) / (2.0 * np.where(small, 1.0, s)))
        if np.any(small):
            st = (s * t)[small]
            gg[small] = np.exp(-half * t) * t * (1.0 + st**2 / 6.0 + st**4 / 120.0)
        g[over] = gg
    if np.any(under):
        w = np.sqrt(-s2[under])
        damp = np.exp(-half * t)
        c[under] = damp * np.cos(w * t)
        g[under] = damp * np.sin(w * t) / w

    out = np.empty(alpha.shape + (2, 2))
    if adjoint:
        out[:, 0, 0] = c + g * half
        out[:, 0, 1] = -g / mu
        out[:, 1, 0] = g * alpha
        out[:, 1, 1] = c - g * half
    else:
        out[:, 0, 0] = c + g * half
        out[:, 0, 1] = g
        out[:, 1, 0] = -g * alpha / mu
        out[:, 1, 1] = c - g * half
    return out


def semigroup_matrices(mu: float, t: float, basis: SpectralBasis, adjoint: bool = False) -> np.ndarray:
    """Per-mode 2x2 matrices of ``S_mu(t)`` (or its adjoint), shape ``(N, 2, 2)``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if mu <= 0:
        raise ValueError("mu must be positive")
    return _mode_exponential(basis.alpha, mu, t, adjoint)


def apply_mode_matrices(E: np.ndarray, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Apply per-mode matrices to coefficient arrays (mode axis last, batch allowed)."""
    return (E[:, 0, 0] * u + E[:, 0, 1] * v, E[:, 1, 0] * u + E[:, 1, 1] * v)


def semigroup_step(z: PhaseState, mu: float, t: float, basis: SpectralBasis,
                   adjoint: bool = False) -> PhaseState:
    """Exact ``S_mu(t) z`` (or ``S_mu*(t) z``)."""
    E = semigroup_matrices(mu, t, basis, adjoint)
    return PhaseState(*apply_mode_matrices(E, z.u, z.v))


def heat_semigroup_step(u, t: float, basis: SpectralBasis) -> np.ndarray:
    if t < 0:
        raise ValueError("t must be nonnegative")
    return np.exp(-basis.alpha * t) * np.asarray(u, dtype=float)


def semigroup_norm(mu: float, t: float, basis: SpectralBasis) -> float:
    """Operator norm of ``S_mu(t)`` on ``H^0 x H^-1``."""
    E = semigroup_matrices(mu, t, basis)
    # similarity to Euclidean coordinates (u, v / sqrt(alpha))
    r = np.sqrt(basis.alpha)
    B = E.copy()
    B[:, 0, 1] *= r
    B[:, 1, 0] /= r
    return float(np.max(np.linalg.svd(B, compute_uv=False)[:, 0]))


def spectral_abscissa(mu: float, basis: SpectralBasis) -> float:
    """Slowest decay rate ``min_k -Re(lambda)`` over the eigenvalues of the mode generators."""
    alpha = basis.alpha
    disc = 1.0 - 4.0 * mu * alpha
    root = np.sqrt(np.clip(disc, 0.0, None))
    return float(np.min((1.0 - root) / (2.0 * mu)))


def estimate_decay(mu: float, basis: SpectralBasis, n_samples: int = 400,
                   margin: float = 0.01) -> SemigroupDecayEstimate:
    """Bound ``||S_mu(t)|| <= M e^{-omega t}`` and pick the control horizon ``T_mu``.

    ``omega`` is ``(1 - margin)`` times the spectral abscissa, so the bound also
    covers critically damped modes whose norm carries a factor ``t``.  ``M`` is
    the largest value of ``||S_mu(t)|| e^{omega t}`` over log-spaced samples that
    extend well past the transient.  ``T_mu`` satisfies
    ``((1 + sqrt(mu)) / min(1, sqrt(mu)))^2 M^2 e^{-2 omega T_mu} < 1``.
    """
    rate = spectral_abscissa(mu, basis)
    if not rate > 0:
        raise RuntimeError("semigroup is not exponentially stable")
    omega = (1.0 - margin) * rate
    T = 20.0 * mu + 3.0 / (margin * rate)
    times = np.concatenate([[0.0], np.geomspace(min(mu, 1.0 / rate) * 1e-4, T, n_samples)])
    norms = np.array([semigroup_norm(mu, t, basis) for t in times])
    M = float(np.max(norms * np.exp(omega * times)))
    pref = (1.0 + np.sqrt(mu)) / min(1.0, np.sqrt(mu))
    T_mu = max(np.log(pref * M) / omega, 0.0) * 1.01 + 1e-12
    return SemigroupDecayEstimate(M, float(omega), float(T_mu))


def gramian_closed_form(z: PhaseState, mu: float, delta: float, noise: NoiseSpec) -> float:
    """``|C_mu^1/2 z|^2 - |C_mu^1/2 S_mu*(delta) z|^2``.

    Equals ``int_0^delta |Q_mu* S_mu*(s) z|_H^2 ds`` (the squared norm of the adjoint
    control map), with ``Q_mu*(u, v) = (1/mu) (-A)^-1 Q v``.
    """
    zd = semigroup_step(z, mu, delta, noise.basis, adjoint=True)
    return cmu_quadratic(z, mu, 1, noise) - cmu_quadratic(zd, mu, 1, noise)


def adjoint_control_density(z: PhaseState, mu: float, s: np.ndarray, noise: NoiseSpec) -> np.ndarray:
    """``|Q_mu* S_mu*(s) z|_H^2`` at the times ``s``."""
    basis = noise.basis
    out = np.empty(len(s))
    for i, si in enumerate(np.atleast_1d(s)):
        g = semigroup_step(z, mu, float(si), basis, adjoint=True).v
        out[i] = np.sum((noise.lam * g / (mu * basis.alpha)) ** 2)
    return out


# -- exponential-integrator weights -----------------------------------------------


def phi_weights(mats: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(exp(hM), J1, J2)`` for a batch of square generators ``M``.

    ``J1 = int_0^h exp((h-s)M) ds`` and ``J2 = int_0^h exp((h-s)M) s ds``, read off the
    exponential of an augmented block-triangular matrix.
    """
    mats = np.asarray(mats, dtype=float)
    n = mats.shape[-1]
    big = np.zeros(mats.shape[:-2] + (3 * n, 3 * n))
    eye = np.eye(n)
    big[..., :n, :n] = mats
    big[..., :n, n:2 * n] = eye
    big[..., n:2 * n, 2 * n:] = eye
    ex = scipy.linalg.expm(h * big)
    return ex[..., :n, :n], ex[..., :n, n:2 * n], ex[..., :n, 2 * n:]


def wave_generators(mu: float, basis: SpectralBasis) -> np.ndarray:
    alpha = basis.alpha
    M = np.zeros((basis.n_modes, 2, 2))
    M[:, 0, 1] = 1.0
    M[:, 1, 0] = -alpha / mu
    M[:, 1, 1] = -1.0 / mu
    return M
