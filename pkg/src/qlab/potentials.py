"""
Gradient nonlinearities ``B(x) = -Q^2 DF(x)`` built from a scalar profile ``b``.

Two families of composition potentials are provided:

``decreasing``
    ``b(eta) = -s arctan(eta)`` and ``F(x) = -int int_0^{x} b``, so ``DF(x) = -b(x)``.
``nonnegative``
    ``b(eta) = s log(1 + eta^2)`` and ``F(x) = int b(x)``, so ``DF(x) = b'(x)``.

Fields are composed pointwise on the collocation grid of the basis. ``F`` is the
trapezoid rule of the pointwise density and ``DF`` is its exact coefficient
gradient, so the discrete pair is consistent to rounding.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .spectral_core import NoiseSpec, SpectralBasis


class Family(str, Enum):
    ZERO = "zero"
    DECREASING = "decreasing"
    NONNEGATIVE = "nonnegative"


def _dec_density(eta):
    return eta * np.arctan(eta) - 0.5 * np.log1p(eta * eta)


def _dec_grad(eta):
    return np.arctan(eta)


def _dec_curv(eta):
    return 1.0 / (1.0 + eta * eta)


def _nn_density(eta):
    return np.log1p(eta * eta)


def _nn_grad(eta):
    return 2.0 * eta / (1.0 + eta * eta)


def _nn_curv(eta):
    e2 = eta * eta
    return 2.0 * (1.0 - e2) / (1.0 + e2) ** 2


_TABLE = {
    Family.DECREASING: (_dec_density, _dec_grad, _dec_curv, 1.0),
    Family.NONNEGATIVE: (_nn_density, _nn_grad, _nn_curv, 2.0),
}


@dataclass(frozen=True)
class PotentialSpec:
    """A Lipschitz-gradient potential ``F`` on fields.

    Parameters
    ----------
    family : Family or str
    strength : float
        Multiplier ``s >= 0`` applied to the scalar profile.
    """

    family: Family = Family.ZERO
    strength: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.strength < 0:
            raise ValueError("strength must be nonnegative")

    @property
    def is_zero(self) -> bool:
        return self.family is Family.ZERO or self.strength == 0.0

    @property
    def kappa(self) -> float:
        """Lipschitz constant of ``DF`` in ``H``."""
        if self.family is Family.ZERO:
            return 0.0
        return _TABLE[self.family][3] * self.strength

    def b(self, eta):
        """The scalar profile ``b`` of the family."""
        eta = np.asarray(eta, dtype=float)
        if self.family is Family.DECREASING:
            return -self.strength * np.arctan(eta)
        if self.family is Family.NONNEGATIVE:
            return self.strength * np.log1p(eta * eta)
        return np.zeros_like(eta)

    def density(self, eta):
        """Pointwise integrand of ``F``."""
        if self.family is Family.ZERO:
            return np.zeros_like(eta)
        return self.strength * _TABLE[self.family][0](eta)

    def density_grad(self, eta):
        if self.family is Family.ZERO:
            return np.zeros_like(eta)
        return self.strength * _TABLE[self.family][1](eta)

    def density_curv(self, eta):
        if self.family is Family.ZERO:
            return np.zeros_like(eta)
        return self.strength * _TABLE[self.family][2](eta)


def eval_F(x, spec: PotentialSpec, basis: SpectralBasis):
    """``F(x)``; the mode axis is last and leading axes are batched."""
    x = np.asarray(x, dtype=float)
    if spec.is_zero:
        return np.zeros(x.shape[:-1]) if x.ndim > 1 else 0.0
    out = basis.integrate(spec.density(basis.to_grid(x)))
    return out if x.ndim > 1 else float(out)


def eval_DF(x, spec: PotentialSpec, basis: SpectralBasis) -> np.ndarray:
    """Coefficients of ``DF(x)``, the projected pointwise gradient."""
    x = np.asarray(x, dtype=float)
    if spec.is_zero:
        return np.zeros_like(x)
    return basis.from_grid(spec.density_grad(basis.to_grid(x)))


def apply_DF_jacobian(x, w, spec: PotentialSpec, basis: SpectralBasis) -> np.ndarray:
    """``D^2 F(x) w`` (the Jacobian of ``DF`` is symmetric)."""
    w = np.asarray(w, dtype=float)
    if spec.is_zero:
        return np.zeros_like(w)
    curv = spec.density_curv(basis.to_grid(x))
    return basis.from_grid(curv * basis.to_grid(w))


def eval_drift_B(x, spec: PotentialSpec, noise: NoiseSpec) -> np.ndarray:
    """``B(x) = -Q^2 DF(x)``."""
    return -(noise.lam**2) * eval_DF(x, spec, noise.basis)
