import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FAMILIES
from oracles import exponential_path_action
from qlab import (
    DiscretePath,
    NoiseSpec,
    PhaseState,
    PotentialSpec,
    SpectralBasis,
    TimeGrid,
    action_decomposition,
    action_decomposition_residual,
    action_heat,
    action_wave,
    integrate_heat,
    integrate_wave,
    min_action_solve,
    quasipotential_closed_form,
    reversed_optimal_path,
)
from qlab.action import concatenate_paths, default_horizon, split_path
from qlab.spectral_core import energy_phi

ZERO = PotentialSpec("zero")
X4 = np.array([0.8, -0.4, 0.3, 0.1])


@pytest.fixture
def noise1():
    return NoiseSpec(SpectralBasis.unit_interval(1), 0.0)


@pytest.fixture
def noise4():
    return NoiseSpec(SpectralBasis.unit_interval(4), 0.0)


def smooth_path(grid, x, wobble=0.0, seed=0, y=None):
    """Rest at the start, ``x`` at the end (velocity ``y``, default 0), optional interior bump."""
    length = grid.t1 - grid.t0
    s = (grid.times - grid.t0) / length
    ramp = s**3 * (10 - 15 * s + 6 * s * s)
    phi = np.outer(ramp, x)
    if y is not None:
        phi += np.outer(length * (s - 1) * s**4, y)
    if wobble:
        rng = np.random.default_rng(seed)
        bump = (s * (1 - s)) ** 2
        phi += wobble * np.outer(bump * np.sin(4 * np.pi * s), rng.standard_normal(len(x)))
    return phi


class TestActionValues:
    def test_zero_path(self, noise4):
        path = DiscretePath(TimeGrid(-1, 0, 10), np.zeros((11, 4)))
        for spec in FAMILIES:
            assert action_wave(path, 0.5, spec, noise4).value == 0.0
            assert action_heat(path, spec, noise4).value == 0.0
            assert action_decomposition_residual(path, 0.5, spec, noise4) == 0.0

    @pytest.mark.parametrize("mu", [0.25, 1.0, 4.0])
    def test_exponential_path_oracle(self, mu, noise1):
        alpha = noise1.basis.alpha[0]
        gamma = (-1 + math.sqrt(1 + 4 * mu * alpha)) / (2 * mu)
        T = 12.0 / gamma
        grid = TimeGrid(-T, 0.0, 40000)
        phi = np.exp(gamma * grid.times)[:, None]
        path = DiscretePath(grid, phi, v_start=gamma * phi[0], v_end=gamma * phi[-1])
        val = action_wave(path, mu, ZERO, noise1)
        ref = exponential_path_action(alpha, mu, 1.0, gamma, T)
        assert val.value == pytest.approx(ref, rel=1e-6)
        assert ref == pytest.approx(alpha**2 / gamma, rel=1e-9)
        # lies above the quasi-potential at its end point
        assert val.value >= quasipotential_closed_form([1.0], [gamma], mu, spec=ZERO, noise=noise1)

    def test_heat_exponential_path(self, noise1):
        alpha = noise1.basis.alpha[0]
        grid = TimeGrid(-2.0, 0.0, 20000)
        path = DiscretePath(grid, np.exp(alpha * grid.times)[:, None])
        assert action_heat(path, ZERO, noise1).value == pytest.approx(alpha, rel=1e-4)

    @pytest.mark.parametrize("spec", [ZERO] + FAMILIES, ids=lambda s: s.family.value)
    def test_forward_wave_trajectory_has_tiny_action(self, spec, noise4):
        grid = TimeGrid(0.0, 2.0, 2000)
        tr = integrate_wave(PhaseState(X4, -0.5 * X4), 0.5, spec, noise4, grid)
        path = DiscretePath(grid, tr.u, v_start=tr.v[0], v_end=tr.v[-1])
        assert action_wave(path, 0.5, spec, noise4).value <= 1e-4

    @pytest.mark.parametrize("spec", [ZERO] + FAMILIES, ids=lambda s: s.family.value)
    def test_forward_heat_trajectory_has_tiny_action(self, spec, noise4):
        grid = TimeGrid(0.0, 0.5, 5000)
        tr = integrate_heat(X4, spec, noise4, grid)
        assert action_heat(DiscretePath(grid, tr.u), spec, noise4).value <= 1e-4

    def test_quadrature_error_estimate(self, noise4):
        grid = TimeGrid(-2.0, 0.0, 400)
        path = DiscretePath(grid, smooth_path(grid, X4, 0.3))
        fine = DiscretePath(TimeGrid(-2.0, 0.0, 3200), smooth_path(TimeGrid(-2.0, 0.0, 3200), X4, 0.3))
        coarse = action_wave(path, 0.5, FAMILIES[0], noise4)
        true_err = abs(coarse.value - action_wave(fine, 0.5, FAMILIES[0], noise4).value)
        assert 0.2 * true_err <= coarse.quadrature_error_estimate <= 5 * true_err

    def test_requires_three_nodes(self, noise4):
        with pytest.raises(ValueError):
            action_wave(DiscretePath(TimeGrid(0, 1, 1), np.zeros((2, 4))), 1.0, ZERO, noise4)

    def test_rejects_nonfinite_path(self):
        with pytest.raises(ValueError):
            DiscretePath(TimeGrid(0, 1, 2), np.array([[0.0], [np.nan], [1.0]]))


class TestDecomposition:
    @pytest.mark.parametrize("mu", [None, 0.5])
    @pytest.mark.parametrize("spec", FAMILIES, ids=lambda s: s.family.value)
    def test_residual_second_order(self, mu, spec, noise4):
        res = []
        for steps in (200, 400, 800):
            grid = TimeGrid(-2.0, 0.0, steps)
            path = DiscretePath(grid, smooth_path(grid, X4, 0.5, seed=3, y=0.3 * X4),
                                v_start=np.zeros(4) if mu else None, v_end=0.3 * X4 if mu else None)
            res.append(abs(action_decomposition_residual(path, mu, spec, noise4)))
        assert res[0] > res[1] > res[2]
        assert math.log2(res[1] / res[2]) >= 1.8

    @pytest.mark.parametrize("spec", FAMILIES, ids=lambda s: s.family.value)
    def test_cross_term_is_energy_on_decaying_path(self, spec, noise4):
        mu = 0.5
        path = reversed_optimal_path(X4, None, mu, spec=spec, noise=noise4)
        dec = action_decomposition(path, mu, spec, noise4)
        phi_end = energy_phi(PhaseState(X4, np.zeros(4)), mu, spec, noise4)
        assert abs(dec["cross"] - phi_end) <= 1e-3 * phi_end
        assert dec["boundary"] == pytest.approx(phi_end, rel=1e-3)


class TestClosedForm:
    def test_examples(self, noise1):
        assert quasipotential_closed_form([0.0], spec=ZERO, noise=noise1) == 0.0
        assert quasipotential_closed_form([1.0], [0.0], 1.0, spec=ZERO, noise=noise1) == pytest.approx(math.pi**2)
        assert quasipotential_closed_form([0.0], [1.0], 2.0, spec=ZERO, noise=noise1) == pytest.approx(2.0)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10**6), mu=st.floats(0.01, 10.0), fam=st.sampled_from(FAMILIES))
    def test_zero_velocity_reduces_to_heat(self, seed, mu, fam):
        noise = NoiseSpec(SpectralBasis.unit_interval(4), 0.3)
        x = np.random.default_rng(seed).standard_normal(4)
        v_wave = quasipotential_closed_form(x, np.zeros(4), mu, spec=fam, noise=noise)
        assert v_wave == quasipotential_closed_form(x, spec=fam, noise=noise)
        assert v_wave >= 0.0

    def test_velocity_needs_mass(self, noise1):
        with pytest.raises(ValueError):
            quasipotential_closed_form([1.0], [1.0], spec=ZERO, noise=noise1)


class TestReversedPath:
    def test_zero_target(self, noise4):
        path = reversed_optimal_path(np.zeros(4), None, 1.0, spec=ZERO, noise=noise4, T=1.0)
        assert not np.any(path.phi) and action_wave(path, 1.0, ZERO, noise4).value == 0.0

    def test_ends_at_target(self, noise4):
        y = np.array([0.2, 0.1, -0.3, 0.0])
        path = reversed_optimal_path(X4, y, 0.5, spec=FAMILIES[0], noise=noise4, T=2.0)
        assert np.allclose(path.phi[-1], X4) and np.allclose(path.v_end, y)
        assert path.grid.t1 == 0.0

    def test_fixed_horizon_accounts_for_residual_energy(self, noise1):
        mu, T = 1.0, 3.0
        path = reversed_optimal_path([1.0], [0.0], mu, spec=ZERO, noise=noise1, T=T, dt=1e-3)
        val = action_wave(path, mu, ZERO, noise1).value
        start = PhaseState(path.phi[0], -path.v_start)
        expected = math.pi**2 - energy_phi(start, mu, ZERO, noise1)
        assert val == pytest.approx(expected, rel=1e-2)

    def test_automatic_horizon_reaches_quasipotential(self, noise1):
        path = reversed_optimal_path([1.0], [0.0], 1.0, spec=ZERO, noise=noise1)
        assert action_wave(path, 1.0, ZERO, noise1).value == pytest.approx(math.pi**2, rel=1e-2)

    @pytest.mark.parametrize("spec", FAMILIES, ids=lambda s: s.family.value)
    def test_nonlinear_matches_closed_form_and_minimizer(self, spec, noise4):
        y = np.array([0.5, -0.2, 0.1, 0.0])
        closed = quasipotential_closed_form(X4, y, 0.5, spec=spec, noise=noise4)
        path = reversed_optimal_path(X4, y, 0.5, spec=spec, noise=noise4)
        assert action_wave(path, 0.5, spec, noise4).value == pytest.approx(closed, rel=1e-2)
        rep = min_action_solve(X4, y, 0.5, spec=spec, noise=noise4)
        assert rep.numeric_min == pytest.approx(closed, rel=1e-2)

    def test_heat_reversed_path(self, noise4):
        spec = FAMILIES[1]
        path = reversed_optimal_path(X4, spec=spec, noise=noise4)
        closed = quasipotential_closed_form(X4, spec=spec, noise=noise4)
        assert action_heat(path, spec, noise4).value == pytest.approx(closed, rel=1e-2)


class TestMinimizer:
    def test_zero_target(self, noise4):
        rep = min_action_solve(np.zeros(4), None, 0.5, spec=FAMILIES[0], noise=noise4, T=1.0, steps=50)
        assert rep.numeric_min == 0.0 and not np.any(rep.path.phi)

    def test_heat_single_mode(self, noise1):
        rep = min_action_solve([1.0], spec=ZERO, noise=noise1, T=4.0, steps=400)
        assert rep.numeric_min == pytest.approx(math.pi**2, rel=0.02)
        exact = np.exp(math.pi**2 * rep.path.grid.times)
        assert np.allclose(rep.path.phi[:, 0], exact, rtol=0.01, atol=1e-3)
        big = exact > 1e-2
        assert np.all(np.abs(rep.path.phi[big, 0] / exact[big] - 1) <= 0.01)

    def test_wave_free_velocity(self, noise4):
        spec = FAMILIES[1]
        rep = min_action_solve(X4, None, 0.5, spec=spec, noise=noise4)
        closed = quasipotential_closed_form(X4, spec=spec, noise=noise4)
        assert rep.closed_form == pytest.approx(closed)
        assert abs(rep.gap) <= 0.02 and rep.converged
        assert np.linalg.norm(rep.terminal_velocity) <= 0.05 * np.linalg.norm(X4)
        assert all(b <= a for a, b in zip(rep.history, rep.history[1:]))
        assert min(rep.history) >= closed - 0.01 * (1 + closed)
        # agrees with the reversed-flow path
        rev = reversed_optimal_path(X4, None, 0.5, spec=spec, noise=noise4)
        assert rep.numeric_min == pytest.approx(action_wave(rev, 0.5, spec, noise4).value, rel=2e-3)

    def test_nonconvergence_is_flagged(self, noise4):
        rep = min_action_solve(X4, None, 0.5, spec=FAMILIES[1], noise=noise4, max_iter=1)
        assert not rep.converged and math.isfinite(rep.numeric_min)
        assert rep.numeric_min == min(rep.history)

    def test_init_must_match_endpoints(self, noise4):
        grid = TimeGrid(-1.0, 0.0, 100)
        bad = DiscretePath(grid, np.ones((101, 4)))
        with pytest.raises(ValueError):
            min_action_solve(X4, np.zeros(4), 0.5, spec=ZERO, noise=noise4, T=1.0, steps=100, init=bad)

    def test_report_serializes(self, noise4):
        rep = min_action_solve(X4, None, 1.0, spec=FAMILIES[0], noise=noise4)
        d = json.loads(json.dumps(rep.to_dict()))
        assert {"closed_form", "numeric_min", "gap", "iterations", "converged"} <= set(d)

    def test_horizon_defaults(self, noise4):
        T, steps = default_horizon(0.5, noise4)
        assert T > 0 and steps % 2 == 0 and 200 <= steps <= 20000


class TestPathAlgebra:
    @pytest.mark.parametrize("mu", [None, 0.7])
    def test_additivity(self, mu, noise4):
        grid = TimeGrid(-3.0, 0.0, 300)
        path = DiscretePath(grid, smooth_path(grid, X4, 0.4, seed=1, y=0.2 * X4),
                            v_start=np.zeros(4), v_end=0.2 * X4)
        left, right = split_path(path, 120)
        act = lambda p: action_wave(p, mu, FAMILIES[0], noise4).value
        if mu is None:
            # heat action with pinned velocities (a ghost-node first derivative)
            act = lambda p: action_heat(p, FAMILIES[0], noise4).value
        assert act(left) + act(right) == pytest.approx(act(path), rel=1e-12)
        joined = concatenate_paths(left, right)
        assert np.array_equal(joined.phi, path.phi)

    def test_zero_extension(self, noise4):
        grid = TimeGrid(-2.0, 0.0, 200)
        phi = smooth_path(grid, X4)
        phi[:3] = 0.0
        path = DiscretePath(grid, phi, v_start=np.zeros(4), v_end=np.zeros(4))
        pad = DiscretePath(TimeGrid(-3.0, -2.0, 100), np.zeros((101, 4)), v_start=np.zeros(4), v_end=np.zeros(4))
        longer = concatenate_paths(pad, path)
        for spec in FAMILIES:
            assert action_wave(longer, 0.5, spec, noise4).value == pytest.approx(
                action_wave(path, 0.5, spec, noise4).value, rel=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10**6), wobble=st.floats(0.0, 2.0), mu=st.sampled_from([0.25, 1.0, 4.0]),
           fam=st.sampled_from(FAMILIES))
    def test_lower_bound(self, seed, wobble, mu, fam):
        noise = NoiseSpec(SpectralBasis.unit_interval(4), 0.0)
        rng = np.random.default_rng(seed)
        x, y = rng.standard_normal(4) * 0.7, rng.standard_normal(4) * 0.5
        grid = TimeGrid(-4.0, 0.0, 800)
        phi = smooth_path(grid, x, wobble, seed, y=y)
        path = DiscretePath(grid, phi, v_start=np.zeros(4), v_end=y)
        closed = quasipotential_closed_form(x, y, mu, spec=fam, noise=noise)
        assert action_wave(path, mu, fam, noise).value >= closed - 1e-2 * (1 + closed)
