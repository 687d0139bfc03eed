import numpy as np
from scipy.optimize import rosen, rosen_der

from qlab.optim import lbfgs


def test_rosenbrock():
    res = lbfgs(lambda x: (rosen(x), rosen_der(x)), np.array([-1.2, 1.0, 0.5, -0.3]), rtol=1e-10)
    assert res.converged
    assert np.allclose(res.x, 1.0, atol=1e-6)
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))


def test_preconditioned_quadratic_converges_in_one_step():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((20, 20))
    H = A @ A.T + 20 * np.eye(20)
    b = rng.standard_normal(20)
    Hinv = np.linalg.inv(H)
    res = lbfgs(lambda x: (0.5 * x @ H @ x - b @ x, H @ x - b), np.zeros(20), precond=lambda g: Hinv @ g)
    assert res.iterations <= 2
    assert np.allclose(res.x, np.linalg.solve(H, b))


def test_iteration_cap_reports_best():
    res = lbfgs(lambda x: (rosen(x), rosen_der(x)), np.array([-1.2, 1.0]), max_iter=3)
    assert not res.converged and res.iterations == 3
    assert res.fun == min(res.history)
