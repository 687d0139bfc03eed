"""
Experiment drivers: exit-time Monte Carlo and the suite behind the CLI.

Every driver takes a resolved :class:`ModelConfig` and returns a JSON-ready
summary.  ``run_suite`` adds artifact writing and maps failures to exit codes.
"""
from __future__ import annotations

import json
import logging
import math
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import roots_legendre

from . import artifacts
from .action import (
    action_decomposition,
    action_wave,
    min_action_solve,
    quasipotential_closed_form,
    relaxation_rates,
    reversed_optimal_path,
)
from .config import ConfigError, ModelConfig
from .dynamics import (
    HeatStepper,
    WaveStepper,
    energy_balance,
    map_replicas,
    replica_rng,
    sk_compare,
    sk_decrease_pvalues,
    TimeGrid,
    integrate_heat,
    integrate_wave,
)
from .potentials import Family, PotentialSpec
from .spectral_core import (
    NoiseSpec,
    PhaseState,
    adjoint_control_density,
    energy_phi,
    gramian_closed_form,
)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


class NumericalFailure(RuntimeError):
    pass


# -- exit-time Monte Carlo ---------------------------------------------------------


@dataclass
class ExitRecord:
    """Exit statistics from the ball ``|u|_H < r`` at one noise level.

    Capped paths enter ``mean_tau`` at the cap (restricted mean), so the mean is a
    lower bound whenever ``n_censored > 0``.
    """

    eps: float
    n_paths: int
    n_censored: int
    mean_tau: float
    std_error: float
    log_estimate: float
    log_std_error: float
    max_time: float
    valid: bool
    hit_summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def exit_times(equation: str, mu: float, spec: PotentialSpec, noise: NoiseSpec, eps: float,
               r: float, dt: float, max_time: float, seed: int, replicas,
               block: int = 512) -> np.ndarray:
    """Simulate from rest at 0 until ``|u|_H`` first reaches ``r``.

    Returns an array of shape ``(P, 1 + N)``: the exit time (``inf`` if capped) and
    the exit position.  Crossings seen at a node are located by linear
    interpolation of ``|u|_H``.  Heat paths are rough, so between two interior
    nodes a Brownian-bridge test also catches excursions past the sphere, with
    probability ``exp(-2 d0 d1 / (s^2 dt))`` where ``d0``, ``d1`` are the distances
    to the sphere and ``s^2`` the radial noise variance.  Exited paths leave the batch.
    """
    n = noise.basis.n_modes
    replicas = np.asarray(replicas)
    P = len(replicas)
    out = np.full((P, 1 + n), np.nan)
    out[:, 0] = np.inf
    wave = equation == "wave"
    stepper = WaveStepper(mu, spec, noise, dt) if wave else HeatStepper(spec, noise, dt)
    gens = [replica_rng(seed, p) for p in replicas]
    bridge = None if wave else [np.random.Generator(np.random.Philox(
        np.random.SeedSequence([int(seed), int(p), 1]))) for p in replicas]
    kick_sd2 = None if wave else stepper.ou**2 * eps
    active = np.arange(P)
    u = np.zeros((P, n))
    v = np.zeros((P, n))
    norm_prev = np.zeros(P)
    max_steps = int(math.ceil(max_time / dt))
    scale = math.sqrt(eps * dt)
    done = 0
    while active.size and done < max_steps:
        nb = min(block, max_steps - done)
        xi = np.stack([gens[i].standard_normal((nb, n)) for i in active], axis=1) * scale
        if bridge is not None:
            unif = np.stack([bridge[i].random(nb) for i in active], axis=1)
        for j in range(nb):
            u_prev = u
            if wave:
                u, v = stepper.step(u, v, kick=xi[j])
            else:
                u = stepper.step(u, kick=xi[j])
            nrm = np.sqrt(np.sum(u * u, axis=1))
            hit = nrm >= r
            frac = np.ones(len(nrm))
            frac[hit] = (r - norm_prev[hit]) / (nrm[hit] - norm_prev[hit])
            if bridge is not None:
                d0, d1 = r - norm_prev, r - nrm
                direction = u / np.maximum(nrm, 1e-300)[:, None]
                s2 = np.maximum(np.sum(kick_sd2 * direction**2, axis=1), 1e-300)
                with np.errstate(over="ignore", invalid="ignore"):
                    p_cross = np.exp(-2.0 * d0 * d1 / (s2 * dt))
                crossed = ~hit & (unif[j] < p_cross)
                frac[crossed] = 0.5
                hit = hit | crossed
            if hit.any():
                idx = active[hit]
                f = frac[hit]
                out[idx, 0] = (done + j + f) * dt
                pos = u_prev[hit] + f[:, None] * (u[hit] - u_prev[hit])
                out[idx, 1:] = r * pos / np.maximum(np.linalg.norm(pos, axis=1), 1e-300)[:, None]
                keep = ~hit
                active, u, v, nrm, xi = active[keep], u[keep], v[keep], nrm[keep], xi[:, keep]
                if bridge is not None:
                    unif = unif[:, keep]
                if not active.size:
                    break
            norm_prev = nrm
        done += nb
    return out


def default_max_time(eps_max: float, barrier: float, rate: float) -> float:
    """``10^3`` times the Arrhenius time ``exp(barrier / eps) / rate`` at the largest ``eps``.

    ``rate`` is the slowest relaxation rate of the linear flow being simulated.
    """
    return 1e3 * math.exp(min(barrier / eps_max, 700.0)) / rate


def exit_schedule(config: ModelConfig) -> tuple[list[float], float]:
    """Noise levels and the linear barrier ``alpha_1 r^2`` used to scale them."""
    noise = config.noise()
    barrier = float(noise.basis.alpha[0] * config.r**2 / noise.lam[0] ** 2)
    explicit = config.param("exit.eps")
    if explicit:
        eps_list = [float(e) for e in explicit]
    else:
        eps_list = [f * barrier for f in config.param("exit.eps_factors")]
    if not eps_list or any(e <= 0 for e in eps_list):
        raise ConfigError("exit noise levels must be positive")
    return eps_list, barrier


def run_exit_mc(config: ModelConfig, equation: str | None = None) -> list[ExitRecord]:
    """Mean exit time from the ``H``-ball of radius ``r`` across the noise schedule."""
    equation = equation or config.param("exit.equation")
    if equation not in ("heat", "wave"):
        raise ConfigError(f"exit.equation must be heat or wave, not {equation!r}")
    noise, spec = config.noise(), config.potential()
    eps_list, barrier = exit_schedule(config)
    rate, _ = relaxation_rates(config.mu if equation == "wave" else None, noise)
    cap = config.param("exit.max_time") or default_max_time(max(eps_list), barrier, rate)
    records = []
    for k, eps in enumerate(eps_list):
        seed = config.seed + 7919 * k  # distinct stream per noise level
        res = map_replicas(
            lambda chunk, eps=eps, seed=seed: exit_times(
                equation, config.mu, spec, noise, eps, config.r, config.dt, cap, seed, chunk),
            config.paths, config.workers, chunk=max(250, -(-config.paths // config.workers)))
        records.append(_exit_record(eps, res, cap))
    return records


def _exit_record(eps: float, res: np.ndarray, cap: float) -> ExitRecord:
    tau = res[:, 0]
    censored = ~np.isfinite(tau)
    n = len(tau)
    n_cens = int(censored.sum())
    if n_cens == n:
        return ExitRecord(eps, n, n_cens, math.nan, math.nan, math.nan, math.nan, cap, False,
                          {"n_exited": 0})
    clipped = np.where(censored, cap, tau)
    mean = float(clipped.mean())
    se = float(clipped.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    hits = res[~censored, 1:]
    dominant = np.argmax(np.abs(hits), axis=1)
    summary = {
        "n_exited": int(len(hits)),
        "mean_position": [float(c) for c in hits.mean(axis=0)],
        "mean_abs_position": [float(c) for c in np.abs(hits).mean(axis=0)],
        "dominant_mode_fraction": [float(np.mean(dominant == m)) for m in range(hits.shape[1])],
    }
    return ExitRecord(
        eps=eps,
        n_paths=n,
        n_censored=n_cens,
        mean_tau=mean,
        std_error=se,
        log_estimate=eps * math.log(mean),
        log_std_error=eps * se / mean,
        max_time=cap,
        valid=True,
        hit_summary=summary,
    )


def mean_exit_time_1d(alpha: float, eps: float, r: float, n_grid: int = 4001) -> float:
    """Mean exit time of ``dX = -alpha X dt + sqrt(eps) dW`` from ``(-r, r)`` started at 0.

    Solves ``(eps/2) T'' - alpha x T' = -1``, ``T(+-r) = 0`` by central differences.
    """
    from scipy.linalg import solve_banded

    xs = np.linspace(-r, r, n_grid)
    h = xs[1] - xs[0]
    inner = xs[1:-1]
    a = eps / (2 * h * h)
    b = alpha * inner / (2 * h)
    ab = np.zeros((3, len(inner)))
    ab[0, 1:] = (a - b)[:-1]
    ab[1] = -2 * a
    ab[2, :-1] = (a + b)[1:]
    T = solve_banded((1, 1), ab, -np.ones(len(inner)))
    return float(np.interp(0.0, inner, T))


# -- other experiments -------------------------------------------------------------


def _pad(values, n) -> np.ndarray:
    out = np.zeros(n)
    vals = np.asarray(values, float)[:n]
    out[: len(vals)] = vals
    return out


def gramian_quadrature(z: PhaseState, mu: float, delta: float, noise: NoiseSpec,
                       nodes: int = 200) -> float:
    """Gauss-Legendre quadrature of ``|Q_mu^* S_mu^*(s) z|^2`` over ``[0, delta]``."""
    x, w = roots_legendre(nodes)
    s = 0.5 * delta * (x + 1.0)
    return float(0.5 * delta * np.sum(w * adjoint_control_density(z, mu, s, noise)))


def run_action_check(config: ModelConfig) -> dict:
    noise, spec = config.noise(), config.potential()
    n = config.N
    x = _pad(config.param("action.x"), n)
    z = PhaseState(x, 0.5 * x)
    gram = []
    for mu in config.param("action.mu_list"):
        for delta in (0.1, 1.0):
            exact = gramian_closed_form(z, mu, delta, noise)
            quad = gramian_quadrature(z, mu, delta, noise)
            gram.append({"mu": mu, "delta": delta, "closed_form": exact, "quadrature": quad,
                         "relative_error": abs(quad - exact) / abs(exact)})
    bal = energy_balance(PhaseState(x, np.zeros(n)), config.mu, spec, noise, config.T, config.dt)
    reversed_runs = []
    for fam in (Family.DECREASING, Family.NONNEGATIVE):
        fspec = PotentialSpec(fam, config.strength)
        for mu in config.param("action.mu_list"):
            path = reversed_optimal_path(x, None, mu, spec=fspec, noise=noise)
            val = action_wave(path, mu, fspec, noise).value
            closed = quasipotential_closed_form(x, np.zeros(n), mu, spec=fspec, noise=noise)
            dec = action_decomposition(path, mu, fspec, noise)
            phi_end = energy_phi(PhaseState(x, np.zeros(n)), mu, fspec, noise)
            reversed_runs.append({
                "family": fam.value, "mu": mu, "horizon": path.grid.t1 - path.grid.t0,
                "action": val, "closed_form": closed, "gap": (val - closed) / closed,
                "cross_term": dec["cross"], "energy_at_end": phi_end,
                "cross_term_error": abs(dec["cross"] - phi_end) / phi_end,
                "decomposition_residual": dec["residual"],
            })
    if not all(math.isfinite(g["relative_error"]) for g in gram) or not math.isfinite(bal["relative_error"]):
        raise NumericalFailure("non-finite action-check result")
    return {
        "gramian": gram,
        "energy_balance": {k: bal[k] for k in ("energy_drop", "dissipated", "relative_error")},
        "reversed_flow": reversed_runs,
        "_energy_trace": (bal["times"], bal["energy"]),
    }


def _minact_one(x, y, mu, spec, noise, steps=None, T=None) -> dict:
    rep = min_action_solve(x, y, mu, spec=spec, noise=noise, T=T, steps=steps)
    closed_lower = quasipotential_closed_form(x, y, mu if y is not None else None, spec=spec, noise=noise)
    d = rep.to_dict()
    d["lower_bound_ok"] = d["min_iterate_action"] >= closed_lower - 0.01 * (1 + closed_lower)
    return d, rep


def run_minact(config: ModelConfig) -> dict:
    noise, spec = config.noise(), config.potential()
    x = _pad(config.param("minact.x"), config.N)
    y_param = config.param("minact.y")
    y = _pad(y_param, config.N) if y_param else None
    eq = config.param("minact.equation")
    if eq not in ("heat", "wave"):
        raise ConfigError(f"minact.equation must be heat or wave, not {eq!r}")
    mu = config.mu if eq == "wave" else None
    d, rep = _minact_one(x, y if mu is not None else None, mu, spec, noise,
                         config.param("minact.steps"), config.param("minact.horizon"))
    d.update({"equation": eq, "mu": mu, "x": list(x), "y": None if y is None else list(y)})
    if not math.isfinite(d["numeric_min"]):
        raise NumericalFailure("minimization produced a non-finite action")
    d["_path"] = rep.path
    return d


def run_quasipotential_sweep(config: ModelConfig) -> dict:
    noise, spec = config.noise(), config.potential()
    base = _pad(config.param("sweep.x"), config.N)
    points = []
    for scale in config.param("sweep.scales"):
        x = scale * base
        for mu in list(config.param("sweep.mu_list")) + [None]:
            d, _ = _minact_one(x, None, mu, spec, noise)
            d.update({"scale": scale, "mu": mu, "equation": "heat" if mu is None else "wave"})
            points.append(d)
    gaps = [abs(p["gap"]) for p in points]
    if not all(math.isfinite(g) for g in gaps):
        raise NumericalFailure("non-finite sweep gap")
    return {"points": points, "max_abs_gap": max(gaps),
            "all_within_2_percent": bool(max(gaps) <= 0.02)}


def run_sk_compare(config: ModelConfig) -> dict:
    noise, spec = config.noise(), config.potential()
    u0_param = config.param("sk.u0")
    u0 = _pad(u0_param, config.N) if u0_param else np.zeros(config.N)
    mu_list = sorted(config.param("sk.mu_list"), reverse=True)
    rows = sk_compare(mu_list, config.eps, config.T, config.paths, spec=spec, noise=noise,
                      dt=config.dt, seed=config.seed, u0=u0, workers=config.workers)
    pvals = sk_decrease_pvalues(rows)
    if not all(math.isfinite(r.mean_dev) for r in rows):
        raise NumericalFailure("non-finite deviation")
    return {
        "rows": [{"mu": r.mu, "mean_deviation": r.mean_dev, "stderr": r.stderr} for r in rows],
        "decrease_pvalues": pvals,
        "strictly_decreasing": all(a.mean_dev > b.mean_dev for a, b in zip(rows, rows[1:])),
        "_u0": u0,
    }


# -- suite -------------------------------------------------------------------------


def _dump_json(path: Path, data) -> None:
    path.write_text(json.dumps(artifacts.jsonable(data), sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def run_suite(config: ModelConfig, experiment: str, out_dir=None) -> int:
    """Run one experiment and write its artifacts; returns a process exit code."""
    from . import plotting

    try:
        cfg = config.for_experiment(experiment)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "figures").mkdir(exist_ok=True)
    summary = {"experiment": experiment, "config": cfg.echo()}
    try:
        if experiment == "exit-mc":
            records = run_exit_mc(cfg)
            eps_list, barrier = exit_schedule(cfg)
            summary["barrier"] = barrier
            summary["records"] = [r.to_dict() for r in records]
            artifacts.write_exit_records(out / "exit_records.csv", records)
            plotting.plot_exit(records, barrier, out / "figures" / "exit_times.png")
        elif experiment == "sk-compare":
            res = run_sk_compare(cfg)
            u0 = res.pop("_u0")
            summary.update(res)
            artifacts.write_rows(out / "sk_compare.csv", ["mu", "mean_deviation", "stderr"], res["rows"])
            grid = TimeGrid.from_dt(0.0, cfg.T, cfg.dt)
            mu_min = min(r["mu"] for r in res["rows"])
            wave = integrate_wave(PhaseState(u0, np.zeros(cfg.N)), mu_min, cfg.potential(), cfg.noise(),
                                  grid, eps=cfg.eps, seed=cfg.seed)
            heat = integrate_heat(u0, cfg.potential(), cfg.noise(), grid, eps=cfg.eps, seed=cfg.seed)
            artifacts.write_trajectory(out / "trajectories" / "sk_wave_replica0.csv", grid.times, wave.u, wave.v)
            artifacts.write_trajectory(out / "trajectories" / "sk_heat_replica0.csv", grid.times, heat.u)
            plotting.plot_sk(res["rows"], out / "figures" / "sk_deviation.png")
        elif experiment == "action-check":
            res = run_action_check(cfg)
            times, energy = res.pop("_energy_trace")
            summary.update(res)
            plotting.plot_energy(times, energy, out / "figures" / "energy_decay.png")
        elif experiment == "minact":
            res = run_minact(cfg)
            path = res.pop("_path")
            summary.update(res)
            artifacts.write_trajectory(out / "trajectories" / "minact_path.csv", path.grid.times, path.phi)
            plotting.plot_path(path.grid.times, path.phi, out / "figures" / "minact_path.png")
        elif experiment == "quasipotential-sweep":
            res = run_quasipotential_sweep(cfg)
            summary.update(res)
            plotting.plot_sweep(res["points"], out / "figures" / "sweep_gaps.png")
        else:
            raise ConfigError(f"unknown experiment {experiment!r}")
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (NumericalFailure, FloatingPointError, OverflowError, np.linalg.LinAlgError, RuntimeError) as exc:
        log.error("numerical failure: %s", exc)
        _dump_json(out / "error.json", {"experiment": experiment, "error": type(exc).__name__,
                                        "message": str(exc), "traceback": traceback.format_exc(),
                                        "config": cfg.echo()})
        return EXIT_NUMERICAL
    _dump_json(out / "summary.json", summary)
    return EXIT_OK
