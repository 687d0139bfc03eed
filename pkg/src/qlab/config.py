"""
Flat ``key = value`` configuration with dotted keys.

Lines are UTF-8, ``#`` starts a comment, lists are comma separated.  A key of the
form ``<experiment>.<field>`` (for instance ``exit.N``) overrides ``<field>`` only
when that experiment runs.  Precedence, lowest first: built-in defaults, built-in
per-experiment defaults, user global keys, user per-experiment keys.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .potentials import Family, PotentialSpec
from .spectral_core import NoiseSpec, SpectralBasis

EXPERIMENTS = ("sk-compare", "action-check", "minact", "quasipotential-sweep", "exit-mc")
SCOPES = {"sk": "sk-compare", "action": "action-check", "minact": "minact",
          "sweep": "quasipotential-sweep", "exit": "exit-mc"}


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p.strip())


# key -> (attribute, parser)
CORE_KEYS = {
    "N": ("N", int),
    "M": ("M", int),
    "mu": ("mu", float),
    "eps": ("eps", float),
    "rho": ("rho", float),
    "potential.family": ("family", str),
    "potential.strength": ("strength", float),
    "dt": ("dt", float),
    "T": ("T", float),
    "seed": ("seed", int),
    "paths": ("paths", int),
    "r": ("r", float),
    "out": ("out", str),
    "workers": ("workers", int),
}

PARAM_KEYS = {
    "sk.mu_list": _floats,
    "sk.u0": _floats,
    "action.x": _floats,
    "action.mu_list": _floats,
    "minact.x": _floats,
    "minact.y": _floats,
    "minact.equation": str,
    "minact.horizon": float,
    "minact.steps": int,
    "sweep.x": _floats,
    "sweep.scales": _floats,
    "sweep.mu_list": _floats,
    "exit.equation": str,
    "exit.eps": _floats,
    "exit.eps_factors": _floats,
    "exit.max_time": float,
}

BUILTIN_PARAMS = {
    "sk.mu_list": (0.1, 0.02, 0.004),
    "action.x": (0.6, -0.3, 0.2, 0.1, -0.05, 0.05, 0.02, -0.02),
    "action.mu_list": (0.25, 1.0, 4.0),
    "minact.x": (0.8, -0.4, 0.3, 0.1),
    "minact.equation": "wave",
    "sweep.x": (0.8, -0.4, 0.3, 0.1),
    "sweep.scales": (0.5, 1.0, 1.5),
    "sweep.mu_list": (0.25, 1.0, 4.0),
    "exit.equation": "heat",
    "exit.eps_factors": (0.5, 0.25, 0.125),
}

BUILTIN_SCOPED = {
    "exit-mc": {"N": 1, "paths": 2000, "family": "zero"},
    "minact": {"N": 4, "family": "nonnegative"},
    "quasipotential-sweep": {"N": 4, "family": "nonnegative"},
    "action-check": {"dt": 1e-4, "T": 1.0},
}


@dataclass(frozen=True)
class ModelConfig:
    N: int = 8
    M: int = 0  # 0 selects 4 N
    mu: float = 0.5
    eps: float = 0.01
    rho: float = 0.0
    family: str = "decreasing"
    strength: float = 1.0
    dt: float = 1e-3
    T: float = 2.0
    seed: int = 20261015
    paths: int = 200
    r: float = 1.0
    out: str = "qlab_out"
    workers: int = 1
    params: dict = field(default_factory=dict, compare=False)
    scoped: dict = field(default_factory=dict, compare=False)
    user_keys: frozenset = field(default_factory=frozenset, compare=False)

    def validate(self) -> "ModelConfig":
        checks = [
            (self.N >= 1, "N must be >= 1"),
            (self.grid_size >= 2 * self.N, "M must be >= 2 N"),
            (self.dt > 0, "dt must be > 0"),
            (self.r > 0, "r must be > 0"),
            (self.eps >= 0, "eps must be >= 0"),
            (self.mu > 0, "mu must be > 0"),
            (self.T > 0, "T must be > 0"),
            (self.paths >= 1, "paths must be >= 1"),
            (self.rho >= 0, "rho must be >= 0"),
            (self.strength >= 0, "potential.strength must be >= 0"),
            (self.workers >= 1, "workers must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            Family(self.family)
        except ValueError:
            raise ConfigError(f"unknown potential.family {self.family!r}") from None
        return self

    @property
    def grid_size(self) -> int:
        return self.M if self.M else 4 * self.N

    def param(self, key: str):
        if key in self.params:
            return self.params[key]
        return BUILTIN_PARAMS.get(key)

    def for_experiment(self, name: str) -> "ModelConfig":
        """Resolve per-experiment overrides."""
        if name not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {name!r}")
        changes = {k: v for k, v in BUILTIN_SCOPED.get(name, {}).items() if k not in self.user_keys}
        changes.update(self.scoped.get(name, {}))
        return replace(self, **changes).validate()

    # -- derived objects
    def basis(self) -> SpectralBasis:
        return SpectralBasis(self.N, self.grid_size)

    def noise(self) -> NoiseSpec:
        return NoiseSpec(self.basis(), self.rho)

    def potential(self) -> PotentialSpec:
        return PotentialSpec(Family(self.family), self.strength)

    def echo(self) -> dict:
        """Settings that determine results (thread count and output path excluded)."""
        out = {}
        for key, (attr, _) in CORE_KEYS.items():
            if attr not in ("workers", "out"):
                out[key] = getattr(self, attr)
        out["M"] = self.grid_size
        for key in sorted(set(BUILTIN_PARAMS) | set(self.params)):
            val = self.param(key)
            out[key] = list(val) if isinstance(val, tuple) else val
        return out


def parse_config(text: str) -> ModelConfig:
    core, params, scoped, user_keys = {}, {}, {}, set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key in CORE_KEYS:
                attr, conv = CORE_KEYS[key]
                core[attr] = conv(value)
                user_keys.add(attr)
            elif key in PARAM_KEYS:
                params[key] = PARAM_KEYS[key](value)
            elif "." in key and key.split(".", 1)[0] in SCOPES and key.split(".", 1)[1] in CORE_KEYS:
                scope, rest = key.split(".", 1)
                attr, conv = CORE_KEYS[rest]
                scoped.setdefault(SCOPES[scope], {})[attr] = conv(value)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from None
    cfg = ModelConfig(**core, params=params, scoped=scoped, user_keys=frozenset(user_keys))
    return cfg.validate()


def load_config(path) -> ModelConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return parse_config(text)


def default_config_text() -> str:
    cfg = ModelConfig()
    lines = ["# qlab configuration (flat key = value, '#' comments)"]
    for key, (attr, _) in CORE_KEYS.items():
        lines.append(f"{key} = {getattr(cfg, attr)}")
    lines.append("")
    for key, val in BUILTIN_PARAMS.items():
        text = ", ".join(str(v) for v in val) if isinstance(val, tuple) else str(val)
        lines.append(f"{key} = {text}")
    lines.append("")
    lines.append("# per-experiment overrides")
    inverse = {v: k for k, v in SCOPES.items()}
    for exp, over in BUILTIN_SCOPED.items():
        for attr, val in over.items():
            key = next(k for k, (a, _) in CORE_KEYS.items() if a == attr)
            lines.append(f"{inverse[exp]}.{key} = {val}")
    return "\n".join(lines) + "\n"
