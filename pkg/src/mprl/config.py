"""Experiment configuration: flat `key = value` sections, dotted overrides.

Every option is addressable as `section.key`, both in the INI file and in
repeated `--set section.key=value` sweep overrides. No nesting; values are
scalars or comma-separated integer lists.
"""

from __future__ import annotations

import configparser
import dataclasses
import io

from .envs import make_env


class ConfigError(ValueError):
    """Invalid configuration file, key, or value."""


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """One experiment: algorithm, task, and every tunable in one place."""

    # [run]
    algorithm: str = "tce"
    env: str = "reacher-dense"
    seeds: tuple = (0, 1, 2, 3, 4)
    iterations: int = 100
    episodes_per_iteration: int = 16
    out: str = "runs/latest"
    # [env]
    horizon: int = 100
    dt: float = 0.02
    a_max: float = 10.0
    random_init: bool = False
    # [mp]
    num_basis: int = 5
    noise_std: float = 1e-2
    # [policy]
    policy_hidden: tuple = (64, 64)
    activation: str = "tanh"
    initial_std: float = 1.0
    weight_scale: float = 1.0
    # [value]
    value_hidden: tuple = (64, 64)
    value_lr: float = 3e-3
    value_epochs: int = 50
    # [learner]
    k_segments: int = 25
    gamma: float = 1.0
    lam: float = 0.95
    update_epochs: int = 20
    policy_lr: float = 3e-4
    eps_mean: float = 0.05
    eps_cov: float = 0.02
    reg_weight: float = 10.0
    normalize_advantages: bool = True
    advantage_mode: str = "direct"
    # [ppo]
    clip_eps: float = 0.2
    ppo_gamma: float = 0.99
    ppo_lam: float = 0.95
    ppo_epochs: int = 10
    ppo_lr: float = 3e-4
    minibatches: int = 4
    init_log_std: float = 0.0


_SECTIONS = {
    "run": ("algorithm", "env", "seeds", "iterations",
            "episodes_per_iteration", "out"),
    "env": ("horizon", "dt", "a_max", "random_init"),
    "mp": ("num_basis", "noise_std"),
    "policy": ("policy_hidden", "activation", "initial_std", "weight_scale"),
    "value": ("value_hidden", "value_lr", "value_epochs"),
    "learner": ("k_segments", "gamma", "lam", "update_epochs", "policy_lr",
                "eps_mean", "eps_cov", "reg_weight", "normalize_advantages",
                "advantage_mode"),
    "ppo": ("clip_eps", "ppo_gamma", "ppo_lam", "ppo_epochs", "ppo_lr",
            "minibatches", "init_log_std"),
}

_FIELD_SECTION = {name: sec for sec, names in _SECTIONS.items()
                  for name in names}

_ALGORITHMS = ("tce", "bbrl", "bbrl-cov", "ppo-step")

_INT_TUPLE_FIELDS = ("seeds", "policy_hidden", "value_hidden")


def parse_int_tuple(text: str) -> tuple:
    items = [s.strip() for s in str(text).split(",") if s.strip()]
    return tuple(int(s) for s in items)


def format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _parse_value(name: str, text: str):
    kind = RunConfig.__dataclass_fields__[name].type
    text = text.strip()
    if name in _INT_TUPLE_FIELDS:
        return parse_int_tuple(text)
    if kind == "bool":
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    return text


def _key_line(path: str, section: str, key: str) -> str:
    """Best-effort `path:line` pointer to a key inside its section."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError:
        return str(path)
    current = None
    for i, raw in enumerate(lines, start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
        elif current == section and line.split("=")[0].split(":")[0].strip() == key:
            return f"{path}:{i}"
    return str(path)


def validate_config(cfg: RunConfig) -> RunConfig:
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(cfg.algorithm in _ALGORITHMS,
         f"run.algorithm must be one of {_ALGORITHMS}, got {cfg.algorithm!r}")
    try:
        make_env(cfg.env, horizon=cfg.horizon, dt=cfg.dt, a_max=cfg.a_max,
                 random_init=cfg.random_init)
    except (KeyError, ValueError) as e:
        raise ConfigError(f"run.env/env.*: {e}") from e
    need(len(cfg.seeds) >= 1, "run.seeds must name at least one seed")
    need(cfg.iterations >= 0, "run.iterations must be >= 0")
    need(cfg.episodes_per_iteration >= 1,
         "run.episodes_per_iteration must be >= 1")
    need(cfg.num_basis >= 1, "mp.num_basis must be >= 1")
    need(cfg.noise_std > 0, "mp.noise_std must be positive")
    need(all(h >= 1 for h in cfg.policy_hidden),
         "policy.policy_hidden entries must be >= 1")
    need(cfg.algorithm != "ppo-step" or len(cfg.policy_hidden) >= 1,
         "policy.policy_hidden must be nonempty for ppo-step")
    need(len(cfg.value_hidden) >= 1, "value.value_hidden must be nonempty")
    need(cfg.initial_std > 0, "policy.initial_std must be positive")
    need(cfg.weight_scale > 0, "policy.weight_scale must be positive")
    need(cfg.value_lr > 0, "value.value_lr must be positive")
    need(cfg.value_epochs >= 1, "value.value_epochs must be >= 1")
    need(1 <= cfg.k_segments <= cfg.horizon,
         "learner.k_segments must lie in [1, env.horizon]")
    need(0 < cfg.gamma <= 1, "learner.gamma must lie in (0, 1]")
    need(0 <= cfg.lam <= 1, "learner.lam must lie in [0, 1]")
    need(cfg.update_epochs >= 1, "learner.update_epochs must be >= 1")
    need(cfg.policy_lr > 0, "learner.policy_lr must be positive")
    need(cfg.eps_mean > 0, "learner.eps_mean must be positive")
    need(cfg.eps_cov > 0, "learner.eps_cov must be positive")
    need(cfg.reg_weight >= 0, "learner.reg_weight must be >= 0")
    need(cfg.advantage_mode in ("direct", "gae"),
         "learner.advantage_mode must be 'direct' or 'gae'")
    need(cfg.clip_eps > 0, "ppo.clip_eps must be positive")
    need(0 < cfg.ppo_gamma <= 1, "ppo.ppo_gamma must lie in (0, 1]")
    need(0 <= cfg.ppo_lam <= 1, "ppo.ppo_lam must lie in [0, 1]")
    need(cfg.ppo_epochs >= 1, "ppo.ppo_epochs must be >= 1")
    need(cfg.ppo_lr > 0, "ppo.ppo_lr must be positive")
    need(cfg.minibatches >= 1, "ppo.minibatches must be >= 1")
    return cfg


def load_config(path: str) -> RunConfig:
    """Parse an INI file into a validated RunConfig."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh, source=str(path))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except configparser.Error as e:
        raise ConfigError(str(e)) from e
    values = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, text in parser.items(section):
            if key not in _SECTIONS[section]:
                raise ConfigError(
                    f"{_key_line(path, section, key)}: "
                    f"unknown key {section}.{key}")
            try:
                values[key] = _parse_value(key, text)
            except ValueError as e:
                raise ConfigError(
                    f"{_key_line(path, section, key)}: "
                    f"bad value for {section}.{key}: {e}") from e
    return validate_config(RunConfig(**values))


def apply_overrides(cfg: RunConfig, pairs) -> RunConfig:
    """Apply `section.key=value` strings on top of a config."""
    values = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set needs section.key=value, got {pair!r}")
        dotted, text = pair.split("=", 1)
        dotted = dotted.strip()
        if "." not in dotted:
            raise ConfigError(f"--set key must be dotted, got {dotted!r}")
        section, key = dotted.split(".", 1)
        if section not in _SECTIONS or key not in _SECTIONS[section]:
            raise ConfigError(f"unknown option {dotted}")
        try:
            values[key] = _parse_value(key, text)
        except ValueError as e:
            raise ConfigError(f"bad value for {dotted}: {e}") from e
    return validate_config(dataclasses.replace(cfg, **values))


def config_to_ini(cfg: RunConfig) -> str:
    """Render the full config; load_config round-trips it exactly."""
    buf = io.StringIO()
    for section, names in _SECTIONS.items():
        buf.write(f"[{section}]\n")
        for name in names:
            buf.write(f"{name} = {format_value(getattr(cfg, name))}\n")
        buf.write("\n")
    return buf.getvalue()
