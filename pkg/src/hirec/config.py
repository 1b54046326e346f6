"""Experiment configuration: a TOML file with sections, validated with line numbers."""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .agents import EnvConfig
from .seir import EpidemicParams

CONTROLLERS = ("hirec", "random", "always_remove", "always_explore", "coin",
               "degree", "netshield", "netshield_plus", "eigendrop")
REMOVERS = ("theorem1", "degree", "netshield", "netshield_plus", "eigendrop", "random")


class ConfigError(ValueError):
    pass


@dataclass
class TrainingConfig:
    explore_episodes: int = 100
    policy_episodes: int = 600
    seed: int = 0
    rho: float = 2.0
    lr: float = 1e-3
    discount: float = 0.99
    n_step: int = 3
    sync_every: int = 200
    batch_size: int = 32
    capacity: int = 50_000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.6
    explore_prob: float = 0.5
    learn_every: int = 1


@dataclass
class ExperimentConfig:
    n: int = 100
    avg_degree: float = 4.0
    beta: float = 0.012
    gamma: float = 0.02
    t0: int = 5
    horizon: int = 50
    n_seeds: int = 2
    m1: int = 4
    m2: int = 1
    controller: str = "hirec"
    remover: str = "theorem1"
    setup: int = 1
    p_reveal: float | None = None
    replications: int = 200
    master_seed: int = 2024
    out_dir: str = "runs"
    explore_checkpoint: str = "checkpoints/explore"
    policy_checkpoint: str = "checkpoints/policy"
    m_pairs: list = field(default_factory=lambda: [[4, 1], [6, 1], [10, 2], [15, 2]])
    variants: list = field(default_factory=lambda: ["theorem1", "degree", "netshield", "netshield_plus", "eigendrop"])
    m1_values: list = field(default_factory=lambda: [4, 10, 15])
    p_values: list = field(default_factory=lambda: [0.6, 0.8, 1.0])
    baselines: list = field(default_factory=lambda: ["degree", "netshield", "netshield_plus", "eigendrop"])
    training: TrainingConfig = field(default_factory=TrainingConfig)

    @property
    def params(self) -> EpidemicParams:
        return EpidemicParams(self.beta, self.gamma, self.t0, self.horizon, self.n_seeds)

    def env_config(self, m1=None, m2=None) -> EnvConfig:
        return EnvConfig(self.n, self.avg_degree, self.beta, self.gamma, self.t0, self.horizon,
                         self.n_seeds, m1 or self.m1, m2 or self.m2)

    def validate(self) -> None:
        try:
            self.params
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"controller must be one of {CONTROLLERS}, got {self.controller!r}")
        if self.remover not in REMOVERS:
            raise ConfigError(f"remover must be one of {REMOVERS}, got {self.remover!r}")
        if self.setup not in (1, 2):
            raise ConfigError(f"setup must be 1 or 2, got {self.setup}")
        if self.setup == 2 and self.p_reveal is None:
            raise ConfigError("setup 2 requires p_reveal")
        if self.p_reveal is not None and not 0 <= self.p_reveal <= 1:
            raise ConfigError(f"p_reveal must lie in [0, 1], got {self.p_reveal}")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.m1 < 1 or self.m2 < 1:
            raise ConfigError("m1 and m2 must be >= 1")
        for v in self.variants:
            if v not in REMOVERS:
                raise ConfigError(f"unknown removal variant {v!r}")

    def to_dict(self) -> dict:
        return asdict(self)


# section -> keys accepted there
SECTIONS = {
    "graph": {"n", "avg_degree"},
    "epidemic": {"beta", "gamma", "t0", "horizon", "n_seeds"},
    "control": {"m1", "m2", "controller", "remover"},
    "experiment": {"setup", "p_reveal", "replications", "master_seed", "out_dir"},
    "checkpoints": {"explore_checkpoint", "policy_checkpoint"},
    "grid": {"m_pairs", "variants", "m1_values", "p_values", "baselines"},
    "training": set(TrainingConfig.__dataclass_fields__),
}


def _line_of(text: str, section: str, key: str | None) -> int | None:
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return lineno
            continue
        if current == section and key is not None and re.match(rf"\s*{re.escape(key)}\s*=", line):
            return lineno
    return None


def _where(path, text, section, key=None) -> str:
    line = _line_of(text, section, key)
    return f"{path}:{line}" if line else str(path)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text()
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = ExperimentConfig()
    training = TrainingConfig()
    for section, values in raw.items():
        if section not in SECTIONS:
            raise ConfigError(f"{_where(path, text, section)}: unknown section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: [{section}] must be a table")
        for key, value in values.items():
            if key not in SECTIONS[section]:
                raise ConfigError(f"{_where(path, text, section, key)}: unknown key {key!r} in [{section}]")
            target = training if section == "training" else cfg
            default = getattr(target, key)
            if isinstance(default, bool) or (default is not None and not isinstance(default, list)):
                kind = type(default)
                if kind is float and isinstance(value, int):
                    value = float(value)
                if not isinstance(value, kind):
                    raise ConfigError(
                        f"{_where(path, text, section, key)}: {key} must be {kind.__name__}, got {value!r}"
                    )
            setattr(target, key, value)
    cfg.training = training
    try:
        cfg.validate()
    except (ConfigError, ValueError) as exc:
        msg = str(exc)
        key = next((k for s in SECTIONS.values() for k in s if re.search(rf"\b{k}\b", msg)), None)
        sec = next((s for s, ks in SECTIONS.items() if key in ks), None)
        loc = _where(path, text, sec, key) if sec else str(path)
        raise ConfigError(f"{loc}: {msg}") from exc
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    """Render a config back to TOML text (round-trips through :func:`load_config`)."""

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return f'"{v}"'
        if isinstance(v, list):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return repr(v)

    lines = []
    for section, keys in SECTIONS.items():
        target = cfg.training if section == "training" else cfg
        items = [(k, getattr(target, k)) for k in sorted(keys) if getattr(target, k) is not None]
        if not items:
            continue
        lines.append(f"[{section}]")
        lines += [f"{k} = {fmt(v)}" for k, v in items]
        lines.append("")
    return "\n".join(lines)
