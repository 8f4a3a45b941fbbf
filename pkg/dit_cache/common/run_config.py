"""
Run configuration: one INI file with a section per component.

    [model]     DiTConfig fields (seed comes from [run])
    [sampler]   SamplerConfig fields
    [train]     TrainConfig fields (seed comes from [run])
    [pretrain]  PretrainOptions fields
    [eval]      EvalOptions fields
    [run]       out_dir, seed, t_train, progress

Keys missing from a file keep their defaults; unknown sections or keys are
errors. to_ini() writes every key, so the text written into a run directory
loads back to the same RunConfig.
"""

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

from dit_cache.debug_system import get_debug_logger, LogCategory
from dit_cache.tools.DiT_Model.Core import DiTConfig
from dit_cache.tools.Router_Trainer.Core import TrainConfig
from dit_cache.tools.Router_Trainer.Pretrain import PretrainOptions
from dit_cache.tools.Sampler.Core import DEFAULT_T_TRAIN, SamplerConfig
from .errors import ConfigError

# Module-level debug logger
debug_logger = get_debug_logger()

HEURISTIC_NAMES = ("fora_uniform", "alternating", "random")


@dataclass
class EvalOptions:
    n_seeds: int = 5
    batch: int = 1
    heuristics: str = "fora_uniform"
    fora_k: int = 2
    random_target: float = 0.5
    random_routers: int = 0   # random schedules per --router, matched to its cached-cell count
    random_spread: int = 2

    def heuristic_list(self) -> List[str]:
        return [h.strip() for h in self.heuristics.split(",") if h.strip() and h.strip() != "none"]

    def violations(self) -> List[str]:
        problems = []
        if self.n_seeds < 1:
            problems.append(f"eval.n_seeds must be ≥ 1 (got {self.n_seeds})")
        if self.batch < 1:
            problems.append(f"eval.batch must be ≥ 1 (got {self.batch})")
        for name in self.heuristic_list():
            if name not in HEURISTIC_NAMES:
                problems.append(f"eval.heuristics: unknown schedule {name!r}")
        if self.fora_k < 1:
            problems.append(f"eval.fora_k must be ≥ 1 (got {self.fora_k})")
        if not 0.0 <= self.random_target < 1.0:
            problems.append(f"eval.random_target must lie in [0, 1) (got {self.random_target})")
        if self.random_routers < 0:
            problems.append(f"eval.random_routers must be ≥ 0 (got {self.random_routers})")
        if self.random_spread < 0:
            problems.append(f"eval.random_spread must be ≥ 0 (got {self.random_spread})")
        return problems


@dataclass
class RunOptions:
    out_dir: str = "runs/latest"
    seed: int = 0
    t_train: int = DEFAULT_T_TRAIN
    progress: bool = True

    def violations(self) -> List[str]:
        problems = []
        if self.seed < 0:
            problems.append(f"run.seed must be a non-negative integer (got {self.seed})")
        if self.t_train < 1:
            problems.append(f"run.t_train must be ≥ 1 (got {self.t_train})")
        return problems


# Fields driven by [run] seed rather than their own section
_DERIVED = {("model", "seed"), ("train", "seed")}


#######################################################
@dataclass
class RunConfig:
    model: DiTConfig = field(default_factory=DiTConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(lr=0.05))
    pretrain: PretrainOptions = field(default_factory=PretrainOptions)
    eval: EvalOptions = field(default_factory=EvalOptions)
    run: RunOptions = field(default_factory=RunOptions)

    SECTIONS = ("model", "sampler", "train", "pretrain", "eval", "run")

    def __post_init__(self):
        self.sync_seeds()

    def sync_seeds(self):
        self.model.seed = self.run.seed
        self.train.seed = self.run.seed

    def violations(self) -> List[str]:
        problems = []
        problems += self.model.violations()
        problems += self.sampler.violations()
        problems += self.train.violations(self.sampler.T)
        problems += self.pretrain.violations()
        problems += self.eval.violations()
        problems += self.run.violations()
        if self.sampler.T > self.run.t_train:
            problems.append(f"sampler.T ({self.sampler.T}) must not exceed run.t_train ({self.run.t_train})")
        return problems

    def validate(self) -> "RunConfig":
        """Raise one ConfigError naming every violated constraint"""
        problems = self.violations()
        if problems:
            raise ConfigError(problems)
        return self

    #######################################################
    # INI text

    def to_ini(self) -> str:
        lines = []
        for section in self.SECTIONS:
            lines.append(f"[{section}]")
            part = getattr(self, section)
            for f in fields(part):
                if (section, f.name) in _DERIVED:
                    continue
                lines.append(f"{f.name} = {_format_value(getattr(part, f.name))}")
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_ini(cls, text: str, overrides: Optional[Mapping[str, Any]] = None,
                 source: str = "<config>") -> "RunConfig":
        """
        Parse INI text, then apply `section.key` overrides.

        Raises:
            ConfigError: unknown sections/keys or unparseable values, all listed
        """
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text, source=source)
        except configparser.Error as e:
            raise ConfigError([f"{source}: {e}"])

        values: Dict[Tuple[str, str], Any] = {}
        for section in parser.sections():
            for key, raw in parser.items(section):
                values[(section, key)] = raw
        for dotted, raw in (overrides or {}).items():
            if raw is None:
                continue
            section, _, key = dotted.partition(".")
            values[(section, key)] = raw

        config = cls()
        problems = []
        for (section, key), raw in values.items():
            if section not in cls.SECTIONS:
                problems.append(f"unknown section [{section}]")
                continue
            part = getattr(config, section)
            names = {f.name for f in fields(part)}
            if key not in names or (section, key) in _DERIVED:
                problems.append(f"unknown key {section}.{key}")
                continue
            try:
                setattr(part, key, _parse_value(raw, getattr(part, key)))
            except ValueError as e:
                problems.append(f"{section}.{key}: {e}")
        if problems:
            raise ConfigError(problems)
        config.sync_seeds()
        return config

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> "RunConfig":
        """Read a config file (defaults when path is None) and validate it"""
        text = ""
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError([f"config file not found: {p}"])
            text = p.read_text(encoding="utf-8")
            debug_logger.log_file_operation("load config", str(p))
        config = cls.from_ini(text, overrides, str(path or "<defaults>"))
        return config.validate()


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    return str(value)


def _parse_value(raw: Any, default: Any) -> Any:
    """Convert raw to the type of the field's current value"""
    if not isinstance(raw, str):
        if isinstance(default, float) and isinstance(raw, int) and not isinstance(raw, bool):
            return float(raw)
        return raw
    text = raw.strip()
    if isinstance(default, bool):
        states = configparser.ConfigParser.BOOLEAN_STATES
        if text.lower() not in states:
            raise ValueError(f"expected a boolean, got {raw!r}")
        return states[text.lower()]
    if isinstance(default, int):
        try:
            return int(text)
        except ValueError:
            raise ValueError(f"expected an integer, got {raw!r}")
    if isinstance(default, float):
        try:
            return float(text)
        except ValueError:
            raise ValueError(f"expected a number, got {raw!r}")
    if isinstance(default, tuple):
        try:
            return tuple(float(v) for v in text.split(","))
        except ValueError:
            raise ValueError(f"expected comma-separated numbers, got {raw!r}")
    return text
