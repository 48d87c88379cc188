"""Configuration schema and loading."""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, Field
from pydantic_settings import BaseSettings, SettingsConfigDict

from rigidlab.fields import FamilySpec
from rigidlab.types import SUPPORTED_DIMENSIONS, critical_exponent

EXPERIMENTS = ("verify-homotopy", "rigidity-weak", "rigidity-lp", "cz-demo", "bv-check")


class DomainConfig(BaseModel):
    n: int = 3
    res: int = 17
    radius: float = 1.0
    res_list: list[int] = Field(default_factory=lambda: [9, 17, 33])  # refinement sweep


class KernelConfig(BaseModel):
    """Quadrature of the averaged homotopy operator."""
    m_s: int = 16
    variant: Literal["exact", "literal"] = "exact"
    singular: Literal["subtract", "equivalent_ball", "skip"] = "subtract"


class ExperimentConfig(BaseModel):
    name: str = "rigidity-weak"
    domain: DomainConfig = Field(default_factory=DomainConfig)
    family: FamilySpec = Field(default_factory=FamilySpec)
    kernel: KernelConfig = Field(default_factory=KernelConfig)
    p_list: list[float] = Field(default_factory=list)  # empty = [1*, 2]
    m_bound: float = 10.0
    use_log_factor: bool = True
    lam: float = 2.0
    rho_list: list[float] = Field(default_factory=lambda: [1.0, 0.5, 0.25])
    objective: Literal["weak", "l2"] = "weak"
    strengths: list[float] = Field(default_factory=lambda: [0.05, 0.1, 0.2, 0.4])
    sweep_parameter: Literal["strength", "scale"] = "scale"
    sweep_values: list[float] = Field(default_factory=list)  # empty = strengths, or [0.25, 0.4, 0.6, 1.0] for scale
    rotation_source: Literal["direct", "potential"] = "direct"
    forms: int = 3
    output_dir: str = "out"
    seed: int = 0
    threads: int = 1
    chunk: int = 64

    def exponents(self) -> list[float]:
        if self.p_list:
            return list(self.p_list)
        return [critical_exponent(self.domain.n), 2.0]


class LogConfig(BaseModel):
    level: str = "INFO"
    format: str = ""          # empty = rigidlab.log.DEFAULT_FORMAT
    json_format: bool = False
    file: str = ""           # empty = no file output
    rotation: str = "10 MB"  # loguru rotation param
    retention: str = "7 days"


class EventLogConfig(BaseModel):
    """Structured event log settings."""
    enabled: bool = True
    file: str = ""            # empty = <output_dir>/events.jsonl


class RigidLabConfig(BaseSettings):
    experiment: ExperimentConfig = Field(default_factory=ExperimentConfig)
    log: LogConfig = Field(default_factory=LogConfig)
    event_log: EventLogConfig = Field(default_factory=EventLogConfig)

    model_config = SettingsConfigDict(
        env_prefix="RIGIDLAB_",
        env_nested_delimiter="__",
    )

    @classmethod
    def settings_customise_sources(cls, settings_cls, init_settings, env_settings, dotenv_settings, file_secret_settings):
        # env > dotenv > file (init) > defaults -- environment variables always win
        return (env_settings, dotenv_settings, init_settings, file_secret_settings)


def _camel_to_snake(name: str) -> str:
    s = re.sub(r"([A-Z]+)([A-Z][a-z])", r"\1_\2", name)
    s = re.sub(r"([a-z0-9])([A-Z])", r"\1_\2", s)
    return s.lower()


def _convert_keys(data: Any) -> Any:
    if isinstance(data, dict):
        return {_camel_to_snake(k): _convert_keys(v) for k, v in data.items()}
    if isinstance(data, list):
        return [_convert_keys(i) for i in data]
    return data


def load_config(config_path: str | None = None) -> RigidLabConfig:
    """Load config from JSON file + environment variables."""
    file_data: dict[str, Any] = {}
    if config_path:
        path = Path(config_path).expanduser()
        if not path.exists():
            raise ValueError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ValueError(f"unreadable config {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ValueError(f"config {path} must hold a JSON object")
        file_data = _convert_keys(raw)

    # Pass file data as kwargs so BaseSettings still applies env var overrides
    return RigidLabConfig(**file_data)


def _odd_res(res: int) -> bool:
    return res >= 3 and res % 2 == 1


def validate_config(config: RigidLabConfig) -> None:
    """Check every parameter against the operation preconditions. Raises ValueError with all errors.

    Kept apart from the pydantic models: tests build partial configs freely, the
    cross-field rules only matter before a run.
    """
    errors: list[str] = []
    exp = config.experiment
    dom = exp.domain

    if exp.name not in EXPERIMENTS:
        errors.append(f"experiment.name '{exp.name}' unknown, must be one of {EXPERIMENTS}")
    if dom.n not in SUPPORTED_DIMENSIONS:
        errors.append(f"experiment.domain.n must be one of {SUPPORTED_DIMENSIONS}, got {dom.n}")
    if not _odd_res(dom.res):
        errors.append(f"experiment.domain.res must be an odd integer >= 3, got {dom.res}")
    if not dom.radius > 0:
        errors.append(f"experiment.domain.radius must be > 0, got {dom.radius}")
    if exp.threads < 1:
        errors.append(f"experiment.threads must be >= 1, got {exp.threads}")
    if exp.chunk < 1:
        errors.append(f"experiment.chunk must be >= 1, got {exp.chunk}")
    if exp.kernel.m_s < 4:
        errors.append(f"experiment.kernel.m_s must be >= 4, got {exp.kernel.m_s}")

    h = 2 * dom.radius / (dom.res - 1) if dom.res > 1 else float("inf")
    q = critical_exponent(dom.n) if dom.n > 1 else 1.0

    if exp.name == "verify-homotopy":
        bad = [r for r in dom.res_list if not _odd_res(r)]
        if bad:
            errors.append(f"experiment.domain.res_list entries must be odd integers >= 3, got {bad}")
        if len(dom.res_list) < 2 or sorted(set(dom.res_list)) != dom.res_list:
            errors.append("experiment.domain.res_list must be strictly increasing with >= 2 entries")
        if exp.forms < 1:
            errors.append(f"experiment.forms must be >= 1, got {exp.forms}")

    if exp.name == "rigidity-lp":
        if dom.n < 3:
            errors.append("experiment.domain.n must be >= 3 for rigidity-lp")
        for p in exp.exponents():
            if not q - 1e-12 <= p <= 2 + 1e-12:
                errors.append(f"experiment.p_list entry {p} outside [{q:.6g}, 2]")
        if not exp.m_bound > 0:
            errors.append(f"experiment.m_bound must be > 0, got {exp.m_bound}")

    if exp.name in ("rigidity-weak", "rigidity-lp"):
        s = exp.strengths
        if len(s) < 4:
            errors.append(f"experiment.strengths needs >= 4 values, got {len(s)}")
        if any(v <= 0 for v in s):
            errors.append("experiment.strengths must be positive")
        if len(set(s)) > 1 and not (all(b > a for a, b in zip(s, s[1:])) or all(b < a for a, b in zip(s, s[1:]))):
            errors.append("experiment.strengths must be strictly monotone")
        sv = exp.sweep_values
        if sv and (len(sv) < 4 or any(v <= 0 for v in sv)):
            errors.append(f"experiment.sweep_values needs >= 4 positive values, got {sv}")

    if exp.name == "cz-demo" and not exp.lam > 1:
        errors.append(f"experiment.lam must be > 1, got {exp.lam}")

    if exp.name == "bv-check":
        rho = exp.rho_list
        if len(rho) < 3:
            errors.append(f"experiment.rho_list needs >= 3 values, got {len(rho)}")
        if any(b >= a for a, b in zip(rho, rho[1:])):
            errors.append("experiment.rho_list must be strictly decreasing")
        small = [r for r in rho if r < 2 * h * (1 - 1e-12)]
        if small:
            errors.append(f"experiment.rho_list entries {small} below 2h = {2 * h:.6g}")

    fam = exp.family
    if fam.kind == "screw_dislocation":
        if dom.n != 3:
            errors.append("experiment.family.kind screw_dislocation needs experiment.domain.n = 3")
        if fam.core_radius * fam.scale < 2 * h:
            errors.append(f"experiment.family.core_radius {fam.core_radius} below 2h = {2 * h:.6g}")
    if fam.kind == "rotation_jump" and fam.width * fam.scale < 2 * h:
        errors.append(f"experiment.family.width {fam.width} below 2h = {2 * h:.6g}")

    valid_levels = {"TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"}
    if config.log.level.upper() not in valid_levels:
        errors.append(f"log.level '{config.log.level}' invalid, must be one of {valid_levels}")

    if errors:
        raise ValueError("rigidlab configuration errors:\n" + "\n".join(f"  - {e}" for e in errors))
