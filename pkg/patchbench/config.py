from pathlib import Path
from typing import Any, Literal

from dotenv import dotenv_values
from pydantic import Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from patchbench.errors import ConfigError
from patchbench.services.descriptors import DEFAULT_BRIEF_SEED, FAMILY_NAMES
from patchbench.services.geometry import BENCHMARK_VARIANTS, DEFAULT_RHO, NOISE_PROFILES
from patchbench.services.postproc import DEFAULT_ALPHA, DEFAULT_CLIP_CANDIDATES
from patchbench.services.tasks import TASKS

ENV_PREFIX = "PATCHBENCH_"

# (regions per image, positive pairs, negative pairs, queries, distractors)
SCALE_COUNTS = {
    "desk": (200, 2_000, 10_000, 200, 2_000),
    "paper": (1300, 200_000, 1_000_000, 10_000, 20_000),
}
COUNT_FIELDS = ("max_regions", "n_pos", "n_neg", "n_queries", "n_distractors")

DEFAULT_DESCRIPTORS = ("mstd", "resz", "sift", "rootsift", "brief", "+sift", "+rootsift")
DEFAULT_RHOS = (1.0, 4.0, 12.0, 20.0)


def _split_commas(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class RunConfig(BaseSettings):
    """Everything a synth / eval / rho-sweep run depends on.

    List fields accept comma-separated strings from the environment, config files and flags.
    """

    model_config = SettingsConfigDict(env_prefix=ENV_PREFIX, env_file=".env", extra="ignore")

    seed: int = 7
    scenes: int = Field(16, ge=2)
    illum_fraction: float = Field(0.5, ge=0.0, le=1.0)
    image_size: int = Field(320, ge=64)
    rho: float = Field(DEFAULT_RHO, gt=0.0)
    noise: list[str] | str = list(BENCHMARK_VARIANTS)
    descriptors: list[str] | str = list(DEFAULT_DESCRIPTORS)
    tasks: list[str] | str = [str(t) for t in TASKS]
    scale: Literal["desk", "paper"] = "desk"
    out: Path = Path("out")
    threads: int = Field(1, ge=1)

    max_regions: int | None = Field(None, ge=8)
    n_pos: int | None = Field(None, ge=1)
    n_neg: int | None = Field(None, ge=1)
    n_queries: int | None = Field(None, ge=1)
    n_distractors: int | None = Field(None, ge=1)

    fit_fraction: float = Field(0.25, ge=0.0, lt=1.0)
    zca_alpha: float = Field(DEFAULT_ALPHA, gt=0.0)
    zca_clip_candidates: list[float] | str = list(DEFAULT_CLIP_CANDIDATES)
    brief_seed: int = DEFAULT_BRIEF_SEED
    sweep_noise: str = "easy"
    sweep_descriptor: str = "sift"
    rhos: list[float] | str = list(DEFAULT_RHOS)
    # regenerate the swept viewpoint sequences at this size instead of loading stored images
    sweep_image_size: int | None = Field(None, ge=64)

    @field_validator("noise", "descriptors", "tasks", "zca_clip_candidates", "rhos", mode="before")
    @classmethod
    def _lists(cls, value: Any) -> Any:
        return _split_commas(value)

    @field_validator("noise")
    @classmethod
    def _known_noise(cls, value: list[str]) -> list[str]:
        names = [v.lower() for v in value]
        unknown = [v for v in names if v not in NOISE_PROFILES]
        if unknown or not names:
            raise ValueError(f"unknown noise presets {unknown}; expected {sorted(NOISE_PROFILES)}")
        return names

    @field_validator("descriptors")
    @classmethod
    def _known_descriptors(cls, value: list[str]) -> list[str]:
        names = [v.lower() for v in value]
        known = {*FAMILY_NAMES, "rsift"}
        unknown = [v for v in names if v.lstrip("+") not in known]
        if unknown or not names:
            raise ValueError(f"unknown descriptors {unknown}; expected {FAMILY_NAMES}")
        return names

    @field_validator("tasks")
    @classmethod
    def _known_tasks(cls, value: list[str]) -> list[str]:
        names = [v.lower() for v in value]
        unknown = [v for v in names if v not in {str(t) for t in TASKS}]
        if unknown or not names:
            raise ValueError(f"unknown tasks {unknown}")
        return names

    @field_validator("sweep_noise")
    @classmethod
    def _known_sweep_noise(cls, value: str) -> str:
        if value.lower() not in NOISE_PROFILES:
            raise ValueError(f"unknown noise preset {value!r}")
        return value.lower()

    @field_validator("sweep_descriptor")
    @classmethod
    def _known_sweep_descriptor(cls, value: str) -> str:
        if value.lower() not in {*FAMILY_NAMES, "rsift"}:
            raise ValueError(f"unknown descriptor {value!r}")
        return value.lower()

    @field_validator("zca_clip_candidates")
    @classmethod
    def _clip_range(cls, value: list[float]) -> list[float]:
        if not value or any(not 0.0 < c <= 1.0 for c in value):
            raise ValueError("clip candidates must lie in (0, 1]")
        return value

    @field_validator("rhos")
    @classmethod
    def _positive_rhos(cls, value: list[float]) -> list[float]:
        if not value or any(r <= 0 for r in value):
            raise ValueError("rho values must be positive")
        return value

    @model_validator(mode="after")
    def _scale_counts(self) -> "RunConfig":
        for name, default in zip(COUNT_FIELDS, SCALE_COUNTS[self.scale]):
            if getattr(self, name) is None:
                setattr(self, name, default)
        return self

    @property
    def corpus_dir(self) -> Path:
        return self.out / "corpus"

    @property
    def results_dir(self) -> Path:
        return self.out / "results"

    def echo(self) -> dict[str, Any]:
        """Settings that determine outputs; the output path and thread count do not."""
        return self.model_dump(mode="json", exclude={"out", "threads"})


def read_config_file(path: Path) -> dict[str, str]:
    """Flat key=value file; keys may carry the PATCHBENCH_ prefix and any case."""
    if not Path(path).is_file():
        raise ConfigError(f"config file {path} not found")
    values = {}
    for key, value in dotenv_values(path).items():
        name = key.lower().removeprefix(ENV_PREFIX.lower())
        if name not in RunConfig.model_fields:
            raise ConfigError(f"{path}: unknown setting {key!r}")
        if value is not None:
            values[name] = value
    return values


def load_run_config(config_file: Path | None = None, **overrides: Any) -> RunConfig:
    """Defaults < environment < config file < keyword overrides (command-line flags)."""
    values = read_config_file(config_file) if config_file is not None else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


class Settings(BaseSettings):
    """Where the results API reads from."""

    model_config = SettingsConfigDict(env_file=".env", extra="ignore")

    RESULTS_DIR: Path = Path("out/results")
    CORPUS_DIR: Path = Path("out/corpus")


settings = Settings()
