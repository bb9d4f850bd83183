"""Experiment specs: flat key-value files with [experiment], [train] and [env] sections."""
import configparser
import io
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from lcmopg.envs import ENV_IDS
from lcmopg.errors import ContractViolation
from lcmopg.lqg_oracle import LQG_HV_SCALES
from lcmopg.trainer import TrainConfig

SECTIONS = ("train", "experiment", "env")
_TUPLE_FIELDS = {"ref", "state_embedding"}

DEFAULT_REFS: dict[str, tuple[float, ...]] = {
    "dst-convex": (0.0, -19.0),
    "dst-original": (0.0, -200.0),
    "ftn5": (0.0,) * 6,
    "ftn6": (0.0,) * 6,
    "ftn7": (0.0,) * 6,
    "lqg2d": LQG_HV_SCALES[2][0],
    "lqg2d-noisy": LQG_HV_SCALES[2][0],
    "lqg3d": LQG_HV_SCALES[3][0],
    "minecart": (0.0, 0.0, -200.0),
}

DEFAULT_HV_DIVISORS: dict[str, float] = {
    "lqg2d": LQG_HV_SCALES[2][1],
    "lqg2d-noisy": LQG_HV_SCALES[2][1],
    "lqg3d": LQG_HV_SCALES[3][1],
}


def _split_tuple(value):
    if isinstance(value, str):
        value = value.strip()
        if value.lower() in ("", "none"):
            return None
        return tuple(v.strip() for v in value.split(","))
    return value


def _coerce_scalar(text: str) -> Any:
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


class ExperimentSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    env_id: str
    ref: tuple[float, ...]
    hv_divisor: float = Field(default=1.0, gt=0.0)
    runs: int = Field(default=5, ge=1)
    output_dir: Path | None = None
    train: TrainConfig = Field(default_factory=TrainConfig)
    env: dict[str, Any] = Field(default_factory=dict)

    @field_validator("ref", mode="before")
    @classmethod
    def _ref_tuple(cls, v):
        return _split_tuple(v)

    @model_validator(mode="after")
    def _check(self) -> "ExperimentSpec":
        if self.env_id not in ENV_IDS:
            raise ValueError(f"unknown env {self.env_id!r}; expected one of {', '.join(ENV_IDS)}")
        expected = len(DEFAULT_REFS[self.env_id])
        if len(self.ref) != expected:
            raise ValueError(f"ref for {self.env_id} needs {expected} coordinates, got {len(self.ref)}")
        return self


def _train_from_raw(raw: dict[str, Any]) -> TrainConfig:
    values = {k: _split_tuple(v) if k in _TUPLE_FIELDS else v for k, v in raw.items()}
    return TrainConfig(**values)


def spec_from_sections(sections: dict[str, dict[str, Any]]) -> ExperimentSpec:
    experiment = dict(sections.get("experiment", {}))
    if "env" in experiment:
        env_name = experiment.pop("env")
        experiment.setdefault("env_id", env_name)
    env_id = experiment.get("env_id")
    if env_id in DEFAULT_REFS:
        experiment.setdefault("ref", DEFAULT_REFS[env_id])
        experiment.setdefault("hv_divisor", DEFAULT_HV_DIVISORS.get(env_id, 1.0))
    env = {k: _coerce_scalar(v) if isinstance(v, str) else v for k, v in sections.get("env", {}).items()}
    return ExperimentSpec(**experiment, train=_train_from_raw(sections.get("train", {})), env=env)


def _sections_from_text(text: str) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    # keys are case-sensitive: K and k are different fields
    parser.optionxform = str
    parser.read_string(text)
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ContractViolation(f"Unknown spec section(s): {sorted(unknown)}")
    return {s: dict(parser[s]) for s in parser.sections()}


def parse_spec(text: str) -> ExperimentSpec:
    return spec_from_sections(_sections_from_text(text))


def load_spec(path: Path) -> ExperimentSpec:
    return parse_spec(Path(path).read_text(encoding="utf-8"))


def spec_to_sections(spec: ExperimentSpec) -> dict[str, dict[str, Any]]:
    experiment: dict[str, Any] = {"env": spec.env_id, "ref": spec.ref, "hv_divisor": spec.hv_divisor, "runs": spec.runs}
    if spec.output_dir is not None:
        experiment["output_dir"] = spec.output_dir
    train = {k: v for k, v in spec.train.model_dump().items() if v is not None}
    return {"experiment": experiment, "train": train, "env": dict(spec.env)}


def _format_value(value: Any) -> str:
    if isinstance(value, (tuple, list)):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def serialize_spec(spec: ExperimentSpec) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, values in spec_to_sections(spec).items():
        parser[section] = {k: _format_value(v) for k, v in values.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def apply_overrides(sections: dict[str, dict[str, Any]], overrides: list[str]) -> dict[str, dict[str, Any]]:
    """Apply ``section.key=value`` or bare ``key=value`` overrides.

    A bare key goes to the first section among train, experiment, env whose
    schema knows it; unknown bare keys land in [env].
    """
    out = {s: dict(sections.get(s, {})) for s in SECTIONS}
    known = {
        "train": set(TrainConfig.model_fields),
        "experiment": set(ExperimentSpec.model_fields) | {"env"},
    }
    for item in overrides:
        if "=" not in item:
            raise ContractViolation(f"Override {item!r} is not key=value")
        key, value = (part.strip() for part in item.split("=", 1))
        section, _, name = key.rpartition(".")
        if section:
            if section not in SECTIONS:
                raise ContractViolation(f"Unknown override section {section!r}")
        else:
            section = next((s for s in ("train", "experiment") if name in known[s]), "env")
        out[section][name] = value
    return out
