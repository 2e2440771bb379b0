"""Scenario configuration schema and YAML loading.

All sensor constants default to the TurtleBot3 simulation values; shipped
scenarios only override what differs. Validation failures surface as
:class:`~coopnav.errors.ConfigError` with dotted field paths.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..errors import ConfigError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ImuModel(_Strict):
    rate: float = Field(50.0, gt=0)
    accel_sigma: float = Field(0.001, ge=0)
    gyro_sigma: float = Field(0.001, ge=0)
    accel_bias_sigma: float = Field(0.005, ge=0, description="spread of the per-run constant accel bias")
    gyro_bias_sigma: float = Field(5e-4, ge=0, description="spread of the per-run constant gyro bias")
    accel_bias_instab: float = Field(1e-5, ge=0, description="accel bias random-walk density")
    gyro_bias_instab: float = Field(1e-6, ge=0, description="gyro bias random-walk density")
    bias_random_walk: bool = False


class EncoderModel(_Strict):
    rate: float = Field(30.0, gt=0)
    sigma: float = Field(0.01, ge=0)


class GnssModel(_Strict):
    rate: float = Field(1.0, gt=0)
    pos_sigma: float = Field(0.1, ge=0)
    vel_sigma: float = Field(0.02, ge=0)


class UwbModel(_Strict):
    rate: float = Field(1.0, gt=0)
    sigma: float = Field(0.05, ge=0)


class SensorModel(_Strict):
    imu: ImuModel = ImuModel()
    encoder: EncoderModel = EncoderModel()
    gnss: GnssModel = GnssModel()
    uwb: UwbModel = UwbModel()


class FilterSettings(_Strict):
    factor_noise_term: bool = True
    absent_factor_order: Literal["prior_over_posterior", "posterior_over_prior"] = "prior_over_posterior"
    zu_gyro_sigma: float = Field(1e-3, gt=0)
    zu_vel_sigma: float = Field(1e-3, gt=0)
    odom_vertical_sigma: float = Field(1.0e3, gt=0)
    eps_enc: float = Field(1e-3, gt=0)
    min_range_sigma: float = Field(1e-3, gt=0, description="floor on the range sigma the filter assumes")


class Segment(_Strict):
    duration: float = Field(gt=0)
    speed: float


class Trajectory(_Strict):
    heading_deg: float = 0.0
    segments: list[Segment] = []
    start_after_contact: Optional[float] = Field(
        None, ge=0, description="stay still until the first relative update, then wait this long"
    )


class StopPolicyConfig(_Strict):
    mode: Literal["None", "Autonomous", "Periodic", "AutoThenPeriodic"] = "None"
    cov_threshold: float = Field(5.0, gt=0)
    period: float = Field(20.0, gt=0)
    dwell: float = Field(0.5, gt=0)


class InitialBelief(_Strict):
    position_error: float = Field(0.0, ge=0, description="horizontal offset of the initial estimate (m)")
    position_sigma: Optional[list[float]] = None
    velocity_sigma: float = Field(0.01, gt=0)
    attitude_sigma: float = Field(1e-3, gt=0)
    sample_errors: bool = Field(False, description="draw velocity and attitude errors from P0")

    @field_validator("position_sigma")
    @classmethod
    def _three(cls, v):
        if v is not None and (len(v) != 3 or any(s <= 0 for s in v)):
            raise ValueError("position_sigma needs three positive entries")
        return v


class RobotConfig(_Strict):
    id: int = Field(ge=0)
    start: list[float] = [0.0, 0.0, 0.0]
    trajectory: Trajectory = Trajectory()
    stop_policy: StopPolicyConfig = StopPolicyConfig()
    initial: InitialBelief = InitialBelief()
    zu_enabled: bool = False
    odom_enabled: bool = True
    gnss_enabled: bool = False
    true_accel_bias: Optional[list[float]] = None
    true_gyro_bias: Optional[list[float]] = None

    @field_validator("start", "true_accel_bias", "true_gyro_bias")
    @classmethod
    def _vec3(cls, v):
        if v is not None and len(v) != 3:
            raise ValueError("expected a 3-vector")
        return v


class ScenarioConfig(_Strict):
    name: str = "scenario"
    duration: float = Field(gt=0)
    seed: int = Field(0, ge=0)
    gate_distance: float = Field(gt=0)
    sensor: SensorModel = SensorModel()
    filter: FilterSettings = FilterSettings()
    comm_pairs: list[tuple[int, int]] = Field(default_factory=list, description="(detector, detected) pairs")
    robots: list[RobotConfig]
    trace_rate: float = Field(10.0, gt=0)

    @model_validator(mode="after")
    def _cross_checks(self):
        ids = [r.id for r in self.robots]
        if not ids:
            raise ValueError("at least one robot is required")
        if len(set(ids)) != len(ids):
            raise ValueError(f"robot ids must be unique, got {ids}")
        for a, b in self.comm_pairs:
            if a == b or a not in ids or b not in ids:
                raise ValueError(f"comm pair ({a}, {b}) must name two distinct robots")
        return self

    def robot(self, rid: int) -> RobotConfig:
        for r in self.robots:
            if r.id == rid:
                return r
        raise KeyError(rid)

    def with_zu(self, enabled: bool, robots=None) -> ScenarioConfig:
        """Copy with ZU toggled on the given robots (default: those that enable it)."""
        targets = set(robots) if robots is not None else {r.id for r in self.robots if r.zu_enabled}
        new = [r.model_copy(update={"zu_enabled": enabled}) if r.id in targets else r for r in self.robots]
        return self.model_copy(update={"robots": new})

    def with_seed(self, seed: int) -> ScenarioConfig:
        return self.model_copy(update={"seed": int(seed)})


def _field_errors(exc: ValidationError):
    for e in exc.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        yield path, e["msg"]


def parse_config(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError([("<root>", "scenario must be a mapping")])
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(list(_field_errors(exc))) from None


def builtin_scenarios() -> list[str]:
    root = resources.files("coopnav.sim") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_config(source: str | Path) -> ScenarioConfig:
    """Load a scenario by built-in name (``cave``, ``indoor``) or YAML path."""
    path = Path(source)
    if path.suffix in (".yaml", ".yml") or path.exists():
        text = path.read_text()
    elif str(source) in builtin_scenarios():
        text = (resources.files("coopnav.sim") / "scenarios" / f"{source}.yaml").read_text()
    else:
        raise ConfigError([("<source>", f"no scenario file or built-in named {source!r}")])
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([("<yaml>", str(exc))]) from None
    return parse_config(data)
