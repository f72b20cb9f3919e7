from typing import Annotated, List, Literal, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Same tolerance as app.services.measure_core.EXACT_TOL; kept local so the
# schema layer does not import the numerical library.
ROW_TOL = 1e-12

Preset = Literal["S-ONE", "S-SUB", "S-SUP", "S-MIX", "GAUSS"]
RegimeTag = Literal["unit-potential", "subcritical", "supercritical", "gaussian"]
SchemeKind = Literal["full", "shifted", "accept-reject"]
OutputFormat = Literal["csv", "json"]
CheckId = Literal[
    "flow_consistency",
    "bound_dominance",
    "longtime",
    "unbiasedness",
    "lr_rate",
    "variance_bound",
    "clt",
    "sim_consistency",
    "birth_approx",
]

Region = Tuple[Tuple[float, float], Tuple[float, float]]


def _strictly_increasing(values: List[int] | None, what: str) -> None:
    if values is not None and any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError(f"{what} must be strictly increasing")


class PresetScenario(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["preset"] = "preset"
    name: Preset


class FiniteScenarioConfig(BaseModel):
    """A homogeneous finite model; the potential is survival * mean spawn count."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["finite"] = "finite"
    name: str = "custom"
    labels: List[str] | None = None
    kernel: List[List[float]]
    survival: List[float]
    # P(h = k + 1), one law for every state or one row per state
    spawn: List[float] | List[List[float]] = [1.0]
    immigration: List[float]
    initial: List[float] | None = None
    # reference measure lambda for the birth-measure approximation
    reference: List[float] | None = None
    regime: RegimeTag | None = None

    @model_validator(mode="after")
    def check_shapes(self):
        kernel = np.asarray(self.kernel, dtype=float)
        if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1] or kernel.shape[0] < 1:
            raise ValueError("kernel must be a square matrix")
        d = kernel.shape[0]
        if np.any(kernel < 0) or np.max(np.abs(kernel.sum(axis=1) - 1.0)) > ROW_TOL:
            raise ValueError("kernel rows must be nonnegative and sum to 1")
        for what, vec in (("survival", self.survival), ("immigration", self.immigration),
                          ("initial", self.initial), ("reference", self.reference)):
            if vec is not None and len(vec) != d:
                raise ValueError(f"{what} needs {d} entries")
        if self.labels is not None and len(self.labels) != d:
            raise ValueError(f"labels needs {d} entries")
        survival = np.asarray(self.survival, dtype=float)
        if np.any(survival <= 0) or np.any(survival > 1):
            raise ValueError("survival probabilities must lie in (0, 1] so the potential stays positive")
        if any(x < 0 for x in self.immigration) or any(x < 0 for x in self.initial or ()):
            raise ValueError("immigration weights must be nonnegative")
        spawn = np.asarray(self.spawn, dtype=float)
        if spawn.ndim == 2 and spawn.shape[0] != d:
            raise ValueError(f"a per-state spawn table needs {d} rows")
        if np.any(spawn < 0) or np.any(np.abs(spawn.sum(axis=-1) - 1.0) > ROW_TOL):
            raise ValueError("spawn probabilities must be nonnegative and sum to 1")
        return self


class GaussianScenarioConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["gaussian"] = "gaussian"
    name: str = "GAUSS"
    dt: float = Field(1.0, gt=0)
    sigma: float = Field(1.0, ge=0)
    A: List[List[float]] | None = None
    Sigma: List[List[float]] | None = None
    survival: float = Field(0.9, gt=0, le=1)
    alpha: float = Field(0.8, ge=0, le=1)
    mu_rate: float = Field(0.5, ge=0)
    region: Region = ((0.0, 100.0), (0.0, 100.0))
    velocity_std: float = Field(1.0, ge=0)


ScenarioConfig = Annotated[
    Union[PresetScenario, FiniteScenarioConfig, GaussianScenarioConfig], Field(discriminator="kind")
]


class EngineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int | None = Field(None, ge=0)
    horizon: int = Field(10, ge=0)
    N: int = Field(200, ge=1)
    N_grid: List[int] | None = None
    n_prime: int = Field(100, ge=1)
    runs: int = Field(100, ge=1)
    replicates: int = Field(10000, ge=2)
    max_population: int | None = Field(None, ge=1)
    scheme: SchemeKind = "full"
    epsilon: float | None = Field(None, ge=0)
    # value vectors on finite spaces; defaults to f = 1 and the indicator of the first state
    test_functions: List[List[float]] | None = None

    @field_validator("N_grid")
    @classmethod
    def grid_increasing(cls, v):
        _strictly_increasing(v, "N grid")
        if v is not None and min(v) < 1:
            raise ValueError("N grid entries must be positive")
        return v


class OutputConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    directory: str | None = None
    formats: List[OutputFormat] = ["csv", "json"]
    dump_trajectories: int = Field(0, ge=0)


class ExperimentSizes(BaseModel):
    """Sample sizes and gates of the verification suite."""

    model_config = ConfigDict(extra="forbid")

    checks: List[CheckId] | None = None
    z: float = Field(3.0, gt=0)
    horizon: int = Field(10, ge=1)
    N: int = Field(200, ge=1)
    mean_runs: int = Field(2000, ge=100)
    N_grid: List[int] = [100, 316, 1000, 3162, 10000]
    rate_runs: int = Field(200, ge=100)
    rate_steps: List[int] = [5, 20]
    rate_orders: List[int] = [1, 2]
    variance_N: List[int] = [101, 1001]
    variance_runs: int = Field(5000, ge=100)
    clt_N: int = Field(1000, ge=2)
    clt_steps: int = Field(5, ge=1)
    sim_replicates: int = Field(100000, ge=100)
    sim_steps: int = Field(6, ge=0)
    sim_steps_supercritical: int = Field(4, ge=0)
    longtime_steps: int = Field(200, ge=10)
    bound_steps: int = Field(50, ge=1)
    mixing_lag: int = Field(1, ge=1)
    n_prime: int = Field(100, ge=1)
    n_prime_grid: List[int] = [100, 316, 1000, 3162, 10000]
    birth_runs: int = Field(5000, ge=100)
    birth_steps: int = Field(50, ge=1)

    @field_validator("N_grid", "variance_N", "n_prime_grid", "rate_steps")
    @classmethod
    def grid_increasing(cls, v):
        _strictly_increasing(v, "grid")
        if not v:
            raise ValueError("grids must not be empty")
        return v


class RunConfig(BaseModel):
    """Top-level run configuration (JSON, versioned)."""

    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1] = 1
    scenario: ScenarioConfig
    engine: EngineConfig = EngineConfig()
    output: OutputConfig = OutputConfig()
    verify: ExperimentSizes = ExperimentSizes()


class ExperimentSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: ScenarioConfig
    seed: int = Field(ge=0)
    regime: RegimeTag | None = None
    scheme: SchemeKind = "full"
    epsilon: float | None = Field(None, ge=0)
    test_functions: List[List[float]] | None = None
    sizes: ExperimentSizes = ExperimentSizes()
    # shifts every estimator a check compares; a nonzero value must make the check fail
    inject_bias: float = 0.0


class Comparison(BaseModel):
    label: str
    statistic: float
    oracle: float | None = None
    se: float | None = None
    bound: float | None = None
    passed: bool


class CheckResult(BaseModel):
    id: CheckId
    verdict: bool
    statistic: float | None = None
    oracle: float | None = None
    se: float | None = None
    bound: float | None = None
    tolerance: str
    n_samples: int
    comparisons: int
    seed: int
    detail: str = ""
    rows: List[Comparison] = []


class ExperimentReport(BaseModel):
    scenario: str
    seed: int
    checks: List[CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.verdict for c in self.checks)
