import json
import os
from typing import List, Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from meshfree.errors import ConfigError

load_dotenv()

THREADS = int(os.getenv("HPADAPT_THREADS") or 1)
RUNS_DIR = os.getenv("HPADAPT_RUNS_DIR", "runs")
LOG_LEVEL = os.getenv("HPADAPT_LOG_LEVEL", "INFO").upper()

PROBLEMS = ("peak", "fretting", "boussinesq")

# Adaptivity tables per benchmark; fretting lengths are in millimetres.
PROBLEM_DEFAULTS = {
    "peak": dict(beta_h=0.175, alpha_h=0.225, lambda_h=2.625, theta_h=1.01,
                 beta_p=1e-4, alpha_p=0.05, lambda_p=5.0, theta_p=1.258,
                 h_max=0.1, n_max=250_000, n_iter=70),
    "fretting": dict(beta_h=5e-5, alpha_h=1e-4, lambda_h=5.0, theta_h=1.05,
                     beta_p=1e-3, alpha_p=0.1, lambda_p=4.0, theta_p=1.05,
                     h_max=0.25, n_max=500_000, n_iter=19),
    "boussinesq": dict(beta_h=1e-3, alpha_h=1e-3, lambda_h=3.75, theta_h=1.01,
                       beta_p=1e-4, alpha_p=1e-2, lambda_p=3.0, theta_p=1.5,
                       h_max=0.04, n_max=70_000, n_iter=20),
}

_STRICT = ConfigDict(extra="forbid")


class SolverSettings(BaseModel):
    model_config = _STRICT

    tolerance: float = Field(1e-15, gt=0, description="Relative residual at which BiCGSTAB stops.")
    max_iterations: int = Field(300, gt=0, description="BiCGSTAB iteration cap.")
    drop_tolerance: float = Field(1e-5, gt=0, description="ILUT drop tolerance.")
    fill_factor: float = Field(50.0, gt=0, description="ILUT fill factor.")
    method: Literal["bicgstab", "direct"] = Field("bicgstab", description="Iterative solver or small-system direct solve.")


class PeakConfig(BaseModel):
    model_config = _STRICT

    strength: float = Field(1000.0, gt=0, description="Exponent strength a of the source.")
    source: Tuple[float, float] = Field((0.5, 1.0 / 3.0), description="Source position x_s.")
    radius: float = Field(1.0, gt=0, description="Radius of the disc domain centred at the origin.")


class FrettingConfig(BaseModel):
    model_config = _STRICT

    length_mm: float = Field(40.0, gt=0)
    width_mm: float = Field(10.0, gt=0)
    thickness_mm: float = Field(4.0, gt=0)
    pad_radius_mm: float = Field(10.0, gt=0)
    normal_force_n: float = Field(543.0, gt=0)
    tangential_force_n: float = Field(155.0)
    axial_stress_mpa: float = Field(100.0)
    young_modulus_mpa: float = Field(72_100.0, gt=0)
    poisson_ratio: float = Field(0.33, gt=0, lt=0.5)
    pad_young_modulus_mpa: float = Field(72_100.0, gt=0)
    pad_poisson_ratio: float = Field(0.33, gt=0, lt=0.5)
    friction: float = Field(0.3, gt=0)


class BoussinesqConfig(BaseModel):
    model_config = _STRICT

    force: float = Field(-1.0, description="Concentrated force P.")
    young_modulus: float = Field(1.0, gt=0)
    poisson_ratio: float = Field(0.33, gt=0, lt=0.5)
    epsilon: float = Field(0.1, gt=0, lt=1, description="Distance of the box corner from the singularity.")


class StudyGrid(BaseModel):
    model_config = _STRICT

    h: List[float] = Field(default_factory=lambda: [0.04, 0.028, 0.02, 0.014, 0.01])
    m: List[int] = Field(default_factory=lambda: [2, 4])
    seeds: int = Field(5, gt=0)


class RunConfig(BaseModel):
    """
    Complete run description. Unset adaptivity keys are filled from the
    benchmark's table; fretting lengths (h_max, h_initial) are millimetres.
    """

    model_config = _STRICT

    problem: Literal["peak", "fretting", "boussinesq"]

    alpha_h: Optional[float] = Field(None, gt=0, lt=1)
    beta_h: Optional[float] = Field(None, gt=0, lt=1)
    lambda_h: Optional[float] = Field(None, ge=1)
    theta_h: Optional[float] = Field(None, ge=1)
    alpha_p: Optional[float] = Field(None, gt=0, lt=1)
    beta_p: Optional[float] = Field(None, gt=0, lt=1)
    lambda_p: Optional[float] = Field(None, ge=1)
    theta_p: Optional[float] = Field(None, ge=1)
    h_max: Optional[float] = Field(None, gt=0)
    n_max: Optional[int] = Field(None, gt=0)
    n_iter: Optional[int] = Field(None, ge=0)
    gamma: Optional[float] = Field(None, gt=0)
    h_initial: Optional[float] = Field(None, gt=0, description="Initial uniform spacing, defaults to h_max.")
    tie_hp_parameters: bool = Field(False, description="Copy the h marking/refinement parameters onto p.")

    solver: SolverSettings = Field(default_factory=SolverSettings)
    phs_exponent: int = Field(3, ge=1)
    allowed_orders: List[int] = Field(default_factory=lambda: [2, 4, 6, 8])
    initial_order: int = Field(2)
    order_bump: int = Field(2, ge=1)
    indicator: Literal["imex", "exact"] = "imex"
    seed: int = Field(0, ge=0)
    output_dir: Optional[str] = None
    reference_csv: Optional[str] = None
    debug_dump_matrix: bool = False

    peak: PeakConfig = Field(default_factory=PeakConfig)
    fretting: FrettingConfig = Field(default_factory=FrettingConfig)
    boussinesq: BoussinesqConfig = Field(default_factory=BoussinesqConfig)
    study: StudyGrid = Field(default_factory=StudyGrid)

    @model_validator(mode="after")
    def _fill_and_check(self):
        for key, value in PROBLEM_DEFAULTS[self.problem].items():
            if getattr(self, key) is None:
                setattr(self, key, value)
        if self.h_initial is None:
            self.h_initial = self.h_max
        if self.tie_hp_parameters:
            for name in ("alpha", "beta", "lambda", "theta"):
                setattr(self, f"{name}_p", getattr(self, f"{name}_h"))
        for pair in ("h", "p"):
            alpha, beta = getattr(self, f"alpha_{pair}"), getattr(self, f"beta_{pair}")
            if beta > alpha:
                raise ConfigError(f"beta_{pair} ({beta}) must not exceed alpha_{pair} ({alpha})", key=f"beta_{pair}")
        if self.h_initial > self.h_max:
            raise ConfigError(f"h_initial ({self.h_initial}) must not exceed h_max ({self.h_max})", key="h_initial")
        orders = sorted(set(self.allowed_orders))
        if not orders or orders[0] < 0 or any(m % 2 for m in orders):
            raise ConfigError(f"allowed_orders must be non-negative even orders, got {self.allowed_orders}", key="allowed_orders")
        self.allowed_orders = orders
        if self.initial_order not in orders:
            raise ConfigError(f"initial_order {self.initial_order} is not among allowed_orders {orders}", key="initial_order")
        if self.indicator == "exact" and self.problem == "fretting":
            raise ConfigError("The exact indicator needs a closed form, which the fretting problem lacks", key="indicator")
        return self

    def with_overrides(self, **overrides) -> "RunConfig":
        """Re-validated copy with the given top-level keys replaced (None values are ignored)."""
        data = self.model_dump()
        data.update({k: v for k, v in overrides.items() if v is not None})
        return _validate(data)

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)


def _validate(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(part) for part in first["loc"]) or None
        where = f"'{key}': " if key else ""
        raise ConfigError(f"Invalid config {where}{first['msg']}", key=key) from e


def parse_config(text: Optional[str] = None, **overrides) -> RunConfig:
    """
    Parse JSON run configuration text. Keyword overrides (e.g. the problem name
    from the command line) take precedence over keys in the text.
    """
    data = {}
    if text and text.strip():
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("Config must be a JSON object of key/value pairs.")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return _validate(data)
