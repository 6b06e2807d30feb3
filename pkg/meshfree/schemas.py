from typing import Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

ORDER_COLUMNS = ("n_m2", "n_m4", "n_m6", "n_m8")


class IterationRecord(BaseModel):
    iteration: int = Field(..., ge=0, description="Index of the adaptive iteration.")
    n_nodes: int = Field(..., gt=0, description="Number of nodes in the discretisation.")
    eta_max: float = Field(..., ge=0, description="Largest error indicator over non-Dirichlet nodes.")
    eta_min: float = Field(..., ge=0, description="Smallest error indicator over non-Dirichlet nodes.")
    e1: Optional[float] = Field(None, description="Relative l1 error against the closed form.")
    e2: Optional[float] = Field(None, description="Relative l2 error against the closed form.")
    einf: Optional[float] = Field(None, description="Relative l-infinity error against the closed form.")
    solver_iterations: int = Field(..., ge=0)
    solver_residual: float = Field(..., ge=0)
    t_discretise_ms: float = 0.0
    t_weights_ms: float = 0.0
    t_assemble_ms: float = 0.0
    t_solve_ms: float = 0.0
    t_indicate_ms: float = 0.0
    t_adapt_ms: float = 0.0
    h_min: float = Field(..., gt=0)
    h_max: float = Field(..., gt=0)
    h_ratio: float = Field(..., ge=1, description="h_max / h_min.")
    n_m2: int = 0
    n_m4: int = 0
    n_m6: int = 0
    n_m8: int = 0
    mean_abs_dsxx: Optional[float] = Field(None, description="Mean |sigma_xx reference - sigma_xx| under the contact (Pa).")
    vm_diag_rel_err: Optional[float] = Field(None, description="Largest relative von Mises error near the body diagonal.")

    @model_validator(mode="after")
    def _check_indicator(self):
        if self.eta_min > self.eta_max:
            raise ValueError(f"eta_min ({self.eta_min}) exceeds eta_max ({self.eta_max}).")
        return self


class StudyRow(BaseModel):
    h: float = Field(..., gt=0)
    m: int
    seed: int
    n_nodes: Optional[int] = None
    einf: Optional[float] = None
    eta_max: Optional[float] = None
    failed: bool = False
    error: Optional[str] = None


class RunMeta(BaseModel):
    problem: str
    seed: int
    started: str = Field(..., description="ISO-8601 start timestamp.")
    finished: Optional[str] = None
    status: Optional[str] = Field(None, description="'ok', 'failed' or None while running.")
    error: Optional[str] = None
    config: dict = Field(default_factory=dict)


def order_histogram(m) -> dict:
    """Node counts per approximation order for the record columns."""
    m = np.asarray(m, dtype=int)
    return {column: int(np.count_nonzero(m == int(column[3:]))) for column in ORDER_COLUMNS}
