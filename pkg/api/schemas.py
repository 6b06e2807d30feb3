from typing import Generic, Optional, TypeVar

from pydantic import BaseModel, Field

T = TypeVar('T')


class RunSummary(BaseModel):
    name: str = Field(..., description="Run directory name.")
    problem: Optional[str] = Field(None, description="Benchmark problem of the run.")
    status: Optional[str] = Field(None, description="'ok', 'failed' or None while running.")
    iterations: int = Field(..., description="Number of recorded iterations.")
    best_einf: Optional[float] = Field(None, description="Smallest relative l-infinity error over the iterations.")


class NodeRow(BaseModel):
    node_id: int = Field(..., description="Index of the node in its iteration.")
    x: float
    y: float
    z: Optional[float] = None
    type: int = Field(..., description="Node type code (0 interior, 1 Dirichlet, 2 Neumann, 3 traction, 4 symmetry).")
    h: float = Field(..., description="Local nodal spacing.")
    m: int = Field(..., description="Approximation order.")
    eta: float = Field(..., description="Error indicator value.")


class APIResponse(BaseModel, Generic[T]):
    status: str = Field("success", description="Status of the API request.")
    message: Optional[str] = Field(None, description="A descriptive message for the response.")
    data: Optional[T] = Field(None, description="The main data payload of the response.")
