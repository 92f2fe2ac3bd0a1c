# earlystop/app/schemas.py
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


class FrozenModel(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)


class StoppingRule(str, Enum):
    DATA_DEPENDENT = "data_dependent"
    HOLDOUT = "holdout"
    SURE = "sure"
    ORACLE = "oracle"


class Sample(FrozenModel):
    """Design points (sorted ascending) and the responses observed at them."""
    design: np.ndarray
    responses: np.ndarray

    @property
    def n(self) -> int:
        return int(self.design.shape[0])


class CriticalRadius(FrozenModel):
    value: float
    residual: float
    solver_iterations: int


class StoppingRecord(FrozenModel):
    rule: StoppingRule
    T: int = Field(ge=0)
    risk_trace: np.ndarray
    triggered: bool
    # set when the literal first-increase index was -1 and got clamped to 0
    degenerate: bool = False


class ShrinkageDiagnostics(FrozenModel):
    t: int
    diag: np.ndarray


class BiasVarianceSplit(FrozenModel):
    squared_bias: float = Field(ge=0.0)
    variance: float = Field(ge=0.0)


class RidgeShrinkage(FrozenModel):
    nu: float
    diag: np.ndarray


class RidgePath(FrozenModel):
    nus: np.ndarray
    fvals_per_nu: np.ndarray
    errors: Optional[np.ndarray] = None


class PropertyReport(BaseModel):
    name: str
    instances: int = 0
    violations: int = 0
    # most negative slack seen, in absolute terms; positive means every instance had room
    worst_margin: float = float("inf")
    details: List[str] = []

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def record(self, margin: float, slack: float = 0.0, note: str = "") -> None:
        self.instances += 1
        self.worst_margin = min(self.worst_margin, margin)
        if margin < -slack:
            self.violations += 1
            if note and len(self.details) < 10:
                self.details.append(note)


class RuleOutcome(FrozenModel):
    record: StoppingRecord
    emp_error: float = Field(ge=0.0)
    pop_error: Optional[float] = None


class TrialResult(FrozenModel):
    trial_id: int
    outcomes: Dict[StoppingRule, RuleOutcome]
    eps_hat: float = Field(gt=0.0)
    sigma_hat: float


class RateRow(BaseModel):
    n: int
    mean_mse: float
    inv_mse_32: float
    scaled_mse: float


class RateFit(BaseModel):
    slope: float
    intercept: float
    r2: float


class RateTable(BaseModel):
    rows: List[RateRow]
    fit: Optional[RateFit] = None
    degenerate: bool = False


class RunManifest(BaseModel):
    subcommand: str
    config: Dict[str, Any]
    seed: int
    outputs: List[str]
    version: str
    wall_clock: float


class RuleSummary(BaseModel):
    n: int
    rule: StoppingRule
    mean_mse: float
    stderr_mse: Optional[float] = None
    mean_T: float
    mean_pop_mse: Optional[float] = None
