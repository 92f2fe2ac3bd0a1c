# earlystop/app/stopping.py
import logging
import math
from typing import Optional, Tuple

import numpy as np

from .complexity import EmpiricalComplexity, scaled_complexity
from .descent import DescentPath, StepSchedule, shrink_table, sure_trace
from .errors import ConfigurationError, NoStopError
from .kernels import EmpiricalKernel, Kernel, build_empirical_kernel, gram
from .schemas import FrozenModel, Sample, StoppingRecord, StoppingRule
from .settings import get_settings

logger = logging.getLogger(__name__)


def first_increase(trace: np.ndarray) -> Tuple[int, bool, bool]:
    """T = argmin{t : R(t+1) > R(t)} - 1 over a trace indexed t = 0..cap.

    Returns (T, triggered, degenerate). A literal T of -1 is clamped to 0 and flagged;
    a trace without any increase yields (cap, False, False).
    """
    trace = np.asarray(trace, dtype=float)
    rises = np.flatnonzero(trace[1:] > trace[:-1])
    if rises.size == 0:
        return int(trace.shape[0] - 1), False, False
    T = int(rises[0]) - 1
    if T < 0:
        return 0, True, True
    return T, True, False


def _record_first_increase(rule: StoppingRule, trace: np.ndarray) -> StoppingRecord:
    T, triggered, degenerate = first_increase(trace)
    if not triggered:
        logger.warning("[%s] no risk increase within %d iterations", rule.value, T)
        kept = trace
    elif degenerate:
        logger.warning("[%s] risk increased at the first step; stopping time clamped to 0", rule.value)
        kept = trace[:2]
    else:
        # scanned prefix, through the first rising pair (T + 1, T + 2)
        kept = trace[: T + 3]
    return StoppingRecord(rule=rule, T=T, risk_trace=np.array(kept), triggered=triggered, degenerate=degenerate)


# ---------------- DATA-DEPENDENT RULE ---------------- #

def stop_data_dependent(schedule: StepSchedule, ec: EmpiricalComplexity, sigma: float, cap: int,
                        prefactor: Optional[float] = None) -> StoppingRecord:
    """T = (first t >= 1 with R(1/sqrt(eta_t)) > 1/(2 e sigma eta_t)) - 1."""
    if not sigma > 0:
        raise ConfigurationError("Noise level sigma must be positive", sigma=sigma)
    if ec.degenerate:
        raise NoStopError("All empirical eigenvalues vanish; the stopping criterion never fires")
    c = prefactor or get_settings().constants.empirical_prefactor
    etas = schedule.etas(cap)[1:]
    # eta R(1/sqrt(eta)) > 1/(c sigma) is the criterion multiplied through by eta_t > 0
    margins = scaled_complexity(ec, etas) - 1.0 / (c * sigma)
    fired = np.flatnonzero(margins > 0)
    if fired.size == 0:
        logger.warning("[data_dependent] criterion did not fire within %d iterations", cap)
        return StoppingRecord(rule=StoppingRule.DATA_DEPENDENT, T=cap, risk_trace=margins, triggered=False)
    t_fire = int(fired[0]) + 1
    return StoppingRecord(rule=StoppingRule.DATA_DEPENDENT, T=t_fire - 1,
                          risk_trace=margins[:t_fire], triggered=True)


# ---------------- HOLD-OUT ---------------- #

class HoldoutFit(FrozenModel):
    """Gradient path on the training half, in the eigenbasis of its kernel matrix."""
    kernel: EmpiricalKernel
    # gains[t, j] = (1 - S^t_jj) / lambda_j, so omega^t = U_r (gains[t] * U_r^T y) / sqrt(m)
    gains: np.ndarray
    response_coords: np.ndarray

    def coefficients(self, t: Optional[int] = None) -> np.ndarray:
        rows = self.gains if t is None else self.gains[t]
        return rows * self.response_coords / math.sqrt(self.kernel.n)

    def omega(self, t: int) -> np.ndarray:
        r = self.kernel.rank
        return self.kernel.eigenvectors[:, :r] @ self.coefficients(t)

    def predict_trace(self, x: np.ndarray) -> np.ndarray:
        """Rows t = 0..cap of f_tr^t evaluated at x."""
        K = self.kernel
        r = K.rank
        basis = gram(K.kernel, x, K.design) @ K.eigenvectors[:, :r] / math.sqrt(K.n)
        return self.coefficients() @ basis.T


def fit_holdout(train: Sample, kernel: Kernel, schedule: StepSchedule, cap: int) -> HoldoutFit:
    K = build_empirical_kernel(kernel, train.design)
    schedule.validate_for(K)
    r = K.rank
    lam = K.eigenvalues[:r]
    gains = np.zeros((cap + 1, r))
    for t, alpha in enumerate(schedule.alphas(cap)):
        gains[t + 1] = gains[t] + alpha * (1.0 - lam * gains[t])
    coords = K.eigenvectors[:, :r].T @ K.sort(train.responses)
    return HoldoutFit(kernel=K, gains=gains, response_coords=coords)


def stop_holdout(train: Sample, test: Sample, kernel: Kernel, schedule: StepSchedule, cap: int,
                 fit: Optional[HoldoutFit] = None) -> StoppingRecord:
    """First-increase rule on R_HO(t) = (1/n) sum_{i in test} (y_i - f_tr^t(x_i))^2."""
    fit = fit or fit_holdout(train, kernel, schedule, cap)
    n = train.n + test.n
    preds = fit.predict_trace(test.design)
    trace = np.sum((test.responses[None, :] - preds) ** 2, axis=1) / n
    return _record_first_increase(StoppingRule.HOLDOUT, trace)


# ---------------- SURE ---------------- #

def sure_risk(schedule: StepSchedule, K: EmpiricalKernel, y: np.ndarray, sigma: float, t: int) -> float:
    """(1/n){n sigma^2 + y^T (S~^t)^2 y - 2 sigma^2 trace(S~^t)}, with S~^t = U S^t U^T."""
    S = shrink_table(schedule, K.eigenvalues, t)[-1]
    z = K.eigenvectors.T @ np.asarray(y, dtype=float)
    return float(sure_trace(S, z, sigma))


def stop_sure(schedule: StepSchedule, K: EmpiricalKernel, y: np.ndarray, sigma: float, cap: int,
              path: Optional[DescentPath] = None) -> StoppingRecord:
    if path is not None and path.sure_risk is not None and path.iters >= cap:
        trace = path.sure_risk[: cap + 1]
    else:
        S = shrink_table(schedule, K.eigenvalues, cap)
        trace = sure_trace(S, K.eigenvectors.T @ np.asarray(y, dtype=float), sigma)
    return _record_first_increase(StoppingRule.SURE, trace)


# ---------------- ORACLE ---------------- #

def stop_oracle(schedule: StepSchedule, K: EmpiricalKernel, y: np.ndarray, fstar_vals: np.ndarray, cap: int,
                path: Optional[DescentPath] = None) -> StoppingRecord:
    """First-increase rule on the true error ||f^t - f*||_n^2."""
    if path is not None and path.emp_error is not None and path.iters >= cap:
        trace = path.emp_error[: cap + 1]
    else:
        U = K.eigenvectors
        S = shrink_table(schedule, K.eigenvalues, cap)
        z = U.T @ np.asarray(y, dtype=float)
        a = U.T @ np.asarray(fstar_vals, dtype=float)
        trace = np.mean(((1.0 - S) * z - a) ** 2, axis=1)
    return _record_first_increase(StoppingRule.ORACLE, trace)
