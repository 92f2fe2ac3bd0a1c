# earlystop/app/parser.py
import re
from typing import List, Tuple

import numpy as np

from .descent import StepSchedule, constant_schedule, custom_schedule
from .errors import ConfigurationError
from .kernels import Kernel, gaussian_kernel, polynomial_kernel, sobolev_kernel
from .schemas import StoppingRule

NUMBER = r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?"

RULE_ALIASES = {
    "dd": StoppingRule.DATA_DEPENDENT,
    "data": StoppingRule.DATA_DEPENDENT,
    "data_dependent": StoppingRule.DATA_DEPENDENT,
    "datadependent": StoppingRule.DATA_DEPENDENT,
    "ho": StoppingRule.HOLDOUT,
    "holdout": StoppingRule.HOLDOUT,
    "hold_out": StoppingRule.HOLDOUT,
    "sure": StoppingRule.SURE,
    "oracle": StoppingRule.ORACLE,
}


def normalize(text: str) -> str:
    return text.lower().strip()


def _items(text: str) -> List[str]:
    return [p for p in re.split(r"[,\s;]+", normalize(text)) if p]


def parse_kernel_spec(spec: str) -> Kernel:
    """'sobolev1' | 'gaussian:<bandwidth>' | 'poly:<degree>'."""
    s = normalize(spec)
    if re.fullmatch(r"sobolev-?1?", s):
        return sobolev_kernel()

    match = re.fullmatch(rf"(?:gaussian|rbf)(?::({NUMBER}))?", s)
    if match:
        return gaussian_kernel(float(match.group(1)) if match.group(1) else 1.0)

    match = re.fullmatch(r"(?:poly|polynomial):(\d+)", s)
    if match:
        return polynomial_kernel(int(match.group(1)))

    raise ConfigurationError("Unknown kernel spec; expected sobolev1, gaussian:<bw> or poly:<d>", spec=spec)


def parse_n_list(text: str) -> List[int]:
    values = []
    for item in _items(text):
        if not re.fullmatch(r"\d+", item):
            raise ConfigurationError("Sample sizes must be positive integers", item=item)
        values.append(int(item))
    if not values:
        raise ConfigurationError("Empty sample-size list")
    if any(v < 4 for v in values):
        raise ConfigurationError("Sample sizes must be at least 4", n_list=values)
    return sorted(set(values))


def parse_rules(text: str) -> Tuple[StoppingRule, ...]:
    items = _items(text)
    if items == ["all"]:
        return tuple(StoppingRule)
    rules = []
    for item in items:
        rule = RULE_ALIASES.get(item.replace("-", "_"))
        if rule is None:
            raise ConfigurationError("Unknown stopping rule", rule=item)
        if rule not in rules:
            rules.append(rule)
    if not rules:
        raise ConfigurationError("Empty rule list")
    return tuple(rules)


def parse_schedule(text: str) -> StepSchedule:
    """A single number is a constant step; a list is a custom non-increasing schedule."""
    items = _items(text)
    if not items or any(not re.fullmatch(NUMBER, i) for i in items):
        raise ConfigurationError("Step must be a number or a list of numbers", step=text)
    if len(items) == 1:
        return constant_schedule(float(items[0]))
    return custom_schedule([float(i) for i in items])


def parse_grid(text: str) -> np.ndarray:
    """'start:stop:count' (linear) or 'log:start:stop:count' or an explicit list."""
    s = normalize(text)
    match = re.fullmatch(rf"(log:)?({NUMBER}):({NUMBER}):(\d+)", s)
    if match:
        log, start, stop, count = match.groups()
        start, stop, count = float(start), float(stop), int(count)
        if count < 1 or start <= 0 or stop < start:
            raise ConfigurationError("Grid needs 0 < start <= stop and count >= 1", grid=text)
        if log:
            return np.geomspace(start, stop, count)
        return np.linspace(start, stop, count)
    items = _items(s)
    if not items or any(not re.fullmatch(NUMBER, i) for i in items):
        raise ConfigurationError("Grid must be start:stop:count or a list of numbers", grid=text)
    return np.asarray([float(i) for i in items])
