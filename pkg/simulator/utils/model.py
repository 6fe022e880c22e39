"""
Physics of the diffuse-interface tumour model: the quartic double-well
potential with its lambda shift, the proliferation function and the scalar
auxiliary variable ratio.
"""
import math
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .exceptions import InvalidConfigError, SavDenominatorError

SAV_DENOMINATOR_FLOOR = 1e-10

# Config keys of the fields outside the params namespace
CONFIG_KEYS = {'lam': 'params.lambda', 'tau': 'time.tau', 'T': 'time.T'}


@dataclass(frozen=True)
class ModelParams:
    """Physical and scheme constants of one run"""

    epsilon: float
    chi0: float
    delta: float
    kappa: float
    p0: float
    B: float
    tau: float
    T: float
    # Stabilisation constant; 4*chi0^2 when not given
    lam: Optional[float] = field(default=None)

    def __post_init__(self):
        if self.lam is None:
            object.__setattr__(self, 'lam', 4.0 * self.chi0 ** 2)
        self.validate()

    def validate(self) -> None:
        """Raise InvalidConfigError naming the first offending parameter"""
        for item in fields(self):
            value = getattr(self, item.name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                key = CONFIG_KEYS.get(item.name, f"params.{item.name}")
                raise InvalidConfigError(f"must be a finite number, got {value!r}", key=key)
        if self.epsilon <= 0:
            raise InvalidConfigError("must be positive", key='params.epsilon')
        if not 0 < self.delta < 1:
            raise InvalidConfigError("must lie in (0, 1)", key='params.delta')
        if self.kappa < 0:
            raise InvalidConfigError("must be nonnegative", key='params.kappa')
        if self.p0 < 0:
            raise InvalidConfigError("must be nonnegative", key='params.p0')
        if self.tau <= 0:
            raise InvalidConfigError("must be positive", key='time.tau')
        if self.T < self.tau:
            raise InvalidConfigError(f"final time {self.T} is smaller than the time step {self.tau}", key='time.T')

    @property
    def num_steps(self) -> int:
        """N = floor(T / tau), tolerant to T being a float multiple of tau"""
        return int(math.floor(self.T / self.tau + 1e-9))

    @property
    def lipschitz_p(self) -> float:
        """Lipschitz constant of the proliferation function"""
        return self.delta * self.p0


def f_val(u, params: ModelParams):
    """f(u) = kappa u^2 (1-u)^2 - (lambda/2) u^2"""
    u = np.asarray(u, dtype=float)
    return params.kappa * u ** 2 * (1.0 - u) ** 2 - 0.5 * params.lam * u ** 2


def f_prime(u, params: ModelParams):
    """f'(u) = 2 kappa u (1-u)(1-2u) - lambda u"""
    u = np.asarray(u, dtype=float)
    return 2.0 * params.kappa * u * (1.0 - u) * (1.0 - 2.0 * u) - params.lam * u


def proliferation(u, params: ModelParams):
    """P(u) = delta p0 u for u >= 0, else 0"""
    u = np.asarray(u, dtype=float)
    return params.delta * params.p0 * np.maximum(u, 0.0)


def sav_ratio(r: float, e1: float, params: ModelParams) -> float:
    """s = r / (E1 + B)"""
    denominator = e1 + params.B
    if not denominator > SAV_DENOMINATOR_FLOOR:
        raise SavDenominatorError(
            f"E1 + B = {denominator:.6g} is not positive; increase params.B")
    return r / denominator


def well_posedness_time_step(params: ModelParams, u_linf: float) -> float:
    """Largest tau covered by the unique-solvability argument, 3 delta^2 / (4 L (1 + |u|_inf))"""
    lipschitz = params.lipschitz_p
    if lipschitz == 0:
        return math.inf
    return 3.0 * params.delta ** 2 / (4.0 * lipschitz * (1.0 + u_linf))
