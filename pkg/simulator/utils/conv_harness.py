"""
Initial data of the four reference simulations and the extrapolated
convergence-rate studies.

Without an exact solution, errors are differences between consecutive
levels: e_h = v_h - v_{h/2} compared on the finer of two nested meshes, and
e_tau = v_tau - v_{tau/2} compared at the final time on one mesh.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import InvalidConfigError
from .fem_core import AnalyticField, FeFunction, FunctionSpace, norm, prolong
from .mesh import build_box_mesh
from .model import ModelParams
from .sav_stepper import FemContext, State, run

if TYPE_CHECKING:
    from .config_parser import RunConfig

logger = logging.getLogger(__name__)

SIMULATIONS = ('sim1', 'sim2', 'sim3', 'sim4')
SIMULATION_DIMS = {'sim1': 2, 'sim2': 2, 'sim3': 2, 'sim4': 3}
RATE_FIELDS = ('u', 'mu', 'n')
RATE_NORMS = ('L2', 'H1', 'Linf')
RATE_HEADER = ('axis', 'level_coarse', 'level_fine', 'field', 'norm', 'error', 'rate')

# Radius of the tumour and nutrient blobs in the reference simulations
BLOB_RADIUS = 0.2

# Default comparison stride of the spatial study, in time steps
DEFAULT_STRIDE_STEPS = 10


def _tanh_blob(center: Sequence[float], epsilon: float) -> Tuple:
    """tanh((R - |x - c|) / (eps sqrt 2) + 1) and its gradient"""
    center = np.asarray(center, dtype=float)
    width = epsilon * math.sqrt(2.0)

    def value(x):
        rho = np.linalg.norm(x - center, axis=1)
        return np.tanh((BLOB_RADIUS - rho) / width + 1.0)

    def gradient(x):
        offset = x - center
        rho = np.linalg.norm(offset, axis=1)
        sech_sq = 1.0 - np.tanh((BLOB_RADIUS - rho) / width + 1.0) ** 2
        # The profile has a cone tip at the centre; take the zero subgradient there
        safe = np.where(rho > 0, rho, 1.0)
        direction = np.where((rho > 0)[:, None], offset / safe[:, None], 0.0)
        return -(sech_sq / width)[:, None] * direction

    return value, gradient


def _blob_sum(offset: float, blobs: Sequence[Tuple[float, Sequence[float]]], epsilon: float,
              sign: float = 1.0, name: str = '') -> AnalyticField:
    """offset + sign * sum_i weight_i tanh-blob_i"""
    parts = [(weight, _tanh_blob(center, epsilon)) for weight, center in blobs]

    def value(x):
        return offset + sign * sum(weight * blob[0](x) for weight, blob in parts)

    def gradient(x):
        return sign * sum(weight * blob[1](x) for weight, blob in parts)

    return AnalyticField(value, gradient, name)


def _sine_product_modulus(name: str, complement: bool = False) -> AnalyticField:
    """|sin(2 pi x) sin(2 pi y)|, or one minus it"""
    sign = -1.0 if complement else 1.0
    offset = 1.0 if complement else 0.0

    def value(x):
        return offset + sign * np.abs(np.sin(2 * np.pi * x[:, 0]) * np.sin(2 * np.pi * x[:, 1]))

    def gradient(x):
        sx, sy = np.sin(2 * np.pi * x[:, 0]), np.sin(2 * np.pi * x[:, 1])
        cx, cy = np.cos(2 * np.pi * x[:, 0]), np.cos(2 * np.pi * x[:, 1])
        s = np.sign(sx * sy)
        return sign * 2 * np.pi * s[:, None] * np.column_stack([cx * sy, sx * cy])

    return AnalyticField(value, gradient, name)


def affine_field(coefficients: Sequence[float], dim: int, name: str = '') -> AnalyticField:
    """a + b . x from the list a, b_1, ..., b_dim"""
    coefficients = [float(c) for c in coefficients]
    if len(coefficients) == 1:
        coefficients = coefficients + [0.0] * dim
    if len(coefficients) != dim + 1:
        raise InvalidConfigError(f"expected 1 or {dim + 1} affine coefficients, got {len(coefficients)}",
                                 key=f"ic.{name}" if name else None)
    a, b = coefficients[0], np.array(coefficients[1:])
    return AnalyticField(lambda x: a + x @ b, lambda x: np.broadcast_to(b, x.shape), name)


def initial_condition(name: str, params: ModelParams, dim: Optional[int] = None,
                      inline: Optional[Dict[str, Sequence[float]]] = None) -> Tuple[AnalyticField, AnalyticField]:
    """(u0, n0) of a reference simulation, or inline affine data"""
    eps = params.epsilon
    if name == 'inline':
        if dim is None or not inline or 'u0' not in inline or 'n0' not in inline:
            raise InvalidConfigError("inline initial data needs ic.u0 and ic.n0", key='ic.name')
        return affine_field(inline['u0'], dim, 'u0'), affine_field(inline['n0'], dim, 'n0')
    if name not in SIMULATIONS:
        raise InvalidConfigError(f"unknown initial condition {name!r}; expected one of {SIMULATIONS + ('inline',)}",
                                 key='ic.name')
    if dim is not None and dim != SIMULATION_DIMS[name]:
        raise InvalidConfigError(f"{name} is defined in {SIMULATION_DIMS[name]}D, domain is {dim}D", key='ic.name')

    if name == 'sim1':
        tumour = [(0.5, (0.0, 0.0))]
        return (_blob_sum(0.5, tumour, eps, name='u0'),
                _blob_sum(0.5, tumour, eps, sign=-1.0, name='n0'))
    if name == 'sim2':
        tumours = [(0.5, (-0.3, 0.0)), (0.5, (0.3, 0.0))]
        return (_blob_sum(1.0, tumours, eps, name='u0'),
                _blob_sum(0.0, tumours, eps, sign=-1.0, name='n0'))
    if name == 'sim3':
        return _sine_product_modulus('u0'), _sine_product_modulus('n0', complement=True)

    sources = [
        (0.5, (-0.3, -0.3, 0.0)),
        (0.5, (0.3, 0.3, 0.0)),
        (0.25, (0.3, -0.3, 0.0)),
        (0.25, (-0.3, 0.3, 0.0)),
    ]
    return (_blob_sum(0.5, [(0.5, (0.0, 0.0, 0.0))], eps, name='u0'),
            _blob_sum(1.5, sources, eps, name='n0'))


@dataclass
class RateTable:
    """Level-difference errors and their log2 ratios"""

    axis: str
    levels: List[float]
    errors: Dict[Tuple[str, str], List[float]] = field(default_factory=dict)

    @property
    def pairs(self) -> List[Tuple[float, float]]:
        return list(zip(self.levels, self.levels[1:]))

    def rates(self, field_name: str, norm_kind: str) -> List[float]:
        """log2(e_coarse / e_fine) for consecutive error levels"""
        values = self.errors[(field_name, norm_kind)]
        return [_log2_ratio(coarse, fine) for coarse, fine in zip(values, values[1:])]

    def finest_rate(self, field_name: str, norm_kind: str) -> float:
        rates = self.rates(field_name, norm_kind)
        return rates[-1] if rates else math.nan

    def rows(self) -> List[Tuple]:
        rows = []
        for (field_name, norm_kind), values in self.errors.items():
            rates = [math.nan] + self.rates(field_name, norm_kind)
            for (coarse, fine), error, rate in zip(self.pairs, values, rates):
                rows.append((self.axis, coarse, fine, field_name, norm_kind, error, rate))
        return rows


def _log2_ratio(coarse: float, fine: float) -> float:
    if coarse > 0 and fine > 0:
        return math.log2(coarse / fine)
    return math.nan


def _fields(state: State) -> Dict[str, FeFunction]:
    return {'u': state.U, 'mu': state.MU, 'n': state.N}


def _difference_norms(coarse: Dict[str, FeFunction], fine: Dict[str, FeFunction]) -> Dict[Tuple[str, str], float]:
    errors = {}
    for field_name in RATE_FIELDS:
        c, f = coarse[field_name], fine[field_name]
        if c.space.is_compatible(f.space):
            diff = c - f
        else:
            diff = prolong(c, f.mesh) - f
        for norm_kind in RATE_NORMS:
            errors[(field_name, norm_kind)] = norm(diff, norm_kind)
    return errors


class SnapshotCollector:
    """Observer keeping states at every multiple of a time stride and at the final step"""

    def __init__(self, stride_steps: int, final_step: int):
        self.stride_steps = max(1, stride_steps)
        self.final_step = final_step
        self.snapshots: List[State] = []

    def __call__(self, state: State, record) -> None:
        if state.k > 0 and (state.k % self.stride_steps == 0 or state.k == self.final_step):
            self.snapshots.append(state)


def spatial_rate(base: 'RunConfig', levels: int, tau: float, stride: Optional[float] = None) -> RateTable:
    """Nested-mesh study on n, 2n, ..., 2^levels n with max over shared snapshot times

    ``levels`` counts refinements, so the table holds ``levels`` errors and
    ``levels - 1`` rates.
    """
    if levels < 3:
        raise InvalidConfigError("a spatial study needs at least 3 refinements", key='rates.levels')
    params = replace(base.params, tau=tau)
    stride = stride if stride is not None else DEFAULT_STRIDE_STEPS * tau
    stride_steps = int(round(stride / tau))
    resolutions = [base.n * 2 ** level for level in range(levels + 1)]
    table = RateTable(axis='h', levels=resolutions)
    table.errors = {(f, k): [] for f in RATE_FIELDS for k in RATE_NORMS}

    previous: Optional[List[State]] = None
    for resolution in resolutions:
        config = replace(base, n=resolution, params=params)
        collector = SnapshotCollector(stride_steps, params.num_steps)
        logger.info("spatial study: n=%d, %d steps", resolution, params.num_steps)
        run(config, collector)
        if previous is not None:
            per_snapshot = [_difference_norms(_fields(c), _fields(f))
                            for c, f in zip(previous, collector.snapshots)]
            for key in table.errors:
                table.errors[key].append(max(errors[key] for errors in per_snapshot))
        previous = collector.snapshots
    return table


def temporal_rate(base: 'RunConfig', taus: Sequence[float], n: Optional[int] = None) -> RateTable:
    """Halving-tau study on one mesh, compared at the final time"""
    taus = [float(t) for t in taus]
    if len(taus) < 3:
        raise InvalidConfigError("a temporal study needs at least 3 time steps", key='rates.tau_list')
    for coarse, fine in zip(taus, taus[1:]):
        if not math.isclose(coarse, 2.0 * fine, rel_tol=1e-9):
            raise InvalidConfigError("time steps must halve from one level to the next", key='rates.tau_list')
    n = n if n is not None else base.n
    config = replace(base, n=n)
    space = FunctionSpace(build_box_mesh(config.box, n), config.degree)
    table = RateTable(axis='tau', levels=taus)
    table.errors = {(f, k): [] for f in RATE_FIELDS for k in RATE_NORMS}

    previous: Optional[State] = None
    for tau in taus:
        params = replace(config.params, tau=tau)
        logger.info("temporal study: tau=%.6g, %d steps", tau, params.num_steps)
        final = run(replace(config, params=params), ctx=FemContext(space, params)).final_state
        if previous is not None:
            if not math.isclose(previous.t, final.t, rel_tol=1e-12, abs_tol=1e-14):
                raise InvalidConfigError(f"runs end at different times {previous.t} and {final.t}", key='time.T')
            for key, value in _difference_norms(_fields(previous), _fields(final)).items():
                table.errors[key].append(value)
        previous = final
    return table
