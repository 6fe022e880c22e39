"""
Run configuration in a flat key=value format.

One key per line, dotted namespaces, '#' starts a comment. Numbers may be
written as fractions (``time.tau = 1/64``); lists are comma separated.
Example::

    # Simulation 1, desk scale
    domain = -1, 1, -1, 1
    mesh.n = 16
    params.epsilon = 0.02
    params.lambda = 0.001
    params.chi0 = 0.02
    params.delta = 0.4
    params.kappa = 0.25
    params.p0 = 50
    params.B = 4
    time.tau = 1e-3
    time.T = 0.05
"""
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Union

from django.conf import settings

from .conv_harness import SIMULATIONS, initial_condition
from .exceptions import InvalidConfigError
from .model import ModelParams
from .sav_stepper import SOLVER_KINDS, SolverSettings

PROJECTIONS = ('ritz', 'interpolate')
SNAPSHOT_FORMATS = ('csv', 'vtk', 'both')

DEFAULTS = {
    'SOLVER_KIND': 'direct',
    'DIRECT_TOLERANCE': 1e-12,
    'ITERATIVE_TOLERANCE': 1e-10,
    'ITERATIVE_MAXITER': 2000,
    'MASS_TOLERANCE': 1e-10,
    'ENERGY_TOLERANCE': 1e-10,
    'DISSIPATION_TOLERANCE': 1e-8,
    'INITIAL_ENERGY_REFINEMENTS': 2,
    'SNAPSHOT_FORMAT': 'csv',
}


def simulator_setting(name: str) -> Any:
    """Value from settings.SAV_SIMULATOR with the built-in default as fallback"""
    return getattr(settings, 'SAV_SIMULATOR', {}).get(name, DEFAULTS.get(name))


def _number(text: str) -> float:
    text = text.strip()
    value = float(Fraction(text)) if '/' in text else float(text)
    if not math.isfinite(value):
        raise ValueError(f"{text!r} is not finite")
    return value


def _integer(text: str) -> int:
    return int(text.strip())


def _numbers(text: str) -> Tuple[float, ...]:
    return tuple(_number(part) for part in text.split(',') if part.strip())


def _word(text: str) -> str:
    value = text.strip()
    if not value:
        raise ValueError("empty value")
    return value


KEYS: Dict[str, Callable[[str], Any]] = {
    'domain': _numbers,
    'mesh.n': _integer,
    'mesh.dim': _integer,
    'mesh.degree': _integer,
    'params.epsilon': _number,
    'params.lambda': _number,
    'params.chi0': _number,
    'params.delta': _number,
    'params.kappa': _number,
    'params.p0': _number,
    'params.B': _number,
    'time.tau': _number,
    'time.T': _number,
    'ic.name': _word,
    'ic.u0': _numbers,
    'ic.n0': _numbers,
    'init.projection': _word,
    'init.energy_refinements': _integer,
    'solver.kind': _word,
    'solver.tol': _number,
    'solver.maxiter': _integer,
    'output.dir': _word,
    'output.series_stride': _number,
    'output.snapshot_stride': _number,
    'output.format': _word,
    'rates.levels': _integer,
    'rates.tau': _number,
    'rates.tau_list': _numbers,
    'rates.stride': _number,
}

REQUIRED = (
    'domain', 'mesh.n',
    'params.epsilon', 'params.chi0', 'params.delta', 'params.kappa', 'params.p0', 'params.B',
    'time.tau', 'time.T',
)


@dataclass(frozen=True)
class RunConfig:
    """Validated description of one run or rate study"""

    box: Tuple[Tuple[float, float], ...]
    n: int
    params: ModelParams
    degree: int = 1
    ic_name: str = 'sim1'
    ic_inline: Dict[str, Tuple[float, ...]] = field(default_factory=dict)
    projection: str = 'ritz'
    energy_refinements: int = 2
    solver: SolverSettings = field(default_factory=SolverSettings)
    output_dir: str = 'output'
    series_stride: Optional[float] = None
    snapshot_stride: float = 0.0
    snapshot_format: str = 'csv'
    rates_levels: int = 3
    rates_tau: Optional[float] = None
    rates_tau_list: Tuple[float, ...] = ()
    rates_stride: Optional[float] = None

    @property
    def dim(self) -> int:
        return len(self.box)

    def initial_fields(self):
        return initial_condition(self.ic_name, self.params, self.dim, self.ic_inline)

    def stride_steps(self, stride: Optional[float]) -> int:
        """Number of steps per output interval given in time units (0 or None means every step)"""
        if not stride:
            return 1
        return max(1, int(round(stride / self.params.tau)))


def _read_pairs(text: str) -> Dict[str, Tuple[Any, int]]:
    values: Dict[str, Tuple[Any, int]] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise InvalidConfigError(f"expected 'key = value', got {raw.strip()!r}", line=number)
        key, value = (part.strip() for part in line.split('=', 1))
        if key not in KEYS:
            raise InvalidConfigError("unknown key", key=key, line=number)
        if key in values:
            raise InvalidConfigError(f"duplicate key (first given on line {values[key][1]})", key=key, line=number)
        try:
            values[key] = (KEYS[key](value), number)
        except ValueError as exc:
            raise InvalidConfigError(f"cannot parse {value!r}: {exc}", key=key, line=number) from exc
    return values


def parse_config(text: str) -> RunConfig:
    """Parse and validate the flat key=value run configuration"""
    pairs = _read_pairs(text)
    missing = [key for key in REQUIRED if key not in pairs]
    if missing:
        raise InvalidConfigError("required key is missing", key=missing[0])
    get = lambda key, default=None: pairs[key][0] if key in pairs else default

    domain = get('domain')
    if len(domain) not in (2, 4, 6):
        raise InvalidConfigError("expected min,max pairs for 1 to 3 axes", key='domain', line=pairs['domain'][1])
    box = tuple((domain[i], domain[i + 1]) for i in range(0, len(domain), 2))
    if any(hi <= lo for lo, hi in box):
        raise InvalidConfigError("every axis needs min < max", key='domain', line=pairs['domain'][1])
    dim = len(box)
    if get('mesh.dim') is not None and get('mesh.dim') != dim:
        raise InvalidConfigError(f"domain is {dim}-dimensional", key='mesh.dim', line=pairs['mesh.dim'][1])

    n = get('mesh.n')
    if n < 1:
        raise InvalidConfigError("must be at least 1", key='mesh.n', line=pairs['mesh.n'][1])
    degree = get('mesh.degree', 1)
    if degree not in (1, 2):
        raise InvalidConfigError("must be 1 or 2", key='mesh.degree', line=pairs['mesh.degree'][1])

    params = ModelParams(
        epsilon=get('params.epsilon'), chi0=get('params.chi0'), delta=get('params.delta'),
        kappa=get('params.kappa'), p0=get('params.p0'), B=get('params.B'),
        tau=get('time.tau'), T=get('time.T'), lam=get('params.lambda'),
    )

    ic_name = get('ic.name', 'sim1')
    if ic_name not in SIMULATIONS + ('inline',):
        raise InvalidConfigError(f"expected one of {SIMULATIONS + ('inline',)}", key='ic.name')
    inline = {name: get(f"ic.{name}") for name in ('u0', 'n0') if get(f"ic.{name}") is not None}
    if inline and ic_name != 'inline':
        raise InvalidConfigError("ic.u0/ic.n0 require ic.name = inline", key='ic.u0' if 'u0' in inline else 'ic.n0')
    # Dimension and inline coefficient checks
    initial_condition(ic_name, params, dim, inline)

    projection = get('init.projection', 'ritz')
    if projection not in PROJECTIONS:
        raise InvalidConfigError(f"expected one of {PROJECTIONS}", key='init.projection')

    kind = get('solver.kind', simulator_setting('SOLVER_KIND'))
    if kind not in SOLVER_KINDS:
        raise InvalidConfigError(f"expected one of {SOLVER_KINDS}", key='solver.kind')
    default_tol = simulator_setting('DIRECT_TOLERANCE' if kind == 'direct' else 'ITERATIVE_TOLERANCE')
    solver = SolverSettings(kind=kind, tol=get('solver.tol', default_tol),
                            maxiter=get('solver.maxiter', simulator_setting('ITERATIVE_MAXITER')))

    snapshot_format = get('output.format', simulator_setting('SNAPSHOT_FORMAT'))
    if snapshot_format not in SNAPSHOT_FORMATS:
        raise InvalidConfigError(f"expected one of {SNAPSHOT_FORMATS}", key='output.format')
    for key in ('output.series_stride', 'output.snapshot_stride', 'rates.stride'):
        stride = get(key)
        if stride is not None and stride < 0:
            raise InvalidConfigError("must be nonnegative", key=key)
        if stride and stride < params.tau * (1 - 1e-12):
            raise InvalidConfigError(f"cadence {stride} is shorter than the time step {params.tau}", key=key)

    refinements = get('init.energy_refinements', simulator_setting('INITIAL_ENERGY_REFINEMENTS'))
    if refinements < 0:
        raise InvalidConfigError("must be nonnegative", key='init.energy_refinements')
    levels = get('rates.levels', 3)
    if levels < 3:
        raise InvalidConfigError("must be at least 3", key='rates.levels')
    rates_tau = get('rates.tau')
    if rates_tau is not None and rates_tau <= 0:
        raise InvalidConfigError("must be positive", key='rates.tau')
    tau_list = get('rates.tau_list', ())
    if any(t <= 0 for t in tau_list):
        raise InvalidConfigError("time steps must be positive", key='rates.tau_list')

    return RunConfig(
        box=box, n=n, degree=degree, params=params,
        ic_name=ic_name, ic_inline=inline, projection=projection,
        energy_refinements=refinements, solver=solver,
        output_dir=get('output.dir', 'output'),
        series_stride=get('output.series_stride'),
        snapshot_stride=get('output.snapshot_stride', 0.0),
        snapshot_format=snapshot_format,
        rates_levels=levels, rates_tau=rates_tau, rates_tau_list=tau_list,
        rates_stride=get('rates.stride'),
    )


def load_config(path: Union[str, Path]) -> RunConfig:
    """Read a configuration file as UTF-8 and parse it"""
    try:
        text = Path(path).read_text(encoding='utf-8')
    except (OSError, UnicodeDecodeError) as exc:
        raise InvalidConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text)
