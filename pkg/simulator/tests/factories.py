"""Run configurations shared by the test modules"""
from simulator.utils.config_parser import RunConfig, parse_config
from simulator.utils.model import ModelParams

SIM1_PARAMS = {
    'epsilon': 0.02, 'lam': 0.001, 'chi0': 0.02, 'delta': 0.4,
    'kappa': 0.25, 'p0': 50.0, 'B': 4.0,
}

SIM1_DESK = """
# Simulation 1 parameters at desk scale
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
ic.name = sim1
"""


def sim1_params(**changes) -> ModelParams:
    values = dict(SIM1_PARAMS, tau=1e-3, T=0.05)
    values.update(changes)
    return ModelParams(**values)


def config_text(base: str = SIM1_DESK, **overrides) -> str:
    """Replace or append keys of a config text; keyword names use '__' for '.'"""
    lines = [line for line in base.strip().splitlines()]
    for name, value in overrides.items():
        key = name.replace('__', '.')
        lines = [line for line in lines if line.split('=', 1)[0].strip() != key]
        lines.append(f"{key} = {value}")
    return '\n'.join(lines) + '\n'


def sim1_config(**overrides) -> RunConfig:
    return parse_config(config_text(**overrides))
