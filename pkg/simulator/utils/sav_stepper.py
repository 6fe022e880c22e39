"""
Linear SAV backward-Euler stepper for the tumour model.

Per step the unknowns (u, mu, n) at level k+1 solve one 3x3 block system;
sigma is eliminated through sigma = n/delta - chi0 u^k and rebuilt nodally
afterwards, and the auxiliary variable r is updated explicitly.
"""
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, gmres, spilu, splu

from . import diagnostics
from .exceptions import InvalidConfigError, SavDenominatorError, StepSolveError
from .fem_core import (
    FeFunction,
    Field,
    FunctionSpace,
    assemble_nonlinear_load,
    assemble_weighted_mass,
    integrate_composed,
    integrate_field,
    interpolate,
    norm,
    ritz_projection,
)
from .mesh import build_box_mesh, refine_uniform
from .model import ModelParams, SAV_DENOMINATOR_FLOOR, f_prime, f_val, proliferation, sav_ratio, well_posedness_time_step

if TYPE_CHECKING:
    from .config_parser import RunConfig
    from .diagnostics import SeriesRecord

logger = logging.getLogger(__name__)

# Polynomial degrees of the composed maps, as functions of u
F_DEGREE = 4
F_PRIME_DEGREE = 3
P_DEGREE = 1

SOLVER_KINDS = ('direct', 'iterative')

# A step is rejected once its relative residual exceeds this multiple of solver.tol
RESIDUAL_SLACK = 10.0


@dataclass(frozen=True)
class SolverSettings:
    kind: str = 'direct'
    tol: float = 1e-12
    maxiter: int = 2000

    def __post_init__(self):
        if self.kind not in SOLVER_KINDS:
            raise InvalidConfigError(f"expected one of {SOLVER_KINDS}, got {self.kind!r}", key='solver.kind')
        if not self.tol > 0:
            raise InvalidConfigError("must be positive", key='solver.tol')


@dataclass(frozen=True)
class State:
    """One time level of the discrete solution"""

    k: int
    t: float
    U: FeFunction
    N: FeFunction
    r: float
    MU: Optional[FeFunction] = None
    SIGMA: Optional[FeFunction] = None


@dataclass
class StepSystem:
    """Block system for the unknowns [U, MU, N] at level k+1"""

    A: sparse.csr_matrix
    rhs: np.ndarray
    s: float
    load: np.ndarray
    weighted_mass: sparse.csr_matrix

    @property
    def num_dofs(self) -> int:
        return len(self.rhs) // 3


@dataclass
class StepResult:
    state: State
    system: StepSystem
    solver_residual: float


@dataclass
class RunResult:
    final_state: State
    records: List['SeriesRecord'] = field(default_factory=list)


class FemContext:
    """Discrete operators shared by every step of a run"""

    def __init__(self, space: FunctionSpace, params: ModelParams):
        self.space = space
        self.params = params
        self.mass = space.mass_matrix
        self.stiffness = space.stiffness_matrix
        self.mass_of_one = space.mass_of_one

    @property
    def num_dofs(self) -> int:
        return self.space.num_dofs

    def f(self, u: np.ndarray) -> np.ndarray:
        return f_val(u, self.params)

    def f_prime(self, u: np.ndarray) -> np.ndarray:
        return f_prime(u, self.params)

    def proliferation(self, u: np.ndarray) -> np.ndarray:
        return proliferation(u, self.params)

    def e1(self, u: FeFunction) -> float:
        """E1[u_h] = integral of f(u_h)"""
        return integrate_composed(u, self.f, F_DEGREE)

    def weighted_mass(self, u: FeFunction) -> sparse.csr_matrix:
        """W with weight P(u) composed at quadrature points"""
        return assemble_weighted_mass(u, self.proliferation, P_DEGREE)


class SavStepper:
    """Assembles, solves and advances the SAV backward-Euler scheme"""

    def __init__(self, ctx: FemContext, solver: Optional[SolverSettings] = None):
        self.ctx = ctx
        self.params = ctx.params
        self.solver = solver or SolverSettings()
        self._warned_time_step = False

    def _function(self, coefficients: np.ndarray) -> FeFunction:
        return FeFunction(self.ctx.space, coefficients)

    def init_state(self, u0: Field, n0: Field, projection: str = 'ritz',
                   energy_refinements: int = 0) -> State:
        """Project the initial data and set r^0 = E1[u0] + B from the exact u0"""
        space = self.ctx.space
        if projection == 'ritz':
            U0, N0 = ritz_projection(u0, space), ritz_projection(n0, space)
        elif projection == 'interpolate':
            U0, N0 = interpolate(u0, space), interpolate(n0, space)
        else:
            raise InvalidConfigError(f"expected 'ritz' or 'interpolate', got {projection!r}", key='init.projection')

        energy_mesh = space.mesh
        if energy_mesh.is_structured:
            for _ in range(energy_refinements):
                energy_mesh = refine_uniform(energy_mesh)
        e1_exact = integrate_field(u0, self.ctx.f, energy_mesh, F_DEGREE * space.degree)
        r0 = e1_exact + self.params.B
        if not r0 > SAV_DENOMINATOR_FLOOR:
            raise SavDenominatorError(
                f"E1[u0] + B = {r0:.6g} must be positive; increase params.B")
        logger.info("initial state: E1[u0]=%.10g, r0=%.10g, dofs=%d", e1_exact, r0, space.num_dofs)
        return State(k=0, t=0.0, U=U0, N=N0, r=r0)

    def assemble_step_system(self, state: State) -> StepSystem:
        """Block rows for (U, MU, N) with sigma substituted"""
        ctx, p = self.ctx, self.params
        M, K = ctx.mass, ctx.stiffness
        W = ctx.weighted_mass(state.U)
        e1 = ctx.e1(state.U)
        s = sav_ratio(state.r, e1, p)
        load = assemble_nonlinear_load(state.U, ctx.f_prime, F_PRIME_DEGREE)

        inv_tau = 1.0 / p.tau
        inv_delta = 1.0 / p.delta
        KW = K + W
        A = sparse.bmat([
            [inv_tau * M, KW, -inv_delta * W],
            [p.epsilon ** 2 * K + p.lam * M, -M, -p.chi0 * M],
            [None, -W, inv_tau * M + inv_delta * KW],
        ], format='csr')

        Uk, Nk = state.U.coefficients, state.N.coefficients
        rhs = np.concatenate([
            inv_tau * (M @ Uk) - p.chi0 * (W @ Uk),
            -s * load,
            inv_tau * (M @ Nk) + p.chi0 * (KW @ Uk),
        ])
        return StepSystem(A=A, rhs=rhs, s=s, load=load, weighted_mass=W)

    def solve_step(self, system: StepSystem, state: State) -> Tuple[FeFunction, FeFunction, FeFunction, float]:
        """Solve the block system; returns U, MU, N at level k+1 and the relative residual"""
        step, time = state.k + 1, state.t + self.params.tau
        A, rhs = system.A, system.rhs
        try:
            if self.solver.kind == 'direct':
                x = self._solve_direct(A, rhs)
            else:
                x = self._solve_iterative(A, rhs, step)
        except (RuntimeError, ValueError) as exc:
            raise StepSolveError(str(exc), step, time) from exc
        if not np.all(np.isfinite(x)):
            raise StepSolveError("solution is not finite", step, time)

        residual = self._relative_residual(A, x, rhs)
        if residual > RESIDUAL_SLACK * self.solver.tol:
            raise StepSolveError(f"relative residual {residual:.3e} above tolerance {self.solver.tol:.1e}", step, time)
        n = system.num_dofs
        return self._function(x[:n]), self._function(x[n:2 * n]), self._function(x[2 * n:]), residual

    @staticmethod
    def _relative_residual(A: sparse.spmatrix, x: np.ndarray, rhs: np.ndarray) -> float:
        scale = np.linalg.norm(rhs)
        residual = np.linalg.norm(A @ x - rhs)
        return float(residual / scale) if scale > 0 else float(residual)

    def _solve_direct(self, A: sparse.spmatrix, rhs: np.ndarray) -> np.ndarray:
        lu = splu(sparse.csc_matrix(A))
        x = lu.solve(rhs)
        # Two sweeps of iterative refinement at most
        for _ in range(2):
            if self._relative_residual(A, x, rhs) <= self.solver.tol:
                break
            x = x + lu.solve(rhs - A @ x)
        return x

    def _solve_iterative(self, A: sparse.spmatrix, rhs: np.ndarray, step: int) -> np.ndarray:
        ilu = spilu(sparse.csc_matrix(A), drop_tol=1e-6, fill_factor=20)
        preconditioner = LinearOperator(A.shape, ilu.solve)
        x, info = gmres(A, rhs, rtol=self.solver.tol, atol=0.0, restart=100,
                        maxiter=self.solver.maxiter, M=preconditioner)
        if info < 0:
            raise RuntimeError(f"GMRES breakdown (info={info})")
        if info > 0:
            logger.warning("step %d: GMRES stopped after %d iterations without reaching rtol=%.1e",
                           step, info, self.solver.tol)
        return x

    def update_r(self, state: State, U_new: FeFunction, system: StepSystem) -> float:
        """r^{k+1} = r^k + s^k F^k . (U^{k+1} - U^k)"""
        return state.r + system.s * float(system.load @ (U_new.coefficients - state.U.coefficients))

    def _check_time_step(self, state: State) -> None:
        if self._warned_time_step:
            return
        limit = well_posedness_time_step(self.params, norm(state.U, 'Linf'))
        if self.params.tau >= limit:
            logger.warning("tau=%.3g exceeds the unique-solvability bound %.3g at step %d; "
                           "energy stability is unaffected, continuing", self.params.tau, limit, state.k)
            self._warned_time_step = True

    def advance(self, state: State) -> StepResult:
        """One step of the scheme: assemble, solve, update r, rebuild sigma"""
        self._check_time_step(state)
        try:
            system = self.assemble_step_system(state)
        except SavDenominatorError as exc:
            raise SavDenominatorError(f"step {state.k + 1} (t={state.t + self.params.tau:.6g}): {exc}") from exc
        U, MU, N, residual = self.solve_step(system, state)
        r = self.update_r(state, U, system)
        p = self.params
        SIGMA = self._function(N.coefficients / p.delta - p.chi0 * state.U.coefficients)
        k = state.k + 1
        new_state = State(k=k, t=k * p.tau, U=U, N=N, r=r, MU=MU, SIGMA=SIGMA)
        return StepResult(state=new_state, system=system, solver_residual=residual)


Observer = Callable[[State, 'SeriesRecord'], None]


def build_context(config: 'RunConfig') -> FemContext:
    mesh = build_box_mesh(config.box, config.n)
    return FemContext(FunctionSpace(mesh, config.degree), config.params)


def run(config: 'RunConfig', observer: Optional[Observer] = None,
        ctx: Optional[FemContext] = None) -> RunResult:
    """Execute floor(T/tau) steps; the observer sees every state with its series record"""
    ctx = ctx or build_context(config)
    stepper = SavStepper(ctx, config.solver)
    u0, n0 = config.initial_fields()
    state = stepper.init_state(u0, n0, config.projection, config.energy_refinements)

    result = RunResult(final_state=state)
    record = diagnostics.series_record(None, state, ctx)
    result.records.append(record)
    if observer is not None:
        observer(state, record)

    num_steps = config.params.num_steps
    logger.info("running %d steps of tau=%.3g on %r", num_steps, config.params.tau, ctx.space)
    for _ in range(num_steps):
        step = stepper.advance(state)
        record = diagnostics.series_record(state, step.state, ctx,
                                           weighted_mass=step.system.weighted_mass,
                                           solver_residual=step.solver_residual)
        logger.debug("step %d t=%.6g mass=%.17g energy_mod=%.17g diss=%.3e",
                     record.step, record.time, record.mass, record.energy_mod, record.diss_residual)
        state = step.state
        result.records.append(record)
        if observer is not None:
            observer(state, record)

    result.final_state = state
    logger.info("finished at t=%.6g after %d steps", state.t, state.k)
    return result

