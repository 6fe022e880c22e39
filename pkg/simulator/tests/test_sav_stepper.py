from dataclasses import replace
from unittest import mock

import numpy as np
from django.test import SimpleTestCase, tag
from scipy import sparse

from simulator.utils import diagnostics
from simulator.utils.conv_harness import affine_field, initial_condition
from simulator.utils.exceptions import InvalidConfigError, SavDenominatorError, StepSolveError
from simulator.utils.fem_core import FunctionSpace, integrate_field
from simulator.utils.mesh import build_box_mesh
from simulator.utils.sav_stepper import (
    FemContext,
    SavStepper,
    SolverSettings,
    StepSystem,
    build_context,
    run,
)

from .factories import sim1_config, sim1_params

SQUARE = [(-1, 1), (-1, 1)]


def make_stepper(params, n=8, degree=1, solver=None):
    space = FunctionSpace(build_box_mesh(SQUARE, n), degree)
    return SavStepper(FemContext(space, params), solver)


class InitStateTests(SimpleTestCase):

    def test_zero_data(self):
        stepper = make_stepper(sim1_params())
        state = stepper.init_state(affine_field([0.0], 2), affine_field([0.0], 2))
        self.assertEqual(state.r, 4.0)
        self.assertEqual(np.abs(state.U.coefficients).max(), 0.0)
        self.assertEqual(np.abs(state.N.coefficients).max(), 0.0)
        self.assertIsNone(state.MU)
        self.assertIsNone(state.SIGMA)
        self.assertEqual((state.k, state.t), (0, 0.0))

    def test_affine_data_is_reproduced(self):
        stepper = make_stepper(sim1_params())
        u0 = affine_field([0.3, 0.1, -0.2], 2)
        for projection in ('ritz', 'interpolate'):
            state = stepper.init_state(u0, affine_field([0.5], 2), projection)
            np.testing.assert_allclose(state.U.coefficients, u0.value(stepper.ctx.space.dof_points),
                                       rtol=0, atol=1e-12)

    def test_unknown_projection(self):
        stepper = make_stepper(sim1_params())
        with self.assertRaises(InvalidConfigError):
            stepper.init_state(affine_field([0.0], 2), affine_field([0.0], 2), 'nearest')

    def test_r0_uses_exact_initial_data(self):
        params = sim1_params()
        stepper = make_stepper(params, n=16)
        u0, n0 = initial_condition('sim1', params, 2)
        state = stepper.init_state(u0, n0, energy_refinements=3)
        reference = integrate_field(u0, stepper.ctx.f, build_box_mesh(SQUARE, 256), 8) + params.B
        self.assertLessEqual(abs(state.r - reference), 1e-6 * abs(reference))

    def test_non_positive_r0_is_rejected(self):
        stepper = make_stepper(sim1_params(B=0.0))
        with self.assertRaises(SavDenominatorError):
            stepper.init_state(affine_field([0.0], 2), affine_field([0.0], 2))


class StepSystemTests(SimpleTestCase):

    def setUp(self):
        self.params = sim1_params()
        self.stepper = make_stepper(self.params, n=16)
        u0, n0 = initial_condition('sim1', self.params, 2)
        self.state = self.stepper.init_state(u0, n0)

    def test_dimensions(self):
        system = self.stepper.assemble_step_system(self.state)
        n = self.stepper.ctx.num_dofs
        self.assertEqual(system.A.shape, (3 * n, 3 * n))
        self.assertEqual(system.rhs.shape, (3 * n,))
        self.assertEqual(system.num_dofs, n)
        self.assertTrue(np.all(np.isfinite(system.rhs)))

    def test_first_step_residual(self):
        system = self.stepper.assemble_step_system(self.state)
        *_, residual = self.stepper.solve_step(system, self.state)
        self.assertLessEqual(residual, 1e-12)

    def test_unsubstituted_equations_hold(self):
        """The eliminated sigma satisfies the original four weak equations"""
        p = self.params
        ctx = self.stepper.ctx
        M, K = ctx.mass, ctx.stiffness
        result = self.stepper.advance(self.state)
        W = result.system.weighted_mass
        u, mu, n, sigma = (f.coefficients for f in (result.state.U, result.state.MU,
                                                     result.state.N, result.state.SIGMA))
        uk, nk = self.state.U.coefficients, self.state.N.coefficients
        s = result.system.s
        eqs = [
            M @ (u - uk) / p.tau + K @ mu - W @ (sigma - mu),
            M @ mu - s * result.system.load - p.epsilon ** 2 * (K @ u) - p.lam * (M @ u) + p.chi0 * (M @ n),
            M @ (n - nk) / p.tau + K @ sigma + W @ (sigma - mu),
            M @ sigma - (M @ n) / p.delta + p.chi0 * (M @ uk),
        ]
        scale = max(np.abs(M @ uk).max() / p.tau, 1.0)
        for residual in eqs:
            self.assertLessEqual(np.abs(residual).max(), 1e-10 * scale)

    def test_zero_rhs_gives_zero_solution(self):
        system = self.stepper.assemble_step_system(self.state)
        zero = replace(system, rhs=np.zeros_like(system.rhs))
        U, MU, N, residual = self.stepper.solve_step(zero, self.state)
        for function in (U, MU, N):
            self.assertEqual(np.abs(function.coefficients).max(), 0.0)
        self.assertEqual(residual, 0.0)

    def test_singular_system_reports_the_step(self):
        n = self.stepper.ctx.num_dofs
        singular = StepSystem(A=sparse.csr_matrix((3 * n, 3 * n)), rhs=np.ones(3 * n), s=1.0,
                              load=np.zeros(n), weighted_mass=sparse.csr_matrix((n, n)))
        with self.assertRaises(StepSolveError) as ctx:
            self.stepper.solve_step(singular, self.state)
        self.assertEqual(ctx.exception.step, 1)

    def test_unconverged_gmres_rejects_the_step(self):
        system = self.stepper.assemble_step_system(self.state)
        stepper = make_stepper(self.params, n=16, solver=SolverSettings(kind='iterative', tol=1e-10, maxiter=1))
        stopped_early = (np.zeros_like(system.rhs), 1)
        with mock.patch('simulator.utils.sav_stepper.gmres', return_value=stopped_early):
            with self.assertLogs('simulator.utils.sav_stepper', 'WARNING'):
                with self.assertRaises(StepSolveError) as ctx:
                    stepper.solve_step(system, self.state)
        self.assertEqual(ctx.exception.step, 1)
        self.assertIn('residual', str(ctx.exception))

    def test_inaccurate_direct_solve_rejects_the_step(self):
        system = self.stepper.assemble_step_system(self.state)
        exact = self.stepper._solve_direct(system.A, system.rhs)
        with mock.patch.object(SavStepper, '_solve_direct', return_value=exact * (1 + 1e-6)):
            with self.assertRaises(StepSolveError):
                self.stepper.solve_step(system, self.state)

    def test_decoupled_nutrient_row_is_heat_equation(self):
        params = sim1_params(chi0=0.0, p0=0.0)
        stepper = make_stepper(params, n=8)
        u0, n0 = initial_condition('sim1', sim1_params(), 2)
        state = stepper.init_state(u0, n0)
        result = stepper.advance(state)
        M, K = stepper.ctx.mass, stepper.ctx.stiffness
        heat = (M / params.tau + K / params.delta) @ result.state.N.coefficients
        np.testing.assert_allclose(heat, M @ state.N.coefficients / params.tau, rtol=0, atol=1e-10)


class AdvanceTests(SimpleTestCase):

    def test_constant_fixed_point(self):
        params = sim1_params(chi0=0.0, p0=0.0)
        stepper = make_stepper(params, n=8)
        state = stepper.init_state(affine_field([0.4], 2), affine_field([0.7], 2))
        for _ in range(2):
            previous, state = state, stepper.advance(state).state
            np.testing.assert_allclose(state.U.coefficients, 0.4, rtol=0, atol=1e-10)
            np.testing.assert_allclose(state.N.coefficients, 0.7, rtol=0, atol=1e-10)
            self.assertLessEqual(diagnostics.dissipation_residual(previous, state, stepper.ctx), 1e-12)

    def test_counters_and_sigma(self):
        params = sim1_params()
        stepper = make_stepper(params, n=8)
        u0, n0 = initial_condition('sim1', params, 2)
        state = stepper.init_state(u0, n0)
        nxt = stepper.advance(state).state
        self.assertEqual(nxt.k, 1)
        self.assertEqual(nxt.t, params.tau)
        expected = nxt.N.coefficients / params.delta - params.chi0 * state.U.coefficients
        np.testing.assert_array_equal(nxt.SIGMA.coefficients, expected)

    def test_r_update(self):
        params = sim1_params()
        stepper = make_stepper(params, n=8)
        u0, n0 = initial_condition('sim1', params, 2)
        state = stepper.init_state(u0, n0)
        result = stepper.advance(state)
        system = result.system
        du = result.state.U.coefficients - state.U.coefficients
        self.assertEqual(result.state.r, state.r + system.s * float(system.load @ du))
        self.assertEqual(stepper.update_r(state, state.U, system), state.r)

        zero_r = replace(state, r=0.0)
        system = stepper.assemble_step_system(zero_r)
        self.assertEqual(system.s, 0.0)
        self.assertEqual(stepper.update_r(zero_r, result.state.U, system), 0.0)

    def test_three_steps_conserve_mass_and_dissipate(self):
        params = sim1_params()
        stepper = make_stepper(params, n=16)
        ctx = stepper.ctx
        u0, n0 = initial_condition('sim1', params, 2)
        state = stepper.init_state(u0, n0)
        mass0 = diagnostics.total_mass(state, ctx)
        energy = diagnostics.modified_energy(state, ctx)
        for _ in range(3):
            state = stepper.advance(state).state
            self.assertLessEqual(abs(diagnostics.total_mass(state, ctx) - mass0), 1e-10 * abs(mass0))
            nxt = diagnostics.modified_energy(state, ctx)
            self.assertLessEqual(nxt, energy + 1e-10 * max(1.0, abs(energy)))
            energy = nxt

    def test_large_time_step_warns_and_continues(self):
        params = sim1_params(tau=0.01, T=0.02)
        stepper = make_stepper(params, n=8)
        u0, n0 = initial_condition('sim1', params, 2)
        state = stepper.init_state(u0, n0)
        with self.assertLogs('simulator.utils.sav_stepper', 'WARNING') as logs:
            state = stepper.advance(stepper.advance(state).state).state
        self.assertEqual(sum('unique-solvability' in line for line in logs.output), 1)
        self.assertEqual(state.k, 2)

    def test_iterative_solver_agrees_with_direct(self):
        params = sim1_params()
        u0, n0 = initial_condition('sim1', params, 2)
        direct = make_stepper(params, n=8)
        iterative = make_stepper(params, n=8, solver=SolverSettings(kind='iterative', tol=1e-10))
        a = direct.advance(direct.init_state(u0, n0)).state
        b = iterative.advance(iterative.init_state(u0, n0)).state
        np.testing.assert_allclose(b.U.coefficients, a.U.coefficients, rtol=0, atol=1e-6)
        np.testing.assert_allclose(b.N.coefficients, a.N.coefficients, rtol=0, atol=1e-6)

    def test_quadratic_elements_conserve_mass(self):
        params = sim1_params()
        stepper = make_stepper(params, n=4, degree=2)
        u0, n0 = initial_condition('sim1', params, 2)
        state = stepper.init_state(u0, n0)
        mass0 = diagnostics.total_mass(state, stepper.ctx)
        for _ in range(2):
            state = stepper.advance(state).state
        self.assertLessEqual(abs(diagnostics.total_mass(state, stepper.ctx) - mass0), 1e-10 * abs(mass0))


class RunTests(SimpleTestCase):

    def test_step_count_and_observer(self):
        config = sim1_config(mesh__n=8, time__tau=0.001, time__T=0.01)
        seen = []
        result = run(config, lambda state, record: seen.append((state.k, record.step)))
        self.assertEqual(result.final_state.k, 10)
        self.assertEqual(len(result.records), 11)
        self.assertEqual(seen, [(k, k) for k in range(11)])
        self.assertAlmostEqual(result.final_state.t, 0.01, places=15)

    def test_deterministic(self):
        config = sim1_config(mesh__n=8, time__T=0.005)
        first = [record.as_row() for record in run(config).records]
        second = [record.as_row() for record in run(config).records]
        self.assertEqual(first, second)

    def test_shared_context(self):
        config = sim1_config(mesh__n=8, time__T=0.003)
        ctx = build_context(config)
        self.assertEqual(ctx.space.num_dofs, 81)
        self.assertEqual(run(config, ctx=ctx).final_state.U.space, ctx.space)


@tag('slow')
class StabilityProbeTests(SimpleTestCase):

    def test_energy_monotone_for_every_time_step(self):
        for tau in (1e-2, 1e-3, 1e-4):
            records = run(sim1_config(time__tau=tau)).records
            self.assertEqual(diagnostics.energy_increases(records, 1e-10), [], f"tau={tau}")
            self.assertLessEqual(diagnostics.mass_drift(records), 1e-10)

    def test_three_dimensional_smoke_run(self):
        config = sim1_config(
            domain='-1, 1, -1, 1, -1, 1', mesh__n=8, ic__name='sim4',
            params__lambda=0.5, params__chi0=1.6, params__p0=25, params__B=40,
            time__tau=1e-2, time__T=0.1,
        )
        records = run(config).records
        self.assertEqual(records[-1].step, 10)
        self.assertLessEqual(diagnostics.mass_drift(records), 1e-9)
        self.assertEqual(diagnostics.energy_increases(records, 1e-10), [])
