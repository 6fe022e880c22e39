import io
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from simulator.utils.conv_harness import RATE_HEADER, RateTable
from simulator.utils.diagnostics import SERIES_HEADER, SeriesRecord
from simulator.utils.exceptions import OutputError
from simulator.utils.fem_core import FeFunction, FunctionSpace
from simulator.utils.mesh import build_box_mesh
from simulator.utils.output_writer import (
    format_float,
    read_snapshot,
    write_rate_table,
    write_series,
    write_snapshot,
    write_vtk,
)
from simulator.utils.sav_stepper import State


def make_state(n=2, degree=1):
    space = FunctionSpace(build_box_mesh([(-1, 1), (-1, 1)], n), degree)
    x = space.dof_points
    u = FeFunction(space, 0.5 + 0.1 * x[:, 0] - np.pi * 1e-3 * x[:, 1])
    return State(k=3, t=0.003, U=u, N=FeFunction.constant(space, 1.0) - u, r=4.0,
                 MU=FeFunction.constant(space, 1 / 3))


class FormatTests(SimpleTestCase):

    def test_format_float(self):
        self.assertEqual(format_float(7), '7')
        self.assertEqual(format_float(np.int64(7)), '7')
        self.assertEqual(format_float(float('nan')), 'nan')
        self.assertEqual(format_float(0.1), '0.10000000000000001')
        self.assertEqual(float(format_float(1 / 3)), 1 / 3)


class SeriesFileTests(SimpleTestCase):

    def test_header_and_rows(self):
        records = [SeriesRecord(step=0, time=0.0, mass=4.0, energy_E=1 / 3, energy_mod=0.1, r=4.0,
                                diss_residual=0.0, solver_residual=0.0)]
        with tempfile.TemporaryDirectory() as tmp:
            path = write_series(records, Path(tmp) / 'nested' / 'series.csv')
            lines = path.read_text(encoding='utf-8').splitlines()
        self.assertEqual(lines[0], ','.join(SERIES_HEADER))
        self.assertEqual(lines[0], 'step,time,mass,energy,modified_energy,r,diss_residual,solver_residual')
        cells = lines[1].split(',')
        self.assertEqual(cells[0], '0')
        self.assertEqual(float(cells[3]), 1 / 3)
        self.assertEqual(cells[4], '0.10000000000000001')

    def test_empty_series(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_series([], Path(tmp) / 'series.csv')
            self.assertEqual(path.read_text(encoding='utf-8'), ','.join(SERIES_HEADER) + '\n')

    def test_unwritable_location(self):
        with tempfile.TemporaryDirectory() as tmp:
            blocker = Path(tmp) / 'file'
            blocker.write_text('x', encoding='utf-8')
            with self.assertRaises(OutputError) as ctx:
                write_series([], blocker / 'series.csv')
            self.assertIn('series.csv', ctx.exception.path)


class SnapshotTests(SimpleTestCase):

    def test_round_trip_is_exact(self):
        state = make_state()
        with tempfile.TemporaryDirectory() as tmp:
            paths = write_snapshot(state, Path(tmp) / 'step_000003')
            self.assertEqual([p.name for p in paths],
                             ['step_000003_u.csv', 'step_000003_n.csv', 'step_000003_mu.csv'])
            self.assertEqual(paths[0].read_text(encoding='utf-8').splitlines()[0], 'x,y,value')
            points, values = read_snapshot(paths[0])
            mu_points, mu_values = read_snapshot(paths[2])
        np.testing.assert_array_equal(points, state.U.space.dof_points)
        np.testing.assert_array_equal(values, state.U.coefficients)
        np.testing.assert_array_equal(mu_values, np.full(9, 1 / 3))

    def test_quadratic_space_writes_every_dof(self):
        state = make_state(degree=2)
        with tempfile.TemporaryDirectory() as tmp:
            points, values = read_snapshot(write_snapshot(state, Path(tmp) / 'q2')[0])
        self.assertEqual(len(values), 25)
        np.testing.assert_array_equal(points, state.U.space.dof_points)

    def test_missing_snapshot(self):
        with self.assertRaises(OutputError):
            read_snapshot('/nonexistent/step_u.csv')

    def test_vtk_layout(self):
        state = make_state()
        with tempfile.TemporaryDirectory() as tmp:
            lines = write_vtk(state, Path(tmp) / 'step.vtk').read_text(encoding='utf-8').splitlines()
        self.assertEqual(lines[0], '# vtk DataFile Version 3.0')
        self.assertEqual(lines[2:4], ['ASCII', 'DATASET UNSTRUCTURED_GRID'])
        self.assertEqual(lines[4], 'POINTS 9 double')
        self.assertEqual(lines[5].split()[2], '0')
        self.assertIn('CELLS 8 32', lines)
        start = lines.index('CELL_TYPES 8')
        self.assertEqual(lines[start + 1:start + 9], ['5'] * 8)
        self.assertEqual(lines[start + 9], 'POINT_DATA 9')
        for name in ('u', 'n', 'mu'):
            self.assertIn(f'SCALARS {name} double 1', lines)
        self.assertNotIn('SCALARS sigma double 1', lines)


class RateTableFileTests(SimpleTestCase):

    def test_stream_output(self):
        table = RateTable(axis='tau', levels=[0.25, 0.125, 0.0625])
        table.errors = {('u', 'L2'): [0.5, 0.25]}
        stream = io.StringIO()
        write_rate_table(table, stream)
        lines = stream.getvalue().splitlines()
        self.assertEqual(lines[0], ','.join(RATE_HEADER))
        self.assertEqual(len(lines), 3)
        self.assertTrue(lines[1].startswith('tau,0.25,0.125,u,L2,0.5,'))
        self.assertTrue(lines[1].endswith(',nan'))
        self.assertTrue(lines[2].endswith(',1'))

    def test_file_output(self):
        table = RateTable(axis='h', levels=[2, 4, 8])
        table.errors = {('n', 'H1'): [1.0, 0.5]}
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'rates.csv'
            write_rate_table(table, path)
            self.assertEqual(len(path.read_text(encoding='utf-8').splitlines()), 3)
