import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from simulator.utils.config_parser import RunConfig, load_config, simulator_setting
from simulator.utils.conv_harness import spatial_rate, temporal_rate
from simulator.utils.diagnostics import energy_increases, mass_drift, max_dissipation_residual
from simulator.utils.exceptions import (
    InvalidArgumentError,
    InvalidConfigError,
    InvariantViolation,
    LinearSolveError,
    OutputError,
    SavDenominatorError,
)
from simulator.utils.output_writer import write_rate_table, write_series, write_snapshot, write_vtk
from simulator.utils.sav_stepper import run

logger = logging.getLogger(__name__)

EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_INVARIANT = 3


class SnapshotWriter:
    """Observer writing field snapshots every ``stride_steps`` steps and at the final step"""

    def __init__(self, directory: Path, stride_steps: int, final_step: int, fmt: str):
        self.directory = directory
        self.stride_steps = stride_steps
        self.final_step = final_step
        self.fmt = fmt
        self.written = 0

    def __call__(self, state, record) -> None:
        if state.k == 0 or (state.k % self.stride_steps and state.k != self.final_step):
            return
        stem = self.directory / f"step_{state.k:06d}"
        if self.fmt in ('csv', 'both'):
            write_snapshot(state, stem)
        if self.fmt in ('vtk', 'both'):
            write_vtk(state, stem.with_suffix('.vtk'))
        self.written += 1


class Command(BaseCommand):
    help = "Run the SAV tumour-growth simulator, its convergence studies or its invariant check"

    def add_arguments(self, parser):
        subcommands = parser.add_subparsers(dest='action', required=True)
        for name, text in (
            ('run', 'run one simulation and write the series and snapshots'),
            ('rates-space', 'nested-mesh convergence study, rate table on stdout'),
            ('rates-time', 'halving time-step convergence study, rate table on stdout'),
            ('check', 'run one simulation and verify mass, energy and dissipation'),
        ):
            sub = subcommands.add_parser(name, help=text)
            sub.add_argument('config', help='path to a key=value run configuration')
            if name == 'run':
                sub.add_argument('--output-dir', help='override output.dir')
            if name.startswith('rates'):
                sub.add_argument('--output', help='also write the rate table to this CSV file')

    def handle(self, *args, **options):
        action = options['action']
        handler = {
            'run': self.handle_run,
            'rates-space': self.handle_rates_space,
            'rates-time': self.handle_rates_time,
            'check': self.handle_check,
        }[action]
        logger.info("sav %s %s", action, options['config'])
        try:
            config = load_config(options['config'])
            handler(config, options)
        except (InvalidConfigError, InvalidArgumentError, OutputError) as exc:
            raise CommandError(f"configuration error: {exc}", returncode=EXIT_CONFIG) from exc
        except (LinearSolveError, SavDenominatorError) as exc:
            raise CommandError(f"solver error: {exc}", returncode=EXIT_SOLVER) from exc
        except InvariantViolation as exc:
            raise CommandError(f"invariant violated: {exc}", returncode=EXIT_INVARIANT) from exc

    def handle_run(self, config: RunConfig, options):
        directory = Path(options.get('output_dir') or config.output_dir)
        observer = None
        if config.snapshot_stride:
            observer = SnapshotWriter(directory, config.stride_steps(config.snapshot_stride),
                                      config.params.num_steps, config.snapshot_format)
        result = run(config, observer)

        stride = config.stride_steps(config.series_stride)
        records = [record for record in result.records
                   if record.step % stride == 0 or record.step == result.final_state.k]
        series_path = write_series(records, directory / 'series.csv')
        self.stdout.write(self.style.SUCCESS(
            f"{result.final_state.k} steps to t={result.final_state.t:.6g}; series written to {series_path}"))
        if observer is not None:
            self.stdout.write(f"{observer.written} snapshots written to {directory}")

    def handle_rates_space(self, config: RunConfig, options):
        tau = config.rates_tau if config.rates_tau is not None else config.params.tau
        table = spatial_rate(config, config.rates_levels, tau, config.rates_stride)
        self._emit_table(table, options)

    def handle_rates_time(self, config: RunConfig, options):
        taus = config.rates_tau_list
        if not taus:
            taus = [config.params.tau / 2 ** level for level in range(config.rates_levels + 1)]
        table = temporal_rate(config, taus)
        self._emit_table(table, options)

    def _emit_table(self, table, options):
        write_rate_table(table, self.stdout)
        if options.get('output'):
            write_rate_table(table, options['output'])

    def handle_check(self, config: RunConfig, options):
        records = run(config).records
        drift = mass_drift(records)
        increases = energy_increases(records, simulator_setting('ENERGY_TOLERANCE'))
        residual = max_dissipation_residual(records)
        energy_scale = abs(records[0].energy_mod) or 1.0

        self.stdout.write(f"steps: {len(records) - 1}")
        self.stdout.write(f"mass drift (relative): {drift:.3e}")
        self.stdout.write(f"energy increases: {len(increases)}")
        self.stdout.write(f"dissipation residual (relative): {residual / energy_scale:.3e}")

        failures = []
        if drift > simulator_setting('MASS_TOLERANCE'):
            failures.append(f"mass drift {drift:.3e}")
        if increases:
            failures.append(f"modified energy increased at steps {increases[:5]}")
        if residual > simulator_setting('DISSIPATION_TOLERANCE') * energy_scale:
            failures.append(f"dissipation residual {residual:.3e}")
        if any(not record.is_finite() for record in records):
            failures.append("non-finite diagnostics")
        if failures:
            raise InvariantViolation('; '.join(failures))
        self.stdout.write(self.style.SUCCESS("mass conserved, energy monotone, dissipation identity holds"))
